//! Label maps as 8-bit grayscale PNG: one class index per pixel, 255 for
//! ignored pixels.

use crate::error::{Error, Result};
use crate::label::LabelMap;

pub const IGNORE: u8 = 255;

pub fn encode_mask(mask: &LabelMap) -> Result<Vec<u8>> {
    let pixels = mask
        .labels()
        .iter()
        .map(|l| match *l {
            None => Ok(IGNORE),
            Some(c) if c < IGNORE as usize => Ok(c as u8),
            Some(c) => Err(Error::Mask(format!("class {c} does not fit below {IGNORE}"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    let (w, h) = (
        u32::try_from(mask.width()).map_err(|_| Error::Mask("mask too wide".into()))?,
        u32::try_from(mask.height()).map_err(|_| Error::Mask("mask too tall".into()))?,
    );
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Mask(e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Mask(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes an 8-bit grayscale PNG written by [`encode_mask`].
pub fn decode_mask(bytes: &[u8]) -> Result<LabelMap> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let info = decoder.read_header_info().map_err(|e| Error::Mask(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Mask(format!(
            "expected 8-bit grayscale, got {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    if w.checked_mul(h).is_none_or(|n| n > 1 << 26) {
        return Err(Error::Mask(format!("{w}x{h} image is too large")));
    }
    let mut reader = decoder.read_info().map_err(|e| Error::Mask(e.to_string()))?;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::Mask("image too large".into()))?
    ];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Mask(e.to_string()))?;
    let labels = buf[..frame.buffer_size()]
        .iter()
        .map(|&v| (v != IGNORE).then_some(v as usize))
        .collect();
    LabelMap::new(h, w, labels).map_err(|e| Error::Mask(e.to_string()))
}
