use crate::error::{Error, Result};

/// Per-pixel class indices with an ignore marker (`None`), row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<Option<usize>>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim(
                "label_map",
                format!("{} labels for {height}x{width}", labels.len()),
            ));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: Option<usize>) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Option<usize>) -> Self {
        let labels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, labels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> Option<usize> {
        self.labels[y * self.width + x]
    }

    /// Window `[top, top + h) x [left, left + w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::dim(
                "label_crop",
                format!("{h}x{w} at ({top},{left}) exceeds {}x{}", self.height, self.width),
            ));
        }
        Ok(Self::from_fn(h, w, |y, x| self.get(top + y, left + x)))
    }

    /// Sorted foreground classes (index >= 1) present among the labels.
    pub fn present_foreground(&self, num_classes: usize) -> Vec<usize> {
        let mut seen = vec![false; num_classes];
        for &l in self.labels.iter().flatten() {
            if l < num_classes {
                seen[l] = true;
            }
        }
        (1..num_classes).filter(|&c| seen[c]).collect()
    }
}

/// Multi-hot vector over the `num_classes - 1` foreground classes.
pub fn multi_hot(present: &[usize], num_classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; num_classes.saturating_sub(1)];
    for &c in present {
        if (1..num_classes).contains(&c) {
            y[c - 1] = 1.0;
        }
    }
    y
}
