//! Metrics log in CSV form.

use std::io::Write;

use crate::error::Result;
use crate::train::EpochRecord;

/// Value of the `schema` column; bump when columns change.
pub const SCHEMA: &str = "slrnet-metrics-v1";

pub const HEADER: [&str; 13] = [
    "schema",
    "epoch",
    "split",
    "miou",
    "mfdr",
    "mfnr",
    "loss_total",
    "loss_seg",
    "loss_cls",
    "loss_reg_mask",
    "loss_reg_fact",
    "loss_aux",
    "ignored_fraction",
];

pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &EpochRecord) -> Result<()> {
        let l = &r.losses;
        let m = &r.metrics;
        let row = [
            SCHEMA.to_string(),
            r.epoch.to_string(),
            r.split.to_string(),
            m.miou.to_string(),
            m.mfdr.to_string(),
            m.mfnr.to_string(),
            l.total.to_string(),
            l.seg.to_string(),
            l.cls.to_string(),
            l.reg_mask.to_string(),
            l.reg_fact.to_string(),
            l.aux.to_string(),
            r.ignored.to_string(),
        ];
        self.inner.write_record(&row)?;
        self.inner.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| csv::Error::from(e.into_error()).into())
    }
}
