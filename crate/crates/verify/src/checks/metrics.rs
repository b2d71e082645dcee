//! Segmentation metrics against direct pixel counting.

use rand::Rng;
use slrnet::metrics::ConfusionAccumulator;

use super::{rng, Check};
use crate::oracle::confusion;

pub fn metric_oracle(pairs: usize) -> Check {
    let (k, n) = (3, 64);
    let mut r = rng(601);
    for i in 0..pairs {
        // Half the pairs carry a few ignored ground-truth pixels.
        let ignore_rate = if i % 2 == 0 { 0.0 } else { 0.1 };
        let gt: Vec<Option<usize>> = (0..n)
            .map(|_| (!r.random_bool(ignore_rate)).then(|| r.random_range(0..k)))
            .collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let mut acc = ConfusionAccumulator::new(k);
        let got = acc.add(&gt, &pred).and_then(|_| acc.metrics());
        let got = match got {
            Ok(m) => m,
            Err(e) => return Check::error("metric oracle", &e),
        };
        let (miou, mfdr, mfnr) = confusion::metrics(&gt, &pred, k);
        if got.miou != miou || got.mfdr != mfdr || got.mfnr != mfnr {
            return Check::new(
                "metric oracle",
                false,
                format!(
                    "pair {i}: ({}, {}, {}) vs ({miou}, {mfdr}, {mfnr})",
                    got.miou, got.mfdr, got.mfnr
                ),
            );
        }
    }
    Check::new("metric oracle", true, format!("{pairs} random 8x8 pairs, exact"))
}

pub fn all() -> Vec<Check> {
    vec![metric_oracle(1000)]
}
