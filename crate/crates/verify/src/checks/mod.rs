//! Self-test suites. Each returns named pass/fail results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod calibration;
pub mod derived;
pub mod factorization;
pub mod gradients;
pub mod metrics;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// A check that failed because the code under test returned an error.
    pub fn error(name: impl Into<String>, e: &slrnet::Error) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }

    pub fn from_result(name: impl Into<String>, r: slrnet::Result<(bool, String)>) -> Self {
        let name = name.into();
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::error(name, &e),
        }
    }
}

/// Pins a closure to the signature of [`crate::fd::Probe`].
pub(crate) fn probe<F>(f: F) -> F
where
    F: for<'t> Fn(&'t slrnet::Tape, &[slrnet::Var<'t>]) -> slrnet::Result<slrnet::Var<'t>>,
{
    f
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every suite, in a fixed order.
pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();
    out.extend(factorization::all());
    out.extend(gradients::all());
    out.extend(calibration::all());
    out.extend(metrics::all());
    out.extend(derived::all());
    out
}
