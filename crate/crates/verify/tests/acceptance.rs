//! One PASS/FAIL line per acceptance criterion.
//!
//! Failing criteria are reported, not asserted: the target exits 0 either
//! way so the report always prints in full.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use slrnet::config::ExperimentConfig;
use slrnet::metrics::Metrics;
use slrnet::nn::ParamStore;
use slrnet::report::MetricsWriter;
use slrnet::train::{self, EpochRecord, TrainObserver};
use slrnet::Result;
use slrnet_verify::checks::{calibration, factorization, gradients, metrics, Check};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Shared settings for the training ablations.
const BASE: &[(&str, &str)] = &[
    ("data.regime", "semi_pixel_image"),
    ("data.size", "64"),
    ("data.train", "128"),
    ("train.lr", "0.02"),
    ("train.epochs", "20"),
];

struct Outcome {
    criterion: usize,
    passed: bool,
    detail: String,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn summarize(criterion: usize, checks: &[Check], elapsed: Duration, budget: Option<Duration>) -> Outcome {
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
    for c in &failed {
        eprintln!("  failed check `{}`: {}", c.name, c.detail);
    }
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let mut detail = format!(
        "{} checks, {} failed, {:.1}s",
        checks.len(),
        failed.len(),
        elapsed.as_secs_f64()
    );
    if checks.len() == 1 {
        detail = format!("{}, {:.1}s", checks[0].detail, elapsed.as_secs_f64());
    }
    if !in_time {
        detail.push_str(&format!(" (budget {}s)", budget.unwrap().as_secs()));
    }
    Outcome {
        criterion,
        passed: failed.is_empty() && in_time,
        detail,
    }
}

struct CsvLog(Option<MetricsWriter<Vec<u8>>>);

impl TrainObserver for CsvLog {
    fn on_epoch(&mut self, r: &EpochRecord, _store: &ParamStore) -> Result<()> {
        self.0.as_mut().expect("writer present").write(r)
    }
}

struct Run {
    metrics: Metrics,
    csv: Vec<u8>,
}

/// Trains every distinct configuration once.
#[derive(Default)]
struct Runs {
    cache: BTreeMap<String, Result<Run>>,
}

impl Runs {
    fn config(seed: u64, extra: &[(&str, &str)]) -> Result<ExperimentConfig> {
        let overrides: Vec<(String, String)> = BASE
            .iter()
            .chain(extra)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .chain([("seed".to_string(), seed.to_string())])
            .collect();
        ExperimentConfig::default().with_overrides(&overrides)
    }

    fn fresh(cfg: &ExperimentConfig) -> Result<Run> {
        let mut log = CsvLog(Some(MetricsWriter::new(Vec::new())?));
        let trained = train::train(cfg, &mut log)?;
        let metrics = trained.history.last().map(|r| r.metrics).expect("at least one epoch");
        Ok(Run {
            metrics,
            csv: log.0.take().expect("writer present").into_inner()?,
        })
    }

    fn get(&mut self, seed: u64, extra: &[(&str, &str)]) -> std::result::Result<&Run, String> {
        let cfg = Self::config(seed, extra).map_err(|e| e.to_string())?;
        let key = cfg.to_text();
        if !self.cache.contains_key(&key) {
            let (run, t) = timed(|| Self::fresh(&cfg));
            let label: Vec<String> = extra.iter().map(|(k, v)| format!("{k}={v}")).collect();
            eprintln!("  trained seed {seed} [{}] in {:.0}s", label.join(" "), t.as_secs_f64());
            self.cache.insert(key.clone(), run);
        }
        self.cache[&key].as_ref().map_err(|e| e.to_string())
    }
}

const TWO_VIEW: &[(&str, &str)] = &[];
const ONE_VIEW: &[(&str, &str)] = &[("aug.scales", "1.0")];
const SEPARATE: &[(&str, &str)] = &[("cvlr.dictionary", "separate")];
const REG0: &[(&str, &str)] = &[("loss.reg", "0")];
const REG4: &[(&str, &str)] = &[("loss.reg", "4")];
const REG64: &[(&str, &str)] = &[("loss.reg", "64")];

/// Counts seeds where `wins` holds, listing the compared values.
fn paired(
    criterion: usize,
    runs: &mut Runs,
    what: &str,
    compare: impl Fn(&mut Runs, u64) -> std::result::Result<(bool, String), String>,
) -> Outcome {
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in SEEDS {
        match compare(runs, seed) {
            Ok((won, note)) => {
                wins += won as usize;
                notes.push(note);
            }
            Err(e) => {
                return Outcome {
                    criterion,
                    passed: false,
                    detail: format!("seed {seed}: {e}"),
                }
            }
        }
    }
    Outcome {
        criterion,
        passed: wins >= 4,
        detail: format!("{what} in {wins}/5 seeds [{}]", notes.join("; ")),
    }
}

fn miou_pair(
    runs: &mut Runs,
    seed: u64,
    a: &[(&str, &str)],
    b: &[(&str, &str)],
) -> std::result::Result<(bool, String), String> {
    let x = runs.get(seed, a)?.metrics.miou;
    let y = runs.get(seed, b)?.metrics.miou;
    Ok((x > y, format!("{x:.3} vs {y:.3}")))
}

/// The two directional claims are counted separately.
fn regularization_strength(runs: &mut Runs) -> Outcome {
    let (mut fnr_wins, mut fdr_wins) = (0, 0);
    let mut notes = Vec::new();
    for seed in SEEDS {
        let mut get = |extra| runs.get(seed, extra).map(|r| r.metrics);
        let (m0, m4, m64) = match (get(REG0), get(REG4), get(REG64)) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                return Outcome {
                    criterion: 9,
                    passed: false,
                    detail: format!("seed {seed}: {e}"),
                }
            }
        };
        fnr_wins += (m64.mfnr > m4.mfnr) as usize;
        fdr_wins += (m4.mfdr < m0.mfdr) as usize;
        notes.push(format!(
            "fnr64 {:.3} fnr4 {:.3} fdr4 {:.3} fdr0 {:.3}",
            m64.mfnr, m4.mfnr, m4.mfdr, m0.mfdr
        ));
    }
    Outcome {
        criterion: 9,
        passed: fnr_wins >= 4 && fdr_wins >= 4,
        detail: format!(
            "mFNR(64) > mFNR(4) in {fnr_wins}/5, mFDR(4) < mFDR(0) in {fdr_wins}/5 [{}]",
            notes.join("; ")
        ),
    }
}

fn main() {
    let mut out = Vec::new();

    let (c, t) = timed(|| factorization::kmeans_equivalence(100));
    out.push(summarize(1, &[c], t, Some(Duration::from_secs(10))));
    let (c, t) = timed(|| factorization::low_rank(100));
    out.push(summarize(2, &[c], t, Some(Duration::from_secs(10))));
    let (c, t) = timed(|| factorization::monotonicity(50));
    out.push(summarize(3, &[c], t, None));
    let (c, t) = timed(gradients::all);
    out.push(summarize(4, &c, t, Some(Duration::from_secs(120))));
    let (c, t) = timed(calibration::all);
    out.push(summarize(5, &c, t, None));
    let (c, t) = timed(|| metrics::metric_oracle(1000));
    out.push(summarize(6, &[c], t, None));

    let mut runs = Runs::default();
    out.push(paired(7, &mut runs, "two views beat one", |r, s| {
        miou_pair(r, s, TWO_VIEW, ONE_VIEW)
    }));
    out.push(paired(8, &mut runs, "shared beats separate", |r, s| {
        miou_pair(r, s, TWO_VIEW, SEPARATE)
    }));
    out.push(regularization_strength(&mut runs));

    let determinism = (|| -> std::result::Result<(bool, String), String> {
        let first = runs.get(0, TWO_VIEW)?.csv.clone();
        let cfg = Runs::config(0, TWO_VIEW).map_err(|e| e.to_string())?;
        let second = Runs::fresh(&cfg).map_err(|e| e.to_string())?.csv;
        Ok((
            first == second,
            format!(
                "{} and {} bytes, identical: {}",
                first.len(),
                second.len(),
                first == second
            ),
        ))
    })();
    out.push(match determinism {
        Ok((passed, detail)) => Outcome {
            criterion: 10,
            passed,
            detail,
        },
        Err(e) => Outcome {
            criterion: 10,
            passed: false,
            detail: e,
        },
    });

    let example = (|| -> std::result::Result<String, String> {
        let cfg = |o: &[(&str, &str)]| {
            let o: Vec<_> = o.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            ExperimentConfig::default()
                .with_overrides(&o)
                .map_err(|e| e.to_string())
        };
        let full = Runs::fresh(&cfg(&[])?).map_err(|e| e.to_string())?.metrics.miou;
        let base = Runs::fresh(&cfg(&[("aug.scales", "1.0"), ("cvlr.enabled", "false")])?)
            .map_err(|e| e.to_string())?
            .metrics
            .miou;
        Ok(format!(
            "{} default config {full:.3} vs single-view no-CVLR baseline {base:.3}",
            if full > base { "above" } else { "not above" }
        ))
    })();

    println!();
    println!(
        "note: {}",
        example.unwrap_or_else(|e| format!("default-config comparison failed: {e}"))
    );
    for o in &out {
        println!(
            "{} criterion {:>2}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.criterion,
            o.detail
        );
    }
    let failed = out.iter().filter(|o| !o.passed).count();
    println!("{} criteria, {failed} failed", out.len());
}
