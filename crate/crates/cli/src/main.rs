use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use slrnet::checkpoint;
use slrnet::config::{parse_override, parse_overrides, ExperimentConfig};
use slrnet::data::generate_dataset;
use slrnet::error::{Error, Result};
use slrnet::label::LabelMap;
use slrnet::maskio::encode_mask;
use slrnet::nn::ParamStore;
use slrnet::report::MetricsWriter;
use slrnet::train::{self, EpochRecord, TrainObserver};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "slrnet",
    version,
    about = "Train and probe the cross-view low-rank toy segmenter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file; defaults apply to every key it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and log per-epoch validation metrics.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Do not print per-epoch progress.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train one model per cell of a grid over config keys.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// A key and the values to sweep. Repeat for a product grid.
        #[arg(long = "grid", value_name = "KEY=V1,V2,...", required = true)]
        grid: Vec<String>,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
    },
    /// Run every oracle and invariant suite.
    Selftest,
    /// Write pseudo-masks and predictions of a checkpoint as PNG label maps.
    ExportMasks {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "runs/masks")]
        out: PathBuf,
        /// Number of training and validation images to export.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_config(args: &ConfigArgs, extra: &[(String, String)]) -> Result<ExperimentConfig> {
    let base = match &args.config {
        Some(p) => ExperimentConfig::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides = parse_overrides(&args.set)?;
    overrides.extend_from_slice(extra);
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    base.with_overrides(&overrides)
}

struct RunLog {
    out: PathBuf,
    csv: MetricsWriter<fs::File>,
    quiet: bool,
}

impl TrainObserver for RunLog {
    fn on_epoch(&mut self, r: &EpochRecord, _store: &ParamStore) -> Result<()> {
        self.csv.write(r)?;
        if !self.quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  mIoU {:.4}  mFDR {:.4}  mFNR {:.4}  ignored {:.3}",
                r.epoch, r.losses.total, r.metrics.miou, r.metrics.mfdr, r.metrics.mfnr, r.ignored
            );
        }
        Ok(())
    }

    fn on_divergence(&mut self, error: &Error, store: &ParamStore) {
        let dir = self.out.join("checkpoints");
        let snapshot = dir.join("diverged.bin");
        let note = format!("{error}\nparameters before the failing step: {}\n", snapshot.display());
        // Best effort: the divergence itself is what gets reported.
        let _ = write(&snapshot, checkpoint::encode(store));
        let _ = write(&self.out.join("divergence.txt"), note);
    }
}

fn run_train(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<train::Trained> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("config.resolved"), cfg.to_text())?;
    let path = out.join("metrics.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut log = RunLog {
        out: out.to_path_buf(),
        csv: MetricsWriter::new(file)?,
        quiet,
    };
    let trained = train::train(cfg, &mut log)?;
    write(
        &out.join("checkpoints").join("final.bin"),
        checkpoint::encode(&trained.store),
    )?;
    Ok(trained)
}

fn grid_cells(grid: &[String]) -> Result<Vec<Vec<(String, String)>>> {
    let mut cells = vec![Vec::new()];
    for g in grid {
        let (key, values) = parse_override(g)?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Config {
                field: key,
                message: "grid needs at least one value".into(),
            });
        }
        let (key, values) = (key.as_str(), &values);
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((key.to_string(), v.to_string()));
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

fn cell_name(cell: &[(String, String)]) -> String {
    cell.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("__")
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<(slrnet::net::ToyNet, ParamStore)> {
    let (net, mut store) = train::build_model(cfg)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint::load_into(&mut store, &bytes)?;
    Ok((net, store))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { cfg, out, quiet } => {
            let cfg = load_config(&cfg, &[])?;
            let trained = run_train(&cfg, &out, quiet)?;
            if let Some(last) = trained.history.last() {
                println!(
                    "final  mIoU {:.4}  mFDR {:.4}  mFNR {:.4}",
                    last.metrics.miou, last.metrics.mfdr, last.metrics.mfnr
                );
            }
        }
        Command::Eval { cfg, checkpoint } => {
            let cfg = load_config(&cfg, &[])?;
            let (net, store) = load_model(&cfg, &checkpoint)?;
            let data = generate_dataset(&cfg.dataset_spec())?;
            let m = train::evaluate(&net, &store, &data.val)?;
            println!("mIoU {:.4}  mFDR {:.4}  mFNR {:.4}", m.miou, m.mfdr, m.mfnr);
        }
        Command::Ablate { cfg: args, grid, out } => {
            let cells = grid_cells(&grid)?;
            // Validate every cell before spending time on any of them.
            let configs = cells
                .iter()
                .map(|c| load_config(&args, c))
                .collect::<Result<Vec<_>>>()?;
            let mut summary = String::from("cell,miou,mfdr,mfnr\n");
            for (cell, cfg) in cells.iter().zip(&configs) {
                let name = cell_name(cell);
                eprintln!("== {name}");
                let trained = run_train(cfg, &out.join(&name), true)?;
                let m = trained.history.last().map(|r| r.metrics);
                if let Some(m) = m {
                    summary.push_str(&format!("{name},{},{},{}\n", m.miou, m.mfdr, m.mfnr));
                    eprintln!("   mIoU {:.4}  mFDR {:.4}  mFNR {:.4}", m.miou, m.mfdr, m.mfnr);
                }
            }
            write(&out.join("summary.csv"), summary)?;
        }
        Command::Selftest => {
            let checks = slrnet_verify::checks::run_all();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {:<40} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return Err(Error::Contract(format!("{failed} self-test checks failed")));
            }
        }
        Command::ExportMasks {
            cfg,
            checkpoint,
            out,
            count,
        } => {
            let cfg = load_config(&cfg, &[])?;
            let (net, store) = load_model(&cfg, &checkpoint)?;
            let data = generate_dataset(&cfg.dataset_spec())?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            let masks = out.join("masks");
            for (i, s) in data.train.iter().take(count).enumerate() {
                let pseudo = train::sample_pseudo_mask(&net, &store, &cfg, s, &mut rng)?;
                write(
                    &masks.join(format!("train-{i:03}-pseudo.png")),
                    encode_mask(&pseudo.to_label_map())?,
                )?;
                write(&masks.join(format!("train-{i:03}-truth.png")), encode_mask(&s.mask)?)?;
            }
            for (i, s) in data.val.iter().take(count).enumerate() {
                let pred = train::predict(&net, &store, &s.image)?;
                let map = LabelMap::new(s.mask.height(), s.mask.width(), pred.into_iter().map(Some).collect())?;
                write(&masks.join(format!("val-{i:03}-pred.png")), encode_mask(&map)?)?;
                write(&masks.join(format!("val-{i:03}-truth.png")), encode_mask(&s.mask)?)?;
            }
            println!("wrote {}", masks.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => EXIT_CONFIG,
                Error::Divergence { .. } => EXIT_DIVERGED,
                _ => 1,
            })
        }
    }
}
