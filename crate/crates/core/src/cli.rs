//! The `bmnet` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::datasets::{conditional_oracle, generate_dataset, DatasetId, Direction, Side};
use crate::inference::{sample_forward, sample_reverse, InferenceConfig};
use crate::io;
use crate::metrics::evaluate;
use crate::training::train_with_progress;

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status of a malformed command line.
pub const EXIT_USAGE: i32 = 1;
/// Exit status of a data, model or I/O failure.
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "bmnet",
    version,
    about = "Conditionally invertible flows for many-to-many maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a paired dataset as CSV.
    GenData {
        #[arg(long)]
        dataset: DatasetId,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset CSV and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss log path [default: the checkpoint path with extension `loss.csv`].
        #[arg(long)]
        log: Option<PathBuf>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Draw conditional samples from a trained model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        direction: Direction,
        /// Comma-separated coordinates: `x0,x1,x2` forward, `y0,y1` reverse.
        #[arg(long, allow_hyphen_values = true)]
        anchor: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Training set to use instead of the path stored in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Draw samples from the exact conditional law of a dataset.
    Oracle {
        #[arg(long)]
        dataset: DatasetId,
        #[arg(long)]
        direction: Direction,
        #[arg(long, allow_hyphen_values = true)]
        anchor: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute global and local metrics of a model against the exact laws.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: DatasetId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
        /// Directory for per-anchor sample CSVs [default: `<report>.samples`].
        #[arg(long)]
        samples_dir: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn parse_anchor(text: &str, direction: Direction) -> anyhow::Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("anchor: cannot parse `{text}` as comma-separated numbers"))?;
    let dim = match direction {
        Direction::Forward => 3,
        Direction::Reverse => 2,
    };
    if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
        bail!(
            "anchor: {} direction needs {dim} finite coordinates, got `{text}`",
            direction.name()
        );
    }
    Ok(values)
}

fn target_side(direction: Direction) -> Side {
    match direction {
        Direction::Forward => Side::Y,
        Direction::Reverse => Side::X,
    }
}

fn default_sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    quiet: bool,
) -> anyhow::Result<()> {
    let config = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    let bytes =
        std::fs::read(data).with_context(|| format!("cannot read dataset {}", data.display()))?;
    let dataset =
        io::parse_dataset(&bytes).with_context(|| format!("dataset {}", data.display()))?;
    let training_set = io::TrainingSetRef {
        path: std::fs::canonicalize(data)?,
        sha256: io::sha256_hex(&bytes),
        pairs: dataset.len(),
    };
    let epochs = config.train.epochs;
    let (model, records) = train_with_progress(&dataset, &config, |epoch, records| {
        if quiet || !(epoch % 100 == 0 || epoch == epochs) {
            return;
        }
        let steps = records.len().max(1) as f64;
        let fwd: f64 = records.iter().map(|r| r.forward).sum::<f64>() / steps;
        let rev: f64 = records.iter().map(|r| r.reverse).sum::<f64>() / steps;
        eprintln!("epoch {epoch}/{epochs}: loss_forward {fwd:.5} loss_reverse {rev:.5}");
    })?;
    io::save_checkpoint(out, &model, &training_set)?;
    let log = log.map_or_else(|| default_sibling(out, ".loss.csv"), Path::to_path_buf);
    io::write_loss_log(&log, &records)?;
    Ok(())
}

fn eval(
    model: &Path,
    dataset: DatasetId,
    seed: u64,
    report: &Path,
    samples_dir: Option<&Path>,
    data: Option<&Path>,
) -> anyhow::Result<()> {
    let (model, _) = io::load_checkpoint(model, data)?;
    let mut protocol = model.config.protocol.clone();
    protocol.seed = seed;
    let evaluation = evaluate(&model, dataset, &protocol)?;
    io::write_report(report, &evaluation.report)?;
    let dir = samples_dir.map_or_else(|| default_sibling(report, ".samples"), Path::to_path_buf);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for s in &evaluation.samples {
        let side = target_side(s.direction);
        let stem = format!("{}_anchor{:02}", s.direction.name(), s.index);
        io::write_samples(&dir.join(format!("{stem}_model.csv")), side, &s.generated)?;
        io::write_samples(&dir.join(format!("{stem}_true.csv")), side, &s.truth)?;
    }
    Ok(())
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenData {
            dataset,
            n,
            seed,
            out,
        } => {
            io::write_dataset(&out, &generate_dataset(dataset, n, seed)?)?;
        }
        Command::Train {
            data,
            config,
            out,
            log,
            quiet,
        } => {
            train(&data, config.as_deref(), &out, log.as_deref(), quiet)?;
        }
        Command::Sample {
            model,
            direction,
            anchor,
            n,
            seed,
            out,
            data,
        } => {
            let anchor = parse_anchor(&anchor, direction)?;
            let (model, _) = io::load_checkpoint(&model, data.as_deref())?;
            let cfg = InferenceConfig {
                k: model.config.inference.k,
                n,
                seed,
            };
            let samples = match direction {
                Direction::Forward => sample_forward(&model, &anchor, &cfg)?,
                Direction::Reverse => sample_reverse(&model, &anchor, &cfg)?,
            };
            io::write_samples(&out, target_side(direction), &samples)?;
        }
        Command::Oracle {
            dataset,
            direction,
            anchor,
            n,
            seed,
            out,
        } => {
            let anchor = parse_anchor(&anchor, direction)?;
            let mut rng = crate::seeded_rng(seed, 0);
            let samples = conditional_oracle(dataset, direction, &anchor, n, &mut rng)?;
            io::write_samples(&out, target_side(direction), &samples)?;
        }
        Command::Eval {
            model,
            dataset,
            seed,
            report,
            samples_dir,
            data,
        } => {
            eval(
                &model,
                dataset,
                seed,
                &report,
                samples_dir.as_deref(),
                data.as_deref(),
            )?;
        }
    }
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            EXIT_FAILURE
        }
    }
}
