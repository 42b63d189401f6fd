use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsunet::config::{Profile, RunConfig, SceneMode};
use dsunet::data::{generate_dataset, write_dataset};
use dsunet::encoders::Encoders;
use dsunet::harness::{ablate, count_parameters, evaluate_samples, load_data, log_csv, log_path, predict_dir, train, Checkpoint};
use dsunet::metrics::evaluate_dataset;
use dsunet::verify::{run_all, VerifyOptions};
use dsunet::{DsuError, Result};

#[derive(Parser)]
#[command(name = "dsu", version, about = "Train, export and evaluate dual-encoder segmentation models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset (planar PGM views, masks and a manifest).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value = "sod")]
        mode: SceneMode,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "toy")]
        profile: Profile,
    },
    /// Train from a config file; writes the checkpoint and `<stem>.log.csv`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export sigmoid(D3) masks for every image of a dataset directory.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against ground truth; writes a CSV report.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        beta2: Option<f64>,
    },
    /// Train and evaluate variants A, B, C and full on one dataset.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter totals per module and the trainable fraction.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Gradient, wavelet and metric self-checks.
    Verify {
        /// One end-to-end seed with a narrow decoder instead of five at full width.
        #[arg(long)]
        quick: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::from_file)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| DsuError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| DsuError::io(path, e))
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::GenData { out, n, mode, seed, profile } => {
            let entries = generate_dataset(n, mode, profile, seed);
            write_dataset(&out, &entries)?;
            println!("wrote {n} {mode} samples ({profile}) to {}", out.display());
        }
        Cmd::Train { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let (train_set, val) = load_data(&cfg)?;
            let encoders = Encoders::new(cfg.model.geometry(), cfg.model.encoder_seed);
            let (ck, log) = train(&cfg, &encoders, &train_set, |e| {
                println!("epoch {:>3}  step {:>5}  loss {:.5}", e.epoch, e.steps, e.mean.total);
            })?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| DsuError::io(dir, e))?;
            }
            ck.save(&out)?;
            write(&log_path(&out), &log_csv(&log))?;
            if !val.is_empty() {
                let m = evaluate_samples(&ck.net, &encoders, &val)?.means;
                println!("val: S {:.4}  Fadp {:.4}  Eadp {:.4}  MAE {:.4}", m.s, m.f_adaptive, m.e_adaptive, m.mae);
            }
            println!("checkpoint: {}", out.display());
        }
        Cmd::Predict { ckpt, images, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let ids = predict_dir(&ck, &images, &out)?;
            println!("wrote {} masks to {}", ids.len(), out.display());
        }
        Cmd::Eval { pred, gt, report, beta2 } => {
            let r = evaluate_dataset(&pred, &gt, beta2)?;
            write(&report, &r.to_csv())?;
            print!("{}", r.to_table());
            if !r.is_clean() {
                eprintln!("{} image(s) failed to evaluate", r.failures.len());
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Ablate { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let table = ablate(&cfg, |v, e| eprintln!("[{v}] epoch {:>3}  loss {:.5}", e.epoch, e.mean.total))?;
            write(&out, &table.to_csv())?;
            print!("{}", table.to_table());
        }
        Cmd::Params { config } => {
            let cfg = load_config(config.as_deref())?;
            print!("{}", count_parameters(&cfg.model)?.to_table());
        }
        Cmd::Verify { quick } => {
            let mut opts = VerifyOptions::default();
            if quick {
                opts.e2e_seeds = 1;
                opts.e2e_config.reduced_channels = 8;
            }
            let lines = run_all(&opts, |l| println!("{l}"))?;
            let failed = lines.iter().filter(|l| !l.passed()).count();
            println!("{} checks, {failed} failed", lines.len());
            if failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
