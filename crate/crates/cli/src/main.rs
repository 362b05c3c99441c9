use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use asap_core::autodiff::ParamStore;
use asap_core::data::{generate_dataset, load_dataset, save_dataset, SceneConfig};
use asap_core::model::{Architecture, ModelKind};
use asap_core::train::{bench_csv, bench_stc, evaluate, grad_check, train, TrainOptions};
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "asap", version, about = "Temporal point cloud sequence segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory from a scene config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints plus a per-epoch log.
    Train {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Window length; overrides the architecture's T.
        #[arg(long = "frames")]
        t: Option<usize>,
        /// Fraction of sequences held out for validation.
        #[arg(long, default_value_t = 0.0)]
        eval_split: f64,
        /// Stride between training windows.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Evaluate a checkpoint and write a per-class IoU report.
    Eval {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare the sampling cost of the two center-correlation strategies.
    BenchStc {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference check of the full model on a random instance.
    GradCheck {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[arg(long, default_value_t = 3)]
        frames: usize,
        /// Centers at level 0 for the check; deeper levels shrink in proportion.
        #[arg(long, default_value_t = 8)]
        centers: usize,
        /// Parameter entries sampled; kink-crossing ones are skipped.
        #[arg(long, default_value_t = 300)]
        entries: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Print the number of scalar parameters.
    ParamCount {
        #[arg(long)]
        arch: PathBuf,
    },
}

/// Everything that determines a training run, saved next to its outputs.
#[derive(Serialize)]
struct RunConfig<'a> {
    arch: &'a Path,
    data: &'a Path,
    sequence_length: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
    eval_split: f64,
    train_stride: usize,
    out: &'a Path,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Shrinks the center counts so the model fits a small random instance.
fn desk_size(model: Architecture, centers: usize, frames: usize) -> Result<Architecture> {
    let m0 = model.file.levels.first().map_or(1, |l| l.m).max(1);
    let fp_k = model.file.fp_k;
    Ok(model.modified(|f| {
        for l in &mut f.levels {
            l.m = (l.m * centers / m0).max(fp_k).max(1);
        }
        if f.model == ModelKind::Asap {
            f.sequence_length = frames;
        }
    })?)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = SceneConfig::from_json(&text)?;
            let records = generate_dataset(&cfg)?;
            let manifest = save_dataset(&out, &cfg, &records)?;
            println!(
                "wrote {} sequences ({} classes) to {} [config {}]",
                manifest.sequences.len(),
                manifest.num_classes,
                out.display(),
                &manifest.config_hash[..12]
            );
        }
        Command::Train {
            arch,
            data,
            epochs,
            lr,
            seed,
            out,
            t,
            eval_split,
            stride,
        } => {
            let mut model = Architecture::load(&arch)?;
            if let Some(t) = t {
                model = model.modified(|f| f.sequence_length = t)?;
            }
            let seqs = load_dataset(&data)?;
            let opts = TrainOptions {
                epochs,
                lr,
                seed,
                eval_split,
                train_stride: stride,
                track_train_miou: false,
            };
            let outcome = train(&model, &seqs, &opts)?;
            outcome.write(&out)?;
            let run = RunConfig {
                arch: &arch,
                data: &data,
                sequence_length: model.sequence_length(),
                epochs,
                lr,
                seed,
                eval_split,
                train_stride: stride,
                out: &out,
            };
            write(&out.join("run.json"), &serde_json::to_string_pretty(&run)?)?;
            write(&out.join("arch.json"), &model.to_json())?;
            for e in &outcome.history {
                let val = e.val_miou.map_or(String::new(), |v| format!("  val mIoU {:.2}", 100.0 * v));
                println!("epoch {:>4}  loss {:.5}{val}", e.epoch, e.loss);
            }
            println!("best epoch {}; checkpoints in {}", outcome.best_epoch, out.display());
        }
        Command::Eval {
            arch,
            ckpt,
            data,
            report,
        } => {
            let model = Architecture::load(&arch)?;
            let params = ParamStore::load(&ckpt)?;
            let seqs = load_dataset(&data)?;
            let (_, iou) = evaluate(&model, &params, &seqs)?;
            write(&report, &iou.to_csv())?;
            print!("{}", iou.to_table());
        }
        Command::BenchStc { arch, data, report } => {
            let model = Architecture::load(&arch)?;
            let seqs = load_dataset(&data)?;
            let rows = bench_stc(&model, &seqs)?;
            let csv = bench_csv(&rows);
            if let Some(r) = report {
                write(&r, &csv)?;
            }
            print!("{csv}");
            let [nearest, constant] = rows.as_slice() else {
                bail!("expected two benchmark rows");
            };
            if constant.fps_calls_per_window > nearest.fps_calls_per_window {
                bail!("constant centers sampled more than nearest matching");
            }
        }
        Command::GradCheck {
            arch,
            seed,
            points,
            frames,
            centers,
            entries,
            tol,
        } => {
            let model = desk_size(Architecture::load(&arch)?, centers, frames)?;
            let r = grad_check(&model, seed, points, frames, entries)?;
            let passed = r.passed(tol);
            println!("checked,skipped_kinks,max_rel_error,passed");
            println!("{},{},{:.3e},{}", r.checked, r.skipped_kinks, r.max_rel_error, passed);
            return Ok(passed);
        }
        Command::ParamCount { arch } => {
            let model = Architecture::load(&arch)?;
            println!("{}", model.param_count());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
