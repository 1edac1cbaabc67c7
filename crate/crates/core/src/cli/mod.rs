//! Command-line frontend: `gen`, `train` and `eval`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a
//! command aborts at runtime.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalsuite::{run_eval, EvalOptions, EvalSummary, METRIC_COLUMNS};
use crate::nets::ModelSet;
use crate::synthworld::{generate_dataset, DatasetConfig, DomainSelection};
use crate::trainer::{train_phase1, train_phase2, write_log, TrainConfig, TrainData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

#[derive(Parser, Debug)]
#[command(name = "s3kit", version, about = "Synthetic-world depth and pose training toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Synthetic,
    Real,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic and/or real-domain corpus.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        scenes: usize,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = DomainArg::Both)]
        domain: DomainArg,
        /// Run config whose `dataset` section supplies world parameters.
        #[arg(long)]
        config: Option<String>,
    },
    /// Run one training phase and write a checkpoint plus train_log.csv.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        phase: u8,
        /// Path to a JSON run config, or `default`.
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Starting checkpoint; required for phase 2.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the real-domain corpus with hidden labels.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "80", value_parser = ["80", "50"])]
        cap: String,
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        median_scale: Switch,
        #[arg(long)]
        by_category: bool,
        /// Comma-separated brightness factors.
        #[arg(long, value_delimiter = ',')]
        brightness: Option<Vec<f64>>,
        #[arg(long)]
        pose: bool,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u16).range(2..))]
        snippet_len: u16,
        /// Report directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Everything configurable, with defaults for every omitted field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
}

/// Parses a run config, reporting the offending path on failure.
pub fn parse_run_config(text: &str, origin: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: format!("{origin}: {}", e.path()),
        msg: e.inner().to_string(),
    })?;
    cfg.train.validate().map_err(|e| Error::Config {
        path: format!("{origin}: train"),
        msg: e.to_string(),
    })?;
    cfg.dataset.world.validate().map_err(|e| Error::Config {
        path: format!("{origin}: dataset.world"),
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn load_run_config(spec: &str) -> Result<RunConfig> {
    if spec == "default" {
        return Ok(RunConfig::default());
    }
    let text = fs::read_to_string(spec).map_err(|e| Error::Config {
        path: spec.to_string(),
        msg: e.to_string(),
    })?;
    parse_run_config(&text, spec)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Applies `S3KIT_THREADS` to the global worker pool.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("S3KIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| Error::Config {
        path: "S3KIT_THREADS".into(),
        msg: format!("not a thread count: {v}"),
    })?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|()| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen {
            seed,
            scenes,
            frames,
            out,
            domain,
            config,
        } => {
            let mut cfg = match config {
                Some(c) => load_run_config(&c)?.dataset,
                None => DatasetConfig::default(),
            };
            cfg.seed = seed;
            cfg.scenes = scenes;
            if let Some(f) = frames {
                cfg.world.frames = f;
            }
            let which = match domain {
                DomainArg::Synthetic => DomainSelection::Synthetic,
                DomainArg::Real => DomainSelection::Real,
                DomainArg::Both => DomainSelection::Both,
            };
            let s = generate_dataset(&out, &cfg, which)?;
            println!("scenes: {}", s.scenes);
            println!("frames: {}", s.frames);
            Ok(())
        }
        Command::Train {
            phase,
            config,
            data,
            out,
            resume,
        } => {
            let cfg = load_run_config(&config)?.train;
            if phase == 2 && resume.is_none() {
                return Err(Error::Config {
                    path: "--resume".into(),
                    msg: "phase 2 requires a phase-1 checkpoint".into(),
                });
            }
            cmd_train(phase, &cfg, &data, &out, resume.as_deref())
        }
        Command::Eval {
            ckpt,
            data,
            cap,
            median_scale,
            by_category,
            brightness,
            pose,
            snippet_len,
            out,
        } => {
            let cap: f64 = cap.parse().expect("restricted by clap");
            if let Some(b) = &brightness {
                if b.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
                    return Err(Error::Config {
                        path: "--brightness".into(),
                        msg: "factors must be positive".into(),
                    });
                }
            }
            let out = out.unwrap_or_else(|| ckpt.parent().map(Path::to_path_buf).unwrap_or_default());
            let opts = EvalOptions {
                data,
                out,
                cap,
                median_scale: median_scale == Switch::On,
                by_category,
                brightness,
                pose,
                snippet_len: snippet_len as usize,
            };
            let model = ModelSet::load(&ckpt)?;
            let summary = run_eval(&model, &opts)?;
            print!("{}", format_summary(&summary));
            Ok(())
        }
    }
}

/// Trains one phase and writes the checkpoint and log into `out`.
pub fn cmd_train(phase: u8, cfg: &TrainConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let data = TrainData::load(data)?;
    let model = match resume {
        Some(p) => ModelSet::load(p)?,
        None => ModelSet::init(cfg.seed, cfg.semantic_augmentation)?,
    };
    if model.semantic_augmentation() != cfg.semantic_augmentation {
        log::warn!(
            "checkpoint semantic augmentation is {}, config says {}; using the checkpoint",
            model.semantic_augmentation(),
            cfg.semantic_augmentation
        );
    }
    let outcome = match phase {
        1 => train_phase1(model, &data, cfg)?,
        _ => train_phase2(model, &data, cfg)?,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    outcome.model.save(&out.join(CHECKPOINT_FILE))?;
    write_log(&out.join(LOG_FILE), &outcome.log)?;
    println!(
        "phase {phase}: {} steps ({} supervised, {} self-supervised, {} degenerate snippets)",
        outcome.log.len(),
        outcome.supervised_steps,
        outcome.self_supervised_steps,
        outcome.degenerate_snippets
    );
    Ok(())
}

/// The seven depth metrics in table order, then the optional pose line.
pub fn format_summary(s: &EvalSummary) -> String {
    let mut out = format!("{}\n", METRIC_COLUMNS.join("\t"));
    let vals: Vec<String> = s.depth.values().iter().map(|v| format!("{v:.4}")).collect();
    out.push_str(&vals.join("\t"));
    out.push('\n');
    if let Some(p) = &s.pose {
        out.push_str(&format!("ate: {:.4} ± {:.4}\n", p.mean, p.std));
    }
    out
}
