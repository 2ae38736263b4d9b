//! `jpop` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Usage and configuration errors are detected before any run directory is
//! created, so they leave no artifacts behind.

pub mod config;
pub mod pipeline;
pub mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use jpop_core::data::{generate_synthetic, ingest_mrnet, IngestOptions, Plane, Split, SyntheticSpec};
use jpop_core::imaging;
use jpop_core::models::{DownstreamModel, PretextModel};
use jpop_core::patchgen::{make_jumbled_sample_seeded, mosaic, Frame, PatchGeometry};
use jpop_core::permset::{generate_candidate_pool, sample_class_set, PermutationSet};
use jpop_core::seed::derive_seed;

use config::{Overrides, RunConfig};
use pipeline::{ExplainRequest, Init};
use run::{Logger, RunDir};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or arguments.
    Usage(String),
    /// Field-level configuration problems.
    Config(Vec<String>),
    /// Failure while executing a valid command.
    Runtime(String),
}

impl CliError {
    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(errs) => write!(f, "configuration error: {}", errs.join("; ")),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<jpop_core::error::Error> for CliError {
    fn from(e: jpop_core::error::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "jpop", version, about = "Jigsaw-puzzle pretraining and ACL-tear transfer learning")]
pub struct Cli {
    /// Root for run directories (overrides JPOP_RUNS and the config file).
    #[arg(long, global = true)]
    pub runs: Option<PathBuf>,
    /// Do not echo log lines to stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Record store (overrides JPOP_STORE and the config file).
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Global seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Pretext,
    Downstream,
    All,
}

#[derive(Debug, Subcommand)]
pub enum PermsCmd {
    /// Greedy Hamming pool plus a seeded class set.
    Generate {
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pool members differ in more than this many positions.
        #[arg(long, default_value_t = 4)]
        threshold: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PatchgenCmd {
    /// Renders a jumbled 3x3 mosaic of one frame.
    Preview {
        /// Grayscale frame image.
        #[arg(long)]
        frame: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Permutation-set file; generated from --classes when absent.
        #[arg(long)]
        perms: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        patch_size: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum ModelsCmd {
    /// Prints per-layer shapes and parameter counts.
    Summary {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Which::All)]
        model: Which,
    },
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Permutation sets.
    #[command(subcommand)]
    Perms(PermsCmd),
    /// Patch generation previews.
    #[command(subcommand)]
    Patchgen(PatchgenCmd),
    /// Imports MRNet stacks into a record store.
    Ingest {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PlaneArg::Sagittal)]
        plane: PlaneArg,
        #[arg(long, default_value_t = 256)]
        frame_size: usize,
        /// Fail unless the split sizes match the published MRNet counts.
        #[arg(long)]
        expect_mrnet_counts: bool,
    },
    /// Generates a synthetic record store with a planted artifact.
    Synth {
        /// JSON synthetic spec; defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the jigsaw pretext network.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Train on the class-balanced clip list.
        #[arg(long, value_enum)]
        oversample_pretext: Option<OnOff>,
    },
    /// Fine-tunes the tear classifier.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretext checkpoint or `random`.
        #[arg(long)]
        init: Init,
    },
    /// Accuracy and AUC with bootstrap intervals.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "valid")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grad-CAM heatmaps for one clip.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: String,
        /// Clip frame; all classifier frames when absent (downstream).
        #[arg(long)]
        frame: Option<usize>,
        /// Pretext target class; the predicted class when absent.
        #[arg(long)]
        class: Option<usize>,
        /// Pretext arrangement applied to the frame.
        #[arg(long, default_value_t = 0)]
        arrangement: usize,
        /// Permutation-set file for pretext checkpoints.
        #[arg(long)]
        perms: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints model summaries.
    Summary {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Which::All)]
        model: Which,
    },
    /// Model utilities.
    #[command(subcommand)]
    Models(ModelsCmd),
    /// Pretext oversampling ablation: both arms end to end plus a report.
    Ablation {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlaneArg {
    Sagittal,
    Coronal,
    Axial,
}

impl From<PlaneArg> for Plane {
    fn from(p: PlaneArg) -> Self {
        match p {
            PlaneArg::Sagittal => Plane::Sagittal,
            PlaneArg::Coronal => Plane::Coronal,
            PlaneArg::Axial => Plane::Axial,
        }
    }
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut log = Logger::new(cli.quiet);
    match dispatch(cli, &mut log) {
        Ok(()) => 0,
        Err(e) => {
            let fields = match &e {
                CliError::Config(errs) => json!({"errors": errs}),
                other => json!({"message": other.to_string()}),
            };
            let event = match e {
                CliError::Usage(_) => "usage_error",
                CliError::Config(_) => "config_error",
                CliError::Runtime(_) => "runtime_error",
            };
            log.error(event, fields);
            if log.quiet {
                eprintln!("{e}");
            }
            e.exit_code()
        }
    }
}

fn overrides(common: &Common, runs: &Option<PathBuf>) -> Overrides {
    Overrides {
        store: common.store.clone(),
        runs: runs.clone(),
        seed: common.seed,
    }
}

/// Resolves the config, then creates the run directory with the resolved
/// config and log file.
fn start(command: &str, cfg: RunConfig, log: &mut Logger) -> Result<(RunConfig, RunDir), CliError> {
    let run = RunDir::create(&cfg.runs_dir, command)?;
    run.write_json("config.json", &cfg)?;
    log.attach(&run.join("log.jsonl"))?;
    log.info("run_started", json!({"command": command, "run_dir": run.path, "seed": cfg.seed}));
    Ok((cfg, run))
}

fn default_cfg(runs: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    RunConfig::default().resolve(&Overrides {
        runs: runs.clone(),
        ..Default::default()
    })
}

fn dispatch(cli: Cli, log: &mut Logger) -> Result<(), CliError> {
    let runs = cli.runs.clone();
    match cli.command {
        Command::Perms(PermsCmd::Generate {
            classes,
            seed,
            threshold,
            out,
        }) => {
            if threshold == 0 || threshold >= 9 {
                return Err(CliError::Config(vec!["threshold: must be in 1..9".into()]));
            }
            if classes == 0 {
                return Err(CliError::Config(vec!["classes: must be at least 1".into()]));
            }
            let mut cfg = default_cfg(&runs)?;
            cfg.seed = seed;
            cfg.permset.classes = classes;
            cfg.permset.threshold = threshold;
            cfg.model.pretext.class_count = classes;
            let cfg = cfg.resolve(&Overrides::default())?;
            let t = std::time::Instant::now();
            let pool = generate_candidate_pool(9, threshold, false)?;
            let seconds = t.elapsed().as_secs_f64();
            if classes > pool.len() {
                return Err(CliError::Config(vec![format!(
                    "classes: {classes} exceeds the pool size {}",
                    pool.len()
                )]));
            }
            let (cfg, run) = start("perms", cfg, log)?;
            log.info(
                "pool_generated",
                json!({
                    "pool_size": pool.len(), "n_patches": 9, "threshold_exclusive": threshold,
                    "enumeration_order": pool.enumeration_order, "pool_digest": pool.digest(),
                    "seconds": seconds,
                }),
            );
            let set = sample_class_set(&pool, classes, cfg.permset.seed)?;
            let path = out.unwrap_or_else(|| run.join("permset.json"));
            set.save(&path)?;
            log.info("permset_written", json!({"path": path, "classes": set.class_count(), "seed": cfg.permset.seed}));
            Ok(())
        }
        Command::Patchgen(PatchgenCmd::Preview {
            frame,
            seed,
            out,
            perms,
            classes,
            patch_size,
        }) => {
            let pixels = imaging::load_gray(&frame)?;
            if !pixels.is_square() {
                return Err(CliError::Config(vec![format!(
                    "frame: {}x{} is not square",
                    pixels.height, pixels.width
                )]));
            }
            let geo = PatchGeometry::new(pixels.height, patch_size)
                .map_err(|e| CliError::Config(vec![format!("patch_size: {e}")]))?;
            let mut cfg = default_cfg(&runs)?;
            cfg.seed = seed;
            let (cfg, run) = start("patchgen", cfg, log)?;
            let pset = match perms {
                Some(p) => PermutationSet::load(&p)?,
                None => sample_class_set(&generate_candidate_pool(9, 4, false)?, classes, cfg.permset.seed)?,
            };
            let sample = make_jumbled_sample_seeded(
                &Frame::new(pixels, frame.display().to_string(), 0),
                &pset,
                &geo,
                derive_seed(cfg.seed, "patchgen.preview"),
            )?;
            imaging::save_png8(&mosaic(&sample, 2), &out)?;
            run.write_json("sample.json", &json!({"label": sample.label, "provenance": sample.provenance, "mosaic": out}))?;
            log.info("preview_written", json!({"path": out, "label": sample.label}));
            Ok(())
        }
        Command::Ingest {
            src,
            out,
            plane,
            frame_size,
            expect_mrnet_counts,
        } => {
            let opts = IngestOptions {
                plane: plane.into(),
                frame_size,
                expect_mrnet_counts,
            };
            let (cfg, run) = start("ingest", default_cfg(&runs)?, log)?;
            let manifest = ingest_mrnet(&src, &out, &opts, pipeline::apply_execution(&cfg))?;
            run.write_json("manifest.json", &manifest)?;
            log.info("ingested", json!({"store": out, "counts": manifest.counts}));
            Ok(())
        }
        Command::Synth { spec, out } => {
            let spec: SyntheticSpec = match spec {
                None => SyntheticSpec::default(),
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| CliError::Config(vec![format!("{}: {e}", p.display())]))?;
                    serde_json::from_str(&text).map_err(|e| CliError::Config(vec![format!("{}: {e}", p.display())]))?
                }
            };
            spec.validate().map_err(|e| CliError::Config(vec![format!("spec: {e}")]))?;
            let (cfg, run) = start("synth", default_cfg(&runs)?, log)?;
            run.write_json("spec.json", &spec)?;
            let manifest = generate_synthetic(&spec, &out, pipeline::apply_execution(&cfg))?;
            log.info("synthesized", json!({"store": out, "counts": manifest.counts}));
            Ok(())
        }
        Command::Pretrain {
            common,
            oversample_pretext,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &runs))?;
            if let Some(o) = oversample_pretext {
                cfg.train.pretext.oversample_pretext = o == OnOff::On;
            }
            cfg.store()?;
            let (cfg, run) = start("pretrain", cfg, log)?;
            pipeline::apply_execution(&cfg);
            let splits = pipeline::load_splits(&cfg, log)?;
            pipeline::pretrain(&cfg, &splits, &run.path, log)?;
            Ok(())
        }
        Command::Finetune { common, init } => {
            let cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &runs))?;
            cfg.store()?;
            if let Init::Checkpoint(p) = &init {
                cfg.validate_transfer()?;
                if !p.is_file() {
                    return Err(CliError::Config(vec![format!("init: {} is not a file", p.display())]));
                }
            }
            let (cfg, run) = start("finetune", cfg, log)?;
            pipeline::apply_execution(&cfg);
            let splits = pipeline::load_splits(&cfg, log)?;
            pipeline::finetune(&cfg, &splits, &init, &run.path, log)?;
            Ok(())
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            out,
        } => {
            let cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &runs))?;
            cfg.store()?;
            let (cfg, run) = start("eval", cfg, log)?;
            let mode = pipeline::apply_execution(&cfg);
            let report = pipeline::evaluate_checkpoint(&cfg, &checkpoint, split, mode, log)?;
            let path = out.unwrap_or_else(|| run.join("report.json"));
            run::write_json(&path, &report)?;
            if path != run.join("report.json") {
                run.write_json("report.json", &report)?;
            }
            let table = jpop_core::eval::render_comparison(&[jpop_core::eval::ComparisonRow {
                arm: split.as_str().into(),
                accuracy: report.accuracy.clone(),
                auc: report.auc.clone(),
            }]);
            run.write_text("report.txt", &table)?;
            println!("{table}");
            Ok(())
        }
        Command::Explain {
            common,
            checkpoint,
            clip,
            frame,
            class,
            arrangement,
            perms,
            out,
        } => {
            let cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &runs))?;
            cfg.store()?;
            let (cfg, run) = start("explain", cfg, log)?;
            pipeline::apply_execution(&cfg);
            let out_dir = out.unwrap_or_else(|| run.join("explain"));
            let req = ExplainRequest {
                checkpoint: &checkpoint,
                clip: &clip,
                frame,
                class,
                arrangement,
                perms: perms.as_deref(),
                out: &out_dir,
            };
            pipeline::explain(&cfg, &req, log)?;
            Ok(())
        }
        Command::Summary { common, model } | Command::Models(ModelsCmd::Summary { common, model }) => {
            let cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &runs))?;
            let (cfg, run) = start("summary", cfg, log)?;
            let text = summaries(&cfg, model, log)?;
            run.write_text("summary.txt", &text)?;
            println!("{text}");
            Ok(())
        }
        Command::Ablation { common } => {
            let cfg = RunConfig::load(common.config.as_deref(), &overrides(&common, &runs))?;
            cfg.store()?;
            cfg.validate_transfer()?;
            let (cfg, run) = start("ablation", cfg, log)?;
            let mode = pipeline::apply_execution(&cfg);
            let splits = pipeline::load_splits(&cfg, log)?;
            let report = pipeline::ablation(&cfg, &splits, &run.path, mode, log)?;
            println!("{}", report.table);
            Ok(())
        }
    }
}

fn summaries(cfg: &RunConfig, which: Which, log: &mut Logger) -> Result<String, CliError> {
    let mut parts = Vec::new();
    if matches!(which, Which::Pretext | Which::All) {
        let s = PretextModel::<f32>::build(&cfg.model.pretext)?.summary()?;
        log.info("model_summary", json!({"model": s.model, "total_params": s.total_params}));
        parts.push(s.to_string());
    }
    if matches!(which, Which::Downstream | Which::All) {
        let s = DownstreamModel::<f32>::build(&cfg.model.downstream)?.summary()?;
        log.info("model_summary", json!({"model": s.model, "total_params": s.total_params}));
        parts.push(s.to_string());
    }
    Ok(parts.join("\n\n"))
}

/// Reads a JSON run config without resolving it.
pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(Some(path), &Overrides::default())
}
