use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aflab_core::config::KvConfig;
use aflab_core::ctc::AlignmentMode;
use aflab_core::pipeline::{
    assemble_tables, dump_alignment, generate_datasets, run_eval, run_pretrain, run_train, write_tables, Manifest, PipelineConfig, MANIFEST_FILE,
    RESULTS_FILE,
};
use aflab_core::synthdata::PromptOrder;
use aflab_core::training::{ExperimentPreset, PresetId};
use aflab_core::Error;
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use log::{info, warn};

/// Synthetic speech-LLM alignment experiments: data, pretraining, adapter
/// training, IFR evaluation and tables.
#[derive(Parser, Debug)]
#[command(name = "aflab", version)]
struct Cli {
    /// Flat `key = value` config file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for the stage being run (data, pretraining or training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Computation is single-threaded; the value is recorded
    /// in the manifest.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Replace an existing artifact directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate every dataset split.
    Gen,
    /// Pretrain the LM on text and the encoder with CTC; checks the
    /// exact-match gate.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one preset's adapter against the frozen LM.
    Train {
        #[arg(long)]
        preset: String,
        /// audio_first or instruction_first (adapter presets only).
        #[arg(long)]
        order: Option<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
    },
    /// Zero-shot IFR and ASR error of a trained run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write CTC paths and windows of a split.
    DumpAlign {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "asr_eval_audio_first_text")]
        split: String,
        /// greedy or forced.
        #[arg(long, default_value = "greedy")]
        mode: String,
        #[arg(long, default_value_t = usize::MAX)]
        limit: usize,
    },
    /// Collect evaluation results into tables.
    Tables {
        /// Evaluation output directories.
        #[arg(required = true)]
        evals: Vec<PathBuf>,
    },
}

/// Failure classes with their exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
    Gate(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp_secs().init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Gate(msg)) => {
            eprintln!("gate failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut kv = match &cli.config {
        Some(p) => KvConfig::load(p).with_context(|| format!("reading config {}", p.display())).map_err(Failure::Usage)?,
        None => KvConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::Usage(anyhow!("override {o:?} is not key=value")))?;
        kv.set(k.trim(), v.trim());
    }
    PipelineConfig::from_kv(&kv).map_err(|e| Failure::Usage(e.into()))
}

/// Create `dir` for writing. An existing non-empty directory is only replaced
/// with `--force`, and only if it holds a manifest from an earlier run.
fn prepare_out(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Failure::Runtime(e.into()))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Failure::Usage(anyhow!("{} is not empty; pass --force to replace it", dir.display())));
            }
            if !dir.join(MANIFEST_FILE).exists() {
                return Err(Failure::Usage(anyhow!("{} has no {MANIFEST_FILE}; refusing to delete it", dir.display())));
            }
            fs::remove_dir_all(dir).map_err(|e| Failure::Runtime(e.into()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    cli.out.as_deref().ok_or_else(|| Failure::Usage(anyhow!("--out is required")))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    if cli.threads == 0 {
        return Err(Failure::Usage(anyhow!("--threads must be at least 1")));
    }
    if cli.threads > 1 {
        warn!("computation is single-threaded; --threads {} is only recorded", cli.threads);
    }
    let out = out_dir(cli)?;
    match &cli.command {
        Command::Gen => {
            if let Some(s) = cli.seed {
                cfg.data.seed = s;
            }
            prepare_out(out, cli.force)?;
            let manifest = Manifest::new("gen", cli.config.as_deref(), cfg.data.seed, cli.threads, &cfg);
            for (name, n) in generate_datasets(&cfg, out)? {
                info!("{name}: {n} records");
            }
            manifest.finish(out)?;
        }
        Command::Pretrain { data } => {
            if let Some(s) = cli.seed {
                cfg.lm_stage.seed = s;
                cfg.encoder_stage.seed = s.wrapping_add(1);
            }
            prepare_out(out, cli.force)?;
            let mut manifest = Manifest::new("pretrain", cli.config.as_deref(), cfg.lm_stage.seed, cli.threads, &cfg);
            manifest.add_input_dir(data)?;
            let report = run_pretrain(&cfg, data, out)?;
            manifest.set("gate_passed", report.gate_passed);
            manifest.finish(out)?;
            println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
            if !report.gate_passed {
                return Err(Failure::Gate(format!("text exact match {:.4} < {:.4}", report.exact_match, report.gate)));
            }
        }
        Command::Train { preset, order, data, pretrained } => {
            let id = PresetId::parse(preset).map_err(|e| Failure::Usage(e.into()))?;
            let order = order.as_deref().map(PromptOrder::parse).transpose().map_err(|e| Failure::Usage(e.into()))?;
            let preset = ExperimentPreset::new(id, order).map_err(|e| Failure::Usage(e.into()))?;
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            prepare_out(out, cli.force)?;
            let mut manifest = Manifest::new("train", cli.config.as_deref(), cfg.train.seed, cli.threads, &cfg);
            manifest.set("preset", preset.label());
            manifest.add_input_dir(pretrained)?;
            let info = run_train(&cfg, &preset, data, pretrained, out)?;
            info!("{} trained in {:.0}s ({} samples without alignment)", info.label, info.seconds, info.skipped_empty_alignment);
            manifest.finish(out)?;
        }
        Command::Eval { run, data } => {
            prepare_out(out, cli.force)?;
            let mut manifest = Manifest::new("eval", cli.config.as_deref(), cli.seed.unwrap_or(cfg.train.seed), cli.threads, &cfg);
            manifest.add_input_dir(run)?;
            let eval = run_eval(&cfg, run, data, out)?;
            manifest.finish(out)?;
            print!("{}", aflab_core::ifr::rows_to_text(&eval.rows));
        }
        Command::DumpAlign { run, data, split, mode, limit } => {
            let mode = match mode.as_str() {
                "greedy" => AlignmentMode::Greedy,
                "forced" => AlignmentMode::Forced,
                other => return Err(Failure::Usage(anyhow!("unknown alignment mode {other:?} (greedy, forced)"))),
            };
            prepare_out(out, cli.force)?;
            let mut manifest = Manifest::new("dump-align", cli.config.as_deref(), cli.seed.unwrap_or(cfg.train.seed), cli.threads, &cfg);
            manifest.set("split", split);
            manifest.add_input_dir(run)?;
            let (paths, windows) = dump_alignment(run, data, split, mode, *limit)?;
            fs::write(out.join("paths.txt"), paths).context("writing paths.txt")?;
            fs::write(out.join("windows.txt"), windows).context("writing windows.txt")?;
            manifest.finish(out)?;
        }
        Command::Tables { evals } => {
            let files: Vec<PathBuf> = evals.iter().map(|d| d.join(RESULTS_FILE)).collect();
            if let Some(missing) = files.iter().find(|f| !f.exists()) {
                return Err(Failure::Runtime(anyhow!("missing {}", missing.display())));
            }
            prepare_out(out, cli.force)?;
            let mut manifest = Manifest::new("tables", cli.config.as_deref(), cli.seed.unwrap_or(cfg.train.seed), cli.threads, &cfg);
            for f in &files {
                manifest.add_input_file(f)?;
            }
            let rows = assemble_tables(&files)?;
            write_tables(&rows, out)?;
            manifest.finish(out)?;
            print!("{}", aflab_core::ifr::rows_to_text(&rows));
        }
    }
    Ok(())
}
