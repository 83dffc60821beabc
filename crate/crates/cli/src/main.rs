use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tps_core::dataset::{
    dataset_stats, generate_synthetic, load_dataset, save_dataset, validate_dataset, Dataset,
    ValidationConfig,
};
use tps_core::engine::{
    export_attention, grad_check_all, load_run, prepare_splits, rank_text, run_eval, run_train,
    RunConfig, REPORT_FILE,
};
use tps_core::exec::Exec;

#[derive(Parser)]
#[command(name = "tps", version, about = "Text-based person search with prototype-guided attention")]
struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.with_overrides(&self.overrides)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print corpus statistics.
    Stats {
        /// Annotation directory; the configured corpus otherwise.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Check a corpus against the annotation rules.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        /// Expected captions per labelled box; 0 disables the check.
        #[arg(long, default_value_t = 2)]
        captions_per_box: usize,
    },
    /// Train a model and write config, checkpoint and loss log.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a trained run; writes eval_report.json and rankings.csv.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Output directory; the run directory by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every layer, loss and the composite objective.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write learned and target attention maps as PGM and CSV.
    ExportAttn {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Rank detected boxes against one free-text query.
    Rank {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
}

fn pick(splits: tps_core::dataset::Splits, s: Split) -> Dataset {
    match s {
        Split::Train => splits.train,
        Split::Val => splits.val,
        Split::Test => splits.test,
    }
}

fn corpus(cfg: &RunConfig, dir: Option<&Path>) -> Result<Dataset> {
    Ok(match dir {
        Some(d) => load_dataset(d)?,
        None => tps_core::engine::load_corpus(cfg)?,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::Synth { out, cfg } => {
            let cfg = cfg.load()?;
            let d = generate_synthetic(&cfg.synth, cfg.data_seed)?;
            save_dataset(&d, &out)?;
            println!(
                "wrote {} scenes, {} boxes, {} captions to {}",
                d.scenes.len(),
                d.num_boxes(),
                d.captions.len(),
                out.display()
            );
        }
        Command::Stats { corpus: dir, json, cfg } => {
            let cfg = cfg.load()?;
            let report = dataset_stats(&corpus(&cfg, dir.as_deref())?);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Validate { corpus: dir, captions_per_box } => {
            let d = load_dataset(&dir)?;
            let rules = ValidationConfig {
                captions_per_box: (captions_per_box > 0).then_some(captions_per_box),
            };
            let violations = validate_dataset(&d, &rules);
            for v in &violations {
                println!("{v}");
            }
            if !violations.is_empty() {
                eprintln!("{} violation(s)", violations.len());
                return Ok(ExitCode::from(1));
            }
            println!("ok");
        }
        Command::Train { out, cfg } => {
            let cfg = cfg.load()?;
            let splits = prepare_splits(&cfg)?;
            let outcome = run_train(&cfg, &splits, &out)?;
            let first = outcome.log.first().map_or(f64::NAN, |r| r.total);
            let last = outcome.log.last().map_or(f64::NAN, |r| r.total);
            println!(
                "trained {} mode for {} epochs ({} steps): loss {first:.4} -> {last:.4}",
                cfg.mode,
                outcome.state.epoch,
                outcome.log.len()
            );
        }
        Command::Eval { run, split, out } => {
            let (cfg, state) = load_run(&run)?;
            let data = pick(prepare_splits(&cfg)?, split);
            let dir = out.unwrap_or(run);
            let ev = run_eval(&cfg, &state, &data, &dir, exec)?;
            println!("{}", ev.report.summary());
            println!("report: {}", dir.join(REPORT_FILE).display());
        }
        Command::Gradcheck { eps, json, cfg } => {
            let cfg = cfg.load()?;
            let report = grad_check_all(&cfg, eps)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
            if !report.passed() {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(1));
            }
        }
        Command::ExportAttn { run, out, split, limit } => {
            let (cfg, state) = load_run(&run)?;
            let data = pick(prepare_splits(&cfg)?, split);
            let files = export_attention(&state, &data, &out, limit)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Rank { run, query, top, split } => {
            if top == 0 {
                bail!("--top must be positive");
            }
            let (cfg, state) = load_run(&run)?;
            let data = pick(prepare_splits(&cfg)?, split);
            let ranked = rank_text(&cfg, &state, &data, &query, top, exec)
                .with_context(|| format!("ranking {query:?}"))?;
            println!("rank,scene,x,y,w,h,similarity");
            for (i, r) in ranked.iter().enumerate() {
                println!(
                    "{},{},{:.1},{:.1},{:.1},{:.1},{:.6}",
                    i + 1,
                    r.scene,
                    r.x,
                    r.y,
                    r.w,
                    r.h,
                    r.similarity
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
