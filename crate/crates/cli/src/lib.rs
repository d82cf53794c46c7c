//! Command-line driver: corpus preparation, statistics, synthetic data,
//! training, evaluation and ablations.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use grape_core::dataset::{synth_generate, user_green_profile, write_corpus_files, Corpus, IndicatorTable};
use grape_core::model::{read_checkpoint, write_checkpoint, Architecture};
use grape_core::traineval::{
    ablate, emit_report, evaluate, run_config, write_training_log, AblationKind, ReportRow, Split,
};
use grape_core::{GrapeError, Result, RunConfig};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "grape", version, about = "Sustainability-aware sequential food recommender")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key override such as `loss.alpha=0.8`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Filter the corpus and write it with a leave-one-out split manifest.
    Prepare(Common),
    /// Per-user mean and variance of each indicator, sorted by mean.
    Stats(Common),
    /// Generate a synthetic corpus from the `synth` section.
    Synth(Common),
    /// Train, then write the checkpoint, training log and test report.
    Train(Common),
    /// Re-evaluate a checkpoint on the test targets.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every point of an ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// alpha_sweep, p_variants, priority_orders or beta_grid.
        #[arg(long)]
        kind: String,
    },
}

/// Parses `argv` (including the program name), runs the verb and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(cli.verb) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let base = match &c.config {
        Some(p) => {
            if !p.is_file() {
                return Err(GrapeError::Config(format!("config file {} does not exist", p.display())));
            }
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GrapeError::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| GrapeError::io(path, e))
}

fn dispatch(verb: Verb) -> Result<()> {
    match verb {
        Verb::Prepare(c) => prepare(&c),
        Verb::Stats(c) => stats(&c),
        Verb::Synth(c) => synth(&c),
        Verb::Train(c) => train(&c),
        Verb::Evaluate { common, checkpoint } => {
            let ckpt = checkpoint.unwrap_or_else(|| common.out.join("checkpoint.bin"));
            evaluate_checkpoint(&common, &ckpt)
        }
        Verb::Ablate { common, kind } => {
            let kind: AblationKind = kind.parse()?;
            let cfg = resolve_config(&common)?;
            let corpus = cfg.corpus()?;
            let rows = ablate(kind, &cfg, &corpus)?;
            emit_report(&common.out, &rows)?;
            println!("{} runs written to {}", rows.len(), common.out.join("report.csv").display());
            Ok(())
        }
    }
}

fn prepare(c: &Common) -> Result<()> {
    let cfg = resolve_config(c)?;
    let (log, table) = cfg.load_log()?;
    let corpus = Corpus::from_log(&log, &table)?;
    create_dir(&c.out)?;

    let kept = IndicatorTable {
        specs: table.specs.clone(),
        rows: corpus.catalog.external_ids[1..]
            .iter()
            .map(|id| (*id, table.rows[id].clone()))
            .collect(),
    };
    write_corpus_files(&c.out, &log.interactions, &kept)?;

    let path = c.out.join("split.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| GrapeError::io(&path, e.into()))?;
    w.write_record(["user", "position", "item", "split"])?;
    for s in &corpus.sequences {
        let len = s.len();
        for (k, &item) in s.items.iter().enumerate() {
            let split = match len - k {
                1 => "test",
                2 => "valid",
                _ => "train",
            };
            w.write_record([
                s.external_id.to_string(),
                k.to_string(),
                corpus.catalog.external_ids[item].to_string(),
                split.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| GrapeError::io(&path, e))?;

    let summary = json!({
        "users": log.users,
        "items": log.items,
        "interactions": log.interactions.len(),
        "sequence_users": corpus.users(),
        "excluded_users": corpus.excluded_users,
        "indicators": corpus.specs,
    });
    write_json(&c.out.join("summary.json"), &summary)?;
    println!(
        "users {} items {} interactions {} (excluded short users {})",
        log.users,
        log.items,
        log.interactions.len(),
        corpus.excluded_users
    );
    Ok(())
}

/// `profile.csv`: one row per rank, and for every indicator the user at
/// that rank with their mean and variance. Each indicator's columns are
/// sorted by ascending mean on their own.
fn stats(c: &Common) -> Result<()> {
    let cfg = resolve_config(c)?;
    let corpus = cfg.corpus()?;
    let profile = user_green_profile(&corpus.sequences, &corpus.specs);
    create_dir(&c.out)?;
    let path = c.out.join("profile.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| GrapeError::io(&path, e.into()))?;
    let mut header = vec!["rank".to_string()];
    for n in &profile.names {
        header.extend([format!("{n}_user"), format!("{n}_mean"), format!("{n}_variance")]);
    }
    w.write_record(&header)?;
    for rank in 0..corpus.users() {
        let mut rec = vec![rank.to_string()];
        for col in &profile.columns {
            let r = col[rank];
            rec.extend([r.user.to_string(), r.mean.to_string(), r.variance.to_string()]);
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| GrapeError::io(&path, e))?;
    println!("{} users x {} indicators written to {}", corpus.users(), profile.names.len(), path.display());
    Ok(())
}

fn synth(c: &Common) -> Result<()> {
    let cfg = resolve_config(c)?;
    let s = synth_generate(&cfg.synth, cfg.seed)?;
    s.write(&c.out)?;
    println!("{} interactions over {} items written to {}", s.interactions.len(), s.table.rows.len(), c.out.display());
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let cfg = resolve_config(c)?;
    let corpus = cfg.corpus()?;
    let (outcome, report) = run_config(&cfg, &corpus)?;
    create_dir(&c.out)?;
    write_json(&c.out.join("config.json"), &cfg)?;
    write_checkpoint(&c.out.join("checkpoint.bin"), &outcome.checkpoint)?;
    write_training_log(&c.out.join("training_log.csv"), &outcome.log)?;
    emit_report(
        &c.out,
        &[ReportRow {
            labels: Default::default(),
            report,
        }],
    )?;
    println!(
        "kept epoch {} of {}; outputs in {}",
        outcome.checkpoint.meta.epoch,
        outcome.log.len(),
        c.out.display()
    );
    Ok(())
}

fn evaluate_checkpoint(c: &Common, path: &Path) -> Result<()> {
    let cfg = resolve_config(c)?;
    let corpus = cfg.corpus()?;
    let ckpt = read_checkpoint(path)?;
    let arch = &ckpt.params.arch;
    let expected = Architecture::for_corpus(&arch.config, &corpus, cfg.p_variant)?;
    if (arch.users, arch.items, arch.indicators) != (expected.users, expected.items, expected.indicators) {
        return Err(GrapeError::Config(format!(
            "checkpoint was trained on {} users, {} items, {} indicators but the corpus has {}, {}, {}",
            arch.users, arch.items, arch.indicators, expected.users, expected.items, expected.indicators
        )));
    }
    if ckpt.meta.config_hash != cfg.hash() {
        log::warn!("checkpoint config hash differs from the supplied configuration");
    }
    let report = evaluate(&ckpt.params, &corpus, Split::Test, &cfg.train.eval_cutoffs, ckpt.meta.clone())?;
    emit_report(
        &c.out,
        &[ReportRow {
            labels: Default::default(),
            report,
        }],
    )?;
    println!("report written to {}", c.out.join("report.csv").display());
    Ok(())
}
