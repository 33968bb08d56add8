use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use pairlive_cli::gradcheck;
use pairlive_cli::{
    cmd_ablate, cmd_eval, cmd_filter, cmd_sweep, cmd_synth, cmd_train, CliError, CliResult,
    DataPaths, EvalInput, RunConfig, DEFAULT_TAU_GRID,
};
use serde_json::Value;

/// Paired live/attack training toolkit for face-attack detection.
#[derive(Parser)]
#[command(name = "pairlive", version)]
struct Cli {
    /// Log filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded synthetic dataset with its embeddings.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out/data")]
        out: PathBuf,
    },
    /// Match every attack to its closest live and keep pairs above tau.
    Filter {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "out/filter")]
        out: PathBuf,
    },
    /// Train once per similarity threshold and tabulate validation metrics.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated thresholds [default: 0.84,0.85,...,0.91]
        #[arg(long, value_delimiter = ',')]
        taus: Vec<f64>,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Filter, train and keep the checkpoint with the lowest validation EER.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
    },
    /// Score a manifest with a checkpoint, or read a scores CSV, and report metrics.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, requires = "manifest", conflicts_with = "scores")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// CSV with id,label,score columns.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Scores at or above this value count as live.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Evaluate even if the checkpoint was trained under another config.
        #[arg(long)]
        allow_config_mismatch: bool,
        #[arg(long, default_value = "out/eval")]
        out: PathBuf,
    },
    /// Compare the full setup against training without SupCon and without live augmentation.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value = "out/ablate")]
        out: PathBuf,
    },
    /// Check every analytic gradient against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the resolved configuration and its hash.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Configuration sources, applied in order: defaults, `--config`, named flags, `--set`.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON configuration document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed [default: 20250701]
    #[arg(long)]
    seed: Option<u64>,
    /// Cosine similarity threshold for pairs [default: 0.9]
    #[arg(long)]
    tau_sim: Option<f64>,
    /// Training epochs [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size, even and >= 4 [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Weight of the contrastive term [default: 0.3]
    #[arg(long)]
    supcon_weight: Option<f64>,
    /// CutMix probability per sample [default: 0.3]
    #[arg(long)]
    cutmix_prob: Option<f64>,
    /// Disable photometric augmentation of live samples.
    #[arg(long)]
    no_live_augment: bool,
    /// Identities in the synthetic training split [default: 40]
    #[arg(long)]
    identities: Option<usize>,
    /// Any config key as group.key=value (see the key list below).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn supplied(&self) -> bool {
        self.config.is_some()
            || self.seed.is_some()
            || self.tau_sim.is_some()
            || self.epochs.is_some()
            || self.batch_size.is_some()
            || self.supcon_weight.is_some()
            || self.cutmix_prob.is_some()
            || self.no_live_augment
            || self.identities.is_some()
            || !self.set.is_empty()
    }

    fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.tau_sim {
            c.tau_sim = v;
        }
        if let Some(v) = self.epochs {
            c.optim.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.optim.batch_size = v;
        }
        if let Some(v) = self.supcon_weight {
            c.loss.supcon_weight = v;
        }
        if let Some(v) = self.cutmix_prob {
            c.augment.cutmix_prob = v;
        }
        if self.no_live_augment {
            c.augment.live_augment = false;
        }
        if let Some(v) = self.identities {
            c.synth.n_identities = v;
        }
        for s in &self.set {
            c.apply_override(s)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct DataArgs {
    /// Training manifest; generated from the config when omitted.
    #[arg(long, requires = "embeddings")]
    manifest: Option<PathBuf>,
    /// Embeddings matching the manifest (JSONL or binary).
    #[arg(long, requires = "manifest")]
    embeddings: Option<PathBuf>,
    /// Validation manifest; generated from the config when omitted.
    #[arg(long)]
    validation: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> DataPaths {
        DataPaths {
            manifest: self.manifest.clone(),
            embeddings: self.embeddings.clone(),
            validation: self.validation.clone(),
        }
    }
}

/// Every config key with its default, one `group.key = value` per line.
fn key_listing() -> String {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(map) if !prefix.contains("attacks_per") => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            other => out.push(format!("  {prefix} = {other}")),
        }
    }
    let doc = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut lines = Vec::new();
    walk("", &doc, &mut lines);
    format!(
        "Configuration keys and defaults (nested seeds follow the top-level seed):\n{}",
        lines.join("\n")
    )
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let c = config.resolve()?;
            let s = cmd_synth(&c, &out)?;
            println!(
                "wrote {} training and {} validation samples to {}",
                s.train_samples,
                s.validation_samples,
                out.display()
            );
        }
        Command::Filter {
            config,
            manifest,
            embeddings,
            out,
        } => {
            let c = config.resolve()?;
            let (pairs, report) = cmd_filter(&c, &manifest, &embeddings, &out)?;
            println!("{}", report.table().trim_end());
            println!("{} pairs written to {}", pairs.len(), out.join("pairs.jsonl").display());
        }
        Command::Sweep {
            config,
            data,
            taus,
            out,
        } => {
            let c = config.resolve()?;
            let grid = if taus.is_empty() { DEFAULT_TAU_GRID.to_vec() } else { taus };
            let rows = cmd_sweep(&c, &data.paths(), &grid, &out)?;
            println!("tau    pairs  ACER     Acc      AUC      EER");
            for r in &rows {
                match (&r.error, r.dataset_size, r.acer, r.acc, r.auc, r.eer) {
                    (None, Some(n), Some(acer), Some(acc), Some(auc), Some(eer)) => println!(
                        "{:.2}  {n:>6}  {acer:.4}  {acc:.4}  {auc:.4}  {eer:.4}",
                        r.tau
                    ),
                    _ => println!("{:.2}  failed: {}", r.tau, r.error.as_deref().unwrap_or("?")),
                }
            }
        }
        Command::Train { config, data, out } => {
            let c = config.resolve()?;
            let s = cmd_train(&c, &data.paths(), &out)?;
            let v = &s.validation;
            println!(
                "best epoch {} of {}: validation EER {:.4}, ACER {:.4}, AUC {:.4}",
                s.outcome.best.epoch,
                s.outcome.history.len(),
                v.eer,
                v.acer,
                v.auc
            );
            println!("checkpoint: {}", s.checkpoint.display());
            if let Some(reason) = s.outcome.aborted {
                return Err(CliError::Aborted(reason));
            }
        }
        Command::Eval {
            config,
            checkpoint,
            manifest,
            scores,
            threshold,
            allow_config_mismatch,
            out,
        } => {
            let input = match (checkpoint, manifest, scores) {
                (Some(checkpoint), Some(manifest), None) => EvalInput::Model {
                    checkpoint,
                    manifest,
                },
                (None, None, Some(path)) => EvalInput::Scores(path),
                _ => {
                    return Err(CliError::Usage(
                        "give either --checkpoint with --manifest, or --scores".into(),
                    ))
                }
            };
            let expected = if config.supplied() { Some(config.resolve()?) } else { None };
            let f = cmd_eval(&input, expected.as_ref(), allow_config_mismatch, threshold, &out)?;
            let r = &f.report;
            println!(
                "APCER {:.4}  BPCER {:.4}  ACER {:.4}  EER {:.4}  Acc {:.4}  AUC {:.4}",
                r.apcer, r.bpcer, r.acer, r.eer, r.accuracy, r.auc
            );
        }
        Command::Ablate {
            config,
            data,
            seeds,
            out,
        } => {
            let c = config.resolve()?;
            let s = cmd_ablate(&c, &data.paths(), seeds, &out)?;
            println!("setup               ACER (95% CI)        Acc      AUC");
            for r in &s.rows {
                println!(
                    "{:<18}  {:.4} ± {:.4}   {:.4}   {:.4}",
                    format!("{:?}", r.setup),
                    r.acer_mean,
                    r.acer_ci95,
                    r.acc_mean,
                    r.auc_mean
                );
            }
            if !s.ordering_holds {
                println!("note: mean ACER is not ordered full <= w/o SupCon <= w/o live augs on this data");
            }
        }
        Command::Gradcheck { cases, seed } => {
            let results = gradcheck::run_all(cases, seed)?;
            let mut failed = false;
            for r in &results {
                println!(
                    "{:<20} {:>4}/{} passed  worst rel. error {:.2e}  (tol {:.0e})",
                    r.name,
                    r.cases - r.failures,
                    r.cases,
                    r.worst_rel_error,
                    r.tolerance
                );
                failed |= !r.passed();
            }
            if failed {
                return Err(CliError::Core(pairlive_core::Error::Evaluation(
                    "gradient check failed".into(),
                )));
            }
        }
        Command::Config { config } => {
            let c = config.resolve()?;
            println!("{}", serde_json::to_string_pretty(&c.resolved()).expect("config serializes"));
            println!("config_hash: {}", c.hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let keys = key_listing();
    let command = Cli::command()
        .after_long_help(keys.clone())
        .mut_subcommands(|sub| sub.after_long_help(keys.clone()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
