use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pairlive_core::datamodel::{
    generate_synthetic, load_embeddings, load_manifest, write_manifest, EmbeddingStore, Label,
    Sample,
};
use pairlive_core::metrics::{evaluate, roc_polyline, EvalReport, ScoreSet};
use pairlive_core::pairmine::{filter_pairs, FilterReport, TrainPair};
use pairlive_core::trainer::{stack_images, train, Checkpoint, EpochRecord, TrainOutcome};
use pairlive_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::RunConfig;
use crate::plot::roc_svg;
use crate::{CliError, CliResult};

/// Default threshold grid for `sweep`.
pub const DEFAULT_TAU_GRID: [f64; 8] = [0.84, 0.85, 0.86, 0.87, 0.88, 0.89, 0.90, 0.91];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Writes a `{"meta": ...}` line followed by one JSON line per record.
fn write_jsonl<T: Serialize>(path: &Path, meta: &Value, records: &[T]) -> CliResult<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut put = |v: String| writeln!(out, "{v}").map_err(io_err(path));
    put(serde_json::json!({ "meta": meta }).to_string())?;
    for r in records {
        put(serde_json::to_string(r).map_err(Error::from)?)?;
    }
    out.flush().map_err(io_err(path))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Where `train`, `sweep` and `ablate` read their data from. Anything left
/// unset is generated from the run configuration.
#[derive(Clone, Debug, Default)]
pub struct DataPaths {
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub validation: Option<PathBuf>,
}

pub struct Dataset {
    pub train: Vec<Sample>,
    pub embeddings: EmbeddingStore,
    pub validation: Vec<Sample>,
}

pub fn load_dataset(config: &RunConfig, paths: &DataPaths) -> CliResult<Dataset> {
    let (train, embeddings) = match (&paths.manifest, &paths.embeddings) {
        (Some(m), Some(e)) => {
            let samples = load_manifest(m)?;
            let store = load_embeddings(e)?;
            let stale = store.stale_count(&samples);
            if stale > 0 {
                log::warn!("{stale} embeddings have no sample in {}", m.display());
            }
            (samples, store)
        }
        (None, None) => generate_synthetic(&config.train_synth())?,
        _ => {
            return Err(CliError::Usage(
                "--manifest and --embeddings must be given together".into(),
            ))
        }
    };
    let validation = match &paths.validation {
        Some(v) => load_manifest(v)?,
        None => generate_synthetic(&config.validation_synth())?.0,
    };
    Ok(Dataset {
        train,
        embeddings,
        validation,
    })
}

#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub validation: PathBuf,
    pub embeddings_jsonl: PathBuf,
    pub embeddings_bin: PathBuf,
    pub train_samples: usize,
    pub validation_samples: usize,
}

/// Writes `manifest.jsonl`, `validation.jsonl`, `embeddings.jsonl`,
/// `embeddings.bin` and `embeddings.meta.json`.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> CliResult<SynthSummary> {
    config.validate()?;
    create_dir(out)?;
    let meta = config.provenance();
    let (train, store) = generate_synthetic(&config.train_synth())?;
    let (validation, _) = generate_synthetic(&config.validation_synth())?;
    let summary = SynthSummary {
        manifest: out.join("manifest.jsonl"),
        validation: out.join("validation.jsonl"),
        embeddings_jsonl: out.join("embeddings.jsonl"),
        embeddings_bin: out.join("embeddings.bin"),
        train_samples: train.len(),
        validation_samples: validation.len(),
    };
    write_manifest(&summary.manifest, &train, Some(&meta))?;
    write_manifest(&summary.validation, &validation, Some(&meta))?;
    store.write_jsonl(&summary.embeddings_jsonl)?;
    store.write_binary(&summary.embeddings_bin)?;
    let mut sidecar = meta;
    sidecar["dim"] = store.dim().into();
    sidecar["count"] = store.len().into();
    write_json(&out.join("embeddings.meta.json"), &sidecar)?;
    Ok(summary)
}

#[derive(Serialize)]
struct FilterFile<'a> {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    report: &'a FilterReport,
    table: String,
}

/// Writes `pairs.jsonl` and `report.json`.
pub fn cmd_filter(
    config: &RunConfig,
    manifest: &Path,
    embeddings: &Path,
    out: &Path,
) -> CliResult<(Vec<TrainPair>, FilterReport)> {
    config.validate()?;
    create_dir(out)?;
    let samples = load_manifest(manifest)?;
    let store = load_embeddings(embeddings)?;
    let (pairs, report) = filter_pairs(&samples, &store, config.tau_sim)?;
    let mut meta = config.provenance();
    meta["tau_sim"] = config.tau_sim.into();
    write_jsonl(&out.join("pairs.jsonl"), &meta, &pairs)?;
    write_json(
        &out.join("report.json"),
        &FilterFile {
            config_hash: config.hash(),
            seed: config.seed,
            report: &report,
            table: report.table(),
        },
    )?;
    Ok((pairs, report))
}

fn score_split<'a>(checkpoint: &Checkpoint, samples: &'a [Sample]) -> CliResult<(Vec<&'a Sample>, ScoreSet)> {
    let valid: Vec<&Sample> = samples.iter().filter(|s| s.valid).collect();
    let inputs = stack_images(valid.iter().map(|s| &s.image))?;
    let scores = checkpoint.model.scores(&inputs)?;
    let set = ScoreSet::new(scores, valid.iter().map(|s| s.label).collect())?;
    Ok((valid, set))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub validation: EvalReport,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

fn run_training(config: &RunConfig, data: &Dataset) -> CliResult<(TrainOutcome, usize)> {
    let (pairs, report) = filter_pairs(&data.train, &data.embeddings, config.tau_sim)?;
    log::info!(
        "{} of {} attacks kept at tau {}",
        report.total_after,
        report.total_before,
        config.tau_sim
    );
    let outcome = train(
        &data.train,
        &pairs,
        &data.validation,
        &config.train_config(),
        config.provenance(),
    )?;
    Ok((outcome, pairs.len()))
}

/// Filters, trains and writes `checkpoint.plck` (the best epoch) and
/// `history.jsonl`. A diverged run still writes both; check
/// `outcome.aborted`.
pub fn cmd_train(config: &RunConfig, data: &DataPaths, out: &Path) -> CliResult<TrainSummary> {
    config.validate()?;
    create_dir(out)?;
    let dataset = load_dataset(config, data)?;
    let (outcome, _) = run_training(config, &dataset)?;
    let checkpoint = out.join("checkpoint.plck");
    let history = out.join("history.jsonl");
    outcome.best.save(&checkpoint)?;
    write_jsonl(&history, &config.provenance(), &outcome.history)?;
    let (_, scores) = score_split(&outcome.best, &dataset.validation)?;
    let validation = evaluate(&scores, 0.5)?;
    Ok(TrainSummary {
        outcome,
        validation,
        checkpoint,
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub dataset_size: Option<usize>,
    pub acer: Option<f64>,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    pub eer: Option<f64>,
    pub error: Option<String>,
    pub config_hash: String,
}

/// One training run per threshold. A failing cell is recorded with its error
/// and the sweep moves on.
pub fn cmd_sweep(config: &RunConfig, data: &DataPaths, taus: &[f64], out: &Path) -> CliResult<Vec<SweepRow>> {
    config.validate()?;
    create_dir(out)?;
    let dataset = load_dataset(config, data)?;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let cell = RunConfig {
            tau_sim: tau,
            ..config.clone()
        };
        let result = cell.validate().map_err(CliError::from).and_then(|_| {
            let (outcome, size) = run_training(&cell, &dataset)?;
            let (_, scores) = score_split(&outcome.best, &dataset.validation)?;
            Ok((size, evaluate(&scores, 0.5)?))
        });
        let row = match result {
            Ok((size, r)) => SweepRow {
                tau,
                dataset_size: Some(size),
                acer: Some(r.acer),
                acc: Some(r.accuracy),
                auc: Some(r.auc),
                eer: Some(r.eer),
                error: None,
                config_hash: cell.hash(),
            },
            Err(e) => {
                log::warn!("sweep cell tau={tau} failed: {e}");
                SweepRow {
                    tau,
                    dataset_size: None,
                    acer: None,
                    acc: None,
                    auc: None,
                    eer: None,
                    error: Some(e.to_string()),
                    config_hash: cell.hash(),
                }
            }
        };
        rows.push(row);
    }
    let path = out.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(rows)
}

/// What `eval` scores.
#[derive(Clone, Debug)]
pub enum EvalInput {
    /// Run the checkpoint's model over a manifest.
    Model { checkpoint: PathBuf, manifest: PathBuf },
    /// Read `id,label,score` rows.
    Scores(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub label: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub checkpoint_epoch: Option<usize>,
    pub report: EvalReport,
    /// `(FAR, 1 − FRR)` pairs from all-accepted to all-rejected.
    pub roc: Vec<(f64, f64)>,
}

pub fn read_scores(path: &Path) -> CliResult<(Vec<String>, ScoreSet)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in r.deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| {
            CliError::Core(Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })?;
        if !row.score.is_finite() {
            return Err(CliError::Core(Error::Parse {
                line: i + 2,
                message: format!("score {} is not finite", row.score),
            }));
        }
        labels.push(Label::from_str(&row.label)?);
        ids.push(row.id);
        scores.push(row.score);
    }
    for class in [Label::Live, Label::Attack] {
        if !labels.contains(&class) {
            return Err(CliError::Core(Error::Validation(format!(
                "{} has no {class} rows",
                path.display()
            ))));
        }
    }
    Ok((ids, ScoreSet::new(scores, labels)?))
}

fn write_scores(path: &Path, ids: &[String], scores: &ScoreSet) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for ((id, &s), l) in ids.iter().zip(scores.scores()).zip(scores.labels()) {
        w.serialize(ScoreRow {
            id: id.clone(),
            label: l.as_str().to_string(),
            score: s,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Scores a dataset (or reads scores) and writes `report.json`, `scores.csv`,
/// `roc.csv` and `roc.svg`.
///
/// When `expected` is given, a checkpoint trained under a different config
/// hash is refused unless `allow_mismatch` is set.
pub fn cmd_eval(
    input: &EvalInput,
    expected: Option<&RunConfig>,
    allow_mismatch: bool,
    threshold: f64,
    out: &Path,
) -> CliResult<EvalFile> {
    if !threshold.is_finite() {
        return Err(CliError::Usage(format!("threshold must be finite, got {threshold}")));
    }
    create_dir(out)?;
    let (ids, scores, provenance) = match input {
        EvalInput::Model {
            checkpoint,
            manifest,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            if let Some(cfg) = expected {
                let want = cfg.hash();
                match ckpt.config_hash() {
                    Some(h) if h == want => {}
                    found if !allow_mismatch => {
                        return Err(CliError::Core(Error::Config(format!(
                            "checkpoint was trained under config {} but the supplied config hashes to {want}; \
                             pass --allow-config-mismatch to evaluate anyway",
                            found.unwrap_or("<none>")
                        ))))
                    }
                    _ => log::warn!("evaluating a checkpoint trained under a different config"),
                }
            }
            let samples = load_manifest(manifest)?;
            let (valid, set) = score_split(&ckpt, &samples)?;
            let ids = valid.iter().map(|s| s.id.clone()).collect();
            let provenance = (
                ckpt.config_hash().map(str::to_string),
                ckpt.meta.get("seed").and_then(Value::as_u64),
                Some(ckpt.epoch),
            );
            (ids, set, provenance)
        }
        EvalInput::Scores(path) => {
            let (ids, set) = read_scores(path)?;
            (ids, set, (expected.map(RunConfig::hash), expected.map(|c| c.seed), None))
        }
    };
    let report = evaluate(&scores, threshold)?;
    let roc = roc_polyline(&scores)?;
    let file = EvalFile {
        config_hash: provenance.0,
        seed: provenance.1,
        checkpoint_epoch: provenance.2,
        report,
        roc,
    };
    write_json(&out.join("report.json"), &file)?;
    write_scores(&out.join("scores.csv"), &ids, &scores)?;
    let roc_path = out.join("roc.csv");
    let mut w = csv_writer(&roc_path)?;
    w.write_record(["far", "tpr"]).map_err(csv_err(&roc_path))?;
    for (far, tpr) in &file.roc {
        w.serialize((far, tpr)).map_err(csv_err(&roc_path))?;
    }
    w.flush().map_err(io_err(&roc_path))?;
    let svg_path = out.join("roc.svg");
    fs::write(&svg_path, roc_svg(&file.roc, file.report.auc)).map_err(io_err(&svg_path))?;
    Ok(file)
}

/// The three ablation setups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    Full,
    WithoutSupcon,
    WithoutLiveAugs,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::Full, Setup::WithoutSupcon, Setup::WithoutLiveAugs];

    pub fn apply(self, config: &RunConfig) -> RunConfig {
        let mut c = config.clone();
        match self {
            Setup::Full => {}
            Setup::WithoutSupcon => c.loss.supcon_weight = 0.0,
            Setup::WithoutLiveAugs => c.augment.live_augment = false,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub setup: Setup,
    pub seed: u64,
    pub acer: f64,
    pub acc: f64,
    pub auc: f64,
    pub eer: f64,
    pub best_epoch: usize,
    pub max_mean_supcon: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setup: Setup,
    pub seeds: usize,
    pub acer_mean: f64,
    pub acer_ci95: f64,
    pub acc_mean: f64,
    pub acc_ci95: f64,
    pub auc_mean: f64,
    pub auc_ci95: f64,
    pub eer_mean: f64,
    pub max_mean_supcon: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
    /// Whether mean ACER satisfies full ≤ without SupCon ≤ without live augs.
    pub ordering_holds: bool,
}

/// Mean and half-width of a two-sided 95% Student-t interval (NaN for one value).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n).sqrt())
}

/// Runs every setup for seeds `seed, seed + 1, …` and writes `ablation.csv`
/// (one row per setup) and `ablation_runs.csv` (one row per run).
///
/// Without data paths each seed also draws a fresh synthetic dataset.
pub fn cmd_ablate(config: &RunConfig, data: &DataPaths, seeds: usize, out: &Path) -> CliResult<AblationSummary> {
    config.validate()?;
    if seeds == 0 {
        return Err(CliError::Usage("ablation needs at least one seed".into()));
    }
    create_dir(out)?;
    let mut runs = Vec::new();
    for k in 0..seeds as u64 {
        let seeded = RunConfig {
            seed: config.seed.wrapping_add(k),
            ..config.clone()
        };
        let dataset = load_dataset(&seeded, data)?;
        for setup in Setup::ALL {
            let cell = setup.apply(&seeded);
            let (outcome, _) = run_training(&cell, &dataset)?;
            if let Some(reason) = &outcome.aborted {
                return Err(CliError::Aborted(format!("{setup:?}, seed {}: {reason}", cell.seed)));
            }
            let (_, scores) = score_split(&outcome.best, &dataset.validation)?;
            let r = evaluate(&scores, 0.5)?;
            runs.push(AblationRun {
                setup,
                seed: cell.seed,
                acer: r.acer,
                acc: r.accuracy,
                auc: r.auc,
                eer: r.eer,
                best_epoch: outcome.best.epoch,
                max_mean_supcon: max_supcon(&outcome.history),
                config_hash: cell.hash(),
            });
        }
    }
    let rows: Vec<AblationRow> = Setup::ALL
        .iter()
        .map(|&setup| {
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.setup == setup).collect();
            let pick = |f: fn(&AblationRun) -> f64| mean_ci95(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (acer_mean, acer_ci95) = pick(|r| r.acer);
            let (acc_mean, acc_ci95) = pick(|r| r.acc);
            let (auc_mean, auc_ci95) = pick(|r| r.auc);
            AblationRow {
                setup,
                seeds,
                acer_mean,
                acer_ci95,
                acc_mean,
                acc_ci95,
                auc_mean,
                auc_ci95,
                eer_mean: pick(|r| r.eer).0,
                max_mean_supcon: mine.iter().map(|r| r.max_mean_supcon).fold(0.0, f64::max),
                config_hash: setup.apply(config).hash(),
            }
        })
        .collect();
    let ordering_holds = rows[0].acer_mean <= rows[1].acer_mean && rows[1].acer_mean <= rows[2].acer_mean;

    let path = out.join("ablation.csv");
    let mut w = csv_writer(&path)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let path = out.join("ablation_runs.csv");
    let mut w = csv_writer(&path)?;
    for r in &runs {
        w.serialize(r).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(AblationSummary {
        rows,
        runs,
        ordering_holds,
    })
}

fn max_supcon(history: &[EpochRecord]) -> f64 {
    history.iter().map(|r| r.mean_supcon).fold(0.0, f64::max)
}
