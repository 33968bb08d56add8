use std::fs;
use std::path::Path;

use pairlive_cli::commands::{read_scores, Setup};
use pairlive_cli::{
    cmd_ablate, cmd_eval, cmd_filter, cmd_sweep, cmd_synth, cmd_train, CliError, DataPaths,
    EvalInput, RunConfig,
};
use pairlive_core::datamodel::{load_embeddings, load_manifest, AttackCategory, Label};
use pairlive_core::metrics::acer_at;
use pairlive_core::trainer::Checkpoint;
use tempfile::tempdir;

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.synth.n_identities = 6;
    c.validation_identities = 4;
    c.optim.epochs = 2;
    c.optim.batch_size = 8;
    c
}

fn synth_into(config: &RunConfig, dir: &Path) -> DataPaths {
    cmd_synth(config, dir).unwrap();
    DataPaths {
        manifest: Some(dir.join("manifest.jsonl")),
        embeddings: Some(dir.join("embeddings.bin")),
        validation: Some(dir.join("validation.jsonl")),
    }
}

#[test]
fn synth_writes_consistent_files() {
    let dir = tempdir().unwrap();
    let c = small_config();
    let s = cmd_synth(&c, dir.path()).unwrap();
    let per_identity: usize =
        c.synth.lives_per_identity + c.synth.attacks_per_identity_per_category.values().sum::<usize>();
    assert_eq!(s.train_samples, per_identity * c.synth.n_identities);
    assert_eq!(s.validation_samples, per_identity * c.validation_identities);

    let samples = load_manifest(&s.manifest).unwrap();
    assert_eq!(samples.len(), s.train_samples);
    let jsonl = load_embeddings(&s.embeddings_jsonl).unwrap();
    let bin = load_embeddings(&s.embeddings_bin).unwrap();
    assert_eq!(jsonl, bin);
    assert_eq!(bin.len(), samples.len());

    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("embeddings.meta.json")).unwrap()).unwrap();
    assert_eq!(sidecar["config_hash"], c.hash());
    assert_eq!(sidecar["seed"], c.seed);
}

#[test]
fn synth_is_repeatable() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let c = small_config();
    cmd_synth(&c, a.path()).unwrap();
    cmd_synth(&c, b.path()).unwrap();
    for name in ["manifest.jsonl", "validation.jsonl", "embeddings.jsonl", "embeddings.bin", "embeddings.meta.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn orphaned_attacks_are_filtered_out() {
    let dir = tempdir().unwrap();
    let mut c = small_config();
    c.synth.n_identities = 12;
    c.synth.orphan_attack_fraction = 1.0;
    let data = synth_into(&c, &dir.path().join("data"));
    let samples = load_manifest(data.manifest.as_ref().unwrap()).unwrap();
    let orphans = samples.iter().filter(|s| s.identity.contains("orphan")).count();
    assert!(orphans > 0);
    let (pairs, _) = cmd_filter(
        &c,
        data.manifest.as_ref().unwrap(),
        data.embeddings.as_ref().unwrap(),
        &dir.path().join("filter"),
    )
    .unwrap();
    let kept_orphans = pairs.iter().filter(|p| p.attack_id.contains("orphan")).count();
    assert!(kept_orphans as f64 <= 0.01 * orphans as f64, "{kept_orphans} of {orphans} kept");
}

#[test]
fn filter_extremes() {
    let dir = tempdir().unwrap();
    let mut c = small_config();
    let data = synth_into(&c, &dir.path().join("data"));
    let (m, e) = (data.manifest.unwrap(), data.embeddings.unwrap());
    let samples = load_manifest(&m).unwrap();
    let attacks = samples.iter().filter(|s| s.valid && s.label == Label::Attack).count();

    c.tau_sim = -1.0;
    let (all, report) = cmd_filter(&c, &m, &e, &dir.path().join("low")).unwrap();
    assert_eq!(all.len(), attacks);
    assert_eq!(report.total_after, attacks);

    c.tau_sim = 1.0;
    let (none, report) = cmd_filter(&c, &m, &e, &dir.path().join("high")).unwrap();
    assert!(none.is_empty());
    assert_eq!(report.total_before, attacks);
    assert!(report.before.get(&AttackCategory::FaceSwap).copied().unwrap_or(0) > 0);

    let written = fs::read_to_string(dir.path().join("high/pairs.jsonl")).unwrap();
    assert_eq!(written.lines().count(), 1, "only the meta header");
    assert!(written.contains(&c.hash()));
}

#[test]
fn sweep_rows_follow_the_grid() {
    let dir = tempdir().unwrap();
    let mut c = small_config();
    c.optim.epochs = 1;
    let rows = cmd_sweep(&c, &DataPaths::default(), &[0.9], dir.path()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].error.is_none());

    let grid = [0.84, 0.86, 0.88, 0.9];
    let rows = cmd_sweep(&c, &DataPaths::default(), &grid, dir.path()).unwrap();
    let sizes: Vec<usize> = rows.iter().map(|r| r.dataset_size.unwrap()).collect();
    assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), grid.len() + 1);
}

#[test]
fn sweep_records_a_failed_cell_and_continues() {
    let dir = tempdir().unwrap();
    let mut c = small_config();
    c.optim.epochs = 1;
    let rows = cmd_sweep(&c, &DataPaths::default(), &[1.0, 0.9], dir.path()).unwrap();
    assert!(rows[0].error.is_some());
    assert!(rows[0].acer.is_none());
    assert!(rows[1].error.is_none());
}

#[test]
fn zero_supcon_weight_shows_in_history() {
    let dir = tempdir().unwrap();
    let mut c = small_config();
    c.loss.supcon_weight = 0.0;
    let s = cmd_train(&c, &DataPaths::default(), dir.path()).unwrap();
    assert!(s.outcome.history.iter().all(|r| r.mean_supcon == 0.0 && !r.supcon_active));
    let text = fs::read_to_string(&s.history).unwrap();
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["meta"]["config_hash"], c.hash());
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["mean_supcon"], 0.0);
    }
}

#[test]
fn retraining_with_the_same_seed_is_identical() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let c = small_config();
    cmd_train(&c, &DataPaths::default(), a.path()).unwrap();
    cmd_train(&c, &DataPaths::default(), b.path()).unwrap();
    for name in ["history.jsonl", "checkpoint.plck"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn training_reads_files_from_disk() {
    let dir = tempdir().unwrap();
    let c = small_config();
    let data = synth_into(&c, &dir.path().join("data"));
    let from_disk = cmd_train(&c, &data, &dir.path().join("disk")).unwrap();
    let generated = cmd_train(&c, &DataPaths::default(), &dir.path().join("gen")).unwrap();
    assert_eq!(
        fs::read(&from_disk.history).unwrap(),
        fs::read(&generated.history).unwrap()
    );
}

fn write_scores(path: &Path, rows: &[(&str, &str, f64)]) {
    let mut text = String::from("id,label,score\n");
    for (id, label, score) in rows {
        text.push_str(&format!("{id},{label},{score}\n"));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn perfect_scores_give_zero_acer_and_unit_auc() {
    let dir = tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_scores(
        &scores,
        &[("a", "attack", 0.1), ("b", "attack", 0.2), ("c", "live", 0.8), ("d", "live", 0.95)],
    );
    let f = cmd_eval(&EvalInput::Scores(scores), None, false, 0.5, &dir.path().join("out")).unwrap();
    assert_eq!(f.report.acer, 0.0);
    assert_eq!(f.report.auc, 1.0);
    for name in ["report.json", "scores.csv", "roc.csv", "roc.svg"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn eval_is_repeatable_and_self_consistent() {
    let dir = tempdir().unwrap();
    let c = small_config();
    let data = synth_into(&c, &dir.path().join("data"));
    let t = cmd_train(&c, &data, &dir.path().join("train")).unwrap();
    let input = EvalInput::Model {
        checkpoint: t.checkpoint.clone(),
        manifest: data.validation.clone().unwrap(),
    };
    let first = cmd_eval(&input, Some(&c), false, 0.5, &dir.path().join("e1")).unwrap();
    let second = cmd_eval(&input, Some(&c), false, 0.5, &dir.path().join("e2")).unwrap();
    assert_eq!(
        fs::read(dir.path().join("e1/report.json")).unwrap(),
        fs::read(dir.path().join("e2/report.json")).unwrap()
    );
    assert_eq!(first, second);
    assert_eq!(first.config_hash.as_deref(), Some(c.hash().as_str()));
    assert_eq!(first.report.acer, t.validation.acer);

    let (_, dumped) = read_scores(&dir.path().join("e1/scores.csv")).unwrap();
    let (_, _, acer) = acer_at(&dumped, 0.5).unwrap();
    assert_eq!(acer, first.report.acer);
}

#[test]
fn eval_refuses_a_checkpoint_from_another_config() {
    let dir = tempdir().unwrap();
    let c = small_config();
    let data = synth_into(&c, &dir.path().join("data"));
    let t = cmd_train(&c, &data, &dir.path().join("train")).unwrap();
    let input = EvalInput::Model {
        checkpoint: t.checkpoint,
        manifest: data.validation.unwrap(),
    };
    let mut other = c.clone();
    other.loss.supcon_weight = 0.5;
    let err = cmd_eval(&input, Some(&other), false, 0.5, &dir.path().join("e")).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    cmd_eval(&input, Some(&other), true, 0.5, &dir.path().join("e")).unwrap();
}

#[test]
fn ablation_with_one_seed_has_three_rows() {
    let dir = tempdir().unwrap();
    let mut c = small_config();
    c.optim.epochs = 1;
    let s = cmd_ablate(&c, &DataPaths::default(), 1, dir.path()).unwrap();
    assert_eq!(s.rows.len(), 3);
    assert_eq!(s.runs.len(), 3);
    let no_supcon = s.rows.iter().find(|r| r.setup == Setup::WithoutSupcon).unwrap();
    assert_eq!(no_supcon.max_mean_supcon, 0.0);
    assert!(s.rows[0].acer_ci95.is_nan());
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempdir().unwrap();
    let mut bad = small_config();
    bad.tau_sim = 2.0;
    let err = cmd_synth(&bad, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let manifest = dir.path().join("broken.jsonl");
    fs::write(&manifest, "{not json\n").unwrap();
    let paths = DataPaths {
        manifest: Some(manifest.clone()),
        embeddings: Some(manifest),
        validation: None,
    };
    let err = cmd_train(&small_config(), &paths, &dir.path().join("t")).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");

    let missing = EvalInput::Scores(dir.path().join("nope.csv"));
    let err = cmd_eval(&missing, None, false, 0.5, &dir.path().join("e")).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");

    assert_eq!(CliError::Aborted("x".into()).exit_code(), 4);
}

#[test]
fn checkpoint_records_the_config_hash() {
    let dir = tempdir().unwrap();
    let c = small_config();
    let t = cmd_train(&c, &DataPaths::default(), dir.path()).unwrap();
    let ckpt = Checkpoint::load(&t.checkpoint).unwrap();
    assert_eq!(ckpt.config_hash(), Some(c.hash().as_str()));
    assert_eq!(ckpt.epoch, t.outcome.best.epoch);
}
