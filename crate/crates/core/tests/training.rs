use pairlive_core::datamodel::{generate_synthetic, Sample, SynthConfig};
use pairlive_core::pairmine::{filter_pairs, TrainPair};
use pairlive_core::trainer::{train, Checkpoint, OptimConfig, TrainConfig};

fn data(n_identities: usize) -> (Vec<Sample>, Vec<TrainPair>, Vec<Sample>) {
    let synth = SynthConfig {
        n_identities,
        ..SynthConfig::default()
    };
    let (samples, store) = generate_synthetic(&synth).unwrap();
    let (pairs, _) = filter_pairs(&samples, &store, 0.9).unwrap();
    let (validation, _) = generate_synthetic(&SynthConfig {
        id_prefix: "val".into(),
        seed: synth.seed ^ 0x5eed,
        n_identities: n_identities / 2,
        ..synth
    })
    .unwrap();
    (samples, pairs, validation)
}

#[test]
fn one_epoch_beats_chance_on_default_data() {
    let (samples, pairs, validation) = data(40);
    let config = TrainConfig {
        optim: OptimConfig {
            epochs: 1,
            ..OptimConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&samples, &pairs, &validation, &config, serde_json::Value::Null).unwrap();
    assert_eq!(out.history.len(), 1);
    assert!(out.history[0].val_eer < 0.5, "{:?}", out.history[0]);
}

#[test]
fn equal_seeds_give_identical_runs() {
    let (samples, pairs, validation) = data(8);
    let config = TrainConfig {
        optim: OptimConfig {
            epochs: 3,
            batch_size: 8,
            ..OptimConfig::default()
        },
        ..TrainConfig::default()
    };
    let meta = serde_json::json!({"config_hash": "x"});
    let a = train(&samples, &pairs, &validation, &config, meta.clone()).unwrap();
    let b = train(&samples, &pairs, &validation, &config, meta).unwrap();
    let lines = |h: &[pairlive_core::trainer::EpochRecord]| {
        h.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(lines(&a.history), lines(&b.history));
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    assert_eq!(a.last.to_bytes().unwrap(), b.last.to_bytes().unwrap());

    let bytes = a.best.to_bytes().unwrap();
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
}

#[test]
fn pure_focal_configuration_is_flagged() {
    let (samples, pairs, validation) = data(6);
    let mut config = TrainConfig::default();
    config.optim.epochs = 1;
    config.optim.batch_size = 8;
    config.loss.supcon_weight = 0.0;
    config.augment.cutmix_prob = 0.0;
    let out = train(&samples, &pairs, &validation, &config, serde_json::Value::Null).unwrap();
    let r = &out.history[0];
    assert!(!r.supcon_active && !r.cutmix_active);
    assert_eq!(r.mean_supcon, 0.0);
    assert_eq!(r.mean_total, r.mean_focal);
}
