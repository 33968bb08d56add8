use std::collections::BTreeSet;

use pairlive_core::datamodel::{
    generate_synthetic, AttackCategory, EmbeddingStore, Label, Sample, SynthConfig,
};
use pairlive_core::diffcore::Tensor;
use pairlive_core::pairmine::{best_live_match, filter_pairs, TrainPair};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(id: String, label: Label) -> Sample {
    Sample {
        id,
        identity: "x".into(),
        label,
        category: match label {
            Label::Live => AttackCategory::Live,
            Label::Attack => AttackCategory::FaceSwap,
        },
        valid: true,
        image: Tensor::zeros(vec![1, 1, 3]),
    }
}

struct Instance {
    samples: Vec<Sample>,
    store: EmbeddingStore,
    lives: Vec<String>,
    attacks: Vec<String>,
}

fn random_instance(rng: &mut ChaCha8Rng, n_attacks: usize, n_lives: usize, dim: usize) -> Instance {
    let mut store = EmbeddingStore::new(dim);
    let mut samples = Vec::new();
    let mut lives = Vec::new();
    let mut attacks = Vec::new();
    for (label, n, ids) in [(Label::Live, n_lives, &mut lives), (Label::Attack, n_attacks, &mut attacks)] {
        for i in 0..n {
            let id = format!("{}{i:04}", if label == Label::Live { "l" } else { "a" });
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            store.insert(id.clone(), v).unwrap();
            samples.push(sample(id.clone(), label));
            ids.push(id);
        }
    }
    Instance {
        samples,
        store,
        lives,
        attacks,
    }
}

fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        dot += x * y;
        sa += x * x;
        sb += y * y;
    }
    (dot / (sa.sqrt() * sb.sqrt())).clamp(-1.0, 1.0)
}

/// Exhaustive scan: highest similarity, ties to the smallest id.
fn oracle_match(inst: &Instance, attack: &str) -> (String, f64) {
    let a = inst.store.get(attack).unwrap();
    let mut best: Option<(String, f64)> = None;
    for l in &inst.lives {
        let s = oracle_cosine(a, inst.store.get(l).unwrap());
        let better = match &best {
            None => true,
            Some((bid, bs)) => s > *bs || (s == *bs && l < bid),
        };
        if better {
            best = Some((l.clone(), s));
        }
    }
    best.unwrap()
}

fn oracle_filter(inst: &Instance, tau: f64) -> Vec<TrainPair> {
    let mut attacks = inst.attacks.clone();
    attacks.sort();
    attacks
        .into_iter()
        .filter_map(|a| {
            let (live_id, similarity) = oracle_match(inst, &a);
            (similarity > tau).then_some(TrainPair {
                attack_id: a,
                live_id,
                similarity,
            })
        })
        .collect()
}

#[test]
fn matches_exhaustive_scan_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let n_attacks = rng.random_range(1..=if case < 5 { 500 } else { 60 });
        let n_lives = rng.random_range(1..=if case < 5 { 200 } else { 40 });
        let dim = rng.random_range(2..24);
        let inst = random_instance(&mut rng, n_attacks, n_lives, dim);
        for a in &inst.attacks {
            let got = best_live_match(a, &inst.store, &inst.lives).unwrap();
            assert_eq!(got, oracle_match(&inst, a));
        }
        let tau = rng.random_range(-0.5..0.9);
        let (pairs, report) = filter_pairs(&inst.samples, &inst.store, tau).unwrap();
        assert_eq!(pairs, oracle_filter(&inst, tau));
        assert_eq!(report.total_after, pairs.len());
    }
}

#[test]
fn duplicate_lives_break_ties_by_id() {
    let mut store = EmbeddingStore::new(3);
    store.insert("a", vec![1.0, 0.0, 0.0]).unwrap();
    store.insert("l2", vec![2.0, 1.0, 0.0]).unwrap();
    store.insert("l1", vec![2.0, 1.0, 0.0]).unwrap();
    let (id, _) = best_live_match("a", &store, &["l2", "l1"]).unwrap();
    assert_eq!(id, "l1");
}

#[test]
fn positive_scaling_preserves_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let inst = random_instance(&mut rng, 50, 20, 8);
        let scale: f32 = rng.random_range(0.01..100.0);
        for (exact, factor) in [(true, 4.0f32), (false, scale)] {
            let mut scaled = EmbeddingStore::new(8);
            for (id, v) in inst.store.iter() {
                scaled.insert(id, v.iter().map(|x| x * factor).collect()).unwrap();
            }
            for a in &inst.attacks {
                let (id0, s0) = best_live_match(a, &inst.store, &inst.lives).unwrap();
                let (id1, s1) = best_live_match(a, &scaled, &inst.lives).unwrap();
                assert_eq!(id0, id1);
                if exact {
                    assert_eq!(s0.to_bits(), s1.to_bits());
                }
            }
        }
    }
}

#[test]
fn tau_grid_is_monotone_and_nested_on_synthetic_data() {
    let (samples, store) = generate_synthetic(&SynthConfig::default()).unwrap();
    let mut previous: Option<BTreeSet<String>> = None;
    for step in 0..=7 {
        let tau = 0.84 + 0.01 * step as f64;
        let (pairs, _) = filter_pairs(&samples, &store, tau).unwrap();
        let kept: BTreeSet<String> = pairs.into_iter().map(|p| p.attack_id).collect();
        if let Some(prev) = &previous {
            assert!(kept.is_subset(prev), "tau {tau} not nested");
        }
        previous = Some(kept);
    }
}

#[test]
fn invalid_samples_are_ignored() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut inst = random_instance(&mut rng, 10, 5, 4);
    let (all, _) = filter_pairs(&inst.samples, &inst.store, -1.0).unwrap();
    assert_eq!(all.len(), 10);
    inst.samples[0].valid = false; // first live
    inst.samples[5].valid = false; // first attack
    let (pairs, report) = filter_pairs(&inst.samples, &inst.store, -1.0).unwrap();
    assert_eq!(pairs.len(), 9);
    assert_eq!(report.lives_before, 4);
    assert!(pairs.iter().all(|p| p.live_id != "l0000" && p.attack_id != "a0000"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_tau_only_removes_pairs(seed in any::<u64>(), t1 in -1.0f64..1.0, t2 in -1.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 30, 10, 3);
        let (p_lo, _) = filter_pairs(&inst.samples, &inst.store, lo).unwrap();
        let (p_hi, _) = filter_pairs(&inst.samples, &inst.store, hi).unwrap();
        prop_assert!(p_hi.len() <= p_lo.len());
        for p in &p_hi {
            prop_assert!(p_lo.contains(p));
        }
    }
}
