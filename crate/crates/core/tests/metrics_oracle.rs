use pairlive_core::datamodel::Label;
use pairlive_core::metrics::{acer_at, auc, confusion_at, eer, ScoreSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut ChaCha8Rng, quantize: bool) -> ScoreSet {
    let n_live = rng.random_range(1..60);
    let n_attack = rng.random_range(1..60);
    let shift: f64 = rng.random_range(0.0..2.0);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (label, n, mu) in [(Label::Live, n_live, shift), (Label::Attack, n_attack, 0.0)] {
        for _ in 0..n {
            let mut s = mu + rng.random_range(-1.0..1.0);
            if quantize {
                s = (s * 4.0).round() / 4.0;
            }
            scores.push(s);
            labels.push(label);
        }
    }
    ScoreSet::new(scores, labels).unwrap()
}

fn rates(set: &ScoreSet, t: f64) -> (f64, f64) {
    let (mut fa, mut fr, mut na, mut nl) = (0, 0, 0, 0);
    for (&s, &l) in set.scores().iter().zip(set.labels()) {
        match l {
            Label::Attack => {
                na += 1;
                fa += usize::from(s >= t);
            }
            Label::Live => {
                nl += 1;
                fr += usize::from(s < t);
            }
        }
    }
    (fa as f64 / na as f64, fr as f64 / nl as f64)
}

/// Sweeps every score, every midpoint and both extremes; returns the mean of
/// the two rates where they are closest.
fn brute_force_eer(set: &ScoreSet) -> f64 {
    let mut s = set.scores().to_vec();
    s.sort_by(f64::total_cmp);
    let mut candidates = s.clone();
    candidates.extend(s.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(s[0] - 1.0);
    candidates.push(s[s.len() - 1] + 1.0);
    let mut best = (f64::INFINITY, 0.0);
    for t in candidates {
        let (far, frr) = rates(set, t);
        if (far - frr).abs() < best.0 {
            best = ((far - frr).abs(), (far + frr) / 2.0);
        }
    }
    best.1
}

fn pairwise_auc(set: &ScoreSet) -> f64 {
    let (mut wins, mut n) = (0.0, 0.0);
    for (&a, &la) in set.scores().iter().zip(set.labels()) {
        for (&b, &lb) in set.scores().iter().zip(set.labels()) {
            if la == Label::Live && lb == Label::Attack {
                n += 1.0;
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / n
}

#[test]
fn eer_and_auc_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..200 {
        let set = random_set(&mut rng, case % 2 == 1);
        let min_class = set.count(Label::Live).min(set.count(Label::Attack)) as f64;
        // Tied scores move both rates by more than one sample at once, so the
        // half-step bound only applies to tie-free sets.
        if case % 2 == 0 {
            let (value, _) = eer(&set).unwrap();
            let oracle = brute_force_eer(&set);
            assert!(
                (value - oracle).abs() <= 1.0 / (2.0 * min_class) + 1e-12,
                "case {case}: {value} vs {oracle}"
            );
        }
        assert_eq!(auc(&set).unwrap(), pairwise_auc(&set), "case {case}");
        for &t in set.scores() {
            let (apcer, bpcer, acer) = acer_at(&set, t).unwrap();
            assert_eq!(acer, (apcer + bpcer) / 2.0);
            assert_eq!((apcer, bpcer), rates(&set, t));
        }
    }
}

proptest! {
    #[test]
    fn confusion_counts_partition_the_set(seed in any::<u64>(), t in -2.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, false);
        let c = confusion_at(&set, t);
        prop_assert_eq!(c.tp + c.fn_, set.count(Label::Live));
        prop_assert_eq!(c.fp + c.tn, set.count(Label::Attack));
    }

    #[test]
    fn auc_flips_under_negated_scores(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, true);
        let neg = ScoreSet::new(set.scores().iter().map(|s| -s).collect(), set.labels().to_vec()).unwrap();
        let sum = auc(&set).unwrap() + auc(&neg).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}
