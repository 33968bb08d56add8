use pairlive_core::datamodel::Label;
use pairlive_core::diffcore::{check_gradient, Tensor};
use pairlive_core::losses::{focal_loss, focal_loss_single, sigmoid, supcon_loss, LossConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| x / norm));
    }
    Tensor::matrix(n, d, data).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..3)).collect()
}

/// Direct double loop over the sum-inside-log formula, without any shift.
fn supcon_oracle(z: &Tensor, labels: &[u8], t: f64) -> f64 {
    let n = z.rows();
    let dot = |i: usize, j: usize| z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum::<f64>();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut positives = 0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let e = (dot(i, j) / t).exp();
            den += e;
            if labels[j] == labels[i] {
                num += e;
                positives += 1;
            }
        }
        if positives > 0 {
            total += -(num / den).ln();
            anchors += 1;
        }
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

#[test]
fn supcon_matches_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..500 {
        let t = [0.07, 0.14, 0.5][case % 3];
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let z = unit_rows(&mut rng, n, d);
        let labels = random_labels(&mut rng, n);
        let got = supcon_loss(&z, &labels, t).unwrap().loss;
        let want = supcon_oracle(&z, &labels, t);
        let rel = (got - want).abs() / want.abs().max(1e-300);
        assert!(got == want || rel <= 1e-10, "case {case}: {got} vs {want}");
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    // Gram-Schmidt on a Gaussian matrix.
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

#[test]
fn supcon_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.random_range(2..=10);
        let d = rng.random_range(2..=12);
        let z = unit_rows(&mut rng, n, d);
        let labels = random_labels(&mut rng, n);
        let base = supcon_loss(&z, &labels, 0.14).unwrap().loss;
        assert!(base >= 0.0);

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pz: Vec<f64> = perm.iter().flat_map(|&i| z.row(i).to_vec()).collect();
        let pl: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let permuted = supcon_loss(&Tensor::matrix(n, d, pz).unwrap(), &pl, 0.14).unwrap().loss;
        assert!((permuted - base).abs() <= 1e-9);

        let q = random_rotation(&mut rng, d);
        let mut rz = Vec::with_capacity(n * d);
        for r in 0..n {
            for qi in &q {
                rz.push(qi.iter().zip(z.row(r)).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let rotated = supcon_loss(&Tensor::matrix(n, d, rz).unwrap(), &labels, 0.14).unwrap().loss;
        assert!((rotated - base).abs() <= 1e-9, "{rotated} vs {base}");
    }
}

#[test]
fn identical_same_class_projections_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let one = unit_rows(&mut rng, 1, 7);
    let z = Tensor::matrix(4, 7, one.data().repeat(4)).unwrap();
    let out = supcon_loss(&z, &[Label::Live; 4], 0.14).unwrap();
    assert_eq!(out.loss, 0.0);
}

#[test]
fn focal_with_zero_gamma_is_half_cross_entropy() {
    let cfg = LossConfig {
        focal_gamma: 0.0,
        focal_alpha: 0.5,
        ..LossConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-8.0..8.0);
        let t: f64 = if rng.random::<bool>() { rng.random() } else { f64::from(rng.random_range(0..2u8)) };
        let p = sigmoid(x).clamp(1e-7, 1.0 - 1e-7);
        let bce = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        let (got, _) = focal_loss_single(x, t, &cfg).unwrap();
        assert!((got - 0.5 * bce).abs() <= 1e-12 * bce.abs().max(1e-300), "{x} {t}: {got} vs {bce}");
    }
}

#[test]
fn focal_decreases_in_probability_for_live_targets() {
    let cfg = LossConfig::default();
    let mut prev = f64::INFINITY;
    for k in 0..=2000 {
        let x = -15.0 + 30.0 * k as f64 / 2000.0;
        let p = sigmoid(x);
        if !(1e-7..=1.0 - 1e-7).contains(&p) {
            continue;
        }
        let (l, _) = focal_loss_single(x, 1.0, &cfg).unwrap();
        assert!(l < prev, "not decreasing at logit {x}");
        prev = l;
    }
}

#[test]
fn focal_batch_gradients_pass_finite_differences() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let n = rng.random_range(1..10);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let f = |p: &Tensor| {
            let (v, g) = focal_loss(p.data(), &t, &cfg)?;
            Ok((v, Tensor::vector(g)?))
        };
        let report = check_gradient(f, &Tensor::vector(x).unwrap(), 1e-6, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }
}

proptest! {
    #[test]
    fn supcon_is_never_negative(seed in any::<u64>(), n in 2usize..9, t in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_rows(&mut rng, n, 4);
        let labels = random_labels(&mut rng, n);
        let out = supcon_loss(&z, &labels, t).unwrap();
        prop_assert!(out.loss >= 0.0);
        prop_assert!(out.grad.is_finite());
    }
}
