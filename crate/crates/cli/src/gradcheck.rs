//! Finite-difference verification of every differentiable piece.

use pairlive_core::datamodel::Label;
use pairlive_core::diffcore::{
    affine, affine_backward, check_gradient, check_gradient_extrapolated, l2_normalize, l2_normalize_backward, rectify,
    rectify_backward, GradCheckReport, Tensor,
};
use pairlive_core::losses::{focal_loss, supcon_loss_prenorm, LossConfig};
use pairlive_core::trainer::{ModelDims, ToyModel};
use pairlive_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub worst_rel_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("finite")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn run<F>(name: &'static str, cases: usize, seed: u64, tolerance: f64, mut case: F) -> Result<SuiteResult>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<Vec<GradCheckReport>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let reports = case(&mut rng)?;
        failures += usize::from(reports.iter().any(|r| !r.passed));
        worst = reports.iter().map(|r| r.max_rel_error).fold(worst, f64::max);
    }
    Ok(SuiteResult {
        name,
        cases,
        failures,
        worst_rel_error: worst,
        tolerance,
    })
}

pub fn affine_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let tol = 1e-4;
    run("affine", cases, seed, tol, |rng| {
        let (n, k, m) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
        let x = uniform(rng, vec![n, k], -1.0, 1.0);
        let w = uniform(rng, vec![k, m], -1.0, 1.0);
        let b = uniform(rng, vec![m], -1.0, 1.0);
        let up = uniform(rng, vec![n, m], -1.0, 1.0);
        let wrt_x = check_gradient(
            |p| Ok((dot(&affine(p, &w, &b)?, &up), affine_backward(p, &w, &up)?.input)),
            &x,
            1e-3,
            tol,
        )?;
        let wrt_w = check_gradient(
            |p| Ok((dot(&affine(&x, p, &b)?, &up), affine_backward(&x, p, &up)?.weight)),
            &w,
            1e-3,
            tol,
        )?;
        let wrt_b = check_gradient(
            |p| Ok((dot(&affine(&x, &w, p)?, &up), affine_backward(&x, &w, &up)?.bias)),
            &b,
            1e-3,
            tol,
        )?;
        Ok(vec![wrt_x, wrt_w, wrt_b])
    })
}

pub fn rectify_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let tol = 1e-4;
    run("rectify", cases, seed, tol, |rng| {
        let n = rng.random_range(1..20);
        // Keep every coordinate at least 1e-3 away from the kink.
        let data = (0..n)
            .map(|_| {
                let m: f64 = rng.random_range(1e-3..1.0);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let x = Tensor::vector(data)?;
        let up = uniform(rng, vec![n], -1.0, 1.0);
        let r = check_gradient(|p| Ok((dot(&rectify(p), &up), rectify_backward(p, &up)?)), &x, 1e-4, tol)?;
        Ok(vec![r])
    })
}

/// Step of the extrapolated differences used by the smooth suites.
const STEP: f64 = 1e-3;

pub fn l2_normalize_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let tol = 1e-4;
    run("l2_normalize", cases, seed, tol, |rng| {
        let (n, d) = (rng.random_range(1..4), rng.random_range(2..32));
        let x = uniform(rng, vec![n, d], -1.0, 1.0);
        let up = uniform(rng, vec![n, d], -1.0, 1.0);
        let r = check_gradient_extrapolated(
            |p| Ok((dot(&l2_normalize(p)?, &up), l2_normalize_backward(p, &up)?)),
            &x,
            STEP,
            tol,
        )?;
        Ok(vec![r])
    })
}

pub fn focal_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let tol = 1e-4;
    let cfg = LossConfig::default();
    run("focal_loss", cases, seed, tol, |rng| {
        let n = rng.random_range(1..12);
        let x = uniform(rng, vec![n], -6.0, 6.0);
        let targets: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..3) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random(),
            })
            .collect();
        let r = check_gradient_extrapolated(
            |p| {
                let (v, g) = focal_loss(p.data(), &targets, &cfg)?;
                Ok((v, Tensor::vector(g)?))
            },
            &x,
            STEP,
            tol,
        )?;
        Ok(vec![r])
    })
}

pub fn supcon_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let tol = 1e-4;
    run("supcon_loss", cases, seed, tol, |rng| {
        let (n, d) = (rng.random_range(2..9), rng.random_range(2..9));
        let t = [0.07, 0.14, 0.5][rng.random_range(0..3)];
        let raw = uniform(rng, vec![n, d], -1.0, 1.0);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let r = check_gradient_extrapolated(
            |p| {
                let out = supcon_loss_prenorm(p, &labels, t)?;
                Ok((out.loss, out.grad))
            },
            &raw,
            STEP,
            tol,
        )?;
        Ok(vec![r])
    })
}

/// Dimensions of the model used for the end-to-end check (a few hundred
/// parameters).
pub fn tiny_dims() -> ModelDims {
    ModelDims {
        input: 12,
        hidden: 8,
        feature: 8,
        proj_hidden: 8,
        proj_dim: 4,
    }
}

/// Cases with a rectifier input closer than this to zero are redrawn, since
/// the central difference would straddle the kink.
const KINK_MARGIN: f64 = 1e-2;

/// Smallest absolute rectifier input over the model's forward pass.
fn kink_margin(model: &ToyModel, x: &Tensor) -> Result<f64> {
    let p = model.params();
    let z1 = affine(x, &p[0], &p[1])?;
    let z2 = affine(&rectify(&z1), &p[2], &p[3])?;
    let z3 = affine(&rectify(&z2), &p[6], &p[7])?;
    Ok([&z1, &z2, &z3]
        .iter()
        .flat_map(|z| z.data().iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min))
}

pub fn objective_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let tol = 1e-4;
    let cfg = LossConfig::default();
    run("combined_objective", cases, seed, tol, |rng| {
        let (model, x) = loop {
            let mut model = ToyModel::init(tiny_dims(), rng);
            for (name, p) in model.names().to_vec().iter().zip(model.params_mut()) {
                if name.ends_with(".bias") {
                    *p = uniform(rng, p.shape().to_vec(), -0.1, 0.1);
                }
            }
            let n = 2 * rng.random_range(2..5);
            let x = uniform(rng, vec![n, tiny_dims().input], 0.0, 1.0);
            if kink_margin(&model, &x)? >= KINK_MARGIN {
                break (model, x);
            }
        };
        let n = x.rows();
        let labels: Vec<Label> = (0..n)
            .map(|i| if i < n / 2 { Label::Attack } else { Label::Live })
            .collect();
        let targets: Vec<f64> = labels
            .iter()
            .map(|l| if rng.random::<f64>() < 0.3 { rng.random() } else { l.target() })
            .collect();
        let r = check_gradient_extrapolated(
            |flat| {
                let m = model.with_flat(flat)?;
                let (bundle, grads) = m.objective(&x, &targets, &labels, &cfg)?;
                let g: Vec<f64> = grads.iter().flat_map(|t| t.data().iter().copied()).collect();
                Ok((bundle.total, Tensor::vector(g)?))
            },
            &model.to_flat(),
            STEP,
            tol,
        )?;
        Ok(vec![r])
    })
}

/// Every suite with `cases` seeded cases each.
pub fn run_all(cases: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        affine_suite(cases, seed)?,
        rectify_suite(cases, seed.wrapping_add(1))?,
        l2_normalize_suite(cases, seed.wrapping_add(2))?,
        focal_suite(cases, seed.wrapping_add(3))?,
        supcon_suite(cases, seed.wrapping_add(4))?,
        objective_suite(cases, seed.wrapping_add(5))?,
    ])
}
