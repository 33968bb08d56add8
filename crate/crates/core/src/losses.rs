//! Binary focal loss, supervised contrastive loss and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::augment::MixedSample;
use crate::datamodel::Label;
use crate::diffcore::{l2_normalize, l2_normalize_backward, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the live (positive) term; the attack term gets `1 − α`.
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub supcon_temperature: f64,
    pub supcon_weight: f64,
    /// Sigmoid outputs are clamped to `[ε, 1 − ε]` before taking logs.
    pub probability_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 0.5,
            focal_gamma: 0.7,
            supcon_temperature: 0.14,
            supcon_weight: 0.3,
            probability_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.supcon_temperature > 0.0 && self.supcon_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "supcon_temperature must be > 0, got {}",
                self.supcon_temperature
            )));
        }
        if !(self.supcon_weight >= 0.0 && self.supcon_weight.is_finite()) {
            return Err(Error::Config(format!(
                "supcon_weight must be >= 0, got {}",
                self.supcon_weight
            )));
        }
        if !(self.probability_clamp > 0.0 && self.probability_clamp < 0.5) {
            return Err(Error::Config(format!(
                "probability_clamp must be in (0, 0.5), got {}",
                self.probability_clamp
            )));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::Config(format!(
                "focal_alpha must be in (0, 1), got {}",
                self.focal_alpha
            )));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "focal_gamma must be >= 0, got {}",
                self.focal_gamma
            )));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Focal loss of one logit against a (possibly mixed) target, with its
/// derivative with respect to the logit.
///
/// `L = −[t·α·(1−p)^γ·ln p + (1−t)·(1−α)·p^γ·ln(1−p)]` with `p = σ(logit)`
/// clamped to `[ε, 1−ε]`. Where the clamp is active the derivative is zero.
pub fn focal_loss_single(logit: f64, target: f64, config: &LossConfig) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Domain(format!("focal target {target} outside [0, 1]")));
    }
    let eps = config.probability_clamp;
    let (alpha, gamma) = (config.focal_alpha, config.focal_gamma);
    let raw = sigmoid(logit);
    let p = raw.clamp(eps, 1.0 - eps);
    let q = 1.0 - p;
    let (ln_p, ln_q) = (p.ln(), q.ln());
    let loss = -(target * alpha * q.powf(gamma) * ln_p
        + (1.0 - target) * (1.0 - alpha) * p.powf(gamma) * ln_q);
    let grad = if raw < eps || raw > 1.0 - eps {
        0.0
    } else {
        let d_pos = -gamma * p * q.powf(gamma) * ln_p + q.powf(gamma + 1.0);
        let d_neg = gamma * q * p.powf(gamma) * ln_q - p.powf(gamma + 1.0);
        -target * alpha * d_pos - (1.0 - target) * (1.0 - alpha) * d_neg
    };
    Ok((loss, grad))
}

/// Mean focal loss over a batch and its gradient with respect to each logit.
pub fn focal_loss(logits: &[f64], targets: &[f64], config: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Dimension(format!(
            "focal loss over {} logits and {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (&x, &t) in logits.iter().zip(targets) {
        let (l, g) = focal_loss_single(x, t, config)?;
        total += l;
        grads.push(g / n);
    }
    Ok((total / n, grads))
}

/// Value and gradient of the supervised contrastive loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SupConOutput {
    pub loss: f64,
    pub grad: Tensor,
    pub valid_anchor_count: usize,
    /// Set when the batch carries no contrastive signal: no anchor has a
    /// positive (loss reported as 0), or all samples share one label.
    pub degenerate: bool,
}

/// Supervised contrastive loss over unit-norm rows of `projections`.
///
/// For every anchor `i` with at least one positive:
/// `ℓᵢ = −ln( Σ_{j≠i, yⱼ=yᵢ} exp(zᵢ·zⱼ/T) / Σ_{k≠i} exp(zᵢ·zₖ/T) )`.
/// The loss is the mean of `ℓᵢ` over anchors that have a positive. Both sums
/// are evaluated after subtracting the anchor's largest logit.
pub fn supcon_loss<L: PartialEq>(projections: &Tensor, labels: &[L], temperature: f64) -> Result<SupConOutput> {
    let n = projections.rows();
    let d = projections.cols();
    if projections.rank() != 2 || labels.len() != n {
        return Err(Error::Dimension(format!(
            "supcon over projections {:?} and {} labels",
            projections.shape(),
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::Domain(format!("supcon needs at least 2 samples, got {n}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0, got {temperature}")));
    }
    for r in 0..n {
        let norm = projections.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("projection {r} has norm {norm}, expected 1")));
        }
    }

    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            if k != i {
                let dot: f64 = projections.row(i).iter().zip(projections.row(k)).map(|(a, b)| a * b).sum();
                logits[i * n + k] = dot / temperature;
            }
        }
    }

    // coeff[i][k] = ∂ℓᵢ/∂sᵢₖ
    let mut coeff = vec![0.0; n * n];
    let mut total = 0.0;
    let mut valid = 0usize;
    for i in 0..n {
        if !(0..n).any(|j| j != i && labels[j] == labels[i]) {
            continue;
        }
        valid += 1;
        let row = &logits[i * n..(i + 1) * n];
        let m = (0..n)
            .filter(|&k| k != i)
            .map(|k| row[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut den = 0.0;
        let mut num = 0.0;
        for k in (0..n).filter(|&k| k != i) {
            let e = (row[k] - m).exp();
            den += e;
            if labels[k] == labels[i] {
                num += e;
            }
        }
        total += den.ln() - num.ln();
        for k in (0..n).filter(|&k| k != i) {
            let e = (row[k] - m).exp();
            let mut c = e / den;
            if labels[k] == labels[i] {
                c -= e / num;
            }
            coeff[i * n + k] = c;
        }
    }

    let mut grad = vec![0.0; n * d];
    if valid > 0 {
        let scale = 1.0 / (valid as f64 * temperature);
        for i in 0..n {
            for k in 0..n {
                let c = coeff[i * n + k];
                if c == 0.0 {
                    continue;
                }
                let c = c * scale;
                for t in 0..d {
                    grad[i * d + t] += c * projections.row(k)[t];
                    grad[k * d + t] += c * projections.row(i)[t];
                }
            }
        }
    }
    Ok(SupConOutput {
        loss: if valid > 0 { total / valid as f64 } else { 0.0 },
        grad: Tensor::new(vec![n, d], grad)?,
        valid_anchor_count: valid,
        degenerate: valid == 0 || labels.iter().all(|l| *l == labels[0]),
    })
}

/// Normalizes the rows of `raw` first and returns the gradient with respect
/// to the un-normalized inputs.
pub fn supcon_loss_prenorm<L: PartialEq>(raw: &Tensor, labels: &[L], temperature: f64) -> Result<SupConOutput> {
    let z = l2_normalize(raw)?;
    let mut out = supcon_loss(&z, labels, temperature)?;
    out.grad = l2_normalize_backward(raw, &out.grad)?;
    Ok(out)
}

/// Loss values of one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub focal: f64,
    pub supcon: f64,
    pub total: f64,
    pub valid_anchor_count: usize,
    /// The contrastive term carried no signal for this batch (see
    /// [`SupConOutput::degenerate`]).
    pub supcon_degenerate: bool,
}

/// Bundle plus gradients with respect to the two heads' outputs.
#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    pub bundle: LossBundle,
    pub grad_logits: Tensor,
    pub grad_projections: Tensor,
}

/// `focal(logits, targets) + λ · supcon(projections, labels)`.
///
/// The focal head is trained on the (possibly mixed) targets, the
/// contrastive head on the unmixed labels. With `λ = 0` the contrastive term
/// is not evaluated and reported as zero.
pub fn combined_objective_raw(
    logits: &Tensor,
    projections: &Tensor,
    focal_targets: &[f64],
    supcon_labels: &[Label],
    config: &LossConfig,
) -> Result<ObjectiveOutput> {
    let (focal, grad_focal) = focal_loss(logits.data(), focal_targets, config)?;
    let grad_logits = Tensor::new(logits.shape().to_vec(), grad_focal)?;
    let (supcon, grad_projections, valid, degenerate) = if config.supcon_weight > 0.0 {
        let out = supcon_loss(projections, supcon_labels, config.supcon_temperature)?;
        let mut g = out.grad;
        for v in g.data_mut() {
            *v *= config.supcon_weight;
        }
        (out.loss, g, out.valid_anchor_count, out.degenerate)
    } else {
        (0.0, Tensor::zeros(projections.shape().to_vec()), 0, false)
    };
    Ok(ObjectiveOutput {
        bundle: LossBundle {
            focal,
            supcon,
            total: focal + config.supcon_weight * supcon,
            valid_anchor_count: valid,
            supcon_degenerate: degenerate,
        },
        grad_logits,
        grad_projections,
    })
}

/// [`combined_objective_raw`] with targets and labels taken from the batch.
pub fn combined_objective(
    batch: &[MixedSample],
    logits: &Tensor,
    projections: &Tensor,
    config: &LossConfig,
) -> Result<ObjectiveOutput> {
    let targets: Vec<f64> = batch.iter().map(|m| m.focal_target).collect();
    let labels: Vec<Label> = batch.iter().map(|m| m.supcon_label).collect();
    combined_objective_raw(logits, projections, &targets, &labels, config)
}
