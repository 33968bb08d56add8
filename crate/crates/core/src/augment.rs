//! Live-only photometric augmentation and CutMix with label routing.
//!
//! The focal head sees the mixed target of a CutMix sample while the
//! contrastive head keeps the base sample's original label.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::datamodel::Label;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Augmentation policy. Ranges are symmetric half-widths unless given as
/// `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Brightness offset and contrast gain are each drawn from `±range`.
    pub brightness_contrast_range: f64,
    /// Hue and saturation shifts drawn from `±range`, in units of a
    /// `[0, 255]`-scaled HSV space.
    pub hue_sat_range: f64,
    pub gamma_range: [f64; 2],
    pub jpeg_quality_range: [u32; 2],
    pub cutmix_prob: f64,
    pub cutmix_alpha: f64,
    /// Switches the live-only photometric stage on or off.
    pub live_augment: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            brightness_contrast_range: 0.10,
            hue_sat_range: 10.0,
            gamma_range: [0.80, 1.20],
            jpeg_quality_range: [40, 60],
            cutmix_prob: 0.3,
            cutmix_alpha: 0.6,
            live_augment: true,
        }
    }
}

impl AugmentConfig {
    /// Every photometric stage collapsed to the identity.
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            brightness_contrast_range: 0.0,
            hue_sat_range: 0.0,
            gamma_range: [1.0, 1.0],
            jpeg_quality_range: [100, 100],
            cutmix_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("flip_prob", self.flip_prob), ("cutmix_prob", self.cutmix_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.brightness_contrast_range >= 0.0 && self.brightness_contrast_range < 1.0) {
            return Err(Error::Config(format!(
                "brightness_contrast_range must be in [0, 1), got {}",
                self.brightness_contrast_range
            )));
        }
        if !(self.hue_sat_range >= 0.0 && self.hue_sat_range <= 255.0) {
            return Err(Error::Config(format!(
                "hue_sat_range must be in [0, 255], got {}",
                self.hue_sat_range
            )));
        }
        let [glo, ghi] = self.gamma_range;
        if !(glo > 0.0 && glo <= ghi && ghi.is_finite()) {
            return Err(Error::Config(format!("gamma_range {:?} is not ordered and positive", self.gamma_range)));
        }
        let [qlo, qhi] = self.jpeg_quality_range;
        if !(qlo >= 1 && qlo <= qhi && qhi <= 100) {
            return Err(Error::Config(format!(
                "jpeg_quality_range {:?} must satisfy 1 <= lo <= hi <= 100",
                self.jpeg_quality_range
            )));
        }
        if !(self.cutmix_alpha > 0.0 && self.cutmix_alpha.is_finite()) {
            return Err(Error::Config(format!("cutmix_alpha must be > 0, got {}", self.cutmix_alpha)));
        }
        Ok(())
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

fn dims(image: &Tensor) -> (usize, usize) {
    (image.shape()[0], image.shape()[1])
}

pub fn flip_horizontal(image: &Tensor) -> Tensor {
    let (h, w) = dims(image);
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (d, s) = ((y * w + x) * 3, (y * w + (w - 1 - x)) * 3);
            out[d..d + 3].copy_from_slice(&src[s..s + 3]);
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("same shape")
}

/// `v ← (1 + contrast)(v − mean) + mean + brightness`.
pub fn brightness_contrast(image: &mut Tensor, brightness: f64, contrast: f64) {
    let mean = image.data().iter().sum::<f64>() / image.len() as f64;
    for v in image.data_mut() {
        *v = (1.0 + contrast) * (*v - mean) + mean + brightness;
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Rotates hue by `hue_shift / 255` of a turn and adds `sat_shift / 255` to the
/// saturation (clamped to `[0, 1]`), through a plain RGB↔HSV round trip.
pub fn hue_saturation(image: &mut Tensor, hue_shift: f64, sat_shift: f64) {
    for p in image.data_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0), p[2].clamp(0.0, 1.0));
        let (r, g, b) = hsv_to_rgb(h + hue_shift / 255.0, (s + sat_shift / 255.0).clamp(0.0, 1.0), v);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
}

pub fn apply_gamma(image: &mut Tensor, gamma: f64) {
    for v in image.data_mut() {
        *v = v.max(0.0).powf(gamma);
    }
}

/// Stand-in for JPEG compression at quality `q`: each 4×4 block of every
/// channel is pulled toward its mean by `s = (100 − q) / 100` and the result is
/// quantized to steps of `s / 16`. `q = 100` is the identity; lower quality
/// degrades monotonically.
pub fn compression_proxy(image: &mut Tensor, quality: u32) {
    let strength = (100.0 - quality.min(100) as f64) / 100.0;
    if strength == 0.0 {
        return;
    }
    let (h, w) = dims(image);
    let step = strength / 16.0;
    let data = image.data_mut();
    for by in (0..h).step_by(4) {
        for bx in (0..w).step_by(4) {
            let ys = by..(by + 4).min(h);
            let xs = bx..(bx + 4).min(w);
            let n = (ys.len() * xs.len()) as f64;
            for c in 0..3 {
                let mut mean = 0.0;
                for y in ys.clone() {
                    for x in xs.clone() {
                        mean += data[(y * w + x) * 3 + c];
                    }
                }
                mean /= n;
                for y in ys.clone() {
                    for x in xs.clone() {
                        let v = &mut data[(y * w + x) * 3 + c];
                        let pulled = mean + (1.0 - strength) * (*v - mean);
                        *v = (pulled / step).round() * step;
                    }
                }
            }
        }
    }
}

fn clamp_unit(image: &mut Tensor) {
    for v in image.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Flip, brightness/contrast, hue/saturation, gamma and the compression proxy,
/// each with independently drawn parameters. Output is clamped to `[0, 1]`.
pub fn augment_live<R: Rng + ?Sized>(image: &Tensor, config: &AugmentConfig, rng: &mut R) -> Tensor {
    let mut out = if config.flip_prob > 0.0 && rng.random::<f64>() < config.flip_prob {
        flip_horizontal(image)
    } else {
        image.clone()
    };
    let brightness = symmetric(rng, config.brightness_contrast_range);
    let contrast = symmetric(rng, config.brightness_contrast_range);
    if brightness != 0.0 || contrast != 0.0 {
        brightness_contrast(&mut out, brightness, contrast);
    }
    let hue = symmetric(rng, config.hue_sat_range);
    let sat = symmetric(rng, config.hue_sat_range);
    if hue != 0.0 || sat != 0.0 {
        hue_saturation(&mut out, hue, sat);
    }
    let [glo, ghi] = config.gamma_range;
    let gamma = if glo == ghi { glo } else { rng.random_range(glo..=ghi) };
    if gamma != 1.0 {
        apply_gamma(&mut out, gamma);
    }
    let [qlo, qhi] = config.jpeg_quality_range;
    let quality = if qlo == qhi { qlo } else { rng.random_range(qlo..=qhi) };
    compression_proxy(&mut out, quality);
    clamp_unit(&mut out);
    out
}

/// A sample as it enters the augmentation stage.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub id: String,
    pub label: Label,
    pub image: Tensor,
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PatchRect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Output of the batch policy for one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample {
    pub image: Tensor,
    /// Target of the focal head, `λ·y_base + (1 − λ)·y_donor`.
    pub focal_target: f64,
    /// Label of the contrastive head: always the base sample's label.
    pub supcon_label: Label,
    pub base_id: String,
    pub donor_id: Option<String>,
    /// Fraction of base pixels kept.
    pub lambda: f64,
    pub patch: Option<PatchRect>,
}

impl MixedSample {
    pub fn unmixed(item: BatchItem) -> Self {
        Self {
            focal_target: item.label.target(),
            supcon_label: item.label,
            base_id: item.id,
            donor_id: None,
            lambda: 1.0,
            patch: None,
            image: item.image,
        }
    }
}

/// Pastes `donor` pixels inside `patch` over `base`.
///
/// `λ = 1 − area/total` and the focal target are computed from integer pixel
/// counts with a single division.
pub fn cutmix_with_patch(base: &BatchItem, donor: &BatchItem, patch: PatchRect) -> Result<MixedSample> {
    if !base.image.same_shape(&donor.image) {
        return Err(Error::Dimension(format!(
            "cutmix base {:?} vs donor {:?}",
            base.image.shape(),
            donor.image.shape()
        )));
    }
    let (h, w) = dims(&base.image);
    if patch.x0 > patch.x1 || patch.y0 > patch.y1 || patch.x1 > w || patch.y1 > h {
        return Err(Error::Dimension(format!("patch {patch:?} outside a {h}x{w} image")));
    }
    let mut image = base.image.clone();
    {
        let dst = image.data_mut();
        let src = donor.image.data();
        for y in patch.y0..patch.y1 {
            let (a, b) = ((y * w + patch.x0) * 3, (y * w + patch.x1) * 3);
            dst[a..b].copy_from_slice(&src[a..b]);
        }
    }
    let total = h * w;
    let area = patch.area();
    let kept = total - area;
    let y_base = usize::from(base.label == Label::Live);
    let y_donor = usize::from(donor.label == Label::Live);
    Ok(MixedSample {
        image,
        focal_target: (y_base * kept + y_donor * area) as f64 / total as f64,
        supcon_label: base.label,
        base_id: base.id.clone(),
        donor_id: Some(donor.id.clone()),
        lambda: kept as f64 / total as f64,
        patch: Some(patch),
    })
}

/// Draws the CutMix rectangle: `λ₀ ~ Beta(α, α)`, side ratio `√(1 − λ₀)`
/// (rounded to whole pixels), uniform centre, clipped at the borders.
pub fn draw_patch<R: Rng + ?Sized>(height: usize, width: usize, alpha: f64, rng: &mut R) -> Result<PatchRect> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::Config(format!("cutmix alpha {alpha}: {e}")))?;
    let lambda0: f64 = beta.sample(rng);
    let ratio = (1.0 - lambda0).max(0.0).sqrt();
    let cut_w = ((width as f64) * ratio).round() as usize;
    let cut_h = ((height as f64) * ratio).round() as usize;
    let cx = rng.random_range(0..width);
    let cy = rng.random_range(0..height);
    let x0 = cx.saturating_sub(cut_w / 2);
    let y0 = cy.saturating_sub(cut_h / 2);
    let x1 = (cx + cut_w - cut_w / 2).min(width);
    let y1 = (cy + cut_h - cut_h / 2).min(height);
    Ok(PatchRect { x0, y0, x1, y1 })
}

pub fn cutmix<R: Rng + ?Sized>(base: &BatchItem, donor: &BatchItem, alpha: f64, rng: &mut R) -> Result<MixedSample> {
    if !base.image.same_shape(&donor.image) {
        return Err(Error::Dimension(format!(
            "cutmix base {:?} vs donor {:?}",
            base.image.shape(),
            donor.image.shape()
        )));
    }
    let (h, w) = dims(&base.image);
    let patch = draw_patch(h, w, alpha, rng)?;
    cutmix_with_patch(base, donor, patch)
}

/// Step 1 augments live slots only. Step 2 gives every slot a `cutmix_prob`
/// chance of receiving a patch from another, uniformly chosen slot; donors
/// contribute their step-1 pixels.
pub fn apply_batch_policy<R: Rng + ?Sized>(
    batch: &[BatchItem],
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<MixedSample>> {
    if config.cutmix_prob > 0.0 && batch.len() < 2 {
        return Err(Error::Policy(format!(
            "cutmix needs at least two samples per batch, got {}",
            batch.len()
        )));
    }
    let staged: Vec<BatchItem> = batch
        .iter()
        .map(|item| {
            if config.live_augment && item.label == Label::Live {
                BatchItem {
                    image: augment_live(&item.image, config, rng),
                    ..item.clone()
                }
            } else {
                item.clone()
            }
        })
        .collect();
    let n = staged.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if config.cutmix_prob > 0.0 && rng.random::<f64>() < config.cutmix_prob {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            out.push(cutmix(&staged[i], &staged[j], config.cutmix_alpha, rng)?);
        } else {
            out.push(MixedSample::unmixed(staged[i].clone()));
        }
    }
    Ok(out)
}
