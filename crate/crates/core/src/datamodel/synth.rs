use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AttackCategory, EmbeddingStore, Label, Sample};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Knobs of the seeded synthetic dataset.
///
/// Embedding geometry: every identity owns a random unit centre. Lives sit at
/// distance `noise_scale` from it, identity-preserving attacks at
/// `noise_scale × U(0.5, 2)`. Identity-changing attacks are either displaced by
/// `attack_offset × U(0.5, 1.5)` along a random direction, or (with probability
/// `orphan_attack_fraction`) drawn around a fresh centre that owns no lives.
///
/// Image geometry: every identity owns a smooth base pattern whose amplitude is
/// `identity_spread`; every attack carries a category-specific perturbation plus
/// a faint checkerboard capture artifact of amplitude `artifact_strength`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub lives_per_identity: usize,
    pub attacks_per_identity_per_category: BTreeMap<AttackCategory, usize>,
    pub image_size: usize,
    pub embedding_dim: usize,
    pub identity_spread: f64,
    pub attack_offset: f64,
    pub noise_scale: f64,
    pub orphan_attack_fraction: f64,
    pub artifact_strength: f64,
    /// Fraction of lives flagged `valid = false` (blank or faceless captures).
    pub invalid_live_fraction: f64,
    /// Prefix of every generated id and identity, so separately generated
    /// splits never share identities.
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let attacks = [
            (AttackCategory::PixelLevel, 6),
            (AttackCategory::SemanticLevel, 4),
            (AttackCategory::VideoDriven, 3),
            (AttackCategory::FaceSwap, 4),
            (AttackCategory::AttributeEdit, 2),
            (AttackCategory::Replay, 1),
            (AttackCategory::Cutouts, 1),
            (AttackCategory::Print, 1),
        ]
        .into_iter()
        .collect();
        Self {
            n_identities: 40,
            lives_per_identity: 4,
            attacks_per_identity_per_category: attacks,
            image_size: 16,
            embedding_dim: 512,
            identity_spread: 0.25,
            attack_offset: 0.5,
            noise_scale: 0.15,
            orphan_attack_fraction: 0.5,
            artifact_strength: 0.08,
            invalid_live_fraction: 0.05,
            id_prefix: "id".into(),
            seed: 20_250_701,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fraction = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        fraction("orphan_attack_fraction", self.orphan_attack_fraction)?;
        fraction("invalid_live_fraction", self.invalid_live_fraction)?;
        if self.image_size < 8 {
            return Err(Error::Config(format!(
                "image_size must be >= 8, got {}",
                self.image_size
            )));
        }
        if self.embedding_dim < 2 {
            return Err(Error::Config("embedding_dim must be >= 2".into()));
        }
        if self.attacks_per_identity_per_category.contains_key(&AttackCategory::Live) {
            return Err(Error::Config(
                "attacks_per_identity_per_category cannot contain the live category".into(),
            ));
        }
        for (name, v) in [
            ("identity_spread", self.identity_spread),
            ("attack_offset", self.attack_offset),
            ("noise_scale", self.noise_scale),
            ("artifact_strength", self.artifact_strength),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-identity smooth colour pattern.
struct Pattern {
    base: [f64; 3],
    waves: Vec<(f64, f64, f64, [f64; 3])>,
}

impl Pattern {
    fn draw(rng: &mut ChaCha8Rng, spread: f64) -> Self {
        let skin = [0.58, 0.45, 0.38];
        let mut base = [0.0; 3];
        for (b, s) in base.iter_mut().zip(skin) {
            *b = s + spread * 0.4 * rng.random_range(-1.0..1.0);
        }
        let waves = (0..3)
            .map(|_| {
                let fx = rng.random_range(0.3..1.5);
                let fy = rng.random_range(0.3..1.5);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let mut amp = [0.0; 3];
                for a in amp.iter_mut() {
                    *a = spread * 0.35 * rng.random_range(-1.0..1.0);
                }
                (fx, fy, phase, amp)
            })
            .collect();
        Self { base, waves }
    }

    fn render(&self, size: usize) -> Vec<f64> {
        let mut img = vec![0.0; size * size * 3];
        let s = size as f64;
        for y in 0..size {
            for x in 0..size {
                let (xf, yf) = (x as f64 / s, y as f64 / s);
                for ch in 0..3 {
                    let mut v = self.base[ch];
                    for (fx, fy, phase, amp) in &self.waves {
                        v += amp[ch] * (std::f64::consts::TAU * (fx * xf + fy * yf) + phase).cos();
                    }
                    img[(y * size + x) * 3 + ch] = v;
                }
            }
        }
        img
    }
}

fn clamp_unit(img: &mut [f64]) {
    for v in img {
        *v = v.clamp(0.0, 1.0);
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn displaced(rng: &mut ChaCha8Rng, centre: &[f64], radius: f64) -> Vec<f64> {
    let dir = unit_gaussian(rng, centre.len());
    centre.iter().zip(dir).map(|(c, d)| c + radius * d).collect()
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

fn live_capture(rng: &mut ChaCha8Rng, pattern: &Pattern, size: usize) -> Vec<f64> {
    let mut img = pattern.render(size);
    let shift = rng.random_range(-0.03..0.03);
    for v in img.iter_mut() {
        *v += shift + 0.01 * rng.sample::<f64, _>(StandardNormal);
    }
    img
}

fn perturb(
    rng: &mut ChaCha8Rng,
    img: &mut [f64],
    category: AttackCategory,
    size: usize,
    donor: &Pattern,
    artifact: f64,
) {
    let px = |x: usize, y: usize, c: usize| (y * size + x) * 3 + c;
    match category {
        AttackCategory::PixelLevel => {
            for v in img.iter_mut() {
                *v += 0.5 * artifact * rng.random_range(-1.0..1.0);
            }
        }
        AttackCategory::SemanticLevel => {
            let side = size * 3 / 8;
            let (x0, y0) = (rng.random_range(0..=size - side), rng.random_range(0..=size - side));
            let tint = [0.08, -0.03, 0.02];
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    for c in 0..3 {
                        img[px(x, y, c)] += tint[c];
                    }
                }
            }
        }
        AttackCategory::VideoDriven => {
            let src = img.to_vec();
            for y in 0..size {
                for x in 0..size {
                    let sx = (x + 1).min(size - 1);
                    for c in 0..3 {
                        img[px(x, y, c)] = src[px(sx, y, c)];
                    }
                }
            }
        }
        AttackCategory::FaceSwap => {
            let inner = donor.render(size);
            let (lo, hi) = (size / 4, size - size / 4);
            for y in lo..hi {
                for x in lo..hi {
                    for c in 0..3 {
                        img[px(x, y, c)] = inner[px(x, y, c)];
                    }
                }
            }
        }
        AttackCategory::AttributeEdit => {
            for y in 0..size / 4 {
                for x in 0..size {
                    for c in 0..3 {
                        img[px(x, y, c)] += 0.1;
                    }
                }
            }
        }
        AttackCategory::Replay => {
            let mean = img.iter().sum::<f64>() / img.len() as f64;
            for y in 0..size {
                let band = if y % 2 == 0 { 0.03 } else { -0.03 };
                for x in 0..size {
                    for c in 0..3 {
                        let v = &mut img[px(x, y, c)];
                        *v = mean + 0.8 * (*v - mean) + band;
                    }
                }
            }
        }
        AttackCategory::Cutouts => {
            let side = size / 4;
            let (x0, y0) = (rng.random_range(0..=size - side), rng.random_range(0..=size - side));
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    for c in 0..3 {
                        img[px(x, y, c)] = 0.1;
                    }
                }
            }
        }
        AttackCategory::Print => {
            for p in img.chunks_exact_mut(3) {
                let grey = (p[0] + p[1] + p[2]) / 3.0;
                for v in p.iter_mut() {
                    *v = grey + 0.5 * (*v - grey);
                }
            }
        }
        AttackCategory::Live => {}
    }
    let amp = artifact * rng.random_range(0.7..1.3);
    for y in 0..size {
        for x in 0..size {
            let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            for c in 0..3 {
                img[px(x, y, c)] += sign * amp;
            }
        }
    }
}

/// Generates samples and their embeddings. Deterministic given `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<(Vec<Sample>, EmbeddingStore)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.image_size;
    let dim = config.embedding_dim;
    let prefix = &config.id_prefix;
    let mut samples = Vec::new();
    let mut store = EmbeddingStore::new(dim);
    let mut orphan_count = 0usize;

    for ident in 0..config.n_identities {
        let identity = format!("{prefix}{ident:03}");
        let centre = unit_gaussian(&mut rng, dim);
        let pattern = Pattern::draw(&mut rng, config.identity_spread);

        for k in 0..config.lives_per_identity {
            let id = format!("{identity}-live-{k}");
            let valid = rng.random::<f64>() >= config.invalid_live_fraction;
            let mut img = if valid {
                live_capture(&mut rng, &pattern, size)
            } else {
                (0..size * size * 3).map(|_| rng.random::<f64>()).collect()
            };
            clamp_unit(&mut img);
            let emb = displaced(&mut rng, &centre, config.noise_scale);
            store.insert(id.clone(), to_f32(emb))?;
            samples.push(Sample {
                id,
                identity: identity.clone(),
                label: Label::Live,
                category: AttackCategory::Live,
                valid,
                image: Tensor::new(vec![size, size, 3], img)?,
            });
        }

        for (&category, &count) in &config.attacks_per_identity_per_category {
            for k in 0..count {
                let orphan = !category.preserves_identity()
                    && rng.random::<f64>() < config.orphan_attack_fraction;
                let (sample_identity, emb, src) = if orphan {
                    let oc = unit_gaussian(&mut rng, dim);
                    let op = Pattern::draw(&mut rng, config.identity_spread);
                    let emb = displaced(&mut rng, &oc, config.noise_scale);
                    let name = format!("{prefix}orphan-{orphan_count:04}");
                    orphan_count += 1;
                    (name, emb, live_capture(&mut rng, &op, size))
                } else if category.preserves_identity() {
                    let r = config.noise_scale * rng.random_range(0.5..2.0);
                    let emb = displaced(&mut rng, &centre, r);
                    (identity.clone(), emb, live_capture(&mut rng, &pattern, size))
                } else {
                    let off = config.attack_offset * rng.random_range(0.5..1.5);
                    let shifted = displaced(&mut rng, &centre, off);
                    let emb = displaced(&mut rng, &shifted, config.noise_scale);
                    (identity.clone(), emb, live_capture(&mut rng, &pattern, size))
                };
                let donor = Pattern::draw(&mut rng, config.identity_spread);
                let mut img = src;
                perturb(&mut rng, &mut img, category, size, &donor, config.artifact_strength);
                clamp_unit(&mut img);
                let id = if orphan {
                    format!("{sample_identity}-{category}-{k}")
                } else {
                    format!("{identity}-{category}-{k}")
                };
                store.insert(id.clone(), to_f32(emb))?;
                samples.push(Sample {
                    id,
                    identity: sample_identity,
                    label: Label::Attack,
                    category,
                    valid: true,
                    image: Tensor::new(vec![size, size, 3], img)?,
                });
            }
        }
    }
    Ok((samples, store))
}
