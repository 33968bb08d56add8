//! Toy-scale model, optimizer and training loop.
//!
//! Each step plans paired batches, applies the batch augmentation policy,
//! runs the model, evaluates the combined objective and takes one AdamW step.
//! After every epoch the model is scored on the validation split and the
//! checkpoint with the lowest EER is kept.

mod checkpoint;
mod model;
mod optim;

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{stack_images, ForwardPass, ModelDims, ToyModel};
pub use optim::{adamw_step, lr_at, AdamState, OptimConfig};

use crate::augment::{apply_batch_policy, AugmentConfig, BatchItem};
use crate::datamodel::{Label, Sample};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::{acer_at, eer, ScoreSet};
use crate::pairmine::TrainPair;
use crate::sampler::{batches_per_epoch, plan_epoch};

const INIT_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const PLAN_STREAM: u64 = 3;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.loss.validate()?;
        self.augment.validate()
    }
}

/// One line of `history.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_focal: f64,
    pub mean_supcon: f64,
    pub mean_total: f64,
    pub val_eer: f64,
    pub val_acer: f64,
    pub lr_last: f64,
    pub steps: usize,
    /// Batches whose contrastive term had no usable anchor or a single class.
    pub degenerate_batches: usize,
    pub supcon_active: bool,
    pub cutmix_active: bool,
    pub live_augment_active: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation EER; ties go to the earlier epoch.
    pub best: Checkpoint,
    /// State after the last completed epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

/// Plan seed for one epoch, drawn from its own stream of the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PLAN_STREAM);
    rng.set_word_pos(2 * epoch as u128);
    rng.next_u64()
}

struct Validation {
    inputs: Tensor,
    labels: Vec<Label>,
}

impl Validation {
    fn new(samples: &[Sample]) -> Result<Self> {
        let valid: Vec<&Sample> = samples.iter().filter(|s| s.valid).collect();
        let inputs = stack_images(valid.iter().map(|s| &s.image))?;
        let labels = valid.iter().map(|s| s.label).collect();
        let v = Self { inputs, labels };
        // Fail before training if the split cannot be scored.
        ScoreSet::new(vec![0.0; v.labels.len()], v.labels.clone())
            .and_then(|s| eer(&s))
            .map_err(|e| Error::Domain(format!("validation split: {e}")))?;
        Ok(v)
    }

    /// `(EER, ACER at 0.5)` of the model on this split.
    fn score(&self, model: &ToyModel) -> Result<(f64, f64)> {
        let scores = ScoreSet::new(model.scores(&self.inputs)?, self.labels.clone())?;
        Ok((eer(&scores)?.0, acer_at(&scores, 0.5)?.2))
    }
}

/// Runs the full schedule and returns the best checkpoint with the history.
///
/// `meta` is copied into every checkpoint header.
pub fn train(
    samples: &[Sample],
    pairs: &[TrainPair],
    validation: &[Sample],
    config: &TrainConfig,
    meta: serde_json::Value,
) -> Result<TrainOutcome> {
    config.validate()?;
    let optim = &config.optim;
    if pairs.is_empty() {
        return Err(Error::Domain("no training pairs".into()));
    }
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    for p in pairs {
        for id in [&p.attack_id, &p.live_id] {
            if !by_id.contains_key(id.as_str()) {
                return Err(Error::Integrity(format!("pair references unknown sample {id}")));
            }
        }
    }
    let validation = Validation::new(validation)?;
    let first = by_id[pairs[0].attack_id.as_str()];
    let size = first.height();
    if first.width() != size {
        return Err(Error::Dimension(format!(
            "square images expected, got {}x{}",
            first.height(),
            first.width()
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(optim.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut model = ToyModel::init(ModelDims::for_image(size), &mut init_rng);
    let mut adam = AdamState::new(model.params());
    let mut aug_rng = ChaCha8Rng::seed_from_u64(optim.seed);
    aug_rng.set_stream(AUGMENT_STREAM);

    let per_epoch = batches_per_epoch(pairs.len(), optim.batch_size);
    let total_steps = optim.epochs * per_epoch;
    let snapshot = |model: &ToyModel, adam: &AdamState, epoch, val_eer, rng: &ChaCha8Rng| Checkpoint {
        model: model.clone(),
        optimizer: adam.clone(),
        epoch,
        val_eer,
        rng: RngState {
            seed: optim.seed,
            word_pos: rng.get_word_pos(),
        },
        meta: meta.clone(),
    };

    let mut history = Vec::with_capacity(optim.epochs);
    let mut best: Option<Checkpoint> = None;
    let mut last: Option<Checkpoint> = None;
    let mut step = 0;
    for epoch in 1..=optim.epochs {
        let plans = plan_epoch(pairs, optim.batch_size, epoch_seed(optim.seed, epoch))?;
        let (mut focal, mut supcon, mut total) = (0.0, 0.0, 0.0);
        let mut degenerate = 0;
        let mut lr = 0.0;
        for plan in &plans {
            lr = lr_at(step, total_steps, optim)?;
            let batch: Vec<BatchItem> = plan
                .flat_order()
                .into_iter()
                .map(|id| {
                    let s = by_id[id];
                    BatchItem {
                        id: s.id.clone(),
                        label: s.label,
                        image: s.image.clone(),
                    }
                })
                .collect();
            let mixed = apply_batch_policy(&batch, &config.augment, &mut aug_rng)?;
            let inputs = stack_images(mixed.iter().map(|m| &m.image))?;
            let targets: Vec<f64> = mixed.iter().map(|m| m.focal_target).collect();
            let labels: Vec<Label> = mixed.iter().map(|m| m.supcon_label).collect();
            let (bundle, grads) = model.objective(&inputs, &targets, &labels, &config.loss)?;
            let update = if bundle.total.is_finite() {
                let names = model.names().to_vec();
                adamw_step(model.params_mut(), &grads, &names, &mut adam, lr, optim)
            } else {
                Err(Error::Training(format!("non-finite loss at step {step}")))
            };
            if let Err(e) = update {
                let reason = format!("epoch {epoch}, step {step}: {e}");
                log::warn!("training diverged at {reason}");
                let last_good = match last {
                    Some(c) => c,
                    None => {
                        let (val_eer, _) = validation.score(&model)?;
                        snapshot(&model, &adam, epoch - 1, val_eer, &aug_rng)
                    }
                };
                return Ok(TrainOutcome {
                    best: best.unwrap_or_else(|| last_good.clone()),
                    last: last_good,
                    history,
                    aborted: Some(reason),
                });
            }
            focal += bundle.focal;
            supcon += bundle.supcon;
            total += bundle.total;
            degenerate += usize::from(bundle.supcon_degenerate);
            step += 1;
        }
        let n = plans.len() as f64;
        let (val_eer, val_acer) = validation.score(&model)?;
        let record = EpochRecord {
            epoch,
            mean_focal: focal / n,
            mean_supcon: supcon / n,
            mean_total: total / n,
            val_eer,
            val_acer,
            lr_last: lr,
            steps: plans.len(),
            degenerate_batches: degenerate,
            supcon_active: config.loss.supcon_weight > 0.0,
            cutmix_active: config.augment.cutmix_prob > 0.0,
            live_augment_active: config.augment.live_augment,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (focal {:.5}, supcon {:.5}), val EER {:.4}, ACER {:.4}",
            record.mean_total,
            record.mean_focal,
            record.mean_supcon,
            val_eer,
            val_acer
        );
        history.push(record);
        let current = snapshot(&model, &adam, epoch, val_eer, &aug_rng);
        if best.as_ref().is_none_or(|b| val_eer < b.val_eer) {
            best = Some(current.clone());
        }
        last = Some(current);
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        last: last.expect("at least one epoch"),
        history,
        aborted: None,
    })
}
