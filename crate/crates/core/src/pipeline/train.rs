use rand::seq::SliceRandom;
use rand::Rng;

use super::ExperimentConfig;
use crate::augment::{augment_batch, TrainItem};
use crate::dataset::{DomainTag, SceneDataset};
use crate::error::{Error, Result};
use crate::label::flip_raster;
use crate::losses::{batch_weights, gumbel_noise, weighted_item_loss, ItemKind};
use crate::model::{forward_on, poly_lr, sgd_step, ModelState};
use crate::rng::{self, tags};
use crate::tensorops::{GradTape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelState,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn train_items(data: &SceneDataset) -> Vec<TrainItem> {
    data.records
        .iter()
        .map(|r| TrainItem {
            id: r.id.clone(),
            image: r.image.clone(),
            label: r.label.clone(),
            kind: if r.tag == DomainTag::Synthetic { ItemKind::Synthetic } else { ItemKind::Real },
        })
        .collect()
}

/// Train a model on `data` with the combined loss. Starts from `init` when
/// given, else from a fresh initialization keyed by `seed`.
pub fn train(
    data: &SceneDataset,
    cfg: &ExperimentConfig,
    seed: u64,
    init: Option<&ModelState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = match init {
        Some(m) => {
            let mut m = m.clone();
            m.reset_momentum();
            m
        }
        None => ModelState::init(cfg.arch(), seed)?,
    };
    if data.is_empty() || cfg.epochs == 0 {
        return Ok(TrainOutcome { model, epoch_losses: Vec::new() });
    }
    let items = train_items(data);
    let has_synthetic = items.iter().any(|i| i.kind == ItemKind::Synthetic);
    let steps_per_epoch = items.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(&[seed, tags::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + b;
            let step_seed = rng::derive_seed(&[seed, epoch as u64, b as u64]);
            let mut batch: Vec<TrainItem> = chunk.iter().map(|&i| items[i].clone()).collect();
            if cfg.augment && has_synthetic {
                batch = augment_batch(&batch, data, &cfg.augment_cfg, step_seed)?;
            }
            if cfg.hflip {
                let mut flip_rng = rng::stream(&[step_seed, tags::FLIP]);
                for item in &mut batch {
                    if flip_rng.random_bool(0.5) {
                        item.image = flip_raster(&item.image)?;
                        item.label = item.label.flip_horizontal();
                    }
                }
            }
            let kinds: Vec<ItemKind> = batch.iter().map(|i| i.kind).collect();
            let weights = batch_weights(&kinds, &cfg.loss)?;
            let mut grads: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            let mut batch_loss = 0.0;
            for (j, (item, &w)) in batch.iter().zip(&weights).enumerate() {
                let mut tape = GradTape::new();
                let (logits, params) = forward_on(&mut tape, &model, &item.image)?;
                let noise = (w.1 != 0.0)
                    .then(|| gumbel_noise(tape.value(logits).shape(), rng::derive_seed(&[step_seed, j as u64])));
                let loss = weighted_item_loss(&mut tape, logits, &item.label, noise.as_ref(), w, &cfg.loss)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss diverged at epoch {epoch}, step {step} (item {})",
                        item.id
                    )));
                }
                batch_loss += value;
                tape.backward(loss)?;
                for (g, p) in grads.iter_mut().zip(&params) {
                    if let Some(pg) = tape.grad(*p) {
                        g.add_assign(pg);
                    }
                }
            }
            let lr = poly_lr(cfg.base_lr, step, total_steps, cfg.lr_power)?;
            sgd_step(&mut model, &grads, lr, cfg.sgd).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, step {step}")),
                other => other,
            })?;
            loss_sum += batch_loss;
        }
        epoch_losses.push(loss_sum / steps_per_epoch as f64);
    }
    Ok(TrainOutcome { model, epoch_losses })
}
