//! Masked cross-entropy and the gradient-magnitude boundary loss.

use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};
use crate::label::{LabelMask, IGNORE};
use crate::rng::{self, tags};
use crate::tensorops::{spatial_gradient_norm, GradTape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub boundary_threshold: f64,
    /// Weight of the boundary term relative to cross-entropy.
    pub lambda_bd: f64,
    pub gumbel_temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda1: 0.5, lambda2: 0.5, boundary_threshold: 1e-8, lambda_bd: 1.0, gumbel_temperature: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.boundary_threshold > 0.0) || !(self.gumbel_temperature > 0.0) {
            return Err(Error::invalid("boundary threshold and gumbel temperature must be positive"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda_bd < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// A loss value together with its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor,
}

fn check_target(logits: &Tensor, target: &LabelMask) -> Result<(usize, usize)> {
    let (c, h, w) = logits.dims3()?;
    if h != target.height() || w != target.width() {
        return Err(Error::shape(format!("logits {h}x{w} vs target {}x{}", target.height(), target.width())));
    }
    if let Some(&bad) = target.labels().iter().find(|&&l| l != IGNORE && usize::from(l) >= c) {
        return Err(Error::invalid(format!("target class {bad} outside {c} classes")));
    }
    Ok((c, h * w))
}

/// Mean of `-log softmax(logits)[target]` over non-IGNORE pixels, recorded on the tape.
pub fn cross_entropy_on(tape: &mut GradTape, logits: Var, target: &LabelMask) -> Result<Var> {
    let x = tape.value(logits);
    let (c, n) = check_target(x, target)?;
    let d = x.data();
    let count = target.labeled_count();
    let mut grad = vec![0.0; c * n];
    let mut total = 0.0;
    if count > 0 {
        let inv = 1.0 / count as f64;
        for (p, &t) in target.labels().iter().enumerate() {
            if t == IGNORE {
                continue;
            }
            let max = (0..c).map(|k| d[k * n + p]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..c).map(|k| (d[k * n + p] - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - d[usize::from(t) * n + p];
            for k in 0..c {
                grad[k * n + p] = (d[k * n + p] - log_z).exp() * inv;
            }
            grad[usize::from(t) * n + p] -= inv;
        }
        total *= inv;
    }
    let grad = Tensor::new(x.shape().to_vec(), grad)?;
    tape.reduce(logits, total, grad)
}

/// Boundary loss on the tape. `noise` is the Gumbel sample used for the
/// relaxed prediction and is held fixed; the thresholded pixel sets are
/// treated as constants.
pub fn boundary_loss_on(
    tape: &mut GradTape,
    logits: Var,
    target: &LabelMask,
    cfg: &LossConfig,
    noise: &Tensor,
) -> Result<Var> {
    cfg.validate()?;
    let (c, n) = check_target(tape.value(logits), target)?;
    if target.has_ignore() {
        return Err(Error::invalid("boundary loss needs a dense target"));
    }
    let relaxed = tape.gumbel_softmax(logits, cfg.gumbel_temperature, noise)?;
    let pred_edges = tape.spatial_gradient_norm(relaxed)?;
    let gt_edges = spatial_gradient_norm(&target.one_hot(c)?)?;
    let (gp, gt) = (tape.value(pred_edges).data(), gt_edges.data());

    let on_gt: Vec<bool> = gt.iter().map(|&v| v > cfg.boundary_threshold).collect();
    let on_pred: Vec<bool> = gp.iter().map(|&v| v > cfg.boundary_threshold).collect();
    let n_gt = on_gt.iter().filter(|&&b| b).count();
    let n_pred = on_pred.iter().filter(|&&b| b).count();
    let w_gt = if n_gt > 0 { cfg.lambda1 / n_gt as f64 } else { 0.0 };
    let w_pred = if n_pred > 0 { cfg.lambda2 / n_pred as f64 } else { 0.0 };

    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for p in 0..n {
        let weight = if on_gt[p] { w_gt } else { 0.0 } + if on_pred[p] { w_pred } else { 0.0 };
        if weight == 0.0 {
            continue;
        }
        let diff = gp[p] - gt[p];
        value += weight * diff.abs();
        grad[p] = weight * diff.signum() * f64::from(u8::from(diff != 0.0));
    }
    let grad = Tensor::new(tape.value(pred_edges).shape().to_vec(), grad)?;
    tape.reduce(pred_edges, value, grad)
}

fn standalone(logits: &Tensor, record: impl FnOnce(&mut GradTape, Var) -> Result<Var>) -> Result<LossValue> {
    let mut tape = GradTape::new();
    let x = tape.param(logits.clone());
    let loss = record(&mut tape, x)?;
    tape.backward(loss)?;
    let value = tape.value(loss).item();
    let grad = tape.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(logits.shape()));
    Ok(LossValue { value, grad })
}

pub fn cross_entropy(logits: &Tensor, target: &LabelMask) -> Result<LossValue> {
    standalone(logits, |tape, x| cross_entropy_on(tape, x, target))
}

pub fn boundary_loss(logits: &Tensor, target: &LabelMask, cfg: &LossConfig, noise: &Tensor) -> Result<LossValue> {
    standalone(logits, |tape, x| boundary_loss_on(tape, x, target, cfg, noise))
}

/// Standard Gumbel samples for [`boundary_loss_on`], keyed by `seed`.
pub fn gumbel_noise(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng::stream(&[seed, tags::GUMBEL]);
    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    Tensor::from_fn(shape, |_| g.sample(&mut rng))
}

/// Role of a training item in the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    /// Dense synthetic label: cross-entropy and boundary loss.
    Synthetic,
    /// Real image with coarse, pseudo or fine labels: cross-entropy only.
    Real,
    /// Cross-domain mix: cross-entropy only.
    Augmented,
}

/// Per-item weights `(ce, boundary)` such that the weighted sum equals the
/// mean CE over all items plus `lambda_bd` times the mean boundary loss over
/// synthetic items.
pub fn batch_weights(kinds: &[ItemKind], cfg: &LossConfig) -> Result<Vec<(f64, f64)>> {
    if kinds.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n_syn = kinds.iter().filter(|&&k| k == ItemKind::Synthetic).count();
    let ce = 1.0 / kinds.len() as f64;
    Ok(kinds
        .iter()
        .map(|&k| {
            let bd = if k == ItemKind::Synthetic && cfg.lambda_bd != 0.0 { cfg.lambda_bd / n_syn as f64 } else { 0.0 };
            (ce, bd)
        })
        .collect())
}

/// Loss for one item with precomputed batch weights, recorded on the item's tape.
pub fn weighted_item_loss(
    tape: &mut GradTape,
    logits: Var,
    target: &LabelMask,
    noise: Option<&Tensor>,
    (ce_weight, bd_weight): (f64, f64),
    cfg: &LossConfig,
) -> Result<Var> {
    let ce = cross_entropy_on(tape, logits, target)?;
    let mut terms = vec![(ce, ce_weight)];
    if bd_weight != 0.0 {
        let noise = noise.ok_or_else(|| Error::invalid("boundary loss needs a noise sample"))?;
        let bd = boundary_loss_on(tape, logits, target, cfg, noise)?;
        terms.push((bd, bd_weight));
    }
    tape.combine(&terms)
}

/// One batch entry for [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossItem<'a> {
    pub logits: Var,
    pub target: &'a LabelMask,
    pub kind: ItemKind,
    pub noise: Option<&'a Tensor>,
}

/// Combined objective over a batch recorded on one tape.
pub fn total_loss(tape: &mut GradTape, items: &[LossItem<'_>], cfg: &LossConfig) -> Result<Var> {
    let kinds: Vec<ItemKind> = items.iter().map(|i| i.kind).collect();
    let weights = batch_weights(&kinds, cfg)?;
    let mut terms = Vec::with_capacity(items.len());
    for (item, w) in items.iter().zip(weights) {
        terms.push((weighted_item_loss(tape, item.logits, item.target, item.noise, w, cfg)?, 1.0));
    }
    tape.combine(&terms)
}
