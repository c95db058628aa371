//! Pseudo labels for the unlabeled regions of coarse masks, accepted only
//! where flip/scale test-time augmentations agree with high confidence.

use crate::error::{Error, Result};
use crate::label::{flip_raster, Image, LabelMask, Provenance, IGNORE};
use crate::model::{forward, ModelState};
use crate::tensorops::{bilinear_resize, resize_bilinear, softmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    MeanProb,
    MeanLogit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTAConfig {
    pub flips: Vec<bool>,
    pub scales: Vec<f64>,
    pub confidence_threshold: f64,
    pub combine: Combine,
}

impl Default for TTAConfig {
    fn default() -> Self {
        TTAConfig {
            flips: vec![false, true],
            scales: vec![0.5, 1.0, 2.0],
            confidence_threshold: 0.9,
            combine: Combine::MeanProb,
        }
    }
}

impl TTAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.flips.is_empty() || self.scales.is_empty() {
            return Err(Error::invalid("TTA needs at least one flip and one scale"));
        }
        if self.scales.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!("TTA scales must be positive, got {:?}", self.scales)));
        }
        let t = self.confidence_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("confidence threshold must be in (0, 1), got {t}")));
        }
        Ok(())
    }

    pub fn combos(&self) -> impl Iterator<Item = (bool, f64)> + '_ {
        self.flips.iter().flat_map(move |&f| self.scales.iter().map(move |&s| (f, s)))
    }
}

/// Per-pixel argmax over the leading axis; ties go to the lower class.
pub fn argmax_labels(scores: &Tensor) -> Result<LabelMask> {
    let (c, h, w) = scores.dims3()?;
    if c > usize::from(IGNORE) {
        return Err(Error::shape(format!("{c} classes do not fit in a label mask")));
    }
    let d = scores.data();
    let n = h * w;
    let labels = (0..n)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if d[k * n + p] > d[best * n + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(h, w, labels)
}

/// Run the model on a flipped and rescaled copy of `image` and map the
/// output (probabilities, or logits when `probs` is false) back onto the
/// original grid.
pub fn aligned_prediction(model: &ModelState, image: &Image, flip: bool, scale: f64, probs: bool) -> Result<Tensor> {
    let (_, h, w) = image.dims3()?;
    let mut x = if flip { flip_raster(image)? } else { image.clone() };
    x = bilinear_resize(&x, scale)?;
    let mut out = forward(model, &x)?;
    if probs {
        out = softmax(&out)?;
    }
    out = resize_bilinear(&out, h, w)?;
    if flip {
        out = flip_raster(&out)?;
    }
    out.ensure_finite("aligned prediction")?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtaOutput {
    pub prob_avg: Tensor,
    pub argmax_stack: Vec<LabelMask>,
}

pub fn tta_predict(model: &ModelState, image: &Image, cfg: &TTAConfig) -> Result<TtaOutput> {
    cfg.validate()?;
    let probs = cfg.combine == Combine::MeanProb;
    let mut sum: Option<Tensor> = None;
    let mut argmax_stack = Vec::new();
    for (flip, scale) in cfg.combos() {
        let map = aligned_prediction(model, image, flip, scale, probs)?;
        argmax_stack.push(argmax_labels(&map)?);
        match &mut sum {
            Some(s) => s.add_assign(&map),
            None => sum = Some(map),
        }
    }
    let mut avg = sum.expect("validated non-empty combos");
    let k = argmax_stack.len() as f64;
    avg.data_mut().iter_mut().for_each(|v| *v /= k);
    if !probs {
        avg = softmax(&avg)?;
    }
    avg.ensure_finite("averaged prediction")?;
    Ok(TtaOutput { prob_avg: avg, argmax_stack })
}

/// Accept a pixel only when every augmentation votes for the same class and
/// the averaged confidence is strictly above the threshold.
pub fn fuse(prob_avg: &Tensor, argmax_stack: &[LabelMask], cfg: &TTAConfig) -> Result<LabelMask> {
    let (c, h, w) = prob_avg.dims3()?;
    if argmax_stack.iter().any(|m| m.height() != h || m.width() != w) {
        return Err(Error::shape("argmax maps and probability map differ in size"));
    }
    let best = argmax_labels(prob_avg)?;
    let n = h * w;
    let d = prob_avg.data();
    let labels = (0..n)
        .map(|p| {
            let k = best.labels()[p];
            let agree = match argmax_stack.split_first() {
                Some((first, rest)) => rest.iter().all(|m| m.labels()[p] == first.labels()[p]),
                None => true,
            };
            let conf = d[usize::from(k) * n + p];
            if agree && c > 0 && conf > cfg.confidence_threshold {
                k
            } else {
                IGNORE
            }
        })
        .collect();
    LabelMask::new(h, w, labels)
}

/// Keep manual pixels; every other pixel takes the new pseudo label, so
/// labels from a previous round are replaced rather than accumulated.
pub fn merge(coarse: &LabelMask, pseudo: &LabelMask) -> Result<LabelMask> {
    let prov = coarse.provenance().ok_or_else(|| Error::invalid("merge needs a coarse mask with provenance"))?;
    if (coarse.height(), coarse.width()) != (pseudo.height(), pseudo.width()) {
        return Err(Error::shape("coarse and pseudo masks differ in size"));
    }
    let mut labels = Vec::with_capacity(coarse.len());
    let mut flags = Vec::with_capacity(coarse.len());
    for ((&l, &pv), &ps) in coarse.labels().iter().zip(prov).zip(pseudo.labels()) {
        let (label, flag) = match pv {
            Provenance::Manual => (l, Provenance::Manual),
            _ if ps == IGNORE => (IGNORE, Provenance::Ignore),
            _ => (ps, Provenance::Pseudo),
        };
        labels.push(label);
        flags.push(flag);
    }
    LabelMask::new(coarse.height(), coarse.width(), labels)?.with_provenance(flags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelResult {
    /// Fused TTA labels, IGNORE where rejected.
    pub label: LabelMask,
    pub accepted_fraction: f64,
    pub argmax_stack: Vec<LabelMask>,
    /// `coarse` merged with `label`.
    pub merged: LabelMask,
}

pub fn pseudo_label(
    model: &ModelState,
    image: &Image,
    coarse: &LabelMask,
    cfg: &TTAConfig,
) -> Result<PseudoLabelResult> {
    let tta = tta_predict(model, image, cfg)?;
    let label = fuse(&tta.prob_avg, &tta.argmax_stack, cfg)?;
    let accepted_fraction = label.labeled_count() as f64 / label.len().max(1) as f64;
    let merged = merge(coarse, &label)?;
    Ok(PseudoLabelResult { label, accepted_fraction, argmax_stack: tta.argmax_stack, merged })
}
