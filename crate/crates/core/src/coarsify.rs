//! Simulated coarse annotation: per-class erosion of a dense mask leaving an
//! IGNORE band along every class boundary.

use crate::error::{Error, Result};
use crate::label::{LabelMask, IGNORE};

#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePolicy {
    pub target_labeled_fraction: f64,
    /// Components smaller than this many pixels are dropped to IGNORE.
    pub min_component_area: usize,
    pub max_erosion_iters: usize,
}

impl Default for CoarsePolicy {
    fn default() -> Self {
        CoarsePolicy { target_labeled_fraction: 0.63, min_component_area: 16, max_erosion_iters: 8 }
    }
}

impl CoarsePolicy {
    pub fn validate(&self) -> Result<()> {
        let t = self.target_labeled_fraction;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::invalid(format!("target labeled fraction must be in (0, 1], got {t}")));
        }
        Ok(())
    }
}

/// Fraction of pixels that carry a label.
pub fn labeled_fraction(label: &LabelMask) -> f64 {
    if label.is_empty() {
        0.0
    } else {
        label.labeled_count() as f64 / label.len() as f64
    }
}

/// One erosion step with a 3x3 cross. Pixels outside the frame count as
/// non-members, so regions also shrink away from the image border.
fn erode(labels: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = labels.to_vec();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == IGNORE {
                continue;
            }
            let keep = y > 0
                && y + 1 < h
                && x > 0
                && x + 1 < w
                && labels[(y - 1) * w + x] == l
                && labels[(y + 1) * w + x] == l
                && labels[y * w + x - 1] == l
                && labels[y * w + x + 1] == l;
            if !keep {
                out[y * w + x] = IGNORE;
            }
        }
    }
    out
}

/// Drop 4-connected same-class components smaller than `min_area`.
fn drop_small_components(labels: &mut [u8], h: usize, w: usize, min_area: usize) {
    if min_area <= 1 {
        return;
    }
    let mut seen = vec![false; labels.len()];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..labels.len() {
        let class = labels[start];
        if class == IGNORE || seen[start] {
            continue;
        }
        component.clear();
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            component.push(p);
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !seen[q] && labels[q] == class {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        if component.len() < min_area {
            for &p in &component {
                labels[p] = IGNORE;
            }
        }
    }
}

/// Erode `iters` times and drop small components.
fn coarsen(label: &LabelMask, iters: usize, min_area: usize) -> Vec<u8> {
    let (h, w) = (label.height(), label.width());
    let mut labels = label.labels().to_vec();
    for _ in 0..iters {
        labels = erode(&labels, h, w);
    }
    drop_small_components(&mut labels, h, w, min_area);
    labels
}

/// Erosion count in `0..=max_erosion_iters` whose labeled fraction is nearest
/// the target: binary search for the first count at or below the target
/// (fraction is non-increasing in the count), then compare with its
/// predecessor. Falls back to the maximum when the target is unreachable.
fn search(label: &LabelMask, policy: &CoarsePolicy) -> (Vec<u8>, usize) {
    let n = label.len().max(1) as f64;
    let fraction = |labels: &[u8]| labels.iter().filter(|&&l| l != IGNORE).count() as f64 / n;
    let (mut lo, mut hi) = (0usize, policy.max_erosion_iters);
    let mut best = coarsen(label, hi, policy.min_component_area);
    if fraction(&best) > policy.target_labeled_fraction {
        return (best, hi);
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        let candidate = coarsen(label, mid, policy.min_component_area);
        if fraction(&candidate) <= policy.target_labeled_fraction {
            hi = mid;
            best = candidate;
        } else {
            lo = mid + 1;
        }
    }
    // Erosion is quantized; step back once if that lands closer to the target.
    if hi > 0 {
        let previous = coarsen(label, hi - 1, policy.min_component_area);
        let t = policy.target_labeled_fraction;
        if fraction(&previous) - t < t - fraction(&best) {
            return (previous, hi - 1);
        }
    }
    (best, hi)
}

/// Coarsen a dense mask by uniform per-class erosion. Every surviving pixel
/// keeps its original class and is flagged as a manual label.
pub fn coarsify(label: &LabelMask, policy: &CoarsePolicy, seed: u64) -> Result<LabelMask> {
    // The procedure is deterministic; the seed is accepted for interface stability.
    let _ = seed;
    policy.validate()?;
    if label.has_ignore() {
        return Err(Error::invalid("coarsify expects a dense label mask"));
    }
    let (labels, _) = search(label, policy);
    LabelMask::new(label.height(), label.width(), labels).map(LabelMask::into_manual)
}
