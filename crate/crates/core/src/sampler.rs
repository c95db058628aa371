//! Incremental choice of which pool images to annotate next, balancing the
//! predicted class coverage of the chosen set.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::SceneDataset;
use crate::error::{Error, Result};
use crate::model::{forward, ModelState};
use crate::pseudolabel::argmax_labels;

/// Per-image predicted class counts, rows in `ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub ids: Vec<String>,
    pub counts: Vec<Vec<f64>>,
}

impl ClassDistribution {
    pub fn num_classes(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    /// Replace counts by 0/1 presence.
    pub fn to_presence(&self) -> Self {
        ClassDistribution {
            ids: self.ids.clone(),
            counts: self.counts.iter().map(|r| r.iter().map(|&v| f64::from(u8::from(v > 0.0))).collect()).collect(),
        }
    }

    fn row(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|i| i == id).map(|p| self.counts[p].as_slice())
    }
}

/// Predicted pixel count per class for every record, from a single-scale
/// argmax prediction.
pub fn estimate_distribution(model: &ModelState, pool: &SceneDataset) -> Result<ClassDistribution> {
    if pool.is_empty() {
        return Err(Error::invalid("cannot estimate the class distribution of an empty pool"));
    }
    let c = model.arch.num_classes;
    let mut counts = Vec::with_capacity(pool.len());
    for r in &pool.records {
        let pred = argmax_labels(&forward(model, &r.image)?)?;
        counts.push(pred.class_histogram(c).into_iter().map(|v| v as f64).collect());
    }
    Ok(ClassDistribution { ids: pool.records.iter().map(|r| r.id.clone()).collect(), counts })
}

/// Order ids by their text before the last `/`, then by the numeric suffix
/// when both have one.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        match s.rsplit_once('/') {
            Some((head, tail)) => (head, tail.parse().ok()),
            None => ("", s.parse().ok()),
        }
    }
    let ((ha, na), (hb, nb)) = (split(a), split(b));
    ha.cmp(hb)
        .then_with(|| match (na, nb) {
            (Some(x), Some(y)) => x.cmp(&y),
            _ => Ordering::Equal,
        })
        .then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    /// Ids in the order they were chosen.
    pub chosen: Vec<String>,
    /// Ids not chosen yet.
    pub pool: Vec<String>,
    pub distribution: ClassDistribution,
}

impl SamplerState {
    pub fn new(pool: Vec<String>, distribution: ClassDistribution) -> Result<Self> {
        let mut pool = pool;
        pool.sort_by(|a, b| compare_ids(a, b));
        if pool.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("sampler pool has duplicate ids"));
        }
        Ok(SamplerState { chosen: Vec::new(), pool, distribution })
    }

    /// Swap in a fresh distribution estimate (e.g. from a newer model).
    pub fn refresh(&mut self, distribution: ClassDistribution) {
        self.distribution = distribution;
    }

    /// Sum of predicted counts over the chosen images, per class.
    pub fn coverage(&self) -> Vec<f64> {
        let mut cov = vec![0.0; self.distribution.num_classes()];
        for id in &self.chosen {
            if let Some(row) = self.distribution.row(id) {
                cov.iter_mut().zip(row).for_each(|(c, v)| *c += v);
            }
        }
        cov
    }

    fn take(&mut self, id: &str) {
        let p = self.pool.iter().position(|i| i == id).expect("id is in the pool");
        self.chosen.push(self.pool.remove(p));
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.pool.len() {
            return Err(Error::invalid(format!("asked for {k} images but only {} remain", self.pool.len())));
        }
        Ok(())
    }
}

/// Pick `k` images. Classes take turns in rounds; each round visits the
/// classes in ascending order of current coverage, and each turn takes the
/// remaining image with the largest predicted count for that class. Ties go
/// to the smallest id.
pub fn select_next(state: &mut SamplerState, k: usize) -> Result<Vec<String>> {
    state.check_k(k)?;
    let c = state.distribution.num_classes();
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        let cov = state.coverage();
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| cov[a].total_cmp(&cov[b]).then(a.cmp(&b)));
        if order.is_empty() {
            order.push(0);
        }
        for class in order {
            if picked.len() == k {
                break;
            }
            // The pool is kept sorted by id, so the first maximum wins ties.
            let mut best: Option<(&String, f64)> = None;
            for id in &state.pool {
                let v = state.distribution.row(id).and_then(|r| r.get(class).copied()).unwrap_or(0.0);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((id, v));
                }
            }
            let id = best.expect("pool is non-empty while picks remain").0.clone();
            state.take(&id);
            picked.push(id);
        }
    }
    Ok(picked)
}

/// Pick `k` images uniformly at random without replacement.
pub fn uniform_select<R: Rng>(state: &mut SamplerState, k: usize, rng: &mut R) -> Result<Vec<String>> {
    state.check_k(k)?;
    let mut idx: Vec<usize> = (0..state.pool.len()).collect();
    idx.shuffle(rng);
    let picked: Vec<String> = idx[..k].iter().map(|&i| state.pool[i].clone()).collect();
    for id in &picked {
        state.take(id);
    }
    Ok(picked)
}
