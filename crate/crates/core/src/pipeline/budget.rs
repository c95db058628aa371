use crate::dataset::{DomainTag, SceneDataset};
use crate::error::{Error, Result};

/// Annotation minutes per image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub coarse_minutes: f64,
    pub fine_minutes: f64,
    pub synthetic_minutes: f64,
}

impl CostModel {
    /// Fine labels at 90 minutes per image.
    pub const CITYSCAPES: CostModel = CostModel { coarse_minutes: 7.0, fine_minutes: 90.0, synthetic_minutes: 0.0 };
    /// Fine labels at 75 minutes per image.
    pub const BDD: CostModel = CostModel { coarse_minutes: 7.0, fine_minutes: 75.0, synthetic_minutes: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if [self.coarse_minutes, self.fine_minutes, self.synthetic_minutes]
            .iter()
            .any(|&m| !(m >= 0.0 && m.is_finite()))
        {
            return Err(Error::invalid("annotation costs must be finite and non-negative"));
        }
        Ok(())
    }

    /// Most images of a kind that fit into `hours`.
    pub fn images_within(&self, hours: f64, minutes_per_image: f64) -> usize {
        if minutes_per_image <= 0.0 {
            return usize::MAX;
        }
        // Nudge up so that exact multiples are not lost to rounding.
        ((hours * 60.0 / minutes_per_image) + 1e-9).floor().max(0.0) as usize
    }
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::CITYSCAPES
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetLedger {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub n_synthetic: usize,
    pub cost: CostModel,
    pub hours: f64,
}

pub fn budget(n_coarse: usize, n_fine: usize, n_synthetic: usize, cost: CostModel) -> BudgetLedger {
    let minutes = n_coarse as f64 * cost.coarse_minutes
        + n_fine as f64 * cost.fine_minutes
        + n_synthetic as f64 * cost.synthetic_minutes;
    BudgetLedger { n_coarse, n_fine, n_synthetic, cost, hours: minutes / 60.0 }
}

pub fn dataset_budget(data: &SceneDataset, cost: CostModel) -> BudgetLedger {
    budget(data.count(DomainTag::RealCoarse), data.count(DomainTag::RealFine), data.count(DomainTag::Synthetic), cost)
}
