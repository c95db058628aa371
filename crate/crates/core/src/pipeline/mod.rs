//! Pre-training, iterative pseudo-labeling and re-training, evaluation and
//! the annotation budget.

mod budget;
mod eval;
mod sweep;
mod train;

pub use budget::{budget, dataset_budget, BudgetLedger, CostModel};
pub use eval::{confusion_matrix, evaluate, iou_from_confusion, predict_multiscale, report_csv, EvalReport};
pub use sweep::{budget_sweep, sweep_csv, SweepMethod, SweepRow};
pub use train::{train, train_items, TrainOutcome};

use crate::augment::AugmentConfig;
use crate::coarsify::{coarsify, CoarsePolicy};
use crate::datagen::{generate_scene, SceneDomain, SceneSpec};
use crate::dataset::{DomainTag, Record, SceneDataset};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{ArchConfig, ModelState, SgdConfig};
use crate::pseudolabel::{pseudo_label, TTAConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    ModelBased,
    Uniform,
}

/// Index offset that keeps validation scenes disjoint from training pools.
pub const VAL_INDEX_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub n_synthetic: usize,
    pub n_val: usize,
    /// Self-training rounds after pre-training.
    pub iterations: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_power: f64,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub channels: Vec<usize>,
    pub sampling: SamplingMode,
    /// Keep the first model's class estimates for every sampling increment.
    pub freeze_sampler: bool,
    pub eval_scales: Vec<f64>,
    pub hflip: bool,
    pub augment: bool,
    /// Continue from the previous round's weights instead of re-initializing.
    pub warm_start: bool,
    pub loss: LossConfig,
    pub augment_cfg: AugmentConfig,
    pub tta: TTAConfig,
    pub coarse: CoarsePolicy,
    pub cost: CostModel,
}

impl ExperimentConfig {
    /// 64x64 scenes, 8 classes, 60 coarse + 60 synthetic, 40 val, 30 epochs.
    pub fn desk_small(seed: u64) -> Self {
        ExperimentConfig {
            scene: SceneSpec::new(seed),
            n_coarse: 60,
            n_fine: 0,
            n_synthetic: 60,
            n_val: 40,
            iterations: 3,
            epochs: 30,
            batch_size: 4,
            base_lr: 0.05,
            lr_power: 2.0,
            sgd: SgdConfig::default(),
            seed,
            channels: vec![16, 32, 64],
            sampling: SamplingMode::ModelBased,
            freeze_sampler: true,
            eval_scales: vec![0.5, 1.0, 2.0],
            hflip: true,
            augment: true,
            warm_start: false,
            loss: LossConfig { lambda_bd: 3.0, gumbel_temperature: 0.5, ..LossConfig::default() },
            augment_cfg: AugmentConfig::default(),
            tta: TTAConfig::default(),
            coarse: CoarsePolicy::default(),
            cost: CostModel::default(),
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig { channels: self.channels.clone(), ..ArchConfig::new(self.scene.num_classes) }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.arch().validate()?;
        self.loss.validate()?;
        self.augment_cfg.validate()?;
        self.tta.validate()?;
        self.coarse.validate()?;
        self.cost.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) || !(self.lr_power >= 0.0) {
            return Err(Error::invalid("base_lr must be positive and lr_power non-negative"));
        }
        if self.eval_scales.is_empty() || self.eval_scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("eval scales must be positive"));
        }
        Ok(())
    }
}

fn renamed(record: Record, id: String, tag: DomainTag) -> Record {
    Record { id, tag, ..record }
}

/// Generate the training set (coarsened real, dense real, synthetic) and a
/// dense validation set.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(SceneDataset, SceneDataset)> {
    cfg.validate()?;
    if cfg.n_coarse + cfg.n_fine + cfg.n_synthetic == 0 {
        return Err(Error::invalid("at least one labeled source must be non-empty"));
    }
    let spec = &cfg.scene;
    let mut train = SceneDataset::new(spec.num_classes);
    for i in 0..cfg.n_coarse + cfg.n_fine {
        let s = generate_scene(spec, SceneDomain::Real, i as u64)?;
        let record = if i < cfg.n_coarse {
            let label = coarsify(&s.label, &cfg.coarse, spec.seed)?;
            Record { id: s.id, tag: DomainTag::RealCoarse, image: s.image, label }
        } else {
            Record { id: s.id, tag: DomainTag::RealFine, image: s.image, label: s.label.into_manual() }
        };
        train.push(record)?;
    }
    for i in 0..cfg.n_synthetic {
        let s = generate_scene(spec, SceneDomain::Synthetic, i as u64)?;
        train.push(Record { id: s.id, tag: DomainTag::Synthetic, image: s.image, label: s.label.into_manual() })?;
    }
    let val = validation_set(spec, cfg.n_val)?;
    Ok((train, val))
}

pub fn validation_set(spec: &SceneSpec, n: usize) -> Result<SceneDataset> {
    let mut val = SceneDataset::new(spec.num_classes);
    for i in 0..n {
        let s = generate_scene(spec, SceneDomain::Real, VAL_INDEX_OFFSET + i as u64)?;
        let r = Record { id: String::new(), tag: DomainTag::RealFine, image: s.image, label: s.label };
        val.push(renamed(r, format!("val/{i}"), DomainTag::RealFine))?;
    }
    Ok(val)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub model: ModelState,
    pub report: EvalReport,
    /// Training data used in this round.
    pub data: SceneDataset,
    pub epoch_losses: Vec<f64>,
}

pub fn pretrain(data: &SceneDataset, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    train(data, cfg, cfg.seed, None)
}

/// Replace the unlabeled and previously pseudo-labeled pixels of every
/// coarse record with fresh pseudo labels from `model`.
pub fn relabel(data: &SceneDataset, model: &ModelState, tta: &TTAConfig) -> Result<SceneDataset> {
    let mut out = SceneDataset::new(data.num_classes);
    for r in &data.records {
        let mut r = r.clone();
        if r.tag == DomainTag::RealCoarse {
            r.label = pseudo_label(model, &r.image, &r.label, tta)?.merged;
        }
        out.push(r)?;
    }
    Ok(out)
}

/// Pre-train, then `cfg.iterations` rounds of pseudo-labeling the coarse
/// records and re-training. Entry 0 is the pre-trained model.
pub fn self_train(data: &SceneDataset, val: &SceneDataset, cfg: &ExperimentConfig) -> Result<Vec<IterationResult>> {
    let hours = dataset_budget(data, cfg.cost).hours;
    let mut results: Vec<IterationResult> = Vec::with_capacity(cfg.iterations + 1);
    let mut current = data.clone();
    for r in 0..=cfg.iterations {
        let init = match results.last() {
            Some(prev) => {
                current = relabel(&current, &prev.model, &cfg.tta)?;
                cfg.warm_start.then_some(&prev.model)
            }
            None => None,
        };
        let outcome = train(&current, cfg, cfg.seed, init)?;
        let mut report = evaluate(&outcome.model, val, &cfg.eval_scales)?;
        report.iteration = r;
        report.budget_hours = hours;
        results.push(IterationResult {
            model: outcome.model,
            report,
            data: current.clone(),
            epoch_losses: outcome.epoch_losses,
        });
    }
    Ok(results)
}

/// Per-epoch loss log as CSV (`iteration,epoch,loss`).
pub fn loss_csv(results: &[IterationResult]) -> String {
    let mut out = String::from("iteration,epoch,loss\n");
    for (r, it) in results.iter().enumerate() {
        for (e, l) in it.epoch_losses.iter().enumerate() {
            out.push_str(&format!("{r},{e},{l:.8}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests;
