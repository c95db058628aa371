use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::{evaluate, self_train, train, ExperimentConfig, SamplingMode};
use crate::coarsify::coarsify;
use crate::dataset::{DomainTag, Record, SceneDataset};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::rng::{self, tags};
use crate::sampler::{estimate_distribution, select_next, uniform_select, ClassDistribution, SamplerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMethod {
    /// Dense labels only.
    FineOnly,
    /// Half the budget on coarse labels for pretraining, half on dense labels for fine-tuning.
    FineCoarse,
    /// Coarse labels plus synthetic data, self-trained.
    Ours,
}

impl SweepMethod {
    pub const DEFAULT: [SweepMethod; 2] = [SweepMethod::FineOnly, SweepMethod::Ours];

    pub fn name(self) -> &'static str {
        match self {
            SweepMethod::FineOnly => "fine-only",
            SweepMethod::FineCoarse => "fine+coarse",
            SweepMethod::Ours => "ours",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fine-only" => Ok(SweepMethod::FineOnly),
            "fine+coarse" => Ok(SweepMethod::FineCoarse),
            "ours" => Ok(SweepMethod::Ours),
            _ => Err(Error::invalid(format!("unknown sweep method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget_hours: f64,
    pub method: String,
    pub miou: f64,
    /// Ids annotated at this budget point.
    pub chosen: Vec<String>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("budget_hours,method,miou\n");
    for r in rows {
        let _ = writeln!(out, "{:.4},{},{:.6}", r.budget_hours, r.method, r.miou);
    }
    out
}

fn pick(pool: &SceneDataset, ids: &[String]) -> Result<Vec<Record>> {
    ids.iter()
        .map(|id| pool.get(id).cloned().ok_or_else(|| Error::invalid(format!("id {id} is not in the pool"))))
        .collect()
}

fn uniform_distribution(pool: &SceneDataset) -> ClassDistribution {
    ClassDistribution { ids: pool.records.iter().map(|r| r.id.clone()).collect(), counts: vec![vec![0.0]; pool.len()] }
}

fn tagged(pool: &SceneDataset, ids: &[String], tag: DomainTag, cfg: &ExperimentConfig) -> Result<SceneDataset> {
    let mut out = SceneDataset::new(pool.num_classes);
    for r in pick(pool, ids)? {
        let label = match tag {
            DomainTag::RealCoarse => coarsify(&r.label, &cfg.coarse, cfg.seed)?,
            _ => r.label.clone().into_manual(),
        };
        out.push(Record { tag, label, ..r })?;
    }
    Ok(out)
}

/// Run each of `methods` at every budget point of an ascending grid of
/// hours. Every method grows nested chosen sets drawn from the dense real
/// `pool`: the baselines by one seeded uniform order (fine+coarse takes its
/// coarse images from the far end), ours by the configured sampler.
pub fn budget_sweep(
    pool: &SceneDataset,
    synthetic: &SceneDataset,
    val: &SceneDataset,
    grid: &[f64],
    methods: &[SweepMethod],
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::invalid("budget grid is empty"));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no sweep methods given"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid[0] < 0.0 {
        return Err(Error::invalid("budget grid must be non-negative and strictly ascending"));
    }
    if let Some(r) = pool.records.iter().find(|r| r.label.has_ignore()) {
        return Err(Error::invalid(format!("pool record {} is not densely labeled", r.id)));
    }
    let mut rows = Vec::new();

    let mut fine_order: Vec<String> = pool.records.iter().map(|r| r.id.clone()).collect();
    fine_order.shuffle(&mut rng::stream(&[cfg.seed, tags::SAMPLER, 1]));

    let mut sampler = SamplerState::new(fine_order.clone(), uniform_distribution(pool))?;
    let mut sampler_rng = rng::stream(&[cfg.seed, tags::SAMPLER, 2]);
    let mut first_model: Option<ModelState> = None;
    let mut last_model: Option<ModelState> = None;

    for &hours in grid {
        for &method in methods {
            let row = match method {
                SweepMethod::FineOnly => {
                    let n_fine = cfg.cost.images_within(hours, cfg.cost.fine_minutes).min(pool.len());
                    let ids = fine_order[..n_fine].to_vec();
                    let model = train(&tagged(pool, &ids, DomainTag::RealFine, cfg)?, cfg, cfg.seed, None)?.model;
                    SweepRow {
                        budget_hours: hours,
                        method: method.name().into(),
                        miou: evaluate(&model, val, &cfg.eval_scales)?.miou,
                        chosen: ids,
                    }
                }
                SweepMethod::FineCoarse => {
                    let n_fine = cfg.cost.images_within(hours / 2.0, cfg.cost.fine_minutes);
                    let n_coarse = cfg.cost.images_within(hours / 2.0, cfg.cost.coarse_minutes);
                    if n_fine + n_coarse > pool.len() {
                        return Err(Error::invalid(format!(
                            "{hours} h needs {} images but the pool has {}",
                            n_fine + n_coarse,
                            pool.len()
                        )));
                    }
                    let fine_ids = fine_order[..n_fine].to_vec();
                    let coarse_ids: Vec<String> = fine_order.iter().rev().take(n_coarse).cloned().collect();
                    let pre =
                        train(&tagged(pool, &coarse_ids, DomainTag::RealCoarse, cfg)?, cfg, cfg.seed, None)?.model;
                    let model = if n_fine > 0 {
                        train(&tagged(pool, &fine_ids, DomainTag::RealFine, cfg)?, cfg, cfg.seed, Some(&pre))?.model
                    } else {
                        pre
                    };
                    let mut chosen = coarse_ids;
                    chosen.extend(fine_ids);
                    SweepRow {
                        budget_hours: hours,
                        method: method.name().into(),
                        miou: evaluate(&model, val, &cfg.eval_scales)?.miou,
                        chosen,
                    }
                }
                SweepMethod::Ours => {
                    let n_coarse = cfg.cost.images_within(hours, cfg.cost.coarse_minutes);
                    if n_coarse > pool.len() {
                        return Err(Error::invalid(format!(
                            "{hours} h needs {n_coarse} images but the pool has {}",
                            pool.len()
                        )));
                    }
                    let need = n_coarse - sampler.chosen.len();
                    match (cfg.sampling, &last_model) {
                        (SamplingMode::ModelBased, Some(latest)) => {
                            let estimator =
                                if cfg.freeze_sampler { first_model.as_ref().unwrap_or(latest) } else { latest };
                            sampler.refresh(estimate_distribution(estimator, pool)?);
                            select_next(&mut sampler, need)?;
                        }
                        _ => {
                            uniform_select(&mut sampler, need, &mut sampler_rng)?;
                        }
                    }
                    let mut data = tagged(pool, &sampler.chosen, DomainTag::RealCoarse, cfg)?;
                    for r in synthetic.with_tag(DomainTag::Synthetic) {
                        data.push(r.clone())?;
                    }
                    let results = self_train(&data, val, cfg)?;
                    let last = results.into_iter().last().expect("self_train returns at least one round");
                    if first_model.is_none() {
                        first_model = Some(last.model.clone());
                    }
                    let miou = last.report.miou;
                    last_model = Some(last.model);
                    SweepRow { budget_hours: hours, method: method.name().into(), miou, chosen: sampler.chosen.clone() }
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}
