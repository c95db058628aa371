//! Flat `key = value` run configuration with namespaced keys.
//!
//! Blank lines and text after `#` are ignored. Unknown keys, repeated keys
//! and unparsable values are errors carrying the line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::datagen::SceneSpec;
use crate::error::{Error, Result};
use crate::pipeline::{ExperimentConfig, SamplingMode};
use crate::pseudolabel::Combine;

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "scene.height",
    "scene.width",
    "scene.num_classes",
    "scene.shapes_min",
    "scene.shapes_max",
    "scene.texture_amplitude",
    "scene.synthetic_noise",
    "scene.real_noise",
    "scene.real_blur",
    "scene.domain_shift",
    "scene.hue_jitter",
    "scene.paired",
    "data.n_coarse",
    "data.n_fine",
    "data.n_synthetic",
    "data.n_val",
    "model.channels",
    "train.iterations",
    "train.epochs",
    "train.batch_size",
    "train.base_lr",
    "train.lr_power",
    "train.momentum",
    "train.weight_decay",
    "train.hflip",
    "train.augment",
    "train.warm_start",
    "loss.lambda1",
    "loss.lambda2",
    "loss.boundary_threshold",
    "loss.lambda_bd",
    "loss.gumbel_temperature",
    "augment.p_select_real",
    "augment.p_class",
    "tta.scales",
    "tta.flips",
    "tta.confidence_threshold",
    "tta.combine",
    "coarsify.target_labeled_fraction",
    "coarsify.min_component_area",
    "coarsify.max_erosion_iters",
    "sampler.mode",
    "sampler.freeze",
    "eval.scales",
    "budget.coarse_minutes",
    "budget.fine_minutes",
];

/// Raw key/value pairs with the line each came from.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut pairs = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Config { line, message: format!("expected key = value, got {content:?}") })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config { line, message: format!("unknown key {key:?}") });
        }
        if pairs.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(Error::Config { line, message: format!("key {key:?} given twice") });
        }
    }
    Ok(pairs)
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config { line, message: format!("bad value {v:?} for {key}") })
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| value(line, key, s.trim())).collect()
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config { line, message: format!("bad boolean {v:?} for {key}") }),
    }
}

/// Parse a configuration on top of the desk-small defaults.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let pairs = parse_pairs(text)?;
    let get = |k: &str| pairs.get(k).map(|(l, v)| (*l, v.as_str()));

    let seed = match get("seed") {
        Some((l, v)) => value(l, "seed", v)?,
        None => 0,
    };
    let mut cfg = ExperimentConfig::desk_small(seed);
    let dims = ["scene.height", "scene.width", "scene.num_classes"];
    if dims.iter().any(|k| get(k).is_some()) {
        let mut d = [cfg.scene.height, cfg.scene.width, cfg.scene.num_classes];
        for (slot, k) in d.iter_mut().zip(dims) {
            if let Some((l, v)) = get(k) {
                *slot = value(l, k, v)?;
            }
        }
        cfg.scene = SceneSpec::with_classes(d[0], d[1], d[2], seed);
    }

    for (key, (line, v)) in &pairs {
        let (l, v, k) = (*line, v.as_str(), key.as_str());
        match k {
            "seed" | "scene.height" | "scene.width" | "scene.num_classes" => {}
            "scene.shapes_min" => cfg.scene.shapes_per_scene.0 = value(l, k, v)?,
            "scene.shapes_max" => cfg.scene.shapes_per_scene.1 = value(l, k, v)?,
            "scene.texture_amplitude" => cfg.scene.texture_amplitude = value(l, k, v)?,
            "scene.synthetic_noise" => cfg.scene.synthetic_noise = value(l, k, v)?,
            "scene.real_noise" => cfg.scene.real_noise = value(l, k, v)?,
            "scene.real_blur" => cfg.scene.real_blur = value(l, k, v)?,
            "scene.domain_shift" => cfg.scene.domain_shift = value(l, k, v)?,
            "scene.hue_jitter" => cfg.scene.hue_jitter = value(l, k, v)?,
            "scene.paired" => cfg.scene.paired = flag(l, k, v)?,
            "data.n_coarse" => cfg.n_coarse = value(l, k, v)?,
            "data.n_fine" => cfg.n_fine = value(l, k, v)?,
            "data.n_synthetic" => cfg.n_synthetic = value(l, k, v)?,
            "data.n_val" => cfg.n_val = value(l, k, v)?,
            "model.channels" => cfg.channels = list(l, k, v)?,
            "train.iterations" => cfg.iterations = value(l, k, v)?,
            "train.epochs" => cfg.epochs = value(l, k, v)?,
            "train.batch_size" => cfg.batch_size = value(l, k, v)?,
            "train.base_lr" => cfg.base_lr = value(l, k, v)?,
            "train.lr_power" => cfg.lr_power = value(l, k, v)?,
            "train.momentum" => cfg.sgd.momentum = value(l, k, v)?,
            "train.weight_decay" => cfg.sgd.weight_decay = value(l, k, v)?,
            "train.hflip" => cfg.hflip = flag(l, k, v)?,
            "train.augment" => cfg.augment = flag(l, k, v)?,
            "train.warm_start" => cfg.warm_start = flag(l, k, v)?,
            "loss.lambda1" => cfg.loss.lambda1 = value(l, k, v)?,
            "loss.lambda2" => cfg.loss.lambda2 = value(l, k, v)?,
            "loss.boundary_threshold" => cfg.loss.boundary_threshold = value(l, k, v)?,
            "loss.lambda_bd" => cfg.loss.lambda_bd = value(l, k, v)?,
            "loss.gumbel_temperature" => cfg.loss.gumbel_temperature = value(l, k, v)?,
            "augment.p_select_real" => cfg.augment_cfg.p_select_real = value(l, k, v)?,
            "augment.p_class" => cfg.augment_cfg.p_class = value(l, k, v)?,
            "tta.scales" => cfg.tta.scales = list(l, k, v)?,
            "tta.flips" => {
                cfg.tta.flips = v
                    .split(',')
                    .map(|s| match s.trim() {
                        "identity" => Ok(false),
                        "hflip" => Ok(true),
                        other => Err(Error::Config {
                            line: l,
                            message: format!("bad flip {other:?}, use identity or hflip"),
                        }),
                    })
                    .collect::<Result<_>>()?
            }
            "tta.confidence_threshold" => cfg.tta.confidence_threshold = value(l, k, v)?,
            "tta.combine" => {
                cfg.tta.combine = match v {
                    "mean-prob" => Combine::MeanProb,
                    "mean-logit" => Combine::MeanLogit,
                    _ => return Err(Error::Config { line: l, message: format!("bad combine mode {v:?}") }),
                }
            }
            "coarsify.target_labeled_fraction" => cfg.coarse.target_labeled_fraction = value(l, k, v)?,
            "coarsify.min_component_area" => cfg.coarse.min_component_area = value(l, k, v)?,
            "coarsify.max_erosion_iters" => cfg.coarse.max_erosion_iters = value(l, k, v)?,
            "sampler.mode" => {
                cfg.sampling = match v {
                    "model-based" => SamplingMode::ModelBased,
                    "uniform" => SamplingMode::Uniform,
                    _ => return Err(Error::Config { line: l, message: format!("bad sampler mode {v:?}") }),
                }
            }
            "sampler.freeze" => cfg.freeze_sampler = flag(l, k, v)?,
            "eval.scales" => cfg.eval_scales = list(l, k, v)?,
            "budget.coarse_minutes" => cfg.cost.coarse_minutes = value(l, k, v)?,
            "budget.fine_minutes" => cfg.cost.fine_minutes = value(l, k, v)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }
    cfg.validate().map_err(|e| Error::Config { line: 0, message: e.to_string() })?;
    Ok(cfg)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Every key with its resolved value; `parse(&echo(c))` reproduces `c`.
pub fn echo(cfg: &ExperimentConfig) -> String {
    let s = &cfg.scene;
    let values: Vec<String> = vec![
        cfg.seed.to_string(),
        s.height.to_string(),
        s.width.to_string(),
        s.num_classes.to_string(),
        s.shapes_per_scene.0.to_string(),
        s.shapes_per_scene.1.to_string(),
        s.texture_amplitude.to_string(),
        s.synthetic_noise.to_string(),
        s.real_noise.to_string(),
        s.real_blur.to_string(),
        s.domain_shift.to_string(),
        s.hue_jitter.to_string(),
        s.paired.to_string(),
        cfg.n_coarse.to_string(),
        cfg.n_fine.to_string(),
        cfg.n_synthetic.to_string(),
        cfg.n_val.to_string(),
        join(&cfg.channels),
        cfg.iterations.to_string(),
        cfg.epochs.to_string(),
        cfg.batch_size.to_string(),
        cfg.base_lr.to_string(),
        cfg.lr_power.to_string(),
        cfg.sgd.momentum.to_string(),
        cfg.sgd.weight_decay.to_string(),
        cfg.hflip.to_string(),
        cfg.augment.to_string(),
        cfg.warm_start.to_string(),
        cfg.loss.lambda1.to_string(),
        cfg.loss.lambda2.to_string(),
        cfg.loss.boundary_threshold.to_string(),
        cfg.loss.lambda_bd.to_string(),
        cfg.loss.gumbel_temperature.to_string(),
        cfg.augment_cfg.p_select_real.to_string(),
        cfg.augment_cfg.p_class.to_string(),
        join(&cfg.tta.scales),
        cfg.tta.flips.iter().map(|&f| if f { "hflip" } else { "identity" }).collect::<Vec<_>>().join(","),
        cfg.tta.confidence_threshold.to_string(),
        match cfg.tta.combine {
            Combine::MeanProb => "mean-prob",
            Combine::MeanLogit => "mean-logit",
        }
        .into(),
        cfg.coarse.target_labeled_fraction.to_string(),
        cfg.coarse.min_component_area.to_string(),
        cfg.coarse.max_erosion_iters.to_string(),
        match cfg.sampling {
            SamplingMode::ModelBased => "model-based",
            SamplingMode::Uniform => "uniform",
        }
        .into(),
        cfg.freeze_sampler.to_string(),
        join(&cfg.eval_scales),
        cfg.cost.coarse_minutes.to_string(),
        cfg.cost.fine_minutes.to_string(),
    ];
    let mut out = String::new();
    for (k, v) in KEYS.iter().zip(values) {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk_small(0)
    }
}
