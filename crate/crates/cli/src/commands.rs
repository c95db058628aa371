use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use c2f_core::coarsify::coarsify as coarsen;
use c2f_core::config;
use c2f_core::container::{self, Violation};
use c2f_core::dataset::{DomainTag, Record, SceneDataset};
use c2f_core::label::IGNORE;
use c2f_core::model::{read_checkpoint, write_checkpoint, ModelState};
use c2f_core::pipeline::{
    self, budget_sweep, dataset_budget, evaluate as eval_model, loss_csv, report_csv, self_train, sweep_csv,
    ExperimentConfig, SamplingMode, SweepMethod,
};
use c2f_core::pseudolabel::pseudo_label;
use c2f_core::rng::{self, tags};
use c2f_core::sampler::{estimate_distribution, select_next, uniform_select, ClassDistribution, SamplerState};

/// Container check failures, reported after listing them.
#[derive(Debug)]
pub struct Violations(pub usize);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violations", self.0)
    }
}

impl std::error::Error for Violations {}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(config::parse(&text).with_context(|| format!("in config {}", p.display()))?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_data(path: &Path) -> Result<SceneDataset> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    container::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn save_data(data: &SceneDataset, path: &Path) -> Result<()> {
    let bytes = container::to_bytes(data)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_checkpoint(bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))
}

fn save_model(model: &ModelState, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn write_ids(ids: &[String], path: &Path) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_stats(data: &SceneDataset) {
    for tag in [DomainTag::Synthetic, DomainTag::RealCoarse, DomainTag::RealFine] {
        let n = data.count(tag);
        if n == 0 {
            continue;
        }
        let mut hist = vec![0u64; data.num_classes];
        let mut ignored = 0u64;
        for r in data.with_tag(tag) {
            for &l in r.label.labels() {
                if l == IGNORE {
                    ignored += 1;
                } else {
                    hist[usize::from(l)] += 1;
                }
            }
        }
        let total: u64 = hist.iter().sum::<u64>() + ignored;
        let shares: Vec<String> = hist.iter().map(|&c| format!("{:.4}", c as f64 / total.max(1) as f64)).collect();
        println!(
            "{:<12} {n:>5} images  ignore {:.4}  classes [{}]",
            tag.name(),
            ignored as f64 / total.max(1) as f64,
            shares.join(" ")
        );
    }
}

pub fn generate(config: Option<&Path>, out: &Path, val: Option<&Path>, dense: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let cfg = if dense { ExperimentConfig { n_coarse: 0, n_fine: cfg.n_coarse + cfg.n_fine, ..cfg } } else { cfg };
    let (train, val_set) = pipeline::prepare_data(&cfg)?;
    save_data(&train, out)?;
    print_stats(&train);
    if let Some(path) = val {
        save_data(&val_set, path)?;
        println!("validation  {:>5} images", val_set.len());
    }
    Ok(())
}

pub fn coarsify(config: Option<&Path>, input: &Path, out: &Path, ids: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let data = load_data(input)?;
    let wanted = ids.map(read_ids).transpose()?;
    if let Some(ids) = &wanted {
        if let Some(missing) = ids.iter().find(|id| data.get(id).is_none_or(|r| r.tag != DomainTag::RealFine)) {
            bail!(c2f_core::Error::InvalidArgument(format!(
                "id {missing} is not a dense real record of {}",
                input.display()
            )));
        }
    }
    let mut result = SceneDataset::new(data.num_classes);
    let mut converted = 0;
    for r in data.records {
        let record = match (&wanted, r.tag) {
            (_, DomainTag::RealFine) if wanted.as_ref().is_none_or(|ids| ids.contains(&r.id)) => {
                converted += 1;
                let label = coarsen(&r.label, &cfg.coarse, cfg.seed)?;
                Record { tag: DomainTag::RealCoarse, label, ..r }
            }
            (Some(_), DomainTag::RealFine) => continue,
            _ => r,
        };
        result.push(record)?;
    }
    save_data(&result, out)?;
    println!(
        "coarsified {converted} records, mean labeled fraction {:.4}",
        result.mean_labeled_fraction(DomainTag::RealCoarse)
    );
    Ok(())
}

pub fn pseudolabel(config: Option<&Path>, model: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let model = load_model(model)?;
    let data = load_data(input)?;
    let before = data.mean_labeled_fraction(DomainTag::RealCoarse);
    let mut result = SceneDataset::new(data.num_classes);
    let mut accepted = Vec::new();
    for r in data.records {
        let r = if r.tag == DomainTag::RealCoarse {
            let p = pseudo_label(&model, &r.image, &r.label, &cfg.tta)?;
            accepted.push(p.accepted_fraction);
            Record { label: p.merged, ..r }
        } else {
            r
        };
        result.push(r)?;
    }
    save_data(&result, out)?;
    let mean_accept = accepted.iter().sum::<f64>() / accepted.len().max(1) as f64;
    println!(
        "{} coarse records, TTA accepted {mean_accept:.4}, labeled fraction {before:.4} -> {:.4}",
        accepted.len(),
        result.mean_labeled_fraction(DomainTag::RealCoarse)
    );
    Ok(())
}

pub fn sample(
    config: Option<&Path>,
    input: &Path,
    k: usize,
    out: &Path,
    model: Option<&Path>,
    chosen: Option<&Path>,
    mode: Option<&str>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let data = load_data(input)?;
    let mut pool = SceneDataset::new(data.num_classes);
    for r in data.records.into_iter().filter(|r| r.tag != DomainTag::Synthetic) {
        pool.push(r)?;
    }
    if pool.is_empty() {
        bail!(c2f_core::Error::InvalidArgument(format!("{} has no real records", input.display())));
    }
    let already = chosen.map(read_ids).transpose()?.unwrap_or_default();
    let mode = match mode {
        Some("uniform") => SamplingMode::Uniform,
        Some(_) => SamplingMode::ModelBased,
        None => cfg.sampling,
    };
    let distribution = match (mode, model) {
        (SamplingMode::ModelBased, Some(path)) => estimate_distribution(&load_model(path)?, &pool)?,
        (SamplingMode::ModelBased, None) => {
            bail!(c2f_core::Error::InvalidArgument("model-based sampling needs --model".into()))
        }
        (SamplingMode::Uniform, _) => ClassDistribution {
            ids: pool.records.iter().map(|r| r.id.clone()).collect(),
            counts: vec![vec![0.0]; pool.len()],
        },
    };
    let mut state = SamplerState::new(pool.records.iter().map(|r| r.id.clone()).collect(), distribution)?;
    for id in &already {
        let Some(p) = state.pool.iter().position(|x| x == id) else {
            bail!(c2f_core::Error::InvalidArgument(format!("chosen id {id} is not in the pool")));
        };
        state.chosen.push(state.pool.remove(p));
    }
    let picked = match mode {
        SamplingMode::ModelBased => select_next(&mut state, k)?,
        SamplingMode::Uniform => {
            let mut rng = rng::stream(&[cfg.seed, tags::SAMPLER, already.len() as u64]);
            uniform_select(&mut state, k, &mut rng)?
        }
    };
    write_ids(&state.chosen, out)?;
    println!("picked {} ids, {} chosen in total", picked.len(), state.chosen.len());
    Ok(())
}

pub fn selftrain(config: Option<&Path>, data: &Path, val: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let train = load_data(data)?;
    let val = load_data(val)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), config::echo(&cfg)).context("writing config echo")?;
    let ledger = dataset_budget(&train, cfg.cost);
    println!(
        "training on {} coarse, {} fine, {} synthetic ({:.1} annotation hours)",
        ledger.n_coarse, ledger.n_fine, ledger.n_synthetic, ledger.hours
    );
    let results = self_train(&train, &val, &cfg)?;
    for (r, it) in results.iter().enumerate() {
        save_model(&it.model, &out.join(format!("iteration_{r}.ckpt")))?;
        save_data(&it.data, &out.join(format!("labels_{r}.c2fd")))?;
        println!(
            "iteration {r}: mIoU {:.4}, coarse labeled fraction {:.4}",
            it.report.miou,
            it.data.mean_labeled_fraction(DomainTag::RealCoarse)
        );
    }
    let reports: Vec<_> = results.iter().map(|r| r.report.clone()).collect();
    fs::write(out.join("report.csv"), report_csv(&reports)).context("writing report.csv")?;
    fs::write(out.join("loss.csv"), loss_csv(&results)).context("writing loss.csv")?;
    Ok(())
}

pub fn evaluate(config: Option<&Path>, model: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let model = load_model(model)?;
    let data = load_data(data)?;
    let report = eval_model(&model, &data, &cfg.eval_scales)?;
    let csv = report_csv(&[report]);
    match out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn sweep(
    config: Option<&Path>,
    pool: &Path,
    val: &Path,
    grid: &[f64],
    methods: &[String],
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let methods = methods.iter().map(|m| SweepMethod::parse(m)).collect::<c2f_core::Result<Vec<_>>>()?;
    let data = load_data(pool)?;
    let val = load_data(val)?;
    let mut real = SceneDataset::new(data.num_classes);
    let mut synthetic = SceneDataset::new(data.num_classes);
    for r in data.records {
        match r.tag {
            DomainTag::Synthetic => synthetic.push(r)?,
            _ => real.push(r)?,
        }
    }
    let rows = budget_sweep(&real, &synthetic, &val, grid, &methods, &cfg)?;
    fs::write(out, sweep_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
    for r in &rows {
        println!("{:>8.2} h  {:<11} mIoU {:.4}", r.budget_hours, r.method, r.miou);
    }
    Ok(())
}

fn sequence_checks(path: &Path, prev: &SceneDataset, cur: &SceneDataset, found: &mut Vec<Violation>) {
    let flag = |id: &str, message: String| Violation { record: Some(id.to_string()), offset: 0, message };
    let (a, b) = (prev.mean_labeled_fraction(DomainTag::RealCoarse), cur.mean_labeled_fraction(DomainTag::RealCoarse));
    if b < a {
        found.push(Violation {
            record: None,
            offset: 0,
            message: format!("{}: coarse labeled fraction fell from {a:.6} to {b:.6}", path.display()),
        });
    }
    for r in prev.with_tag(DomainTag::RealCoarse) {
        let Some(next) = cur.get(&r.id) else {
            found.push(flag(&r.id, format!("missing from {}", path.display())));
            continue;
        };
        let manual = r.label.provenance().unwrap_or_default();
        let changed = manual
            .iter()
            .zip(r.label.labels().iter().zip(next.label.labels()))
            .any(|(p, (x, y))| *p == c2f_core::label::Provenance::Manual && x != y);
        if changed || r.label.labels().len() != next.label.labels().len() {
            found.push(flag(&r.id, format!("manual labels changed in {}", path.display())));
        }
    }
}

pub fn verify(files: &[std::path::PathBuf], sequence: bool) -> Result<()> {
    let mut total = 0;
    let mut previous: Option<SceneDataset> = None;
    for path in files {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let mut found = container::verify(&bytes);
        let parsed = if found.is_empty() { container::from_bytes(&bytes).ok() } else { None };
        if let (true, Some(prev), Some(cur)) = (sequence, &previous, &parsed) {
            sequence_checks(path, prev, cur, &mut found);
        }
        for v in &found {
            println!("{}: {v}", path.display());
        }
        total += found.len();
        previous = parsed;
    }
    println!("{total} violations");
    if total > 0 {
        return Err(Violations(total).into());
    }
    Ok(())
}
