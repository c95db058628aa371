use super::*;
use crate::label::LabelMask;
use crate::model::forward;
use crate::pseudolabel::argmax_labels;

fn tiny(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        scene: SceneSpec::with_classes(16, 16, 4, seed),
        n_coarse: 6,
        n_fine: 0,
        n_synthetic: 4,
        n_val: 4,
        iterations: 1,
        epochs: 3,
        batch_size: 4,
        channels: vec![6, 8],
        ..ExperimentConfig::desk_small(seed)
    }
}

#[test]
fn budget_arithmetic() {
    assert!((budget(8000, 0, 0, CostModel::CITYSCAPES).hours - 933.333).abs() < 1e-3);
    assert_eq!(budget(0, 2975, 0, CostModel::CITYSCAPES).hours, 4462.5);
    assert_eq!(budget(0, 0, 500, CostModel::CITYSCAPES).hours, 0.0);
    assert_eq!(budget(0, 4, 0, CostModel::BDD).hours, 5.0);
    let a = budget(3, 2, 1, CostModel::CITYSCAPES).hours;
    let b = budget(5, 1, 0, CostModel::CITYSCAPES).hours;
    assert!((budget(8, 3, 1, CostModel::CITYSCAPES).hours - (a + b)).abs() < 1e-12);
    assert_eq!(CostModel::CITYSCAPES.images_within(7.0, 7.0), 60);
    assert_eq!(CostModel::CITYSCAPES.images_within(7.0, 90.0), 4);
}

#[test]
fn iou_closed_forms() {
    // Balanced two classes, constant prediction of class 0.
    let gt = LabelMask::new(1, 4, vec![0, 0, 1, 1]).unwrap();
    let pred = LabelMask::filled(1, 4, 0);
    let mut cm = vec![vec![0; 2]; 2];
    confusion_matrix(&gt, &pred, 2, &mut cm).unwrap();
    let (ious, miou) = iou_from_confusion(&cm);
    assert_eq!(ious, vec![0.5, 0.0]);
    assert_eq!(miou, 0.25);

    let mut cm = vec![vec![0; 3]; 3];
    confusion_matrix(&gt, &gt, 3, &mut cm).unwrap();
    let (ious, miou) = iou_from_confusion(&cm);
    assert!(ious[2].is_nan());
    assert_eq!(miou, 1.0);

    let ignored = LabelMask::new(1, 4, vec![0, 255, 1, 1]).unwrap();
    let mut cm = vec![vec![0; 2]; 2];
    confusion_matrix(&ignored, &pred, 2, &mut cm).unwrap();
    assert_eq!(cm, vec![vec![1, 0], vec![2, 0]]);
    assert!(confusion_matrix(&LabelMask::filled(1, 4, 5), &pred, 2, &mut cm).is_err());
}

#[test]
fn permuting_classes_permutes_iou() {
    let cm = vec![vec![5, 1, 0], vec![2, 7, 1], vec![0, 3, 4]];
    let perm = [2, 0, 1];
    let mut pcm = vec![vec![0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            pcm[perm[i]][perm[j]] = cm[i][j];
        }
    }
    let (a, ma) = iou_from_confusion(&cm);
    let (b, mb) = iou_from_confusion(&pcm);
    for i in 0..3 {
        assert_eq!(a[i], b[perm[i]]);
    }
    assert!((ma - mb).abs() < 1e-15);
}

#[test]
fn evaluate_matches_tally() {
    let cfg = tiny(1);
    let (_, val) = prepare_data(&cfg).unwrap();
    let model = ModelState::init(cfg.arch(), 3).unwrap();
    let report = evaluate(&model, &val, &[1.0]).unwrap();
    let mut cm = vec![vec![0u64; 4]; 4];
    for r in &val.records {
        let pred = argmax_labels(&crate::tensorops::softmax(&forward(&model, &r.image).unwrap()).unwrap()).unwrap();
        for (&g, &p) in r.label.labels().iter().zip(pred.labels()) {
            cm[g as usize][p as usize] += 1;
        }
    }
    assert_eq!(report.confusion, cm);
    let gt_pixels: u64 = cm.iter().flatten().sum();
    assert_eq!(gt_pixels, 4 * 256);
}

#[test]
fn data_preparation() {
    let cfg = ExperimentConfig { n_fine: 2, ..tiny(2) };
    let (train, val) = prepare_data(&cfg).unwrap();
    assert_eq!(train.count(DomainTag::RealCoarse), 6);
    assert_eq!(train.count(DomainTag::RealFine), 2);
    assert_eq!(train.count(DomainTag::Synthetic), 4);
    assert_eq!(val.len(), 4);
    assert!(val.records.iter().all(|r| !r.label.has_ignore() && r.id.starts_with("val/")));
    assert!(train.with_tag(DomainTag::RealCoarse).all(|r| r.label.provenance().is_some()));
    let empty = ExperimentConfig { n_coarse: 0, n_synthetic: 0, ..tiny(2) };
    assert!(prepare_data(&empty).is_err());
}

#[test]
fn self_train_contract() {
    let cfg = ExperimentConfig { iterations: 2, ..tiny(4) };
    let (data, val) = prepare_data(&cfg).unwrap();
    let results = self_train(&data, &val, &cfg).unwrap();
    assert_eq!(results.len(), 3);
    let mut prev = 0.0;
    for (r, it) in results.iter().enumerate() {
        assert_eq!(it.report.iteration, r);
        assert_eq!(it.epoch_losses.len(), 3);
        let frac = it.data.mean_labeled_fraction(DomainTag::RealCoarse);
        assert!(frac >= prev);
        prev = frac;
        for (orig, now) in data.records.iter().zip(&it.data.records) {
            for (a, b) in orig.label.labels().iter().zip(now.label.labels()) {
                if *a != crate::label::IGNORE {
                    assert_eq!(a, b);
                }
            }
        }
    }
    let again = self_train(&data, &val, &cfg).unwrap();
    assert_eq!(again[2].model, results[2].model);

    let r0 = self_train(&data, &val, &ExperimentConfig { iterations: 0, ..cfg.clone() }).unwrap();
    assert_eq!(r0.len(), 1);
    assert_eq!(r0[0].model, results[0].model);
    let csv = report_csv(&results.iter().map(|r| r.report.clone()).collect::<Vec<_>>());
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("iteration,class_0,class_1,class_2,class_3,miou,budget_hours\n"));
}

#[test]
fn training_reduces_loss() {
    let mut wins = 0;
    for seed in 0..5 {
        let cfg = ExperimentConfig { n_coarse: 6, n_synthetic: 4, epochs: 5, ..tiny(seed) };
        let (data, _) = prepare_data(&cfg).unwrap();
        let out = pretrain(&data, &cfg).unwrap();
        if out.epoch_losses[4] < out.epoch_losses[0] {
            wins += 1;
        }
    }
    assert!(wins >= 3, "{wins}");
}

#[test]
fn coarse_only_training_works_without_synthetic() {
    let cfg = ExperimentConfig { n_synthetic: 0, iterations: 0, ..tiny(5) };
    let (data, val) = prepare_data(&cfg).unwrap();
    let r = self_train(&data, &val, &cfg).unwrap();
    assert!(r[0].report.miou.is_finite());
}

#[test]
fn sweep_shapes_and_nesting() {
    let cfg = ExperimentConfig { iterations: 0, epochs: 1, ..tiny(6) };
    let spec = &cfg.scene;
    let pool = crate::datagen::generate_pool(spec, 12, SceneDomain::Real).unwrap();
    let syn = crate::datagen::generate_pool(spec, 3, SceneDomain::Synthetic).unwrap();
    let val = validation_set(spec, 2).unwrap();
    let rows = budget_sweep(&pool, &syn, &val, &[0.5], &SweepMethod::DEFAULT, &cfg).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(sweep_csv(&rows).lines().count(), 3);

    let rows = budget_sweep(&pool, &syn, &val, &[0.3, 0.6, 1.2], &SweepMethod::DEFAULT, &cfg).unwrap();
    let ours: Vec<&SweepRow> = rows.iter().filter(|r| r.method == "ours").collect();
    assert_eq!(ours.iter().map(|r| r.chosen.len()).collect::<Vec<_>>(), vec![2, 5, 10]);
    for w in ours.windows(2) {
        assert!(w[0].chosen.iter().all(|id| w[1].chosen.contains(id)));
    }
    assert!(budget_sweep(&pool, &syn, &val, &[], &SweepMethod::DEFAULT, &cfg).is_err());
    assert!(budget_sweep(&pool, &syn, &val, &[1.0, 0.5], &SweepMethod::DEFAULT, &cfg).is_err());
    assert!(budget_sweep(&pool, &syn, &val, &[2.0], &SweepMethod::DEFAULT, &cfg).is_err());
    assert!(budget_sweep(&pool, &syn, &val, &[0.5], &[], &cfg).is_err());
}

#[test]
fn sweep_fine_coarse_splits_budget() {
    let cfg = ExperimentConfig {
        iterations: 0,
        epochs: 1,
        cost: CostModel { coarse_minutes: 7.0, fine_minutes: 20.0, synthetic_minutes: 0.0 },
        ..tiny(8)
    };
    let spec = &cfg.scene;
    let pool = crate::datagen::generate_pool(spec, 12, SceneDomain::Real).unwrap();
    let syn = crate::datagen::generate_pool(spec, 3, SceneDomain::Synthetic).unwrap();
    let val = validation_set(spec, 2).unwrap();
    let rows = budget_sweep(&pool, &syn, &val, &[0.6, 1.2], &[SweepMethod::FineCoarse], &cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), vec!["fine+coarse"; 2]);
    // 18 min each side at 0.6 h, 36 min at 1.2 h.
    assert_eq!(rows.iter().map(|r| r.chosen.len()).collect::<Vec<_>>(), vec![2, 6]);
    let mut ids = rows[1].chosen.clone();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 6);
    assert!(rows[0].chosen.iter().all(|id| rows[1].chosen.contains(id)));
    for m in ["fine-only", "fine+coarse", "ours"] {
        assert_eq!(SweepMethod::parse(m).unwrap().name(), m);
    }
    assert!(SweepMethod::parse("both").is_err());
}
