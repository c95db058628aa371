//! Cross-domain augmentation: class regions cut from a synthetic scene are
//! pasted onto a real coarse scene.

use rand::Rng;

use crate::dataset::{DomainTag, SceneDataset};
use crate::error::{Error, Result};
use crate::label::{BinaryMask, Image, LabelMask, Provenance, IGNORE};
use crate::losses::ItemKind;
use crate::rng::{self, tags};
use crate::tensorops::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Probability that a real batch item gets an augmented twin.
    pub p_select_real: f64,
    /// Per-class inclusion probability for the paste mask.
    pub p_class: f64,
    pub stream: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { p_select_real: 0.5, p_class: 0.5, stream: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (p, name) in [(self.p_select_real, "p_select_real"), (self.p_class, "p_class")] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// One image/label pair as seen by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub image: Image,
    pub label: LabelMask,
    pub kind: ItemKind,
}

/// Mask of pixels whose synthetic class falls in a random subset of the
/// classes present (each kept independently with `p_class`, visited in
/// ascending class order). IGNORE pixels are never selected.
pub fn build_paste_mask<R: Rng>(synthetic_label: &LabelMask, cfg: &AugmentConfig, rng: &mut R) -> Result<BinaryMask> {
    cfg.validate()?;
    let mut present = [false; 256];
    for &l in synthetic_label.labels() {
        present[usize::from(l)] = true;
    }
    present[usize::from(IGNORE)] = false;
    let mut selected = [false; 256];
    for (c, _) in present.iter().enumerate().filter(|(_, &p)| p) {
        selected[c] = rng.random_bool(cfg.p_class);
    }
    Ok(BinaryMask {
        height: synthetic_label.height(),
        width: synthetic_label.width(),
        bits: synthetic_label.labels().iter().map(|&l| selected[usize::from(l)]).collect(),
    })
}

/// Per-pixel select: where `mask` is set, image and label come from
/// `pasted`; elsewhere from `base`. Provenance follows the source pixel.
pub fn mix(base: &TrainItem, pasted: &TrainItem, mask: &BinaryMask) -> Result<TrainItem> {
    let (h, w) = (base.label.height(), base.label.width());
    if pasted.label.height() != h
        || pasted.label.width() != w
        || mask.height != h
        || mask.width != w
        || base.image.shape() != pasted.image.shape()
    {
        return Err(Error::shape(format!("cannot mix {} with {}: sizes differ", base.id, pasted.id)));
    }
    let n = h * w;
    let (bi, pi) = (base.image.data(), pasted.image.data());
    let image = Tensor::from_fn(base.image.shape(), |i| if mask.bits[i % n] { pi[i] } else { bi[i] });
    let labels: Vec<u8> =
        (0..n).map(|p| if mask.bits[p] { pasted.label.labels()[p] } else { base.label.labels()[p] }).collect();
    let mut label = LabelMask::new(h, w, labels)?;
    let prov_of = |item: &TrainItem, p: usize| match item.label.provenance() {
        Some(pr) => pr[p],
        None if item.label.labels()[p] == IGNORE => Provenance::Ignore,
        None => Provenance::Manual,
    };
    if base.label.provenance().is_some() || pasted.label.provenance().is_some() {
        let prov = (0..n).map(|p| if mask.bits[p] { prov_of(pasted, p) } else { prov_of(base, p) }).collect();
        label = label.with_provenance(prov)?;
    }
    Ok(TrainItem { id: format!("{}+{}", base.id, pasted.id), image, label, kind: ItemKind::Augmented })
}

/// Center crop or pad (image zeros, label IGNORE) to `h x w`.
fn fit_to(item: &TrainItem, h: usize, w: usize) -> Result<TrainItem> {
    let (ih, iw) = (item.label.height(), item.label.width());
    if (ih, iw) == (h, w) {
        return Ok(item.clone());
    }
    let (c, _, _) = item.image.dims3()?;
    let offset = |from: usize, to: usize| from as isize / 2 - to as isize / 2;
    let (oy, ox) = (offset(ih, h), offset(iw, w));
    let src = |y: usize, x: usize| {
        let (sy, sx) = (y as isize + oy, x as isize + ox);
        (sy >= 0 && sx >= 0 && (sy as usize) < ih && (sx as usize) < iw).then(|| sy as usize * iw + sx as usize)
    };
    let img = item.image.data();
    let image = Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        src(y, x).map_or(0.0, |p| img[ch * ih * iw + p])
    });
    let labels = (0..h * w).map(|i| src(i / w, i % w).map_or(IGNORE, |p| item.label.labels()[p])).collect();
    Ok(TrainItem { id: item.id.clone(), image, label: LabelMask::new(h, w, labels)?, kind: item.kind })
}

/// Give each real item an augmented twin with probability `p_select_real`,
/// mixing in a synthetic scene drawn uniformly from the whole pool. Twins are
/// appended after the originals. Each item uses its own random stream keyed
/// by `(seed, item id)`.
pub fn augment_batch(
    batch: &[TrainItem],
    synthetic_pool: &SceneDataset,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<TrainItem>> {
    cfg.validate()?;
    let partners: Vec<_> = synthetic_pool.with_tag(DomainTag::Synthetic).collect();
    if partners.is_empty() {
        return Err(Error::invalid("augmentation needs a non-empty synthetic pool"));
    }
    let mut out = batch.to_vec();
    for item in batch.iter().filter(|i| i.kind == ItemKind::Real) {
        let mut rng = rng::stream(&[seed, tags::AUGMENT, cfg.stream, rng::hash_str(&item.id)]);
        if !rng.random_bool(cfg.p_select_real) {
            continue;
        }
        let partner = partners[rng.random_range(0..partners.len())];
        let partner = TrainItem {
            id: partner.id.clone(),
            image: partner.image.clone(),
            label: partner.label.clone(),
            kind: ItemKind::Synthetic,
        };
        let partner = fit_to(&partner, item.label.height(), item.label.width())?;
        let mask = build_paste_mask(&partner.label, cfg, &mut rng)?;
        out.push(mix(item, &partner, &mask)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_pool, generate_scene, SceneDomain, SceneSpec};
    use crate::dataset::Record;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(domain: SceneDomain, index: u64, kind: ItemKind) -> TrainItem {
        let s = generate_scene(&SceneSpec::with_classes(16, 16, 4, 9), domain, index).unwrap();
        TrainItem { id: s.id, image: s.image, label: s.label, kind }
    }

    fn coarse_item(index: u64) -> TrainItem {
        let mut it = item(SceneDomain::Real, index, ItemKind::Real);
        let labels = it.label.labels().iter().enumerate().map(|(i, &l)| if i % 3 == 0 { IGNORE } else { l }).collect();
        it.label = LabelMask::new(16, 16, labels).unwrap().into_manual();
        it
    }

    #[test]
    fn mask_extremes() {
        let syn = item(SceneDomain::Synthetic, 0, ItemKind::Synthetic);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = AugmentConfig { p_class: 1.0, ..Default::default() };
        assert!(build_paste_mask(&syn.label, &all, &mut rng).unwrap().bits.iter().all(|&b| b));
        let none = AugmentConfig { p_class: 0.0, ..Default::default() };
        assert!(build_paste_mask(&syn.label, &none, &mut rng).unwrap().bits.iter().all(|&b| !b));
        let bad = AugmentConfig { p_class: 1.5, ..Default::default() };
        assert!(build_paste_mask(&syn.label, &bad, &mut rng).is_err());
    }

    #[test]
    fn single_class_mask_frequency() {
        let label = LabelMask::filled(4, 4, 2);
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let full =
            (0..10_000).filter(|_| build_paste_mask(&label, &cfg, &mut rng).unwrap().bits.iter().all(|&b| b)).count();
        assert!((4850..=5150).contains(&full), "{full}");
    }

    #[test]
    fn mix_identities() {
        let real = coarse_item(1);
        let syn = item(SceneDomain::Synthetic, 2, ItemKind::Synthetic);
        let zero = BinaryMask::filled(16, 16, false);
        let one = BinaryMask::filled(16, 16, true);
        let a = mix(&real, &syn, &zero).unwrap();
        assert_eq!((a.image, a.label.labels()), (real.image.clone(), real.label.labels()));
        let b = mix(&real, &syn, &one).unwrap();
        assert_eq!((b.image, b.label.labels()), (syn.image.clone(), syn.label.labels()));
        assert_eq!(b.kind, ItemKind::Augmented);
    }

    #[test]
    fn mix_checkerboard_matches_per_pixel_select() {
        let real = coarse_item(3);
        let syn = item(SceneDomain::Synthetic, 4, ItemKind::Synthetic);
        let mask = BinaryMask { height: 16, width: 16, bits: (0..256).map(|i| (i / 16 + i % 16) % 2 == 0).collect() };
        let out = mix(&real, &syn, &mask).unwrap();
        for p in 0..256 {
            let src = if mask.bits[p] { &syn } else { &real };
            assert_eq!(out.label.labels()[p], src.label.labels()[p]);
            for c in 0..3 {
                assert_eq!(out.image.data()[c * 256 + p], src.image.data()[c * 256 + p]);
            }
            if mask.bits[p] {
                assert_ne!(out.label.labels()[p], IGNORE);
            }
        }
    }

    #[test]
    fn mix_rejects_size_mismatch() {
        let real = coarse_item(0);
        let big = generate_scene(&SceneSpec::with_classes(20, 16, 4, 9), SceneDomain::Synthetic, 0).unwrap();
        let big = TrainItem { id: big.id, image: big.image, label: big.label, kind: ItemKind::Synthetic };
        assert!(mix(&real, &big, &BinaryMask::filled(16, 16, true)).is_err());
    }

    #[test]
    fn mix_polarity_round_trip() {
        let a = item(SceneDomain::Real, 5, ItemKind::Real);
        let b = item(SceneDomain::Synthetic, 6, ItemKind::Synthetic);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = build_paste_mask(&b.label, &AugmentConfig::default(), &mut rng).unwrap();
        let x = mix(&a, &b, &m).unwrap();
        let y = mix(&b, &a, &m.invert()).unwrap();
        assert_eq!(x.image, y.image);
        assert_eq!(x.label.labels(), y.label.labels());
    }

    fn pool(n: usize) -> SceneDataset {
        generate_pool(&SceneSpec::with_classes(16, 16, 4, 9), n, SceneDomain::Synthetic).unwrap()
    }

    #[test]
    fn batch_augmentation_paths() {
        let batch: Vec<TrainItem> = (0..6).map(coarse_item).collect();
        let off = AugmentConfig { p_select_real: 0.0, ..Default::default() };
        assert_eq!(augment_batch(&batch, &pool(3), &off, 1).unwrap(), batch);

        let forced = AugmentConfig { p_select_real: 1.0, ..Default::default() };
        let single = pool(1);
        let out = augment_batch(&batch, &single, &forced, 1).unwrap();
        assert_eq!(out.len(), 12);
        assert_eq!(&out[..6], &batch[..]);
        for (twin, orig) in out[6..].iter().zip(&batch) {
            assert_eq!(twin.id, format!("{}+synthetic/0", orig.id));
            let syn: &Record = &single.records[0];
            for p in 0..256 {
                let l = twin.label.labels()[p];
                assert!(l == orig.label.labels()[p] || l == syn.label.labels()[p]);
            }
        }

        let cfg = AugmentConfig::default();
        let p = pool(5);
        assert_eq!(augment_batch(&batch, &p, &cfg, 9).unwrap(), augment_batch(&batch, &p, &cfg, 9).unwrap());
        assert!(augment_batch(&batch, &SceneDataset::new(4), &cfg, 9).is_err());
    }

    #[test]
    fn augmented_pixels_come_from_one_source() {
        let batch: Vec<TrainItem> = (0..4).map(coarse_item).collect();
        let p = pool(4);
        let cfg = AugmentConfig { p_select_real: 1.0, ..Default::default() };
        let out = augment_batch(&batch, &p, &cfg, 3).unwrap();
        for (twin, orig) in out[4..].iter().zip(&batch) {
            let partner_id = twin.id.split('+').nth(1).unwrap();
            let syn = p.get(partner_id).unwrap();
            for px in 0..256 {
                let from_syn = (0..3).all(|c| twin.image.data()[c * 256 + px] == syn.image.data()[c * 256 + px])
                    && twin.label.labels()[px] == syn.label.labels()[px];
                let from_real = (0..3).all(|c| twin.image.data()[c * 256 + px] == orig.image.data()[c * 256 + px])
                    && twin.label.labels()[px] == orig.label.labels()[px];
                assert!(from_syn || from_real);
            }
        }
    }

    #[test]
    fn fit_to_pads_with_ignore() {
        let s = generate_scene(&SceneSpec::with_classes(12, 12, 4, 1), SceneDomain::Synthetic, 0).unwrap();
        let it = TrainItem { id: s.id, image: s.image, label: s.label, kind: ItemKind::Synthetic };
        let fitted = fit_to(&it, 16, 10).unwrap();
        assert_eq!(fitted.image.shape(), &[3, 16, 10]);
        assert_eq!(fitted.label.get(0, 0), IGNORE);
        assert_eq!(fitted.label.get(2, 0), it.label.get(0, 1));
    }
}
