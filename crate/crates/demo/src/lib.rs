//! Browser demo: generate a toy scene and look at its coarse labels, the
//! boundary maps used by the boundary loss, and cross-domain mixing.
//!
//! Every exported function returns RGBA bytes (`width * height * 4`) for a
//! canvas `ImageData`.

use c2f_core::augment::{build_paste_mask, mix, TrainItem};
use c2f_core::coarsify::{coarsify, labeled_fraction, CoarsePolicy};
use c2f_core::datagen::{generate_scene, LabeledScene, SceneDomain, SceneSpec};
use c2f_core::label::{LabelMask, IGNORE};
use c2f_core::losses::{gumbel_noise, ItemKind};
use c2f_core::rng;
use c2f_core::tensorops::{gumbel_softmax, spatial_gradient_norm, Tensor};
use wasm_bindgen::prelude::*;

const PALETTE: [[u8; 3]; 8] = [
    [60, 60, 70],
    [150, 130, 110],
    [60, 150, 70],
    [70, 95, 190],
    [200, 80, 70],
    [190, 170, 60],
    [160, 80, 180],
    [40, 190, 190],
];

fn class_color(c: u8) -> [u8; 3] {
    if c == IGNORE {
        [0, 0, 0]
    } else {
        PALETTE[usize::from(c) % PALETTE.len()]
    }
}

fn domain(real: bool) -> SceneDomain {
    if real {
        SceneDomain::Real
    } else {
        SceneDomain::Synthetic
    }
}

fn image_rgba(image: &Tensor) -> Vec<u8> {
    let n = image.len() / 3;
    let d = image.data();
    let mut out = Vec::with_capacity(n * 4);
    for p in 0..n {
        for c in 0..3 {
            out.push((d[c * n + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

fn labels_rgba(label: &LabelMask) -> Vec<u8> {
    label
        .labels()
        .iter()
        .flat_map(|&l| {
            let [r, g, b] = class_color(l);
            [r, g, b, 255]
        })
        .collect()
}

fn gray_rgba(values: &[f64]) -> Vec<u8> {
    let max = values.iter().copied().fold(0.0, f64::max).max(1e-12);
    values
        .iter()
        .flat_map(|&v| {
            let g = (255.0 * v / max).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Scene generator with a fixed seed.
#[wasm_bindgen]
pub struct Demo {
    spec: SceneSpec,
}

/// RGBA image, dense label, coarse label, coarse labeled fraction.
type CoarseView = (Vec<u8>, Vec<u8>, Vec<u8>, f64);

impl Demo {
    fn scene(&self, real: bool, index: u32) -> Result<LabeledScene, c2f_core::Error> {
        generate_scene(&self.spec, domain(real), u64::from(index))
    }

    pub fn coarse_view(&self, index: u32, target: f64) -> Result<CoarseView, c2f_core::Error> {
        let s = self.scene(true, index)?;
        let policy = CoarsePolicy { target_labeled_fraction: target, ..CoarsePolicy::default() };
        let coarse = coarsify(&s.label, &policy, self.spec.seed)?;
        Ok((image_rgba(&s.image), labels_rgba(&s.label), labels_rgba(&coarse), labeled_fraction(&coarse)))
    }

    /// Boundary map of the ground truth and of a Gumbel-softmax relaxation
    /// of logits `sharpness * one_hot(label)`.
    pub fn boundary_view(
        &self,
        index: u32,
        temperature: f64,
        sharpness: f64,
    ) -> Result<(Vec<u8>, Vec<u8>), c2f_core::Error> {
        let s = self.scene(false, index)?;
        let c = self.spec.num_classes;
        let onehot = s.label.one_hot(c)?;
        let logits = Tensor::from_fn(onehot.shape(), |i| sharpness * onehot.data()[i]);
        let noise = gumbel_noise(onehot.shape(), rng::derive_seed(&[self.spec.seed, u64::from(index)]));
        let soft = gumbel_softmax(&logits, temperature, &noise)?;
        let gt = spatial_gradient_norm(&onehot)?;
        let pred = spatial_gradient_norm(&soft)?;
        Ok((gray_rgba(gt.data()), gray_rgba(pred.data())))
    }

    /// A real coarse scene with classes of a synthetic scene pasted on top.
    pub fn mix_view(
        &self,
        real_index: u32,
        synthetic_index: u32,
        p_class: f64,
        draw: u32,
    ) -> Result<(Vec<u8>, Vec<u8>), c2f_core::Error> {
        let real = self.scene(true, real_index)?;
        let syn = self.scene(false, synthetic_index)?;
        let coarse = coarsify(&real.label, &CoarsePolicy::default(), self.spec.seed)?;
        let base = TrainItem { id: real.id, image: real.image, label: coarse, kind: ItemKind::Real };
        let pasted = TrainItem { id: syn.id, image: syn.image, label: syn.label, kind: ItemKind::Synthetic };
        let cfg = c2f_core::augment::AugmentConfig { p_class, ..Default::default() };
        let mut mask_rng = rng::stream(&[self.spec.seed, rng::tags::AUGMENT, u64::from(draw)]);
        let mask = build_paste_mask(&pasted.label, &cfg, &mut mask_rng)?;
        let out = mix(&base, &pasted, &mask)?;
        Ok((image_rgba(&out.image), labels_rgba(&out.label)))
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32) -> Result<Demo, JsError> {
        let size = size.clamp(16, 128) as usize;
        let spec = SceneSpec::with_classes(size, size, 8, u64::from(seed));
        spec.validate().map_err(err)?;
        Ok(Demo { spec })
    }

    pub fn size(&self) -> u32 {
        self.spec.width as u32
    }

    /// Scene image, dense labels and coarse labels at a target labeled fraction.
    pub fn coarse(&self, index: u32, target: f64) -> Result<CoarseResult, JsError> {
        let (image, dense, coarse, fraction) = self.coarse_view(index, target).map_err(err)?;
        Ok(CoarseResult { image, dense, coarse, fraction })
    }

    pub fn boundary(&self, index: u32, temperature: f64, sharpness: f64) -> Result<PairResult, JsError> {
        let (a, b) = self.boundary_view(index, temperature, sharpness).map_err(err)?;
        Ok(PairResult { a, b })
    }

    pub fn mix(&self, real_index: u32, synthetic_index: u32, p_class: f64, draw: u32) -> Result<PairResult, JsError> {
        let (a, b) = self.mix_view(real_index, synthetic_index, p_class, draw).map_err(err)?;
        Ok(PairResult { a, b })
    }
}

#[wasm_bindgen]
pub struct CoarseResult {
    image: Vec<u8>,
    dense: Vec<u8>,
    coarse: Vec<u8>,
    fraction: f64,
}

#[wasm_bindgen]
impl CoarseResult {
    pub fn image(&self) -> Vec<u8> {
        self.image.clone()
    }
    pub fn dense(&self) -> Vec<u8> {
        self.dense.clone()
    }
    pub fn coarse(&self) -> Vec<u8> {
        self.coarse.clone()
    }
    pub fn fraction(&self) -> f64 {
        self.fraction
    }
}

#[wasm_bindgen]
pub struct PairResult {
    a: Vec<u8>,
    b: Vec<u8>,
}

#[wasm_bindgen]
impl PairResult {
    pub fn first(&self) -> Vec<u8> {
        self.a.clone()
    }
    pub fn second(&self) -> Vec<u8> {
        self.b.clone()
    }
}
