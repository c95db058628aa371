//! Procedural toy street scenes. A synthetic domain with clean appearance and
//! a "real" domain with a fixed photometric shift, both with dense labels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{DomainTag, Record, SceneDataset};
use crate::error::{Error, Result};
use crate::label::{Image, LabelMask};
use crate::rng::{self, tags};
use crate::tensorops::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disk,
    Triangle,
    /// Thin vertical bar, the stand-in for pole-like classes.
    Bar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneDomain {
    Synthetic,
    Real,
}

impl SceneDomain {
    pub fn name(self) -> &'static str {
        match self {
            SceneDomain::Synthetic => "synthetic",
            SceneDomain::Real => "real",
        }
    }

    fn index(self) -> u64 {
        match self {
            SceneDomain::Synthetic => 0,
            SceneDomain::Real => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStyle {
    pub shape: ShapeKind,
    /// Size range as a fraction of the smaller frame side.
    pub extent: (f64, f64),
    pub color: [f64; 3],
    /// Stripe orientation (radians) and period (pixels) of the class texture.
    pub stripe_angle: f64,
    pub stripe_period: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Style per class; entry 0 is the background.
    pub styles: Vec<ClassStyle>,
    /// Relative frequency with which a foreground shape is drawn from each class (entry 0 unused).
    pub class_weights: Vec<f64>,
    pub shapes_per_scene: (usize, usize),
    /// Bar thickness range in pixels, inclusive.
    pub bar_width: (usize, usize),
    pub texture_amplitude: f64,
    pub synthetic_noise: f64,
    pub real_noise: f64,
    /// Scales the real-domain color transform; 0 disables the appearance gap.
    pub domain_shift: f64,
    /// Gaussian blur sigma in pixels applied to real images before noise; 0 keeps edges sharp.
    pub real_blur: f64,
    pub hue_jitter: f64,
    /// Real and synthetic scenes with the same index share geometry.
    pub paired: bool,
    pub seed: u64,
}

const PALETTE: [[f64; 3]; 8] = [
    [0.36, 0.36, 0.40],
    [0.58, 0.52, 0.46],
    [0.22, 0.58, 0.26],
    [0.26, 0.36, 0.74],
    [0.76, 0.30, 0.26],
    [0.72, 0.66, 0.22],
    [0.62, 0.30, 0.70],
    [0.16, 0.74, 0.74],
];

fn hsv_color(hue: f64) -> [f64; 3] {
    let h = hue.rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.2 + 0.55 * r, 0.2 + 0.55 * g, 0.2 + 0.55 * b]
}

// powi may be constant-folded differently per call site; plain products are reproducible.
fn geometric(ratio: f64, n: i32) -> f64 {
    let p = (0..n.unsigned_abs()).fold(1.0, |acc, _| acc * ratio);
    if n < 0 {
        1.0 / p
    } else {
        p
    }
}

impl SceneSpec {
    /// Default long-tailed spec: 64x64, 8 classes, class weights decaying by 0.6 per index.
    pub fn new(seed: u64) -> Self {
        Self::with_classes(64, 64, 8, seed)
    }

    pub fn with_classes(height: usize, width: usize, num_classes: usize, seed: u64) -> Self {
        let styles = (0..num_classes)
            .map(|c| {
                let shape = match c {
                    0 | 1 => ShapeKind::Rectangle,
                    _ if c + 2 >= num_classes && num_classes >= 5 => ShapeKind::Bar,
                    _ => [ShapeKind::Disk, ShapeKind::Triangle, ShapeKind::Rectangle][(c - 2) % 3],
                };
                let extent = match shape {
                    ShapeKind::Bar => (0.3, 0.6),
                    _ if c == 1 => (0.35, 0.75),
                    _ => {
                        let s = 0.5 * geometric(0.9, c as i32 - 2);
                        (0.5 * s, s)
                    }
                };
                ClassStyle {
                    shape,
                    extent,
                    color: PALETTE.get(c).copied().unwrap_or_else(|| hsv_color(c as f64 * 0.618)),
                    stripe_angle: c as f64 * 0.9,
                    stripe_period: 5.0 + (c % 4) as f64 * 2.0,
                }
            })
            .collect();
        let class_weights = (0..num_classes).map(|c| if c == 0 { 0.0 } else { geometric(0.6, c as i32 - 1) }).collect();
        SceneSpec {
            height,
            width,
            num_classes,
            styles,
            class_weights,
            shapes_per_scene: (8, 14),
            bar_width: (3, 4),
            texture_amplitude: 0.06,
            synthetic_noise: 0.02,
            real_noise: 0.05,
            domain_shift: 1.0,
            real_blur: 0.0,
            hue_jitter: 0.06,
            paired: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::invalid(format!("num_classes must be in [2, 255], got {}", self.num_classes)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("scene extent must be positive"));
        }
        if self.styles.len() != self.num_classes || self.class_weights.len() != self.num_classes {
            return Err(Error::invalid("styles and class_weights need one entry per class"));
        }
        if self.class_weights[1..].iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("foreground class weights must be positive"));
        }
        if self.bar_width.0 == 0 || self.bar_width.0 > self.bar_width.1 {
            return Err(Error::invalid("bar_width must be a non-empty range of positive widths"));
        }
        if !(self.real_blur >= 0.0) {
            return Err(Error::invalid("real_blur must be non-negative"));
        }
        if self.shapes_per_scene.0 > self.shapes_per_scene.1 {
            return Err(Error::invalid("shapes_per_scene range is inverted"));
        }
        Ok(())
    }
}

/// A generated scene with dense labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub image: Image,
    pub label: LabelMask,
    pub domain: SceneDomain,
    pub id: String,
}

#[derive(Debug, Clone)]
struct Shape {
    class: usize,
    kind: ShapeKind,
    // Bounding box and parameters in pixel units.
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    area: f64,
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = ((x - self.x0) / self.w, (y - self.y0) / self.h);
        if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
            return false;
        }
        match self.kind {
            ShapeKind::Rectangle | ShapeKind::Bar => true,
            ShapeKind::Disk => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25,
            // Apex at the top centre.
            ShapeKind::Triangle => (u - 0.5).abs() <= 0.5 * v,
        }
    }
}

fn draw_class(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights[1..].iter().sum();
    let mut t = rng.random_range(0.0..total);
    for (c, &w) in weights.iter().enumerate().skip(1) {
        if t < w {
            return c;
        }
        t -= w;
    }
    weights.len() - 1
}

fn draw_shapes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Shape> {
    let (lo, hi) = spec.shapes_per_scene;
    let n = rng.random_range(lo..=hi);
    let (fw, fh) = (spec.width as f64, spec.height as f64);
    let side = fw.min(fh);
    let mut shapes: Vec<Shape> = (0..n)
        .map(|_| {
            let class = draw_class(&spec.class_weights, rng);
            let style = &spec.styles[class];
            let (emin, emax) = style.extent;
            let size = |rng: &mut ChaCha8Rng| if emax > emin { rng.random_range(emin..=emax) } else { emin };
            let (w, h) = match style.kind_dims() {
                Dims::Box => (size(rng) * side * 1.4, size(rng) * side),
                Dims::Round => {
                    let s = size(rng) * side;
                    (s, s)
                }
                Dims::Thin => (rng.random_range(spec.bar_width.0..=spec.bar_width.1) as f64, size(rng) * side),
            };
            let (w, h) = (w.clamp(1.0, fw), h.clamp(1.0, fh));
            let x0 = if fw > w { rng.random_range(0.0..=(fw - w)) } else { 0.0 };
            let y0 = if fh > h { rng.random_range(0.0..=(fh - h)) } else { 0.0 };
            let area = match style.shape {
                ShapeKind::Disk => std::f64::consts::FRAC_PI_4 * w * h,
                ShapeKind::Triangle => 0.5 * w * h,
                _ => w * h,
            };
            Shape { class, kind: style.shape, x0: x0.floor(), y0: y0.floor(), w, h, area }
        })
        .collect();
    // Large shapes sit at the back; ties keep draw order.
    shapes.sort_by(|a, b| b.area.total_cmp(&a.area));
    shapes
}

enum Dims {
    Box,
    Round,
    Thin,
}

impl ClassStyle {
    fn kind_dims(&self) -> Dims {
        match self.shape {
            ShapeKind::Rectangle | ShapeKind::Triangle => Dims::Box,
            ShapeKind::Disk => Dims::Round,
            ShapeKind::Bar => Dims::Thin,
        }
    }
}

fn rasterize(spec: &SceneSpec, shapes: &[Shape]) -> Vec<u8> {
    let (h, w) = (spec.height, spec.width);
    let mut labels = vec![0u8; h * w];
    for s in shapes {
        for y in 0..h {
            for x in 0..w {
                if s.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    labels[y * w + x] = s.class as u8;
                }
            }
        }
    }
    labels
}

const SHIFT_MATRIX: [[f64; 3]; 3] = [[-0.15, 0.10, 0.05], [0.05, -0.20, 0.10], [0.10, 0.05, -0.15]];
const SHIFT_BIAS: [f64; 3] = [0.06, 0.04, 0.08];

fn paint(spec: &SceneSpec, labels: &[u8], domain: SceneDomain, rng: &mut ChaCha8Rng) -> Result<Image> {
    let (h, w) = (spec.height, spec.width);
    let phases: Vec<f64> = (0..spec.num_classes).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let jitter: Vec<[f64; 3]> = (0..spec.num_classes)
        .map(|_| {
            let mut j = [0.0; 3];
            if domain == SceneDomain::Real && spec.hue_jitter > 0.0 {
                for v in &mut j {
                    *v = rng.random_range(-spec.hue_jitter..=spec.hue_jitter);
                }
            }
            j
        })
        .collect();
    let sigma = match domain {
        SceneDomain::Synthetic => spec.synthetic_noise,
        SceneDomain::Real => spec.real_noise,
    };
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let shift = if domain == SceneDomain::Real { spec.domain_shift } else { 0.0 };

    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let c = usize::from(labels[p]);
            let style = &spec.styles[c];
            let t = (x as f64 * style.stripe_angle.cos() + y as f64 * style.stripe_angle.sin()) / style.stripe_period;
            let texture = spec.texture_amplitude * (std::f64::consts::TAU * t + phases[c]).sin();
            let shade = if c == 0 { 0.15 * (y as f64 / h as f64 - 0.5) } else { 0.0 };
            let base: [f64; 3] = std::array::from_fn(|k| style.color[k] + jitter[c][k] + texture + shade);
            for k in 0..3 {
                let mixed: f64 = (0..3).map(|j| SHIFT_MATRIX[k][j] * base[j]).sum::<f64>();
                data[k * h * w + p] = base[k] + shift * (mixed + SHIFT_BIAS[k]);
            }
        }
    }
    if domain == SceneDomain::Real && spec.real_blur > 0.0 {
        for plane in data.chunks_mut(h * w) {
            gaussian_blur(plane, h, w, spec.real_blur);
        }
    }
    for p in 0..h * w {
        for k in 0..3 {
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            let v = &mut data[k * h * w + p];
            *v = (*v + n).clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Separable blur with edge clamping.
fn gaussian_blur(plane: &mut [f64], h: usize, w: usize, sigma: f64) {
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let tap = |i: usize, d: isize, n: usize| (i as isize + d).clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r).zip(&kernel).map(|(d, k)| k * plane[y * w + tap(x, d, w)]).sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = (-r..=r).zip(&kernel).map(|(d, k)| k * tmp[tap(y, d, h) * w + x]).sum();
        }
    }
}

/// Deterministic scene for `(spec.seed, domain, index)`.
pub fn generate_scene(spec: &SceneSpec, domain: SceneDomain, index: u64) -> Result<LabeledScene> {
    spec.validate()?;
    let geometry_stream = if spec.paired { 0 } else { domain.index() + 1 };
    let mut geo = rng::stream(&[spec.seed, tags::GEOMETRY, geometry_stream, index]);
    let mut app = rng::stream(&[spec.seed, tags::APPEARANCE, domain.index(), index]);
    let shapes = draw_shapes(spec, &mut geo);
    let labels = rasterize(spec, &shapes);
    let image = paint(spec, &labels, domain, &mut app)?;
    Ok(LabeledScene {
        image,
        label: LabelMask::new(spec.height, spec.width, labels)?,
        domain,
        id: format!("{}/{}", domain.name(), index),
    })
}

/// `n` scenes with ids `domain/0 .. domain/(n-1)`. Real scenes are tagged
/// fine (dense) until coarsified.
pub fn generate_pool(spec: &SceneSpec, n: usize, domain: SceneDomain) -> Result<SceneDataset> {
    if n == 0 {
        return Err(Error::invalid("pool size must be at least 1"));
    }
    let tag = match domain {
        SceneDomain::Synthetic => DomainTag::Synthetic,
        SceneDomain::Real => DomainTag::RealFine,
    };
    let mut ds = SceneDataset::new(spec.num_classes);
    for i in 0..n as u64 {
        let scene = generate_scene(spec, domain, i)?;
        ds.push(Record { id: scene.id, tag, image: scene.image, label: scene.label })?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic() {
        let spec = SceneSpec::new(7);
        for domain in [SceneDomain::Synthetic, SceneDomain::Real] {
            let a = generate_scene(&spec, domain, 3).unwrap();
            let b = generate_scene(&spec, domain, 3).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.id, format!("{}/3", domain.name()));
        }
    }

    #[test]
    fn full_frame_rectangle_gives_constant_label() {
        let mut spec = SceneSpec::with_classes(16, 16, 2, 1);
        spec.shapes_per_scene = (1, 1);
        spec.styles[1].extent = (1.0, 1.0);
        spec.styles[1].shape = ShapeKind::Rectangle;
        // Width is 1.4x the extent, so the rectangle is clamped to the frame.
        let scene = generate_scene(&spec, SceneDomain::Synthetic, 0).unwrap();
        assert!(scene.label.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn paired_generation_shares_labels() {
        let mut spec = SceneSpec::new(11);
        spec.paired = true;
        for i in 0..5 {
            let s = generate_scene(&spec, SceneDomain::Synthetic, i).unwrap();
            let r = generate_scene(&spec, SceneDomain::Real, i).unwrap();
            assert_eq!(s.label, r.label);
            assert_ne!(s.image, r.image);
        }
        spec.paired = false;
        let s = generate_scene(&spec, SceneDomain::Synthetic, 0).unwrap();
        let r = generate_scene(&spec, SceneDomain::Real, 0).unwrap();
        assert_ne!(s.label, r.label);
    }

    #[test]
    fn images_are_clamped_and_labels_in_range() {
        let spec = SceneSpec::new(2);
        for i in 0..10 {
            let s = generate_scene(&spec, SceneDomain::Real, i).unwrap();
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.label.labels().iter().all(|&l| usize::from(l) < spec.num_classes));
        }
    }

    #[test]
    fn pools_have_stable_ids_and_depend_on_seed() {
        let spec = SceneSpec::new(1);
        let pool = generate_pool(&spec, 5, SceneDomain::Real).unwrap();
        let ids: Vec<_> = pool.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["real/0", "real/1", "real/2", "real/3", "real/4"]);
        assert_eq!(pool, generate_pool(&spec, 5, SceneDomain::Real).unwrap());
        let other = generate_pool(&SceneSpec::new(2), 5, SceneDomain::Real).unwrap();
        assert_ne!(pool, other);
        assert!(generate_pool(&spec, 0, SceneDomain::Real).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SceneSpec::new(0);
        spec.class_weights[3] = 0.0;
        assert!(generate_scene(&spec, SceneDomain::Real, 0).is_err());
        assert!(SceneSpec::with_classes(8, 8, 1, 0).validate().is_err());
    }

    #[test]
    fn long_tail_pixel_shares() {
        // Empirical class-pixel histogram over 1000 scenes.
        let spec = SceneSpec::new(42);
        let mut hist = vec![0u64; spec.num_classes];
        for i in 0..1000 {
            let s = generate_scene(&spec, SceneDomain::Synthetic, i).unwrap();
            for (h, c) in hist.iter_mut().zip(s.label.class_histogram(spec.num_classes)) {
                *h += c;
            }
        }
        let total: u64 = hist.iter().sum();
        let share: Vec<f64> = hist.iter().map(|&h| h as f64 / total as f64).collect();
        assert!(share[spec.num_classes - 1] < 0.02, "{share:?}");
        assert!(share[1] > 0.20, "{share:?}");
        for c in 1..spec.num_classes - 1 {
            assert!(share[c] > share[c + 1], "{share:?}");
        }
    }
}
