//! Small encoder-decoder segmentation network.
//!
//! Stage 0 is a stride-1 3x3 conv; each later stage halves the resolution
//! with a stride-2 3x3 conv. The deepest features go through a 1x1 conv to
//! class logits and are bilinearly upsampled to the input size, where a
//! 1x1 conv of the stage-0 features is added. Because upsampling and 1x1
//! convs are both linear this equals a single 1x1 head over the
//! concatenation of upsampled deep features and stage-0 features.

use std::io::{Read, Write};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::label::Image;
use crate::rng::{self, tags};
use crate::tensorops::{GradTape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Output channels per stage; every stage after the first downsamples by 2.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Initialize both class heads to zero (spatially uniform initial logits).
    pub zero_init_head: bool,
}

impl ArchConfig {
    pub fn new(num_classes: usize) -> Self {
        ArchConfig { in_channels: 3, num_classes, channels: vec![16, 32, 64], kernel: 3, zero_init_head: false }
    }

    pub fn downsample_factor(&self) -> usize {
        1 << (self.channels.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::invalid("architecture needs at least one non-empty stage"));
        }
        if self.kernel.is_multiple_of(2) || self.num_classes < 2 || self.in_channels == 0 {
            return Err(Error::invalid("kernel must be odd, classes >= 2, input channels >= 1"));
        }
        Ok(())
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let k = self.kernel;
        let mut shapes = Vec::new();
        let mut prev = self.in_channels;
        for &c in &self.channels {
            shapes.push(vec![c, prev, k, k]);
            shapes.push(vec![c]);
            prev = c;
        }
        shapes.push(vec![self.num_classes, prev, 1, 1]);
        shapes.push(vec![self.num_classes]);
        shapes.push(vec![self.num_classes, self.channels[0], 1, 1]);
        shapes
    }
}

/// Network parameters, SGD momentum buffers, and the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: ArchConfig,
    pub params: Vec<Tensor>,
    pub momentum: Vec<Tensor>,
}

impl ModelState {
    /// He-normal initialization from a seeded stream; biases start at zero.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(&[seed, tags::INIT]);
        let shapes = arch.param_shapes();
        let n_stage_params = 2 * arch.channels.len();
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                let is_head = i >= n_stage_params;
                if shape.len() == 1 || (is_head && arch.zero_init_head) {
                    return Ok(Tensor::zeros(shape));
                }
                let fan_in: usize = shape[1..].iter().product();
                let gain = if is_head { 1.0 } else { 2.0 };
                let normal =
                    Normal::new(0.0, (gain / fan_in as f64).sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
                Ok(Tensor::from_fn(shape, |_| normal.sample(&mut rng)))
            })
            .collect::<Result<Vec<_>>>()?;
        let momentum = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Ok(ModelState { arch, params, momentum })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn reset_momentum(&mut self) {
        for m in &mut self.momentum {
            *m = Tensor::zeros(m.shape());
        }
    }
}

/// Reflect-pad the bottom and right edges of a raster up to `h x w`.
fn reflect_pad(image: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = image.dims3()?;
    if ih == h && iw == w {
        return Ok(image.clone());
    }
    let reflect = |i: usize, n: usize| {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let r = i % period;
        if r < n {
            r
        } else {
            period - r
        }
    };
    let d = image.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        d[(ch * ih + reflect(y, ih)) * iw + reflect(x, iw)]
    }))
}

/// Record a forward pass. Returns the logits and the parameter handles in
/// the same order as `model.params`.
pub fn forward_on(tape: &mut GradTape, model: &ModelState, image: &Image) -> Result<(Var, Vec<Var>)> {
    let arch = &model.arch;
    let (c, h, w) = image.dims3()?;
    if c != arch.in_channels {
        return Err(Error::shape(format!("model expects {} input channels, got {c}", arch.in_channels)));
    }
    let f = arch.downsample_factor();
    let (ph, pw) = (h.div_ceil(f) * f, w.div_ceil(f) * f);
    let x = tape.constant(reflect_pad(image, ph, pw)?);
    let params: Vec<Var> = model.params.iter().map(|p| tape.param(p.clone())).collect();
    let pad = arch.kernel / 2;

    let mut features = x;
    let mut stem = None;
    for (s, _) in arch.channels.iter().enumerate() {
        let stride = if s == 0 { 1 } else { 2 };
        let pre = tape.conv2d(features, params[2 * s], Some(params[2 * s + 1]), stride, pad)?;
        features = tape.relu(pre);
        if s == 0 {
            stem = Some(features);
        }
    }
    let n = 2 * arch.channels.len();
    let deep = tape.conv2d(features, params[n], Some(params[n + 1]), 1, 0)?;
    let up = tape.resize(deep, ph, pw)?;
    let skip = tape.conv2d(stem.expect("at least one stage"), params[n + 2], None, 1, 0)?;
    let mut logits = tape.add(up, skip)?;
    if (ph, pw) != (h, w) {
        logits = tape.crop(logits, h, w)?;
    }
    tape.value(logits).ensure_finite("logits")?;
    Ok((logits, params))
}

/// Class logits `[C, H, W]` for an image.
pub fn forward(model: &ModelState, image: &Image) -> Result<Tensor> {
    let mut tape = GradTape::new();
    let (logits, _) = forward_on(&mut tape, model, image)?;
    Ok(tape.value(logits).clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { momentum: 0.9, weight_decay: 1e-4 }
    }
}

/// `v <- momentum * v + g + wd * theta; theta <- theta - lr * v`.
pub fn sgd_step(model: &mut ModelState, grads: &[Tensor], lr: f64, cfg: SgdConfig) -> Result<()> {
    if grads.len() != model.params.len() {
        return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), model.params.len())));
    }
    for (g, p) in grads.iter().zip(&model.params) {
        if g.shape() != p.shape() {
            return Err(Error::shape("gradient shape does not match parameter"));
        }
        g.ensure_finite("gradient")?;
    }
    let mut updated = model.params.clone();
    let mut velocity = model.momentum.clone();
    for ((p, v), g) in updated.iter_mut().zip(&mut velocity).zip(grads) {
        let (pd, vd, gd) = (p.data_mut(), v.data_mut(), g.data());
        for i in 0..pd.len() {
            vd[i] = cfg.momentum * vd[i] + gd[i] + cfg.weight_decay * pd[i];
            pd[i] -= lr * vd[i];
        }
        p.ensure_finite("parameter update")?;
    }
    model.params = updated;
    model.momentum = velocity;
    Ok(())
}

/// `base_lr * (1 - step / total)^power`.
pub fn poly_lr(base_lr: f64, step: usize, total_steps: usize, power: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("poly schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!("step {step} beyond schedule length {total_steps}")));
    }
    Ok(base_lr * (1.0 - step as f64 / total_steps as f64).powf(power))
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"C2FM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Serialize architecture and parameters (little-endian, f64 payloads).
pub fn write_checkpoint<W: Write>(model: &ModelState, mut out: W) -> Result<()> {
    let a = &model.arch;
    let u16_of = |v: usize, what: &str| u16::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} exceeds u16")));
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (v, what) in [
        (a.in_channels, "in_channels"),
        (a.num_classes, "num_classes"),
        (a.kernel, "kernel"),
        (a.channels.len(), "stages"),
    ] {
        out.write_all(&u16_of(v, what)?.to_le_bytes())?;
    }
    for &c in &a.channels {
        out.write_all(&u16_of(c, "channels")?.to_le_bytes())?;
    }
    out.write_all(&[u8::from(a.zero_init_head)])?;
    out.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for p in &model.params {
        out.write_all(&[p.shape().len() as u8])?;
        for &d in p.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in p.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format { offset: self.offset, message: "truncated checkpoint".into() })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(usize::from(u16::from_le_bytes(self.bytes()?)))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelState> {
    let mut cur = Cursor { inner: input, offset: 0 };
    let bad = |offset: u64, message: &str| Error::Format { offset, message: message.to_string() };
    if &cur.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(bad(0, "bad checkpoint magic"));
    }
    let version = cur.u16()?;
    if version != usize::from(CHECKPOINT_VERSION) {
        return Err(bad(4, &format!("unsupported checkpoint version {version}")));
    }
    let (in_channels, num_classes, kernel, stages) = (cur.u16()?, cur.u16()?, cur.u16()?, cur.u16()?);
    let channels = (0..stages).map(|_| cur.u16()).collect::<Result<Vec<_>>>()?;
    let zero_init_head = cur.bytes::<1>()?[0] != 0;
    let arch = ArchConfig { in_channels, num_classes, channels, kernel, zero_init_head };
    arch.validate().map_err(|e| bad(6, &e.to_string()))?;
    let expected = arch.param_shapes();
    let count_offset = cur.offset;
    if cur.u32()? != expected.len() {
        return Err(bad(count_offset, "parameter count does not match architecture"));
    }
    let mut params = Vec::with_capacity(expected.len());
    for shape in &expected {
        let at = cur.offset;
        let ndim = usize::from(cur.bytes::<1>()?[0]);
        let dims = (0..ndim).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(bad(at, &format!("parameter shape {dims:?}, expected {shape:?}")));
        }
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| cur.bytes::<8>().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
        params.push(Tensor::new(dims, data)?);
    }
    let momentum = expected.iter().map(|s| Tensor::zeros(s)).collect();
    Ok(ModelState { arch, params, momentum })
}
