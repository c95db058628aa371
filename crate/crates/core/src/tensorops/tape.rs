use super::kernels::{self, ConvSaved};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        saved: ConvSaved,
    },
    Relu(Var),
    Resize(Var),
    Crop(Var),
    Add(Var, Var),
    Softmax(Var),
    GumbelSoftmax {
        logits: Var,
        temperature: f64,
    },
    GradNorm(Var),
    /// Scalar function of `input` whose local gradient was computed eagerly.
    Reduce {
        input: Var,
        grad: Tensor,
    },
    Combine(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode recorder. Ops append nodes in execution order; `backward`
/// walks them in exact reverse, accumulating gradients additively.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient (a parameter or a probed input).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (out, saved) =
            kernels::conv2d_forward(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), stride, pad)?;
        let rg = self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Conv2d { input, kernel, bias, saved }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = kernels::relu(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = kernels::resize_bilinear(self.value(input), out_h, out_w)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Resize(input), rg))
    }

    /// Keep the top-left `out_h x out_w` window of a raster.
    pub fn crop(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let x = self.value(input);
        let (c, h, w) = x.dims3()?;
        if out_h > h || out_w > w || out_h == 0 || out_w == 0 {
            return Err(Error::shape(format!("cannot crop {h}x{w} to {out_h}x{out_w}")));
        }
        let d = x.data();
        let out = Tensor::from_fn(&[c, out_h, out_w], |i| {
            let (ch, y, xx) = (i / (out_h * out_w), (i / out_w) % out_h, i % out_w);
            d[(ch * h + y) * w + xx]
        });
        let rg = self.needs(input);
        Ok(self.push(out, Op::Crop(input), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] + y.data()[i]);
        out.ensure_finite("add output")?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let out = kernels::softmax(self.value(input))?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Softmax(input), rg))
    }

    /// Gumbel-softmax with caller-supplied noise, which is held fixed for differentiation.
    pub fn gumbel_softmax(&mut self, logits: Var, temperature: f64, noise: &Tensor) -> Result<Var> {
        let out = kernels::gumbel_softmax(self.value(logits), temperature, noise)?;
        let rg = self.needs(logits);
        Ok(self.push(out, Op::GumbelSoftmax { logits, temperature }, rg))
    }

    pub fn spatial_gradient_norm(&mut self, mask: Var) -> Result<Var> {
        let out = kernels::spatial_gradient_norm(self.value(mask))?;
        let rg = self.needs(mask);
        Ok(self.push(out, Op::GradNorm(mask), rg))
    }

    /// Record a scalar reduction of `input` with value `value` and local
    /// gradient `grad` (same shape as `input`).
    pub fn reduce(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var> {
        if grad.shape() != self.value(input).shape() {
            return Err(Error::shape("reduction gradient does not match its input"));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        let rg = self.needs(input);
        Ok(self.push(Tensor::scalar(value), Op::Reduce { input, grad }, rg))
    }

    /// `sum(input * weights)`, a convenient scalar probe for gradient checks.
    pub fn dot(&mut self, input: Var, weights: &Tensor) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(Error::shape("dot weights do not match input"));
        }
        let value = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        self.reduce(input, value, weights.clone())
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::shape("combine expects scalar terms"));
            }
            total += w * t.item();
        }
        let rg = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(Tensor::scalar(total), Op::Combine(terms.to_vec()), rg))
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagate from a scalar `root`, seeding it with gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward root must be a scalar"));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let contributions: Vec<(Var, Tensor)> = match &self.nodes[idx].op {
                Op::Leaf => {
                    self.grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d { input, kernel, bias, saved } => {
                    let want_input = self.needs(*input);
                    let (di, dk, db) = kernels::conv2d_backward(saved, self.value(*kernel), &g, want_input);
                    let mut out = vec![(*kernel, dk)];
                    if let Some(b) = bias {
                        out.push((*b, db));
                    }
                    if let Some(di) = di {
                        out.push((*input, di));
                    }
                    out
                }
                Op::Relu(input) => {
                    let y = &self.nodes[idx].value;
                    let d = Tensor::from_fn(y.shape(), |i| if y.data()[i] > 0.0 { g.data()[i] } else { 0.0 });
                    vec![(*input, d)]
                }
                Op::Resize(input) => {
                    let (_, h, w) = self.value(*input).dims3()?;
                    vec![(*input, kernels::resize_bilinear_backward(&g, h, w))]
                }
                Op::Crop(input) => {
                    let (c, h, w) = self.value(*input).dims3()?;
                    let (_, oh, ow) = g.dims3()?;
                    let mut d = Tensor::zeros(&[c, h, w]);
                    let gd = g.data();
                    let dd = d.data_mut();
                    for ch in 0..c {
                        for y in 0..oh {
                            let src = &gd[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
                            dd[(ch * h + y) * w..(ch * h + y) * w + ow].copy_from_slice(src);
                        }
                    }
                    vec![(*input, d)]
                }
                Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
                Op::Softmax(input) => {
                    vec![(*input, kernels::softmax_backward(&self.nodes[idx].value, &g))]
                }
                Op::GumbelSoftmax { logits, temperature } => {
                    let d = kernels::softmax_backward(&self.nodes[idx].value, &g);
                    let t = *temperature;
                    vec![(*logits, Tensor::from_fn(d.shape(), |i| d.data()[i] / t))]
                }
                Op::GradNorm(mask) => {
                    let d = kernels::spatial_gradient_norm_backward(self.value(*mask), &self.nodes[idx].value, &g);
                    vec![(*mask, d)]
                }
                Op::Reduce { input, grad } => {
                    let s = g.item();
                    vec![(*input, Tensor::from_fn(grad.shape(), |i| s * grad.data()[i]))]
                }
                Op::Combine(terms) => terms.iter().map(|&(v, w)| (v, Tensor::scalar(w * g.item()))).collect(),
            };
            for (v, d) in contributions {
                self.accumulate(v, d);
            }
        }
        for (idx, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[idx].requires_grad {
                    g.ensure_finite("gradient")?;
                }
            }
        }
        Ok(())
    }

    /// Gradient of the last `backward` root with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
