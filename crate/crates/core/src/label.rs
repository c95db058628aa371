use crate::error::{Error, Result};
use crate::tensorops::Tensor;

/// Reserved class id for unlabeled pixels.
pub const IGNORE: u8 = 255;

/// Planar `[3, H, W]` raster with values in `[0, 1]`.
pub type Image = Tensor;

/// Where a pixel's label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Provenance {
    Manual = 0,
    Pseudo = 1,
    Ignore = 2,
}

impl Provenance {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Provenance::Manual),
            1 => Some(Provenance::Pseudo),
            2 => Some(Provenance::Ignore),
            _ => None,
        }
    }
}

/// `H x W` grid of class ids with optional per-pixel provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    provenance: Option<Vec<Provenance>>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "label mask {height}x{width} needs {} values, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(LabelMask { height, width, labels, provenance: None })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        LabelMask { height, width, labels: vec![class; height * width], provenance: None }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn provenance(&self) -> Option<&[Provenance]> {
        self.provenance.as_deref()
    }

    pub fn has_ignore(&self) -> bool {
        self.labels.contains(&IGNORE)
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE).count()
    }

    /// Attach provenance, checking it against the labels: IGNORE pixels must
    /// be flagged `Ignore` and labeled pixels must not be.
    pub fn with_provenance(mut self, provenance: Vec<Provenance>) -> Result<Self> {
        if provenance.len() != self.labels.len() {
            return Err(Error::shape("provenance length does not match labels"));
        }
        for (i, (&l, &p)) in self.labels.iter().zip(&provenance).enumerate() {
            if (l == IGNORE) != (p == Provenance::Ignore) {
                return Err(Error::invalid(format!("pixel {i}: label {l} flagged {p:?}")));
            }
        }
        self.provenance = Some(provenance);
        Ok(self)
    }

    /// Mark every labeled pixel as manually annotated.
    pub fn into_manual(self) -> Self {
        let prov =
            self.labels.iter().map(|&l| if l == IGNORE { Provenance::Ignore } else { Provenance::Manual }).collect();
        LabelMask { provenance: Some(prov), ..self }
    }

    pub fn without_provenance(mut self) -> Self {
        self.provenance = None;
        self
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        let flip_row = |i: usize| (i / w) * w + (w - 1 - i % w);
        LabelMask {
            height: self.height,
            width: w,
            labels: (0..self.labels.len()).map(|i| self.labels[flip_row(i)]).collect(),
            provenance: self.provenance.as_ref().map(|p| (0..p.len()).map(|i| p[flip_row(i)]).collect()),
        }
    }

    /// One-hot `[C, H, W]` encoding of a dense mask.
    pub fn one_hot(&self, num_classes: usize) -> Result<Tensor> {
        let n = self.labels.len();
        let mut data = vec![0.0; num_classes * n];
        for (p, &l) in self.labels.iter().enumerate() {
            if usize::from(l) >= num_classes {
                return Err(Error::invalid(format!("label {l} outside {num_classes} classes")));
            }
            data[usize::from(l) * n + p] = 1.0;
        }
        Tensor::new(vec![num_classes, self.height, self.width], data)
    }

    /// Pixel count per class (IGNORE excluded).
    pub fn class_histogram(&self, num_classes: usize) -> Vec<u64> {
        let mut hist = vec![0u64; num_classes];
        for &l in &self.labels {
            if let Some(slot) = hist.get_mut(usize::from(l)) {
                *slot += 1;
            }
        }
        hist
    }
}

/// Binary `H x W` selection mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        BinaryMask { height, width, bits: vec![value; height * width] }
    }

    pub fn invert(&self) -> Self {
        BinaryMask { bits: self.bits.iter().map(|b| !b).collect(), ..self.clone() }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Mirror a `[C, H, W]` raster left-right.
pub fn flip_raster(t: &Tensor) -> Result<Tensor> {
    let (_, _, w) = t.dims3()?;
    let d = t.data();
    Ok(Tensor::from_fn(t.shape(), |i| {
        let x = i % w;
        d[i - x + (w - 1 - x)]
    }))
}
