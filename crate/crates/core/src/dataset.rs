use crate::error::{Error, Result};
use crate::label::{Image, LabelMask};

/// Provenance of a record's annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DomainTag {
    Synthetic = 0,
    RealCoarse = 1,
    RealFine = 2,
}

impl DomainTag {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DomainTag::Synthetic),
            1 => Some(DomainTag::RealCoarse),
            2 => Some(DomainTag::RealFine),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DomainTag::Synthetic => "synthetic",
            DomainTag::RealCoarse => "real-coarse",
            DomainTag::RealFine => "real-fine",
        }
    }
}

/// One image with its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub tag: DomainTag,
    pub image: Image,
    pub label: LabelMask,
}

impl Record {
    pub fn height(&self) -> usize {
        self.label.height()
    }

    pub fn width(&self) -> usize {
        self.label.width()
    }
}

/// Tagged collection of annotated images sharing one class count.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub num_classes: usize,
    pub records: Vec<Record>,
}

impl SceneDataset {
    pub fn new(num_classes: usize) -> Self {
        SceneDataset { num_classes, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        let (_, h, w) = record.image.dims3()?;
        if h != record.label.height() || w != record.label.width() {
            return Err(Error::shape(format!("record {}: image and label sizes differ", record.id)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn extend(&mut self, other: SceneDataset) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::invalid("cannot merge datasets with different class counts"));
        }
        self.records.extend(other.records);
        Ok(())
    }

    pub fn with_tag(&self, tag: DomainTag) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.tag == tag)
    }

    pub fn count(&self, tag: DomainTag) -> usize {
        self.with_tag(tag).count()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Mean labeled fraction over records with `tag`.
    pub fn mean_labeled_fraction(&self, tag: DomainTag) -> f64 {
        let (sum, n) = self
            .with_tag(tag)
            .fold((0.0, 0usize), |(s, n), r| (s + crate::coarsify::labeled_fraction(&r.label), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}
