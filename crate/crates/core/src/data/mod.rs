//! Chips, synthetic chip generation, augmentation and on-disk datasets.

mod augment;
mod io;
mod synth;

pub use augment::{flip_augment, mirror_left_right, normalize, normalize_chip};
pub use io::{export_dataset, load_dataset, read_raster, write_raster, METADATA_FILE, CLASSES_FILE};
pub use synth::{class_templates, synth_generate, SynthConfig, REFERENCE_NUISANCE_DEG};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Azimuth;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    /// `1 × H × W`.
    pub image: Tensor,
    pub class_label: usize,
    /// `None` when the source carried no pose; such chips can only be used
    /// for training without the pose term.
    pub azimuth: Option<Azimuth>,
    /// Emulated depression angle in degrees.
    pub nuisance: f64,
    pub split: Split,
    pub augmented: bool,
}

impl Chip {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// A labelled chip collection with its class names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub chips: Vec<Chip>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<Chip> {
        self.chips.iter().filter(|c| c.split == split).cloned().collect()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// `counts[class][split]` with split 0 = train, 1 = test.
    pub fn counts(&self) -> Vec<[usize; 2]> {
        let mut counts = vec![[0; 2]; self.class_names.len()];
        for c in &self.chips {
            counts[c.class_label][(c.split == Split::Test) as usize] += 1;
        }
        counts
    }
}

/// Stack chip images into an `N × 1 × H × W` batch.
pub fn stack_images(chips: &[&Chip]) -> Result<Tensor> {
    let first = chips
        .first()
        .ok_or_else(|| Error::Data("cannot batch zero chips".into()))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(chips.len() * first.image.len());
    for c in chips {
        if c.image.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "chip shape {:?} differs from {:?}",
                c.image.shape(),
                shape
            )));
        }
        data.extend_from_slice(&c.image.data);
    }
    let mut full = vec![chips.len()];
    full.extend(shape);
    Tensor::from_vec(&full, data)
}
