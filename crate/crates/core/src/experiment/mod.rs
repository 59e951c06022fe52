//! Reproducible experiments wired from one JSON run configuration: data
//! generation, training, evaluation, gradient checking and the matched-pair
//! baseline vs pose-aware comparison.
//!
//! Every command writes the fully resolved configuration next to its
//! outputs, and no output file carries a timestamp, so rerunning a resolved
//! configuration reproduces the files byte for byte.

mod commands;

pub use commands::{
    cmd_ab, cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_train, AbReport, AbRow, EvalReport,
    GenReport, TrainReport, AB_FILE, CHECKPOINT_FILE, CONFUSION_FILE, METRICS_FILE,
    RESOLVED_CONFIG_FILE,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{flip_augment, load_dataset, normalize, synth_generate, Chip, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::gradcheck::GradcheckConfig;
use crate::network::NetworkConfig;
use crate::trainer::HyperParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// A dataset directory (see [`crate::data::load_dataset`]).
    Directory(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Everything one experiment needs. Keys omitted from a JSON file take
/// their values from [`RunConfig::default`], the desk-scale recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub hyper: HyperParams,
    pub data: DataSource,
    /// Mirror every training chip and negate its azimuth.
    pub flip_augment: bool,
    /// Seeds for the matched-pair comparison.
    pub ab_seeds: Vec<u64>,
    pub gradcheck: GradcheckConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::desk_default(),
            hyper: HyperParams::desk(),
            data: DataSource::default(),
            flip_augment: true,
            ab_seeds: default_seeds(),
            gradcheck: GradcheckConfig::default(),
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut merged = serde_json::to_value(RunConfig::default()).expect("config serializes");
        merge(&mut merged, user);
        let cfg: RunConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.hyper.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Writes the configuration without `out_dir`, so the file does not
    /// depend on where it was written.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let resolved = RunConfig { out_dir: None, ..self.clone() };
        fs::write(&path, resolved.to_json()).map_err(|e| Error::io(&path, e))
    }
}

/// Overlay `user` on `base`, recursing into objects present in both. A data
/// source switching variant replaces the whole object.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            let switches_variant = b.len() == 1 && u.len() == 1 && !u.keys().all(|k| b.contains_key(k));
            if switches_variant {
                *b = u;
                return;
            }
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Train and test chips ready for the network.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub class_names: Vec<String>,
    pub train: Vec<Chip>,
    pub test: Vec<Chip>,
}

/// Loads or generates the dataset, flip-augments the training split when
/// enabled and standardizes every chip. Checks the data against the network
/// geometry.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let dataset = match &cfg.data {
        DataSource::Synthetic(s) => synth_generate(s)?,
        DataSource::Directory(dir) => load_dataset(dir)?,
    };
    if dataset.class_count() != cfg.network.classes {
        return Err(Error::Config(format!(
            "network has {} classes, dataset has {}",
            cfg.network.classes,
            dataset.class_count()
        )));
    }
    let [c, h, w] = cfg.network.input;
    if let Some(chip) = dataset.chips.first() {
        if chip.image.shape() != [c, h, w] {
            return Err(Error::Config(format!(
                "chips are {:?}, network expects {:?}",
                chip.image.shape(),
                cfg.network.input
            )));
        }
    }
    let mut train = dataset.split(Split::Train);
    if cfg.flip_augment {
        train = flip_augment(&train)?;
    }
    Ok(PreparedData {
        train: normalize(train),
        test: normalize(dataset.split(Split::Test)),
        class_names: dataset.class_names,
    })
}
