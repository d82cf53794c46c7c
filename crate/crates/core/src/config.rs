//! Run configuration: one JSON document covering data, model, loss,
//! training, P variant, seed, synthetic generator and ablation grids.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::{load_corpus, synth_generate, Corpus, InteractionLog, SynthConfig};
use crate::error::{GrapeError, Result};
use crate::losses::GreenLossConfig;
use crate::model::{ModelConfig, PVariant};
use crate::traineval::{AblationConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Interaction and indicator CSV files.
    Files,
    /// Generated in memory from the `synth` section and the run seed.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub interactions: Option<PathBuf>,
    pub indicators: Option<PathBuf>,
    /// Iterative per-user and per-item interaction floor.
    pub min_interactions: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Files,
            interactions: None,
            indicators: None,
            min_interactions: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: GreenLossConfig,
    pub train: TrainConfig,
    pub p_variant: PVariant,
    /// Root of every random stream.
    pub seed: u64,
    pub synth: SynthConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: GreenLossConfig::default(),
            train: TrainConfig::default(),
            p_variant: PVariant::PGrape,
            seed: 0,
            synth: SynthConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

/// Sections whose keys are free-form names rather than fixed fields.
const MAP_SECTIONS: [&str; 2] = ["loss.beta", "ablation.beta_grid"];

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `key=value` with a dotted key. The key must already exist unless
/// its parent is a name-keyed map.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| GrapeError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(GrapeError::Config(format!("override key {key:?} is malformed")));
    }
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let parent = parts[..i].join(".");
        let obj = node
            .as_object_mut()
            .ok_or_else(|| GrapeError::Config(format!("override key {key:?}: {parent} is not a section")))?;
        let last = i + 1 == parts.len();
        if !obj.contains_key(*part) {
            if !(last && MAP_SECTIONS.contains(&parent.as_str())) {
                return Err(GrapeError::Config(format!("override key {key:?} does not exist")));
            }
            obj.insert(part.to_string(), Value::Null);
        }
        if last {
            obj.insert(part.to_string(), parse_value(raw.trim()));
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    unreachable!("split yields at least one part")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GrapeError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GrapeError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Returns a copy with dotted overrides applied.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut doc, o.as_ref())?;
        }
        serde_json::from_value(doc).map_err(|e| GrapeError::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        crate::losses::check_alpha(self.loss.alpha)

    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Loads or generates the interaction log described by `data`.
    pub fn load_log(&self) -> Result<(InteractionLog, crate::dataset::IndicatorTable)> {
        match self.data.source {
            DataSource::Files => match (&self.data.interactions, &self.data.indicators) {
                (Some(i), Some(g)) => load_corpus(i, g, self.data.min_interactions),
                _ => Err(GrapeError::Config(
                    "data.interactions and data.indicators are required when data.source is \"files\"".into(),
                )),
            },
            DataSource::Synthetic => {
                let s = synth_generate(&self.synth, self.seed)?;
                let log = InteractionLog::from_rows(s.interactions);
                Ok((log, s.table))
            }
        }
    }

    pub fn corpus(&self) -> Result<Corpus> {
        self.validate()?;
        let (log, table) = self.load_log()?;
        Corpus::from_log(&log, &table)
    }
}
