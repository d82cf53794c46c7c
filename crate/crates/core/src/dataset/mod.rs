//! Interaction logs, per-item sustainability indicators, leave-one-out
//! sequences, pair sampling and synthetic corpora.

mod io;
mod normalize;
mod profile;
mod sampling;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

pub use io::{load_corpus, read_indicators, read_interactions, sidecar_path, write_corpus_files, write_indicators, write_interactions};
pub use normalize::{normalize_indicators, Normalizer};
pub use profile::{mean_variance, user_green_profile, GreenProfile, ProfileRow};
pub use sampling::{sample_batch, PairKind, PairSampler, TrainingPair};
pub use split::build_sequences;
pub use synth::{synth_generate, SynthConfig, SynthCorpus, SynthIndicator, SynthMetadata};

/// Which end of an indicator's scale is the sustainable one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherGreener,
    LowerGreener,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub name: String,
    pub direction: Direction,
    /// Range over training-prefix items; NaN until normalization stats exist.
    #[serde(default = "nan")]
    pub observed_min: f64,
    #[serde(default = "nan")]
    pub observed_max: f64,
}

fn nan() -> f64 {
    f64::NAN
}

impl IndicatorSpec {
    pub fn new(name: impl Into<String>, direction: Direction) -> Self {
        IndicatorSpec {
            name: name.into(),
            direction,
            observed_min: f64::NAN,
            observed_max: f64::NAN,
        }
    }

    /// Default directions of the three food indicators.
    pub fn food_defaults() -> Vec<IndicatorSpec> {
        vec![
            IndicatorSpec::new("eis", Direction::LowerGreener),
            IndicatorSpec::new("nis", Direction::HigherGreener),
            IndicatorSpec::new("hmi", Direction::HigherGreener),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub timestamp: i64,
}

/// Filtered interactions in input-file order.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    pub interactions: Vec<Interaction>,
    pub users: usize,
    pub items: usize,
}

impl InteractionLog {
    pub fn from_rows(interactions: Vec<Interaction>) -> Self {
        let count = |f: fn(&Interaction) -> u64| interactions.iter().map(f).collect::<std::collections::BTreeSet<_>>().len();
        let (users, items) = (count(|r| r.user), count(|r| r.item));
        InteractionLog {
            interactions,
            users,
            items,
        }
    }
}

/// Raw indicator values keyed by external item id.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorTable {
    pub specs: Vec<IndicatorSpec>,
    pub rows: std::collections::BTreeMap<u64, Vec<f64>>,
}

/// Dense catalog indexed by internal item id; id 0 is padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub external_ids: Vec<u64>,
    /// `raw[item][j]`
    pub raw: Vec<Vec<f64>>,
    /// Greener-is-higher values in `[0, 1]`.
    pub normalized: Vec<Vec<f64>>,
}

impl Catalog {
    /// Number of real items (excluding padding).
    pub fn len(&self) -> usize {
        self.raw.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indicator_count(&self) -> usize {
        self.raw.first().map_or(0, Vec::len)
    }

    pub fn max_raw(&self) -> f64 {
        self.raw[1..]
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// One user's chronological history and its leave-one-out split.
#[derive(Clone, Debug, PartialEq)]
pub struct UserSequence {
    pub user: usize,
    pub external_id: u64,
    /// Internal item ids in chronological order.
    pub items: Vec<usize>,
    /// `indicators[j][k]` is the raw value of indicator `j` for `items[k]`.
    pub indicators: Vec<Vec<f64>>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn train_items(&self) -> &[usize] {
        &self.items[..self.items.len() - 2]
    }

    pub fn train_indicator(&self, j: usize) -> &[f64] {
        &self.indicators[j][..self.items.len() - 2]
    }

    pub fn valid_target(&self) -> usize {
        self.items[self.items.len() - 2]
    }

    pub fn test_target(&self) -> usize {
        self.items[self.items.len() - 1]
    }

    /// History fed to the model when predicting the validation target.
    pub fn valid_history(&self) -> &[usize] {
        self.train_items()
    }

    /// History fed to the model when predicting the test target.
    pub fn test_history(&self) -> &[usize] {
        &self.items[..self.items.len() - 1]
    }
}

/// Everything the model needs: catalog, users and normalization stats.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub specs: Vec<IndicatorSpec>,
    pub catalog: Catalog,
    pub sequences: Vec<UserSequence>,
    /// Users dropped for having fewer than three interactions.
    pub excluded_users: usize,
}

impl Corpus {
    pub fn from_log(log: &InteractionLog, table: &IndicatorTable) -> crate::Result<Corpus> {
        let (mut catalog, sequences, excluded) = build_sequences(log, table)?;
        let specs = normalize_indicators(&sequences, &table.specs);
        let norm = Normalizer::new(&specs);
        catalog.normalized = catalog
            .raw
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if i == 0 {
                    vec![0.0; row.len()]
                } else {
                    norm.normalize_row(row)
                }
            })
            .collect();
        Ok(Corpus {
            specs,
            catalog,
            sequences,
            excluded_users: excluded,
        })
    }

    pub fn users(&self) -> usize {
        self.sequences.len()
    }

    pub fn items(&self) -> usize {
        self.catalog.len()
    }

    pub fn indicator_count(&self) -> usize {
        self.specs.len()
    }

    pub fn indicator_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name.eq_ignore_ascii_case(name))
    }

    pub fn interactions(&self) -> usize {
        self.sequences.iter().map(UserSequence::len).sum()
    }
}
