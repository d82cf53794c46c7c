//! Pairwise ranking objectives: BPR on interacted versus unseen items, and
//! green losses that favor the greener item of a same-side pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Direction, IndicatorSpec, PairKind, TrainingPair};
use crate::error::{GrapeError, Result};
use crate::numcore::{log_sigmoid, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMode {
    NonPrioritized,
    Prioritized,
}

/// Loss settings as written in a run configuration; indicators are referred
/// to by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenLossConfig {
    /// Weight of the normal loss; the green loss gets `1 - alpha`.
    pub alpha: f64,
    pub green_mode: GreenMode,
    /// Indicator names, highest priority first. Empty means catalog order.
    pub priority: Vec<String>,
    /// Raw-scale thresholds per indicator name.
    pub beta: BTreeMap<String, f64>,
    /// Use direction-folded raw differences instead of normalized ones.
    pub raw_green_deltas: bool,
    /// Give a pair no green term when every threshold passes.
    pub all_pass_zero: bool,
    /// Same-side pairs drawn per user and step.
    pub green_pairs_per_step: usize,
}

impl Default for GreenLossConfig {
    fn default() -> Self {
        GreenLossConfig {
            alpha: 0.7,
            green_mode: GreenMode::NonPrioritized,
            priority: Vec::new(),
            beta: [("eis", 95.0), ("nis", 40.0), ("hmi", 40.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            raw_green_deltas: false,
            all_pass_zero: false,
            green_pairs_per_step: 2,
        }
    }
}

/// [`GreenLossConfig`] resolved against a corpus: indices instead of names.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSettings {
    pub alpha: f64,
    pub mode: GreenMode,
    /// Indicator indices, highest priority first.
    pub priority: Vec<usize>,
    /// Threshold per indicator index (prioritized mode only).
    pub beta: Vec<f64>,
    pub directions: Vec<Direction>,
    pub raw_green_deltas: bool,
    pub all_pass_zero: bool,
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(GrapeError::Config(format!("alpha {alpha} must lie in [0, 1]")))
    }
}

impl GreenLossConfig {
    pub fn resolve(&self, specs: &[IndicatorSpec]) -> Result<LossSettings> {
        check_alpha(self.alpha)?;
        let n = specs.len();
        let index = |name: &str| {
            specs
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| GrapeError::Config(format!("unknown indicator {name:?} in loss settings")))
        };
        let priority = if self.priority.is_empty() {
            (0..n).collect()
        } else {
            let p = self.priority.iter().map(|s| index(s)).collect::<Result<Vec<_>>>()?;
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(GrapeError::Config(format!(
                    "priority {:?} is not a permutation of the {n} indicators",
                    self.priority
                )));
            }
            p
        };
        for name in self.beta.keys() {
            index(name)?;
        }
        let mut beta = vec![f64::NAN; n];
        if self.green_mode == GreenMode::Prioritized {
            for (j, s) in specs.iter().enumerate() {
                let b = *self
                    .beta
                    .get(&s.name)
                    .ok_or_else(|| GrapeError::Config(format!("missing threshold loss.beta.{}", s.name)))?;
                let lo = if s.observed_min.is_finite() { s.observed_min } else { 0.0 };
                let hi = if s.observed_max.is_finite() { s.observed_max } else { f64::INFINITY };
                if !b.is_finite() || b < lo || b > hi {
                    return Err(GrapeError::Config(format!(
                        "threshold loss.beta.{} = {b} lies outside the observed range [{lo}, {hi}]",
                        s.name
                    )));
                }
                beta[j] = b;
            }
        }
        Ok(LossSettings {
            alpha: self.alpha,
            mode: self.green_mode,
            priority,
            beta,
            directions: specs.iter().map(|s| s.direction).collect(),
            raw_green_deltas: self.raw_green_deltas,
            all_pass_zero: self.all_pass_zero,
        })
    }
}

/// Indicator values of the two items of a green pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairIndicators<'a> {
    pub raw: [&'a [f64]; 2],
    /// Greener-is-higher values in `[0, 1]`.
    pub normalized: [&'a [f64]; 2],
}

/// Signed greenness gap of the first item over the second for indicator `j`.
pub fn green_delta(j: usize, pair: &PairIndicators<'_>, settings: &LossSettings) -> f64 {
    if settings.raw_green_deltas {
        let d = pair.raw[0][j] - pair.raw[1][j];
        match settings.directions[j] {
            Direction::HigherGreener => d,
            Direction::LowerGreener => -d,
        }
    } else {
        pair.normalized[0][j] - pair.normalized[1][j]
    }
}

fn passes(direction: Direction, a: f64, b: f64, beta: f64) -> bool {
    match direction {
        Direction::HigherGreener => a.min(b) >= beta,
        Direction::LowerGreener => a.max(b) <= beta,
    }
}

/// The one indicator whose green term counts for this pair: the first in
/// priority order that misses its threshold. When all pass, the
/// lowest-priority indicator, or none under `all_pass_zero`.
pub fn validity_gate(raw: [&[f64]; 2], settings: &LossSettings) -> Option<usize> {
    for &j in &settings.priority {
        if !passes(settings.directions[j], raw[0][j], raw[1][j], settings.beta[j]) {
            return Some(j);
        }
    }
    if settings.all_pass_zero {
        None
    } else {
        settings.priority.last().copied()
    }
}

/// `(delta_j, weight_j)` for every indicator with non-zero weight.
pub fn green_terms(pair: &PairIndicators<'_>, settings: &LossSettings) -> Vec<(f64, f64)> {
    let n = settings.directions.len();
    match settings.mode {
        GreenMode::NonPrioritized => (0..n).map(|j| (green_delta(j, pair, settings), 1.0)).collect(),
        GreenMode::Prioritized => validity_gate(pair.raw, settings)
            .map(|j| vec![(green_delta(j, pair, settings), 1.0)])
            .unwrap_or_default(),
    }
}

/// `-log σ(margin)`.
pub fn bpr(margin: f64) -> f64 {
    -log_sigmoid(margin)
}

/// Batch mean of `-log σ(y⁺ - y⁻)` given the score margins.
pub fn normal_loss(margins: &[f64]) -> Result<f64> {
    if margins.is_empty() {
        return Err(GrapeError::Contract("normal loss needs at least one pair".into()));
    }
    Ok(margins.iter().map(|&m| bpr(m)).sum::<f64>() / margins.len() as f64)
}

/// Green loss of one pair with score gap `y1 - y2`.
pub fn green_pair_loss(gap: f64, pair: &PairIndicators<'_>, settings: &LossSettings) -> f64 {
    green_terms(pair, settings)
        .into_iter()
        .map(|(delta, w)| w * bpr(delta * gap))
        .sum()
}

/// Batch mean of the green loss under `settings.mode`.
pub fn green_loss(pairs: &[(f64, PairIndicators<'_>)], settings: &LossSettings) -> Result<f64> {
    if pairs.is_empty() {
        return Err(GrapeError::Contract("green loss needs at least one pair".into()));
    }
    Ok(pairs
        .iter()
        .map(|(gap, p)| green_pair_loss(*gap, p, settings))
        .sum::<f64>()
        / pairs.len() as f64)
}

pub fn total_loss(normal: f64, green: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * normal + (1.0 - alpha) * green)
}

/// Rejects green pairs whose items are not on the same side of the user's
/// history.
pub fn check_same_side(pairs: &[TrainingPair], is_positive: impl Fn(usize, usize) -> bool) -> Result<()> {
    for p in pairs {
        let (a, b, want) = match p.kind {
            PairKind::Normal { .. } => continue,
            PairKind::GreenPositive { a, b } => (a, b, true),
            PairKind::GreenNegative { a, b } => (a, b, false),
        };
        if is_positive(p.user, a) != want || is_positive(p.user, b) != want {
            return Err(GrapeError::Contract(format!(
                "green pair ({a}, {b}) for user {} crosses the interacted boundary",
                p.user
            )));
        }
    }
    Ok(())
}

/// Tape form of [`normal_loss`] over score nodes `(y⁺, y⁻)`.
pub fn normal_loss_on_tape(tape: &mut Tape<'_>, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(GrapeError::Contract("normal loss needs at least one pair".into()));
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for &(p, n) in pairs {
        let m = tape.sub(p, n)?;
        terms.push(tape.log_sigmoid(m)?);
    }
    let s = tape.add_n(&terms)?;
    tape.scale(s, -1.0 / pairs.len() as f64)
}

/// Tape form of [`green_loss`] over score nodes `(y1, y2)`.
pub fn green_loss_on_tape(
    tape: &mut Tape<'_>,
    pairs: &[((Var, Var), PairIndicators<'_>)],
    settings: &LossSettings,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(GrapeError::Contract("green loss needs at least one pair".into()));
    }
    let mut terms = Vec::new();
    for ((a, b), ind) in pairs {
        let gap = tape.sub(*a, *b)?;
        for (delta, w) in green_terms(ind, settings) {
            let arg = tape.scale(gap, delta)?;
            let ls = tape.log_sigmoid(arg)?;
            terms.push(tape.scale(ls, w)?);
        }
    }
    if terms.is_empty() {
        // every pair gated out: a zero that still depends on the scores
        let (a, _) = pairs[0].0;
        let z = tape.scale(a, 0.0)?;
        return tape.sum(z);
    }
    let s = tape.add_n(&terms)?;
    tape.scale(s, -1.0 / pairs.len() as f64)
}

/// `alpha * normal + (1 - alpha) * green`; a batch without green pairs
/// contributes only the normal part.
pub fn total_loss_on_tape(tape: &mut Tape<'_>, normal: Var, green: Option<Var>, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(normal);
    }
    let a = tape.scale(normal, alpha)?;
    match green {
        None => Ok(a),
        Some(g) => {
            let b = tape.scale(g, 1.0 - alpha)?;
            tape.add(a, b)
        }
    }
}
