use super::{Direction, IndicatorSpec, UserSequence};

/// Fills `observed_min`/`observed_max` of each spec from training-prefix
/// values only.
pub fn normalize_indicators(sequences: &[UserSequence], specs: &[IndicatorSpec]) -> Vec<IndicatorSpec> {
    specs
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let (lo, hi) = sequences
                .iter()
                .flat_map(|s| s.train_indicator(j).iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            IndicatorSpec {
                observed_min: lo,
                observed_max: hi,
                ..spec.clone()
            }
        })
        .collect()
}

/// Maps raw values onto `[0, 1]` with 1 the greenest observed value.
#[derive(Clone, Debug)]
pub struct Normalizer {
    specs: Vec<IndicatorSpec>,
}

impl Normalizer {
    pub fn new(specs: &[IndicatorSpec]) -> Self {
        Normalizer {
            specs: specs.to_vec(),
        }
    }

    /// Values outside the training range are clamped; a constant (or
    /// unobserved) indicator maps to 0.5.
    pub fn normalize(&self, j: usize, g: f64) -> f64 {
        let s = &self.specs[j];
        let (lo, hi) = (s.observed_min, s.observed_max);
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return 0.5;
        }
        let t = match s.direction {
            Direction::HigherGreener => (g - lo) / (hi - lo),
            Direction::LowerGreener => (hi - g) / (hi - lo),
        };
        t.clamp(0.0, 1.0)
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &g)| self.normalize(j, g)).collect()
    }
}
