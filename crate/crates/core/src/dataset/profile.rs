use serde::{Deserialize, Serialize};

use super::{IndicatorSpec, UserSequence};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub user: u64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

/// Per-indicator user statistics, each column sorted by ascending mean
/// (ties by user id).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenProfile {
    pub names: Vec<String>,
    pub columns: Vec<Vec<ProfileRow>>,
}

pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Mean and population variance of each user's raw training-prefix
/// indicator values.
pub fn user_green_profile(sequences: &[UserSequence], specs: &[IndicatorSpec]) -> GreenProfile {
    let columns = (0..specs.len())
        .map(|j| {
            let mut col: Vec<ProfileRow> = sequences
                .iter()
                .map(|s| {
                    let (mean, variance) = mean_variance(s.train_indicator(j));
                    ProfileRow {
                        user: s.external_id,
                        mean,
                        variance,
                    }
                })
                .collect();
            col.sort_by(|a, b| a.mean.total_cmp(&b.mean).then(a.user.cmp(&b.user)));
            col
        })
        .collect();
    GreenProfile {
        names: specs.iter().map(|s| s.name.clone()).collect(),
        columns,
    }
}
