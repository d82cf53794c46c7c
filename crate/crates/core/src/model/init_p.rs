use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParameterSet;
use crate::dataset::{mean_variance, Corpus};
use crate::error::{GrapeError, Result};
use crate::numcore::Tensor;

/// Added to every indicator weight so zero-variance users keep some weight.
pub const P_GRAPE_EPSILON: f64 = 1e-3;

/// How the per-user channel weights start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PVariant {
    /// Uniform and frozen.
    Pone,
    /// One random row shared by every user.
    PnRand,
    /// One row shared by every user, built from pooled statistics.
    Pn,
    /// Independent random row per user.
    PRand,
    /// Per-user rows from each user's indicator mean and variance.
    PGrape,
}

impl PVariant {
    pub const ALL: [PVariant; 5] = [PVariant::Pone, PVariant::PnRand, PVariant::Pn, PVariant::PRand, PVariant::PGrape];

    pub fn is_shared(self) -> bool {
        matches!(self, PVariant::Pone | PVariant::PnRand | PVariant::Pn)
    }

    pub fn name(self) -> &'static str {
        match self {
            PVariant::Pone => "pone",
            PVariant::PnRand => "pn_rand",
            PVariant::Pn => "pn",
            PVariant::PRand => "p_rand",
            PVariant::PGrape => "p_grape",
        }
    }
}

impl std::str::FromStr for PVariant {
    type Err = GrapeError;

    fn from_str(s: &str) -> Result<Self> {
        PVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| GrapeError::Config(format!("unknown P variant {s:?}")))
    }
}

fn normalized(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 && s.is_finite() {
        row.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|x| *x = u);
    }
}

/// `[1, μ_1·λ_1 + ε, …]` over greener-is-higher values, scaled to sum 1.
pub fn grape_row(sequences: &[Vec<f64>], epsilon: f64) -> Vec<f64> {
    let mut row = vec![1.0];
    row.extend(sequences.iter().map(|g| {
        let (m, v) = mean_variance(g);
        m * v + epsilon
    }));
    normalized(&mut row);
    row
}

/// Normalized training-prefix values of one user, per indicator.
fn user_green(corpus: &Corpus, user: usize) -> Vec<Vec<f64>> {
    let seq = &corpus.sequences[user];
    (0..corpus.indicator_count())
        .map(|j| seq.train_items().iter().map(|&i| corpus.catalog.normalized[i][j]).collect())
        .collect()
}

fn random_row(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    normalized(&mut row);
    row
}

/// Writes the chosen initialization into `params`; [`PVariant::Pone`] is
/// also frozen.
pub fn init_p(variant: PVariant, corpus: &Corpus, params: &mut ParameterSet, rng: &mut impl Rng) -> Result<()> {
    let ch = corpus.indicator_count() + 1;
    let idx = params.layout.p;
    let shape = params.get(idx).shape().to_vec();
    let rows = if variant.is_shared() { 1 } else { corpus.users() };
    if shape != [rows, ch] {
        return Err(GrapeError::Config(format!(
            "P variant {} needs a {rows}x{ch} matrix, parameters hold {shape:?}",
            variant.name()
        )));
    }
    let values: Vec<f64> = match variant {
        PVariant::Pone => vec![1.0 / ch as f64; ch],
        PVariant::PnRand => random_row(rng, ch),
        PVariant::PRand => (0..rows).flat_map(|_| random_row(rng, ch)).collect(),
        PVariant::Pn => {
            let mut pooled = vec![Vec::new(); ch - 1];
            for u in 0..corpus.users() {
                for (dst, src) in pooled.iter_mut().zip(user_green(corpus, u)) {
                    dst.extend(src);
                }
            }
            grape_row(&pooled, P_GRAPE_EPSILON)
        }
        PVariant::PGrape => (0..rows)
            .flat_map(|u| grape_row(&user_green(corpus, u), P_GRAPE_EPSILON))
            .collect(),
    };
    let mut t = Tensor::matrix(rows, ch, values)?;
    t.set_requires_grad(variant != PVariant::Pone);
    *params.get_mut(idx) = t;
    Ok(())
}

/// Clamps negatives to 0 and rescales each row to sum 1. Rows already on the
/// simplex are left untouched so a null update stays bit-exact.
pub fn project_simplex(p: &mut Tensor) {
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let s: f64 = row.iter().sum();
        if row.iter().all(|&x| x >= 0.0) && (s - 1.0).abs() <= 1e-12 {
            continue;
        }
        row.iter_mut().for_each(|x| *x = x.max(0.0));
        normalized(row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grape_examples() {
        let row = grape_row(&[vec![0.25, 0.75]], 0.0);
        assert!((row[0] - 1.0 / 1.03125).abs() < 1e-12);
        assert!((row[0] - 0.9697).abs() < 1e-4 && (row[1] - 0.0303).abs() < 1e-4);

        let row = grape_row(&[vec![0.4; 5], vec![0.0, 1.0]], P_GRAPE_EPSILON);
        let raw = [1.0, P_GRAPE_EPSILON, 0.5 * 0.25 + P_GRAPE_EPSILON];
        let s: f64 = raw.iter().sum();
        for (a, b) in row.iter().zip(raw) {
            assert!((a - b / s).abs() < 1e-15);
        }
    }

    #[test]
    fn names_round_trip() {
        for v in PVariant::ALL {
            assert_eq!(v.name().parse::<PVariant>().unwrap(), v);
        }
        assert!("p_bogus".parse::<PVariant>().is_err());
    }

    #[test]
    fn projection_keeps_simplex_rows() {
        let mut t = Tensor::matrix(1, 3, vec![0.2, 0.3, 0.5]).unwrap();
        let before = t.clone();
        project_simplex(&mut t);
        assert_eq!(t, before);
        let mut t = Tensor::matrix(1, 3, vec![-0.5, 0.0, 0.0]).unwrap();
        project_simplex(&mut t);
        assert_eq!(t.values(), &[1.0 / 3.0; 3]);
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in proptest::collection::vec(-2.0f64..2.0, 1..8)) {
            let n = v.len();
            let mut t = Tensor::matrix(1, n, v).unwrap();
            project_simplex(&mut t);
            let s: f64 = t.values().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(t.values().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn grape_rows_sum_to_one(g in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 1..10), 0..4)) {
            let row = grape_row(&g, P_GRAPE_EPSILON);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&x| x > 0.0));
        }
    }
}
