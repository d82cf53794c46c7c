use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Split};
use super::report::ReportRow;
use super::train::{train, TrainOutcome, TrainSpec};
use super::EvalReport;
use crate::config::RunConfig;
use crate::dataset::Corpus;
use crate::error::{GrapeError, Result};
use crate::losses::GreenMode;
use crate::model::PVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    AlphaSweep,
    PVariants,
    PriorityOrders,
    BetaGrid,
}

impl std::str::FromStr for AblationKind {
    type Err = GrapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha_sweep" => Ok(AblationKind::AlphaSweep),
            "p_variants" => Ok(AblationKind::PVariants),
            "priority_orders" => Ok(AblationKind::PriorityOrders),
            "beta_grid" => Ok(AblationKind::BetaGrid),
            _ => Err(GrapeError::Config(format!(
                "unknown ablation {s:?} (expected alpha_sweep, p_variants, priority_orders or beta_grid)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub alphas: Vec<f64>,
    pub p_variants: Vec<PVariant>,
    /// Empty means every permutation of the corpus indicators.
    pub priority_orders: Vec<Vec<String>>,
    /// Threshold values per indicator name; the grid is their product.
    pub beta_grid: BTreeMap<String, Vec<f64>>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            alphas: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            p_variants: PVariant::ALL.to_vec(),
            priority_orders: Vec::new(),
            beta_grid: [
                ("eis".to_string(), vec![70.0, 80.0, 90.0, 100.0, 110.0, 120.0]),
                ("nis".to_string(), vec![30.0, 35.0, 40.0, 45.0, 50.0]),
            ]
            .into(),
        }
    }
}

/// Documented search range for named thresholds.
fn beta_range(name: &str) -> Option<(f64, f64)> {
    match name {
        "eis" => Some((70.0, 120.0)),
        "nis" | "hmi" => Some((30.0, 50.0)),
        _ => None,
    }
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Grid points as (labels, config), validated before anything trains.
pub fn grid(kind: AblationKind, base: &RunConfig, corpus: &Corpus) -> Result<Vec<(BTreeMap<String, String>, RunConfig)>> {
    let ab = &base.ablation;
    let mut points = Vec::new();
    match kind {
        AblationKind::AlphaSweep => {
            let mut alphas = ab.alphas.clone();
            for &a in &alphas {
                if !(0.5..=1.0).contains(&a) {
                    return Err(GrapeError::Config(format!("alpha {a} outside the ablation range [0.5, 1]")));
                }
            }
            alphas.sort_by(f64::total_cmp);
            for a in alphas {
                let mut c = base.clone();
                c.loss.alpha = a;
                c.loss.green_mode = GreenMode::NonPrioritized;
                points.push(([("alpha".to_string(), fmt(a))].into(), c));
            }
        }
        AblationKind::PVariants => {
            for &v in &ab.p_variants {
                let mut c = base.clone();
                c.p_variant = v;
                points.push(([("p_variant".to_string(), v.name().to_string())].into(), c));
            }
        }
        AblationKind::PriorityOrders => {
            let orders = if ab.priority_orders.is_empty() {
                permutations(&corpus.specs.iter().map(|s| s.name.clone()).collect::<Vec<_>>())
            } else {
                ab.priority_orders.clone()
            };
            for o in orders {
                let mut c = base.clone();
                c.loss.green_mode = GreenMode::Prioritized;
                c.loss.priority = o.clone();
                points.push(([("priority".to_string(), o.join(">"))].into(), c));
            }
        }
        AblationKind::BetaGrid => {
            for (name, values) in &ab.beta_grid {
                for &v in values {
                    if let Some((lo, hi)) = beta_range(name) {
                        if !(lo..=hi).contains(&v) {
                            return Err(GrapeError::Config(format!(
                                "beta.{name} = {v} outside the ablation range [{lo}, {hi}]"
                            )));
                        }
                    }
                }
            }
            let mut combos: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new()];
            for (name, values) in &ab.beta_grid {
                combos = combos
                    .into_iter()
                    .flat_map(|m| {
                        values.iter().map(move |&v| {
                            let mut m = m.clone();
                            m.insert(name.clone(), v);
                            m
                        })
                    })
                    .collect();
            }
            for combo in combos {
                let mut c = base.clone();
                c.loss.green_mode = GreenMode::Prioritized;
                let mut labels = BTreeMap::new();
                for (k, v) in combo {
                    labels.insert(format!("beta_{k}"), fmt(v));
                    c.loss.beta.insert(k, v);
                }
                points.push((labels, c));
            }
        }
    }
    if points.is_empty() {
        return Err(GrapeError::Config("ablation grid is empty".into()));
    }
    for (_, c) in &points {
        c.validate()?;
        c.loss.resolve(&corpus.specs)?;
    }
    Ok(points)
}

/// Trains on `corpus` under `cfg` and evaluates the kept parameters on the
/// test targets.
pub fn run_config(cfg: &RunConfig, corpus: &Corpus) -> Result<(TrainOutcome, EvalReport)> {
    let spec = TrainSpec {
        model: &cfg.model,
        loss: &cfg.loss,
        train: &cfg.train,
        variant: cfg.p_variant,
        seed: cfg.seed,
        config_hash: cfg.hash(),
    };
    let outcome = train(corpus, &spec)?;
    let report = evaluate(
        &outcome.checkpoint.params,
        corpus,
        Split::Test,
        &cfg.train.eval_cutoffs,
        outcome.checkpoint.meta.clone(),
    )?;
    Ok((outcome, report))
}

/// One train plus test evaluation per grid point, all sharing the base seed.
pub fn ablate(kind: AblationKind, base: &RunConfig, corpus: &Corpus) -> Result<Vec<ReportRow>> {
    let points = grid(kind, base, corpus)?;
    points
        .par_iter()
        .map(|(labels, cfg)| {
            log::info!("ablation point {labels:?}");
            let (_, report) = run_config(cfg, corpus)?;
            Ok(ReportRow {
                labels: labels.clone(),
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataSource;
    use crate::dataset::SynthConfig;

    fn base() -> (RunConfig, Corpus) {
        let mut c = RunConfig::default();
        c.data.source = DataSource::Synthetic;
        c.synth = SynthConfig {
            users: 50,
            items: 100,
            ..SynthConfig::default()
        };
        let corpus = c.corpus().unwrap();
        (c, corpus)
    }

    #[test]
    fn grid_counts() {
        let (c, corpus) = base();
        assert_eq!(grid(AblationKind::AlphaSweep, &c, &corpus).unwrap().len(), 6);
        assert_eq!(grid(AblationKind::PriorityOrders, &c, &corpus).unwrap().len(), 6);
        assert_eq!(grid(AblationKind::PVariants, &c, &corpus).unwrap().len(), 5);
        assert_eq!(grid(AblationKind::BetaGrid, &c, &corpus).unwrap().len(), 30);
        let labels: Vec<String> = grid(AblationKind::AlphaSweep, &c, &corpus)
            .unwrap()
            .into_iter()
            .map(|(l, _)| l["alpha"].clone())
            .collect();
        assert_eq!(labels, ["0.5", "0.6", "0.7", "0.8", "0.9", "1"]);
    }

    #[test]
    fn invalid_points_are_rejected_up_front() {
        let (mut c, corpus) = base();
        c.ablation.alphas = vec![0.7, 0.3];
        assert!(grid(AblationKind::AlphaSweep, &c, &corpus).is_err());
        c.ablation.beta_grid.insert("eis".into(), vec![60.0]);
        assert!(grid(AblationKind::BetaGrid, &c, &corpus).is_err());
        c.ablation.priority_orders = vec![vec!["eis".into(), "nis".into()]];
        assert!(grid(AblationKind::PriorityOrders, &c, &corpus).is_err());
        assert!("bogus".parse::<AblationKind>().is_err());
    }

    #[test]
    fn permutations_are_complete() {
        let p = permutations(&["a".into(), "b".into(), "c".into()]);
        assert_eq!(p.len(), 6);
        let uniq: std::collections::HashSet<_> = p.iter().collect();
        assert_eq!(uniq.len(), 6);
    }
}
