//! Training loop, full-catalog evaluation, ablation runners and report
//! files.

mod ablate;
mod eval;
mod report;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{GrapeError, Result};

pub use ablate::{ablate, grid, run_config, AblationConfig, AblationKind};
pub use eval::{
    evaluate, hr_ndcg_at_n, mean_indicator_at_n, rank_all, rank_users, summarize, target_rank, top_n, CutoffMetrics,
    EvalReport, Split, UserResult,
};
pub use report::{emit_report, read_report_json, write_training_log, ReportRow};
pub use train::{batch_loss, initial_parameters, train, EpochLog, StepLoss, TrainOutcome, TrainSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a better validation NDCG@10 before stopping.
    pub patience: usize,
    pub l2: f64,
    pub eval_cutoffs: Vec<usize>,
    /// Defaults to enough steps to visit every user about once.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 10,
            l2: 0.0,
            eval_cutoffs: vec![5, 10, 20],
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GrapeError::Config(format!("train: {m}")));
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return bad("learning_rate must lie in [0, 1]");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be >= 0");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.steps_per_epoch == Some(0) {
            return bad("batch_size, max_epochs and steps_per_epoch must be >= 1");
        }
        if self.eval_cutoffs.is_empty() || self.eval_cutoffs.contains(&0) {
            return bad("eval_cutoffs must be non-empty and positive");
        }
        Ok(())
    }
}
