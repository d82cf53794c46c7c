use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, UserSequence};
use crate::error::{GrapeError, Result};
use crate::model::{score_catalog, user_state, ParameterSet, RunMeta, SequenceInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn input(self, seq: &UserSequence) -> SequenceInput {
        match self {
            Split::Valid => SequenceInput::validation(seq),
            Split::Test => SequenceInput::test(seq),
        }
    }

    pub fn target(self, seq: &UserSequence) -> usize {
        match self {
            Split::Valid => seq.valid_target(),
            Split::Test => seq.test_target(),
        }
    }

    /// Items the user already saw before the target. A target that repeats
    /// an earlier interaction stays rankable.
    pub fn exclusions(self, seq: &UserSequence) -> HashSet<usize> {
        let hist = match self {
            Split::Valid => seq.valid_history(),
            Split::Test => seq.test_history(),
        };
        let target = self.target(seq);
        hist.iter().copied().filter(|&i| i != target).collect()
    }
}

/// Descending score, ties by ascending id.
fn better(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Every catalog item except `exclude` (and padding id 0), best first.
pub fn rank_all(scores: &[f64], exclude: &HashSet<usize>) -> Vec<usize> {
    let mut ids: Vec<usize> = (1..scores.len()).filter(|i| !exclude.contains(i)).collect();
    ids.sort_by(|&a, &b| better(scores, a, b));
    ids
}

/// The first `n` entries of [`rank_all`] without sorting the whole catalog.
pub fn top_n(scores: &[f64], exclude: &HashSet<usize>, n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (1..scores.len()).filter(|i| !exclude.contains(i)).collect();
    if n < ids.len() {
        ids.select_nth_unstable_by(n, |&a, &b| better(scores, a, b));
        ids.truncate(n);
    }
    ids.sort_by(|&a, &b| better(scores, a, b));
    ids
}

/// 1-based position of `target` in [`rank_all`].
pub fn target_rank(scores: &[f64], exclude: &HashSet<usize>, target: usize) -> usize {
    1 + (1..scores.len())
        .filter(|&i| i != target && !exclude.contains(&i) && better(scores, i, target) == Ordering::Less)
        .count()
}

/// Hit ratio and NDCG at `n` from rankings (best first) and one target per
/// user.
pub fn hr_ndcg_at_n(rankings: &[Vec<usize>], targets: &[usize], n: usize) -> Result<(f64, f64)> {
    if rankings.len() != targets.len() {
        return Err(GrapeError::Contract(format!(
            "{} rankings for {} users",
            rankings.len(),
            targets.len()
        )));
    }
    let ranks: Vec<Option<usize>> = rankings
        .iter()
        .zip(targets)
        .map(|(r, t)| r.iter().position(|i| i == t).map(|p| p + 1))
        .collect();
    Ok(hr_ndcg_from_ranks(&ranks, n))
}

fn hr_ndcg_from_ranks(ranks: &[Option<usize>], n: usize) -> (f64, f64) {
    if ranks.is_empty() {
        return (0.0, 0.0);
    }
    let (mut hr, mut ndcg) = (0.0, 0.0);
    for r in ranks.iter().flatten() {
        if *r <= n {
            hr += 1.0;
            ndcg += 1.0 / ((*r + 1) as f64).log2();
        }
    }
    let u = ranks.len() as f64;
    (hr / u, ndcg / u)
}

/// Mean over users of the mean value of each indicator among their top `n`
/// items; `values[item][j]`.
pub fn mean_indicator_at_n(rankings: &[Vec<usize>], values: &[Vec<f64>], n: usize) -> Vec<f64> {
    let width = values.get(1).map_or(0, Vec::len);
    let mut total = vec![0.0; width];
    let mut users = 0usize;
    for r in rankings {
        let top = &r[..n.min(r.len())];
        if top.is_empty() {
            continue;
        }
        users += 1;
        for (j, t) in total.iter_mut().enumerate() {
            *t += top.iter().map(|&i| values[i][j]).sum::<f64>() / top.len() as f64;
        }
    }
    if users > 0 {
        total.iter_mut().for_each(|t| *t /= users as f64);
    }
    total
}

/// One user's ranking outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct UserResult {
    pub user: usize,
    pub target: usize,
    pub rank: usize,
    /// Best `k` items, `k` being the largest cutoff.
    pub top: Vec<usize>,
}

/// Ranks the whole catalog for every user, in parallel over users; results
/// come back in user order.
pub fn rank_users(params: &ParameterSet, corpus: &Corpus, split: Split, depth: usize) -> Result<Vec<UserResult>> {
    corpus
        .sequences
        .par_iter()
        .map(|seq| {
            let state = user_state(params, seq.user, &split.input(seq))?;
            let scores = score_catalog(params, &state, &corpus.catalog)?;
            let exclude = split.exclusions(seq);
            let target = split.target(seq);
            Ok(UserResult {
                user: seq.user,
                target,
                rank: target_rank(&scores, &exclude, target),
                top: top_n(&scores, &exclude, depth),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub n: usize,
    pub hr: f64,
    pub ndcg: f64,
    /// Mean raw value per indicator over top-`n` lists.
    pub mean_raw: Vec<f64>,
    /// Same on the greener-is-higher `[0, 1]` scale.
    pub mean_green: Vec<f64>,
}

impl CutoffMetrics {
    /// Average normalized greenness across indicators.
    pub fn greenness(&self) -> f64 {
        if self.mean_green.is_empty() {
            return 0.0;
        }
        self.mean_green.iter().sum::<f64>() / self.mean_green.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub indicators: Vec<String>,
    pub users: usize,
    pub cutoffs: Vec<CutoffMetrics>,
    pub meta: RunMeta,
}

impl EvalReport {
    pub fn at(&self, n: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.n == n)
    }
}

pub fn summarize(results: &[UserResult], corpus: &Corpus, split: Split, cutoffs: &[usize], meta: RunMeta) -> EvalReport {
    let ranks: Vec<Option<usize>> = results.iter().map(|r| Some(r.rank)).collect();
    let tops: Vec<Vec<usize>> = results.iter().map(|r| r.top.clone()).collect();
    let cutoffs = cutoffs
        .iter()
        .map(|&n| {
            let (hr, ndcg) = hr_ndcg_from_ranks(&ranks, n);
            CutoffMetrics {
                n,
                hr,
                ndcg,
                mean_raw: mean_indicator_at_n(&tops, &corpus.catalog.raw, n),
                mean_green: mean_indicator_at_n(&tops, &corpus.catalog.normalized, n),
            }
        })
        .collect();
    EvalReport {
        split,
        indicators: corpus.specs.iter().map(|s| s.name.clone()).collect(),
        users: results.len(),
        cutoffs,
        meta,
    }
}

/// Full-catalog evaluation of frozen parameters.
pub fn evaluate(params: &ParameterSet, corpus: &Corpus, split: Split, cutoffs: &[usize], meta: RunMeta) -> Result<EvalReport> {
    let depth = cutoffs.iter().copied().max().unwrap_or(0);
    let results = rank_users(params, corpus, split, depth)?;
    Ok(summarize(&results, corpus, split, cutoffs, meta))
}
