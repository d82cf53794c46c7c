use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Split};
use super::TrainConfig;
use crate::dataset::{Corpus, PairKind, PairSampler, TrainingPair};
use crate::error::{GrapeError, Result};
use crate::losses::{
    check_same_side, green_loss_on_tape, normal_loss_on_tape, total_loss_on_tape, GreenLossConfig, LossSettings,
    PairIndicators,
};
use crate::model::{
    forward, init_p, project_simplex, score_candidates, Architecture, Bound, Checkpoint, ModelConfig, PVariant,
    ParameterSet, RunMeta, SequenceInput,
};
use crate::numcore::{AdamConfig, OptimizerState, Tape, Var};
use crate::rng::{stream_rng, Stream};

/// Loss nodes of one training step.
#[derive(Clone, Copy, Debug)]
pub struct StepLoss {
    pub total: Var,
    pub normal: Var,
    pub green: Option<Var>,
}

/// Builds the batch objective: each user's training prefix is encoded once
/// and every item it needs is scored against that encoding.
pub fn batch_loss(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    bound: &Bound,
    layout: &crate::model::Layout,
    corpus: &Corpus,
    pairs: &[TrainingPair],
    settings: &LossSettings,
) -> Result<StepLoss> {
    let use_green = settings.alpha < 1.0;
    let mut by_user: BTreeMap<usize, Vec<PairKind>> = BTreeMap::new();
    for p in pairs {
        by_user.entry(p.user).or_default().push(p.kind);
    }
    let cat = &corpus.catalog;
    let mut normal = Vec::new();
    let mut green = Vec::new();
    for (&user, kinds) in &by_user {
        let seq = corpus
            .sequences
            .get(user)
            .ok_or(GrapeError::Index { id: user, len: corpus.users() })?;
        let out = forward(tape, arch, layout, bound, &SequenceInput::training(seq))?;
        let mut items: Vec<usize> = Vec::new();
        for k in kinds {
            match *k {
                PairKind::Normal { pos, neg } => items.extend([pos, neg]),
                PairKind::GreenPositive { a, b } | PairKind::GreenNegative { a, b } if use_green => items.extend([a, b]),
                _ => {}
            }
        }
        items.sort_unstable();
        items.dedup();
        let scores = score_candidates(tape, arch, layout, bound, &out, user, &items, cat)?;
        let score = |i: usize| scores[items.binary_search(&i).expect("scored above")];
        for k in kinds {
            match *k {
                PairKind::Normal { pos, neg } => normal.push((score(pos), score(neg))),
                PairKind::GreenPositive { a, b } | PairKind::GreenNegative { a, b } if use_green => green.push((
                    (score(a), score(b)),
                    PairIndicators {
                        raw: [&cat.raw[a], &cat.raw[b]],
                        normalized: [&cat.normalized[a], &cat.normalized[b]],
                    },
                )),
                _ => {}
            }
        }
    }
    let normal = normal_loss_on_tape(tape, &normal)?;
    let green = if green.is_empty() {
        None
    } else {
        Some(green_loss_on_tape(tape, &green, settings)?)
    };
    Ok(StepLoss {
        total: total_loss_on_tape(tape, normal, green, settings.alpha)?,
        normal,
        green,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's steps.
    pub loss: f64,
    pub normal_loss: f64,
    pub green_loss: f64,
    pub valid_hr10: f64,
    pub valid_ndcg10: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Everything a training run needs besides the corpus.
#[derive(Clone, Debug)]
pub struct TrainSpec<'a> {
    pub model: &'a ModelConfig,
    pub loss: &'a GreenLossConfig,
    pub train: &'a TrainConfig,
    pub variant: PVariant,
    pub seed: u64,
    pub config_hash: String,
}

/// Freshly initialized parameters for `corpus`.
pub fn initial_parameters(corpus: &Corpus, model: &ModelConfig, variant: PVariant, seed: u64) -> Result<ParameterSet> {
    let arch = Architecture::for_corpus(model, corpus, variant)?;
    let mut rng = stream_rng(seed, Stream::Init);
    let mut params = ParameterSet::init(&arch, &mut rng)?;
    init_p(variant, corpus, &mut params, &mut rng)?;
    Ok(params)
}

pub fn train(corpus: &Corpus, spec: &TrainSpec<'_>) -> Result<TrainOutcome> {
    let cfg = spec.train;
    cfg.validate()?;
    let settings = spec.loss.resolve(&corpus.specs)?;
    let mut params = initial_parameters(corpus, spec.model, spec.variant, spec.seed)?;
    let green_pairs = if settings.alpha < 1.0 {
        spec.loss.green_pairs_per_step
    } else {
        0
    };
    let mut sampler = PairSampler::new(&corpus.sequences, corpus.items(), green_pairs, spec.seed);
    let mut opt = OptimizerState::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            l2: cfg.l2,
            ..AdamConfig::default()
        },
        &params.tensors,
    );
    let batch = cfg.batch_size.min(corpus.users());
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| corpus.users().div_ceil(batch));
    let meta = |epoch| RunMeta {
        seed: spec.seed,
        epoch,
        config_hash: spec.config_hash.clone(),
    };

    let mut best: Option<(f64, ParameterSet, usize)> = None;
    let mut log = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let (mut sum, mut sum_n, mut sum_g) = (0.0, 0.0, 0.0);
        for step in 1..=steps {
            let pairs = sampler.sample_batch(batch)?;
            check_same_side(&pairs, |u, i| sampler.is_positive(u, i))?;
            let grads = {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let loss = batch_loss(&mut tape, &params.arch, &bound, &params.layout, corpus, &pairs, &settings)?;
                let total = tape.scalar_value(loss.total)?;
                let normal = tape.scalar_value(loss.normal)?;
                let green = loss.green.map(|g| tape.scalar_value(g)).transpose()?.unwrap_or(0.0);
                if !total.is_finite() {
                    return Err(GrapeError::NonFiniteLoss {
                        epoch,
                        step,
                        normal,
                        green,
                    });
                }
                sum += total;
                sum_n += normal;
                sum_g += green;
                tape.backward(loss.total)?;
                bound.grads(&tape)
            };
            params.zero_grads();
            params.accumulate(&grads)?;
            params.zero_padding_rows();
            opt.step(&mut params.tensors)?;
            params.zero_padding_rows();
            let p = params.layout.p;
            if params.get(p).requires_grad() {
                project_simplex(params.get_mut(p));
            }
        }
        let valid = evaluate(&params, corpus, Split::Valid, &[10], meta(epoch))?;
        let m = valid.at(10).expect("cutoff 10 requested");
        log.push(EpochLog {
            epoch,
            loss: sum / steps as f64,
            normal_loss: sum_n / steps as f64,
            green_loss: sum_g / steps as f64,
            valid_hr10: m.hr,
            valid_ndcg10: m.ndcg,
        });
        log::info!(
            "epoch {epoch}: loss {:.5} valid HR@10 {:.4} NDCG@10 {:.4}",
            sum / steps as f64,
            m.hr,
            m.ndcg
        );
        if best.as_ref().is_none_or(|(b, _, _)| m.ndcg > *b) {
            best = Some((m.ndcg, params.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, params, epoch) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            meta: meta(epoch),
        },
        log,
    })
}
