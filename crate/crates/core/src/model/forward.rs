use std::sync::Arc;

use super::{Architecture, Bound, Layout, ParameterSet};
use crate::dataset::{Catalog, UserSequence};
use crate::error::{GrapeError, Result};
use crate::numcore::{Mask, Tape, Var};

/// A history to encode: internal item ids and, per indicator, the raw value
/// of each item.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceInput {
    pub items: Vec<usize>,
    pub indicators: Vec<Vec<f64>>,
}

impl SequenceInput {
    /// The first `len` interactions of `seq`.
    pub fn prefix(seq: &UserSequence, len: usize) -> Self {
        SequenceInput {
            items: seq.items[..len].to_vec(),
            indicators: seq.indicators.iter().map(|g| g[..len].to_vec()).collect(),
        }
    }

    pub fn training(seq: &UserSequence) -> Self {
        Self::prefix(seq, seq.train_items().len())
    }

    pub fn validation(seq: &UserSequence) -> Self {
        Self::prefix(seq, seq.valid_history().len())
    }

    pub fn test(seq: &UserSequence) -> Self {
        Self::prefix(seq, seq.test_history().len())
    }
}

/// Per-channel input matrices (`w_max x d`) with the shared attention mask.
#[derive(Clone, Debug)]
pub struct Embedded {
    pub channels: Vec<Var>,
    pub pad: usize,
    pub mask: Arc<Mask>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Last-position vector of each channel, `1 x d`, item channel first.
    pub finals: Vec<Var>,
    /// Full per-position outputs of the last layer.
    pub channels: Vec<Var>,
}

/// Looks up item and indicator embeddings for the most recent `w_max`
/// interactions, left-padded with id 0.
pub fn embed_sequences(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    layout: &Layout,
    bound: &Bound,
    input: &SequenceInput,
) -> Result<Embedded> {
    let w = arch.config.w_max;
    let n = arch.indicators;
    if input.items.is_empty() {
        return Err(GrapeError::Contract("cannot encode an empty history".into()));
    }
    if input.indicators.len() != n || input.indicators.iter().any(|g| g.len() != input.items.len()) {
        return Err(GrapeError::dim(
            "embed_sequences",
            &[input.items.len(), n],
            &[input.indicators.first().map_or(0, Vec::len), input.indicators.len()],
        ));
    }
    let start = input.items.len().saturating_sub(w);
    let real = input.items.len() - start;
    let pad = w - real;

    let mut ids = vec![0; pad];
    ids.extend_from_slice(&input.items[start..]);
    let mut channels = vec![tape.gather(bound.var(layout.item_table), &ids)?];
    for g in &input.indicators {
        let mut rows = vec![0; pad];
        for &v in &g[start..] {
            rows.push(arch.bin_row(v)?);
        }
        channels.push(tape.gather(bound.var(layout.bin_table), &rows)?);
    }
    Ok(Embedded {
        channels,
        pad,
        mask: Arc::new(Mask::causal(w, pad)),
    })
}

/// `softmax(r)`-weighted sum of `set`, then `sigmoid(fused * w + b) ⊙ fused`.
fn fuse(tape: &mut Tape<'_>, r: Var, gate: (Var, Var), set: &[Var]) -> Result<Var> {
    let weights = tape.softmax_row(r)?;
    let fused = tape.weighted_sum(weights, set)?;
    let pre = tape.affine_scalar(fused, gate.0, gate.1)?;
    let g = tape.sigmoid(pre)?;
    tape.mul(g, fused)
}

/// One attention layer over all channels.
pub fn sia_forward(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    layout: &Layout,
    bound: &Bound,
    layer: usize,
    inputs: &[Var],
    mask: &Arc<Mask>,
) -> Result<Vec<Var>> {
    let cfg = &arch.config;
    let lp = &layout.layers[layer];
    let ch = arch.channels();
    if inputs.len() != ch {
        return Err(GrapeError::dim("sia_forward", &[ch], &[inputs.len()]));
    }
    let logit_scale = if cfg.attention_scaling {
        1.0 / (cfg.head_dim() as f64).sqrt()
    } else {
        1.0
    };
    let scaled = |tape: &mut Tape<'_>, a: Var| -> Result<Var> {
        if cfg.attention_scaling {
            tape.scale(a, logit_scale)
        } else {
            Ok(a)
        }
    };

    // heads[x][m]
    let mut heads: Vec<Vec<Var>> = vec![Vec::with_capacity(cfg.heads); ch];
    for m in 0..cfg.heads {
        let mut q = Vec::with_capacity(ch);
        let mut k = Vec::with_capacity(ch);
        let mut v = Vec::with_capacity(ch);
        for (x, &e) in inputs.iter().enumerate() {
            q.push(tape.matmul(e, bound.var(lp.q[m][x]))?);
            k.push(tape.matmul(e, bound.var(lp.k[m][x]))?);
            v.push(tape.matmul(e, bound.var(lp.v[m][x]))?);
        }
        let mut self_att = Vec::with_capacity(ch);
        for x in 0..ch {
            let a = tape.matmul_nt(q[x], k[x])?;
            self_att.push(scaled(tape, a)?);
        }
        let mut cross = Vec::with_capacity(layout.pairs.len());
        for (p, &(x, y)) in layout.pairs.iter().enumerate() {
            let a = if cfg.per_pair_projections {
                let qp = tape.matmul(inputs[x], bound.var(lp.q_pair[m][p]))?;
                let kp = tape.matmul(inputs[y], bound.var(lp.k_pair[m][p]))?;
                tape.matmul_nt(qp, kp)?
            } else {
                tape.matmul_nt(q[x], k[y])?
            };
            cross.push(scaled(tape, a)?);
        }

        let item_set: Vec<Var> = self_att.iter().chain(&cross).copied().collect();
        let fused = fuse(
            tape,
            bound.var(lp.r_item),
            (bound.var(lp.gate_item.0), bound.var(lp.gate_item.1)),
            &item_set,
        )?;
        let att = tape.masked_softmax(fused, mask.clone())?;
        heads[0].push(tape.matmul(att, v[0])?);

        if let (Some(r), Some(gate)) = (lp.r_green, lp.gate_green) {
            let green_set: Vec<Var> = self_att[1..]
                .iter()
                .copied()
                .chain(
                    layout
                        .pairs
                        .iter()
                        .zip(&cross)
                        .filter(|((x, y), _)| *x > 0 && *y > 0)
                        .map(|(_, &a)| a),
                )
                .collect();
            let fused = fuse(tape, bound.var(r), (bound.var(gate.0), bound.var(gate.1)), &green_set)?;
            let att = tape.masked_softmax(fused, mask.clone())?;
            for x in 1..ch {
                heads[x].push(tape.matmul(att, v[x])?);
            }
        }
    }

    let mut out = Vec::with_capacity(ch);
    for (x, hs) in heads.iter().enumerate() {
        let merged = tape.concat_cols(hs)?;
        let mut h = tape.matmul(merged, bound.var(lp.w_out[x]))?;
        if cfg.residual {
            h = tape.add(h, inputs[x])?;
        }
        let a = tape.matmul(h, bound.var(lp.ffn_in[x]))?;
        let a = tape.add_row(a, bound.var(lp.ffn_in_bias[x]))?;
        let a = tape.relu(a)?;
        let b = tape.matmul(a, bound.var(lp.ffn_out[x]))?;
        let mut y = tape.add_row(b, bound.var(lp.ffn_out_bias[x]))?;
        if cfg.residual {
            y = tape.add(y, h)?;
        }
        out.push(y);
    }
    Ok(out)
}

/// Embedding followed by every layer; keeps the last position per channel.
pub fn forward(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    layout: &Layout,
    bound: &Bound,
    input: &SequenceInput,
) -> Result<ForwardOutput> {
    let emb = embed_sequences(tape, arch, layout, bound, input)?;
    let mut channels = emb.channels;
    for l in 0..arch.config.layers {
        channels = sia_forward(tape, arch, layout, bound, l, &channels, &emb.mask)?;
    }
    let last = arch.config.w_max - 1;
    let finals = channels
        .iter()
        .map(|&c| tape.gather(c, &[last]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardOutput { finals, channels })
}

fn candidate_row(catalog: &Catalog, item: usize, n: usize) -> Result<&[f64]> {
    if item == 0 || item > catalog.len() {
        return Err(GrapeError::Scoring(format!("item {item} is not in the catalog")));
    }
    let row = &catalog.raw[item];
    if row.len() != n {
        return Err(GrapeError::Scoring(format!(
            "item {item} has {} indicator values, expected {n}",
            row.len()
        )));
    }
    Ok(row)
}

/// Scores on the tape: channel affinities against the candidate's own
/// embeddings, weighted by the user's row of the preference matrix.
#[allow(clippy::too_many_arguments)]
pub fn score_candidates(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    layout: &Layout,
    bound: &Bound,
    out: &ForwardOutput,
    user: usize,
    candidates: &[usize],
    catalog: &Catalog,
) -> Result<Vec<Var>> {
    let n = arch.indicators;
    let p_row = if arch.shared_p { 0 } else { user };
    let weights = tape.gather(bound.var(layout.p), &[p_row])?;
    let mut scores = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let raw = candidate_row(catalog, c, n)?;
        let mut aff = Vec::with_capacity(n + 1);
        let e = tape.gather(bound.var(layout.item_table), &[c])?;
        aff.push(tape.dot(out.finals[0], e)?);
        for (j, &g) in raw.iter().enumerate() {
            let e = tape.gather(bound.var(layout.bin_table), &[arch.bin_row(g)?])?;
            aff.push(tape.dot(out.finals[j + 1], e)?);
        }
        let a = tape.concat_cols(&aff)?;
        scores.push(tape.dot(a, weights)?);
    }
    Ok(scores)
}

/// Encoded user, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct UserState {
    pub user: usize,
    /// `finals[x]` has length `d`.
    pub finals: Vec<Vec<f64>>,
}

pub fn user_state(params: &ParameterSet, user: usize, input: &SequenceInput) -> Result<UserState> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, &params.arch, &params.layout, &bound, input)?;
    let finals = out
        .finals
        .iter()
        .map(|&v| tape.value(v).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    Ok(UserState { user, finals })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scores for every catalog item; index 0 (padding) is `-inf`.
pub fn score_catalog(params: &ParameterSet, state: &UserState, catalog: &Catalog) -> Result<Vec<f64>> {
    let arch = &params.arch;
    let n = arch.indicators;
    let w = params.p_row(state.user);
    let items = params.get(params.layout.item_table);
    let bins = params.get(params.layout.bin_table);
    // affinity of every bin row against each indicator channel
    let bin_aff: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..bins.rows()).map(|r| dot(&state.finals[j + 1], bins.row(r))).collect())
        .collect();
    let mut scores = vec![f64::NEG_INFINITY; catalog.len() + 1];
    for (c, slot) in scores.iter_mut().enumerate().skip(1) {
        let raw = candidate_row(catalog, c, n)?;
        let mut aff = Vec::with_capacity(n + 1);
        aff.push(dot(&state.finals[0], items.row(c)));
        for (j, &g) in raw.iter().enumerate() {
            aff.push(bin_aff[j][arch.bin_row(g)?]);
        }
        *slot = dot(&aff, w);
    }
    Ok(scores)
}
