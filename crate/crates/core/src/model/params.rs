use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Architecture;
use crate::error::{GrapeError, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Indices into [`ParameterSet::tensors`] for one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `[head][channel]`, each `d x d/heads`.
    pub q: Vec<Vec<usize>>,
    pub k: Vec<Vec<usize>>,
    pub v: Vec<Vec<usize>>,
    /// `[head][pair]` with pairs from [`Layout::pairs`]; empty unless
    /// per-pair projections are on.
    pub q_pair: Vec<Vec<usize>>,
    pub k_pair: Vec<Vec<usize>>,
    /// Fusion logits over the item attention set, `1 x (n+1)^2`.
    pub r_item: usize,
    /// Fusion logits over the indicator attention set, `1 x n^2`.
    pub r_green: Option<usize>,
    pub gate_item: (usize, usize),
    pub gate_green: Option<(usize, usize)>,
    /// Per channel.
    pub w_out: Vec<usize>,
    pub ffn_in: Vec<usize>,
    pub ffn_in_bias: Vec<usize>,
    pub ffn_out: Vec<usize>,
    pub ffn_out_bias: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub item_table: usize,
    pub bin_table: usize,
    pub layers: Vec<LayerParams>,
    pub p: usize,
    /// Ordered channel pairs `(x, y)`, `x != y`, channel 0 being items.
    pub pairs: Vec<(usize, usize)>,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.names.len() - 1
    }
}

impl Layout {
    /// Names and shapes of every tensor, in storage order.
    pub fn build(arch: &Architecture) -> (Layout, Vec<String>, Vec<(usize, usize)>) {
        let cfg = &arch.config;
        let (d, hd, ch, n) = (cfg.d, cfg.head_dim(), arch.channels(), arch.indicators);
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
        };
        let pairs: Vec<(usize, usize)> = (0..ch)
            .flat_map(|x| (0..ch).filter(move |&y| y != x).map(move |y| (x, y)))
            .collect();

        let item_table = b.add("item_table".into(), arch.items + 1, d);
        let bin_table = b.add("bin_table".into(), arch.max_bin + 2, d);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let per_head = |b: &mut Builder, what: &str| -> Vec<Vec<usize>> {
                (0..cfg.heads)
                    .map(|m| (0..ch).map(|c| b.add(format!("l{l}.h{m}.{what}.c{c}"), d, hd)).collect())
                    .collect()
            };
            let q = per_head(&mut b, "q");
            let k = per_head(&mut b, "k");
            let v = per_head(&mut b, "v");
            let (mut q_pair, mut k_pair) = (Vec::new(), Vec::new());
            if cfg.per_pair_projections {
                for m in 0..cfg.heads {
                    q_pair.push(
                        pairs
                            .iter()
                            .map(|(x, y)| b.add(format!("l{l}.h{m}.q_pair.{x}_{y}"), d, hd))
                            .collect(),
                    );
                    k_pair.push(
                        pairs
                            .iter()
                            .map(|(x, y)| b.add(format!("l{l}.h{m}.k_pair.{x}_{y}"), d, hd))
                            .collect(),
                    );
                }
            }
            let r_item = b.add(format!("l{l}.r_item"), 1, ch * ch);
            let r_green = (n > 0).then(|| b.add(format!("l{l}.r_green"), 1, n * n));
            let gate_item = (
                b.add(format!("l{l}.gate_item.w"), 1, 1),
                b.add(format!("l{l}.gate_item.b"), 1, 1),
            );
            let gate_green = (n > 0).then(|| {
                (
                    b.add(format!("l{l}.gate_green.w"), 1, 1),
                    b.add(format!("l{l}.gate_green.b"), 1, 1),
                )
            });
            let per_channel = |b: &mut Builder, what: &str, r: usize, c: usize| -> Vec<usize> {
                (0..ch).map(|x| b.add(format!("l{l}.c{x}.{what}"), r, c)).collect()
            };
            let w_out = per_channel(&mut b, "w_out", d, d);
            let ffn_in = per_channel(&mut b, "ffn_in", d, cfg.ffn_hidden);
            let ffn_in_bias = per_channel(&mut b, "ffn_in_bias", 1, cfg.ffn_hidden);
            let ffn_out = per_channel(&mut b, "ffn_out", cfg.ffn_hidden, d);
            let ffn_out_bias = per_channel(&mut b, "ffn_out_bias", 1, d);
            layers.push(LayerParams {
                q,
                k,
                v,
                q_pair,
                k_pair,
                r_item,
                r_green,
                gate_item,
                gate_green,
                w_out,
                ffn_in,
                ffn_in_bias,
                ffn_out,
                ffn_out_bias,
            });
        }
        let p_rows = if arch.shared_p { 1 } else { arch.users };
        let p = b.add("p".into(), p_rows, ch);
        (
            Layout {
                item_table,
                bin_table,
                layers,
                p,
                pairs,
            },
            b.names,
            b.shapes,
        )
    }

    pub fn pair_index(&self, x: usize, y: usize) -> usize {
        self.pairs
            .iter()
            .position(|&p| p == (x, y))
            .expect("pair of distinct channels")
    }
}

/// Every learnable array of the model, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub arch: Architecture,
    pub layout: Layout,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.random_range(-a..a)).collect()
}

impl ParameterSet {
    /// Random initialization. `p` starts uniform; use [`super::init_p`] to
    /// install a variant.
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        let (layout, names, shapes) = Layout::build(arch);
        let emb = Normal::new(0.0, 1.0 / (arch.config.d as f64).sqrt()).expect("positive std");
        let mut tensors = Vec::with_capacity(names.len());
        for (name, &(r, c)) in names.iter().zip(&shapes) {
            let values: Vec<f64> = if name.ends_with("_table") {
                let mut v: Vec<f64> = (0..r * c).map(|_| emb.sample(rng)).collect();
                v[..c].iter_mut().for_each(|x| *x = 0.0);
                v
            } else if name.contains(".r_") || name.ends_with("bias") || name.ends_with(".b") {
                vec![0.0; r * c]
            } else if name.ends_with(".w") {
                vec![1.0]
            } else if name == "p" {
                vec![1.0 / c as f64; r * c]
            } else {
                xavier(rng, r, c)
            };
            tensors.push(Tensor::matrix(r, c, values)?.trainable());
        }
        Ok(ParameterSet {
            arch: arch.clone(),
            layout,
            names,
            tensors,
        })
    }

    /// Reassembles a parameter set, checking names and shapes against the
    /// layout implied by `arch`.
    pub fn from_parts(arch: Architecture, named: Vec<(String, Tensor)>) -> Result<Self> {
        let (layout, names, shapes) = Layout::build(&arch);
        if named.len() != names.len() {
            return Err(GrapeError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want, &(r, c))) in named.into_iter().zip(names.iter().zip(&shapes)) {
            if &name != want || t.shape() != [r, c] {
                return Err(GrapeError::Checkpoint(format!(
                    "tensor {name} {:?} does not match expected {want} [{r}, {c}]",
                    t.shape()
                )));
            }
            tensors.push(t);
        }
        Ok(ParameterSet {
            arch,
            layout,
            names,
            tensors,
        })
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn p(&self) -> &Tensor {
        &self.tensors[self.layout.p]
    }

    /// The weight row applied to `user`.
    pub fn p_row(&self, user: usize) -> &[f64] {
        let p = self.p();
        p.row(if self.arch.shared_p { 0 } else { user })
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t)).collect(),
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds per-tensor gradients collected from a tape.
    pub fn accumulate(&mut self, grads: &[Option<Vec<f64>>]) -> Result<()> {
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            if let (true, Some(g)) = (t.requires_grad(), g) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Keeps the padding rows of both embedding tables at zero.
    pub fn zero_padding_rows(&mut self) {
        for idx in [self.layout.item_table, self.layout.bin_table] {
            let t = &mut self.tensors[idx];
            let c = t.cols();
            t.row_mut(0).iter_mut().for_each(|x| *x = 0.0);
            if let Some(g) = t.grad_mut() {
                g[..c].iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
}

/// Parameters bound as leaves on one tape, indexable like the set.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn grads(&self, tape: &Tape<'_>) -> Vec<Option<Vec<f64>>> {
        self.vars.iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec)).collect()
    }
}
