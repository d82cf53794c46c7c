use crate::error::Result;
use crate::numcore::tape::{Tape, Var};
use crate::numcore::tensor::Tensor;

/// Largest gradient magnitude below which errors are measured absolutely.
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compares tape gradients against central finite differences with step `h`.
///
/// `build` receives one bound variable per tensor in `params` (in order) and
/// must return a scalar loss. Each block's error is the largest absolute
/// discrepancy divided by the block's largest gradient magnitude.
pub fn grad_check<F>(
    params: &mut [Tensor],
    names: &[String],
    build: F,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Option<Vec<f64>>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = build(&mut tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(params.iter())
            .map(|(&v, p)| {
                p.requires_grad()
                    .then(|| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
            })
            .collect()
    };

    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = build(&mut tape, &vars)?;
        tape.scalar_value(loss)
    };

    let mut blocks = Vec::new();
    for i in 0..params.len() {
        let Some(ana) = &analytic[i] else { continue };
        let mut num = vec![0.0; ana.len()];
        for (k, slot) in num.iter_mut().enumerate() {
            let orig = params[i].values()[k];
            params[i].values_mut()[k] = orig + h;
            let up = eval(params)?;
            params[i].values_mut()[k] = orig - h;
            let down = eval(params)?;
            params[i].values_mut()[k] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let scale = ana
            .iter()
            .chain(&num)
            .fold(SCALE_FLOOR, |m, x| m.max(x.abs()));
        let err = ana
            .iter()
            .zip(&num)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        blocks.push(BlockReport {
            name: names.get(i).cloned().unwrap_or_else(|| format!("param{i}")),
            max_rel_error: err / scale,
        });
    }
    Ok(GradCheckReport { tolerance, blocks })
}
