use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per parameter tensor (all of them when smaller).
    pub max_coords: usize,
    pub seed: u64,
    /// Denominator floor for the relative error, so that near-zero
    /// gradients are compared on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_coords: 200,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub index: usize,
    pub checked: usize,
    /// Coordinates skipped because the loss is not differentiable there
    /// (relu kinks, max-pool ties).
    pub excluded: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn excluded(&self) -> usize {
        self.params.iter().map(|p| p.excluded).sum()
    }
}

/// Compares `analytic` gradients against central finite differences of `loss`.
///
/// A coordinate is treated as non-differentiable and excluded when the second
/// difference `f(θ+ε) − 2f(θ) + f(θ−ε)` is not small against the first
/// difference, which is how a kink inside `[θ−ε, θ+ε]` shows up.
pub fn grad_check(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    mut loss: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() {
        return Err(Error::contract("grad_check: gradient count differs from parameter count"));
    }
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let f0 = loss(&work)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        max_rel_error: 0.0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[pi].shape() {
            return Err(Error::contract(format!("grad_check: gradient {pi} has the wrong shape")));
        }
        let numel = params[pi].len();
        let coords: Vec<usize> = if numel <= cfg.max_coords {
            (0..numel).collect()
        } else {
            let mut c = index::sample(&mut rng, numel, cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut check = ParamCheck {
            index: pi,
            checked: 0,
            excluded: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for c in coords {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + cfg.eps;
            let fp = loss(&work)?;
            work[pi].data_mut()[c] = orig - cfg.eps;
            let fm = loss(&work)?;
            work[pi].data_mut()[c] = orig;

            let first = (fp - fm).abs();
            let second = (fp - 2.0 * f0 + fm).abs();
            if second > 1e-10 * f0.abs().max(1.0) && second > 0.05 * first {
                check.excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let a = grad.data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            check.checked += 1;
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst = Some(c);
            }
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    Ok(report)
}

/// [`grad_check`] for a loss built directly on a tape from owned leaves.
pub fn grad_check_tape<F>(params: &[Tensor<f64>], build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.take(v)).collect();
    grad_check(
        params,
        &analytic,
        |ps| {
            let mut tape = Tape::inference();
            let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone(), false)).collect();
            let loss = build(&mut tape, &vars)?;
            Ok(tape.value(loss).item())
        },
        cfg,
    )
}
