//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Relative errors use `max(|analytic|, |numeric|, abs_floor)` as denominator,
    /// so coordinates whose true gradient is zero are judged on absolute error.
    pub abs_floor: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-4,
            coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
    pub passed: bool,
}

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Gradients of `f` at `params` via the tape.
pub fn analytic_gradients<F>(f: &F, params: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.value(out).shape()
        )));
    }
    let mut grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(p)))
        .collect())
}

/// Compares supplied `analytic` gradients against central differences of `f`.
pub fn check_gradients<F>(
    f: &F,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if analytic.len() != params.len() || analytic.iter().zip(params).any(|(a, p)| a.shape() != p.shape()) {
        return Err(Error::Contract("analytic gradients must mirror the parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        passed: true,
    };
    for pi in 0..params.len() {
        let n = params[pi].numel();
        let coords: Vec<usize> = match cfg.coords_per_param {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let orig = params[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + cfg.eps;
            let plus = evaluate(f, &work)?;
            work[pi].data_mut()[idx] = orig - cfg.eps;
            let minus = evaluate(f, &work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[pi].data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            report.coords_checked += 1;
            if report.worst.is_none() || !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = Some((pi, idx, a, numeric));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tol && report.max_rel_error.is_finite();
    Ok(report)
}

/// Checks the tape gradients of `f` against central finite differences.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, params)?;
    check_gradients(&f, params, &analytic, cfg)
}
