//! Central finite-difference check of analytic gradients.

use super::{Tape, Tensor, TensorError, Var};

/// Gradient entries whose analytic and numeric magnitudes are both below this
/// are compared on an absolute scale instead of a relative one.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub max_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the tape gradient of `f` at `params` against central differences
/// with the given step. `f` must be deterministic.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport, TensorError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    grad_check_with_floor(f, params, step, tol, DEFAULT_ABS_FLOOR)
}

pub fn grad_check_with_floor<F>(
    f: F,
    params: &[Tensor],
    step: f64,
    tol: f64,
    abs_floor: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(TensorError::InvalidArgument(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }

    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape()).expect("valid shape")))
            .collect()
    };

    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut worst: f64 = 0.0;
        for i in 0..params[pi].numel() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let exact = analytic[pi].data()[i];
            worst = worst.max(relative_error(exact, numeric, abs_floor));
        }
        per_param.push(worst);
    }
    let max_error = per_param.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_error,
        tol,
        passed: max_error <= tol,
    })
}

pub fn relative_error(a: f64, b: f64, abs_floor: f64) -> f64 {
    let diff = (a - b).abs();
    diff / a.abs().max(b.abs()).max(abs_floor)
}
