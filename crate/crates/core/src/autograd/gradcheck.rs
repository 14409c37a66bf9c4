use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic gradients against central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|a − n| / (|a| + |n| + eps)` over all checked elements.
    pub max_rel_error: f64,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub passed: bool,
}

/// Checks the gradient of the scalar function `f` at `inputs`.
///
/// `f` must be deterministic; build it on the supplied tape from the supplied
/// input vars only.
pub fn grad_check<Fun>(f: Fun, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_on(Tape::new, f, inputs, eps, tol)
}

/// Like [`grad_check`], on tapes made by `make_tape`. A training tape with a
/// fixed seed replays the same dropout masks on every evaluation.
pub fn grad_check_on<Mk, Fun>(make_tape: Mk, f: Fun, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    Mk: Fn() -> Tape<f64>,
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = make_tape();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut t = make_tape();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let out = f(&mut t, &vs)?;
        Ok(t.data(out)[0])
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut max_rel_error: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let mut col = Vec::with_capacity(input.len());
        for (j, &a) in analytic[i].iter().enumerate() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += eps;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] -= 2.0 * eps;
            let down = eval(&xs)?;
            let n = (up - down) / (2.0 * eps);
            max_rel_error = max_rel_error.max((a - n).abs() / (a.abs() + n.abs() + eps));
            col.push(n);
        }
        numeric.push(col);
    }

    Ok(GradCheckReport {
        max_rel_error,
        analytic,
        numeric,
        passed: max_rel_error < tol,
    })
}
