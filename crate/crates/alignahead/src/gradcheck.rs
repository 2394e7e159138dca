//! Finite-difference verification of backward rules.
//!
//! [`grad_check`] rebuilds a user-supplied scalar computation with each
//! parameter entry nudged by `±h`, compares the central difference against the
//! analytic gradient from [`Tape::backward`], and reports the worst relative
//! error per parameter. It runs in `f64` only; checking `f32` this way would
//! mostly measure roundoff.

use crate::dense::DenseMatrix;
use crate::tape::{Tape, Var};

/// Worst relative gradient error observed for each parameter, in the order
/// the parameters were supplied.
pub struct GradCheck {
    pub per_param: Vec<f64>,
}

impl GradCheck {
    /// Largest error across all parameters (0 when there are none).
    pub fn worst(&self) -> f64 {
        self.per_param.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks the gradient of `build` at `inits` with step size `h`.
///
/// `build` receives a fresh tape plus one tracked parameter per entry of
/// `inits` (in order) and must return a `1x1` node. Relative error for one
/// entry is `|analytic - numeric| / max(1, |analytic|, |numeric|)`, so tiny
/// gradients are judged on absolute terms.
///
/// Functions with kinks (relu and friends, max reductions) are only checked
/// meaningfully when no input sits within `h` of a kink; callers choose
/// initial values accordingly.
pub fn grad_check(
    build: impl Fn(&Tape<f64>, &[Var]) -> Var,
    inits: &[DenseMatrix<f64>],
    h: f64,
) -> GradCheck {
    let eval = |points: &[DenseMatrix<f64>]| -> (f64, Vec<Option<DenseMatrix<f64>>>) {
        let tape = Tape::new();
        let params: Vec<Var> = points.iter().map(|m| tape.param(m.clone())).collect();
        let root = build(&tape, &params);
        assert_eq!(tape.shape(root), (1, 1), "grad_check target must be a 1x1 scalar");
        let value = tape.scalar_value(root);
        let mut grads = tape.backward(root);
        let collected = params.iter().map(|&p| grads.take(p)).collect();
        (value, collected)
    };

    let (_, analytic) = eval(inits);

    let mut per_param = Vec::with_capacity(inits.len());
    let mut work: Vec<DenseMatrix<f64>> = inits.to_vec();
    for (pi, init) in inits.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..init.as_slice().len() {
            let orig = init.as_slice()[j];
            work[pi].as_mut_slice()[j] = orig + h;
            let (f_plus, _) = eval(&work);
            work[pi].as_mut_slice()[j] = orig - h;
            let (f_minus, _) = eval(&work);
            work[pi].as_mut_slice()[j] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pi].as_ref().map_or(0.0, |g| g.as_slice()[j]);
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
        per_param.push(worst);
    }
    GradCheck { per_param }
}
