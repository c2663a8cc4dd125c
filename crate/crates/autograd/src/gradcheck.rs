//! Central finite-difference checks for graph code.

use crate::{Graph, Mode, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Elements left out because the function has a kink within the step.
    pub skipped: usize,
}

/// Relative error with a floor on the denominator so that vanishing gradients
/// compare on an absolute scale.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of a scalar function of one input tensor
/// with central differences at `step`, on the listed element indices
/// (all elements when `indices` is `None`).
pub fn check_input_gradient(
    input: &Tensor<f64>,
    step: f64,
    indices: Option<&[usize]>,
    floor: f64,
    f: impl Fn(&Graph<f64>, Var) -> Var,
) -> GradCheck {
    check_input_gradient_in(Mode::Eval, input, step, indices, floor, f)
}

/// Like [`check_input_gradient`], but leaves out elements where central
/// differences at `step` and `step / 4` disagree by more than `screen`
/// (relative, same floor). For piecewise-smooth functions (ReLU, max-pool,
/// bilinear sampling) such elements sit next to a kink where finite
/// differences are not a valid reference.
pub fn check_input_gradient_screened(
    input: &Tensor<f64>,
    step: f64,
    indices: Option<&[usize]>,
    floor: f64,
    screen: f64,
    f: impl Fn(&Graph<f64>, Var) -> Var,
) -> GradCheck {
    run(Mode::Eval, input, step, indices, floor, Some(screen), f)
}

/// [`check_input_gradient`] with graphs built in the given mode.
pub fn check_input_gradient_in(
    mode: Mode,
    input: &Tensor<f64>,
    step: f64,
    indices: Option<&[usize]>,
    floor: f64,
    f: impl Fn(&Graph<f64>, Var) -> Var,
) -> GradCheck {
    run(mode, input, step, indices, floor, None, f)
}

fn run(
    mode: Mode,
    input: &Tensor<f64>,
    step: f64,
    indices: Option<&[usize]>,
    floor: f64,
    screen: Option<f64>,
    f: impl Fn(&Graph<f64>, Var) -> Var,
) -> GradCheck {
    let g = Graph::<f64>::new(mode);
    let x = g.leaf(input.clone());
    let y = f(&g, x);
    let grads = g.backward(y);
    let analytic = grads
        .leaf(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));
    let eval = |t: Tensor<f64>| {
        let g = Graph::<f64>::new(mode);
        g.set_grad_enabled(false);
        let x = g.constant(t);
        let y = f(&g, x);
        g.item(y)
    };
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..input.numel()).collect();
            &all
        }
    };
    let mut out = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let central = |i: usize, h: f64| {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        (eval(plus) - eval(minus)) / (2.0 * h)
    };
    for &i in idx {
        let numeric = central(i, step);
        if let Some(tol) = screen {
            if rel_err(numeric, central(i, step / 4.0), floor) > tol {
                out.skipped += 1;
                continue;
            }
        }
        let a = analytic.data()[i];
        out.max_rel_err = out.max_rel_err.max(rel_err(a, numeric, floor));
        out.max_abs_err = out.max_abs_err.max((a - numeric).abs());
        out.checked += 1;
    }
    out
}
