//! Central finite-difference gradient verification.
//!
//! Run in `f64`: at `f32` the difference quotient loses too many digits to
//! separate an implementation bug from roundoff. The layer under test is
//! probed with a fixed pseudo-random linear functional of its output, which
//! catches sign and transposition errors that a plain output sum lets cancel.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::nn::{zero_grads, Parameterized, UnaryLayer};
use crate::rng::seeded_stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// Relative error convention used by all checks:
/// |a − b| / max(|a|, |b|, 1e-12).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-12)
}

/// Maximum [`rel_err`] over two equally long gradient vectors.
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of a scalar function at `x`.
///
/// `f` is called with the perturbed vector; `x` is restored after each probe.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    grad
}

/// All parameter values of `net`, flattened in visitation order.
pub fn flatten_params<S: Scalar>(net: &dyn Parameterized<S>) -> Vec<S> {
    let mut out = Vec::new();
    net.visit_params(&mut |_, p| out.extend_from_slice(&p.value));
    out
}

/// All parameter gradients of `net`, flattened in visitation order.
pub fn flatten_grads<S: Scalar>(net: &dyn Parameterized<S>) -> Vec<S> {
    let mut out = Vec::new();
    net.visit_params(&mut |_, p| out.extend_from_slice(&p.grad));
    out
}

/// Overwrite all parameters of `net` from a flat vector (visitation order).
/// Panics if the length disagrees; callers pair it with [`flatten_params`].
pub fn load_params<S: Scalar>(net: &mut dyn Parameterized<S>, flat: &[S]) {
    let mut off = 0usize;
    net.visit_params_mut(&mut |name, p| {
        let n = p.len();
        assert!(
            off + n <= flat.len(),
            "load_params: flat vector too short at {name}"
        );
        p.value.copy_from_slice(&flat[off..off + n]);
        off += n;
    });
    assert_eq!(off, flat.len(), "load_params: flat vector too long");
}

/// Result of a layer gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all parameter entries.
    pub param_err: f64,
    /// Worst relative error over all input entries.
    pub input_err: f64,
    /// Name of the worst parameter (empty when the layer has none).
    pub worst_param: String,
}

impl GradCheckReport {
    pub fn max_err(&self) -> f64 {
        self.param_err.max(self.input_err)
    }
}

/// Check a layer's analytic gradients (parameters and input) against central
/// differences of the probe loss. Returns the worst relative errors found.
pub fn check_unary_layer<L: UnaryLayer<f64>>(
    layer: &mut L,
    input: &Tensor3<f64>,
    eps: f64,
) -> Result<GradCheckReport> {
    let y0 = layer.forward(input)?;
    let (c, h, w) = y0.shape();

    // Fixed pseudo-random probe functional: loss = <probe, output>.
    let mut rng = seeded_stream(0x6F7261636C65, 7);
    let probe = Tensor3::<f64>::randn(c, h, w, &mut rng);
    let loss_of = |y: &Tensor3<f64>| -> f64 {
        y.as_slice()
            .iter()
            .zip(probe.as_slice())
            .map(|(&a, &b)| a * b)
            .sum()
    };

    zero_grads(layer);
    let grad_in = layer.backward(input, &probe)?;
    let analytic_params = flatten_grads(layer);
    let theta0 = flatten_params(layer);

    // Parameters.
    let mut param_err = 0.0f64;
    let mut worst_param = String::new();
    if !theta0.is_empty() {
        let mut eval = |theta: &[f64]| -> f64 {
            load_params(layer, theta);
            let y = layer.forward(input).expect("forward during FD probe");
            loss_of(&y)
        };
        let fd = central_diff(&mut eval, &theta0, eps);
        load_params(layer, &theta0);
        for (i, (&a, &b)) in analytic_params.iter().zip(&fd).enumerate() {
            let e = rel_err(a, b);
            if e > param_err {
                param_err = e;
                worst_param = param_name_at(layer, i);
            }
        }
    }

    // Input.
    let x0: Vec<f64> = input.as_slice().to_vec();
    let (ic, ih, iw) = input.shape();
    let mut eval_in = |xs: &[f64]| -> f64 {
        let t = Tensor3::from_vec(ic, ih, iw, xs.to_vec()).expect("FD probe tensor");
        let y = layer.forward(&t).expect("forward during FD probe");
        loss_of(&y)
    };
    let fd_in = central_diff(&mut eval_in, &x0, eps);
    let input_err = max_rel_err(grad_in.as_slice(), &fd_in);

    Ok(GradCheckReport {
        param_err,
        input_err,
        worst_param,
    })
}

/// Which named parameter owns flat index `i` (for error reporting).
fn param_name_at<S: Scalar>(net: &dyn Parameterized<S>, i: usize) -> String {
    let mut off = 0usize;
    let mut found = String::new();
    net.visit_params(&mut |name, p| {
        if found.is_empty() && i < off + p.len() {
            found = String::from(name);
        }
        off += p.len();
    });
    found
}
