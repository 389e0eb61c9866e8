//! Numerical cross-checking helpers shared by tests: central finite
//! differences as an independent oracle for analytic gradients.

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `x` with step `h`.
pub fn fd_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        out.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    out
}

/// Evaluates a graph-built scalar at `x` (no gradients recorded).
pub fn eval_scalar(build: impl Fn(&mut Graph, NodeId) -> Result<NodeId>, x: &Tensor) -> f64 {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let l = build(&mut g, xn).expect("builder failed");
    g.value(l).scalar_value()
}

/// Analytic gradient of a graph-built scalar at `x`.
pub fn analytic_grad(build: impl Fn(&mut Graph, NodeId) -> Result<NodeId>, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let l = build(&mut g, xn).expect("builder failed");
    g.grad(l, &[xn]).expect("grad failed").into_iter().next().unwrap()
}

/// Asserts that the analytic gradient of a graph-built scalar matches the
/// central-difference oracle to `tol` in the elementwise mixed
/// absolute/relative sense.
pub fn assert_grad_matches_fd(
    build: impl Fn(&mut Graph, NodeId) -> Result<NodeId>,
    x: &Tensor,
    h: f64,
    tol: f64,
) {
    let ana = analytic_grad(&build, x);
    let num = fd_grad(|xx| eval_scalar(&build, xx), x, h);
    for i in 0..x.numel() {
        let (a, n) = (ana.data()[i], num.data()[i]);
        let err = (a - n).abs() / (1.0 + n.abs());
        assert!(
            err <= tol,
            "gradient mismatch at coordinate {i}: analytic {a}, finite-difference {n} (err {err:.3e} > tol {tol:.3e})"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fd_grad_recovers_quadratic_gradient() {
        // f = x₀² + 3x₁ has gradient (2x₀, 3)
        let f = |x: &Tensor| x.data()[0] * x.data()[0] + 3.0 * x.data()[1];
        let g = fd_grad(f, &Tensor::vector(vec![2.0, -1.0]), 1e-5);
        assert_abs_diff_eq!(g.data()[0], 4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g.data()[1], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn every_scalar_primitive_passes_fd_check() {
        let x = Tensor::vector(vec![0.37, -0.81, 1.42]);
        let cases: Vec<(&str, Box<dyn Fn(&mut Graph, NodeId) -> crate::error::Result<NodeId>>)> = vec![
            ("tanh", Box::new(|g, x| { let t = g.tanh(x); Ok(g.sum(t)) })),
            ("sigmoid", Box::new(|g, x| { let t = g.sigmoid(x); Ok(g.sum(t)) })),
            ("exp", Box::new(|g, x| { let t = g.exp(x); Ok(g.sum(t)) })),
            ("relu", Box::new(|g, x| { let t = g.relu(x); Ok(g.sum(t)) })),
            ("abs", Box::new(|g, x| { let t = g.abs(x); Ok(g.sum(t)) })),
            ("pow2", Box::new(|g, x| { let t = g.pow_scalar(x, 2.0); Ok(g.sum(t)) })),
            ("mul_self", Box::new(|g, x| { let t = g.mul(x, x)?; Ok(g.sum(t)) })),
            ("div_const", Box::new(|g, x| {
                let c = g.constant(Tensor::vector(vec![2.0, 3.0, 4.0]));
                let t = g.div(x, c)?;
                Ok(g.sum(t))
            })),
            ("const_div", Box::new(|g, x| {
                let c = g.constant(Tensor::vector(vec![2.0, 3.0, 4.0]));
                let t = g.div(c, x)?;
                Ok(g.sum(t))
            })),
            ("matvec", Box::new(|g, x| {
                let a = g.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 0.0, 1.5, -1.0]));
                let ax = g.matmul(a, x)?;
                let s = g.mul(ax, ax)?;
                Ok(g.sum(s))
            })),
        ];
        for (name, build) in cases {
            let ana = analytic_grad(&build, &x);
            let num = fd_grad(|xx| eval_scalar(&build, xx), &x, 1e-6);
            for i in 0..x.numel() {
                let err = (ana.data()[i] - num.data()[i]).abs();
                assert!(err < 1e-7, "{name}: coord {i}: {} vs {}", ana.data()[i], num.data()[i]);
            }
        }
    }
}
