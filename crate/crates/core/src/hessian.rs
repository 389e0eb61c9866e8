//! Hessian-vector products and Hessian-diagonal estimation without ever
//! forming the Hessian. The diagonal enters the fractional gradient's
//! curvature term; on large problems it is estimated with Hutchinson's
//! method, `diag(H) = E[z ⊙ Hz]` for Rademacher `z`.

use rand::Rng;

use crate::autodiff::Graph;
use crate::error::Result;
use crate::objective::Objective;
use crate::rng;
use crate::tensor::Tensor;

/// Hessian-vector product `H(x)·z` of the objective at `x`, computed as the
/// gradient of `⟨∇f(x), z⟩` (double backward; exact, not finite-differenced).
pub fn hvp_at(obj: &dyn Objective, x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let loss = obj.build(&mut g, xn)?;
    g.hvp(loss, xn, z)
}

/// Exact Hessian diagonal via `dim` products with basis vectors. Intended
/// for small problems and as the reference for the stochastic estimate.
pub fn exact_diag_at(obj: &dyn Objective, x: &Tensor) -> Result<Tensor> {
    let d = x.numel();
    let mut diag = Tensor::zeros(&[d]);
    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let loss = obj.build(&mut g, xn)?;
    let mut e = Tensor::zeros(&[d]);
    for j in 0..d {
        e.data_mut()[j] = 1.0;
        let col = g.hvp(loss, xn, &e)?;
        diag.data_mut()[j] = col.data()[j];
        e.data_mut()[j] = 0.0;
    }
    Ok(diag)
}

/// Draws `m` Rademacher (±1) probe vectors of length `d`.
pub fn rademacher_probes(d: usize, m: usize, rng: &mut impl Rng) -> Vec<Tensor> {
    (0..m).map(|_| Tensor::vector(rng::rademacher_vec(rng, d))).collect()
}

/// Hutchinson estimate of the Hessian diagonal at `x`:
/// the average of `z ⊙ H(x)z` over the given probes.
pub fn hutchinson_diag_at(obj: &dyn Objective, x: &Tensor, probes: &[Tensor]) -> Result<Tensor> {
    assert!(!probes.is_empty(), "hutchinson_diag_at needs at least one probe");
    let mut acc = Tensor::zeros(x.shape());
    for z in probes {
        let hz = hvp_at(obj, x, z)?;
        for i in 0..acc.numel() {
            acc.data_mut()[i] += z.data()[i] * hz.data()[i];
        }
    }
    Ok(acc.map(|v| v / probes.len() as f64))
}
