//! Gauss-Jacobi quadrature for integrals of the form
//! `∫₋₁¹ f(u)·(1-u)^(-α) du` with `0 < α < 1` — the weight that appears when
//! a Caputo fractional gradient is rescaled onto a fixed interval. Nodes and
//! weights come from the Golub-Welsch eigendecomposition of the Jacobi
//! matrix of the monic three-term recurrence; an `s`-point rule integrates
//! polynomials of degree ≤ 2s-1 against the weight exactly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{CoreError, Result};

/// Exponents this close to the ends of `(0,1)` are clamped before building a
/// rule; outside this range the weight is numerically degenerate.
pub const ALPHA_CLAMP: f64 = 1e-4;

const MAX_QL_SWEEPS: usize = 50;

/// Monic three-term recurrence coefficients `(a_k, b_k)` for the orthogonal
/// polynomials of the weight `(1-u)^(-α)` on `[-1,1]`:
/// `p_{k+1}(u) = (u - a_k)·p_k(u) - b_k·p_{k-1}(u)`, with `b_0` holding the
/// total mass `∫ (1-u)^(-α) du = 2^(1-α)/(1-α)`.
pub fn recurrence_coeffs(alpha: f64, k: usize) -> (f64, f64) {
    if k == 0 {
        return (alpha / (2.0 - alpha), (1.0 - alpha).recip() * 2f64.powf(1.0 - alpha));
    }
    let kf = k as f64;
    let two_k = 2.0 * kf - alpha;
    let a = -alpha * alpha / (two_k * (two_k + 2.0));
    let b = 4.0 * kf * kf * (kf - alpha) * (kf - alpha) / (two_k * two_k * (two_k * two_k - 1.0));
    (a, b)
}

/// An `s`-point Gauss rule for the weight `(1-u)^(-α)` on `[-1,1]`.
#[derive(Debug, Clone)]
pub struct QuadRule {
    alpha: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadRule {
    /// Builds the rule. `alpha` is clamped into
    /// `[ALPHA_CLAMP, 1 - ALPHA_CLAMP]`.
    pub fn new(alpha: f64, s: usize) -> Result<QuadRule> {
        if s == 0 {
            return Err(CoreError::Domain("quadrature rule needs at least one node".into()));
        }
        let alpha = alpha.clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP);
        if s == 1 {
            // 1×1 Jacobi matrix: the node is a_0, the weight is the mass
            let (a0, b0) = recurrence_coeffs(alpha, 0);
            return Ok(QuadRule { alpha, nodes: vec![a0], weights: vec![b0] });
        }

        let mut d: Vec<f64> = (0..s).map(|k| recurrence_coeffs(alpha, k).0).collect();
        // e[i] couples rows i and i+1 after the EISPACK-style shift in tql2;
        // filled here in the "coupling below row i+1" convention
        let mut e = vec![0.0; s];
        for k in 1..s {
            e[k] = recurrence_coeffs(alpha, k).1.sqrt();
        }
        let mut z = vec![vec![0.0; s]; s];
        for (i, row) in z.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        tql2(&mut d, &mut e, &mut z)?;

        let b0 = recurrence_coeffs(alpha, 0).1;
        let mut pairs: Vec<(f64, f64)> =
            (0..s).map(|j| (d[j], b0 * z[0][j] * z[0][j])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(QuadRule {
            alpha,
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// The (possibly clamped) exponent the rule was built for.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_l w_l·f(v_l) ≈ ∫₋₁¹ f(u)(1-u)^(-α) du`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&v, &w)| w * f(v)).sum()
    }
}

/// Process-wide rule cache; rules are immutable and cheap to share. Keys
/// round `alpha` to 1e-12 so that equal-up-to-noise exponents share a rule.
pub fn cached_rule(alpha: f64, s: usize) -> Result<Arc<QuadRule>> {
    static CACHE: OnceLock<Mutex<HashMap<(i64, usize), Arc<QuadRule>>>> = OnceLock::new();
    let clamped = alpha.clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP);
    let key = ((clamped * 1e12).round() as i64, s);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&key) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(QuadRule::new(alpha, s)?);
    cache.lock().unwrap().insert(key, rule.clone());
    Ok(rule)
}

/// Implicit-shift QL with eigenvector accumulation for a symmetric
/// tridiagonal matrix (EISPACK tql2). On entry `d` is the diagonal and
/// `e[1..]` the subdiagonal; on exit `d` holds eigenvalues (unsorted) and
/// column `j` of `z` the corresponding unit eigenvector.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut [Vec<f64>]) -> Result<()> {
    let n = d.len();
    if n <= 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    for l in 0..n {
        let mut iter = 0usize;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_SWEEPS {
                return Err(CoreError::EigenNonConvergence { max_sweeps: MAX_QL_SWEEPS });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // rotation annihilated early; restart this eigenvalue
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for zrow in z.iter_mut() {
                    let f = zrow[i + 1];
                    zrow[i + 1] = s * zrow[i] + c * f;
                    zrow[i] = c * zrow[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
