//! Dense row-major f64 tensors and the numeric kernels behind the graph ops.
//!
//! Shapes are explicit extent lists: `[]` is a scalar, `[n]` a vector,
//! `[r, c]` a matrix. All kernels are single-threaded and deterministic;
//! callers (the autodiff layer) validate shapes and report typed errors, so
//! kernels only carry debug assertions.

use rand_chacha::ChaCha12Rng;

use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Tensor { shape: vec![rows, cols], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    /// Standard normal entries drawn from `rng`.
    pub fn randn(shape: &[usize], rng: &mut ChaCha12Rng) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: rng::normal_vec(rng, n) }
    }

    /// Uniform entries in `[lo, hi)` drawn from `rng`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha12Rng) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: rng::uniform_vec(rng, n, lo, hi) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.data.len() == 1);
        self.data[0]
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(self.is_matrix());
        self.data[r * self.shape[1] + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(self.is_matrix());
        &mut self.data[r * self.shape[1] + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor { shape, data: self.data.clone() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + alpha * other`, elementwise.
    pub fn axpy(&self, alpha: f64, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a + alpha * b)
    }
}

// ── matrix kernels ──────────────────────────────────────────────────────────

/// `a (m,k) · b (k,n) -> (m,n)`. The k-outer loop keeps the inner update a
/// contiguous axpy over the output row, which the compiler vectorizes.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert!(a.is_matrix() && b.is_matrix());
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    debug_assert_eq!(k, k2);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

pub fn transpose(a: &Tensor) -> Tensor {
    debug_assert!(a.is_matrix());
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor { shape: vec![n, m], data: out }
}

/// Row sums: `(m,n) -> (m)`.
pub fn row_sum(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    let data = (0..m).map(|i| a.data[i * n..(i + 1) * n].iter().sum()).collect();
    Tensor { shape: vec![m], data }
}

/// Column sums: `(m,n) -> (n)`.
pub fn col_sum(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; n];
    for i in 0..m {
        for (o, &v) in out.iter_mut().zip(&a.data[i * n..(i + 1) * n]) {
            *o += v;
        }
    }
    Tensor { shape: vec![n], data: out }
}

/// Replicates a length-m vector across n columns: `out[i][j] = v[i]`.
pub fn broadcast_col(v: &Tensor, n: usize) -> Tensor {
    let m = v.data.len();
    let mut out = Vec::with_capacity(m * n);
    for &x in &v.data {
        out.extend(std::iter::repeat(x).take(n));
    }
    Tensor { shape: vec![m, n], data: out }
}

/// Replicates a length-n vector across m rows: `out[i][j] = v[j]`.
pub fn broadcast_row(v: &Tensor, m: usize) -> Tensor {
    let n = v.data.len();
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(&v.data);
    }
    Tensor { shape: vec![m, n], data: out }
}

/// Adds a length-n row vector to every row of an `(m,n)` matrix.
pub fn row_broadcast_add(a: &Tensor, r: &Tensor) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    debug_assert_eq!(r.data.len(), n);
    let mut out = a.data.clone();
    for i in 0..m {
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&r.data) {
            *o += v;
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

pub fn slice_cols(a: &Tensor, lo: usize, hi: usize) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    debug_assert!(lo <= hi && hi <= n);
    let w = hi - lo;
    let mut out = Vec::with_capacity(m * w);
    for i in 0..m {
        out.extend_from_slice(&a.data[i * n + lo..i * n + hi]);
    }
    Tensor { shape: vec![m, w], data: out }
}

/// Embeds an `(m,w)` matrix into an `(m,n)` zero matrix at column `lo`.
pub fn pad_cols(a: &Tensor, lo: usize, n: usize) -> Tensor {
    let (m, w) = (a.shape[0], a.shape[1]);
    debug_assert!(lo + w <= n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        out[i * n + lo..i * n + lo + w].copy_from_slice(&a.data[i * w..(i + 1) * w]);
    }
    Tensor { shape: vec![m, n], data: out }
}

pub fn slice1(a: &Tensor, lo: usize, hi: usize) -> Tensor {
    debug_assert!(a.is_vector() && lo <= hi && hi <= a.data.len());
    Tensor { shape: vec![hi - lo], data: a.data[lo..hi].to_vec() }
}

pub fn pad1(a: &Tensor, lo: usize, n: usize) -> Tensor {
    let w = a.data.len();
    debug_assert!(lo + w <= n);
    let mut out = vec![0.0; n];
    out[lo..lo + w].copy_from_slice(&a.data);
    Tensor { shape: vec![n], data: out }
}

pub fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, p) = (a.shape[0], a.shape[1]);
    let q = b.shape[1];
    debug_assert_eq!(m, b.shape[0]);
    let mut out = Vec::with_capacity(m * (p + q));
    for i in 0..m {
        out.extend_from_slice(&a.data[i * p..(i + 1) * p]);
        out.extend_from_slice(&b.data[i * q..(i + 1) * q]);
    }
    Tensor { shape: vec![m, p + q], data: out }
}

/// Numerically stable row-wise log-softmax.
pub fn log_softmax_rows(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &a.data[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

// ── fused gated recurrent cell ──────────────────────────────────────────────

/// One step of an LSTM cell applied independently to each of the `d` rows.
///
/// State layout is `[h | c]` as a single `(d, 2H)` matrix; the weight matrix
/// packs input and recurrent blocks as `[(f + H), 4H]` with gate column
/// order `[input, forget, cell, output]`.
pub fn lstm_cell_forward(feat: &Tensor, state: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (d, f) = (feat.shape[0], feat.shape[1]);
    let h = state.shape[1] / 2;
    debug_assert_eq!(w.shape[0], f + h);
    debug_assert_eq!(w.shape[1], 4 * h);
    debug_assert_eq!(b.data.len(), 4 * h);

    let z = cell_preactivation(feat, state, w, b);
    let mut out = vec![0.0; d * 2 * h];
    for i in 0..d {
        let zrow = &z[i * 4 * h..(i + 1) * 4 * h];
        let c_prev = &state.data[i * 2 * h + h..(i + 1) * 2 * h];
        let orow = &mut out[i * 2 * h..(i + 1) * 2 * h];
        for j in 0..h {
            let ig = sigmoid(zrow[j]);
            let fg = sigmoid(zrow[h + j]);
            let gg = zrow[2 * h + j].tanh();
            let og = sigmoid(zrow[3 * h + j]);
            let c_new = fg * c_prev[j] + ig * gg;
            orow[j] = og * c_new.tanh();
            orow[h + j] = c_new;
        }
    }
    Tensor { shape: vec![d, 2 * h], data: out }
}

/// Gradients of `lstm_cell_forward` with respect to all four inputs, given
/// the forward output and the adjoint of the output. Gates are recomputed
/// from the inputs, so no activations need to be stored across steps.
pub fn lstm_cell_backward(
    feat: &Tensor,
    state: &Tensor,
    w: &Tensor,
    b: &Tensor,
    out: &Tensor,
    adj: &Tensor,
) -> (Tensor, Tensor, Tensor, Tensor) {
    let (d, f) = (feat.shape[0], feat.shape[1]);
    let h = state.shape[1] / 2;
    let z = cell_preactivation(feat, state, w, b);

    let mut dz = vec![0.0; d * 4 * h];
    let mut dstate = vec![0.0; d * 2 * h];
    for i in 0..d {
        let zrow = &z[i * 4 * h..(i + 1) * 4 * h];
        let c_prev = &state.data[i * 2 * h + h..(i + 1) * 2 * h];
        let c_new = &out.data[i * 2 * h + h..(i + 1) * 2 * h];
        let gh = &adj.data[i * 2 * h..i * 2 * h + h];
        let gc_in = &adj.data[i * 2 * h + h..(i + 1) * 2 * h];
        let dzrow = &mut dz[i * 4 * h..(i + 1) * 4 * h];
        let dsrow = &mut dstate[i * 2 * h..(i + 1) * 2 * h];
        for j in 0..h {
            let ig = sigmoid(zrow[j]);
            let fg = sigmoid(zrow[h + j]);
            let gg = zrow[2 * h + j].tanh();
            let og = sigmoid(zrow[3 * h + j]);
            let t = c_new[j].tanh();
            let dc = gc_in[j] + gh[j] * og * (1.0 - t * t);
            dzrow[j] = dc * gg * ig * (1.0 - ig);
            dzrow[h + j] = dc * c_prev[j] * fg * (1.0 - fg);
            dzrow[2 * h + j] = dc * ig * (1.0 - gg * gg);
            dzrow[3 * h + j] = gh[j] * t * og * (1.0 - og);
            // adjoint of h_prev is filled below via dz · wᵀ; this is c_prev
            dsrow[h + j] = dc * fg;
        }
    }
    let dz = Tensor { shape: vec![d, 4 * h], data: dz };

    // dX = dz · wᵀ splits into the feat block and the h_prev block.
    let wt = transpose(w);
    let dx = matmul(&dz, &wt);
    let mut dfeat = vec![0.0; d * f];
    for i in 0..d {
        dfeat[i * f..(i + 1) * f].copy_from_slice(&dx.data[i * (f + h)..i * (f + h) + f]);
        for j in 0..h {
            dstate[i * 2 * h + j] = dx.data[i * (f + h) + f + j];
        }
    }

    // dW = Xᵀ · dz, assembled without materializing X.
    let mut dw = vec![0.0; (f + h) * 4 * h];
    for i in 0..d {
        let dzrow = &dz.data[i * 4 * h..(i + 1) * 4 * h];
        let frow = &feat.data[i * f..(i + 1) * f];
        let hrow = &state.data[i * 2 * h..i * 2 * h + h];
        for (r, &xv) in frow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &dzv) in dw[r * 4 * h..(r + 1) * 4 * h].iter_mut().zip(dzrow) {
                *o += xv * dzv;
            }
        }
        for (r, &xv) in hrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let base = (f + r) * 4 * h;
            for (o, &dzv) in dw[base..base + 4 * h].iter_mut().zip(dzrow) {
                *o += xv * dzv;
            }
        }
    }
    let db = col_sum(&dz);

    (
        Tensor { shape: vec![d, f], data: dfeat },
        Tensor { shape: vec![d, 2 * h], data: dstate },
        Tensor { shape: vec![f + h, 4 * h], data: dw },
        db,
    )
}

fn cell_preactivation(feat: &Tensor, state: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (d, f) = (feat.shape[0], feat.shape[1]);
    let h = state.shape[1] / 2;
    let cols = 4 * h;
    let mut z = Vec::with_capacity(d * cols);
    for _ in 0..d {
        z.extend_from_slice(&b.data);
    }
    for i in 0..d {
        let zrow = &mut z[i * cols..(i + 1) * cols];
        let frow = &feat.data[i * f..(i + 1) * f];
        for (kk, &xv) in frow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w.data[kk * cols..(kk + 1) * cols];
            for (o, &wv) in zrow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
        let hrow = &state.data[i * 2 * h..i * 2 * h + h];
        for (kk, &xv) in hrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w.data[(f + kk) * cols..(f + kk + 1) * cols];
            for (o, &wv) in zrow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    z
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_known_product() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(transpose(&transpose(&a)), a);
    }

    #[test]
    fn slicing_and_padding_are_inverse_on_support() {
        let a = Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let s = slice_cols(&a, 1, 3);
        assert_eq!(s.data(), &[2.0, 3.0, 6.0, 7.0]);
        let p = pad_cols(&s, 1, 4);
        assert_eq!(p.data(), &[0.0, 2.0, 3.0, 0.0, 0.0, 6.0, 7.0, 0.0]);
    }

    #[test]
    fn log_softmax_rows_sum_to_one() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]);
        let ls = log_softmax_rows(&a);
        for i in 0..2 {
            let s: f64 = (0..3).map(|j| ls.at(i, j).exp()).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn broadcasts_match_definitions() {
        let v = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(broadcast_col(&v, 3).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(broadcast_row(&v, 3).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }
}
