//! The optimizee suite the benchmark runs against.
//!
//! Three families, in increasing order of roughness:
//!
//! * random least squares — convex quadratics `½‖Wᵀx − y‖²` where every
//!   quantity of interest (gradient, curvature, minimizer, exact line-search
//!   rate) has a closed form through the [`QuadraticProblem`] view;
//! * one-dimensional regression — a small tanh network fit by residual sum
//!   of squares to samples of a smooth bump ([`h1`]) or a discontinuous
//!   step ([`h2`]);
//! * image classification — a single-hidden-layer ReLU network on
//!   MNIST-style data with epoch-partitioned minibatches.
//!
//! Also provides the one-step look-ahead rate search used by the regression
//! experiments and an IDX-format reader for the image data.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::cfgd::QuadraticProblem;
use crate::error::{CoreError, Result};
use crate::objective::Objective;
use crate::rng::{self, StreamKind};
use crate::tensor::Tensor;

// ── least squares ───────────────────────────────────────────────────────────

/// Random least-squares instance `f(x) = ½‖Wᵀx − y‖²`.
///
/// Carries the equivalent quadratic `½xᵀAx + bᵀx` with `A = WWᵀ` and
/// `b = −Wy`, which differs from `f` only by the constant `½‖y‖²`; the two
/// views share gradients, curvature, and minimizers, so fractional closed
/// forms and the exact line-search rate come from [`LeastSquares::quadratic`]
/// while the objective itself reports the non-negative residual loss.
pub struct LeastSquares {
    quad: QuadraticProblem,
    design: Tensor,
    target: Tensor,
    /// ½‖y‖², the constant dropped by the quadratic view.
    offset: f64,
}

impl LeastSquares {
    /// Draws a `d × m` design and an `m`-vector target with i.i.d. standard
    /// normal entries (design first, row-major, then target).
    pub fn sample(d: usize, m: usize, rng: &mut impl Rng) -> Result<LeastSquares> {
        if d == 0 || m == 0 {
            return Err(CoreError::Domain(format!(
                "least squares needs d, m >= 1, got d={d}, m={m}"
            )));
        }
        let design = Tensor::matrix(d, m, rng::normal_vec(rng, d * m));
        let target = Tensor::vector(rng::normal_vec(rng, m));
        LeastSquares::from_parts(design, target)
    }

    /// Builds the instance from an explicit `d × m` design and length-`m`
    /// target.
    pub fn from_parts(design: Tensor, target: Tensor) -> Result<LeastSquares> {
        if design.shape().len() != 2 || target.shape() != [design.shape()[1]] {
            return Err(CoreError::ShapeMismatch {
                op: "least_squares",
                lhs: design.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let (d, m) = (design.shape()[0], design.shape()[1]);
        let w = design.data();
        let y = target.data();
        // A = W Wᵀ (symmetric by construction: compute the upper triangle,
        // mirror it), b = −W y.
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for k in 0..m {
                    s += w[i * m + k] * w[j * m + k];
                }
                a[i * d + j] = s;
                a[j * d + i] = s;
            }
        }
        let mut b = vec![0.0; d];
        for i in 0..d {
            let mut s = 0.0;
            for k in 0..m {
                s += w[i * m + k] * y[k];
            }
            b[i] = -s;
        }
        let offset = 0.5 * target.data().iter().map(|v| v * v).sum::<f64>();
        Ok(LeastSquares {
            quad: QuadraticProblem::new(Tensor::matrix(d, d, a), Tensor::vector(b))?,
            design,
            target,
            offset,
        })
    }

    /// The quadratic view `½xᵀAx + bᵀx` (loses the constant `½‖y‖²`).
    pub fn quadratic(&self) -> &QuadraticProblem {
        &self.quad
    }

    pub fn design(&self) -> &Tensor {
        &self.design
    }

    pub fn target(&self) -> &Tensor {
        &self.target
    }
}

impl Objective for LeastSquares {
    fn dim(&self) -> usize {
        self.design.shape()[0]
    }

    fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let quad = self.quad.build(g, x)?;
        Ok(g.add_scalar(quad, self.offset))
    }
}

// ── regression targets ──────────────────────────────────────────────────────

/// Smooth bump: `sin(2πz)·exp(−z²)`.
pub fn h1(z: f64) -> f64 {
    (2.0 * std::f64::consts::PI * z).sin() * (-z * z).exp()
}

/// Unit step with a ripple: `1 if z > 0 else 0, plus 0.2·sin(2πz)`.
/// The step is 0 at `z = 0`.
pub fn h2(z: f64) -> f64 {
    let step = if z > 0.0 { 1.0 } else { 0.0 };
    step + 0.2 * (2.0 * std::f64::consts::PI * z).sin()
}

// ── tanh regression network ─────────────────────────────────────────────────

/// Fits a one-hidden-layer tanh network `1 → H → 1` to scalar samples by
/// unaveraged residual sum of squares: `f(θ) = Σ_i (net(z_i; θ) − t_i)²`.
///
/// Flat parameter layout: `[w1 (H), b1 (H), w2 (H), b2 (1)]`, so
/// `dim = 3H + 1` (the `(in+1)·out` count per layer).
pub struct TanhRegression {
    inputs: Tensor,
    targets: Tensor,
    hidden: usize,
}

impl TanhRegression {
    /// Builds the objective over explicit `(z, target)` pairs.
    pub fn from_samples(points: &[(f64, f64)], hidden: usize) -> Result<TanhRegression> {
        if points.is_empty() || hidden == 0 {
            return Err(CoreError::Domain(format!(
                "tanh regression needs at least one sample and one hidden unit, \
                 got {} samples, hidden={hidden}",
                points.len()
            )));
        }
        let n = points.len();
        let inputs = Tensor::matrix(n, 1, points.iter().map(|p| p.0).collect());
        let targets = Tensor::matrix(n, 1, points.iter().map(|p| p.1).collect());
        Ok(TanhRegression {
            inputs,
            targets,
            hidden,
        })
    }

    /// Draws `n` inputs uniformly from `[−1, 1]` and labels them with
    /// `target`.
    pub fn sample(
        target: impl Fn(f64) -> f64,
        n: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<TanhRegression> {
        let zs = rng::uniform_vec(rng, n, -1.0, 1.0);
        let points: Vec<(f64, f64)> = zs.into_iter().map(|z| (z, target(z))).collect();
        TanhRegression::from_samples(&points, hidden)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Layer-wise uniform initialization `U(−√k, √k)` with `k = 1/fan_in`:
    /// the input layer (fan-in 1) spans `±1`, the output layer `±√(1/H)`.
    pub fn init_params(&self, rng: &mut impl Rng) -> Tensor {
        let h = self.hidden;
        let k1 = 1.0;
        let k2 = (1.0 / h as f64).sqrt();
        let mut v = rng::uniform_vec(rng, 2 * h, -k1, k1);
        v.extend(rng::uniform_vec(rng, h + 1, -k2, k2));
        Tensor::vector(v)
    }
}

impl Objective for TanhRegression {
    fn dim(&self) -> usize {
        3 * self.hidden + 1
    }

    fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let h = self.hidden;
        let w1 = g.slice1(x, 0, h)?;
        let w1 = g.reshape(w1, &[1, h])?;
        let b1 = g.slice1(x, h, 2 * h)?;
        let w2 = g.slice1(x, 2 * h, 3 * h)?;
        let w2 = g.reshape(w2, &[h, 1])?;
        let b2 = g.slice1(x, 3 * h, 3 * h + 1)?;

        let zin = g.constant(self.inputs.clone());
        let pre = g.matmul(zin, w1)?;
        let pre = g.row_broadcast_add(pre, b1)?;
        let act = g.tanh(pre);
        let out = g.matmul(act, w2)?;
        let out = g.row_broadcast_add(out, b2)?;

        let t = g.constant(self.targets.clone());
        let resid = g.sub(out, t)?;
        let sq = g.mul(resid, resid)?;
        Ok(g.sum(sq))
    }
}

// ── image classification ────────────────────────────────────────────────────

/// Output classes of the image classifier.
pub const CLASS_COUNT: usize = 10;

/// In-memory image/label set. Pixels are scaled to `[0, 1]`; labels take
/// values `0..CLASS_COUNT`.
#[derive(Debug, Clone)]
pub struct MnistData {
    /// `(n, pixels)` matrix, one flattened image per row.
    pub images: Tensor,
    /// One label per image.
    pub labels: Vec<u8>,
}

impl MnistData {
    /// Reads an image/label file pair in IDX format and cross-checks their
    /// counts.
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<MnistData> {
        let images = load_idx_images(images_path)?;
        let labels = load_idx_labels(labels_path)?;
        if images.shape()[0] != labels.len() {
            return Err(CoreError::InvalidData(format!(
                "image/label count mismatch: {} images in {} but {} labels in {}",
                images.shape()[0],
                images_path.display(),
                labels.len(),
                labels_path.display()
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= CLASS_COUNT {
                return Err(CoreError::InvalidData(format!(
                    "label {l} at item {i} is outside the {CLASS_COUNT}-class range"
                )));
            }
        }
        Ok(MnistData { images, labels })
    }

    /// Number of items.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps only the first `n` items (desk-scale subsetting).
    pub fn take(self, n: usize) -> MnistData {
        if n >= self.len() {
            return self;
        }
        let pixels = self.images.shape()[1];
        let images = Tensor::matrix(n, pixels, self.images.data()[..n * pixels].to_vec());
        let labels = self.labels[..n].to_vec();
        MnistData { images, labels }
    }
}

fn be_u32(bytes: &[u8], off: usize) -> u32 {
    u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
}

/// Parses an IDX image file (big-endian magic 2051, count, rows, cols, then
/// one byte per pixel) into an `(n, rows·cols)` matrix scaled by `1/255`.
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let raw = fs::read(path)?;
    if raw.len() < 16 {
        return Err(CoreError::InvalidData(format!(
            "{}: IDX image header needs 16 bytes, file has {}",
            path.display(),
            raw.len()
        )));
    }
    let magic = be_u32(&raw, 0);
    if magic != 2051 {
        return Err(CoreError::InvalidData(format!(
            "{}: expected IDX image magic 2051, found {magic}",
            path.display()
        )));
    }
    let n = be_u32(&raw, 4) as usize;
    let rows = be_u32(&raw, 8) as usize;
    let cols = be_u32(&raw, 12) as usize;
    let expected = 16 + n * rows * cols;
    if raw.len() != expected {
        return Err(CoreError::InvalidData(format!(
            "{}: expected {expected} bytes for {n} images of {rows}x{cols}, found {}",
            path.display(),
            raw.len()
        )));
    }
    let data = raw[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::matrix(n, rows * cols, data))
}

/// Parses an IDX label file (big-endian magic 2049, count, then one byte per
/// label).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.len() < 8 {
        return Err(CoreError::InvalidData(format!(
            "{}: IDX label header needs 8 bytes, file has {}",
            path.display(),
            raw.len()
        )));
    }
    let magic = be_u32(&raw, 0);
    if magic != 2049 {
        return Err(CoreError::InvalidData(format!(
            "{}: expected IDX label magic 2049, found {magic}",
            path.display()
        )));
    }
    let n = be_u32(&raw, 4) as usize;
    let expected = 8 + n;
    if raw.len() != expected {
        return Err(CoreError::InvalidData(format!(
            "{}: expected {expected} bytes for {n} labels, found {}",
            path.display(),
            raw.len()
        )));
    }
    Ok(raw[8..].to_vec())
}

/// Single-hidden-layer ReLU classifier trained by mean softmax cross-entropy
/// over minibatches.
///
/// Minibatches partition each epoch: epoch `e` shuffles the item indices
/// with a stream keyed by `(seed, run, e)` and steps walk consecutive
/// chunks, so the batch for step `t` is a pure function of `(seed, run, t)`
/// — replaying a step re-reads the exact same batch regardless of call
/// order. The final chunk of an epoch may be smaller than `batch`.
///
/// Flat parameter layout: `[w1 (in·H), b1 (H), w2 (H·10), b2 (10)]` with
/// row-major `(in, out)` weight matrices.
pub struct MnistClassifier {
    data: MnistData,
    hidden: usize,
    batch: usize,
    seed: u64,
    run: u64,
    steps_per_epoch: usize,
    cur_images: Tensor,
    cur_onehot: Tensor,
}

impl MnistClassifier {
    pub fn new(
        data: MnistData,
        hidden: usize,
        batch: usize,
        seed: u64,
        run: u64,
    ) -> Result<MnistClassifier> {
        if data.is_empty() || hidden == 0 || batch == 0 {
            return Err(CoreError::Domain(format!(
                "classifier needs data, hidden units, and a positive batch size, \
                 got {} items, hidden={hidden}, batch={batch}",
                data.len()
            )));
        }
        if let Some((i, &l)) = data
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= CLASS_COUNT)
        {
            return Err(CoreError::InvalidData(format!(
                "label {l} at item {i} is outside the {CLASS_COUNT}-class range"
            )));
        }
        let steps_per_epoch = data.len().div_ceil(batch);
        let mut c = MnistClassifier {
            data,
            hidden,
            batch,
            seed,
            run,
            steps_per_epoch,
            cur_images: Tensor::zeros(&[1, 1]),
            cur_onehot: Tensor::zeros(&[1, 1]),
        };
        c.draw_batch(0);
        Ok(c)
    }

    pub fn input_dim(&self) -> usize {
        self.data.images.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Layer-wise uniform initialization `U(−√k, √k)` with `k = 1/fan_in`.
    pub fn init_params(&self, rng: &mut impl Rng) -> Tensor {
        let (p, h) = (self.input_dim(), self.hidden);
        let k1 = (1.0 / p as f64).sqrt();
        let k2 = (1.0 / h as f64).sqrt();
        let mut v = rng::uniform_vec(rng, p * h + h, -k1, k1);
        v.extend(rng::uniform_vec(rng, h * CLASS_COUNT + CLASS_COUNT, -k2, k2));
        Tensor::vector(v)
    }

    fn draw_batch(&mut self, t: usize) {
        let n = self.data.len();
        let epoch = (t / self.steps_per_epoch) as u64;
        let slot = t % self.steps_per_epoch;
        let mut r = rng::stream(self.seed, StreamKind::Batch, self.run, epoch);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let lo = slot * self.batch;
        let hi = usize::min(lo + self.batch, n);
        let rows = &perm[lo..hi];

        let p = self.input_dim();
        let mut pixels = Vec::with_capacity(rows.len() * p);
        let mut onehot = Tensor::zeros(&[rows.len(), CLASS_COUNT]);
        for (bi, &src) in rows.iter().enumerate() {
            pixels.extend_from_slice(&self.data.images.data()[src * p..(src + 1) * p]);
            *onehot.at_mut(bi, self.data.labels[src] as usize) = 1.0;
        }
        self.cur_images = Tensor::matrix(rows.len(), p, pixels);
        self.cur_onehot = onehot;
    }
}

impl Objective for MnistClassifier {
    fn dim(&self) -> usize {
        let (p, h) = (self.input_dim(), self.hidden);
        p * h + h + h * CLASS_COUNT + CLASS_COUNT
    }

    fn begin_step(&mut self, t: usize) {
        self.draw_batch(t);
    }

    fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let (p, h) = (self.input_dim(), self.hidden);
        let w1 = g.slice1(x, 0, p * h)?;
        let w1 = g.reshape(w1, &[p, h])?;
        let b1 = g.slice1(x, p * h, p * h + h)?;
        let w2 = g.slice1(x, p * h + h, p * h + h + h * CLASS_COUNT)?;
        let w2 = g.reshape(w2, &[h, CLASS_COUNT])?;
        let b2 = g.slice1(x, p * h + h + h * CLASS_COUNT, self.dim())?;

        let imgs = g.constant(self.cur_images.clone());
        let pre = g.matmul(imgs, w1)?;
        let pre = g.row_broadcast_add(pre, b1)?;
        let act = g.relu(pre);
        let logits = g.matmul(act, w2)?;
        let logits = g.row_broadcast_add(logits, b2)?;

        let onehot = g.constant(self.cur_onehot.clone());
        g.softmax_cross_entropy(logits, onehot)
    }
}

// ── look-ahead rate search ──────────────────────────────────────────────────

/// Outcome of [`lookahead_rate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateChoice {
    pub rate: f64,
    /// True when every candidate produced a non-finite loss (the rate is
    /// forced to zero).
    pub degenerate: bool,
}

/// Candidate step sizes `t·10^(−l)` for `t ∈ {1, 0.75, 0.5, 0.25}` and
/// `l ∈ {1, …, 7}`, in descending order (28 values, largest 0.1).
pub fn lookahead_rates() -> Vec<f64> {
    (1..=7)
        .flat_map(|l| {
            [1.0, 0.75, 0.5, 0.25]
                .into_iter()
                .map(move |t| t * 10f64.powi(-l))
        })
        .collect()
}

/// One-step look-ahead rate search: evaluates `f(x − η·dir)` for every
/// candidate η and returns the argmin, preferring the larger rate on ties.
/// Falls back to a zero rate when the best candidate is strictly worse than
/// staying put, so the chosen step never increases the one-step loss; a zero
/// rate with `degenerate = true` means no candidate evaluated to a finite
/// loss at all.
pub fn lookahead_rate(obj: &dyn Objective, x: &Tensor, dir: &Tensor) -> Result<RateChoice> {
    let base = obj.loss_at(x)?;
    let mut best: Option<(f64, f64)> = None;
    for eta in lookahead_rates() {
        let loss = obj.loss_at(&x.axpy(-eta, dir))?;
        if !loss.is_finite() {
            continue;
        }
        // candidates are visited largest-first, so strict improvement keeps
        // the larger rate on ties
        if best.map_or(true, |(_, l)| loss < l) {
            best = Some((eta, loss));
        }
    }
    Ok(match best {
        None => RateChoice {
            rate: 0.0,
            degenerate: true,
        },
        Some((eta, loss)) => RateChoice {
            rate: if base.is_finite() && loss > base {
                0.0
            } else {
                eta
            },
            degenerate: false,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::testing::assert_grad_matches_fd;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn write_idx_images(dir: &Path, name: &str, rows: usize, cols: usize, imgs: &[Vec<u8>]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2051u32.to_be_bytes());
        bytes.extend_from_slice(&(imgs.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&(rows as u32).to_be_bytes());
        bytes.extend_from_slice(&(cols as u32).to_be_bytes());
        for img in imgs {
            assert_eq!(img.len(), rows * cols);
            bytes.extend_from_slice(img);
        }
        fs::File::create(dir.join(name))
            .unwrap()
            .write_all(&bytes)
            .unwrap();
    }

    fn write_idx_labels(dir: &Path, name: &str, labels: &[u8]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2049u32.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        fs::File::create(dir.join(name))
            .unwrap()
            .write_all(&bytes)
            .unwrap();
    }

    fn synthetic_classifier(hidden: usize, batch: usize) -> MnistClassifier {
        // six 2×2 "images" with assorted labels
        let mut r = stream(11, StreamKind::Problem, 0, 0);
        let images = Tensor::rand_uniform(&[6, 4], 0.0, 1.0, &mut r);
        let labels = vec![0u8, 3, 9, 1, 3, 7];
        MnistClassifier::new(MnistData { images, labels }, hidden, batch, 42, 0).unwrap()
    }

    #[test]
    fn least_squares_loss_matches_the_residual_formula() {
        let mut r = stream(7, StreamKind::Problem, 0, 0);
        let ls = LeastSquares::sample(5, 8, &mut r).unwrap();
        let x = Tensor::vector(rng::normal_vec(&mut r, 5));

        // direct evaluation of ½‖Wᵀx − y‖²
        let (w, y) = (ls.design(), ls.target());
        let mut direct = 0.0;
        for k in 0..8 {
            let mut wx = 0.0;
            for i in 0..5 {
                wx += w.at(i, k) * x.data()[i];
            }
            direct += 0.5 * (wx - y.data()[k]).powi(2);
        }
        assert_abs_diff_eq!(ls.loss_at(&x).unwrap(), direct, epsilon = 1e-10);

        // the quadratic view differs only by the constant ½‖y‖²: same gradient
        let gq = ls.quadratic().gradient(&x);
        let go = ls.grad_at(&x).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(gq.data()[j], go.data()[j], epsilon = 1e-10);
        }
        assert_grad_matches_fd(|g, xn| ls.build(g, xn), &x, 1e-6, 1e-7);
    }

    #[test]
    fn least_squares_minimizer_beats_random_points() {
        let mut r = stream(8, StreamKind::Problem, 0, 0);
        let ls = LeastSquares::sample(4, 6, &mut r).unwrap();
        let xstar = ls.quadratic().minimizer().unwrap();
        let best = ls.loss_at(&xstar).unwrap();
        assert!(best >= 0.0);
        for _ in 0..100 {
            let x = Tensor::vector(rng::normal_vec(&mut r, 4));
            assert!(ls.loss_at(&x).unwrap() >= best);
        }
        // normal equations: W(Wᵀx* − y) = 0
        let resid = ls.quadratic().gradient(&xstar);
        for j in 0..4 {
            assert_abs_diff_eq!(resid.data()[j], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_line_search_never_increases_the_quadratic_loss() {
        let mut r = stream(9, StreamKind::Problem, 0, 0);
        let ls = LeastSquares::sample(6, 9, &mut r).unwrap();
        let mut x = Tensor::vector(rng::normal_vec(&mut r, 6));
        let mut prev = ls.loss_at(&x).unwrap();
        for _ in 0..100 {
            let g = ls.quadratic().gradient(&x);
            let eta = ls.quadratic().optimal_rate(&x, &g);
            x = x.axpy(-eta, &g);
            let cur = ls.loss_at(&x).unwrap();
            assert!(cur <= prev + 1e-12, "loss increased: {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn target_functions_match_hand_values() {
        assert_eq!(h1(0.0), 0.0);
        // h1(0.25) = sin(π/2)·e^(−1/16); series oracle for e^(−1/16)
        let series: f64 = (0..25)
            .scan(1.0f64, |term, k| {
                let cur = *term;
                *term *= -1.0 / 16.0 / (k as f64 + 1.0);
                Some(cur)
            })
            .sum();
        assert_abs_diff_eq!(h1(0.25), series, epsilon = 1e-15);
        assert_abs_diff_eq!(h1(-0.25), -series, epsilon = 1e-15);

        assert_eq!(h2(0.0), 0.0); // step contributes nothing at the origin
        assert_abs_diff_eq!(h2(0.25), 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(h2(-0.25), -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(h2(0.5), 1.0, epsilon = 1e-12); // sin π = 0
    }

    #[test]
    fn tanh_regression_matches_a_hand_computed_network() {
        // H = 2 over three points; parameters chosen by hand
        let pts = [(-0.5, 0.3), (0.0, -0.1), (0.5, 0.8)];
        let net = TanhRegression::from_samples(&pts, 2).unwrap();
        assert_eq!(net.dim(), 7);
        let theta = Tensor::vector(vec![0.4, -0.7, 0.1, 0.2, 1.5, -0.6, 0.05]);
        let mut expect = 0.0;
        for &(z, t) in &pts {
            let a1 = (0.4 * z + 0.1).tanh();
            let a2 = (-0.7 * z + 0.2).tanh();
            let out = 1.5 * a1 - 0.6 * a2 + 0.05;
            expect += (out - t).powi(2);
        }
        assert_abs_diff_eq!(net.loss_at(&theta).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn zero_parameters_predict_zero_so_loss_is_the_target_energy() {
        let mut r = stream(3, StreamKind::Problem, 0, 0);
        let net = TanhRegression::sample(h1, 100, 50, &mut r).unwrap();
        assert_eq!(net.dim(), 151);
        assert_eq!(net.len(), 100);
        let zero = Tensor::zeros(&[151]);
        let energy: f64 = net.targets.data().iter().map(|t| t * t).sum();
        assert_abs_diff_eq!(net.loss_at(&zero).unwrap(), energy, epsilon = 1e-12);
    }

    #[test]
    fn tanh_regression_gradient_matches_finite_differences() {
        let pts = [(-0.8, 0.2), (-0.1, -0.4), (0.3, 0.9), (0.7, -0.2)];
        let net = TanhRegression::from_samples(&pts, 3).unwrap();
        let mut r = stream(4, StreamKind::Init, 0, 0);
        let theta = net.init_params(&mut r);
        assert_grad_matches_fd(|g, xn| net.build(g, xn), &theta, 1e-6, 1e-7);
    }

    #[test]
    fn regression_sampling_is_deterministic_and_in_range() {
        let mut r1 = stream(5, StreamKind::Problem, 2, 0);
        let mut r2 = stream(5, StreamKind::Problem, 2, 0);
        let a = TanhRegression::sample(h2, 100, 50, &mut r1).unwrap();
        let b = TanhRegression::sample(h2, 100, 50, &mut r2).unwrap();
        assert_eq!(a.inputs.data(), b.inputs.data());
        for (i, &z) in a.inputs.data().iter().enumerate() {
            assert!((-1.0..=1.0).contains(&z));
            assert_abs_diff_eq!(a.targets.data()[i], h2(z), epsilon = 1e-15);
        }
    }

    #[test]
    fn init_params_respect_layer_fan_in_bounds() {
        let mut r = stream(6, StreamKind::Init, 0, 0);
        let net = TanhRegression::from_samples(&[(0.0, 0.0), (0.5, 1.0)], 50).unwrap();
        let theta = net.init_params(&mut r);
        assert_eq!(theta.numel(), 151);
        let (head, tail) = theta.data().split_at(100);
        assert!(head.iter().all(|v| v.abs() <= 1.0));
        let bound = (1.0f64 / 50.0).sqrt();
        assert!(tail.iter().all(|v| v.abs() <= bound));
        // actually spread out, not collapsed to a constant
        assert!(head.iter().any(|v| v.abs() > 0.5));
        assert!(tail.iter().any(|v| v.abs() > 0.5 * bound));
    }

    #[test]
    fn idx_files_round_trip_with_unit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![vec![0u8, 51, 102, 153, 204, 255], vec![255, 0, 128, 64, 32, 16]];
        write_idx_images(dir.path(), "imgs", 2, 3, &imgs);
        write_idx_labels(dir.path(), "lbls", &[7, 2]);
        let data = MnistData::load(&dir.path().join("imgs"), &dir.path().join("lbls")).unwrap();
        assert_eq!(data.images.shape(), &[2, 6]);
        assert_eq!(data.labels, vec![7, 2]);
        assert_abs_diff_eq!(data.images.at(0, 1), 51.0 / 255.0, epsilon = 1e-15);
        assert_abs_diff_eq!(data.images.at(1, 0), 1.0, epsilon = 1e-15);
        assert!(data.images.data().iter().all(|&p| (0.0..=1.0).contains(&p)));

        let trimmed = data.take(1);
        assert_eq!(trimmed.len(), 1);
        assert_eq!(trimmed.images.shape(), &[1, 6]);
    }

    #[test]
    fn idx_loader_rejects_bad_magic_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![vec![1u8, 2, 3, 4]];
        write_idx_images(dir.path(), "imgs", 2, 2, &imgs);
        write_idx_labels(dir.path(), "lbls", &[3]);

        // wrong magic in each file (the fake image file needs 8 labels so
        // its 16 bytes cover a full image header)
        write_idx_labels(dir.path(), "bad_magic_imgs", &[1, 0, 1, 0, 1, 0, 1, 0]);
        let err = load_idx_images(&dir.path().join("bad_magic_imgs")).unwrap_err();
        assert!(err.to_string().contains("magic 2051"), "got: {err}");
        write_idx_images(dir.path(), "bad_magic_lbls", 1, 1, &[vec![0]]);
        let err = load_idx_labels(&dir.path().join("bad_magic_lbls")).unwrap_err();
        assert!(err.to_string().contains("magic 2049"), "got: {err}");

        // truncated image payload: error names the expected byte count
        let mut raw = fs::read(dir.path().join("imgs")).unwrap();
        raw.pop();
        fs::write(dir.path().join("short"), &raw).unwrap();
        let err = load_idx_images(&dir.path().join("short")).unwrap_err();
        assert!(err.to_string().contains("expected 20 bytes"), "got: {err}");

        // count mismatch across the pair
        write_idx_labels(dir.path(), "two_lbls", &[3, 4]);
        let err =
            MnistData::load(&dir.path().join("imgs"), &dir.path().join("two_lbls")).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "got: {err}");

        // out-of-range label
        write_idx_labels(dir.path(), "big_lbl", &[10]);
        let err =
            MnistData::load(&dir.path().join("imgs"), &dir.path().join("big_lbl")).unwrap_err();
        assert!(err.to_string().contains("10-class range"), "got: {err}");
    }

    #[test]
    fn zero_parameters_give_uniform_softmax_so_loss_is_log_class_count() {
        let net = synthetic_classifier(3, 4);
        assert_eq!(net.dim(), 4 * 3 + 3 + 3 * 10 + 10);
        let zero = Tensor::zeros(&[net.dim()]);
        assert_abs_diff_eq!(
            net.loss_at(&zero).unwrap(),
            (CLASS_COUNT as f64).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let mut net = synthetic_classifier(3, 4);
        net.begin_step(2);
        let mut r = stream(12, StreamKind::Init, 0, 0);
        let theta = net.init_params(&mut r);
        assert_grad_matches_fd(|g, xn| net.build(g, xn), &theta, 1e-6, 1e-6);
    }

    #[test]
    fn minibatches_partition_epochs_and_replay_by_step_index() {
        let mut a = synthetic_classifier(2, 4); // 6 items, batch 4 → 2 steps/epoch
        let mut b = synthetic_classifier(2, 4);
        assert_eq!(a.steps_per_epoch, 2);

        // one epoch covers every item exactly once
        a.begin_step(0);
        let first_images = a.cur_images.clone();
        let first_onehot = a.cur_onehot.clone();
        assert_eq!(first_images.shape(), &[4, 4]);
        a.begin_step(1);
        assert_eq!(a.cur_images.shape(), &[2, 4]); // partial tail chunk
        let mut label_hist = vec![0.0; 10];
        for hot in [&first_onehot, &a.cur_onehot] {
            for (i, v) in hot.data().iter().enumerate() {
                label_hist[i % 10] += v;
            }
        }
        let mut expect = vec![0.0; 10];
        for &l in &[0u8, 3, 9, 1, 3, 7] {
            expect[l as usize] += 1.0;
        }
        assert_eq!(label_hist, expect);

        // replay: the batch at step t is independent of visiting order
        b.begin_step(1);
        b.begin_step(0);
        assert_eq!(b.cur_images.data(), first_images.data(), "step-0 batch changed");

        // different epochs shuffle differently
        a.begin_step(0);
        let e0 = a.cur_images.clone();
        a.begin_step(2);
        assert_eq!(a.cur_images.shape(), &[4, 4]);
        assert_ne!(a.cur_images.data(), e0.data());
    }

    #[test]
    fn lookahead_grid_has_28_descending_rates() {
        let rates = lookahead_rates();
        assert_eq!(rates.len(), 28);
        assert!(rates.windows(2).all(|w| w[0] > w[1]));
        assert_abs_diff_eq!(rates[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(rates[27], 0.25e-7, epsilon = 1e-22);
    }

    /// f(x) = ½‖x‖² as a one-liner objective for rate-search tests.
    struct HalfNormSq(usize);
    impl Objective for HalfNormSq {
        fn dim(&self) -> usize {
            self.0
        }
        fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
            let sq = g.mul(x, x)?;
            let s = g.sum(sq);
            Ok(g.mul_scalar(s, 0.5))
        }
    }

    #[test]
    fn lookahead_picks_the_largest_candidate_on_a_wide_quadratic() {
        // f(1−η) = ½(1−η)² decreases over the whole grid (max 0.1), so the
        // brute-force argmin is the largest rate
        let f = HalfNormSq(1);
        let x = Tensor::vector(vec![1.0]);
        let dir = Tensor::vector(vec![1.0]);
        let pick = lookahead_rate(&f, &x, &dir).unwrap();
        assert_eq!(pick.rate, 0.1);
        assert!(!pick.degenerate);
    }

    /// f(x) = Σ relu(|x−a| − w)²: a flat valley of half-width w around a.
    struct FlatValley {
        center: f64,
        width: f64,
    }
    impl Objective for FlatValley {
        fn dim(&self) -> usize {
            1
        }
        fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
            let shifted = g.add_scalar(x, -self.center);
            let dist = g.abs(shifted);
            let over = g.add_scalar(dist, -self.width);
            let cl = g.relu(over);
            let sq = g.mul(cl, cl)?;
            Ok(g.sum(sq))
        }
    }

    #[test]
    fn lookahead_breaks_ties_toward_the_larger_rate() {
        // rates 0.05, 0.075, 0.1 all land exactly on the flat valley floor
        // (loss 0); the tie goes to 0.1
        let f = FlatValley {
            center: 0.925,
            width: 0.03,
        };
        let x = Tensor::vector(vec![1.0]);
        let dir = Tensor::vector(vec![1.0]);
        assert!(f.loss_at(&x).unwrap() > 0.0);
        let pick = lookahead_rate(&f, &x, &dir).unwrap();
        assert_eq!(pick.rate, 0.1);

        // zero direction: every candidate ties with the base loss, and the
        // tie rule still returns the largest rate rather than zero
        let still = lookahead_rate(&f, &x, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(still.rate, 0.1);
        assert!(!still.degenerate);
    }

    #[test]
    fn lookahead_returns_zero_when_every_candidate_is_uphill() {
        let f = HalfNormSq(1);
        let x = Tensor::vector(vec![1.0]);
        let ascent = Tensor::vector(vec![-1.0]); // moves away from the minimum
        let pick = lookahead_rate(&f, &x, &ascent).unwrap();
        assert_eq!(pick.rate, 0.0);
        assert!(!pick.degenerate);
    }

    #[test]
    fn lookahead_never_increases_the_one_step_loss() {
        let mut r = stream(10, StreamKind::Problem, 0, 0);
        for case in 0..20 {
            let ls = LeastSquares::sample(3, 5, &mut r).unwrap();
            let x = Tensor::vector(rng::normal_vec(&mut r, 3));
            let dir = if case % 2 == 0 {
                ls.quadratic().gradient(&x)
            } else {
                Tensor::vector(rng::normal_vec(&mut r, 3)) // arbitrary, possibly uphill
            };
            let pick = lookahead_rate(&ls, &x, &dir).unwrap();
            let before = ls.loss_at(&x).unwrap();
            let after = ls.loss_at(&x.axpy(-pick.rate, &dir)).unwrap();
            assert!(after <= before + 1e-12, "case {case}: {before} -> {after}");
        }
    }
}
