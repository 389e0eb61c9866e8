//! The learned optimizer: a small two-layer LSTM applied coordinatewise
//! (one shared instance per parameter coordinate) that reads a preprocessed
//! gradient plus a time feature and emits either a direct parameter update
//! or the per-coordinate fractional hyperparameters `(α, β, c)`.
//!
//! All coordinates share the weights, so the recurrent state is a matrix
//! with one row per coordinate and the whole step is a handful of fused
//! matrix ops. The hyperparameter head is parameterized around a safe
//! resting point: at zero head output it emits `α = ½, β = 0, c = x`, which
//! collapses the fractional update to plain gradient descent, so an
//! untrained controller starts out near ordinary descent.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{CoreError, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Gradient preprocessing scale: values with `|g| ≥ e^(-SCALE)` use the
/// logarithmic channel, smaller ones the linear channel.
pub const PREPROC_SCALE: f64 = 10.0;

/// Default LSTM width.
pub const DEFAULT_HIDDEN: usize = 20;

/// Per-coordinate input features: two preprocessed gradient channels plus
/// the time feature.
pub const FEATURE_DIM: usize = 3;

/// Spread of the uniform weight initialization.
const INIT_SPREAD: f64 = 0.08;

/// Scale applied to the direct-update head output.
const UPDATE_SCALE: f64 = 0.1;

/// What the output head produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// A direct additive update (one output per coordinate).
    DirectUpdate,
    /// Fractional hyperparameters `(α, β, c)` (three outputs per coordinate).
    FracHyper,
}

impl HeadKind {
    pub fn out_dim(self) -> usize {
        match self {
            HeadKind::DirectUpdate => 1,
            HeadKind::FracHyper => 3,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            HeadKind::DirectUpdate => "direct_update",
            HeadKind::FracHyper => "frac_hyper",
        }
    }

    fn from_tag(s: &str) -> Result<HeadKind> {
        match s {
            "direct_update" => Ok(HeadKind::DirectUpdate),
            "frac_hyper" => Ok(HeadKind::FracHyper),
            other => Err(CoreError::InvalidData(format!("unknown head kind `{other}`"))),
        }
    }
}

/// The controller weights. Gate order inside each LSTM is
/// `[input | forget | cell | output]`; states are `[h | c]` matrices with
/// one row per optimizee coordinate.
#[derive(Debug, Clone)]
pub struct OptimizerNet {
    pub head: HeadKind,
    pub hidden: usize,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl OptimizerNet {
    /// Fresh network: all weights uniform in ±0.08 except the forget-gate
    /// biases, which start at 1 (remember-by-default). The head starts small
    /// but not zero — a zero direction would pin line-search step sizes (and
    /// with them the whole meta-gradient) at exactly zero.
    pub fn new(head: HeadKind, hidden: usize, rng: &mut impl Rng) -> OptimizerNet {
        let h = hidden;
        let mut b1 = Tensor::vector(rng::uniform_vec(rng, 4 * h, -INIT_SPREAD, INIT_SPREAD));
        let mut b2 = Tensor::vector(rng::uniform_vec(rng, 4 * h, -INIT_SPREAD, INIT_SPREAD));
        for j in h..2 * h {
            b1.data_mut()[j] = 1.0;
            b2.data_mut()[j] = 1.0;
        }
        OptimizerNet {
            head,
            hidden: h,
            w1: Tensor::matrix(
                FEATURE_DIM + h,
                4 * h,
                rng::uniform_vec(rng, (FEATURE_DIM + h) * 4 * h, -INIT_SPREAD, INIT_SPREAD),
            ),
            b1,
            w2: Tensor::matrix(
                2 * h,
                4 * h,
                rng::uniform_vec(rng, 2 * h * 4 * h, -INIT_SPREAD, INIT_SPREAD),
            ),
            b2,
            w_out: Tensor::matrix(
                h,
                head.out_dim(),
                rng::uniform_vec(rng, h * head.out_dim(), -INIT_SPREAD, INIT_SPREAD),
            ),
            b_out: Tensor::vector(rng::uniform_vec(
                rng,
                head.out_dim(),
                -INIT_SPREAD,
                INIT_SPREAD,
            )),
        }
    }

    pub fn param_names() -> [&'static str; 6] {
        ["w1", "b1", "w2", "b2", "w_out", "b_out"]
    }

    pub fn params(&self) -> [&Tensor; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w_out, &self.b_out]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Fresh all-zero recurrent state for `dim` coordinates (one per layer).
    pub fn initial_state(&self, dim: usize) -> Tensor {
        Tensor::zeros(&[dim, 2 * self.hidden])
    }

    /// Inserts the weights into a graph. `trainable` makes them leaves (for
    /// meta-training); otherwise they are constants.
    pub fn insert(&self, g: &mut Graph, trainable: bool) -> NetNodes {
        let mut mk = |t: &Tensor| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
        NetNodes {
            head: self.head,
            hidden: self.hidden,
            w1: mk(&self.w1),
            b1: mk(&self.b1),
            w2: mk(&self.w2),
            b2: mk(&self.b2),
            w_out: mk(&self.w_out),
            b_out: mk(&self.b_out),
        }
    }

    /// Writes a versioned text checkpoint. Floats are stored as the hex of
    /// their bit pattern, so save/load round-trips exactly.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "fracgd-net-v1").unwrap();
        writeln!(out, "head {}", self.head.tag()).unwrap();
        writeln!(out, "hidden {}", self.hidden).unwrap();
        writeln!(out, "features {FEATURE_DIM}").unwrap();
        for (name, t) in Self::param_names().iter().zip(self.params()) {
            write_tensor_block(&mut out, name, t);
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn save_to_path(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.save(&mut f)
    }

    /// Reads a checkpoint written by [`OptimizerNet::save`].
    pub fn load(r: &mut impl Read) -> Result<OptimizerNet> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| CoreError::InvalidData(format!("checkpoint ended before {what}")))?
                .map_err(CoreError::from)
        };
        let magic = next("header")?;
        if magic.trim() != "fracgd-net-v1" {
            return Err(CoreError::InvalidData(format!(
                "not an optimizer checkpoint (header `{magic}`)"
            )));
        }
        let head_line = next("head")?;
        let head = HeadKind::from_tag(
            head_line
                .strip_prefix("head ")
                .ok_or_else(|| CoreError::InvalidData("missing head line".into()))?
                .trim(),
        )?;
        let hidden: usize = parse_kv(&next("hidden")?, "hidden")?;
        let features: usize = parse_kv(&next("features")?, "features")?;
        if features != FEATURE_DIM {
            return Err(CoreError::InvalidData(format!(
                "checkpoint expects {features} input features, this build uses {FEATURE_DIM}"
            )));
        }

        let mut tensors: Vec<Tensor> = Vec::with_capacity(6);
        for name in Self::param_names() {
            tensors.push(read_tensor_block(&mut next, name)?);
        }
        let mut it = tensors.into_iter();
        let net = OptimizerNet {
            head,
            hidden,
            w1: it.next().unwrap(),
            b1: it.next().unwrap(),
            w2: it.next().unwrap(),
            b2: it.next().unwrap(),
            w_out: it.next().unwrap(),
            b_out: it.next().unwrap(),
        };
        net.check_shapes()?;
        Ok(net)
    }

    pub fn load_from_path(path: &std::path::Path) -> Result<OptimizerNet> {
        let mut f = std::fs::File::open(path)?;
        Self::load(&mut f)
    }

    fn check_shapes(&self) -> Result<()> {
        let (h, k) = (self.hidden, self.head.out_dim());
        let want: [(&str, &[usize]); 6] = [
            ("w1", &[FEATURE_DIM + h, 4 * h]),
            ("b1", &[4 * h]),
            ("w2", &[2 * h, 4 * h]),
            ("b2", &[4 * h]),
            ("w_out", &[h, k]),
            ("b_out", &[k]),
        ];
        for ((name, shape), t) in want.iter().zip(self.params()) {
            if t.shape() != *shape {
                return Err(CoreError::InvalidData(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Weight nodes of one [`OptimizerNet`] inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct NetNodes {
    pub head: HeadKind,
    pub hidden: usize,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

impl NetNodes {
    pub fn as_list(&self) -> [NodeId; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.w_out, self.b_out]
    }
}

/// What one controller step produced.
#[derive(Debug, Clone, Copy)]
pub enum HeadOut {
    /// Scaled direct update, shape `[dim]`.
    Update(NodeId),
    /// Fractional hyperparameters, each shape `[dim]`.
    Frac { alpha: NodeId, beta: NodeId, c: NodeId },
}

/// One controller step: new per-layer states plus the head output.
#[derive(Debug, Clone, Copy)]
pub struct StepOut {
    pub out: HeadOut,
    pub state1: NodeId,
    pub state2: NodeId,
}

/// The time feature: progress through the run as a value in `[0, 1]`.
pub fn time_feature(t: usize, total: usize) -> f64 {
    if total > 1 {
        t as f64 / (total - 1) as f64
    } else {
        0.0
    }
}

/// Coordinatewise gradient preprocessing plus the time channel, as a
/// `dim × 3` feature matrix. Large gradients are encoded logarithmically
/// with a separate sign channel; tiny ones are passed through linearly with
/// a saturated first channel:
///
/// `|g| ≥ e^(-p)` → `(log|g|/p, sign g)`, else `(-1, e^p · g)`, with `p = 10`.
pub fn preprocess_features(grad: &Tensor, time: f64) -> Tensor {
    let p = PREPROC_SCALE;
    let thresh = (-p).exp();
    let d = grad.numel();
    let mut out = Tensor::zeros(&[d, FEATURE_DIM]);
    for (j, &g) in grad.data().iter().enumerate() {
        let (c0, c1) = if g.abs() >= thresh {
            (g.abs().ln() / p, g.signum())
        } else {
            (-1.0, p.exp() * g)
        };
        out.data_mut()[j * FEATURE_DIM] = c0;
        out.data_mut()[j * FEATURE_DIM + 1] = c1;
        out.data_mut()[j * FEATURE_DIM + 2] = time;
    }
    out
}

/// Runs the controller for one step at the graph level.
///
/// * `feat` — `dim × 3` feature node (typically a constant built by
///   [`preprocess_features`]; gradients are not propagated into the
///   optimizee through the controller input).
/// * `x` — current iterate, needed by the hyperparameter head whose
///   terminal is expressed as an offset from `x`. Ignored by the
///   direct-update head.
/// * `state1`, `state2` — per-layer `[h|c]` state nodes, `dim × 2·hidden`.
pub fn net_step(
    g: &mut Graph,
    net: &NetNodes,
    feat: NodeId,
    x: NodeId,
    state1: NodeId,
    state2: NodeId,
) -> Result<StepOut> {
    let h = net.hidden;
    let new1 = g.lstm_cell(feat, state1, net.w1, net.b1)?;
    let h1 = g.slice_cols(new1, 0, h)?;
    let new2 = g.lstm_cell(h1, state2, net.w2, net.b2)?;
    let h2 = g.slice_cols(new2, 0, h)?;
    let proj = g.matmul(h2, net.w_out)?;
    let raw = g.row_broadcast_add(proj, net.b_out)?;
    let d = g.value(feat).rows();

    let out = match net.head {
        HeadKind::DirectUpdate => {
            let col = g.reshape(raw, &[d])?;
            HeadOut::Update(g.mul_scalar(col, UPDATE_SCALE))
        }
        HeadKind::FracHyper => {
            let a_raw = g.slice_cols(raw, 0, 1)?;
            let a_raw = g.reshape(a_raw, &[d])?;
            let b_raw = g.slice_cols(raw, 1, 2)?;
            let b_raw = g.reshape(b_raw, &[d])?;
            let c_raw = g.slice_cols(raw, 2, 3)?;
            let c_raw = g.reshape(c_raw, &[d])?;
            // α squashed into (0.01, 0.99): strictly fractional, away from
            // the clamp region of the quadrature rule
            let sig = g.sigmoid(a_raw);
            let scaled = g.mul_scalar(sig, 0.98);
            let alpha = g.add_scalar(scaled, 0.01);
            let c = g.add(x, c_raw)?;
            HeadOut::Frac { alpha, beta: b_raw, c }
        }
    };
    Ok(StepOut { out, state1: new1, state2: new2 })
}

fn parse_kv<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| CoreError::InvalidData(format!("expected `{key} ...`, got `{line}`")))?;
    rest.trim()
        .parse()
        .map_err(|_| CoreError::InvalidData(format!("bad value in `{line}`")))
}

/// Appends one named tensor in the text-checkpoint format: a
/// `tensor <name> <dims...>` header, then the float bit patterns as hex,
/// eight per line (bit patterns round-trip exactly).
pub(crate) fn write_tensor_block(out: &mut String, name: &str, t: &Tensor) {
    write!(out, "tensor {name}").unwrap();
    for s in t.shape() {
        write!(out, " {s}").unwrap();
    }
    writeln!(out).unwrap();
    for (i, v) in t.data().iter().enumerate() {
        if i > 0 {
            out.push(if i % 8 == 0 { '\n' } else { ' ' });
        }
        write!(out, "{:016x}", v.to_bits()).unwrap();
    }
    writeln!(out).unwrap();
}

/// Reads back one tensor written by [`write_tensor_block`], pulling lines
/// from `next` (which receives a description of what is expected, for error
/// messages).
pub(crate) fn read_tensor_block(
    next: &mut impl FnMut(&str) -> Result<String>,
    name: &str,
) -> Result<Tensor> {
    let header = next(&format!("tensor {name}"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("tensor") || parts.next() != Some(name) {
        return Err(CoreError::InvalidData(format!(
            "expected `tensor {name}`, got `{header}`"
        )));
    }
    let shape: Vec<usize> = parts
        .map(|p| {
            p.parse()
                .map_err(|_| CoreError::InvalidData(format!("bad dimension `{p}`")))
        })
        .collect::<Result<_>>()?;
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let line = next(&format!("data for {name}"))?;
        for tok in line.split_whitespace() {
            let bits = u64::from_str_radix(tok, 16)
                .map_err(|_| CoreError::InvalidData(format!("bad float bits `{tok}` in {name}")))?;
            data.push(f64::from_bits(bits));
        }
    }
    if data.len() != numel {
        return Err(CoreError::InvalidData(format!(
            "tensor {name}: expected {numel} values, got {}",
            data.len()
        )));
    }
    Ok(Tensor::new(shape, data))
}
