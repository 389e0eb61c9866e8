//! Meta-training of the controller: unrolled inner optimization with
//! truncated backpropagation through the update chain, Adam on the
//! controller weights.
//!
//! Each meta-training run draws a fresh optimizee and iterate, unrolls the
//! controller-driven optimizer for `unroll` steps on one graph, sums the
//! per-step losses `f(x^(t+1))` into the unroll loss, backpropagates it to
//! the controller weights, and applies one Adam update. Iterate and hidden
//! states cross unroll boundaries by value only (truncated
//! backpropagation); the gradient fed to the controller input is likewise
//! detached, so meta-gradients flow exclusively through the update chain —
//! for the hyperparameter head that means through the fractional update's
//! dependence on `(α, β, c)`.

use crate::autodiff::{Graph, NodeId};
use crate::cfgd::{build_frac_grad, DiagMode};
use crate::error::{CoreError, Result};
use crate::hessian;
use crate::objective::Objective;
use crate::optnet::{
    self, net_step, preprocess_features, time_feature, HeadOut, NetNodes, OptimizerNet,
};
use crate::problems;
use crate::rng::{self, StreamKind};
use crate::tensor::Tensor;

use std::io::{BufRead, BufReader, Read, Write};

/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominator fuzz.
pub const ADAM_EPS: f64 = 1e-8;
/// Global-norm ceiling applied to the meta-gradient of every unroll.
pub const META_GRAD_CLIP: f64 = 1.0;

/// Meta-training schedule and inner-loop constants.
#[derive(Debug, Clone)]
pub struct MetaConfig {
    /// Number of meta-training runs (fresh optimizee each).
    pub runs: u64,
    /// Steps per run; the tail that does not fill a whole unroll is dropped.
    pub max_steps: usize,
    /// Unroll length between controller updates.
    pub unroll: usize,
    /// Per-step weights inside an unroll; `None` means all ones.
    pub unroll_weights: Option<Vec<f64>>,
    /// Adam learning rate for the controller weights.
    pub meta_lr: f64,
    /// Inner-loop step size used when the rate policy is fixed.
    pub optimizee_lr: f64,
    /// Quadrature nodes for the fractional update (the joint evaluation
    /// path is single-node, so this must be 1).
    pub quad_points: usize,
    /// Hutchinson probes per fractional update.
    pub probes: usize,
    /// Master seed for probe streams.
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> MetaConfig {
        MetaConfig {
            runs: 100,
            max_steps: 100,
            unroll: 20,
            unroll_weights: None,
            meta_lr: 1e-3,
            optimizee_lr: 0.1,
            quad_points: 1,
            probes: 3,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unroll == 0 || self.max_steps == 0 {
            return Err(CoreError::Domain(format!(
                "unroll and max_steps must be positive, got unroll={}, max_steps={}",
                self.unroll, self.max_steps
            )));
        }
        if self.unroll > self.max_steps {
            return Err(CoreError::Domain(format!(
                "unroll {} exceeds max_steps {}; no full unroll would ever complete",
                self.unroll, self.max_steps
            )));
        }
        if let Some(w) = &self.unroll_weights {
            if w.len() != self.unroll {
                return Err(CoreError::Domain(format!(
                    "unroll_weights has {} entries for unroll {}",
                    w.len(),
                    self.unroll
                )));
            }
        }
        if self.quad_points != 1 {
            return Err(CoreError::Unsupported(format!(
                "the joint fractional update evaluates a single quadrature node; \
                 quad_points={} is not available",
                self.quad_points
            )));
        }
        if self.probes == 0 {
            return Err(CoreError::Domain("probes must be at least 1".into()));
        }
        if !(self.meta_lr > 0.0 && self.meta_lr.is_finite()) {
            return Err(CoreError::Domain(format!(
                "meta_lr must be positive and finite, got {}",
                self.meta_lr
            )));
        }
        Ok(())
    }
}

// ── step-size policies ──────────────────────────────────────────────────────

/// How the inner loop scales an update direction into a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatePolicy {
    /// Constant step size `η`, applied on top of whatever scaling the update
    /// direction already carries (the direct-update head emits its output
    /// pre-scaled, and `Fixed` multiplies that by `η` like any other
    /// direction).
    Fixed(f64),
    /// Exact line search `⟨∇f(x), dir⟩ / (dirᵀ H dir)` evaluated with one
    /// Hessian–vector product — the loss-minimizing step whenever the
    /// objective is quadratic. Degenerate curvature yields a zero step.
    ExactLineSearch,
    /// One-step look-ahead over the 28-candidate rate grid.
    Lookahead,
}

/// Evaluates the policy for stepping `x ← x − η·dir`. The result is always
/// treated as a constant: step sizes never carry meta-gradients.
pub fn resolve_rate(
    policy: RatePolicy,
    obj: &dyn Objective,
    x: &Tensor,
    dir: &Tensor,
) -> Result<f64> {
    match policy {
        RatePolicy::Fixed(eta) => Ok(eta),
        RatePolicy::ExactLineSearch => {
            let g = obj.grad_at(x)?;
            let hd = hessian::hvp_at(obj, x, dir)?;
            let dad = dir.dot(&hd);
            if dad.abs() <= 1e-300 {
                return Ok(0.0);
            }
            Ok(g.dot(dir) / dad)
        }
        RatePolicy::Lookahead => Ok(problems::lookahead_rate(obj, x, dir)?.rate),
    }
}

// ── Adam ────────────────────────────────────────────────────────────────────

/// Adam moment accumulators for one parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
    skipped: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn like(params: &[&Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            steps: 0,
            skipped: 0,
        }
    }

    /// Applied updates so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates refused because of non-finite gradients.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Writes the accumulators in the same exact-round-trip text format as
    /// the network checkpoint.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        let mut out = String::new();
        out.push_str("fracgd-adam-v1\n");
        out.push_str(&format!("steps {}\n", self.steps));
        out.push_str(&format!("skipped {}\n", self.skipped));
        out.push_str(&format!("tensors {}\n", self.m.len()));
        for (i, t) in self.m.iter().enumerate() {
            optnet::write_tensor_block(&mut out, &format!("m{i}"), t);
        }
        for (i, t) in self.v.iter().enumerate() {
            optnet::write_tensor_block(&mut out, &format!("v{i}"), t);
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads accumulators written by [`AdamState::save`].
    pub fn load(r: &mut impl Read) -> Result<AdamState> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| CoreError::InvalidData(format!("state ended before {what}")))?
                .map_err(CoreError::from)
        };
        let magic = next("header")?;
        if magic.trim() != "fracgd-adam-v1" {
            return Err(CoreError::InvalidData(format!(
                "not an Adam state file (header `{magic}`)"
            )));
        }
        let parse = |line: String, key: &str| -> Result<u64> {
            line.strip_prefix(key)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| CoreError::InvalidData(format!("bad `{key}` line: `{line}`")))
        };
        let steps = parse(next("steps")?, "steps")?;
        let skipped = parse(next("skipped")?, "skipped")?;
        let count = parse(next("tensors")?, "tensors")? as usize;
        let mut m = Vec::with_capacity(count);
        for i in 0..count {
            m.push(optnet::read_tensor_block(&mut next, &format!("m{i}"))?);
        }
        let mut v = Vec::with_capacity(count);
        for i in 0..count {
            v.push(optnet::read_tensor_block(&mut next, &format!("v{i}"))?);
        }
        Ok(AdamState {
            m,
            v,
            steps,
            skipped,
        })
    }
}

/// One bias-corrected Adam update in place. Any non-finite gradient entry
/// skips the whole update (moments untouched, skip counter bumped); returns
/// whether the update was applied.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    st: &mut AdamState,
    lr: f64,
) -> Result<bool> {
    if params.len() != grads.len() || params.len() != st.m.len() {
        return Err(CoreError::Domain(format!(
            "adam_step: {} params, {} grads, state sized for {}",
            params.len(),
            grads.len(),
            st.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&st.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    if grads
        .iter()
        .any(|g| g.data().iter().any(|v| !v.is_finite()))
    {
        st.skipped += 1;
        return Ok(false);
    }
    st.steps += 1;
    let t = st.steps as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for k in 0..params.len() {
        let (m, v) = (st.m[k].data_mut(), st.v[k].data_mut());
        let g = grads[k].data();
        let p = params[k].data_mut();
        for i in 0..g.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
        }
    }
    Ok(true)
}

/// Scales `grads` so their joint Euclidean norm is at most `max`; returns
/// the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max && norm.is_finite() {
        let s = max / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Weighted sum of per-step loss nodes; `None` weights mean plain summation.
pub fn unroll_loss(g: &mut Graph, losses: &[NodeId], weights: Option<&[f64]>) -> Result<NodeId> {
    if losses.is_empty() {
        return Err(CoreError::Domain("unroll_loss needs at least one loss".into()));
    }
    if let Some(w) = weights {
        if w.len() != losses.len() {
            return Err(CoreError::Domain(format!(
                "{} weights for {} losses",
                w.len(),
                losses.len()
            )));
        }
    }
    let mut acc: Option<NodeId> = None;
    for (i, &l) in losses.iter().enumerate() {
        let term = match weights {
            Some(w) => g.mul_scalar(l, w[i]),
            None => l,
        };
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.unwrap())
}

// ── the unrolled inner loop ─────────────────────────────────────────────────

/// What one inner step produced, at value level.
struct StepInfo {
    rate: f64,
    /// Raw optimizee gradient fed (detached) to the controller.
    grad: Tensor,
    /// `f(x^(t+1))` on the step's batch.
    loss_after: f64,
    /// Hyperparameter values `(α, β, c)` when the head emits them.
    frac: Option<(Tensor, Tensor, Tensor)>,
    /// Non-finite loss or iterate: the run cannot continue.
    diverged: bool,
}

/// A controller-driven optimization segment on one graph. Iterate and
/// hidden states enter as constants, so everything before the segment is
/// detached by construction.
struct Unroller {
    g: Graph,
    nodes: NetNodes,
    x: NodeId,
    s1: NodeId,
    s2: NodeId,
    losses: Vec<NodeId>,
    x_val: Tensor,
    s1_val: Tensor,
    s2_val: Tensor,
}

impl Unroller {
    fn start(
        net: &OptimizerNet,
        trainable: bool,
        x_val: Tensor,
        s1_val: Tensor,
        s2_val: Tensor,
    ) -> Unroller {
        let mut g = Graph::new();
        let nodes = net.insert(&mut g, trainable);
        let x = g.constant(x_val.clone());
        let s1 = g.constant(s1_val.clone());
        let s2 = g.constant(s2_val.clone());
        Unroller {
            g,
            nodes,
            x,
            s1,
            s2,
            losses: Vec::new(),
            x_val,
            s1_val,
            s2_val,
        }
    }

    /// Advances one step: controller → update direction → rate policy →
    /// iterate update → loss accumulation. `begin_step` must already have
    /// been called on the objective for step `t`.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        obj: &dyn Objective,
        t: usize,
        total_steps: usize,
        policy: RatePolicy,
        probes: usize,
        seed: u64,
        run: u64,
    ) -> Result<StepInfo> {
        let grad = obj.grad_at(&self.x_val)?;
        if !grad.data().iter().all(|v| v.is_finite()) {
            return Ok(StepInfo {
                rate: 0.0,
                grad,
                loss_after: f64::NAN,
                frac: None,
                diverged: true,
            });
        }
        let feat_val = preprocess_features(&grad, time_feature(t, total_steps));
        let feat = self.g.constant(feat_val);
        let out = net_step(&mut self.g, &self.nodes, feat, self.x, self.s1, self.s2)?;

        let (x_next, rate, frac) = match out.out {
            HeadOut::Update(update) => {
                // the emitted update is additive: x' = x + η·u, so the
                // descent direction handed to the rate policy is −u
                let uval = self.g.value(update).clone();
                let dir = uval.map(|v| -v);
                let eta = resolve_rate(policy, obj, &self.x_val, &dir)?;
                let scaled = self.g.mul_scalar(update, eta);
                (self.g.add(self.x, scaled)?, eta, None)
            }
            HeadOut::Frac { alpha, beta, c } => {
                let mut pr = rng::stream(seed, StreamKind::Probes, run, t as u64);
                let zs = hessian::rademacher_probes(obj.dim(), probes, &mut pr);
                let gf = build_frac_grad(
                    &mut self.g,
                    obj,
                    self.x,
                    alpha,
                    beta,
                    c,
                    DiagMode::Probes(&zs),
                )?;
                let gval = self.g.value(gf).clone();
                let eta = resolve_rate(policy, obj, &self.x_val, &gval)?;
                let scaled = self.g.mul_scalar(gf, eta);
                let vals = (
                    self.g.value(alpha).clone(),
                    self.g.value(beta).clone(),
                    self.g.value(c).clone(),
                );
                (self.g.sub(self.x, scaled)?, eta, Some(vals))
            }
        };

        let loss = obj.build(&mut self.g, x_next)?;
        self.losses.push(loss);
        self.x = x_next;
        self.s1 = out.state1;
        self.s2 = out.state2;
        self.x_val = self.g.value(x_next).clone();
        self.s1_val = self.g.value(out.state1).clone();
        self.s2_val = self.g.value(out.state2).clone();

        let loss_after = self.g.value(loss).scalar_value();
        let diverged =
            !loss_after.is_finite() || !self.x_val.data().iter().all(|v| v.is_finite());
        Ok(StepInfo {
            rate,
            grad,
            loss_after,
            frac,
            diverged,
        })
    }

    /// Unroll loss value and its gradient with respect to the controller
    /// weights (unclipped).
    fn finish(&mut self, weights: Option<&[f64]>) -> Result<(f64, Vec<Tensor>)> {
        let total = unroll_loss(&mut self.g, &self.losses, weights)?;
        let value = self.g.value(total).scalar_value();
        let grads = self.g.grad(total, &self.nodes.as_list())?;
        Ok((value, grads))
    }
}

/// Mean entry of the two hidden-state `h` blocks (columns `0..H` of each
/// layer state).
fn hidden_mean(net: &OptimizerNet, s1: &Tensor, s2: &Tensor) -> f64 {
    let h = net.hidden;
    let d = s1.shape()[0];
    let mut acc = 0.0;
    for s in [s1, s2] {
        for r in 0..d {
            for c in 0..h {
                acc += s.at(r, c);
            }
        }
    }
    acc / (2 * d * h) as f64
}

// ── meta-training ───────────────────────────────────────────────────────────

/// One row of the meta-training log: a completed (or abandoned) unroll.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollRecord {
    pub run: u64,
    /// Inner step index just after the unroll (multiple of the unroll
    /// length, or the divergence point).
    pub step: usize,
    /// Unroll loss value (non-finite when the run diverged here).
    pub loss: f64,
    /// Meta-gradient global norm before clipping (0 when abandoned).
    pub grad_norm: f64,
    /// True when no controller update was applied (divergence or non-finite
    /// meta-gradient).
    pub skipped: bool,
}

/// Runs meta-training over runs `first_run..cfg.runs`, updating `net` and
/// `adam` in place; `factory` supplies a fresh objective and start iterate
/// per run, and `on_run` fires after every completed run (checkpointing
/// hook). Returns the per-unroll training log.
///
/// A non-finite loss, iterate, or optimizee gradient abandons the run: the
/// partial unroll is discarded without a controller update and training
/// moves to the next run.
pub fn meta_train(
    cfg: &MetaConfig,
    net: &mut OptimizerNet,
    adam: &mut AdamState,
    first_run: u64,
    factory: &mut dyn FnMut(u64) -> Result<(Box<dyn Objective>, Tensor)>,
    policy: RatePolicy,
    on_run: &mut dyn FnMut(u64, &OptimizerNet, &AdamState) -> Result<()>,
) -> Result<Vec<UnrollRecord>> {
    cfg.validate()?;
    let total = cfg.max_steps - cfg.max_steps % cfg.unroll;
    let mut log = Vec::new();

    for run in first_run..cfg.runs {
        let (mut obj, x0) = factory(run)?;
        let d = obj.dim();
        if x0.shape() != [d] {
            return Err(CoreError::ShapeMismatch {
                op: "meta_train x0",
                lhs: x0.shape().to_vec(),
                rhs: vec![d],
            });
        }
        let mut x_val = x0;
        let mut s1_val = net.initial_state(d);
        let mut s2_val = net.initial_state(d);

        let mut t = 0;
        'run: while t < total {
            let mut seg = Unroller::start(net, true, x_val.clone(), s1_val.clone(), s2_val.clone());
            for _ in 0..cfg.unroll {
                obj.begin_step(t);
                let info = seg.step(obj.as_ref(), t, cfg.max_steps, policy, cfg.probes, cfg.seed, run)?;
                t += 1;
                if info.diverged {
                    log.push(UnrollRecord {
                        run,
                        step: t,
                        loss: info.loss_after,
                        grad_norm: 0.0,
                        skipped: true,
                    });
                    break 'run;
                }
            }
            let (loss, mut grads) = seg.finish(cfg.unroll_weights.as_deref())?;
            (x_val, s1_val, s2_val) = (seg.x_val, seg.s1_val, seg.s2_val);
            let norm = clip_global_norm(&mut grads, META_GRAD_CLIP);
            let applied = adam_step(&mut net.params_mut(), &grads, adam, cfg.meta_lr)?;
            log.push(UnrollRecord {
                run,
                step: t,
                loss,
                grad_norm: norm,
                skipped: !applied,
            });
        }
        on_run(run, net, adam)?;
    }
    Ok(log)
}

/// Unroll loss and its controller-weight gradient for a single segment of
/// `steps` inner steps, without updating anything — the quantity
/// [`meta_train`] feeds to Adam, exposed for inspection and testing.
#[allow(clippy::too_many_arguments)]
pub fn meta_gradient(
    net: &OptimizerNet,
    obj: &mut dyn Objective,
    x0: &Tensor,
    steps: usize,
    weights: Option<&[f64]>,
    policy: RatePolicy,
    probes: usize,
    seed: u64,
    run: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let d = obj.dim();
    let mut seg = Unroller::start(
        net,
        true,
        x0.clone(),
        net.initial_state(d),
        net.initial_state(d),
    );
    for t in 0..steps {
        obj.begin_step(t);
        let info = seg.step(obj, t, steps, policy, probes, seed, run)?;
        if info.diverged {
            return Err(CoreError::Domain(format!(
                "inner run diverged at step {t} (loss {})",
                info.loss_after
            )));
        }
    }
    seg.finish(weights)
}

// ── meta-testing ────────────────────────────────────────────────────────────

/// Everything observable about one inner step of a frozen-controller run.
pub struct StepSnapshot<'a> {
    pub t: usize,
    /// `f(x^(t))` on the step's batch, before the update.
    pub loss: f64,
    /// Step size the rate policy chose.
    pub rate: f64,
    /// Iterate before the update.
    pub x: &'a Tensor,
    /// Raw optimizee gradient fed to the controller.
    pub grad: &'a Tensor,
    /// Applied change `x^(t+1) − x^(t)`.
    pub update: &'a Tensor,
    /// Hyperparameters `(α, β, c)` when the head emits them.
    pub frac: Option<(&'a Tensor, &'a Tensor, &'a Tensor)>,
    /// Mean hidden activation over both controller layers.
    pub hidden_mean: f64,
}

/// Outcome of a frozen-controller run.
pub struct TestOutcome {
    /// Final iterate (at the divergence point if the run diverged).
    pub x: Tensor,
    /// `f` at the final iterate on a fresh batch, `∞` after divergence.
    pub final_loss: f64,
    /// Step at which a non-finite loss or iterate appeared.
    pub diverged_at: Option<usize>,
}

/// Runs `steps` inner steps with frozen controller weights, reporting every
/// step to `observe`. Stops early on divergence.
#[allow(clippy::too_many_arguments)]
pub fn meta_test(
    obj: &mut dyn Objective,
    x0: &Tensor,
    net: &OptimizerNet,
    steps: usize,
    policy: RatePolicy,
    probes: usize,
    seed: u64,
    run: u64,
    observe: &mut dyn FnMut(StepSnapshot),
) -> Result<TestOutcome> {
    let d = obj.dim();
    if x0.shape() != [d] {
        return Err(CoreError::ShapeMismatch {
            op: "meta_test x0",
            lhs: x0.shape().to_vec(),
            rhs: vec![d],
        });
    }
    let mut x_val = x0.clone();
    let mut s1_val = net.initial_state(d);
    let mut s2_val = net.initial_state(d);

    for t in 0..steps {
        obj.begin_step(t);
        let pre_loss = obj.loss_at(&x_val)?;
        // frozen weights need no cross-step graph: each step is its own
        // single-step segment
        let mut seg = Unroller::start(net, false, x_val.clone(), s1_val.clone(), s2_val.clone());
        let info = seg.step(obj, t, steps, policy, probes, seed, run)?;
        if !pre_loss.is_finite() || info.diverged {
            return Ok(TestOutcome {
                x: x_val,
                final_loss: f64::INFINITY,
                diverged_at: Some(t),
            });
        }
        let update = seg.x_val.axpy(-1.0, &x_val);
        observe(StepSnapshot {
            t,
            loss: pre_loss,
            rate: info.rate,
            x: &x_val,
            grad: &info.grad,
            update: &update,
            frac: info
                .frac
                .as_ref()
                .map(|(a, b, c)| (a as &Tensor, b as &Tensor, c as &Tensor)),
            hidden_mean: hidden_mean(net, &seg.s1_val, &seg.s2_val),
        });
        x_val = seg.x_val;
        s1_val = seg.s1_val;
        s2_val = seg.s2_val;
    }
    obj.begin_step(steps);
    let final_loss = obj.loss_at(&x_val)?;
    Ok(TestOutcome {
        x: x_val,
        final_loss,
        diverged_at: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfgd::QuadraticProblem;
    use crate::optnet::HeadKind;
    use crate::problems::LeastSquares;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    fn fresh_net(head: HeadKind, hidden: usize, key: u64) -> OptimizerNet {
        let mut r = stream(key, StreamKind::NetInit, 0, 0);
        OptimizerNet::new(head, hidden, &mut r)
    }

    /// A net whose head weights are randomized too, so meta-gradients reach
    /// every parameter tensor.
    fn perturbed_net(head: HeadKind, hidden: usize, key: u64) -> OptimizerNet {
        let mut net = fresh_net(head, hidden, key);
        let mut r = stream(key ^ 0xabcd, StreamKind::NetInit, 1, 0);
        for t in [&mut net.w_out, &mut net.b_out] {
            for v in t.data_mut() {
                *v = rng::uniform_vec(&mut r, 1, -0.08, 0.08)[0];
            }
        }
        net
    }

    fn tiny_ls(key: u64, d: usize, m: usize) -> (LeastSquares, Tensor) {
        let mut r = stream(key, StreamKind::Problem, 0, 0);
        let ls = LeastSquares::sample(d, m, &mut r).unwrap();
        let mut ri = stream(key, StreamKind::Init, 0, 0);
        let x0 = Tensor::vector(rng::normal_vec(&mut ri, d));
        (ls, x0)
    }

    #[test]
    fn unroll_loss_sums_and_applies_weights() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1.0));
        let b = g.constant(Tensor::scalar(0.5));

        let plain = unroll_loss(&mut g, &[a, b], None).unwrap();
        assert_abs_diff_eq!(g.value(plain).scalar_value(), 1.5, epsilon = 1e-15);

        let single = unroll_loss(&mut g, &[a], None).unwrap();
        assert_eq!(single, a); // one step: the loss itself

        let last_only = unroll_loss(&mut g, &[a, b], Some(&[0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(g.value(last_only).scalar_value(), 0.5, epsilon = 1e-15);

        assert!(unroll_loss(&mut g, &[], None).is_err());
        assert!(unroll_loss(&mut g, &[a, b], Some(&[1.0])).is_err());
    }

    #[test]
    fn adam_matches_a_hand_computed_scalar_recursion() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::like(&[&p]);
        let g = Tensor::scalar(2.0);
        let lr = 0.1;

        // first step: m̂ = g, v̂ = g², update = lr·g/(|g| + eps) ≈ lr·sign(g)
        adam_step(&mut [&mut p], &[g.clone()], &mut st, lr).unwrap();
        let expect1 = 1.0 - lr * 2.0 / (2.0 + ADAM_EPS);
        assert_abs_diff_eq!(p.scalar_value(), expect1, epsilon = 1e-12);

        // second step with the same gradient, recursion by hand
        adam_step(&mut [&mut p], &[g.clone()], &mut st, lr).unwrap();
        let m2 = 0.9 * (0.1 * 2.0) + 0.1 * 2.0;
        let v2 = 0.999 * (0.001 * 4.0) + 0.001 * 4.0;
        let mh = m2 / (1.0 - 0.9f64.powi(2));
        let vh = v2 / (1.0 - 0.999f64.powi(2));
        let expect2 = expect1 - lr * mh / (vh.sqrt() + ADAM_EPS);
        assert_abs_diff_eq!(p.scalar_value(), expect2, epsilon = 1e-12);
        assert_eq!(st.steps(), 2);

        // zero gradient leaves the weights alone (moments decay, but the
        // numerator is exactly zero)
        let frozen = p.scalar_value();
        let dir = adam_step(&mut [&mut p], &[Tensor::scalar(0.0)], &mut st, lr).unwrap();
        assert!(dir);
        // m decays toward zero but stays positive: the step keeps moving
        // slightly — Adam with momentum is not literally stationary on a
        // zero gradient, so only the fresh-state case is exactly frozen
        let mut q = Tensor::scalar(1.0);
        let mut st2 = AdamState::like(&[&q]);
        adam_step(&mut [&mut q], &[Tensor::scalar(0.0)], &mut st2, lr).unwrap();
        assert_eq!(q.scalar_value(), 1.0);
        assert!((p.scalar_value() - frozen).abs() < lr); // bounded drift
    }

    #[test]
    fn adam_skips_non_finite_gradients_and_counts_them() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let mut st = AdamState::like(&[&p]);
        let bad = Tensor::vector(vec![0.5, f64::NAN]);
        let applied = adam_step(&mut [&mut p], &[bad], &mut st, 0.1).unwrap();
        assert!(!applied);
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(st.steps(), 0);
        assert_eq!(st.skipped(), 1);
    }

    #[test]
    fn adam_state_round_trips_through_its_text_format() {
        let mut p = Tensor::vector(vec![1.0, -0.5, 2.0]);
        let mut st = AdamState::like(&[&p]);
        adam_step(
            &mut [&mut p],
            &[Tensor::vector(vec![0.3, -0.7, 0.01])],
            &mut st,
            0.05,
        )
        .unwrap();
        let mut buf = Vec::new();
        st.save(&mut buf).unwrap();
        let back = AdamState::load(&mut buf.as_slice()).unwrap();
        assert_eq!(back.steps(), st.steps());
        assert_eq!(back.skipped(), st.skipped());
        assert_eq!(back.m[0].data(), st.m[0].data());
        assert_eq!(back.v[0].data(), st.v[0].data());
    }

    #[test]
    fn global_norm_clip_rescales_only_above_the_ceiling() {
        let mut gs = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![0.0, 4.0])];
        let norm = clip_global_norm(&mut gs, 1.0);
        assert_abs_diff_eq!(norm, 5.0, epsilon = 1e-12);
        let clipped: f64 = gs
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert_abs_diff_eq!(clipped, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gs[0].data()[0], 0.6, epsilon = 1e-12);

        let mut small = vec![Tensor::vector(vec![0.1, 0.2])];
        let before = small[0].clone();
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), before.data());
    }

    #[test]
    fn exact_line_search_matches_the_quadratic_closed_form() {
        let (ls, x0) = tiny_ls(21, 4, 6);
        let dir = ls.quadratic().gradient(&x0);
        let got = resolve_rate(RatePolicy::ExactLineSearch, &ls, &x0, &dir).unwrap();
        assert_abs_diff_eq!(got, ls.quadratic().optimal_rate(&x0, &dir), epsilon = 1e-10);

        assert_eq!(
            resolve_rate(RatePolicy::Fixed(0.37), &ls, &x0, &dir).unwrap(),
            0.37
        );
        let look = resolve_rate(RatePolicy::Lookahead, &ls, &x0, &dir).unwrap();
        let oracle = problems::lookahead_rate(&ls, &x0, &dir).unwrap();
        assert_eq!(look, oracle.rate);
    }

    #[test]
    fn config_validation_rejects_inconsistent_schedules() {
        let ok = MetaConfig::default();
        ok.validate().unwrap();

        let mut bad = MetaConfig::default();
        bad.unroll = bad.max_steps + 1;
        assert!(bad.validate().is_err());

        let mut bad = MetaConfig::default();
        bad.unroll_weights = Some(vec![1.0; 3]);
        assert!(bad.validate().is_err());

        let mut bad = MetaConfig::default();
        bad.quad_points = 5;
        assert!(matches!(
            bad.validate().unwrap_err(),
            CoreError::Unsupported(_)
        ));
    }

    #[test]
    fn safe_start_trajectory_equals_plain_gradient_descent() {
        // a zeroed hyperparameter head emits α=½, β=0, c=x — the fractional
        // update collapses to ∇f, so five steps at a fixed rate must match
        // hand-rolled gradient descent exactly
        let (mut ls, x0) = tiny_ls(22, 4, 7);
        let mut net = fresh_net(HeadKind::FracHyper, 5, 3);
        net.w_out.data_mut().fill(0.0);
        net.b_out.data_mut().fill(0.0);
        let mut losses = Vec::new();
        let mut hand = x0.clone();
        let quad = QuadraticProblem::new(ls.quadratic().matrix().clone(), ls.quadratic().linear().clone()).unwrap();
        let out = meta_test(
            &mut ls,
            &x0,
            &net,
            5,
            RatePolicy::Fixed(0.1),
            2,
            9,
            0,
            &mut |snap| {
                losses.push(snap.loss);
                let (a, b, _c) = snap.frac.expect("hyperparameter head");
                assert!(a.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
                assert!(b.data().iter().all(|&v| v.abs() < 1e-12));
            },
        )
        .unwrap();
        for _ in 0..5 {
            let g = quad.gradient(&hand);
            hand = hand.axpy(-0.1, &g);
        }
        for j in 0..4 {
            assert_abs_diff_eq!(out.x.data()[j], hand.data()[j], epsilon = 1e-12);
        }
        assert!(out.diverged_at.is_none());
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "GD on a quadratic at a sane rate descends");
    }

    #[test]
    fn meta_test_is_deterministic_for_a_fixed_seed() {
        let (mut ls, x0) = tiny_ls(23, 3, 5);
        let net = perturbed_net(HeadKind::FracHyper, 4, 5);
        let run_once = |obj: &mut LeastSquares| {
            let mut seen = Vec::new();
            let out = meta_test(
                obj,
                &x0,
                &net,
                6,
                RatePolicy::Fixed(0.05),
                2,
                77,
                3,
                &mut |snap| {
                    seen.push((snap.loss, snap.rate, snap.update.data().to_vec()));
                },
            )
            .unwrap();
            (seen, out.x, out.final_loss)
        };
        let (seen1, x1, f1) = run_once(&mut ls);
        let (seen2, x2, f2) = run_once(&mut ls);
        assert_eq!(seen1, seen2);
        assert_eq!(x1.data(), x2.data());
        assert_eq!(f1, f2);
    }

    /// f(x) = exp(Σx): overflows to ∞ for large positive iterates.
    struct ExpSum(usize);
    impl Objective for ExpSum {
        fn dim(&self) -> usize {
            self.0
        }
        fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
            let s = g.sum(x);
            Ok(g.exp(s))
        }
    }

    #[test]
    fn meta_test_reports_the_divergence_step() {
        let mut obj = ExpSum(3);
        let x0 = Tensor::full(&[3], 300.0); // exp(900) overflows
        let net = fresh_net(HeadKind::FracHyper, 4, 6);
        let out = meta_test(
            &mut obj,
            &x0,
            &net,
            4,
            RatePolicy::Fixed(0.1),
            1,
            1,
            0,
            &mut |_| panic!("no step should complete"),
        )
        .unwrap();
        assert_eq!(out.diverged_at, Some(0));
        assert!(out.final_loss.is_infinite());
    }

    fn fd_meta_gradient_check(head: HeadKind, key: u64) {
        let net = perturbed_net(head, 4, key);
        let (mut ls, x0) = tiny_ls(key ^ 0x55, 3, 4);
        let run_loss = |n: &OptimizerNet, obj: &mut LeastSquares| {
            meta_gradient(n, obj, &x0, 4, None, RatePolicy::Fixed(0.05), 2, 13, 0)
                .unwrap()
                .0
        };
        let (_, grads) = meta_gradient(
            &net,
            &mut ls,
            &x0,
            4,
            None,
            RatePolicy::Fixed(0.05),
            2,
            13,
            0,
        )
        .unwrap();

        // probe a spread of coordinates in every parameter tensor
        let mut checked = 0;
        for (k, g) in grads.iter().enumerate() {
            let len = g.numel();
            for &i in &[0, len / 2, len - 1] {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let base = plus.params()[k].data()[i];
                let delta = 1e-6 * base.abs().max(1.0);
                plus.params_mut()[k].data_mut()[i] = base + delta;
                minus.params_mut()[k].data_mut()[i] = base - delta;
                let fd = (run_loss(&plus, &mut ls) - run_loss(&minus, &mut ls)) / (2.0 * delta);
                let ana = g.data()[i];
                let err = (ana - fd).abs() / (1.0 + fd.abs());
                assert!(
                    err <= 1e-3,
                    "param {k} coord {i}: analytic {ana:.6e}, finite-difference {fd:.6e} (err {err:.2e})"
                );
                checked += 1;
            }
        }
        assert!(checked >= 18);
    }

    #[test]
    fn meta_gradient_matches_finite_differences_for_the_hyper_head() {
        fd_meta_gradient_check(HeadKind::FracHyper, 31);
    }

    #[test]
    fn meta_gradient_matches_finite_differences_for_the_direct_head() {
        fd_meta_gradient_check(HeadKind::DirectUpdate, 32);
    }

    #[test]
    fn meta_train_zero_runs_returns_phi_unchanged() {
        let mut net = fresh_net(HeadKind::FracHyper, 4, 7);
        let before: Vec<Vec<f64>> = net.params().iter().map(|t| t.data().to_vec()).collect();
        let mut adam = AdamState::like(&net.params());
        let cfg = MetaConfig {
            runs: 0,
            max_steps: 4,
            unroll: 2,
            ..MetaConfig::default()
        };
        let log = meta_train(
            &cfg,
            &mut net,
            &mut adam,
            0,
            &mut |_| panic!("factory must not be called"),
            RatePolicy::Fixed(0.1),
            &mut |_, _, _| Ok(()),
        )
        .unwrap();
        assert!(log.is_empty());
        let after: Vec<Vec<f64>> = net.params().iter().map(|t| t.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn meta_train_does_one_update_per_run_when_unroll_fills_the_horizon() {
        let mut net = fresh_net(HeadKind::FracHyper, 4, 8);
        let mut adam = AdamState::like(&net.params());
        let cfg = MetaConfig {
            runs: 3,
            max_steps: 5, // 5 % 2 = 1 tail step is dropped → 4 effective
            unroll: 4,
            probes: 1,
            ..MetaConfig::default()
        };
        let mut runs_seen = Vec::new();
        let log = meta_train(
            &cfg,
            &mut net,
            &mut adam,
            0,
            &mut |run| {
                let (ls, x0) = tiny_ls(100 + run, 3, 4);
                Ok((Box::new(ls) as Box<dyn Objective>, x0))
            },
            RatePolicy::Fixed(0.05),
            &mut |run, _, _| {
                runs_seen.push(run);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(log.len(), 3);
        assert!(log.iter().all(|r| r.step == 4 && !r.skipped));
        assert_eq!(adam.steps(), 3);
        assert_eq!(runs_seen, vec![0, 1, 2]);
    }

    #[test]
    fn meta_training_improves_the_unroll_loss_on_tiny_least_squares() {
        // one fixed problem instance every run, so the unroll-loss sequence
        // reflects controller learning alone; the direct-update head starts
        // near zero output, and any learning shows up as a clear drop
        // between the first and last slice of runs
        let mut net = fresh_net(HeadKind::DirectUpdate, 6, 9);
        let mut adam = AdamState::like(&net.params());
        let cfg = MetaConfig {
            runs: 60,
            max_steps: 12,
            unroll: 12,
            meta_lr: 0.01,
            probes: 1,
            seed: 4,
            ..MetaConfig::default()
        };
        let log = meta_train(
            &cfg,
            &mut net,
            &mut adam,
            0,
            &mut |_| {
                let (ls, x0) = tiny_ls(500, 4, 6);
                Ok((Box::new(ls) as Box<dyn Objective>, x0))
            },
            RatePolicy::Fixed(1.0),
            &mut |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(log.len(), 60);
        let first: f64 = log[..6].iter().map(|r| r.loss).sum::<f64>() / 6.0;
        let last: f64 = log[54..].iter().map(|r| r.loss).sum::<f64>() / 6.0;
        assert!(
            last < first,
            "mean unroll loss should fall: first {first:.3}, last {last:.3}"
        );
    }
}
