//! The interface optimizers use to talk to the functions they minimize.

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::tensor::Tensor;

/// A differentiable scalar objective over a flat parameter vector.
///
/// `build` records the loss computation on a caller-supplied graph starting
/// from an existing parameter node, so optimizers can differentiate through
/// it (including second-order and through-the-update meta-gradients).
/// Stochastic objectives redraw their sample in [`Objective::begin_step`];
/// within one step every `build` call must describe the same function.
pub trait Objective {
    /// Number of parameters.
    fn dim(&self) -> usize;

    /// Records the loss at parameter node `x` (shape `[dim]`) and returns the
    /// scalar loss node.
    fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId>;

    /// Hook called once before optimization step `t`; stochastic objectives
    /// draw their minibatch here. Deterministic objectives ignore it.
    fn begin_step(&mut self, _t: usize) {}

    /// Loss value at `x` on a scratch graph.
    fn loss_at(&self, x: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let l = self.build(&mut g, xn)?;
        Ok(g.value(l).scalar_value())
    }

    /// Gradient value at `x` on a scratch graph.
    fn grad_at(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let l = self.build(&mut g, xn)?;
        Ok(g.grad(l, &[xn])?.into_iter().next().unwrap())
    }
}
