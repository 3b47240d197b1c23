//! The tensor handle, its gradient tape, and the reverse sweep.
//!
//! Every [`Tensor`] produced by a differentiable operation keeps a link to the
//! operation that created it. Node ids are handed out in creation order, so
//! sorting the reachable nodes by descending id is a valid reverse
//! topological order of the tape.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` without recording operations on the tape.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// What a backward closure sees when it runs.
pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a [f64],
    pub inputs: &'a [Tensor],
    pub output: &'a [f64],
}

type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

/// A recorded operation: the tape node that produced a tensor.
pub(crate) struct GradFn {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Dense row-major tensor of `f64` with optional tape participation.
///
/// Cloning is cheap and yields another handle to the same storage.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

/// Counters gathered during one reverse sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardStats {
    pub nodes_visited: usize,
    pub leaves_updated: usize,
}

impl Tensor {
    fn build(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// A constant tensor. Fails when `data` does not fill `shape`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// A trainable leaf.
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.into_leaf(true))
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(vec![v], vec![], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(vec![0.0; n], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::build(vec![v; n], shape.to_vec(), false, None)
    }

    fn into_leaf(self, requires_grad: bool) -> Self {
        let data = self.to_vec();
        Self::build(data, self.shape().to_vec(), requires_grad, None)
    }

    /// Fresh leaf holding a copy of this tensor's values.
    pub fn detach(&self) -> Self {
        Self::build(self.to_vec(), self.shape().to_vec(), false, None)
    }

    /// Fresh leaf that requires gradients.
    pub fn detach_requires_grad(&self) -> Self {
        Self::build(self.to_vec(), self.shape().to_vec(), true, None)
    }

    /// Records an operation. The result joins the tape only when gradients
    /// are enabled and at least one input requires them.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: impl Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let grad_fn = GradFn {
                name,
                inputs,
                backward: Box::new(backward),
            };
            Self::build(data, shape, true, Some(grad_fn))
        } else {
            Self::build(data, shape, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the op that produced this tensor, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    /// Overwrites the values of a leaf in place (used by optimizers).
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        if !self.is_leaf() {
            return Err(TensorError::NotLeaf);
        }
        let mut d = self.0.data.borrow_mut();
        if d.len() != values.len() {
            return Err(TensorError::DataLength {
                shape: self.shape().to_vec(),
                len: values.len(),
            });
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse sweep from a scalar root. Leaves that require gradients
    /// accumulate into their `grad`; repeated sweeps keep adding.
    pub fn backward(&self) -> Result<BackwardStats> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.shape().to_vec(),
            });
        }
        if !self.requires_grad() {
            return Ok(BackwardStats {
                nodes_visited: 0,
                leaves_updated: 0,
            });
        }

        // collect every node reachable through requires_grad edges
        let mut nodes: HashMap<u64, Tensor> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                for inp in &gf.inputs {
                    if inp.requires_grad() && !nodes.contains_key(&inp.id()) {
                        stack.push(inp.clone());
                    }
                }
            }
            nodes.insert(t.id(), t);
        }
        let mut order: Vec<Tensor> = nodes.into_values().collect();
        order.sort_unstable_by(|a, b| b.id().cmp(&a.id()));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        let mut stats = BackwardStats {
            nodes_visited: 0,
            leaves_updated: 0,
        };
        for node in &order {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            stats.nodes_visited += 1;
            match &node.0.grad_fn {
                None => {
                    node.accumulate_grad(&grad);
                    stats.leaves_updated += 1;
                }
                Some(gf) => {
                    let output = node.0.data.borrow();
                    let ctx = BackwardCtx {
                        grad: &grad,
                        inputs: &gf.inputs,
                        output: &output,
                    };
                    let grads = (gf.backward)(&ctx);
                    debug_assert_eq!(grads.len(), gf.inputs.len(), "op {}", gf.name);
                    for (inp, g) in gf.inputs.iter().zip(grads) {
                        let Some(g) = g else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), inp.numel(), "op {}", gf.name);
                        match pending.get_mut(&inp.id()) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(inp.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Ok(stats)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.0.data.borrow();
        let head: Vec<f64> = d.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("head", &head)
            .finish()
    }
}

/// Clears gradients on every tensor in `params`.
pub fn zero_grads(params: &[Tensor]) {
    for p in params {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
        let t = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(t.numel(), 4);
        assert!(!t.requires_grad());
    }

    #[test]
    fn no_grad_suppresses_tape() {
        let x = Tensor::parameter(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let x = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let err = x.backward().unwrap_err();
        assert!(matches!(err, TensorError::NonScalarRoot { .. }));
    }
}
