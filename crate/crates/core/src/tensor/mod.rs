//! Dense row-major tensors with reverse-mode differentiation.
//!
//! Every op builds a node that holds its parents and a backward closure.
//! Calling [`Tensor::backward`] on a scalar walks the graph in reverse
//! topological order and accumulates gradients into every tensor that
//! requires them. Gradients add across uses; callers zero leaf gradients
//! between steps with [`Tensor::zero_grad`].
//!
//! Leaves are immutable after construction. Parameter updates construct a
//! fresh leaf, so tensors with gradient tracking disabled can be shared
//! freely across threads.

mod conv;
mod elementwise;
mod linalg;
mod nn;
mod shape;

pub(crate) use conv::image_dims;

use std::cell::Cell;
use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Backward rule of an op: receives the output gradient and the parents,
/// returns one gradient contribution per parent (`None` for parents that
/// do not require a gradient).
pub type BackwardFn = Box<dyn Fn(&[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Reference-counted handle to a tensor in the computation graph.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.node.as_ref().map(|n| n.op).unwrap_or("leaf");
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &op)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Constant leaf (no gradient tracking).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("new", format!("zero extent in {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::shape(
                "new",
                format!("{} values for shape {shape:?}", data.len()),
            ));
        }
        Ok(Self::build(data, shape.to_vec(), requires_grad, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(vec![v], vec![], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![0.0; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::build(vec![1.0; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::build(vec![v; numel_of(shape)], shape.to_vec(), false, None)
    }

    /// Constant leaf with i.i.d. normal entries.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..numel_of(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::build(data, shape.to_vec(), false, None)
    }

    /// Constant leaf with i.i.d. uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel_of(shape))
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Self::build(data, shape.to_vec(), false, None)
    }

    /// Builds the output of a custom op. The node is only recorded when
    /// some parent requires a gradient and recording is enabled.
    pub fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op}: data/shape mismatch");
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = requires_grad.then(|| Node {
            op,
            parents,
            backward,
        });
        Self::build(data, shape, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn op_name(&self) -> &'static str {
        self.0.node.as_ref().map(|n| n.op).unwrap_or("leaf")
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.0.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(
                "item",
                format!("expected one element, shape {:?}", self.shape()),
            )),
        }
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values, cut from the graph, no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Same values as a fresh trainable leaf.
    pub fn to_param(&self) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn accumulate(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a single-element tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("expected a scalar output, shape {:?}", self.shape()),
            ));
        }
        self.backward_with(&[1.0])
    }

    /// Reverse-mode sweep seeded with an explicit output gradient.
    pub fn backward_with(&self, seed: &[f64]) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(Error::mismatch("backward", &[seed.len()], self.shape()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate(seed);
        for t in order.iter().rev() {
            let Some(node) = t.0.node.as_ref() else {
                continue;
            };
            let contribs = {
                let guard = t.0.grad.lock().expect("grad lock poisoned");
                match guard.as_ref() {
                    Some(g) => (node.backward)(g, &node.parents),
                    None => continue,
                }
            };
            for (parent, contrib) in node.parents.iter().zip(contribs) {
                if let (true, Some(c)) = (parent.requires_grad(), contrib) {
                    parent.accumulate(&c);
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that require gradients, parents first.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.0.node.as_ref() {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_data() {
        assert!(Tensor::new(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::new(vec![], &[0]).is_err());
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        let z = x.mul(&x).unwrap();
        assert!(z.requires_grad());
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(x.scale(2.0).backward().is_err());
    }

    #[test]
    fn shared_use_accumulates() {
        // f = sum(x * x) + sum(3 x) ⇒ df/dx = 2x + 3
        let x = Tensor::param(vec![1.0, -2.0], &[2]).unwrap();
        let f = x
            .mul(&x)
            .unwrap()
            .sum_all()
            .add(&x.scale(3.0).sum_all())
            .unwrap();
        f.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0, -1.0]);
    }

    #[test]
    fn grads_add_across_backward_calls() {
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        x.mul(&x).unwrap().sum_all().backward().unwrap();
        x.mul(&x).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn constant_tensors_are_send_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Tensor>();
    }
}
