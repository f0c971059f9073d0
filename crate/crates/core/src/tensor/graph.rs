use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{Scalar, Tensor};
use crate::error::{usage_err, Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
///
/// Handles carry the id of the graph that created them, so using one on a
/// different graph is reported instead of silently reading the wrong node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(usage_err!("unknown activation kind {other:?}")),
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: usize,
    },
    Concat {
        a: usize,
        b: usize,
        ca: usize,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    WeightedSum {
        x: usize,
        weights: Tensor<T>,
    },
    Bce {
        pred: usize,
        target: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always a valid
/// topological order and [`Graph::backward`] simply walks it in reverse.
pub struct Graph<T: Scalar> {
    id: u64,
    nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// A graph that fails with a numeric error as soon as any operation
    /// produces a NaN or infinity.
    pub fn checked() -> Self {
        Graph {
            checked: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Records a tensor that is treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(usage_err!("node {v:?} is not on this tape"));
        }
        Ok(v.index)
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced at tape record {}",
                self.nodes.len()
            )));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let out = kernels::conv2d_forward(
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            &self.nodes[bi].value,
            stride,
            pad,
        )?;
        self.push(
            out,
            Op::Conv2d {
                x: xi,
                w: wi,
                b: bi,
                stride,
                pad,
            },
            &[xi, wi, bi],
        )
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let (out, argmax) = kernels::max_pool2_forward(&self.nodes[xi].value)?;
        self.push(out, Op::MaxPool2 { x: xi, argmax }, &[xi])
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let out = kernels::upsample2_forward(&self.nodes[xi].value)?;
        self.push(out, Op::Upsample2 { x: xi }, &[xi])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let out = kernels::concat_forward(&self.nodes[ai].value, &self.nodes[bi].value)?;
        let ca = self.nodes[ai].value.shape()[1];
        self.push(out, Op::Concat { a: ai, b: bi, ca }, &[ai, bi])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let out = self.nodes[xi].value.map(kernels::relu);
        self.push(out, Op::Relu { x: xi }, &[xi])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let out = self.nodes[xi].value.map(kernels::sigmoid);
        self.push(out, Op::Sigmoid { x: xi }, &[xi])
    }

    /// Elementwise product of two same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (va, vb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if va.shape() != vb.shape() {
            return Err(crate::error::shape_err!(
                "mul shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Mul { a: ai, b: bi }, &[ai, bi])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let out = Tensor::scalar(self.nodes[xi].value.sum());
        self.push(out, Op::Sum { x: xi }, &[xi])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let v = &self.nodes[xi].value;
        let out = Tensor::scalar(v.sum() / T::from_f64(v.len() as f64));
        self.push(out, Op::Mean { x: xi }, &[xi])
    }

    /// `sum(x * weights)` against a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let xi = self.index(x)?;
        let v = &self.nodes[xi].value;
        if v.shape() != weights.shape() {
            return Err(crate::error::shape_err!(
                "weighted_sum shape mismatch: {:?} vs {:?}",
                v.shape(),
                weights.shape()
            ));
        }
        let s = v
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { x: xi, weights }, &[xi])
    }

    /// Mean binary cross-entropy of probabilities `pred` against a constant
    /// `target` mask.
    pub fn bce_loss(&mut self, pred: Var, target: Tensor<T>) -> Result<Var> {
        let pi = self.index(pred)?;
        let loss = kernels::bce_forward(&self.nodes[pi].value, &target)?;
        self.push(
            Tensor::scalar(loss),
            Op::Bce { pred: pi, target },
            &[pi],
        )
    }

    /// Propagates gradients from the scalar `loss` back to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let li = self.index(loss)?;
        if !self.nodes[li].value.is_scalar() {
            return Err(usage_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::full(self.nodes[li].value.shape(), T::one()));

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                for (input, contribution) in self.local_grads(node, &g)? {
                    if !self.nodes[input].requires_grad {
                        continue;
                    }
                    match &mut grads[input] {
                        Some(acc) => acc.add_assign(&contribution),
                        slot @ None => *slot = Some(contribution),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let val = |i: usize| &self.nodes[i].value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            &Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let need_dx = self.nodes[x].requires_grad;
                let (dx, dw, db) =
                    kernels::conv2d_backward(val(x), val(w), stride, pad, g, need_dx)?;
                let mut out = vec![(w, dw), (b, db)];
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                out
            }
            Op::MaxPool2 { x, argmax } => {
                vec![(*x, kernels::max_pool2_backward(val(*x).shape(), argmax, g))]
            }
            &Op::Upsample2 { x } => vec![(x, kernels::upsample2_backward(g)?)],
            &Op::Concat { a, b, ca } => {
                let (da, db) = kernels::concat_backward(g, ca)?;
                vec![(a, da), (b, db)]
            }
            &Op::Relu { x } => vec![(x, kernels::relu_backward(val(x), g))],
            &Op::Sigmoid { x } => vec![(x, kernels::sigmoid_backward(&node.value, g))],
            &Op::Mul { a, b } => {
                let scaled = |other: &Tensor<T>| {
                    let data = other.data().iter().zip(g.data()).map(|(&o, &d)| o * d).collect();
                    Tensor::new(other.shape().to_vec(), data)
                };
                vec![(a, scaled(val(b))?), (b, scaled(val(a))?)]
            }
            &Op::Sum { x } => vec![(x, Tensor::full(val(x).shape(), g.data()[0]))],
            &Op::Mean { x } => {
                let n = T::from_f64(val(x).len() as f64);
                vec![(x, Tensor::full(val(x).shape(), g.data()[0] / n))]
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                vec![(*x, weights.map(|w| w * s))]
            }
            Op::Bce { pred, target } => {
                vec![(*pred, kernels::bce_backward(val(*pred), target, g.data()[0]))]
            }
        })
    }
}

/// Accumulated gradients from one [`Graph::backward`] call.
pub struct Gradients<T> {
    graph: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss or was recorded as a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`], but an absent gradient reads as zeros shaped
    /// like the node's value.
    pub fn get_or_zeros(&self, graph: &Graph<T>, v: Var) -> Result<Tensor<T>> {
        match self.get(v) {
            Some(g) => Ok(g.clone()),
            None => Ok(Tensor::zeros(graph.value(v)?.shape())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[1, 2]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn foreign_node_is_usage_error() {
        let mut a = Graph::<f64>::new();
        let b = Graph::<f64>::new();
        let x = a.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.backward(x), Err(Error::Usage(_))));
        assert!(b.value(x).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // y = sum(relu(x)) + sum(x) ⇒ dy/dx = [x>0] + 1.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 1, 1, 2], vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x).unwrap();
        let u = g.upsample2(r).unwrap();
        let p = g.max_pool2(u).unwrap();
        let c = g.concat_channels(p, x).unwrap();
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.leaf(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 9]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0]);
    }

    #[test]
    fn checked_mode_rejects_non_finite() {
        let mut g = Graph::<f64>::checked();
        let x = g.leaf(Tensor::new(vec![1, 1, 1, 2], vec![f64::INFINITY, 0.0]).unwrap());
        assert!(matches!(g.relu(x), Err(Error::Numeric(_))));
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 1, 1, 2], vec![f64::INFINITY, 0.0]).unwrap());
        assert!(g.relu(x).is_ok());
    }

    #[test]
    fn activation_names() {
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
        assert_eq!("sigmoid".parse::<Activation>().unwrap(), Activation::Sigmoid);
        assert!(matches!("tanh".parse::<Activation>(), Err(Error::Usage(_))));
    }
}
