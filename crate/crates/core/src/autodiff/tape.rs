use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::{sigmoid, softplus};
use super::Scalar;
use crate::error::{Error, Result};

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
    value: f64,
}

/// Append-only record of scalar operations for reverse-mode differentiation.
///
/// Nodes are pushed in evaluation order, so every node's parents precede it
/// and a single backward pass over the vector visits each node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tape node, or a free constant when `tape` is `None`.
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: u32,
    value: f64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { nodes: RefCell::new(Vec::with_capacity(n)) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, [NO_PARENT, NO_PARENT], [0.0, 0.0])
    }

    fn push(&self, value: f64, parents: [u32; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(Node { parents, partials, value });
        Var { tape: Some(self), index, value }
    }

    /// First node holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.nodes.borrow().iter().position(|n| !n.value.is_finite())
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        let Some(tape) = output.tape else {
            return adj;
        };
        debug_assert!(std::ptr::eq(tape, self), "output recorded on a different tape");
        adj[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adj[p as usize] += a * node.partials[k];
                }
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> Option<usize> {
        self.tape.map(|_| self.index as usize)
    }

    fn unary(self, value: f64, d: f64) -> Self {
        match self.tape {
            Some(t) => t.push(value, [self.index, NO_PARENT], [d, 0.0]),
            None => Var { tape: None, index: NO_PARENT, value },
        }
    }

    fn binary(self, o: Self, value: f64, da: f64, db: f64) -> Self {
        match (self.tape, o.tape) {
            (None, None) => Var { tape: None, index: NO_PARENT, value },
            (Some(t), None) => t.push(value, [self.index, NO_PARENT], [da, 0.0]),
            (None, Some(t)) => t.push(value, [o.index, NO_PARENT], [db, 0.0]),
            (Some(t), Some(u)) => {
                debug_assert!(std::ptr::eq(t, u), "mixing variables from two tapes");
                t.push(value, [self.index, o.index], [da, db])
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.value + o.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.value - o.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.value * o.value, o.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.value / o.value;
        self.binary(o, q, 1.0 / o.value, -q / o.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Scalar for Var<'t> {
    fn constant(c: f64) -> Self {
        Var { tape: None, index: NO_PARENT, value: c }
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn tanh(self) -> Self {
        let y = self.value.tanh();
        self.unary(y, 1.0 - y * y)
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid(self.value);
        self.unary(s, s * (1.0 - s))
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }

    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s)
    }

    fn softplus(self) -> Self {
        self.unary(softplus(self.value), sigmoid(self.value))
    }
}

/// Loss value and its gradient over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Reverse-mode gradient of `loss` at `params`.
///
/// `loss` receives one tape variable per parameter. Fails with
/// [`Error::Numeric`] naming the first non-finite node.
pub fn gradient<F>(loss: F, params: &[f64]) -> Result<GradResult>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::with_capacity(params.len() * 4);
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.var(p)).collect();
    let out = loss(&vars);
    if let Some(node) = tape.first_non_finite() {
        return Err(Error::Numeric(format!("non-finite value at tape node {node}")));
    }
    if !out.value.is_finite() {
        return Err(Error::Numeric("non-finite loss value".into()));
    }
    let adj = tape.backward(out);
    let grad = vars.iter().map(|v| v.index().map_or(0.0, |i| adj[i])).collect();
    Ok(GradResult { value: out.value, grad })
}
