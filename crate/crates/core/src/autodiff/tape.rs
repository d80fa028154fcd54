//! Reverse-mode gradient tape over scalar operations.
//!
//! The tape stores, per node, its two parent indices and the local partial
//! derivatives with respect to each parent, precomputed during the forward
//! pass. The backward sweep is then a single reverse loop of fused
//! multiply-adds. Leaves (inputs and constants) point at themselves with zero
//! partials.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::Scalar;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Records a scalar computation for one reverse sweep.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(cap)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Truncates the tape back to `len` nodes; used when reusing a tape
    /// buffer across independent evaluations.
    pub fn rewind(&self, len: usize) {
        self.nodes.borrow_mut().truncate(len);
    }

    /// Registers a new input variable (leaf).
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push_leaf();
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    fn push_leaf(&self) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node {
            parents: [idx, idx],
            partials: [0.0, 0.0],
        });
        idx
    }

    fn push_unary(&self, parent: u32, partial: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node {
            parents: [parent, idx],
            partials: [partial, 0.0],
        });
        idx
    }

    fn push_binary(&self, p0: u32, d0: f64, p1: u32, d1: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node {
            parents: [p0, p1],
            partials: [d0, d1],
        });
        idx
    }

    /// Adjoints of every tape node with respect to `of`.
    pub fn adjoints(&self, of: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[of.idx as usize] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = nodes[i];
            adj[n.parents[0] as usize] += n.partials[0] * a;
            if n.parents[1] as usize != i {
                adj[n.parents[1] as usize] += n.partials[1] * a;
            }
        }
        adj
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        Var {
            tape: self.tape,
            idx: self.tape.push_binary(self.idx, 1.0, rhs.idx, 1.0),
            val: self.val + rhs.val,
        }
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        Var {
            tape: self.tape,
            idx: self.tape.push_binary(self.idx, 1.0, rhs.idx, -1.0),
            val: self.val - rhs.val,
        }
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        Var {
            tape: self.tape,
            idx: self.tape.push_binary(self.idx, rhs.val, rhs.idx, self.val),
            val: self.val * rhs.val,
        }
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.val;
        Var {
            tape: self.tape,
            idx: self
                .tape
                .push_binary(self.idx, inv, rhs.idx, -self.val * inv * inv),
            val: self.val * inv,
        }
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        Var {
            tape: self.tape,
            idx: self.tape.push_unary(self.idx, -1.0),
            val: -self.val,
        }
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }

    fn lift(self, c: f64) -> Self {
        // Constants are leaves; their adjoints are computed but never read.
        self.tape.var(c)
    }

    fn tanh(self) -> Self {
        let y = self.val.tanh();
        Var {
            tape: self.tape,
            idx: self.tape.push_unary(self.idx, 1.0 - y * y),
            val: y,
        }
    }

    fn exp(self) -> Self {
        let y = self.val.exp();
        Var {
            tape: self.tape,
            idx: self.tape.push_unary(self.idx, y),
            val: y,
        }
    }

    fn sin(self) -> Self {
        Var {
            tape: self.tape,
            idx: self.tape.push_unary(self.idx, self.val.cos()),
            val: self.val.sin(),
        }
    }

    fn cos(self) -> Self {
        Var {
            tape: self.tape,
            idx: self.tape.push_unary(self.idx, -self.val.sin()),
            val: self.val.cos(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of<F>(f: F, x: &[f64]) -> (f64, Vec<f64>)
    where
        F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
    {
        let tape = Tape::new();
        let vars: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
        let out = f(&vars);
        let adj = tape.adjoints(out);
        let g = vars.iter().map(|v| adj[v.index()]).collect();
        (out.value(), g)
    }

    #[test]
    fn product_rule() {
        let (v, g) = grad_of(|x| x[0] * x[1], &[3.0, 4.0]);
        assert_eq!(v, 12.0);
        assert_eq!(g, vec![4.0, 3.0]);
    }

    #[test]
    fn composite_matches_hand_derivative() {
        // f(x) = tanh(x0 * x1) + exp(x0) / x1
        fn f<'t>(x: &[Var<'t>]) -> Var<'t> {
            Scalar::tanh(x[0] * x[1]) + Scalar::exp(x[0]) / x[1]
        }
        let (x0, x1) = (0.3, 1.7);
        let (v, g) = grad_of(f, &[x0, x1]);
        let t = (x0 * x1).tanh();
        assert!((v - (t + x0.exp() / x1)).abs() < 1e-15);
        let s = 1.0 - t * t;
        let g0 = s * x1 + x0.exp() / x1;
        let g1 = s * x0 - x0.exp() / (x1 * x1);
        assert!((g[0] - g0).abs() < 1e-14);
        assert!((g[1] - g1).abs() < 1e-14);
    }

    #[test]
    fn fan_out_accumulates() {
        let (_, g) = grad_of(|x| x[0] * x[0] * x[0], &[2.0]);
        assert!((g[0] - 12.0).abs() < 1e-14);
    }

    #[test]
    fn constants_do_not_contribute() {
        let (v, g) = grad_of(|x| x[0] * x[0].lift(5.0), &[2.0]);
        assert_eq!(v, 10.0);
        assert_eq!(g, vec![5.0]);
    }
}
