//! Minimal scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one binary node per arithmetic operation; [`Tape::backward`]
//! runs a single reverse sweep and returns the adjoint of every node. The
//! [`Real`] trait abstracts over `f64` (plain evaluation) and [`Var`] (taped
//! evaluation), so the dynamics and loss kernels are written once and
//! differentiated exactly where gradients are needed.
//!
//! Branching kernels (Huber, box distances) decide their branch from `.value()`
//! and record only the taken branch; the resulting gradients are the standard
//! almost-everywhere subgradients with value 0 chosen at kinks.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    grads: [f64; 2],
}

/// Operation record for one reverse-mode sweep. Reusable across evaluations
/// via [`Tape::reset`].
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Clears recorded nodes without releasing capacity.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// New input (leaf) variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [0, 0],
            grads: [0.0, 0.0],
        });
        Var {
            tape: self,
            idx,
            value,
        }
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(node);
        idx
    }

    fn unary<'t>(&'t self, parent: &Var<'t>, grad: f64, value: f64) -> Var<'t> {
        let idx = self.push(Node {
            parents: [parent.idx, parent.idx],
            grads: [grad, 0.0],
        });
        Var {
            tape: self,
            idx,
            value,
        }
    }

    fn binary<'t>(&'t self, a: &Var<'t>, b: &Var<'t>, ga: f64, gb: f64, value: f64) -> Var<'t> {
        let idx = self.push(Node {
            parents: [a.idx, b.idx],
            grads: [ga, gb],
        });
        Var {
            tape: self,
            idx,
            value,
        }
    }

    /// Reverse sweep from the given seeded outputs. Returns one adjoint per
    /// node; index with [`Var::index`].
    pub fn backward(&self, seeds: &[(Var<'_>, f64)]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        for (var, seed) in seeds {
            adjoint[var.idx as usize] += seed;
        }
        // Leaves carry zero grads and unary nodes a zero second slot, so a
        // plain accumulate over both slots is safe.
        for i in (0..nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            adjoint[node.parents[0] as usize] += node.grads[0] * a;
            adjoint[node.parents[1] as usize] += node.grads[1] * a;
        }
        adjoint
    }
}

/// Differentiable scalar bound to a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    value: f64,
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value
    }

    /// Node index into the adjoint vector returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape
            .binary(&self, &rhs, 1.0, 1.0, self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape
            .binary(&self, &rhs, 1.0, -1.0, self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape
            .binary(&self, &rhs, rhs.value, self.value, self.value * rhs.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.value;
        self.tape
            .binary(&self, &rhs, inv, -self.value * inv * inv, self.value * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(&self, -1.0, -self.value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.tape.unary(&self, 1.0, self.value + rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.tape.unary(&self, 1.0, self.value - rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.tape.unary(&self, rhs, self.value * rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.tape.unary(&self, 1.0 / rhs, self.value / rhs)
    }
}

/// Scalar abstraction over plain and taped evaluation.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Evaluation context: `()` for `f64`, the tape for [`Var`].
    type Ctx: Copy;

    fn lift(ctx: Self::Ctx, value: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    /// `max(self, 0)` with subgradient 0 at the kink.
    fn relu(self) -> Self;
    fn min2(self, other: Self) -> Self;
    fn recip(self) -> Self;
    /// `c - self`.
    fn rsub(self, c: f64) -> Self {
        -(self - c)
    }
}

impl Real for f64 {
    type Ctx = ();

    fn lift(_: (), value: f64) -> Self {
        value
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
    fn min2(self, other: Self) -> Self {
        self.min(other)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
}

impl<'t> Real for Var<'t> {
    type Ctx = &'t Tape;

    fn lift(tape: &'t Tape, value: f64) -> Self {
        tape.var(value)
    }
    fn value(self) -> f64 {
        self.value
    }
    fn sin(self) -> Self {
        self.tape.unary(&self, self.value.cos(), self.value.sin())
    }
    fn cos(self) -> Self {
        self.tape.unary(&self, -self.value.sin(), self.value.cos())
    }
    fn exp(self) -> Self {
        let v = self.value.exp();
        self.tape.unary(&self, v, v)
    }
    fn ln(self) -> Self {
        self.tape.unary(&self, 1.0 / self.value, self.value.ln())
    }
    fn sqrt(self) -> Self {
        let v = self.value.sqrt();
        self.tape.unary(&self, 0.5 / v, v)
    }
    fn abs(self) -> Self {
        let g = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.tape.unary(&self, g, self.value.abs())
    }
    fn relu(self) -> Self {
        let g = if self.value > 0.0 { 1.0 } else { 0.0 };
        self.tape.unary(&self, g, self.value.max(0.0))
    }
    fn min2(self, other: Self) -> Self {
        if self.value <= other.value {
            self.tape.binary(&self, &other, 1.0, 0.0, self.value)
        } else {
            self.tape.binary(&self, &other, 0.0, 1.0, other.value)
        }
    }
    fn recip(self) -> Self {
        let inv = 1.0 / self.value;
        self.tape.unary(&self, -inv * inv, inv)
    }
}
