//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only arena of nodes. Each node stores its value,
//! the indices of its parents and the local partial derivative with respect
//! to each parent. Parents always precede children, so a single reverse
//! sweep over the arena accumulates adjoints for every node.
//!
//! Dense layers are recorded as one fused node per output (`Linear`) rather
//! than a chain of multiply/add nodes; the adjoint arithmetic is identical.

use crate::error::{Error, Result};

/// Primitive operations that can be recorded with [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sigmoid,
    Softplus,
    /// Hard absolute value; derivative is taken as +1 at zero.
    Abs,
}

impl Primitive {
    pub fn arity(self) -> usize {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Neg => "neg",
            Primitive::Exp => "exp",
            Primitive::Ln => "ln",
            Primitive::Sqrt => "sqrt",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softplus => "softplus",
            Primitive::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf,
    Op(Primitive),
    /// `x * k + c` with constant `k` and `c`.
    Affine,
    /// `sum_i a_i * b_i (+ bias)`.
    Linear,
    Sum,
}

/// Handle to a node on a tape together with its forward value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Var {
    index: u32,
    value: f64,
}

impl Var {
    pub fn value(self) -> f64 {
        self.value
    }

    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    kind: NodeKind,
    start: u32,
    len: u32,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

/// Stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            values: Vec::with_capacity(nodes),
            parents: Vec::with_capacity(nodes * 2),
            partials: Vec::with_capacity(nodes * 2),
        }
    }

    /// Drops all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.parents.clear();
        self.partials.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, var: Var) -> NodeKind {
        self.nodes[var.index()].kind
    }

    fn push(
        &mut self,
        kind: NodeKind,
        value: f64,
        edges: impl IntoIterator<Item = (Var, f64)>,
        op: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let start = self.parents.len() as u32;
        for (parent, partial) in edges {
            debug_assert!(parent.index() < self.nodes.len());
            self.parents.push(parent.index);
            self.partials.push(partial);
        }
        let len = self.parents.len() as u32 - start;
        let index = self.nodes.len() as u32;
        self.nodes.push(Node { kind, start, len });
        self.values.push(value);
        Ok(Var { index, value })
    }

    /// A leaf node: a constant or a parameter, depending on how the caller
    /// reads the gradients.
    pub fn leaf(&mut self, value: f64) -> Result<Var> {
        self.push(NodeKind::Leaf, value, [], "leaf")
    }

    pub fn leaves(&mut self, values: &[f64]) -> Result<Vec<Var>> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    /// Records a primitive applied to `inputs`.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != kind.arity() {
            return Err(Error::Dimension {
                expected: kind.arity(),
                actual: inputs.len(),
            });
        }
        let a = inputs[0];
        let x = a.value;
        let op = NodeKind::Op(kind);
        let name = kind.name();
        match kind {
            Primitive::Add => {
                let b = inputs[1];
                self.push(op, x + b.value, [(a, 1.0), (b, 1.0)], name)
            }
            Primitive::Sub => {
                let b = inputs[1];
                self.push(op, x - b.value, [(a, 1.0), (b, -1.0)], name)
            }
            Primitive::Mul => {
                let b = inputs[1];
                self.push(op, x * b.value, [(a, b.value), (b, x)], name)
            }
            Primitive::Div => {
                let b = inputs[1];
                if b.value == 0.0 {
                    return Err(Error::Domain {
                        op: name,
                        input: b.value,
                    });
                }
                let q = x / b.value;
                self.push(op, q, [(a, 1.0 / b.value), (b, -q / b.value)], name)
            }
            Primitive::Neg => self.push(op, -x, [(a, -1.0)], name),
            Primitive::Exp => {
                let e = x.exp();
                self.push(op, e, [(a, e)], name)
            }
            Primitive::Ln => {
                if x <= 0.0 {
                    return Err(Error::Domain { op: name, input: x });
                }
                self.push(op, x.ln(), [(a, 1.0 / x)], name)
            }
            Primitive::Sqrt => {
                if x < 0.0 {
                    return Err(Error::Domain { op: name, input: x });
                }
                let r = x.sqrt();
                // d sqrt / dx is unbounded at 0; report it rather than emit inf.
                if r == 0.0 {
                    return Err(Error::Domain { op: name, input: x });
                }
                self.push(op, r, [(a, 0.5 / r)], name)
            }
            Primitive::Tanh => {
                let t = x.tanh();
                self.push(op, t, [(a, 1.0 - t * t)], name)
            }
            Primitive::Sigmoid => {
                let s = sigmoid(x);
                self.push(op, s, [(a, s * (1.0 - s))], name)
            }
            Primitive::Softplus => self.push(op, softplus(x), [(a, sigmoid(x))], name),
            Primitive::Abs => {
                let d = if x >= 0.0 { 1.0 } else { -1.0 };
                self.push(op, x.abs(), [(a, d)], name)
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Neg, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Ln, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sqrt, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Abs, &[a])
    }

    /// `a * scale + shift` with constant `scale` and `shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.push(
            NodeKind::Affine,
            a.value * scale + shift,
            [(a, scale)],
            "affine",
        )
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.affine(a, k, 0.0)
    }

    pub fn shift(&mut self, a: Var, k: f64) -> Result<Var> {
        self.affine(a, 1.0, k)
    }

    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let value = xs.iter().map(|x| x.value).sum();
        self.push(NodeKind::Sum, value, xs.iter().map(|&x| (x, 1.0)), "sum")
    }

    /// Fused `sum_i a_i * b_i + bias`.
    pub fn linear(&mut self, a: &[Var], b: &[Var], bias: Option<Var>) -> Result<Var> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                actual: b.len(),
            });
        }
        let mut value = 0.0;
        for (x, y) in a.iter().zip(b) {
            value += x.value * y.value;
        }
        if let Some(bias) = bias {
            value += bias.value;
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "linear" });
        }
        let start = self.parents.len() as u32;
        self.parents.reserve(2 * a.len() + 1);
        self.partials.reserve(2 * a.len() + 1);
        for (x, y) in a.iter().zip(b) {
            self.parents.extend_from_slice(&[x.index, y.index]);
            self.partials.extend_from_slice(&[y.value, x.value]);
        }
        if let Some(bias) = bias {
            self.parents.push(bias.index);
            self.partials.push(1.0);
        }
        let len = self.parents.len() as u32 - start;
        let index = self.nodes.len() as u32;
        self.nodes.push(Node { kind: NodeKind::Linear, start, len });
        self.values.push(value);
        Ok(Var { index, value })
    }

    /// Fused `sum_i a_i * k_i + c` with constant coefficients.
    pub fn combine(&mut self, a: &[Var], coefficients: &[f64], constant: f64) -> Result<Var> {
        if a.len() != coefficients.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                actual: coefficients.len(),
            });
        }
        let mut value = constant;
        for (x, k) in a.iter().zip(coefficients) {
            value += x.value * k;
        }
        let edges = a.iter().zip(coefficients).map(|(&x, &k)| (x, k));
        self.push(NodeKind::Linear, value, edges, "combine")
    }

    /// Reverse sweep seeded with `d output / d output = 1`.
    pub fn backward(&self, output: Var) -> Gradients {
        let end = output.index() + 1;
        let mut adjoints = vec![0.0; self.nodes.len()];
        adjoints[output.index()] = 1.0;
        for i in (0..end).rev() {
            let adjoint = adjoints[i];
            if adjoint == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            let range = node.start as usize..(node.start + node.len) as usize;
            for (&parent, &partial) in self.parents[range.clone()].iter().zip(&self.partials[range]) {
                adjoints[parent as usize] += adjoint * partial;
            }
        }
        Gradients { adjoints }
    }
}

/// Adjoints of every node on a tape with respect to one output.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> f64 {
        self.adjoints[var.index()]
    }

    /// Gradients of the first `n` nodes, which is where callers place parameters.
    pub fn leading(&self, n: usize) -> &[f64] {
        &self.adjoints[..n]
    }

    pub fn collect(&self, vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// Dense layer `y = W x + b` whose parameters live in a flat vector.
///
/// Weights are stored row-major (`outputs` rows of `inputs` entries) starting
/// at `offset`, followed by the `outputs` bias entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl DenseLayer {
    pub fn param_count(&self) -> usize {
        self.outputs * self.inputs + self.outputs
    }

    pub fn weight_index(&self, row: usize, col: usize) -> usize {
        self.offset + row * self.inputs + col
    }

    pub fn bias_index(&self, row: usize) -> usize {
        self.offset + self.outputs * self.inputs + row
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_count()
    }

    pub fn apply(&self, tape: &mut Tape, params: &[Var], x: &[Var]) -> Result<Vec<Var>> {
        if x.len() != self.inputs {
            return Err(Error::Dimension {
                expected: self.inputs,
                actual: x.len(),
            });
        }
        if params.len() < self.end() {
            return Err(Error::Dimension {
                expected: self.end(),
                actual: params.len(),
            });
        }
        let mut out = Vec::with_capacity(self.outputs);
        for row in 0..self.outputs {
            let start = self.weight_index(row, 0);
            let weights = &params[start..start + self.inputs];
            out.push(tape.linear(weights, x, Some(params[self.bias_index(row)]))?);
        }
        Ok(out)
    }
}

/// Sequential allocator of dense layers over one flat parameter vector.
#[derive(Debug, Default, Clone)]
pub struct LayerAllocator {
    next: usize,
}

impl LayerAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dense(&mut self, inputs: usize, outputs: usize) -> DenseLayer {
        let layer = DenseLayer {
            inputs,
            outputs,
            offset: self.next,
        };
        self.next = layer.end();
        layer
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_relative_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `builder` receives a fresh tape and one leaf per parameter and returns the
/// scalar output. The relative error of each component is
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(builder: F, params: &[f64], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |values: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves = tape.leaves(values)?;
        let out = builder(&mut tape, &leaves)?;
        if out.value().is_finite() {
            Ok(out.value())
        } else {
            Err(Error::NonFinite { op: "grad_check" })
        }
    };

    let mut tape = Tape::new();
    let leaves = tape.leaves(params)?;
    let out = builder(&mut tape, &leaves)?;
    let analytic = tape.backward(out).collect(&leaves);

    let mut shifted = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_relative_error = 0.0_f64;
    for i in 0..params.len() {
        shifted[i] = params[i] + step;
        let up = eval(&shifted)?;
        shifted[i] = params[i] - step;
        let down = eval(&shifted)?;
        shifted[i] = params[i];
        let fd = (up - down) / (2.0 * step);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        max_relative_error = max_relative_error.max(err);
        numeric.push(fd);
    }
    Ok(GradCheckReport {
        passed: max_relative_error <= tol,
        max_relative_error,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mul_records_product_rule() {
        let mut tape = Tape::new();
        let a = tape.leaf(3.0).unwrap();
        let b = tape.leaf(4.0).unwrap();
        let y = tape.mul(a, b).unwrap();
        assert_eq!(y.value(), 12.0);
        let g = tape.backward(y);
        assert_eq!((g.wrt(a), g.wrt(b)), (4.0, 3.0));
    }

    #[test]
    fn tanh_and_exp_partials() {
        let mut tape = Tape::new();
        let x = tape.leaf(0.0).unwrap();
        let y = tape.tanh(x).unwrap();
        assert_eq!(y.value(), 0.0);
        assert_eq!(tape.backward(y).wrt(x), 1.0);

        let x = tape.leaf(1.0).unwrap();
        let y = tape.exp(x).unwrap();
        assert!((y.value() - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(tape.backward(y).wrt(x), y.value());
    }

    #[test]
    fn domain_errors() {
        let mut tape = Tape::new();
        let neg = tape.leaf(-1.0).unwrap();
        let zero = tape.leaf(0.0).unwrap();
        assert!(matches!(tape.ln(neg), Err(Error::Domain { op: "ln", .. })));
        assert!(matches!(tape.sqrt(neg), Err(Error::Domain { op: "sqrt", .. })));
        assert!(matches!(tape.div(neg, zero), Err(Error::Domain { op: "div", .. })));
        let big = tape.leaf(800.0).unwrap();
        assert!(matches!(tape.exp(big), Err(Error::NonFinite { .. })));
        assert!(tape.apply(Primitive::Add, &[big]).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let w = tape.leaf(3.0).unwrap();
        let y = tape.mul(w, w).unwrap();
        assert_eq!(tape.backward(y).wrt(w), 6.0);

        let mut tape = Tape::new();
        let a = tape.leaf(2.0).unwrap();
        let b = tape.leaf(5.0).unwrap();
        let ab = tape.mul(a, b).unwrap();
        let y = tape.add(ab, a).unwrap();
        let g = tape.backward(y);
        assert_eq!((g.wrt(a), g.wrt(b)), (6.0, 2.0));

        let mut tape = Tape::new();
        let w = tape.leaf(0.0).unwrap();
        let t = tape.tanh(w).unwrap();
        let y = tape.softplus(t).unwrap();
        assert!((tape.backward(y).wrt(w) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_in_the_tails() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        let mut tape = Tape::new();
        let x = tape.leaf(-1000.0).unwrap();
        let y = tape.softplus(x).unwrap();
        assert_eq!(tape.backward(y).wrt(x), 0.0);
    }

    #[test]
    fn dense_apply_examples() {
        let mut alloc = LayerAllocator::new();
        let layer = alloc.dense(2, 2);
        let params = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let mut tape = Tape::new();
        let p = tape.leaves(&params).unwrap();
        let x = tape.leaves(&[1.0, 2.0]).unwrap();
        let y = layer.apply(&mut tape, &p, &x).unwrap();
        assert_eq!(y.iter().map(|v| v.value()).collect::<Vec<_>>(), [1.0, 2.0]);

        let layer = DenseLayer { inputs: 1, outputs: 1, offset: 0 };
        let p = tape.leaves(&[0.0, 5.0]).unwrap();
        let x = tape.leaves(&[123.0]).unwrap();
        assert_eq!(layer.apply(&mut tape, &p, &x).unwrap()[0].value(), 5.0);

        let layer = DenseLayer { inputs: 2, outputs: 1, offset: 0 };
        assert_eq!(layer.param_count(), 3);
        let p = tape.leaves(&[2.0, 3.0, 1.0]).unwrap();
        let x = tape.leaves(&[1.0, 1.0]).unwrap();
        assert_eq!(layer.apply(&mut tape, &p, &x).unwrap()[0].value(), 6.0);

        let x = tape.leaves(&[1.0]).unwrap();
        assert!(matches!(
            layer.apply(&mut tape, &p, &x),
            Err(Error::Dimension { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x * x + x * x uses x four times
        let mut tape = Tape::new();
        let x = tape.leaf(1.5).unwrap();
        let a = tape.mul(x, x).unwrap();
        let b = tape.mul(x, x).unwrap();
        let y = tape.add(a, b).unwrap();
        assert_eq!(tape.backward(y).wrt(x), 6.0);
    }

    #[test]
    fn grad_check_square() {
        let report = grad_check(|t, p| t.mul(p[0], p[0]), &[3.0], 1e-5, 1e-8).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_relative_error < 1e-8);
    }

    #[test]
    fn grad_check_flags_hard_abs_at_zero() {
        let report = grad_check(|t, p| t.abs(p[0]), &[0.0], 1e-5, 1e-4).unwrap();
        assert!(!report.passed);
        assert!((report.max_relative_error - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grad_check_rejects_bad_step_and_nonfinite() {
        assert!(grad_check(|t, p| t.mul(p[0], p[0]), &[1.0], 0.0, 1e-4).is_err());
        assert!(grad_check(|t, p| t.exp(p[0]), &[709.78], 1e-2, 1e-4).is_err());
    }

    #[test]
    fn replay_is_deterministic() {
        let build = |t: &mut Tape, p: &[Var]| -> Result<Var> {
            let a = t.tanh(p[0])?;
            let b = t.mul(a, p[1])?;
            let c = t.softplus(b)?;
            t.linear(&[c, a], &[p[1], p[0]], None)
        };
        let run = || {
            let mut tape = Tape::new();
            let p = tape.leaves(&[0.3, -1.2]).unwrap();
            let y = build(&mut tape, &p).unwrap();
            (y.value().to_bits(), tape.backward(y).collect(&p))
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1.iter().map(|g| g.to_bits()).collect::<Vec<_>>(), g2.iter().map(|g| g.to_bits()).collect::<Vec<_>>());
    }

    fn unary_domain(kind: Primitive) -> (f64, f64) {
        match kind {
            Primitive::Ln | Primitive::Sqrt => (0.1, 10.0),
            Primitive::Exp => (-5.0, 5.0),
            _ => (-8.0, 8.0),
        }
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let kinds = [
            Primitive::Add,
            Primitive::Sub,
            Primitive::Mul,
            Primitive::Div,
            Primitive::Neg,
            Primitive::Exp,
            Primitive::Ln,
            Primitive::Sqrt,
            Primitive::Tanh,
            Primitive::Sigmoid,
            Primitive::Softplus,
        ];
        for kind in kinds {
            let (lo, hi) = unary_domain(kind);
            for _ in 0..100 {
                let mut params = vec![rng.random_range(lo..hi)];
                if kind.arity() == 2 {
                    let mut b: f64 = rng.random_range(-5.0..5.0);
                    if kind == Primitive::Div && b.abs() < 0.5 {
                        b += 1.0_f64.copysign(b);
                    }
                    params.push(b);
                }
                let report = grad_check(|t, p| t.apply(kind, p), &params, 1e-5, 1e-4).unwrap();
                assert!(report.passed, "{kind:?} at {params:?}: {report:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn gradient_is_linear_over_sums(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let f = |t: &mut Tape, p: &[Var]| -> Result<Var> {
                let a = t.mul(p[0], p[1])?;
                t.tanh(a)
            };
            let g = |t: &mut Tape, p: &[Var]| -> Result<Var> {
                let a = t.softplus(p[0])?;
                t.mul(a, p[1])
            };
            let grads = |build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>| {
                let mut tape = Tape::new();
                let p = tape.leaves(&[x, y]).unwrap();
                let out = build(&mut tape, &p).unwrap();
                tape.backward(out).collect(&p)
            };
            let sum = grads(&|t, p| {
                let a = f(t, p)?;
                let b = g(t, p)?;
                t.add(a, b)
            });
            let gf = grads(&f);
            let gg = grads(&g);
            for i in 0..2 {
                prop_assert!((sum[i] - (gf[i] + gg[i])).abs() <= 1e-12 * (1.0 + sum[i].abs()));
            }
        }
    }
}
