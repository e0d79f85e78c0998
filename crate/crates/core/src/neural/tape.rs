//! Reverse-mode tape over scalar operations and batched network evaluations.
//!
//! Network evaluations enter the tape as whole batches: each requested output
//! component becomes a `NetworkOutput` node, and the reverse sweep hands the
//! collected output adjoints to [`BatchForward::backward`]. Input derivatives are
//! already ordinary numbers inside the batch jets, so the tape only ever needs
//! first-order parameter derivatives.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::NeuralError;
use crate::neural::network::{forward_batch, BatchForward, JetKind, NetworkParameters, OUTPUT_DIM};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a scalar recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: u32,
    tape: u32,
}

/// Handle to a batched network evaluation recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkBatch {
    index: u32,
    tape: u32,
    pub n_points: usize,
    pub kind: JetKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Constant,
    Leaf,
    Parameter,
    NetworkOutput,
    Add,
    Sub,
    Mul,
    Scale,
    Square,
    Tanh,
    Exp,
    Sum,
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Constant,
    Leaf(u32),
    Parameter(u32),
    NetworkOutput { batch: u32, slot: u32 },
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Scale(u32, f64),
    Square(u32),
    Tanh(u32),
    Exp(u32),
    Sum { start: u32, len: u32 },
}

impl Node {
    fn kind(&self) -> OpKind {
        match self {
            Node::Constant => OpKind::Constant,
            Node::Leaf(_) => OpKind::Leaf,
            Node::Parameter(_) => OpKind::Parameter,
            Node::NetworkOutput { .. } => OpKind::NetworkOutput,
            Node::Add(..) => OpKind::Add,
            Node::Sub(..) => OpKind::Sub,
            Node::Mul(..) => OpKind::Mul,
            Node::Scale(..) => OpKind::Scale,
            Node::Square(_) => OpKind::Square,
            Node::Tanh(_) => OpKind::Tanh,
            Node::Exp(_) => OpKind::Exp,
            Node::Sum { .. } => OpKind::Sum,
        }
    }
}

/// Gradients of a root with respect to the network parameters and the extra leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub leaves: Vec<f64>,
}

pub struct Tape<'a> {
    id: u32,
    params: &'a NetworkParameters,
    nodes: Vec<Node>,
    values: Vec<f64>,
    operands: Vec<u32>,
    batches: Vec<BatchForward>,
    n_leaves: u32,
    fault: Option<String>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a NetworkParameters) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            values: Vec::new(),
            operands: Vec::new(),
            batches: Vec::new(),
            n_leaves: 0,
            fault: None,
        }
    }

    pub fn params(&self) -> &NetworkParameters {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded nodes per operation kind.
    pub fn op_counts(&self) -> BTreeMap<OpKind, usize> {
        let mut counts = BTreeMap::new();
        for n in &self.nodes {
            *counts.entry(n.kind()).or_insert(0) += 1;
        }
        counts
    }

    fn push(&mut self, node: Node, value: f64) -> Var {
        self.nodes.push(node);
        self.values.push(value);
        Var { idx: (self.nodes.len() - 1) as u32, tape: self.id }
    }

    fn check(&mut self, v: Var) -> u32 {
        if v.tape != self.id {
            self.fault.get_or_insert_with(|| "variable recorded on a different tape".into());
            return 0;
        }
        if v.idx as usize >= self.nodes.len() {
            self.fault.get_or_insert_with(|| "variable index out of range".into());
            return 0;
        }
        v.idx
    }

    fn val(&self, i: u32) -> f64 {
        self.values.get(i as usize).copied().unwrap_or(f64::NAN)
    }

    pub fn value(&self, v: Var) -> Result<f64, NeuralError> {
        if let Some(msg) = &self.fault {
            return Err(NeuralError::Tape(msg.clone()));
        }
        if v.tape != self.id || v.idx as usize >= self.nodes.len() {
            return Err(NeuralError::Tape("variable does not belong to this tape".into()));
        }
        Ok(self.values[v.idx as usize])
    }

    pub fn constant(&mut self, c: f64) -> Var {
        self.push(Node::Constant, c)
    }

    /// A trainable scalar outside the network (its gradient lands in `Gradients::leaves`).
    pub fn leaf(&mut self, value: f64) -> Var {
        let k = self.n_leaves;
        self.n_leaves += 1;
        self.push(Node::Leaf(k), value)
    }

    /// Network parameter `i` as a scalar variable.
    pub fn parameter(&mut self, i: usize) -> Var {
        match self.params.values.get(i) {
            Some(&v) => self.push(Node::Parameter(i as u32), v),
            None => {
                self.fault.get_or_insert_with(|| format!("parameter index {i} out of range"));
                self.push(Node::Constant, f64::NAN)
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.check(a), self.check(b));
        let v = self.val(a) + self.val(b);
        self.push(Node::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.check(a), self.check(b));
        let v = self.val(a) - self.val(b);
        self.push(Node::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.check(a), self.check(b));
        let v = self.val(a) * self.val(b);
        self.push(Node::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let a = self.check(a);
        let v = c * self.val(a);
        self.push(Node::Scale(a, c), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let a = self.check(a);
        let x = self.val(a);
        self.push(Node::Square(a), x * x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let a = self.check(a);
        let v = self.val(a).tanh();
        self.push(Node::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let a = self.check(a);
        let v = self.val(a).exp();
        self.push(Node::Exp(a), v)
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let start = self.operands.len() as u32;
        let mut acc = 0.0;
        for &t in terms {
            let i = self.check(t);
            acc += self.val(i);
            self.operands.push(i);
        }
        self.push(Node::Sum { start, len: terms.len() as u32 }, acc)
    }

    /// Arithmetic mean; the mean of nothing is zero.
    pub fn mean(&mut self, terms: &[Var]) -> Var {
        let s = self.sum(terms);
        if terms.is_empty() {
            return s;
        }
        self.scale(s, 1.0 / terms.len() as f64)
    }

    /// Evaluates the network on `points` and records the batch.
    pub fn network(&mut self, points: &[(f64, f64)], kind: JetKind) -> Result<NetworkBatch, NeuralError> {
        let batch = forward_batch(self.params, points, kind)?;
        self.batches.push(batch);
        Ok(NetworkBatch { index: (self.batches.len() - 1) as u32, tape: self.id, n_points: points.len(), kind })
    }

    pub fn batch(&self, b: &NetworkBatch) -> Result<&BatchForward, NeuralError> {
        if b.tape != self.id {
            return Err(NeuralError::Tape("network batch recorded on a different tape".into()));
        }
        self.batches
            .get(b.index as usize)
            .ok_or_else(|| NeuralError::Tape("network batch index out of range".into()))
    }

    /// Component `comp` (see `network::V`, `DZ`, `DZZ`, `DT`) of output `out` at point `p`.
    pub fn output(&mut self, b: &NetworkBatch, p: usize, out: usize, comp: usize) -> Var {
        let nc = b.kind.components();
        if b.tape != self.id || b.index as usize >= self.batches.len() {
            self.fault.get_or_insert_with(|| "network batch does not belong to this tape".into());
            return self.push(Node::Constant, f64::NAN);
        }
        if comp >= nc || p >= b.n_points || out >= OUTPUT_DIM {
            self.fault.get_or_insert_with(|| {
                format!("batch of kind {:?} has no component {comp} for output {out} at point {p}", b.kind)
            });
            return self.push(Node::Constant, f64::NAN);
        }
        let slot = (comp * b.n_points + p) * OUTPUT_DIM + out;
        let v = self.batches[b.index as usize].outputs()[slot];
        self.push(Node::NetworkOutput { batch: b.index, slot: slot as u32 }, v)
    }

    /// Reverse sweep from `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, NeuralError> {
        if let Some(msg) = &self.fault {
            return Err(NeuralError::Tape(msg.clone()));
        }
        if root.tape != self.id || root.idx as usize >= self.nodes.len() {
            return Err(NeuralError::Tape("root does not belong to this tape".into()));
        }
        let mut adj = vec![0.0; root.idx as usize + 1];
        adj[root.idx as usize] = 1.0;
        let mut grads = Gradients { params: vec![0.0; self.params.len()], leaves: vec![0.0; self.n_leaves as usize] };
        let mut batch_adj: Vec<Vec<f64>> = self.batches.iter().map(|b| vec![0.0; b.outputs().len()]).collect();
        for i in (0..=root.idx as usize).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.nodes[i] {
                Node::Constant => {}
                Node::Leaf(k) => grads.leaves[k as usize] += g,
                Node::Parameter(k) => grads.params[k as usize] += g,
                Node::NetworkOutput { batch, slot } => batch_adj[batch as usize][slot as usize] += g,
                Node::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Node::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Node::Mul(a, b) => {
                    adj[a as usize] += g * self.values[b as usize];
                    adj[b as usize] += g * self.values[a as usize];
                }
                Node::Scale(a, c) => adj[a as usize] += g * c,
                Node::Square(a) => adj[a as usize] += 2.0 * g * self.values[a as usize],
                Node::Tanh(a) => {
                    let t = self.values[i];
                    adj[a as usize] += g * (1.0 - t * t);
                }
                Node::Exp(a) => adj[a as usize] += g * self.values[i],
                Node::Sum { start, len } => {
                    for &k in &self.operands[start as usize..(start + len) as usize] {
                        adj[k as usize] += g;
                    }
                }
            }
        }
        for (batch, badj) in self.batches.iter().zip(&batch_adj) {
            if badj.iter().any(|&x| x != 0.0) {
                batch.backward(self.params, badj, &mut grads.params);
            }
        }
        if grads.params.iter().chain(&grads.leaves).any(|g| !g.is_finite()) {
            return Err(NeuralError::Numerical("gradient".into()));
        }
        Ok(grads)
    }
}

/// Records `objective` on a fresh tape and returns its value and `∂/∂θ`.
pub fn evaluate_with_gradient<F, E>(params: &NetworkParameters, objective: F) -> Result<(f64, Vec<f64>), E>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Var, E>,
    E: From<NeuralError>,
{
    let mut tape = Tape::new(params);
    let root = objective(&mut tape)?;
    let value = tape.value(root)?;
    let grads = tape.backward(root)?;
    Ok((value, grads.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::network::{init_network, Architecture, DT, DZ, DZZ, V};

    fn tiny() -> NetworkParameters {
        init_network(Architecture::new(1, 5).unwrap(), 9).unwrap()
    }

    #[test]
    fn half_norm_gradient_is_identity() {
        let p = tiny();
        assert_eq!(p.len(), 27);
        let (val, grad) = evaluate_with_gradient(&p, |tape| -> Result<Var, NeuralError> {
            let sq: Vec<Var> = (0..p.len()).map(|i| {
                let v = tape.parameter(i);
                tape.square(v)
            }).collect();
            let s = tape.sum(&sq);
            Ok(tape.scale(s, 0.5))
        })
        .unwrap();
        let expected: f64 = 0.5 * p.values.iter().map(|v| v * v).sum::<f64>();
        assert!((val - expected).abs() < 1e-15);
        assert_eq!(grad, p.values);
    }

    #[test]
    fn scalar_ops_match_closed_forms() {
        let p = tiny();
        let mut tape = Tape::new(&p);
        let x = tape.leaf(0.4);
        let y = tape.leaf(-1.3);
        let xy = tape.mul(x, y);
        let e = tape.exp(xy);
        let th = tape.tanh(y);
        let d = tape.sub(e, th);
        let c = tape.constant(2.0);
        let r = tape.add(d, c);
        let m = tape.mean(&[r, x]);
        let g = tape.backward(m).unwrap();
        let (xv, yv) = (0.4f64, -1.3f64);
        let dx = 0.5 * (yv * (xv * yv).exp() + 1.0);
        let dy = 0.5 * (xv * (xv * yv).exp() - (1.0 - yv.tanh().powi(2)));
        assert!((g.leaves[0] - dx).abs() < 1e-14);
        assert!((g.leaves[1] - dy).abs() < 1e-14);
        assert!(g.params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        let p = tiny();
        let pts = [(0.2, 0.1), (0.9, -0.6), (0.5, 0.8)];
        let objective = |q: &NetworkParameters| {
            evaluate_with_gradient(q, |tape| -> Result<Var, NeuralError> {
                let b = tape.network(&pts, JetKind::Full)?;
                let mut terms = Vec::new();
                for k in 0..pts.len() {
                    let ut = tape.output(&b, k, 0, DT);
                    let uzz = tape.output(&b, k, 1, DZZ);
                    let r = tape.sub(ut, uzz);
                    terms.push(tape.square(r));
                    let uz = tape.output(&b, k, 0, DZ);
                    let v = tape.output(&b, k, 1, V);
                    let prod = tape.mul(uz, v);
                    terms.push(tape.tanh(prod));
                }
                Ok(tape.mean(&terms))
            })
            .unwrap()
        };
        let (_, grad) = objective(&p);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut q = p.clone();
            q.values[i] += h;
            let lp = objective(&q).0;
            q.values[i] -= 2.0 * h;
            let lm = objective(&q).0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((grad[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn foreign_variable_is_a_tape_error() {
        let p = tiny();
        let mut other = Tape::new(&p);
        let foreign = other.leaf(1.0);
        let mut tape = Tape::new(&p);
        let x = tape.leaf(2.0);
        let y = tape.add(x, foreign);
        assert!(matches!(tape.backward(y), Err(NeuralError::Tape(_))));
        assert!(matches!(tape.value(y), Err(NeuralError::Tape(_))));
        assert!(matches!(other.backward(x), Err(NeuralError::Tape(_))));
    }

    #[test]
    fn missing_jet_component_is_a_tape_error() {
        let p = tiny();
        let mut tape = Tape::new(&p);
        let b = tape.network(&[(0.5, 0.5)], JetKind::Value).unwrap();
        let v = tape.output(&b, 0, 0, DZZ);
        assert!(matches!(tape.backward(v), Err(NeuralError::Tape(_))));
    }

    #[test]
    fn op_census() {
        let p = tiny();
        let mut tape = Tape::new(&p);
        let b = tape.network(&[(0.1, 0.1), (0.2, 0.2)], JetKind::Gradient).unwrap();
        let a = tape.output(&b, 0, 0, V);
        let c = tape.output(&b, 1, 1, DZ);
        let s = tape.square(a);
        let t = tape.add(s, c);
        let _ = tape.mean(&[t]);
        let counts = tape.op_counts();
        assert_eq!(counts[&OpKind::NetworkOutput], 2);
        assert_eq!(counts[&OpKind::Square], 1);
        assert_eq!(counts[&OpKind::Add], 1);
        assert_eq!(counts[&OpKind::Sum], 1);
        assert_eq!(counts[&OpKind::Scale], 1);
        assert_eq!(tape.len(), 6);
    }
}
