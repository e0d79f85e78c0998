//! Dense tanh network `(z̄, t̄) -> (u_a, u_w)` and its batched jet engine.
//!
//! Every affine layer is linear in all jet components, so a batch of `B` points
//! carrying `nc` components is laid out as a `(nc·B) × width` row-major matrix,
//! component-major (`row = c·B + point`). One GEMM per layer advances all
//! components at once; the bias only touches the value rows.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NeuralError;
use crate::neural::jet::Jet;

pub const INPUT_DIM: usize = 2;
pub const OUTPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { hidden_layers: 5, hidden_width: 50 }
    }
}

impl Architecture {
    pub fn new(hidden_layers: usize, hidden_width: usize) -> Result<Self, NeuralError> {
        let arch = Self { hidden_layers, hidden_width };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(NeuralError::Architecture(format!(
                "need at least one hidden layer of width >= 1, got {}x{}",
                self.hidden_layers, self.hidden_width
            )));
        }
        Ok(())
    }

    /// Widths from input to output, e.g. `[2, 50, 50, 50, 50, 50, 2]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![INPUT_DIM];
        sizes.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        sizes.push(OUTPUT_DIM);
        sizes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Location of one layer's weights (row-major `fan_out × fan_in`) and bias in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// All weights and biases, flattened layer by layer as `[W_1, b_1, W_2, b_2, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    pub arch: Architecture,
    pub rng_seed: u64,
    pub values: Vec<f64>,
}

impl NetworkParameters {
    /// All-zero parameters (a network that outputs zero everywhere).
    pub fn zeros(arch: Architecture) -> Self {
        Self { arch, rng_seed: 0, values: vec![0.0; arch.parameter_count()] }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self, NeuralError> {
        arch.validate()?;
        if values.len() != arch.parameter_count() {
            return Err(NeuralError::Shape(format!(
                "expected {} parameters, got {}",
                arch.parameter_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::Numerical("parameter vector".into()));
        }
        Ok(Self { arch, rng_seed: 0, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        layer_slots(&self.arch)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Index range of the output layer (weights and bias).
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        let last = *self.layers().last().expect("at least one layer");
        last.weight_offset..last.bias_offset + last.fan_out
    }

    /// Plain value evaluation at one point.
    pub fn forward(&self, zbar: f64, tbar: f64) -> Result<[f64; 2], NeuralError> {
        let batch = forward_batch(self, &[(zbar, tbar)], JetKind::Value)?;
        Ok([batch.output(0, 0, 0), batch.output(0, 1, 0)])
    }

    /// Value evaluation at many points.
    pub fn forward_many(&self, points: &[(f64, f64)]) -> Result<Vec<[f64; 2]>, NeuralError> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let batch = forward_batch(self, chunk, JetKind::Value)?;
            out.extend((0..chunk.len()).map(|p| [batch.output(p, 0, 0), batch.output(p, 1, 0)]));
        }
        Ok(out)
    }
}

/// Batch size used when callers hand over arbitrarily many points.
pub const CHUNK: usize = 512;

pub fn layer_slots(arch: &Architecture) -> Vec<LayerSlot> {
    let sizes = arch.layer_sizes();
    let mut offset = 0;
    sizes
        .windows(2)
        .map(|w| {
            let slot = LayerSlot { fan_in: w[0], fan_out: w[1], weight_offset: offset, bias_offset: offset + w[0] * w[1] };
            offset += w[0] * w[1] + w[1];
            slot
        })
        .collect()
}

/// Xavier-uniform weights, zero biases, deterministic in `seed`.
pub fn init_network(arch: Architecture, seed: u64) -> Result<NetworkParameters, NeuralError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; arch.parameter_count()];
    for slot in layer_slots(&arch) {
        let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
        for w in &mut values[slot.weight_offset..slot.bias_offset] {
            *w = rng.random_range(-limit..limit);
        }
    }
    Ok(NetworkParameters { arch, rng_seed: seed, values })
}

/// Which input derivatives a batch carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetKind {
    /// `v` only.
    Value,
    /// `v, ∂/∂z̄`.
    Gradient,
    /// `v, ∂/∂z̄, ∂²/∂z̄², ∂/∂t̄`.
    Full,
}

impl JetKind {
    pub fn components(self) -> usize {
        match self {
            JetKind::Value => 1,
            JetKind::Gradient => 2,
            JetKind::Full => 4,
        }
    }
}

/// Component indices inside a batch row block.
pub const V: usize = 0;
pub const DZ: usize = 1;
pub const DZZ: usize = 2;
pub const DT: usize = 3;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

const POOL_MIN: usize = 1 << 12;
const POOL_MAX_BUFFERS: usize = 48;

/// Zeroed buffer of length `len`, recycled from this thread's pool when possible.
fn take_buffer(len: usize) -> Vec<f64> {
    let recycled = if len >= POOL_MIN {
        POOL.with(|pool| {
            let mut pool = pool.borrow_mut();
            let best = pool
                .iter()
                .enumerate()
                .filter(|(_, b)| b.capacity() >= len)
                .min_by_key(|(_, b)| b.capacity())
                .map(|(i, _)| i);
            best.map(|i| pool.swap_remove(i))
        })
    } else {
        None
    };
    let mut buf = recycled.unwrap_or_default();
    buf.clear();
    buf.resize(len, 0.0);
    buf
}

fn return_buffer(buf: Vec<f64>) {
    if buf.capacity() < POOL_MIN {
        return;
    }
    POOL.with(|pool| {
        let mut pool = pool.borrow_mut();
        if pool.len() < POOL_MAX_BUFFERS {
            pool.push(buf);
        }
    });
}

/// Forward activations of one batch, kept for the reverse sweep.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub kind: JetKind,
    pub n_points: usize,
    slots: Vec<LayerSlot>,
    /// `inputs[l]` is the `(nc·B) × fan_in` input to layer `l`.
    inputs: Vec<Vec<f64>>,
    /// `pre[l]` is the affine output of hidden layer `l` before the tanh jet.
    pre: Vec<Vec<f64>>,
    /// `(nc·B) × 2` network outputs.
    outputs: Vec<f64>,
}

impl Drop for BatchForward {
    fn drop(&mut self) {
        for buf in self.inputs.drain(..).chain(self.pre.drain(..)) {
            return_buffer(buf);
        }
        return_buffer(std::mem::take(&mut self.outputs));
    }
}

impl BatchForward {
    /// Component `comp` of output `out` (0 = u_a, 1 = u_w) at point `p`.
    #[inline]
    pub fn output(&self, p: usize, out: usize, comp: usize) -> f64 {
        self.outputs[(comp * self.n_points + p) * OUTPUT_DIM + out]
    }

    pub fn jet(&self, p: usize, out: usize) -> Jet {
        let nc = self.kind.components();
        let get = |c: usize| if c < nc { self.output(p, out, c) } else { 0.0 };
        Jet { v: get(V), dz: get(DZ), dzz: get(DZZ), dt: get(DT) }
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂outputs` in the same layout as the outputs.
    pub fn backward(&self, params: &NetworkParameters, output_adjoint: &[f64], grad: &mut [f64]) {
        let nc = self.kind.components();
        let b = self.n_points;
        let rows = nc * b;
        let theta = &params.values;
        let last = self.slots.len() - 1;
        let mut upstream = take_buffer(output_adjoint.len());
        upstream.copy_from_slice(output_adjoint);
        let mut scratch = Vec::new();
        for l in (0..=last).rev() {
            let slot = self.slots[l];
            if l < last {
                // upstream holds ∂L/∂(tanh-jet output); turn it into ∂L/∂(pre-activation).
                tanh_jet_backward(&self.pre[l], &self.inputs[l + 1], &mut upstream, nc, b, slot.fan_out);
            }
            let input = &self.inputs[l];
            // dW += upstreamᵀ · input
            unsafe {
                matrixmultiply::dgemm(
                    slot.fan_out,
                    rows,
                    slot.fan_in,
                    1.0,
                    upstream.as_ptr(),
                    1,
                    slot.fan_out as isize,
                    input.as_ptr(),
                    slot.fan_in as isize,
                    1,
                    1.0,
                    grad[slot.weight_offset..].as_mut_ptr(),
                    slot.fan_in as isize,
                    1,
                );
            }
            let gb = &mut grad[slot.bias_offset..slot.bias_offset + slot.fan_out];
            for row in upstream[..b * slot.fan_out].chunks_exact(slot.fan_out) {
                for (g, u) in gb.iter_mut().zip(row) {
                    *g += u;
                }
            }
            if l == 0 {
                break;
            }
            // d(input) = upstream · W
            return_buffer(std::mem::take(&mut scratch));
            scratch = take_buffer(rows * slot.fan_in);
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    slot.fan_out,
                    slot.fan_in,
                    1.0,
                    upstream.as_ptr(),
                    slot.fan_out as isize,
                    1,
                    theta[slot.weight_offset..].as_ptr(),
                    slot.fan_in as isize,
                    1,
                    0.0,
                    scratch.as_mut_ptr(),
                    slot.fan_in as isize,
                    1,
                );
            }
            std::mem::swap(&mut upstream, &mut scratch);
        }
        return_buffer(upstream);
        return_buffer(scratch);
    }
}

/// Runs the network on a batch of `(z̄, t̄)` points, carrying `kind` input derivatives.
pub fn forward_batch(params: &NetworkParameters, points: &[(f64, f64)], kind: JetKind) -> Result<BatchForward, NeuralError> {
    let nc = kind.components();
    let b = points.len();
    let rows = nc * b;
    let slots = layer_slots(&params.arch);
    if params.values.len() != params.arch.parameter_count() {
        return Err(NeuralError::Shape("parameter vector does not match architecture".into()));
    }
    let mut input = take_buffer(rows * INPUT_DIM);
    for (p, &(z, t)) in points.iter().enumerate() {
        input[p * INPUT_DIM] = z;
        input[p * INPUT_DIM + 1] = t;
        if nc > DZ {
            input[(DZ * b + p) * INPUT_DIM] = 1.0;
        }
        if nc > DT {
            input[(DT * b + p) * INPUT_DIM + 1] = 1.0;
        }
    }
    let mut inputs = Vec::with_capacity(slots.len());
    let mut pre = Vec::with_capacity(slots.len() - 1);
    let theta = &params.values;
    let last = slots.len() - 1;
    let mut outputs = Vec::new();
    for (l, slot) in slots.iter().enumerate() {
        let mut z = take_buffer(rows * slot.fan_out);
        unsafe {
            matrixmultiply::dgemm(
                rows,
                slot.fan_in,
                slot.fan_out,
                1.0,
                input.as_ptr(),
                slot.fan_in as isize,
                1,
                theta[slot.weight_offset..].as_ptr(),
                1,
                slot.fan_in as isize,
                0.0,
                z.as_mut_ptr(),
                slot.fan_out as isize,
                1,
            );
        }
        let bias = &theta[slot.bias_offset..slot.bias_offset + slot.fan_out];
        for row in z[..b * slot.fan_out].chunks_exact_mut(slot.fan_out) {
            for (x, bj) in row.iter_mut().zip(bias) {
                *x += bj;
            }
        }
        if l == last {
            inputs.push(input);
            outputs = z;
            break;
        }
        let activated = tanh_jet_forward(&z, nc, b, slot.fan_out);
        inputs.push(std::mem::replace(&mut input, activated));
        pre.push(z);
    }
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::Numerical("network output".into()));
    }
    Ok(BatchForward { kind, n_points: b, slots, inputs, pre, outputs })
}

/// `tanh` through `exp_m1`; within an ulp or two of `f64::tanh` and cheaper.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(x)
}

/// Applies the tanh jet rules to a component-major block.
fn tanh_jet_forward(pre: &[f64], nc: usize, b: usize, width: usize) -> Vec<f64> {
    let n = b * width;
    let mut out = take_buffer(nc * n);
    for k in 0..n {
        let a = tanh(pre[k]);
        let s = 1.0 - a * a;
        out[k] = a;
        if nc > DZ {
            let dz = pre[DZ * n + k];
            out[DZ * n + k] = s * dz;
            if nc > DT {
                out[DZZ * n + k] = s * pre[DZZ * n + k] - 2.0 * a * s * dz * dz;
                out[DT * n + k] = s * pre[DT * n + k];
            }
        }
    }
    out
}

/// Reverse of [`tanh_jet_forward`]: overwrites `adj` (w.r.t. outputs) with adjoints w.r.t. `pre`.
fn tanh_jet_backward(pre: &[f64], activated: &[f64], adj: &mut [f64], nc: usize, b: usize, width: usize) {
    let n = b * width;
    for k in 0..n {
        let a = activated[k];
        let s = 1.0 - a * a;
        let mut gx = adj[k] * s;
        if nc > DZ {
            let dz = pre[DZ * n + k];
            let g_dz = adj[DZ * n + k];
            gx -= 2.0 * a * s * dz * g_dz;
            let mut new_dz = g_dz * s;
            if nc > DT {
                let dzz = pre[DZZ * n + k];
                let dt = pre[DT * n + k];
                let g_dzz = adj[DZZ * n + k];
                let g_dt = adj[DT * n + k];
                gx += g_dzz * (-2.0 * a * s * dzz - 2.0 * dz * dz * s * (s - 2.0 * a * a));
                gx -= 2.0 * a * s * dt * g_dt;
                new_dz -= 4.0 * a * s * dz * g_dzz;
                adj[DZZ * n + k] = g_dzz * s;
                adj[DT * n + k] = g_dt * s;
            }
            adj[DZ * n + k] = new_dz;
        }
        adj[k] = gx;
    }
}

/// Jets of both outputs at one point.
pub fn forward_jet(params: &NetworkParameters, zbar: f64, tbar: f64) -> Result<(Jet, Jet), NeuralError> {
    let batch = forward_batch(params, &[(zbar, tbar)], JetKind::Full)?;
    let (ja, jw) = (batch.jet(0, 0), batch.jet(0, 1));
    if !ja.is_finite() || !jw.is_finite() {
        return Err(NeuralError::Numerical("jet".into()));
    }
    Ok((ja, jw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tanh_matches_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 5e-3 + 1e-7;
            let (a, b) = (tanh(x), x.tanh());
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs(), "{x}: {a} vs {b}");
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(40.0), 1.0);
        assert_eq!(tanh(-1e-300), (-1e-300f64).tanh());
    }

    fn small() -> NetworkParameters {
        init_network(Architecture::new(2, 7).unwrap(), 3).unwrap()
    }

    /// Scalar reference network built from [`Jet`] arithmetic.
    fn jet_reference(params: &NetworkParameters, zbar: f64, tbar: f64) -> [Jet; 2] {
        let mut act = vec![Jet::depth(zbar), Jet::time(tbar)];
        let slots = params.layers();
        for (l, slot) in slots.iter().enumerate() {
            let mut next = Vec::with_capacity(slot.fan_out);
            for j in 0..slot.fan_out {
                let mut acc = Jet::constant(params.values[slot.bias_offset + j]);
                for (i, a) in act.iter().enumerate() {
                    acc = acc.add(a.scale(params.values[slot.weight_offset + j * slot.fan_in + i]));
                }
                next.push(if l + 1 < slots.len() { acc.tanh() } else { acc });
            }
            act = next;
        }
        [act[0], act[1]]
    }

    #[test]
    fn default_parameter_count() {
        let arch = Architecture::default();
        assert_eq!(arch.layer_sizes(), vec![2, 50, 50, 50, 50, 50, 2]);
        assert_eq!(arch.parameter_count(), 10_452);
        assert_eq!(init_network(arch, 0).unwrap().len(), 10_452);
    }

    #[test]
    fn degenerate_architecture_rejected() {
        assert!(matches!(Architecture::new(0, 50), Err(NeuralError::Architecture(_))));
        assert!(matches!(Architecture::new(3, 0), Err(NeuralError::Architecture(_))));
        assert!(matches!(init_network(Architecture { hidden_layers: 0, hidden_width: 4 }, 1), Err(NeuralError::Architecture(_))));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = Architecture::default();
        let a = init_network(arch, 42).unwrap();
        assert_eq!(a, init_network(arch, 42).unwrap());
        assert_ne!(a.values, init_network(arch, 43).unwrap().values);
        for slot in a.layers() {
            let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            assert!(a.values[slot.weight_offset..slot.bias_offset].iter().all(|w| w.abs() <= limit));
            assert!(a.values[slot.bias_offset..slot.bias_offset + slot.fan_out].iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let mut p = NetworkParameters::zeros(Architecture::new(3, 4).unwrap());
        let out = p.output_layer_range();
        p.values[out.end - 2] = 0.25;
        p.values[out.end - 1] = -1.5;
        let (ja, jw) = forward_jet(&p, 0.3, 0.7).unwrap();
        assert_eq!(ja, Jet { v: 0.25, dz: 0.0, dzz: 0.0, dt: 0.0 });
        assert_eq!(jw, Jet { v: -1.5, dz: 0.0, dzz: 0.0, dt: 0.0 });
    }

    #[test]
    fn batch_matches_scalar_jet_reference() {
        let p = small();
        let pts = [(0.0, 0.0), (0.3, 0.9), (1.0, -0.4), (0.55, 0.1)];
        let batch = forward_batch(&p, &pts, JetKind::Full).unwrap();
        for (k, &(z, t)) in pts.iter().enumerate() {
            let r = jet_reference(&p, z, t);
            for out in 0..2 {
                let j = batch.jet(k, out);
                for (x, y) in [(j.v, r[out].v), (j.dz, r[out].dz), (j.dzz, r[out].dzz), (j.dt, r[out].dt)] {
                    assert!((x - y).abs() <= 1e-13 * (1.0 + y.abs()), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn jet_matches_finite_differences() {
        let p = init_network(Architecture::default(), 11).unwrap();
        let h = 1e-4;
        for &(z, t) in &[(0.2, 0.4), (0.8, 0.05), (0.5, -0.3)] {
            let (ja, jw) = forward_jet(&p, z, t).unwrap();
            let f = |z: f64, t: f64| p.forward(z, t).unwrap();
            let (c, zp, zm, tp, tm) = (f(z, t), f(z + h, t), f(z - h, t), f(z, t + h), f(z, t - h));
            for (o, j) in [ja, jw].iter().enumerate() {
                let dz = (zp[o] - zm[o]) / (2.0 * h);
                let dzz = (zp[o] - 2.0 * c[o] + zm[o]) / (h * h);
                let dt = (tp[o] - tm[o]) / (2.0 * h);
                assert_eq!(j.v, c[o]);
                assert!((j.dz - dz).abs() <= 1e-5 * (1.0 + dz.abs()), "dz {} vs {dz}", j.dz);
                assert!((j.dt - dt).abs() <= 1e-5 * (1.0 + dt.abs()), "dt {} vs {dt}", j.dt);
                assert!((j.dzz - dzz).abs() <= 1e-4 * (1.0 + dzz.abs()), "dzz {} vs {dzz}", j.dzz);
            }
        }
    }

    #[test]
    fn value_and_gradient_batches_agree_with_full() {
        let p = small();
        let pts: Vec<_> = (0..9).map(|i| (i as f64 / 8.0, 0.1 * i as f64 - 0.3)).collect();
        let full = forward_batch(&p, &pts, JetKind::Full).unwrap();
        let grad = forward_batch(&p, &pts, JetKind::Gradient).unwrap();
        let val = forward_batch(&p, &pts, JetKind::Value).unwrap();
        for k in 0..pts.len() {
            for o in 0..2 {
                assert_eq!(val.output(k, o, V), full.output(k, o, V));
                assert_eq!(grad.output(k, o, V), full.output(k, o, V));
                assert_eq!(grad.output(k, o, DZ), full.output(k, o, DZ));
            }
        }
        let many = p.forward_many(&pts).unwrap();
        for (k, m) in many.iter().enumerate() {
            assert_eq!(m[0], full.output(k, 0, V));
        }
    }

    #[test]
    fn batch_backward_matches_finite_differences() {
        let p = small();
        let pts = [(0.1, 0.2), (0.7, -0.5), (0.9, 0.9)];
        for kind in [JetKind::Value, JetKind::Gradient, JetKind::Full] {
            let batch = forward_batch(&p, &pts, kind).unwrap();
            // Weighted functional with distinct weights per output slot.
            let w: Vec<f64> = (0..batch.outputs().len()).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
            let loss = |q: &NetworkParameters| -> f64 {
                let b = forward_batch(q, &pts, kind).unwrap();
                b.outputs().iter().zip(&w).map(|(o, w)| o * w).sum()
            };
            let mut grad = vec![0.0; p.len()];
            batch.backward(&p, &w, &mut grad);
            let h = 1e-6;
            for i in 0..p.len() {
                let mut q = p.clone();
                q.values[i] += h;
                let lp = loss(&q);
                q.values[i] -= 2.0 * h;
                let lm = loss(&q);
                let fd = (lp - lm) / (2.0 * h);
                assert!((grad[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{kind:?} param {i}: {} vs {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let arch = Architecture::new(1, 3).unwrap();
        assert!(matches!(NetworkParameters::from_values(arch, vec![0.0; 5]), Err(NeuralError::Shape(_))));
        let mut bad = NetworkParameters::zeros(arch);
        bad.values.pop();
        assert!(matches!(forward_batch(&bad, &[(0.0, 0.0)], JetKind::Value), Err(NeuralError::Shape(_))));
    }

    proptest! {
        #[test]
        fn output_is_affine_in_output_layer(seed in 0u64..1000, alpha in -3.0f64..3.0, z in 0.0f64..1.0, t in -1.0f64..1.0) {
            let p = init_network(Architecture::new(2, 6).unwrap(), seed).unwrap();
            let range = p.output_layer_range();
            let mut q = p.clone();
            for v in &mut q.values[range.clone()] {
                *v *= alpha;
            }
            let (a, b) = (p.forward(z, t).unwrap(), q.forward(z, t).unwrap());
            for o in 0..2 {
                prop_assert!((b[o] - alpha * a[o]).abs() <= 1e-12 * (1.0 + a[o].abs()));
            }
        }

        #[test]
        fn single_point_equals_batch_entry(seed in 0u64..1000, z in 0.0f64..1.0, t in -1.0f64..1.0) {
            let p = init_network(Architecture::new(3, 5).unwrap(), seed).unwrap();
            let batch = forward_batch(&p, &[(0.5, 0.5), (z, t), (0.1, 0.9)], JetKind::Full).unwrap();
            let (ja, jw) = forward_jet(&p, z, t).unwrap();
            prop_assert!((batch.jet(1, 0).dzz - ja.dzz).abs() <= 1e-12 * (1.0 + ja.dzz.abs()));
            prop_assert!((batch.jet(1, 1).v - jw.v).abs() <= 1e-12 * (1.0 + jw.v.abs()));
        }
    }
}
