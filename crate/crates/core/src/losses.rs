//! Collocation sampling, coordinate normalization and the segment loss terms.
//!
//! Every term is recorded on a [`Tape`] so the trainer gets parameter gradients
//! from a single reverse sweep. The `*_loss` functions are value-only wrappers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LossError, NeuralError, PhysicsError};
use crate::neural::{evaluate_with_gradient, JetKind, NetworkParameters, Tape, Var, DT, DZ, DZZ, V};
use crate::physics::{validate_coupling, SoilModel};

/// Lower end of log-time sampling when a segment starts at `t = 0` (s).
pub const T_FLOOR: f64 = 1.0;

/// One time window `[t_start, t_end]` of the segmented domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// 1-based position in the plan.
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Layer thickness (m).
    pub h: f64,
}

impl Segment {
    pub fn new(index: usize, t_start: f64, t_end: f64, h: f64) -> Result<Self, LossError> {
        let seg = Self { index, t_start, t_end, h };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.index == 0 {
            return Err(LossError::Segment("segment index is 1-based".into()));
        }
        if !(self.t_start >= 0.0 && self.t_end > self.t_start && self.t_end.is_finite()) {
            return Err(LossError::Segment(format!("need 0 <= t_start < t_end, got [{}, {}]", self.t_start, self.t_end)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(LossError::Segment(format!("thickness must be positive, got {}", self.h)));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// `t̄` for any physical time, without a range check (may fall outside `[0, 1]`).
    pub fn normalized_time(&self, t: f64) -> f64 {
        (t - self.t_start) / self.duration()
    }

    pub fn physical_time(&self, tbar: f64) -> f64 {
        self.t_start + tbar * self.duration()
    }

    /// Start of the log-sampling support.
    pub fn log_floor(&self) -> f64 {
        self.t_start.max(T_FLOOR)
    }
}

/// Maps `(z, t)` inside the segment to `(z̄, t̄) ∈ [0, 1]²`.
pub fn to_unit_domain(z: f64, t: f64, seg: &Segment) -> Result<(f64, f64), LossError> {
    if !(0.0..=seg.h).contains(&z) {
        return Err(LossError::Range(format!("depth {z} outside [0, {}]", seg.h)));
    }
    if !(seg.t_start..=seg.t_end).contains(&t) {
        return Err(LossError::Range(format!("time {t} outside [{}, {}]", seg.t_start, seg.t_end)));
    }
    Ok((z / seg.h, seg.normalized_time(t).clamp(0.0, 1.0)))
}

/// Collocation budgets `(N_IC, N_BC, N_R, N_S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingCounts {
    pub n_ic: usize,
    pub n_bc: usize,
    pub n_r: usize,
    pub n_s: usize,
}

impl Default for SamplingCounts {
    fn default() -> Self {
        Self { n_ic: 2000, n_bc: 2000, n_r: 10_000, n_s: 2000 }
    }
}

impl SamplingCounts {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.n_ic == 0 || self.n_bc == 0 || self.n_r == 0 || self.n_s == 0 {
            return Err(LossError::Segment(format!("sampling counts must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Sampled points of one segment, all in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub segment: Segment,
    pub previous: Option<Segment>,
    /// Interior `(z̄, t̄)`.
    pub interior: Vec<(f64, f64)>,
    /// Boundary `t̄`, enforced at both `z̄ = 0` and `z̄ = 1`.
    pub boundary: Vec<f64>,
    /// Initial depths `z̄` at `t̄ = 0`.
    pub initial: Vec<f64>,
    /// Lag points `(z̄, t̄_prev)` in the previous segment's frame.
    pub lag: Vec<(f64, f64)>,
    pub rng_seed: u64,
}

impl CollocationSet {
    /// Chain-rule factor `ΔT/H²` multiplying the diffusivities in normalized form.
    pub fn diffusion_scale(&self) -> f64 {
        self.segment.duration() / (self.segment.h * self.segment.h)
    }

    /// Lag points re-expressed in the current segment's frame (`t̄ ≤ 0` for adjacent windows).
    pub fn lag_in_current_frame(&self) -> Result<Vec<(f64, f64)>, LossError> {
        let prev = self.previous.ok_or_else(|| LossError::Segment("first segment has no lag window".into()))?;
        Ok(self.lag.iter().map(|&(z, tp)| (z, self.segment.normalized_time(prev.physical_time(tp)))).collect())
    }
}

fn log_uniform_tbar(rng: &mut ChaCha8Rng, seg: &Segment) -> f64 {
    let (lo, hi) = (seg.log_floor().log10(), seg.t_end.log10());
    let t = 10f64.powf(lo + rng.random::<f64>() * (hi - lo));
    seg.normalized_time(t.clamp(seg.t_start, seg.t_end)).clamp(0.0, 1.0)
}

/// Draws a deterministic collocation set for `seg` (and its lag window when `prev` is given).
pub fn sample_collocation(
    seg: &Segment,
    prev: Option<&Segment>,
    counts: SamplingCounts,
    seed: u64,
) -> Result<CollocationSet, LossError> {
    seg.validate()?;
    counts.validate()?;
    match (seg.index, prev) {
        (1, Some(_)) => return Err(LossError::Segment("segment 1 has no previous segment".into())),
        (n, None) if n >= 2 => return Err(LossError::Segment(format!("segment {n} needs its previous segment"))),
        _ => {}
    }
    if seg.t_end <= seg.log_floor() {
        return Err(LossError::Segment(format!(
            "log-time sampling needs t_end > {}, got {}",
            seg.log_floor(),
            seg.t_end
        )));
    }
    if let Some(p) = prev {
        p.validate()?;
        if p.t_end <= p.log_floor() {
            return Err(LossError::Segment(format!("previous segment ends at {} <= {}", p.t_end, p.log_floor())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior = (0..counts.n_r)
        .map(|_| {
            let z = rng.random_range(0.0..=1.0);
            (z, log_uniform_tbar(&mut rng, seg))
        })
        .collect();
    let boundary = (0..counts.n_bc).map(|_| log_uniform_tbar(&mut rng, seg)).collect();
    let initial = (0..counts.n_ic).map(|_| rng.random_range(0.0..=1.0)).collect();
    let lag = match prev {
        Some(p) => (0..counts.n_s)
            .map(|_| {
                let z = rng.random_range(0.0..=1.0);
                (z, log_uniform_tbar(&mut rng, p))
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(CollocationSet { segment: *seg, previous: prev.copied(), interior, boundary, initial, lag, rng_seed: seed })
}

/// Loss weights `(ω_IC, ω_BC, ω_R, ω_S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_ic: f64,
    pub w_bc: f64,
    pub w_r: f64,
    pub w_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_ic: 1.0, w_bc: 1.0, w_r: 1.0, w_s: 1.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { w_ic: 0.0, w_bc: 0.0, w_r: 0.0, w_s: 0.0 }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        for (name, w) in [("w_ic", self.w_ic), ("w_bc", self.w_bc), ("w_r", self.w_r), ("w_s", self.w_s)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(LossError::Physics(PhysicsError::Parameter(format!("{name} must be finite and >= 0, got {w}"))));
            }
        }
        Ok(())
    }
}

/// The four coupling coefficients as tape variables (constants or trainable leaves).
#[derive(Debug, Clone, Copy)]
pub struct CoefficientVars {
    pub ca: Var,
    pub cw: Var,
    pub cva: Var,
    pub cvw: Var,
}

impl CoefficientVars {
    pub fn constants(tape: &mut Tape<'_>, sm: &SoilModel) -> Self {
        Self { ca: tape.constant(sm.ca), cw: tape.constant(sm.cw), cva: tape.constant(sm.cva), cvw: tape.constant(sm.cvw) }
    }
}

/// Mean of `r_a² + r_w²` over the interior points.
pub fn residual_term(tape: &mut Tape<'_>, set: &CollocationSet, coeffs: CoefficientVars) -> Result<Var, LossError> {
    let batch = tape.network(&set.interior, JetKind::Full)?;
    let scale = set.diffusion_scale();
    let ka = tape.scale(coeffs.cva, scale);
    let kw = tape.scale(coeffs.cvw, scale);
    let mut terms = Vec::with_capacity(set.interior.len());
    for p in 0..set.interior.len() {
        let at = tape.output(&batch, p, 0, DT);
        let wt = tape.output(&batch, p, 1, DT);
        let azz = tape.output(&batch, p, 0, DZZ);
        let wzz = tape.output(&batch, p, 1, DZZ);
        let ca_wt = tape.mul(coeffs.ca, wt);
        let diff_a = tape.mul(ka, azz);
        let ra = tape.add(at, ca_wt);
        let ra = tape.sub(ra, diff_a);
        let cw_at = tape.mul(coeffs.cw, at);
        let diff_w = tape.mul(kw, wzz);
        let rw = tape.add(wt, cw_at);
        let rw = tape.sub(rw, diff_w);
        let sa = tape.square(ra);
        let sw = tape.square(rw);
        terms.push(tape.add(sa, sw));
    }
    Ok(tape.mean(&terms))
}

/// Mean of `(û_a − target_a)² + (û_w − target_w)²` at `t̄ = 0`.
pub fn ic_term(tape: &mut Tape<'_>, set: &CollocationSet, target: &[[f64; 2]]) -> Result<Var, LossError> {
    if target.len() != set.initial.len() {
        return Err(LossError::Neural(NeuralError::Shape(format!(
            "{} initial targets for {} initial points",
            target.len(),
            set.initial.len()
        ))));
    }
    let points: Vec<_> = set.initial.iter().map(|&z| (z, 0.0)).collect();
    let batch = tape.network(&points, JetKind::Value)?;
    let terms: Vec<Var> = target
        .iter()
        .enumerate()
        .map(|(p, tg)| squared_mismatch(tape, &batch, p, tg))
        .collect();
    Ok(tape.mean(&terms))
}

fn squared_mismatch(tape: &mut Tape<'_>, batch: &crate::neural::NetworkBatch, p: usize, target: &[f64; 2]) -> Var {
    let mut acc = Vec::with_capacity(2);
    for (out, &tg) in target.iter().enumerate() {
        let u = tape.output(batch, p, out, V);
        let c = tape.constant(tg);
        let d = tape.sub(u, c);
        acc.push(tape.square(d));
    }
    tape.add(acc[0], acc[1])
}

/// Mean of the Dirichlet violation at `z̄ = 0` plus the Neumann violation at `z̄ = 1`.
pub fn bc_term(tape: &mut Tape<'_>, set: &CollocationSet) -> Result<Var, LossError> {
    let n = set.boundary.len();
    let points: Vec<_> = set.boundary.iter().map(|&t| (0.0, t)).chain(set.boundary.iter().map(|&t| (1.0, t))).collect();
    let batch = tape.network(&points, JetKind::Gradient)?;
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let mut parts = [tape.constant(0.0); 4];
        for out in 0..2 {
            let u = tape.output(&batch, k, out, V);
            parts[out] = tape.square(u);
            let g = tape.output(&batch, n + k, out, DZ);
            parts[2 + out] = tape.square(g);
        }
        terms.push(tape.sum(&parts));
    }
    Ok(tape.mean(&terms))
}

/// Mean squared gap between the current network (evaluated in its own frame) and
/// the previous network's values `previous_values` at the lag points.
pub fn lag_term(tape: &mut Tape<'_>, set: &CollocationSet, previous_values: &[[f64; 2]]) -> Result<Var, LossError> {
    if previous_values.len() != set.lag.len() {
        return Err(LossError::Neural(NeuralError::Shape(format!(
            "{} previous values for {} lag points",
            previous_values.len(),
            set.lag.len()
        ))));
    }
    let points = set.lag_in_current_frame()?;
    let batch = tape.network(&points, JetKind::Value)?;
    let terms: Vec<Var> =
        previous_values.iter().enumerate().map(|(p, tg)| squared_mismatch(tape, &batch, p, tg)).collect();
    Ok(tape.mean(&terms))
}

/// Previous-network predictions at the lag points, in the previous frame.
pub fn previous_lag_values(p_previous: &NetworkParameters, set: &CollocationSet) -> Result<Vec<[f64; 2]>, LossError> {
    let prev = set.previous.ok_or_else(|| LossError::Segment("first segment has no lag window".into()))?;
    if let Some(&(z, t)) = set.lag.iter().find(|&&(z, t)| !(0.0..=1.0).contains(&z) || !(0.0..=1.0).contains(&t)) {
        return Err(LossError::Range(format!(
            "lag point (z̄={z}, t̄={t}) lies outside the previous segment [{}, {}]",
            prev.t_start, prev.t_end
        )));
    }
    Ok(p_previous.forward_many(&set.lag)?)
}

/// Target of the initial-condition term.
#[derive(Debug, Clone, Copy)]
pub enum InitialTarget<'a> {
    /// Uniform initial pressures `(u_a0, u_w0)`.
    Uniform { ua: f64, uw: f64 },
    /// The previous segment's network at its `t̄ = 1`.
    Previous(&'a NetworkParameters),
}

impl InitialTarget<'_> {
    pub fn profile(&self, depths: &[f64]) -> Result<Vec<[f64; 2]>, LossError> {
        match *self {
            InitialTarget::Uniform { ua, uw } => Ok(vec![[ua, uw]; depths.len()]),
            InitialTarget::Previous(p) => {
                let points: Vec<_> = depths.iter().map(|&z| (z, 1.0)).collect();
                Ok(p.forward_many(&points)?)
            }
        }
    }
}

fn value_of<F>(p: &NetworkParameters, record: F) -> Result<f64, LossError>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Var, LossError>,
{
    let mut tape = Tape::new(p);
    let root = record(&mut tape)?;
    Ok(tape.value(root)?)
}

pub fn residual_loss(p: &NetworkParameters, set: &CollocationSet, sm: &SoilModel) -> Result<f64, LossError> {
    validate_coupling(sm)?;
    value_of(p, |tape| {
        let c = CoefficientVars::constants(tape, sm);
        residual_term(tape, set, c)
    })
}

pub fn ic_loss(p: &NetworkParameters, set: &CollocationSet, target: &InitialTarget<'_>) -> Result<f64, LossError> {
    let profile = target.profile(&set.initial)?;
    value_of(p, |tape| ic_term(tape, set, &profile))
}

pub fn bc_loss(p: &NetworkParameters, set: &CollocationSet) -> Result<f64, LossError> {
    value_of(p, |tape| bc_term(tape, set))
}

/// Lag loss of `p_current` against `p_previous` over the previous window `prev`.
pub fn lag_loss(
    p_current: &NetworkParameters,
    p_previous: &NetworkParameters,
    set: &CollocationSet,
    prev: &Segment,
) -> Result<f64, LossError> {
    match set.previous {
        Some(s) if s == *prev => {}
        _ => return Err(LossError::Segment("collocation set was not sampled for this previous segment".into())),
    }
    let values = previous_lag_values(p_previous, set)?;
    value_of(p_current, |tape| lag_term(tape, set, &values))
}

/// Component values of one segment objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ic: f64,
    pub bc: f64,
    pub r: f64,
    pub s: f64,
}

impl LossBreakdown {
    /// `L_IC + L_BC`.
    pub fn physics(&self) -> f64 {
        self.ic + self.bc
    }

    /// `L_R + L_S`.
    pub fn data(&self) -> f64 {
        self.r + self.s
    }
}

/// Everything a segment objective needs besides the network parameters.
#[derive(Debug, Clone)]
pub struct SegmentObjective {
    pub set: CollocationSet,
    pub soil: SoilModel,
    pub weights: LossWeights,
    /// Initial-condition targets at `set.initial`.
    pub ic_target: Vec<[f64; 2]>,
    /// Frozen previous-network values at `set.lag` (empty for segment 1).
    pub lag_values: Vec<[f64; 2]>,
}

impl SegmentObjective {
    /// Builds the objective; `previous` must be given exactly when the segment index is at least 2.
    pub fn new(
        set: CollocationSet,
        soil: SoilModel,
        weights: LossWeights,
        previous: Option<&NetworkParameters>,
    ) -> Result<Self, LossError> {
        validate_coupling(&soil)?;
        weights.validate()?;
        let (ic_target, lag_values) = match (set.segment.index, previous) {
            (1, None) => (InitialTarget::Uniform { ua: soil.ua0, uw: soil.uw0 }.profile(&set.initial)?, Vec::new()),
            (n, Some(p)) if n >= 2 => {
                (InitialTarget::Previous(p).profile(&set.initial)?, previous_lag_values(p, &set)?)
            }
            (n, _) => {
                return Err(LossError::Segment(format!(
                    "segment {n} {} a previous model",
                    if n == 1 { "must not have" } else { "needs" }
                )))
            }
        };
        Ok(Self { set, soil, weights, ic_target, lag_values })
    }

    /// Records the weighted objective; returns the total and the unweighted components `[ic, bc, r, s]`.
    pub fn record(&self, tape: &mut Tape<'_>, coeffs: CoefficientVars) -> Result<(Var, [Var; 4]), LossError> {
        let w = self.weights;
        let zero = tape.constant(0.0);
        let ic = if w.w_ic > 0.0 { ic_term(tape, &self.set, &self.ic_target)? } else { zero };
        let bc = if w.w_bc > 0.0 { bc_term(tape, &self.set)? } else { zero };
        let r = if w.w_r > 0.0 { residual_term(tape, &self.set, coeffs)? } else { zero };
        let s = if w.w_s > 0.0 && !self.lag_values.is_empty() { lag_term(tape, &self.set, &self.lag_values)? } else { zero };
        let parts = [tape.scale(ic, w.w_ic), tape.scale(bc, w.w_bc), tape.scale(r, w.w_r), tape.scale(s, w.w_s)];
        Ok((tape.sum(&parts), [ic, bc, r, s]))
    }

    fn breakdown(tape: &Tape<'_>, total: Var, parts: [Var; 4]) -> Result<LossBreakdown, LossError> {
        Ok(LossBreakdown {
            total: tape.value(total)?,
            ic: tape.value(parts[0])?,
            bc: tape.value(parts[1])?,
            r: tape.value(parts[2])?,
            s: tape.value(parts[3])?,
        })
    }

    pub fn evaluate(&self, p: &NetworkParameters) -> Result<LossBreakdown, LossError> {
        let mut tape = Tape::new(p);
        let c = CoefficientVars::constants(&mut tape, &self.soil);
        let (total, parts) = self.record(&mut tape, c)?;
        Self::breakdown(&tape, total, parts)
    }

    pub fn value_and_gradient(&self, p: &NetworkParameters) -> Result<(LossBreakdown, Vec<f64>), LossError> {
        let mut tape = Tape::new(p);
        let c = CoefficientVars::constants(&mut tape, &self.soil);
        let (total, parts) = self.record(&mut tape, c)?;
        let b = Self::breakdown(&tape, total, parts)?;
        let g = tape.backward(total)?;
        Ok((b, g.params))
    }
}

/// Weighted segment objective evaluated once (value only).
pub fn total_segment_loss(p: &NetworkParameters, objective: &SegmentObjective) -> Result<LossBreakdown, LossError> {
    objective.evaluate(p)
}

/// Value and gradient of any recorded loss; thin alias kept for symmetry with the network API.
pub fn loss_with_gradient<F>(p: &NetworkParameters, record: F) -> Result<(f64, Vec<f64>), LossError>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Var, LossError>,
{
    evaluate_with_gradient(p, record)
}

/// Writes `iteration,total,loss_ic,loss_bc,loss_r,loss_s` rows.
pub fn write_loss_trace<W: Write>(mut w: W, trace: &[LossBreakdown]) -> std::io::Result<()> {
    writeln!(w, "iteration,total,loss_ic,loss_bc,loss_r,loss_s")?;
    for (i, b) in trace.iter().enumerate() {
        writeln!(w, "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", b.total, b.ic, b.bc, b.r, b.s)?;
    }
    Ok(())
}
