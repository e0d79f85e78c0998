//! Coefficient identification from pressure observations.
//!
//! The single-window objective is augmented with a data misfit and the free
//! coefficients become extra trainable scalars next to the network weights.
//! Diffusivities are optimized as logarithms so they stay positive.

use std::io::BufRead;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PhysicsError, TrainError};
use crate::losses::{sample_collocation, CoefficientVars, LossBreakdown, Segment, SegmentObjective};
use crate::neural::{init_network, JetKind, NetworkParameters, Tape, Var};
use crate::oracle::SolutionGrid;
use crate::physics::{validate_coupling, SoilModel};
use crate::trainer::lbfgs::{lbfgs_minimize, Termination};
use crate::trainer::plan::plan_segments;
use crate::trainer::train::{StitchedModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Cva,
    Cvw,
    Ca,
    Cw,
}

impl Coefficient {
    pub const ALL: [Coefficient; 4] = [Coefficient::Cva, Coefficient::Cvw, Coefficient::Ca, Coefficient::Cw];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::Cva => "cva",
            Coefficient::Cvw => "cvw",
            Coefficient::Ca => "ca",
            Coefficient::Cw => "cw",
        }
    }

    fn is_diffusivity(self) -> bool {
        matches!(self, Coefficient::Cva | Coefficient::Cvw)
    }

    pub fn get(self, sm: &SoilModel) -> f64 {
        match self {
            Coefficient::Cva => sm.cva,
            Coefficient::Cvw => sm.cvw,
            Coefficient::Ca => sm.ca,
            Coefficient::Cw => sm.cw,
        }
    }

    pub fn set(self, sm: &mut SoilModel, v: f64) {
        match self {
            Coefficient::Cva => sm.cva = v,
            Coefficient::Cvw => sm.cvw = v,
            Coefficient::Ca => sm.ca = v,
            Coefficient::Cw => sm.cw = v,
        }
    }

    /// Optimizer coordinate of value `v`.
    fn encode(self, v: f64) -> f64 {
        if self.is_diffusivity() {
            v.ln()
        } else {
            v
        }
    }

    fn decode(self, x: f64) -> f64 {
        if self.is_diffusivity() {
            x.exp()
        } else {
            x
        }
    }
}

impl FromStr for Coefficient {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Coefficient::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TrainError::Inversion(format!("unknown coefficient `{s}` (expected cva, cvw, ca or cw)")))
    }
}

/// One measured pressure pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub z: f64,
    pub t: f64,
    pub ua: f64,
    pub uw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub train: TrainConfig,
    /// Right end of the training window (s).
    pub t_max: f64,
    /// Weight of the data misfit.
    pub data_weight: f64,
}

impl InversionConfig {
    pub fn new(train: TrainConfig, t_max: f64) -> Self {
        Self { train, t_max, data_weight: 1.0 }
    }
}

/// Objective pieces after one accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionStep {
    pub loss: LossBreakdown,
    pub misfit: f64,
    pub soil: SoilModel,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub soil: SoilModel,
    pub model: StitchedModel,
    pub trace: Vec<InversionStep>,
    pub iterations: usize,
    pub termination: Termination,
}

impl InversionResult {
    pub fn misfit_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|s| s.misfit).collect()
    }

    /// CSV `iteration,total,misfit,cva,cvw,ca,cw`.
    pub fn write_trace_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,total,misfit,cva,cvw,ca,cw")?;
        for (k, s) in self.trace.iter().enumerate() {
            writeln!(w, "{k},{:e},{:e},{:e},{:e},{:e},{:e}", s.loss.total, s.misfit, s.soil.cva, s.soil.cvw, s.soil.ca, s.soil.cw)?;
        }
        Ok(())
    }
}

/// `soil` with the free coefficients replaced, or an error when it leaves the dissipative region.
fn admissible(soil: &SoilModel, free: &[Coefficient], x: &[f64]) -> Result<SoilModel, TrainError> {
    let mut sm = *soil;
    for (c, &v) in free.iter().zip(x) {
        c.set(&mut sm, c.decode(v));
    }
    let ok = sm.validate().is_ok() && validate_coupling(&sm).is_ok_and(|r| r.dissipative);
    if !ok {
        // Treated by the line search like an overshoot, which pulls the step back.
        return Err(TrainError::NonFinite(format!("coefficients outside the dissipative region: {sm:?}")));
    }
    Ok(sm)
}

struct Problem<'a> {
    free: &'a [Coefficient],
    initial: &'a SoilModel,
    objective: &'a SegmentObjective,
    points: &'a [(f64, f64)],
    observations: &'a [Observation],
    data_weight: f64,
    n_net: usize,
}

impl Problem<'_> {
    /// Objective and gradient at `x = [θ, encoded free coefficients]`.
    fn evaluate(&self, work: &mut NetworkParameters, x: &[f64]) -> Result<(f64, Vec<f64>, InversionStep), TrainError> {
        let n_net = self.n_net;
        let soil = admissible(self.initial, self.free, &x[n_net..])?;
        work.values.copy_from_slice(&x[..n_net]);
        let mut tape = Tape::new(work);
        let mut coeffs = CoefficientVars::constants(&mut tape, &soil);
        for (c, &v) in self.free.iter().zip(&x[n_net..]) {
            let leaf = tape.leaf(v);
            let var = if c.is_diffusivity() { tape.exp(leaf) } else { leaf };
            match c {
                Coefficient::Cva => coeffs.cva = var,
                Coefficient::Cvw => coeffs.cvw = var,
                Coefficient::Ca => coeffs.ca = var,
                Coefficient::Cw => coeffs.cw = var,
            }
        }
        let (physics, parts) = self.objective.record(&mut tape, coeffs)?;
        let batch = tape.network(self.points, JetKind::Value)?;
        let mut terms: Vec<Var> = Vec::with_capacity(2 * self.observations.len());
        for (k, o) in self.observations.iter().enumerate() {
            for (out, u) in [(0, o.ua), (1, o.uw)] {
                let y = tape.output(&batch, k, out, 0);
                let target = tape.constant(u);
                let d = tape.sub(y, target);
                terms.push(tape.square(d));
            }
        }
        let sq = tape.sum(&terms);
        let misfit = tape.scale(sq, 1.0 / self.observations.len() as f64);
        let weighted = tape.scale(misfit, self.data_weight);
        let total = tape.add(physics, weighted);
        let value = tape.value(total)?;
        let loss = LossBreakdown {
            total: value,
            ic: tape.value(parts[0])?,
            bc: tape.value(parts[1])?,
            r: tape.value(parts[2])?,
            s: tape.value(parts[3])?,
        };
        let misfit = tape.value(misfit)?;
        let g = tape.backward(total)?;
        let mut grad = g.params;
        grad.extend(g.leaves);
        Ok((value, grad, InversionStep { loss, misfit, soil }))
    }
}

/// Fits the `free` coefficients of `initial` jointly with a network to `observations`.
pub fn invert_coefficients(
    observations: &[Observation],
    free: &[Coefficient],
    initial: &SoilModel,
    cfg: &InversionConfig,
) -> Result<InversionResult, TrainError> {
    let mut free = free.to_vec();
    free.sort();
    free.dedup();
    if free.is_empty() {
        return Err(PhysicsError::Parameter("no free coefficient to invert".into()).into());
    }
    if observations.is_empty() {
        return Err(TrainError::Inversion("no observations".into()));
    }
    if !(cfg.data_weight >= 0.0 && cfg.data_weight.is_finite()) {
        return Err(TrainError::Inversion(format!("data weight must be finite and >= 0, got {}", cfg.data_weight)));
    }
    cfg.train.validate()?;
    initial.validate()?;
    let plan = plan_segments(cfg.t_max, 1)?;
    let seg = Segment::new(1, 0.0, cfg.t_max, initial.h)?;
    let mut points = Vec::with_capacity(observations.len());
    for o in observations {
        if !(0.0..=initial.h).contains(&o.z) || !(0.0..=cfg.t_max).contains(&o.t) {
            return Err(TrainError::Range(format!("observation ({}, {}) outside [0, {}] x [0, {}]", o.z, o.t, initial.h, cfg.t_max)));
        }
        points.push((o.z / seg.h, seg.normalized_time(o.t)));
    }

    let set = sample_collocation(&seg, None, cfg.train.sampling, cfg.train.segment_seed(1))?;
    let objective = SegmentObjective::new(set, *initial, cfg.train.weights, None)?;
    let net0 = init_network(cfg.train.architecture, cfg.train.seed)?;
    let n_net = net0.len();
    let mut x0 = net0.values.clone();
    x0.extend(free.iter().map(|c| c.encode(c.get(initial))));
    admissible(initial, &free, &x0[n_net..])?;

    let problem = Problem { free: &free, initial, objective: &objective, points: &points, observations, data_weight: cfg.data_weight, n_net };
    let mut work = net0.clone();
    let r = lbfgs_minimize(|x: &[f64]| problem.evaluate(&mut work, x), x0, &cfg.train.optimizer)?;
    if let Some(e) = r.line_search_error() {
        log::warn!("inversion: {e}; keeping the best iterate so far");
    }
    let soil = admissible(initial, &free, &r.x[n_net..])?;
    let mut net = net0;
    net.values.copy_from_slice(&r.x[..n_net]);
    let model = StitchedModel::new(plan, vec![net], soil)?;
    log::info!(
        "inversion finished after {} iterations ({:?}): {}",
        r.iterations,
        r.termination,
        free.iter().map(|c| format!("{} = {:e}", c.name(), c.get(&soil))).collect::<Vec<_>>().join(", ")
    );
    Ok(InversionResult {
        soil,
        model,
        trace: r.trace.into_iter().map(|a| a.info).collect(),
        iterations: r.iterations,
        termination: r.termination,
    })
}

/// `n` distinct random nodes of `grid` with `t ≤ t_max`, as observations.
pub fn observations_from_grid(grid: &SolutionGrid, n: usize, t_max: f64, seed: u64) -> Result<Vec<Observation>, TrainError> {
    let cols: Vec<usize> = (0..grid.nt()).filter(|&j| grid.t[j] <= t_max).collect();
    let total = cols.len() * grid.nz();
    if n == 0 || n > total {
        return Err(TrainError::Inversion(format!("cannot draw {n} observations from {total} grid nodes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, n);
    Ok(picks
        .into_iter()
        .map(|k| {
            let (i, j) = (k % grid.nz(), cols[k / grid.nz()]);
            Observation { z: grid.z[i], t: grid.t[j], ua: grid.ua[i][j], uw: grid.uw[i][j] }
        })
        .collect())
}

/// Multiplicative Gaussian noise `u·(1 + σ·ξ)` with a seeded generator. `σ = 0` returns the input unchanged.
pub fn add_noise(observations: &[Observation], sigma: f64, seed: u64) -> Result<Vec<Observation>, TrainError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(TrainError::Inversion(format!("noise level must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(observations.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xi = || -> f64 { StandardNormal.sample(&mut rng) };
    Ok(observations
        .iter()
        .map(|o| Observation { ua: o.ua * (1.0 + sigma * xi()), uw: o.uw * (1.0 + sigma * xi()), ..*o })
        .collect())
}

/// Parses `z,t,ua,uw` rows after a header line. Errors name the offending line (1-based).
pub fn read_observations_csv<R: BufRead>(r: R) -> Result<Vec<Observation>, TrainError> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (k, line) in r.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| TrainError::Inversion(format!("line {line_no}: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            let cols: Vec<_> = line.split(',').map(str::trim).collect();
            if cols != ["z", "t", "ua", "uw"] {
                return Err(TrainError::Inversion(format!("line {line_no}: expected header `z,t,ua,uw`, found `{line}`")));
            }
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| TrainError::Inversion(format!("line {line_no}: {e}")))?;
        if vals.len() != 4 || vals.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Inversion(format!("line {line_no}: expected four finite numbers, found `{line}`")));
        }
        out.push(Observation { z: vals[0], t: vals[1], ua: vals[2], uw: vals[3] });
    }
    if out.is_empty() {
        return Err(TrainError::Inversion("no observations in data file".into()));
    }
    Ok(out)
}

/// Writes observations in the format read by [`read_observations_csv`].
pub fn write_observations_csv<W: std::io::Write>(mut w: W, observations: &[Observation]) -> std::io::Result<()> {
    writeln!(w, "z,t,ua,uw")?;
    for o in observations {
        writeln!(w, "{:e},{:e},{:e},{:e}", o.z, o.t, o.ua, o.uw)?;
    }
    Ok(())
}
