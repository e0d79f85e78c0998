use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{PhysicsError, TrainError};
use crate::losses::{sample_collocation, LossBreakdown, LossWeights, SamplingCounts, Segment, SegmentObjective};
use crate::neural::{forward_batch, init_network, Architecture, JetKind, NetworkParameters};
use crate::oracle::SolutionGrid;
use crate::physics::{validate_coupling, SoilModel};
use crate::trainer::lbfgs::{lbfgs_minimize, OptimizerOptions, Termination};
use crate::trainer::plan::{plan_segments, SegmentationPlan};

/// Iterations with frozen hidden layers at the start of a warm-started segment.
pub const BURN_IN_ITERATIONS: usize = 100;

/// Depth nodes used to measure interface jumps.
pub const JUMP_DEPTHS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub sampling: SamplingCounts,
    pub weights: LossWeights,
    pub optimizer: OptimizerOptions,
    pub seed: u64,
    /// Freeze hidden layers for the first iterations of every warm-started segment.
    #[serde(default)]
    pub burn_in: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            sampling: SamplingCounts::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerOptions::default(),
            seed: 0,
            burn_in: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.architecture.validate()?;
        self.sampling.validate()?;
        self.weights.validate()?;
        self.optimizer.validate()
    }

    /// Collocation seed of segment `index`.
    pub fn segment_seed(&self, index: usize) -> u64 {
        let mut z = self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Result of optimizing one segment.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub params: NetworkParameters,
    pub trace: Vec<LossBreakdown>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub wall_time_s: f64,
}

/// Minimizes the segment objective from `init`. `previous` is the frozen model of the
/// preceding segment and must be given exactly when `seg.index ≥ 2`.
pub fn train_segment(
    seg: &Segment,
    init: &NetworkParameters,
    previous: Option<(&NetworkParameters, &Segment)>,
    sm: &SoilModel,
    cfg: &TrainConfig,
) -> Result<SegmentOutcome, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let set = sample_collocation(seg, previous.map(|p| p.1), cfg.sampling, cfg.segment_seed(seg.index))?;
    let objective = SegmentObjective::new(set, *sm, cfg.weights, previous.map(|p| p.0))?;
    let mut params = init.clone();
    let mut trace = Vec::new();
    let (mut iterations, mut evaluations) = (0, 0);
    let mut budget = cfg.optimizer.max_iterations;

    if cfg.burn_in && seg.index >= 2 && budget > 0 {
        let range = params.output_layer_range();
        let opts = OptimizerOptions { max_iterations: BURN_IN_ITERATIONS.min(budget), ..cfg.optimizer };
        let mut work = params.clone();
        let r = lbfgs_minimize(
            |x: &[f64]| {
                work.values[range.clone()].copy_from_slice(x);
                let (b, g) = objective.value_and_gradient(&work)?;
                Ok((b.total, g[range.clone()].to_vec(), b))
            },
            params.values[range.clone()].to_vec(),
            &opts,
        )?;
        params.values[range.clone()].copy_from_slice(&r.x);
        trace.extend(r.trace.into_iter().map(|a| a.info));
        iterations += r.iterations;
        evaluations += r.evaluations;
        budget -= r.iterations;
    }

    let mut work = params.clone();
    let opts = OptimizerOptions { max_iterations: budget, ..cfg.optimizer };
    let r = lbfgs_minimize(
        |x: &[f64]| {
            work.values.copy_from_slice(x);
            let (b, g) = objective.value_and_gradient(&work)?;
            Ok((b.total, g, b))
        },
        params.values.clone(),
        &opts,
    )?;
    if let Some(e) = r.line_search_error() {
        log::warn!("segment {}: {e}; keeping the best parameters so far", seg.index);
    }
    let skip = usize::from(!trace.is_empty());
    trace.extend(r.trace.into_iter().skip(skip).map(|a| a.info));
    params.values = r.x;
    iterations += r.iterations;
    evaluations += r.evaluations;
    let wall_time_s = start.elapsed().as_secs_f64();
    log::info!(
        "segment {} [{:e}, {:e}] s: loss {:.3e} after {} iterations ({:.1} s, {:?})",
        seg.index,
        seg.t_start,
        seg.t_end,
        trace.last().map_or(f64::NAN, |b: &LossBreakdown| b.total),
        iterations,
        wall_time_s,
        r.termination
    );
    Ok(SegmentOutcome { params, trace, iterations, evaluations, termination: r.termination, wall_time_s })
}

/// Per-network pieces of the piecewise solution over `[0, T_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchedModel {
    pub plan: SegmentationPlan,
    pub models: Vec<NetworkParameters>,
    pub soil: SoilModel,
}

impl StitchedModel {
    pub fn new(plan: SegmentationPlan, models: Vec<NetworkParameters>, soil: SoilModel) -> Result<Self, TrainError> {
        plan.validate()?;
        if models.len() != plan.n_segments() {
            return Err(TrainError::Plan(format!("{} models for {} segments", models.len(), plan.n_segments())));
        }
        Ok(Self { plan, models, soil })
    }

    fn segment(&self, k: usize) -> Segment {
        Segment { index: k + 1, t_start: self.plan.boundaries[k], t_end: self.plan.boundaries[k + 1], h: self.soil.h }
    }

    fn check_depth(&self, z: f64) -> Result<(), TrainError> {
        if !(0.0..=self.soil.h).contains(&z) {
            return Err(TrainError::Range(format!("depth {z} outside [0, {}]", self.soil.h)));
        }
        Ok(())
    }

    /// `(u_a, u_w)` at `(z, t)` from the segment owning `t`.
    pub fn evaluate(&self, z: f64, t: f64) -> Result<[f64; 2], TrainError> {
        self.check_depth(z)?;
        let k = self
            .plan
            .owner(t)
            .ok_or_else(|| TrainError::Range(format!("time {t} outside [0, {}]", self.plan.t_max())))?;
        let seg = self.segment(k);
        Ok(self.models[k].forward(z / seg.h, seg.normalized_time(t))?)
    }

    /// Field on the tensor grid `z × t`, batched per segment.
    pub fn evaluate_grid(&self, z: &[f64], t: &[f64], log_time: bool) -> Result<SolutionGrid, TrainError> {
        for &zi in z {
            self.check_depth(zi)?;
        }
        let mut ua = vec![vec![0.0; t.len()]; z.len()];
        let mut uw = ua.clone();
        let mut owners = Vec::with_capacity(t.len());
        for &tj in t {
            owners.push(
                self.plan
                    .owner(tj)
                    .ok_or_else(|| TrainError::Range(format!("time {tj} outside [0, {}]", self.plan.t_max())))?,
            );
        }
        for k in 0..self.models.len() {
            let seg = self.segment(k);
            let cols: Vec<usize> = (0..t.len()).filter(|&j| owners[j] == k).collect();
            if cols.is_empty() {
                continue;
            }
            let points: Vec<(f64, f64)> = cols
                .iter()
                .flat_map(|&j| z.iter().map(move |&zi| (zi / seg.h, seg.normalized_time(t[j]))))
                .collect();
            let values = self.models[k].forward_many(&points)?;
            for (c, &j) in cols.iter().enumerate() {
                for i in 0..z.len() {
                    let v = values[c * z.len() + i];
                    ua[i][j] = v[0];
                    uw[i][j] = v[1];
                }
            }
        }
        Ok(SolutionGrid { z: z.to_vec(), t: t.to_vec(), ua, uw, log_time })
    }

    /// `max_z |û⁽ⁿ⁾(z, T_n) − û⁽ⁿ⁺¹⁾(z, T_n)|` per interface, for `(u_a, u_w)`.
    pub fn interface_jumps(&self) -> Result<Vec<[f64; 2]>, TrainError> {
        let depths: Vec<f64> = (0..JUMP_DEPTHS).map(|i| i as f64 / (JUMP_DEPTHS - 1) as f64).collect();
        let left: Vec<_> = depths.iter().map(|&z| (z, 1.0)).collect();
        let right: Vec<_> = depths.iter().map(|&z| (z, 0.0)).collect();
        let mut jumps = Vec::new();
        for k in 0..self.models.len().saturating_sub(1) {
            let a = forward_batch(&self.models[k], &left, JetKind::Value)?;
            let b = forward_batch(&self.models[k + 1], &right, JetKind::Value)?;
            let mut jump = [0.0f64; 2];
            for p in 0..depths.len() {
                for (o, j) in jump.iter_mut().enumerate() {
                    *j = j.max((a.output(p, o, 0) - b.output(p, o, 0)).abs());
                }
            }
            jumps.push(jump);
        }
        Ok(jumps)
    }
}

/// `(u_a, u_w)` of the stitched model at `(z, t)`.
pub fn evaluate_stitched(m: &StitchedModel, z: f64, t: f64) -> Result<[f64; 2], TrainError> {
    m.evaluate(z, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Parameters the optimizer started from.
    pub initial_parameters: Vec<f64>,
    /// Loss decomposition at the start and after every accepted iteration.
    pub trace: Vec<LossBreakdown>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub wall_time_s: f64,
}

impl SegmentReport {
    pub fn final_loss(&self) -> LossBreakdown {
        self.trace.last().copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub segments: Vec<SegmentReport>,
    /// `[u_a, u_w]` jump at each interior boundary.
    pub interface_jumps: Vec<[f64; 2]>,
}

impl TrainReport {
    /// One row per segment: iteration counts, final losses and the jump at its right end.
    /// Wall times are left out so the file is reproducible.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "segment,t_start,t_end,iterations,evaluations,termination,total,loss_ic,loss_bc,loss_r,loss_s,jump_ua,jump_uw"
        )?;
        for s in &self.segments {
            let f = s.final_loss();
            let jump = self.interface_jumps.get(s.index - 1).map_or(String::from(","), |j| format!("{:e},{:e}", j[0], j[1]));
            writeln!(
                w,
                "{},{:e},{:e},{},{},{:?},{:e},{:e},{:e},{:e},{:e},{}",
                s.index, s.t_start, s.t_end, s.iterations, s.evaluations, s.termination, f.total, f.ic, f.bc,
                f.r, f.s, jump
            )?;
        }
        Ok(())
    }

    /// Largest accepted-step increase of the total loss over all segments (≤ 0 when monotone).
    pub fn worst_trace_increase(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| s.trace.windows(2).map(|w| w[1].total - w[0].total))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A training run that stopped early, with everything finished before the failure.
#[derive(Debug, Clone)]
pub struct TrainAbort {
    pub error: TrainError,
    pub report: TrainReport,
    pub models: Vec<NetworkParameters>,
}

impl std::fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted after {} segment(s): {}", self.models.len(), self.error)
    }
}

impl std::error::Error for TrainAbort {}

impl From<TrainAbort> for TrainError {
    fn from(a: TrainAbort) -> Self {
        a.error
    }
}

/// Trains the segments of `plan` in order with warm starts and lagged compatibility.
pub fn train_lbc(
    sm: &SoilModel,
    plan: &SegmentationPlan,
    cfg: &TrainConfig,
) -> Result<(StitchedModel, TrainReport), TrainAbort> {
    let mut report = TrainReport::default();
    let mut models: Vec<NetworkParameters> = Vec::new();
    let abort = |error: TrainError, report: &TrainReport, models: &[NetworkParameters]| TrainAbort {
        error,
        report: report.clone(),
        models: models.to_vec(),
    };
    let setup = (|| -> Result<Vec<Segment>, TrainError> {
        cfg.validate()?;
        plan.validate()?;
        let wp = validate_coupling(sm)?;
        if !wp.dissipative {
            return Err(PhysicsError::NotDissipative { eigenvalues: wp.eigenvalues }.into());
        }
        plan.segments(sm.h)
    })();
    let segments = setup.map_err(|e| abort(e, &report, &models))?;
    let mut init = init_network(cfg.architecture, cfg.seed).map_err(|e| abort(e.into(), &report, &models))?;
    for (k, seg) in segments.iter().enumerate() {
        let previous = (k > 0).then(|| (&models[k - 1], &segments[k - 1]));
        let outcome = train_segment(seg, &init, previous, sm, cfg).map_err(|e| abort(e, &report, &models))?;
        report.segments.push(SegmentReport {
            index: seg.index,
            t_start: seg.t_start,
            t_end: seg.t_end,
            initial_parameters: init.values.clone(),
            trace: outcome.trace,
            iterations: outcome.iterations,
            evaluations: outcome.evaluations,
            termination: outcome.termination,
            wall_time_s: outcome.wall_time_s,
        });
        init = outcome.params.clone();
        models.push(outcome.params);
    }
    let model = StitchedModel::new(plan.clone(), models.clone(), *sm).map_err(|e| abort(e, &report, &models))?;
    report.interface_jumps = model.interface_jumps().map_err(|e| abort(e, &report, &models))?;
    Ok((model, report))
}

/// Single-window training over `[0, T_max]`.
pub fn train_std(sm: &SoilModel, t_max: f64, cfg: &TrainConfig) -> Result<(StitchedModel, TrainReport), TrainAbort> {
    let plan = plan_segments(t_max, 1)
        .map_err(|error| TrainAbort { error, report: TrainReport::default(), models: Vec::new() })?;
    train_lbc(sm, &plan, cfg)
}
