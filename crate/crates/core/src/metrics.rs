//! Error metrics and the model-versus-oracle comparison.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, TrainError};
use crate::oracle::{fmt17, GridSpec, SolutionGrid};
use crate::physics::SoilModel;
use crate::trainer::StitchedModel;

/// Default comparison grid: 101 depths and 200 log-spaced times over `[1, T_max]`.
pub const COMPARE_DEPTHS: usize = 101;
pub const COMPARE_TIMES: usize = 200;

/// Metrics of one series pair. `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub mae: f64,
    /// `Σ|u − ũ| / Σ|ũ|`.
    pub mre: Option<f64>,
    /// `Σ(u − ũ) / Σ|ũ|`, kept for reference.
    pub mre_signed: Option<f64>,
    pub r2: Option<f64>,
    pub max_abs: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ua: SeriesMetrics,
    pub uw: SeriesMetrics,
    pub combined: SeriesMetrics,
}

/// Metrics of `predicted` against `reference`.
pub fn compute_metrics(predicted: &[f64], reference: &[f64]) -> Result<SeriesMetrics, MetricsError> {
    if predicted.len() != reference.len() {
        return Err(MetricsError::Shape(format!("{} predictions for {} references", predicted.len(), reference.len())));
    }
    if predicted.is_empty() {
        return Err(MetricsError::Shape("empty series".into()));
    }
    let n = reference.len() as f64;
    let (mut abs_sum, mut signed_sum, mut sq_sum, mut ref_abs, mut max_abs) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    for (&u, &r) in predicted.iter().zip(reference) {
        let e = u - r;
        abs_sum += e.abs();
        signed_sum += e;
        sq_sum += e * e;
        ref_abs += r.abs();
        max_abs = max_abs.max(e.abs());
    }
    let mean = reference.iter().sum::<f64>() / n;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean).powi(2)).sum();
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    Ok(SeriesMetrics {
        mae: abs_sum / n,
        mre: ratio(abs_sum, ref_abs),
        mre_signed: ratio(signed_sum, ref_abs),
        r2: ratio(sq_sum, ss_tot).map(|f| 1.0 - f),
        max_abs,
        n: reference.len(),
    })
}

/// Per-variable and combined metrics of two grids on the same nodes, normalized by `(ua0, uw0)`.
pub fn compare_grids(predicted: &SolutionGrid, reference: &SolutionGrid, sm: &SoilModel) -> Result<MetricsReport, MetricsError> {
    if predicted.z != reference.z || predicted.t != reference.t {
        return Err(MetricsError::Shape("grids are not on the same nodes".into()));
    }
    let scale = |u0: f64| if u0 != 0.0 { u0 } else { 1.0 };
    let flat = |f: &[Vec<f64>], u0: f64| f.iter().flatten().map(|v| v / scale(u0)).collect::<Vec<_>>();
    let (pa, pw) = (flat(&predicted.ua, sm.ua0), flat(&predicted.uw, sm.uw0));
    let (ra, rw) = (flat(&reference.ua, sm.ua0), flat(&reference.uw, sm.uw0));
    let cat = |a: &[f64], b: &[f64]| [a, b].concat();
    Ok(MetricsReport {
        ua: compute_metrics(&pa, &ra)?,
        uw: compute_metrics(&pw, &rw)?,
        combined: compute_metrics(&cat(&pa, &pw), &cat(&ra, &rw))?,
    })
}

/// Anything that can tabulate `(u_a, u_w)` on a tensor grid.
pub trait FieldModel {
    fn soil(&self) -> &SoilModel;
    fn evaluate_grid(&self, z: &[f64], t: &[f64], log_time: bool) -> Result<SolutionGrid, TrainError>;
}

impl FieldModel for StitchedModel {
    fn soil(&self) -> &SoilModel {
        &self.soil
    }

    fn evaluate_grid(&self, z: &[f64], t: &[f64], log_time: bool) -> Result<SolutionGrid, TrainError> {
        StitchedModel::evaluate_grid(self, z, t, log_time)
    }
}

/// Evaluates `model` on every node of `grid` and compares in normalized units.
pub fn compare_to_oracle<M: FieldModel + ?Sized>(model: &M, grid: &SolutionGrid) -> Result<MetricsReport, MetricsError> {
    let predicted = model.evaluate_grid(&grid.z, &grid.t, grid.log_time)?;
    compare_grids(&predicted, grid, model.soil())
}

/// The default comparison grid over `[1, t_max]`.
pub fn comparison_grid_spec(t_max: f64) -> GridSpec {
    GridSpec { nz: COMPARE_DEPTHS, tmin: 1.0, tmax: t_max, nt: COMPARE_TIMES, log_time: true, ..GridSpec::default() }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), fmt17)
}

impl MetricsReport {
    /// Rows `variable,mae,mre,max_abs,r2,n` for `ua`, `uw` and `combined`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "variable,mae,mre,max_abs,r2,n")?;
        for (name, m) in [("ua", &self.ua), ("uw", &self.uw), ("combined", &self.combined)] {
            writeln!(w, "{name},{},{},{},{},{}", fmt17(m.mae), cell(m.mre), fmt17(m.max_abs), cell(m.r2), m.n)?;
        }
        Ok(())
    }
}
