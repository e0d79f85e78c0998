//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::TrainError;

/// Line-search evaluation budget per iteration.
pub const MAX_LINE_SEARCH_EVALUATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    /// Iteration cap per segment.
    pub max_iterations: usize,
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Stop when the largest gradient component falls to this.
    pub grad_tol: f64,
    /// Stop when `|Δf| ≤ tol·max(|f_k|, |f_{k+1}|, 1)`.
    pub loss_change_tol: f64,
    /// Largest Euclidean length of one parameter update; unbounded when absent.
    pub max_step_norm: Option<f64>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { max_iterations: 2000, memory: 20, wolfe_c1: 1e-4, wolfe_c2: 0.9, grad_tol: 1e-9, loss_change_tol: 1e-11, max_step_norm: None }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(TrainError::Options(format!(
                "need 0 < wolfe_c1 < wolfe_c2 < 1, got {} and {}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if self.memory == 0 {
            return Err(TrainError::Options("memory must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) || !(self.loss_change_tol >= 0.0) {
            return Err(TrainError::Options("tolerances must be nonnegative".into()));
        }
        if let Some(m) = self.max_step_norm {
            if !(m > 0.0 && m.is_finite()) {
                return Err(TrainError::Options(format!("max_step_norm must be positive and finite, got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    LossChange,
    MaxIterations,
    /// No strong-Wolfe point within the evaluation budget, even along steepest descent.
    LineSearchFailed,
}

/// One accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Accepted<I> {
    pub value: f64,
    pub info: I,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult<I> {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Starting point followed by every accepted iterate.
    pub trace: Vec<Accepted<I>>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Evaluations spent by the failed search, when `termination` is `LineSearchFailed`.
    pub failed_search_evaluations: usize,
}

impl<I> LbfgsResult<I> {
    /// The line-search failure as an error value, if one ended the run.
    pub fn line_search_error(&self) -> Option<TrainError> {
        (self.termination == Termination::LineSearchFailed)
            .then_some(TrainError::LineSearch { evaluations: self.failed_search_evaluations })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Point<I> {
    alpha: f64,
    value: f64,
    gradient: Vec<f64>,
    slope: f64,
    info: I,
}

struct Search<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    trial: Vec<f64>,
    evaluations: usize,
}

impl<F> Search<'_, F> {
    fn eval<I>(&mut self, alpha: f64) -> Result<Option<Point<I>>, TrainError>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, I), TrainError>,
    {
        self.evaluations += 1;
        for ((t, x), d) in self.trial.iter_mut().zip(self.x).zip(self.d) {
            *t = x + alpha * d;
        }
        match (self.f)(&self.trial) {
            Ok((value, gradient, info)) if value.is_finite() && gradient.iter().all(|g| g.is_finite()) => {
                let slope = dot(&gradient, self.d);
                Ok(Some(Point { alpha, value, gradient, slope, info }))
            }
            // A non-finite trial is treated as an overshoot.
            Ok(_) | Err(TrainError::NonFinite(_)) => Ok(None),
            Err(TrainError::Loss(crate::error::LossError::Neural(crate::error::NeuralError::Numerical(_)))) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Cubic minimizer of the Hermite interpolant on `[a, b]`, safeguarded into the inner 80%.
fn interpolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let guard = 0.1 * (hi - lo);
    if disc >= 0.0 {
        let d2 = disc.sqrt().copysign(b - a);
        let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if t.is_finite() && t >= lo + guard && t <= hi - guard {
            return t;
        }
    }
    0.5 * (a + b)
}

/// Strong-Wolfe bracketing and zoom along `d`.
fn wolfe_search<I, F>(
    search: &mut Search<'_, F>,
    f0: f64,
    slope0: f64,
    alpha0: f64,
    max_alpha: f64,
    c1: f64,
    c2: f64,
) -> Result<Option<Point<I>>, TrainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, I), TrainError>,
{
    let armijo = |p: &Point<I>| p.value <= f0 + c1 * p.alpha * slope0;
    let curvature = |p: &Point<I>| p.slope.abs() <= -c2 * slope0;
    // Bracket endpoints as (alpha, value, slope).
    let mut prev = (0.0, f0, slope0);
    let mut first = true;
    let mut alpha = alpha0;
    let mut upper = f64::INFINITY;
    let (mut lo, mut hi) = loop {
        if search.evaluations >= MAX_LINE_SEARCH_EVALUATIONS {
            return Ok(None);
        }
        let Some(p) = search.eval::<I>(alpha)? else {
            upper = alpha;
            alpha = 0.5 * (prev.0 + alpha);
            continue;
        };
        let cur = (p.alpha, p.value, p.slope);
        if !armijo(&p) || (!first && p.value >= prev.1) {
            break (prev, cur);
        }
        if curvature(&p) {
            return Ok(Some(p));
        }
        if p.slope >= 0.0 {
            break (cur, prev);
        }
        prev = cur;
        first = false;
        if upper.is_infinite() && 2.0 * alpha > max_alpha {
            return Ok(Some(p));
        }
        alpha = if upper.is_finite() { 0.5 * (alpha + upper) } else { 2.0 * alpha };
    };

    // Zoom; `lo` always satisfies sufficient decrease with the lowest value so far.
    loop {
        if search.evaluations >= MAX_LINE_SEARCH_EVALUATIONS || (hi.0 - lo.0).abs() <= 1e-14 * lo.0.abs().max(hi.0.abs()) {
            return Ok(None);
        }
        let a = interpolate(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
        let Some(p) = search.eval::<I>(a)? else {
            hi = (a, f64::INFINITY, f64::NAN);
            continue;
        };
        let cur = (p.alpha, p.value, p.slope);
        if !armijo(&p) || p.value >= lo.1 {
            hi = cur;
            continue;
        }
        if curvature(&p) {
            return Ok(Some(p));
        }
        if p.slope * (hi.0 - lo.0) >= 0.0 {
            hi = lo;
        }
        lo = cur;
    }
}

/// `−H·g` by the two-loop recursion over the stored pairs.
fn two_loop(g: &[f64], s: &VecDeque<Vec<f64>>, y: &VecDeque<Vec<f64>>, rho: &VecDeque<f64>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; s.len()];
    for i in (0..s.len()).rev() {
        alpha[i] = rho[i] * dot(&s[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    if let (Some(sl), Some(yl)) = (s.back(), y.back()) {
        let gamma = dot(sl, yl) / dot(yl, yl);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..s.len() {
        let beta = rho[i] * dot(&y[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `f`, which returns `(value, gradient, info)`; `info` is carried into the trace.
pub fn lbfgs_minimize<I, F>(mut f: F, x0: Vec<f64>, opts: &OptimizerOptions) -> Result<LbfgsResult<I>, TrainError>
where
    I: Clone,
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, I), TrainError>,
{
    opts.validate()?;
    let (mut fx, mut g, info) = f(&x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite("objective at the starting point".into()));
    }
    if g.len() != x0.len() {
        return Err(TrainError::Options(format!("gradient has {} entries for {} variables", g.len(), x0.len())));
    }
    let mut x = x0;
    let mut trace = vec![Accepted { value: fx, info }];
    let (mut s_hist, mut y_hist, mut rho_hist) = (VecDeque::new(), VecDeque::new(), VecDeque::new());
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut failed_search_evaluations = 0;
    let termination = loop {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        let mut d = two_loop(&g, &s_hist, &y_hist, &rho_hist);
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let max_alpha = opts.max_step_norm.map_or(f64::INFINITY, |m| m / dot(&d, &d).sqrt());
        let alpha0 = if s_hist.is_empty() { (1.0 / dot(&g, &g).sqrt()).min(1.0) } else { 1.0 }.min(max_alpha);
        let mut search = Search { f: &mut f, x: &x, d: &d, trial: vec![0.0; x.len()], evaluations: 0 };
        let found = wolfe_search::<I, F>(&mut search, fx, slope, alpha0, max_alpha, opts.wolfe_c1, opts.wolfe_c2)?;
        evaluations += search.evaluations;
        let Some(p) = found else {
            if s_hist.is_empty() {
                failed_search_evaluations = search.evaluations;
                break Termination::LineSearchFailed;
            }
            // Retry along steepest descent with a fresh memory.
            log::debug!("line search failed along the quasi-Newton direction; resetting memory");
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
        let y: Vec<f64> = p.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) {
            if s_hist.len() == opts.memory {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            rho_hist.push_back(1.0 / sy);
            s_hist.push_back(s);
            y_hist.push_back(y);
        }
        for (xi, si) in x.iter_mut().zip(&d) {
            *xi += p.alpha * si;
        }
        let change = fx - p.value;
        let scale = fx.abs().max(p.value.abs()).max(1.0);
        fx = p.value;
        g = p.gradient;
        trace.push(Accepted { value: fx, info: p.info });
        if change.abs() <= opts.loss_change_tol * scale {
            break Termination::LossChange;
        }
    };
    Ok(LbfgsResult { x, value: fx, gradient: g, trace, iterations, evaluations, termination, failed_search_evaluations })
}
