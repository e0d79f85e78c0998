//! Finite-difference reference solutions of the coupled system.
//!
//! Crank–Nicolson in time on a uniform depth grid, drained (Dirichlet) top and
//! impermeable (ghost-node mirror) bottom. Internal steps grow geometrically from
//! a tiny first step so that the discontinuity between the initial state and the
//! drained face is damped before the steps become large.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{OracleError, PhysicsError};
use crate::physics::{validate_coupling, SoilModel};

/// Output sampling and internal step density for [`solve_coupled_fd`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nz: usize,
    pub tmin: f64,
    pub tmax: f64,
    pub nt: usize,
    pub log_time: bool,
    pub steps_per_decade: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nz: 101, tmin: 1.0, tmax: 1e10, nt: 200, log_time: true, steps_per_decade: 200 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.nz < 3 {
            return Err(OracleError::Grid(format!("nz = {} < 3", self.nz)));
        }
        if self.nt < 2 {
            return Err(OracleError::Grid(format!("nt = {} < 2", self.nt)));
        }
        if !(self.tmin > 0.0 && self.tmin < self.tmax && self.tmax.is_finite()) {
            return Err(OracleError::Grid(format!("need 0 < tmin < tmax, got [{}, {}]", self.tmin, self.tmax)));
        }
        if self.steps_per_decade < 4 {
            return Err(OracleError::Grid(format!("steps_per_decade = {} < 4", self.steps_per_decade)));
        }
        Ok(())
    }

    /// The output times.
    pub fn times(&self) -> Vec<f64> {
        let last = (self.nt - 1) as f64;
        (0..self.nt)
            .map(|j| {
                if j == self.nt - 1 {
                    return self.tmax;
                }
                let f = j as f64 / last;
                if self.log_time {
                    10f64.powf(self.tmin.log10() + f * (self.tmax.log10() - self.tmin.log10()))
                } else {
                    self.tmin + f * (self.tmax - self.tmin)
                }
            })
            .collect()
    }
}

/// Tabulated `(z, t) -> (u_a, u_w)` field. `ua[i][j]` is depth `z[i]` at time `t[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionGrid {
    pub z: Vec<f64>,
    pub t: Vec<f64>,
    pub ua: Vec<Vec<f64>>,
    pub uw: Vec<Vec<f64>>,
    pub log_time: bool,
}

impl SolutionGrid {
    pub fn nz(&self) -> usize {
        self.z.len()
    }

    pub fn nt(&self) -> usize {
        self.t.len()
    }

    /// Writes `z,t,ua,uw` rows, time-major, with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "z,t,ua,uw")?;
        for j in 0..self.nt() {
            for i in 0..self.nz() {
                writeln!(
                    out,
                    "{},{},{},{}",
                    fmt17(self.z[i]),
                    fmt17(self.t[j]),
                    fmt17(self.ua[i][j]),
                    fmt17(self.uw[i][j])
                )?;
            }
        }
        Ok(())
    }
}

/// Round-trippable scientific formatting with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// How the two pressure fields are advanced each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingRoute {
    /// Pick modal decoupling when `M⁻¹D` is safely diagonalizable, else block solve.
    Auto,
    /// Diagonalize `M⁻¹D` once and run two scalar tridiagonal solves per step.
    Modal,
    /// Solve the 2×2 block-tridiagonal system directly.
    Block,
}

/// Crank–Nicolson solution of `M·u_t = D·u_zz` sampled at the grid-spec times.
pub fn solve_coupled_fd(sm: &SoilModel, gs: &GridSpec) -> Result<SolutionGrid, OracleError> {
    solve_coupled_fd_with(sm, gs, CouplingRoute::Auto)
}

pub fn solve_coupled_fd_with(sm: &SoilModel, gs: &GridSpec, route: CouplingRoute) -> Result<SolutionGrid, OracleError> {
    sm.validate()?;
    gs.validate()?;
    let report = validate_coupling(sm)?;
    if !report.dissipative {
        return Err(PhysicsError::NotDissipative { eigenvalues: report.eigenvalues }.into());
    }

    let h = sm.h / (gs.nz - 1) as f64;
    let z: Vec<f64> = (0..gs.nz).map(|i| if i == gs.nz - 1 { sm.h } else { i as f64 * h }).collect();
    let out_times = gs.times();
    let fastest = report.eigenvalues[1].max(report.eigenvalues[0]);
    let steps = internal_times(&out_times, h * h / fastest, gs.steps_per_decade);

    let a = sm.diffusion_matrix();
    let modal = match route {
        CouplingRoute::Modal => Some(modal_basis(&a).ok_or_else(|| {
            OracleError::Grid("modal route requested but M⁻¹D is not diagonalizable".into())
        })?),
        CouplingRoute::Block => None,
        CouplingRoute::Auto => modal_basis(&a),
    };

    let n = gs.nz - 1;
    let mut ua = vec![vec![0.0; out_times.len()]; gs.nz];
    let mut uw = vec![vec![0.0; out_times.len()]; gs.nz];
    let mut record = |j: usize, fa: &[f64], fw: &[f64]| {
        for i in 0..gs.nz {
            ua[i][j] = fa[i];
            uw[i][j] = fw[i];
        }
    };

    match modal {
        Some(basis) => {
            let init = basis.to_modes([sm.ua0, sm.uw0]);
            let mut w0 = initial_field(gs.nz, init[0]);
            let mut w1 = initial_field(gs.nz, init[1]);
            let mut stepper0 = ScalarCn::new(n, basis.eigenvalues[0], h);
            let mut stepper1 = ScalarCn::new(n, basis.eigenvalues[1], h);
            let mut fa = vec![0.0; gs.nz];
            let mut fw = vec![0.0; gs.nz];
            let mut t_prev = 0.0;
            let mut next_out = 0;
            for (k, &t) in steps.iter().enumerate() {
                let dt = t - t_prev;
                stepper0.step(&mut w0, dt).map_err(|_| OracleError::Numerical { step: k })?;
                stepper1.step(&mut w1, dt).map_err(|_| OracleError::Numerical { step: k })?;
                t_prev = t;
                while next_out < out_times.len() && out_times[next_out] <= t {
                    for i in 0..gs.nz {
                        let u = basis.from_modes([w0[i], w1[i]]);
                        fa[i] = u[0];
                        fw[i] = u[1];
                    }
                    record(next_out, &fa, &fw);
                    next_out += 1;
                }
            }
        }
        None => {
            let mut fa = initial_field(gs.nz, sm.ua0);
            let mut fw = initial_field(gs.nz, sm.uw0);
            let mut t_prev = 0.0;
            let mut next_out = 0;
            for (k, &t) in steps.iter().enumerate() {
                block_cn_step(&mut fa, &mut fw, &a, h, t - t_prev).map_err(|_| OracleError::Numerical { step: k })?;
                t_prev = t;
                while next_out < out_times.len() && out_times[next_out] <= t {
                    record(next_out, &fa, &fw);
                    next_out += 1;
                }
            }
        }
    }

    Ok(SolutionGrid { z, t: out_times, ua, uw, log_time: gs.log_time })
}

fn initial_field(nz: usize, value: f64) -> Vec<f64> {
    let mut f = vec![value; nz];
    f[0] = 0.0;
    f
}

/// Geometric internal time levels merged with the output times.
fn internal_times(out_times: &[f64], stiff_time: f64, steps_per_decade: usize) -> Vec<f64> {
    let tmax = *out_times.last().expect("at least two output times");
    let first = (1e-3 * stiff_time).min(1e-2 * out_times[0]);
    let ratio = 10f64.powf(1.0 / steps_per_decade as f64);
    let mut times = Vec::new();
    let mut t = first;
    while t < tmax {
        times.push(t);
        t *= ratio;
    }
    times.extend_from_slice(out_times);
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    // Dedup may have dropped an exact output time in favour of a near-equal geometric level.
    for &to in out_times {
        let (Ok(i) | Err(i)) = times.binary_search_by(|x| x.partial_cmp(&to).unwrap());
        {
            if i < times.len() && (times[i] - to).abs() <= 1e-12 * to.abs() {
                times[i] = to;
            } else if i > 0 && (times[i - 1] - to).abs() <= 1e-12 * to.abs() {
                times[i - 1] = to;
            }
        }
    }
    times
}

struct ModalBasis {
    eigenvalues: [f64; 2],
    /// Columns are eigenvectors.
    v: [[f64; 2]; 2],
    v_inv: [[f64; 2]; 2],
}

impl ModalBasis {
    fn to_modes(&self, u: [f64; 2]) -> [f64; 2] {
        mat_vec(&self.v_inv, u)
    }

    fn from_modes(&self, w: [f64; 2]) -> [f64; 2] {
        mat_vec(&self.v, w)
    }
}

fn mat_vec(m: &[[f64; 2]; 2], x: [f64; 2]) -> [f64; 2] {
    [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]
}

fn inverse2(m: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Eigen-decomposition of a real 2×2 matrix with real, well-separated eigenvalues.
fn modal_basis(a: &[[f64; 2]; 2]) -> Option<ModalBasis> {
    let off = a[0][1].abs() + a[1][0].abs();
    if off == 0.0 {
        return Some(ModalBasis {
            eigenvalues: [a[0][0], a[1][1]],
            v: [[1.0, 0.0], [0.0, 1.0]],
            v_inv: [[1.0, 0.0], [0.0, 1.0]],
        });
    }
    let trace = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = 0.25 * trace * trace - det;
    let scale = 0.25 * trace * trace;
    if disc <= 1e-10 * scale {
        return None;
    }
    let root = disc.sqrt();
    let big = 0.5 * trace + root.copysign(trace);
    let small = det / big;
    let mut v = [[0.0; 2]; 2];
    for (col, lam) in [small, big].into_iter().enumerate() {
        // (A - λI) x = 0: pick the better-conditioned row.
        let r0 = [a[0][0] - lam, a[0][1]];
        let r1 = [a[1][0], a[1][1] - lam];
        let row = if r0[0].abs() + r0[1].abs() >= r1[0].abs() + r1[1].abs() { r0 } else { r1 };
        let (x, y) = (-row[1], row[0]);
        let norm = x.hypot(y);
        v[0][col] = x / norm;
        v[1][col] = y / norm;
    }
    let v_inv = inverse2(&v)?;
    let cond = (v_inv[0][0].abs() + v_inv[0][1].abs()).max(v_inv[1][0].abs() + v_inv[1][1].abs()) * 2.0;
    if cond > 1e6 {
        return None;
    }
    Some(ModalBasis { eigenvalues: [small, big], v, v_inv })
}

/// Crank–Nicolson stepper for `w_t = λ·w_zz` on nodes `1..=n` (node 0 pinned to zero).
struct ScalarCn {
    lambda: f64,
    h2: f64,
    rhs: Vec<f64>,
    c_prime: Vec<f64>,
}

impl ScalarCn {
    fn new(n: usize, lambda: f64, h: f64) -> Self {
        Self { lambda, h2: h * h, rhs: vec![0.0; n], c_prime: vec![0.0; n] }
    }

    fn step(&mut self, w: &mut [f64], dt: f64) -> Result<(), ()> {
        let n = w.len() - 1;
        let r = 0.5 * self.lambda * dt / self.h2;
        // Explicit half: (I + r L) w
        for i in 1..=n {
            let left = w[i - 1];
            let right = if i == n { w[n - 1] } else { w[i + 1] };
            self.rhs[i - 1] = w[i] + r * (left - 2.0 * w[i] + right);
        }
        // Implicit half: (I - r L) w' = rhs, tridiagonal with
        // sub = -r, diag = 1 + 2r, sup = -r (last row sub = -2r).
        let diag = 1.0 + 2.0 * r;
        let mut denom = diag;
        if denom == 0.0 || !denom.is_finite() {
            return Err(());
        }
        self.c_prime[0] = -r / denom;
        self.rhs[0] /= denom;
        for k in 1..n {
            let sub = if k == n - 1 { -2.0 * r } else { -r };
            denom = diag - sub * self.c_prime[k - 1];
            if denom == 0.0 || !denom.is_finite() {
                return Err(());
            }
            self.c_prime[k] = -r / denom;
            self.rhs[k] = (self.rhs[k] - sub * self.rhs[k - 1]) / denom;
        }
        for k in (0..n - 1).rev() {
            self.rhs[k] -= self.c_prime[k] * self.rhs[k + 1];
        }
        w[0] = 0.0;
        w[1..=n].copy_from_slice(&self.rhs[..n]);
        if w.iter().any(|x| !x.is_finite()) {
            return Err(());
        }
        Ok(())
    }
}

type Block = [[f64; 2]; 2];

fn block_mul(a: &Block, b: &Block) -> Block {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn block_sub(a: &Block, b: &Block) -> Block {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

fn block_scale(a: &Block, s: f64) -> Block {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

const IDENTITY: Block = [[1.0, 0.0], [0.0, 1.0]];

fn block_add(a: &Block, b: &Block) -> Block {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

/// Solves a block-tridiagonal system with 2×2 blocks (block Thomas algorithm).
/// `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn solve_block_tridiagonal(
    lower: &[Block],
    diag: &[Block],
    upper: &[Block],
    rhs: &[[f64; 2]],
) -> Option<Vec<[f64; 2]>> {
    let n = diag.len();
    let mut c_prime: Vec<Block> = vec![[[0.0; 2]; 2]; n];
    let mut d_prime: Vec<[f64; 2]> = vec![[0.0; 2]; n];
    let mut inv = inverse2(&diag[0])?;
    c_prime[0] = block_mul(&inv, &upper[0]);
    d_prime[0] = mat_vec(&inv, rhs[0]);
    for i in 1..n {
        let m = block_sub(&diag[i], &block_mul(&lower[i], &c_prime[i - 1]));
        inv = inverse2(&m)?;
        if i < n - 1 {
            c_prime[i] = block_mul(&inv, &upper[i]);
        }
        let l_d = mat_vec(&lower[i], d_prime[i - 1]);
        d_prime[i] = mat_vec(&inv, [rhs[i][0] - l_d[0], rhs[i][1] - l_d[1]]);
    }
    let mut x = vec![[0.0; 2]; n];
    x[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        let cx = mat_vec(&c_prime[i], x[i + 1]);
        x[i] = [d_prime[i][0] - cx[0], d_prime[i][1] - cx[1]];
    }
    Some(x)
}

fn block_cn_step(fa: &mut [f64], fw: &mut [f64], a: &Block, h: f64, dt: f64) -> Result<(), ()> {
    let n = fa.len() - 1;
    let r = 0.5 * dt / (h * h);
    let ra = block_scale(a, r);
    let mut rhs = vec![[0.0; 2]; n];
    for i in 1..=n {
        let lap = |f: &[f64]| {
            let right = if i == n { f[n - 1] } else { f[i + 1] };
            f[i - 1] - 2.0 * f[i] + right
        };
        let l = [lap(fa), lap(fw)];
        let al = mat_vec(&ra, l);
        rhs[i - 1] = [fa[i] + al[0], fw[i] + al[1]];
    }
    let minus_ra = block_scale(&ra, -1.0);
    let diag_block = block_add(&IDENTITY, &block_scale(&ra, 2.0));
    let mut lower = vec![minus_ra; n];
    lower[n - 1] = block_scale(&ra, -2.0);
    let diag = vec![diag_block; n];
    let upper = vec![minus_ra; n];
    let x = solve_block_tridiagonal(&lower, &diag, &upper, &rhs).ok_or(())?;
    fa[0] = 0.0;
    fw[0] = 0.0;
    for i in 1..=n {
        fa[i] = x[i - 1][0];
        fw[i] = x[i - 1][1];
        if !fa[i].is_finite() || !fw[i].is_finite() {
            return Err(());
        }
    }
    Ok(())
}

/// Terzaghi one-way drainage series: drained at `z = 0`, impermeable at `z = H`.
pub fn terzaghi_series(cv: f64, h: f64, u0: f64, z: f64, t: f64, nterms: usize) -> f64 {
    let tv = cv * t / (h * h);
    (0..nterms)
        .map(|m| {
            let big_m = (2 * m + 1) as f64 * std::f64::consts::FRAC_PI_2;
            2.0 * u0 / big_m * (big_m * z / h).sin() * (-big_m * big_m * tv).exp()
        })
        .sum()
}

/// Depth-averaged Terzaghi pressure ratio `ū/u0` (closed-form integral of the series).
pub fn terzaghi_average_ratio(tv: f64, nterms: usize) -> f64 {
    (0..nterms)
        .map(|m| {
            let big_m = (2 * m + 1) as f64 * std::f64::consts::FRAC_PI_2;
            2.0 / (big_m * big_m) * (-big_m * big_m * tv).exp()
        })
        .sum()
}

fn bracket(xs: &[f64], x: f64) -> (usize, usize) {
    let n = xs.len();
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        (0, 0)
    } else if i >= n {
        (n - 1, n - 1)
    } else {
        (i - 1, i)
    }
}

fn weight(x0: f64, x1: f64, x: f64) -> f64 {
    if x1 == x0 {
        0.0
    } else {
        (x - x0) / (x1 - x0)
    }
}

/// Bilinear interpolation: linear in depth, linear in `log10(t)` for log-spaced grids.
pub fn sample_solution(g: &SolutionGrid, z: f64, t: f64) -> Result<(f64, f64), OracleError> {
    let (zmin, zmax) = (g.z[0], g.z[g.nz() - 1]);
    let (tmin, tmax) = (g.t[0], g.t[g.nt() - 1]);
    if !(z >= zmin && z <= zmax) {
        return Err(OracleError::Range(format!("z = {z} outside [{zmin}, {zmax}]")));
    }
    if !(t >= tmin && t <= tmax) {
        return Err(OracleError::Range(format!("t = {t} outside [{tmin}, {tmax}]")));
    }
    let (i0, i1) = bracket(&g.z, z);
    let (j0, j1) = bracket(&g.t, t);
    let wz = weight(g.z[i0], g.z[i1], z);
    let wt = if g.log_time {
        weight(g.t[j0].log10(), g.t[j1].log10(), t.log10())
    } else {
        weight(g.t[j0], g.t[j1], t)
    };
    let interp = |f: &Vec<Vec<f64>>| {
        let at = |j: usize| (1.0 - wz) * f[i0][j] + wz * f[i1][j];
        (1.0 - wt) * at(j0) + wt * at(j1)
    };
    Ok((interp(&g.ua), interp(&g.uw)))
}
