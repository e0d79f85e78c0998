use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::ValueEnum;
use poro::config::RunConfig;
use poro::losses::write_loss_trace;
use poro::metrics::{compare_grids, MetricsReport, SeriesMetrics};
use poro::oracle::{fmt17, solve_coupled_fd, GridSpec, SolutionGrid};
use poro::trainer::{
    add_noise, invert_coefficients, observations_from_grid, plan_segments, read_observations_csv, train_lbc, write_checkpoint,
    write_observations_csv, write_stitched, Coefficient, InversionConfig, SegmentationPlan, TrainConfig, TrainReport,
};
use poro::{ConfigError, PhysicsError, SoilModel, TrainError};

/// Failure of a command, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input data (exit 2).
    Usage(String),
    /// Solver or training failure (exit 3).
    Numerical(String),
    /// Files could not be read or written (exit 1).
    Io(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    pub fn io(e: std::io::Error, path: &Path) -> Self {
        CliError::Io(anyhow::Error::new(e).context(format!("{}", path.display())))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
            CliError::Io(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn numerical(e: impl fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

/// A validated configuration and the directory that receives every artifact.
pub struct Run {
    pub cfg: RunConfig,
    pub soil: SoilModel,
    pub out: PathBuf,
}

pub fn load(path: &Path, output: Option<PathBuf>) -> Result<Run, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Ok(seed) = std::env::var("PORO_SEED") {
        cfg.seed = seed
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("PORO_SEED must be an unsigned integer, got `{seed}`")))?;
    }
    if let Some(out) = output {
        cfg.output_dir = out;
    }
    let soil = cfg.validate()?;
    Ok(Run { out: cfg.output_dir.clone(), cfg, soil })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(e, dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(e, path))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).and_then(|()| w.flush()).map_err(|e| CliError::io(e, path))
}

fn oracle(sm: &SoilModel, spec: &GridSpec) -> Result<SolutionGrid, CliError> {
    solve_coupled_fd(sm, spec).map_err(|e| CliError::Numerical(format!("reference solve failed: {e}")))
}

fn normalized(v: f64, u0: f64) -> String {
    if u0 != 0.0 {
        fmt17(v / u0)
    } else {
        "NaN".into()
    }
}

pub fn solve_fem(run: &Run) -> Result<(), CliError> {
    let grid = oracle(&run.soil, &run.cfg.grid_spec())?;
    write_with(&run.out.join("solution.csv"), |w| grid.write_csv(w))?;
    let (i, j) = (grid.nz() - 1, grid.nt() - 1);
    let (ua, uw) = (grid.ua[i][j], grid.uw[i][j]);
    write_with(&run.out.join("summary.csv"), |w| {
        writeln!(w, "z,t,ua,uw,ua_normalized,uw_normalized")?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt17(grid.z[i]),
            fmt17(grid.t[j]),
            fmt17(ua),
            fmt17(uw),
            normalized(ua, run.soil.ua0),
            normalized(uw, run.soil.uw0)
        )
    })?;
    log::info!(
        "reference solution written to {}; at z = H, t = {:e} s: ua/ua0 = {}, uw/uw0 = {}",
        run.out.display(),
        grid.t[j],
        normalized(ua, run.soil.ua0),
        normalized(uw, run.soil.uw0)
    );
    Ok(())
}

fn write_report(out: &Path, report: &TrainReport) -> Result<(), CliError> {
    for s in &report.segments {
        write_with(&out.join(format!("loss_segment_{:02}.csv", s.index)), |w| write_loss_trace(w, &s.trace))?;
        log::info!("segment {}: {} iterations in {:.1} s", s.index, s.iterations, s.wall_time_s);
    }
    write_with(&out.join("train_summary.csv"), |w| report.write_summary_csv(w))
}

/// Outcome of one training run with its comparison against the reference solution.
pub struct Trained {
    pub metrics: MetricsReport,
    pub predicted: SolutionGrid,
    pub reference: SolutionGrid,
}

/// Trains, writes checkpoints, loss traces, the stitched field and the metrics.
/// A failed run keeps the artifacts of the finished segments.
pub fn train_and_report(
    out: &Path,
    soil: &SoilModel,
    plan: &SegmentationPlan,
    train: &TrainConfig,
    grid: &GridSpec,
) -> Result<Trained, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(e, out))?;
    let checkpoint = out.join("checkpoint");
    let (model, report) = match train_lbc(soil, plan, train) {
        Ok(done) => done,
        Err(abort) => {
            write_checkpoint(&checkpoint, plan, soil, train, &abort.models).map_err(|e| CliError::io(e, &checkpoint))?;
            write_report(out, &abort.report)?;
            return Err(CliError::Numerical(abort.to_string()));
        }
    };
    write_stitched(&checkpoint, &model, train).map_err(|e| CliError::io(e, &checkpoint))?;
    write_report(out, &report)?;
    let reference = oracle(soil, grid)?;
    let predicted = model.evaluate_grid(&reference.z, &reference.t, reference.log_time).map_err(numerical)?;
    write_with(&out.join("field.csv"), |w| predicted.write_csv(w))?;
    let metrics = compare_grids(&predicted, &reference, soil).map_err(numerical)?;
    write_with(&out.join("metrics.csv"), |w| metrics.write_csv(w))?;
    log::info!(
        "combined MAE {:.4e}, R2 {}, signed MRE {}",
        metrics.combined.mae,
        metrics.combined.r2.map_or("undefined".into(), |r| format!("{r:.5}")),
        metrics.combined.mre_signed.map_or("undefined".into(), |r| format!("{r:.3e}"))
    );
    Ok(Trained { metrics, predicted, reference })
}

pub fn train(run: &Run, std_mode: bool) -> Result<(), CliError> {
    let plan = if std_mode {
        log::warn!("mode std trains one window over [0, t_max]; the segmentation block is ignored");
        plan_segments(run.cfg.t_max, 1).map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        run.cfg.plan(&run.soil)?
    };
    train_and_report(&run.out, &run.soil, &plan, &run.cfg.train_config(), &run.cfg.grid_spec()).map(|_| ())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    #[value(name = "ka_over_kw")]
    KaOverKw,
    #[value(name = "N_segments")]
    NSegments,
    #[value(name = "hidden_layers")]
    HiddenLayers,
    #[value(name = "hidden_width")]
    HiddenWidth,
    #[value(name = "N_R")]
    NR,
    #[value(name = "N_BC")]
    NBc,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::KaOverKw => "ka_over_kw",
            SweepParam::NSegments => "N_segments",
            SweepParam::HiddenLayers => "hidden_layers",
            SweepParam::HiddenWidth => "hidden_width",
            SweepParam::NR => "N_R",
            SweepParam::NBc => "N_BC",
        }
    }
}

struct Variant {
    label: String,
    value: f64,
    soil: SoilModel,
    plan: SegmentationPlan,
    train: TrainConfig,
}

fn parse_values(param: SweepParam, values: &str) -> Result<Vec<f64>, CliError> {
    let parsed: Vec<f64> = values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| CliError::Usage(format!("--values: `{s}` is not a number"))))
        .collect::<Result<_, _>>()?;
    if parsed.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    for &v in &parsed {
        let integral = param != SweepParam::KaOverKw;
        if !(v > 0.0 && v.is_finite()) || (integral && v.fract() != 0.0) {
            let kind = if integral { "a positive integer" } else { "positive and finite" };
            return Err(CliError::Usage(format!("--values: {} must be {kind}, got {v}", param.name())));
        }
    }
    Ok(parsed)
}

fn variant(run: &Run, param: SweepParam, v: f64) -> Result<Variant, CliError> {
    let mut cfg = run.cfg.clone();
    let mut soil = run.soil;
    let n = v as usize;
    match param {
        SweepParam::KaOverKw => soil = soil.with_permeability_ratio(v),
        SweepParam::NSegments => cfg.segmentation = poro::config::SegmentationConfig::LogUniform { n },
        SweepParam::HiddenLayers => cfg.network.hidden_layers = n,
        SweepParam::HiddenWidth => cfg.network.hidden_width = n,
        SweepParam::NR => cfg.sampling.n_r = n,
        SweepParam::NBc => cfg.sampling.n_bc = n,
    }
    let plan = cfg.plan(&soil)?;
    Ok(Variant { label: format!("{}_{v}", param.name()), value: v, soil, plan, train: cfg.train_config() })
}

/// First output time at which `max_z |u_a|/ua0 < 0.01`, if any.
fn air_dissipation_time(g: &SolutionGrid, ua0: f64) -> Option<f64> {
    (0..g.nt()).find(|&j| g.ua.iter().all(|row| row[j].abs() < 0.01 * ua0)).map(|j| g.t[j])
}

fn metric_cells(m: &SeriesMetrics) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NaN".into(), fmt17);
    format!("{},{},{},{}", fmt17(m.mae), opt(m.mre), fmt17(m.max_abs), opt(m.r2))
}

pub fn sweep(run: &Run, param: SweepParam, values: &str) -> Result<(), CliError> {
    let values = parse_values(param, values)?;
    let variants = values.iter().map(|&v| variant(run, param, v)).collect::<Result<Vec<_>, _>>()?;
    let workers = run
        .cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(variants.len());
    let grid = run.cfg.grid_spec();
    let results: Vec<Mutex<Option<Result<Trained, CliError>>>> = variants.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    log::info!("sweeping {} over {} value(s) with {workers} worker(s)", param.name(), variants.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(v) = variants.get(k) else { break };
                let r = train_and_report(&run.out.join(&v.label), &v.soil, &v.plan, &v.train, &grid);
                *results[k].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut failure = None;
    let path = run.out.join("sweep.csv");
    write_with(&path, |w| {
        let cols = |p: &str| format!("{p}_mae,{p}_mre,{p}_max_abs,{p}_r2");
        writeln!(w, "param,value,{},{},{},t_air_dissipation_oracle,t_air_dissipation_model", cols("ua"), cols("uw"), cols("combined"))?;
        for (v, slot) in variants.iter().zip(results) {
            match slot.into_inner().expect("result slot").expect("every variant ran") {
                Ok(t) => {
                    let td = |g: &SolutionGrid| air_dissipation_time(g, v.soil.ua0).map_or_else(|| "NaN".into(), fmt17);
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        param.name(),
                        v.value,
                        metric_cells(&t.metrics.ua),
                        metric_cells(&t.metrics.uw),
                        metric_cells(&t.metrics.combined),
                        td(&t.reference),
                        td(&t.predicted)
                    )?;
                }
                Err(e) => {
                    log::error!("{} = {}: {e}", param.name(), v.value);
                    failure.get_or_insert(e);
                }
            }
        }
        Ok(())
    })?;
    failure.map_or(Ok(()), Err)
}

fn invert_error(e: TrainError) -> CliError {
    match e {
        TrainError::Physics(PhysicsError::Parameter(_)) | TrainError::Range(_) | TrainError::Inversion(_) => {
            CliError::Usage(e.to_string())
        }
        e => numerical(e),
    }
}

pub fn invert(run: &Run, data: Option<&Path>, noise: Option<f64>, free: Option<&str>) -> Result<(), CliError> {
    let cfg = &run.cfg;
    let free: Vec<Coefficient> = match free {
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse().map_err(invert_error))
            .collect::<Result<_, _>>()?,
        None => cfg.inversion.free.clone(),
    };
    let t_max = cfg.inversion.t_max.unwrap_or(cfg.t_max);
    let observations = match data {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            read_observations_csv(BufReader::new(file))
                .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.to_string().trim_start_matches("invalid inversion setup: "))))?
        }
        None => {
            let grid = oracle(&run.soil, &GridSpec { tmax: t_max, ..cfg.grid_spec() })?;
            observations_from_grid(&grid, cfg.inversion.observations, t_max, cfg.inversion.noise_seed).map_err(invert_error)?
        }
    };
    let observations = match noise {
        Some(sigma) => add_noise(&observations, sigma, cfg.inversion.noise_seed).map_err(invert_error)?,
        None => observations,
    };
    write_with(&run.out.join("observations.csv"), |w| write_observations_csv(w, &observations))?;

    let start = cfg.inversion_start(&run.soil);
    let inv = InversionConfig { train: cfg.train_config(), t_max, data_weight: cfg.inversion.data_weight };
    let result = invert_coefficients(&observations, &free, &start, &inv).map_err(invert_error)?;
    let fitted = serde_json::to_string_pretty(&result.soil).expect("soil model serializes");
    write_with(&run.out.join("fitted_soil.json"), |w| writeln!(w, "{fitted}"))?;
    write_with(&run.out.join("misfit_trace.csv"), |w| result.write_trace_csv(w))?;
    let checkpoint = run.out.join("checkpoint");
    write_stitched(&checkpoint, &result.model, &inv.train).map_err(|e| CliError::io(e, &checkpoint))?;
    for c in &free {
        log::info!("fitted {} = {:e} (start {:e})", c.name(), c.get(&result.soil), c.get(&start));
    }
    Ok(())
}
