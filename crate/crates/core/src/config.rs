//! JSON run configuration shared by every command.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::losses::{LossWeights, SamplingCounts};
use crate::metrics::{COMPARE_DEPTHS, COMPARE_TIMES};
use crate::neural::Architecture;
use crate::oracle::GridSpec;
use crate::physics::{derive_coefficients, validate_coupling, ConstitutiveParameters, SoilModel};
use crate::trainer::{plan_segments, plan_segments_simplified, Coefficient, OptimizerOptions, SegmentationPlan, TrainConfig};

/// Soil given either by its four coefficients or by constitutive constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SoilBlock {
    Coefficients(SoilModel),
    Constitutive { h: f64, parameters: ConstitutiveParameters },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentationConfig {
    LogUniform { n: usize },
    Simplified { n_rest: usize },
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig::LogUniform { n: 5 }
    }
}

/// Reference-solver grid; times run log-spaced from 1 s to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub nz: usize,
    pub nt: usize,
    pub steps_per_decade: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { nz: COMPARE_DEPTHS, nt: COMPARE_TIMES, steps_per_decade: GridSpec::default().steps_per_decade }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionSettings {
    pub free: Vec<Coefficient>,
    /// Starting values of free coefficients; the soil block's values otherwise.
    pub initial: BTreeMap<Coefficient, f64>,
    /// Training window of the inversion (s); the run horizon when absent.
    pub t_max: Option<f64>,
    pub data_weight: f64,
    /// Observations drawn from the reference solver when no data file is given.
    pub observations: usize,
    pub noise_seed: u64,
}

impl Default for InversionSettings {
    fn default() -> Self {
        Self { free: vec![Coefficient::Cva], initial: BTreeMap::new(), t_max: None, data_weight: 1.0, observations: 200, noise_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub soil: SoilBlock,
    /// Time horizon `T_max` (s).
    pub t_max: f64,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub network: Architecture,
    #[serde(default)]
    pub sampling: SamplingCounts,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub burn_in: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub inversion: InversionSettings,
    /// Parallel runs in a sweep; all logical cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

fn at(path: &str) -> impl Fn(String) -> ConfigError + '_ {
    move |message| ConfigError { path: path.to_string(), message }
}

impl RunConfig {
    /// Reference soil, five log-uniform windows up to 1e10 s, default budgets.
    pub fn reference() -> Self {
        Self {
            soil: SoilBlock::Coefficients(SoilModel::reference()),
            t_max: 1e10,
            segmentation: SegmentationConfig::default(),
            network: Architecture::default(),
            sampling: SamplingCounts::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerOptions::default(),
            seed: 0,
            burn_in: false,
            output_dir: default_output_dir(),
            oracle: OracleSettings::default(),
            inversion: InversionSettings::default(),
            workers: None,
        }
    }

    /// Parses JSON, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError { path, message: e.inner().to_string() }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn soil_model(&self) -> Result<SoilModel, ConfigError> {
        let sm = match self.soil {
            SoilBlock::Coefficients(sm) => {
                sm.validate().map_err(|e| at("soil.coefficients")(e.to_string()))?;
                sm
            }
            SoilBlock::Constitutive { h, parameters } => {
                derive_coefficients(&parameters, h).map_err(|e| at("soil.constitutive")(e.to_string()))?
            }
        };
        let wp = validate_coupling(&sm).map_err(|e| at("soil")(e.to_string()))?;
        if !wp.dissipative {
            return Err(at("soil")(format!("coupled system is not dissipative (eigenvalues {:?})", wp.eigenvalues)));
        }
        Ok(sm)
    }

    pub fn plan(&self, sm: &SoilModel) -> Result<SegmentationPlan, ConfigError> {
        match self.segmentation {
            SegmentationConfig::LogUniform { n } => plan_segments(self.t_max, n),
            SegmentationConfig::Simplified { n_rest } => plan_segments_simplified(sm, self.t_max, n_rest),
        }
        .map_err(|e| at("segmentation")(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            architecture: self.network,
            sampling: self.sampling,
            weights: self.weights,
            optimizer: self.optimizer,
            seed: self.seed,
            burn_in: self.burn_in,
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            nz: self.oracle.nz,
            tmin: 1.0,
            tmax: self.t_max,
            nt: self.oracle.nt,
            log_time: true,
            steps_per_decade: self.oracle.steps_per_decade,
        }
    }

    /// Starting soil model of an inversion: the soil block with `inversion.initial` applied.
    pub fn inversion_start(&self, sm: &SoilModel) -> SoilModel {
        let mut start = *sm;
        for (&c, &v) in &self.inversion.initial {
            c.set(&mut start, v);
        }
        start
    }

    /// Checks every block against its own invariants before anything runs.
    pub fn validate(&self) -> Result<SoilModel, ConfigError> {
        if !(self.t_max > 1.0 && self.t_max.is_finite()) {
            return Err(at("t_max")(format!("must exceed 1 s, got {}", self.t_max)));
        }
        let sm = self.soil_model()?;
        self.plan(&sm)?;
        self.network.validate().map_err(|e| at("network")(e.to_string()))?;
        self.sampling.validate().map_err(|e| at("sampling")(e.to_string()))?;
        self.weights.validate().map_err(|e| at("weights")(e.to_string()))?;
        self.optimizer.validate().map_err(|e| at("optimizer")(e.to_string()))?;
        self.grid_spec().validate().map_err(|e| at("oracle")(e.to_string()))?;
        let inv = &self.inversion;
        if inv.free.is_empty() {
            return Err(at("inversion.free")("at least one coefficient must be free".into()));
        }
        if let Some(t) = inv.t_max {
            if !(t > 1.0 && t <= self.t_max) {
                return Err(at("inversion.t_max")(format!("must lie in (1, t_max], got {t}")));
            }
        }
        if !(inv.data_weight >= 0.0 && inv.data_weight.is_finite()) {
            return Err(at("inversion.data_weight")(format!("must be finite and >= 0, got {}", inv.data_weight)));
        }
        if let Some((c, v)) = inv.initial.iter().find(|(_, v)| !v.is_finite()) {
            return Err(at("inversion.initial")(format!("{} must be finite, got {v}", c.name())));
        }
        if inv.observations == 0 {
            return Err(at("inversion.observations")("must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(at("workers")("must be positive".into()));
        }
        Ok(sm)
    }
}
