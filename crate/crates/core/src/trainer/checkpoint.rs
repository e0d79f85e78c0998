//! On-disk checkpoints: a JSON manifest plus one parameter file per segment.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::neural::NetworkParameters;
use crate::physics::SoilModel;
use crate::trainer::plan::SegmentationPlan;
use crate::trainer::train::{StitchedModel, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub plan: SegmentationPlan,
    pub soil: SoilModel,
    pub config: TrainConfig,
    /// Collocation seed of each segment.
    pub segment_seeds: Vec<u64>,
    /// Parameter files of the trained segments, relative to the manifest.
    pub segment_files: Vec<String>,
}

pub fn segment_file_name(index: usize) -> String {
    format!("segment_{index:02}.json")
}

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

/// Writes the manifest and the parameters of every segment in `models`.
/// `models` may be shorter than the plan for a partially trained run.
pub fn write_checkpoint(
    dir: &Path,
    plan: &SegmentationPlan,
    soil: &SoilModel,
    config: &TrainConfig,
    models: &[NetworkParameters],
) -> io::Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut segment_files = Vec::new();
    for (k, p) in models.iter().enumerate() {
        let name = segment_file_name(k + 1);
        fs::write(dir.join(&name), serde_json::to_vec(p).map_err(invalid)?)?;
        segment_files.push(name);
    }
    let manifest = CheckpointManifest {
        plan: plan.clone(),
        soil: *soil,
        config: config.clone(),
        segment_seeds: (1..=plan.n_segments()).map(|k| config.segment_seed(k)).collect(),
        segment_files,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest).map_err(invalid)?)?;
    Ok(manifest)
}

pub fn write_stitched(dir: &Path, model: &StitchedModel, config: &TrainConfig) -> io::Result<CheckpointManifest> {
    write_checkpoint(dir, &model.plan, &model.soil, config, &model.models)
}

/// Reads a checkpoint back; parameters are restored bit for bit.
pub fn read_checkpoint(dir: &Path) -> io::Result<(CheckpointManifest, Vec<NetworkParameters>)> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?).map_err(invalid)?;
    let models = manifest
        .segment_files
        .iter()
        .map(|f| serde_json::from_slice(&fs::read(dir.join(f))?).map_err(invalid))
        .collect::<io::Result<Vec<NetworkParameters>>>()?;
    Ok((manifest, models))
}

/// Reads a complete checkpoint as a stitched model.
pub fn read_stitched(dir: &Path) -> io::Result<(StitchedModel, TrainConfig)> {
    let (m, models) = read_checkpoint(dir)?;
    let model = StitchedModel::new(m.plan, models, m.soil).map_err(invalid)?;
    Ok((model, m.config))
}
