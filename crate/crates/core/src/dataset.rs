//! Labeled scenario records: generation and JSON Lines persistence with a
//! sidecar manifest (`<stem>.manifest.json`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_width, featurize, FeatureMatrix};
use crate::mbrnn::Example;
use crate::scenario::{build_scenario, ScenarioConfig, ScenarioSpec};
use crate::seeding::derive_seed;
use crate::simkernel::{simulate, LabelMatrix, SimConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("gtq-core ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub num_reps: usize,
    pub generator_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub seed: u64,
    pub scenario: ScenarioSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureMatrix>,
    pub labels: LabelMatrix,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub l: usize,
    pub n_arrival: usize,
    pub n_service: usize,
    pub count: usize,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Draws `n` scenarios and labels each by simulation. Record `i` uses the
/// child seeds `(seed, "scenario", i)` and `(seed, "simulate", i)`.
pub fn generate(
    n: usize,
    cfg: &ScenarioConfig,
    num_reps: usize,
    seed: u64,
    n_moments: Option<(usize, usize)>,
) -> Result<Vec<DatasetRecord>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let scenario_seed = derive_seed(seed, "scenario", i);
            let scenario = build_scenario(scenario_seed, cfg)?;
            let sim = SimConfig { num_reps, seed: derive_seed(seed, "simulate", i), l: cfg.truncation };
            let labels = simulate(&scenario, &sim)?;
            let features = n_moments.map(|(a, s)| featurize(&scenario, a, s)).transpose()?;
            Ok(DatasetRecord {
                id: i,
                seed: scenario_seed,
                scenario,
                features,
                labels,
                provenance: Provenance { num_reps, generator_version: GENERATOR_VERSION.into() },
            })
        })
        .collect()
}

/// Features for training: cached ones when their width fits, recomputed otherwise.
pub fn to_examples(records: &[DatasetRecord], n_arrival: usize, n_service: usize) -> Result<Vec<Example>> {
    records
        .par_iter()
        .map(|r| {
            let w = feature_width(n_arrival, n_service, r.scenario.truncation());
            let x = match &r.features {
                Some(f) if f.width() == w => f.clone(),
                _ => featurize(&r.scenario, n_arrival, n_service)?,
            };
            Ok(Example { x, y: r.labels.clone() })
        })
        .collect()
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path, n_arrival: usize, n_service: usize) -> Result<DatasetManifest> {
    let (horizon, l) = records.first().map_or((0, 0), |r| (r.labels.horizon(), r.labels.width() - 1));
    let manifest = DatasetManifest { format_version: FORMAT_VERSION, horizon, l, n_arrival, n_service, count: records.len() };
    for r in records {
        check_record(r, &manifest).map_err(|e| Error::Format(format!("record {}: {e}", r.id)))?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn check_record(r: &DatasetRecord, m: &DatasetManifest) -> std::result::Result<(), String> {
    if r.labels.horizon() != m.horizon || r.labels.width() != m.l + 1 {
        return Err(format!(
            "labels are {}x{}, manifest says T={} l={}",
            r.labels.horizon(),
            r.labels.width(),
            m.horizon,
            m.l
        ));
    }
    r.labels.validate(1e-9).map_err(|e| e.to_string())?;
    if let Some(f) = &r.features {
        let w = feature_width(m.n_arrival, m.n_service, m.l);
        if f.width() != w || f.horizon() != m.horizon {
            return Err(format!("features are {}x{}, expected {}x{w}", f.horizon(), f.width(), m.horizon));
        }
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let mp = manifest_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::Format(format!("{}: {e}", mp.display())))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("dataset format version {} is not supported", m.format_version)));
    }
    Ok(m)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetManifest, Vec<DatasetRecord>)> {
    let m = read_manifest(path)?;
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::with_capacity(m.count);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        check_record(&r, &m).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(r);
    }
    if out.len() != m.count {
        return Err(Error::Format(format!("manifest declares {} records, file has {}", m.count, out.len())));
    }
    Ok((m, out))
}
