//! Full protocol runs: every (method, noise level, realization) cell, the
//! per-level aggregates and a hashed manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cepra_core::cep::run_cep;
use cepra_core::forward::{ball_source_space, build_leadfield, simulate_measurement, NoiseSpec};
use cepra_core::io::{self, write_atomic};
use cepra_core::metrics::{evaluate, MetricsReport};
use cepra_core::model::{CurrentEstimate, DipoleConfig, LeadField, SourceSpace};
use cepra_core::ramus::{derive_seed, run_ramus};
use cepra_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{collect_measures, histogram_csv, measure_histogram, QuantileRow, QuantileTable};
use crate::config::{ExperimentConfig, MethodConfig};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Leadfield, source space and truth shared by every cell.
pub struct Prepared {
    pub space: SourceSpace,
    pub leadfield: LeadField,
    pub truth: DipoleConfig,
    /// Set when the leadfield was computed rather than loaded.
    pub built: bool,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (leadfield, space, built) = match &cfg.model.leadfield {
        Some(path) => {
            let (lf, space) = io::read_leadfield(path)?;
            (lf, space, false)
        }
        None => {
            let space = ball_source_space(cfg.model.sources, cfg.model.source_radius(), cfg.model.source_seed)?;
            let lf = build_leadfield(&cfg.model.shell()?, &space, &cfg.model.electrode_layout()?)?;
            (lf, space, true)
        }
    };
    let truth = cfg.truth.resolve(&space)?;
    Ok(Prepared { space, leadfield, truth, built })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub method: String,
    pub level: f64,
    pub realization: usize,
    pub noise_seed: u64,
    pub ramus_seed: u64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Hash of the configuration with the output directory blanked.
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub source_space_id: String,
    pub leadfield_sha256: String,
    pub truth: DipoleConfig,
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<Artifact>,
    pub failed_cells: usize,
}

pub struct RunOutcome {
    pub manifest: Manifest,
    pub tables: Vec<QuantileTable>,
    /// Reports of the successful cells keyed by (method, level index).
    pub reports: BTreeMap<(String, usize), Vec<MetricsReport>>,
}

impl RunOutcome {
    pub fn table(&self, method: &str, measure: &str) -> Option<&QuantileTable> {
        self.tables.iter().find(|t| t.method == method && t.measure == measure)
    }
}

fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut blank = cfg.clone();
    blank.output_dir = PathBuf::new();
    Ok(sha256_hex(&io::to_json_bytes(&blank)?))
}

fn level_dir(level: f64) -> String {
    format!("noise_{level}")
}

fn cell_paths(method: &str, level: f64, r: usize) -> (String, String) {
    let stem = format!("cells/{method}/{}/r{r:03}", level_dir(level));
    (format!("{stem}.estimate.csv"), format!("{stem}.metrics.json"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn write_artifact(root: &Path, rel: &str, bytes: &[u8]) -> Result<Artifact> {
    let path = root.join(rel);
    ensure_parent(&path)?;
    write_atomic(&path, bytes)?;
    Ok(Artifact { path: rel.to_string(), sha256: sha256_hex(bytes) })
}

/// Solves one measurement with `method`, returning the estimate in A·m.
pub fn solve_cell(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    method: &MethodConfig,
    level: f64,
    noise_seed: u64,
    ramus_seed: u64,
) -> Result<CurrentEstimate> {
    let sim = simulate_measurement(&prep.leadfield, &prep.space, &prep.truth, &NoiseSpec::new(level, noise_seed)?)?;
    let y = &sim.measurement.values;
    let scaled = if cfg.ramus.enabled {
        run_ramus(&prep.leadfield, y, &method.params, &prep.space, &cfg.ramus.config(), ramus_seed)?.estimate
    } else {
        run_cep(&prep.leadfield, y, &method.params, None)?.estimate
    };
    Ok(scaled.scaled(1.0 / sim.measurement.scale_to_unit))
}

struct CellJob<'a> {
    method: &'a MethodConfig,
    level_index: usize,
    level: f64,
    realization: usize,
}

fn previous_cells(root: &Path, config_sha: &str) -> BTreeMap<(String, String, usize), CellRecord> {
    let Ok(prev) = io::read_json::<Manifest>(&root.join(MANIFEST_NAME)) else {
        return BTreeMap::new();
    };
    if prev.config_sha256 != config_sha {
        return BTreeMap::new();
    }
    prev.cells
        .into_iter()
        .filter(|c| c.status == CellStatus::Ok)
        .map(|c| ((c.method.clone(), level_dir(c.level), c.realization), c))
        .collect()
}

/// Report of a previously finished cell whose files still match their hashes.
fn reuse_cell(root: &Path, record: &CellRecord) -> Option<MetricsReport> {
    for a in &record.artifacts {
        let bytes = fs::read(root.join(&a.path)).ok()?;
        if sha256_hex(&bytes) != a.sha256 {
            return None;
        }
    }
    let report = record.artifacts.iter().find(|a| a.path.ends_with(".metrics.json"))?;
    io::read_json(&root.join(&report.path)).ok()
}

/// Runs every cell of `cfg`, writes per-cell estimates and reports, the
/// aggregate tables and the manifest.
///
/// Finished cells recorded in an existing manifest for the same configuration
/// are reused when their files still match the recorded hashes, so deleting a
/// cell's outputs and rerunning regenerates exactly that cell. Failed cells
/// are recorded and do not stop the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    fs::create_dir_all(&root)?;
    let config_sha = config_hash(cfg)?;
    let prev = previous_cells(&root, &config_sha);
    let prep = prepare(cfg)?;
    let lf_bytes = io::encode_leadfield(&prep.leadfield)?;
    if prep.built {
        io::write_leadfield(&root.join("leadfield.lfld"), &prep.leadfield, &prep.space)?;
    }

    let reals = cfg.noise.realizations;
    let jobs: Vec<CellJob> = cfg
        .methods
        .iter()
        .flat_map(|method| {
            cfg.noise.levels.iter().enumerate().flat_map(move |(level_index, &level)| {
                (0..reals).map(move |realization| CellJob { method, level_index, level, realization })
            })
        })
        .collect();

    let results: Vec<(CellRecord, Option<MetricsReport>, usize)> = jobs
        .par_iter()
        .map(|job| {
            let name = job.method.label();
            let slot = (job.level_index * reals + job.realization) as u64;
            let noise_seed = derive_seed(cfg.noise.seed, slot);
            let ramus_seed = derive_seed(cfg.ramus.master_seed, slot);
            let mut record = CellRecord {
                method: name.clone(),
                level: job.level,
                realization: job.realization,
                noise_seed,
                ramus_seed,
                status: CellStatus::Ok,
                error: None,
                artifacts: Vec::new(),
            };
            if let Some(old) = prev.get(&(name.clone(), level_dir(job.level), job.realization)) {
                if old.noise_seed == noise_seed && old.ramus_seed == ramus_seed {
                    if let Some(report) = reuse_cell(&root, old) {
                        record.artifacts = old.artifacts.clone();
                        return (record, Some(report), job.level_index);
                    }
                }
            }
            let outcome = (|| -> Result<(Vec<Artifact>, MetricsReport)> {
                let x = solve_cell(&prep, cfg, job.method, job.level, noise_seed, ramus_seed)?;
                let report = evaluate(&x, &prep.space, &prep.truth, noise_seed)?;
                let (est_rel, rep_rel) = cell_paths(&name, job.level, job.realization);
                let est = write_artifact(&root, &est_rel, &io::encode_estimate_csv(&x)?)?;
                let rep = write_artifact(&root, &rep_rel, &io::to_json_bytes(&report)?)?;
                Ok((vec![est, rep], report))
            })();
            match outcome {
                Ok((artifacts, report)) => {
                    record.artifacts = artifacts;
                    (record, Some(report), job.level_index)
                }
                Err(e) => {
                    record.status = CellStatus::Failed;
                    record.error = Some(e.to_string());
                    (record, None, job.level_index)
                }
            }
        })
        .collect();

    let mut cells = Vec::with_capacity(results.len());
    let mut reports: BTreeMap<(String, usize), Vec<MetricsReport>> = BTreeMap::new();
    for (record, report, level_index) in results {
        if let Some(r) = report {
            reports.entry((record.method.clone(), level_index)).or_default().push(r);
        }
        cells.push(record);
    }

    let (tables, aggregates) = write_aggregates(&root, cfg, &reports)?;
    let failed_cells = cells.iter().filter(|c| c.status == CellStatus::Failed).count();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_sha,
        config: cfg.clone(),
        source_space_id: prep.space.id(),
        leadfield_sha256: sha256_hex(&lf_bytes),
        truth: prep.truth.clone(),
        cells,
        aggregates,
        failed_cells,
    };
    io::write_json(&root.join(MANIFEST_NAME), &manifest)?;
    Ok(RunOutcome { manifest, tables, reports })
}

fn write_aggregates(
    root: &Path,
    cfg: &ExperimentConfig,
    reports: &BTreeMap<(String, usize), Vec<MetricsReport>>,
) -> Result<(Vec<QuantileTable>, Vec<Artifact>)> {
    let mut tables = Vec::new();
    let mut artifacts = Vec::new();
    for method in &cfg.methods {
        let name = method.label();
        let mut by_measure: BTreeMap<String, Vec<QuantileRow>> = BTreeMap::new();
        for (li, &level) in cfg.noise.levels.iter().enumerate() {
            let Some(rs) = reports.get(&(name.clone(), li)) else {
                continue;
            };
            for (measure, values) in collect_measures(rs)? {
                let hist = measure_histogram(&measure, &values)?;
                let rel = format!("aggregate/histogram/{name}/{}/{measure}.csv", level_dir(level));
                artifacts.push(write_artifact(root, &rel, &histogram_csv(&hist)?)?);
                let row = cepra_core::metrics::box_plot_row(&values)?;
                by_measure.entry(measure).or_default().push(QuantileRow { level, row });
            }
        }
        for (measure, rows) in by_measure {
            let table = QuantileTable { method: name.clone(), measure, rows };
            let rel = format!("aggregate/boxplot/{name}/{}.csv", table.measure);
            artifacts.push(write_artifact(root, &rel, &table.to_csv()?)?);
            tables.push(table);
        }
    }
    Ok((tables, artifacts))
}

/// Per-level quantile tables for every measure and method.
pub fn sweep(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    if cfg.noise.levels.is_empty() {
        return Err(Error::Config("sweep needs at least one noise level".into()));
    }
    run_experiment(cfg)
}

/// Paths whose contents no longer match the manifest (missing files count).
pub fn verify_manifest(root: &Path) -> Result<Vec<String>> {
    let manifest: Manifest = io::read_json(&root.join(MANIFEST_NAME))?;
    let mut bad = Vec::new();
    let all = manifest.cells.iter().flat_map(|c| c.artifacts.iter()).chain(manifest.aggregates.iter());
    for a in all {
        match fs::read(root.join(&a.path)) {
            Ok(bytes) if sha256_hex(&bytes) == a.sha256 => {}
            _ => bad.push(a.path.clone()),
        }
    }
    Ok(bad)
}
