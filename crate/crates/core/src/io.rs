//! File formats: binary leadfields with a TOML sidecar, CSV leadfields,
//! measurements, estimates and solver traces, and the truth record.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cep::SolverTrace;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::model::{CurrentEstimate, Dipole, DipoleConfig, LeadField, OrientationMode, Reference, SourceSpace};

pub const LEADFIELD_MAGIC: &[u8; 4] = b"LFLD";
pub const LEADFIELD_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1;

const TAG_AVERAGE: u8 = 0;
const TAG_COMMON: u8 = 1;

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Sidecar path of a binary leadfield: `<path>.toml`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadfieldSidecar {
    pub format_version: u32,
    pub units: String,
    pub position_units: String,
    pub orientation: OrientationMode,
    pub source_space_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_electrode: Option<usize>,
    pub positions: Vec<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_dirs: Option<Vec<Point3>>,
}

impl LeadfieldSidecar {
    pub fn source_space(&self) -> Result<SourceSpace> {
        match (&self.orientation, &self.constraint_dirs) {
            (OrientationMode::FreeCartesian, None) => SourceSpace::free(self.positions.clone()),
            (OrientationMode::Constrained, Some(d)) => SourceSpace::constrained(self.positions.clone(), d.clone()),
            _ => Err(Error::Format("sidecar orientation and constraint directions disagree".into())),
        }
    }
}

pub fn encode_leadfield(lf: &LeadField) -> Result<Vec<u8>> {
    let m = u32::try_from(lf.channels()).map_err(format_err)?;
    let cols = u32::try_from(lf.cols()).map_err(format_err)?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * lf.channels() * lf.cols());
    out.extend_from_slice(LEADFIELD_MAGIC);
    out.extend_from_slice(&LEADFIELD_VERSION.to_le_bytes());
    out.extend_from_slice(&m.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.push(match lf.reference() {
        Reference::AverageReference => TAG_AVERAGE,
        Reference::CommonElectrode(_) => TAG_COMMON,
    });
    let g = lf.gain();
    for r in 0..g.nrows() {
        for c in 0..g.ncols() {
            out.extend_from_slice(&g[(r, c)].to_le_bytes());
        }
    }
    Ok(out)
}

/// Gain matrix and reference tag from the binary body.
pub fn decode_leadfield(bytes: &[u8]) -> Result<(DMatrix<f64>, u8)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != LEADFIELD_MAGIC {
        return Err(Error::Format("missing LFLD header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != LEADFIELD_VERSION {
        return Err(Error::Format(format!("unsupported leadfield version {version}")));
    }
    let m = word(8) as usize;
    let cols = word(12) as usize;
    let tag = bytes[16];
    if tag != TAG_AVERAGE && tag != TAG_COMMON {
        return Err(Error::Format(format!("unknown reference tag {tag}")));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * m * cols {
        return Err(Error::Format(format!("leadfield body has {} bytes, expected {}", body.len(), 8 * m * cols)));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    Ok((DMatrix::from_row_iterator(m, cols, values), tag))
}

/// Writes the binary leadfield at `path` and its sidecar next to it.
pub fn write_leadfield(path: &Path, lf: &LeadField, space: &SourceSpace) -> Result<()> {
    if lf.cols() != space.dof() || lf.orientation() != space.orientation_mode() {
        return Err(Error::Shape("leadfield does not belong to the source space".into()));
    }
    let sidecar = LeadfieldSidecar {
        format_version: LEADFIELD_VERSION,
        units: "V/(A m)".into(),
        position_units: "mm".into(),
        orientation: space.orientation_mode(),
        source_space_id: lf.source_space_id().to_string(),
        reference_electrode: match lf.reference() {
            Reference::AverageReference => None,
            Reference::CommonElectrode(i) => Some(i),
        },
        positions: space.positions().to_vec(),
        constraint_dirs: space.constraint_dirs().map(<[_]>::to_vec),
    };
    write_atomic(path, &encode_leadfield(lf)?)?;
    write_atomic(&sidecar_path(path), toml::to_string(&sidecar).map_err(format_err)?.as_bytes())
}

pub fn read_leadfield(path: &Path) -> Result<(LeadField, SourceSpace)> {
    let (gain, tag) = decode_leadfield(&fs::read(path)?)?;
    let sidecar: LeadfieldSidecar = toml::from_str(&fs::read_to_string(sidecar_path(path))?).map_err(format_err)?;
    let space = sidecar.source_space()?;
    let reference = match (tag, sidecar.reference_electrode) {
        (TAG_AVERAGE, None) => Reference::AverageReference,
        (TAG_COMMON, Some(i)) => Reference::CommonElectrode(i),
        _ => return Err(Error::Format("reference tag and sidecar electrode disagree".into())),
    };
    if gain.ncols() != space.dof() {
        return Err(Error::Shape(format!("{} columns for {} unknowns", gain.ncols(), space.dof())));
    }
    let lf = LeadField::new(gain, reference, space.orientation_mode(), sidecar.source_space_id)?;
    Ok((lf, space))
}

/// CSV leadfield with header `channel,col_0,...,col_{cols-1}`.
pub fn read_leadfield_csv(path: &Path, reference: Reference, space: &SourceSpace) -> Result<LeadField> {
    let mut reader = csv::Reader::from_path(path).map_err(format_err)?;
    let headers = reader.headers().map_err(format_err)?.clone();
    let cols = headers.len().saturating_sub(1);
    if headers.get(0) != Some("channel") || (0..cols).any(|j| headers.get(j + 1) != Some(format!("col_{j}").as_str())) {
        return Err(Error::Format("leadfield CSV header must be channel,col_0,col_1,...".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(format_err)?;
        for field in record.iter().skip(1) {
            values.push(field.trim().parse::<f64>().map_err(format_err)?);
        }
        rows += 1;
    }
    let gain = DMatrix::from_row_slice(rows, cols, &values);
    LeadField::for_space(gain, reference, space)
}

pub fn write_measurement_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["channel", "value"]).map_err(format_err)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:e}")]).map_err(format_err)?;
    }
    write_atomic(path, &w.into_inner().map_err(format_err)?)
}

pub fn read_measurement_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(format_err)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(format_err)?;
        let channel: usize = record.get(0).unwrap_or("").trim().parse().map_err(format_err)?;
        if channel != i {
            return Err(Error::Format(format!("measurement row {i} has channel {channel}")));
        }
        out.push(record.get(1).unwrap_or("").trim().parse().map_err(format_err)?);
    }
    Ok(out)
}

/// Estimate CSV: `position,x,y,z,amplitude` (free) or
/// `position,coefficient,amplitude` (constrained).
pub fn encode_estimate_csv(x: &CurrentEstimate) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match x.orientation {
        OrientationMode::FreeCartesian => w.write_record(["position", "x", "y", "z", "amplitude"]),
        OrientationMode::Constrained => w.write_record(["position", "coefficient", "amplitude"]),
    }
    .map_err(format_err)?;
    for mu in 0..x.n_sources() {
        let mut row = vec![mu.to_string()];
        row.extend(x.block(mu).iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", x.amplitude(mu)));
        w.write_record(&row).map_err(format_err)?;
    }
    w.into_inner().map_err(format_err)
}

pub fn write_estimate_csv(path: &Path, x: &CurrentEstimate) -> Result<()> {
    write_atomic(path, &encode_estimate_csv(x)?)
}

pub fn read_estimate_csv(path: &Path) -> Result<CurrentEstimate> {
    let mut reader = csv::Reader::from_path(path).map_err(format_err)?;
    let orientation = match reader.headers().map_err(format_err)?.len() {
        5 => OrientationMode::FreeCartesian,
        3 => OrientationMode::Constrained,
        n => return Err(Error::Format(format!("estimate CSV has {n} columns"))),
    };
    let k = orientation.components();
    let mut coeffs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(format_err)?;
        let mu: usize = record.get(0).unwrap_or("").parse().map_err(format_err)?;
        if mu != i {
            return Err(Error::Format(format!("estimate row {i} has position {mu}")));
        }
        for c in 1..=k {
            coeffs.push(record.get(c).unwrap_or("").parse::<f64>().map_err(format_err)?);
        }
    }
    CurrentEstimate::new(DVector::from_vec(coeffs), orientation)
}

pub fn encode_trace_csv(trace: &SolverTrace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "step_norm", "misfit", "penalty", "log_posterior"]).map_err(format_err)?;
    for j in 0..trace.len() {
        w.write_record([
            (j + 1).to_string(),
            trace.step_norm[j].to_string(),
            trace.misfit[j].to_string(),
            trace.penalty[j].to_string(),
            trace.log_posterior[j].map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(format_err)?;
    }
    w.into_inner().map_err(format_err)
}

/// Ground truth of a simulated measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub label: String,
    /// Noise seed.
    pub seed: u64,
    pub rel_noise: f64,
    pub dipoles: Vec<Dipole>,
    pub snapped_indices: Vec<usize>,
    pub snap_distances_mm: Vec<f64>,
    pub snap_warning: bool,
}

impl TruthRecord {
    pub fn config(&self) -> Result<DipoleConfig> {
        DipoleConfig::new(self.dipoles.clone(), self.label.clone())
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(format_err)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&fs::read(path)?).map_err(format_err)
}
