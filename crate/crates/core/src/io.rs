//! JSON and text file formats: operators, duotensors, binding manifests and fiducial dumps.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::duotensor::{DotColor, DuoIndex, Duotensor, FiducialSet};
use crate::error::{Error, Result};
use crate::evaluator::Binding;
use crate::linalg::{CMatrix, LabeledOperator, Role, Slot};
use crate::notation::{parse_circuit, CircuitFragment, SystemType, WireLabel};

#[derive(Debug, Serialize, Deserialize)]
struct LabelEntry {
    id: WireLabel,
    #[serde(rename = "type")]
    ty: String,
    dim: usize,
    role: Role,
}

#[derive(Debug, Serialize, Deserialize)]
struct OperatorFile {
    labels: Vec<LabelEntry>,
    matrix: Vec<[f64; 2]>,
}

fn check_type(label: &WireLabel, ty: &str) -> Result<()> {
    if label.sys != ty {
        return Err(Error::Format(format!("label {label} declares type {ty}")));
    }
    Ok(())
}

pub fn operator_to_json(op: &LabeledOperator) -> String {
    let labels = op
        .slots()
        .iter()
        .map(|s| LabelEntry { id: s.label.clone(), ty: s.label.sys.clone(), dim: s.dim, role: s.role })
        .collect();
    let m = op.matrix();
    let d = op.dim();
    let matrix = (0..d * d).map(|k| m[(k / d, k % d)]).map(|z| [z.re, z.im]).collect();
    serde_json::to_string_pretty(&OperatorFile { labels, matrix }).expect("operator serialises")
}

pub fn operator_from_json(text: &str) -> Result<LabeledOperator> {
    let file: OperatorFile = serde_json::from_str(text)?;
    let mut slots = Vec::with_capacity(file.labels.len());
    for e in file.labels {
        check_type(&e.id, &e.ty)?;
        slots.push(Slot::new(e.id, e.role, e.dim));
    }
    let d: usize = slots.iter().map(|s| s.dim).product();
    if file.matrix.len() != d * d {
        return Err(Error::Format(format!("matrix has {} entries, labels need {}", file.matrix.len(), d * d)));
    }
    let m = CMatrix::from_fn(d, d, |r, c| {
        let [re, im] = file.matrix[r * d + c];
        Complex64::new(re, im)
    });
    LabeledOperator::new(slots, m)
}

pub fn read_operator(path: &Path) -> Result<LabeledOperator> {
    operator_from_json(&fs::read_to_string(path)?)
}

pub fn write_operator(path: &Path, op: &LabeledOperator) -> Result<()> {
    fs::write(path, operator_to_json(op) + "\n")?;
    Ok(())
}

pub fn read_circuit(path: &Path) -> Result<CircuitFragment> {
    parse_circuit(&fs::read_to_string(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    label: WireLabel,
    #[serde(rename = "type")]
    ty: String,
    dim: usize,
    role: Role,
    color: DotColor,
}

#[derive(Debug, Serialize, Deserialize)]
struct DuotensorFile {
    indices: Vec<IndexEntry>,
    data: Vec<f64>,
}

pub fn duotensor_to_json(dt: &Duotensor) -> String {
    let indices = dt
        .indices
        .iter()
        .map(|i| IndexEntry { label: i.label.clone(), ty: i.label.sys.clone(), dim: i.dim, role: i.role, color: i.color })
        .collect();
    serde_json::to_string_pretty(&DuotensorFile { indices, data: dt.data.clone() }).expect("duotensor serialises")
}

pub fn duotensor_from_json(text: &str) -> Result<Duotensor> {
    let file: DuotensorFile = serde_json::from_str(text)?;
    let mut indices = Vec::with_capacity(file.indices.len());
    for e in file.indices {
        check_type(&e.label, &e.ty)?;
        indices.push(DuoIndex { label: e.label, dim: e.dim, role: e.role, color: e.color });
    }
    Duotensor::new(indices, file.data).map_err(|e| Error::Format(e.to_string()))
}

/// Parses `name = path` lines; `#` starts a comment.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, path) = line.split_once('=').ok_or_else(|| Error::Format(format!("manifest line {}: expected `name = path`", n + 1)))?;
        let (name, path) = (name.trim(), path.trim());
        if name.is_empty() || path.is_empty() {
            return Err(Error::Format(format!("manifest line {}: expected `name = path`", n + 1)));
        }
        out.push((name.to_string(), path.to_string()));
    }
    Ok(out)
}

/// Loads a binding manifest; operator paths are relative to the manifest.
pub fn read_binding(path: &Path) -> Result<Binding> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut b = Binding::new();
    for (name, rel) in parse_manifest(&fs::read_to_string(path)?)? {
        let op_path = base.join(&rel);
        let op = read_operator(&op_path).map_err(|e| match e {
            Error::NotFound(_) => Error::NotFound(op_path.display().to_string()),
            other => Error::Format(format!("{}: {other}", op_path.display())),
        })?;
        b.insert(name, op);
    }
    Ok(b)
}

#[derive(Debug, Serialize, Deserialize)]
struct FiducialManifest {
    #[serde(rename = "type")]
    ty: String,
    dim: usize,
    preps: Vec<String>,
    results: Vec<String>,
    metric: Vec<Vec<f64>>,
}

/// Writes one operator file per fiducial element and `manifest.json` into `dir`.
pub fn write_fiducials(dir: &Path, fset: &FiducialSet) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let name = &fset.sys_type.name;
    let mut preps = Vec::new();
    for (k, p) in fset.preps.iter().enumerate() {
        let file = format!("{name}_prep_{k}.json");
        write_operator(&dir.join(&file), p)?;
        preps.push(file);
    }
    let mut results = Vec::new();
    for (k, r) in fset.results.iter().enumerate() {
        let file = format!("{name}_result_{k}.json");
        write_operator(&dir.join(&file), r)?;
        results.push(file);
    }
    let k = fset.count();
    let metric = (0..k).map(|i| (0..k).map(|j| fset.metric[(i, j)]).collect()).collect();
    let manifest = FiducialManifest { ty: name.clone(), dim: fset.sys_type.dim, preps, results, metric };
    let path = dir.join(format!("{name}_fiducials.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Loads a fiducial set from a manifest written by [`write_fiducials`]. The
/// metric is recomputed from the operators and checked against the listed one.
pub fn read_fiducials(path: &Path) -> Result<FiducialSet> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest: FiducialManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let ty = SystemType::new(manifest.ty, manifest.dim)?;
    let load = |files: &[String], role: Role| -> Result<Vec<CMatrix>> {
        files
            .iter()
            .map(|f| {
                let op = read_operator(&base.join(f))?;
                match op.slots() {
                    [s] if s.role == role && s.dim == ty.dim => Ok(op.into_matrix()),
                    _ => Err(Error::Format(format!("{f}: expected a single {} slot of dimension {}", role.as_str(), ty.dim))),
                }
            })
            .collect()
    };
    let preps = load(&manifest.preps, Role::Output)?;
    let results = load(&manifest.results, Role::Input)?;
    let fset = FiducialSet::new(ty, preps, results, 1e-9)?;
    let k = fset.count();
    let listed_ok = manifest.metric.len() == k
        && manifest.metric.iter().enumerate().all(|(i, row)| row.len() == k && row.iter().enumerate().all(|(j, &g)| (g - fset.metric[(i, j)]).abs() <= 1e-9));
    if !listed_ok {
        return Err(Error::Format("listed metric does not match the fiducial operators".into()));
    }
    Ok(fset)
}
