//! Matrix CSV files and dataset manifests.
//!
//! A matrix file starts with a `rows,cols` header line followed by `rows` lines
//! of `cols` comma-separated decimal numbers. Values are written with Rust's
//! shortest round-trip formatting, so save followed by load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use roml::bench::GroundTruth;
use roml::prox::DenseMatrix;
use roml::{FeatureSet, PartialPermutation, StackingMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_VERSION: u32 = 1;

pub fn parse_matrix(text: &str, origin: &str) -> Result<DenseMatrix, CliError> {
    let mut lines = text.lines().enumerate();
    let (rows, cols) = match lines.next() {
        Some((_, header)) => {
            let parts: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
            if parts.len() != 2 {
                return Err(CliError::input(format!(
                    "{origin}:1: expected header 'rows,cols', found '{header}'"
                )));
            }
            let dim = |s: &str, col: usize| {
                s.trim().parse::<usize>().map_err(|_| {
                    CliError::input(format!("{origin}:1:{col}: '{s}' is not a valid count"))
                })
            };
            (dim(parts[0], 1)?, dim(parts[1], 2)?)
        }
        None => return Err(CliError::input(format!("{origin}: empty file"))),
    };

    let mut m = DenseMatrix::zeros(rows, cols);
    let mut seen = 0;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if seen == rows {
            return Err(CliError::input(format!(
                "{origin}:{line_no}: more than the {rows} declared rows"
            )));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(CliError::input(format!(
                "{origin}:{line_no}: expected {cols} values, found {}",
                fields.len()
            )));
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::input(format!(
                    "{origin}:{line_no}:{}: '{field}' is not a number",
                    c + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!(
                    "{origin}:{line_no}:{}: non-finite value '{field}'",
                    c + 1
                )));
            }
            m[(seen, c)] = v;
        }
        seen += 1;
    }
    if seen != rows {
        return Err(CliError::input(format!(
            "{origin}: header declares {rows} rows but {seen} were found"
        )));
    }
    Ok(m)
}

pub fn format_matrix(m: &DenseMatrix) -> String {
    let mut out = format!("{},{}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{}", m[(r, c)]).expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    parse_matrix(&text, &path.display().to_string())
}

pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<(), CliError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CliError::input(format!(
            "refusing to write non-finite values to {}",
            path.display()
        )));
    }
    fs::write(path, format_matrix(m))
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Descriptor,
    Coordinate,
}

impl ModeName {
    pub fn from_mode(m: StackingMode) -> Self {
        match m {
            StackingMode::Descriptor => Self::Descriptor,
            StackingMode::Coordinate => Self::Coordinate,
        }
    }
}

impl From<ModeName> for StackingMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Descriptor => StackingMode::Descriptor,
            ModeName::Coordinate => StackingMode::Coordinate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub feature_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord_file: Option<PathBuf>,
    /// Source index of each ground-truth inlier slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<usize>>,
    /// Width over height of each box, for box-descriptor inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect_ratios: Option<Vec<f64>>,
    /// Objectness score in `[0, 1]` of each box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objectness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default)]
    pub mode: ModeName,
    pub images: Vec<ImageEntry>,
}

/// A manifest with its matrices loaded. Relative paths are resolved against
/// the manifest's directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub sets: Vec<FeatureSet>,
    pub coords: Vec<Option<DenseMatrix>>,
    pub truth: Option<GroundTruth>,
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| {
        CliError::input(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CliError::input(format!(
            "{}: unsupported manifest version {} (expected {MANIFEST_VERSION})",
            path.display(),
            manifest.version
        )));
    }
    if manifest.images.is_empty() {
        return Err(CliError::input(format!("{}: no images listed", path.display())));
    }
    Ok(manifest)
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, CliError> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let mut sets = Vec::with_capacity(manifest.images.len());
    let mut coords = Vec::with_capacity(manifest.images.len());
    let mut first: Option<(PathBuf, usize)> = None;
    for entry in &manifest.images {
        let path = resolve(&entry.feature_file);
        let features = load_matrix(&path)?;
        match &first {
            Some((p0, d0)) if *d0 != features.nrows() => {
                return Err(CliError::input(format!(
                    "dimension mismatch: {} has d = {} but {} has d = {d0}",
                    path.display(),
                    features.nrows(),
                    p0.display()
                )));
            }
            None => first = Some((path.clone(), features.nrows())),
            _ => {}
        }
        let n_k = features.ncols();
        sets.push(FeatureSet::new(features, entry.id.clone()).map_err(|e| {
            CliError::input(format!("{}: {e}", path.display()))
        })?);
        coords.push(match &entry.coord_file {
            Some(c) => {
                let cpath = resolve(c);
                let m = load_matrix(&cpath)?;
                if m.nrows() != 2 || m.ncols() != n_k {
                    return Err(CliError::input(format!(
                        "{}: expected a 2x{n_k} coordinate matrix, found {}x{}",
                        cpath.display(),
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Some(m)
            }
            None => None,
        });
    }

    let truth = ground_truth(&manifest, &sets)?;
    Ok(Dataset {
        manifest,
        sets,
        coords,
        truth,
    })
}

/// Ground truth from the manifest, present only when every image lists one.
/// Every listed feature is taken to be a genuine inlier with its slot as label.
fn ground_truth(manifest: &DatasetManifest, sets: &[FeatureSet]) -> Result<Option<GroundTruth>, CliError> {
    let lists: Option<Vec<&Vec<usize>>> = manifest.images.iter().map(|e| e.ground_truth.as_ref()).collect();
    let Some(lists) = lists else {
        return Ok(None);
    };
    let n = lists[0].len();
    let mut ppms = Vec::with_capacity(lists.len());
    let mut labels = Vec::with_capacity(lists.len());
    for ((list, fs), entry) in lists.iter().zip(sets).zip(&manifest.images) {
        if list.len() != n {
            return Err(CliError::input(format!(
                "image '{}' lists {} ground-truth inliers, the first image lists {n}",
                entry.id,
                list.len()
            )));
        }
        let p = PartialPermutation::new(fs.len(), list.to_vec())
            .map_err(|e| CliError::input(format!("image '{}' ground truth: {e}", entry.id)))?;
        let mut l = vec![None; fs.len()];
        for (j, &i) in list.iter().enumerate() {
            l[i] = Some(j);
        }
        ppms.push(p);
        labels.push(l);
    }
    Ok(Some(GroundTruth { ppms, labels }))
}

/// Writes `sets` as CSV files next to a new manifest.
pub fn save_dataset(
    dir: &Path,
    sets: &[FeatureSet],
    mode: ModeName,
    truth: Option<&GroundTruth>,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    let mut images = Vec::with_capacity(sets.len());
    for (k, fs) in sets.iter().enumerate() {
        let file = PathBuf::from(format!("{}.csv", fs.image_id()));
        save_matrix(&dir.join(&file), fs.features())?;
        images.push(ImageEntry {
            id: fs.image_id().to_string(),
            feature_file: file,
            coord_file: None,
            ground_truth: truth.map(|t| t.ppms[k].target_to_source().to_vec()),
            aspect_ratios: None,
            objectness: None,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        mode,
        images,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n")
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}
