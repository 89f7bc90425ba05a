//! Process-property data: CSV ingestion, validation, normalization,
//! engineered features and cross-validation partitions.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical CSV header.
pub const CSV_COLUMNS: [&str; 9] = [
    "sample_id", "p_w", "v_mm_s", "l_um", "h_um", "sr_deg", "material", "phi_pct", "hv",
];

/// Model input names, in design-matrix column order.
pub const FEATURE_NAMES: [&str; 5] = ["p", "v", "l", "h", "sr"];

/// The two scan-rotation levels; mapped to 0 and 1 inside kernels.
pub const SR_LEVELS: [f64; 2] = [67.0, 90.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Phi,
    Hv,
}

impl Property {
    pub const ALL: [Property; 2] = [Property::Phi, Property::Hv];

    pub fn name(self) -> &'static str {
        match self {
            Property::Phi => "phi",
            Property::Hv => "hv",
        }
    }

    pub fn column(self) -> usize {
        match self {
            Property::Phi => 0,
            Property::Hv => 1,
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "phi" => Ok(Property::Phi),
            "hv" => Ok(Property::Hv),
            _ => Err(Error::InvalidArgument(format!("unknown property `{s}`"))),
        }
    }
}

/// One LPBF parameter combination and the material it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessPoint {
    /// Laser power, W.
    pub p: f64,
    /// Scan speed, mm/s.
    pub v: f64,
    /// Layer thickness, µm.
    pub l: f64,
    /// Hatch spacing, µm.
    pub h: f64,
    /// Scan rotation, degrees.
    pub sr: f64,
    pub material: String,
}

impl ProcessPoint {
    pub fn features(&self) -> [f64; 5] {
        [self.p, self.v, self.l, self.h, self.sr]
    }

    pub fn ved(&self) -> Result<f64> {
        compute_ved(self.p, self.v, self.h, self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub sample_id: String,
    pub point: ProcessPoint,
    /// Porosity, %.
    pub phi: f64,
    /// Median Vickers hardness, HV0.5.
    pub hv: f64,
}

impl Record {
    pub fn response(&self, property: Property) -> f64 {
        match property {
            Property::Phi => self.phi,
            Property::Hv => self.hv,
        }
    }
}

/// Range checks applied on load. Defaults are the LPBF design bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub enabled: bool,
    pub p: (f64, f64),
    pub v: (f64, f64),
    pub l: (f64, f64),
    pub h: (f64, f64),
}

impl Default for Validation {
    fn default() -> Self {
        Self {
            enabled: true,
            p: (80.0, 400.0),
            v: (150.0, 1500.0),
            l: (20.0, 75.0),
            h: (70.0, 120.0),
        }
    }
}

impl Validation {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    fn check(&self, row: usize, r: &Record) -> Result<()> {
        let finite = r.point.features().iter().all(|v| v.is_finite())
            && r.phi.is_finite()
            && r.hv.is_finite();
        if !finite {
            return Err(Error::OutOfRange {
                row,
                message: "non-finite value".into(),
            });
        }
        if !self.enabled {
            return Ok(());
        }
        let ranged = [
            ("p", r.point.p, self.p),
            ("v", r.point.v, self.v),
            ("l", r.point.l, self.l),
            ("h", r.point.h, self.h),
        ];
        for (name, value, (lo, hi)) in ranged {
            if value < lo || value > hi {
                return Err(Error::OutOfRange {
                    row,
                    message: format!("{name}={value} outside [{lo}, {hi}]"),
                });
            }
        }
        if !SR_LEVELS.contains(&r.point.sr) {
            return Err(Error::OutOfRange {
                row,
                message: format!("sr={} outside {{67,90}}", r.point.sr),
            });
        }
        if !(0.0..=100.0).contains(&r.phi) {
            return Err(Error::OutOfRange {
                row,
                message: format!("phi={} outside [0, 100]", r.phi),
            });
        }
        if r.hv <= 0.0 {
            return Err(Error::OutOfRange {
                row,
                message: format!("hv={} must be positive", r.hv),
            });
        }
        Ok(())
    }
}

/// Immutable collection of process-property records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<Record>,
    sources: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, validating every record. Sample ids must be unique
    /// per material.
    pub fn from_records(records: Vec<Record>, validation: &Validation) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut sources: Vec<String> = Vec::new();
        for (i, r) in records.iter().enumerate() {
            validation.check(i + 1, r)?;
            if !seen.insert((r.point.material.clone(), r.sample_id.clone())) {
                return Err(Error::DuplicateId(r.sample_id.clone()));
            }
            if !sources.contains(&r.point.material) {
                sources.push(r.point.material.clone());
            }
        }
        Ok(Self { records, sources })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Material labels in first-appearance order.
    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn responses(&self, property: Property) -> Vec<f64> {
        self.records.iter().map(|r| r.response(property)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let records: Vec<Record> = indices.iter().map(|&i| self.records[i].clone()).collect();
        let mut sources = Vec::new();
        for r in &records {
            if !sources.contains(&r.point.material) {
                sources.push(r.point.material.clone());
            }
        }
        Dataset { records, sources }
    }

    /// Row indices belonging to `material`, in file order.
    pub fn material_indices(&self, material: &str) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.point.material == material)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn filter_material(&self, material: &str) -> Dataset {
        self.subset(&self.material_indices(material))
    }

    /// Concatenates two datasets, keeping row order.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Dataset::from_records(records, &Validation::disabled())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_COLUMNS)?;
        for r in &self.records {
            wtr.write_record([
                r.sample_id.clone(),
                r.point.p.to_string(),
                r.point.v.to_string(),
                r.point.l.to_string(),
                r.point.h.to_string(),
                r.point.sr.to_string(),
                r.point.material.clone(),
                r.phi.to_string(),
                r.hv.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>, validation: &Validation) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, validation)
}

pub fn read_csv<R: Read>(reader: R, validation: &Validation) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = HashMap::new();
    for col in CSV_COLUMNS {
        let pos = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::MissingColumn(col.to_string()))?;
        index.insert(col, pos);
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 1;
        let text = |col: &str| -> Result<String> {
            row.get(index[col])
                .map(str::to_string)
                .ok_or_else(|| Error::MissingColumn(col.to_string()))
        };
        let num = |col: &str| -> Result<f64> {
            let raw = text(col)?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row: line,
                column: col.to_string(),
                value: raw.clone(),
            })
        };
        let sample_id = text("sample_id")?;
        records.push(Record {
            sample_id,
            point: ProcessPoint {
                p: num("p_w")?,
                v: num("v_mm_s")?,
                l: num("l_um")?,
                h: num("h_um")?,
                sr: num("sr_deg")?,
                material: text("material")?,
            },
            phi: num("phi_pct")?,
            hv: num("hv")?,
        });
    }
    Dataset::from_records(records, validation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub name: String,
    pub kind: FeatureKind,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseScale {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Forward and inverse transforms between raw units and model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub features: Vec<FeatureScale>,
    pub responses: Vec<ResponseScale>,
}

impl NormalizationSpec {
    /// No-op transform for data that is already in model space.
    pub fn identity(n_features: usize, n_responses: usize) -> Self {
        Self {
            features: (0..n_features)
                .map(|i| FeatureScale {
                    name: format!("x{i}"),
                    kind: FeatureKind::Continuous,
                    min: 0.0,
                    max: 1.0,
                })
                .collect(),
            responses: (0..n_responses)
                .map(|i| ResponseScale {
                    name: format!("y{i}"),
                    mean: 0.0,
                    std: 1.0,
                })
                .collect(),
        }
    }

    /// Fits min-max input scaling and per-response standardization.
    pub fn fit(dataset: &Dataset, properties: &[Property]) -> Result<Self> {
        if dataset.len() < 2 {
            return Err(Error::InvalidData(
                "normalization needs at least two rows".into(),
            ));
        }
        let mut features = Vec::with_capacity(FEATURE_NAMES.len());
        for (j, name) in FEATURE_NAMES.iter().enumerate() {
            if *name == "sr" {
                features.push(FeatureScale {
                    name: name.to_string(),
                    kind: FeatureKind::Binary,
                    min: SR_LEVELS[0],
                    max: SR_LEVELS[1],
                });
                continue;
            }
            let col = dataset.records.iter().map(|r| r.point.features()[j]);
            let (min, max) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            if max <= min {
                return Err(Error::ConstantColumn(name.to_string()));
            }
            features.push(FeatureScale {
                name: name.to_string(),
                kind: FeatureKind::Continuous,
                min,
                max,
            });
        }
        let mut responses = Vec::with_capacity(properties.len());
        for &prop in properties {
            let y = dataset.responses(prop);
            let (mean, std) = mean_std(&y);
            if std <= 0.0 {
                return Err(Error::ConstantColumn(prop.name().to_string()));
            }
            responses.push(ResponseScale {
                name: prop.name().to_string(),
                mean,
                std,
            });
        }
        Ok(Self {
            features,
            responses,
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn scale_input(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.features)
            .map(|(v, f)| (v - f.min) / (f.max - f.min))
            .collect()
    }

    pub fn unscale_input(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(&self.features)
            .map(|(v, f)| f.min + v * (f.max - f.min))
            .collect()
    }

    pub fn standardize(&self, task: usize, y: f64) -> f64 {
        let r = &self.responses[task];
        (y - r.mean) / r.std
    }

    pub fn destandardize(&self, task: usize, y: f64) -> f64 {
        let r = &self.responses[task];
        r.mean + y * r.std
    }

    pub fn destandardize_var(&self, task: usize, var: f64) -> f64 {
        let s = self.responses[task].std;
        var * s * s
    }

    /// Design matrix of `dataset` in model space.
    pub fn inputs(&self, dataset: &Dataset) -> DMatrix<f64> {
        let n = dataset.len();
        let mut x = DMatrix::zeros(n, self.n_features());
        for (i, r) in dataset.records.iter().enumerate() {
            for (j, v) in self.scale_input(&r.point.features()).into_iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        x
    }

    /// Standardized response matrix, one column per configured response.
    pub fn outputs(&self, dataset: &Dataset, properties: &[Property]) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(dataset.len(), properties.len());
        for (i, r) in dataset.records.iter().enumerate() {
            for (g, &prop) in properties.iter().enumerate() {
                y[(i, g)] = self.standardize(g, r.response(prop));
            }
        }
        y
    }
}

/// Model-space view of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub x: DMatrix<f64>,
    /// n × G standardized responses.
    pub y: DMatrix<f64>,
    pub sources: Sources,
}

/// Source labels plus a per-row index into them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sources {
    pub labels: Vec<String>,
    pub index: Vec<usize>,
}

impl Sources {
    pub fn of(dataset: &Dataset) -> Self {
        Self::with_labels(dataset, dataset.sources().to_vec())
    }

    /// Indexes rows against a fixed label order.
    pub fn with_labels(dataset: &Dataset, labels: Vec<String>) -> Self {
        let index = dataset
            .records
            .iter()
            .map(|r| {
                labels
                    .iter()
                    .position(|l| *l == r.point.material)
                    .expect("material present in label set")
            })
            .collect();
        Self { labels, index }
    }

    pub fn lookup(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownSource(label.to_string()))
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            labels: self.labels.clone(),
            index: rows.iter().map(|&i| self.index[i]).collect(),
        }
    }
}

/// Scales inputs to [0,1], maps sr to {0,1} and standardizes every
/// response column.
pub fn normalize(dataset: &Dataset, properties: &[Property]) -> Result<(Normalized, NormalizationSpec)> {
    let spec = NormalizationSpec::fit(dataset, properties)?;
    let normalized = Normalized {
        x: spec.inputs(dataset),
        y: spec.outputs(dataset, properties),
        sources: Sources::of(dataset),
    };
    Ok((normalized, spec))
}

/// Volumetric energy density in J/mm³ from p (W), v (mm/s) and h, l (µm).
pub fn compute_ved(p: f64, v: f64, h: f64, l: f64) -> Result<f64> {
    if !(v > 0.0 && h > 0.0 && l > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "VED requires positive v, h, l (got v={v}, h={h}, l={l})"
        )));
    }
    Ok(p / (v * (h / 1000.0) * (l / 1000.0)))
}

/// Seeded k-fold partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count k={k} must satisfy 2 <= k <= n={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldAssignment {
        k,
        seed,
        assignment,
    })
}

pub const HARDNESS_GRID: usize = 36;

/// Median of a 6×6 hardness map; even count averages the central pair.
pub fn median_hardness(grid: &[f64]) -> Result<f64> {
    if grid.len() != HARDNESS_GRID {
        return Err(Error::InvalidData(format!(
            "hardness grid needs {HARDNESS_GRID} values, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite hardness value".into()));
    }
    Ok(median(grid))
}

pub fn read_hardness_grid(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != 6 {
        return Err(Error::InvalidData(format!(
            "hardness grid needs 6 lines, got {}",
            lines.len()
        )));
    }
    let mut values = Vec::with_capacity(HARDNESS_GRID);
    for (i, line) in lines.iter().enumerate() {
        let row: Vec<&str> = line.split(',').map(str::trim).collect();
        if row.len() != 6 {
            return Err(Error::InvalidData(format!(
                "hardness grid line {} has {} values",
                i + 1,
                row.len()
            )));
        }
        for cell in row {
            values.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                row: i + 1,
                column: "hardness".into(),
                value: cell.to_string(),
            })?);
        }
    }
    Ok(values)
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Mean and sample standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
