//! Fitted-model container and its JSON file format.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NormalizationSpec, Property, Sources};
use crate::error::{Error, Result};
use crate::hyperopt::{OptResult, OptimizerConfig};
use crate::kernels::{self, Hyperparams};
use crate::mtgp::{self, MultiTaskModel, VEC_ORDERING};
use crate::sogp::{self, PredictiveDistribution, TrainedModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sogp,
    Mtgp,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Sogp => "SOGP",
            ModelKind::Mtgp => "MTGP",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sogp" => Ok(ModelKind::Sogp),
            "mtgp" => Ok(ModelKind::Mtgp),
            other => Err(Error::InvalidArgument(format!("unknown model kind '{other}'"))),
        }
    }
}

/// A fitted SOGP or MTGP.
#[derive(Debug, Clone)]
pub enum Model {
    Single(TrainedModel),
    Multi(MultiTaskModel),
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: ModelKind,
    hyperparams: Hyperparams,
    normalization: NormalizationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sources: Option<Sources>,
    inputs: Vec<Vec<f64>>,
    /// One row per observation, one column per task.
    targets: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vec_ordering: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task_covariance: Option<Vec<Vec<f64>>>,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Single(_) => ModelKind::Sogp,
            Model::Multi(_) => ModelKind::Mtgp,
        }
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        match self {
            Model::Single(m) => m.hyperparams(),
            Model::Multi(m) => m.hyperparams(),
        }
    }

    pub fn normalization(&self) -> &NormalizationSpec {
        match self {
            Model::Single(m) => m.normalization(),
            Model::Multi(m) => m.normalization(),
        }
    }

    pub fn sources(&self) -> Option<&Sources> {
        match self {
            Model::Single(m) => m.sources(),
            Model::Multi(m) => m.sources(),
        }
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        match self {
            Model::Single(m) => m.inputs(),
            Model::Multi(m) => m.inputs(),
        }
    }

    pub fn is_fused(&self) -> bool {
        self.hyperparams().z.is_some()
    }

    pub fn nll(&self) -> f64 {
        match self {
            Model::Single(m) => m.nll(),
            Model::Multi(m) => m.nll(),
        }
    }

    /// Response names, one per task.
    pub fn responses(&self) -> Vec<String> {
        self.normalization().responses.iter().map(|r| r.name.clone()).collect()
    }

    /// Training inputs mapped back to raw units.
    pub fn raw_inputs(&self) -> DMatrix<f64> {
        let x = self.inputs();
        let norm = self.normalization();
        let mut raw = x.clone();
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            for (j, v) in norm.unscale_input(&row).into_iter().enumerate() {
                raw[(i, j)] = v;
            }
        }
        raw
    }

    /// Marginal posterior per task at a normalized input, in response units.
    pub fn predict(&self, xstar: &[f64], source: Option<&str>) -> Result<Vec<PredictiveDistribution>> {
        match self {
            Model::Single(m) => m.predict(xstar, source).map(|p| vec![p]),
            Model::Multi(m) => m.predict(xstar, source).map(|p| p.marginals()),
        }
    }

    pub fn predict_raw(&self, raw: &[f64], source: Option<&str>) -> Result<Vec<PredictiveDistribution>> {
        self.predict(&self.normalization().scale_input(raw), source)
    }

    pub fn to_json(&self) -> Result<String> {
        let (targets, vec_ordering, task_covariance) = match self {
            Model::Single(m) => (m.targets().iter().map(|&v| vec![v]).collect(), None, None),
            Model::Multi(m) => (
                kernels::to_rows(m.targets()),
                Some(VEC_ORDERING.to_string()),
                Some(kernels::to_rows(&m.task_cov().matrix)),
            ),
        };
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            kind: self.kind(),
            hyperparams: self.hyperparams().clone(),
            normalization: self.normalization().clone(),
            sources: self.sources().cloned(),
            inputs: kernels::to_rows(self.inputs()),
            targets,
            vec_ordering,
            task_covariance,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Rebuilds a model from its JSON form. The covariance factorization is
    /// recomputed from the stored hyperparameters.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Unsupported(format!(
                "model format version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        let x = kernels::from_rows(&file.inputs).map_err(Error::InvalidData)?;
        let y = kernels::from_rows(&file.targets).map_err(Error::InvalidData)?;
        match file.kind {
            ModelKind::Sogp => {
                if y.ncols() != 1 {
                    return Err(Error::InvalidData("SOGP model needs one target column".into()));
                }
                let y = DVector::from_column_slice(y.column(0).as_slice());
                TrainedModel::new(x, y, file.sources, file.hyperparams, file.normalization).map(Model::Single)
            }
            ModelKind::Mtgp => {
                if let Some(ordering) = &file.vec_ordering {
                    if ordering != VEC_ORDERING {
                        return Err(Error::Unsupported(format!("vec ordering '{ordering}'")));
                    }
                }
                MultiTaskModel::new(x, y, file.sources, file.hyperparams, file.normalization).map(Model::Multi)
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl From<TrainedModel> for Model {
    fn from(m: TrainedModel) -> Self {
        Model::Single(m)
    }
}

impl From<MultiTaskModel> for Model {
    fn from(m: MultiTaskModel) -> Self {
        Model::Multi(m)
    }
}

/// What to fit on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub kind: ModelKind,
    pub fused: bool,
    pub properties: Vec<Property>,
    pub optimizer: OptimizerConfig,
}

impl FitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.properties.is_empty() {
            return Err(Error::InvalidArgument("no property selected".into()));
        }
        if self.kind == ModelKind::Mtgp && self.properties != Property::ALL {
            return Err(Error::InvalidArgument("mtgp requires property=both".into()));
        }
        self.optimizer.validate()
    }

    /// Checks the material count of a training set against the fusion flag.
    pub fn check_sources(&self, dataset: &Dataset) -> Result<()> {
        let n = dataset.sources().len();
        if self.fused {
            if n < 2 {
                return Err(Error::InvalidData(format!(
                    "fusion needs at least 2 materials, found {n}"
                )));
            }
            kernels::check_source_count(n)
        } else if n != 1 {
            Err(Error::InvalidData(format!(
                "single-material fit needs exactly one material, found {n}"
            )))
        } else {
            Ok(())
        }
    }
}

/// A fitted model with the optimizer record that produced it.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub trace: OptResult,
}

/// Fits on raw data: one SOGP per property, or one MTGP over both.
/// Normalization is fitted on `dataset`; source labels follow `labels`
/// when given, else the dataset's first-appearance order.
pub fn fit_dataset(dataset: &Dataset, spec: &FitSpec, labels: Option<&[String]>) -> Result<Vec<Fitted>> {
    spec.validate()?;
    spec.check_sources(dataset)?;
    let norm = NormalizationSpec::fit(dataset, &spec.properties)?;
    let x = norm.inputs(dataset);
    let sources = spec.fused.then(|| match labels {
        Some(l) => Sources::with_labels(dataset, l.to_vec()),
        None => Sources::of(dataset),
    });
    match spec.kind {
        ModelKind::Mtgp => {
            let y = norm.outputs(dataset, &spec.properties);
            let (m, trace) = mtgp::fit_mt_normalized(&x, &y, sources.as_ref(), norm, &spec.optimizer)?;
            Ok(vec![Fitted {
                model: Model::Multi(m),
                trace,
            }])
        }
        ModelKind::Sogp => spec
            .properties
            .iter()
            .enumerate()
            .map(|(g, &prop)| {
                let single = NormalizationSpec {
                    features: norm.features.clone(),
                    responses: vec![norm.responses[g].clone()],
                };
                let y = DVector::from_iterator(
                    dataset.len(),
                    dataset.records().iter().map(|r| single.standardize(0, r.response(prop))),
                );
                let (m, trace) = sogp::fit_normalized(&x, &y, sources.as_ref(), single, &spec.optimizer)?;
                Ok(Fitted {
                    model: Model::Single(m),
                    trace,
                })
            })
            .collect(),
    }
}
