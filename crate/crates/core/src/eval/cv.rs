use std::io::Write;

use serde::Serialize;

use super::stats::rmse;
use crate::dataset::{kfold, Dataset, Property};
use crate::error::{Error, Result};
use crate::hyperopt::OptimizerConfig;
use crate::model::{fit_dataset, FitSpec, ModelKind};
use crate::numfmt::g6;
use crate::par;

pub const FUSED_LABEL: &str = "fused";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvConfig {
    pub kind: ModelKind,
    pub fused: bool,
    pub properties: Vec<Property>,
    pub k: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl CvConfig {
    fn fit_spec(&self) -> FitSpec {
        FitSpec {
            kind: self.kind,
            fused: self.fused,
            properties: self.properties.clone(),
            optimizer: self.optimizer.clone(),
        }
    }
}

/// Per-property RMSE on one fold's held-out rows of one material.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldRmse {
    pub fold: usize,
    pub n_test: usize,
    pub rmse: Vec<f64>,
}

/// One (train, test) configuration, matching a Table 3 row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub train: String,
    pub test: String,
    pub folds: Vec<FoldRmse>,
    /// Arithmetic mean of fold RMSEs, per property.
    pub mean_rmse: Vec<f64>,
    /// RMSE over all held-out residuals pooled across folds, per property.
    pub pooled_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub model: ModelKind,
    pub fused: bool,
    pub properties: Vec<Property>,
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<CvRow>,
}

struct Group {
    train: String,
    data: Dataset,
    assignment: Vec<usize>,
}

/// Held-out residual record: material, then (actual, predicted) per property.
type Held = (String, Vec<(f64, f64)>);

fn groups(dataset: &Dataset, cfg: &CvConfig) -> Result<Vec<Group>> {
    let per_material = |data: &Dataset| -> Result<Vec<usize>> {
        let mut assignment = vec![usize::MAX; data.len()];
        for m in data.sources() {
            let rows = data.material_indices(m);
            let folds = kfold(rows.len(), cfg.k, cfg.seed)?;
            for (pos, &row) in rows.iter().enumerate() {
                assignment[row] = folds.assignment[pos];
            }
        }
        Ok(assignment)
    };
    if cfg.fused {
        cfg.fit_spec().check_sources(dataset)?;
        Ok(vec![Group {
            train: FUSED_LABEL.to_string(),
            assignment: per_material(dataset)?,
            data: dataset.clone(),
        }])
    } else {
        dataset
            .sources()
            .iter()
            .map(|m| {
                let data = dataset.filter_material(m);
                Ok(Group {
                    train: m.clone(),
                    assignment: per_material(&data)?,
                    data,
                })
            })
            .collect()
    }
}

fn run_fold(group: &Group, fold: usize, cfg: &CvConfig) -> Result<Vec<Held>> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, &f) in group.assignment.iter().enumerate() {
        if f == fold {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    assert!(
        train.iter().all(|i| test.binary_search(i).is_err()),
        "train and test rows overlap"
    );
    if train.len() < 2 {
        return Err(Error::InvalidData(format!(
            "fold {fold} of '{}' has {} training rows",
            group.train,
            train.len()
        )));
    }
    let train_set = group.data.subset(&train);
    let fitted = fit_dataset(&train_set, &cfg.fit_spec(), Some(group.data.sources()))?;

    test.iter()
        .map(|&i| {
            let r = &group.data.records()[i];
            let source = cfg.fused.then_some(r.point.material.as_str());
            let features = r.point.features();
            let mut preds = Vec::with_capacity(cfg.properties.len());
            for f in &fitted {
                preds.extend(f.model.predict_raw(&features, source)?.into_iter().map(|p| p.mean));
            }
            let pairs = cfg
                .properties
                .iter()
                .zip(preds)
                .map(|(&prop, yhat)| (r.response(prop), yhat))
                .collect();
            Ok((r.point.material.clone(), pairs))
        })
        .collect()
}

/// k-fold cross-validation. Without fusion each material is validated on
/// its own; with fusion folds are drawn per material, merged, and errors
/// are reported per test material. Normalization is refitted on every
/// training split.
pub fn run_cv(dataset: &Dataset, cfg: &CvConfig) -> Result<CvReport> {
    cfg.fit_spec().validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidData("empty dataset".into()));
    }
    let groups = groups(dataset, cfg)?;
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..cfg.k).map(move |f| (g, f)))
        .collect();
    let results = par::map(jobs.clone(), |(g, f)| run_fold(&groups[g], f, cfg));

    let mut held: Vec<Vec<Vec<Held>>> = groups.iter().map(|_| Vec::new()).collect();
    for ((g, _), res) in jobs.into_iter().zip(results) {
        held[g].push(res?);
    }

    let n_props = cfg.properties.len();
    let mut rows = Vec::new();
    for (group, folds) in groups.iter().zip(held) {
        for material in group.data.sources() {
            let mut fold_rmse = Vec::with_capacity(cfg.k);
            let mut pooled: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_props];
            for (fold, records) in folds.iter().enumerate() {
                let mine: Vec<&Held> = records.iter().filter(|(m, _)| m == material).collect();
                let mut per_prop = Vec::with_capacity(n_props);
                for (p, pool) in pooled.iter_mut().enumerate() {
                    let y: Vec<f64> = mine.iter().map(|(_, v)| v[p].0).collect();
                    let yhat: Vec<f64> = mine.iter().map(|(_, v)| v[p].1).collect();
                    per_prop.push(rmse(&y, &yhat)?);
                    pool.0.extend(y);
                    pool.1.extend(yhat);
                }
                fold_rmse.push(FoldRmse {
                    fold,
                    n_test: mine.len(),
                    rmse: per_prop,
                });
            }
            let mean_rmse = (0..n_props)
                .map(|p| fold_rmse.iter().map(|f| f.rmse[p]).sum::<f64>() / fold_rmse.len() as f64)
                .collect();
            let pooled_rmse = pooled.iter().map(|(y, yhat)| rmse(y, yhat)).collect::<Result<_>>()?;
            rows.push(CvRow {
                train: group.train.clone(),
                test: material.clone(),
                folds: fold_rmse,
                mean_rmse,
                pooled_rmse,
            });
        }
    }
    Ok(CvReport {
        model: cfg.kind,
        fused: cfg.fused,
        properties: cfg.properties.clone(),
        k: cfg.k,
        seed: cfg.seed,
        rows,
    })
}

impl CvReport {
    /// Mean RMSE for one property in the row testing `material`.
    pub fn mean_rmse(&self, material: &str, property: Property) -> Option<f64> {
        let p = self.properties.iter().position(|&q| q == property)?;
        self.rows.iter().find(|r| r.test == material).map(|r| r.mean_rmse[p])
    }

    fn cell(&self, row: &CvRow, prop: Property) -> String {
        self.properties
            .iter()
            .position(|&q| q == prop)
            .map_or_else(String::new, |p| g6(row.mean_rmse[p]))
    }
}

/// Table 3 layout: model, train, test, mean φ RMSE, mean HV RMSE. Blank
/// cells mark properties that were not modeled.
pub fn write_table_csv<W: Write>(reports: &[CvReport], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["model", "train", "test", "phi_rmse", "hv_rmse"])?;
    for rep in reports {
        for row in &rep.rows {
            wtr.write_record([
                rep.model.label(),
                &row.train,
                &row.test,
                &rep.cell(row, Property::Phi),
                &rep.cell(row, Property::Hv),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Long format: one line per (configuration, fold, property).
pub fn write_folds_csv<W: Write>(reports: &[CvReport], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["model", "train", "test", "property", "fold", "n_test", "rmse"])?;
    for rep in reports {
        for row in &rep.rows {
            for (p, prop) in rep.properties.iter().enumerate() {
                for f in &row.folds {
                    wtr.write_record([
                        rep.model.label(),
                        &row.train,
                        &row.test,
                        prop.name(),
                        &f.fold.to_string(),
                        &f.n_test.to_string(),
                        &g6(f.rmse[p]),
                    ])?;
                }
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
