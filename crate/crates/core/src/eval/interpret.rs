use std::io::Write;

use serde::Serialize;

use crate::dataset::{median, FeatureKind};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numfmt::g6;
use crate::par;

/// Smallest correlation drop across the unit input range, and smallest
/// signal share σ²/(σ² + nugget), for a feature to count as influential.
pub const INFLUENCE_THRESHOLD: f64 = 0.05;

/// Floor on z² before taking logs, so a collapsed source axis reports a
/// finite exponent.
const Z2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthscaleEntry {
    pub name: String,
    /// log10 inverse squared lengthscale; for the source axis, the
    /// exponent with the same meaning on a 0/1 indicator, `log10 z²`.
    pub omega: f64,
    pub influential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthscaleReport {
    pub features: Vec<LengthscaleEntry>,
    pub source: Option<LengthscaleEntry>,
    pub z: Option<f64>,
    pub sigma2: f64,
    pub nugget: f64,
    pub beta: Vec<f64>,
    /// All entries (source included) by descending ω.
    pub ranking: Vec<String>,
    pub most_influential: String,
    pub least_influential: String,
}

/// Lengthscale table for one model. Larger ω means correlation decays
/// faster along that input, so the input matters more.
pub fn lengthscale_report(model: &Model) -> LengthscaleReport {
    let hp = model.hyperparams();
    let norm = model.normalization();
    let share = hp.sigma2 / (hp.sigma2 + hp.nugget);
    let influential = |omega: f64| share >= INFLUENCE_THRESHOLD && 1.0 - (-(10f64.powf(omega))).exp() >= INFLUENCE_THRESHOLD;
    let features: Vec<LengthscaleEntry> = norm
        .features
        .iter()
        .zip(&hp.omega)
        .map(|(f, &omega)| LengthscaleEntry {
            name: f.name.clone(),
            omega,
            influential: influential(omega),
        })
        .collect();
    let source = hp.z.map(|z| {
        let omega = (z * z).max(Z2_FLOOR).log10();
        LengthscaleEntry {
            name: "s".into(),
            omega,
            influential: influential(omega),
        }
    });
    let mut all: Vec<&LengthscaleEntry> = features.iter().chain(source.as_ref()).collect();
    all.sort_by(|a, b| b.omega.total_cmp(&a.omega));
    let ranking: Vec<String> = all.iter().map(|e| e.name.clone()).collect();
    LengthscaleReport {
        most_influential: ranking.first().cloned().unwrap_or_default(),
        least_influential: ranking.last().cloned().unwrap_or_default(),
        ranking,
        features,
        source,
        z: hp.z,
        sigma2: hp.sigma2,
        nugget: hp.nugget,
        beta: hp.beta.clone(),
    }
}

/// Table 4 layout: one row per model with columns p, v, l, h, sr and,
/// when any model is fused, s (blank for unfused rows).
pub fn write_lengthscale_csv<W: Write>(rows: &[(String, String, LengthscaleReport)], w: W) -> Result<()> {
    let fused = rows.iter().any(|(_, _, r)| r.source.is_some());
    let names: Vec<String> = rows
        .first()
        .map(|(_, _, r)| r.features.iter().map(|e| e.name.clone()).collect())
        .unwrap_or_default();
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["model".to_string(), "train".to_string()];
    header.extend(names.iter().cloned());
    if fused {
        header.push("s".into());
    }
    wtr.write_record(&header)?;
    for (model, train, r) in rows {
        let mut rec = vec![model.clone(), train.clone()];
        rec.extend(r.features.iter().map(|e| g6(e.omega)));
        if fused {
            rec.push(r.source.as_ref().map_or_else(String::new, |s| g6(s.omega)));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub source: Option<String>,
    pub response: String,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalSweep {
    pub feature: String,
    pub grid: Vec<f64>,
    /// Raw-unit values of every input at the sweep's base point.
    pub base: Vec<f64>,
    pub points: Vec<SweepPoint>,
}

/// Equally spaced grid over `[lo, hi]`; one point gives the midpoint.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Posterior mean and ±2σ band along one raw-unit feature, with the other
/// continuous inputs at their training medians and binary inputs at their
/// training mode. Fused models get one curve per source.
pub fn marginal_sweep(model: &Model, feature: &str, grid_size: usize) -> Result<MarginalSweep> {
    let norm = model.normalization();
    let j = norm
        .feature_index(feature)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown feature '{feature}'")))?;
    if grid_size == 0 {
        return Err(Error::InvalidArgument("grid size must be >= 1".into()));
    }
    let raw = model.raw_inputs();
    let column = |c: usize| -> Vec<f64> { raw.column(c).iter().copied().collect() };
    let base: Vec<f64> = norm
        .features
        .iter()
        .enumerate()
        .map(|(c, f)| match f.kind {
            FeatureKind::Continuous => median(&column(c)),
            FeatureKind::Binary => {
                let col = column(c);
                let mid = 0.5 * (f.min + f.max);
                let high = col.iter().filter(|&&v| v > mid).count();
                if 2 * high > col.len() {
                    f.max
                } else {
                    f.min
                }
            }
        })
        .collect();
    let xs = column(j);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = linspace(lo, hi, grid_size);

    let sources: Vec<Option<String>> = match model.sources() {
        Some(s) if model.is_fused() => s.labels.iter().cloned().map(Some).collect(),
        _ => vec![None],
    };
    let responses = model.responses();
    let jobs: Vec<(Option<String>, f64)> = sources
        .iter()
        .flat_map(|s| grid.iter().map(move |&x| (s.clone(), x)))
        .collect();
    let evaluated = par::map(jobs, |(source, x)| -> Result<Vec<SweepPoint>> {
        let mut input = base.clone();
        input[j] = x;
        let preds = model.predict_raw(&input, source.as_deref())?;
        Ok(preds
            .into_iter()
            .zip(&responses)
            .map(|(p, name)| {
                let std = p.std();
                SweepPoint {
                    source: source.clone(),
                    response: name.clone(),
                    x,
                    mean: p.mean,
                    std,
                    lower: p.mean - 2.0 * std,
                    upper: p.mean + 2.0 * std,
                }
            })
            .collect::<Vec<_>>())
    });
    let mut points = Vec::with_capacity(evaluated.len() * responses.len());
    for e in evaluated {
        points.extend(e?);
    }
    Ok(MarginalSweep {
        feature: feature.to_string(),
        grid,
        base,
        points,
    })
}

impl MarginalSweep {
    /// One row per (grid point, source, response).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["feature", "source", "response", "x", "mean", "lower", "upper"])?;
        for p in &self.points {
            wtr.write_record([
                self.feature.as_str(),
                p.source.as_deref().unwrap_or(""),
                &p.response,
                &g6(p.x),
                &g6(p.mean),
                &g6(p.lower),
                &g6(p.upper),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
