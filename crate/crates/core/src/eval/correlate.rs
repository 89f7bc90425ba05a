use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use super::stats::{pearson, spearman};
use crate::dataset::{Dataset, Property};
use crate::error::{Error, Result};
use crate::kernels;
use crate::numfmt::g6;

/// Pearson and Spearman matrices over (material, property) pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub labels: Vec<String>,
    #[serde(serialize_with = "rows")]
    pub pearson: DMatrix<f64>,
    #[serde(serialize_with = "rows")]
    pub spearman: DMatrix<f64>,
    pub n: usize,
}

fn rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    kernels::to_rows(m).serialize(s)
}

fn single_material(d: &Dataset) -> Result<String> {
    match d.sources() {
        [m] => Ok(m.clone()),
        [] => Err(Error::InvalidData("empty dataset".into())),
        many => Err(Error::InvalidData(format!(
            "correlation input must hold one material, found {}",
            many.join(", ")
        ))),
    }
}

/// Joins two single-material datasets on sample id and correlates
/// {material} × {φ, HV}. Matched rows must share process parameters.
pub fn correlation_table(a: &Dataset, b: &Dataset) -> Result<CorrelationTable> {
    let (ma, mut mb) = (single_material(a)?, single_material(b)?);
    if ma == mb {
        mb = format!("{mb}#2");
    }
    let index_b: HashMap<&str, usize> = b
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id.as_str(), i))
        .collect();
    let ids_a: std::collections::HashSet<&str> = a.records().iter().map(|r| r.sample_id.as_str()).collect();
    let mut missing: Vec<String> = a
        .records()
        .iter()
        .filter(|r| !index_b.contains_key(r.sample_id.as_str()))
        .map(|r| format!("{} (only in {ma})", r.sample_id))
        .collect();
    missing.extend(
        b.records()
            .iter()
            .filter(|r| !ids_a.contains(r.sample_id.as_str()))
            .map(|r| format!("{} (only in {mb})", r.sample_id)),
    );
    if !missing.is_empty() {
        return Err(Error::InvalidData(format!("unmatched sample ids: {}", missing.join(", "))));
    }

    let mut columns: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(a.len())).collect();
    let mut mismatched = Vec::new();
    for ra in a.records() {
        let rb = &b.records()[index_b[ra.sample_id.as_str()]];
        if ra.point.features() != rb.point.features() {
            mismatched.push(ra.sample_id.clone());
        }
        columns[0].push(ra.phi);
        columns[1].push(ra.hv);
        columns[2].push(rb.phi);
        columns[3].push(rb.hv);
    }
    if !mismatched.is_empty() {
        return Err(Error::InvalidData(format!(
            "process parameters differ for sample ids: {}",
            mismatched.join(", ")
        )));
    }

    let labels = [&ma, &ma, &mb, &mb]
        .iter()
        .zip(Property::ALL.iter().cycle())
        .map(|(m, p)| format!("{m}_{p}"))
        .collect();
    let table = CorrelationTable {
        labels,
        pearson: matrix(&columns, pearson)?,
        spearman: matrix(&columns, spearman)?,
        n: a.len(),
    };
    for m in [&table.pearson, &table.spearman] {
        assert!(m == &m.transpose());
        assert!((0..4).all(|i| m[(i, i)] == 1.0));
        assert!(m.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    Ok(table)
}

fn matrix(columns: &[Vec<f64>], f: fn(&[f64], &[f64]) -> Result<f64>) -> Result<DMatrix<f64>> {
    let g = columns.len();
    let mut m = DMatrix::identity(g, g);
    for i in 0..g {
        for j in i + 1..g {
            let v = f(&columns[i], &columns[j])?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

impl CorrelationTable {
    /// Long format: one row per (method, row label, column label).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["method", "row", "column", "value"])?;
        for (method, m) in [("pearson", &self.pearson), ("spearman", &self.spearman)] {
            for (i, ri) in self.labels.iter().enumerate() {
                for (j, cj) in self.labels.iter().enumerate() {
                    wtr.write_record([method, ri, cj, &g6(m[(i, j)])])?;
                }
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// One VED-versus-property point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VedPoint {
    pub material: String,
    pub sample_id: String,
    pub ved: f64,
    pub log10_ved: f64,
    pub property: Property,
    pub value: f64,
}

/// Long-format VED scatter: one row per sample and property.
pub fn ved_scatter(datasets: &[&Dataset]) -> Result<Vec<VedPoint>> {
    let mut out = Vec::new();
    for d in datasets {
        for r in d.records() {
            let ved = r.point.ved()?;
            for prop in Property::ALL {
                out.push(VedPoint {
                    material: r.point.material.clone(),
                    sample_id: r.sample_id.clone(),
                    ved,
                    log10_ved: ved.log10(),
                    property: prop,
                    value: r.response(prop),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_ved_csv<W: Write>(points: &[VedPoint], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["material", "sample_id", "ved", "log10_ved", "property", "value"])?;
    for p in points {
        wtr.write_record([
            p.material.as_str(),
            &p.sample_id,
            &g6(p.ved),
            &g6(p.log10_ved),
            p.property.name(),
            &g6(p.value),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
