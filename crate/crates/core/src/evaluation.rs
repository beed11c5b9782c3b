//! Workload error: mean and max absolute difference of exact query answers
//! between a real and a synthetic dataset.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queries::{answers_discrete, QuerySet};
use crate::schema::{ColumnKind, DiscreteDataset, Schema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub workload: String,
    pub m: usize,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_query: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl ErrorReport {
    pub const CSV_HEADER: [&'static str; 8] = [
        "workload",
        "m",
        "mean_abs_error",
        "max_abs_error",
        "epsilon",
        "delta",
        "seed",
        "config_digest",
    ];

    /// One flat row matching [`ErrorReport::CSV_HEADER`]; absent fields are empty.
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        vec![
            self.workload.clone(),
            self.m.to_string(),
            format!("{:?}", self.mean_abs_error),
            format!("{:?}", self.max_abs_error),
            opt(self.epsilon.map(|e| format!("{e:?}"))),
            opt(self.delta.map(|d| format!("{d:?}"))),
            opt(self.seed.map(|s| s.to_string())),
            opt(self.config_digest.clone()),
        ]
    }

    pub fn write_csv<'a, W: Write>(reports: impl IntoIterator<Item = &'a ErrorReport>, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for r in reports {
            w.write_record(r.csv_record())?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Exact-indicator workload error. The per-query vector is always filled;
/// callers drop it before writing large reports.
pub fn workload_error(real: &DiscreteDataset, synthetic: &DiscreteDataset, workload: &QuerySet) -> Result<ErrorReport> {
    if real.schema() != synthetic.schema() {
        return Err(Error::Schema("real and synthetic datasets have different schemas".into()));
    }
    if workload.is_empty() {
        return Err(Error::Query("workload is empty".into()));
    }
    workload.validate(real.schema())?;
    let a = answers_discrete(workload.queries(), real)?;
    let b = answers_discrete(workload.queries(), synthetic)?;
    let errors: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let max = errors.iter().copied().fold(0.0, f64::max);
    Ok(ErrorReport {
        workload: workload.provenance.generator.clone(),
        m: errors.len(),
        mean_abs_error: mean,
        max_abs_error: max,
        per_query: Some(errors),
        epsilon: None,
        delta: None,
        seed: None,
        config_digest: None,
    })
}

/// Control arm: every cell drawn independently and uniformly over its domain.
pub fn uniform_baseline<R: Rng + ?Sized>(schema: Arc<Schema>, rows: usize, rng: &mut R) -> Result<DiscreteDataset> {
    if rows == 0 {
        return Err(Error::Parameter("baseline needs at least one row".into()));
    }
    let cat_cols = schema.categorical();
    let num_cols = schema.numerical();
    let mut cat = Vec::with_capacity(rows * cat_cols.len());
    let mut num = Vec::with_capacity(rows * num_cols.len());
    for _ in 0..rows {
        for &c in cat_cols {
            cat.push(rng.random_range(0..schema.arity(c).expect("categorical column") as u32));
        }
        for &c in num_cols {
            if let ColumnKind::Numerical { lower, upper } = schema.column(c).kind {
                num.push(lower + (upper - lower) * rng.random::<f64>());
            }
        }
    }
    DiscreteDataset::from_parts(schema, cat, num)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries::{Provenance, StatQuery};
    use crate::rng::stream_rng;
    use crate::schema::ColumnSpec;

    fn schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(vec![
                ColumnSpec::categorical("c", ["a", "b"]),
                ColumnSpec::numerical("x", 0.0, 1.0),
            ])
            .unwrap(),
        )
    }

    fn data(cats: &[u32]) -> DiscreteDataset {
        let num = vec![0.5; cats.len()];
        DiscreteDataset::from_parts(schema(), cats.to_vec(), num).unwrap()
    }

    fn one_query() -> QuerySet {
        QuerySet::new(
            Provenance::default(),
            vec![StatQuery::CategoricalMarginal {
                columns: vec![0],
                values: vec![0],
            }],
        )
    }

    #[test]
    fn identity_and_single_query() {
        let real = data(&[0, 0, 0, 0, 0, 0, 0, 1, 1, 1]);
        let r = workload_error(&real, &real, &one_query()).unwrap();
        assert_eq!((r.mean_abs_error, r.max_abs_error), (0.0, 0.0));

        let synth = data(&[0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
        let r = workload_error(&real, &synth, &one_query()).unwrap();
        assert!((r.mean_abs_error - 0.3).abs() < 1e-12);
        assert_eq!(r.mean_abs_error, r.max_abs_error);
        let back = workload_error(&synth, &real, &one_query()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn schema_mismatch() {
        let other = Arc::new(Schema::new(vec![ColumnSpec::categorical("c", ["a", "b"])]).unwrap());
        let d2 = DiscreteDataset::from_parts(other, vec![0], vec![]).unwrap();
        assert!(matches!(
            workload_error(&data(&[0]), &d2, &one_query()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn baseline_frequencies() {
        let d = uniform_baseline(schema(), 100_000, &mut stream_rng(1, 0)).unwrap();
        let ones = (0..d.rows()).filter(|&r| d.category(r, 0) == 1).count() as f64 / 1e5;
        let mean = (0..d.rows()).map(|r| d.value(r, 1)).sum::<f64>() / 1e5;
        assert!((ones - 0.5).abs() <= 0.005, "{ones}");
        assert!((mean - 0.5).abs() <= 0.005, "{mean}");

        let one = uniform_baseline(schema(), 1, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(one.rows(), 1);
        assert!(uniform_baseline(schema(), 0, &mut stream_rng(1, 0)).is_err());
    }

    #[test]
    fn csv_row_shape() {
        let real = data(&[0, 1]);
        let r = workload_error(&real, &real, &one_query()).unwrap();
        let mut out = Vec::new();
        ErrorReport::write_csv([&r, &r], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<ErrorReport>(&json).unwrap(), r);
    }
}
