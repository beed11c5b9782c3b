use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ColumnKind, ColumnSpec, DiscreteDataset, Schema, Slot};
use crate::error::{Error, Result};

/// Reads a CSV whose header names match the schema's columns exactly.
///
/// Columns may appear in any order in the file. Unknown categorical labels
/// are rejected; out-of-range numerical values are clamped and counted in
/// [`DiscreteDataset::clamped_cells`].
pub fn read_csv<R: Read>(schema: Arc<Schema>, reader: R) -> Result<DiscreteDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut file_pos = vec![usize::MAX; schema.len()];
    for (pos, name) in headers.iter().enumerate() {
        let col = schema
            .index_of(name)
            .ok_or_else(|| Error::Data(format!("unexpected column `{name}` in CSV header")))?;
        if file_pos[col] != usize::MAX {
            return Err(Error::Data(format!("column `{name}` appears twice in CSV header")));
        }
        file_pos[col] = pos;
    }
    if let Some(missing) = file_pos.iter().position(|&p| p == usize::MAX) {
        return Err(Error::Data(format!(
            "CSV header lacks column `{}`",
            schema.column(missing).name
        )));
    }

    let lookups: Vec<Option<HashMap<&str, u32>>> = schema
        .columns()
        .iter()
        .map(|c| match &c.kind {
            ColumnKind::Categorical { categories } => Some(
                categories
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.as_str(), i as u32))
                    .collect(),
            ),
            ColumnKind::Numerical { .. } => None,
        })
        .collect();

    let mut cat = Vec::new();
    let mut num = Vec::new();
    let mut cat_row = vec![0u32; schema.categorical().len()];
    let mut num_row = vec![0f64; schema.numerical().len()];
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        for (col, spec) in schema.columns().iter().enumerate() {
            let cell = record.get(file_pos[col]).unwrap_or("").trim();
            match (schema.slot(col), &lookups[col]) {
                (Slot::Cat(k), Some(map)) => {
                    cat_row[k] = *map.get(cell).ok_or_else(|| {
                        Error::Data(format!(
                            "record {}: unknown category `{cell}` for column `{}`",
                            line + 1,
                            spec.name
                        ))
                    })?;
                }
                (Slot::Num(k), _) => {
                    num_row[k] = cell.parse::<f64>().map_err(|_| {
                        Error::Data(format!(
                            "record {}: `{cell}` is not a number in column `{}`",
                            line + 1,
                            spec.name
                        ))
                    })?;
                }
                _ => unreachable!(),
            }
        }
        cat.extend_from_slice(&cat_row);
        num.extend_from_slice(&num_row);
    }
    DiscreteDataset::from_parts(schema, cat, num)
}

/// Writes a dataset as CSV in schema column order.
///
/// Numbers are written in shortest round-trip form; categories as labels.
pub fn write_csv<W: Write>(data: &DiscreteDataset, writer: W) -> Result<()> {
    let schema = data.schema();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.columns().iter().map(|c| c.name.as_str()))?;
    let mut record = Vec::with_capacity(schema.len());
    for r in 0..data.rows() {
        record.clear();
        for (col, spec) in schema.columns().iter().enumerate() {
            match (&spec.kind, schema.slot(col)) {
                (ColumnKind::Categorical { categories }, Slot::Cat(k)) => {
                    record.push(categories[data.cat_row(r)[k] as usize].clone());
                }
                (ColumnKind::Numerical { .. }, Slot::Num(k)) => {
                    record.push(format!("{:?}", data.num_row(r)[k]));
                }
                _ => unreachable!(),
            }
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Per-column hints for [`infer_schema`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ColumnOverride {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    #[serde(default)]
    pub is_label: bool,
    /// Force the column to be categorical even if every value parses as a number.
    #[serde(default)]
    pub categorical: bool,
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    /// Non-numeric columns with more distinct values than this are rejected.
    pub max_categories: usize,
    pub overrides: BTreeMap<String, ColumnOverride>,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            max_categories: 64,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferredSchema {
    pub schema: Schema,
    /// Names of numerical columns whose bounds were taken from the data.
    pub data_derived_bounds: Vec<String>,
}

/// Guesses a schema from a CSV.
///
/// Columns whose values all parse as numbers become numerical, with bounds
/// from the overrides or, failing that, from the observed range. Bounds read
/// off the data leak information about it and void the privacy guarantee;
/// such columns are flagged in the result.
pub fn infer_schema<R: Read>(reader: R, opts: &InferOptions) -> Result<InferredSchema> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for name in opts.overrides.keys() {
        if !headers.contains(name) {
            return Err(Error::Parameter(format!("override for unknown column `{name}`")));
        }
    }

    let mut distinct: Vec<BTreeSet<String>> = vec![BTreeSet::new(); headers.len()];
    let mut numeric = vec![true; headers.len()];
    let mut range = vec![(f64::INFINITY, f64::NEG_INFINITY); headers.len()];
    for record in rdr.records() {
        // csv rejects ragged rows by default
        let record = record?;
        for (i, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    range[i].0 = range[i].0.min(v);
                    range[i].1 = range[i].1.max(v);
                }
                _ => numeric[i] = false,
            }
            if distinct[i].len() <= opts.max_categories {
                distinct[i].insert(cell.to_string());
            }
        }
    }

    let mut columns = Vec::with_capacity(headers.len());
    let mut flagged = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        let ov = opts.overrides.get(name).cloned().unwrap_or_default();
        let categorical = !numeric[i] || ov.categorical || ov.is_label;
        let mut spec = if categorical {
            if distinct[i].len() > opts.max_categories {
                return Err(Error::Data(format!(
                    "column `{name}` has more than {} distinct values",
                    opts.max_categories
                )));
            }
            ColumnSpec::categorical(name, distinct[i].iter().cloned())
        } else {
            let (lo, hi) = range[i];
            let derived = ov.lower.is_none() || ov.upper.is_none();
            let lower = ov.lower.unwrap_or(lo);
            let mut upper = ov.upper.unwrap_or(hi);
            if derived {
                flagged.push(name.clone());
                if !(lower < upper) {
                    // constant column: widen so the bounds are valid
                    upper = lower + 1.0;
                }
            }
            let mut spec = ColumnSpec::numerical(name, lower, upper);
            spec.data_derived_bounds = derived;
            spec
        };
        spec.is_label = ov.is_label;
        columns.push(spec);
    }
    Ok(InferredSchema {
        schema: Schema::new(columns)?,
        data_derived_bounds: flagged,
    })
}
