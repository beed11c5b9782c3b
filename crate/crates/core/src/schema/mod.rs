//! Tabular data domain: column declarations, the one-hot relaxation layout,
//! concrete and relaxed datasets, and conversion between them.

mod dataset;
mod io;

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    encode, project_to_feasible, random_relaxed, sample_discrete, DiscreteDataset,
    RelaxedDataset, FEASIBILITY_TOL,
};
pub use io::{infer_schema, read_csv, write_csv, ColumnOverride, InferOptions, InferredSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical { categories: Vec<String> },
    Numerical { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    #[serde(default)]
    pub is_label: bool,
    /// Set when numerical bounds were read off the data rather than declared.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub data_derived_bounds: bool,
}

impl ColumnSpec {
    pub fn categorical<S: Into<String>>(name: &str, categories: impl IntoIterator<Item = S>) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
            is_label: false,
            data_derived_bounds: false,
        }
    }

    pub fn numerical(name: &str, lower: f64, upper: f64) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Numerical { lower, upper },
            is_label: false,
            data_derived_bounds: false,
        }
    }

    pub fn label(mut self) -> Self {
        self.is_label = true;
        self
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            ColumnKind::Categorical { categories } => {
                if categories.is_empty() {
                    return Err(Error::Schema(format!("column `{}` has no categories", self.name)));
                }
                let mut seen = HashSet::new();
                for c in categories {
                    if !seen.insert(c.as_str()) {
                        return Err(Error::Schema(format!(
                            "column `{}` lists category `{c}` twice",
                            self.name
                        )));
                    }
                }
            }
            ColumnKind::Numerical { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return Err(Error::Schema(format!(
                        "column `{}` needs finite bounds with lower < upper, got [{lower}, {upper}]",
                        self.name
                    )));
                }
                if self.is_label {
                    return Err(Error::Schema(format!(
                        "label column `{}` must be categorical",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Where a schema column lives in the packed categorical / numerical storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Position among the categorical columns.
    Cat(usize),
    /// Position among the numerical columns.
    Num(usize),
}

/// Ordered column declarations plus the derived one-hot layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
    slots: Vec<Slot>,
    categorical: Vec<usize>,
    numerical: Vec<usize>,
    labels: Vec<usize>,
    offsets: Vec<usize>,
    one_hot_width: usize,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut names = HashSet::new();
        for col in &columns {
            col.validate()?;
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", col.name)));
            }
        }

        let mut slots = Vec::with_capacity(columns.len());
        let mut categorical = Vec::new();
        let mut numerical = Vec::new();
        let mut labels = Vec::new();
        let mut offsets = Vec::new();
        let mut width = 0;
        for (i, col) in columns.iter().enumerate() {
            match &col.kind {
                ColumnKind::Categorical { categories } => {
                    slots.push(Slot::Cat(categorical.len()));
                    categorical.push(i);
                    offsets.push(width);
                    width += categories.len();
                }
                ColumnKind::Numerical { .. } => {
                    slots.push(Slot::Num(numerical.len()));
                    numerical.push(i);
                }
            }
            if col.is_label {
                labels.push(i);
            }
        }

        Ok(Schema {
            columns,
            slots,
            categorical,
            numerical,
            labels,
            offsets,
            one_hot_width: width,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)?;
        Schema::new(file.columns)
    }

    pub fn to_json(&self) -> String {
        let file = SchemaFile {
            columns: self.columns.clone(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &ColumnSpec {
        &self.columns[index]
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn slot(&self, column: usize) -> Slot {
        self.slots[column]
    }

    /// Schema indices of categorical columns, labels included.
    pub fn categorical(&self) -> &[usize] {
        &self.categorical
    }

    pub fn numerical(&self) -> &[usize] {
        &self.numerical
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Categorical columns that are not labels.
    pub fn categorical_features(&self) -> Vec<usize> {
        self.categorical
            .iter()
            .copied()
            .filter(|&i| !self.columns[i].is_label)
            .collect()
    }

    pub fn one_hot_width(&self) -> usize {
        self.one_hot_width
    }

    /// Number of categories of a categorical column, `None` for numerical ones.
    pub fn arity(&self, column: usize) -> Option<usize> {
        match &self.columns[column].kind {
            ColumnKind::Categorical { categories } => Some(categories.len()),
            ColumnKind::Numerical { .. } => None,
        }
    }

    /// Range of the one-hot block of a categorical column.
    ///
    /// Panics if `column` is numerical.
    pub fn one_hot_range(&self, column: usize) -> Range<usize> {
        match self.slots[column] {
            Slot::Cat(k) => {
                let start = self.offsets[k];
                start..start + self.arity(column).unwrap()
            }
            Slot::Num(_) => panic!("column {column} is numerical"),
        }
    }

    /// One-hot block ranges in categorical-slot order.
    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.categorical.iter().map(|&c| self.one_hot_range(c))
    }

    pub fn bounds(&self, column: usize) -> Option<(f64, f64)> {
        match self.columns[column].kind {
            ColumnKind::Numerical { lower, upper } => Some((lower, upper)),
            ColumnKind::Categorical { .. } => None,
        }
    }

    /// Min-max scales a raw value of numerical `column` onto [0, 1], clamping.
    pub fn normalize_numeric(&self, column: usize, raw: f64) -> f64 {
        let (lower, upper) = self
            .bounds(column)
            .unwrap_or_else(|| panic!("column {column} is not numerical"));
        ((raw - lower) / (upper - lower)).clamp(0.0, 1.0)
    }

    pub fn denormalize_numeric(&self, column: usize, scaled: f64) -> f64 {
        let (lower, upper) = self
            .bounds(column)
            .unwrap_or_else(|| panic!("column {column} is not numerical"));
        lower + scaled * (upper - lower)
    }
}
