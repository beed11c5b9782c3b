//! Statistical queries over mixed-type rows: exact evaluation on concrete
//! data, tempered-sigmoid evaluation on relaxed data, the squared-error
//! objective with its gradient, and random workload generators.
//!
//! Thresholds and linear weights always live on the normalized [0, 1]
//! feature scale. Threshold conditions use `x <= tau`; on relaxed data the
//! indicator becomes `1 / (1 + exp(sigma * (x - tau)))`, which tends to the
//! indicator as `sigma` grows and equals 0.5 at `x == tau`.
//!
//! Linear-threshold weights are drawn as `N(0, 1) / sqrt(|R|)` where `|R|`
//! is the number of numerical columns, so `E[|theta|^2] = 1`.

mod eval;
mod generate;

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Schema, Slot};

pub use eval::{
    answers_discrete, answers_relaxed, answers_relaxed_step, eval_discrete, eval_relaxed,
    loss_and_grad, Gradient, Objective,
};
pub use generate::{gen_cm_queries, gen_lt_queries, gen_mm_queries, gen_prefix_queries};

/// One statistical query. Column indices refer to schema columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatQuery {
    /// Rows whose categorical `columns` take exactly `values`.
    CategoricalMarginal { columns: Vec<usize>, values: Vec<usize> },
    /// Rows with every numerical `columns[j] <= thresholds[j]`.
    PrefixMarginal { columns: Vec<usize>, thresholds: Vec<f64> },
    /// Conjunction of a categorical marginal and a prefix condition.
    MixedMarginal {
        cat_columns: Vec<usize>,
        values: Vec<usize>,
        num_columns: Vec<usize>,
        thresholds: Vec<f64>,
    },
    /// Rows with `label == value` and `<weights, x[columns]> <= threshold`.
    ClassCondLinearThreshold {
        label: usize,
        value: usize,
        columns: Vec<usize>,
        weights: Vec<f64>,
        threshold: f64,
    },
}

impl StatQuery {
    pub fn kind_name(&self) -> &'static str {
        match self {
            StatQuery::CategoricalMarginal { .. } => "categorical_marginal",
            StatQuery::PrefixMarginal { .. } => "prefix_marginal",
            StatQuery::MixedMarginal { .. } => "mixed_marginal",
            StatQuery::ClassCondLinearThreshold { .. } => "class_cond_linear_threshold",
        }
    }

    /// Whether the relaxed form contains a sigmoid factor.
    pub fn has_threshold(&self) -> bool {
        !matches!(self, StatQuery::CategoricalMarginal { .. })
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let mut seen = HashSet::new();
        let mut check_col = |col: usize, want_cat: bool| -> Result<()> {
            if col >= schema.len() {
                return Err(Error::Query(format!("column index {col} out of range")));
            }
            if !seen.insert(col) {
                return Err(Error::Query(format!("column {col} used twice")));
            }
            match (schema.slot(col), want_cat) {
                (Slot::Cat(_), true) | (Slot::Num(_), false) => Ok(()),
                _ => Err(Error::Query(format!(
                    "column `{}` has the wrong kind for this query",
                    schema.column(col).name
                ))),
            }
        };
        let check_values = |cols: &[usize], values: &[usize]| -> Result<()> {
            if cols.len() != values.len() {
                return Err(Error::Query("categorical columns and values differ in length".into()));
            }
            for (&c, &v) in cols.iter().zip(values) {
                if v >= schema.arity(c).unwrap_or(0) {
                    return Err(Error::Query(format!(
                        "category index {v} out of range for column `{}`",
                        schema.column(c).name
                    )));
                }
            }
            Ok(())
        };
        let check_reals = |len: usize, reals: &[f64], what: &str| -> Result<()> {
            if len != reals.len() {
                return Err(Error::Query(format!("{what} length does not match the column count")));
            }
            if reals.iter().any(|x| !x.is_finite()) {
                return Err(Error::Query(format!("non-finite {what}")));
            }
            Ok(())
        };

        match self {
            StatQuery::CategoricalMarginal { columns, values } => {
                for &c in columns {
                    check_col(c, true)?;
                }
                check_values(columns, values)
            }
            StatQuery::PrefixMarginal { columns, thresholds } => {
                for &c in columns {
                    check_col(c, false)?;
                }
                check_reals(columns.len(), thresholds, "thresholds")
            }
            StatQuery::MixedMarginal {
                cat_columns,
                values,
                num_columns,
                thresholds,
            } => {
                for &c in cat_columns {
                    check_col(c, true)?;
                }
                for &c in num_columns {
                    check_col(c, false)?;
                }
                check_values(cat_columns, values)?;
                check_reals(num_columns.len(), thresholds, "thresholds")
            }
            StatQuery::ClassCondLinearThreshold {
                label,
                value,
                columns,
                weights,
                threshold,
            } => {
                check_col(*label, true)?;
                if !schema.column(*label).is_label {
                    return Err(Error::Query(format!(
                        "column `{}` is not a label column",
                        schema.column(*label).name
                    )));
                }
                for &c in columns {
                    check_col(c, false)?;
                }
                check_values(&[*label], &[*value])?;
                check_reals(columns.len(), weights, "weights")?;
                check_reals(1, &[*threshold], "threshold")
            }
        }
    }
}

/// Parameters of the inverse-temperature sigmoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidParams {
    sigma: f64,
}

impl SigmoidParams {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(SigmoidParams { sigma })
        } else {
            Err(Error::Parameter(format!("inverse temperature must be positive, got {sigma}")))
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// How a query set was produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

/// Ordered queries; a query's id is its position.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub provenance: Provenance,
    queries: Vec<StatQuery>,
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    id: usize,
    #[serde(flatten)]
    query: StatQuery,
}

#[derive(Serialize, Deserialize)]
struct QuerySetFile {
    provenance: Provenance,
    queries: Vec<QueryRecord>,
}

impl QuerySet {
    pub fn new(provenance: Provenance, queries: Vec<StatQuery>) -> Self {
        QuerySet { provenance, queries }
    }

    pub fn queries(&self) -> &[StatQuery] {
        &self.queries
    }

    pub fn get(&self, id: usize) -> Option<&StatQuery> {
        self.queries.get(id)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for (id, q) in self.queries.iter().enumerate() {
            q.validate(schema)
                .map_err(|e| Error::Query(format!("query {id}: {e}")))?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = QuerySetFile {
            provenance: self.provenance.clone(),
            queries: self
                .queries
                .iter()
                .enumerate()
                .map(|(id, q)| QueryRecord { id, query: q.clone() })
                .collect(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut out = Vec::new();
        self.write_json(&mut out).expect("in-memory write");
        String::from_utf8(out).expect("json is utf-8")
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let file: QuerySetFile = serde_json::from_reader(reader)?;
        let mut queries = Vec::with_capacity(file.queries.len());
        for (pos, rec) in file.queries.into_iter().enumerate() {
            if rec.id != pos {
                return Err(Error::Query(format!(
                    "query ids must be 0..m-1 in order; found id {} at position {pos}",
                    rec.id
                )));
            }
            queries.push(rec.query);
        }
        Ok(QuerySet {
            provenance: file.provenance,
            queries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnSpec;

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::categorical("a", ["x", "y"]),
            ColumnSpec::numerical("n", 0.0, 1.0),
            ColumnSpec::categorical("label", ["0", "1"]).label(),
            ColumnSpec::numerical("m", 0.0, 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn validation() {
        let s = schema();
        let ok = StatQuery::ClassCondLinearThreshold {
            label: 2,
            value: 1,
            columns: vec![1, 3],
            weights: vec![0.5, -0.5],
            threshold: 0.1,
        };
        ok.validate(&s).unwrap();

        let not_label = StatQuery::ClassCondLinearThreshold {
            label: 0,
            value: 1,
            columns: vec![1],
            weights: vec![1.0],
            threshold: 0.0,
        };
        assert!(not_label.validate(&s).is_err());

        let wrong_kind = StatQuery::PrefixMarginal {
            columns: vec![0],
            thresholds: vec![0.5],
        };
        assert!(wrong_kind.validate(&s).is_err());

        let dup = StatQuery::CategoricalMarginal {
            columns: vec![0, 0],
            values: vec![0, 1],
        };
        assert!(dup.validate(&s).is_err());

        let bad_value = StatQuery::CategoricalMarginal {
            columns: vec![0],
            values: vec![2],
        };
        assert!(bad_value.validate(&s).is_err());

        let short = StatQuery::MixedMarginal {
            cat_columns: vec![0],
            values: vec![0],
            num_columns: vec![1, 3],
            thresholds: vec![0.5],
        };
        assert!(short.validate(&s).is_err());
    }

    #[test]
    fn sigmoid_params_positive() {
        assert!(SigmoidParams::new(0.0).is_err());
        assert!(SigmoidParams::new(-1.0).is_err());
        assert!(SigmoidParams::new(f64::NAN).is_err());
        assert_eq!(SigmoidParams::new(2.0).unwrap().sigma(), 2.0);
    }

    #[test]
    fn file_rejects_out_of_order_ids() {
        let text = r#"{"provenance":{"generator":"hand"},"queries":[
            {"id":1,"kind":"prefix_marginal","columns":[1],"thresholds":[0.5]}]}"#;
        assert!(QuerySet::read_json(text.as_bytes()).is_err());
    }

    #[test]
    fn file_format_shape() {
        let qs = QuerySet::new(
            Provenance {
                generator: "hand".into(),
                seed: Some(3),
                params: BTreeMap::new(),
            },
            vec![StatQuery::PrefixMarginal {
                columns: vec![1],
                thresholds: vec![0.1],
            }],
        );
        let v: serde_json::Value = serde_json::from_str(&qs.to_json()).unwrap();
        assert_eq!(v["queries"][0]["id"], 0);
        assert_eq!(v["queries"][0]["kind"], "prefix_marginal");
        assert_eq!(v["queries"][0]["thresholds"][0], 0.1);
        assert_eq!(v["provenance"]["seed"], 3);
    }
}
