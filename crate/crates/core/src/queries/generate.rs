use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::{Provenance, QuerySet, StatQuery};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::schema::Schema;

fn provenance(generator: &str, seed: Option<u64>, params: BTreeMap<String, serde_json::Value>) -> Provenance {
    Provenance {
        generator: generator.to_string(),
        seed,
        params,
    }
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parameter(msg.to_string()))
    }
}

/// Every 3-way categorical marginal over two distinct non-label categorical
/// columns and one label column, for all value combinations.
///
/// Ordered lexicographically by (first, second, label) column index, then by
/// value indices.
pub fn gen_cm_queries(schema: &Schema) -> Result<QuerySet> {
    let features = schema.categorical_features();
    let labels = schema.labels();
    require(
        features.len() >= 2 && !labels.is_empty(),
        "insufficient categorical/label columns: need at least two non-label categorical columns and one label",
    )?;
    let mut triples = Vec::new();
    for (i, &a) in features.iter().enumerate() {
        for &b in &features[i + 1..] {
            for &l in labels {
                triples.push([a, b, l]);
            }
        }
    }
    triples.sort_unstable();

    let mut queries = Vec::new();
    for cols in triples {
        let [na, nb, nl] = cols.map(|c| schema.arity(c).unwrap());
        for va in 0..na {
            for vb in 0..nb {
                for vl in 0..nl {
                    queries.push(StatQuery::CategoricalMarginal {
                        columns: cols.to_vec(),
                        values: vec![va, vb, vl],
                    });
                }
            }
        }
    }
    Ok(QuerySet::new(provenance("cm", None, BTreeMap::new()), queries))
}

fn pick_label<R: Rng + ?Sized>(schema: &Schema, rng: &mut R) -> (usize, usize) {
    let labels = schema.labels();
    let label = labels[rng.random_range(0..labels.len())];
    let value = rng.random_range(0..schema.arity(label).unwrap());
    (label, value)
}

/// `m` random 3-way mixed marginals: one label condition and two distinct
/// numerical columns with thresholds uniform on the normalized scale.
pub fn gen_mm_queries(schema: &Schema, m: usize, seed: u64) -> Result<QuerySet> {
    let num = schema.numerical();
    require(num.len() >= 2, "mixed marginals need at least two numerical columns")?;
    require(!schema.labels().is_empty(), "mixed marginals need a label column")?;
    require(m >= 1, "query count must be at least 1")?;
    let mut rng = stream_rng(seed, 0);
    let queries = (0..m)
        .map(|_| {
            let i = rng.random_range(0..num.len());
            let mut j = rng.random_range(0..num.len() - 1);
            if j >= i {
                j += 1;
            }
            let (a, b) = (i.min(j), i.max(j));
            let thresholds = vec![rng.random::<f64>(), rng.random::<f64>()];
            let (label, value) = pick_label(schema, &mut rng);
            StatQuery::MixedMarginal {
                cat_columns: vec![label],
                values: vec![value],
                num_columns: vec![num[a], num[b]],
                thresholds,
            }
        })
        .collect();
    let params = BTreeMap::from([("m".to_string(), json!(m))]);
    Ok(QuerySet::new(provenance("mm", Some(seed), params), queries))
}

/// `m` random class-conditional linear thresholds over all numerical columns.
///
/// Weights are `N(0, 1) / sqrt(|R|)`, the threshold is `N(0, 1)`, and the
/// label column and its value are uniform.
pub fn gen_lt_queries(schema: &Schema, m: usize, seed: u64) -> Result<QuerySet> {
    let num = schema.numerical();
    require(!num.is_empty(), "linear thresholds need at least one numerical column")?;
    require(!schema.labels().is_empty(), "linear thresholds need a label column")?;
    require(m >= 1, "query count must be at least 1")?;
    let scale = (num.len() as f64).sqrt();
    let mut rng = stream_rng(seed, 0);
    let queries = (0..m)
        .map(|_| {
            let weights = (0..num.len())
                .map(|_| rng.sample::<f64, _>(StandardNormal) / scale)
                .collect();
            let threshold = rng.sample(StandardNormal);
            let (label, value) = pick_label(schema, &mut rng);
            StatQuery::ClassCondLinearThreshold {
                label,
                value,
                columns: num.to_vec(),
                weights,
                threshold,
            }
        })
        .collect();
    let params = BTreeMap::from([("m".to_string(), json!(m))]);
    Ok(QuerySet::new(provenance("lt", Some(seed), params), queries))
}

/// `m` random `k`-way prefix marginals with uniform thresholds.
pub fn gen_prefix_queries(schema: &Schema, m: usize, k: usize, seed: u64) -> Result<QuerySet> {
    let num = schema.numerical();
    require(k >= 1 && num.len() >= k, "prefix queries need at least k numerical columns")?;
    require(m >= 1, "query count must be at least 1")?;
    let mut rng = stream_rng(seed, 0);
    let queries = (0..m)
        .map(|_| {
            let mut cols = rand::seq::index::sample(&mut rng, num.len(), k).into_vec();
            cols.sort_unstable();
            StatQuery::PrefixMarginal {
                columns: cols.iter().map(|&c| num[c]).collect(),
                thresholds: (0..k).map(|_| rng.random::<f64>()).collect(),
            }
        })
        .collect();
    let params = BTreeMap::from([("m".to_string(), json!(m)), ("k".to_string(), json!(k))]);
    Ok(QuerySet::new(provenance("prefix", Some(seed), params), queries))
}
