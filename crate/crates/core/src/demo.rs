//! A small planted dataset for examples and tests.
//!
//! Columns: `region` (3 categories), `tier` (4), the binary label `outcome`,
//! and three numerical columns whose location depends on the label. Label
//! and categorical structure is strong enough that a uniform synthetic
//! dataset answers mixed marginals badly.

use std::sync::Arc;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};

use crate::rng::{derive_seed, stream_rng};
use crate::schema::{ColumnSpec, DiscreteDataset, Schema};

pub fn planted_schema() -> Schema {
    Schema::new(vec![
        ColumnSpec::categorical("region", ["north", "south", "west"]),
        ColumnSpec::categorical("tier", ["a", "b", "c", "d"]),
        ColumnSpec::categorical("outcome", ["no", "yes"]).label(),
        ColumnSpec::numerical("income", 0.0, 200.0),
        ColumnSpec::numerical("age", 18.0, 90.0),
        ColumnSpec::numerical("score", 0.0, 1.0),
    ])
    .expect("static schema is valid")
}

/// Deterministic in `seed`.
pub fn planted_dataset(rows: usize, seed: u64) -> DiscreteDataset {
    let schema = Arc::new(planted_schema());
    let mut rng = stream_rng(derive_seed(seed, 0xDE30), 0);
    let region_given_y = [
        WeightedIndex::new([0.6, 0.3, 0.1]).unwrap(),
        WeightedIndex::new([0.1, 0.3, 0.6]).unwrap(),
    ];
    let tier_given_region = [
        WeightedIndex::new([0.55, 0.25, 0.15, 0.05]).unwrap(),
        WeightedIndex::new([0.1, 0.5, 0.3, 0.1]).unwrap(),
        WeightedIndex::new([0.05, 0.1, 0.25, 0.6]).unwrap(),
    ];
    let jitter = Normal::<f64>::new(0.0, 0.06).unwrap();

    let mut cat = Vec::with_capacity(rows * 3);
    let mut num = Vec::with_capacity(rows * 3);
    for _ in 0..rows {
        let y = usize::from(rng.random::<f64>() < 0.3);
        let region = region_given_y[y].sample(&mut rng);
        let tier = tier_given_region[region].sample(&mut rng);
        cat.extend([region as u32, tier as u32, y as u32]);

        let (mu_income, mu_age): (f64, f64) = if y == 1 { (0.75, 0.3) } else { (0.25, 0.65) };
        let income = (mu_income + jitter.sample(&mut rng)).clamp(0.0, 1.0);
        let age = (mu_age + jitter.sample(&mut rng)).clamp(0.0, 1.0);
        let score = (0.6 * income + 0.1 * tier as f64 + jitter.sample(&mut rng)).clamp(0.0, 1.0);
        num.extend([
            schema.denormalize_numeric(3, income),
            schema.denormalize_numeric(4, age),
            schema.denormalize_numeric(5, score),
        ]);
    }
    DiscreteDataset::from_parts(schema, cat, num).expect("generated rows are in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let a = planted_dataset(500, 3);
        assert_eq!(a.rows(), 500);
        assert_eq!(a.clamped_cells(), 0);
        assert_eq!(a.cat_row(7), planted_dataset(500, 3).cat_row(7));
        let yes = (0..500).filter(|&r| a.category(r, 2) == 1).count();
        assert!((100..200).contains(&yes), "{yes}");
    }
}
