use std::sync::Arc;

use rand::Rng;

use super::{Schema, Slot};
use crate::error::{Error, Result};
use crate::rng::{open_unit, stream_rng};

/// Tolerance on categorical block sums for a relaxed row to count as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

// Blocks this close to normalized are left untouched by projection.
const NORMALIZED_TOL: f64 = 1e-12;

/// Concrete rows over a schema.
///
/// Categorical cells are stored as category indices, numerical cells as raw
/// values already clamped into the column bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    schema: Arc<Schema>,
    rows: usize,
    cat: Vec<u32>,
    num: Vec<f64>,
    clamped: usize,
}

impl DiscreteDataset {
    /// Builds a dataset from packed row-major storage.
    ///
    /// `cat` holds `rows * |C|` category indices, `num` holds `rows * |R|`
    /// raw numerical values. Numerical values outside their bounds are
    /// clamped and counted.
    pub fn from_parts(schema: Arc<Schema>, cat: Vec<u32>, mut num: Vec<f64>) -> Result<Self> {
        let nc = schema.categorical().len();
        let nr = schema.numerical().len();
        let rows = if nc > 0 { cat.len() / nc } else { num.len() / nr.max(1) };
        if cat.len() != rows * nc || num.len() != rows * nr {
            return Err(Error::Data(format!(
                "storage sizes ({}, {}) do not match {rows} rows of {nc} categorical and {nr} numerical cells",
                cat.len(),
                num.len()
            )));
        }
        for (k, &col) in schema.categorical().iter().enumerate() {
            let arity = schema.arity(col).unwrap() as u32;
            for r in 0..rows {
                let v = cat[r * nc + k];
                if v >= arity {
                    return Err(Error::Data(format!(
                        "row {r}: category index {v} out of range for column `{}`",
                        schema.column(col).name
                    )));
                }
            }
        }
        let mut clamped = 0;
        for (k, &col) in schema.numerical().iter().enumerate() {
            let (lower, upper) = schema.bounds(col).unwrap();
            for r in 0..rows {
                let cell = &mut num[r * nr + k];
                if cell.is_nan() {
                    return Err(Error::Data(format!(
                        "row {r}: NaN in column `{}`",
                        schema.column(col).name
                    )));
                }
                if *cell < lower || *cell > upper {
                    *cell = cell.clamp(lower, upper);
                    clamped += 1;
                }
            }
        }
        Ok(DiscreteDataset {
            schema,
            rows,
            cat,
            num,
            clamped,
        })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Number of numerical cells that were clamped into bounds on construction.
    pub fn clamped_cells(&self) -> usize {
        self.clamped
    }

    /// Category indices of one row, in categorical-slot order.
    pub fn cat_row(&self, row: usize) -> &[u32] {
        let nc = self.schema.categorical().len();
        &self.cat[row * nc..(row + 1) * nc]
    }

    /// Raw numerical values of one row, in numerical-slot order.
    pub fn num_row(&self, row: usize) -> &[f64] {
        let nr = self.schema.numerical().len();
        &self.num[row * nr..(row + 1) * nr]
    }

    /// Category index of `column` in `row`.
    pub fn category(&self, row: usize, column: usize) -> u32 {
        match self.schema.slot(column) {
            Slot::Cat(k) => self.cat_row(row)[k],
            Slot::Num(_) => panic!("column {column} is numerical"),
        }
    }

    pub fn value(&self, row: usize, column: usize) -> f64 {
        match self.schema.slot(column) {
            Slot::Num(k) => self.num_row(row)[k],
            Slot::Cat(_) => panic!("column {column} is categorical"),
        }
    }

    /// Numerical cells on the normalized [0, 1] scale, row-major.
    pub fn normalized_num(&self) -> Vec<f64> {
        let nr = self.schema.numerical().len();
        let cols = self.schema.numerical();
        self.num
            .iter()
            .enumerate()
            .map(|(i, &v)| self.schema.normalize_numeric(cols[i % nr], v))
            .collect()
    }

    pub(crate) fn cat_cells(&self) -> &[u32] {
        &self.cat
    }
}

/// Continuous surrogate of a dataset: a probability vector per categorical
/// block and normalized numerical values.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedDataset {
    schema: Arc<Schema>,
    rows: usize,
    pub(crate) cat: Vec<f64>,
    pub(crate) num: Vec<f64>,
}

impl RelaxedDataset {
    /// Wraps raw matrices; the result need not be feasible.
    pub fn from_parts(schema: Arc<Schema>, rows: usize, cat: Vec<f64>, num: Vec<f64>) -> Result<Self> {
        if cat.len() != rows * schema.one_hot_width() || num.len() != rows * schema.numerical().len() {
            return Err(Error::Data(format!(
                "relaxed matrices of size ({}, {}) do not fit {rows} rows",
                cat.len(),
                num.len()
            )));
        }
        Ok(RelaxedDataset {
            schema,
            rows,
            cat,
            num,
        })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Row-major `rows x d'` one-hot probabilities.
    pub fn cat(&self) -> &[f64] {
        &self.cat
    }

    /// Row-major `rows x |R|` normalized numerical values.
    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn cat_mut(&mut self) -> &mut [f64] {
        &mut self.cat
    }

    pub fn num_mut(&mut self) -> &mut [f64] {
        &mut self.num
    }

    pub fn cat_row(&self, row: usize) -> &[f64] {
        let w = self.schema.one_hot_width();
        &self.cat[row * w..(row + 1) * w]
    }

    pub fn num_row(&self, row: usize) -> &[f64] {
        let nr = self.schema.numerical().len();
        &self.num[row * nr..(row + 1) * nr]
    }

    /// Whether every block is a probability vector and every numerical value
    /// lies in [0, 1].
    pub fn is_feasible(&self) -> bool {
        let w = self.schema.one_hot_width();
        let blocks: Vec<_> = self.schema.blocks().collect();
        let cat_ok = (0..self.rows).all(|r| {
            let row = &self.cat[r * w..(r + 1) * w];
            blocks.iter().all(|b| {
                let block = &row[b.clone()];
                block.iter().all(|&p| p >= 0.0)
                    && (block.iter().sum::<f64>() - 1.0).abs() <= FEASIBILITY_TOL
            })
        });
        cat_ok && self.num.iter().all(|&x| (0.0..=1.0).contains(&x))
    }

    /// In-place version of [`project_to_feasible`].
    pub fn project(&mut self) {
        let w = self.schema.one_hot_width();
        if w > 0 {
            let blocks: Vec<_> = self.schema.blocks().collect();
            for row in self.cat.chunks_mut(w) {
                for b in &blocks {
                    let block = &mut row[b.clone()];
                    if block.iter().all(|&p| p >= 0.0)
                        && (block.iter().sum::<f64>() - 1.0).abs() <= NORMALIZED_TOL
                    {
                        continue;
                    }
                    let mut sum = 0.0;
                    for p in block.iter_mut() {
                        if !(*p > 0.0) {
                            *p = 0.0;
                        }
                        sum += *p;
                    }
                    if sum > 0.0 && sum.is_finite() {
                        for p in block.iter_mut() {
                            *p /= sum;
                        }
                    } else {
                        let uniform = 1.0 / block.len() as f64;
                        block.fill(uniform);
                    }
                }
            }
        }
        for x in &mut self.num {
            *x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        }
    }
}

/// One-hot encodes categorical cells and normalizes numerical cells.
pub fn encode(data: &DiscreteDataset) -> RelaxedDataset {
    let schema = data.schema().clone();
    let w = schema.one_hot_width();
    let mut cat = vec![0.0; data.rows() * w];
    let blocks: Vec<_> = schema.blocks().collect();
    for r in 0..data.rows() {
        for (k, &v) in data.cat_row(r).iter().enumerate() {
            cat[r * w + blocks[k].start + v as usize] = 1.0;
        }
    }
    let num = data.normalized_num();
    RelaxedDataset {
        schema,
        rows: data.rows(),
        cat,
        num,
    }
}

/// Clips and renormalizes every block, and clips numerical values into [0, 1].
///
/// Blocks with no positive mass become uniform.
pub fn project_to_feasible(mut relaxed: RelaxedDataset) -> RelaxedDataset {
    relaxed.project();
    relaxed
}

/// Draws one concrete row per relaxed row.
///
/// Each categorical value is sampled from its block; numerical values are
/// denormalized without noise. Row `r` uses its own stream derived from
/// `seed`, so the output does not depend on evaluation order.
pub fn sample_discrete(relaxed: &RelaxedDataset, seed: u64) -> DiscreteDataset {
    let schema = relaxed.schema().clone();
    let nc = schema.categorical().len();
    let blocks: Vec<_> = schema.blocks().collect();
    let mut cat = Vec::with_capacity(relaxed.rows() * nc);
    for r in 0..relaxed.rows() {
        let mut rng = stream_rng(seed, r as u64);
        let row = relaxed.cat_row(r);
        for b in &blocks {
            cat.push(draw_category(&row[b.clone()], &mut rng));
        }
    }
    let cols = schema.numerical();
    let nr = cols.len();
    let num = relaxed
        .num()
        .iter()
        .enumerate()
        .map(|(i, &x)| schema.denormalize_numeric(cols[i % nr], x.clamp(0.0, 1.0)))
        .collect();
    DiscreteDataset::from_parts(schema, cat, num).expect("sampled rows fit the schema")
}

fn draw_category<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> u32 {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i as u32;
            }
        }
    }
    last_positive as u32
}

/// Relaxed dataset drawn uniformly over the feasible region: flat-Dirichlet
/// blocks (normalized exponential variates) and uniform numerical values.
pub fn random_relaxed<R: Rng + ?Sized>(schema: Arc<Schema>, rows: usize, rng: &mut R) -> RelaxedDataset {
    let w = schema.one_hot_width();
    let blocks: Vec<_> = schema.blocks().collect();
    let mut cat = vec![0.0; rows * w];
    for row in cat.chunks_mut(w.max(1)).take(rows) {
        for b in &blocks {
            let block = &mut row[b.clone()];
            let mut sum = 0.0;
            for p in block.iter_mut() {
                *p = -open_unit(rng).ln();
                sum += *p;
            }
            for p in block.iter_mut() {
                *p /= sum;
            }
        }
    }
    let num = (0..rows * schema.numerical().len())
        .map(|_| rng.random::<f64>())
        .collect();
    RelaxedDataset {
        schema,
        rows,
        cat,
        num,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnSpec;
    use proptest::prelude::*;

    fn abc_schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(vec![
                ColumnSpec::categorical("c", ["A", "B", "C"]),
                ColumnSpec::numerical("x", 0.0, 100.0),
            ])
            .unwrap(),
        )
    }

    fn binary_schema() -> Arc<Schema> {
        Arc::new(Schema::new(vec![ColumnSpec::categorical("b", ["A", "B"])]).unwrap())
    }

    #[test]
    fn encode_one_hot_and_normalize() {
        let data = DiscreteDataset::from_parts(abc_schema(), vec![1], vec![25.0]).unwrap();
        let rel = encode(&data);
        assert_eq!(rel.cat(), &[0.0, 1.0, 0.0]);
        assert_eq!(rel.num(), &[0.25]);

        let data = DiscreteDataset::from_parts(binary_schema(), vec![0, 1], vec![]).unwrap();
        let rel = encode(&data);
        assert_eq!(rel.cat_row(0), &[1.0, 0.0]);
        assert_eq!(rel.cat_row(1), &[0.0, 1.0]);
        assert!(rel.is_feasible());
    }

    #[test]
    fn ingestion_clamps_and_counts() {
        let data = DiscreteDataset::from_parts(abc_schema(), vec![0, 2], vec![-3.0, 140.0]).unwrap();
        assert_eq!(data.clamped_cells(), 2);
        assert_eq!(data.num_row(0), &[0.0]);
        assert_eq!(data.num_row(1), &[100.0]);
    }

    #[test]
    fn rejects_bad_category_index() {
        let err = DiscreteDataset::from_parts(abc_schema(), vec![3], vec![1.0]);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    fn project_block(block: [f64; 2]) -> Vec<f64> {
        let rel = RelaxedDataset::from_parts(binary_schema(), 1, block.to_vec(), vec![]).unwrap();
        project_to_feasible(rel).cat().to_vec()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_block([0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_block([-1.0, 3.0]), vec![0.0, 1.0]);
        assert_eq!(project_block([-2.0, -5.0]), vec![0.5, 0.5]);
        assert_eq!(project_block([f64::NAN, 2.0]), vec![0.0, 1.0]);

        let rel = RelaxedDataset::from_parts(abc_schema(), 1, vec![0.2, 0.2, 0.6], vec![1.7]).unwrap();
        assert_eq!(project_to_feasible(rel).num(), &[1.0]);
    }

    #[test]
    fn sampling_degenerate_and_deterministic_numeric() {
        let rel = RelaxedDataset::from_parts(abc_schema(), 1, vec![0.0, 1.0, 0.0], vec![0.5]).unwrap();
        for seed in 0..50 {
            let d = sample_discrete(&rel, seed);
            assert_eq!(d.cat_row(0), &[1]);
            assert_eq!(d.num_row(0), &[50.0]);
        }
    }

    #[test]
    fn sampling_fair_block_frequency() {
        // 3-sigma band for Binomial(10_000, 0.5): 0.5 +- 3 * 0.005.
        let rows = 10_000;
        let rel = RelaxedDataset::from_parts(binary_schema(), rows, [0.5, 0.5].repeat(rows), vec![]).unwrap();
        let d = sample_discrete(&rel, 17);
        let zeros = (0..rows).filter(|&r| d.cat_row(r)[0] == 0).count();
        let freq = zeros as f64 / rows as f64;
        assert!((0.47..=0.53).contains(&freq), "frequency {freq}");
    }

    #[test]
    fn random_init_is_feasible_and_seeded() {
        let schema = abc_schema();
        let a = random_relaxed(schema.clone(), 20, &mut stream_rng(5, 0));
        let b = random_relaxed(schema, 20, &mut stream_rng(5, 0));
        assert!(a.is_feasible());
        assert_eq!(a, b);
    }

    fn mixed_schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(vec![
                ColumnSpec::categorical("a", ["p", "q"]),
                ColumnSpec::numerical("x", -5.0, 5.0),
                ColumnSpec::categorical("b", ["u", "v", "w", "z"]),
                ColumnSpec::numerical("y", 100.0, 1000.0),
            ])
            .unwrap(),
        )
    }

    proptest! {
        #[test]
        fn encode_then_sample_is_identity(
            rows in prop::collection::vec((0u32..2, -5.0f64..5.0, 0u32..4, 100.0f64..1000.0), 1..20),
            seed in any::<u64>(),
        ) {
            let schema = mixed_schema();
            let cat = rows.iter().flat_map(|r| [r.0, r.2]).collect();
            let num = rows.iter().flat_map(|r| [r.1, r.3]).collect();
            let data = DiscreteDataset::from_parts(schema, cat, num).unwrap();
            let back = sample_discrete(&encode(&data), seed);
            prop_assert_eq!(back.cat_cells(), data.cat_cells());
            for r in 0..data.rows() {
                for (a, b) in back.num_row(r).iter().zip(data.num_row(r)) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }

        #[test]
        fn projection_is_idempotent_and_feasible(
            cat in prop::collection::vec(-3.0f64..3.0, 18),
            num in prop::collection::vec(-2.0f64..2.0, 6),
        ) {
            let rel = RelaxedDataset::from_parts(mixed_schema(), 3, cat, num).unwrap();
            let once = project_to_feasible(rel);
            prop_assert!(once.is_feasible());
            let twice = project_to_feasible(once.clone());
            prop_assert_eq!(once, twice);
        }
    }
}
