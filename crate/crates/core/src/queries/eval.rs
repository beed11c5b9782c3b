use rayon::prelude::*;

use super::{SigmoidParams, StatQuery};
use crate::error::{Error, Result};
use crate::schema::{DiscreteDataset, RelaxedDataset, Schema, Slot};

// Rows per gradient work unit. Fixed so the accumulation order never depends
// on the thread count.
const ROW_BLOCK: usize = 256;

/// One multiplicative factor of a relaxed query.
#[derive(Debug, Clone)]
enum Factor {
    /// One-hot coordinate.
    Cat(usize),
    /// Numerical slot and threshold.
    Prefix(usize, f64),
    /// Weighted numerical slots and threshold.
    Linear(Vec<(usize, f64)>, f64),
}

impl Factor {
    #[inline]
    fn value(&self, cat_row: &[f64], num_row: &[f64], sigma: f64) -> f64 {
        match self {
            Factor::Cat(j) => cat_row[*j],
            Factor::Prefix(k, t) => below(sigma * (num_row[*k] - t)),
            Factor::Linear(w, t) => below(sigma * (dot(w, num_row) - t)),
        }
    }

    /// Writes the factor for every row of `x` into `out`.
    fn fill(&self, x: &RelaxedDataset, sigma: f64, out: &mut [f64]) {
        let w = x.schema().one_hot_width();
        let nr = x.schema().numerical().len();
        match self {
            Factor::Cat(j) => {
                for (o, row) in out.iter_mut().zip(x.cat.chunks_exact(w)) {
                    *o = row[*j];
                }
            }
            Factor::Prefix(k, t) => {
                for (o, row) in out.iter_mut().zip(x.num.chunks_exact(nr)) {
                    *o = below(sigma * (row[*k] - t));
                }
            }
            Factor::Linear(wts, t) => {
                for (o, row) in out.iter_mut().zip(x.num.chunks_exact(nr)) {
                    *o = below(sigma * (dot(wts, row) - t));
                }
            }
        }
    }
}

/// Query lowered onto packed storage positions.
#[derive(Debug, Clone)]
struct Compiled {
    /// (categorical slot, category index) for matching discrete rows
    cat: Vec<(usize, u32)>,
    /// One-hot coordinates first, then sigmoid factors.
    factors: Vec<Factor>,
}

impl Compiled {
    fn new(schema: &Schema, query: &StatQuery) -> Result<Self> {
        query.validate(schema)?;
        let mut compiled = Compiled {
            cat: Vec::new(),
            factors: Vec::new(),
        };
        let num_slot = |c: usize| {
            let Slot::Num(k) = schema.slot(c) else { unreachable!() };
            k
        };
        let push_cat = |compiled: &mut Compiled, cols: &[usize], values: &[usize]| {
            for (&c, &v) in cols.iter().zip(values) {
                let Slot::Cat(k) = schema.slot(c) else { unreachable!() };
                compiled.cat.push((k, v as u32));
                compiled.factors.push(Factor::Cat(schema.one_hot_range(c).start + v));
            }
        };
        match query {
            StatQuery::CategoricalMarginal { columns, values } => push_cat(&mut compiled, columns, values),
            StatQuery::PrefixMarginal { columns, thresholds } => {
                for (&c, &t) in columns.iter().zip(thresholds) {
                    compiled.factors.push(Factor::Prefix(num_slot(c), t));
                }
            }
            StatQuery::MixedMarginal {
                cat_columns,
                values,
                num_columns,
                thresholds,
            } => {
                push_cat(&mut compiled, cat_columns, values);
                for (&c, &t) in num_columns.iter().zip(thresholds) {
                    compiled.factors.push(Factor::Prefix(num_slot(c), t));
                }
            }
            StatQuery::ClassCondLinearThreshold {
                label,
                value,
                columns,
                weights,
                threshold,
            } => {
                push_cat(&mut compiled, &[*label], &[*value]);
                let w = columns.iter().zip(weights).map(|(&c, &a)| (num_slot(c), a)).collect();
                compiled.factors.push(Factor::Linear(w, *threshold));
            }
        }
        Ok(compiled)
    }

    fn factor_count(&self) -> usize {
        self.factors.len()
    }

    fn thresholds_hold(&self, num_row: &[f64]) -> bool {
        self.factors.iter().all(|f| match f {
            Factor::Cat(_) => true,
            Factor::Prefix(k, t) => num_row[*k] <= *t,
            Factor::Linear(w, t) => dot(w, num_row) <= *t,
        })
    }

    fn matches(&self, cat_row: &[u32], num_row: &[f64]) -> bool {
        self.cat.iter().all(|&(k, v)| cat_row[k] == v) && self.thresholds_hold(num_row)
    }

    /// Row value with thresholds applied as exact indicators.
    fn step_row(&self, cat_row: &[f64], num_row: &[f64]) -> f64 {
        if !self.thresholds_hold(num_row) {
            return 0.0;
        }
        self.factors
            .iter()
            .map(|f| match f {
                Factor::Cat(j) => cat_row[*j],
                _ => 1.0,
            })
            .product()
    }

    fn relaxed_row(&self, cat_row: &[f64], num_row: &[f64], sigma: f64) -> f64 {
        self.factors
            .iter()
            .fold(1.0, |prod, f| prod * f.value(cat_row, num_row, sigma))
    }

    fn relaxed_mean(&self, x: &RelaxedDataset, sigma: f64) -> f64 {
        let sum: f64 = (0..x.rows())
            .map(|r| self.relaxed_row(x.cat_row(r), x.num_row(r), sigma))
            .sum();
        sum / x.rows() as f64
    }
}

fn dot(w: &[(usize, f64)], num_row: &[f64]) -> f64 {
    w.iter().map(|&(k, a)| a * num_row[k]).sum()
}

// Beyond this |z|, 1 / (1 + exp(z)) is 1.0 after rounding, or below 1e-16.
const SATURATED: f64 = 37.0;

/// `1 / (1 + exp(z))`, the smooth stand-in for `z <= 0`.
#[inline]
fn below(z: f64) -> f64 {
    if z < -SATURATED {
        1.0
    } else if z > SATURATED {
        0.0
    } else if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn compile_all(schema: &Schema, queries: &[StatQuery]) -> Result<Vec<Compiled>> {
    queries.iter().map(|q| Compiled::new(schema, q)).collect()
}

/// Fraction of rows satisfying `query`.
pub fn eval_discrete(query: &StatQuery, data: &DiscreteDataset) -> Result<f64> {
    Ok(answers_discrete(std::slice::from_ref(query), data)?[0])
}

/// Exact answers of every query on `data`, in order.
pub fn answers_discrete(queries: &[StatQuery], data: &DiscreteDataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = data.schema();
    let compiled = compile_all(schema, queries)?;
    let nc = schema.categorical().len();
    let nr = schema.numerical().len();
    let num = data.normalized_num();
    let cat = data.cat_cells();
    let n = data.rows();
    Ok(compiled
        .par_iter()
        .map(|q| {
            let hits = (0..n)
                .filter(|&r| q.matches(&cat[r * nc..(r + 1) * nc], &num[r * nr..(r + 1) * nr]))
                .count();
            hits as f64 / n as f64
        })
        .collect())
}

/// Tempered-sigmoid answer of `query` on relaxed rows.
pub fn eval_relaxed(query: &StatQuery, relaxed: &RelaxedDataset, sig: SigmoidParams) -> Result<f64> {
    Ok(answers_relaxed(std::slice::from_ref(query), relaxed, sig)?[0])
}

pub fn answers_relaxed(
    queries: &[StatQuery],
    relaxed: &RelaxedDataset,
    sig: SigmoidParams,
) -> Result<Vec<f64>> {
    if relaxed.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let compiled = compile_all(relaxed.schema(), queries)?;
    Ok(compiled
        .par_iter()
        .map(|q| q.relaxed_mean(relaxed, sig.sigma()))
        .collect())
}

/// Answers on relaxed rows with thresholds applied as exact indicators.
///
/// This is the expected answer of [`crate::schema::sample_discrete`]'s output.
pub fn answers_relaxed_step(queries: &[StatQuery], relaxed: &RelaxedDataset) -> Result<Vec<f64>> {
    if relaxed.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let compiled = compile_all(relaxed.schema(), queries)?;
    let n = relaxed.rows();
    Ok(compiled
        .par_iter()
        .map(|q| {
            let sum: f64 = (0..n)
                .map(|r| q.step_row(relaxed.cat_row(r), relaxed.num_row(r)))
                .sum();
            sum / n as f64
        })
        .collect())
}

/// Gradient with the same layout as a [`RelaxedDataset`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradient {
    pub cat: Vec<f64>,
    pub num: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(x: &RelaxedDataset) -> Self {
        Gradient {
            cat: vec![0.0; x.cat().len()],
            num: vec![0.0; x.num().len()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.cat
            .iter()
            .chain(&self.num)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.cat.iter().chain(&self.num).all(|g| g.is_finite())
    }
}

/// Sum of squared errors between target answers and sigmoid answers, with a
/// reusable per-row factor cache.
#[derive(Debug, Clone)]
pub struct Objective {
    compiled: Vec<Compiled>,
    targets: Vec<f64>,
    factors: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Objective {
    pub fn new(schema: &Schema, queries: &[StatQuery], targets: &[f64]) -> Result<Self> {
        if queries.len() != targets.len() {
            return Err(Error::Parameter(format!(
                "{} queries but {} targets",
                queries.len(),
                targets.len()
            )));
        }
        let compiled = compile_all(schema, queries)?;
        Ok(Objective {
            factors: vec![Vec::new(); compiled.len()],
            values: vec![0.0; compiled.len()],
            compiled,
            targets: targets.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.compiled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compiled.is_empty()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Sigmoid answers from the most recent evaluation.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn forward(&mut self, x: &RelaxedDataset, sigma: f64) -> f64 {
        let n = x.rows();
        self.compiled
            .par_iter()
            .zip(self.factors.par_iter_mut())
            .zip(self.values.par_iter_mut())
            .for_each(|((q, cache), value)| {
                // factor-major: cache[i * n + r] is factor i of row r
                cache.resize(n * q.factor_count(), 0.0);
                let mut prod = vec![1.0; n];
                for (f, col) in q.factors.iter().zip(cache.chunks_exact_mut(n)) {
                    f.fill(x, sigma, col);
                    for (p, v) in prod.iter_mut().zip(col.iter()) {
                        *p *= v;
                    }
                }
                *value = prod.iter().sum::<f64>() / n as f64;
            });
        self.targets
            .iter()
            .zip(&self.values)
            .map(|(t, v)| (t - v) * (t - v))
            .sum()
    }

    pub fn loss(&mut self, x: &RelaxedDataset, sigma: f64) -> f64 {
        self.forward(x, sigma)
    }

    /// Loss at `x`; the exact gradient is written into `grad`.
    pub fn loss_and_grad(&mut self, x: &RelaxedDataset, sigma: f64, grad: &mut Gradient) -> f64 {
        let loss = self.forward(x, sigma);
        let n = x.rows();
        let w = x.schema().one_hot_width();
        let nr = x.schema().numerical().len();
        grad.cat.clear();
        grad.cat.resize(n * w, 0.0);
        grad.num.clear();
        grad.num.resize(n * nr, 0.0);

        // dL/dv_q = 2 (v_q - t_q), and v_q averages rows
        let coef: Vec<f64> = self
            .values
            .iter()
            .zip(&self.targets)
            .map(|(v, t)| 2.0 * (v - t) / n as f64)
            .collect();

        let blocks = n.div_ceil(ROW_BLOCK);
        let cat_chunks: Vec<&mut [f64]> = if w > 0 {
            grad.cat.chunks_mut(ROW_BLOCK * w).collect()
        } else {
            (0..blocks).map(|_| Default::default()).collect()
        };
        let num_chunks: Vec<&mut [f64]> = if nr > 0 {
            grad.num.chunks_mut(ROW_BLOCK * nr).collect()
        } else {
            (0..blocks).map(|_| Default::default()).collect()
        };
        let compiled = &self.compiled;
        let factors = &self.factors;
        cat_chunks
            .into_par_iter()
            .zip(num_chunks)
            .enumerate()
            .for_each(|(b, (gcat, gnum))| {
                let first = b * ROW_BLOCK;
                let len = (first + ROW_BLOCK).min(n) - first;
                let mut others = vec![0.0; len];
                for ((q, cache), &c) in compiled.iter().zip(factors).zip(&coef) {
                    if c == 0.0 {
                        continue;
                    }
                    let cols: Vec<&[f64]> = cache.chunks_exact(n).map(|col| &col[first..first + len]).collect();
                    for (i, f) in q.factors.iter().enumerate() {
                        // product of every other factor, without division
                        others.fill(c);
                        for (j, col) in cols.iter().enumerate() {
                            if j != i {
                                for (o, v) in others.iter_mut().zip(col.iter()) {
                                    *o *= v;
                                }
                            }
                        }
                        match f {
                            Factor::Cat(j) => {
                                for (r, &o) in others.iter().enumerate() {
                                    gcat[r * w + j] += o;
                                }
                            }
                            Factor::Prefix(k, _) => {
                                for (r, (&o, &s)) in others.iter().zip(cols[i]).enumerate() {
                                    gnum[r * nr + k] -= o * sigma * s * (1.0 - s);
                                }
                            }
                            Factor::Linear(wts, _) => {
                                for (r, (&o, &s)) in others.iter().zip(cols[i]).enumerate() {
                                    let d = -o * sigma * s * (1.0 - s);
                                    if d != 0.0 {
                                        for &(k, a) in wts {
                                            gnum[r * nr + k] += d * a;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        loss
    }
}

/// Squared-error loss of `queries` against `targets` at `relaxed`, with its
/// gradient.
pub fn loss_and_grad(
    queries: &[StatQuery],
    targets: &[f64],
    relaxed: &RelaxedDataset,
    sig: SigmoidParams,
) -> Result<(f64, Gradient)> {
    if relaxed.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut objective = Objective::new(relaxed.schema(), queries, targets)?;
    let mut grad = Gradient::default();
    let loss = objective.loss_and_grad(relaxed, sig.sigma(), &mut grad);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::schema::{encode, ColumnSpec};

    fn sig(s: f64) -> SigmoidParams {
        SigmoidParams::new(s).unwrap()
    }

    fn mixed_data() -> DiscreteDataset {
        let schema = Arc::new(
            Schema::new(vec![
                ColumnSpec::categorical("c", ["A", "B"]),
                ColumnSpec::numerical("x", 0.0, 1.0),
            ])
            .unwrap(),
        );
        DiscreteDataset::from_parts(schema, vec![0, 0, 1], vec![0.2, 0.8, 0.3]).unwrap()
    }

    #[test]
    fn categorical_marginal_counts() {
        let schema = Arc::new(Schema::new(vec![ColumnSpec::categorical("c", ["A", "B"])]).unwrap());
        let data = DiscreteDataset::from_parts(schema, vec![0, 0, 1, 0], vec![]).unwrap();
        let q = StatQuery::CategoricalMarginal {
            columns: vec![0],
            values: vec![0],
        };
        assert_eq!(eval_discrete(&q, &data).unwrap(), 0.75);
        // exact on one-hot rows and independent of sigma
        let rel = encode(&data);
        assert_eq!(eval_relaxed(&q, &rel, sig(1.0)).unwrap(), 0.75);
        assert_eq!(eval_relaxed(&q, &rel, sig(1e6)).unwrap(), 0.75);
    }

    #[test]
    fn prefix_marginal_weak_inequality() {
        let schema = Arc::new(Schema::new(vec![ColumnSpec::numerical("x", 0.0, 1.0)]).unwrap());
        let data = DiscreteDataset::from_parts(schema, vec![], vec![0.1, 0.6, 0.9]).unwrap();
        let q = StatQuery::PrefixMarginal {
            columns: vec![0],
            thresholds: vec![0.6],
        };
        assert_eq!(eval_discrete(&q, &data).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn sigmoid_at_threshold_is_half() {
        let schema = Arc::new(Schema::new(vec![ColumnSpec::numerical("x", 0.0, 1.0)]).unwrap());
        let data = DiscreteDataset::from_parts(schema, vec![], vec![0.4]).unwrap();
        let q = StatQuery::PrefixMarginal {
            columns: vec![0],
            thresholds: vec![0.4],
        };
        for s in [0.5, 3.0, 1e3, 1e9] {
            assert_eq!(eval_relaxed(&q, &encode(&data), sig(s)).unwrap(), 0.5);
        }
    }

    #[test]
    fn mixed_marginal_exact_and_step_limit() {
        let data = mixed_data();
        let q = StatQuery::MixedMarginal {
            cat_columns: vec![0],
            values: vec![0],
            num_columns: vec![1],
            thresholds: vec![0.5],
        };
        assert_eq!(eval_discrete(&q, &data).unwrap(), 1.0 / 3.0);
        let relaxed = eval_relaxed(&q, &encode(&data), sig(1e6)).unwrap();
        assert!((relaxed - 1.0 / 3.0).abs() <= 1e-3);
        let step = answers_relaxed_step(std::slice::from_ref(&q), &encode(&data)).unwrap();
        assert_eq!(step[0], 1.0 / 3.0);
    }

    #[test]
    fn linear_threshold_orientation() {
        let schema = Arc::new(
            Schema::new(vec![
                ColumnSpec::categorical("y", ["0", "1"]).label(),
                ColumnSpec::numerical("a", 0.0, 1.0),
                ColumnSpec::numerical("b", 0.0, 1.0),
            ])
            .unwrap(),
        );
        let data =
            DiscreteDataset::from_parts(schema, vec![1, 1, 0], vec![0.1, 0.1, 0.9, 0.9, 0.1, 0.1]).unwrap();
        let q = StatQuery::ClassCondLinearThreshold {
            label: 0,
            value: 1,
            columns: vec![1, 2],
            weights: vec![1.0, 1.0],
            threshold: 0.5,
        };
        // only row 0 has label 1 and a + b <= 0.5
        assert_eq!(eval_discrete(&q, &data).unwrap(), 1.0 / 3.0);
        let r = eval_relaxed(&q, &encode(&data), sig(1e6)).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let schema = Arc::new(Schema::new(vec![ColumnSpec::numerical("x", 0.0, 1.0)]).unwrap());
        let data = DiscreteDataset::from_parts(schema, vec![], vec![]).unwrap();
        let q = StatQuery::PrefixMarginal {
            columns: vec![0],
            thresholds: vec![0.5],
        };
        assert!(matches!(eval_discrete(&q, &data), Err(Error::EmptyDataset)));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let data = mixed_data();
        let rel = encode(&data);
        let queries = vec![
            StatQuery::MixedMarginal {
                cat_columns: vec![0],
                values: vec![1],
                num_columns: vec![1],
                thresholds: vec![0.45],
            },
            StatQuery::CategoricalMarginal {
                columns: vec![0],
                values: vec![0],
            },
        ];
        let targets = answers_relaxed(&queries, &rel, sig(4.0)).unwrap();
        let (loss, grad) = loss_and_grad(&queries, &targets, &rel, sig(4.0)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.cat.iter().chain(&grad.num).all(|&g| g == 0.0));
    }

    #[test]
    fn categorical_gradient_closed_form() {
        let schema = Arc::new(
            Schema::new(vec![
                ColumnSpec::categorical("a", ["p", "q"]),
                ColumnSpec::categorical("b", ["u", "v", "w"]),
            ])
            .unwrap(),
        );
        let rows = 4;
        let mut cat = Vec::new();
        for _ in 0..rows {
            cat.extend([0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        }
        let rel = RelaxedDataset::from_parts(schema, rows, cat, vec![]).unwrap();
        let q = StatQuery::CategoricalMarginal {
            columns: vec![0, 1],
            values: vec![1, 2],
        };
        let target = 0.9;
        let (loss, grad) = loss_and_grad(std::slice::from_ref(&q), &[target], &rel, sig(1.0)).unwrap();
        let value = 0.5 / 3.0;
        assert!((loss - (target - value) * (target - value)).abs() < 1e-15);
        for r in 0..rows {
            let g = &grad.cat[r * 5..(r + 1) * 5];
            let expect_a = -2.0 * (target - value) / rows as f64 * (1.0 / 3.0);
            let expect_b = -2.0 * (target - value) / rows as f64 * 0.5;
            assert!((g[1] - expect_a).abs() < 1e-15);
            assert!((g[4] - expect_b).abs() < 1e-15);
            // unreferenced coordinates
            assert_eq!(g[0], 0.0);
            assert_eq!(g[2], 0.0);
            assert_eq!(g[3], 0.0);
        }
    }

    #[test]
    fn stable_sigmoid_tails() {
        assert_eq!(below(0.0), 0.5);
        assert_eq!(below(800.0), 0.0);
        assert!(below(36.0) > 0.0 && below(36.0) < 1e-15);
        assert_eq!(below(-36.9), 1.0 / (1.0 + (-36.9f64).exp()));
        assert_eq!(below(-800.0), 1.0);
        assert!((below(1.0) + below(-1.0) - 1.0).abs() < 1e-15);
    }
}
