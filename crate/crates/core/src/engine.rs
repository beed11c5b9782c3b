//! The adaptive fitting loop.
//!
//! Each epoch privately selects the `K` worst-fit queries from the current
//! phase's unmeasured pool, measures them with Gaussian noise, and re-fits
//! the relaxed dataset to every measurement taken so far. With `T` epochs in
//! total, each selection costs `rho / (2T)` and each measurement
//! `rho / (2TK)`, so a full run spends exactly `rho`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::{GaussianMechanism, GumbelTopK, NoiseMode, NoisyMeasurement, PrivacyAccountant};
use crate::projection::{relaxed_projection_anneal, AnnealConfig, ProjectionReport};
use crate::queries::{
    answers_discrete, answers_relaxed, gen_cm_queries, gen_lt_queries, Objective, QuerySet,
    SigmoidParams, StatQuery,
};
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::schema::{random_relaxed, sample_discrete, DiscreteDataset, RelaxedDataset, Schema};

pub const DEFAULT_QUERIES_PER_EPOCH: usize = 10;
pub const DEFAULT_SYNTHETIC_ROWS: usize = 1000;
pub const DEFAULT_LT_EPOCHS: usize = 50;

const SEED_INIT: u64 = 0;
const SEED_SELECT: u64 = 1;
const SEED_MEASURE: u64 = 2;
const SEED_OUTPUT: u64 = 3;
const SEED_SNAPSHOT: u64 = 4;

/// A block of epochs drawing from one query pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub label: String,
    pub queries: QuerySet,
    pub epochs: usize,
}

/// How the synthetic side of a selection score is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScoring {
    /// Relaxed answers, with sigmoids at the schedule's final temperature.
    #[default]
    RelaxedFinalSigma,
    /// Exact answers on a sampled snapshot of the relaxed dataset.
    Rounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub epsilon: f64,
    /// Defaults to `1 / n^2` for `n` input rows.
    pub delta: Option<f64>,
    pub phases: Vec<PhaseSpec>,
    pub queries_per_epoch: usize,
    pub synthetic_rows: usize,
    pub anneal: AnnealConfig,
    pub seed: u64,
    pub noise: NoiseMode,
    pub scoring: SelectionScoring,
}

impl EngineConfig {
    pub fn new(epsilon: f64, phases: Vec<PhaseSpec>) -> Self {
        EngineConfig {
            epsilon,
            delta: None,
            phases,
            queries_per_epoch: DEFAULT_QUERIES_PER_EPOCH,
            synthetic_rows: DEFAULT_SYNTHETIC_ROWS,
            anneal: AnnealConfig::default(),
            seed: 0,
            noise: NoiseMode::Sampled,
            scoring: SelectionScoring::default(),
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn resolved_delta(&self, rows: usize) -> f64 {
        self.delta.unwrap_or_else(|| 1.0 / (rows as f64 * rows as f64))
    }

    fn validate(&self, schema: &Schema) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.queries_per_epoch == 0 || self.synthetic_rows == 0 {
            return Err(Error::Parameter("K and the synthetic row count must be at least 1".into()));
        }
        if self.total_epochs() == 0 {
            return Err(Error::Parameter("at least one epoch is required".into()));
        }
        for p in &self.phases {
            if p.epochs * self.queries_per_epoch > p.queries.len() {
                return Err(Error::Parameter(format!(
                    "phase `{}`: {} epochs of K={} need {} queries but the pool has {}",
                    p.label,
                    p.epochs,
                    self.queries_per_epoch,
                    p.epochs * self.queries_per_epoch,
                    p.queries.len()
                )));
            }
            p.queries
                .validate(schema)
                .map_err(|e| Error::Query(format!("phase `{}`: {e}", p.label)))?;
        }
        self.anneal.validate()
    }
}

/// Phase plan: a categorical-marginal phase with one epoch fewer than the
/// number of categorical feature columns, then `DEFAULT_LT_EPOCHS` epochs of
/// `lt_queries` random linear thresholds.
///
/// Either phase is skipped if the schema cannot support its query class.
pub fn default_phase_plan(schema: &Schema, lt_queries: usize, seed: u64) -> Result<Vec<PhaseSpec>> {
    let mut phases = Vec::new();
    if let Ok(cm) = gen_cm_queries(schema) {
        let epochs = schema.categorical_features().len().saturating_sub(1).max(1);
        phases.push(PhaseSpec {
            label: "cm".into(),
            queries: cm,
            epochs,
        });
    }
    if let Ok(lt) = gen_lt_queries(schema, lt_queries, seed) {
        phases.push(PhaseSpec {
            label: "lt".into(),
            queries: lt,
            epochs: DEFAULT_LT_EPOCHS,
        });
    }
    if phases.is_empty() {
        return Err(Error::Parameter(
            "schema supports neither categorical marginals nor linear thresholds".into(),
        ));
    }
    Ok(phases)
}

/// A measured query together with its phase of origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredQuery {
    pub phase: usize,
    pub query: StatQuery,
    pub measurement: NoisyMeasurement,
}

/// Per-epoch record. The error fields compare against the true answers and
/// are not privacy-protected; they exist for diagnosis only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    pub phase: usize,
    pub selected: Vec<usize>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub mean_exact_error: f64,
    pub max_exact_error: f64,
    pub projection: ProjectionReport,
}

#[derive(Debug, Clone)]
pub struct EngineState {
    pub accountant: PrivacyAccountant,
    pub relaxed: RelaxedDataset,
    pub measured: Vec<MeasuredQuery>,
    /// Completed epochs.
    pub epoch: usize,
    pub diagnostics: Vec<EpochDiagnostics>,
}

/// `|q(data) - q(synthetic)|` for each query in `pool`.
pub fn errors_for_selection(
    data: &DiscreteDataset,
    relaxed: &RelaxedDataset,
    pool: &[StatQuery],
    scoring: SelectionScoring,
    anneal: &AnnealConfig,
    snapshot_seed: u64,
) -> Result<Vec<f64>> {
    let truth = answers_discrete(pool, data)?;
    score(&truth, relaxed, pool, scoring, anneal, snapshot_seed)
}

fn score(
    truth: &[f64],
    relaxed: &RelaxedDataset,
    pool: &[StatQuery],
    scoring: SelectionScoring,
    anneal: &AnnealConfig,
    snapshot_seed: u64,
) -> Result<Vec<f64>> {
    let synth = match scoring {
        SelectionScoring::RelaxedFinalSigma => {
            answers_relaxed(pool, relaxed, SigmoidParams::new(anneal.final_sigma())?)?
        }
        SelectionScoring::Rounded => answers_discrete(pool, &sample_discrete(relaxed, snapshot_seed))?,
    };
    Ok(truth.iter().zip(&synth).map(|(t, s)| (t - s).abs()).collect())
}

/// Stepwise driver for the fitting loop; [`rappp_fit`] runs it to completion.
pub struct Engine<'a> {
    data: &'a DiscreteDataset,
    cfg: EngineConfig,
    state: EngineState,
    truth: Vec<Vec<f64>>,
    measured_ids: Vec<Vec<bool>>,
    phase: usize,
    phase_epoch: usize,
    select_rng: StreamRng,
    measure_rng: StreamRng,
    rho_select: f64,
    rho_measure: f64,
}

impl<'a> Engine<'a> {
    pub fn new(data: &'a DiscreteDataset, cfg: EngineConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        cfg.validate(data.schema())?;
        let delta = cfg.resolved_delta(data.rows());
        let accountant = PrivacyAccountant::new(cfg.epsilon, delta)?;
        let rho = accountant.rho_total();
        let t = cfg.total_epochs() as f64;
        let k = cfg.queries_per_epoch as f64;

        let truth = cfg
            .phases
            .iter()
            .map(|p| answers_discrete(p.queries.queries(), data))
            .collect::<Result<Vec<_>>>()?;
        let measured_ids = cfg.phases.iter().map(|p| vec![false; p.queries.len()]).collect();

        let mut init_rng = stream_rng(derive_seed(cfg.seed, SEED_INIT), 0);
        let relaxed = random_relaxed(Arc::clone(data.schema()), cfg.synthetic_rows, &mut init_rng);

        let mut engine = Engine {
            data,
            select_rng: stream_rng(derive_seed(cfg.seed, SEED_SELECT), 0),
            measure_rng: stream_rng(derive_seed(cfg.seed, SEED_MEASURE), 0),
            rho_select: rho / (2.0 * t),
            rho_measure: rho / (2.0 * t * k),
            cfg,
            state: EngineState {
                accountant,
                relaxed,
                measured: Vec::new(),
                epoch: 0,
                diagnostics: Vec::new(),
            },
            truth,
            measured_ids,
            phase: 0,
            phase_epoch: 0,
        };
        engine.skip_empty_phases();
        Ok(engine)
    }

    fn skip_empty_phases(&mut self) {
        while self.phase < self.cfg.phases.len() && self.phase_epoch >= self.cfg.phases[self.phase].epochs {
            self.phase += 1;
            self.phase_epoch = 0;
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.phase >= self.cfg.phases.len()
    }

    fn measured_objective(&self) -> Result<Objective> {
        let queries: Vec<StatQuery> = self.state.measured.iter().map(|m| m.query.clone()).collect();
        let targets: Vec<f64> = self.state.measured.iter().map(|m| m.measurement.value).collect();
        Objective::new(self.data.schema(), &queries, &targets)
    }

    fn exact_errors(&self, relaxed: &RelaxedDataset) -> Result<(f64, f64)> {
        let snapshot = sample_discrete(relaxed, derive_seed(self.cfg.seed, SEED_SNAPSHOT));
        let queries: Vec<StatQuery> = self.state.measured.iter().map(|m| m.query.clone()).collect();
        let synth = answers_discrete(&queries, &snapshot)?;
        let errors: Vec<f64> = self
            .state
            .measured
            .iter()
            .zip(&synth)
            .map(|(m, s)| (self.truth[m.phase][m.measurement.query_id] - s).abs())
            .collect();
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let max = errors.iter().copied().fold(0.0, f64::max);
        Ok((mean, max))
    }

    /// Runs one epoch: select, measure, project.
    pub fn step(&mut self) -> Result<&EpochDiagnostics> {
        if self.is_done() {
            return Err(Error::Parameter("all epochs already ran".into()));
        }
        let epoch = self.state.epoch + 1;
        let phase = self.phase;
        let spec = &self.cfg.phases[phase];
        let k = self.cfg.queries_per_epoch;
        let n = self.data.rows();
        let noise = self.cfg.noise;

        let pool: Vec<usize> = (0..spec.queries.len())
            .filter(|&id| !self.measured_ids[phase][id])
            .collect();
        let pool_queries: Vec<StatQuery> = pool.iter().map(|&id| spec.queries.queries()[id].clone()).collect();
        let pool_truth: Vec<f64> = pool.iter().map(|&id| self.truth[phase][id]).collect();
        let scores = score(
            &pool_truth,
            &self.state.relaxed,
            &pool_queries,
            self.cfg.scoring,
            &self.cfg.anneal,
            derive_seed(self.cfg.seed, SEED_SNAPSHOT ^ (epoch as u64) << 8),
        )?;

        let selector = GumbelTopK::new(k, self.rho_select, n, noise)?;
        let picked = selector.select(
            &mut self.state.accountant,
            &format!("select epoch={epoch} phase={}", spec.label),
            &scores,
            &mut self.select_rng,
        )?;
        let selected: Vec<usize> = picked.iter().map(|&i| pool[i]).collect();

        let gauss = GaussianMechanism::new(self.rho_measure, n, noise)?;
        for &id in &selected {
            let m = gauss.measure(
                &mut self.state.accountant,
                id,
                epoch,
                self.truth[phase][id],
                &mut self.measure_rng,
            )?;
            self.measured_ids[phase][id] = true;
            self.state.measured.push(MeasuredQuery {
                phase,
                query: spec.queries.queries()[id].clone(),
                measurement: m,
            });
        }

        let final_sigma = self.cfg.anneal.final_sigma();
        let mut objective = self.measured_objective()?;
        let loss_before = objective.loss(&self.state.relaxed, final_sigma);
        let queries: Vec<StatQuery> = self.state.measured.iter().map(|m| m.query.clone()).collect();
        let (relaxed, projection) = relaxed_projection_anneal(
            &queries,
            objective.targets(),
            self.state.relaxed.clone(),
            &self.cfg.anneal,
        )?;
        let loss_after = objective.loss(&relaxed, final_sigma);
        let (mean_exact_error, max_exact_error) = self.exact_errors(&relaxed)?;
        self.state.relaxed = relaxed;
        self.state.epoch = epoch;
        self.phase_epoch += 1;
        self.skip_empty_phases();

        self.state.diagnostics.push(EpochDiagnostics {
            epoch,
            phase,
            selected,
            loss_before,
            loss_after,
            mean_exact_error,
            max_exact_error,
            projection,
        });
        Ok(self.state.diagnostics.last().unwrap())
    }

    /// Samples the synthetic output from the current relaxed dataset.
    pub fn synthesize(&self) -> DiscreteDataset {
        sample_discrete(&self.state.relaxed, derive_seed(self.cfg.seed, SEED_OUTPUT))
    }

    pub fn finish(self) -> (DiscreteDataset, EngineState) {
        let synthetic = self.synthesize();
        (synthetic, self.state)
    }
}

/// Runs every epoch and samples the synthetic dataset.
pub fn rappp_fit(data: &DiscreteDataset, cfg: EngineConfig) -> Result<(DiscreteDataset, EngineState)> {
    let mut engine = Engine::new(data, cfg)?;
    while !engine.is_done() {
        engine.step()?;
    }
    Ok(engine.finish())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::queries::Provenance;
    use crate::schema::{encode, ColumnSpec};

    fn toy() -> DiscreteDataset {
        let schema = Arc::new(
            Schema::new(vec![
                ColumnSpec::categorical("a", ["0", "1"]),
                ColumnSpec::categorical("b", ["0", "1", "2"]),
                ColumnSpec::categorical("y", ["0", "1"]).label(),
                ColumnSpec::numerical("x", 0.0, 1.0),
            ])
            .unwrap(),
        );
        let mut cat = Vec::new();
        let mut num = Vec::new();
        for r in 0..60u32 {
            cat.extend([r % 2, r % 3, u32::from(r % 5 == 0)]);
            num.push((r as f64 * 0.37) % 1.0);
        }
        DiscreteDataset::from_parts(schema, cat, num).unwrap()
    }

    fn quick_anneal() -> AnnealConfig {
        AnnealConfig {
            doublings: 3,
            max_inner_steps: 50,
            ..Default::default()
        }
    }

    #[test]
    fn ledger_follows_budget_split() {
        let data = toy();
        let cm = gen_cm_queries(data.schema()).unwrap();
        let lt = gen_lt_queries(data.schema(), 40, 1).unwrap();
        let mut cfg = EngineConfig::new(
            1.0,
            vec![
                PhaseSpec {
                    label: "cm".into(),
                    queries: cm,
                    epochs: 1,
                },
                PhaseSpec {
                    label: "lt".into(),
                    queries: lt,
                    epochs: 3,
                },
            ],
        );
        cfg.queries_per_epoch = 5;
        cfg.synthetic_rows = 30;
        cfg.anneal = quick_anneal();
        let (synth, state) = rappp_fit(&data, cfg).unwrap();
        assert_eq!(synth.rows(), 30);

        let rho = state.accountant.rho_total();
        let ledger = state.accountant.ledger();
        let selects: Vec<_> = ledger.iter().filter(|e| e.label.starts_with("select")).collect();
        let measures: Vec<_> = ledger.iter().filter(|e| e.label.starts_with("measure")).collect();
        assert_eq!(selects.len(), 4);
        assert_eq!(measures.len(), 20);
        assert!(selects.iter().all(|e| (e.rho - rho / 8.0).abs() <= 1e-15 * rho));
        assert!(measures.iter().all(|e| (e.rho - rho / 40.0).abs() <= 1e-15 * rho));
        assert!((state.accountant.spent() - rho).abs() <= 1e-9 * rho);

        let ids: HashSet<_> = state.measured.iter().map(|m| (m.phase, m.measurement.query_id)).collect();
        assert_eq!(ids.len(), state.measured.len());
    }

    #[test]
    fn single_query_single_epoch_is_plain_projection() {
        let data = toy();
        let q = StatQuery::CategoricalMarginal {
            columns: vec![0, 2],
            values: vec![1, 1],
        };
        let qs = QuerySet::new(Provenance::default(), vec![q.clone()]);
        let mut cfg = EngineConfig::new(
            1.0,
            vec![PhaseSpec {
                label: "one".into(),
                queries: qs,
                epochs: 1,
            }],
        );
        cfg.queries_per_epoch = 1;
        cfg.synthetic_rows = 20;
        cfg.noise = NoiseMode::Zero;
        cfg.anneal = quick_anneal();
        cfg.seed = 4;
        let truth = answers_discrete(std::slice::from_ref(&q), &data).unwrap();

        let mut engine = Engine::new(&data, cfg.clone()).unwrap();
        let init = engine.state().relaxed.clone();
        engine.step().unwrap();
        assert!(engine.is_done());
        let (direct, _) = relaxed_projection_anneal(std::slice::from_ref(&q), &truth, init, &cfg.anneal).unwrap();
        assert_eq!(engine.state().relaxed, direct);
        assert_eq!(engine.state().measured[0].measurement.value, truth[0]);
    }

    #[test]
    fn selection_errors() {
        let data = toy();
        let rel = encode(&data);
        let pool = gen_cm_queries(data.schema()).unwrap();
        let a = AnnealConfig::default();
        let errs =
            errors_for_selection(&data, &rel, pool.queries(), SelectionScoring::RelaxedFinalSigma, &a, 0).unwrap();
        assert!(errs.iter().all(|&e| e == 0.0));

        // reversed pool gives reversed scores
        let mut rev = pool.queries().to_vec();
        rev.reverse();
        let uniform = random_relaxed(Arc::clone(data.schema()), 10, &mut stream_rng(0, 0));
        let fwd = errors_for_selection(&data, &uniform, pool.queries(), SelectionScoring::Rounded, &a, 3).unwrap();
        let mut bwd = errors_for_selection(&data, &uniform, &rev, SelectionScoring::Rounded, &a, 3).unwrap();
        bwd.reverse();
        assert_eq!(fwd, bwd);
    }

    #[test]
    fn uniform_block_scores_half() {
        let schema = Arc::new(Schema::new(vec![ColumnSpec::categorical("c", ["a", "b"])]).unwrap());
        let data = DiscreteDataset::from_parts(Arc::clone(&schema), vec![0, 0, 0], vec![]).unwrap();
        let rel = RelaxedDataset::from_parts(schema, 2, vec![0.5; 4], vec![]).unwrap();
        let q = StatQuery::CategoricalMarginal {
            columns: vec![0],
            values: vec![0],
        };
        let e = errors_for_selection(&data, &rel, &[q], SelectionScoring::RelaxedFinalSigma, &AnnealConfig::default(), 0)
            .unwrap();
        assert_eq!(e, vec![0.5]);
    }

    #[test]
    fn config_validation() {
        let data = toy();
        let cm = gen_cm_queries(data.schema()).unwrap();
        let n = cm.len();
        let mut cfg = EngineConfig::new(
            1.0,
            vec![PhaseSpec {
                label: "cm".into(),
                queries: cm,
                epochs: n / 10 + 1,
            }],
        );
        assert!(matches!(Engine::new(&data, cfg.clone()), Err(Error::Parameter(_))));
        cfg.phases[0].epochs = 1;
        cfg.epsilon = 0.0;
        assert!(Engine::new(&data, cfg.clone()).is_err());
        cfg.epsilon = 1.0;
        cfg.phases[0].epochs = 0;
        assert!(Engine::new(&data, cfg).is_err());
    }

    #[test]
    fn default_plan_shape() {
        let data = toy();
        let plan = default_phase_plan(data.schema(), 600, 2).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[0].label, "cm");
        assert_eq!(plan[0].epochs, 1);
        assert_eq!(plan[1].epochs, DEFAULT_LT_EPOCHS);
        assert_eq!(plan[1].queries.len(), 600);
    }
}
