//! Relaxed projection: fit a relaxed dataset to target query answers by
//! first-order descent on the sigmoid loss, doubling the inverse temperature
//! each time the gradient norm falls below a threshold.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queries::{Gradient, Objective, StatQuery};
use crate::schema::RelaxedDataset;

/// Adaptive-moment step parameters. With both decays at zero the update is
/// plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Parameter("step size and epsilon must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Parameter("moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn is_plain_descent(&self) -> bool {
        self.beta1 == 0.0 && self.beta2 == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub sigma_initial: f64,
    /// Number of temperature phases; the last runs at `sigma_initial * 2^(doublings - 1)`.
    pub doublings: usize,
    pub grad_stop: f64,
    pub max_inner_steps: usize,
    pub optimizer: OptimizerConfig,
    /// Clear optimizer moments whenever the temperature changes.
    pub reset_moments: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            sigma_initial: 2.0,
            doublings: 10,
            grad_stop: 1e-3,
            max_inner_steps: 500,
            optimizer: OptimizerConfig::default(),
            reset_moments: true,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_initial > 0.0 && self.sigma_initial.is_finite()) {
            return Err(Error::Parameter("initial inverse temperature must be positive".into()));
        }
        if self.doublings == 0 || self.max_inner_steps == 0 {
            return Err(Error::Parameter("doublings and inner steps must be at least 1".into()));
        }
        if !(self.grad_stop > 0.0) {
            return Err(Error::Parameter("gradient stopping threshold must be positive".into()));
        }
        self.optimizer.validate()
    }

    pub fn sigma(&self, phase: usize) -> f64 {
        self.sigma_initial * 2f64.powi(phase as i32)
    }

    pub fn final_sigma(&self) -> f64 {
        self.sigma(self.doublings - 1)
    }
}

/// One temperature phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub sigma: f64,
    pub steps: usize,
    pub start_loss: f64,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    /// Whether the phase ended on the gradient-norm criterion.
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub phases: Vec<PhaseTrace>,
    pub wall_time_secs: f64,
}

impl ProjectionReport {
    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.steps).sum()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.phases.last().map(|p| p.final_loss)
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }

    fn step(&mut self, cfg: &OptimizerConfig, x: &mut RelaxedDataset, grad: &Gradient) {
        if cfg.is_plain_descent() {
            for (xi, g) in x.cat.iter_mut().chain(x.num.iter_mut()).zip(grad.cat.iter().chain(&grad.num)) {
                *xi -= cfg.step_size * g;
            }
            return;
        }
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let params = x.cat.iter_mut().chain(x.num.iter_mut());
        let grads = grad.cat.iter().chain(&grad.num);
        for (((xi, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *xi -= cfg.step_size * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

struct Projector {
    objective: Objective,
    grad: Gradient,
    moments: Moments,
    best: RelaxedDataset,
}

impl Projector {
    fn new(queries: &[StatQuery], targets: &[f64], init: &RelaxedDataset) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Parameter("projection needs at least one query".into()));
        }
        if init.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if !init.is_feasible() {
            return Err(Error::Parameter("initial relaxed dataset is not feasible".into()));
        }
        Ok(Projector {
            objective: Objective::new(init.schema(), queries, targets)?,
            grad: Gradient::zeros_like(init),
            moments: Moments::new(init.cat().len() + init.num().len()),
            best: init.clone(),
        })
    }

    /// Descends at fixed `sigma` until the pre-projection gradient norm is at
    /// most `grad_stop` or `max_steps` steps were taken. Leaves `x` at the
    /// lowest-loss iterate seen.
    fn run_phase(
        &mut self,
        x: &mut RelaxedDataset,
        sigma: f64,
        max_steps: usize,
        grad_stop: f64,
        opt: &OptimizerConfig,
        report: &ProjectionReport,
    ) -> Result<PhaseTrace> {
        let mut steps = 0;
        let mut start_loss = f64::NAN;
        let mut best = (f64::INFINITY, f64::INFINITY);
        loop {
            let loss = self.objective.loss_and_grad(x, sigma, &mut self.grad);
            if !loss.is_finite() || !self.grad.is_finite() {
                let mut trace = report.clone();
                trace.phases.push(PhaseTrace {
                    sigma,
                    steps,
                    start_loss,
                    final_loss: loss,
                    final_grad_norm: f64::NAN,
                    converged: false,
                });
                return Err(Error::Optimization {
                    message: format!("non-finite loss or gradient at sigma={sigma} after {steps} steps"),
                    trace: Box::new(trace),
                });
            }
            let gnorm = self.grad.norm();
            if steps == 0 {
                start_loss = loss;
            }
            if loss < best.0 {
                best = (loss, gnorm);
                self.best.cat.copy_from_slice(&x.cat);
                self.best.num.copy_from_slice(&x.num);
            }
            let converged = gnorm <= grad_stop;
            if converged || steps == max_steps {
                if best.0 < loss {
                    x.cat.copy_from_slice(&self.best.cat);
                    x.num.copy_from_slice(&self.best.num);
                }
                return Ok(PhaseTrace {
                    sigma,
                    steps,
                    start_loss,
                    final_loss: best.0,
                    final_grad_norm: best.1,
                    converged,
                });
            }
            self.moments.step(opt, x, &self.grad);
            x.project();
            steps += 1;
        }
    }
}

/// Fits `init` to `targets` under an escalating inverse-temperature schedule.
///
/// Every iterate is projected back onto the feasible region after its step.
/// Within a phase the returned iterate is the lowest-loss one seen, so a
/// phase never ends worse than it started.
pub fn relaxed_projection_anneal(
    queries: &[StatQuery],
    targets: &[f64],
    init: RelaxedDataset,
    cfg: &AnnealConfig,
) -> Result<(RelaxedDataset, ProjectionReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut projector = Projector::new(queries, targets, &init)?;
    let mut x = init;
    let mut report = ProjectionReport::default();
    for j in 0..cfg.doublings {
        if cfg.reset_moments {
            projector.moments.reset();
        }
        let trace = projector.run_phase(
            &mut x,
            cfg.sigma(j),
            cfg.max_inner_steps,
            cfg.grad_stop,
            &cfg.optimizer,
            &report,
        )?;
        report.phases.push(trace);
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Runs exactly `steps` optimizer steps at one fixed inverse temperature.
pub fn relaxed_projection_fixed(
    queries: &[StatQuery],
    targets: &[f64],
    init: RelaxedDataset,
    sigma: f64,
    steps: usize,
    opt: &OptimizerConfig,
) -> Result<(RelaxedDataset, ProjectionReport)> {
    opt.validate()?;
    if !(sigma > 0.0) {
        return Err(Error::Parameter("inverse temperature must be positive".into()));
    }
    let start = Instant::now();
    let mut projector = Projector::new(queries, targets, &init)?;
    let mut x = init;
    let mut report = ProjectionReport::default();
    let trace = projector.run_phase(&mut x, sigma, steps, 0.0, opt, &report)?;
    report.phases.push(trace);
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::queries::{answers_discrete, answers_relaxed, SigmoidParams};
    use crate::rng::stream_rng;
    use crate::schema::{random_relaxed, sample_discrete, ColumnSpec, Schema};

    fn schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(vec![
                ColumnSpec::categorical("a", ["p", "q"]),
                ColumnSpec::categorical("b", ["u", "v", "w"]),
                ColumnSpec::numerical("x", 0.0, 1.0),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn already_matched_targets_stay_put() {
        let init = random_relaxed(schema(), 30, &mut stream_rng(1, 0));
        let queries = vec![
            StatQuery::CategoricalMarginal {
                columns: vec![0, 1],
                values: vec![1, 2],
            },
            StatQuery::CategoricalMarginal {
                columns: vec![1],
                values: vec![0],
            },
        ];
        let targets = answers_relaxed(&queries, &init, SigmoidParams::new(1.0).unwrap()).unwrap();
        let cfg = AnnealConfig::default();
        let (out, report) = relaxed_projection_anneal(&queries, &targets, init.clone(), &cfg).unwrap();
        assert_eq!(out, init);
        assert_eq!(report.phases.len(), cfg.doublings);
        assert!(report.phases.iter().all(|p| p.steps == 0 && p.converged && p.final_loss == 0.0));
    }

    #[test]
    fn pushes_categorical_marginal_to_one() {
        let init = random_relaxed(schema(), 50, &mut stream_rng(2, 0));
        let q = StatQuery::CategoricalMarginal {
            columns: vec![0, 1],
            values: vec![0, 1],
        };
        let (out, _) =
            relaxed_projection_anneal(std::slice::from_ref(&q), &[1.0], init, &AnnealConfig::default()).unwrap();
        assert!(out.is_feasible());
        let v = answers_relaxed(std::slice::from_ref(&q), &out, SigmoidParams::new(1.0).unwrap()).unwrap()[0];
        assert!(v >= 0.99, "{v}");
    }

    #[test]
    fn pushes_prefix_marginal_below_threshold() {
        let s = Arc::new(Schema::new(vec![ColumnSpec::numerical("x", 0.0, 1.0)]).unwrap());
        let init = random_relaxed(s, 50, &mut stream_rng(3, 0));
        let q = StatQuery::PrefixMarginal {
            columns: vec![0],
            thresholds: vec![0.5],
        };
        let (out, _) =
            relaxed_projection_anneal(std::slice::from_ref(&q), &[1.0], init, &AnnealConfig::default()).unwrap();
        let sampled = sample_discrete(&out, 9);
        let v = answers_discrete(std::slice::from_ref(&q), &sampled).unwrap()[0];
        assert!(v >= 0.95, "{v}");
    }

    #[test]
    fn phases_never_end_worse() {
        let s = schema();
        let init = random_relaxed(s, 40, &mut stream_rng(4, 0));
        let queries = vec![
            StatQuery::MixedMarginal {
                cat_columns: vec![0],
                values: vec![1],
                num_columns: vec![2],
                thresholds: vec![0.3],
            },
            StatQuery::CategoricalMarginal {
                columns: vec![1],
                values: vec![2],
            },
        ];
        let cfg = AnnealConfig {
            max_inner_steps: 60,
            ..Default::default()
        };
        let (out, report) = relaxed_projection_anneal(&queries, &[0.7, 0.1], init, &cfg).unwrap();
        assert!(out.is_feasible());
        for p in &report.phases {
            assert!(p.final_loss <= p.start_loss, "{p:?}");
            assert!(p.steps <= cfg.max_inner_steps);
        }
    }

    #[test]
    fn deterministic() {
        let init = random_relaxed(schema(), 25, &mut stream_rng(5, 0));
        let q = vec![StatQuery::MixedMarginal {
            cat_columns: vec![1],
            values: vec![0],
            num_columns: vec![2],
            thresholds: vec![0.6],
        }];
        let cfg = AnnealConfig {
            max_inner_steps: 40,
            ..Default::default()
        };
        let a = relaxed_projection_anneal(&q, &[0.5], init.clone(), &cfg).unwrap().0;
        let b = relaxed_projection_anneal(&q, &[0.5], init, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn plain_descent_config() {
        let init = random_relaxed(schema(), 10, &mut stream_rng(6, 0));
        let q = vec![StatQuery::CategoricalMarginal {
            columns: vec![0],
            values: vec![0],
        }];
        let opt = OptimizerConfig {
            step_size: 1.0,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-8,
        };
        let (_, report) = relaxed_projection_fixed(&q, &[0.9], init, 1.0, 100, &opt).unwrap();
        assert!(report.phases[0].final_loss < report.phases[0].start_loss);
    }

    #[test]
    fn rejects_bad_config() {
        let init = random_relaxed(schema(), 3, &mut stream_rng(0, 0));
        let q = vec![StatQuery::CategoricalMarginal {
            columns: vec![0],
            values: vec![0],
        }];
        let bad = AnnealConfig {
            doublings: 0,
            ..Default::default()
        };
        assert!(relaxed_projection_anneal(&q, &[0.5], init.clone(), &bad).is_err());
        assert!(relaxed_projection_anneal(&q, &[0.5, 0.1], init, &AnnealConfig::default()).is_err());
    }
}
