//! Annealed versus fixed-temperature projection on a noiseless workload.
//!
//! Every arm starts from the same random relaxed dataset and fits the exact
//! answers. Fixed-temperature arms get exactly as many optimizer steps as
//! the annealed arm used, so the comparison is at equal inner-step budget.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{relaxed_projection_anneal, relaxed_projection_fixed, AnnealConfig};
use crate::queries::{answers_discrete, answers_relaxed_step, QuerySet};
use crate::rng::{derive_seed, stream_rng};
use crate::schema::{random_relaxed, DiscreteDataset, RelaxedDataset};

pub const DEFAULT_FIXED_SIGMAS: [f64; 5] = [2.0, 8.0, 32.0, 128.0, 512.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `anneal` or `fixed`.
    pub arm: String,
    /// Inverse temperature of a fixed arm; the final one for the annealed arm.
    pub sigma: f64,
    pub steps: usize,
    pub mean_error: f64,
    pub max_error: f64,
}

impl AblationRow {
    pub fn write_csv<W: Write>(rows: &[AblationRow], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["arm", "sigma", "steps", "mean_error", "max_error"])?;
        for r in rows {
            w.write_record([
                r.arm.clone(),
                format!("{:?}", r.sigma),
                r.steps.to_string(),
                format!("{:?}", r.mean_error),
                format!("{:?}", r.max_error),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub fixed_sigmas: Vec<f64>,
    pub anneal: AnnealConfig,
    pub synthetic_rows: usize,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            fixed_sigmas: DEFAULT_FIXED_SIGMAS.to_vec(),
            anneal: AnnealConfig::default(),
            synthetic_rows: 1000,
            seed: 0,
        }
    }
}

/// Errors are exact-indicator answers on the fitted relaxed rows (the
/// expected answers of a sample drawn from them) against the real answers.
fn arm_errors(workload: &QuerySet, truth: &[f64], x: &RelaxedDataset) -> Result<(f64, f64)> {
    let got = answers_relaxed_step(workload.queries(), x)?;
    let errs: Vec<f64> = truth.iter().zip(&got).map(|(t, g)| (t - g).abs()).collect();
    Ok((
        errs.iter().sum::<f64>() / errs.len() as f64,
        errs.iter().copied().fold(0.0, f64::max),
    ))
}

/// One annealed row followed by one row per fixed inverse temperature.
pub fn ablate_annealing(data: &DiscreteDataset, workload: &QuerySet, cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    if workload.is_empty() {
        return Err(Error::Query("workload is empty".into()));
    }
    if !workload.queries().iter().any(|q| q.has_threshold()) {
        return Err(Error::Parameter(
            "annealing ablation needs a workload with threshold queries".into(),
        ));
    }
    if cfg.synthetic_rows == 0 {
        return Err(Error::Parameter("synthetic row count must be at least 1".into()));
    }
    workload.validate(data.schema())?;
    let truth = answers_discrete(workload.queries(), data)?;
    let init = random_relaxed(
        Arc::clone(data.schema()),
        cfg.synthetic_rows,
        &mut stream_rng(derive_seed(cfg.seed, 0), 0),
    );

    let (x, report) = relaxed_projection_anneal(workload.queries(), &truth, init.clone(), &cfg.anneal)?;
    let budget = report.total_steps();
    let (mean, max) = arm_errors(workload, &truth, &x)?;
    let mut rows = vec![AblationRow {
        arm: "anneal".into(),
        sigma: cfg.anneal.final_sigma(),
        steps: budget,
        mean_error: mean,
        max_error: max,
    }];
    for &sigma in &cfg.fixed_sigmas {
        let (x, report) =
            relaxed_projection_fixed(workload.queries(), &truth, init.clone(), sigma, budget, &cfg.anneal.optimizer)?;
        let (mean, max) = arm_errors(workload, &truth, &x)?;
        rows.push(AblationRow {
            arm: "fixed".into(),
            sigma,
            steps: report.total_steps(),
            mean_error: mean,
            max_error: max,
        });
    }
    Ok(rows)
}
