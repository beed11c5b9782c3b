use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PrivacyAccountant;
use crate::error::{Error, Result};
use crate::rng::open_unit;

/// Whether mechanisms draw real noise. `Zero` is a test hook that keeps the
/// budget charges but releases noiseless values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Sampled,
    Zero,
}

/// A released noisy query answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyMeasurement {
    pub query_id: usize,
    /// Noisy answer clamped to [0, 1].
    pub value: f64,
    pub rho_spent: f64,
    pub epoch: usize,
}

fn check_rho_n(rho: f64, n: usize) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Parameter(format!("rho must be positive, got {rho}")));
    }
    if n == 0 {
        return Err(Error::Parameter("row count must be at least 1".into()));
    }
    Ok(())
}

/// Gaussian mechanism for a statistical query over `n` rows at `rho`-zCDP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMechanism {
    pub rho: f64,
    pub n: usize,
    pub noise: NoiseMode,
}

impl GaussianMechanism {
    pub fn new(rho: f64, n: usize, noise: NoiseMode) -> Result<Self> {
        check_rho_n(rho, n)?;
        Ok(GaussianMechanism { rho, n, noise })
    }

    /// Standard deviation `sqrt(1 / (2 n^2 rho))`.
    pub fn std_dev(&self) -> f64 {
        let n = self.n as f64;
        (1.0 / (2.0 * n * n * self.rho)).sqrt()
    }

    /// One raw noise draw, before clamping.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.noise {
            NoiseMode::Sampled => self.std_dev() * rng.sample::<f64, _>(StandardNormal),
            NoiseMode::Zero => 0.0,
        }
    }

    /// Charges the accountant, then releases `true_answer` plus noise,
    /// clamped to [0, 1]. Nothing is released if the charge is refused.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        accountant: &mut PrivacyAccountant,
        query_id: usize,
        epoch: usize,
        true_answer: f64,
        rng: &mut R,
    ) -> Result<NoisyMeasurement> {
        accountant.charge(format!("measure epoch={epoch} query={query_id}"), self.rho)?;
        let value = (true_answer + self.sample_noise(rng)).clamp(0.0, 1.0);
        Ok(NoisyMeasurement {
            query_id,
            value,
            rho_spent: self.rho,
            epoch,
        })
    }
}

/// One-shot report-noisy-top-K with Gumbel noise of scale `K / (sqrt(2 rho) n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelTopK {
    pub k: usize,
    pub rho: f64,
    pub n: usize,
    pub noise: NoiseMode,
}

impl GumbelTopK {
    pub fn new(k: usize, rho: f64, n: usize, noise: NoiseMode) -> Result<Self> {
        check_rho_n(rho, n)?;
        if k == 0 {
            return Err(Error::Parameter("K must be at least 1".into()));
        }
        Ok(GumbelTopK { k, rho, n, noise })
    }

    pub fn scale(&self) -> f64 {
        self.k as f64 / ((2.0 * self.rho).sqrt() * self.n as f64)
    }

    /// Indices of the `K` largest noisy scores, best first.
    ///
    /// Without noise, ties go to the lower index.
    pub fn select<R: Rng + ?Sized>(
        &self,
        accountant: &mut PrivacyAccountant,
        label: &str,
        scores: &[f64],
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if self.k > scores.len() {
            return Err(Error::Parameter(format!(
                "cannot select K={} of {} candidates",
                self.k,
                scores.len()
            )));
        }
        accountant.charge(label, self.rho)?;
        let scale = self.scale();
        let noisy: Vec<f64> = scores
            .iter()
            .map(|&s| match self.noise {
                NoiseMode::Sampled => s + gumbel(scale, rng),
                NoiseMode::Zero => s,
            })
            .collect();
        Ok(top_k(&noisy, self.k))
    }
}

/// Inverse-CDF Gumbel draw with location 0.
pub fn gumbel<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    -scale * (-open_unit(rng).ln()).ln()
}

fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
