use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when comparing cumulative spend against the total budget.
pub const BUDGET_SLACK: f64 = 1e-12;

/// zCDP parameter `rho` such that `rho`-zCDP implies `(epsilon, delta)`-DP,
/// i.e. the root of `epsilon = rho + 2 sqrt(rho ln(1/delta))`.
pub fn rho_from_eps_delta(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv = (1.0 / delta).ln();
    // (sqrt(L + e) - sqrt(L))^2, rewritten to avoid cancellation
    let root = epsilon / ((log_inv + epsilon).sqrt() + log_inv.sqrt());
    Ok(root * root)
}

/// The `epsilon` that `rho`-zCDP guarantees at `delta`.
pub fn eps_from_rho_delta(rho: f64, delta: f64) -> f64 {
    rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub rho: f64,
}

/// Exported ledger row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub label: String,
    pub rho: f64,
    pub cumulative: f64,
}

/// Tracks zCDP spend against a fixed total.
///
/// Charges compose additively; a charge that would push the total past the
/// budget is refused and leaves the ledger untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyAccountant {
    epsilon: f64,
    delta: f64,
    rho_total: f64,
    ledger: Vec<LedgerEntry>,
    spent: f64,
}

impl PrivacyAccountant {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let rho_total = rho_from_eps_delta(epsilon, delta)?;
        Ok(PrivacyAccountant {
            epsilon,
            delta,
            rho_total,
            ledger: Vec::new(),
            spent: 0.0,
        })
    }

    /// Accountant with a total budget given directly in `rho`.
    pub fn from_rho(rho_total: f64, delta: f64) -> Result<Self> {
        if !(rho_total > 0.0 && rho_total.is_finite()) {
            return Err(Error::Parameter(format!("rho must be positive, got {rho_total}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(PrivacyAccountant {
            epsilon: eps_from_rho_delta(rho_total, delta),
            delta,
            rho_total,
            ledger: Vec::new(),
            spent: 0.0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rho_total(&self) -> f64 {
        self.rho_total
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn remaining(&self) -> f64 {
        (self.rho_total - self.spent).max(0.0)
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn charge(&mut self, label: impl Into<String>, rho: f64) -> Result<()> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("charge must be positive, got {rho}")));
        }
        let after = self.spent + rho;
        if after > self.rho_total + BUDGET_SLACK {
            return Err(Error::Budget {
                requested: rho,
                remaining: self.remaining(),
                shortfall: after - self.rho_total,
            });
        }
        self.ledger.push(LedgerEntry {
            label: label.into(),
            rho,
        });
        self.spent = after;
        Ok(())
    }

    pub fn export(&self) -> Vec<LedgerRow> {
        let mut cumulative = 0.0;
        self.ledger
            .iter()
            .map(|e| {
                cumulative += e.rho;
                LedgerRow {
                    label: e.label.clone(),
                    rho: e.rho,
                    cumulative,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn conversion_examples() {
        // Independent route: bisection on the defining equation.
        let bisect = |eps: f64, delta: f64| {
            let (mut lo, mut hi) = (0.0f64, eps);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if eps_from_rho_delta(mid, delta) < eps {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };

        let rho = rho_from_eps_delta(1.0, 1e-6).unwrap();
        assert!(rel(rho, bisect(1.0, 1e-6)) < 1e-12);
        assert!((rho - 0.017_468_905).abs() < 1e-9, "{rho}");
        assert!(rel(eps_from_rho_delta(rho, 1e-6), 1.0) < 1e-9);

        let rho = rho_from_eps_delta(4.0, (-1.0f64).exp()).unwrap();
        let expect = (5.0f64.sqrt() - 1.0).powi(2);
        assert!(rel(rho, expect) < 1e-12);
        assert!((rho - 1.5279).abs() < 1e-4);
    }

    #[test]
    fn conversion_domain() {
        assert!(rho_from_eps_delta(0.0, 0.1).is_err());
        assert!(rho_from_eps_delta(-1.0, 0.1).is_err());
        assert!(rho_from_eps_delta(1.0, 0.0).is_err());
        assert!(rho_from_eps_delta(1.0, 1.0).is_err());
    }

    #[test]
    fn conversion_monotone_and_below_eps() {
        let mut prev = 0.0;
        for i in 1..200 {
            let eps = i as f64 * 0.05;
            let rho = rho_from_eps_delta(eps, 1e-6).unwrap();
            assert!(rho > prev && rho < eps);
            prev = rho;
        }
        let mut prev = 0.0;
        for k in (1..12).rev() {
            let rho = rho_from_eps_delta(1.0, 10f64.powi(-k)).unwrap();
            assert!(rho > prev);
            prev = rho;
        }
    }

    #[test]
    fn exact_fill_and_atomic_rejection() {
        let mut acct = PrivacyAccountant::from_rho(1.0, 1e-6).unwrap();
        assert_eq!(acct.remaining(), 1.0);
        acct.charge("a", 0.5).unwrap();
        acct.charge("b", 0.5).unwrap();
        assert_eq!(acct.spent(), 1.0);

        let mut acct = PrivacyAccountant::from_rho(1.0, 1e-6).unwrap();
        acct.charge("a", 0.6).unwrap();
        let err = acct.charge("b", 0.6).unwrap_err();
        match err {
            Error::Budget { shortfall, .. } => assert!((shortfall - 0.2).abs() < 1e-12),
            other => panic!("{other}"),
        }
        assert_eq!(acct.ledger().len(), 1);
        assert_eq!(acct.ledger()[0].rho, 0.6);
        assert!(acct.charge("c", 0.0).is_err());
    }

    #[test]
    fn export_is_cumulative() {
        let mut acct = PrivacyAccountant::from_rho(1.0, 1e-6).unwrap();
        acct.charge("a", 0.25).unwrap();
        acct.charge("b", 0.5).unwrap();
        let rows = acct.export();
        assert_eq!(rows[1].cumulative, 0.75);
        assert_eq!(rows[0].label, "a");
    }
}
