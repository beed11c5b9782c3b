//! zCDP accounting and the two mechanisms the fitting loop uses: Gaussian
//! measurement and one-shot Gumbel top-K selection.

mod accountant;
mod mechanisms;

pub use accountant::{
    eps_from_rho_delta, rho_from_eps_delta, LedgerEntry, LedgerRow, PrivacyAccountant, BUDGET_SLACK,
};
pub use mechanisms::{gumbel, GaussianMechanism, GumbelTopK, NoiseMode, NoisyMeasurement};
