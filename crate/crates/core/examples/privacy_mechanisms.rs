//! Converts (epsilon, delta) to zCDP, spends it on a selection and a few
//! Gaussian measurements, and prints the ledger.
//!
//! cargo run --example privacy_mechanisms

use rappp::privacy::{eps_from_rho_delta, GaussianMechanism, GumbelTopK, NoiseMode, PrivacyAccountant};
use rappp::rng::stream_rng;

fn main() -> rappp::Result<()> {
    let n = 2000;
    let delta = 1.0 / (n as f64 * n as f64);
    let mut acct = PrivacyAccountant::new(1.0, delta)?;
    let rho = acct.rho_total();
    println!("eps=1, delta={delta:e} -> rho={rho:.6} (back to eps {:.12})", eps_from_rho_delta(rho, delta));

    // one epoch with K=3: half the budget selects, half measures
    let k = 3;
    let errors = [0.02, 0.31, 0.05, 0.27, 0.11, 0.40];
    let truth = [0.50, 0.12, 0.33, 0.71, 0.05, 0.64];
    let select = GumbelTopK::new(k, rho / 2.0, n, NoiseMode::Sampled)?;
    let mut rng = stream_rng(42, 0);
    let picked = select.select(&mut acct, "select epoch=1", &errors, &mut rng)?;
    println!("selected {picked:?} (Gumbel scale {:.5})", select.scale());

    let gauss = GaussianMechanism::new(rho / (2.0 * k as f64), n, NoiseMode::Sampled)?;
    println!("measurement noise std {:.5}", gauss.std_dev());
    for &id in &picked {
        let m = gauss.measure(&mut acct, id, 1, truth[id], &mut rng)?;
        println!("  query {id}: true {:.3} released {:.4}", truth[id], m.value);
    }

    for row in acct.export() {
        println!("{:<28} {:.6}  cumulative {:.6}", row.label, row.rho, row.cumulative);
    }
    println!("remaining {:.3e}", acct.remaining());

    match acct.charge("one more", 1e-3) {
        Err(e) => println!("refused: {e}"),
        Ok(()) => unreachable!("budget is exhausted"),
    }
    Ok(())
}
