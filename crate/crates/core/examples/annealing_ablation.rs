//! Annealed versus fixed inverse temperature at equal step budget on a
//! mixed-marginal workload.
//!
//! cargo run --release --example annealing_ablation -- [seed]

use rappp::ablation::{ablate_annealing, AblationConfig, AblationRow};
use rappp::demo::planted_dataset;
use rappp::projection::AnnealConfig;
use rappp::queries::gen_mm_queries;

fn main() -> rappp::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let data = planted_dataset(2000, 0);
    let workload = gen_mm_queries(data.schema(), 500, seed)?;
    let cfg = AblationConfig {
        seed,
        synthetic_rows: 200,
        anneal: AnnealConfig {
            max_inner_steps: 100,
            ..Default::default()
        },
        ..Default::default()
    };
    let rows = ablate_annealing(&data, &workload, &cfg)?;
    AblationRow::write_csv(&rows, std::io::stdout())
}
