//! Scores two synthetic datasets against the real one on several workloads
//! and writes the reports as CSV rows.
//!
//! cargo run --example workload_evaluation

use std::sync::Arc;

use rappp::demo::planted_dataset;
use rappp::evaluation::{uniform_baseline, workload_error, ErrorReport};
use rappp::queries::{gen_cm_queries, gen_lt_queries, gen_mm_queries};
use rappp::rng::stream_rng;

fn main() -> rappp::Result<()> {
    let real = planted_dataset(2000, 0);
    // a fresh draw from the same generator stands in for a good synthesizer
    let twin = planted_dataset(2000, 1);
    let uniform = uniform_baseline(Arc::clone(real.schema()), 2000, &mut stream_rng(3, 0))?;

    let workloads = [
        ("cm", gen_cm_queries(real.schema())?),
        ("mm", gen_mm_queries(real.schema(), 1000, 1)?),
        ("lt", gen_lt_queries(real.schema(), 1000, 2)?),
    ];
    let mut reports = Vec::new();
    for (synth_name, synth) in [("twin", &twin), ("uniform", &uniform)] {
        for (name, w) in &workloads {
            let mut r = workload_error(&real, synth, w)?;
            r.workload = format!("{synth_name}/{name}");
            r.per_query = None;
            reports.push(r);
        }
    }
    ErrorReport::write_csv(&reports, std::io::stdout())
}
