//! Generates the four query classes and compares exact answers with their
//! tempered-sigmoid relaxations as the inverse temperature grows.
//!
//! cargo run --example query_workloads

use rappp::demo::planted_dataset;
use rappp::queries::{
    answers_discrete, answers_relaxed, gen_cm_queries, gen_lt_queries, gen_mm_queries, gen_prefix_queries,
    QuerySet, SigmoidParams,
};
use rappp::schema::encode;

fn main() -> rappp::Result<()> {
    let data = planted_dataset(1000, 0);
    let schema = data.schema();
    let relaxed = encode(&data);

    let sets: Vec<(&str, QuerySet)> = vec![
        ("categorical marginals", gen_cm_queries(schema)?),
        ("mixed marginals", gen_mm_queries(schema, 200, 1)?),
        ("linear thresholds", gen_lt_queries(schema, 200, 2)?),
        ("prefix marginals", gen_prefix_queries(schema, 200, 2, 3)?),
    ];
    for (name, set) in &sets {
        let exact = answers_discrete(set.queries(), &data)?;
        print!("{name:<22} m={:<4}", set.len());
        for sigma in [2.0, 32.0, 1024.0] {
            let soft = answers_relaxed(set.queries(), &relaxed, SigmoidParams::new(sigma)?)?;
            let gap = exact.iter().zip(&soft).map(|(a, b)| (a - b).abs()).sum::<f64>() / exact.len() as f64;
            print!("  sigma {sigma:>6}: mean gap {gap:.4}");
        }
        println!();
    }

    let (_, lt) = &sets[2];
    println!("\nfirst query as stored on disk:");
    let json = lt.to_json();
    println!("{}", &json[..json.find("},{").map_or(json.len(), |i| i + 1)]);
    Ok(())
}
