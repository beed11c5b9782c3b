//! Declares a mixed-type schema, encodes rows into the relaxed domain, and
//! samples them back.
//!
//! cargo run --example schema_and_encoding

use std::sync::Arc;

use rappp::rng::stream_rng;
use rappp::schema::{
    encode, project_to_feasible, random_relaxed, read_csv, sample_discrete, write_csv, ColumnSpec, Schema,
};

fn main() -> rappp::Result<()> {
    let schema = Arc::new(Schema::new(vec![
        ColumnSpec::categorical("sex", ["f", "m"]),
        ColumnSpec::categorical("employed", ["no", "yes"]).label(),
        ColumnSpec::numerical("age", 18.0, 90.0),
        ColumnSpec::numerical("hours", 0.0, 80.0),
    ])?);
    println!("one-hot width {}, numerical columns {}", schema.one_hot_width(), schema.numerical().len());

    let csv = "sex,employed,age,hours\nf,yes,34,40\nm,no,71,0\nf,yes,95,38\n";
    let data = read_csv(Arc::clone(&schema), csv.as_bytes())?;
    println!("{} rows, {} cell(s) clamped into bounds", data.rows(), data.clamped_cells());

    let relaxed = encode(&data);
    for r in 0..relaxed.rows() {
        println!("row {r}: one-hot {:?} numeric {:?}", relaxed.cat_row(r), relaxed.num_row(r));
    }

    // an unconstrained point, pulled back onto the feasible region
    let mut noisy = relaxed.clone();
    noisy.cat_mut()[0] = -0.3;
    noisy.num_mut()[1] = 1.7;
    let fixed = project_to_feasible(noisy);
    println!("after projection: feasible = {}, row 0 = {:?}", fixed.is_feasible(), fixed.cat_row(0));

    // a random relaxed dataset rounds to concrete rows
    let soft = random_relaxed(Arc::clone(&schema), 5, &mut stream_rng(1, 0));
    let rounded = sample_discrete(&soft, 7);
    let mut out = Vec::new();
    write_csv(&rounded, &mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}
