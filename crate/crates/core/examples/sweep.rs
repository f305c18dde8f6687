//! Alignment quality as graphs lose triples or as labels get scarce.
//!
//! `cargo run --release --example sweep -- removal 0.1,0.3,0.5`
//! `cargo run --release --example sweep -- seed-fraction 0.05,0.1,0.2`
//!
//! The removal axis drops the same share of triples from both graphs.

use ikami::experiment::{self, RunConfig, SweepAxis};

fn main() -> ikami::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let axis = SweepAxis::parse(&args.next().unwrap_or_else(|| "removal".into()))?;
    let grid: Vec<f64> = args
        .next()
        .unwrap_or_else(|| "0.1,0.2,0.3,0.4,0.5,0.6".into())
        .split(',')
        .map(|v| v.parse().expect("grid value"))
        .collect();

    let runs = experiment::sweep(
        &RunConfig::default(),
        axis,
        &grid,
        experiment::thread_count()?,
    )?;
    println!(
        "{:>6} {:>7} {:>7} {:>8} {:>9}",
        "value", "hit1", "mrr", "mr", "triples"
    );
    for ((label, out), row) in runs.iter().zip(experiment::summary(&runs)) {
        let triples = out.graphs[0].num_triples() + out.graphs[1].num_triples();
        println!(
            "{label:>6} {:>7.3} {:>7.3} {:>8.2} {triples:>9}",
            row.hit1, row.mrr, row.mr
        );
    }
    Ok(())
}
