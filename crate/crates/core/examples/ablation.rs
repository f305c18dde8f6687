//! Full model against its variants on one synthetic instance.
//!
//! `cargo run --release --example ablation -- [seed] [variants]`
//! e.g. `-- 7 full,var1,var2`. Runs share a pool of `IKAMI_THREADS` workers.

use ikami::experiment::{self, RunConfig};
use ikami::train::Variant;

fn main() -> ikami::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let mut config = RunConfig::default();
    config.training.seed = args.next().map_or(7, |s| s.parse().expect("seed"));
    let variants = match args.next() {
        Some(list) => list
            .split(',')
            .map(Variant::parse)
            .collect::<ikami::Result<Vec<_>>>()?,
        None => Variant::ALL.to_vec(),
    };

    let runs = experiment::ablate(&config, &variants, experiment::thread_count()?)?;
    println!(
        "{:<8} {:>7} {:>7} {:>7} {:>8} {:>7}",
        "variant", "hit1", "hit10", "mrr", "mr", "epochs"
    );
    for (name, out) in &runs {
        let m = &out.report.final_metrics;
        println!(
            "{name:<8} {:>7.3} {:>7.3} {:>7.3} {:>8.2} {:>7}",
            m.hit1, m.hit10, m.mrr, m.mr, out.report.epochs_run
        );
    }
    Ok(())
}
