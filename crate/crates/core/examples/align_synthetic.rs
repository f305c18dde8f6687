//! End-to-end alignment on a synthetic graph pair.
//!
//! `cargo run --release --example align_synthetic -- [rng_seed] [max_epochs]`

use std::time::Instant;

use ikami::kg::{synthesize, SynthConfig};
use ikami::train::{Dataset, Trainer, TrainingConfig};

fn main() -> ikami::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("rng seed"));
    let max_epochs: usize = args.next().map_or(300, |s| s.parse().expect("epochs"));

    let pair = synthesize(&SynthConfig {
        rng_seed: seed,
        ..Default::default()
    })?;
    let config = TrainingConfig {
        seed,
        max_epochs,
        ..Default::default()
    };
    let data = Dataset::from_synthetic(pair, config.dev_fraction)?;
    println!(
        "source: {} entities / {} triples, target: {} / {}, seeds {}, dev {}, test {}",
        data.source.num_entities(),
        data.source.num_triples(),
        data.target.num_entities(),
        data.target.num_triples(),
        data.train.len(),
        data.dev.len(),
        data.test.len()
    );
    let start = Instant::now();
    let outcome = Trainer::new(&data, config)?.run()?;
    let report = outcome.best.report();
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!(
        "epochs run {} (early stop: {}), {:.1}s",
        outcome.epochs_run,
        outcome.stopped_early,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
