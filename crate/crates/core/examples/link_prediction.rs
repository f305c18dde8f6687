//! Drop a fifth of the source triples, train, then ask the translation
//! embeddings to predict them and see which ones the detector filled back.
//!
//! `cargo run --release --example link_prediction -- [seed] [max_epochs]`
//!
//! The recipe trains 100 epochs without early stopping, several minutes on
//! one core; pass e.g. `7 30` for a quicker look.

use ikami::experiment::{self, RunConfig};

fn main() -> ikami::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let mut config = RunConfig::kgc_defaults();
    config.training.seed = args.next().map_or(7, |s| s.parse().expect("seed"));
    if let Some(e) = args.next() {
        config.training.max_epochs = e.parse().expect("epochs");
    }

    let out = experiment::kgc(&config, None)?;
    let report = &out.report;
    if let Some(kgc) = &report.kgc {
        let m = &kgc.metrics;
        println!(
            "{} held-out triples, head and tail queries: hit1 {:.3} hit10 {:.3} mrr {:.3} (random {:.4}) mr {:.1}",
            m.queries, m.hit1, m.hit10, m.mrr, kgc.random_mrr, m.mr
        );
    }
    if let Some(rec) = &report.recovery {
        for (side, q) in [("source", &rec.source), ("target", &rec.target)] {
            println!(
                "{side}: filled {} of which {} were removed ({} removed in total): recall {:.3} precision {:.3}",
                q.filled, q.hits, q.removed, q.recall, q.precision
            );
        }
    }
    let kg = &out.graphs[0];
    println!("first triples filled into the source graph:");
    for (t, epoch) in out.recovered[0].iter().take(10) {
        println!(
            "  epoch {epoch:>3}  {} --{}--> {}",
            kg.entity_name(t.head),
            kg.relation(t.relation).name,
            kg.entity_name(t.tail)
        );
    }
    Ok(())
}
