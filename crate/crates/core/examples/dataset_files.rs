//! Tab-separated datasets: write a synthetic pair to disk, read it back,
//! sparsify a graph, and train straight from the files.
//!
//! `cargo run --release --example dataset_files -- [dir]`
//!
//! Layout: `source_triples.tsv` / `target_triples.tsv` hold `head\trel\ttail`
//! lines, `train_links.tsv` / `test_links.tsv` hold `source\ttarget` names.

use std::path::PathBuf;

use ikami::experiment::{self, RunConfig};
use ikami::kg::{
    load_links, load_triples, sparsify, synthesize, write_links, write_triples, LinkOrigin,
    SynthConfig,
};

fn main() -> ikami::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ikami-dataset"), PathBuf::from);
    std::fs::create_dir_all(&dir)?;

    // Without removal every entity keeps its triples, so every link is
    // readable from the triple files.
    let pair = synthesize(&SynthConfig {
        n_entities: 120,
        removal_source: 0.0,
        removal_target: 0.0,
        ..Default::default()
    })?;
    write_triples(
        dir.join("source_triples.tsv"),
        &pair.source,
        pair.source.triples(),
    )?;
    write_triples(
        dir.join("target_triples.tsv"),
        &pair.target,
        pair.target.triples(),
    )?;
    write_links(
        dir.join("train_links.tsv"),
        &pair.seeds,
        &pair.source,
        &pair.target,
    )?;
    write_links(
        dir.join("test_links.tsv"),
        &pair.eval,
        &pair.source,
        &pair.target,
    )?;
    println!("wrote {}", dir.display());

    let source = load_triples(dir.join("source_triples.tsv"))?;
    let target = load_triples(dir.join("target_triples.tsv"))?;
    let train = load_links(
        dir.join("train_links.tsv"),
        &source,
        &target,
        LinkOrigin::GivenSeed,
    )?;
    println!(
        "read back {} + {} triples, {} seed links; first: {} <-> {}",
        source.num_triples(),
        target.num_triples(),
        train.len(),
        source.entity_name(train.pairs()[0].0),
        target.entity_name(train.pairs()[0].1)
    );

    let (kept, removed) = sparsify(&source, 0.2, 7)?;
    println!(
        "sparsified source: kept {}, removed {} (e.g. {} {} {})",
        kept.num_triples(),
        removed.len(),
        kept.entity_name(removed[0].head),
        kept.relation(removed[0].relation).name,
        kept.entity_name(removed[0].tail)
    );

    let mut config = RunConfig::default();
    config.data.source = Some(dir.join("source_triples.tsv"));
    config.data.target = Some(dir.join("target_triples.tsv"));
    config.data.train_links = Some(dir.join("train_links.tsv"));
    config.data.test_links = Some(dir.join("test_links.tsv"));
    config.training.max_epochs = 20;
    let out = experiment::run("train", &config, None)?;
    let m = &out.report.final_metrics;
    println!(
        "trained from files: test hit1 {:.3} mrr {:.3} after {} epochs",
        m.hit1, m.mrr, out.report.epochs_run
    );
    Ok(())
}
