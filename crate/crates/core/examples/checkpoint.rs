//! Save a trained model, load it into a fresh trainer and check that both
//! produce the same similarity matrix.
//!
//! `cargo run --release --example checkpoint -- [dir]`
//!
//! Checkpoints hold parameters only; the JSON sidecar records the config,
//! the epoch, the generator positions and the filled triples.

use std::path::PathBuf;

use ikami::alignment::evaluate;
use ikami::kg::{synthesize, SynthConfig};
use ikami::train::{load_tensors, save_tensors, CheckpointMeta, Dataset, Trainer, TrainingConfig};

fn main() -> ikami::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let dir = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("ikami-checkpoint"),
        PathBuf::from,
    );
    std::fs::create_dir_all(&dir)?;

    let data = Dataset::from_synthetic(
        synthesize(&SynthConfig {
            n_entities: 150,
            ..Default::default()
        })?,
        0.1,
    )?;
    let config = TrainingConfig {
        max_epochs: 10,
        ..Default::default()
    };

    let mut trained = Trainer::new(&data, config.clone())?;
    trained.run()?;
    let path = dir.join("model.ckpt");
    save_tensors(&path, &trained.tensors())?;
    let meta = CheckpointMeta {
        config: config.clone(),
        epoch: trained.epoch,
        rng: trained.rng_state(),
        ledgers: trained.ledgers.clone(),
    };
    std::fs::write(
        dir.join("model.ckpt.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    println!(
        "saved {} tensors ({} bytes) at epoch {} to {}",
        trained.tensors().len(),
        std::fs::metadata(&path)?.len(),
        trained.epoch,
        path.display()
    );

    // Same data and config rebuild the graphs and name features; the
    // checkpoint supplies every trained parameter and the sidecar the
    // triples recovery filled in.
    let mut restored = Trainer::new(&data, config)?;
    let before = evaluate(&restored.similarity()?, &data.test)?;
    let meta: CheckpointMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("model.ckpt.json"))?)?;
    restored.restore(&load_tensors(&path)?)?;
    restored.restore_ledgers(&meta.ledgers)?;
    let after = evaluate(&restored.similarity()?, &data.test)?;
    let same = restored.similarity()? == trained.similarity()?;
    println!(
        "untrained test hit1 {:.3}, restored {:.3}; identical similarity: {same}",
        before.hit1, after.hit1
    );
    Ok(())
}
