//! Per-neighbor attention of the relation-aware GNN on a small graph pair.
//!
//! `cargo run --release --example attention -- [entity]`
//!
//! Weights come from an untrained model; each entity's weights over its
//! neighbors (including itself, via the self-loop) sum to one per layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ikami::grad::xavier_with;
use ikami::kg::KnowledgeGraph;
use ikami::layout::{JointLayout, Side};
use ikami::proximity::{self, ProximityGraph, ProximityHyper, ProximityOutput};

fn main() -> ikami::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "Berlin".into());
    let source = KnowledgeGraph::from_named_triples([
        ("Berlin", "capital_of", "Germany"),
        ("Berlin", "located_in", "Europe"),
        ("Germany", "located_in", "Europe"),
        ("Spree", "flows_through", "Berlin"),
        ("Hamburg", "located_in", "Germany"),
    ])
    .augment()?;
    let target = KnowledgeGraph::from_named_triples([
        ("Berlin_(city)", "capital", "Deutschland"),
        ("Deutschland", "part_of", "Europa"),
    ])
    .augment()?;
    let layout = JointLayout::new(&source, &target);
    let graph = ProximityGraph::new(&source, &target, &layout)?;
    let hyper = ProximityHyper {
        dim: 16,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = proximity::init_params(&layout, &hyper, &mut rng)?;
    let features = xavier_with(&[layout.num_entities(), hyper.dim], &mut rng)?;
    let out = ProximityOutput::compute(&graph, &features, &params, &hyper)?;

    let Some(p) = source.entity_id(&name) else {
        eprintln!(
            "unknown source entity `{name}`; try one of {:?}",
            source.entities()
        );
        std::process::exit(2);
    };
    let row = layout.entity_row(Side::Source, p);
    for k in 0..hyper.layers {
        println!("layer {k}, attention of {name}:");
        let weights = out.attention_weights(&graph, row, k);
        for (e, w) in graph.edges_of(row).zip(weights) {
            let (q, r) = (
                graph.src[e],
                graph.rel[e] - layout.relation_row(Side::Source, 0),
            );
            println!(
                "  {w:.4}  {:<14} via {}",
                source.entity_name(q - layout.entity_row(Side::Source, 0)),
                source.relation(r).name
            );
        }
        println!("  sum {:.12}", weights.iter().sum::<f64>());
    }
    Ok(())
}
