//! Reverse-mode gradients against central differences, for a hand-built
//! function and for both embedding channels on a toy graph pair.
//!
//! `cargo run --release --example gradient_check`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ikami::grad::{finite_difference_check, xavier_with, ParamStore, Tape, Tensor};
use ikami::kg::{KnowledgeGraph, Triple};
use ikami::layout::{JointLayout, Side};
use ikami::proximity::{
    self, negative_pairs, ProximityBatch, ProximityGraph, ProximityHyper, ProximityOutput,
};
use ikami::transitivity::{self, corrupt_all, translation_loss, ENTITY_PARAM, RELATION_PARAM};

fn main() -> ikami::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);

    // A small hand-built composition.
    let mut store = ParamStore::new();
    store.insert("x", xavier_with(&[3, 4], &mut rng)?);
    store.insert("w", xavier_with(&[2, 4], &mut rng)?);
    let err = finite_difference_check(
        |s| {
            let mut tape = Tape::new();
            let x = tape.param_from(s, "x")?;
            let w = tape.param_from(s, "w")?;
            let y = tape.matmul_nt(x, w);
            let y = tape.tanh(y);
            let l = tape.sum(y);
            Ok((tape.scalar(l), tape.backward(l)?))
        },
        &store,
        20,
        1e-5,
        0,
    )?;
    println!("sum(tanh(x w^T))          max relative error {err:.2e}");

    let s = KnowledgeGraph::from_named_triples([
        ("a", "r", "b"),
        ("b", "s", "c"),
        ("c", "r", "d"),
        ("a", "s", "e"),
    ])
    .augment()?;
    let t = KnowledgeGraph::from_named_triples([
        ("v", "p", "w"),
        ("w", "q", "x"),
        ("x", "p", "y"),
        ("v", "q", "z"),
    ])
    .augment()?;
    let layout = JointLayout::new(&s, &t);

    let trans = transitivity::init_params(&layout, 4, &mut rng)?;
    let originals: Vec<Triple> = s.original_triples().copied().collect();
    let to_joint = |x: &Triple| {
        Triple::new(
            layout.entity_row(Side::Source, x.head),
            layout.relation_row(Side::Source, x.relation),
            layout.entity_row(Side::Source, x.tail),
        )
    };
    let pairs = corrupt_all(&originals, &s, 2, to_joint, &mut rng)?;
    let err = finite_difference_check(
        |st| {
            let mut tape = Tape::new();
            let ent = tape.param_from(st, ENTITY_PARAM)?;
            let rel = tape.param_from(st, RELATION_PARAM)?;
            let l = translation_loss(&mut tape, ent, rel, &pairs, 1.0);
            Ok((tape.scalar(l), tape.backward(l)?))
        },
        &trans,
        40,
        1e-4,
        1,
    )?;
    println!("translation margin loss   max relative error {err:.2e}");

    let hyper = ProximityHyper {
        dim: 4,
        ..Default::default()
    };
    let graph = ProximityGraph::new(&s, &t, &layout)?;
    let params = proximity::init_params(&layout, &hyper, &mut rng)?;
    let feats: Tensor = xavier_with(&[layout.num_entities(), 4], &mut rng)?;
    let seeds = [(0, 5), (1, 6)];
    let out = ProximityOutput::compute(&graph, &feats, &params, &hyper)?;
    let batch = ProximityBatch {
        pairs: negative_pairs(&seeds, &out.entity, &layout, 2),
        transfer_target: None,
        rows_a: Vec::new(),
        rows_b: Vec::new(),
    };
    let err = finite_difference_check(
        |p| {
            let mut tape = Tape::new();
            let l = proximity::proximity_total_loss(&mut tape, &graph, &feats, p, &hyper, &batch)?;
            Ok((tape.scalar(l), tape.backward(l)?))
        },
        &params,
        40,
        1e-4,
        2,
    )?;
    println!("attention GNN seed loss   max relative error {err:.2e}");
    Ok(())
}
