//! The translation channel on its own: fit `h + r ≈ t` on one small graph
//! with the margin loss and Adam, then compare true and corrupted triples.
//!
//! `cargo run --release --example translation_channel -- [epochs]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ikami::grad::Tape;
use ikami::kg::{KnowledgeGraph, Triple};
use ikami::layout::JointLayout;
use ikami::transitivity::{
    corrupt_all, d_t, init_params, translation_loss, translation_score, ENTITY_PARAM,
    RELATION_PARAM,
};

fn main() -> ikami::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .map_or(200, |s| s.parse().expect("epochs"));
    let kg = KnowledgeGraph::from_named_triples([
        ("Paris", "capital_of", "France"),
        ("Rome", "capital_of", "Italy"),
        ("Madrid", "capital_of", "Spain"),
        ("France", "borders", "Spain"),
        ("France", "borders", "Italy"),
        ("Seine", "flows_through", "Paris"),
        ("Tiber", "flows_through", "Rome"),
    ]);
    // A single graph: the joint layout is just its own rows.
    let layout = JointLayout::new(&kg, &KnowledgeGraph::new());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = init_params(&layout, 16, &mut rng)?;

    for epoch in 0..=epochs {
        let pairs = corrupt_all(kg.triples(), &kg, 5, |t| *t, &mut rng)?;
        let mut tape = Tape::new();
        let ent = tape.param_from(&params, ENTITY_PARAM)?;
        let rel = tape.param_from(&params, RELATION_PARAM)?;
        let loss = translation_loss(&mut tape, ent, rel, &pairs, 1.0);
        if epoch % 50 == 0 {
            println!("epoch {epoch:>4}  margin loss {:.4}", tape.scalar(loss));
        }
        let grads = tape.backward(loss)?;
        params.adam_step(&grads, 0.01)?;
    }

    let id = |n: &str| kg.entity_id(n).expect("entity");
    let capital = kg.relation_id("capital_of").expect("relation");
    for (h, t) in [
        ("Paris", "France"),
        ("Paris", "Italy"),
        ("Rome", "Italy"),
        ("Rome", "Spain"),
    ] {
        let known = kg.contains(&Triple::new(id(h), capital, id(t)));
        let d = translation_score(id(h), capital, id(t), &params)?;
        println!(
            "d({h} + capital_of, {t}) = {d:.3}{}",
            if known { "  (known)" } else { "" }
        );
    }
    let ent = params.get(ENTITY_PARAM)?;
    println!(
        "L1 distance Paris-Rome {:.3}, Paris-Seine {:.3}",
        d_t(ent.row(id("Paris")), ent.row(id("Rome")))?,
        d_t(ent.row(id("Paris")), ent.row(id("Seine")))?
    );
    Ok(())
}
