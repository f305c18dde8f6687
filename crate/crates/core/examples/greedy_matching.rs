//! Fusing two similarity matrices, greedy one-to-one matching, ranking
//! metrics, and seed bootstrapping by repeated nomination.
//!
//! `cargo run --release --example greedy_matching`

use ikami::alignment::{
    evaluate, fuse, greedy_match, nominate_and_update_seeds, similarity_matrix, AlignmentState,
};
use ikami::grad::Tensor;
use ikami::kg::{AlignmentLinks, LinkOrigin};

fn rows(r: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).expect("rectangular")
}

fn main() -> ikami::Result<()> {
    // Two views of three source and three target entities.
    let structure = similarity_matrix(
        &rows(&[&[1.0, 0.0, 0.2], &[0.1, 1.0, 0.0], &[0.9, 0.1, 0.3]]),
        &rows(&[&[1.0, 0.1, 0.0], &[0.0, 1.0, 0.1], &[0.2, 0.0, 1.0]]),
    )?;
    let names = similarity_matrix(
        &rows(&[&[0.9, 0.1], &[0.1, 0.9], &[0.5, 0.5]]),
        &rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.6]]),
    )?;
    let fused = fuse(&structure, &names, 0.4)?;
    for i in 0..fused.rows() {
        println!(
            "  {:?}",
            fused
                .row(i)
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
        );
    }

    println!("greedy matching (source, target, score):");
    for (i, j, s) in greedy_match(&fused) {
        println!("  {i} -> {j}  {s:.3}");
    }

    let gold = AlignmentLinks::from_pairs([(0, 0), (1, 1), (2, 2)], LinkOrigin::GoldEval);
    let m = evaluate(&fused, &gold)?;
    println!(
        "hit1 {:.3} hit10 {:.3} mrr {:.3} mr {:.2}",
        m.hit1, m.hit10, m.mrr, m.mr
    );

    // A pair is adopted after being nominated in two consecutive rounds.
    let mut state =
        AlignmentState::new(AlignmentLinks::from_pairs([(0, 0)], LinkOrigin::GivenSeed));
    for round in 1..=3 {
        let adopted = nominate_and_update_seeds(&mut state, &fused, 1, 2);
        println!(
            "round {round}: adopted {adopted:?}, seeds now {:?}",
            state.seeds.pairs()
        );
    }
    Ok(())
}
