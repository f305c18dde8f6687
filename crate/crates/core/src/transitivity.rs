//! Translation channel: `h + r ≈ t` under the L1 distance, with both graphs
//! embedded in one table and tied together by seed links.

use std::collections::HashSet;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{tensor, xavier_with, ParamStore, Tape, Tensor, Var};
use crate::kg::{KnowledgeGraph, Triple};
use crate::layout::JointLayout;
use crate::recovery::{recovery_loss, MlpVars, RecoveryBatch};

pub const ENTITY_PARAM: &str = "trans.entity";
pub const RELATION_PARAM: &str = "trans.relation";

/// Attempts per negative slot before the graph is declared too dense.
pub const MAX_NEGATIVE_TRIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitivityHyper {
    pub margin: f64,
    pub mapping_weight: f64,
    pub recovery_weight: f64,
    pub negatives: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dim: usize,
}

impl Default for TransitivityHyper {
    fn default() -> Self {
        Self {
            margin: 1.0,
            mapping_weight: 50.0,
            recovery_weight: 1.0,
            negatives: 5,
            lr: 0.1,
            batch_size: 1000,
            dim: 100,
        }
    }
}

impl TransitivityHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config("translation margin must be positive".into()));
        }
        if !(self.mapping_weight >= 0.0 && self.recovery_weight >= 0.0) {
            return Err(Error::Config(
                "translation loss weights must be non-negative".into(),
            ));
        }
        if self.negatives == 0 || self.batch_size == 0 || self.dim == 0 {
            return Err(Error::Config(
                "negatives, batch size and dimension must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Xavier-initialized entity and relation tables for both graphs.
pub fn init_params(layout: &JointLayout, dim: usize, rng: &mut impl Rng) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    store.insert(
        ENTITY_PARAM,
        xavier_with(&[layout.num_entities(), dim], rng)?,
    );
    store.insert(
        RELATION_PARAM,
        xavier_with(&[layout.num_relations(), dim], rng)?,
    );
    Ok(store)
}

/// L1 distance.
pub fn d_t(x: &[f64], y: &[f64]) -> Result<f64> {
    tensor::l1_distance(x, y)
}

fn row_checked<'a>(t: &'a Tensor, i: usize, what: &'static str) -> Result<&'a [f64]> {
    if i >= t.rows() {
        return Err(Error::Index {
            what,
            index: i,
            len: t.rows(),
        });
    }
    Ok(t.row(i))
}

/// `d_t(h_h + h_r, h_t)` for joint rows `h`, `r`, `t`.
pub fn translation_score(h: usize, r: usize, t: usize, params: &ParamStore) -> Result<f64> {
    let ent = params.get(ENTITY_PARAM)?;
    let rel = params.get(RELATION_PARAM)?;
    let (vh, vr, vt) = (
        row_checked(ent, h, "entity")?,
        row_checked(rel, r, "relation")?,
        row_checked(ent, t, "entity")?,
    );
    Ok(vh
        .iter()
        .zip(vr)
        .zip(vt)
        .map(|((a, b), c)| (a + b - c).abs())
        .sum())
}

/// `k` corruptions of `triple` replacing the head or the tail (fair coin) by a
/// different uniform entity, never producing a triple of `kg`.
pub fn sample_negatives(
    triple: &Triple,
    kg: &KnowledgeGraph,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triple>> {
    let n = kg.num_entities();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut found = None;
        for _ in 0..MAX_NEGATIVE_TRIES {
            let x = rng.random_range(0..n);
            let cand = if rng.random_bool(0.5) {
                Triple::new(x, triple.relation, triple.tail)
            } else {
                Triple::new(triple.head, triple.relation, x)
            };
            if cand != *triple && !kg.contains(&cand) {
                found = Some(cand);
                break;
            }
        }
        out.push(found.ok_or(Error::NegativeSampling(
            triple.head,
            triple.relation,
            triple.tail,
        ))?);
    }
    Ok(out)
}

fn scores(tape: &mut Tape, ent: Var, rel: Var, triples: &[Triple]) -> Var {
    let h: Rc<[usize]> = triples.iter().map(|t| t.head).collect();
    let r: Rc<[usize]> = triples.iter().map(|t| t.relation).collect();
    let t: Rc<[usize]> = triples.iter().map(|t| t.tail).collect();
    let vh = tape.gather(ent, h);
    let vr = tape.gather(rel, r);
    let vt = tape.gather(ent, t);
    let s = tape.add(vh, vr);
    let diff = tape.sub(s, vt);
    let a = tape.abs(diff);
    tape.row_sum(a)
}

/// `sum [margin + score(pos) - score(neg)]_+` over `(positive, negative)`
/// pairs given in joint rows.
pub fn translation_loss(
    tape: &mut Tape,
    ent: Var,
    rel: Var,
    pairs: &[(Triple, Triple)],
    margin: f64,
) -> Var {
    if pairs.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let pos: Vec<Triple> = pairs.iter().map(|p| p.0).collect();
    let neg: Vec<Triple> = pairs.iter().map(|p| p.1).collect();
    let sp = scores(tape, ent, rel, &pos);
    let sn = scores(tape, ent, rel, &neg);
    let d = tape.sub(sp, sn);
    let d = tape.add_scalar(d, margin);
    let h = tape.relu(d);
    tape.sum(h)
}

/// `sum d_t(h_p, h_p')` over seed pairs given as joint entity rows.
pub fn mapping_loss_t(tape: &mut Tape, ent: Var, seeds: &[(usize, usize)]) -> Var {
    if seeds.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let a: Rc<[usize]> = seeds.iter().map(|s| s.0).collect();
    let b: Rc<[usize]> = seeds.iter().map(|s| s.1).collect();
    let va = tape.gather(ent, a);
    let vb = tape.gather(ent, b);
    let d = tape.sub(va, vb);
    let d = tape.abs(d);
    tape.sum(d)
}

/// Frozen inputs of one translation-channel step, all in joint rows.
#[derive(Clone, Debug, Default)]
pub struct TransitivityBatch {
    pub pairs: Vec<(Triple, Triple)>,
    pub recovery: RecoveryBatch,
}

/// First phase: `L_ts + beta_tc * L_tc`. `mlp` is `None` when recovery is off.
pub fn phase_one_loss(
    tape: &mut Tape,
    trans: &ParamStore,
    mlp: Option<&ParamStore>,
    batch: &TransitivityBatch,
    hyper: &TransitivityHyper,
    bce_negatives: bool,
) -> Result<Var> {
    let ent = tape.param_from(trans, ENTITY_PARAM)?;
    let rel = tape.param_from(trans, RELATION_PARAM)?;
    let ts = translation_loss(tape, ent, rel, &batch.pairs, hyper.margin);
    match mlp {
        Some(mlp) if hyper.recovery_weight > 0.0 && !batch.recovery.is_empty() => {
            let vars = MlpVars::bind(tape, mlp)?;
            let tc = recovery_loss(tape, ent, &vars, &batch.recovery, bce_negatives);
            let tc = tape.scale(tc, hyper.recovery_weight);
            Ok(tape.add(ts, tc))
        }
        _ => Ok(ts),
    }
}

/// Second phase: `beta_tm * L_tm`.
pub fn phase_two_loss(
    tape: &mut Tape,
    trans: &ParamStore,
    seeds: &[(usize, usize)],
    hyper: &TransitivityHyper,
) -> Result<Var> {
    let ent = tape.param_from(trans, ENTITY_PARAM)?;
    let tm = mapping_loss_t(tape, ent, seeds);
    Ok(tape.scale(tm, hyper.mapping_weight))
}

/// `L_ts + beta_tc * L_tc + beta_tm * L_tm` as one scalar; training applies
/// the two phases separately, this is the objective they jointly minimize.
pub fn transitivity_total_loss(
    tape: &mut Tape,
    trans: &ParamStore,
    mlp: Option<&ParamStore>,
    batch: &TransitivityBatch,
    seeds: &[(usize, usize)],
    hyper: &TransitivityHyper,
    bce_negatives: bool,
) -> Result<Var> {
    let one = phase_one_loss(tape, trans, mlp, batch, hyper, bce_negatives)?;
    let two = phase_two_loss(tape, trans, seeds, hyper)?;
    Ok(tape.add(one, two))
}

/// Negatives for every triple of one graph, mapped into joint rows.
pub fn corrupt_all(
    triples: &[Triple],
    kg: &KnowledgeGraph,
    k: usize,
    to_joint: impl Fn(&Triple) -> Triple,
    rng: &mut impl Rng,
) -> Result<Vec<(Triple, Triple)>> {
    let mut out = Vec::with_capacity(triples.len() * k);
    for t in triples {
        let pos = to_joint(t);
        for neg in sample_negatives(t, kg, k, rng)? {
            out.push((pos, to_joint(&neg)));
        }
    }
    Ok(out)
}

/// Distinct entity rows touched by a batch (used to check update sparsity).
pub fn touched_entities(pairs: &[(Triple, Triple)]) -> HashSet<usize> {
    pairs
        .iter()
        .flat_map(|(p, n)| [p.head, p.tail, n.head, n.tail])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(ent: Vec<Vec<f64>>, rel: Vec<Vec<f64>>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(ENTITY_PARAM, Tensor::from_rows(&ent).unwrap());
        s.insert(RELATION_PARAM, Tensor::from_rows(&rel).unwrap());
        s
    }

    #[test]
    fn l1_examples() {
        assert_eq!(d_t(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(d_t(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap(), 6.0);
        assert!(d_t(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn score_examples() {
        let s = store(
            vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![1.0, 0.0]],
            vec![vec![1.0, 2.0], vec![0.0, 1.0]],
        );
        assert_eq!(translation_score(0, 0, 1, &s).unwrap(), 0.0);
        // (1,0) + (0,1) vs (0,0).
        assert_eq!(translation_score(2, 1, 0, &s).unwrap(), 2.0);
        assert!(translation_score(3, 0, 0, &s).is_err());
    }

    #[test]
    fn hinge_values() {
        // score(pos) = 0.5, score(neg) = 0.2 in one dimension.
        let mut tape = Tape::new();
        let ent = tape.constant(Tensor::column(vec![0.0, 0.5, 0.2]));
        let rel = tape.constant(Tensor::column(vec![0.0]));
        let pairs = [(Triple::new(0, 0, 1), Triple::new(0, 0, 2))];
        let l = translation_loss(&mut tape, ent, rel, &pairs, 1.0);
        assert!((tape.scalar(l) - 1.3).abs() < 1e-12);
        let ent = tape.constant(Tensor::column(vec![0.0, 0.0, 2.0]));
        let l = translation_loss(&mut tape, ent, rel, &pairs, 1.0);
        assert_eq!(tape.scalar(l), 0.0);
        let l = translation_loss(&mut tape, ent, rel, &[], 1.0);
        assert_eq!(tape.scalar(l), 0.0);
    }

    #[test]
    fn mapping_examples() {
        let mut tape = Tape::new();
        let ent = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap());
        let l = mapping_loss_t(&mut tape, ent, &[(0, 1)]);
        assert_eq!(tape.scalar(l), 2.0);
        let l = mapping_loss_t(&mut tape, ent, &[(0, 0), (1, 1)]);
        assert_eq!(tape.scalar(l), 0.0);
        let l = mapping_loss_t(&mut tape, ent, &[]);
        assert_eq!(tape.scalar(l), 0.0);
    }

    #[test]
    fn negatives_are_filtered_and_reproducible() {
        let kg =
            KnowledgeGraph::from_named_triples([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")]);
        let t = Triple::new(0, 0, 1);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_negatives(&t, &kg, 20, &mut rng).unwrap()
        };
        let negs = draw(3);
        assert_eq!(negs, draw(3));
        for n in &negs {
            assert!(!kg.contains(n) && n.relation == 0);
            assert!((n.head == t.head) ^ (n.tail == t.tail));
        }
    }

    #[test]
    fn dense_graph_fails_to_sample() {
        let kg = KnowledgeGraph::from_named_triples([
            ("A", "r", "B"),
            ("A", "r", "A"),
            ("B", "r", "A"),
            ("B", "r", "B"),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negatives(&Triple::new(0, 0, 1), &kg, 1, &mut rng),
            Err(Error::NegativeSampling(..))
        ));
    }

    #[test]
    fn untouched_rows_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = store(
            (0..6)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            vec![vec![0.1, 0.2, 0.3]],
        );
        let pairs = [(Triple::new(0, 0, 1), Triple::new(0, 0, 2))];
        let mut tape = Tape::new();
        let ent = tape.param_from(&s, ENTITY_PARAM).unwrap();
        let rel = tape.param_from(&s, RELATION_PARAM).unwrap();
        let l = translation_loss(&mut tape, ent, rel, &pairs, 5.0);
        let g = tape.backward(l).unwrap();
        let ge = &g[ENTITY_PARAM];
        let touched = touched_entities(&pairs);
        for i in 0..6 {
            let zero = ge.row(i).iter().all(|&x| x == 0.0);
            assert_eq!(zero, !touched.contains(&i), "row {i}");
        }
    }

    #[test]
    fn total_reduces_to_translation_loss() {
        let s = store(
            vec![
                vec![0.3, -0.1],
                vec![0.2, 0.4],
                vec![-0.5, 0.9],
                vec![0.0, 0.1],
            ],
            vec![vec![0.1, 0.1]],
        );
        let batch = TransitivityBatch {
            pairs: vec![(Triple::new(0, 0, 1), Triple::new(0, 0, 2))],
            recovery: RecoveryBatch::default(),
        };
        let hyper = TransitivityHyper {
            mapping_weight: 0.0,
            recovery_weight: 0.0,
            ..Default::default()
        };
        let mut tape = Tape::new();
        let total =
            transitivity_total_loss(&mut tape, &s, None, &batch, &[(0, 3)], &hyper, false).unwrap();
        let ent = tape.param_from(&s, ENTITY_PARAM).unwrap();
        let rel = tape.param_from(&s, RELATION_PARAM).unwrap();
        let ts = translation_loss(&mut tape, ent, rel, &batch.pairs, 1.0);
        assert_eq!(tape.scalar(total), tape.scalar(ts));
    }

    #[test]
    fn translation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let kg = KnowledgeGraph::from_named_triples([
            ("a", "r", "b"),
            ("b", "s", "c"),
            ("c", "r", "d"),
            ("d", "s", "e"),
        ]);
        let layout = JointLayout::new(&kg, &KnowledgeGraph::new());
        let s = init_params(&layout, 4, &mut rng).unwrap();
        let pairs = corrupt_all(kg.triples(), &kg, 3, |t| *t, &mut rng).unwrap();
        let err = finite_difference_check(
            |st| {
                let mut tape = Tape::new();
                let ent = tape.param_from(st, ENTITY_PARAM)?;
                let rel = tape.param_from(st, RELATION_PARAM)?;
                let l = translation_loss(&mut tape, ent, rel, &pairs, 1.0);
                Ok((tape.scalar(l), tape.backward(l)?))
            },
            &s,
            40,
            1e-4,
            5,
        )
        .unwrap();
        assert!(err <= 1e-3, "{err}");
    }
}
