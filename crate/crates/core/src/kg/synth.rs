//! Synthetic incomplete graph pairs and triple removal.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AlignmentLinks, KnowledgeGraph, LinkOrigin, Triple};
use crate::error::{Error, Result};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "to", "sa", "vel", "nor", "di", "qua", "bre", "zu", "fen", "ta", "mo",
    "li", "ger", "an", "ost", "pi", "dar", "el", "rus", "ven", "co", "hal", "ni", "sto",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub avg_degree: f64,
    pub removal_source: f64,
    pub removal_target: f64,
    pub seed_fraction: f64,
    /// Fraction of target entities renamed to an unrelated name.
    #[serde(default)]
    pub name_noise: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 300,
            n_relations: 20,
            avg_degree: 6.0,
            removal_source: 0.15,
            removal_target: 0.15,
            seed_fraction: 0.2,
            name_noise: 0.0,
            rng_seed: 7,
        }
    }
}

/// Two graphs cloned from one base graph, with independent triple removal.
///
/// Source entity `i` and target entity `target_of[i]` denote the same
/// base entity. `seeds` and `eval` partition the gold correspondence.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub source: KnowledgeGraph,
    pub target: KnowledgeGraph,
    pub seeds: AlignmentLinks,
    pub eval: AlignmentLinks,
    pub target_of: Vec<usize>,
    /// Base triples dropped from each side, in that side's indices.
    pub removed_source: Vec<Triple>,
    pub removed_target: Vec<Triple>,
}

fn check_fraction(name: &str, v: f64, inclusive_one: bool) -> Result<()> {
    let ok = v >= 0.0 && (v < 1.0 || (inclusive_one && v <= 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0,1), got {v}")))
    }
}

fn random_word(rng: &mut impl Rng) -> String {
    let k = rng.random_range(2..=3);
    let mut w: String = (0..k)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect();
    w[..1].make_ascii_uppercase();
    w
}

fn random_name(rng: &mut impl Rng) -> String {
    let first = random_word(rng);
    format!("{first}_{}", random_word(rng))
}

fn weighted_pick(rng: &mut impl Rng, candidates: &[usize], degree: &[usize]) -> usize {
    let total: usize = candidates.iter().map(|&c| degree[c] + 1).sum();
    let mut x = rng.random_range(0..total);
    for &c in candidates {
        let w = degree[c] + 1;
        if x < w {
            return c;
        }
        x -= w;
    }
    *candidates.last().expect("nonempty candidates")
}

/// Typed base graph with preferential attachment. Returns `(names, triples)`.
fn base_graph(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<Triple>) {
    let n = cfg.n_entities;
    let n_rel = cfg.n_relations.max(1);
    let mut seen_names = HashSet::new();
    let names: Vec<String> = (0..n)
        .map(|_| loop {
            let name = random_name(rng);
            if seen_names.insert(name.clone()) {
                break name;
            }
        })
        .collect();

    let n_types = ((n_rel as f64).sqrt().ceil() as usize).clamp(2, n.max(2));
    let entity_type: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_types)).collect();
    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); n_types];
    for (e, &ty) in entity_type.iter().enumerate() {
        by_type[ty].push(e);
    }
    let signature: Vec<(usize, usize)> = (0..n_rel)
        .map(|r| (r % n_types, rng.random_range(0..n_types)))
        .collect();
    let rel_weight: Vec<f64> = (0..n_rel)
        .map(|r| 1.0 / ((r + 1) as f64).powf(0.7))
        .collect();
    let weight_total: f64 = rel_weight.iter().sum();
    let pick_relation = |rng: &mut ChaCha8Rng| {
        let mut x = rng.random_range(0.0..weight_total);
        for (r, w) in rel_weight.iter().enumerate() {
            if x < *w {
                return r;
            }
            x -= w;
        }
        n_rel - 1
    };

    let target = (cfg.avg_degree * n as f64 / 2.0).round() as usize;
    let mut degree = vec![0usize; n];
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    let mut triples = Vec::with_capacity(target);
    let mut add = |h: usize, r: usize, t: usize, degree: &mut Vec<usize>| {
        if h == t || pairs.contains(&(h, t)) || pairs.contains(&(t, h)) {
            return false;
        }
        pairs.insert((h, t));
        degree[h] += 1;
        degree[t] += 1;
        triples.push(Triple::new(h, r, t));
        true
    };

    // Every entity gets at least one triple first.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &e in order.iter().take(target) {
        let ty = entity_type[e];
        let options: Vec<(usize, bool)> = signature
            .iter()
            .enumerate()
            .flat_map(|(r, &(h, t))| {
                let mut v = Vec::new();
                if h == ty && by_type[t].iter().any(|&x| x != e) {
                    v.push((r, true));
                }
                if t == ty && by_type[h].iter().any(|&x| x != e) {
                    v.push((r, false));
                }
                v
            })
            .collect();
        if options.is_empty() {
            continue;
        }
        for _ in 0..10 {
            let (r, as_head) = options[rng.random_range(0..options.len())];
            let other_ty = if as_head {
                signature[r].1
            } else {
                signature[r].0
            };
            let other = weighted_pick(rng, &by_type[other_ty], &degree);
            let (h, t) = if as_head { (e, other) } else { (other, e) };
            if add(h, r, t, &mut degree) {
                break;
            }
        }
    }

    let mut attempts = 0;
    while triples_len(&degree) < target && attempts < 50 * target.max(1) {
        attempts += 1;
        let r = pick_relation(rng);
        let (hty, tty) = signature[r];
        if by_type[hty].is_empty() || by_type[tty].is_empty() {
            continue;
        }
        let h = weighted_pick(rng, &by_type[hty], &degree);
        let t = weighted_pick(rng, &by_type[tty], &degree);
        add(h, r, t, &mut degree);
    }
    (names, triples)
}

fn triples_len(degree: &[usize]) -> usize {
    degree.iter().sum::<usize>() / 2
}

/// Indices of `round(ratio * len)` items chosen uniformly without replacement, ascending.
fn removal_indices(len: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = (ratio * len as f64).round() as usize;
    let mut idx = index::sample(rng, len, k.min(len)).into_vec();
    idx.sort_unstable();
    idx
}

fn build_graph(
    entity_names: &[String],
    relation_names: &[String],
    triples: &[Triple],
    entity_order: &[usize],
) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::new();
    for &e in entity_order {
        kg.intern_entity(&entity_names[e]);
    }
    for r in relation_names {
        kg.intern_relation(r);
    }
    let mut position = vec![0; entity_order.len()];
    for (i, &e) in entity_order.iter().enumerate() {
        position[e] = i;
    }
    let remapped = triples
        .iter()
        .map(|t| Triple::new(position[t.head], t.relation, position[t.tail]))
        .collect();
    kg.with_triples(remapped)
}

/// Generates a source/target pair from one typed, heavy-tailed base graph.
pub fn synthesize(cfg: &SynthConfig) -> Result<SyntheticPair> {
    check_fraction("removal_source", cfg.removal_source, false)?;
    check_fraction("removal_target", cfg.removal_target, false)?;
    check_fraction("seed_fraction", cfg.seed_fraction, true)?;
    check_fraction("name_noise", cfg.name_noise, true)?;
    if cfg.n_entities < 2 || cfg.n_relations == 0 {
        return Err(Error::Config(
            "need at least 2 entities and 1 relation".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let (names, base) = base_graph(cfg, &mut rng);
    let n = cfg.n_entities;

    let src_names: Vec<String> = names
        .iter()
        .map(|nm| format!("http://source.example/resource/{nm}"))
        .collect();
    let mut taken: HashSet<String> = names.iter().cloned().collect();
    let renamed: HashSet<usize> =
        index::sample(&mut rng, n, (cfg.name_noise * n as f64).round() as usize)
            .into_iter()
            .collect();
    let tgt_names: Vec<String> = names
        .iter()
        .enumerate()
        .map(|(i, nm)| {
            let nm = if renamed.contains(&i) {
                loop {
                    let fresh = random_name(&mut rng);
                    if taken.insert(fresh.clone()) {
                        break fresh;
                    }
                }
            } else {
                nm.clone()
            };
            format!("http://target.example/resource/{nm}")
        })
        .collect();
    let src_rel: Vec<String> = (0..cfg.n_relations)
        .map(|r| format!("source:rel{r}"))
        .collect();
    let tgt_rel: Vec<String> = (0..cfg.n_relations)
        .map(|r| format!("target:rel{r}"))
        .collect();

    let drop_s: HashSet<usize> = removal_indices(base.len(), cfg.removal_source, &mut rng)
        .into_iter()
        .collect();
    let drop_t: HashSet<usize> = removal_indices(base.len(), cfg.removal_target, &mut rng)
        .into_iter()
        .collect();
    let keep = |drop: &HashSet<usize>| -> Vec<Triple> {
        base.iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, t)| *t)
            .collect()
    };

    let identity: Vec<usize> = (0..n).collect();
    let source = build_graph(&src_names, &src_rel, &keep(&drop_s), &identity);
    let mut perm = identity.clone();
    perm.shuffle(&mut rng);
    let target = build_graph(&tgt_names, &tgt_rel, &keep(&drop_t), &perm);
    let mut target_of = vec![0; n];
    for (i, &e) in perm.iter().enumerate() {
        target_of[e] = i;
    }
    let dropped = |drop: &HashSet<usize>, map: &dyn Fn(usize) -> usize| -> Vec<Triple> {
        let mut idx: Vec<usize> = drop.iter().copied().collect();
        idx.sort_unstable();
        idx.iter()
            .map(|&i| Triple::new(map(base[i].head), base[i].relation, map(base[i].tail)))
            .collect()
    };
    let removed_source = dropped(&drop_s, &|e| e);
    let removed_target = dropped(&drop_t, &|e| target_of[e]);

    let mut order = identity;
    order.shuffle(&mut rng);
    let n_seed = (cfg.seed_fraction * n as f64).round() as usize;
    let seeds = AlignmentLinks::from_pairs(
        order[..n_seed].iter().map(|&e| (e, target_of[e])),
        LinkOrigin::GivenSeed,
    );
    let eval = AlignmentLinks::from_pairs(
        order[n_seed..].iter().map(|&e| (e, target_of[e])),
        LinkOrigin::GoldEval,
    );
    Ok(SyntheticPair {
        source,
        target,
        seeds,
        eval,
        target_of,
        removed_source,
        removed_target,
    })
}

/// Convenience form of [`synthesize`] without name noise.
pub fn synthesize_pair(
    n_entities: usize,
    n_relations: usize,
    avg_degree: f64,
    removal_source: f64,
    removal_target: f64,
    seed_fraction: f64,
    rng_seed: u64,
) -> Result<SyntheticPair> {
    synthesize(&SynthConfig {
        n_entities,
        n_relations,
        avg_degree,
        removal_source,
        removal_target,
        seed_fraction,
        name_noise: 0.0,
        rng_seed,
    })
}

/// Removes exactly `round(ratio * |E|)` triples uniformly at random.
///
/// Entity and relation tables are kept, so the returned triples index into
/// the output graph; entities may end up isolated.
pub fn sparsify(
    kg: &KnowledgeGraph,
    ratio: f64,
    rng_seed: u64,
) -> Result<(KnowledgeGraph, Vec<Triple>)> {
    if kg.is_augmented() {
        return Err(Error::AlreadyAugmented);
    }
    check_fraction("ratio", ratio, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let drop = removal_indices(kg.num_triples(), ratio, &mut rng);
    let drop_set: HashSet<usize> = drop.iter().copied().collect();
    let removed = drop.iter().map(|&i| kg.triples()[i]).collect();
    let kept = kg
        .triples()
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop_set.contains(i))
        .map(|(_, t)| *t)
        .collect();
    Ok((kg.with_triples(kept), removed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_removal_gives_isomorphic_graphs() {
        let pair = synthesize_pair(60, 5, 4.0, 0.0, 0.0, 1.0, 3).unwrap();
        assert_eq!(pair.seeds.len(), 60);
        assert!(pair.eval.is_empty());
        assert_eq!(pair.source.num_triples(), pair.target.num_triples());
        for t in pair.source.triples() {
            let mapped = Triple::new(pair.target_of[t.head], t.relation, pair.target_of[t.tail]);
            assert!(pair.target.contains(&mapped));
        }
    }

    #[test]
    fn exact_count_removal() {
        let pair = synthesize_pair(400, 10, 5.0, 0.0, 0.2, 0.3, 1).unwrap();
        assert_eq!(pair.source.num_triples(), 1000);
        assert_eq!(pair.target.num_triples(), 800);
        assert_eq!(pair.target.num_entities(), 400);
        assert!(pair.removed_source.is_empty());
        assert_eq!(pair.removed_target.len(), 200);
        assert!(pair.removed_target.iter().all(|t| !pair.target.contains(t)));
        for t in &pair.removed_target {
            let back = |i| pair.target_of.iter().position(|&x| x == i).unwrap();
            assert!(pair
                .source
                .contains(&Triple::new(back(t.head), t.relation, back(t.tail))));
        }
    }

    #[test]
    fn deterministic() {
        let a = synthesize_pair(100, 8, 6.0, 0.1, 0.2, 0.3, 42).unwrap();
        let b = synthesize_pair(100, 8, 6.0, 0.1, 0.2, 0.3, 42).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_eq!(a.seeds, b.seeds);
        assert_eq!(a.eval, b.eval);
        let c = synthesize_pair(100, 8, 6.0, 0.1, 0.2, 0.3, 43).unwrap();
        assert_ne!(a.target, c.target);
    }

    #[test]
    fn rejects_bad_ratio() {
        assert!(synthesize_pair(10, 2, 2.0, 1.0, 0.0, 0.5, 0).is_err());
        assert!(synthesize_pair(10, 2, 2.0, 0.0, 0.0, 1.5, 0).is_err());
    }

    #[test]
    fn sparsify_counts_and_determinism() {
        let kg = synthesize_pair(200, 6, 5.0, 0.0, 0.0, 0.0, 9)
            .unwrap()
            .source;
        let (same, none) = sparsify(&kg, 0.0, 1).unwrap();
        assert!(none.is_empty());
        assert_eq!(same, kg);
        let (a, removed) = sparsify(&kg, 0.2, 5).unwrap();
        assert_eq!(removed.len(), 100);
        assert_eq!(a.num_triples(), 400);
        assert_eq!(a.num_entities(), kg.num_entities());
        assert!(removed.iter().all(|t| kg.contains(t) && !a.contains(t)));
        assert_eq!(sparsify(&kg, 0.2, 5).unwrap().1, removed);
        assert!(sparsify(&kg.augment().unwrap(), 0.2, 5).is_err());
    }
}
