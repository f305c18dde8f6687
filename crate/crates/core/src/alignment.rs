//! Similarity fusion, greedy matching, seed bootstrapping and ranking metrics.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::kg::{AlignmentLinks, LinkOrigin};
use crate::layout::{JointLayout, Side};
use crate::proximity::normalize_rows;

/// Cosine similarities between rows of `source` and rows of `target`;
/// zero rows have similarity 0 to everything.
pub fn similarity_matrix(source: &Tensor, target: &Tensor) -> Result<Tensor> {
    if source.cols() != target.cols() {
        return Err(Error::Dimension(source.cols(), target.cols()));
    }
    Ok(normalize_rows(source).matmul_nt(&normalize_rows(target)))
}

/// Similarity matrix of a joint entity table, source rows against target rows.
pub fn joint_similarity(entity: &Tensor, layout: &JointLayout) -> Result<Tensor> {
    let s: Vec<usize> = layout.entity_range(Side::Source).collect();
    let t: Vec<usize> = layout.entity_range(Side::Target).collect();
    similarity_matrix(&entity.gather_rows(&s), &entity.gather_rows(&t))
}

/// `beta * s_t + (1 - beta) * s_g`.
pub fn fuse(s_t: &Tensor, s_g: &Tensor, beta: f64) -> Result<Tensor> {
    if s_t.shape() != s_g.shape() {
        return Err(Error::Shape {
            name: "similarity matrix".into(),
            expected: s_t.shape().to_vec(),
            actual: s_g.shape().to_vec(),
        });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!(
            "similarity weight must be in [0,1], got {beta}"
        )));
    }
    Ok(s_t.zip_map(s_g, |a, b| beta * a + (1.0 - beta) * b))
}

/// Injective matching taking pairs by descending score; ties go to the
/// lower source row, then the lower target column. Pairs are returned in
/// acceptance order with their scores.
pub fn greedy_match(s: &Tensor) -> Vec<(usize, usize, f64)> {
    let (rows, cols) = (s.rows(), s.cols());
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..rows * cols).collect();
    let data = s.data();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    let (mut used_r, mut used_c) = (vec![false; rows], vec![false; cols]);
    let mut out = Vec::with_capacity(rows.min(cols));
    for idx in order {
        let (i, j) = (idx / cols, idx % cols);
        if used_r[i] || used_c[j] {
            continue;
        }
        used_r[i] = true;
        used_c[j] = true;
        out.push((i, j, data[idx]));
        if out.len() == rows.min(cols) {
            break;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentState {
    pub seeds: AlignmentLinks,
    /// Consecutive nominations of candidate pairs not yet adopted.
    pub nomination_counts: BTreeMap<(usize, usize), usize>,
}

impl AlignmentState {
    pub fn new(seeds: AlignmentLinks) -> Self {
        Self {
            seeds,
            nomination_counts: BTreeMap::new(),
        }
    }
}

/// Nominates the `c` best greedy pairs whose endpoints are not seeded yet and
/// adopts those nominated `n` times in a row. Returns the adopted pairs.
pub fn nominate_and_update_seeds(
    state: &mut AlignmentState,
    s: &Tensor,
    c: usize,
    n: usize,
) -> Vec<(usize, usize)> {
    let seeded_s: HashSet<usize> = state.seeds.pairs().iter().map(|p| p.0).collect();
    let seeded_t: HashSet<usize> = state.seeds.pairs().iter().map(|p| p.1).collect();
    let nominated: Vec<(usize, usize)> = greedy_match(s)
        .into_iter()
        .filter(|(i, j, _)| !seeded_s.contains(i) && !seeded_t.contains(j))
        .take(c)
        .map(|(i, j, _)| (i, j))
        .collect();
    let mut counts = BTreeMap::new();
    let mut adopted = Vec::new();
    for pair in nominated {
        let k = state.nomination_counts.get(&pair).copied().unwrap_or(0) + 1;
        if k >= n.max(1) {
            state.seeds.push(pair, LinkOrigin::Bootstrapped);
            adopted.push(pair);
        } else {
            counts.insert(pair, k);
        }
    }
    state.nomination_counts = counts;
    adopted
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hit1: f64,
    pub hit10: f64,
    pub mrr: f64,
    pub mr: f64,
}

impl Metrics {
    /// Aggregates 1-based ranks.
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Empty("ranks"));
        }
        let n = ranks.len() as f64;
        let count = |m: usize| ranks.iter().filter(|&&r| r <= m).count() as f64 / n;
        Ok(Self {
            hit1: count(1),
            hit10: count(10),
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            mr: ranks.iter().sum::<usize>() as f64 / n,
        })
    }
}

/// 1-based rank of column `gold` in `row` by descending score; equal scores
/// rank lower indices first.
pub fn rank_in_row(row: &[f64], gold: usize) -> usize {
    let g = row[gold];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > g || (v == g && j < gold))
        .count()
}

/// Left-to-right ranking metrics of `gold` pairs under `s`.
pub fn evaluate(s: &Tensor, gold: &AlignmentLinks) -> Result<Metrics> {
    let mut ranks = Vec::with_capacity(gold.len());
    for &(p, q) in gold.pairs() {
        if p >= s.rows() || q >= s.cols() {
            return Err(Error::Index {
                what: "gold pair",
                index: if p >= s.rows() { p } else { q },
                len: if p >= s.rows() { s.rows() } else { s.cols() },
            });
        }
        ranks.push(rank_in_row(s.row(p), q));
    }
    Metrics::from_ranks(&ranks)
}

/// True when the last two values both fail to exceed the best value seen
/// before them.
pub fn early_stop(history: &[f64]) -> bool {
    let n = history.len();
    if n < 3 {
        return false;
    }
    let best = history[..n - 2]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    history[n - 2] <= best && history[n - 1] <= best
}

/// Final alignment report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub hit1: f64,
    pub hit10: f64,
    pub mrr: f64,
    pub mr: f64,
    pub epoch: usize,
    pub seeds_total: usize,
    pub seeds_bootstrapped: usize,
}

impl Report {
    pub fn new(metrics: Metrics, epoch: usize, seeds: &AlignmentLinks) -> Self {
        Self {
            hit1: metrics.hit1,
            hit10: metrics.hit10,
            mrr: metrics.mrr,
            mr: metrics.mr,
            epoch,
            seeds_total: seeds.len(),
            seeds_bootstrapped: seeds.count(LinkOrigin::Bootstrapped),
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            hit1: self.hit1,
            hit10: self.hit10,
            mrr: self.mrr,
            mr: self.mr,
        }
    }
}
