//! Relation-aware attention GNN over name features.
//!
//! Each layer composes a neighbor with its relation (`h_q - h_r`), projects
//! the result with a direction-specific matrix (original, inverse or
//! self-loop edge), weights messages with GATv2-style attention and passes
//! the sum through a linear map and `tanh`. Final embeddings project the
//! concatenation of all layers. Both graphs share every weight.
//!
//! Because projections are linear, `W (h_q - h_r) = W h_q - W h_r`; the
//! forward pass projects entity and relation tables once per layer and
//! gathers per edge instead of multiplying every edge.

use std::collections::HashSet;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{tensor, xavier_with, EdgeIndex, ParamStore, Segments, Tape, Tensor, Var};
use crate::kg::{KnowledgeGraph, RelationKind};
use crate::layout::{JointLayout, Side};

pub const RELATION0_PARAM: &str = "prox.relation0";
pub const ENTITY_OUT_PARAM: &str = "prox.w_ge";
pub const RELATION_OUT_PARAM: &str = "prox.w_gr";

/// Parameter names of layer `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerNames {
    pub w_original: String,
    pub w_inverse: String,
    pub w_self: String,
    pub w_relation: String,
    pub w_att: String,
    pub a: String,
    pub f_weight: String,
    pub f_bias: String,
}

impl LayerNames {
    pub fn new(k: usize) -> Self {
        let n = |s: &str| format!("prox.l{k}.{s}");
        Self {
            w_original: n("w_o"),
            w_inverse: n("w_i"),
            w_self: n("w_s"),
            w_relation: n("w_r"),
            w_att: n("w_att"),
            a: n("a"),
            f_weight: n("f_w"),
            f_bias: n("f_b"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximityHyper {
    pub margin: f64,
    pub transfer_weight: f64,
    pub negatives: usize,
    pub lr: f64,
    pub leaky_slope: f64,
    pub layers: usize,
    pub dim: usize,
    /// Replace attention with `1 / |N(p)|`.
    pub uniform_attention: bool,
}

impl Default for ProximityHyper {
    fn default() -> Self {
        Self {
            margin: 1.0,
            transfer_weight: 1.0,
            negatives: 50,
            lr: 0.0005,
            leaky_slope: 0.05,
            layers: 2,
            dim: 300,
            uniform_attention: false,
        }
    }
}

impl ProximityHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config("proximity margin must be positive".into()));
        }
        if !(self.transfer_weight >= 0.0) {
            return Err(Error::Config(
                "relation transfer weight must be non-negative".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::Config("proximity dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Xavier-initialized GNN weights (biases zero) for a joint layout.
pub fn init_params(
    layout: &JointLayout,
    hyper: &ProximityHyper,
    rng: &mut impl Rng,
) -> Result<ParamStore> {
    let d = hyper.dim;
    let mut s = ParamStore::new();
    s.insert(
        RELATION0_PARAM,
        xavier_with(&[layout.num_relations(), d], rng)?,
    );
    for k in 0..hyper.layers {
        let n = LayerNames::new(k);
        for name in [
            &n.w_original,
            &n.w_inverse,
            &n.w_self,
            &n.w_relation,
            &n.f_weight,
        ] {
            s.insert(name.as_str(), xavier_with(&[d, d], rng)?);
        }
        s.insert(n.w_att.as_str(), xavier_with(&[d, 2 * d], rng)?);
        s.insert(n.a.as_str(), xavier_with(&[1, d], rng)?);
        s.insert(n.f_bias.as_str(), Tensor::zeros(&[1, d]));
    }
    let cat = (hyper.layers + 1) * d;
    s.insert(ENTITY_OUT_PARAM, xavier_with(&[d, cat], rng)?);
    s.insert(RELATION_OUT_PARAM, xavier_with(&[d, cat], rng)?);
    Ok(s)
}

/// `q - r`.
pub fn compose(q: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    if q.len() != r.len() {
        return Err(Error::Dimension(q.len(), r.len()));
    }
    Ok(q.iter().zip(r).map(|(a, b)| a - b).collect())
}

/// `W_lambda(r) (h_q - h_r)` for one edge at layer `k`.
pub fn message(
    q: &[f64],
    r: &[f64],
    kind: RelationKind,
    k: usize,
    params: &ParamStore,
) -> Result<Vec<f64>> {
    let n = LayerNames::new(k);
    let w = params.get(match kind {
        RelationKind::Original => &n.w_original,
        RelationKind::Inverse(_) => &n.w_inverse,
        RelationKind::SelfLoop => &n.w_self,
    })?;
    let c = compose(q, r)?;
    if w.cols() != c.len() {
        return Err(Error::Dimension(w.cols(), c.len()));
    }
    Ok((0..w.rows()).map(|i| tensor::dot(w.row(i), &c)).collect())
}

/// `1 - cos(x, y)`; a zero vector is treated as orthogonal (distance 1).
pub fn cosine_distance(x: &[f64], y: &[f64]) -> f64 {
    if tensor::norm(x) == 0.0 || tensor::norm(y) == 0.0 {
        log::debug!("cosine distance with a zero vector");
    }
    1.0 - tensor::cosine(x, y)
}

const KIND_ORIGINAL: usize = 0;
const KIND_INVERSE: usize = 1;
const KIND_SELF: usize = 2;

fn kind_index(kind: RelationKind) -> usize {
    match kind {
        RelationKind::Original => KIND_ORIGINAL,
        RelationKind::Inverse(_) => KIND_INVERSE,
        RelationKind::SelfLoop => KIND_SELF,
    }
}

/// Message-passing edges of both augmented graphs in joint rows, grouped
/// by receiving entity.
#[derive(Clone, Debug)]
pub struct ProximityGraph {
    pub num_entities: usize,
    pub num_relations: usize,
    /// Receiving entity `p` of each edge.
    pub dst: Rc<[usize]>,
    /// Neighbor `q`.
    pub src: Rc<[usize]>,
    pub rel: Rc<[usize]>,
    /// 0 original, 1 inverse, 2 self-loop.
    pub kind: Rc<[usize]>,
    /// Edges of entity `p` are `offsets[p]..offsets[p + 1]`.
    pub offsets: Vec<usize>,
}

impl ProximityGraph {
    pub fn new(
        source: &KnowledgeGraph,
        target: &KnowledgeGraph,
        layout: &JointLayout,
    ) -> Result<Self> {
        if !source.is_augmented() || !target.is_augmented() {
            return Err(Error::Config(
                "proximity graph needs augmented graphs".into(),
            ));
        }
        let (mut dst, mut src, mut rel, mut kind) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut offsets = vec![0];
        for (side, kg) in [(Side::Source, source), (Side::Target, target)] {
            for p in 0..kg.num_entities() {
                for &(q, r) in kg.neighbors(p) {
                    dst.push(layout.entity_row(side, p));
                    src.push(layout.entity_row(side, q));
                    rel.push(layout.relation_row(side, r));
                    kind.push(kind_index(kg.relation(r).kind));
                }
                offsets.push(dst.len());
            }
        }
        Ok(Self {
            num_entities: layout.num_entities(),
            num_relations: layout.num_relations(),
            dst: dst.into(),
            src: src.into(),
            rel: rel.into(),
            kind: kind.into(),
            offsets,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.dst.len()
    }

    pub fn edges_of(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    fn segments(&self) -> Segments {
        Segments {
            segment: self.dst.clone(),
            count: self.num_entities,
        }
    }

    fn uniform_attention(&self) -> Tensor {
        let mut a = Vec::with_capacity(self.num_edges());
        for p in 0..self.num_entities {
            let r = self.edges_of(p);
            let w = 1.0 / r.len() as f64;
            a.extend(r.map(|_| w));
        }
        Tensor::column(a)
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub entity_layers: Vec<Var>,
    pub relation_layers: Vec<Var>,
    /// Per-layer attention column aligned with the graph's edges.
    pub attention: Vec<Var>,
    pub entity: Var,
    pub relation: Var,
}

fn stacked_projection(tape: &mut Tape, x: Var, ws: [Var; 3]) -> Var {
    let parts = ws.map(|w| tape.matmul_nt(x, w));
    tape.concat_rows(&parts)
}

/// One layer: returns `(entities^{k+1}, relations^{k+1}, attention)`.
pub fn layer_forward(
    tape: &mut Tape,
    graph: &ProximityGraph,
    h: Var,
    r: Var,
    k: usize,
    params: &ParamStore,
    hyper: &ProximityHyper,
) -> Result<(Var, Var, Var)> {
    let n = LayerNames::new(k);
    let d = hyper.dim;
    let ws = [
        tape.param_from(params, &n.w_original)?,
        tape.param_from(params, &n.w_inverse)?,
        tape.param_from(params, &n.w_self)?,
    ];
    let (ne, nr) = (graph.num_entities, graph.num_relations);
    let ent_idx: Rc<[usize]> = graph
        .kind
        .iter()
        .zip(graph.src.iter())
        .map(|(k, s)| k * ne + s)
        .collect();
    let rel_idx: Rc<[usize]> = graph
        .kind
        .iter()
        .zip(graph.rel.iter())
        .map(|(k, s)| k * nr + s)
        .collect();
    let hw = stacked_projection(tape, h, ws);
    let rw = stacked_projection(tape, r, ws);

    let alpha = if hyper.uniform_attention {
        tape.constant(graph.uniform_attention())
    } else {
        let w_att = tape.param_from(params, &n.w_att)?;
        let a = tape.param_from(params, &n.a)?;
        let a1 = tape.slice_cols(w_att, 0, d);
        let a2 = tape.slice_cols(w_att, d, 2 * d);
        let hp = tape.matmul_nt(h, a1);
        let hq = tape.matmul_nt(h, a2);
        let hr = tape.matmul_nt(r, a2);
        let index = EdgeIndex {
            dst: graph.dst.clone(),
            src: graph.src.clone(),
            rel: graph.rel.clone(),
        };
        let scores = tape.edge_scores(hp, hq, hr, a, index, hyper.leaky_slope);
        tape.segment_softmax(scores, graph.segments())
    };

    let agg = tape.edge_aggregate(hw, rw, alpha, ent_idx, rel_idx, graph.dst.clone(), ne);
    let fw = tape.param_from(params, &n.f_weight)?;
    let fb = tape.param_from(params, &n.f_bias)?;
    let lin = tape.matmul_nt(agg, fw);
    let lin = tape.add_row_bias(lin, fb);
    let h_next = tape.tanh(lin);
    let wr = tape.param_from(params, &n.w_relation)?;
    let r_next = tape.matmul_nt(r, wr);
    Ok((h_next, r_next, alpha))
}

/// All layers plus the output projections. `features` are the frozen
/// layer-0 entity rows of the joint layout.
pub fn forward(
    tape: &mut Tape,
    graph: &ProximityGraph,
    features: &Tensor,
    params: &ParamStore,
    hyper: &ProximityHyper,
) -> Result<ForwardVars> {
    if features.rows() != graph.num_entities || features.cols() != hyper.dim {
        return Err(Error::Shape {
            name: "name features".into(),
            expected: vec![graph.num_entities, hyper.dim],
            actual: features.shape().to_vec(),
        });
    }
    let r0 = params.get(RELATION0_PARAM)?;
    if r0.rows() != graph.num_relations || r0.cols() != hyper.dim {
        return Err(Error::Shape {
            name: RELATION0_PARAM.into(),
            expected: vec![graph.num_relations, hyper.dim],
            actual: r0.shape().to_vec(),
        });
    }
    let mut h = tape.constant(features.clone());
    let mut r = tape.param_from(params, RELATION0_PARAM)?;
    let mut out = ForwardVars {
        entity_layers: vec![h],
        relation_layers: vec![r],
        attention: Vec::new(),
        entity: h,
        relation: r,
    };
    for k in 0..hyper.layers {
        let (h2, r2, a) = layer_forward(tape, graph, h, r, k, params, hyper)?;
        (h, r) = (h2, r2);
        out.entity_layers.push(h);
        out.relation_layers.push(r);
        out.attention.push(a);
    }
    out.entity = final_projection(tape, &out.entity_layers, params, ENTITY_OUT_PARAM)?;
    out.relation = final_projection(tape, &out.relation_layers, params, RELATION_OUT_PARAM)?;
    Ok(out)
}

/// `W [x^0 || ... || x^K]`.
pub fn final_projection(
    tape: &mut Tape,
    layers: &[Var],
    params: &ParamStore,
    name: &str,
) -> Result<Var> {
    let w = tape.param_from(params, name)?;
    let cat = tape.concat_cols(layers);
    Ok(tape.matmul_nt(cat, w))
}

/// Forward results as plain tensors.
#[derive(Clone, Debug)]
pub struct ProximityOutput {
    pub entity_layers: Vec<Tensor>,
    pub attention: Vec<Tensor>,
    pub entity: Tensor,
    pub relation: Tensor,
}

impl ProximityOutput {
    pub fn compute(
        graph: &ProximityGraph,
        features: &Tensor,
        params: &ParamStore,
        hyper: &ProximityHyper,
    ) -> Result<Self> {
        let mut tape = Tape::new();
        let v = forward(&mut tape, graph, features, params, hyper)?;
        Ok(Self {
            entity_layers: v
                .entity_layers
                .iter()
                .map(|&x| tape.value(x).clone())
                .collect(),
            attention: v.attention.iter().map(|&x| tape.value(x).clone()).collect(),
            entity: tape.value(v.entity).clone(),
            relation: tape.value(v.relation).clone(),
        })
    }

    /// Attention of entity `p` over its neighbors at layer `k`, in
    /// neighbor order.
    pub fn attention_weights(&self, graph: &ProximityGraph, p: usize, k: usize) -> &[f64] {
        &self.attention[k].data()[graph.edges_of(p)]
    }
}

/// For each seed `(p, p')`: `(p, n)` for the `k` target rows `n` nearest to
/// `p'`, and `(n, p')` for the `k` source rows nearest to `p`, under cosine
/// distance. Ties go to the lower row. Each negative is returned with its seed.
pub fn negative_pairs(
    seeds: &[(usize, usize)],
    entity: &Tensor,
    layout: &JointLayout,
    k: usize,
) -> Vec<((usize, usize), (usize, usize))> {
    if k == 0 || seeds.is_empty() {
        return Vec::new();
    }
    let normalized = normalize_rows(entity);
    let nearest = |x: usize, side: Side, exclude: usize| -> Vec<usize> {
        let v = normalized.row(x);
        let mut cand: Vec<(f64, usize)> = layout
            .entity_range(side)
            .filter(|&c| c != exclude)
            .map(|c| (1.0 - tensor::dot(v, normalized.row(c)), c))
            .collect();
        let take = k.min(cand.len());
        if take < cand.len() {
            cand.select_nth_unstable_by(take, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(take);
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.into_iter().map(|c| c.1).collect()
    };
    let mut out = Vec::with_capacity(seeds.len() * 2 * k);
    for &(p, q) in seeds {
        for n in nearest(q, Side::Target, q) {
            out.push(((p, q), (p, n)));
        }
        for n in nearest(p, Side::Source, p) {
            out.push(((p, q), (n, q)));
        }
    }
    out
}

pub fn normalize_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let c = out.cols().max(1);
    for row in out.data_mut().chunks_mut(c) {
        let n = tensor::norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    out
}

fn cosine_distances(tape: &mut Tape, normalized: Var, pairs: &[(usize, usize)]) -> Var {
    let a: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let b: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let va = tape.gather(normalized, a);
    let vb = tape.gather(normalized, b);
    let cos = tape.row_dot(va, vb);
    let neg = tape.scale(cos, -1.0);
    tape.add_scalar(neg, 1.0)
}

/// `sum [margin + d_c(pos) - d_c(neg)]_+` over `(positive, negative)` pairs.
pub fn mapping_loss_g(
    tape: &mut Tape,
    entity: Var,
    pairs: &[((usize, usize), (usize, usize))],
    margin: f64,
) -> Var {
    if pairs.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let normalized = tape.row_normalize(entity);
    let pos: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let neg: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let dp = cosine_distances(tape, normalized, &pos);
    let dn = cosine_distances(tape, normalized, &neg);
    let diff = tape.sub(dp, dn);
    let diff = tape.add_scalar(diff, margin);
    let hinge = tape.relu(diff);
    tape.sum(hinge)
}

/// Source and target relation rows taking part in the transfer loss:
/// originals and inverses, no self-loop.
pub fn transfer_relations(
    source: &KnowledgeGraph,
    target: &KnowledgeGraph,
    layout: &JointLayout,
) -> (Vec<usize>, Vec<usize>) {
    let rows = |kg: &KnowledgeGraph, side| {
        (0..kg.num_relations())
            .filter(|&r| kg.relation(r).kind != RelationKind::SelfLoop)
            .map(|r| layout.relation_row(side, r))
            .collect()
    };
    (rows(source, Side::Source), rows(target, Side::Target))
}

/// Pairwise cosine distances between two row sets of `emb`.
pub fn cosine_distance_matrix(emb: &Tensor, rows_a: &[usize], rows_b: &[usize]) -> Tensor {
    let a = normalize_rows(&emb.gather_rows(rows_a));
    let b = normalize_rows(&emb.gather_rows(rows_b));
    a.matmul_nt(&b).map(|c| 1.0 - c)
}

/// `sum |d_ct - d_cg|` with `d_ct` a constant (frozen) distance matrix.
pub fn relation_transfer_loss(
    tape: &mut Tape,
    relation: Var,
    frozen: &Tensor,
    rows_a: &[usize],
    rows_b: &[usize],
) -> Var {
    if rows_a.is_empty() || rows_b.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let a = tape.gather(relation, rows_a.iter().copied().collect());
    let b = tape.gather(relation, rows_b.iter().copied().collect());
    let a = tape.row_normalize(a);
    let b = tape.row_normalize(b);
    let cos = tape.matmul_nt(a, b);
    let neg = tape.scale(cos, -1.0);
    let dg = tape.add_scalar(neg, 1.0);
    let dt = tape.constant(frozen.clone());
    let diff = tape.sub(dg, dt);
    let abs = tape.abs(diff);
    tape.sum(abs)
}

/// Inputs of one proximity step.
#[derive(Clone, Debug)]
pub struct ProximityBatch {
    pub pairs: Vec<((usize, usize), (usize, usize))>,
    /// Frozen translation-channel relation distances (`rows_a x rows_b`).
    pub transfer_target: Option<Tensor>,
    pub rows_a: Vec<usize>,
    pub rows_b: Vec<usize>,
}

/// `L_gm + beta_g * L_gr` over a fresh forward pass.
pub fn proximity_total_loss(
    tape: &mut Tape,
    graph: &ProximityGraph,
    features: &Tensor,
    params: &ParamStore,
    hyper: &ProximityHyper,
    batch: &ProximityBatch,
) -> Result<Var> {
    let f = forward(tape, graph, features, params, hyper)?;
    let gm = mapping_loss_g(tape, f.entity, &batch.pairs, hyper.margin);
    match &batch.transfer_target {
        Some(target) if hyper.transfer_weight > 0.0 => {
            let gr = relation_transfer_loss(tape, f.relation, target, &batch.rows_a, &batch.rows_b);
            let gr = tape.scale(gr, hyper.transfer_weight);
            Ok(tape.add(gm, gr))
        }
        _ => Ok(gm),
    }
}

/// Seed endpoints, used to keep the seeds' own counterparts out of negatives.
pub fn seed_endpoints(seeds: &[(usize, usize)]) -> HashSet<usize> {
    seeds.iter().flat_map(|&(a, b)| [a, b]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn compose_examples() {
        assert_eq!(compose(&[1.0, 2.0], &[0.5, 1.0]).unwrap(), vec![0.5, 1.0]);
        assert_eq!(compose(&[3.0, -1.0], &[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(compose(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_distance_examples() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]), 1.0);
        assert!((cosine_distance(&[1.0, 2.0], &[-1.0, -2.0]) - 2.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
    }

    fn path_graph() -> (KnowledgeGraph, KnowledgeGraph, JointLayout) {
        let s = KnowledgeGraph::from_named_triples([("a", "r", "b"), ("b", "r", "c")])
            .augment()
            .unwrap();
        let t = KnowledgeGraph::new().augment().unwrap();
        let layout = JointLayout::new(&s, &t);
        (s, t, layout)
    }

    fn identity_params(d: usize, layers: usize, relations: usize) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(RELATION0_PARAM, Tensor::zeros(&[relations, d]));
        for k in 0..layers {
            let n = LayerNames::new(k);
            for name in [
                &n.w_original,
                &n.w_inverse,
                &n.w_self,
                &n.w_relation,
                &n.f_weight,
            ] {
                s.insert(name.as_str(), Tensor::identity(d));
            }
            s.insert(n.w_att.as_str(), Tensor::zeros(&[d, 2 * d]));
            s.insert(n.a.as_str(), Tensor::zeros(&[1, d]));
            s.insert(n.f_bias.as_str(), Tensor::zeros(&[1, d]));
        }
        let mut out = Tensor::zeros(&[d, (layers + 1) * d]);
        for i in 0..d {
            out.set(i, i, 1.0);
        }
        s.insert(ENTITY_OUT_PARAM, out.clone());
        s.insert(RELATION_OUT_PARAM, out);
        s
    }

    #[test]
    fn message_projections() {
        let mut p = identity_params(2, 1, 1);
        let m = message(&[1.0, 2.0], &[0.5, 0.5], RelationKind::Original, 0, &p).unwrap();
        assert_eq!(m, vec![0.5, 1.5]);
        let m = message(&[1.0, 2.0], &[0.0, 0.0], RelationKind::SelfLoop, 0, &p).unwrap();
        assert_eq!(m, vec![1.0, 2.0]);
        *p.get_mut("prox.l0.w_i").unwrap() = Tensor::zeros(&[2, 2]);
        let m = message(&[1.0, 2.0], &[0.5, 0.5], RelationKind::Inverse(0), 0, &p).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
    }

    #[test]
    fn isolated_entity_is_tanh_of_its_features() {
        let s = KnowledgeGraph::from_named_triples([("a", "r", "b")]);
        let mut s = s;
        s.intern_entity("lonely");
        s.rebuild_neighbors();
        let s = s.augment().unwrap();
        let t = KnowledgeGraph::new().augment().unwrap();
        let layout = JointLayout::new(&s, &t);
        let graph = ProximityGraph::new(&s, &t, &layout).unwrap();
        let hyper = ProximityHyper {
            dim: 2,
            layers: 1,
            ..Default::default()
        };
        let params = identity_params(2, 1, layout.num_relations());
        let feats = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, -0.4], vec![0.7, -1.5]]).unwrap();
        let out = ProximityOutput::compute(&graph, &feats, &params, &hyper).unwrap();
        assert_eq!(out.attention_weights(&graph, 2, 0), &[1.0]);
        let h1 = out.entity_layers[1].row(2);
        assert!((h1[0] - 0.7f64.tanh()).abs() < 1e-15);
        assert!((h1[1] - (-1.5f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn three_node_path_matches_hand_evaluation() {
        // a -r-> b -r-> c, d = 1. Relation embeddings at layer 0:
        // r = 0.5, r^-1 = -0.25, self = 0. W_O = 2, W_I = -1, W_S = 1,
        // W_att = [1, 1], a = 1, f = 1 with bias 0.1, features a=1, b=0.2, c=-0.5.
        let (s, t, layout) = path_graph();
        let graph = ProximityGraph::new(&s, &t, &layout).unwrap();
        let mut p = identity_params(1, 1, layout.num_relations());
        let set = |p: &mut ParamStore, n: &str, v: Vec<f64>, shape: &[usize]| {
            *p.get_mut(n).unwrap() = Tensor::new(shape.to_vec(), v).unwrap();
        };
        // The empty target graph contributes one self-loop relation row.
        set(&mut p, RELATION0_PARAM, vec![0.5, -0.25, 0.0, 0.0], &[4, 1]);
        set(&mut p, "prox.l0.w_o", vec![2.0], &[1, 1]);
        set(&mut p, "prox.l0.w_i", vec![-1.0], &[1, 1]);
        set(&mut p, "prox.l0.w_att", vec![1.0, 1.0], &[1, 2]);
        set(&mut p, "prox.l0.a", vec![1.0], &[1, 1]);
        set(&mut p, "prox.l0.f_b", vec![0.1], &[1, 1]);
        let hyper = ProximityHyper {
            dim: 1,
            layers: 1,
            ..Default::default()
        };
        let feats = Tensor::column(vec![1.0, 0.2, -0.5]);
        let out = ProximityOutput::compute(&graph, &feats, &p, &hyper).unwrap();

        // Oracle for entity b. Both directions of each stored triple count as
        // neighbors, so b sees (a, r), (a, r^-1), (b, self), (c, r), (c, r^-1),
        // which is also the graph's (q, r)-sorted edge order.
        let h = [1.0, 0.2, -0.5];
        let lrelu = |x: f64| if x > 0.0 { x } else { 0.05 * x };
        let edges = [
            (h[0] - 0.5, 2.0),
            (h[0] + 0.25, -1.0),
            (h[1] - 0.0, 1.0),
            (h[2] - 0.5, 2.0),
            (h[2] + 0.25, -1.0),
        ];
        let scores: Vec<f64> = edges.iter().map(|(c, _)| lrelu(h[1] + c)).collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let alpha: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
        let agg: f64 = edges.iter().zip(&alpha).map(|((c, w), a)| a * w * c).sum();
        let expected = (agg + 0.1).tanh();
        let got = out.attention_weights(&graph, 1, 0);
        assert_eq!(got.len(), 5);
        for (g, e) in got.iter().zip(&alpha) {
            assert!((g - e).abs() < 1e-14);
        }
        assert!((out.entity_layers[1].get(1, 0) - expected).abs() < 1e-14);
        // Final projection with [1, 0] picks layer 0 features.
        assert_eq!(out.entity.get(1, 0), 0.2);
    }

    fn random_setup(
        seed: u64,
        d: usize,
        uniform: bool,
    ) -> (
        ProximityGraph,
        Tensor,
        ParamStore,
        ProximityHyper,
        JointLayout,
    ) {
        let s = KnowledgeGraph::from_named_triples([
            ("a", "r", "b"),
            ("b", "s", "c"),
            ("c", "r", "d"),
            ("a", "s", "e"),
        ])
        .augment()
        .unwrap();
        let t = KnowledgeGraph::from_named_triples([
            ("v", "p", "w"),
            ("w", "q", "x"),
            ("x", "p", "y"),
            ("v", "q", "z"),
        ])
        .augment()
        .unwrap();
        let layout = JointLayout::new(&s, &t);
        let graph = ProximityGraph::new(&s, &t, &layout).unwrap();
        let hyper = ProximityHyper {
            dim: d,
            uniform_attention: uniform,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&layout, &hyper, &mut rng).unwrap();
        let feats = xavier_with(&[layout.num_entities(), d], &mut rng).unwrap();
        (graph, feats, params, hyper, layout)
    }

    #[test]
    fn attention_rows_sum_to_one_and_tanh_bounds() {
        let (graph, feats, params, hyper, _) = random_setup(3, 6, false);
        let out = ProximityOutput::compute(&graph, &feats, &params, &hyper).unwrap();
        for k in 0..hyper.layers {
            for p in 0..graph.num_entities {
                let s: f64 = out.attention_weights(&graph, p, k).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
            assert!(out.entity_layers[k + 1]
                .data()
                .iter()
                .all(|x| x.abs() < 1.0));
        }
    }

    #[test]
    fn uniform_attention_variant() {
        let (graph, feats, params, hyper, _) = random_setup(3, 4, true);
        let out = ProximityOutput::compute(&graph, &feats, &params, &hyper).unwrap();
        for p in 0..graph.num_entities {
            let w = out.attention_weights(&graph, p, 1);
            assert!(w.iter().all(|&x| x == 1.0 / w.len() as f64));
        }
    }

    #[test]
    fn negatives_follow_brute_force_order() {
        let emb = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.1],
            vec![0.9, 0.5],
            vec![-1.0, 0.2],
        ])
        .unwrap();
        let layout = JointLayout {
            source_entities: 2,
            target_entities: 3,
            source_relations: 0,
            target_relations: 0,
        };
        let negs = negative_pairs(&[(0, 2)], &emb, &layout, 2);
        // Target rows nearest to row 2 (excluding it): 3 then 4.
        let mut oracle: Vec<(f64, usize)> = [3, 4]
            .iter()
            .map(|&c| (cosine_distance(emb.row(2), emb.row(c)), c))
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(negs[0].1, (0, oracle[0].1));
        assert_eq!(negs[1].1, (0, oracle[1].1));
        // Only one other source row exists.
        assert_eq!(&negs[2..], &[((0, 2), (1, 2))]);
        assert!(negs.iter().all(|(pos, neg)| pos != neg));
    }

    #[test]
    fn mapping_and_transfer_examples() {
        let mut tape = Tape::new();
        // d_c(pos) = 0.4: cos 0.6; d_c(neg) = 0.1: cos 0.9.
        let e = tape.constant(
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8], vec![0.9, 0.19f64.sqrt()]])
                .unwrap(),
        );
        let l = mapping_loss_g(&mut tape, e, &[((0, 1), (0, 2))], 1.0);
        assert!((tape.scalar(l) - 1.3).abs() < 1e-12);
        let l = mapping_loss_g(&mut tape, e, &[], 1.0);
        assert_eq!(tape.scalar(l), 0.0);

        let rel = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]).unwrap();
        let r = tape.constant(rel.clone());
        let frozen = Tensor::scalar(0.2);
        let l = relation_transfer_loss(&mut tape, r, &frozen, &[0], &[1]);
        assert!((tape.scalar(l) - 0.2).abs() < 1e-12);
        let same = cosine_distance_matrix(&rel, &[0, 1], &[1, 0]);
        let l = relation_transfer_loss(&mut tape, r, &same, &[0, 1], &[1, 0]);
        assert!(tape.scalar(l).abs() < 1e-12);
    }

    #[test]
    fn proximity_gradient_matches_finite_differences() {
        let (graph, feats, params, hyper, layout) = random_setup(9, 4, false);
        let seeds = [(0, 5), (1, 6)];
        let out = ProximityOutput::compute(&graph, &feats, &params, &hyper).unwrap();
        let pairs = negative_pairs(&seeds, &out.entity, &layout, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (rows_a, rows_b) = (vec![0, 1, 2, 3], vec![5, 6, 7, 8]);
        let trans_rel = xavier_with(&[10, 3], &mut rng).unwrap();
        let batch = ProximityBatch {
            pairs,
            transfer_target: Some(cosine_distance_matrix(&trans_rel, &rows_a, &rows_b)),
            rows_a,
            rows_b,
        };
        let err = finite_difference_check(
            |p| {
                let mut tape = Tape::new();
                let l = proximity_total_loss(&mut tape, &graph, &feats, p, &hyper, &batch)?;
                Ok((tape.scalar(l), tape.backward(l)?))
            },
            &params,
            60,
            1e-4,
            2,
        )
        .unwrap();
        assert!(err <= 1e-3, "{err}");
    }
}
