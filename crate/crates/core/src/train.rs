//! The joint training loop.
//!
//! Every epoch updates the translation channel (translation + detector loss
//! first, seed mapping loss second) and then the GNN. Every `eval_step`
//! epochs the similarity matrices are fused and evaluated on the dev split,
//! new seeds are bootstrapped, missing triples are filled and re-checked,
//! and early stopping is tested. The best dev-MRR state is returned.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, AlignmentState, Metrics, Report};
use crate::error::{read_file, Error, Result};
use crate::grad::{Grads, ParamStore, Tape, Tensor};
use crate::kg::{
    name_features, AlignmentLinks, KnowledgeGraph, LinkOrigin, SyntheticPair, Triple, WordVectors,
};
use crate::layout::{JointLayout, Side};
use crate::proximity::{self, ProximityBatch, ProximityGraph, ProximityHyper, ProximityOutput};
use crate::recovery::{self, Ledger, RecoveryBatch, RecoveryConfig};
use crate::transitivity::{
    self, TransitivityBatch, TransitivityHyper, ENTITY_PARAM, RELATION_PARAM,
};

/// Model variants used by the ablation recipe.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    /// GNN channel only.
    Var1,
    /// Translation channel only.
    Var2,
    /// Uniform attention.
    Var5,
    /// No seed bootstrapping.
    Var6,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::Var1,
        Variant::Var2,
        Variant::Var5,
        Variant::Var6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Var1 => "var1",
            Variant::Var2 => "var2",
            Variant::Var5 => "var5",
            Variant::Var6 => "var6",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }

    pub fn uses_translation(self) -> bool {
        self != Variant::Var1
    }

    pub fn uses_proximity(self) -> bool {
        self != Variant::Var2
    }
}

/// Flat run configuration; key names follow the hyper-parameter names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub gamma_t: f64,
    pub beta_tm: f64,
    pub beta_tc: f64,
    pub k_neg_t: usize,
    pub lr_t: f64,
    pub batch_size: usize,
    pub dim_t: usize,
    pub gamma_g: f64,
    pub beta_g: f64,
    pub k_neg_g: usize,
    pub lr_g: f64,
    pub leaky_slope: f64,
    pub layers: usize,
    pub dim_g: usize,
    pub beta_tg: f64,
    pub eval_step: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Pairs nominated per evaluation, as a fraction of source entities.
    pub nominate_fraction: f64,
    pub nominate_times: usize,
    pub recovery: bool,
    pub sample_size: Option<usize>,
    pub permanence: usize,
    pub recovery_negatives: usize,
    pub bce_negatives: bool,
    pub recovery_lr: f64,
    /// Dev links as a fraction of all gold links, carved from the eval links.
    pub dev_fraction: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TransitivityHyper::default();
        let g = ProximityHyper::default();
        let r = RecoveryConfig::default();
        Self {
            gamma_t: t.margin,
            beta_tm: t.mapping_weight,
            beta_tc: t.recovery_weight,
            k_neg_t: t.negatives,
            lr_t: t.lr,
            batch_size: t.batch_size,
            dim_t: t.dim,
            gamma_g: g.margin,
            beta_g: g.transfer_weight,
            k_neg_g: g.negatives,
            lr_g: g.lr,
            leaky_slope: g.leaky_slope,
            layers: g.layers,
            dim_g: g.dim,
            beta_tg: 0.4,
            eval_step: 10,
            patience: 2,
            max_epochs: 300,
            nominate_fraction: 0.05,
            nominate_times: 2,
            recovery: true,
            sample_size: r.sample_size,
            permanence: r.permanence,
            recovery_negatives: r.negatives,
            bce_negatives: r.bce_negatives,
            recovery_lr: r.lr,
            dev_fraction: 0.1,
            variant: Variant::Full,
            seed: 7,
        }
    }
}

impl TrainingConfig {
    pub fn transitivity(&self) -> TransitivityHyper {
        TransitivityHyper {
            margin: self.gamma_t,
            mapping_weight: self.beta_tm,
            recovery_weight: self.beta_tc,
            negatives: self.k_neg_t,
            lr: self.lr_t,
            batch_size: self.batch_size,
            dim: self.dim_t,
        }
    }

    pub fn proximity(&self) -> ProximityHyper {
        ProximityHyper {
            margin: self.gamma_g,
            transfer_weight: if self.variant.uses_translation() {
                self.beta_g
            } else {
                0.0
            },
            negatives: self.k_neg_g,
            lr: self.lr_g,
            leaky_slope: self.leaky_slope,
            layers: self.layers,
            dim: self.dim_g,
            uniform_attention: self.variant == Variant::Var5,
        }
    }

    pub fn recovery_config(&self) -> RecoveryConfig {
        RecoveryConfig {
            sample_size: self.sample_size,
            permanence: self.permanence,
            negatives: self.recovery_negatives,
            bce_negatives: self.bce_negatives,
            lr: self.recovery_lr,
        }
    }

    fn recovery_active(&self) -> bool {
        self.recovery && self.variant.uses_translation()
    }

    pub fn validate(&self) -> Result<()> {
        self.transitivity().validate()?;
        self.proximity().validate()?;
        if self.eval_step == 0 {
            return Err(Error::Config("eval_step must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_tg) {
            return Err(Error::Config("beta_tg must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.nominate_fraction)
            || !(0.0..1.0).contains(&self.dev_fraction)
        {
            return Err(Error::Config("fractions must be in [0,1)".into()));
        }
        for (name, v) in [
            ("beta_g", self.beta_g),
            ("lr_t", self.lr_t),
            ("lr_g", self.lr_g),
            ("recovery_lr", self.recovery_lr),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be a non-negative number"
                )));
            }
        }
        Ok(())
    }
}

/// Two graphs with train seeds and held-out dev/test links.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub source: KnowledgeGraph,
    pub target: KnowledgeGraph,
    pub train: AlignmentLinks,
    pub dev: AlignmentLinks,
    pub test: AlignmentLinks,
    pub word_vectors: Option<WordVectors>,
}

impl Dataset {
    /// Carves `dev_fraction` of all gold links out of `eval` for dev.
    pub fn new(
        source: KnowledgeGraph,
        target: KnowledgeGraph,
        train: AlignmentLinks,
        mut eval: AlignmentLinks,
        dev_fraction: f64,
    ) -> Result<Self> {
        if eval.len() < 2 {
            return Err(Error::Config(
                "need at least two held-out links for dev and test".into(),
            ));
        }
        let total = (train.len() + eval.len()) as f64;
        let n_dev = ((dev_fraction * total).round() as usize).clamp(1, eval.len() - 1);
        let test = eval.split_off(n_dev);
        Ok(Self {
            source,
            target,
            train,
            dev: eval,
            test,
            word_vectors: None,
        })
    }

    pub fn from_synthetic(pair: SyntheticPair, dev_fraction: f64) -> Result<Self> {
        Self::new(
            pair.source,
            pair.target,
            pair.seeds,
            pair.eval,
            dev_fraction,
        )
    }

    /// Splits gold links 70/10/20 into train/dev/test after a seeded shuffle.
    pub fn from_gold(
        source: KnowledgeGraph,
        target: KnowledgeGraph,
        gold: &AlignmentLinks,
        seed: u64,
    ) -> Result<Self> {
        let mut pairs = gold.pairs().to_vec();
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = pairs.len();
        let n_train = (0.7 * n as f64).round() as usize;
        let n_dev = ((0.1 * n as f64).round() as usize).max(1);
        if n_train == 0 || n_train + n_dev >= n {
            return Err(Error::Config(format!("too few gold links to split ({n})")));
        }
        let part =
            |r: std::ops::Range<usize>, o| AlignmentLinks::from_pairs(pairs[r].iter().copied(), o);
        Ok(Self {
            source,
            target,
            train: part(0..n_train, LinkOrigin::GivenSeed),
            dev: part(n_train..n_train + n_dev, LinkOrigin::GoldEval),
            test: part(n_train + n_dev..n, LinkOrigin::GoldEval),
            word_vectors: None,
        })
    }
}

/// One evaluation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub dev: Metrics,
    pub test: Metrics,
    pub seeds_total: usize,
    pub seeds_bootstrapped: usize,
    pub filled: usize,
    pub removed: usize,
    pub ledger_source: usize,
    pub ledger_target: usize,
}

/// Model state at one evaluation step.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub trans: ParamStore,
    pub prox: ParamStore,
    pub mlp: ParamStore,
    pub seeds: AlignmentLinks,
    pub ledgers: [Ledger; 2],
    pub similarity: Tensor,
    pub dev: Metrics,
    pub test: Metrics,
}

impl Snapshot {
    pub fn report(&self) -> Report {
        Report::new(self.test, self.epoch, &self.seeds)
    }

    /// All parameter values by name.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        [&self.trans, &self.prox, &self.mlp]
            .into_iter()
            .flat_map(|s| s.iter().map(|(k, v)| (k.to_string(), v.clone())))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Snapshot,
    pub history: Vec<EvalRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

const STREAM_TRANS_INIT: u64 = 1;
const STREAM_PROX_INIT: u64 = 2;
const STREAM_MLP_INIT: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_RECOVERY: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Training state; see the module docs for the schedule.
pub struct Trainer {
    pub config: TrainingConfig,
    pub layout: JointLayout,
    pub graphs: [KnowledgeGraph; 2],
    pub dev: AlignmentLinks,
    pub test: AlignmentLinks,
    pub trans: ParamStore,
    pub prox: ParamStore,
    pub mlp: ParamStore,
    pub alignment: AlignmentState,
    pub ledgers: [Ledger; 2],
    pub epoch: usize,
    features: Tensor,
    prox_graph: ProximityGraph,
    prox_pairs: Vec<((usize, usize), (usize, usize))>,
    transfer_target: Option<Tensor>,
    transfer_rows: (Vec<usize>, Vec<usize>),
    rng: ChaCha8Rng,
    recovery_rng: ChaCha8Rng,
}

const SIDES: [Side; 2] = [Side::Source, Side::Target];

impl Trainer {
    pub fn new(data: &Dataset, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::Config("at least one seed link is required".into()));
        }
        let source = data.source.augment()?;
        let target = data.target.augment()?;
        let layout = JointLayout::new(&source, &target);
        let hyper = config.proximity();
        let fs = name_features(&source, data.word_vectors.as_ref(), hyper.dim, config.seed)?;
        let ft = name_features(&target, data.word_vectors.as_ref(), hyper.dim, config.seed)?;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(layout.num_entities());
        for m in [&fs.features, &ft.features] {
            rows.extend((0..m.rows()).map(|i| m.row(i).to_vec()));
        }
        let features = Tensor::new(vec![layout.num_entities(), hyper.dim], rows.concat())?;
        let trans = transitivity::init_params(
            &layout,
            config.dim_t,
            &mut stream(config.seed, STREAM_TRANS_INIT),
        )?;
        let prox =
            proximity::init_params(&layout, &hyper, &mut stream(config.seed, STREAM_PROX_INIT))?;
        let mlp = recovery::init_mlp(config.dim_t, &mut stream(config.seed, STREAM_MLP_INIT))?;
        let prox_graph = ProximityGraph::new(&source, &target, &layout)?;
        let transfer_rows = proximity::transfer_relations(&source, &target, &layout);
        let mut t = Self {
            layout,
            graphs: [source, target],
            dev: data.dev.clone(),
            test: data.test.clone(),
            trans,
            prox,
            mlp,
            alignment: AlignmentState::new(data.train.clone()),
            ledgers: [Ledger::default(), Ledger::default()],
            epoch: 0,
            features,
            prox_graph,
            prox_pairs: Vec::new(),
            transfer_target: None,
            transfer_rows,
            rng: stream(config.seed, STREAM_TRAIN),
            recovery_rng: stream(config.seed, STREAM_RECOVERY),
            config,
        };
        t.refresh_proximity_targets()?;
        Ok(t)
    }

    pub fn graph(&self, side: Side) -> &KnowledgeGraph {
        &self.graphs[side as usize]
    }

    fn joint_seeds(&self) -> Vec<(usize, usize)> {
        self.alignment
            .seeds
            .pairs()
            .iter()
            .map(|&(p, q)| {
                (
                    self.layout.entity_row(Side::Source, p),
                    self.layout.entity_row(Side::Target, q),
                )
            })
            .collect()
    }

    /// Re-snapshots the relation transfer target and nearest-neighbor negatives.
    fn refresh_proximity_targets(&mut self) -> Result<()> {
        if !self.config.variant.uses_proximity() {
            return Ok(());
        }
        let hyper = self.config.proximity();
        if hyper.transfer_weight > 0.0 {
            let (a, b) = &self.transfer_rows;
            self.transfer_target = Some(proximity::cosine_distance_matrix(
                self.trans.get(RELATION_PARAM)?,
                a,
                b,
            ));
        }
        let out = ProximityOutput::compute(&self.prox_graph, &self.features, &self.prox, &hyper)?;
        self.prox_pairs = proximity::negative_pairs(
            &self.joint_seeds(),
            &out.entity,
            &self.layout,
            hyper.negatives,
        );
        Ok(())
    }

    fn to_joint(&self, side: Side, t: &Triple) -> Triple {
        Triple::new(
            self.layout.entity_row(side, t.head),
            self.layout.relation_row(side, t.relation),
            self.layout.entity_row(side, t.tail),
        )
    }

    fn recovery_chunks(&mut self, n_chunks: usize) -> Vec<RecoveryBatch> {
        let mut chunks = vec![RecoveryBatch::default(); n_chunks];
        if !(self.config.recovery_active() && self.config.beta_tc > 0.0) {
            return chunks;
        }
        for side in SIDES {
            let kg = &self.graphs[side as usize];
            let mut pairs = recovery::connected_pairs(kg);
            pairs.shuffle(&mut self.rng);
            let per = pairs.len().div_ceil(n_chunks).max(1);
            for (i, chunk) in pairs.chunks(per).enumerate() {
                let b = recovery::sample_recovery_batch(
                    kg,
                    side,
                    &self.layout,
                    chunk,
                    self.config.recovery_negatives,
                    &mut self.rng,
                );
                chunks[i].extend(b);
            }
        }
        chunks
    }

    fn translation_epoch(&mut self) -> Result<()> {
        let hyper = self.config.transitivity();
        let mut positives: Vec<(Side, Triple)> = Vec::new();
        for side in SIDES {
            positives.extend(
                self.graphs[side as usize]
                    .triples()
                    .iter()
                    .map(|t| (side, *t)),
            );
        }
        positives.shuffle(&mut self.rng);
        let n_batches = positives.len().div_ceil(hyper.batch_size).max(1);
        let recovery = self.recovery_chunks(n_batches);
        let with_mlp = self.config.recovery_active();
        for (chunk, rec) in positives.chunks(hyper.batch_size).zip(recovery) {
            let mut pairs = Vec::with_capacity(chunk.len() * hyper.negatives);
            for (side, t) in chunk {
                let kg = &self.graphs[*side as usize];
                let pos = self.to_joint(*side, t);
                for neg in transitivity::sample_negatives(t, kg, hyper.negatives, &mut self.rng)? {
                    pairs.push((pos, self.to_joint(*side, &neg)));
                }
            }
            let batch = TransitivityBatch {
                pairs,
                recovery: rec,
            };
            let mut tape = Tape::new();
            let loss = transitivity::phase_one_loss(
                &mut tape,
                &self.trans,
                with_mlp.then_some(&self.mlp),
                &batch,
                &hyper,
                self.config.bce_negatives,
            )?;
            let grads = tape.backward(loss)?;
            let (mlp_grads, trans_grads): (Grads, Grads) = grads
                .into_iter()
                .partition(|(k, _)| k.starts_with("recovery."));
            self.trans.adam_step(&trans_grads, hyper.lr)?;
            if !mlp_grads.is_empty() {
                self.mlp.adam_step(&mlp_grads, self.config.recovery_lr)?;
            }
        }
        let seeds = self.joint_seeds();
        for chunk in seeds.chunks(hyper.batch_size) {
            let mut tape = Tape::new();
            let loss = transitivity::phase_two_loss(&mut tape, &self.trans, chunk, &hyper)?;
            let grads = tape.backward(loss)?;
            self.trans.adam_step(&grads, hyper.lr)?;
        }
        Ok(())
    }

    fn proximity_epoch(&mut self) -> Result<()> {
        let hyper = self.config.proximity();
        let batch = ProximityBatch {
            pairs: self.prox_pairs.clone(),
            transfer_target: self.transfer_target.clone(),
            rows_a: self.transfer_rows.0.clone(),
            rows_b: self.transfer_rows.1.clone(),
        };
        let mut tape = Tape::new();
        let loss = proximity::proximity_total_loss(
            &mut tape,
            &self.prox_graph,
            &self.features,
            &self.prox,
            &hyper,
            &batch,
        )?;
        let grads = tape.backward(loss)?;
        self.prox.adam_step(&grads, hyper.lr)
    }

    /// Runs one epoch of channel updates.
    pub fn step_epoch(&mut self) -> Result<()> {
        if self.config.variant.uses_translation() {
            self.translation_epoch()?;
        }
        if self.config.variant.uses_proximity() {
            self.proximity_epoch()?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Source x target similarity per the variant.
    pub fn similarity(&self) -> Result<Tensor> {
        let s_t = || alignment::joint_similarity(self.trans.get(ENTITY_PARAM)?, &self.layout);
        let s_g = || -> Result<Tensor> {
            let out = ProximityOutput::compute(
                &self.prox_graph,
                &self.features,
                &self.prox,
                &self.config.proximity(),
            )?;
            alignment::joint_similarity(&out.entity, &self.layout)
        };
        match self.config.variant {
            Variant::Var1 => s_g(),
            Variant::Var2 => s_t(),
            _ => alignment::fuse(&s_t()?, &s_g()?, self.config.beta_tg),
        }
    }

    fn recover(&mut self) -> Result<(usize, usize)> {
        let rc = self.config.recovery_config();
        let (mut filled, mut removed) = (0, 0);
        for side in SIDES {
            let i = side as usize;
            let kg = &mut self.graphs[i];
            if kg.original_triples().next().is_none() {
                continue;
            }
            let th = recovery::compute_thresholds(kg, side, &self.layout, &self.trans, &self.mlp)?;
            let n = kg.num_entities();
            filled += recovery::propose_and_fill(
                kg,
                side,
                &self.layout,
                &self.trans,
                &self.mlp,
                th,
                rc.sample_size_for(n),
                self.epoch,
                &mut self.ledgers[i],
                &mut self.recovery_rng,
            )?
            .len();
            removed += recovery::correct_false_links(
                kg,
                side,
                &self.layout,
                &mut self.ledgers[i],
                &self.trans,
                &self.mlp,
                th,
                rc.permanence,
            )?
            .len();
            kg.rebuild_neighbors();
        }
        self.prox_graph = ProximityGraph::new(&self.graphs[0], &self.graphs[1], &self.layout)?;
        Ok((filled, removed))
    }

    /// Fuse, evaluate, bootstrap seeds and recover triples. Returns the
    /// record and the fused matrix it was computed from.
    pub fn evaluation_step(&mut self) -> Result<(EvalRecord, Tensor)> {
        let s = self.similarity()?;
        let dev = alignment::evaluate(&s, &self.dev)?;
        let test = alignment::evaluate(&s, &self.test)?;
        let (mut filled, mut removed) = (0, 0);
        if self.epoch > 0 {
            if self.config.variant != Variant::Var6 {
                let c = (self.config.nominate_fraction * self.layout.source_entities as f64).round()
                    as usize;
                alignment::nominate_and_update_seeds(
                    &mut self.alignment,
                    &s,
                    c,
                    self.config.nominate_times,
                );
            }
            if self.config.recovery_active() {
                (filled, removed) = self.recover()?;
            }
            self.refresh_proximity_targets()?;
        }
        let seeds = &self.alignment.seeds;
        let record = EvalRecord {
            epoch: self.epoch,
            dev,
            test,
            seeds_total: seeds.len(),
            seeds_bootstrapped: seeds.count(LinkOrigin::Bootstrapped),
            filled,
            removed,
            ledger_source: self.ledgers[0].len(),
            ledger_target: self.ledgers[1].len(),
        };
        log::info!(
            "epoch {:>4}  dev hit1 {:.4} mrr {:.4}  test hit1 {:.4}  seeds {} (+{})  ledger {}/{}",
            record.epoch,
            dev.hit1,
            dev.mrr,
            test.hit1,
            record.seeds_total,
            record.seeds_bootstrapped,
            record.ledger_source,
            record.ledger_target
        );
        Ok((record, s))
    }

    fn snapshot(&self, s: Tensor, record: &EvalRecord) -> Snapshot {
        Snapshot {
            epoch: record.epoch,
            trans: self.trans.clone(),
            prox: self.prox.clone(),
            mlp: self.mlp.clone(),
            seeds: self.alignment.seeds.clone(),
            ledgers: self.ledgers.clone(),
            similarity: s,
            dev: record.dev,
            test: record.test,
        }
    }

    /// Trains until `max_epochs` or early stopping; returns the best state.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let (record, s) = self.evaluation_step()?;
        let mut best = self.snapshot(s, &record);
        let mut history = vec![record];
        let mut dev_mrr = vec![best.dev.mrr];
        let mut stopped_early = false;
        while self.epoch < self.config.max_epochs {
            self.step_epoch()?;
            if !self.epoch.is_multiple_of(self.config.eval_step)
                && self.epoch != self.config.max_epochs
            {
                continue;
            }
            let (record, s) = self.evaluation_step()?;
            dev_mrr.push(record.dev.mrr);
            if record.dev.mrr > best.dev.mrr {
                best = self.snapshot(s, &record);
            }
            history.push(record);
            if stop_now(&dev_mrr, self.config.patience) {
                stopped_early = true;
                break;
            }
        }
        Ok(TrainOutcome {
            best,
            history,
            epochs_run: self.epoch,
            stopped_early,
        })
    }

    /// All current parameter values by name.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        [&self.trans, &self.prox, &self.mlp]
            .into_iter()
            .flat_map(|s| s.iter().map(|(k, v)| (k.to_string(), v.clone())))
            .collect()
    }

    /// Overwrites parameters from a checkpoint; every stored name and shape
    /// must match. Optimizer moments are not part of a checkpoint.
    pub fn restore(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let total = self.trans.len() + self.prox.len() + self.mlp.len();
        if tensors.len() != total {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model has {total}",
                tensors.len()
            )));
        }
        for store in [&mut self.trans, &mut self.prox, &mut self.mlp] {
            let names: Vec<String> = store.names().map(str::to_string).collect();
            for name in names {
                let src = tensors
                    .get(&name)
                    .ok_or_else(|| Error::UnknownParam(name.clone()))?;
                let dst = store.get_mut(&name)?;
                if src.shape() != dst.shape() {
                    return Err(Error::Shape {
                        name,
                        expected: dst.shape().to_vec(),
                        actual: src.shape().to_vec(),
                    });
                }
                *dst = src.clone();
            }
        }
        Ok(())
    }

    /// Replaces the filled triples of both graphs with `ledgers` (as saved
    /// next to a checkpoint), so the attention GNN sees the same graphs.
    pub fn restore_ledgers(&mut self, ledgers: &[Ledger; 2]) -> Result<()> {
        for (i, kg) in self.graphs.iter_mut().enumerate() {
            for t in self.ledgers[i].triples() {
                kg.remove_with_inverse(t)?;
            }
            for t in ledgers[i].triples() {
                if t.head >= kg.num_entities() || t.tail >= kg.num_entities() {
                    return Err(Error::Index {
                        what: "ledger entity",
                        index: t.head.max(t.tail),
                        len: kg.num_entities(),
                    });
                }
                kg.insert_with_inverse(*t)?;
            }
            kg.rebuild_neighbors();
        }
        self.ledgers = ledgers.clone();
        self.prox_graph = ProximityGraph::new(&self.graphs[0], &self.graphs[1], &self.layout)?;
        Ok(())
    }

    /// Generator state for the checkpoint sidecar.
    pub fn rng_state(&self) -> RngState {
        RngState::of(&[&self.rng, &self.recovery_rng])
    }
}

/// `patience` consecutive evaluations without beating the earlier best.
fn stop_now(history: &[f64], patience: usize) -> bool {
    if patience == 2 {
        return alignment::early_stop(history);
    }
    let n = history.len();
    if patience == 0 || n <= patience {
        return false;
    }
    let best = history[..n - patience]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    history[n - patience..].iter().all(|&v| v <= best)
}

/// Filtered link-prediction metrics in both directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgcMetrics {
    pub hit1: f64,
    pub hit10: f64,
    pub mrr: f64,
    pub mr: f64,
    pub queries: usize,
}

/// Ranks each removed triple's tail (given head and relation) and head
/// (given relation and tail) by translation distance among all entities of
/// the graph. Candidates forming another known triple (in `kg` or `removed`)
/// are filtered out; ties rank lower indices first.
pub fn kgc_evaluate(
    kg: &KnowledgeGraph,
    removed: &[Triple],
    trans: &ParamStore,
    layout: &JointLayout,
    side: Side,
) -> Result<KgcMetrics> {
    if removed.is_empty() {
        return Err(Error::Empty("removed triples"));
    }
    let ent = trans.get(ENTITY_PARAM)?;
    let rel = trans.get(RELATION_PARAM)?;
    let known: HashSet<Triple> = kg.triples().iter().chain(removed).copied().collect();
    let n = kg.num_entities();
    let e = |i| ent.row(layout.entity_row(side, i));
    let dist = |h: &[f64], r: &[f64], t: &[f64]| -> f64 {
        h.iter()
            .zip(r)
            .zip(t)
            .map(|((a, b), c)| (a + b - c).abs())
            .sum()
    };
    let mut ranks = Vec::with_capacity(2 * removed.len());
    for q in removed {
        let r = rel.row(layout.relation_row(side, q.relation));
        let (h, t) = (e(q.head), e(q.tail));
        let true_tail = dist(h, r, t);
        let true_head = true_tail;
        let mut tail_rank = 1;
        let mut head_rank = 1;
        for c in 0..n {
            if c != q.tail && !known.contains(&Triple::new(q.head, q.relation, c)) {
                let d = dist(h, r, e(c));
                if d < true_tail || (d == true_tail && c < q.tail) {
                    tail_rank += 1;
                }
            }
            if c != q.head && !known.contains(&Triple::new(c, q.relation, q.tail)) {
                let d = dist(e(c), r, t);
                if d < true_head || (d == true_head && c < q.head) {
                    head_rank += 1;
                }
            }
        }
        ranks.push(tail_rank);
        ranks.push(head_rank);
    }
    let m = Metrics::from_ranks(&ranks)?;
    Ok(KgcMetrics {
        hit1: m.hit1,
        hit10: m.hit10,
        mrr: m.mrr,
        mr: m.mr,
        queries: removed.len(),
    })
}

/// Expected MRR of a uniformly random ranking among `n` candidates.
pub fn random_ranking_mrr(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}

/// Recall and precision of filled triples against known removals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryQuality {
    pub filled: usize,
    pub removed: usize,
    pub hits: usize,
    pub recall: f64,
    pub precision: f64,
}

pub fn recovery_quality(ledger: &Ledger, removed: &[Triple]) -> RecoveryQuality {
    let gold: HashSet<&Triple> = removed.iter().collect();
    let hits = ledger.triples().filter(|t| gold.contains(t)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    RecoveryQuality {
        filled: ledger.len(),
        removed: removed.len(),
        hits,
        recall: ratio(hits, removed.len()),
        precision: ratio(hits, ledger.len()),
    }
}

/// Seeds and positions of the training generators.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub generators: Vec<GeneratorState>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    fn of(rngs: &[&ChaCha8Rng]) -> Self {
        Self {
            generators: rngs
                .iter()
                .map(|r| GeneratorState {
                    seed: r.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
                    stream: r.get_stream(),
                    word_pos: r.get_word_pos().to_string(),
                })
                .collect(),
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"IKAMICK1";

/// Writes named tensors: magic, count, then per tensor the name, the shape
/// and little-endian `f64` values.
pub fn save_tensors(path: impl AsRef<Path>, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let bad = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: m.to_string(),
    };
    let mut r = &bytes[..];
    let mut take = |n: usize| -> Result<&[u8]> {
        if r.len() < n {
            return Err(bad("truncated checkpoint"));
        }
        let (head, rest) = r.split_at(n);
        r = rest;
        Ok(head)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    fn word(b: &[u8]) -> usize {
        u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize
    }
    let count = word(take(8)?);
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = word(take(8)?);
        let name =
            String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndim = word(take(8)?);
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(word(take(8)?));
        }
        let n: usize = shape.iter().product();
        let data = take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.insert(name, Tensor::new(shape, data)?);
    }
    Ok(out)
}

/// Sidecar written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainingConfig,
    pub epoch: usize,
    pub rng: RngState,
    /// Triples filled into each graph by the checkpointed state.
    pub ledgers: [Ledger; 2],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{synthesize, SynthConfig};

    fn small_config() -> TrainingConfig {
        TrainingConfig {
            dim_t: 8,
            dim_g: 8,
            k_neg_g: 5,
            max_epochs: 4,
            eval_step: 2,
            ..Default::default()
        }
    }

    fn small_data() -> Dataset {
        let pair = synthesize(&SynthConfig {
            n_entities: 30,
            n_relations: 4,
            avg_degree: 3.0,
            ..Default::default()
        })
        .unwrap();
        Dataset::from_synthetic(pair, 0.1).unwrap()
    }

    #[test]
    fn zero_epochs_evaluates_initial_state() {
        let cfg = TrainingConfig {
            max_epochs: 0,
            ..small_config()
        };
        let out = Trainer::new(&small_data(), cfg).unwrap().run().unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best.epoch, 0);
        assert_eq!(out.epochs_run, 0);
    }

    #[test]
    fn runs_are_deterministic() {
        let run = || {
            Trainer::new(&small_data(), small_config())
                .unwrap()
                .run()
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.tensors(), b.best.tensors());
    }

    #[test]
    fn best_state_is_never_worse_than_history() {
        let out = Trainer::new(&small_data(), small_config())
            .unwrap()
            .run()
            .unwrap();
        let max = out.history.iter().map(|r| r.dev.mrr).fold(0.0, f64::max);
        assert_eq!(out.best.dev.mrr, max);
    }

    #[test]
    fn patience_generalizes_early_stop() {
        assert!(stop_now(&[0.5, 0.6, 0.59, 0.58], 2));
        assert!(!stop_now(&[0.5, 0.6, 0.59], 2));
        assert!(stop_now(&[0.5, 0.6, 0.59], 1));
        assert!(!stop_now(&[0.5, 0.6, 0.59, 0.58], 3));
        assert!(!stop_now(&[0.5, 0.4], 0));
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(TrainingConfig {
            eval_step: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            beta_tg: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            gamma_t: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(serde_json::from_str::<TrainingConfig>(r#"{"nope": 1}"#).is_err());
        let c: TrainingConfig =
            serde_json::from_str(r#"{"beta_tg": 0.25, "variant": "var5"}"#).unwrap();
        assert_eq!((c.beta_tg, c.variant), (0.25, Variant::Var5));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BTreeMap::new();
        m.insert(
            "a".to_string(),
            Tensor::new(vec![2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
        );
        m.insert("b.c".to_string(), Tensor::scalar(std::f64::consts::PI));
        let p = dir.path().join("x.ckpt");
        save_tensors(&p, &m).unwrap();
        let back = load_tensors(&p).unwrap();
        for (k, v) in &m {
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(v), bits(&back[k]));
            assert_eq!(v.shape(), back[k].shape());
        }
        fs::write(&p, b"IKAMICK1\x05").unwrap();
        assert!(load_tensors(&p).is_err());
    }

    #[test]
    fn restore_reproduces_the_model() {
        let data = small_data();
        let mut a = Trainer::new(&data, small_config()).unwrap();
        a.step_epoch().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_tensors(&p, &a.tensors()).unwrap();
        let mut b = Trainer::new(&data, small_config()).unwrap();
        b.step_epoch().unwrap();
        b.step_epoch().unwrap();
        assert_ne!(a.tensors(), b.tensors());
        b.restore(&load_tensors(&p).unwrap()).unwrap();
        assert_eq!(a.tensors(), b.tensors());
        assert_eq!(a.similarity().unwrap(), b.similarity().unwrap());

        // Fills change the graphs the GNN reads: restoring tensors alone is
        // not enough, the ledgers have to come along.
        let mut filled = Trainer::new(&data, small_config()).unwrap();
        let t = data.source.triples()[0];
        let missing = (0..data.source.num_entities())
            .map(|x| Triple::new(t.head, t.relation, x))
            .find(|c| c.tail != t.head && !data.source.contains(c))
            .unwrap();
        let mut ledgers = [Ledger::default(), Ledger::default()];
        ledgers[0].entries.push(crate::recovery::LedgerEntry {
            triple: missing,
            filled_epoch: 1,
            passes: 0,
            permanent: false,
        });
        filled.restore_ledgers(&ledgers).unwrap();
        let fresh = Trainer::new(&data, small_config()).unwrap().graphs[0].num_triples();
        assert_eq!(filled.graphs[0].num_triples(), fresh + 2);
        let mut c = Trainer::new(&data, small_config()).unwrap();
        c.restore(&filled.tensors()).unwrap();
        assert_ne!(c.similarity().unwrap(), filled.similarity().unwrap());
        c.restore_ledgers(&ledgers).unwrap();
        assert_eq!(c.similarity().unwrap(), filled.similarity().unwrap());
        // Restoring twice, or back to no fills, is exact as well.
        c.restore_ledgers(&ledgers).unwrap();
        assert_eq!(c.graphs[0].num_triples(), fresh + 2);
        c.restore_ledgers(&Default::default()).unwrap();
        assert_eq!(c.graphs[0].num_triples(), fresh);

        let mut partial = a.tensors();
        partial.pop_first();
        assert!(b.restore(&partial).is_err());
    }

    #[test]
    fn kgc_exact_translations_rank_first() {
        // Entities on a line, one relation "+1": only true triples translate exactly.
        let kg =
            KnowledgeGraph::from_named_triples([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")]);
        let layout = JointLayout::new(&kg, &KnowledgeGraph::new());
        let mut trans = ParamStore::new();
        trans.insert(ENTITY_PARAM, Tensor::column(vec![0.0, 1.0, 2.0, 3.0]));
        trans.insert(RELATION_PARAM, Tensor::column(vec![1.0]));
        let removed = [Triple::new(1, 0, 2)];
        let kept = kg.with_triples(vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3)]);
        let m = kgc_evaluate(&kept, &removed, &trans, &layout, Side::Source).unwrap();
        assert_eq!((m.hit1, m.mrr), (1.0, 1.0));
        assert!(kgc_evaluate(&kept, &[], &trans, &layout, Side::Source).is_err());
    }

    #[test]
    fn kgc_rank_two_both_ways() {
        // Query <b, r, c> with a decoy entity e closer than the truth in both directions.
        let kg = KnowledgeGraph::from_named_triples([("b", "r", "c"), ("e", "r", "x")]);
        let layout = JointLayout::new(&kg, &KnowledgeGraph::new());
        let mut trans = ParamStore::new();
        // b=0, c=1.5, e=1.0 (between), x far away; relation +1.
        // Tail: d(b+r, c) = 0.5, d(b+r, e) = 0 -> rank 2 (x: 99, b: 1).
        // Head: d(b+r, c) = 0.5, d(e+r, c) = 0.5 tie, e has a higher index than b -> rank 1.
        trans.insert(ENTITY_PARAM, Tensor::column(vec![0.0, 1.5, 1.0, 100.0]));
        trans.insert(RELATION_PARAM, Tensor::column(vec![1.0]));
        let removed = [Triple::new(0, 0, 1)];
        let kept = kg.with_triples(vec![Triple::new(2, 0, 3)]);
        let m = kgc_evaluate(&kept, &removed, &trans, &layout, Side::Source).unwrap();
        assert_eq!(m.mrr, (0.5 + 1.0) / 2.0);
    }

    #[test]
    fn random_baseline_formula() {
        assert_eq!(random_ranking_mrr(1), 1.0);
        assert!((random_ranking_mrr(2) - 0.75).abs() < 1e-15);
        assert!((random_ranking_mrr(100) - 0.05187).abs() < 1e-4);
    }
}
