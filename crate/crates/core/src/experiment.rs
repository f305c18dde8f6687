//! Reproducible recipes around [`Trainer`]: flat JSON run configs, data
//! preparation (files or synthetic pairs), single runs, sweeps, ablations
//! and the link-prediction protocol, plus the report files they write.
//!
//! A run directory holds `report.json`, `history.csv`,
//! `recovered_source.tsv`, `recovered_target.tsv`, `model.ckpt` with its
//! `model.ckpt.json` sidecar, and `timing.json`. Everything except
//! `timing.json` is a pure function of the config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::alignment::{Metrics, Report};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::kg::{
    load_links, load_triples, load_word_vectors, sparsify, synthesize, write_recovered,
    AlignmentLinks, KnowledgeGraph, LinkOrigin, SynthConfig, Triple,
};
use crate::layout::Side;
use crate::train::{
    kgc_evaluate, random_ranking_mrr, recovery_quality, save_tensors, CheckpointMeta, Dataset,
    EvalRecord, KgcMetrics, RecoveryQuality, Trainer, TrainingConfig, Variant,
};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "IKAMI_THREADS";

/// Worker threads from [`THREADS_ENV`]; 1 when unset.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// Where the two graphs come from. Without `source`/`target` files a
/// synthetic pair is generated from the remaining keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// All gold links, split 70/10/20 into train/dev/test.
    pub links: Option<PathBuf>,
    pub train_links: Option<PathBuf>,
    pub dev_links: Option<PathBuf>,
    pub test_links: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub entities: usize,
    pub relations: usize,
    pub avg_degree: f64,
    pub removal_source: f64,
    pub removal_target: f64,
    pub seed_fraction: f64,
    pub name_noise: f64,
    /// Extra fraction of source triples removed before training; the removed
    /// triples become gold for recovery and link prediction.
    pub sparsify: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            source: None,
            target: None,
            links: None,
            train_links: None,
            dev_links: None,
            test_links: None,
            word_vectors: None,
            entities: s.n_entities,
            relations: s.n_relations,
            avg_degree: s.avg_degree,
            removal_source: s.removal_source,
            removal_target: s.removal_target,
            seed_fraction: s.seed_fraction,
            name_noise: s.name_noise,
            sparsify: 0.0,
        }
    }
}

/// A dataset plus the triples known to be missing from each side.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub removed: [Vec<Triple>; 2],
}

impl DataConfig {
    pub fn is_synthetic(&self) -> bool {
        self.source.is_none() && self.target.is_none()
    }

    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_entities: self.entities,
            n_relations: self.relations,
            avg_degree: self.avg_degree,
            removal_source: self.removal_source,
            removal_target: self.removal_target,
            seed_fraction: self.seed_fraction,
            name_noise: self.name_noise,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.is_some() != self.target.is_some() {
            return Err(Error::Config(
                "`source` and `target` must be given together".into(),
            ));
        }
        if !self.is_synthetic() {
            let split =
                self.train_links.is_some() || self.test_links.is_some() || self.dev_links.is_some();
            match (&self.links, split) {
                (Some(_), true) => {
                    return Err(Error::Config(
                        "give either `links` or train/test link files".into(),
                    ))
                }
                (None, false) => {
                    return Err(Error::Config(
                        "file datasets need `links` or train/test link files".into(),
                    ))
                }
                (None, true) if self.train_links.is_none() || self.test_links.is_none() => {
                    return Err(Error::Config(
                        "`train_links` and `test_links` are both required".into(),
                    ))
                }
                _ => {}
            }
        }
        if !(0.0..1.0).contains(&self.sparsify) {
            return Err(Error::Config(format!(
                "sparsify must be in [0,1), got {}",
                self.sparsify
            )));
        }
        Ok(())
    }

    /// Loads or synthesizes the graphs and splits the links.
    pub fn prepare(&self, seed: u64, dev_fraction: f64) -> Result<PreparedData> {
        self.validate()?;
        let (source, target, split, mut removed) = if self.is_synthetic() {
            let pair = synthesize(&self.synth_config(seed))?;
            let split = Split::Held(pair.seeds, pair.eval);
            (
                pair.source,
                pair.target,
                split,
                [pair.removed_source, pair.removed_target],
            )
        } else {
            let source = load_triples(self.source.as_ref().expect("validated"))?;
            let target = load_triples(self.target.as_ref().expect("validated"))?;
            let links = |p: &Path, o| load_links(p, &source, &target, o);
            let split = match (
                &self.links,
                &self.train_links,
                &self.dev_links,
                &self.test_links,
            ) {
                (Some(p), ..) => Split::Gold(links(p, LinkOrigin::GoldEval)?),
                (None, Some(train), None, Some(test)) => Split::Held(
                    links(train, LinkOrigin::GivenSeed)?,
                    links(test, LinkOrigin::GoldEval)?,
                ),
                (None, Some(train), Some(dev), Some(test)) => Split::Explicit {
                    train: links(train, LinkOrigin::GivenSeed)?,
                    dev: links(dev, LinkOrigin::GoldEval)?,
                    test: links(test, LinkOrigin::GoldEval)?,
                },
                _ => unreachable!("validated"),
            };
            (source, target, split, [Vec::new(), Vec::new()])
        };
        let source = if self.sparsify > 0.0 {
            let (kept, dropped) = sparsify(&source, self.sparsify, seed)?;
            removed[0].extend(dropped);
            kept
        } else {
            source
        };
        let mut dataset = match split {
            Split::Held(train, eval) => Dataset::new(source, target, train, eval, dev_fraction)?,
            Split::Gold(gold) => Dataset::from_gold(source, target, &gold, seed)?,
            Split::Explicit { train, dev, test } => Dataset {
                source,
                target,
                train,
                dev,
                test,
                word_vectors: None,
            },
        };
        if let Some(p) = &self.word_vectors {
            dataset.word_vectors = Some(load_word_vectors(p)?);
        }
        Ok(PreparedData { dataset, removed })
    }
}

enum Split {
    /// Train links and held-out links; dev is carved from the latter.
    Held(AlignmentLinks, AlignmentLinks),
    Gold(AlignmentLinks),
    Explicit {
        train: AlignmentLinks,
        dev: AlignmentLinks,
        test: AlignmentLinks,
    },
}

/// Training and data keys in one flat JSON object.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub data: DataConfig,
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("config structs serialize to objects"),
    }
}

impl RunConfig {
    /// Defaults of the link-prediction protocol: no early stopping, a
    /// smaller translation step, faster bootstrapping and a cross-entropy
    /// detector, on an unperturbed pair whose source loses 20% of triples.
    pub fn kgc_defaults() -> Self {
        Self {
            training: TrainingConfig {
                patience: 0,
                max_epochs: 100,
                nominate_fraction: 0.3,
                lr_t: 0.01,
                bce_negatives: true,
                ..Default::default()
            },
            data: DataConfig {
                removal_source: 0.0,
                removal_target: 0.0,
                sparsify: 0.2,
                ..Default::default()
            },
        }
    }

    pub fn to_value(&self) -> Value {
        let mut m = object(serde_json::to_value(&self.training).expect("config serializes"));
        m.extend(object(
            serde_json::to_value(&self.data).expect("config serializes"),
        ));
        Value::Object(m)
    }

    /// Reads a flat object; absent keys keep the values of `base`.
    pub fn from_value_over(base: &Self, v: Value) -> Result<Self> {
        let Value::Object(given) = v else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut training = object(serde_json::to_value(&base.training)?);
        let mut data = object(serde_json::to_value(&base.data)?);
        for (k, v) in given {
            if training.contains_key(&k) {
                training.insert(k, v);
            } else if data.contains_key(&k) {
                data.insert(k, v);
            } else {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
        }
        fn parse<T: serde::de::DeserializeOwned>(m: Map<String, Value>, what: &str) -> Result<T> {
            serde_json::from_value(Value::Object(m))
                .map_err(|e| Error::Config(format!("{what}: {e}")))
        }
        Ok(Self {
            training: parse(training, "training config")?,
            data: parse(data, "data config")?,
        })
    }

    pub fn from_json_over(base: &Self, text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        Self::from_value_over(base, v)
    }

    pub fn load_over(base: &Self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_over(base, &text)
    }

    /// Sets one key from its command-line spelling. Values are read as JSON
    /// where possible (`0.4`, `true`, `null`) and as strings otherwise.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut m = Map::new();
        m.insert(key.replace('-', "_"), value);
        *self = Self::from_value_over(self, Value::Object(m))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.data.validate()
    }
}

impl Serialize for RunConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RunConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_value_over(&Self::default(), v).map_err(serde::de::Error::custom)
    }
}

/// Recovery quality per side, against the known removed triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub source: RecoveryQuality,
    pub target: RecoveryQuality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgcReport {
    pub metrics: KgcMetrics,
    /// Expected MRR of a uniformly random ranking over the source entities.
    pub random_mrr: f64,
}

/// Everything a run produced, except wall-clock time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: String,
    pub config: RunConfig,
    /// Test metrics of the best dev-MRR state.
    pub final_metrics: Report,
    pub dev: Metrics,
    pub history: Vec<EvalRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Ledgers of the last state against known removals, when there are any.
    pub recovery: Option<RecoverySummary>,
    /// Link prediction of removed source triples with the last state.
    pub kgc: Option<KgcReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

/// A finished run with its artifacts in memory.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub checkpoint: std::collections::BTreeMap<String, Tensor>,
    pub meta: CheckpointMeta,
    /// Ledger triples of the best state with their fill epochs, per side.
    pub recovered: [Vec<(Triple, usize)>; 2],
    pub graphs: [KnowledgeGraph; 2],
    pub timing: Timing,
}

pub const REPORT_FILE: &str = "report.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SIDECAR_FILE: &str = "model.ckpt.json";
pub const TIMING_FILE: &str = "timing.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.ckpt";

fn recovered_file(side: Side) -> &'static str {
    match side {
        Side::Source => "recovered_source.tsv",
        Side::Target => "recovered_target.tsv",
    }
}

/// Trains on prepared data. On a non-finite loss the current parameters are
/// written to `diagnostic_dir` (when given) before the error is returned.
pub fn run_prepared(
    command: &str,
    config: &RunConfig,
    data: &PreparedData,
    diagnostic_dir: Option<&Path>,
) -> Result<RunOutput> {
    let start = Instant::now();
    config.validate()?;
    let mut trainer = Trainer::new(&data.dataset, config.training.clone())?;
    let outcome = match trainer.run() {
        Ok(o) => o,
        Err(e @ Error::NonFinite(_)) => {
            if let Some(dir) = diagnostic_dir {
                fs::create_dir_all(dir)?;
                let path = dir.join(DIAGNOSTIC_FILE);
                save_tensors(&path, &trainer.tensors())?;
                log::error!(
                    "non-finite loss at epoch {}; parameters saved to {}",
                    trainer.epoch,
                    path.display()
                );
            }
            return Err(e);
        }
        Err(e) => return Err(e),
    };

    let [removed_s, removed_t] = &data.removed;
    let recovery = (!removed_s.is_empty() || !removed_t.is_empty()).then(|| RecoverySummary {
        source: recovery_quality(&trainer.ledgers[0], removed_s),
        target: recovery_quality(&trainer.ledgers[1], removed_t),
    });
    let kgc = if removed_s.is_empty() || !config.training.variant.uses_translation() {
        None
    } else {
        let kg = &data.dataset.source;
        Some(KgcReport {
            metrics: kgc_evaluate(kg, removed_s, &trainer.trans, &trainer.layout, Side::Source)?,
            random_mrr: random_ranking_mrr(kg.num_entities()),
        })
    };

    let best = &outcome.best;
    let report = ExperimentReport {
        command: command.to_string(),
        config: config.clone(),
        final_metrics: best.report(),
        dev: best.dev,
        history: outcome.history.clone(),
        epochs_run: outcome.epochs_run,
        stopped_early: outcome.stopped_early,
        recovery,
        kgc,
    };
    let recovered = [0, 1].map(|i| {
        best.ledgers[i]
            .entries
            .iter()
            .map(|e| (e.triple, e.filled_epoch))
            .collect()
    });
    Ok(RunOutput {
        report,
        checkpoint: best.tensors(),
        meta: CheckpointMeta {
            config: config.training.clone(),
            epoch: best.epoch,
            rng: trainer.rng_state(),
            ledgers: best.ledgers.clone(),
        },
        recovered,
        graphs: [data.dataset.source.clone(), data.dataset.target.clone()],
        timing: Timing {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// Prepares the data named by `config` and trains.
pub fn run(command: &str, config: &RunConfig, diagnostic_dir: Option<&Path>) -> Result<RunOutput> {
    config.validate()?;
    let data = config
        .data
        .prepare(config.training.seed, config.training.dev_fraction)?;
    run_prepared(command, config, &data, diagnostic_dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    dev_hit1: f64,
    dev_hit10: f64,
    dev_mrr: f64,
    dev_mr: f64,
    test_hit1: f64,
    test_hit10: f64,
    test_mrr: f64,
    test_mr: f64,
    seeds_total: usize,
    seeds_bootstrapped: usize,
    filled: usize,
    removed: usize,
    ledger_source: usize,
    ledger_target: usize,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

impl RunOutput {
    /// Writes all run artifacts into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_json(&dir.join(REPORT_FILE), &self.report)?;
        write_csv(
            &dir.join(HISTORY_FILE),
            self.report.history.iter().map(|r| HistoryRow {
                epoch: r.epoch,
                dev_hit1: r.dev.hit1,
                dev_hit10: r.dev.hit10,
                dev_mrr: r.dev.mrr,
                dev_mr: r.dev.mr,
                test_hit1: r.test.hit1,
                test_hit10: r.test.hit10,
                test_mrr: r.test.mrr,
                test_mr: r.test.mr,
                seeds_total: r.seeds_total,
                seeds_bootstrapped: r.seeds_bootstrapped,
                filled: r.filled,
                removed: r.removed,
                ledger_source: r.ledger_source,
                ledger_target: r.ledger_target,
            }),
        )?;
        for side in [Side::Source, Side::Target] {
            let i = side as usize;
            write_recovered(
                dir.join(recovered_file(side)),
                &self.graphs[i],
                &self.recovered[i],
            )?;
        }
        save_tensors(dir.join(CHECKPOINT_FILE), &self.checkpoint)?;
        write_json(&dir.join(SIDECAR_FILE), &self.meta)?;
        write_json(&dir.join(TIMING_FILE), &self.timing)
    }
}

/// Grid axis of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Triple removal ratio, applied to both graphs.
    Removal,
    SeedFraction,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "removal" => Ok(Self::Removal),
            "seed-fraction" | "seed_fraction" => Ok(Self::SeedFraction),
            _ => Err(Error::Config(format!(
                "unknown sweep axis `{s}` (expected removal or seed-fraction)"
            ))),
        }
    }

    pub fn apply(self, data: &mut DataConfig, value: f64) {
        match self {
            Self::Removal => {
                data.removal_source = value;
                data.removal_target = value;
            }
            Self::SeedFraction => data.seed_fraction = value,
        }
    }
}

/// One aggregated row of a sweep or ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub value: String,
    pub hit1: f64,
    pub hit10: f64,
    pub mrr: f64,
    pub mr: f64,
}

impl SummaryRow {
    fn of(value: String, r: &Report) -> Self {
        Self {
            value,
            hit1: r.hit1,
            hit10: r.hit10,
            mrr: r.mrr,
            mr: r.mr,
        }
    }
}

/// Runs `jobs` on a pool of `threads` workers, keeping input order.
fn run_all(
    threads: usize,
    jobs: Vec<(String, RunConfig)>,
    command: &str,
) -> Result<Vec<(String, RunOutput)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.into_par_iter()
            .map(|(label, cfg)| {
                log::info!("{command} {label}: starting");
                run(command, &cfg, None).map(|out| (label, out))
            })
            .collect()
    })
}

pub fn format_value(v: f64) -> String {
    format!("{v}")
}

/// One full run per grid value with the shared base config and seed.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    grid: &[f64],
    threads: usize,
) -> Result<Vec<(String, RunOutput)>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if !base.data.is_synthetic() {
        return Err(Error::Config("sweeps need a synthetic dataset".into()));
    }
    let jobs = grid
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            axis.apply(&mut cfg.data, v);
            cfg.validate().map(|_| (format_value(v), cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    run_all(threads, jobs, "sweep")
}

/// One run per variant on identical data and seeds.
pub fn ablate(
    base: &RunConfig,
    variants: &[Variant],
    threads: usize,
) -> Result<Vec<(String, RunOutput)>> {
    if variants.is_empty() {
        return Err(Error::Config("no variants given".into()));
    }
    let jobs = variants
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.training.variant = v;
            cfg.validate().map(|_| (v.name().to_string(), cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    run_all(threads, jobs, "ablate")
}

/// Link-prediction protocol: `config` should sparsify the source (see
/// [`RunConfig::kgc_defaults`]); the report carries the KGC metrics.
pub fn kgc(config: &RunConfig, diagnostic_dir: Option<&Path>) -> Result<RunOutput> {
    if config.data.sparsify <= 0.0 {
        return Err(Error::Config("kgc needs `sparsify` > 0".into()));
    }
    run("kgc", config, diagnostic_dir)
}

pub fn summary(runs: &[(String, RunOutput)]) -> Vec<SummaryRow> {
    runs.iter()
        .map(|(label, out)| SummaryRow::of(label.clone(), &out.report.final_metrics))
        .collect()
}

/// Writes `summary.csv` plus one run directory per row (named by its label).
pub fn write_runs(
    dir: impl AsRef<Path>,
    runs: &[(String, RunOutput)],
    value_header: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (label, out) in runs {
        out.write(dir.join(label))?;
    }
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record([value_header, "hit1", "hit10", "mrr", "mr"])
        .map_err(csv_err)?;
    for row in summary(runs) {
        w.write_record([
            row.value,
            row.hit1.to_string(),
            row.hit10.to_string(),
            row.mrr.to_string(),
            row.mr.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.data.entities = 30;
        c.data.relations = 4;
        c.data.avg_degree = 3.0;
        c.training.dim_t = 8;
        c.training.dim_g = 8;
        c.training.k_neg_g = 5;
        c.training.max_epochs = 4;
        c.training.eval_step = 2;
        c
    }

    #[test]
    fn flat_config_round_trips_and_rejects_unknown_keys() {
        let c = tiny();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert!(v.get("beta_tg").is_some() && v.get("entities").is_some());
        assert!(RunConfig::from_json_over(&c, r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json_over(&c, "{not json").is_err());
        let d = RunConfig::from_json_over(&c, r#"{"beta_tg": 0.25}"#).unwrap();
        assert_eq!(d.training.beta_tg, 0.25);
        assert_eq!(d.data.entities, 30);
    }

    #[test]
    fn set_parses_json_then_strings() {
        let mut c = RunConfig::default();
        c.set("beta-tg", "0.4").unwrap();
        c.set("variant", "var5").unwrap();
        c.set("source", "a.tsv").unwrap();
        c.set("sample_size", "null").unwrap();
        assert_eq!(c.training.variant, Variant::Var5);
        assert_eq!(c.data.source.as_deref(), Some(Path::new("a.tsv")));
        assert!(c.set("max_epochs", "many").is_err());
        assert!(c.validate().is_err(), "source without target");
    }

    #[test]
    fn run_writes_all_artifacts() {
        let mut c = tiny();
        c.data.sparsify = 0.1;
        let out = run("train", &c, None).unwrap();
        let r = &out.report;
        assert_eq!(r.history.first().unwrap().epoch, 0);
        assert!(r.kgc.is_some() && r.recovery.is_some());
        let dir = tempfile::tempdir().unwrap();
        out.write(dir.path()).unwrap();
        for f in [
            REPORT_FILE,
            HISTORY_FILE,
            CHECKPOINT_FILE,
            SIDECAR_FILE,
            TIMING_FILE,
            "recovered_source.tsv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back: ExperimentReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap())
                .unwrap();
        assert_eq!(&back, r);
        let csv = fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
        assert_eq!(csv.lines().count(), r.history.len() + 1);
    }

    #[test]
    fn recipes_validate_inputs() {
        let c = tiny();
        assert!(sweep(&c, SweepAxis::Removal, &[], 1).is_err());
        assert!(ablate(&c, &[], 1).is_err());
        assert!(kgc(&c, None).is_err());
        assert!(SweepAxis::parse("nope").is_err());
        let rows = sweep(&c, SweepAxis::SeedFraction, &[0.2, 0.3], 2).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(),
            ["0.2", "0.3"]
        );
        assert_eq!(rows[0].1.report.config.data.seed_fraction, 0.2);
    }
}
