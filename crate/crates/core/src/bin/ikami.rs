//! Command-line front end. Every subcommand takes a flat JSON `--config`,
//! overridden by flags and `--set key=value`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ikami::experiment::{self, RunConfig, SweepAxis};
use ikami::kg::{
    load_triples, sparsify, synthesize, write_links, write_triples, AlignmentLinks, KnowledgeGraph,
    LinkOrigin,
};
use ikami::train::Variant;

#[derive(Parser)]
#[command(
    name = "ikami",
    version,
    about = "Joint entity alignment and triple recovery for two knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write report, history, recovered triples and checkpoint.
    Train(RunArgs),
    /// One run per grid value of the removal ratio or the seed fraction.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `removal` or `seed-fraction`.
        #[arg(long, default_value = "removal")]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
    },
    /// One run per model variant on identical data.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "full,var1,var2,var5,var6"
        )]
        variants: Vec<String>,
    },
    /// Sparsify the source graph, train without early stopping, and score
    /// link prediction and recovery of the removed triples.
    Kgc(RunArgs),
    /// Write a synthetic graph pair with links and removed triples.
    Synth(RunArgs),
    /// Remove a fraction of triples from a triple file.
    Sparsify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat JSON config; flags win over file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Any config key, e.g. `--set lr_g=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Require a synthetic pair (no `source`/`target` files).
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    entities: Option<String>,
    #[arg(long)]
    relations: Option<String>,
    #[arg(long)]
    avg_degree: Option<String>,
    #[arg(long)]
    removal_source: Option<String>,
    #[arg(long)]
    removal_target: Option<String>,
    #[arg(long)]
    seed_fraction: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    beta_tg: Option<String>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    links: Option<String>,
    #[arg(long)]
    word_vectors: Option<String>,
    #[arg(long)]
    sparsify: Option<String>,
}

/// Config or usage problem: exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

impl RunArgs {
    fn config(&self, base: RunConfig) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load_over(&base, p)?,
            None => base,
        };
        let flags = [
            ("entities", &self.entities),
            ("relations", &self.relations),
            ("avg_degree", &self.avg_degree),
            ("removal_source", &self.removal_source),
            ("removal_target", &self.removal_target),
            ("seed_fraction", &self.seed_fraction),
            ("seed", &self.seed),
            ("max_epochs", &self.max_epochs),
            ("variant", &self.variant),
            ("beta_tg", &self.beta_tg),
            ("source", &self.source),
            ("target", &self.target),
            ("links", &self.links),
            ("word_vectors", &self.word_vectors),
            ("sparsify", &self.sparsify),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.sets {
            let Some((k, v)) = kv.split_once('=') else {
                bail!(Usage(format!("--set expects KEY=VALUE, got `{kv}`")));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        if self.synthetic && !cfg.data.is_synthetic() {
            bail!(Usage(
                "--synthetic conflicts with source/target files".into()
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.config(RunConfig::default())?;
    if !cfg.data.is_synthetic() {
        bail!(Usage("synth takes no source/target files".into()));
    }
    let pair = synthesize(&cfg.data.synth_config(cfg.training.seed))?;
    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_triples(
        out.join("source_triples.tsv"),
        &pair.source,
        pair.source.triples(),
    )?;
    write_triples(
        out.join("target_triples.tsv"),
        &pair.target,
        pair.target.triples(),
    )?;
    // Triple files only name entities that occur in some triple; links to
    // entities left isolated by removal could not be read back.
    let mentioned = |kg: &KnowledgeGraph| -> HashSet<usize> {
        kg.triples().iter().flat_map(|t| [t.head, t.tail]).collect()
    };
    let (in_s, in_t) = (mentioned(&pair.source), mentioned(&pair.target));
    let readable = |links: &AlignmentLinks| {
        let kept: Vec<(usize, usize)> = links
            .pairs()
            .iter()
            .copied()
            .filter(|(s, t)| in_s.contains(s) && in_t.contains(t))
            .collect();
        if kept.len() < links.len() {
            log::warn!(
                "dropped {} links to isolated entities",
                links.len() - kept.len()
            );
        }
        AlignmentLinks::from_pairs(kept, LinkOrigin::GoldEval)
    };
    let (seeds, eval) = (readable(&pair.seeds), readable(&pair.eval));
    write_links(
        out.join("train_links.tsv"),
        &seeds,
        &pair.source,
        &pair.target,
    )?;
    write_links(
        out.join("test_links.tsv"),
        &eval,
        &pair.source,
        &pair.target,
    )?;
    write_triples(
        out.join("removed_source.tsv"),
        &pair.source,
        &pair.removed_source,
    )?;
    write_triples(
        out.join("removed_target.tsv"),
        &pair.target,
        &pair.removed_target,
    )?;
    eprintln!(
        "wrote {}: {} + {} triples, {} train / {} test links",
        out.display(),
        pair.source.num_triples(),
        pair.target.num_triples(),
        seeds.len(),
        eval.len()
    );
    Ok(())
}

fn sparsify_file(input: &Path, ratio: f64, seed: u64, out: &Path) -> anyhow::Result<()> {
    let kg = load_triples(input)?;
    let (kept, removed) = sparsify(&kg, ratio, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_triples(out.join("kept.tsv"), &kept, kept.triples())?;
    write_triples(out.join("removed.tsv"), &kept, &removed)?;
    eprintln!(
        "kept {} triples, removed {}",
        kept.num_triples(),
        removed.len()
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = experiment::thread_count()?;
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config(RunConfig::default())?;
            let out = experiment::run("train", &cfg, Some(&args.out))?;
            out.write(&args.out)?;
            print_json(&out.report.final_metrics)
        }
        Command::Sweep { run, axis, grid } => {
            let axis = SweepAxis::parse(&axis)?;
            let cfg = run.config(RunConfig::default())?;
            let runs = experiment::sweep(&cfg, axis, &grid, threads)?;
            experiment::write_runs(&run.out, &runs, "value")?;
            print_json(&experiment::summary(&runs))
        }
        Command::Ablate { run, variants } => {
            let variants = variants
                .iter()
                .map(|v| Variant::parse(v.trim()))
                .collect::<ikami::Result<Vec<_>>>()?;
            let cfg = run.config(RunConfig::default())?;
            let runs = experiment::ablate(&cfg, &variants, threads)?;
            experiment::write_runs(&run.out, &runs, "variant")?;
            print_json(&experiment::summary(&runs))
        }
        Command::Kgc(args) => {
            let cfg = args.config(RunConfig::kgc_defaults())?;
            let out = experiment::kgc(&cfg, Some(&args.out))?;
            out.write(&args.out)?;
            print_json(&(&out.report.kgc, &out.report.recovery))
        }
        Command::Synth(args) => synth(&args),
        Command::Sparsify {
            input,
            ratio,
            seed,
            out,
        } => sparsify_file(&input, ratio, seed, &out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<ikami::Error>() {
        Some(ikami::Error::Config(_) | ikami::Error::Json(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
