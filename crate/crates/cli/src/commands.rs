use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mrlrec::data::{self, InteractionDataset, InteractionFormat, Partition, SplitConfig, ValidationMode};
use mrlrec::evaluation::{evaluate_cuts, MetricReport, DEFAULT_KS};
use mrlrec::sampling::SamplingStrategy;
use mrlrec::synthetic::{generate_synthetic, SyntheticSpec, HIERARCHY_FILE};
use mrlrec::theorem::verify_theorem;
use mrlrec::trainer::{train_with, BprMMode, Reduction, TrainConfig, TrainOptions, Variant};
use mrlrec::Model;
use serde_json::json;

use crate::manifest::{
    manifest_path_for, read_manifest, set_argv, stale_inputs, write_json, ManifestBuilder,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CHECKPOINT_CONFIG_FILE: &str = "checkpoint.config.json";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(name = "mrlrec", version, about = "Matryoshka matrix-factorization recommender")]
pub struct Cli {
    /// Master seed; every subsystem seed is derived from it.
    #[arg(long, global = true, env = "MRLREC_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for sampling and evaluation (results do not change).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Re-run the command recorded in a manifest after checking that its
    /// inputs are unchanged.
    #[arg(long, conflicts_with = "seed")]
    pub from_manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Map raw user/item keys to dense indices and write canonical TSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "tsv")]
        format: InteractionFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-user train/test split plus a global validation draw.
    Split {
        /// Canonical interactions (an `index_map.tsv` beside it is honoured).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_ratio: f64,
        #[arg(long, default_value_t = 0.1)]
        validation_ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a hierarchical synthetic dataset.
    Synth {
        /// JSON spec; individual flags override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_users: Option<usize>,
        #[arg(long)]
        n_items: Option<usize>,
        #[arg(long)]
        tree_depth: Option<usize>,
        #[arg(long)]
        branching: Option<usize>,
        #[arg(long)]
        interactions_per_user: Option<usize>,
        #[arg(long)]
        noise_rate: Option<f64>,
        /// Also write a train/validation/test split (80/20, 10% validation).
        #[arg(long)]
        split: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a split data directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint at one dimension cut.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
        #[arg(long, default_value = "test")]
        partition: String,
        /// Defaults to the full dimension.
        #[arg(long)]
        dim_cut: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint at every size of its dimension schedule.
    TruncatedEval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
        #[arg(long, default_value = "test")]
        partition: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the frozen-block gradient identities numerically.
    VerifyTheorem {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub sampler_strategy: Option<SamplingStrategy>,
    #[arg(long)]
    pub dns_pool_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub reduction: Option<Reduction>,
    #[arg(long)]
    pub validation_mode: Option<ValidationMode>,
    #[arg(long)]
    pub bpr_m_mode: Option<BprMMode>,
}

/// `{"error": kind, "message": text}` for a failed command.
pub fn error_json(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<mrlrec::Error>())
        .map(|e| e.kind())
        .or_else(|| {
            err.chain()
                .any(|e| e.is::<std::io::Error>())
                .then_some("Io")
        })
        .or_else(|| {
            err.chain()
                .any(|e| e.is::<serde_json::Error>())
                .then_some("Json")
        })
        .or_else(|| err.chain().any(|e| e.is::<clap::Error>()).then_some("Usage"))
        .unwrap_or("Other");
    json!({ "error": kind, "message": format!("{err:#}") }).to_string()
}

pub fn usage_error_json(err: &clap::Error) -> String {
    let message = err.render().to_string();
    json!({ "error": "Usage", "message": message.trim() }).to_string()
}

/// Arguments that reproduce `cli`; a seed taken from the environment is
/// written out explicitly.
fn replay_argv(cli: &Cli, raw: &[String]) -> Vec<String> {
    let mut argv = raw.to_vec();
    if let Some(seed) = cli.seed {
        if !raw.iter().any(|a| a == "--seed" || a.starts_with("--seed=")) {
            argv.splice(0..0, ["--seed".to_owned(), seed.to_string()]);
        }
    }
    argv
}

pub fn run(cli: Cli, raw_args: &[String]) -> Result<()> {
    if let Some(path) = &cli.from_manifest {
        let manifest = read_manifest(path)?;
        let stale = stale_inputs(&manifest);
        if !stale.is_empty() {
            bail!("inputs changed since {} was written: {}", path.display(), stale.join(", "));
        }
        let mut argv = vec!["mrlrec".to_owned()];
        argv.extend(manifest.argv.iter().cloned());
        let replay = Cli::try_parse_from(&argv)?;
        if replay.from_manifest.is_some() {
            bail!("manifest {} records a replay, not a command", path.display());
        }
        return run(replay, &manifest.argv);
    }
    set_argv(replay_argv(&cli, raw_args));
    let seed = cli.seed;
    let threads = cli.threads.max(1);
    let Some(command) = cli.command else {
        bail!("no command given; see --help");
    };
    match command {
        Command::Ingest { input, format, out } => cmd_ingest(&input, format, &out),
        Command::Split {
            input,
            train_ratio,
            validation_ratio,
            out,
        } => cmd_split(&input, train_ratio, validation_ratio, seed.unwrap_or(0), &out),
        Command::Synth {
            spec,
            n_users,
            n_items,
            tree_depth,
            branching,
            interactions_per_user,
            noise_rate,
            split,
            out,
        } => {
            let mut s = match &spec {
                Some(p) => serde_json::from_str::<SyntheticSpec>(&read(p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => SyntheticSpec {
                    n_users: 500,
                    n_items: 500,
                    tree_depth: 3,
                    branching: 3,
                    interactions_per_user: 20,
                    noise_rate: 0.1,
                    seed: 0,
                },
            };
            s.n_users = n_users.unwrap_or(s.n_users);
            s.n_items = n_items.unwrap_or(s.n_items);
            s.tree_depth = tree_depth.unwrap_or(s.tree_depth);
            s.branching = branching.unwrap_or(s.branching);
            s.interactions_per_user = interactions_per_user.unwrap_or(s.interactions_per_user);
            s.noise_rate = noise_rate.unwrap_or(s.noise_rate);
            s.seed = seed.unwrap_or(s.seed);
            cmd_synth(&s, spec.as_deref(), split, &out)
        }
        Command::Train(args) => cmd_train(args, seed, threads),
        Command::Evaluate {
            checkpoint,
            data,
            ks,
            partition,
            dim_cut,
            out,
        } => cmd_evaluate(&checkpoint, &data, &ks, &partition, dim_cut, threads, &out),
        Command::TruncatedEval {
            checkpoint,
            data,
            ks,
            partition,
            out,
        } => cmd_truncated_eval(&checkpoint, &data, &ks, &partition, threads, &out),
        Command::VerifyTheorem { trials, out } => cmd_verify_theorem(seed.unwrap_or(7), trials, &out),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parse_partition(name: &str) -> Result<Partition> {
    match name {
        "validation" => Ok(Partition::Validation),
        "test" => Ok(Partition::Test),
        other => bail!("partition must be `validation` or `test`, got `{other}`"),
    }
}

fn is_split_file(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
    [data::TRAIN_FILE, data::VALIDATION_FILE, data::TEST_FILE, data::INDEX_MAP_FILE].contains(&name)
}

fn ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

pub fn cmd_ingest(input: &Path, format: InteractionFormat, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("ingest", None);
    m.config(&json!({ "input": input, "format": format!("{format:?}").to_lowercase(), "out": out }))?;
    m.input(input)?;
    let t = Instant::now();
    let ds = InteractionDataset::ingest(input, format)?;
    create_dir(out)?;
    let interactions = out.join(data::INTERACTIONS_FILE);
    let index_map = out.join(data::INDEX_MAP_FILE);
    ds.write_interactions(&interactions)?;
    ds.write_index_map(&index_map)?;
    m.timing("ingest", ms(t));
    m.output(&interactions)?;
    m.output(&index_map)?;
    m.finish(&manifest_path_for(out, true))?;
    println!(
        "{}",
        json!({ "users": ds.n_users(), "items": ds.n_items(), "interactions": ds.interactions().len() })
    );
    Ok(())
}

pub fn cmd_split(input: &Path, train_ratio: f64, validation_ratio: f64, seed: u64, out: &Path) -> Result<()> {
    let config = SplitConfig {
        train_ratio,
        validation_ratio_of_train: validation_ratio,
        seed,
    };
    let mut m = ManifestBuilder::new("split", Some(seed));
    m.config(&config)?;
    m.input(input)?;
    let map = input.with_file_name(data::INDEX_MAP_FILE);
    if map.exists() {
        m.input(&map)?;
    }
    let t = Instant::now();
    let ds = InteractionDataset::load_canonical(input)?.split(&config)?;
    ds.write_split(out)?;
    m.timing("split", ms(t));
    let mut sizes = serde_json::Map::new();
    for p in [Partition::Train, Partition::Validation, Partition::Test] {
        sizes.insert(p.name().into(), ds.partition(p)?.len().into());
    }
    for f in [data::TRAIN_FILE, data::VALIDATION_FILE, data::TEST_FILE, data::INDEX_MAP_FILE] {
        m.output(&out.join(f))?;
    }
    m.finish(&manifest_path_for(out, true))?;
    println!("{}", serde_json::Value::Object(sizes));
    Ok(())
}

pub fn cmd_synth(spec: &SyntheticSpec, spec_path: Option<&Path>, split: bool, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("synth", Some(spec.seed));
    m.config(&json!({ "spec": spec, "split": split }))?;
    if let Some(p) = spec_path {
        m.input(p)?;
    }
    let t = Instant::now();
    let (ds, hierarchy) = generate_synthetic(spec)?;
    create_dir(out)?;
    let interactions = out.join(data::INTERACTIONS_FILE);
    let index_map = out.join(data::INDEX_MAP_FILE);
    let hier = out.join(HIERARCHY_FILE);
    ds.write_interactions(&interactions)?;
    ds.write_index_map(&index_map)?;
    hierarchy.write_tsv(&hier)?;
    let mut outputs = vec![interactions, index_map, hier];
    if split {
        let config = SplitConfig {
            seed: spec.seed,
            ..SplitConfig::default()
        };
        ds.split(&config)?.write_split(out)?;
        outputs.extend([data::TRAIN_FILE, data::VALIDATION_FILE, data::TEST_FILE].map(|f| out.join(f)));
    }
    m.timing("synth", ms(t));
    for p in &outputs {
        m.output(p)?;
    }
    m.finish(&manifest_path_for(out, true))?;
    println!(
        "{}",
        json!({ "users": ds.n_users(), "items": ds.n_items(), "interactions": ds.interactions().len() })
    );
    Ok(())
}

fn resolve_train_config(args: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let mut c = match &args.config {
        Some(p) => TrainConfig::from_json(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => match args.variant {
            Some(v) => TrainConfig::new(v),
            None => bail!("either --config or --variant is required"),
        },
    };
    if let Some(v) = args.variant {
        c.variant = v;
    }
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                c.$field = v;
            }
        )*};
    }
    apply!(learning_rate, batch_size, max_epochs, patience, eval_every, dims, weight_decay, reduction, validation_mode, bpr_m_mode);
    if let Some(w) = &args.weights {
        c.weights = Some(w.clone());
    }
    if let Some(s) = args.sampler_strategy {
        c.sampler.strategy = Some(s);
    }
    if let Some(p) = args.dns_pool_size {
        c.sampler.dns_pool_size = p;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

pub fn cmd_train(args: TrainArgs, seed: Option<u64>, threads: usize) -> Result<()> {
    let config = resolve_train_config(&args, seed)?;
    let mut m = ManifestBuilder::new("train", Some(config.seed));
    m.config(&json!({ "train": config, "threads": threads }))?;
    if let Some(p) = &args.config {
        m.input(p)?;
    }
    m.input_dir(&args.data, is_split_file)?;

    let t = Instant::now();
    let ds = InteractionDataset::load_split(&args.data)?;
    m.timing("load", ms(t));
    let t = Instant::now();
    let outcome = train_with::<f32>(&ds, &config, TrainOptions { threads })?;
    m.timing("train", ms(t));

    create_dir(&args.out)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    let sidecar = args.out.join(CHECKPOINT_CONFIG_FILE);
    let log = args.out.join(EPOCH_LOG_FILE);
    let summary_path = args.out.join(SUMMARY_FILE);
    outcome.model.save(&ckpt)?;
    write_json(&sidecar, &config)?;
    outcome.log.save(&log)?;

    let t = Instant::now();
    let test = if ds.partition(Partition::Test)?.is_empty() {
        None
    } else {
        let dim = outcome.model.dim();
        Some(evaluate_cuts(&outcome.model, &ds, Partition::Test, &DEFAULT_KS, &[dim], threads)?.remove(0))
    };
    m.timing("evaluate", ms(t));
    let summary = json!({
        "variant": config.variant,
        "best_epoch": outcome.best_epoch,
        "best_val_recall_at_20": outcome.best_val_recall,
        "epochs_run": outcome.epochs_run,
        "stopped_early": outcome.stopped_early,
        "mns_repeat_rate": outcome.mns_repeat_rate,
        "test": test,
    });
    write_json(&summary_path, &summary)?;
    for p in [&ckpt, &sidecar, &log, &summary_path] {
        m.output(p)?;
    }
    m.finish(&manifest_path_for(&args.out, true))?;
    println!("{summary}");
    Ok(())
}

fn load_checkpoint(checkpoint: &Path) -> Result<Model<f32>> {
    Model::<f32>::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))
}

fn eval_manifest(
    command: &str,
    checkpoint: &Path,
    data: &Path,
    config: serde_json::Value,
) -> Result<ManifestBuilder> {
    let mut m = ManifestBuilder::new(command, None);
    m.config(&config)?;
    m.input(checkpoint)?;
    m.input_dir(data, is_split_file)?;
    Ok(m)
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    data: &Path,
    ks: &[usize],
    partition: &str,
    dim_cut: Option<usize>,
    threads: usize,
    out: &Path,
) -> Result<()> {
    let which = parse_partition(partition)?;
    let mut m = eval_manifest(
        "evaluate",
        checkpoint,
        data,
        json!({ "ks": ks, "partition": partition, "dim_cut": dim_cut, "threads": threads }),
    )?;
    let t = Instant::now();
    let model = load_checkpoint(checkpoint)?;
    let ds = InteractionDataset::load_split(data)?;
    let cut = dim_cut.unwrap_or(model.dim());
    let report = evaluate_cuts(&model, &ds, which, ks, &[cut], threads)?.remove(0);
    m.timing("evaluate", ms(t));
    write_json(out, &report)?;
    m.output(out)?;
    m.finish(&manifest_path_for(out, false))?;
    println!("{}", serde_json::to_value(&report)?);
    Ok(())
}

pub fn cmd_truncated_eval(
    checkpoint: &Path,
    data: &Path,
    ks: &[usize],
    partition: &str,
    threads: usize,
    out: &Path,
) -> Result<()> {
    let which = parse_partition(partition)?;
    let mut m = eval_manifest(
        "truncated-eval",
        checkpoint,
        data,
        json!({ "ks": ks, "partition": partition, "threads": threads }),
    )?;
    let t = Instant::now();
    let model = load_checkpoint(checkpoint)?;
    let ds = InteractionDataset::load_split(data)?;
    let cuts = model.schedule.sizes().to_vec();
    let reports = evaluate_cuts(&model, &ds, which, ks, &cuts, threads)?;
    m.timing("evaluate", ms(t));
    write_json(out, &reports)?;
    let csv_path = out.with_extension("csv");
    let mut csv = MetricReport::csv_header(ks) + "\n";
    for r in &reports {
        csv += &r.csv_row();
        csv.push('\n');
    }
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    m.output(out)?;
    m.output(&csv_path)?;
    m.finish(&manifest_path_for(out, false))?;
    println!("{}", serde_json::to_value(&reports)?);
    Ok(())
}

pub fn cmd_verify_theorem(seed: u64, trials: usize, out: &Path) -> Result<()> {
    let mut m = ManifestBuilder::new("verify-theorem", Some(seed));
    m.config(&json!({ "trials": trials }))?;
    let t = Instant::now();
    let report = verify_theorem(seed, trials)?;
    m.timing("verify", ms(t));
    write_json(out, &report)?;
    m.output(out)?;
    m.finish(&manifest_path_for(out, false))?;
    println!("{}", json!({ "passed": report.passed, "failures": report.failures }));
    if !report.passed {
        bail!("{} theorem check(s) failed; see {}", report.failures, out.display());
    }
    Ok(())
}
