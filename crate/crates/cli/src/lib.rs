//! Command implementations behind the `kcgc` binary.
//!
//! Every command that produces files also writes the configuration it ran
//! with, so re-running from that file alone reproduces the outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use sha2::{Digest, Sha256};

use kcgc_core::config::{Ablation, ExperimentConfig};
use kcgc_core::evaluation::{evaluate, write_predictions, EvalMode, EvalReport};
use kcgc_core::inference::{constrained_beam_search, EntityTrie};
use kcgc_core::kgdata::{
    build_vocab, dataset_stats, format_stats, language_tags, load_dataset, write_synthetic, Dataset, Part, Pattern,
    SplitRatios, SynthSpec,
};
use kcgc_core::model::{load_checkpoint, Model};
use kcgc_core::numerics::derive_seed;
use kcgc_core::objectives::ScoreVariant;
use kcgc_core::training::{prepare_examples, train, Trainer, ValidHook};
use kcgc_core::vocab::{TokenId, Vocabulary};

pub const RESOLVED_CONFIG: &str = "config.resolved";

#[derive(Debug, Parser)]
#[command(name = "kcgc", version, about = "Generative knowledge-graph completion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multilingual dataset and its closed-world split.
    GenData(GenDataArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Print the top-k tails for one query.
    Predict(PredictArgs),
    /// Render or compare saved evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key (`key=value`); repeatable, last wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub entities: usize,
    #[arg(long, default_value_t = 12)]
    pub relations: usize,
    /// Triples per language.
    #[arg(long, default_value_t = 500)]
    pub triples: usize,
    #[arg(long, default_value_t = 3)]
    pub languages: usize,
    #[arg(long, default_value = "random")]
    pub pattern: Pattern,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add alignment triples between every pair of languages.
    #[arg(long)]
    pub align: bool,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub valid: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Drop one model component; repeatable.
    #[arg(long)]
    pub ablate: Vec<Ablation>,
    /// Score function of the global constraint.
    #[arg(long)]
    pub score: Option<ScoreVariant>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Part>,
    #[arg(long)]
    pub mode: Option<EvalMode>,
    /// Output directory; defaults to `<out_dir>/eval-<split>-<mode>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub head: String,
    #[arg(long)]
    pub relation: String,
    /// Language of the relation; needed only when its name is ambiguous.
    #[arg(long)]
    pub lang: Option<String>,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `report.json` files written by `eval`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "table")]
    pub format: ReportFormat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
    Svg,
}

/// Usage problems (exit code 1) as opposed to runtime failures (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Maps an error to the process exit code.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.chain().any(|c| {
        c.is::<UsageError>() || matches!(c.downcast_ref::<kcgc_core::Error>(), Some(kcgc_core::Error::Config { .. }))
    });
    if usage {
        1
    } else {
        2
    }
}

/// Parses and runs one command line. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn resolve(args: &ConfigArgs) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::resolve(args.config.as_deref(), std::env::vars(), &args.set)?)
}

/// Vocabulary of a dataset under the configured tokenizer.
fn dataset_vocab(cfg: &ExperimentConfig, d: &Dataset) -> Result<Vocabulary> {
    Ok(build_vocab(std::slice::from_ref(&d.graph), cfg.tokenizer)?)
}

fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    load_dataset(&cfg.data_dir).with_context(|| format!("loading dataset from {}", cfg.data_dir.display()))
}

/// `<file name>@<first 12 hex digits of its SHA-256>`; independent of the
/// directory the checkpoint lives in.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(format!("{name}@{hex}"))
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = SynthSpec {
        n_entities: a.entities,
        n_relations: a.relations,
        n_triples: a.triples,
        languages: language_tags(a.languages),
        pattern: a.pattern,
        seed: a.seed,
    };
    let ratios = SplitRatios {
        train: a.train,
        valid: a.valid,
        test: a.test,
    };
    let d = write_synthetic(&a.out, &spec, ratios, derive_seed(a.seed, "split", 0), a.align)?;
    let stats = dataset_stats(&d.graph, &d.split)?;
    print!("{}", format_stats(&stats));
    for w in &d.split.warnings {
        println!("warning: {w}");
    }
    info!("wrote {} triples to {}", d.graph.triples().len(), a.out.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    for ab in &a.ablate {
        cfg.apply_ablation(*ab)?;
    }
    if let Some(s) = a.score {
        cfg.train.weights.score_variant = s;
    }
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let vocab = dataset_vocab(&cfg, &data)?;
    cfg.model.vocab_size = vocab.len();
    std::fs::create_dir_all(&cfg.out_dir)?;
    cfg.write(&cfg.out_dir.join(RESOLVED_CONFIG))?;
    vocab.save(&cfg.out_dir.join("vocab.json"))?;

    let train_idx = data.split.indices(Part::Train);
    let examples = prepare_examples(&data.graph, train_idx, &vocab, cfg.model.max_seq_len)?;
    let model = Model::new(cfg.model.clone(), derive_seed(cfg.seed, "init", 0))?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), vocab.hash())?;
    info!(
        "training on {} triples, vocab {}, {} parameters",
        examples.len(),
        vocab.len(),
        trainer.model.params.numel()
    );
    let has_valid = !data.split.valid.is_empty() && cfg.train.eval_every > 0;
    let mut hook = |m: &Model| -> kcgc_core::Result<f64> {
        let (r, _) = evaluate(m, &vocab, &data.graph, &data.split, Part::Valid, &cfg.eval, "current")?;
        Ok(r.macro_avg.hits1 / 100.0)
    };
    let valid: Option<ValidHook<'_>> = if has_valid { Some(&mut hook) } else { None };
    let out = train(&mut trainer, &examples, &cfg.out_dir, valid)?;
    println!(
        "trained {} epochs ({} steps); final loss {:.6}; checkpoint {}",
        out.epochs_completed,
        out.steps,
        out.epoch_losses.last().copied().unwrap_or(f64::NAN),
        out.final_checkpoint.display()
    );
    if let Some(b) = out.best_valid_hits1 {
        println!("best valid hits@1 {b:.4}");
    }
    Ok(())
}

fn load_model(cfg: &ExperimentConfig, vocab: &Vocabulary, explicit: Option<&Path>) -> Result<(Model, PathBuf)> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| cfg.checkpoint_path());
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    let ck = load_checkpoint(&path, Some(&vocab.hash())).with_context(|| format!("loading {}", path.display()))?;
    Ok((ck.model, path))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    if let Some(p) = &a.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
    if let Some(s) = a.split {
        cfg.eval_split = s;
    }
    if let Some(m) = a.mode {
        cfg.eval.mode = m;
    }
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let vocab = dataset_vocab(&cfg, &data)?;
    let (model, path) = load_model(&cfg, &vocab, None)?;
    cfg.model = model.config().clone();
    let id = checkpoint_id(&path)?;
    let part_name = format!("{:?}", cfg.eval_split).to_lowercase();
    let mode_name = format!("{:?}", cfg.eval.mode).to_lowercase();
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("eval-{part_name}-{mode_name}")));
    std::fs::create_dir_all(&out)?;
    cfg.write(&out.join(RESOLVED_CONFIG))?;
    let (report, results) = evaluate(&model, &vocab, &data.graph, &data.split, cfg.eval_split, &cfg.eval, &id)?;
    std::fs::write(out.join("report.json"), report.to_json())?;
    std::fs::write(out.join("report.txt"), report.to_table())?;
    std::fs::write(out.join("length.svg"), report.to_svg())?;
    write_predictions(&results, &out.join("predictions.jsonl"))?;
    print!("{}", report.to_table());
    info!("report written to {}", out.display());
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    if let Some(p) = &a.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
    if a.k == 0 {
        return Err(UsageError("-k must be at least 1".into()).into());
    }
    let data = load_data(&cfg)?;
    let g = &data.graph;
    let vocab = dataset_vocab(&cfg, &data)?;
    let (model, _) = load_model(&cfg, &vocab, None)?;
    let matches: Vec<u32> = (0..g.relations().len() as u32)
        .filter(|&i| {
            let r = g.relations().get(i);
            r.surface == a.relation && a.lang.as_ref().is_none_or(|l| *l == r.lang)
        })
        .collect();
    let rid = match matches.as_slice() {
        [one] => kcgc_core::kgdata::RelationId(*one),
        [] => return Err(UsageError(format!("unknown relation `{}`", a.relation)).into()),
        _ => return Err(UsageError(format!("relation `{}` is ambiguous; pass --lang", a.relation)).into()),
    };
    let answer_lang = g.answer_lang(rid).to_string();
    let mut seen = std::collections::HashSet::new();
    let cands: Vec<(u32, Vec<TokenId>)> = g
        .entities_of_lang(&answer_lang)
        .into_iter()
        .filter_map(|e| {
            let s = &g.entity(e).surface;
            seen.insert(s.clone()).then(|| (e.0, vocab.encode(s)))
        })
        .collect();
    let trie = EntityTrie::build(&cands)?;
    let query = vocab.serialize_query(&a.head, &a.relation, model.config().max_seq_len)?;
    let width = cfg.eval.beam_width.max(a.k);
    let r = constrained_beam_search(&model, &query, &trie, width, a.k)?;
    for (i, p) in r.predictions.iter().enumerate() {
        println!("{}\t{}\t{:.6}", i + 1, g.entities().get(p.entity).surface, p.log_prob);
    }
    if r.truncated {
        println!("(truncated: some candidates exceed the sequence length)");
    }
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for p in &a.reports {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        reports.push((p, r));
    }
    if reports.len() == 1 {
        let r = &reports[0].1;
        match a.format {
            ReportFormat::Table => print!("{}", r.to_table()),
            ReportFormat::Json => print!("{}", r.to_json()),
            ReportFormat::Svg => print!("{}", r.to_svg()),
        }
        return Ok(());
    }
    if a.format != ReportFormat::Table {
        return Err(UsageError("several reports can only be compared as a table".into()).into());
    }
    println!("{:<40} {:>8} {:>8} {:>8} {:>8}", "report", "queries", "H@1", "H@3", "H@10");
    for (p, r) in &reports {
        let m = &r.macro_avg;
        println!(
            "{:<40} {:>8} {:>8.2} {:>8.2} {:>8.2}",
            p.display(),
            r.queries,
            m.hits1,
            m.hits3,
            m.hits10
        );
    }
    Ok(())
}
