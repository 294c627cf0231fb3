use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dfilter::attributes::Attribute;
use dfilter::corpus::write_corpus;
use dfilter::embed::write_embeddings;
use dfilter::evalmetrics::{evaluate_objective, ObjectiveKind};
use dfilter::measure::{write_filter_report, WeightVector};
use dfilter::ncm::{load_checkpoint, save_checkpoint};
use dfilter::pipeline::{
    ablation_table, filtered_corpus, run_ablate, run_kendall, run_optimize, write_ablation_table,
    write_kendall, Mode, RunConfig, RunContext,
};
use dfilter::synthgen::{generate, generate_validation, write_labels, SynthSpec};
use dfilter::Error;

#[derive(Debug, Parser)]
#[command(name = "dfilter", version, about = "Score, filter and learn to filter dialogue training data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the seven attribute scores of every training sample.
    Score(RunArgs),
    /// Filter the training split with the configured weights.
    Filter(RunArgs),
    /// Train a model on the (optionally filtered) training split.
    Train(RunArgs),
    /// Evaluate a saved model on the validation split.
    Eval(RunArgs),
    /// Search attribute weights, filter and retrain.
    Optimize(RunArgs),
    /// Single-attribute filtering runs, or the whole ablation table.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// One of spec, rept, rel, cont, coh, flu, cons. All rows when omitted.
        #[arg(long)]
        attribute: Option<String>,
    },
    /// Kendall tau between every pair of attributes.
    Kendall(RunArgs),
    /// Generate a synthetic corpus with injected noise and a ready config.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// SynthSpec JSON; defaults are used for missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    rho_shuffle: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Size of the clean validation split.
    #[arg(long, default_value_t = 200)]
    valid: usize,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(r) = self.ratio {
            cfg.ratio = r;
        }
        if let Some(o) = &self.objective {
            cfg.objective = o.parse::<ObjectiveKind>().map_err(config_error)?;
        }
        if let Some(m) = &self.mode {
            cfg.mode = m.parse::<Mode>().map_err(config_error)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn context(&self) -> Result<RunContext, Error> {
        let ctx = RunContext::load(self.config()?)?;
        fs::create_dir_all(&ctx.config.out_dir).map_err(|e| io_error(&ctx.config.out_dir, e))?;
        Ok(ctx)
    }
}

fn config_error(e: Error) -> Error {
    Error::Config(e.to_string())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file<F>(path: &Path, f: F) -> Result<(), Error>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut out = File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))?;
    f(&mut out).and_then(|_| out.flush()).map_err(|e| io_error(path, e))
}

fn configured_weights(ctx: &RunContext) -> Result<Option<WeightVector>, Error> {
    ctx.config
        .weights
        .as_deref()
        .map(WeightVector::from_slice)
        .transpose()
        .map_err(config_error)
}

fn parse_attribute(name: &str) -> Result<Attribute, Error> {
    Attribute::ALL
        .into_iter()
        .find(|a| a.short_name() == name)
        .ok_or_else(|| Error::Config(format!("unknown attribute {name:?}")))
}

fn score(args: &RunArgs) -> Result<(), Error> {
    let ctx = args.context()?;
    let path = ctx.config.out_dir.join("phi.tsv");
    write_file(&path, |o| ctx.phi.write_report(o))?;
    println!("scored {} samples -> {}", ctx.phi.len(), path.display());
    Ok(())
}

fn filter(args: &RunArgs) -> Result<(), Error> {
    let ctx = args.context()?;
    let w = configured_weights(&ctx)?
        .ok_or_else(|| Error::Config("filter needs `weights` in the config".into()))?;
    let (scores, state) = ctx.filter(&w)?;
    let out = &ctx.config.out_dir;
    let report = out.join("filter.tsv");
    write_file(&report, |o| write_filter_report(&scores, &state, o))?;
    let corpus = out.join("filtered_train.jsonl");
    write_corpus(&filtered_corpus(&ctx.train, &state), &corpus)?;
    println!(
        "kept {} removed {} -> {}",
        state.maintained.len(),
        state.removed.len(),
        corpus.display()
    );
    Ok(())
}

fn train(args: &RunArgs) -> Result<(), Error> {
    let ctx = args.context()?;
    let state = match configured_weights(&ctx)? {
        Some(w) => Some(ctx.filter(&w)?.1),
        None => None,
    };
    let model = ctx.train_model(state.as_ref())?;
    let path = ctx.config.out_dir.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    println!("ppl {} -> {}", ctx.eval.perplexity(&model)?, path.display());
    Ok(())
}

fn eval(args: &RunArgs) -> Result<(), Error> {
    let ctx = args.context()?;
    let ckpt = ctx
        .config
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("eval needs `checkpoint` in the config".into()))?;
    let model = load_checkpoint(ckpt, &ctx.vocab.hash())?;
    let report = ctx.eval.report(&model)?;
    let ppl = ctx.eval.perplexity(&model)?;
    let j = evaluate_objective(ctx.config.objective, &model, &ctx.eval)?;
    let path = ctx.config.out_dir.join("metrics.tsv");
    write_file(&path, |o| report.write_tsv(o, Some(ppl), Some((ctx.config.objective, j))))?;
    println!("ppl {ppl} J {j} -> {}", path.display());
    Ok(())
}

fn optimize(args: &RunArgs) -> Result<(), Error> {
    let ctx = args.context()?;
    let art = run_optimize(&ctx)?;
    println!(
        "best J {} at {:?}; final ppl {} ({} failed evaluations) -> {}",
        art.best_j,
        art.best_w.0,
        art.final_ppl,
        art.failures.len(),
        art.out_dir.display()
    );
    Ok(())
}

fn ablate(args: &RunArgs, attribute: Option<&str>) -> Result<(), Error> {
    let attribute = attribute.map(parse_attribute).transpose()?;
    let ctx = args.context()?;
    let rows = match attribute {
        Some(a) => vec![run_ablate(&ctx, a)?],
        None => ablation_table(&ctx)?,
    };
    let path = ctx.config.out_dir.join("ablation.tsv");
    write_file(&path, |o| write_ablation_table(&rows, o))?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn kendall(args: &RunArgs) -> Result<(), Error> {
    let ctx = args.context()?;
    let rows = run_kendall(&ctx.phi)?;
    let path = ctx.config.out_dir.join("kendall.tsv");
    write_file(&path, |o| write_kendall(&rows, o))?;
    println!("{} pairs -> {}", rows.len(), path.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Error> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(n) = args.samples {
        spec.samples = n;
    }
    if let Some(r) = args.rho_shuffle {
        spec.rho_shuffle = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let synth = generate(&spec)?;
    let valid = generate_validation(&spec, args.valid)?;
    let path = |name: &str| out.join(name);
    write_corpus(&synth.corpus, path("train.jsonl"))?;
    write_corpus(&valid, path("valid.jsonl"))?;
    write_embeddings(&synth.embeddings, path("embeddings.txt"))?;
    write_labels(&synth.labels, path("labels.tsv"))?;

    let absolute = |name: &str| fs::canonicalize(path(name)).unwrap_or_else(|_| path(name));
    let config = RunConfig {
        train: absolute("train.jsonl"),
        valid: absolute("valid.jsonl"),
        embeddings: absolute("embeddings.txt"),
        embedding_dim: Some(spec.embedding_dim),
        pin_consistency: true,
        seed: spec.seed,
        out_dir: absolute("").join("run"),
        ..RunConfig::default()
    };
    let text = serde_json::to_string_pretty(&config).expect("config serializes");
    let config_path = path("config.json");
    fs::write(&config_path, text + "\n").map_err(|e| io_error(&config_path, e))?;
    println!(
        "{} train, {} valid samples -> {}",
        synth.corpus.len(),
        valid.len(),
        config_path.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Score(a) => score(a),
        Command::Filter(a) => filter(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Optimize(a) => optimize(a),
        Command::Ablate { run, attribute } => ablate(run, attribute.as_deref()),
        Command::Kendall(a) => kendall(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
