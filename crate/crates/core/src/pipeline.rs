//! Run orchestration: configuration, the filter → train → evaluate black box
//! (full retraining or diff-set updates from a fixed base model), the weight
//! search, ablations, attribute correlations and on-disk artifacts.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attributes::{
    compute_phi, kendall_tau, Attribute, Backends, ConsistencySource, PhiTable, N_ATTRIBUTES,
};
use crate::bayesopt::{optimize, Aborted, FailurePolicy, GpConfig, OptimizeTrace};
use crate::corpus::{build_vocab, load_corpus, write_corpus, Corpus, Role, Vocabulary};
use crate::embed::{load_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate_objective, EvalSet, MetricReport, ObjectiveKind};
use crate::measure::{
    diff_sets, filter_by_weights, random_partition, write_filter_report, DiffSets, FilterState,
    ScoredSample, WeightVector,
};
use crate::ncm::{diff_mle_neg, encode_corpus, save_checkpoint, train_full, EncodedSample, ModelParams, TrainConfig};
use crate::seqscore::{load_score_table, LmBackend, NgramLm, ScoreKind, ScoreTable};

/// How each black-box evaluation obtains its model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Train from a fresh initialization on the maintained samples.
    FullRetrain,
    /// Update the base model with one MLE/NEG pass over the diff sets.
    DiffMleNeg,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_retrain" | "full" => Ok(Mode::FullRetrain),
            "diff_mle_neg" | "diff" => Ok(Mode::DiffMleNeg),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub embeddings: PathBuf,
    /// Inferred from the first line of the embedding file when absent.
    pub embedding_dim: Option<usize>,
    pub lm_conditional: Option<PathBuf>,
    pub lm_unconditional: Option<PathBuf>,
    pub nli_contra: Option<PathBuf>,
    /// Score every sample's consistency as 1.0 when no NLI table is given.
    pub pin_consistency: bool,
    /// Score a missing next utterance as continuity 0 instead of failing.
    pub neutral_next: bool,
    pub vocab_min_count: u64,
    /// Percentage of samples removed.
    pub ratio: f64,
    pub objective: ObjectiveKind,
    pub bayesopt: GpConfig,
    /// Search iterations after the initial design.
    pub iterations: usize,
    /// Defaults to the trainer's defaults with a tighter NEG clip, [`NEG_CLIP`].
    pub ncm: TrainConfig,
    pub mode: Mode,
    /// Drives the base partition, the search, model initialization and shuffling.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Added to the worst observed objective for a failed evaluation.
    pub failure_penalty: f64,
    /// Weights for `filter`, `train` and the full-measure ablation row.
    pub weights: Option<Vec<f64>>,
    /// Model to evaluate with `eval`.
    pub checkpoint: Option<PathBuf>,
}

/// NEG gradient norm cap used by runs unless configured otherwise. Looser caps
/// let negative steps dominate the diff-set update.
pub const NEG_CLIP: f64 = 0.01;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: PathBuf::new(),
            valid: PathBuf::new(),
            embeddings: PathBuf::new(),
            embedding_dim: None,
            lm_conditional: None,
            lm_unconditional: None,
            nli_contra: None,
            pin_consistency: false,
            neutral_next: false,
            vocab_min_count: 1,
            ratio: 20.0,
            objective: ObjectiveKind::PlusPpl,
            bayesopt: GpConfig::default(),
            iterations: 100,
            ncm: TrainConfig {
                neg_clip: NEG_CLIP,
                ..TrainConfig::default()
            },
            mode: Mode::DiffMleNeg,
            seed: 0,
            out_dir: PathBuf::from("run"),
            failure_penalty: 1.0,
            weights: None,
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks values only; see [`RunConfig::validate_files`] for paths.
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 100.0) {
            return Err(Error::Config(format!("ratio {} must lie in (0, 100)", self.ratio)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.bayesopt.dim() != N_ATTRIBUTES {
            return Err(Error::Config(format!(
                "search domain has {} coordinates, expected {N_ATTRIBUTES}",
                self.bayesopt.dim()
            )));
        }
        self.bayesopt.validate()?;
        self.ncm.validate()?;
        if self.lm_conditional.is_some() != self.lm_unconditional.is_some() {
            return Err(Error::Config(
                "lm_conditional and lm_unconditional must be given together".into(),
            ));
        }
        if self.nli_contra.is_none() && !self.pin_consistency {
            return Err(Error::Config(
                "no nli_contra table: set pin_consistency to score consistency as 1.0".into(),
            ));
        }
        if !(self.failure_penalty.is_finite() && self.failure_penalty >= 0.0) {
            return Err(Error::Config("failure_penalty must be finite and >= 0".into()));
        }
        if let Some(w) = &self.weights {
            WeightVector::from_slice(w).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate_files(&self) -> Result<()> {
        let required = [&self.train, &self.valid, &self.embeddings];
        let optional = [&self.lm_conditional, &self.lm_unconditional, &self.nli_contra];
        for p in required.into_iter().chain(optional.into_iter().flatten()) {
            if !p.is_file() {
                return Err(Error::Config(format!("{}: no such file", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the serialized configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// The model trainer's configuration with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.ncm.clone()
        }
    }
}

/// Number of values on the first non-empty line, minus the token.
pub fn infer_embedding_dim(path: &Path) -> Result<usize> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            return Ok(line.split_whitespace().count().saturating_sub(1));
        }
    }
    Err(Error::Parse {
        line: 1,
        message: format!("{}: empty embedding file", path.display()),
    })
}

/// Everything a run reads, already loaded.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub train: Corpus,
    pub valid: Corpus,
    pub embeddings: EmbeddingTable,
    /// External `(conditional, unconditional)` log-probability tables.
    pub lm_tables: Option<(ScoreTable, ScoreTable)>,
    pub nli: Option<ScoreTable>,
}

impl RunInputs {
    pub fn load(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        config.validate_files()?;
        let dim = match config.embedding_dim {
            Some(d) => d,
            None => infer_embedding_dim(&config.embeddings)?,
        };
        let lm_tables = match (&config.lm_conditional, &config.lm_unconditional) {
            (Some(c), Some(u)) => Some((
                load_score_table(c, ScoreKind::LmConditional)?,
                load_score_table(u, ScoreKind::LmUnconditional)?,
            )),
            _ => None,
        };
        Ok(RunInputs {
            train: load_corpus(&config.train, Role::Train)?,
            valid: load_corpus(&config.valid, Role::Validation)?,
            embeddings: load_embeddings(&config.embeddings, dim)?,
            lm_tables,
            nli: config
                .nli_contra
                .as_ref()
                .map(|p| load_score_table(p, ScoreKind::NliContra))
                .transpose()?,
        })
    }
}

/// Result of one black-box evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub j: f64,
    pub scores: Vec<ScoredSample>,
    pub state: FilterState,
}

/// Base partition and model for diff-set updates. Never mutated after creation.
#[derive(Debug, Clone)]
pub struct BaseSnapshot {
    pub partition: FilterState,
    pub theta: ModelParams,
    pub j: f64,
    pub hash: String,
}

/// SHA-256 over the parameter bytes.
pub fn params_hash(theta: &ModelParams) -> String {
    let mut h = Sha256::new();
    let t = &theta.tensors;
    for x in t.emb.iter().chain(&t.out_w).chain(&t.out_b) {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Loaded inputs plus the per-run quantities computed once: vocabulary,
/// scoring backends and the attribute table of the training split.
#[derive(Debug)]
pub struct RunContext {
    pub config: RunConfig,
    pub train: Corpus,
    pub vocab: Vocabulary,
    pub backends: Backends,
    pub phi: PhiTable,
    pub eval: EvalSet,
    encoded: Vec<EncodedSample>,
    index: HashMap<String, usize>,
}

impl RunContext {
    pub fn new(config: RunConfig, inputs: RunInputs) -> Result<Self> {
        config.validate()?;
        let RunInputs {
            train,
            valid,
            embeddings,
            lm_tables,
            nli,
        } = inputs;
        let vocab = build_vocab(&train, config.vocab_min_count);
        let lm = match lm_tables {
            Some((conditional, unconditional)) => LmBackend::External {
                conditional,
                unconditional,
            },
            None => LmBackend::Ngram(NgramLm::train(&train, &vocab)),
        };
        let consistency = match nli {
            Some(t) => ConsistencySource::Table(t),
            None => ConsistencySource::Pinned,
        };
        let backends = Backends::build(&train, embeddings, lm, consistency, config.neutral_next)?;
        let phi = compute_phi(&train, &backends, None)?;
        let eval = EvalSet::new(
            valid,
            vocab.clone(),
            backends.embeddings.clone(),
            backends.unigram.clone(),
        )?;
        let encoded = encode_corpus(&train, &vocab);
        let index = encoded
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        Ok(RunContext {
            config,
            train,
            vocab,
            backends,
            phi,
            eval,
            encoded,
            index,
        })
    }

    pub fn load(config: RunConfig) -> Result<Self> {
        let inputs = RunInputs::load(&config)?;
        Self::new(config, inputs)
    }

    /// Encoded training samples for `ids`, in the iteration order of `ids`.
    pub fn encoded<'a>(&'a self, ids: impl IntoIterator<Item = &'a String>) -> Vec<&'a EncodedSample> {
        ids.into_iter().map(|id| &self.encoded[self.index[id]]).collect()
    }

    /// Maintained samples in corpus order.
    fn maintained(&self, state: &FilterState) -> Vec<EncodedSample> {
        self.encoded
            .iter()
            .filter(|s| state.is_kept(&s.id))
            .cloned()
            .collect()
    }

    pub fn fresh_model(&self) -> ModelParams {
        ModelParams::init(&self.vocab, self.config.ncm.dim, self.config.seed)
    }

    /// Trains from a fresh initialization, early-stopping on validation
    /// perplexity. `None` trains on the whole training split.
    pub fn train_model(&self, keep: Option<&FilterState>) -> Result<ModelParams> {
        let data = match keep {
            Some(state) => self.maintained(state),
            None => self.encoded.clone(),
        };
        let outcome = train_full(
            &self.fresh_model(),
            &data,
            &self.config.train_config(),
            Some(&self.eval.encoded),
        )?;
        Ok(outcome.params)
    }

    pub fn filter(&self, w: &WeightVector) -> Result<(Vec<ScoredSample>, FilterState)> {
        filter_by_weights(self.phi.vectors(), w, self.config.ratio)
    }

    pub fn objective(&self, theta: &ModelParams) -> Result<f64> {
        evaluate_objective(self.config.objective, theta, &self.eval)
    }

    /// Filter at `w`, train from scratch on the maintained samples, evaluate.
    pub fn blackbox_full(&self, w: &WeightVector) -> Result<Evaluation> {
        let (scores, state) = self.filter(w)?;
        let theta = self.train_model(Some(&state))?;
        Ok(Evaluation {
            j: self.objective(&theta)?,
            scores,
            state,
        })
    }

    /// Random base partition and a model trained on its maintained samples.
    pub fn base_snapshot(&self) -> Result<BaseSnapshot> {
        let partition = random_partition(&self.train, self.config.ratio, self.config.seed)?;
        let theta = self.train_model(Some(&partition))?;
        Ok(BaseSnapshot {
            j: self.objective(&theta)?,
            hash: params_hash(&theta),
            partition,
            theta,
        })
    }

    /// The diff sets of `state` against the base partition.
    pub fn diffs(&self, state: &FilterState, base: &BaseSnapshot) -> Result<DiffSets> {
        diff_sets(state, &base.partition)
    }

    /// Filter at `w`, update a copy of the base model over the diff sets, evaluate.
    pub fn blackbox_accelerated(&self, w: &WeightVector, base: &BaseSnapshot) -> Result<Evaluation> {
        let (scores, state) = self.filter(w)?;
        let theta = self.updated_model(&state, base)?;
        Ok(Evaluation {
            j: self.objective(&theta)?,
            scores,
            state,
        })
    }

    /// A copy of the base model after one MLE pass over the newly maintained
    /// and one NEG pass over the newly removed samples of `state`.
    pub fn updated_model(&self, state: &FilterState, base: &BaseSnapshot) -> Result<ModelParams> {
        let diffs = self.diffs(state, base)?;
        let mut theta = base.theta.clone();
        diff_mle_neg(
            &mut theta,
            self.encoded(&diffs.newly_maintained),
            self.encoded(&diffs.newly_removed),
            &self.config.train_config(),
        )?;
        Ok(theta)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut out = create(path)?;
    f(&mut out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_with(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)
    })
}

/// The training split restricted to the maintained ids, in corpus order.
pub fn filtered_corpus(train: &Corpus, state: &FilterState) -> Corpus {
    let keep = state.maintained.iter().map(String::as_str).collect();
    train.subset(&keep)
}

/// Decisions a run depends on that are not visible in the configuration.
pub fn pinned_decisions() -> serde_json::Value {
    serde_json::json!({
        "log_base": "natural",
        "std": "population",
        "percentile": "nearest-rank over the training split",
        "lm_percentile_pct": 5,
        "ngram_lm": "interpolated trigram, lambdas 0.6/0.3/0.1, add-one unigram floor",
        "sif_a": crate::embed::SIF_A,
        "bleu": "corpus BLEU-4, add-one smoothing for n >= 2",
        "ent_log": "natural",
        "decode": "greedy, max_len 20, lowest index on ties",
        "neg_stabilization": "gradient norm clipping",
        "gp_targets": "standardized before each fit",
        "candidates": "uniform plus local Gaussian around the three best points",
        "final_model": "retrained from scratch on the best-w filtered corpus",
    })
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub trace_csv: PathBuf,
    pub filter_reports: Vec<PathBuf>,
    pub best_weights: PathBuf,
    pub filtered_corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub metadata: PathBuf,
    pub trace: OptimizeTrace,
    pub best_w: WeightVector,
    pub best_j: f64,
    pub final_state: FilterState,
    pub final_model: ModelParams,
    pub final_ppl: f64,
    /// `(t, message)` for every evaluation that failed and was penalized.
    pub failures: Vec<(usize, String)>,
    pub base_hash: Option<(String, String)>,
}

/// Searches for the weights minimizing the objective, then filters at the
/// best weights and retrains from scratch on the result.
pub fn run_optimize(ctx: &RunContext) -> Result<RunArtifacts> {
    let cfg = &ctx.config;
    let out = cfg.out_dir.clone();
    let filters_dir = out.join("filters");
    fs::create_dir_all(&filters_dir).map_err(|e| Error::io(&filters_dir, e))?;

    let base = match cfg.mode {
        Mode::DiffMleNeg => Some(ctx.base_snapshot()?),
        Mode::FullRetrain => None,
    };
    let mut failures = Vec::new();
    let mut filter_reports = Vec::new();
    let mut t = 0usize;
    let blackbox = |x: &[f64]| -> Result<f64> {
        t += 1;
        let outcome = WeightVector::from_slice(x).and_then(|w| match &base {
            Some(b) => ctx.blackbox_accelerated(&w, b),
            None => ctx.blackbox_full(&w),
        });
        match outcome {
            Ok(ev) => {
                let path = filters_dir.join(format!("iter_{t:03}.tsv"));
                write_with(&path, |o| write_filter_report(&ev.scores, &ev.state, o))?;
                filter_reports.push(path);
                Ok(ev.j)
            }
            Err(e) => {
                failures.push((t, e.to_string()));
                Err(e)
            }
        }
    };
    let trace_csv = out.join("trace.csv");
    let policy = FailurePolicy::Penalize(cfg.failure_penalty);
    let trace = match optimize(blackbox, &cfg.bayesopt, cfg.iterations, cfg.seed, policy) {
        Ok(trace) => trace,
        Err(Aborted { trace, source, .. }) => {
            write_with(&trace_csv, |o| trace.write_csv(o))?;
            return Err(source);
        }
    };
    write_with(&trace_csv, |o| trace.write_csv(o))?;

    let best = trace
        .best()
        .filter(|r| !r.failed)
        .ok_or_else(|| Error::Numerical("every evaluation failed".into()))?;
    let best_w = WeightVector::from_slice(&best.x)?;
    let best_j = best.y;
    let best_weights = out.join("best_weights.json");
    write_json(
        &best_weights,
        &serde_json::json!({ "t": best.t, "weights": best_w.0, "J": best_j }),
    )?;

    let (_, final_state) = ctx.filter(&best_w)?;
    let filtered_path = out.join("filtered_train.jsonl");
    write_corpus(&filtered_corpus(&ctx.train, &final_state), &filtered_path)?;
    let final_model = ctx.train_model(Some(&final_state))?;
    let checkpoint = out.join("model.ckpt");
    save_checkpoint(&final_model, &checkpoint)?;
    let final_ppl = ctx.eval.perplexity(&final_model)?;
    let report = ctx.eval.report(&final_model)?;
    let final_j = match cfg.objective {
        ObjectiveKind::PlusPpl => final_ppl,
        ObjectiveKind::NegMetricSum => -report.sum(),
    };
    let metrics = out.join("final_metrics.tsv");
    write_with(&metrics, |o| {
        report.write_tsv(o, Some(final_ppl), Some((cfg.objective, final_j)))
    })?;

    let base_hash = base
        .as_ref()
        .map(|b| (b.hash.clone(), params_hash(&b.theta)));
    let metadata = out.join("metadata.json");
    let rel = |p: &Path| p.strip_prefix(&out).unwrap_or(p).display().to_string();
    write_json(
        &metadata,
        &serde_json::json!({
            "config": cfg,
            "config_hash": cfg.hash(),
            "seeds": { "run": cfg.seed, "partition": cfg.seed, "search": cfg.seed, "model": cfg.seed },
            "vocab_hash": ctx.vocab.hash(),
            "vocab_size": ctx.vocab.len(),
            "degenerate_attributes": ctx.phi.degenerate().iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            "base": base.as_ref().map(|b| serde_json::json!({
                "hash": b.hash,
                "hash_after_search": base_hash.as_ref().map(|h| h.1.clone()),
                "J": b.j,
                "removed": b.partition.removed.len(),
            })),
            "failed_iterations": failures.iter().map(|(t, m)| serde_json::json!({"t": t, "error": m})).collect::<Vec<_>>(),
            "best": { "t": best.t, "J": best_j, "weights": best_w.0 },
            "final": { "ppl": final_ppl, "J": final_j, "maintained": final_state.maintained.len(), "removed": final_state.removed.len() },
            "pinned": pinned_decisions(),
            "artifacts": {
                "trace": rel(&trace_csv),
                "filters": filter_reports.iter().map(|p| rel(p)).collect::<Vec<_>>(),
                "best_weights": rel(&best_weights),
                "filtered_corpus": rel(&filtered_path),
                "checkpoint": rel(&checkpoint),
                "metrics": rel(&metrics),
            },
        }),
    )?;

    Ok(RunArtifacts {
        out_dir: out.clone(),
        trace_csv,
        filter_reports,
        best_weights,
        filtered_corpus: filtered_path,
        checkpoint,
        metrics,
        metadata,
        trace,
        best_w,
        best_j,
        final_state,
        final_model,
        final_ppl,
        failures,
        base_hash,
    })
}

/// One row of the ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub setting: String,
    pub report: MetricReport,
    pub ppl: f64,
}

/// Filters with one-hot weights on `attribute`, retrains and reports.
pub fn run_ablate(ctx: &RunContext, attribute: Attribute) -> Result<AblationRow> {
    ablation_row(ctx, attribute.short_name(), Some(&WeightVector::one_hot(attribute.index())?))
}

fn ablation_row(ctx: &RunContext, setting: &str, w: Option<&WeightVector>) -> Result<AblationRow> {
    let state = w.map(|w| ctx.filter(w).map(|(_, s)| s)).transpose()?;
    let theta = ctx.train_model(state.as_ref())?;
    Ok(AblationRow {
        setting: setting.to_string(),
        report: ctx.eval.report(&theta)?,
        ppl: ctx.eval.perplexity(&theta)?,
    })
}

/// No filtering, each single attribute, and the full measure (configured
/// weights, or equal weights when none are configured).
pub fn ablation_table(ctx: &RunContext) -> Result<Vec<AblationRow>> {
    let mut rows = vec![ablation_row(ctx, "none", None)?];
    for a in Attribute::ALL {
        rows.push(run_ablate(ctx, a)?);
    }
    let full = match &ctx.config.weights {
        Some(w) => WeightVector::from_slice(w)?,
        None => WeightVector([1.0; N_ATTRIBUTES]),
    };
    rows.push(ablation_row(ctx, "S", Some(&full))?);
    Ok(rows)
}

pub fn write_ablation_table<W: Write>(rows: &[AblationRow], mut out: W) -> std::io::Result<()> {
    write!(out, "setting")?;
    for name in MetricReport::NAMES {
        write!(out, "\t{name}")?;
    }
    writeln!(out, "\tppl")?;
    for r in rows {
        write!(out, "{}", r.setting)?;
        for v in r.report.values() {
            write!(out, "\t{v}")?;
        }
        writeln!(out, "\t{}", r.ppl)?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KendallRow {
    pub a: Attribute,
    pub b: Attribute,
    /// `None` when either column is constant.
    pub tau: Option<f64>,
}

/// Kendall tau-b for every unordered pair of attributes over raw scores.
pub fn run_kendall(phi: &PhiTable) -> Result<Vec<KendallRow>> {
    let columns: Vec<Vec<f64>> = Attribute::ALL.iter().map(|a| phi.raw_column(*a)).collect();
    let mut rows = Vec::with_capacity(21);
    for i in 0..N_ATTRIBUTES {
        for j in (i + 1)..N_ATTRIBUTES {
            let tau = match kendall_tau(&columns[i], &columns[j]) {
                Ok(t) => Some(t),
                Err(Error::UndefinedCorrelation) => None,
                Err(e) => return Err(e),
            };
            rows.push(KendallRow {
                a: Attribute::ALL[i],
                b: Attribute::ALL[j],
                tau,
            });
        }
    }
    Ok(rows)
}

pub fn write_kendall<W: Write>(rows: &[KendallRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "attr_a\tattr_b\ttau")?;
    for r in rows {
        match r.tau {
            Some(t) => writeln!(out, "{}\t{}\t{t}", r.a, r.b)?,
            None => writeln!(out, "{}\t{}\tundefined", r.a, r.b)?,
        }
    }
    out.flush()
}
