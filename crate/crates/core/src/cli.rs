//! Command-line front end: `generate`, `train`, `predict`, `analyze`, `evaluate`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error. Log verbosity
//! comes from the `MMTOPIC_LOG` environment variable (`env_logger` syntax).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{build_summary, chi_square_test, export_viz, rank_topic_pairs, topic_popularity};
use crate::checkpoint::Checkpoint;
use crate::corpus::{load_dataset, load_dataset_with_vocab, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{bow_features, concat_features, cross_validate, CvResult};
use crate::predictor::{predict_all, read_features, write_features, PredictConfig};
use crate::synthgen::{generate_dataset, GenSpec};
use crate::trainer::{TrainConfig, Trainer};

pub const LOG_ENV: &str = "MMTOPIC_LOG";

#[derive(Debug, Parser)]
#[command(name = "mmtopic", version, about = "Mixed-membership topic model over text, links and labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic dataset with known ground truth.
    Generate(GenerateArgs),
    /// Fit the model by collapsed Gibbs sampling.
    Train(TrainArgs),
    /// Infer per-user topic proportions and per-edge topic pairs.
    Predict(PredictArgs),
    /// Summarize topics and friendship topic pairs; write JSON and DOT.
    Analyze(AnalyzeArgs),
    /// Cross-validated label prediction with and without topic features.
    Evaluate(EvaluateArgs),
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    match s.split_once('-') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 200)]
    pub v: usize,
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    /// `n` or `min-max`.
    #[arg(long, default_value = "10-20", value_parser = parse_range)]
    pub docs_per_user: (usize, usize),
    /// `n` or `min-max`.
    #[arg(long, default_value = "3-8", value_parser = parse_range)]
    pub words_per_doc: (usize, usize),
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.8)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 8.0)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma2: f64,
    /// Comma-separated regression coefficients, one per topic.
    #[arg(long, value_delimiter = ',')]
    pub nu: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub label_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_users: PathBuf,
    #[arg(long)]
    pub out_edges: PathBuf,
    #[arg(long)]
    pub out_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub users: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep alpha, eta, delta at their initial values.
    #[arg(long)]
    pub fix_hyper: bool,
    #[arg(long, default_value_t = 1)]
    pub min_token_freq: usize,
    #[arg(long, default_value_t = 0.01)]
    pub convergence: f64,
    /// Run all iterations regardless of the convergence rule.
    #[arg(long)]
    pub no_early_stop: bool,
    #[arg(long, default_value_t = 0.5)]
    pub burn_in: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda1: f64,
    /// Overrides the zero-link prior derived from graph sparsity.
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log path; defaults to `<out>.metrics.jsonl`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub users: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub burn_in: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top_words: usize,
    #[arg(long, default_value_t = 10)]
    pub top_pairs: usize,
    #[arg(long)]
    pub out_summary: PathBuf,
    #[arg(long)]
    pub out_dot: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub users: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// L2 regularization strength of the classifier.
    #[arg(long, default_value_t = 1.0)]
    pub reg: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Analyze(a) => analyze(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = GenSpec {
        k: a.k,
        v: a.v,
        p: a.p,
        docs_per_user: a.docs_per_user,
        words_per_doc: a.words_per_doc,
        alpha: a.alpha,
        eta: a.eta,
        delta: a.delta,
        lambda1: a.lambda1,
        lambda0: a.lambda0,
        nu: a.nu,
        sigma2: a.sigma2,
        phi_override: None,
        label_fraction: a.label_fraction,
    };
    let (data, truth) = generate_dataset(&spec, a.seed)?;
    data.write(&a.out_users, &a.out_edges)?;
    if let Some(path) = a.out_truth {
        write_json(&path, &truth)?;
    }
    log::info!("generated {} users, {} edges", data.n_users(), data.edges().len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.users, &a.edges, a.min_token_freq)?;
    let cfg = TrainConfig {
        k: a.k,
        max_iters: a.iters,
        convergence: a.convergence,
        check_convergence: !a.no_early_stop,
        seed: a.seed,
        burn_in: a.burn_in,
        fix_hyper: a.fix_hyper,
        ridge_eps: a.ridge,
        lambda1: a.lambda1,
        lambda0: a.lambda0,
        ..TrainConfig::default()
    };
    let metrics_path = a.metrics.unwrap_or_else(|| with_suffix(&a.out, ".metrics.jsonl"));
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    let mut trainer = Trainer::<f64>::init(&data, cfg)?;
    serde_json::to_writer(&mut metrics, &trainer.trace()[0])?;
    metrics.write_all(b"\n")?;
    while trainer.iteration() < trainer.config().max_iters {
        let rec = trainer.iterate()?;
        log::info!("iter {} ll {:.4}", rec.iter, rec.log_likelihood);
        serde_json::to_writer(&mut metrics, rec)?;
        metrics.write_all(b"\n")?;
        if trainer.converged() {
            log::info!("converged after {} iterations", trainer.iteration());
            break;
        }
    }
    metrics.flush()?;
    trainer.checkpoint().save(&a.out)?;
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::<f64>::load(&a.checkpoint)?;
    let (data, dropped) = load_dataset_with_vocab(&a.users, &a.edges, &ckpt.vocab)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} tokens outside the trained vocabulary");
    }
    let cfg = PredictConfig { iters: a.iters, burn_in: a.burn_in, seed: a.seed, threads: a.threads };
    let pred = predict_all(&data, &ckpt.params, &ckpt.hyper, &cfg)?;
    for (i, msg) in &pred.failures {
        log::warn!("user {}: {msg}; using uniform proportions", data.user(*i).id);
    }
    write_features(&data, &pred.features, &a.out)
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let ckpt = Checkpoint::<f64>::load(&a.checkpoint)?;
    let table = read_features(&a.features)?;
    if let Some(bad) = table.theta.iter().find(|t| t.len() != ckpt.k) {
        return Err(Error::DimensionMismatch { expected: ckpt.k, found: bad.len() });
    }
    let popularity = topic_popularity(&table.theta)?;
    let rankings = rank_topic_pairs(&table.link_pairs()?, &popularity, a.top_pairs);
    let summary = build_summary(&ckpt.params, &ckpt.vocab, &popularity, &rankings, a.top_words)?;
    export_viz(&summary, &a.out_summary, &a.out_dot)
}

#[derive(Debug, Serialize)]
struct CvReport {
    fold_accuracies: Vec<f64>,
    mean_accuracy: f64,
    correct: u64,
}

impl From<&CvResult> for CvReport {
    fn from(r: &CvResult) -> Self {
        CvReport { fold_accuracies: r.fold_accuracies.clone(), mean_accuracy: r.mean_accuracy, correct: r.n_correct() }
    }
}

#[derive(Debug, Serialize)]
struct EvalReport {
    folds: usize,
    tested: usize,
    bow: CvReport,
    bow_theta: CvReport,
    chi_square: f64,
    p_value: f64,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::<f64>::load(&a.checkpoint)?;
    let (data, _) = load_dataset_with_vocab(&a.users, &a.edges, &ckpt.vocab)?;
    let theta = read_features(&a.features)?.theta_for(&data)?;
    let report = evaluate_features(&data, &theta, ckpt.k, a.folds, a.seed, a.reg, a.threads)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = a.out {
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn evaluate_features(
    data: &Dataset,
    theta: &[Vec<f64>],
    k: usize,
    folds: usize,
    seed: u64,
    reg: f64,
    threads: usize,
) -> Result<EvalReport> {
    let v = data.vocab_size();
    let bow: Vec<Vec<f64>> = (0..data.n_users()).map(|i| bow_features(data, i)).collect();
    let both = bow
        .iter()
        .zip(theta)
        .map(|(b, t)| concat_features(b, t, v, k))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (plain, joint) = pool.install(|| -> Result<_> {
        Ok((cross_validate(data, &bow, folds, seed, reg)?, cross_validate(data, &both, folds, seed, reg)?))
    })?;
    let n = plain.predictions.len() as u64;
    let (chi_square, p_value) = chi_square_test(joint.n_correct(), n, plain.n_correct(), n)?;
    Ok(EvalReport {
        folds,
        tested: n as usize,
        bow: (&plain).into(),
        bow_theta: (&joint).into(),
        chi_square,
        p_value,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse() {
        assert_eq!(parse_range("3-8"), Ok((3, 8)));
        assert_eq!(parse_range("5"), Ok((5, 5)));
        assert!(parse_range("a-b").is_err());
    }

    #[test]
    fn help_and_usage_codes() {
        assert_eq!(dispatch(["mmtopic", "--help"]), 0);
        assert_eq!(dispatch(["mmtopic", "train", "--help"]), 0);
        assert_eq!(dispatch(["mmtopic", "train", "--bogus"]), 1);
        assert_eq!(dispatch(["mmtopic", "frobnicate"]), 1);
        assert_eq!(dispatch(["mmtopic"]), 1);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let code = dispatch([
            "mmtopic", "train", "--users", "/nonexistent/u", "--edges", "/nonexistent/e", "--out", "/nonexistent/c",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn metrics_path_default() {
        assert_eq!(with_suffix(Path::new("/x/model.json"), ".metrics.jsonl"), PathBuf::from("/x/model.json.metrics.jsonl"));
    }
}
