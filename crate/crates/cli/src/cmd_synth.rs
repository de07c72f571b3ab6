//! Synthetic-source commands: generate corpora and emit predictions.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};

use ngram_rules::analysis::sample_contexts;
use ngram_rules::corpus::{CorpusFormat, TokenId};
use ngram_rules::store::CountStore;
use ngram_rules::teacher::{
    emit_predictions, read_teacher_config, stream_eval_contexts, write_teacher_config,
    EmitOptions, EvalContext, StepWeights, Teacher, TeacherConfig,
};

use crate::chunks;

#[derive(Subcommand, Debug)]
pub enum SynthCmd {
    /// Sample documents from a seeded source.
    Generate(GenerateArgs),
    /// Emit source predictions for sampled or streamed contexts.
    Predict(PredictArgs),
}

/// Source definition: a config file or inline random-table flags.
#[derive(Args, Debug, Clone)]
pub struct TeacherArgs {
    /// Teacher config file (explicit tables or random rows).
    #[arg(long, value_name = "FILE")]
    teacher: Option<PathBuf>,
    /// Vocabulary size (BOS included) for an inline random source.
    #[arg(long)]
    vocab: Option<u32>,
    /// BOS token id.
    #[arg(long, default_value_t = 0)]
    bos: u32,
    /// Source order k (conditions on k-1 recent tokens).
    #[arg(long)]
    order: Option<usize>,
    /// Row seed for the inline random source.
    #[arg(long, default_value_t = 0)]
    teacher_seed: u64,
    /// Dirichlet concentration of the random rows.
    #[arg(long, default_value_t = 0.3)]
    concentration: f64,
    /// Comma-separated mixture weights over orders 1..k.
    #[arg(long)]
    weights: Option<String>,
}

impl TeacherArgs {
    pub fn resolve(&self) -> Result<TeacherConfig> {
        let mut cfg = match (&self.teacher, self.vocab, self.order) {
            (Some(path), None, None) => read_teacher_config(path)?,
            (None, Some(vocab), Some(order)) => TeacherConfig::random(
                vocab,
                TokenId(self.bos),
                order,
                self.teacher_seed,
                self.concentration,
            )?,
            _ => bail!("give either --teacher FILE or both --vocab and --order"),
        };
        if let Some(weights) = &self.weights {
            let parsed: Vec<f64> = weights
                .split(',')
                .map(|w| w.trim().parse::<f64>().context("bad weight"))
                .collect::<Result<_>>()?;
            cfg = cfg.with_weights(parsed)?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    teacher: TeacherArgs,
    /// Number of documents.
    #[arg(long)]
    docs: usize,
    /// Tokens per document.
    #[arg(long)]
    doc_len: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output corpus file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Corpus format to write: text or binary.
    #[arg(long, default_value = "text")]
    format: String,
    /// Also write the resolved teacher config here.
    #[arg(long, value_name = "FILE")]
    write_teacher: Option<PathBuf>,
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = args.teacher.resolve()?;
    let teacher = Teacher::new(cfg.clone())?;
    let corpus = teacher.generate_corpus(args.docs, args.doc_len, args.seed)?;
    let format: CorpusFormat = args.format.parse()?;
    corpus.save(&args.out, format)?;
    if let Some(path) = &args.write_teacher {
        write_teacher_config(&cfg, path)?;
    }
    println!(
        "corpus={} docs={} tokens={} vocab={} bos={}",
        args.out.display(),
        corpus.documents().len(),
        corpus.token_count(),
        corpus.vocab_size(),
        corpus.bos().0
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    teacher: TeacherArgs,
    /// Sample evaluation contexts from this count store.
    #[arg(long, value_name = "FILE", conflicts_with = "chunks")]
    store: Option<PathBuf>,
    /// Sampled context length.
    #[arg(long, default_value_t = 3)]
    sample_n: usize,
    /// Log-spaced count buckets for sampling.
    #[arg(long, default_value_t = 12)]
    buckets: usize,
    /// Contexts drawn per bucket.
    #[arg(long, default_value_t = 50)]
    per_bucket: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    /// Keep only sampled contexts with at least this count.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Evaluate every position of this chunks file instead of sampling.
    #[arg(long, value_name = "FILE")]
    chunks: Option<PathBuf>,
    /// Longest context stored per record in stream mode.
    #[arg(long, default_value_t = 16)]
    ctx_cap: usize,
    /// Keep every k-th stream position.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Independent runs to emit.
    #[arg(long, default_value_t = 1)]
    runs: u32,
    /// Comma-separated checkpoint steps.
    #[arg(long, default_value = "0")]
    steps: String,
    /// Per-step weight overrides: "step:w1,w2,..;step:w1,w2,..".
    #[arg(long)]
    weights_schedule: Option<String>,
    /// Run-seeded perturbation magnitude in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Scale noise by 1/sqrt(context count).
    #[arg(long, default_value_t = false)]
    noise_count_scaled: bool,
    /// Emit limited-context predictions under this cap.
    #[arg(long)]
    limit: Option<u32>,
    /// Seed for the run perturbations.
    #[arg(long, default_value_t = 0)]
    run_seed: u64,
    /// Source tag recorded in the prediction header.
    #[arg(long, default_value = "teacher")]
    tag: String,
    /// Output prediction file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn parse_steps(args: &PredictArgs) -> Result<Vec<StepWeights>> {
    if let Some(schedule) = &args.weights_schedule {
        let mut steps = Vec::new();
        for part in schedule.split(';') {
            let (step, weights) = part
                .split_once(':')
                .with_context(|| format!("bad schedule entry {part:?}"))?;
            let weights: Vec<f64> = weights
                .split(',')
                .map(|w| w.trim().parse::<f64>().context("bad schedule weight"))
                .collect::<Result<_>>()?;
            steps.push(StepWeights { step: step.trim().parse()?, weights: Some(weights) });
        }
        Ok(steps)
    } else {
        args.steps
            .split(',')
            .map(|s| Ok(StepWeights { step: s.trim().parse()?, weights: None }))
            .collect()
    }
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let teacher = Teacher::new(args.teacher.resolve()?)?;
    let contexts: Vec<EvalContext> = match (&args.store, &args.chunks) {
        (Some(store_path), None) => {
            let store = CountStore::load(store_path)?;
            let sample = sample_contexts(
                &store,
                args.sample_n,
                args.buckets,
                args.per_bucket,
                args.sample_seed,
            )?;
            sample
                .contexts
                .into_iter()
                .filter(|sc| sc.count >= args.min_count)
                .enumerate()
                .map(|(i, sc)| EvalContext {
                    seq: i as u64,
                    off: 0,
                    target: teacher.argmax_target(&sc.context),
                    context: sc.context,
                    count: Some(sc.count),
                })
                .collect()
        }
        (None, Some(chunks_path)) => {
            let stream = chunks::read_chunks(chunks_path)?;
            stream_eval_contexts(&stream, args.ctx_cap)
                .into_iter()
                .step_by(args.stride.max(1))
                .collect()
        }
        _ => bail!("exactly one of --store or --chunks is required"),
    };
    if contexts.is_empty() {
        bail!("no evaluation contexts");
    }
    let opts = EmitOptions {
        runs: args.runs,
        steps: parse_steps(&args)?,
        noise: args.noise,
        count_scaled_noise: args.noise_count_scaled,
        limit: args.limit,
        run_seed: args.run_seed,
        tag: args.tag.clone(),
    };
    let set = emit_predictions(&teacher, &contexts, &opts)?;
    set.write(&args.out)?;
    println!(
        "predictions={} records={} contexts={} runs={} steps={}",
        args.out.display(),
        set.len(),
        contexts.len(),
        args.runs,
        opts.steps.len()
    );
    Ok(())
}

pub fn run(cmd: SynthCmd) -> Result<()> {
    match cmd {
        SynthCmd::Generate(args) => generate(args),
        SynthCmd::Predict(args) => predict(args),
    }
}
