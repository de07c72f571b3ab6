//! A synthetic generative source with exact conditionals.
//!
//! The teacher is an order-k token source: per order j in 1..=k it has a
//! conditional row over the vocabulary given the last j-1 tokens, either
//! drawn deterministically from a seeded Dirichlet or given explicitly.
//! Its prediction for a context is the weight-mixture of the rows of the
//! available orders; truncating the context (or hitting a document start)
//! re-evaluates with fewer orders, so limited-context predictions are
//! genuine re-evaluations rather than post-hoc truncations. Generation
//! samples from exactly the same conditionals, which makes the teacher a
//! stand-in model whose predictions a count store can recover.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use crate::corpus::{ChunkedStream, Corpus, TokenId};
use crate::dist::SparseDistribution;
use crate::error::{Error, Result};
use crate::predict::{record_loss, PredictionRecord, PredictionSet};

/// Row weight sum tolerance for explicit tables.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Explicit next-token rows keyed by context.
pub type ConditionalTable = BTreeMap<Vec<TokenId>, Vec<(TokenId, f64)>>;

type RowCache = HashMap<(usize, Vec<TokenId>), Arc<Vec<f64>>>;

/// Conditional tables, one per order.
#[derive(Debug, Clone)]
pub enum RowSource {
    /// Rows drawn per (order, context) from Dirichlet(concentration),
    /// deterministically seeded.
    Random { seed: u64, concentration: f64 },
    /// Explicit rows per order; `tables[j-1]` maps a (j-1)-token context
    /// to its next-token distribution. Missing rows fall back to uniform.
    Explicit { tables: Vec<ConditionalTable> },
}

#[derive(Debug, Clone)]
pub struct TeacherConfig {
    pub vocab_size: u32,
    pub bos: TokenId,
    /// Source order k: conditions on up to k-1 recent tokens.
    pub order: usize,
    /// Mixture weights over orders 1..=k; must sum to 1.
    pub weights: Vec<f64>,
    pub source: RowSource,
}

impl TeacherConfig {
    pub fn random(vocab_size: u32, bos: TokenId, order: usize, seed: u64, concentration: f64) -> Result<Self> {
        let mut weights = vec![0.0; order];
        *weights.last_mut().ok_or_else(|| Error::InvalidTeacher("order must be >= 1".into()))? = 1.0;
        let cfg = Self {
            vocab_size,
            bos,
            order,
            weights,
            source: RowSource::Random { seed, concentration },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::InvalidTeacher("order must be >= 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidTeacher("vocab must have a non-BOS token".into()));
        }
        if self.bos.0 >= self.vocab_size {
            return Err(Error::InvalidTeacher("bos outside vocab".into()));
        }
        if self.weights.len() != self.order {
            return Err(Error::InvalidTeacher(format!(
                "{} weights for order {}",
                self.weights.len(),
                self.order
            )));
        }
        if self.weights.iter().any(|&w| w.is_nan() || w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidTeacher("negative weight".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidTeacher(format!("weights sum to {sum}, not 1")));
        }
        if let RowSource::Random { concentration, .. } = self.source {
            if concentration.is_nan() || concentration <= 0.0 || !concentration.is_finite() {
                return Err(Error::InvalidTeacher(format!(
                    "concentration {concentration} must be positive"
                )));
            }
        }
        if let RowSource::Explicit { tables } = &self.source {
            if tables.len() != self.order {
                return Err(Error::InvalidTeacher(format!(
                    "{} tables for order {}",
                    tables.len(),
                    self.order
                )));
            }
            for (j, table) in tables.iter().enumerate() {
                for (ctx, row) in table {
                    if ctx.len() != j {
                        return Err(Error::InvalidTeacher(format!(
                            "order {} row keyed by {}-token context",
                            j + 1,
                            ctx.len()
                        )));
                    }
                    let mut sum = 0.0;
                    for &(t, p) in row {
                        if t.0 >= self.vocab_size || t == self.bos {
                            return Err(Error::InvalidTeacher(format!(
                                "row token {t} invalid (vocab {}, bos {})",
                                self.vocab_size, self.bos
                            )));
                        }
                        if p.is_nan() || p < 0.0 {
                            return Err(Error::InvalidTeacher("negative row probability".into()));
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(Error::InvalidTeacher(format!(
                            "row sums to {sum}, not 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A teacher with a row cache. Shareable across threads.
#[derive(Debug)]
pub struct Teacher {
    cfg: TeacherConfig,
    cache: Mutex<RowCache>,
}

impl Teacher {
    pub fn new(cfg: TeacherConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, cache: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.cfg
    }

    /// The conditional row of order `order` (conditioning on the
    /// `order - 1` most recent tokens). Dense over the vocabulary with
    /// zero mass on BOS.
    fn row(&self, order: usize, ctx: &[TokenId]) -> Arc<Vec<f64>> {
        debug_assert_eq!(ctx.len(), order - 1);
        let key = (order, ctx.to_vec());
        if let Some(row) = self.cache.lock().expect("cache lock").get(&key) {
            return Arc::clone(row);
        }
        let row = Arc::new(self.compute_row(order, ctx));
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&row));
        row
    }

    fn compute_row(&self, order: usize, ctx: &[TokenId]) -> Vec<f64> {
        let v = self.cfg.vocab_size as usize;
        let bos = self.cfg.bos;
        match &self.cfg.source {
            RowSource::Explicit { tables } => {
                let mut row = vec![0.0; v];
                match tables[order - 1].get(ctx) {
                    Some(entries) => {
                        for &(t, p) in entries {
                            row[t.0 as usize] = p;
                        }
                    }
                    None => {
                        let fill = 1.0 / (v - 1) as f64;
                        for (t, slot) in row.iter_mut().enumerate() {
                            if t as u32 != bos.0 {
                                *slot = fill;
                            }
                        }
                    }
                }
                row
            }
            RowSource::Random { seed, concentration } => {
                let mut h = fnv(*seed, order as u64);
                for &t in ctx {
                    h = fnv(h, t.0 as u64 + 1);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(h);
                let gamma = Gamma::new(*concentration, 1.0).expect("validated concentration");
                let mut row = vec![0.0; v];
                let mut sum = 0.0;
                for (t, slot) in row.iter_mut().enumerate() {
                    if t as u32 == bos.0 {
                        continue;
                    }
                    let g: f64 = gamma.sample(&mut rng);
                    *slot = g;
                    sum += g;
                }
                if sum > 0.0 && sum.is_finite() {
                    for slot in &mut row {
                        *slot /= sum;
                    }
                } else {
                    let fill = 1.0 / (v - 1) as f64;
                    for (t, slot) in row.iter_mut().enumerate() {
                        *slot = if t as u32 == bos.0 { 0.0 } else { fill };
                    }
                }
                row
            }
        }
    }

    /// Trim a context to what the source actually conditions on: tokens
    /// after the last BOS (a document restart), capped by the context
    /// limit and by order - 1.
    fn effective_context<'a>(&self, context: &'a [TokenId], limit: Option<u32>) -> &'a [TokenId] {
        let after_bos = match context.iter().rposition(|&t| t == self.cfg.bos) {
            Some(i) => &context[i + 1..],
            None => context,
        };
        let capped = match limit {
            Some(l) => &after_bos[after_bos.len() - (l as usize).min(after_bos.len())..],
            None => after_bos,
        };
        let keep = capped.len().min(self.cfg.order - 1);
        &capped[capped.len() - keep..]
    }

    /// Exact conditional given the effective context, as a mixture over
    /// the available orders. Weights of unavailable (deeper) orders are
    /// renormalized away; if no available order carries weight, the
    /// deepest available order is used alone.
    pub fn predict(&self, context: &[TokenId], limit: Option<u32>) -> SparseDistribution {
        let eff = self.effective_context(context, limit);
        let top_order = eff.len() + 1;
        let mut weights: Vec<f64> = self.cfg.weights[..top_order].to_vec();
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 {
            for w in &mut weights {
                *w /= sum;
            }
        } else {
            weights.iter_mut().for_each(|w| *w = 0.0);
            weights[top_order - 1] = 1.0;
        }
        let v = self.cfg.vocab_size as usize;
        let mut mix = vec![0.0; v];
        for (j, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let order = j + 1;
            let row = self.row(order, &eff[eff.len() - (order - 1)..]);
            for (slot, &p) in mix.iter_mut().zip(row.iter()) {
                *slot += w * p;
            }
        }
        let entries: Vec<(TokenId, f64)> = mix
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > 0.0)
            .map(|(t, &p)| (TokenId(t as u32), p))
            .collect();
        SparseDistribution::from_entries(entries, 0.0).expect("mixture of rows is normalized")
    }

    /// Deterministic stand-in target for a sampled context: the smallest
    /// token among the teacher's top predictions.
    pub fn argmax_target(&self, context: &[TokenId]) -> TokenId {
        self.predict(context, None).top1().expect("teacher rows are exact")
    }

    /// Entropy (nats) of the teacher's conditional for a context.
    pub fn conditional_entropy(&self, context: &[TokenId]) -> f64 {
        self.predict(context, None)
            .entries()
            .iter()
            .filter(|&&(_, p)| p > 0.0)
            .map(|&(_, p)| -p * p.ln())
            .sum()
    }

    /// Sample documents from the source. Deterministic per seed.
    pub fn generate_corpus(&self, docs: usize, doc_len: usize, seed: u64) -> Result<Corpus> {
        if docs == 0 || doc_len == 0 {
            return Err(Error::InvalidTeacher("docs and doc_len must be positive".into()));
        }
        let mut documents = Vec::with_capacity(docs);
        for d in 0..docs {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv(seed, d as u64));
            let mut doc: Vec<TokenId> = Vec::with_capacity(doc_len);
            for _ in 0..doc_len {
                let dist = self.predict(&doc, None);
                let u: f64 = rng.gen();
                doc.push(sample_from(&dist, u));
            }
            documents.push(doc);
        }
        Corpus::new(documents, self.cfg.vocab_size, self.cfg.bos)
    }
}

fn sample_from(dist: &SparseDistribution, u: f64) -> TokenId {
    let mut acc = 0.0;
    let entries = dist.entries();
    for &(t, p) in entries {
        acc += p;
        if u < acc {
            return t;
        }
    }
    entries.last().expect("entries nonempty").0
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(seed: u64, value: u64) -> u64 {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for b in value.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// One evaluation point for prediction emission.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub seq: u64,
    pub off: u64,
    pub context: Vec<TokenId>,
    pub target: TokenId,
    /// Corpus count when the context came from a store sample; drives
    /// count-scaled noise.
    pub count: Option<u64>,
}

/// Per-checkpoint entry of an emission schedule. `weights` overrides the
/// teacher's order mixture at that step (e.g. to mimic a predictor drifting
/// from low- to high-order behaviour over training).
#[derive(Debug, Clone)]
pub struct StepWeights {
    pub step: u64,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EmitOptions {
    pub runs: u32,
    pub steps: Vec<StepWeights>,
    /// Run-seeded perturbation magnitude in [0, 1).
    pub noise: f64,
    /// Scale noise per context as `noise / sqrt(count)`: rarer contexts
    /// get noisier predictions.
    pub count_scaled_noise: bool,
    /// Emit limited-context predictions re-evaluated under this cap.
    pub limit: Option<u32>,
    pub run_seed: u64,
    pub tag: String,
}

impl Default for EmitOptions {
    fn default() -> Self {
        Self {
            runs: 1,
            steps: vec![StepWeights { step: 0, weights: None }],
            noise: 0.0,
            count_scaled_noise: false,
            limit: None,
            run_seed: 0,
            tag: "teacher".into(),
        }
    }
}

const NOISE_CAP: f64 = 0.95;

/// Emit teacher predictions for explicit evaluation contexts, one record
/// per (run, step, context). With zero noise every run is identical and
/// equal to the exact teacher conditional.
pub fn emit_predictions(
    teacher: &Teacher,
    contexts: &[EvalContext],
    opts: &EmitOptions,
) -> Result<PredictionSet> {
    if !(0.0..1.0).contains(&opts.noise) {
        return Err(Error::InvalidTeacher(format!("noise {} outside [0,1)", opts.noise)));
    }
    if opts.runs == 0 || opts.steps.is_empty() {
        return Err(Error::InvalidTeacher("need at least one run and one step".into()));
    }
    let vocab = teacher.config().vocab_size;
    let bos = teacher.config().bos;
    let mut records = Vec::with_capacity(contexts.len() * opts.runs as usize * opts.steps.len());
    for step_spec in &opts.steps {
        let step_teacher; // owns a reweighted teacher when the schedule overrides
        let active: &Teacher = match &step_spec.weights {
            None => teacher,
            Some(w) => {
                let cfg = teacher.config().clone().with_weights(w.clone())?;
                step_teacher = Teacher::new(cfg)?;
                &step_teacher
            }
        };
        for ec in contexts {
            if let Some(limit) = opts.limit {
                if ec.context.len() < limit as usize {
                    continue;
                }
            }
            let base = active.predict(&ec.context, opts.limit);
            let eps = if opts.noise == 0.0 {
                0.0
            } else if opts.count_scaled_noise {
                (opts.noise / (ec.count.unwrap_or(1).max(1) as f64).sqrt()).min(NOISE_CAP)
            } else {
                opts.noise.min(NOISE_CAP)
            };
            for run in 0..opts.runs {
                let dist = if eps == 0.0 {
                    base.clone()
                } else {
                    perturb(&base, eps, vocab, bos, fnv_many(&[
                        opts.run_seed,
                        run as u64,
                        step_spec.step,
                        ec.seq,
                        ec.off,
                    ]))
                };
                let mut record = PredictionRecord {
                    run,
                    step: step_spec.step,
                    limit: opts.limit,
                    seq: ec.seq,
                    off: ec.off,
                    context: ec.context.clone(),
                    target: ec.target,
                    dist,
                    loss: None,
                };
                record.loss = Some(record_loss(&record, vocab));
                records.push(record);
            }
        }
    }
    PredictionSet::new(vocab, opts.tag.clone(), records)
}

fn fnv_many(values: &[u64]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325, |h, &v| fnv(h, v))
}

/// Mix the base conditional with a run-seeded random distribution over the
/// non-BOS vocabulary and renormalize.
fn perturb(base: &SparseDistribution, eps: f64, vocab: u32, bos: TokenId, seed: u64) -> SparseDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab as usize;
    let mut noise = vec![0.0f64; v];
    let mut sum = 0.0;
    for (t, slot) in noise.iter_mut().enumerate() {
        if t as u32 == bos.0 {
            continue;
        }
        let u: f64 = rng.gen::<f64>().max(1e-12);
        *slot = -u.ln();
        sum += *slot;
    }
    for slot in &mut noise {
        *slot /= sum;
    }
    let mut mixed = noise;
    for slot in mixed.iter_mut() {
        *slot *= eps;
    }
    for &(t, p) in base.entries() {
        mixed[t.0 as usize] += (1.0 - eps) * p;
    }
    let total: f64 = mixed.iter().sum();
    let entries: Vec<(TokenId, f64)> = mixed
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > 0.0)
        .map(|(t, &p)| (TokenId(t as u32), p / total))
        .collect();
    SparseDistribution::from_entries(entries, 0.0).expect("renormalized mixture")
}

/// Evaluation contexts for every in-chunk position of a stream, skipping
/// position 0 of each chunk (no context) and BOS targets (document
/// boundaries, which the teacher does not model). Contexts are capped to
/// the last `ctx_cap` tokens.
pub fn stream_eval_contexts(stream: &ChunkedStream, ctx_cap: usize) -> Vec<EvalContext> {
    let bos = stream.bos();
    let mut out = Vec::new();
    for (seq, chunk) in stream.chunks().iter().enumerate() {
        let content = chunk.content();
        for off in 1..content.len() {
            let target = content[off];
            if target == bos {
                continue;
            }
            let start = off.saturating_sub(ctx_cap);
            out.push(EvalContext {
                seq: seq as u64,
                off: off as u64,
                context: content[start..off].to_vec(),
                target,
                count: None,
            });
        }
    }
    out
}

/// Plain-text teacher config IO.
///
/// Header: `#teacher v=1 vocab=<int> bos=<int> order=<int>`, optionally a
/// `weights=<w1,...,wk>` line, then either `rows=random seed=<u64>
/// conc=<float>` or explicit blocks:
/// `table order=<j>` followed by `<ctx ids|-> : <tok:prob,...>` lines.
pub fn read_teacher_config(path: &Path) -> Result<TeacherConfig> {
    parse_teacher_config(BufReader::new(File::open(path)?))
}

pub fn parse_teacher_config<R: BufRead>(reader: R) -> Result<TeacherConfig> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidTeacher("missing header".into()))??;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#teacher") {
        return Err(Error::InvalidTeacher("header must start with #teacher".into()));
    }
    let mut vocab = None;
    let mut bos = None;
    let mut order = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::InvalidTeacher(format!("bad header field {field:?}")))?;
        match key {
            "v" if value == "1" => {}
            "v" => return Err(Error::InvalidTeacher(format!("unsupported version {value}"))),
            "vocab" => vocab = value.parse::<u32>().ok(),
            "bos" => bos = value.parse::<u32>().ok(),
            "order" => order = value.parse::<usize>().ok(),
            other => return Err(Error::InvalidTeacher(format!("unknown header key {other:?}"))),
        }
    }
    let (Some(vocab), Some(bos), Some(order)) = (vocab, bos, order) else {
        return Err(Error::InvalidTeacher("header needs vocab=, bos=, order=".into()));
    };
    let mut weights: Option<Vec<f64>> = None;
    let mut source: Option<RowSource> = None;
    let mut tables: Vec<ConditionalTable> = vec![BTreeMap::new(); order];
    let mut current_order: Option<usize> = None;
    let mut saw_table = false;
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("weights=") {
            let mut w = Vec::new();
            for part in rest.split(',') {
                w.push(part.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidTeacher(format!("bad weight {part:?}"))
                })?);
            }
            weights = Some(w);
        } else if let Some(rest) = line.strip_prefix("rows=random") {
            let rest = rest.trim();
            let mut seed = None;
            let mut conc = None;
            if let Some(inner) = rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
                // Call-style spelling: rows=random(seed, concentration).
                let mut parts = inner.split(',').map(str::trim);
                seed = parts.next().and_then(|v| v.parse::<u64>().ok());
                conc = parts.next().and_then(|v| v.parse::<f64>().ok());
                if parts.next().is_some() {
                    return Err(Error::InvalidTeacher("random(...) takes two values".into()));
                }
            } else {
                for field in rest.split_whitespace() {
                    let (key, value) = field
                        .split_once('=')
                        .ok_or_else(|| Error::InvalidTeacher(format!("bad field {field:?}")))?;
                    match key {
                        "seed" => seed = value.parse::<u64>().ok(),
                        "conc" => conc = value.parse::<f64>().ok(),
                        other => {
                            return Err(Error::InvalidTeacher(format!("unknown key {other:?}")))
                        }
                    }
                }
            }
            let (Some(seed), Some(conc)) = (seed, conc) else {
                return Err(Error::InvalidTeacher(
                    "rows=random needs a seed and a concentration".into(),
                ));
            };
            source = Some(RowSource::Random { seed, concentration: conc });
        } else if let Some(rest) = line.strip_prefix("table order=") {
            let j: usize = rest
                .trim()
                .parse()
                .map_err(|_| Error::InvalidTeacher(format!("bad table order {rest:?}")))?;
            if j < 1 || j > order {
                return Err(Error::InvalidTeacher(format!("table order {j} outside 1..={order}")));
            }
            current_order = Some(j);
            saw_table = true;
        } else if let Some((ctx_part, row_part)) = line.split_once(':') {
            let Some(j) = current_order else {
                return Err(Error::InvalidTeacher("row line outside a table block".into()));
            };
            let ctx_part = ctx_part.trim();
            let mut ctx = Vec::new();
            if ctx_part != "-" {
                for part in ctx_part.split_whitespace() {
                    ctx.push(TokenId(part.parse::<u32>().map_err(|_| {
                        Error::InvalidTeacher(format!("bad context token {part:?}"))
                    })?));
                }
            }
            let mut row = Vec::new();
            for part in row_part.trim().split(',') {
                let (tok, prob) = part
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidTeacher(format!("bad row entry {part:?}")))?;
                row.push((
                    TokenId(tok.trim().parse::<u32>().map_err(|_| {
                        Error::InvalidTeacher(format!("bad row token {tok:?}"))
                    })?),
                    prob.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidTeacher(format!("bad row probability {prob:?}"))
                    })?,
                ));
            }
            tables[j - 1].insert(ctx, row);
        } else {
            return Err(Error::InvalidTeacher(format!("unparseable line {line:?}")));
        }
    }
    let source = match source {
        Some(s) if saw_table => {
            drop(s);
            return Err(Error::InvalidTeacher(
                "config mixes rows=random with explicit tables".into(),
            ));
        }
        Some(s) => s,
        None if saw_table => RowSource::Explicit { tables },
        None => {
            return Err(Error::InvalidTeacher(
                "config needs rows=random or explicit tables".into(),
            ))
        }
    };
    let mut cfg = TeacherConfig {
        vocab_size: vocab,
        bos: TokenId(bos),
        order,
        weights: {
            let mut w = vec![0.0; order];
            w[order - 1] = 1.0;
            w
        },
        source,
    };
    if let Some(w) = weights {
        cfg = cfg.with_weights(w)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_teacher_config(cfg: &TeacherConfig, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "#teacher v=1 vocab={} bos={} order={}",
        cfg.vocab_size, cfg.bos.0, cfg.order
    )?;
    let weights: Vec<String> = cfg.weights.iter().map(|x| format!("{x}")).collect();
    writeln!(w, "weights={}", weights.join(","))?;
    match &cfg.source {
        RowSource::Random { seed, concentration } => {
            writeln!(w, "rows=random seed={seed} conc={concentration}")?;
        }
        RowSource::Explicit { tables } => {
            for (j, table) in tables.iter().enumerate() {
                writeln!(w, "table order={}", j + 1)?;
                for (ctx, row) in table {
                    let ctx_str = if ctx.is_empty() {
                        "-".to_string()
                    } else {
                        ctx.iter().map(|t| t.0.to_string()).collect::<Vec<_>>().join(" ")
                    };
                    let row_str: Vec<String> =
                        row.iter().map(|(t, p)| format!("{}:{}", t.0, p)).collect();
                    writeln!(w, "{ctx_str} : {}", row_str.join(","))?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{model_variance, Metric};

    fn toks(ids: &[u32]) -> Vec<TokenId> {
        ids.iter().map(|&i| TokenId(i)).collect()
    }

    /// Deterministic 2-cycle source: 1 -> 2 -> 1 -> ...
    fn cycle_teacher() -> Teacher {
        let mut order2 = BTreeMap::new();
        order2.insert(toks(&[1]), vec![(TokenId(2), 1.0)]);
        order2.insert(toks(&[2]), vec![(TokenId(1), 1.0)]);
        let mut order1 = BTreeMap::new();
        order1.insert(Vec::new(), vec![(TokenId(1), 1.0)]);
        let cfg = TeacherConfig {
            vocab_size: 4,
            bos: TokenId(0),
            order: 2,
            weights: vec![0.0, 1.0],
            source: RowSource::Explicit { tables: vec![order1, order2] },
        };
        Teacher::new(cfg).unwrap()
    }

    #[test]
    fn cycle_source_predicts_one_hot_and_generates_periodically() {
        let teacher = cycle_teacher();
        let p = teacher.predict(&toks(&[5, 1]), None);
        assert_eq!(p.prob(TokenId(2)), 1.0);
        let corpus = teacher.generate_corpus(2, 6, 9).unwrap();
        for doc in corpus.documents() {
            assert_eq!(doc, &toks(&[1, 2, 1, 2, 1, 2]));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = TeacherConfig::random(16, TokenId(0), 3, 42, 0.5).unwrap();
        let t = Teacher::new(cfg).unwrap();
        let a = t.generate_corpus(4, 50, 7).unwrap();
        let b = t.generate_corpus(4, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = t.generate_corpus(4, 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unigram_sample_close_to_uniform() {
        // Order-1 uniform source: empirical unigram within 3 sigma.
        let mut order1 = BTreeMap::new();
        let v = 9u32;
        let row: Vec<(TokenId, f64)> = (1..v).map(|t| (TokenId(t), 1.0 / 8.0)).collect();
        order1.insert(Vec::new(), row);
        let cfg = TeacherConfig {
            vocab_size: v,
            bos: TokenId(0),
            order: 1,
            weights: vec![1.0],
            source: RowSource::Explicit { tables: vec![order1] },
        };
        let teacher = Teacher::new(cfg).unwrap();
        let n = 100_000usize;
        let corpus = teacher.generate_corpus(10, n / 10, 3).unwrap();
        let mut counts = vec![0u64; v as usize];
        for doc in corpus.documents() {
            for &t in doc {
                counts[t.0 as usize] += 1;
            }
        }
        let p = 1.0 / 8.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for t in 1..v {
            let diff = (counts[t as usize] as f64 - n as f64 * p).abs();
            assert!(diff < 3.0 * sigma, "token {t}: off by {diff}, sigma {sigma}");
        }
    }

    #[test]
    fn limit_zero_gives_unigram_row() {
        let cfg = TeacherConfig::random(8, TokenId(0), 3, 1, 0.5).unwrap();
        let t = Teacher::new(cfg).unwrap();
        let p = t.predict(&toks(&[3, 4, 5]), Some(0));
        let q = t.predict(&[], None);
        assert_eq!(p, q);
    }

    #[test]
    fn limit_at_order_equals_unlimited() {
        let cfg = TeacherConfig::random(8, TokenId(0), 3, 1, 0.5).unwrap();
        let t = Teacher::new(cfg).unwrap();
        let ctx = toks(&[3, 4, 5, 6]);
        assert_eq!(t.predict(&ctx, Some(2)), t.predict(&ctx, None));
        assert_eq!(t.predict(&ctx, Some(7)), t.predict(&ctx, None));
    }

    #[test]
    fn context_restarts_after_bos() {
        let cfg = TeacherConfig::random(8, TokenId(0), 3, 1, 0.5).unwrap();
        let t = Teacher::new(cfg).unwrap();
        assert_eq!(t.predict(&toks(&[5, 0, 3]), None), t.predict(&toks(&[3]), None));
        assert_eq!(t.predict(&toks(&[5, 0]), None), t.predict(&[], None));
    }

    #[test]
    fn zero_noise_runs_are_identical() {
        let cfg = TeacherConfig::random(8, TokenId(0), 2, 5, 0.5).unwrap();
        let t = Teacher::new(cfg).unwrap();
        let contexts = vec![
            EvalContext { seq: 0, off: 1, context: toks(&[3]), target: TokenId(4), count: None },
            EvalContext { seq: 0, off: 2, context: toks(&[3, 4]), target: TokenId(5), count: None },
        ];
        let opts = EmitOptions { runs: 3, ..Default::default() };
        let set = emit_predictions(&t, &contexts, &opts).unwrap();
        assert_eq!(set.len(), 6);
        for ec in &contexts {
            let dists: Vec<&SparseDistribution> = set
                .records()
                .iter()
                .filter(|r| r.seq == ec.seq && r.off == ec.off)
                .map(|r| &r.dist)
                .collect();
            assert_eq!(model_variance(&dists, Metric::Variational).unwrap(), 0.0);
        }
    }

    #[test]
    fn noise_increases_model_variance() {
        let cfg = TeacherConfig::random(8, TokenId(0), 2, 5, 0.5).unwrap();
        let t = Teacher::new(cfg).unwrap();
        let contexts = vec![EvalContext {
            seq: 0,
            off: 1,
            context: toks(&[3]),
            target: TokenId(4),
            count: None,
        }];
        let variance_at = |noise: f64| {
            let opts = EmitOptions { runs: 4, noise, ..Default::default() };
            let set = emit_predictions(&t, &contexts, &opts).unwrap();
            let dists: Vec<&SparseDistribution> =
                set.records().iter().map(|r| &r.dist).collect();
            model_variance(&dists, Metric::Variational).unwrap()
        };
        let low = variance_at(0.1);
        let high = variance_at(0.6);
        assert!(low > 0.0);
        assert!(high > low);
    }

    #[test]
    fn single_step_schedule_gives_one_group() {
        let cfg = TeacherConfig::random(8, TokenId(0), 2, 5, 0.5).unwrap();
        let t = Teacher::new(cfg).unwrap();
        let contexts = vec![EvalContext {
            seq: 0,
            off: 1,
            context: toks(&[3]),
            target: TokenId(4),
            count: None,
        }];
        let opts = EmitOptions {
            steps: vec![StepWeights { step: 500, weights: None }],
            ..Default::default()
        };
        let set = emit_predictions(&t, &contexts, &opts).unwrap();
        assert_eq!(set.steps(), vec![500]);
        assert_eq!(set.groups().len(), 1);
    }

    #[test]
    fn teacher_config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.cfg");
        let cfg = TeacherConfig::random(16, TokenId(0), 3, 99, 0.25)
            .unwrap()
            .with_weights(vec![0.2, 0.3, 0.5])
            .unwrap();
        write_teacher_config(&cfg, &path).unwrap();
        let back = read_teacher_config(&path).unwrap();
        assert_eq!(back.vocab_size, 16);
        assert_eq!(back.order, 3);
        assert_eq!(back.weights, vec![0.2, 0.3, 0.5]);
        match back.source {
            RowSource::Random { seed, concentration } => {
                assert_eq!(seed, 99);
                assert_eq!(concentration, 0.25);
            }
            _ => panic!("expected random rows"),
        }

        let explicit = cycle_teacher().config().clone();
        write_teacher_config(&explicit, &path).unwrap();
        let back = read_teacher_config(&path).unwrap();
        let t = Teacher::new(back).unwrap();
        assert_eq!(t.predict(&toks(&[1]), None).prob(TokenId(2)), 1.0);
    }

    #[test]
    fn call_style_random_rows_accepted() {
        let text = "#teacher v=1 vocab=8 bos=0 order=2\nrows=random(42, 0.5)\n";
        let cfg = parse_teacher_config(text.as_bytes()).unwrap();
        match cfg.source {
            RowSource::Random { seed, concentration } => {
                assert_eq!(seed, 42);
                assert_eq!(concentration, 0.5);
            }
            _ => panic!("expected random rows"),
        }
    }

    #[test]
    fn stream_contexts_skip_bos_targets() {
        let corpus = Corpus::new(vec![toks(&[1, 2]), toks(&[3])], 8, TokenId(0)).unwrap();
        let cfg = crate::corpus::ChunkingConfig { chunk_len: 5, shuffle_seed: None, pad: None };
        let stream = crate::corpus::chunk(&corpus, &cfg).unwrap();
        // Single chunk [0,1,2,0,3]: positions 1,2,4 are non-BOS targets.
        let contexts = stream_eval_contexts(&stream, 8);
        let offs: Vec<u64> = contexts.iter().map(|c| c.off).collect();
        assert_eq!(offs, vec![1, 2, 4]);
        assert_eq!(contexts[2].context, toks(&[0, 1, 2, 0]));
    }
}
