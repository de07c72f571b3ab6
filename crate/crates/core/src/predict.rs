//! Ingestion of black-box next-token predictions.
//!
//! Predictions arrive as line-delimited records grouped by run,
//! checkpoint step, and context-limit; each record carries the context,
//! the ground-truth target, and a top-K distribution with residual.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::TokenId;
use crate::dist::SparseDistribution;
use crate::error::{Error, Result};

/// Floor probability when the target falls into the residual.
pub const LOSS_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub run: u32,
    pub step: u64,
    /// Context cap the predictor was evaluated under; `None` = unlimited.
    pub limit: Option<u32>,
    /// Position: sequence id and offset of the predicted token.
    pub seq: u64,
    pub off: u64,
    /// Context tokens, most recent last.
    pub context: Vec<TokenId>,
    pub target: TokenId,
    pub dist: SparseDistribution,
    pub loss: Option<f64>,
}

/// Grouping key within a prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub run: u32,
    pub step: u64,
    pub limit: Option<u32>,
}

impl GroupKey {
    pub fn of(record: &PredictionRecord) -> Self {
        Self { run: record.run, step: record.step, limit: record.limit }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    vocab_size: u32,
    tag: String,
    records: Vec<PredictionRecord>,
}

impl PredictionSet {
    pub fn new(vocab_size: u32, tag: impl Into<String>, records: Vec<PredictionRecord>) -> Result<Self> {
        let tag = tag.into();
        if tag.is_empty() || tag.contains(char::is_whitespace) {
            return Err(Error::Schema(format!("bad source tag {tag:?}")));
        }
        let mut seen = BTreeSet::new();
        for r in &records {
            validate_record(r, vocab_size)?;
            if !seen.insert((r.run, r.step, r.limit, r.seq, r.off)) {
                return Err(Error::DuplicatePosition {
                    run: r.run,
                    step: r.step,
                    limit: r.limit,
                    seq: r.seq,
                    off: r.off,
                });
            }
        }
        Ok(Self { vocab_size, tag, records })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn groups(&self) -> BTreeMap<GroupKey, Vec<&PredictionRecord>> {
        let mut map: BTreeMap<GroupKey, Vec<&PredictionRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(GroupKey::of(r)).or_default().push(r);
        }
        map
    }

    pub fn runs(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.records.iter().map(|r| r.run).collect();
        set.into_iter().collect()
    }

    pub fn steps(&self) -> Vec<u64> {
        let set: BTreeSet<u64> = self.records.iter().map(|r| r.step).collect();
        set.into_iter().collect()
    }

    /// Mean loss in nats over the records selected by `filter`. A target
    /// outside the explicit entries gets the residual spread uniformly
    /// over the unlisted vocabulary, floored at `LOSS_FLOOR`.
    pub fn cross_entropy(&self, filter: impl Fn(&PredictionRecord) -> bool) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in self.records.iter().filter(|r| filter(r)) {
            sum += record_loss(r, self.vocab_size);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyGroup("no records matched the selector".into()));
        }
        Ok(sum / n as f64)
    }

    /// Mean loss per group.
    pub fn cross_entropy_by_group(&self) -> BTreeMap<GroupKey, f64> {
        let mut sums: BTreeMap<GroupKey, (f64, usize)> = BTreeMap::new();
        for r in &self.records {
            let e = sums.entry(GroupKey::of(r)).or_insert((0.0, 0));
            e.0 += record_loss(r, self.vocab_size);
            e.1 += 1;
        }
        sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("missing prediction header".into()))??;
        let (vocab_size, tag) = parse_pred_header(&header)?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            records.push(parse_record(&line).map_err(|e| match e {
                Error::Schema(msg) => Error::Schema(format!("record line {}: {msg}", i + 2)),
                other => other,
            })?);
        }
        PredictionSet::new(vocab_size, tag, records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#pred v=1 vocab={} tag={}", self.vocab_size, self.tag)?;
        for r in &self.records {
            write_record(&mut w, r)?;
        }
        Ok(())
    }
}

/// Per-record loss under the residual-floor convention.
pub fn record_loss(r: &PredictionRecord, vocab_size: u32) -> f64 {
    let p = if r.dist.has_entry(r.target) {
        r.dist.prob(r.target)
    } else {
        let unlisted = (vocab_size as usize).saturating_sub(r.dist.entries().len()).max(1);
        (r.dist.residual() / unlisted as f64).max(LOSS_FLOOR)
    };
    -p.max(LOSS_FLOOR).ln()
}

fn validate_record(r: &PredictionRecord, vocab_size: u32) -> Result<()> {
    if r.target.0 >= vocab_size {
        return Err(Error::TokenOutOfRange { token: r.target.0, vocab: vocab_size });
    }
    for &t in &r.context {
        if t.0 >= vocab_size {
            return Err(Error::TokenOutOfRange { token: t.0, vocab: vocab_size });
        }
    }
    for &(t, _) in r.dist.entries() {
        if t.0 >= vocab_size {
            return Err(Error::TokenOutOfRange { token: t.0, vocab: vocab_size });
        }
    }
    if let Some(limit) = r.limit {
        if limit as usize > r.context.len() {
            return Err(Error::Schema(format!(
                "context_limit {limit} exceeds context length {}",
                r.context.len()
            )));
        }
    }
    // Producer argmax contract: the true top token must be visible.
    if r.dist.residual() > r.dist.max_entry() + crate::dist::ARGMAX_TIE_TOLERANCE {
        return Err(Error::ArgmaxContract {
            max_entry: r.dist.max_entry(),
            residual: r.dist.residual(),
        });
    }
    Ok(())
}

fn parse_pred_header(line: &str) -> Result<(u32, String)> {
    let mut fields = line.split_whitespace();
    if fields.next() != Some("#pred") {
        return Err(Error::Schema("header must start with #pred".into()));
    }
    let mut version = None;
    let mut vocab = None;
    let mut tag = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("bad header field {field:?}")))?;
        match key {
            "v" => version = Some(value.to_string()),
            "vocab" => {
                vocab = Some(value.parse::<u32>().map_err(|_| {
                    Error::Schema(format!("bad vocab value {value:?}"))
                })?)
            }
            "tag" => tag = Some(value.to_string()),
            other => return Err(Error::Schema(format!("unknown header key {other:?}"))),
        }
    }
    if version.as_deref() != Some("1") {
        return Err(Error::Schema(format!("unsupported prediction version {version:?}")));
    }
    match (vocab, tag) {
        (Some(v), Some(t)) => Ok((v, t)),
        _ => Err(Error::Schema("header needs vocab= and tag=".into())),
    }
}

fn parse_record(line: &str) -> Result<PredictionRecord> {
    let mut run = None;
    let mut step = None;
    let mut limit: Option<Option<u32>> = None;
    let mut seq = None;
    let mut off = None;
    let mut ctx = None;
    let mut tgt = None;
    let mut top = None;
    let mut res = None;
    let mut loss = None;
    for field in line.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("bad field {field:?}")))?;
        match key {
            "run" => run = Some(parse_num::<u32>(key, value)?),
            "step" => step = Some(parse_num::<u64>(key, value)?),
            "limit" => {
                limit = Some(if value == "-" {
                    None
                } else {
                    Some(parse_num::<u32>(key, value)?)
                })
            }
            "seq" => seq = Some(parse_num::<u64>(key, value)?),
            "off" => off = Some(parse_num::<u64>(key, value)?),
            "ctx" => {
                let mut tokens = Vec::new();
                if !value.is_empty() {
                    for part in value.split(',') {
                        tokens.push(TokenId(parse_num::<u32>("ctx", part)?));
                    }
                }
                ctx = Some(tokens);
            }
            "tgt" => tgt = Some(TokenId(parse_num::<u32>(key, value)?)),
            "top" => {
                let mut entries = Vec::new();
                for part in value.split(',') {
                    let (tok, prob) = part
                        .split_once(':')
                        .ok_or_else(|| Error::Schema(format!("bad top entry {part:?}")))?;
                    let tok = TokenId(parse_num::<u32>("top", tok)?);
                    let prob: f64 = prob
                        .parse()
                        .map_err(|_| Error::Schema(format!("bad probability {prob:?}")))?;
                    entries.push((tok, prob));
                }
                top = Some(entries);
            }
            "res" => {
                res = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| Error::Schema(format!("bad residual {value:?}")))?,
                )
            }
            "loss" => {
                loss = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| Error::Schema(format!("bad loss {value:?}")))?,
                )
            }
            other => return Err(Error::Schema(format!("unknown field {other:?}"))),
        }
    }
    let (Some(run), Some(step), Some(limit), Some(seq), Some(off), Some(ctx), Some(tgt), Some(top), Some(res)) =
        (run, step, limit, seq, off, ctx, tgt, top, res)
    else {
        return Err(Error::Schema("missing required field".into()));
    };
    let dist = SparseDistribution::from_entries(top, res)?;
    Ok(PredictionRecord { run, step, limit, seq, off, context: ctx, target: tgt, dist, loss })
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Schema(format!("bad value for {key}: {value:?}")))
}

fn write_record<W: Write>(w: &mut W, r: &PredictionRecord) -> Result<()> {
    let ctx: Vec<String> = r.context.iter().map(|t| t.0.to_string()).collect();
    let top: Vec<String> = r
        .dist
        .entries()
        .iter()
        .map(|(t, p)| format!("{}:{}", t.0, fmt_prob(*p)))
        .collect();
    write!(
        w,
        "run={} step={} limit={} seq={} off={} ctx={} tgt={} top={} res={}",
        r.run,
        r.step,
        r.limit.map_or("-".to_string(), |l| l.to_string()),
        r.seq,
        r.off,
        ctx.join(","),
        r.target.0,
        top.join(","),
        fmt_prob(r.dist.residual()),
    )?;
    if let Some(loss) = r.loss {
        write!(w, " loss={}", fmt_prob(loss))?;
    }
    writeln!(w)?;
    Ok(())
}

/// 17 significant digits: enough to round-trip any f64 exactly.
fn fmt_prob(p: f64) -> String {
    format!("{p:.17e}")
}
