//! Data-plane commands: chunk, build-counts, query, rules.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};

use ngram_rules::corpus::{chunk as chunk_stream, ChunkedStream, ChunkingConfig, Corpus, CorpusFormat, TokenId};
use ngram_rules::rules::{canonicalize, enumerate_ruleset, required_masks, RuleFamily, RuleSetSpec, Sigma};
use ngram_rules::store::{build_with_granularity, CountStore, Granularity, Mask, PatternKey, StoreConfig};

use crate::chunks;

#[derive(Args, Debug)]
pub struct ChunkArgs {
    /// Input corpus file.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Corpus format: auto, text, or binary.
    #[arg(long, default_value = "auto")]
    format: String,
    #[command(flatten)]
    chunking: ChunkingArgs,
    /// Output chunks file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ChunkingArgs {
    /// Training sequence length.
    #[arg(long, default_value_t = 2048)]
    chunk_len: usize,
    /// Seed for the chunk-order shuffle; omitted keeps natural order.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Pad token for the final partial chunk (excluded from counts).
    #[arg(long)]
    pad: Option<u32>,
    /// Count over whole documents instead of fixed-length chunks.
    #[arg(long, default_value_t = false)]
    doc_level: bool,
}

impl ChunkingArgs {
    fn stream_from(&self, corpus: &Corpus) -> Result<(ChunkedStream, Granularity)> {
        if self.doc_level {
            Ok((ChunkedStream::document_level(corpus), Granularity::Document))
        } else {
            let cfg = ChunkingConfig {
                chunk_len: self.chunk_len,
                shuffle_seed: self.shuffle_seed,
                pad: self.pad.map(TokenId),
            };
            Ok((chunk_stream(corpus, &cfg)?, Granularity::Chunked))
        }
    }
}

pub fn chunk(args: ChunkArgs) -> Result<()> {
    let format: CorpusFormat = args.format.parse()?;
    let corpus = Corpus::load(&args.corpus, format)?;
    let (stream, _) = args.chunking.stream_from(&corpus)?;
    chunks::write_chunks(&stream, &args.out)?;
    println!(
        "chunks={} tokens={} chunk_len={} vocab={} bos={}",
        stream.chunks().len(),
        stream.token_count(),
        stream.chunk_len(),
        stream.vocab_size(),
        stream.bos().0
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Input corpus file (chunked via the chunking flags).
    #[arg(long, value_name = "FILE", conflicts_with = "chunks")]
    corpus: Option<PathBuf>,
    /// Corpus format: auto, text, or binary.
    #[arg(long, default_value = "auto")]
    format: String,
    /// Pre-chunked stream written by `chunk`.
    #[arg(long, value_name = "FILE")]
    chunks: Option<PathBuf>,
    #[command(flatten)]
    chunking: ChunkingArgs,
    /// Ruleset family whose masks to tabulate.
    #[arg(long, default_value = "all")]
    family: String,
    /// Maximum rule context length.
    #[arg(long, default_value_t = 7)]
    max_context: usize,
    /// Explicit comma-separated mask list (L = literal, . = wildcard),
    /// overriding the family selection.
    #[arg(long)]
    masks: Option<String>,
    /// Maximum pattern length the store admits (defaults to the longest
    /// requested mask).
    #[arg(long)]
    n_max: Option<usize>,
    /// Spill partial tallies to disk past this many in-memory entries;
    /// 0 disables spilling.
    #[arg(long, default_value_t = ngram_rules::store::DEFAULT_SPILL_THRESHOLD)]
    spill_entries: usize,
    /// Output store file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn build_counts(args: BuildArgs) -> Result<()> {
    let (stream, granularity) = match (&args.corpus, &args.chunks) {
        (Some(corpus_path), None) => {
            let format: CorpusFormat = args.format.parse()?;
            let corpus = Corpus::load(corpus_path, format)?;
            args.chunking.stream_from(&corpus)?
        }
        (None, Some(chunks_path)) => (chunks::read_chunks(chunks_path)?, Granularity::Chunked),
        _ => bail!("exactly one of --corpus or --chunks is required"),
    };
    let masks: BTreeSet<Mask> = match &args.masks {
        Some(list) => list
            .split(',')
            .map(|m| Ok(Mask::parse(m.trim())?))
            .collect::<Result<_>>()?,
        None => {
            let family: RuleFamily = args.family.parse()?;
            required_masks(&RuleSetSpec::new(family, args.max_context)?)
        }
    };
    let longest = masks.iter().map(Mask::len).max().unwrap_or(1);
    let n_max = args.n_max.unwrap_or(longest);
    let mut cfg = StoreConfig::explicit(masks, n_max);
    cfg.spill_threshold = (args.spill_entries > 0).then_some(args.spill_entries);
    let store = build_with_granularity(&stream, &cfg, granularity)?;
    store.save(&args.out)?;
    println!(
        "store={} masks={} tokens={} fingerprint={:016x}",
        args.out.display(),
        store.mask_stats().len(),
        stream.token_count(),
        store.fingerprint()
    );
    print_mask_stats(&store);
    Ok(())
}

fn print_mask_stats(store: &CountStore) {
    println!("{:<10} {:>12}", "mask", "entries");
    for (mask, entries) in store.mask_stats() {
        let name = if mask.is_empty() { "(unigram)".to_string() } else { mask.to_string() };
        println!("{name:<10} {entries:>12}");
    }
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    /// Count store file.
    #[arg(long, value_name = "FILE")]
    store: PathBuf,
    /// Pattern: space-separated token ids with `*` wildcards, e.g.
    /// "5 * 7". The empty string queries the unigram table.
    #[arg(long, allow_hyphen_values = true)]
    pattern: Option<String>,
    /// Print per-mask entry counts instead of a pattern lookup.
    #[arg(long, default_value_t = false)]
    stats: bool,
}

pub fn query(args: QueryArgs) -> Result<()> {
    let store = CountStore::load(&args.store)
        .with_context(|| format!("load store {}", args.store.display()))?;
    if args.stats {
        print_mask_stats(&store);
        return Ok(());
    }
    let Some(pattern_text) = args.pattern else {
        bail!("either --pattern or --stats is required");
    };
    let pattern = PatternKey::parse(&pattern_text)?;
    let (total, next) = store.next_token_counts(&pattern)?;
    println!("pattern=[{pattern}] total={total}");
    for (token, count) in next {
        println!("next {token} {count}");
    }
    Ok(())
}

#[derive(Subcommand, Debug)]
pub enum RulesCmd {
    /// List every distinct canonical rule of a family.
    Enumerate(RulesetArgs),
    /// Canonicalize one sigma string.
    Show {
        /// Sigma string over + - * (oldest position first).
        #[arg(long, allow_hyphen_values = true)]
        sigma: String,
    },
    /// List the masks a count store needs for a family.
    RequiredMasks(RulesetArgs),
}

#[derive(Args, Debug)]
pub struct RulesetArgs {
    /// Rule family: suffix, subgram, or all.
    #[arg(long, default_value = "all")]
    family: String,
    /// Maximum sigma length.
    #[arg(long, default_value_t = 7)]
    max_context: usize,
}

impl RulesetArgs {
    pub fn spec(&self) -> Result<RuleSetSpec> {
        let family: RuleFamily = self.family.parse()?;
        Ok(RuleSetSpec::new(family, self.max_context)?)
    }
}

pub fn rules(cmd: RulesCmd) -> Result<()> {
    match cmd {
        RulesCmd::Enumerate(args) => {
            for rule in enumerate_ruleset(&args.spec()?) {
                println!(
                    "sigma={} depth={} mask={}",
                    rule.canonical_sigma(),
                    rule.depth(),
                    rule.mask()
                );
            }
        }
        RulesCmd::Show { sigma } => {
            let parsed: Sigma = sigma.parse()?;
            let rule = canonicalize(&parsed);
            println!(
                "sigma={} depth={} mask={}",
                rule.canonical_sigma(),
                rule.depth(),
                rule.mask()
            );
        }
        RulesCmd::RequiredMasks(args) => {
            for mask in required_masks(&args.spec()?) {
                println!("{mask}");
            }
        }
    }
    Ok(())
}
