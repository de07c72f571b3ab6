//! Shared fixtures for the oracle suites: seeded random corpora and an
//! independent window-scan tally, kept deliberately naive.
#![allow(dead_code)] // not every test binary uses every helper

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ngram_rules::corpus::{chunk, ChunkedStream, ChunkingConfig, Corpus, TokenId};
use ngram_rules::store::{Mask, PatternKey, Slot};

pub struct RandomCorpus {
    pub stream: ChunkedStream,
    pub vocab: u32,
}

/// A random corpus and chunking, sized by `scale` (max token budget).
pub fn random_stream(seed: u64, scale: usize) -> RandomCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = rng.gen_range(4..=64u32);
    let doc_count = rng.gen_range(1..=12usize);
    let budget = rng.gen_range(scale / 10..=scale).max(doc_count);
    let mut documents = Vec::with_capacity(doc_count);
    for _ in 0..doc_count {
        let len = rng.gen_range(1..=(2 * budget / doc_count).max(1));
        let doc: Vec<TokenId> =
            (0..len).map(|_| TokenId(rng.gen_range(1..vocab))).collect();
        documents.push(doc);
    }
    let corpus = Corpus::new(documents, vocab, TokenId(0)).unwrap();
    let cfg = ChunkingConfig {
        chunk_len: rng.gen_range(8..=512usize),
        shuffle_seed: Some(rng.gen()),
        pad: None,
    };
    RandomCorpus { stream: chunk(&corpus, &cfg).unwrap(), vocab }
}

pub type OracleTable = BTreeMap<Vec<TokenId>, (u64, BTreeMap<TokenId, u64>)>;

/// Independent tally for one mask: walk every valid window of length
/// `mask.len() + 1` and bucket by extracted literals.
pub fn oracle_table(stream: &ChunkedStream, mask: &Mask) -> OracleTable {
    let bos = stream.bos();
    let win_len = mask.len() + 1;
    let mut table: OracleTable = BTreeMap::new();
    for c in stream.chunks() {
        let content = c.content();
        if content.len() < win_len {
            continue;
        }
        'w: for w in content.windows(win_len) {
            for &t in &w[1..] {
                if t == bos {
                    continue 'w;
                }
            }
            let literals: Vec<TokenId> = mask
                .slots()
                .iter()
                .enumerate()
                .filter(|&(_, &s)| s == Slot::Lit)
                .map(|(i, _)| w[i])
                .collect();
            let entry = table.entry(literals).or_insert_with(|| (0, BTreeMap::new()));
            entry.0 += 1;
            *entry.1.entry(w[win_len - 1]).or_insert(0) += 1;
        }
    }
    table
}

/// Count, by per-pattern match testing, the windows matching a concrete
/// pattern followed by each next token.
pub fn match_scan(stream: &ChunkedStream, pattern: &PatternKey) -> (u64, BTreeMap<TokenId, u64>) {
    let bos = stream.bos();
    let win_len = pattern.mask().len() + 1;
    let mut total = 0u64;
    let mut next: BTreeMap<TokenId, u64> = BTreeMap::new();
    for c in stream.chunks() {
        let content = c.content();
        if content.len() < win_len {
            continue;
        }
        'w: for w in content.windows(win_len) {
            for &t in &w[1..] {
                if t == bos {
                    continue 'w;
                }
            }
            if pattern.matches(&w[..win_len - 1]) {
                total += 1;
                *next.entry(w[win_len - 1]).or_insert(0) += 1;
            }
        }
    }
    (total, next)
}
