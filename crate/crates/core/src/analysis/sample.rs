//! Count-stratified context sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenId;
use crate::error::Result;
use crate::store::{CountStore, Mask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledContext {
    pub context: Vec<TokenId>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSample {
    /// Context length.
    pub n: usize,
    pub contexts: Vec<SampledContext>,
}

/// Sample stored length-`n` contexts from logarithmically spaced count
/// buckets: the count range [1, max] is split into `num_buckets` log-even
/// intervals and up to `per_bucket` contexts are drawn uniformly without
/// replacement from each, deterministically per seed.
pub fn sample_contexts(
    store: &CountStore,
    n: usize,
    num_buckets: usize,
    per_bucket: usize,
    seed: u64,
) -> Result<ContextSample> {
    let table = store.table(&Mask::all_lit(n)?)?;
    let entries = table.sorted_entries();
    if entries.is_empty() {
        return Ok(ContextSample { n, contexts: Vec::new() });
    }
    let max = entries.iter().map(|(_, s)| s.total).max().expect("nonempty");
    let buckets = num_buckets.max(1);
    let log_max = (max as f64).ln();
    // Bucket index of a count in [1, max]; degenerate when max == 1.
    let bucket_of = |count: u64| -> usize {
        if max <= 1 {
            return 0;
        }
        let frac = (count as f64).ln() / log_max;
        ((frac * buckets as f64) as usize).min(buckets - 1)
    };
    let mut grouped: Vec<Vec<(&[TokenId], u64)>> = vec![Vec::new(); buckets];
    for (key, stats) in entries {
        grouped[bucket_of(stats.total)].push((key, stats.total));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut contexts = Vec::new();
    for mut members in grouped {
        if members.len() > per_bucket {
            members.shuffle(&mut rng);
            members.truncate(per_bucket);
            members.sort();
        }
        for (key, count) in members {
            contexts.push(SampledContext { context: key.to_vec(), count });
        }
    }
    Ok(ContextSample { n, contexts })
}
