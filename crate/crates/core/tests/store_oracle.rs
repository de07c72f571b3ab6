//! Count-store correctness against independent window-scan oracles on
//! random corpora.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{match_scan, oracle_table, random_stream};
use ngram_rules::corpus::{ChunkedStream, TokenId};
use ngram_rules::rules::{required_masks, RuleFamily, RuleSetSpec};
use ngram_rules::store::{build, CountStore, Mask, PatternKey, Slot, StoreConfig};

fn build_all(stream: &ChunkedStream, n_max: usize) -> CountStore {
    let spec = RuleSetSpec::new(RuleFamily::All, n_max).unwrap();
    let cfg = StoreConfig::explicit(required_masks(&spec), n_max);
    build(stream, &cfg).unwrap()
}

#[test]
fn counts_match_window_scan_oracle_on_random_corpora() {
    for seed in 0..12u64 {
        let rc = random_stream(seed, 4000);
        let n_max = 1 + (seed as usize % 4);
        if rc.stream.chunk_len() < n_max + 1 {
            continue;
        }
        let store = build_all(&rc.stream, n_max);
        for mask in store.masks() {
            let oracle = oracle_table(&rc.stream, mask);
            let table = store.table(mask).unwrap();
            assert_eq!(table.len(), oracle.len(), "entry count, mask {mask} seed {seed}");
            for (literals, (total, next)) in &oracle {
                let stats = table.get(literals).expect("oracle key present in store");
                assert_eq!(stats.total, *total, "total for {literals:?} mask {mask}");
                let store_next: Vec<(TokenId, u64)> =
                    next.iter().map(|(&t, &c)| (t, c)).collect();
                assert_eq!(stats.next, store_next, "next counts for {literals:?} mask {mask}");
            }
        }
    }
}

#[test]
fn stored_patterns_match_per_pattern_scans() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 100..104u64 {
        let rc = random_stream(seed, 1500);
        if rc.stream.chunk_len() < 4 {
            continue;
        }
        let store = build_all(&rc.stream, 3);
        for mask in store.masks().cloned().collect::<Vec<_>>() {
            let table = store.table(&mask).unwrap();
            for (literals, stats) in table.sorted_entries().into_iter().take(40) {
                let pattern = PatternKey::new(mask.clone(), literals.to_vec()).unwrap();
                let (total, next) = match_scan(&rc.stream, &pattern);
                assert_eq!(stats.total, total);
                let next_vec: Vec<(TokenId, u64)> = next.into_iter().collect();
                assert_eq!(stats.next, next_vec);
            }
            // Random unseen patterns count zero in both worlds.
            if mask.is_empty() {
                continue;
            }
            for _ in 0..5 {
                let literals: Vec<TokenId> = (0..mask.lit_count())
                    .map(|_| TokenId(rng.gen_range(0..rc.vocab)))
                    .collect();
                let pattern = PatternKey::new(mask.clone(), literals).unwrap();
                let (total, _) = match_scan(&rc.stream, &pattern);
                assert_eq!(store.count(&pattern).unwrap(), total);
            }
        }
    }
}

#[test]
fn trailing_any_total_equals_sum_over_literal_extensions() {
    for seed in 200..206u64 {
        let rc = random_stream(seed, 3000);
        let n_max = 3;
        if rc.stream.chunk_len() < n_max + 1 {
            continue;
        }
        let store = build_all(&rc.stream, n_max);
        for mask in store.masks().cloned().collect::<Vec<_>>() {
            if mask.len() + 1 > n_max || mask.is_empty() {
                continue;
            }
            let mut any_slots = mask.slots().to_vec();
            any_slots.push(Slot::Any);
            let any_mask = Mask::new(any_slots).unwrap();
            let mut lit_slots = mask.slots().to_vec();
            lit_slots.push(Slot::Lit);
            let lit_mask = Mask::new(lit_slots).unwrap();
            let lit_table = store.table(&lit_mask).unwrap();

            for (literals, _) in store.table(&mask).unwrap().sorted_entries() {
                let any_pattern = PatternKey::new(any_mask.clone(), literals.to_vec()).unwrap();
                let any_total = store.count(&any_pattern).unwrap();
                let mut sum = 0u64;
                for t in 0..rc.vocab {
                    let mut ext = literals.to_vec();
                    ext.push(TokenId(t));
                    sum += lit_table.get(&ext).map_or(0, |s| s.total);
                }
                assert_eq!(any_total, sum, "mask {mask} literals {literals:?} seed {seed}");
            }
        }
    }
}

#[test]
fn refining_a_wildcard_never_increases_the_count() {
    for seed in 300..305u64 {
        let rc = random_stream(seed, 2500);
        let n_max = 3;
        if rc.stream.chunk_len() < n_max + 1 {
            continue;
        }
        let store = build_all(&rc.stream, n_max);
        for mask in store.masks().cloned().collect::<Vec<_>>() {
            let any_slot = match mask.slots().iter().position(|&s| s == Slot::Any) {
                Some(i) => i,
                None => continue,
            };
            let mut refined_slots = mask.slots().to_vec();
            refined_slots[any_slot] = Slot::Lit;
            let refined = Mask::new(refined_slots).unwrap();
            // Where does the new literal land in the literal tuple?
            let insert_at = mask.slots()[..any_slot]
                .iter()
                .filter(|&&s| s == Slot::Lit)
                .count();
            for (literals, stats) in store.table(&refined).unwrap().sorted_entries() {
                let mut coarse = literals.to_vec();
                coarse.remove(insert_at);
                let coarse_pattern = PatternKey::new(mask.clone(), coarse).unwrap();
                let coarse_count = store.count(&coarse_pattern).unwrap();
                assert!(
                    coarse_count >= stats.total,
                    "coarse {coarse_pattern} = {coarse_count} < refined {}",
                    stats.total
                );
            }
        }
    }
}

#[test]
fn partitioned_build_merges_to_the_whole() {
    for seed in 400..406u64 {
        let rc = random_stream(seed, 3000);
        let n_max = 2;
        if rc.stream.chunk_len() < n_max + 1 || rc.stream.chunks().len() < 2 {
            continue;
        }
        let spec = RuleSetSpec::new(RuleFamily::All, n_max).unwrap();
        let cfg = StoreConfig::explicit(required_masks(&spec), n_max);
        let whole = build(&rc.stream, &cfg).unwrap();

        let contents: Vec<Vec<TokenId>> =
            rc.stream.chunks().iter().map(|c| c.content().to_vec()).collect();
        let split = contents.len() / 2;
        let half = |range: &[Vec<TokenId>]| {
            let s = ChunkedStream::from_raw_chunks(
                range.to_vec(),
                rc.vocab,
                TokenId(0),
                rc.stream.chunk_len(),
            )
            .unwrap();
            build(&s, &cfg).unwrap()
        };
        let merged = CountStore::merge(half(&contents[..split]), half(&contents[split..])).unwrap();
        assert_eq!(merged, whole, "seed {seed}");
    }
}

#[test]
fn save_load_round_trip_on_random_store() {
    let rc = random_stream(7, 5000);
    let store = build_all(&rc.stream, 3.min(rc.stream.chunk_len() - 1));
    let mut bytes = Vec::new();
    store.to_writer(&mut bytes).unwrap();
    let back = CountStore::from_reader(&bytes[..]).unwrap();
    assert_eq!(store, back);
    let mut bytes2 = Vec::new();
    back.to_writer(&mut bytes2).unwrap();
    assert_eq!(bytes, bytes2);
}
