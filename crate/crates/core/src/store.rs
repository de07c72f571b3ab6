//! Masked n-gram count tables.
//!
//! For each enabled mask (a pattern of literal/wildcard slots, first slot
//! literal) the store maps a literal tuple to the total count of windows
//! matching the pattern and to the count of each next token. Tabulation
//! runs over windows of length `mask len + 1`: the first `len` positions
//! must match the pattern, the last position is the next token. The total
//! is therefore the denominator count "pattern followed by any token", and
//! it always equals the sum of the next-token counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use smallvec::SmallVec;

use crate::corpus::{ChunkedStream, TokenId};
use crate::error::{Error, Result};

/// Magic bytes of the store file format.
pub const STORE_MAGIC: &[u8; 5] = b"NGRS1";
pub const STORE_VERSION: u16 = 1;

/// Longest mask representable in store files (LIT bitmask is a u32).
pub const MASK_LEN_LIMIT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Lit,
    Any,
}

/// A context pattern shape: literal or wildcard per slot. The empty mask
/// stands for the empty (unigram) context and is always tabulated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    slots: Vec<Slot>,
}

impl Mask {
    pub fn new(slots: Vec<Slot>) -> Result<Self> {
        if slots.len() > MASK_LEN_LIMIT {
            return Err(Error::InvalidMask(format!(
                "mask length {} exceeds limit {MASK_LEN_LIMIT}",
                slots.len()
            )));
        }
        if let Some(&first) = slots.first() {
            if first != Slot::Lit {
                return Err(Error::InvalidMask("first slot must be a literal".into()));
            }
        }
        Ok(Self { slots })
    }

    /// The empty mask: unigram (no context) pattern.
    pub fn unigram() -> Self {
        Self { slots: Vec::new() }
    }

    pub fn all_lit(len: usize) -> Result<Self> {
        Self::new(vec![Slot::Lit; len])
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn lit_count(&self) -> usize {
        self.slots.iter().filter(|&&s| s == Slot::Lit).count()
    }

    /// Bitmask with bit `i` set when slot `i` is a literal.
    pub fn lit_bits(&self) -> u32 {
        let mut bits = 0u32;
        for (i, &s) in self.slots.iter().enumerate() {
            if s == Slot::Lit {
                bits |= 1 << i;
            }
        }
        bits
    }

    /// Bitmask with bit `i` set when slot `i` is a wildcard. All-literal
    /// masks sort first under the (len, any_bits) order.
    pub fn any_bits(&self) -> u32 {
        let mut bits = 0u32;
        for (i, &s) in self.slots.iter().enumerate() {
            if s == Slot::Any {
                bits |= 1 << i;
            }
        }
        bits
    }

    fn from_descriptor(len: u8, lit_bits: u32) -> Result<Self> {
        let len = len as usize;
        if len > MASK_LEN_LIMIT {
            return Err(Error::Format(format!("mask length {len} exceeds limit")));
        }
        let slots = (0..len)
            .map(|i| if lit_bits & (1 << i) != 0 { Slot::Lit } else { Slot::Any })
            .collect();
        Mask::new(slots)
    }

    /// Parse the compact `L.L` syntax: `L` literal, `.` wildcard.
    pub fn parse(text: &str) -> Result<Self> {
        let mut slots = Vec::with_capacity(text.len());
        for c in text.chars() {
            match c {
                'L' => slots.push(Slot::Lit),
                '.' => slots.push(Slot::Any),
                other => {
                    return Err(Error::InvalidMask(format!("unexpected character {other:?}")))
                }
            }
        }
        Mask::new(slots)
    }
}

impl std::fmt::Display for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &s in &self.slots {
            f.write_str(if s == Slot::Lit { "L" } else { "." })?;
        }
        Ok(())
    }
}

impl PartialOrd for Mask {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Mask {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.len(), self.any_bits()).cmp(&(other.len(), other.any_bits()))
    }
}

/// A concrete masked pattern: a mask plus one literal per literal slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternKey {
    mask: Mask,
    literals: Vec<TokenId>,
}

impl PatternKey {
    pub fn new(mask: Mask, literals: Vec<TokenId>) -> Result<Self> {
        if literals.len() != mask.lit_count() {
            return Err(Error::InvalidPattern(format!(
                "{} literals for mask {} with {} literal slots",
                literals.len(),
                mask,
                mask.lit_count()
            )));
        }
        Ok(Self { mask, literals })
    }

    pub fn unigram() -> Self {
        Self { mask: Mask::unigram(), literals: Vec::new() }
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn literals(&self) -> &[TokenId] {
        &self.literals
    }

    /// Parse the CLI syntax: space-separated token ids with `*` wildcards,
    /// e.g. `5 * 7`. The empty string is the unigram pattern.
    pub fn parse(text: &str) -> Result<Self> {
        let mut slots = Vec::new();
        let mut literals = Vec::new();
        for field in text.split_whitespace() {
            if field == "*" {
                slots.push(Slot::Any);
            } else {
                let id: u32 = field
                    .parse()
                    .map_err(|_| Error::InvalidPattern(format!("bad token id {field:?}")))?;
                slots.push(Slot::Lit);
                literals.push(TokenId(id));
            }
        }
        let mask = Mask::new(slots)
            .map_err(|e| Error::InvalidPattern(format!("{e}")))?;
        PatternKey::new(mask, literals)
    }

    /// Does a window of length `mask.len()` match this pattern?
    pub fn matches(&self, window: &[TokenId]) -> bool {
        if window.len() != self.mask.len() {
            return false;
        }
        let mut lit = self.literals.iter();
        for (&slot, &tok) in self.mask.slots().iter().zip(window) {
            if slot == Slot::Lit && *lit.next().expect("arity checked") != tok {
                return false;
            }
        }
        true
    }
}

impl std::fmt::Display for PatternKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut lit = self.literals.iter();
        let mut first = true;
        for &slot in self.mask.slots() {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            match slot {
                Slot::Lit => write!(f, "{}", lit.next().expect("arity checked"))?,
                Slot::Any => f.write_str("*")?,
            }
        }
        Ok(())
    }
}

/// Counts stored per pattern: the trailing-any total and the per-next-token
/// breakdown, sorted by token id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternStats {
    pub total: u64,
    pub next: Vec<(TokenId, u64)>,
}

/// The count table of one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTable {
    mask: Mask,
    entries: HashMap<Box<[TokenId]>, PatternStats>,
}

impl ContextTable {
    fn empty(mask: Mask) -> Self {
        Self { mask, entries: HashMap::new() }
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, literals: &[TokenId]) -> Option<&PatternStats> {
        self.entries.get(literals)
    }

    /// Entries sorted by literal tuple (deterministic iteration).
    pub fn sorted_entries(&self) -> Vec<(&[TokenId], &PatternStats)> {
        let mut v: Vec<(&[TokenId], &PatternStats)> =
            self.entries.iter().map(|(k, s)| (k.as_ref(), s)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

/// Which masks to tabulate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSelection {
    /// Every mask of length 1..=n_max whose first slot is a literal.
    AllFirstLit,
    /// An explicit set (the unigram table is always added).
    Explicit(BTreeSet<Mask>),
}

/// Working-set bound before partial tallies spill to sorted disk runs.
pub const DEFAULT_SPILL_THRESHOLD: usize = 12_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreConfig {
    /// Maximum context pattern length.
    pub n_max: usize,
    pub masks: MaskSelection,
    /// Spill partial tallies once this many entries accumulate in memory;
    /// `None` keeps everything resident.
    pub spill_threshold: Option<usize>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            n_max: 7,
            masks: MaskSelection::AllFirstLit,
            spill_threshold: Some(DEFAULT_SPILL_THRESHOLD),
        }
    }
}

impl StoreConfig {
    pub fn explicit(masks: BTreeSet<Mask>, n_max: usize) -> Self {
        Self { n_max, masks: MaskSelection::Explicit(masks), ..Self::default() }
    }

    /// The concrete non-empty masks to tabulate.
    pub fn resolve_masks(&self) -> Result<BTreeSet<Mask>> {
        if self.n_max == 0 || self.n_max > MASK_LEN_LIMIT {
            return Err(Error::StoreConfig(format!(
                "n_max {} out of range 1..={MASK_LEN_LIMIT}",
                self.n_max
            )));
        }
        match &self.masks {
            MaskSelection::AllFirstLit => {
                let mut set = BTreeSet::new();
                for len in 1..=self.n_max {
                    // First slot literal, the rest free.
                    for bits in 0..(1u32 << (len - 1)) {
                        let mut slots = Vec::with_capacity(len);
                        slots.push(Slot::Lit);
                        for i in 0..len - 1 {
                            slots.push(if bits & (1 << i) != 0 { Slot::Any } else { Slot::Lit });
                        }
                        set.insert(Mask::new(slots)?);
                    }
                }
                Ok(set)
            }
            MaskSelection::Explicit(set) => {
                for mask in set {
                    if mask.is_empty() {
                        return Err(Error::StoreConfig(
                            "explicit mask set must not contain the empty mask".into(),
                        ));
                    }
                    if mask.len() > self.n_max {
                        return Err(Error::StoreConfig(format!(
                            "mask {} longer than n_max {}",
                            mask, self.n_max
                        )));
                    }
                }
                Ok(set.clone())
            }
        }
    }
}

/// Whether counting ran over fixed-length chunks or whole documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Chunked,
    Document,
}

/// Immutable masked count tables plus identifying metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CountStore {
    vocab_size: u32,
    bos: TokenId,
    n_max: usize,
    granularity: Granularity,
    /// Commutative (wrapping-sum) hash over chunk contents, so that stores
    /// built from partitions of the same stream merge to the same value.
    fingerprint: u64,
    tables: BTreeMap<Mask, ContextTable>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>, seed: u64) -> u64 {
    let mut h = seed;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn chunk_hash(content: &[TokenId]) -> u64 {
    fnv1a(
        content.iter().flat_map(|t| t.0.to_le_bytes()),
        fnv1a((content.len() as u64).to_le_bytes(), FNV_OFFSET),
    )
}

fn stream_fingerprint(stream: &ChunkedStream) -> u64 {
    stream
        .chunks()
        .iter()
        .fold(0u64, |acc, c| acc.wrapping_add(chunk_hash(c.content())))
}

/// Build count tables for the configured masks over every valid window of
/// the stream. Windows are partitioned by chunk across worker threads;
/// each worker tallies into a private table and, past the spill
/// threshold, drains it to a sorted disk run. The runs (plus whatever
/// stayed resident) merge by entrywise sum into the final tables.
pub fn build(stream: &ChunkedStream, cfg: &StoreConfig) -> Result<CountStore> {
    build_with_granularity(stream, cfg, Granularity::Chunked)
}

pub fn build_with_granularity(
    stream: &ChunkedStream,
    cfg: &StoreConfig,
    granularity: Granularity,
) -> Result<CountStore> {
    let masks = cfg.resolve_masks()?;
    if cfg.n_max + 1 > stream.chunk_len() {
        return Err(Error::StoreConfig(format!(
            "n_max {} + 1 exceeds chunk length {}",
            cfg.n_max,
            stream.chunk_len()
        )));
    }
    // Unigram table first, then the configured masks in (len, bits) order.
    let mut all_masks: Vec<Mask> = vec![Mask::unigram()];
    all_masks.extend(masks.iter().cloned());
    let bos = stream.bos();

    let per_task_threshold = cfg
        .spill_threshold
        .map(|t| (t / rayon::current_num_threads().max(1)).max(16));
    let spill = SpillDir::new();

    let masks_ref = &all_masks;
    let spill_ref = &spill;
    let acc = stream
        .chunks()
        .par_iter()
        .try_fold(TallyAcc::default, |mut acc: TallyAcc, chunk| -> Result<TallyAcc> {
            let content = chunk.content();
            for (mi, mask) in masks_ref.iter().enumerate() {
                let win_len = mask.len() + 1;
                if content.len() < win_len {
                    continue;
                }
                'w: for w in content.windows(win_len) {
                    // BOS allowed at index 0 only.
                    for &t in &w[1..] {
                        if t == bos {
                            continue 'w;
                        }
                    }
                    let mut key = KeyBuf::new();
                    for (i, &slot) in mask.slots().iter().enumerate() {
                        if slot == Slot::Lit {
                            key.push(w[i]);
                        }
                    }
                    key.push(w[win_len - 1]);
                    *acc.map.entry((mi as u32, key)).or_insert(0) += 1;
                }
                acc.spill_if_needed(per_task_threshold, spill_ref)?;
            }
            Ok(acc)
        })
        .try_reduce(TallyAcc::default, |a, b| {
            let mut merged = a.absorb(b);
            merged.spill_if_needed(per_task_threshold, spill_ref)?;
            Ok(merged)
        })?;

    let mut runs: Vec<RunSource> = spill
        .take_files()
        .into_iter()
        .map(RunSource::open)
        .collect::<Result<_>>()?;
    if !acc.map.is_empty() {
        runs.push(RunSource::from_map(acc.map));
    }

    let mut tables = BTreeMap::new();
    for mask in &all_masks {
        tables.insert(mask.clone(), ContextTable::empty(mask.clone()));
    }
    merge_runs(runs, |(mask_idx, key), count| {
        let mask = &all_masks[mask_idx as usize];
        let table = tables.get_mut(mask).expect("table preallocated");
        let (literals, next) = key.split_at(mask.lit_count());
        let next = next[0];
        let entry = table
            .entries
            .entry(literals.to_vec().into_boxed_slice())
            .or_insert_with(|| PatternStats { total: 0, next: Vec::new() });
        entry.total += count;
        // Keys arrive in global sorted order, so next tokens append sorted.
        entry.next.push((next, count));
    })?;

    Ok(CountStore {
        vocab_size: stream.vocab_size(),
        bos,
        n_max: cfg.n_max,
        granularity,
        fingerprint: stream_fingerprint(stream),
        tables,
    })
}

/// Literals plus the next token, inline up to the default pattern cap.
type KeyBuf = SmallVec<[TokenId; 8]>;
type TallyKey = (u32, KeyBuf);

#[derive(Default)]
struct TallyAcc {
    map: HashMap<TallyKey, u64>,
}

impl TallyAcc {
    fn absorb(mut self, other: TallyAcc) -> TallyAcc {
        let (mut big, small) = if self.map.len() >= other.map.len() {
            (self.map, other.map)
        } else {
            (other.map, self.map)
        };
        for (k, v) in small {
            *big.entry(k).or_insert(0) += v;
        }
        self.map = big;
        self
    }

    fn spill_if_needed(&mut self, threshold: Option<usize>, spill: &SpillDir) -> Result<()> {
        let Some(threshold) = threshold else { return Ok(()) };
        if self.map.len() < threshold {
            return Ok(());
        }
        let mut pairs: Vec<(TallyKey, u64)> = std::mem::take(&mut self.map).into_iter().collect();
        pairs.sort_unstable();
        spill.write_run(&pairs)
    }
}

/// Temp directory holding sorted spill runs for one build. Created lazily,
/// removed on drop.
struct SpillDir {
    dir: std::sync::Mutex<SpillState>,
}

#[derive(Default)]
struct SpillState {
    path: Option<std::path::PathBuf>,
    files: Vec<std::path::PathBuf>,
    counter: u64,
}

impl SpillDir {
    fn new() -> Self {
        Self { dir: std::sync::Mutex::new(SpillState::default()) }
    }

    fn write_run(&self, pairs: &[(TallyKey, u64)]) -> Result<()> {
        let path = {
            let mut state = self.dir.lock().expect("spill lock");
            if state.path.is_none() {
                let dir = std::env::temp_dir().join(format!(
                    "ngram-build-{}-{:x}",
                    std::process::id(),
                    &raw const *self as usize
                ));
                std::fs::create_dir_all(&dir)?;
                state.path = Some(dir);
            }
            let file = state
                .path
                .as_ref()
                .expect("just created")
                .join(format!("run-{:06}.bin", state.counter));
            state.counter += 1;
            state.files.push(file.clone());
            file
        };
        let mut w = BufWriter::new(File::create(&path)?);
        for ((mask_idx, key), count) in pairs {
            w.write_all(&mask_idx.to_le_bytes())?;
            w.write_all(&[key.len() as u8])?;
            for t in key {
                w.write_all(&t.0.to_le_bytes())?;
            }
            w.write_all(&count.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    fn take_files(&self) -> Vec<std::path::PathBuf> {
        std::mem::take(&mut self.dir.lock().expect("spill lock").files)
    }
}

impl Drop for SpillDir {
    fn drop(&mut self) {
        if let Some(path) = self.dir.lock().ok().and_then(|s| s.path.clone()) {
            let _ = std::fs::remove_dir_all(path);
        }
    }
}

/// One sorted run: either the resident tally or a spilled file.
enum RunSource {
    Mem(std::vec::IntoIter<(TallyKey, u64)>),
    File(BufReader<File>),
}

impl RunSource {
    fn from_map(map: HashMap<TallyKey, u64>) -> Self {
        let mut pairs: Vec<(TallyKey, u64)> = map.into_iter().collect();
        pairs.sort_unstable();
        RunSource::Mem(pairs.into_iter())
    }

    fn open(path: std::path::PathBuf) -> Result<Self> {
        Ok(RunSource::File(BufReader::new(File::open(path)?)))
    }

    fn next(&mut self) -> Result<Option<(TallyKey, u64)>> {
        match self {
            RunSource::Mem(iter) => Ok(iter.next()),
            RunSource::File(reader) => {
                let mut mask_idx = [0u8; 4];
                match reader.read(&mut mask_idx)? {
                    0 => return Ok(None),
                    4 => {}
                    n => {
                        reader.read_exact(&mut mask_idx[n..])?;
                    }
                }
                let key_len = read_u8(reader)? as usize;
                let mut key = KeyBuf::new();
                for _ in 0..key_len {
                    key.push(TokenId(read_u32(reader)?));
                }
                let count = read_u64(reader)?;
                Ok(Some(((u32::from_le_bytes(mask_idx), key), count)))
            }
        }
    }
}

/// K-way merge of sorted runs, summing counts of equal keys and feeding
/// each aggregated (key, count) to the sink in ascending key order.
fn merge_runs(
    mut runs: Vec<RunSource>,
    mut sink: impl FnMut(TallyKey, u64),
) -> Result<()> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut heap: BinaryHeap<Reverse<(TallyKey, u64, usize)>> = BinaryHeap::new();
    for (i, run) in runs.iter_mut().enumerate() {
        if let Some((key, count)) = run.next()? {
            heap.push(Reverse((key, count, i)));
        }
    }
    let mut current: Option<(TallyKey, u64)> = None;
    while let Some(Reverse((key, count, i))) = heap.pop() {
        if let Some((next_key, next_count)) = runs[i].next()? {
            heap.push(Reverse((next_key, next_count, i)));
        }
        match &mut current {
            Some((cur_key, cur_count)) if *cur_key == key => *cur_count += count,
            Some((cur_key, cur_count)) => {
                sink(std::mem::take(cur_key), *cur_count);
                current = Some((key, count));
            }
            None => current = Some((key, count)),
        }
    }
    if let Some((key, count)) = current {
        sink(key, count);
    }
    Ok(())
}

impl CountStore {
    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Enabled masks, unigram included, in (len, bits) order.
    pub fn masks(&self) -> impl Iterator<Item = &Mask> {
        self.tables.keys()
    }

    pub fn is_mask_enabled(&self, mask: &Mask) -> bool {
        self.tables.contains_key(mask)
    }

    pub fn table(&self, mask: &Mask) -> Result<&ContextTable> {
        self.tables
            .get(mask)
            .ok_or_else(|| Error::MaskNotEnabled(mask.to_string()))
    }

    /// Per-mask entry counts for the stats readout.
    pub fn mask_stats(&self) -> Vec<(Mask, usize)> {
        self.tables.iter().map(|(m, t)| (m.clone(), t.len())).collect()
    }

    /// Stats for a pattern, `None` when the pattern was never seen.
    /// Errors if the pattern's mask was not tabulated, so unbuilt masks are
    /// never mistaken for unseen patterns.
    pub fn stats(&self, pattern: &PatternKey) -> Result<Option<&PatternStats>> {
        Ok(self.table(pattern.mask())?.get(pattern.literals()))
    }

    /// Total count for the pattern (the trailing-any denominator). Unseen
    /// patterns count 0.
    pub fn count(&self, pattern: &PatternKey) -> Result<u64> {
        Ok(self.stats(pattern)?.map_or(0, |s| s.total))
    }

    /// Total plus the full next-token count map; `(0, empty)` when unseen.
    pub fn next_token_counts(&self, pattern: &PatternKey) -> Result<(u64, Vec<(TokenId, u64)>)> {
        Ok(match self.stats(pattern)? {
            Some(s) => (s.total, s.next.clone()),
            None => (0, Vec::new()),
        })
    }

    /// Entrywise sum of two stores built with identical configs over
    /// disjoint partitions of a stream. Associative and commutative.
    pub fn merge(mut a: CountStore, b: CountStore) -> Result<CountStore> {
        if a.vocab_size != b.vocab_size || a.bos != b.bos {
            return Err(Error::ConfigMismatch("vocab/bos differ".into()));
        }
        if a.n_max != b.n_max || a.granularity != b.granularity {
            return Err(Error::ConfigMismatch("n_max/granularity differ".into()));
        }
        let masks_a: Vec<&Mask> = a.tables.keys().collect();
        let masks_b: Vec<&Mask> = b.tables.keys().collect();
        if masks_a != masks_b {
            return Err(Error::ConfigMismatch("mask sets differ".into()));
        }
        for (mask, src) in b.tables {
            let dst = a.tables.get_mut(&mask).expect("mask sets checked equal");
            for (key, stats) in src.entries {
                match dst.entries.get_mut(&key) {
                    None => {
                        dst.entries.insert(key, stats);
                    }
                    Some(existing) => {
                        existing.total += stats.total;
                        existing.next = merge_next(&existing.next, &stats.next);
                    }
                }
            }
        }
        a.fingerprint = a.fingerprint.wrapping_add(b.fingerprint);
        Ok(a)
    }

    /// Serialize to the versioned binary store format (little-endian, with
    /// a trailing FNV-1a checksum).
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = ChecksumWriter::new(writer);
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&self.vocab_size.to_le_bytes())?;
        w.write_all(&self.bos.0.to_le_bytes())?;
        w.write_all(&[self.n_max as u8])?;
        w.write_all(&[match self.granularity {
            Granularity::Chunked => 0u8,
            Granularity::Document => 1u8,
        }])?;
        w.write_all(&self.fingerprint.to_le_bytes())?;
        w.write_all(&(self.tables.len() as u32).to_le_bytes())?;
        for (mask, table) in &self.tables {
            w.write_all(&[mask.len() as u8])?;
            w.write_all(&mask.lit_bits().to_le_bytes())?;
            w.write_all(&(table.len() as u64).to_le_bytes())?;
            for (literals, stats) in table.sorted_entries() {
                for t in literals {
                    w.write_all(&t.0.to_le_bytes())?;
                }
                w.write_all(&stats.total.to_le_bytes())?;
                w.write_all(&(stats.next.len() as u32).to_le_bytes())?;
                for (tok, count) in &stats.next {
                    w.write_all(&tok.0.to_le_bytes())?;
                    w.write_all(&count.to_le_bytes())?;
                }
            }
        }
        let digest = w.digest();
        let mut inner = w.into_inner();
        inner.write_all(&digest.to_le_bytes())?;
        inner.flush()?;
        Ok(())
    }

    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() < STORE_MAGIC.len() + 8 {
            return Err(Error::Format("store file truncated".into()));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8-byte tail"));
        if fnv1a(payload.iter().copied(), FNV_OFFSET) != stored {
            return Err(Error::ChecksumMismatch);
        }
        let mut r = payload;
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format("bad store magic".into()));
        }
        let version = read_u16(&mut r)?;
        if version != STORE_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: STORE_VERSION });
        }
        let vocab_size = read_u32(&mut r)?;
        let bos = TokenId(read_u32(&mut r)?);
        let n_max = read_u8(&mut r)? as usize;
        let granularity = match read_u8(&mut r)? {
            0 => Granularity::Chunked,
            1 => Granularity::Document,
            other => return Err(Error::Format(format!("bad granularity byte {other}"))),
        };
        let fingerprint = read_u64(&mut r)?;
        let mask_count = read_u32(&mut r)?;
        let mut tables = BTreeMap::new();
        for _ in 0..mask_count {
            let len = read_u8(&mut r)?;
            let lit_bits = read_u32(&mut r)?;
            let mask = Mask::from_descriptor(len, lit_bits)?;
            let entry_count = read_u64(&mut r)?;
            let mut table = ContextTable::empty(mask.clone());
            let lit_count = mask.lit_count();
            for _ in 0..entry_count {
                let mut literals = Vec::with_capacity(lit_count);
                for _ in 0..lit_count {
                    literals.push(TokenId(read_u32(&mut r)?));
                }
                let total = read_u64(&mut r)?;
                let next_len = read_u32(&mut r)? as usize;
                let mut next = Vec::with_capacity(next_len);
                for _ in 0..next_len {
                    let tok = TokenId(read_u32(&mut r)?);
                    let count = read_u64(&mut r)?;
                    next.push((tok, count));
                }
                table
                    .entries
                    .insert(literals.into_boxed_slice(), PatternStats { total, next });
            }
            tables.insert(mask, table);
        }
        Ok(CountStore { vocab_size, bos, n_max, granularity, fingerprint, tables })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}

fn merge_next(a: &[(TokenId, u64)], b: &[(TokenId, u64)]) -> Vec<(TokenId, u64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

struct ChecksumWriter<W: Write> {
    inner: W,
    hash: u64,
}

impl<W: Write> ChecksumWriter<W> {
    fn new(inner: W) -> Self {
        Self { inner, hash: FNV_OFFSET }
    }

    fn digest(&self) -> u64 {
        self.hash
    }

    fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> Write for ChecksumWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        for &b in &buf[..n] {
            self.hash ^= b as u64;
            self.hash = self.hash.wrapping_mul(FNV_PRIME);
        }
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
