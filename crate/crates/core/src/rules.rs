//! Context rules: keep/drop/marginalize strings, their canonical form,
//! ruleset enumeration, evaluation against the count store, and the
//! longest-suffix backoff baseline.
//!
//! A sigma string assigns one of `+` (keep), `-` (drop), `*` (marginalize)
//! to each recent context position, written left to right from the oldest
//! position. Applying it to a concrete context yields a masked pattern:
//! kept positions become literals, marginalized positions become single
//! token wildcards, dropped positions vanish. Two strings define the same
//! rule when they produce the same pattern function, which happens exactly
//! when they agree after (a) stripping leading drops and wildcards and
//! (b) ignoring the order of drops and wildcards between kept positions.
//!
//! One caveat on (a): a leading wildcard demands a predecessor token
//! inside the chunk while the stripped pattern does not, so the two can
//! count differently right at chunk starts. Counting always runs on the
//! canonical (stripped) pattern; the two forms are never mixed.

use std::collections::BTreeSet;

use crate::corpus::TokenId;
use crate::dist::SparseDistribution;
use crate::error::{Error, Result};
use crate::store::{CountStore, Mask, PatternKey, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SigmaSym {
    Keep,
    Drop,
    Marg,
}

/// A raw keep/drop/marginalize string. Index 0 is the oldest position
/// covered; the final symbol applies to the most recent context token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sigma(pub Vec<SigmaSym>);

impl std::str::FromStr for Sigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut syms = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '+' => syms.push(SigmaSym::Keep),
                '-' => syms.push(SigmaSym::Drop),
                '*' => syms.push(SigmaSym::Marg),
                other => {
                    return Err(Error::InvalidSigma(format!("unexpected character {other:?}")))
                }
            }
        }
        Ok(Sigma(syms))
    }
}

impl std::fmt::Display for Sigma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &s in &self.0 {
            f.write_str(match s {
                SigmaSym::Keep => "+",
                SigmaSym::Drop => "-",
                SigmaSym::Marg => "*",
            })?;
        }
        Ok(())
    }
}

/// The semantic normal form of a sigma string.
///
/// `mask` is the contiguous pattern shape the rule looks up; `offsets`
/// holds, per literal slot, the context offset (1 = most recent token) the
/// literal is read from. The wildcard slots consume no context, so a rule
/// applies to any context at least `depth()` long. Equal values describe
/// identical pattern functions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalRule {
    mask: Mask,
    offsets: Vec<u32>,
}

impl CanonicalRule {
    pub fn new(mask: Mask, offsets: Vec<u32>) -> Result<Self> {
        if offsets.len() != mask.lit_count() {
            return Err(Error::InvalidRule(format!(
                "{} offsets for mask {} with {} literal slots",
                offsets.len(),
                mask,
                mask.lit_count()
            )));
        }
        if !offsets.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::InvalidRule("offsets must be strictly decreasing".into()));
        }
        if offsets.last().is_some_and(|&o| o == 0) {
            return Err(Error::InvalidRule("offsets start at 1".into()));
        }
        // Wildcard slots must fit between / after the literal offsets.
        let mut lit_iter = offsets.iter().copied();
        let mut prev: Option<u32> = None;
        let mut pending_any = 0u32;
        for &slot in mask.slots() {
            match slot {
                Slot::Any => pending_any += 1,
                Slot::Lit => {
                    let here = lit_iter.next().expect("arity checked");
                    if let Some(p) = prev {
                        if pending_any > p - here - 1 {
                            return Err(Error::InvalidRule(format!(
                                "{pending_any} wildcards do not fit between offsets {p} and {here}"
                            )));
                        }
                    }
                    prev = Some(here);
                    pending_any = 0;
                }
            }
        }
        if let Some(last) = prev {
            if pending_any > last - 1 {
                return Err(Error::InvalidRule(format!(
                    "{pending_any} trailing wildcards do not fit below offset {last}"
                )));
            }
        } else if pending_any > 0 {
            return Err(Error::InvalidRule("wildcards without any kept position".into()));
        }
        Ok(Self { mask, offsets })
    }

    /// The unigram rule (empty sigma): looks up the empty context pattern.
    pub fn unigram() -> Self {
        Self { mask: Mask::unigram(), offsets: Vec::new() }
    }

    /// The plain suffix rule over the last `len` tokens.
    pub fn suffix(len: usize) -> Result<Self> {
        if len == 0 {
            return Ok(Self::unigram());
        }
        Self::new(Mask::all_lit(len)?, (1..=len as u32).rev().collect())
    }

    pub fn is_unigram(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    /// Offset of the oldest position the rule reads; the minimum context
    /// length the rule applies to.
    pub fn depth(&self) -> usize {
        self.offsets.first().map_or(0, |&o| o as usize)
    }

    /// Apply the rule to a concrete context (most recent token last).
    pub fn rule_context(&self, context: &[TokenId]) -> Result<PatternKey> {
        if context.len() < self.depth() {
            return Err(Error::ContextTooShort { len: context.len(), depth: self.depth() });
        }
        let literals = self
            .offsets
            .iter()
            .map(|&o| context[context.len() - o as usize])
            .collect();
        PatternKey::new(self.mask.clone(), literals)
    }

    /// Look the rule context up in the store and normalize the next-token
    /// counts. `None` when the pattern was never seen (the rule is
    /// undefined for this context).
    pub fn evaluate(
        &self,
        context: &[TokenId],
        store: &CountStore,
    ) -> Result<Option<SparseDistribution>> {
        let pattern = self.rule_context(context)?;
        match store.stats(&pattern)? {
            None => Ok(None),
            Some(stats) if stats.total == 0 => Ok(None),
            Some(stats) => Ok(Some(SparseDistribution::from_counts(&stats.next, stats.total))),
        }
    }

    /// Render the canonical sigma string: wildcards packed toward the
    /// recent end of each gap, drops before them.
    pub fn canonical_sigma(&self) -> Sigma {
        let depth = self.depth();
        let mut syms = vec![SigmaSym::Drop; depth];
        let at = |o: u32| depth - o as usize; // string index of offset o
        let mut lit_iter = self.offsets.iter().copied();
        let mut pending_any = 0u32;
        for &slot in self.mask.slots() {
            match slot {
                Slot::Any => pending_any += 1,
                Slot::Lit => {
                    let here = lit_iter.next().expect("arity checked");
                    // Wildcards of the gap go right before this keep.
                    for i in 0..pending_any {
                        syms[at(here) - 1 - i as usize] = SigmaSym::Marg;
                    }
                    syms[at(here)] = SigmaSym::Keep;
                    pending_any = 0;
                }
            }
        }
        // Trailing wildcards at the most recent positions.
        for i in 0..pending_any {
            syms[depth - 1 - i as usize] = SigmaSym::Marg;
        }
        Sigma(syms)
    }
}

impl PartialOrd for CanonicalRule {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CanonicalRule {
    /// Ascending (depth, slot count, mask wildcard bits, offsets); the
    /// ordering that optimal-rule tie-breaking relies on.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.depth(), self.mask.len(), self.mask.any_bits(), &self.offsets).cmp(&(
            other.depth(),
            other.mask.len(),
            other.mask.any_bits(),
            &other.offsets,
        ))
    }
}

impl std::fmt::Display for CanonicalRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.canonical_sigma())
    }
}

/// Reduce a sigma string to its canonical rule: skip leading drops and
/// wildcards, then collect kept positions as literal slots and surviving
/// wildcards as wildcard slots.
pub fn canonicalize(sigma: &Sigma) -> CanonicalRule {
    let len = sigma.0.len();
    let first_keep = sigma.0.iter().position(|&s| s == SigmaSym::Keep);
    let Some(start) = first_keep else {
        return CanonicalRule::unigram();
    };
    let mut slots = Vec::new();
    let mut offsets = Vec::new();
    for (i, &sym) in sigma.0.iter().enumerate().skip(start) {
        let offset = (len - i) as u32;
        match sym {
            SigmaSym::Keep => {
                slots.push(Slot::Lit);
                offsets.push(offset);
            }
            SigmaSym::Marg => slots.push(Slot::Any),
            SigmaSym::Drop => {}
        }
    }
    CanonicalRule::new(Mask::new(slots).expect("first slot is a keep"), offsets)
        .expect("slots and offsets are consistent by construction")
}

/// The rule families: plain suffixes, keep/drop subsets, or the full
/// keep/drop/marginalize space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleFamily {
    Suffix,
    Subgram,
    All,
}

impl std::str::FromStr for RuleFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "suffix" => Ok(RuleFamily::Suffix),
            "subgram" => Ok(RuleFamily::Subgram),
            "all" => Ok(RuleFamily::All),
            other => Err(Error::InvalidRule(format!("unknown rule family {other:?}"))),
        }
    }
}

impl std::fmt::Display for RuleFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RuleFamily::Suffix => "suffix",
            RuleFamily::Subgram => "subgram",
            RuleFamily::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RuleSetSpec {
    pub family: RuleFamily,
    /// Maximum sigma length (= maximum rule depth).
    pub max_context: usize,
}

impl RuleSetSpec {
    pub fn new(family: RuleFamily, max_context: usize) -> Result<Self> {
        if max_context < 1 {
            return Err(Error::InvalidRule("max context must be at least 1".into()));
        }
        Ok(Self { family, max_context })
    }
}

/// All distinct canonical rules of the family with depth <= max_context,
/// the unigram rule included, in ascending canonical order.
pub fn enumerate_ruleset(spec: &RuleSetSpec) -> Vec<CanonicalRule> {
    let m = spec.max_context;
    let mut rules = vec![CanonicalRule::unigram()];
    match spec.family {
        RuleFamily::Suffix => {
            for d in 1..=m {
                rules.push(CanonicalRule::suffix(d).expect("depth within limits"));
            }
        }
        RuleFamily::Subgram => {
            for d in 1..=m {
                // Offsets: d plus any subset of 1..d, all slots literal.
                for bits in 0..(1u64 << (d - 1)) {
                    let mut offsets = vec![d as u32];
                    for o in (1..d).rev() {
                        if bits & (1 << (o - 1)) != 0 {
                            offsets.push(o as u32);
                        }
                    }
                    let mask = Mask::all_lit(offsets.len()).expect("within limits");
                    rules.push(CanonicalRule::new(mask, offsets).expect("valid by construction"));
                }
            }
        }
        RuleFamily::All => {
            for d in 1..=m {
                let mut slots = vec![Slot::Lit];
                let mut offsets = vec![d as u32];
                gen_all(d as u32, &mut slots, &mut offsets, &mut rules);
            }
        }
    }
    rules.sort();
    rules
}

/// Extend a partial rule whose last literal sits at `last`: either stop
/// (choosing how many trailing wildcards to keep), or choose the next
/// literal offset and the wildcard count in the gap before it.
fn gen_all(last: u32, slots: &mut Vec<Slot>, offsets: &mut Vec<u32>, out: &mut Vec<CanonicalRule>) {
    for trailing in 0..=last - 1 {
        let mut mask_slots = slots.clone();
        mask_slots.extend(std::iter::repeat_n(Slot::Any, trailing as usize));
        let mask = Mask::new(mask_slots).expect("first slot literal");
        out.push(CanonicalRule::new(mask, offsets.clone()).expect("valid by construction"));
    }
    for next in (1..last).rev() {
        for gap_any in 0..=(last - next - 1) {
            let base_len = slots.len();
            slots.extend(std::iter::repeat_n(Slot::Any, gap_any as usize));
            slots.push(Slot::Lit);
            offsets.push(next);
            gen_all(next, slots, offsets, out);
            offsets.pop();
            slots.truncate(base_len);
        }
    }
}

/// Exactly the masks the spec's rules look up; what a count store must
/// enable before evaluating that ruleset.
pub fn required_masks(spec: &RuleSetSpec) -> BTreeSet<Mask> {
    enumerate_ruleset(spec)
        .into_iter()
        .filter(|r| !r.is_unigram())
        .map(|r| r.mask().clone())
        .collect()
}

/// Longest-suffix backoff: evaluate the deepest plain suffix rule (depth
/// <= max_context) whose rule context occurs in the data, falling back to
/// the unigram distribution.
pub fn backoff(
    max_context: usize,
    context: &[TokenId],
    store: &CountStore,
) -> Result<SparseDistribution> {
    let top = max_context.min(context.len());
    for depth in (1..=top).rev() {
        let rule = CanonicalRule::suffix(depth)?;
        if let Some(dist) = rule.evaluate(context, store)? {
            return Ok(dist);
        }
    }
    CanonicalRule::unigram()
        .evaluate(context, store)?
        .ok_or(Error::NoRuleDefined)
}
