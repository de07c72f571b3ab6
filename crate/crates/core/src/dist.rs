//! Sparse next-token distributions and the distances between them.
//!
//! Ingested model predictions are top-K lists with a residual holding the
//! remaining mass; rule distributions are exact (residual 0). Distances
//! treat the residual supports of the two sides as disjoint from each
//! other and from the explicit entries, which is exact whenever both
//! residuals are zero and an upper bound otherwise.

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::rules::{CanonicalRule, RuleSetSpec};
use crate::store::CountStore;

/// Absolute tolerance for probability ties in argmax sets.
pub const ARGMAX_TIE_TOLERANCE: f64 = 1e-9;

/// Allowed deviation of total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Explicit (token, probability) entries sorted by token, plus the
/// nonnegative mass left outside the entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistribution {
    entries: Vec<(TokenId, f64)>,
    residual: f64,
}

impl SparseDistribution {
    pub fn from_entries(mut entries: Vec<(TokenId, f64)>, residual: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidDistribution("no explicit entries".into()));
        }
        entries.sort_by_key(|&(t, _)| t);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDistribution("duplicate token".into()));
        }
        if residual.is_nan() || residual < 0.0 {
            return Err(Error::InvalidDistribution(format!("residual {residual} < 0")));
        }
        let mut sum = residual;
        for &(t, p) in &entries {
            if p.is_nan() || p < 0.0 || !p.is_finite() {
                return Err(Error::InvalidDistribution(format!(
                    "probability {p} for token {t} out of range"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("total mass {sum} not 1")));
        }
        Ok(Self { entries, residual })
    }

    /// Exact distribution from next-token counts.
    pub fn from_counts(next: &[(TokenId, u64)], total: u64) -> Self {
        debug_assert_eq!(total, next.iter().map(|&(_, c)| c).sum::<u64>());
        debug_assert!(total > 0);
        let entries = next
            .iter()
            .map(|&(t, c)| (t, c as f64 / total as f64))
            .collect();
        Self { entries, residual: 0.0 }
    }

    pub fn one_hot(token: TokenId) -> Self {
        Self { entries: vec![(token, 1.0)], residual: 0.0 }
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Explicit probability of a token; `None` when the token is outside
    /// the entry list (its mass, if any, sits in the residual).
    pub fn prob(&self, token: TokenId) -> f64 {
        match self.entries.binary_search_by_key(&token, |&(t, _)| t) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn has_entry(&self, token: TokenId) -> bool {
        self.entries.binary_search_by_key(&token, |&(t, _)| t).is_ok()
    }

    /// Residual-free distributions make every distance exact.
    pub fn is_exact(&self) -> bool {
        self.residual == 0.0
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Tokens within the tie tolerance of the maximum explicit entry.
    /// Errors when the residual exceeds the maximum entry, because the
    /// true argmax could then hide outside the entry list.
    pub fn argmax_set(&self) -> Result<Vec<TokenId>> {
        let max = self.max_entry();
        if self.residual > max + ARGMAX_TIE_TOLERANCE {
            return Err(Error::ArgmaxContract { max_entry: max, residual: self.residual });
        }
        Ok(self
            .entries
            .iter()
            .filter(|&&(_, p)| p >= max - ARGMAX_TIE_TOLERANCE)
            .map(|&(t, _)| t)
            .collect())
    }

    /// Deterministic single top token: the smallest id in the argmax set.
    pub fn top1(&self) -> Result<TokenId> {
        Ok(self.argmax_set()?[0])
    }
}

/// Walk the union of two sorted entry lists.
fn merged_diffs(p: &SparseDistribution, q: &SparseDistribution) -> impl Iterator<Item = f64> {
    let mut out = Vec::with_capacity(p.entries.len() + q.entries.len());
    let (a, b) = (&p.entries, &q.entries);
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i].1);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j].1);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i].1 - b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend(a[i..].iter().map(|&(_, p)| p));
    out.extend(b[j..].iter().map(|&(_, p)| p));
    out.into_iter()
}

/// Half the absolute difference summed over the union of entries, with
/// both residuals added as disjoint mass. Clamped to [0, 1].
pub fn variational(p: &SparseDistribution, q: &SparseDistribution) -> f64 {
    let sum: f64 = merged_diffs(p, q).map(f64::abs).sum();
    (0.5 * (sum + p.residual + q.residual)).clamp(0.0, 1.0)
}

/// Maximum absolute difference over the union of explicit entries.
pub fn linf(p: &SparseDistribution, q: &SparseDistribution) -> f64 {
    merged_diffs(p, q)
        .map(f64::abs)
        .fold(0.0, f64::max)
        .clamp(0.0, 1.0)
}

/// Square root of the base-2 Jensen-Shannon divergence, residuals treated
/// as disjoint mass. Lies in [0, 1].
pub fn jensen_shannon(p: &SparseDistribution, q: &SparseDistribution) -> f64 {
    fn term(x: f64, m: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            0.5 * x * (x / m).log2()
        }
    }
    let mut div = 0.0;
    let (a, b) = (&p.entries, &q.entries);
    let (mut i, mut j) = (0, 0);
    let mut accum = |pa: f64, qa: f64| {
        let m = 0.5 * (pa + qa);
        div += term(pa, m) + term(qa, m);
    };
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                accum(a[i].1, 0.0);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                accum(0.0, b[j].1);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                accum(a[i].1, b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    for &(_, pa) in &a[i..] {
        accum(pa, 0.0);
    }
    for &(_, qa) in &b[j..] {
        accum(0.0, qa);
    }
    // Disjoint residual mass contributes x * log2(2) / 2 per side.
    div += 0.5 * (p.residual + q.residual);
    div.max(0.0).sqrt().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Variational,
    Linf,
    JensenShannon,
}

impl Metric {
    pub fn distance(&self, p: &SparseDistribution, q: &SparseDistribution) -> f64 {
        match self {
            Metric::Variational => variational(p, q),
            Metric::Linf => linf(p, q),
            Metric::JensenShannon => jensen_shannon(p, q),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variational" => Ok(Metric::Variational),
            "linf" => Ok(Metric::Linf),
            "js" => Ok(Metric::JensenShannon),
            other => Err(Error::InvalidDistribution(format!("unknown metric {other:?}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Variational => "variational",
            Metric::Linf => "linf",
            Metric::JensenShannon => "js",
        })
    }
}

/// Whether a distance between these two distributions is exact rather
/// than an upper bound.
pub fn exact_pair(p: &SparseDistribution, q: &SparseDistribution) -> bool {
    p.is_exact() && q.is_exact()
}

/// Jaccard overlap of the two argmax sets.
pub fn top1_accuracy(p: &SparseDistribution, q: &SparseDistribution) -> Result<f64> {
    let a = p.argmax_set()?;
    let b = q.argmax_set()?;
    let mut inter = 0usize;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Mean pairwise distance over all unordered distinct pairs of runs.
pub fn model_variance(dists: &[&SparseDistribution], metric: Metric) -> Result<f64> {
    if dists.len() < 2 {
        return Err(Error::TooFewRuns(dists.len()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..dists.len() {
        for j in i + 1..dists.len() {
            sum += metric.distance(dists[i], dists[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// A ruleset pinned to its enumeration order.
#[derive(Debug, Clone)]
pub struct RuleSet {
    spec: RuleSetSpec,
    rules: Vec<CanonicalRule>,
}

impl RuleSet {
    pub fn new(spec: RuleSetSpec) -> Self {
        let rules = crate::rules::enumerate_ruleset(&spec);
        Self { spec, rules }
    }

    pub fn spec(&self) -> &RuleSetSpec {
        &self.spec
    }

    pub fn rules(&self) -> &[CanonicalRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct OptimalRuleResult {
    pub rule: CanonicalRule,
    /// Minimum run-averaged distance over the defined rules.
    pub distance: f64,
    /// The rule's own distribution, kept for downstream top-1 checks.
    pub dist: SparseDistribution,
    /// How many rules were defined for this context.
    pub defined_rule_count: usize,
}

/// Minimize the run-averaged distance between the predictions and each
/// defined rule of the set. Ties go to the earlier rule in enumeration
/// order (shallower, fewer slots). The unigram rule is defined whenever
/// the store is nonempty, so a result always exists.
pub fn optimal_rule(
    context: &[TokenId],
    preds: &[&SparseDistribution],
    ruleset: &RuleSet,
    store: &CountStore,
    metric: Metric,
) -> Result<OptimalRuleResult> {
    if preds.is_empty() {
        return Err(Error::TooFewRuns(0));
    }
    let mut best: Option<OptimalRuleResult> = None;
    let mut defined = 0usize;
    for rule in &ruleset.rules {
        if rule.depth() > context.len() {
            continue;
        }
        let Some(rule_dist) = rule.evaluate(context, store)? else {
            continue;
        };
        defined += 1;
        let avg: f64 = preds.iter().map(|p| metric.distance(p, &rule_dist)).sum::<f64>()
            / preds.len() as f64;
        let better = match &best {
            None => true,
            Some(b) => avg < b.distance,
        };
        if better {
            best = Some(OptimalRuleResult {
                rule: rule.clone(),
                distance: avg,
                dist: rule_dist,
                defined_rule_count: 0,
            });
        }
    }
    let mut result = best.ok_or(Error::NoRuleDefined)?;
    result.defined_rule_count = defined;
    Ok(result)
}
