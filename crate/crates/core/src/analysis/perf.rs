//! Ruleset performance grids: mean top-1 agreement and mean optimal
//! distance per (family, max-context) cell, plus the longest-suffix
//! backoff baseline row.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dist::{top1_accuracy, Metric, RuleSet, SparseDistribution};
use crate::error::{Error, Result};
use crate::predict::PredictionSet;
use crate::rules::{backoff, CanonicalRule, RuleFamily, RuleSetSpec};
use crate::store::CountStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub mean_top1: f64,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceGrid {
    pub families: Vec<RuleFamily>,
    pub max_contexts: Vec<usize>,
    pub cells: BTreeMap<(RuleFamily, usize), GridCell>,
    /// Single-rule backoff baseline per max context.
    pub backoff: BTreeMap<usize, GridCell>,
    pub records: usize,
}

impl PerformanceGrid {
    pub fn cell(&self, family: RuleFamily, m: usize) -> Option<GridCell> {
        self.cells.get(&(family, m)).copied()
    }
}

fn is_suffix_rule(rule: &CanonicalRule) -> bool {
    rule.is_unigram()
        || (rule.mask().any_bits() == 0
            && rule
                .offsets()
                .iter()
                .rev()
                .enumerate()
                .all(|(i, &o)| o as usize == i + 1))
}

fn is_subgram_rule(rule: &CanonicalRule) -> bool {
    rule.mask().any_bits() == 0
}

fn in_family(rule: &CanonicalRule, family: RuleFamily) -> bool {
    match family {
        RuleFamily::Suffix => is_suffix_rule(rule),
        RuleFamily::Subgram => is_subgram_rule(rule),
        RuleFamily::All => true,
    }
}

/// Evaluate the grid over a single-run, single-checkpoint prediction set.
/// Each cell averages, over all records, the top-1 agreement and distance
/// between the prediction and its per-record optimal rule from that cell's
/// ruleset; the backoff row uses the single longest-suffix rule instead.
pub fn performance_grid(
    preds: &PredictionSet,
    families: &[RuleFamily],
    max_contexts: &[usize],
    store: &CountStore,
    metric: Metric,
) -> Result<PerformanceGrid> {
    if preds.is_empty() {
        return Err(Error::EmptyGroup("empty prediction set".into()));
    }
    if preds.groups().len() != 1 {
        return Err(Error::ContextSetMismatch(
            "performance grid expects a single (run, step, limit) group".into(),
        ));
    }
    if families.is_empty() || max_contexts.is_empty() {
        return Err(Error::EmptyGroup("no grid cells requested".into()));
    }
    let top_m = *max_contexts.iter().max().expect("nonempty");
    // The widest requested family at the deepest context covers every
    // cell: suffix and subgram rules are canonical members of `all`.
    let widest = *families.iter().max().expect("nonempty");
    let union = RuleSet::new(RuleSetSpec::new(widest, top_m)?);

    struct PerRecord {
        // Per cell (family index, m index): (top1, distance).
        cells: Vec<(f64, f64)>,
        // Per m index: (top1, distance) of the backoff rule.
        backoff: Vec<(f64, f64)>,
    }

    let per_record: Vec<PerRecord> = preds
        .records()
        .par_iter()
        .map(|r| {
            // Evaluate each union rule once.
            let mut evaluated: Vec<(usize, f64, SparseDistribution)> = Vec::new();
            for (idx, rule) in union.rules().iter().enumerate() {
                if rule.depth() > r.context.len() {
                    continue;
                }
                if let Some(rd) = rule.evaluate(&r.context, store)? {
                    let d = metric.distance(&r.dist, &rd);
                    evaluated.push((idx, d, rd));
                }
            }
            let mut cells = Vec::with_capacity(families.len() * max_contexts.len());
            for &family in families {
                for &m in max_contexts {
                    let mut best: Option<(f64, &SparseDistribution)> = None;
                    for (idx, d, rd) in &evaluated {
                        let rule = &union.rules()[*idx];
                        if rule.depth() > m || !in_family(rule, family) {
                            continue;
                        }
                        if best.as_ref().is_none_or(|(b, _)| d < b) {
                            best = Some((*d, rd));
                        }
                    }
                    let (d, rd) = best.ok_or(Error::NoRuleDefined)?;
                    cells.push((top1_accuracy(&r.dist, rd)?, d));
                }
            }
            let mut backoff_cells = Vec::with_capacity(max_contexts.len());
            for &m in max_contexts {
                let bd = backoff(m, &r.context, store)?;
                backoff_cells.push((top1_accuracy(&r.dist, &bd)?, metric.distance(&r.dist, &bd)));
            }
            Ok(PerRecord { cells, backoff: backoff_cells })
        })
        .collect::<Result<_>>()?;

    let n = per_record.len() as f64;
    let mut cells = BTreeMap::new();
    for (fi, &family) in families.iter().enumerate() {
        for (mi, &m) in max_contexts.iter().enumerate() {
            let flat = fi * max_contexts.len() + mi;
            let (t1, d) = per_record
                .iter()
                .fold((0.0, 0.0), |acc, pr| (acc.0 + pr.cells[flat].0, acc.1 + pr.cells[flat].1));
            cells.insert((family, m), GridCell { mean_top1: t1 / n, mean_distance: d / n });
        }
    }
    let mut backoff_row = BTreeMap::new();
    for (mi, &m) in max_contexts.iter().enumerate() {
        let (t1, d) = per_record
            .iter()
            .fold((0.0, 0.0), |acc, pr| (acc.0 + pr.backoff[mi].0, acc.1 + pr.backoff[mi].1));
        backoff_row.insert(m, GridCell { mean_top1: t1 / n, mean_distance: d / n });
    }
    Ok(PerformanceGrid {
        families: families.to_vec(),
        max_contexts: max_contexts.to_vec(),
        cells,
        backoff: backoff_row,
        records: per_record.len(),
    })
}
