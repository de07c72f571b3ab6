//! Optimal-rule series over training checkpoints.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::corpus::TokenId;
use crate::dist::{optimal_rule, top1_accuracy, Metric, RuleSet, SparseDistribution};
use crate::error::{Error, Result};
use crate::predict::PredictionSet;
use crate::rules::{RuleFamily, RuleSetSpec};
use crate::store::CountStore;

/// One (checkpoint, ruleset) summary over the fixed evaluation contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub step: u64,
    pub family: RuleFamily,
    pub max_context: usize,
    /// Mean (run-averaged) optimal rule distance to the model.
    pub mean_distance: f64,
    /// Mean top-1 agreement between the optimal rule and the model.
    pub mean_top1_vs_model: f64,
    /// Mean top-1 agreement between the optimal rule and the one-hot
    /// ground truth.
    pub mean_top1_vs_ground_truth: f64,
    pub contexts: usize,
}

/// For every checkpoint step in the set and every (family, max-context)
/// pair, select per-context optimal rules and average their distance and
/// top-1 agreement against the model and against the ground truth. The
/// evaluation contexts must be identical at every step.
pub fn curriculum(
    preds: &PredictionSet,
    cells: &[(RuleFamily, usize)],
    store: &CountStore,
    metric: Metric,
) -> Result<Vec<SeriesPoint>> {
    let steps = preds.steps();
    if steps.is_empty() {
        return Err(Error::EmptyGroup("no prediction records".into()));
    }
    // Group records: step -> position -> per-run distributions.
    type PosKey = (u64, u64);
    type ContextGroup<'a> = (Vec<TokenId>, TokenId, Vec<&'a SparseDistribution>);
    let mut by_step: BTreeMap<u64, BTreeMap<PosKey, ContextGroup>> = BTreeMap::new();
    for r in preds.records() {
        let entry = by_step
            .entry(r.step)
            .or_default()
            .entry((r.seq, r.off))
            .or_insert_with(|| (r.context.clone(), r.target, Vec::new()));
        if entry.0 != r.context || entry.1 != r.target {
            return Err(Error::ContextSetMismatch(format!(
                "conflicting context/target at position ({}, {})",
                r.seq, r.off
            )));
        }
        entry.2.push(&r.dist);
    }
    // Identical evaluation contexts at every checkpoint.
    let reference: BTreeSet<(PosKey, &[TokenId], TokenId)> = by_step[&steps[0]]
        .iter()
        .map(|(&pos, (ctx, tgt, _))| (pos, ctx.as_slice(), *tgt))
        .collect();
    for (&step, positions) in &by_step {
        let here: BTreeSet<(PosKey, &[TokenId], TokenId)> = positions
            .iter()
            .map(|(&pos, (ctx, tgt, _))| (pos, ctx.as_slice(), *tgt))
            .collect();
        if here != reference {
            return Err(Error::ContextSetMismatch(format!(
                "step {step} evaluates a different context set than step {}",
                steps[0]
            )));
        }
    }

    let rulesets: Vec<RuleSet> = cells
        .iter()
        .map(|&(family, m)| Ok(RuleSet::new(RuleSetSpec::new(family, m)?)))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(steps.len() * cells.len());
    for (&step, positions) in &by_step {
        let contexts: Vec<&ContextGroup> = positions.values().collect();
        for (ruleset, &(family, m)) in rulesets.iter().zip(cells) {
            let per_ctx: Vec<(f64, f64, f64)> = contexts
                .par_iter()
                .map(|(ctx, target, dists)| {
                    let best = optimal_rule(ctx, dists, ruleset, store, metric)?;
                    let t1_model = dists
                        .iter()
                        .map(|p| top1_accuracy(p, &best.dist))
                        .sum::<Result<f64>>()?
                        / dists.len() as f64;
                    let gt = SparseDistribution::one_hot(*target);
                    let t1_gt = top1_accuracy(&gt, &best.dist)?;
                    Ok((best.distance, t1_model, t1_gt))
                })
                .collect::<Result<_>>()?;
            let n = per_ctx.len().max(1) as f64;
            out.push(SeriesPoint {
                step,
                family,
                max_context: m,
                mean_distance: per_ctx.iter().map(|x| x.0).sum::<f64>() / n,
                mean_top1_vs_model: per_ctx.iter().map(|x| x.1).sum::<f64>() / n,
                mean_top1_vs_ground_truth: per_ctx.iter().map(|x| x.2).sum::<f64>() / n,
                contexts: per_ctx.len(),
            });
        }
    }
    Ok(out)
}
