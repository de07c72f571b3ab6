//! The approximation-criterion analysis: per-context rows relating corpus
//! count, run-to-run model variance, distance to the full-context rule,
//! and optimal rule distance, plus the four scatter fits and banded
//! summaries.

use std::collections::HashMap;

use crate::analysis::fit::{linear_fit, FitSummary, XTransform};
use crate::analysis::sample::ContextSample;
use crate::corpus::TokenId;
use crate::dist::{exact_pair, model_variance, optimal_rule, Metric, RuleSet, SparseDistribution};
use crate::error::{Error, Result};
use crate::predict::PredictionSet;
use crate::rules::CanonicalRule;
use crate::store::CountStore;

#[derive(Debug, Clone)]
pub struct ApproxRow {
    pub context: Vec<TokenId>,
    pub count: u64,
    pub model_variance: f64,
    /// Run-averaged distance to the full-context rule; `None` when that
    /// rule is undefined for this context.
    pub d_full: Option<f64>,
    pub optimal_distance: f64,
    pub optimal_rule: CanonicalRule,
    pub defined_rule_count: usize,
    /// All distances in this row are exact (every side residual-free).
    pub exact: bool,
}

/// One x-bucket band: mean plus/minus one standard deviation of y.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub x_lo: f64,
    pub x_hi: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ApproxOptions {
    pub band_buckets: usize,
    pub band_min_points: usize,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        Self { band_buckets: 20, band_min_points: 3 }
    }
}

/// The four scatter plots, in output order.
pub const APPROX_PLOTS: [&str; 4] = [
    "d_full_vs_count",
    "d_full_vs_variance",
    "variance_vs_count",
    "optimal_vs_variance",
];

#[derive(Debug, Clone)]
pub struct PlotSummary {
    pub plot: &'static str,
    pub x_transform: XTransform,
    /// Fit over the raw scatter; `None` when degenerate (e.g. constant x).
    pub fit: Option<FitSummary>,
    /// Fit over the band means, exposed alongside the raw-scatter fit.
    pub band_fit: Option<FitSummary>,
    pub bands: Vec<Band>,
}

#[derive(Debug, Clone)]
pub struct ApproxResult {
    pub rows: Vec<ApproxRow>,
    pub plots: Vec<PlotSummary>,
}

/// Compute one row per sampled context against a multi-run prediction set,
/// then fit and band the four scatter relations. Every sampled context
/// must have a prediction in every run.
pub fn approx_criterion(
    sample: &ContextSample,
    preds: &PredictionSet,
    ruleset: &RuleSet,
    store: &CountStore,
    metric: Metric,
    opts: &ApproxOptions,
) -> Result<ApproxResult> {
    let runs = preds.runs();
    if runs.len() < 2 {
        return Err(Error::TooFewRuns(runs.len()));
    }
    if preds.steps().len() > 1 {
        return Err(Error::ContextSetMismatch(
            "approximation analysis expects a single checkpoint".into(),
        ));
    }
    // Per run: context -> distribution.
    let mut by_run: Vec<HashMap<&[TokenId], &SparseDistribution>> =
        vec![HashMap::new(); runs.len()];
    let run_index: HashMap<u32, usize> =
        runs.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    for r in preds.records() {
        by_run[run_index[&r.run]].insert(r.context.as_slice(), &r.dist);
    }

    let mut rows = Vec::with_capacity(sample.contexts.len());
    for sc in &sample.contexts {
        let mut dists: Vec<&SparseDistribution> = Vec::with_capacity(runs.len());
        for (i, map) in by_run.iter().enumerate() {
            let d = map.get(sc.context.as_slice()).ok_or_else(|| {
                Error::MissingPrediction(format!(
                    "run {} lacks context {:?}",
                    runs[i],
                    sc.context.iter().map(|t| t.0).collect::<Vec<_>>()
                ))
            })?;
            dists.push(d);
        }
        let variance = model_variance(&dists, metric)?;
        let full = CanonicalRule::suffix(sc.context.len())?;
        let d_full = full.evaluate(&sc.context, store)?.as_ref().map(|fd| dists.iter().map(|p| metric.distance(p, fd)).sum::<f64>() / dists.len() as f64);
        let best = optimal_rule(&sc.context, &dists, ruleset, store, metric)?;
        let exact = dists.iter().all(|d| exact_pair(d, &best.dist));
        rows.push(ApproxRow {
            context: sc.context.clone(),
            count: sc.count,
            model_variance: variance,
            d_full,
            optimal_distance: best.distance,
            optimal_rule: best.rule,
            defined_rule_count: best.defined_rule_count,
            exact,
        });
    }

    let plots = APPROX_PLOTS
        .iter()
        .map(|&plot| {
            let (xs, ys, x_transform) = plot_points(plot, &rows);
            let fit = linear_fit(&xs, &ys, x_transform).ok();
            let bands = bands(&xs, &ys, x_transform, opts);
            // Bucket centers taken in the plot's own x space.
            let band_xs: Vec<f64> = bands
                .iter()
                .map(|b| match x_transform {
                    XTransform::Identity => 0.5 * (b.x_lo + b.x_hi),
                    XTransform::Log10 => (b.x_lo * b.x_hi).sqrt(),
                })
                .collect();
            let band_ys: Vec<f64> = bands.iter().map(|b| b.mean).collect();
            let band_fit = linear_fit(&band_xs, &band_ys, x_transform).ok();
            PlotSummary { plot, x_transform, fit, band_fit, bands }
        })
        .collect();

    Ok(ApproxResult { rows, plots })
}

fn plot_points(plot: &str, rows: &[ApproxRow]) -> (Vec<f64>, Vec<f64>, XTransform) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let transform = match plot {
        "d_full_vs_count" => {
            for r in rows {
                if let Some(d) = r.d_full {
                    xs.push(r.count as f64);
                    ys.push(d);
                }
            }
            XTransform::Log10
        }
        "d_full_vs_variance" => {
            for r in rows {
                if let Some(d) = r.d_full {
                    xs.push(r.model_variance);
                    ys.push(d);
                }
            }
            XTransform::Identity
        }
        "variance_vs_count" => {
            for r in rows {
                xs.push(r.count as f64);
                ys.push(r.model_variance);
            }
            XTransform::Log10
        }
        "optimal_vs_variance" => {
            for r in rows {
                xs.push(r.model_variance);
                ys.push(r.optimal_distance);
            }
            XTransform::Identity
        }
        other => unreachable!("unknown plot {other}"),
    };
    (xs, ys, transform)
}

/// Bucket the x axis (in transformed space) and summarize y per bucket;
/// buckets with fewer than `band_min_points` points are omitted.
fn bands(xs: &[f64], ys: &[f64], transform: XTransform, opts: &ApproxOptions) -> Vec<Band> {
    if xs.is_empty() {
        return Vec::new();
    }
    let tx: Vec<f64> = match transform {
        XTransform::Identity => xs.to_vec(),
        XTransform::Log10 => xs.iter().map(|&x| x.max(f64::MIN_POSITIVE).log10()).collect(),
    };
    let lo = tx.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Vec::new();
    }
    let buckets = opts.band_buckets.max(1);
    let width = (hi - lo) / buckets as f64;
    let mut grouped: Vec<Vec<f64>> = vec![Vec::new(); buckets];
    for (&x, &y) in tx.iter().zip(ys) {
        let b = (((x - lo) / width) as usize).min(buckets - 1);
        grouped[b].push(y);
    }
    let back = |t: f64| match transform {
        XTransform::Identity => t,
        XTransform::Log10 => 10f64.powf(t),
    };
    grouped
        .into_iter()
        .enumerate()
        .filter(|(_, members)| members.len() >= opts.band_min_points)
        .map(|(b, members)| {
            let n = members.len();
            let mean = members.iter().sum::<f64>() / n as f64;
            let var = members.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
            Band {
                x_lo: back(lo + b as f64 * width),
                x_hi: back(lo + (b + 1) as f64 * width),
                mean,
                std: var.sqrt(),
                n,
            }
        })
        .collect()
}
