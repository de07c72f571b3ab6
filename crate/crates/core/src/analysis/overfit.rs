//! Holdout-free overfitting detection from limited-context loss series.
//!
//! The monitored signal is the training-split loss of the predictor
//! re-evaluated under short context limits. When the smoothed series rises
//! off its running minimum and stays up, training should stop.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            other => Err(Error::LossSeries(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
        })
    }
}

/// Mean loss per checkpoint for one (split, context-limit) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeries {
    pub split: Split,
    /// Context limit n; 0 or 1 series are reported but not monitored.
    pub limit: u32,
    /// (step, mean loss), ascending by step.
    pub points: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Centered moving-average window (shrinks at the edges).
    pub window: usize,
    /// Consecutive breaching checkpoints required.
    pub patience: usize,
    /// Minimum rise over the running minimum, in nats.
    pub min_delta: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { window: 3, patience: 2, min_delta: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub split: Split,
    pub limit: u32,
    pub step: u64,
    pub running_min: f64,
    pub smoothed_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopReport {
    pub stop_step: Option<u64>,
    pub trigger: Option<Trigger>,
    /// Smoothed series for every input (split, limit), keyed in order.
    pub smoothed: BTreeMap<(Split, u32), Vec<(u64, f64)>>,
}

/// Centered moving average with window shrinking at the boundaries.
fn smooth(points: &[(u64, f64)], window: usize) -> Vec<(u64, f64)> {
    let radius = window / 2;
    points
        .iter()
        .enumerate()
        .map(|(i, &(step, _))| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(points.len() - 1);
            let mean =
                points[lo..=hi].iter().map(|&(_, l)| l).sum::<f64>() / (hi - lo + 1) as f64;
            (step, mean)
        })
        .collect()
}

/// First step of a sustained rise: the earliest index whose smoothed loss
/// sits at least `min_delta` above the running minimum (strictly above it
/// when `min_delta` is 0) for `patience` consecutive checkpoints.
fn detect_in(series: &[(u64, f64)], cfg: &DetectorConfig) -> Option<(u64, f64, f64)> {
    let mut running_min = f64::INFINITY;
    let mut breaches: Vec<Option<(u64, f64, f64)>> = Vec::with_capacity(series.len());
    for &(step, value) in series {
        running_min = running_min.min(value);
        let breach = value > running_min && value - running_min >= cfg.min_delta;
        breaches.push(breach.then_some((step, running_min, value)));
    }
    let p = cfg.patience.max(1);
    for i in 0..breaches.len().saturating_sub(p - 1) {
        if breaches[i..i + p].iter().all(Option::is_some) {
            return breaches[i];
        }
    }
    None
}

/// Run the detector over the monitored series (train split, limit > 1);
/// all series get a smoothed copy in the report. The stop step is the
/// earliest trigger across the monitored limits.
pub fn overfit_detect(series: &[LossSeries], cfg: &DetectorConfig) -> Result<StopReport> {
    if cfg.window < 1 {
        return Err(Error::LossSeries("window must be >= 1".into()));
    }
    if !series
        .iter()
        .any(|s| s.split == Split::Train && s.limit > 1)
    {
        return Err(Error::LossSeries(
            "need at least one train series with context limit > 1".into(),
        ));
    }
    let mut smoothed = BTreeMap::new();
    let mut best: Option<Trigger> = None;
    for s in series {
        if s.points.len() < cfg.window {
            return Err(Error::LossSeries(format!(
                "series (split={}, limit={}) has {} points, window is {}",
                s.split,
                s.limit,
                s.points.len(),
                cfg.window
            )));
        }
        if !s.points.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::LossSeries(format!(
                "series (split={}, limit={}) not sorted by step",
                s.split, s.limit
            )));
        }
        let sm = smooth(&s.points, cfg.window);
        if s.split == Split::Train && s.limit > 1 {
            if let Some((step, running_min, value)) = detect_in(&sm, cfg) {
                let candidate = Trigger {
                    split: s.split,
                    limit: s.limit,
                    step,
                    running_min,
                    smoothed_value: value,
                };
                let earlier = best.as_ref().is_none_or(|b| step < b.step);
                if earlier {
                    best = Some(candidate);
                }
            }
        }
        smoothed.insert((s.split, s.limit), sm);
    }
    Ok(StopReport { stop_step: best.as_ref().map(|t| t.step), trigger: best, smoothed })
}
