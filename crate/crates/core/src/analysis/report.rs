//! Per-token rule-selection report over one contiguous sequence, with
//! TSV, HTML, and ANSI renderings.

use std::fmt::Write as _;

use crate::dist::{optimal_rule, Metric, RuleSet};
use crate::error::{Error, Result};
use crate::predict::PredictionSet;
use crate::store::CountStore;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenReport {
    pub off: u64,
    pub ground_truth: u32,
    /// Canonical sigma string of the optimal rule.
    pub sigma: String,
    /// The rule context pattern with concrete literals, e.g. `104 * 101`.
    pub rule_context: String,
    /// Optimal rule distance; the heat value.
    pub distance: f64,
    /// Number of occurrences supporting the rule (the rule context's
    /// denominator count).
    pub support: u64,
    /// Model's top token, shown when it differs from the ground truth.
    pub model_top1: Option<u32>,
    /// Rule's top token, shown when the model top token is shown and the
    /// rule disagrees with it.
    pub rule_top1: Option<u32>,
    /// Model and rule greedy predictions differ.
    pub disagreement: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSelectionReport {
    pub seq: u64,
    pub tokens: Vec<TokenReport>,
    pub mean_distance: f64,
    pub disagreements: usize,
}

/// Select the optimal rule for every token of one contiguous sequence of
/// single-run records and derive the per-token display fields.
pub fn rule_selection_report(
    preds: &PredictionSet,
    ruleset: &RuleSet,
    store: &CountStore,
    metric: Metric,
) -> Result<RuleSelectionReport> {
    if preds.is_empty() {
        return Err(Error::EmptyGroup("empty prediction set".into()));
    }
    if preds.groups().len() != 1 {
        return Err(Error::ContextSetMismatch(
            "report expects a single (run, step, limit) group".into(),
        ));
    }
    let mut records: Vec<_> = preds.records().iter().collect();
    let seq = records[0].seq;
    if records.iter().any(|r| r.seq != seq) {
        return Err(Error::ContextSetMismatch("records span multiple sequences".into()));
    }
    records.sort_by_key(|r| r.off);
    for pair in records.windows(2) {
        if pair[1].off != pair[0].off + 1 {
            return Err(Error::PositionGap(pair[0].off + 1));
        }
    }

    let mut tokens = Vec::with_capacity(records.len());
    let mut total_distance = 0.0;
    let mut disagreements = 0usize;
    for r in records {
        let best = optimal_rule(&r.context, &[&r.dist], ruleset, store, metric)?;
        let pattern = best.rule.rule_context(&r.context)?;
        let support = store.count(&pattern)?;
        let model_top = r.dist.top1()?;
        let rule_top = best.dist.top1()?;
        let disagreement = model_top != rule_top;
        if disagreement {
            disagreements += 1;
        }
        total_distance += best.distance;
        let model_top1 = (model_top != r.target).then_some(model_top.0);
        let rule_top1 =
            (model_top1.is_some() && rule_top != model_top).then_some(rule_top.0);
        tokens.push(TokenReport {
            off: r.off,
            ground_truth: r.target.0,
            sigma: best.rule.to_string(),
            rule_context: pattern.to_string(),
            distance: best.distance,
            support,
            model_top1,
            rule_top1,
            disagreement,
        });
    }
    let mean_distance = total_distance / tokens.len() as f64;
    Ok(RuleSelectionReport { seq, tokens, mean_distance, disagreements })
}

impl RuleSelectionReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("#schema=rule-report v=1\n");
        out.push_str(
            "off\tground_truth\tmodel_top1\trule_top1\tdisagree\tdistance\tsupport\tsigma\trule_context\n",
        );
        for t in &self.tokens {
            let model = t.model_top1.map_or("-".into(), |v| v.to_string());
            let rule = t.rule_top1.map_or("-".into(), |v| v.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
                t.off,
                t.ground_truth,
                model,
                rule,
                u8::from(t.disagreement),
                t.distance,
                t.support,
                t.sigma,
                t.rule_context
            )
            .expect("string write");
        }
        out
    }

    /// Standalone HTML: one row per token with a distance heat cell.
    pub fn to_html(&self) -> String {
        let mut rows = String::new();
        for t in &self.tokens {
            let heat = (t.distance.clamp(0.0, 1.0) * 255.0).round() as u8;
            let gt_style = if t.disagreement { " class=\"red\"" } else { "" };
            let alt = match (t.model_top1, t.rule_top1) {
                (Some(m), Some(r)) => format!("t{m} t{r}"),
                (Some(m), None) => format!("t{m}"),
                _ => String::new(),
            };
            writeln!(
                rows,
                "<tr><td>{off}</td><td>{alt}</td><td{gt_style}>t{gt}</td>\
                 <td><code>{ctx}</code></td>\
                 <td style=\"background: rgba(214,39,40,{a:.3})\">{d:.3}</td>\
                 <td>{support}</td></tr>",
                off = t.off,
                alt = alt,
                gt = t.ground_truth,
                ctx = t.rule_context,
                a = heat as f64 / 255.0,
                d = t.distance,
                support = t.support,
            )
            .expect("string write");
        }
        format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\
             <title>rule selection (seq {seq})</title>\
             <style>body{{font-family:monospace}}table{{border-collapse:collapse}}\
             td,th{{border:1px solid #ccc;padding:2px 6px}}.red{{color:#d62728;font-weight:bold}}</style>\
             </head><body>\n<h1>Rule selection, sequence {seq}</h1>\
             <p>{n} tokens, mean distance {mean:.4}, {dis} greedy disagreements. \
             Red ground-truth tokens mark model/rule greedy disagreement; the heat \
             column is the optimal rule distance; support is the rule context count.</p>\n\
             <table>\n<tr><th>off</th><th>alt</th><th>gt</th><th>rule context</th>\
             <th>dist</th><th>support</th></tr>\n{rows}</table>\n</body></html>\n",
            seq = self.seq,
            n = self.tokens.len(),
            mean = self.mean_distance,
            dis = self.disagreements,
            rows = rows,
        )
    }

    /// Terminal rendering with a 256-color heat block per token.
    pub fn to_ansi(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "sequence {} | {} tokens | mean distance {:.4} | {} disagreements",
            self.seq,
            self.tokens.len(),
            self.mean_distance,
            self.disagreements
        )
        .expect("string write");
        writeln!(out, "{:>6} {:>6} {:<14} {:>9} {:>9}  rule", "off", "gt", "alt", "dist", "support")
            .expect("string write");
        for t in &self.tokens {
            // Grayscale ramp 232..=255 by distance.
            let shade = 232 + (t.distance.clamp(0.0, 1.0) * 23.0).round() as u8;
            let alt = match (t.model_top1, t.rule_top1) {
                (Some(m), Some(r)) => format!("{m}/{r}"),
                (Some(m), None) => format!("{m}"),
                _ => String::new(),
            };
            let gt = if t.disagreement {
                format!("\x1b[31m{:>6}\x1b[0m", t.ground_truth)
            } else {
                format!("{:>6}", t.ground_truth)
            };
            writeln!(
                out,
                "{:>6} {} {:<14} \x1b[48;5;{}m{:>9.4}\x1b[0m {:>9}  {} [{}]",
                t.off, gt, alt, shade, t.distance, t.support, t.sigma, t.rule_context
            )
            .expect("string write");
        }
        out
    }
}
