//! Analysis commands: approx, curriculum, overfit, performance, report.
//!
//! Every analysis writes tab-separated data files with a leading
//! `#schema=<name> v=1` line plus a human-readable summary on stdout.
//! Outputs carry no timestamps, so fixed inputs and seeds reproduce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};

use ngram_rules::analysis::{
    approx_criterion, curriculum, overfit_detect, performance_grid, rule_selection_report,
    ApproxOptions, ApproxResult, ContextSample, DetectorConfig, LossSeries, PerformanceGrid,
    SampledContext, Split,
};
use ngram_rules::corpus::TokenId;
use ngram_rules::dist::RuleSet;
use ngram_rules::predict::PredictionSet;
use ngram_rules::rules::RuleFamily;
use ngram_rules::store::{CountStore, Mask, PatternKey};

use crate::cmd_data::RulesetArgs;
use crate::MetricArgs;

#[derive(Subcommand, Debug)]
pub enum AnalyzeCmd {
    /// Count / model-variance / rule-distance rows, fits, and bands.
    Approx(ApproxArgs),
    /// Optimal-rule series across checkpoints.
    Curriculum(CurriculumArgs),
    /// Early-stopping detection from limited-context loss series.
    Overfit(OverfitArgs),
    /// Mean top-1 and optimal distance per (family, max-context) cell.
    Performance(PerformanceArgs),
}

pub fn run(cmd: AnalyzeCmd) -> Result<()> {
    match cmd {
        AnalyzeCmd::Approx(args) => approx(args),
        AnalyzeCmd::Curriculum(args) => curriculum_cmd(args),
        AnalyzeCmd::Overfit(args) => overfit(args),
        AnalyzeCmd::Performance(args) => performance(args),
    }
}

fn load_inputs(store: &Path, preds: &Path) -> Result<(CountStore, PredictionSet)> {
    let store = CountStore::load(store).with_context(|| format!("load store {store:?}"))?;
    let preds = PredictionSet::read(preds).with_context(|| format!("read predictions {preds:?}"))?;
    Ok((store, preds))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("write {path:?}"))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

// ---------------------------------------------------------------- approx

#[derive(Args, Debug)]
pub struct ApproxArgs {
    /// Multi-run prediction file over one checkpoint.
    #[arg(long, value_name = "FILE")]
    preds: PathBuf,
    /// Count store file.
    #[arg(long, value_name = "FILE")]
    store: PathBuf,
    #[command(flatten)]
    ruleset: RulesetArgs,
    #[command(flatten)]
    metric: MetricArgs,
    /// X-axis buckets for the banded summaries.
    #[arg(long, default_value_t = 20)]
    band_buckets: usize,
    /// Buckets with fewer points are omitted.
    #[arg(long, default_value_t = 3)]
    band_min_points: usize,
    /// Output path prefix.
    #[arg(long, value_name = "PREFIX")]
    out_prefix: PathBuf,
}

/// Rebuild the sampled-context list from the prediction records: the
/// distinct contexts, with counts looked up in the store.
fn sample_from_preds(preds: &PredictionSet, store: &CountStore) -> Result<ContextSample> {
    let mut lens: Vec<usize> = preds.records().iter().map(|r| r.context.len()).collect();
    lens.sort_unstable();
    lens.dedup();
    let [n] = lens[..] else {
        bail!("predictions mix context lengths {lens:?}; the analysis needs one");
    };
    let mut unique: Vec<Vec<TokenId>> =
        preds.records().iter().map(|r| r.context.clone()).collect();
    unique.sort();
    unique.dedup();
    let mask = Mask::all_lit(n)?;
    let mut contexts = Vec::with_capacity(unique.len());
    for context in unique {
        let count = store.count(&PatternKey::new(mask.clone(), context.clone())?)?;
        if count == 0 {
            bail!(
                "context {:?} does not occur in the corpus counts",
                context.iter().map(|t| t.0).collect::<Vec<_>>()
            );
        }
        contexts.push(SampledContext { context, count });
    }
    Ok(ContextSample { n, contexts })
}

fn approx(args: ApproxArgs) -> Result<()> {
    let (store, preds) = load_inputs(&args.store, &args.preds)?;
    let sample = sample_from_preds(&preds, &store)?;
    let ruleset = RuleSet::new(args.ruleset.spec()?);
    let metric = args.metric.parse()?;
    let opts = ApproxOptions {
        band_buckets: args.band_buckets,
        band_min_points: args.band_min_points,
    };
    let result = approx_criterion(&sample, &preds, &ruleset, &store, metric, &opts)?;
    write_file(&prefixed(&args.out_prefix, ".rows.tsv"), &approx_rows_tsv(&result))?;
    write_file(&prefixed(&args.out_prefix, ".fits.tsv"), &approx_fits_tsv(&result))?;
    write_file(&prefixed(&args.out_prefix, ".bands.tsv"), &approx_bands_tsv(&result))?;
    println!("contexts={} metric={metric}", result.rows.len());
    println!("{:<22} {:>9} {:>10} {:>10} {:>9} {:>8}", "plot", "x", "slope", "intercept", "r2", "points");
    for plot in &result.plots {
        match &plot.fit {
            Some(fit) => println!(
                "{:<22} {:>9} {:>10.4} {:>10.4} {:>9.4} {:>8}",
                plot.plot, fit.x_transform, fit.slope, fit.intercept, fit.r_squared, fit.n_points
            ),
            None => println!("{:<22} {:>9} {:>10} {:>10} {:>9} {:>8}", plot.plot, plot.x_transform, "-", "-", "-", "-"),
        }
    }
    Ok(())
}

fn ctx_field(context: &[TokenId]) -> String {
    context.iter().map(|t| t.0.to_string()).collect::<Vec<_>>().join(",")
}

fn approx_rows_tsv(result: &ApproxResult) -> String {
    let mut out = String::from("#schema=approx-rows v=1\n");
    out.push_str("context\tcount\tmodel_variance\td_full\toptimal_distance\toptimal_sigma\toptimal_depth\tdefined_rules\texact\n");
    for row in &result.rows {
        let d_full = row.d_full.map_or("-".to_string(), |d| format!("{d:.6}"));
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{}\t{:.6}\t{}\t{}\t{}\t{}\n",
            ctx_field(&row.context),
            row.count,
            row.model_variance,
            d_full,
            row.optimal_distance,
            row.optimal_rule.canonical_sigma(),
            row.optimal_rule.depth(),
            row.defined_rule_count,
            u8::from(row.exact),
        ));
    }
    out
}

fn approx_fits_tsv(result: &ApproxResult) -> String {
    let mut out = String::from("#schema=approx-fits v=1\n");
    out.push_str("plot\tbasis\tx_transform\tslope\tintercept\tr_squared\tn_points\n");
    for plot in &result.plots {
        for (basis, fit) in [("raw", &plot.fit), ("band_means", &plot.band_fit)] {
            match fit {
                Some(fit) => out.push_str(&format!(
                    "{}\t{basis}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                    plot.plot, fit.x_transform, fit.slope, fit.intercept, fit.r_squared,
                    fit.n_points
                )),
                None => out.push_str(&format!(
                    "{}\t{basis}\t{}\t-\t-\t-\t-\n",
                    plot.plot, plot.x_transform
                )),
            }
        }
    }
    out
}

fn approx_bands_tsv(result: &ApproxResult) -> String {
    let mut out = String::from("#schema=approx-bands v=1\n");
    out.push_str("plot\tx_lo\tx_hi\tmean\tstd\tn\n");
    for plot in &result.plots {
        for band in &plot.bands {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                plot.plot, band.x_lo, band.x_hi, band.mean, band.std, band.n
            ));
        }
    }
    out
}

// ------------------------------------------------------------ curriculum

#[derive(Args, Debug)]
pub struct CurriculumArgs {
    /// Prediction file spanning multiple checkpoint steps.
    #[arg(long, value_name = "FILE")]
    preds: PathBuf,
    /// Count store file.
    #[arg(long, value_name = "FILE")]
    store: PathBuf,
    /// Comma-separated families to track.
    #[arg(long, default_value = "all")]
    families: String,
    /// Comma-separated maximum context lengths to track.
    #[arg(long, default_value = "1,2,3")]
    max_contexts: String,
    #[command(flatten)]
    metric: MetricArgs,
    /// Output path prefix.
    #[arg(long, value_name = "PREFIX")]
    out_prefix: PathBuf,
}

pub fn parse_families(list: &str) -> Result<Vec<RuleFamily>> {
    list.split(',')
        .map(|f| Ok(f.trim().parse::<RuleFamily>()?))
        .collect()
}

pub fn parse_usizes(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|m| m.trim().parse::<usize>().context("bad integer list"))
        .collect()
}

fn curriculum_cmd(args: CurriculumArgs) -> Result<()> {
    let (store, preds) = load_inputs(&args.store, &args.preds)?;
    let families = parse_families(&args.families)?;
    let ms = parse_usizes(&args.max_contexts)?;
    let mut cells = Vec::new();
    for &f in &families {
        for &m in &ms {
            cells.push((f, m));
        }
    }
    let metric = args.metric.parse()?;
    let points = curriculum(&preds, &cells, &store, metric)?;
    let mut out = String::from("#schema=curriculum-series v=1\n");
    out.push_str("step\tfamily\tmax_context\tmean_distance\tmean_top1_vs_model\tmean_top1_vs_ground_truth\tcontexts\n");
    for p in &points {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            p.step,
            p.family,
            p.max_context,
            p.mean_distance,
            p.mean_top1_vs_model,
            p.mean_top1_vs_ground_truth,
            p.contexts
        ));
    }
    write_file(&prefixed(&args.out_prefix, ".series.tsv"), &out)?;
    println!(
        "{:>8} {:<8} {:>3} {:>10} {:>10} {:>10}",
        "step", "family", "M", "dist", "top1@model", "top1@gt"
    );
    for p in &points {
        println!(
            "{:>8} {:<8} {:>3} {:>10.4} {:>10.4} {:>10.4}",
            p.step, p.family.to_string(), p.max_context, p.mean_distance,
            p.mean_top1_vs_model, p.mean_top1_vs_ground_truth
        );
    }
    Ok(())
}

// --------------------------------------------------------------- overfit

#[derive(Args, Debug)]
pub struct OverfitArgs {
    /// Loss series TSV (`#schema=loss-series v=1`, columns split, limit,
    /// step, loss).
    #[arg(long, value_name = "FILE")]
    loss_tsv: Option<PathBuf>,
    /// Train-split prediction file; losses derived per (limit, step).
    #[arg(long, value_name = "FILE", conflicts_with = "loss_tsv")]
    train_preds: Option<PathBuf>,
    /// Optional validation-split prediction file.
    #[arg(long, value_name = "FILE", conflicts_with = "loss_tsv")]
    valid_preds: Option<PathBuf>,
    /// Centered moving-average window.
    #[arg(long, default_value_t = 3)]
    window: usize,
    /// Consecutive breaching checkpoints required.
    #[arg(long, default_value_t = 2)]
    patience: usize,
    /// Minimum rise over the running minimum, in nats.
    #[arg(long, default_value_t = 1e-3)]
    min_delta: f64,
    /// Output path prefix.
    #[arg(long, value_name = "PREFIX")]
    out_prefix: PathBuf,
}

fn read_loss_tsv(path: &Path) -> Result<Vec<LossSeries>> {
    let text = fs::read_to_string(path).with_context(|| format!("read {path:?}"))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.starts_with("#schema=loss-series") => {}
        other => bail!("expected #schema=loss-series header, got {other:?}"),
    }
    match lines.next() {
        Some("split\tlimit\tstep\tloss") => {}
        other => bail!("unexpected loss column header {other:?}"),
    }
    let mut grouped: BTreeMap<(Split, u32), Vec<(u64, f64)>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [split, limit, step, loss] = fields[..] else {
            bail!("loss line {}: expected 4 fields", i + 3);
        };
        let split: Split = split.parse()?;
        grouped
            .entry((split, limit.parse()?))
            .or_default()
            .push((step.parse()?, loss.parse()?));
    }
    Ok(grouped
        .into_iter()
        .map(|((split, limit), mut points)| {
            points.sort_by_key(|&(s, _)| s);
            LossSeries { split, limit, points }
        })
        .collect())
}

/// Mean loss per (limit, step), averaged over runs.
fn series_from_preds(path: &Path, split: Split) -> Result<Vec<LossSeries>> {
    let preds = PredictionSet::read(path)?;
    let mut sums: BTreeMap<(u32, u64), (f64, usize)> = BTreeMap::new();
    for (key, loss) in preds.cross_entropy_by_group() {
        let entry = sums.entry((key.limit.unwrap_or(0), key.step)).or_insert((0.0, 0));
        entry.0 += loss;
        entry.1 += 1;
    }
    let mut grouped: BTreeMap<u32, Vec<(u64, f64)>> = BTreeMap::new();
    for ((limit, step), (sum, n)) in sums {
        grouped.entry(limit).or_default().push((step, sum / n as f64));
    }
    Ok(grouped
        .into_iter()
        .map(|(limit, points)| LossSeries { split, limit, points })
        .collect())
}

fn overfit(args: OverfitArgs) -> Result<()> {
    let mut series = match (&args.loss_tsv, &args.train_preds) {
        (Some(path), None) => read_loss_tsv(path)?,
        (None, Some(train)) => {
            let mut s = series_from_preds(train, Split::Train)?;
            if let Some(valid) = &args.valid_preds {
                s.extend(series_from_preds(valid, Split::Valid)?);
            }
            s
        }
        _ => bail!("exactly one of --loss-tsv or --train-preds is required"),
    };
    series.sort_by_key(|s| (s.split, s.limit));
    let cfg = DetectorConfig {
        window: args.window,
        patience: args.patience,
        min_delta: args.min_delta,
    };
    let report = overfit_detect(&series, &cfg)?;

    let mut out = String::from("#schema=overfit-smoothed v=1\n");
    out.push_str("split\tlimit\tstep\tloss\tsmoothed\n");
    for s in &series {
        let smoothed = &report.smoothed[&(s.split, s.limit)];
        for (&(step, raw), &(_, smooth)) in s.points.iter().zip(smoothed) {
            out.push_str(&format!("{}\t{}\t{}\t{:.6}\t{:.6}\n", s.split, s.limit, step, raw, smooth));
        }
    }
    write_file(&prefixed(&args.out_prefix, ".losses.tsv"), &out)?;

    let mut stop = String::from("#schema=overfit-stop v=1\n");
    stop.push_str("stop_step\ttrigger_split\ttrigger_limit\ttrigger_step\trunning_min\tsmoothed_value\n");
    match &report.trigger {
        Some(t) => stop.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\n",
            t.step, t.split, t.limit, t.step, t.running_min, t.smoothed_value
        )),
        None => stop.push_str("-\t-\t-\t-\t-\t-\n"),
    }
    write_file(&prefixed(&args.out_prefix, ".stop.tsv"), &stop)?;

    match &report.trigger {
        Some(t) => println!(
            "stop_step={} (split={} limit={} smoothed {:.4} over running minimum {:.4}, window={} patience={} min_delta={})",
            t.step, t.split, t.limit, t.smoothed_value, t.running_min,
            cfg.window, cfg.patience, cfg.min_delta
        ),
        None => println!(
            "stop_step=none (window={} patience={} min_delta={})",
            cfg.window, cfg.patience, cfg.min_delta
        ),
    }
    Ok(())
}

// ----------------------------------------------------------- performance

#[derive(Args, Debug)]
pub struct PerformanceArgs {
    /// Single-run, single-checkpoint prediction file.
    #[arg(long, value_name = "FILE")]
    preds: PathBuf,
    /// Count store file.
    #[arg(long, value_name = "FILE")]
    store: PathBuf,
    /// Comma-separated families (rows).
    #[arg(long, default_value = "all,subgram,suffix")]
    families: String,
    /// Comma-separated maximum context lengths (columns).
    #[arg(long, default_value = "1,2,3,4,5,6,7")]
    max_contexts: String,
    #[command(flatten)]
    metric: MetricArgs,
    /// Output path prefix.
    #[arg(long, value_name = "PREFIX")]
    out_prefix: PathBuf,
}

fn performance(args: PerformanceArgs) -> Result<()> {
    let (store, preds) = load_inputs(&args.store, &args.preds)?;
    let families = parse_families(&args.families)?;
    let ms = parse_usizes(&args.max_contexts)?;
    let metric = args.metric.parse()?;
    let grid = performance_grid(&preds, &families, &ms, &store, metric)?;

    let mut out = String::from("#schema=performance-grid v=1\n");
    out.push_str("row\tmax_context\tmean_top1\tmean_distance\trecords\n");
    for &f in &families {
        for &m in &ms {
            let cell = grid.cell(f, m).expect("requested cell");
            out.push_str(&format!(
                "{f}\t{m}\t{:.6}\t{:.6}\t{}\n",
                cell.mean_top1, cell.mean_distance, grid.records
            ));
        }
    }
    for &m in &ms {
        let cell = grid.backoff[&m];
        out.push_str(&format!(
            "backoff\t{m}\t{:.6}\t{:.6}\t{}\n",
            cell.mean_top1, cell.mean_distance, grid.records
        ));
    }
    write_file(&prefixed(&args.out_prefix, ".grid.tsv"), &out)?;
    print_grid(&grid, &families, &ms, metric);
    Ok(())
}

fn print_grid(grid: &PerformanceGrid, families: &[RuleFamily], ms: &[usize], metric: ngram_rules::Metric) {
    println!("records={} metric={metric}", grid.records);
    let header = || {
        print!("{:<22}", "ruleset / context");
        for m in ms {
            print!(" {m:>8}");
        }
        println!();
    };
    println!("mean top-1 agreement (%):");
    header();
    for &f in families {
        print!("{:<22}", f.to_string());
        for &m in ms {
            print!(" {:>8.1}", grid.cell(f, m).unwrap().mean_top1 * 100.0);
        }
        println!();
    }
    print!("{:<22}", "backoff");
    for &m in ms {
        print!(" {:>8.1}", grid.backoff[&m].mean_top1 * 100.0);
    }
    println!();
    println!("mean optimal distance:");
    header();
    for &f in families {
        print!("{:<22}", f.to_string());
        for &m in ms {
            print!(" {:>8.3}", grid.cell(f, m).unwrap().mean_distance);
        }
        println!();
    }
    print!("{:<22}", "backoff");
    for &m in ms {
        print!(" {:>8.3}", grid.backoff[&m].mean_distance);
    }
    println!();
}

// ---------------------------------------------------------------- report

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Single-run predictions over one contiguous sequence.
    #[arg(long, value_name = "FILE")]
    preds: PathBuf,
    /// Count store file.
    #[arg(long, value_name = "FILE")]
    store: PathBuf,
    #[command(flatten)]
    ruleset: RulesetArgs,
    #[command(flatten)]
    metric: MetricArgs,
    /// Keep only records of this sequence id.
    #[arg(long)]
    seq: Option<u64>,
    /// Print the ANSI rendering to stdout.
    #[arg(long, default_value_t = false)]
    ansi: bool,
    /// Output path prefix.
    #[arg(long, value_name = "PREFIX")]
    out_prefix: PathBuf,
}

pub fn report(args: ReportArgs) -> Result<()> {
    let (store, mut preds) = load_inputs(&args.store, &args.preds)?;
    if let Some(seq) = args.seq {
        let records: Vec<_> =
            preds.records().iter().filter(|r| r.seq == seq).cloned().collect();
        preds = PredictionSet::new(preds.vocab_size(), preds.tag().to_string(), records)?;
    }
    let ruleset = RuleSet::new(args.ruleset.spec()?);
    let metric = args.metric.parse()?;
    let report = rule_selection_report(&preds, &ruleset, &store, metric)?;
    write_file(&prefixed(&args.out_prefix, ".tsv"), &report.to_tsv())?;
    write_file(&prefixed(&args.out_prefix, ".html"), &report.to_html())?;
    if args.ansi {
        print!("{}", report.to_ansi());
    } else {
        println!(
            "seq={} tokens={} mean_distance={:.4} disagreements={}",
            report.seq,
            report.tokens.len(),
            report.mean_distance,
            report.disagreements
        );
    }
    Ok(())
}
