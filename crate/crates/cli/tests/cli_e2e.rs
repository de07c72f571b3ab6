//! End-to-end pipeline tests against the built binary: determinism,
//! exit codes, and the synthetic generate -> chunk -> build -> predict ->
//! analyze flow.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ngram-rules")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn binary")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("read {name}: {e}"))
}

struct Pipeline {
    dir: PathBuf,
}

impl Pipeline {
    fn prepare(dir: &Path) -> Self {
        let p = Self { dir: dir.to_path_buf() };
        ok(
            &p.dir,
            &[
                "synth", "generate", "--vocab", "16", "--order", "3", "--teacher-seed", "9",
                "--concentration", "0.2", "--docs", "40", "--doc-len", "400", "--seed", "1",
                "--out", "corpus.txt", "--write-teacher", "teacher.cfg",
            ],
        );
        ok(
            &p.dir,
            &[
                "chunk", "--corpus", "corpus.txt", "--chunk-len", "128", "--shuffle-seed", "4",
                "--out", "chunks.txt",
            ],
        );
        ok(
            &p.dir,
            &[
                "build-counts", "--chunks", "chunks.txt", "--family", "all", "--max-context",
                "3", "--out", "store.ngrs",
            ],
        );
        p
    }
}

#[test]
fn rules_enumerate_counts_match_the_family_sizes() {
    let dir = tempfile::tempdir().unwrap();
    for (m, expect) in [(1usize, 2usize), (2, 5), (3, 13), (4, 34)] {
        let stdout = ok(
            dir.path(),
            &["rules", "enumerate", "--family", "all", "--max-context", &m.to_string()],
        );
        assert_eq!(stdout.lines().count(), expect, "M={m}");
    }
    let stdout = ok(dir.path(), &["rules", "show", "--sigma", "+-*+"]);
    assert_eq!(stdout.trim(), "sigma=+-*+ depth=4 mask=L.L");
    let stdout = ok(
        dir.path(),
        &["rules", "required-masks", "--family", "all", "--max-context", "2"],
    );
    assert_eq!(stdout.lines().collect::<Vec<_>>(), vec!["L", "LL", "L."]);
}

#[test]
fn full_pipeline_is_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [dir_a.path(), dir_b.path()] {
        let p = Pipeline::prepare(dir);
        ok(
            &p.dir,
            &[
                "synth", "predict", "--teacher", "teacher.cfg", "--store", "store.ngrs",
                "--sample-n", "3", "--buckets", "8", "--per-bucket", "20", "--sample-seed",
                "2", "--runs", "3", "--noise", "0.4", "--noise-count-scaled", "--out",
                "preds.txt",
            ],
        );
        ok(
            &p.dir,
            &[
                "analyze", "approx", "--preds", "preds.txt", "--store", "store.ngrs",
                "--family", "suffix", "--max-context", "3", "--out-prefix", "approx",
            ],
        );
        ok(
            &p.dir,
            &[
                "synth", "predict", "--teacher", "teacher.cfg", "--store", "store.ngrs",
                "--sample-n", "3", "--buckets", "8", "--per-bucket", "20", "--sample-seed",
                "2", "--runs", "1", "--out", "single.txt",
            ],
        );
        ok(
            &p.dir,
            &[
                "analyze", "performance", "--preds", "single.txt", "--store", "store.ngrs",
                "--families", "all,subgram,suffix", "--max-contexts", "1,2,3",
                "--out-prefix", "perf",
            ],
        );
    }
    for name in [
        "corpus.txt",
        "chunks.txt",
        "store.ngrs",
        "preds.txt",
        "single.txt",
        "approx.rows.tsv",
        "approx.fits.tsv",
        "approx.bands.tsv",
        "perf.grid.tsv",
    ] {
        assert_eq!(
            read(dir_a.path(), name),
            read(dir_b.path(), name),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn workers_flag_does_not_change_outputs() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(dir_a.path(), "1"), (dir_b.path(), "4")] {
        ok(
            dir,
            &[
                "synth", "generate", "--vocab", "12", "--order", "2", "--teacher-seed", "3",
                "--docs", "30", "--doc-len", "300", "--seed", "5", "--out", "c.txt",
            ],
        );
        ok(
            dir,
            &[
                "build-counts", "--corpus", "c.txt", "--chunk-len", "64", "--family", "all",
                "--max-context", "3", "--out", "s.ngrs", "--workers", workers,
            ],
        );
    }
    assert_eq!(read(dir_a.path(), "s.ngrs"), read(dir_b.path(), "s.ngrs"));
}

#[test]
fn grid_top_row_is_perfect_when_predictions_equal_corpus_stats() {
    // Self-predictions: the teacher is replaced by the store's own full
    // rule via a second store query path. Emitting exact teacher
    // conditionals over a high-count filter approximates this; the exact
    // variant is covered in the library acceptance suite. Here: the full
    // synthetic pipeline must produce a grid whose deepest suffix cell
    // dominates the unigram cell.
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::prepare(dir.path());
    ok(
        &p.dir,
        &[
            "synth", "predict", "--teacher", "teacher.cfg", "--store", "store.ngrs",
            "--sample-n", "3", "--buckets", "6", "--per-bucket", "30", "--sample-seed", "7",
            "--min-count", "20", "--out", "preds.txt",
        ],
    );
    let stdout = ok(
        &p.dir,
        &[
            "analyze", "performance", "--preds", "preds.txt", "--store", "store.ngrs",
            "--families", "suffix", "--max-contexts", "1,2,3", "--out-prefix", "perf",
        ],
    );
    assert!(stdout.contains("mean top-1 agreement"));
    let grid = String::from_utf8(read(&p.dir, "perf.grid.tsv")).unwrap();
    let cell = |row: &str, m: &str| -> (f64, f64) {
        for line in grid.lines().skip(2) {
            let f: Vec<&str> = line.split('\t').collect();
            if f[0] == row && f[1] == m {
                return (f[2].parse().unwrap(), f[3].parse().unwrap());
            }
        }
        panic!("missing cell {row}/{m}");
    };
    let (t1_m1, d_m1) = cell("suffix", "1");
    let (t1_m3, d_m3) = cell("suffix", "3");
    assert!(d_m3 <= d_m1, "distance must not rise with M");
    assert!(t1_m3 >= t1_m1 - 1e-9, "agreement should not collapse with M");
}

#[test]
fn report_renders_tsv_and_html() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::prepare(dir.path());
    ok(&p.dir, &["chunk", "--corpus", "corpus.txt", "--doc-level", "--out", "doc.txt"]);
    ok(
        &p.dir,
        &[
            "synth", "predict", "--teacher", "teacher.cfg", "--chunks", "doc.txt",
            "--ctx-cap", "8", "--out", "story.txt",
        ],
    );
    let stdout = ok(
        &p.dir,
        &[
            "report", "--preds", "story.txt", "--store", "store.ngrs", "--family", "all",
            "--max-context", "3", "--seq", "0", "--out-prefix", "story",
        ],
    );
    assert!(stdout.contains("mean_distance="));
    let tsv = String::from_utf8(read(&p.dir, "story.tsv")).unwrap();
    assert!(tsv.starts_with("#schema=rule-report v=1\n"));
    assert_eq!(tsv.lines().count(), 2 + 400); // schema + header + one row per doc token
    let html = String::from_utf8(read(&p.dir, "story.html")).unwrap();
    assert!(html.contains("<table>"));
}

#[test]
fn overfit_detects_on_loss_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut tsv = String::from("#schema=loss-series v=1\nsplit\tlimit\tstep\tloss\n");
    for (i, loss) in [2.0, 1.5, 1.2, 1.0, 1.1, 1.3, 1.6].iter().enumerate() {
        tsv.push_str(&format!("train\t3\t{}\t{}\n", i * 100, loss));
    }
    std::fs::write(dir.path().join("losses.tsv"), tsv).unwrap();
    let stdout = ok(
        dir.path(),
        &[
            "analyze", "overfit", "--loss-tsv", "losses.tsv", "--window", "1", "--patience",
            "1", "--min-delta", "0.01", "--out-prefix", "of",
        ],
    );
    assert!(stdout.contains("stop_step=400"), "stdout: {stdout}");
    let stop = String::from_utf8(read(dir.path(), "of.stop.tsv")).unwrap();
    assert!(stop.lines().nth(2).unwrap().starts_with("400\ttrain\t3"));
}

#[test]
fn overfit_from_prediction_files_yields_flat_no_stop() {
    // A source whose behaviour does not change across checkpoints gives a
    // flat limited-context loss series: the detector must not trigger.
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::prepare(dir.path());
    ok(
        &p.dir,
        &[
            "synth", "predict", "--teacher", "teacher.cfg", "--store", "store.ngrs",
            "--sample-n", "3", "--buckets", "6", "--per-bucket", "20", "--sample-seed", "9",
            "--steps", "0,100,200,300", "--limit", "2", "--tag", "train", "--out",
            "train.txt",
        ],
    );
    let stdout = ok(
        &p.dir,
        &[
            "analyze", "overfit", "--train-preds", "train.txt", "--window", "1",
            "--patience", "1", "--min-delta", "0.001", "--out-prefix", "of",
        ],
    );
    assert!(stdout.contains("stop_step=none"), "stdout: {stdout}");
    let losses = String::from_utf8(read(&p.dir, "of.losses.tsv")).unwrap();
    assert!(losses.starts_with("#schema=overfit-smoothed v=1\n"));
    // One series (train, limit 2) with four steps.
    assert_eq!(losses.lines().count(), 2 + 4);
    let first: Vec<&str> = losses.lines().nth(2).unwrap().split('\t').collect();
    assert_eq!(&first[..3], &["train", "2", "0"]);
    // Flat series: every step's loss equals the first.
    let loss0 = first[3];
    for line in losses.lines().skip(2) {
        assert_eq!(line.split('\t').nth(3).unwrap(), loss0);
    }
}

#[test]
fn js_metric_is_accepted_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::prepare(dir.path());
    ok(
        &p.dir,
        &[
            "synth", "predict", "--teacher", "teacher.cfg", "--store", "store.ngrs",
            "--sample-n", "3", "--buckets", "6", "--per-bucket", "10", "--sample-seed", "3",
            "--out", "preds.txt",
        ],
    );
    let stdout = ok(
        &p.dir,
        &[
            "analyze", "performance", "--preds", "preds.txt", "--store", "store.ngrs",
            "--families", "suffix", "--max-contexts", "1,2", "--metric", "js",
            "--out-prefix", "perfjs",
        ],
    );
    assert!(stdout.contains("metric=js"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg"), "max-context=2\nfamily=all\n").unwrap();
    let stdout = ok(
        dir.path(),
        &["rules", "enumerate", "--config", "cfg"],
    );
    assert_eq!(stdout.lines().count(), 5); // family all, M=2 from config
    let stdout = ok(
        dir.path(),
        &["rules", "enumerate", "--config", "cfg", "--max-context", "3"],
    );
    assert_eq!(stdout.lines().count(), 13); // flag wins over config
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let usage = run_in(dir.path(), &["no-such-command"]);
    assert_eq!(usage.status.code(), Some(1));
    let usage = run_in(dir.path(), &["query", "--store", "x", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(1));
    let data = run_in(dir.path(), &["query", "--store", "missing.ngrs", "--stats"]);
    assert_eq!(data.status.code(), Some(2));
    // Corrupted store file: checksum failure is a data error.
    std::fs::write(dir.path().join("bad.ngrs"), b"NGRS1 garbage garbage garbage").unwrap();
    let data = run_in(dir.path(), &["query", "--store", "bad.ngrs", "--stats"]);
    assert_eq!(data.status.code(), Some(2));
    let help = run_in(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn query_matches_known_counts() {
    let dir = tempfile::tempdir().unwrap();
    // Tiny hand-written corpus: the bigram (5 -> 6) twice, (5 -> 7) once.
    std::fs::write(dir.path().join("tiny.txt"), "vocab=8 bos=0\n5 6 5 6 5 7\n").unwrap();
    ok(
        dir.path(),
        &[
            "build-counts", "--corpus", "tiny.txt", "--chunk-len", "16", "--family",
            "suffix", "--max-context", "1", "--out", "tiny.ngrs",
        ],
    );
    let stdout = ok(dir.path(), &["query", "--store", "tiny.ngrs", "--pattern", "5"]);
    assert!(stdout.contains("total=3"), "stdout: {stdout}");
    assert!(stdout.contains("next 6 2"));
    assert!(stdout.contains("next 7 1"));
}
