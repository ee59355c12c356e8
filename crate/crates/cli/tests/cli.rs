use std::path::Path;
use std::process::{Command, Output};

fn polysemous(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polysemous"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = polysemous(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with<'a>(common: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    common.iter().chain(extra).copied().collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_subcommands() {
    let out = ok(&["--help"]);
    for sub in ["train", "optimize", "build", "calibrate", "search", "bench", "knn-graph", "inspect"] {
        assert!(out.contains(sub), "missing {sub}");
    }
}

#[test]
fn threshold_above_code_length_is_rejected() {
    let out = polysemous(&["bench", "--m", "8", "--nbits", "8", "--tau", "65"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tau = 65") && err.contains("64"), "{err}");
}

#[test]
fn unknown_key_in_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# test\nm = 8\nbogus_key = 1\n").unwrap();
    let out = polysemous(&["--config", p(&cfg), "inspect"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus_key") && err.contains("line 3"), "{err}");
}

#[test]
fn missing_dataset_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("x.idx");
    let out = polysemous(&["train", "--data-dir", p(dir.path()), "--learn", "absent.fvecs", "--index", p(&idx)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent.fvecs"), "{err}");
}

#[test]
fn end_to_end_flat_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    ok(&["gen-synthetic", "--out-dir", d, "--dim", "16", "--n-base", "10000", "--n-learn", "4000", "--n-query", "100"]);
    let idx = dir.path().join("flat.idx");
    let common = [
        "--data-dir", d, "--learn", "learn.fvecs", "--base", "base.fvecs", "--query", "query.fvecs",
        "--m", "4", "--nbits", "8", "--kmeans-iters", "8", "--n-iter", "20000", "--index", p(&idx),
    ];

    ok(&with(&common, &["train", "--optimize", "false"]));
    ok(&with(&common, &["optimize"]));
    ok(&with(&common, &["build"]));
    let cal = ok(&with(&common, &["calibrate", "--filter-rate", "0.9"]));
    assert!(cal.contains("tau = "), "{cal}");
    let info = ok(&with(&common, &["inspect"]));
    assert!(info.contains("calibrated_tau"), "{info}");

    let ids = dir.path().join("ids.ivecs");
    let search = ok(&with(&common, &["search", "--k", "10", "--strategy", "dual", "--output", p(&ids)]));
    assert!(search.contains("queries = 100"), "{search}");
    // 100 records of 1 + 10 ints.
    assert_eq!(std::fs::metadata(&ids).unwrap().len(), 100 * 11 * 4);

    let report = dir.path().join("report.txt");
    let bench = ok(&with(&common, &[
        "bench", "--k", "100", "--r-list", "1,10,100", "--repetitions", "1", "--timing-queries", "20",
        "--report", p(&report),
    ]));
    assert!(bench.contains("method=pq/adc"), "{bench}");
    assert!(bench.contains("method=polyd/dual"), "{bench}");
    let records = std::fs::read_to_string(&report).unwrap();
    let recall = |method: &str, r: &str| -> f64 {
        let line = records.lines().find(|l| l.starts_with(&format!("method={method} "))).unwrap();
        line.split_whitespace()
            .find_map(|f| f.strip_prefix(&format!("recall@{r}=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    // Relabeling leaves the plain scan alone; under the same filter rate the
    // annealed words keep more true neighbors than the k-means ones.
    assert_eq!(recall("polyd/adc", "100"), recall("pq/adc", "100"), "{records}");
    assert!(recall("polyd/dual", "100") > recall("pq/dual", "100"), "{records}");
}

#[test]
fn end_to_end_coarse_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    ok(&["gen-synthetic", "--out-dir", d, "--dim", "16", "--n-base", "5000", "--n-learn", "3000", "--n-query", "50"]);
    let idx = dir.path().join("imi.idx");
    let graph = dir.path().join("g.knng");
    let common = [
        "--data-dir", d, "--learn", "learn.fvecs", "--base", "base.fvecs", "--query", "query.fvecs",
        "--index-type", "coarse", "--coarse-kind", "imi", "--k-coarse", "8", "--m", "4", "--nbits", "8",
        "--kmeans-iters", "6", "--n-iter", "5000", "--index", p(&idx), "--nprobe", "8", "--cap", "2000",
    ];
    ok(&with(&common, &["train"]));
    ok(&with(&common, &["build"]));
    let bench = ok(&with(&common, &["bench", "--k", "10", "--r-list", "1,10", "--repetitions", "1", "--timing-queries", "10"]));
    assert!(bench.contains("method=coarse/filtered"), "{bench}");
    let out = ok(&with(&common, &["knn-graph", "--k", "5", "--output", p(&graph), "--check-exact", "true"]));
    assert!(out.contains("rows = 5000"), "{out}");
    assert!(out.contains("exact_1nn_agreement"), "{out}");
}
