use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use ttgnn::tt::{io as tt_io, plan_factorization, uniform_ranks};

fn ttgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttgnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ttgnn(args);
    assert!(
        out.status.success(),
        "ttgnn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn two_cliques(dir: &Path) -> std::path::PathBuf {
    let mut text = String::from("# two 6-cliques, interleaved ids\n");
    for group in 0..2 {
        let ids: Vec<usize> = (0..6).map(|i| 2 * i + group).collect();
        for a in 0..6 {
            for b in a + 1..6 {
                text += &format!("{} {}\n", ids[a], ids[b]);
            }
        }
    }
    let path = dir.join("cliques.txt");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn report_matches_known_table_sizes() {
    let text = ok(&[
        "report", "--nodes", "169363", "--dim", "128", "--d", "3", "--ranks", "16,32,64",
        "--row-factors", "55,55,56", "--col-factors", "8,4,4",
    ]);
    assert!(text.contains("rank 16: cores (1,55,8,16) (16,55,4,16) (16,56,4,1); params 66944; compression 323.83x"));
    assert!(text.contains("rank 32: cores (1,55,8,32) (32,55,4,32) (32,56,4,1); params 246528; compression 87.94x"));
    assert!(text.contains("rank 64: cores (1,55,8,64) (64,55,4,64) (64,56,4,1); params 943616; compression 22.97x"));
    assert!(text.starts_with("config: {"));

    let v = ok_json(&[
        "report", "--nodes", "2449029", "--dim", "100", "--ranks", "16", "--row-factors", "125,140,140",
        "--col-factors", "4,5,5", "--baseline-dim", "128", "--json",
    ]);
    let r = &v["ranks"][0];
    assert_eq!(r["params"], 198_400);
    assert_eq!(r["compression_ratio"].as_f64().unwrap().floor(), 1580.0);
    assert_eq!(v["baseline_params"], 2_449_029u64 * 128);
    assert_eq!(v["config"]["baseline_dim"], 128);
}

#[test]
fn report_of_a_single_entry_table() {
    for d in [2usize, 3] {
        let v = ok_json(&["report", "--nodes", "1", "--dim", "1", "--d", &d.to_string(), "--ranks", "1", "--json"]);
        assert_eq!(v["baseline_params"], 1);
        assert_eq!(v["padded_rows"], 1);
        let r = &v["ranks"][0];
        // one parameter per core
        assert_eq!(r["params"], d);
        for shape in r["core_shapes"].as_array().unwrap() {
            assert_eq!(shape, &serde_json::json!([1, 1, 1, 1]));
        }
    }
}

#[test]
fn report_uses_the_planner_without_explicit_factors() {
    let v = ok_json(&["report", "--nodes", "1000", "--dim", "64", "--ranks", "4", "--json"]);
    let planned = plan_factorization(1000, 64, 3, uniform_ranks(3, 4), false).unwrap();
    assert_eq!(v["row_factors"], serde_json::json!(planned.row_factors()));
    assert_eq!(v["ranks"][0]["params"], planned.count_params());
}

#[test]
fn report_rejects_bad_shapes() {
    assert!(!ttgnn(&["report", "--nodes", "0", "--dim", "4", "--ranks", "2"]).status.success());
    assert!(!ttgnn(&["report", "--nodes", "100", "--dim", "4", "--d", "1", "--ranks", "2"]).status.success());
    // factors too small for the table
    assert!(!ttgnn(&["report", "--nodes", "100", "--dim", "4", "--ranks", "2", "--row-factors", "2,2,2"])
        .status
        .success());
}

#[test]
fn partition_two_cliques_has_zero_cut() {
    let dir = TempDir::new().unwrap();
    let g = two_cliques(dir.path());
    let perm = dir.path().join("perm.txt");
    let v = ok_json(&["partition", "--graph", p(&g), "--parts", "2", "--seed", "1", "--perm-out", p(&perm)]);
    assert_eq!(v["edge_cut"], 0);
    assert_eq!(v["level_cuts"], serde_json::json!([0]));
    assert_eq!(v["part_sizes"], serde_json::json!([6, 6]));
    assert_eq!(v["balance"], 1.0);

    let new_ids: Vec<usize> = fs::read_to_string(&perm)
        .unwrap()
        .lines()
        .map(|l| l.trim().parse().unwrap())
        .collect();
    assert_eq!(new_ids.len(), 12);
    // each clique lands on a contiguous id range
    for group in 0..2 {
        let mut ids: Vec<usize> = (0..6).map(|i| new_ids[2 * i + group]).collect();
        ids.sort();
        assert_eq!(ids[5] - ids[0], 5);
    }
}

#[test]
fn partition_with_one_part_writes_identity() {
    let dir = TempDir::new().unwrap();
    let g = two_cliques(dir.path());
    let perm = dir.path().join("perm.txt");
    ok(&["partition", "--graph", p(&g), "--branching", "1", "--perm-out", p(&perm)]);
    let expected: String = (0..12).map(|i| format!("{i}\n")).collect();
    assert_eq!(fs::read_to_string(&perm).unwrap(), expected);
}

#[test]
fn partition_of_sbm_beats_random_baseline() {
    let dir = TempDir::new().unwrap();
    let (e, l) = (dir.path().join("e.txt"), dir.path().join("l.txt"));
    ok(&["sbm", "--seed", "5", "--edges-out", p(&e), "--labels-out", p(&l)]);
    let perm = dir.path().join("perm.txt");
    let v = ok_json(&[
        "partition", "--graph", p(&e), "--branching", "10", "--perm-out", p(&perm), "--random-baseline",
    ]);
    let cut = v["edge_cut"].as_f64().unwrap();
    let random = v["random_baseline_cut"].as_f64().unwrap();
    assert!(cut < random, "cut {cut} vs random {random}");
    assert!(cut <= 0.5 * random, "cut {cut} vs random {random}");
    assert_eq!(v["config"]["random_baseline"], true);
}

#[test]
fn partition_two_levels_reports_each_cut() {
    let dir = TempDir::new().unwrap();
    let (e, l) = (dir.path().join("e.txt"), dir.path().join("l.txt"));
    ok(&["sbm", "--nodes", "200", "--blocks", "4", "--p-in", "0.3", "--p-out", "0.01", "--edges-out", p(&e), "--labels-out", p(&l)]);
    let perm = dir.path().join("perm.txt");
    let stats = dir.path().join("stats.json");
    let v = ok_json(&[
        "partition", "--graph", p(&e), "--branching", "4,5", "--perm-out", p(&perm), "--stats-out", p(&stats),
    ]);
    let cuts: Vec<u64> = v["level_cuts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
    assert_eq!(cuts.len(), 2);
    assert!(cuts[0] <= cuts[1]);
    assert_eq!(v["edge_cut"].as_u64().unwrap(), cuts[1]);
    assert_eq!(v["leaves"], 20);
    let saved: Value = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn partition_errors_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "0 1\n1 x\n").unwrap();
    let perm = dir.path().join("perm.txt");
    let out = ttgnn(&["partition", "--graph", p(&bad), "--parts", "2", "--perm-out", p(&perm)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let g = two_cliques(dir.path());
    assert!(!ttgnn(&["partition", "--graph", p(&g), "--parts", "13", "--perm-out", p(&perm)]).status.success());
    assert!(!ttgnn(&["partition", "--graph", p(&g), "--perm-out", p(&perm)]).status.success());
    let missing = dir.path().join("missing.txt");
    assert!(!ttgnn(&["partition", "--graph", p(&missing), "--parts", "2", "--perm-out", p(&perm)]).status.success());
}

#[test]
fn sbm_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |tag: &str, seed: &str| {
        let e = dir.path().join(format!("e{tag}.txt"));
        let l = dir.path().join(format!("l{tag}.txt"));
        ok(&["sbm", "--seed", seed, "--edges-out", p(&e), "--labels-out", p(&l)]);
        (fs::read(e).unwrap(), fs::read(l).unwrap())
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("sbm.json");
    let (e, l) = (dir.path().join("e.txt"), dir.path().join("l.txt"));
    let body = serde_json::json!({
        "graph": {"num_nodes": 120, "num_blocks": 3, "p_in": 0.2, "p_out": 0.01},
        "seed": 4,
        "edges_out": e,
        "labels_out": l,
    });
    fs::write(&cfg, body.to_string()).unwrap();
    let v = ok_json(&["--config", p(&cfg), "sbm", "--seed", "9"]);
    assert_eq!(v["config"]["seed"], 9);
    assert_eq!(v["config"]["graph"]["num_nodes"], 120);
    assert_eq!(v["num_nodes"], 120);
    assert_eq!(v["num_classes"], 3);

    fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    assert!(!ttgnn(&["--config", p(&cfg), "sbm"]).status.success());
}

#[test]
fn train_with_zero_epochs_records_initial_metrics_only() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let cores = dir.path().join("cores.tt");
    let v = ok_json(&[
        "--threads", "1", "train", "--epochs", "0", "--seed", "3", "--rank", "2", "--out-dir", p(&out), "--save-cores",
        p(&cores),
    ]);
    assert_eq!(v["epochs_run"], 0);
    assert_eq!(v["best_epoch"], 0);
    assert_eq!(v["config"]["rank"], 2);
    assert_eq!(v["resolved"]["epochs"], 0);

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc,test_acc,seconds");
    assert!(lines[1].starts_with("0,"));

    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["history"].as_array().unwrap().len(), 1);
    assert_eq!(run["config"], v["config"]);

    let emb = tt_io::load(&cores).unwrap();
    assert_eq!(emb.config().ranks(), &[1, 2, 2, 1]);
    assert_eq!(emb.num_params(), v["emb_params"].as_u64().unwrap() as usize);
}

#[test]
fn train_is_deterministic_and_reads_files() {
    let dir = TempDir::new().unwrap();
    let (e, l) = (dir.path().join("e.txt"), dir.path().join("l.txt"));
    ok(&["sbm", "--nodes", "150", "--blocks", "3", "--p-in", "0.2", "--p-out", "0.01", "--edges-out", p(&e), "--labels-out", p(&l)]);
    let args = [
        "train", "--edges", p(&e), "--labels", p(&l), "--epochs", "5", "--row-factors", "5,5,6", "--col-factors", "4,2,1",
        "--emb-dim", "8", "--branching", "5,5", "--seed", "2",
    ];
    let a = ok_json(&args);
    let b = ok_json(&args);
    assert_eq!(a["num_nodes"], 150);
    assert_eq!(a["epochs_run"], 5);
    assert_eq!(a["test_acc"], b["test_acc"]);

    let full = ok_json(&["train", "--edges", p(&e), "--labels", p(&l), "--epochs", "1", "--backend", "full", "--emb-dim", "8"]);
    assert_eq!(full["emb_params"], 150 * 8);
    assert!(!ttgnn(&["train", "--edges", p(&e), "--epochs", "1"]).status.success());
    let cores = dir.path().join("c.tt");
    assert!(!ttgnn(&["train", "--epochs", "0", "--backend", "full", "--save-cores", p(&cores)]).status.success());
}

#[test]
fn bench_reports_exact_parameter_counts() {
    let v = ok_json(&["bench", "--nodes", "4096", "--dim", "16", "--ranks", "2,4,8", "--batch", "64", "--iters", "2"]);
    let rows = v["results"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let mut params = Vec::new();
    for (row, r) in rows.iter().zip([2usize, 4, 8]) {
        let c = plan_factorization(4096, 16, 3, uniform_ranks(3, r), false).unwrap();
        assert_eq!(row["backend"], "tt");
        assert_eq!(row["params"], c.count_params());
        assert!(row["lookup_rows_per_sec"].as_f64().unwrap() > 0.0);
        assert!(row["backward_rows_per_sec"].as_f64().unwrap() > 0.0);
        params.push(c.count_params() as f64);
    }
    // the middle core grows with R^2, the outer ones with R
    for w in params.windows(2) {
        let growth = w[1] / w[0];
        assert!((2.0..=4.0).contains(&growth), "{growth}");
    }
    assert_eq!(rows[3]["backend"], "full");
    assert_eq!(rows[3]["params"], 4096 * 16);

    let v = ok_json(&["bench", "--nodes", "64", "--dim", "4", "--ranks", "2", "--batch", "8", "--iters", "1", "--no-full"]);
    assert_eq!(v["results"].as_array().unwrap().len(), 1);
}

fn small_matrix(dir: &Path, ranks: &str) -> (Output, std::path::PathBuf) {
    let cfg = dir.join("matrix.json");
    let spec = serde_json::json!({
        "graph": {"num_nodes": 64, "num_blocks": 2, "p_in": 0.3, "p_out": 0.02},
        "emb_dim": 4,
        "row_factors": [4, 4, 4],
        "col_factors": [2, 2, 1],
        "orders": ["shuffled", "no-perm"],
        "train": {"epochs": 3},
    });
    fs::write(&cfg, spec.to_string()).unwrap();
    let out = dir.join("out");
    let o = ttgnn(&["--config", p(&cfg), "matrix", "--seeds", "0,1", "--ranks", ranks, "--out-dir", p(&out)]);
    (o, out)
}

#[test]
fn matrix_writes_reports() {
    let dir = TempDir::new().unwrap();
    let (o, out) = small_matrix(dir.path(), "2");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 2);
    assert_eq!(v["runs"], 4);
    assert_eq!(v["config"]["seeds"], serde_json::json!([0, 1]));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("backend,rank,init,branching,order,seeds,"));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"][0]["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn matrix_with_a_failing_cell_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    // rank 64 cannot be initialized with orthogonal cores on 4x4x4 rows
    let (o, out) = small_matrix(dir.path(), "2,64");
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("cells failed"), "{stderr}");
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["failed_cells"].as_array().unwrap().len(), 2);
    // the healthy cells still ran and were written
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
