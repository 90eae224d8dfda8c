use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use grpo_prm::io::serialize_group;
use grpo_prm::verify::{generate_random_group, GenParams};
use grpo_prm::Group;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grpo-prm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn write_groups(dir: &Path, name: &str, groups: &[Group]) -> PathBuf {
    let path = dir.join(name);
    let body: String = groups.iter().map(|g| serialize_group(g) + "\n").collect();
    fs::write(&path, body).unwrap();
    path
}

fn trivial_groups(n: u32) -> Vec<Group> {
    (0..n)
        .map(|q| {
            Group::from_tokens(format!("t{q}"), vec![vec![1, q], vec![2, q, q], vec![3]], &[0.0, 1.0, 0.5])
                .unwrap()
                .with_step(Some(u64::from(q % 2)))
        })
        .collect()
}

#[test]
fn tree_dot_has_ten_nodes() {
    let out = run(&["tree", &data("example.jsonl"), "--group-id", "example", "--format", "dot"]);
    assert!(out.status.success());
    let dot = String::from_utf8(out.stdout).unwrap();
    assert_eq!(dot.lines().filter(|l| l.trim_start().starts_with('n') && l.contains("[label=")).count(), 10);
    assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 9);
}

#[test]
fn tree_json_parses_back() {
    let out = run(&["tree", &data("example.jsonl"), "--format", "json"]);
    assert!(out.status.success());
    let doc = grpo_prm::export::parse_tree_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(doc.flatten().len(), 10);
}

#[test]
fn missing_group_is_an_error() {
    let out = run(&["tree", &data("example.jsonl"), "--group-id", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_trivial_file_reports_full_trivial_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_groups(dir.path(), "t.jsonl", &trivial_groups(5));
    let summary = dir.path().join("s.json");
    let csv = dir.path().join("a.csv");
    let out = run(&[
        "analyze",
        input.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
        "--beta",
        "0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(s["view"]["trivial_fraction"], 1.0);
    assert_eq!(s["view"]["groups"], 5);
    let rows = fs::read_to_string(&csv).unwrap();
    let mut lines = rows.lines();
    assert_eq!(
        lines.next().unwrap(),
        "query_id,step,k,trivial,mean_depth,max_depth,mean_p,objective_grpo,objective_lambda"
    );
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[3], "true");
        assert_eq!(cells[7], cells[8], "trivial groups have equal objectives");
    }
}

#[test]
fn report_merges_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let groups = trivial_groups(6);
    let a = write_groups(dir.path(), "a.jsonl", &groups[..2]);
    let b = write_groups(dir.path(), "b.jsonl", &groups[2..]);
    let all = write_groups(dir.path(), "all.jsonl", &groups);
    let mut summaries = Vec::new();
    for input in [&a, &b, &all] {
        let s = input.with_extension("json");
        let out = run(&["analyze", input.to_str().unwrap(), "--out", "/dev/null", "--summary", s.to_str().unwrap()]);
        assert!(out.status.success());
        summaries.push(s);
    }
    let merged = dir.path().join("m.json");
    let series = dir.path().join("series.csv");
    let out = run(&[
        "report",
        summaries[0].to_str().unwrap(),
        summaries[1].to_str().unwrap(),
        "--out",
        merged.to_str().unwrap(),
        "--series",
        series.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&merged).unwrap()).unwrap();
    let whole: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summaries[2]).unwrap()).unwrap();
    assert_eq!(m, whole);
    let series = fs::read_to_string(&series).unwrap();
    assert_eq!(series.lines().count(), 3);
    assert!(series.starts_with("step,groups,trivial_fraction,mean_depth,mean_proportion"));
}

#[test]
fn verify_random_passes() {
    let out = run(&["verify", "--random", "100", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("100 groups"), "{text}");
    assert!(text.contains("0 failures"));
}

#[test]
fn verify_fails_with_impossible_tolerance() {
    let out = run(&["verify", "--random", "50", "--seed", "1", "--tol", "0", "--identity-tol", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_file_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = GenParams { seed: 3, ..GenParams::default() };
    let groups: Vec<Group> = (0..20).map(|i| generate_random_group(&p, i).unwrap()).collect();
    let input = write_groups(dir.path(), "g.jsonl", &groups);
    let report = dir.path().join("r.json");
    let out = run(&["verify", input.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["groups_checked"], 20);
    assert!(r["failures"].as_array().unwrap().is_empty());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "x", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["--std", "median", "verify", "--random", "1"]).status.code(), Some(2));
    assert_eq!(run(&["verify"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn strict_and_lenient_parsing() {
    let dir = tempfile::tempdir().unwrap();
    let good = serialize_group(&trivial_groups(1)[0]);
    let bad = r#"{"query_id":"bad","completions":[{"tokens":[1,2],"reward":1,"logp":[-0.1]},{"tokens":[3],"reward":0}]}"#;
    let input = dir.path().join("mixed.jsonl");
    fs::write(&input, format!("{good}\n{bad}\n\n{good}\n")).unwrap();
    let input = input.to_str().unwrap();

    let out = run(&["--strict", "weights", input]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = run(&["weights", input]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped 1"));
}

#[test]
fn empty_file_is_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let out = run(&["weights", input.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn weights_lengths_match_tokens() {
    let out = run(&["weights", &data("example.jsonl"), "--objective", "grpo", "--beta", "0"]);
    assert!(out.status.success());
    let rec: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["objective"], "grpo");
    let lens = [6, 5, 6, 7, 8, 2];
    for (c, len) in rec["completions"].as_array().unwrap().iter().zip(lens) {
        assert_eq!(c["token_advantage"].as_array().unwrap().len(), len);
        assert_eq!(c["lambda_weight"].as_array().unwrap().len(), len);
    }
    assert!((rec["value"].as_f64().unwrap() + 0.130_237_483_167_661).abs() < 1e-12);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let cfg = data("exploitation.cfg");
    let fig = data("example.jsonl");
    let cases: [&[&str]; 5] = [
        &["simulate", &cfg],
        &["weights", &fig],
        &["analyze", &fig, "--beta", "0"],
        &["tree", &fig, "--format", "json"],
        &["verify", "--random", "30", "--seed", "5"],
    ];
    for args in cases {
        let a = run(args);
        let b = run(args);
        assert!(a.status.success(), "{args:?}");
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "k = 4\nbeta = 0.1\n").unwrap();
    assert_eq!(run(&["simulate", cfg.to_str().unwrap()]).status.code(), Some(1));
}
