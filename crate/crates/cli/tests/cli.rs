use std::path::PathBuf;
use std::process::{Command, Output};

use seqauction::competition;
use seqauction::dynamic_lp::{DynamicInstance, IrMode};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqauction"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("seqauction-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn with_config(cmd: &str, name: &str, json: &str) -> Output {
    let path = scratch(name, json);
    run(&[cmd, "--config", path.to_str().unwrap()])
}

/// Column `col` of the CSV row whose first `key.len()` columns equal `key`.
fn cell(csv: &str, key: &[&str], col: usize) -> f64 {
    csv.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|c| c.len() > col && c[..key.len()] == *key)
        .unwrap_or_else(|| panic!("no row {key:?} in\n{csv}"))[col]
        .parse()
        .unwrap()
}

#[test]
fn dist_stats_default_is_exponential() {
    let o = run(&["dist-stats"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert!(csv.starts_with("r,n,expected_order_stat\n"));
    assert!((cell(&csv, &["2", "3"], 2) - 5.0 / 6.0).abs() < 1e-10);
    assert!(csv.contains("2,3,8.33333333333e-1"));
    let h4 = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
    assert!((cell(&csv, &["1", "4"], 2) - h4).abs() < 1e-10);
}

#[test]
fn dist_stats_point_mass_is_constant() {
    let o = with_config(
        "dist-stats",
        "pm.json",
        r#"{"command": "dist-stats", "distribution": {"discrete": {"support": [2.5], "probs": [1.0]}}, "ranks": [1, 2, 3], "sizes": [3, 5]}"#,
    );
    assert!(o.status.success());
    let csv = stdout(&o);
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(values.len(), 6);
    assert!(values.iter().all(|v| *v == "2.50000000000e0"), "{csv}");
}

#[test]
fn dist_stats_capped_equal_revenue_second_highest() {
    let o = with_config(
        "dist-stats",
        "er.json",
        r#"{"distribution": {"continuous": {"kind": "equal_revenue", "cap": 1e8}}, "ranks": [2], "sizes": [2, 3, 5]}"#,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    // With the atom at the cap, P(second > x) = 1 - n F^{n-1} + (n-1) F^n on [1, V).
    // Integrating gives n - 1 from the body plus about one from the atom.
    for n in [2usize, 3, 5] {
        let v = 1e8f64;
        let simpson = |g: &dyn Fn(f64) -> f64| {
            // substitute x = e^t on [0, ln V]
            let steps = 200_000;
            let h = v.ln() / steps as f64;
            (0..=steps)
                .map(|i| {
                    let t = i as f64 * h;
                    let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    w * g(t.exp()) * t.exp()
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        let nf = n as f64;
        let oracle = 1.0
            + simpson(&|x: f64| {
                let fx = 1.0 - 1.0 / x;
                1.0 - nf * fx.powi(n as i32 - 1) + (nf - 1.0) * fx.powi(n as i32)
            });
        let got = cell(&csv, &["2", &n.to_string()], 2);
        assert!((got - oracle).abs() < 1e-6 * oracle, "n={n}: {got} vs {oracle}");
        // close to n, one above the uncapped n - 1
        assert!((got - nf).abs() < 1e-3 * nf, "n={n}: {got}");
    }
}

#[test]
fn opt_solve_example_default() {
    let o = run(&["opt-solve"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert!(cell(&csv, &["objective"], 1) >= 3.0 - 1e-6);
    assert!(cell(&csv, &["max_violation"], 1) <= 1e-6);
    assert!(csv.lines().last().unwrap().ends_with(",pass"));
}

#[test]
fn opt_solve_point_masses_sum() {
    let json = r#"{
        "command": "opt-solve",
        "instance": {"n": 2, "ir_mode": "ex_post", "process": {"independent": [
            {"support": [3.0], "probs": [1.0]},
            {"support": [1.5], "probs": [1.0]},
            {"support": [4.0], "probs": [1.0]}
        ]}}
    }"#;
    let o = with_config("opt-solve", "points.json", json);
    assert!(o.status.success());
    assert!((cell(&stdout(&o), &["objective"], 1) - 8.5).abs() < 1e-9);
}

#[test]
fn opt_solve_correlated_chain_is_three_and_dumps_solution() {
    let inst = competition::correlation_lowers_revenue(2).unwrap().correlated;
    let dump = scratch("sol.json", "");
    let json = serde_json::json!({
        "instance": inst,
        "solution_out": dump,
    });
    let o = with_config("opt-solve", "chain.json", &json.to_string());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!((cell(&stdout(&o), &["objective"], 1) - 3.0).abs() < 1e-6);
    let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dump).unwrap()).unwrap();
    assert!((sol["objective"].as_f64().unwrap() - 3.0).abs() < 1e-6);
}

#[test]
fn duality_two_stage_flows_bound_the_optimum() {
    let json = r#"{
        "instance": {"n": 1, "ir_mode": "ex_post", "process": {"independent": [
            {"support": [1.0, 2.0, 4.0], "probs": [0.5, 0.3, 0.2]},
            {"support": [1.0, 3.0], "probs": [0.6, 0.4]}
        ]}}
    }"#;
    let o = with_config("duality", "two.json", json);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    for flow in ["general", "expectation-myerson", "myerson-expectation", "correlated-dominance"] {
        assert!(csv.lines().any(|l| l.starts_with(flow)), "{flow} missing:\n{csv}");
    }
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let opt: f64 = rows[0][4].parse().unwrap();
    let min_bound = rows.iter().map(|r| r[3].parse::<f64>().unwrap()).fold(f64::INFINITY, f64::min);
    assert!(min_bound >= opt - 1e-6);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() <= 1e-9 && r[6] == "pass"));
}

#[test]
fn duality_zero_gap_on_correlated_chain() {
    let o = run(&["duality"]);
    assert!(o.status.success());
    let gap = cell(&stdout(&o), &["correlated-dominance", "1"], 5);
    assert!(gap.abs() <= 1e-6);
}

#[test]
fn duality_refuses_non_dominance_instance() {
    let menu = competition::correlation_raises_revenue(2).unwrap().correlated;
    let inst = DynamicInstance::new(1, menu.process, IrMode::ExPost).unwrap();
    let json = serde_json::json!({"instance": inst, "flows": ["correlated-dominance"]});
    let o = with_config("duality", "menu.json", &json.to_string());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("not dominance ordered") && err.contains("[16.0]"), "{err}");
}

#[test]
fn cc_queries_and_cap_override() {
    let json = r#"{"queries": [
        {"stages": [{"continuous": {"kind": "exponential", "rate": 1.0}}], "n": 3, "alpha": 0.3333333333, "benchmark": "welfare"},
        {"stages": [{"continuous": {"kind": "exponential", "rate": 1.0}}], "n": 3, "alpha": 1.0, "benchmark": "welfare"}
    ]}"#;
    let o = with_config("cc", "cc.json", json);
    assert!(o.status.success());
    let csv = stdout(&o);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "benchmark,alpha,n,m,c_star,vcg_at_c,benchmark_value");
    assert_eq!(rows[1].split(',').nth(4), Some("0"));
    let path = scratch("cc2.json", json);
    let capped = run(&["cc", "--config", path.to_str().unwrap(), "--cap", "0"]);
    assert!(stdout(&capped).lines().nth(2).unwrap().contains(",unbounded,"));
}

#[test]
fn mhr_verify_labels_the_necessity_row() {
    let o = run(&["mhr-verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    let expected: Vec<&str> = csv.lines().filter(|l| l.ends_with(",expected-fail")).collect();
    assert_eq!(expected.len(), 1);
    assert!(expected[0].starts_with("exp_1,3,"));
    assert!(csv.lines().skip(1).filter(|l| !l.ends_with(",expected-fail")).all(|l| l.ends_with(",pass")));
    assert!(csv.lines().any(|l| l.starts_with("random_plh,1000,")));
}

#[test]
fn mhr_verify_rejects_non_mhr_input() {
    let json = r#"{"distributions": [{"id": "er", "dist": {"kind": "equal_revenue", "cap": 50.0}}], "sizes": [2], "plh_batch": 0}"#;
    let o = with_config("mhr-verify", "er_mhr.json", json);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    for args in [&["mhr-verify", "--seed", "9"][..], &["cc"][..], &["opt-solve"][..]] {
        assert_eq!(run(args).stdout, run(args).stdout, "{args:?}");
    }
}

#[test]
fn out_flag_writes_file() {
    let path = scratch("stats.csv", "");
    let o = run(&["dist-stats", "--out", path.to_str().unwrap()]);
    assert!(o.status.success() && o.stdout.is_empty());
    assert!(std::fs::read_to_string(path).unwrap().contains("2,3,8.33333333333e-1"));
}

#[test]
fn config_errors_are_usage_errors() {
    let o = with_config("cc", "typo.json", "{\n  \"command\": \"cc\",\n  \"queeries\": []\n}");
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("queeries") && err.contains("line 3"), "{err}");

    let o = with_config("cc", "wrong.json", r#"{"command": "opt-solve"}"#);
    assert_eq!(o.status.code(), Some(2));

    let o = with_config("cc", "field.json", r#"{"ranks": [1]}"#);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`ranks`"));
}

#[test]
fn reproduce_paper_passes_apart_from_known_deviations() {
    let path = scratch("acceptance.csv", "");
    let o = run(&["reproduce-paper", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(path).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(labels.iter().filter(|l| **l == "expected-fail").count(), 2);
    assert_eq!(labels.iter().filter(|l| **l == "pass").count(), 8);
}
