use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdmdp::model::{Atom, Instance, Mechanism, PriceRule, VirtualWeights};
use mdmdp_cli::{SimulateReport, SolveOutput, VerifyReport};
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn mdmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdmdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn load(name: &str) -> Instance {
    Instance::from_json(&std::fs::read_to_string(data(name)).unwrap()).unwrap()
}

fn null_mechanism(inst: &Instance, rebate: f64) -> Mechanism {
    let l = inst.layout();
    Mechanism {
        oracle: inst.oracle_spec().clone(),
        mixture: vec![Atom {
            lambda: 1.0,
            weights: VirtualWeights::zeros(l.dim()),
        }],
        prices: PriceRule::zeros(l.total_types()),
        rebate,
        marginals: inst.marginals(),
    }
}

fn write_mechanism(dir: &Path, inst: &Instance, mech: &Mechanism) -> PathBuf {
    let p = dir.join("mech.json");
    std::fs::write(&p, serde_json::to_string_pretty(&mech.to_doc(inst)).unwrap()).unwrap();
    p
}

#[test]
fn single_bidder_solve_writes_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("one.json");
    std::fs::write(
        &inst,
        r#"{"schema_version": 1, "items": 1,
            "bidders": [{"types": [{"label": "lo", "values": [1.0], "prob": 0.5},
                                   {"label": "hi", "values": [3.0], "prob": 0.5}]}],
            "welfare_oracle": {"kind": "exact_single_item"}}"#,
    )
    .unwrap();
    let out = dir.path().join("out.json");
    let run = mdmdp(&["solve", path_str(&inst), "--output", path_str(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let doc: SolveOutput = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // posting price 3 earns 1.5, posting 1 earns 1
    assert!(
        (doc.report.revenue - (1.5 - 0.01)).abs() < 1e-4,
        "{}",
        doc.report.revenue
    );
    assert!(!doc.mechanism.mixture.is_empty());
}

#[test]
fn malformed_json_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"items\": ").unwrap();
    let run = mdmdp(&["solve", path_str(&bad)]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("error"));
}

#[test]
fn bad_flag_exits_one() {
    let run = mdmdp(&["solve", "--no-such-flag", path_str(&data("two_by_two.json"))]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn huge_delta_fails_decomposition_with_exit_two() {
    let run = mdmdp(&["solve", path_str(&data("two_by_two.json")), "--wso-delta", "1.0"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("residual"));
}

#[test]
fn null_mechanism_simulates_to_minus_rebates() {
    let dir = tempfile::tempdir().unwrap();
    let inst = load("two_by_two.json");
    let mech = write_mechanism(dir.path(), &inst, &null_mechanism(&inst, 0.25));
    let run = mdmdp(&[
        "simulate",
        path_str(&mech),
        path_str(&data("two_by_two.json")),
        "--draws",
        "500",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let rep: SimulateReport = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(rep.revenue, -2.0 * 0.25);
    assert_eq!(rep.revenue_stderr, 0.0);
}

#[test]
fn zero_draws_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let inst = load("two_by_two.json");
    let mech = write_mechanism(dir.path(), &inst, &null_mechanism(&inst, 0.0));
    let run = mdmdp(&[
        "simulate",
        path_str(&mech),
        path_str(&data("two_by_two.json")),
        "--draws",
        "0",
    ]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn mismatched_instance_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let inst = load("two_by_two.json");
    let mech = write_mechanism(dir.path(), &inst, &null_mechanism(&inst, 0.0));
    let run = mdmdp(&["simulate", path_str(&mech), path_str(&data("single_item.json"))]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn null_mechanism_verifies_clean() {
    let dir = tempfile::tempdir().unwrap();
    let inst = load("single_item.json");
    let mech = write_mechanism(dir.path(), &inst, &null_mechanism(&inst, 0.0));
    let run = mdmdp(&[
        "verify",
        path_str(&mech),
        path_str(&data("single_item.json")),
        "--samples",
        "500",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let rep: VerifyReport = serde_json::from_slice(&run.stdout).unwrap();
    match rep.bic_exact {
        mdmdp_cli::Check::Done(r) => {
            assert_eq!(r.max_regret, 0.0);
            assert_eq!(r.ir_violation, 0.0);
        }
        other => panic!("exact audit skipped: {other:?}"),
    }
    assert_eq!(rep.bic_sampled.max_regret, 0.0);
    assert_eq!(rep.border, mdmdp_cli::Check::Done(true));
}

#[test]
fn solve_then_verify_multi_item() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let inst = data("two_by_two.json");
    assert_eq!(
        mdmdp(&["solve", path_str(&inst), "--output", path_str(&out)])
            .status
            .code(),
        Some(0)
    );
    let run = mdmdp(&["verify", path_str(&out), path_str(&inst), "--samples", "2000"]);
    assert_eq!(run.status.code(), Some(0));
    let rep: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(rep["border"]["skipped"], "skipped (n>1)");
    assert!(rep["bic_exact"]["done"]["max_regret"].as_f64().unwrap() <= 1e-6);
    assert!(rep["interim_gap"]["done"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn corrupted_prices_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let inst_path = data("single_item.json");
    assert_eq!(
        mdmdp(&["solve", path_str(&inst_path), "--output", path_str(&out)])
            .status
            .code(),
        Some(0)
    );
    let inst = load("single_item.json");
    let full: SolveOutput = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let mut mech = Mechanism::from_doc(&full.mechanism, &inst).unwrap();
    // the high type of bidder 0 now pays far more than its allocation is worth
    mech.prices.0[1] += 1.0;
    let mech_path = write_mechanism(dir.path(), &inst, &mech);
    let run = mdmdp(&[
        "verify",
        path_str(&mech_path),
        path_str(&inst_path),
        "--samples",
        "5000",
    ]);
    let rep: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert!(rep["bic_exact"]["done"]["max_regret"].as_f64().unwrap() > 0.5);
    assert!(rep["bic_sampled"]["max_regret"].as_f64().unwrap() > 0.5);
}

#[test]
fn oracle_reports_known_optimum() {
    let run = mdmdp(&["oracle", path_str(&data("single_item.json"))]);
    assert_eq!(run.status.code(), Some(0));
    let rep: Value = serde_json::from_slice(&run.stdout).unwrap();
    // two iid {1, 2} bidders: a reserve of 2 sells with probability 3/4
    assert!((rep["opt_revenue"].as_f64().unwrap() - 1.5).abs() < 1e-9);
    assert_eq!(rep["alpha_measured"], 1.0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let inst = data("two_by_two.json");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["solve", path_str(&inst), "--seed", "7", "--output", path_str(&out)];
        args.extend_from_slice(extra);
        assert_eq!(mdmdp(&args).status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.json", &[]), run("b.json", &[]));
    assert_eq!(
        run("c.json", &["--dprime-count", "300"]),
        run("d.json", &["--dprime-count", "300"])
    );
}

#[test]
fn different_seeds_change_sampled_dprime() {
    let dir = tempfile::tempdir().unwrap();
    let inst = data("two_by_two.json");
    let run = |seed: &str| {
        let out = dir.path().join(format!("s{seed}.json"));
        let code = mdmdp(&[
            "solve",
            path_str(&inst),
            "--seed",
            seed,
            "--dprime-count",
            "40",
            "--output",
            path_str(&out),
        ])
        .status
        .code();
        assert_eq!(code, Some(0));
        let doc: SolveOutput = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        doc.mechanism.virtual_marginals
    };
    assert_ne!(run("1"), run("2"));
}
