use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hsfl_core::cli::{run_args, CliError, PlanRow, ReplanRow, RunReport, SweepRow};
use tempfile::TempDir;

const TINY_PROFILE: &str = r#"{"name": "tiny", "batch_size": 1, "layers": [
  {"index": 1, "flops_fp": 100, "weight_bytes": 1000, "act_bytes": 50},
  {"index": 2, "flops_fp": 100, "weight_bytes": 1000, "act_bytes": 50},
  {"index": 3, "flops_fp": 100, "weight_bytes": 1000, "act_bytes": 50},
  {"index": 4, "flops_fp": 100, "weight_bytes": 1000, "act_bytes": 50}]}"#;

const TINY_SCENARIO: &str = r#"{"model": "tiny_profile.json", "server_throughput": 1000, "epochs_per_round": 1,
  "clients": [{"throughput": 100, "dataset_size": 1}, {"throughput": 200, "dataset_size": 1}],
  "links": {"uniform": "400bps"}}"#;

/// One batch per round, so each added aggregator costs more in block
/// downloads than it saves in activation traffic.
const ALEXNET_SCENARIO: &str = r#"{"model": "builtin:alexnet", "generate": {
  "n_clients": 20, "strong_fraction": 0.3, "strong_throughput": 17.6e9, "weak_throughput": 2.4e9,
  "rate_lo": "20Mbps", "rate_hi": "25Mbps", "server_throughput": 100e9,
  "dataset_size": 32, "epochs_per_round": 1, "seed": 7}}"#;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("tiny_profile.json"), TINY_PROFILE).unwrap();
        fs::write(dir.path().join("tiny.json"), TINY_SCENARIO).unwrap();
        fs::write(dir.path().join("alexnet.json"), ALEXNET_SCENARIO).unwrap();
        fs::write(
            dir.path().join("acc.json"),
            r#"{"acc_by_layer": {"2": 0.41, "3": 0.83}}"#,
        )
        .unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) -> String {
        fs::write(self.dir.path().join(name), text).unwrap();
        self.path(name)
    }

    fn run(&self, args: &[&str]) -> Result<String, CliError> {
        let mut out = Vec::new();
        let full = std::iter::once("hsfl").chain(args.iter().copied());
        run_args(full, &mut out)?;
        Ok(String::from_utf8(out).unwrap())
    }
}

fn csv_rows<T: serde::de::DeserializeOwned>(text: &str) -> Vec<T> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn plan_tiny_writes_report_and_row() {
    let f = Fixture::new();
    let out = f.path("out");
    f.run(&[
        "plan",
        "--scenario",
        &f.path("tiny.json"),
        "--candidates",
        "3",
        "--out-dir",
        &out,
    ])
    .unwrap();
    let report: RunReport =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("plan.json")).unwrap())
            .unwrap();
    assert_eq!((report.decision.h, report.decision.v), (2, 3));
    assert_eq!(report.delay_breakdown.t_round, 132.0);
    assert_eq!(report.overhead_bytes, 10200.0);
    assert_eq!(report.config.delta, 0.5);
    assert_eq!(report.config.lambda_step, 0.01);
    assert_eq!(report.config.thr, 0.02);
    let rows: Vec<PlanRow> =
        csv_rows(&fs::read_to_string(Path::new(&out).join("plan.csv")).unwrap());
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    // every CSV number survives the trip through text and matches the report
    let d = &report.delay_breakdown;
    assert_eq!(
        (
            row.t1,
            row.t_fp,
            row.t_s,
            row.t_bp,
            row.t2,
            row.t3,
            row.t_round,
            row.overhead_bytes
        ),
        (
            d.t1,
            d.t_fp,
            d.t_s,
            d.t_bp,
            d.t2,
            d.t3,
            d.t_round,
            report.overhead_bytes
        )
    );
    assert_eq!(row.lambda, report.decision.lambda);
}

#[test]
fn accuracy_route_matches_candidate_list() {
    let f = Fixture::new();
    let a = f
        .run(&[
            "plan",
            "--scenario",
            &f.path("tiny.json"),
            "--candidates",
            "3",
        ])
        .unwrap();
    let b = f
        .run(&[
            "plan",
            "--scenario",
            &f.path("tiny.json"),
            "--accuracy",
            &f.path("acc.json"),
        ])
        .unwrap();
    let (a, b): (RunReport, RunReport) = (
        serde_json::from_str(&a).unwrap(),
        serde_json::from_str(&b).unwrap(),
    );
    assert_eq!(b.candidates, vec![3]);
    assert_eq!(a.decision, b.decision);
}

#[test]
fn identical_inputs_give_identical_bytes() {
    let f = Fixture::new();
    let args = [
        "plan",
        "--scenario",
        &f.path("alexnet.json"),
        "--candidates",
        "3,4,5,6,7",
        "--seed",
        "11",
    ];
    let a = f.run(&args).unwrap();
    assert_eq!(a, f.run(&args).unwrap());
    let other = f
        .run(&[
            "plan",
            "--scenario",
            &f.path("alexnet.json"),
            "--candidates",
            "3,4,5,6,7",
            "--seed",
            "12",
        ])
        .unwrap();
    assert_ne!(a, other);
}

#[test]
fn profile_flag_overrides_document_model() {
    let f = Fixture::new();
    let out = f
        .run(&[
            "validate",
            "--scenario",
            &f.path("alexnet.json"),
            "--profile",
            "builtin:vgg11",
        ])
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["scenario"]["layers"], 11);
}

#[test]
fn lambda_sweep_overhead_increases() {
    let f = Fixture::new();
    let csv = f
        .run(&[
            "sweep",
            "--scenario",
            &f.path("alexnet.json"),
            "--candidates",
            "3,4,5,6,7",
            "--dimension",
            "lambda",
            "--values",
            "0.1,0.25,0.5,0.8",
            "--format",
            "csv",
        ])
        .unwrap();
    let rows: Vec<SweepRow> = csv_rows(&csv);
    assert_eq!(
        rows.iter().map(|r| r.value).collect::<Vec<_>>(),
        vec![0.1, 0.25, 0.5, 0.8]
    );
    assert!(
        rows.windows(2)
            .all(|w| w[1].overhead_bytes > w[0].overhead_bytes),
        "{rows:?}"
    );
    assert!(rows.windows(2).all(|w| w[1].aggregators > w[0].aggregators));
}

#[test]
fn sweep_order_does_not_depend_on_jobs() {
    let f = Fixture::new();
    let args = |jobs: &'static str| {
        vec![
            "sweep".to_string(),
            "--scenario".into(),
            f.path("alexnet.json"),
            "--candidates".into(),
            "3,4,5,6,7".into(),
            "--dimension".into(),
            "gamma".into(),
            "--values".into(),
            "15,2,7.5,3,11".into(),
            "--jobs".into(),
            jobs.into(),
        ]
    };
    let one = f
        .run(&args("1").iter().map(String::as_str).collect::<Vec<_>>())
        .unwrap();
    let four = f
        .run(&args("4").iter().map(String::as_str).collect::<Vec<_>>())
        .unwrap();
    assert_eq!(one, four);
    let rows: Vec<SweepRow> = serde_json::from_str(&one).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.value).collect::<Vec<_>>(),
        vec![15.0, 2.0, 7.5, 3.0, 11.0]
    );
    for r in &rows {
        assert!((r.heterogeneity - r.value).abs() < 1e-9);
    }
}

#[test]
fn empty_sweep_is_header_only() {
    let f = Fixture::new();
    let csv = f
        .run(&[
            "sweep",
            "--scenario",
            &f.path("tiny.json"),
            "--candidates",
            "3",
            "--dimension",
            "lambda",
            "--values",
            "",
            "--format",
            "csv",
        ])
        .unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn n_clients_sweep_needs_generator() {
    let f = Fixture::new();
    let err = f
        .run(&[
            "sweep",
            "--scenario",
            &f.path("tiny.json"),
            "--candidates",
            "3",
            "--dimension",
            "n-clients",
            "--values",
            "4",
        ])
        .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let rows: Vec<SweepRow> = serde_json::from_str(
        &f.run(&[
            "sweep",
            "--scenario",
            &f.path("alexnet.json"),
            "--candidates",
            "4",
            "--dimension",
            "n-clients",
            "--values",
            "6,12",
        ])
        .unwrap(),
    )
    .unwrap();
    assert_eq!(
        rows.iter().map(|r| r.clients).collect::<Vec<_>>(),
        vec![6, 12]
    );
}

#[test]
fn compare_tiny_and_budget_exit() {
    let f = Fixture::new();
    let csv = f
        .run(&[
            "compare",
            "--scenario",
            &f.path("tiny.json"),
            "--candidates",
            "3",
            "--format",
            "csv",
        ])
        .unwrap();
    assert!(csv.starts_with(
        "seed,N,oracle_t,heuristic_t,suboptimality_pct,oracle_ms,heuristic_ms,speedup"
    ));
    let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&fields[1..5], &["2", "132.0", "132.0", "0.0"]);
    let err = f
        .run(&[
            "compare",
            "--scenario",
            &f.path("tiny.json"),
            "--candidates",
            "3",
            "--max-configs",
            "1",
        ])
        .unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let err = f
        .run(&[
            "compare",
            "--scenario",
            &f.path("alexnet.json"),
            "--candidates",
            "3",
        ])
        .unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn replan_rows() {
    let f = Fixture::new();
    let none = f.write("none.json", "[]");
    let rows: Vec<ReplanRow> = serde_json::from_str(
        &f.run(&[
            "replan",
            "--scenario",
            &f.path("tiny.json"),
            "--candidates",
            "3",
            "--changes",
            &none,
        ])
        .unwrap(),
    )
    .unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(
        (
            rows[0].change.as_str(),
            rows[0].fixed_delta_pct,
            rows[0].replanned_delta_pct
        ),
        ("none", 0.0, 0.0)
    );

    let changes = f.write(
        "changes.json",
        r#"[{"kind": "throughput_scale", "targets": "all", "factor": 0.7},
            {"kind": "link_rate_override", "links": "all", "rate": "4Mbps"}]"#,
    );
    let csv = f
        .run(&[
            "replan",
            "--scenario",
            &f.path("alexnet.json"),
            "--candidates",
            "3,4,5,6,7",
            "--changes",
            &changes,
            "--instances",
            "3",
            "--format",
            "csv",
        ])
        .unwrap();
    let rows: Vec<ReplanRow> = csv_rows(&csv);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(r.fixed_delta_pct > 0.0);
        assert!(r.replanned_delta_pct <= r.fixed_delta_pct);
    }
    assert_eq!(rows[1].change, "link_rate_override_500000");
}

#[test]
fn simulate_tiny() {
    let f = Fixture::new();
    let out = f.path("sim");
    let summary = f
        .run(&[
            "simulate",
            "--scenario",
            &f.path("tiny.json"),
            "--candidates",
            "3",
            "--out-dir",
            &out,
            "--format",
            "csv",
        ])
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["makespan"], 132.0);
    assert_eq!(v["analytic_t_round"], 132.0);
    let trace = fs::read_to_string(PathBuf::from(&out).join("trace.csv")).unwrap();
    assert!(trace.contains("server,server_forward_backward,0,65,65.6"));
}

#[test]
fn validate_reports_plan_violations() {
    let f = Fixture::new();
    let good = f.write(
        "good.json",
        r#"{"h": 2, "v": 3, "aggregators": [1], "assign": [1, 1]}"#,
    );
    let bad = f.write(
        "bad.json",
        r#"{"h": 2, "v": 3, "aggregators": [1], "assign": [0, 1]}"#,
    );
    let out = f
        .run(&[
            "validate",
            "--scenario",
            &f.path("tiny.json"),
            "--plan",
            &good,
            "--candidates",
            "3",
        ])
        .unwrap();
    assert!(out.contains("\"plan_valid\": true"));
    let err = f
        .run(&[
            "validate",
            "--scenario",
            &f.path("tiny.json"),
            "--plan",
            &bad,
        ])
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("not an aggregator"), "{err}");
}

#[test]
fn accuracy_model_mismatch_is_input_error() {
    let f = Fixture::new();
    let acc = f.write(
        "acc9.json",
        r#"{"acc_by_layer": {"2": 0.5, "3": 0.6, "4": 0.7}}"#,
    );
    let err = f
        .run(&[
            "plan",
            "--scenario",
            &f.path("tiny.json"),
            "--accuracy",
            &acc,
        ])
        .unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn binary_exit_codes() {
    let f = Fixture::new();
    let bin = env!("CARGO_BIN_EXE_hsfl");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap();
    let ok = status(&[
        "plan",
        "--scenario",
        &f.path("tiny.json"),
        "--candidates",
        "3",
        "--format",
        "csv",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains(",132.0,"));
    let missing = status(&["plan", "--scenario", &f.path("tiny.json")]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--candidates"));
    let unreadable = status(&[
        "plan",
        "--scenario",
        &f.path("nope.json"),
        "--candidates",
        "3",
    ]);
    assert_eq!(unreadable.status.code(), Some(1));
    let infeasible = status(&[
        "plan",
        "--scenario",
        &f.path("tiny.json"),
        "--candidates",
        "4",
    ]);
    assert_eq!(infeasible.status.code(), Some(2));
    let budget = status(&[
        "compare",
        "--scenario",
        &f.path("tiny.json"),
        "--candidates",
        "3",
        "--max-clients",
        "1",
    ]);
    assert_eq!(budget.status.code(), Some(3));
}
