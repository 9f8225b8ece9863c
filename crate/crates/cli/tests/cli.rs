use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lbras_cli::scenario::apply_overrides;
use lbras_cli::Scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lbras"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).expect("stderr is JSON")
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn bouncing_ball_example_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bb");
    let o = run(&["example", "bouncing-ball", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1);
    for f in ["arc.csv", "report.json", "barrier_series.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["verdict"], "PASS");
    assert_eq!(report["pair_vb"]["verdict"], "PASS");
    let series = std::fs::read_to_string(out.join("barrier_series.csv")).unwrap();
    assert!(series.starts_with("j,t,total_time,V,B,energy\n"));
}

#[test]
fn moore_greitzer_example_writes_control_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mg");
    let o = run(&["example", "moore-greitzer", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    for f in [
        "arc.csv",
        "report.json",
        "barrier_series.csv",
        "decisions.csv",
        "controls.csv",
        "margins.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let controls = std::fs::read_to_string(out.join("controls.csv")).unwrap();
    let rows: Vec<&str> = controls.lines().skip(1).collect();
    assert_eq!(rows.len(), 201);
    for r in rows {
        let cols: Vec<f64> = r.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[2].abs() <= 0.05 + 1e-12);
        assert!((0.5..=1.0).contains(&cols[3]));
    }
}

#[test]
fn example_override_changes_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bb");
    let o = run(&[
        "example",
        "bouncing-ball",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "x0=[0.0, 5.0, 0.0]",
        "--override",
        "sim.horizon=3.0",
    ]);
    // three time units is too short to settle into I
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("ras FAIL"));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["params"]["x0"][1], 5.0);
    assert_eq!(report["simulation"]["flow_time"], 3.0);
    assert!(report["ras"]["stats"]["settle_time"].is_null());
}

#[test]
fn pair_vb_check_on_bouncing_ball_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "check",
        "--scenario",
        scenario("bouncing_ball.toml").to_str().unwrap(),
        "--mode",
        "pair-vb",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).starts_with("check pair-vb: PASS"));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["verdict"], "PASS");
    for id in ["ii-S-in-O", "iii", "iv-flow", "iv-jump", "i-flow"] {
        let c = report["conditions"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["id"] == id)
            .unwrap_or_else(|| panic!("condition {id} missing"));
        assert_eq!(c["verdict"], "PASS", "{id}");
    }
}

#[test]
fn simulate_outside_flow_and_jump_sets_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--scenario",
        scenario("bouncing_ball.toml").to_str().unwrap(),
        "--override",
        "sim.x0=[0.0, -1.0, 0.0]",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
    let err = stderr_json(&o);
    assert_eq!(err["error"], "BadInitialCondition");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn verdicts_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("contraction.toml");
    let sc = sc.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    let pass = run(&["check", "--scenario", sc, "--mode", "single-v", "--out", out]);
    assert_eq!(code(&pass), 0);
    let slow = run(&[
        "check",
        "--scenario",
        sc,
        "--mode",
        "single-v",
        "--override",
        "system.inline.flow=[\"-x/4\", \"-y/4\"]",
        "--out",
        out,
    ]);
    assert_eq!(code(&slow), 1);
    let short = run(&[
        "check",
        "--scenario",
        sc,
        "--mode",
        "stability-safety",
        "--override",
        "sim.horizon=0.05",
        "--out",
        out,
    ]);
    assert_eq!(code(&short), 3, "{}", stdout(&short));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["verdict"], "INCONCLUSIVE");
}

#[test]
fn falsify_exit_code_follows_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("contraction.toml");
    let sc = sc.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    let none = run(&["falsify", "--scenario", sc, "--condition", "single-flow", "--out", out]);
    assert_eq!(code(&none), 0);
    let f = read_json(&dir.path().join("falsify.json"));
    assert!(f["counterexample"].is_null());

    let found = run(&[
        "falsify",
        "--scenario",
        sc,
        "--condition",
        "single-flow",
        "--override",
        "system.inline.flow=[\"-x/4\", \"-y/4\"]",
        "--out",
        out,
    ]);
    assert_eq!(code(&found), 1);
    let f = read_json(&dir.path().join("falsify.json"));
    let x: Vec<f64> = serde_json::from_value(f["counterexample"]["x"].clone()).unwrap();
    let margin = f["counterexample"]["margin"].as_f64().unwrap();
    let r2 = x.iter().map(|v| v * v).sum::<f64>();
    assert!((margin - r2 / 2.0).abs() <= 1e-9 * r2.max(1.0));
}

#[test]
fn input_errors_exit_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let sc = scenario("contraction.toml");
    let sc = sc.to_str().unwrap();

    let o = run(&["check", "--scenario", sc, "--mode", "bogus", "--out", out]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr_json(&o)["exit_code"], 2);

    let o = run(&["example", "pendulum", "--out", out]);
    assert_eq!(code(&o), 2);

    let o = run(&["check", "--scenario", "/nonexistent.toml", "--mode", "ras", "--out", out]);
    assert_eq!(code(&o), 4);
    assert_eq!(stderr_json(&o)["error"], "Io");

    let text = std::fs::read_to_string(scenario("contraction.toml")).unwrap();
    let unseeded = text.replace("seed = 1\n", "");
    let path = dir.path().join("unseeded.toml");
    std::fs::write(&path, unseeded).unwrap();
    let o = run(&[
        "check",
        "--scenario",
        path.to_str().unwrap(),
        "--mode",
        "stability-safety",
        "--out",
        out,
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("seed"));
    let o = run(&[
        "check",
        "--scenario",
        path.to_str().unwrap(),
        "--mode",
        "stability-safety",
        "--seed",
        "3",
        "--out",
        out,
    ]);
    assert_eq!(code(&o), 0);
}

#[test]
fn scenario_round_trip_reproduces_outputs() {
    let text = std::fs::read_to_string(scenario("contraction.toml")).unwrap();
    let overrides = vec!["delta=0.01".to_string(), "check.n_dist=3".to_string()];
    let sc = Scenario::from_toml(&text, &overrides).unwrap();
    let again = Scenario::from_toml(&sc.to_toml().unwrap(), &[]).unwrap();
    assert_eq!(sc, again);

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = lbras_cli::cmd_check(&sc, "ras", &a).unwrap();
    let second = lbras_cli::cmd_check(&again, "ras", &b).unwrap();
    assert_eq!(first, second);
    assert_eq!(
        std::fs::read(a.join("report.json")).unwrap(),
        std::fs::read(b.join("report.json")).unwrap()
    );
    lbras_cli::cmd_simulate(&sc, &a).unwrap();
    lbras_cli::cmd_simulate(&again, &b).unwrap();
    assert_eq!(
        std::fs::read(a.join("arc.csv")).unwrap(),
        std::fs::read(b.join("arc.csv")).unwrap()
    );
}

#[test]
fn overrides_address_nested_tables() {
    let mut doc: toml::Table = toml::from_str("[system]\nexample = \"bouncing-ball\"\n").unwrap();
    apply_overrides(
        &mut doc,
        &[
            "restitution=0.5".into(),
            "sim.horizon=4".into(),
            "seed=9".into(),
            "check.falsify_region={ kind = \"box\", lo = [0.0, 0.0, -1.0], hi = [1.0, 1.0, 1.0] }"
                .into(),
        ],
    )
    .unwrap();
    let sc: Scenario = doc.clone().try_into().unwrap();
    assert_eq!(sc.seed, Some(9));
    assert_eq!(sc.sim.horizon, Some(4.0));
    assert_eq!(sc.system.params["restitution"].as_float(), Some(0.5));
    assert!(sc.check.falsify_region.is_some());
    assert!(apply_overrides(&mut doc, &["no-equals-sign".into()]).is_err());
}

#[test]
fn scenario_needs_exactly_one_system_source() {
    let both = r#"
[system]
example = "bouncing-ball"
[system.inline]
vars = ["x"]
flow = ["-x"]
flow_set = { kind = "whole", dim = 1 }
bounds_lo = [-1.0]
bounds_hi = [1.0]
"#;
    assert!(Scenario::from_toml(both, &[]).is_err());
    assert!(Scenario::from_toml("[system]\n", &[]).is_err());
    assert!(Scenario::from_toml("[system]\nexample = \"bouncing-ball\"\nbogus = 1\n", &[]).is_err());
}
