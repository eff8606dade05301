use std::path::Path;
use std::process::{Command, Output};

fn dnnsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnnsim"))
        .args(args)
        .env_remove("NETSIM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const ANALYTIC: [&str; 9] = ["analytic", "--m", "1.6e9", "--b", "25e9", "--cf", "0.16962", "--cb", "0.3838"];

#[test]
fn analytic_thresholds() {
    let o = dnnsim(&[&ANALYTIC[..], &["--thresholds"]].concat());
    assert!(o.status.success());
    assert_eq!(stdout(&o), "multicast,3\nagg,6\n");
}

#[test]
fn analytic_single_worker_iteration() {
    let o = dnnsim(&[&ANALYTIC[..], &["--w", "1", "--p", "1"]].concat());
    assert!(o.status.success());
    let line = stdout(&o).lines().find(|l| l.starts_with("iteration_s,")).unwrap().to_string();
    let v: f64 = line["iteration_s,".len()..].parse().unwrap();
    assert!((v - 0.55342).abs() < 1e-12);
}

#[test]
fn analytic_curve_is_csv() {
    let o = dnnsim(&[&ANALYTIC[..], &["--multicast", "--curve", "1,2,8"]].concat());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "workers,speedup");
    assert_eq!(lines.len(), 4);
}

#[test]
fn missing_flag_is_a_usage_error() {
    let o = dnnsim(&["analytic", "--b", "25e9", "--cf", "0.1", "--cb", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error:usage:"), "{err}");
    assert!(err.contains("--m") && err.contains("Usage"), "{err}");
}

#[test]
fn negative_input_is_a_validation_error() {
    let o = dnnsim(&["analytic", "--m=-1", "--b", "1", "--cf", "1", "--cb", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:validation:"));
}

const SCENARIO: &str = r#"{
  "profile": {"name": "toy", "params": [
    {"name": "a", "size": 3.0, "bp_compute": 3.0, "fp_compute": 0.0},
    {"name": "b", "size": 3.0, "bp_compute": 3.0, "fp_compute": 0.0}
  ]},
  "cluster": {"workers": 2, "bandwidth": 1.0},
  "mechanism": {"ps": {"multicast": true}}
}"#;

#[test]
fn simulate_prints_precise_iteration_and_writes_log() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.json", SCENARIO);
    let log = dir.path().join("out.jsonl");
    let o = dnnsim(&["simulate", &scenario, "--log", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let first = out.lines().next().unwrap();
    let digits: String = first["iteration_s,".len()..].chars().filter(|c| c.is_ascii_digit()).collect();
    assert!(digits.trim_start_matches('0').len() >= 9, "{first}");
    assert!(out.contains("node,phase,iteration,start_s,end_s"));

    let times: Vec<f64> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["t"].as_f64().unwrap())
        .collect();
    assert!(!times.is_empty());
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn butterfly_needs_a_power_of_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = SCENARIO.replace("\"workers\": 2", "\"workers\": 3").replace(r#"{"ps": {"multicast": true}}"#, r#""butterfly""#);
    let o = dnnsim(&["simulate", &write(dir.path(), "s.json", &text)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("power-of-two"), "{}", stderr(&o));
}

#[test]
fn unknown_scenario_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = SCENARIO.replace("\"workers\": 2", "\"workers\": 2, \"wrokers\": 3");
    let o = dnnsim(&["simulate", &write(dir.path(), "s.json", &text)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:parse:"));
}

#[test]
fn preset_profiles_resolve_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"profile": "inception_v3", "cluster": {"workers": 4, "bandwidth": 10e9}, "mechanism": "butterfly"}"#;
    let o = dnnsim(&["simulate", &write(dir.path(), "s.json", text)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

const SWEEP: &str = r#"{
  "base": {"profile": "inception_v3", "cluster": {"workers": 1, "bandwidth": 10e9}, "mechanism": "butterfly"},
  "axis": "workers",
  "values": [1, 2, 4],
  "mechanisms": ["multicast", "agg"]
}"#;

#[test]
fn sweep_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = write(dir.path(), "sw.json", SWEEP);
    let a = dnnsim(&["sweep", &sweep]);
    assert!(a.status.success(), "{}", stderr(&a));
    let csv = stdout(&a);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,value,mechanism,iteration_s,speedup");
    assert_eq!(lines.len(), 1 + 9);
    assert_eq!(lines.iter().filter(|l| l.contains(",baseline,")).count(), 3);

    let out = dir.path().join("table.csv");
    let b = dnnsim(&["sweep", &sweep, "--jobs", "4", "--out", out.to_str().unwrap()]);
    assert!(b.status.success());
    assert_eq!(std::fs::read_to_string(out).unwrap(), csv);
}

#[test]
fn sweep_rejects_unknown_mechanisms() {
    let dir = tempfile::tempdir().unwrap();
    let o = dnnsim(&["sweep", &write(dir.path(), "sw.json", &SWEEP.replace("\"agg\"", "\"warp\""))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:parse:"));
}

#[test]
fn env_seed_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = SCENARIO.replace("\"bandwidth\": 1.0", "\"bandwidth\": 1.0, \"variance\": {\"lognormal\": {\"sigma\": 0.3}}, \"seed\": 1");
    let scenario = write(dir.path(), "s.json", &text);
    let run = |seed: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_dnnsim")).args(["simulate", &scenario]).env("NETSIM_SEED", seed).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let plain = stdout(&dnnsim(&["simulate", &scenario]));
    assert_eq!(run("1"), plain);
    assert_ne!(run("2"), plain);
    let bad = Command::new(env!("CARGO_BIN_EXE_dnnsim")).args(["simulate", &scenario]).env("NETSIM_SEED", "x").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

fn trace_file(dir: &Path) -> String {
    write(
        dir,
        "t.csv",
        "# iteration=0 model=toy\n\
         t_s,param,size_bits,src,dst,kind\n\
         0.0,a,100,ps0,worker0,distribution\n\
         0.1,b,200,ps0,worker0,distribution\n\
         0.3,__dependency__,0,worker0,worker0,marker\n\
         0.5,b,200,worker0,ps0,aggregation\n\
         0.7,a,100,worker0,ps0,aggregation\n",
    )
}

#[test]
fn trace_parse_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = dnnsim(&["trace", "parse", &trace_file(dir.path())]);
    assert!(o.status.success());
    let again = dnnsim(&["trace", "parse", &write(dir.path(), "u.csv", &stdout(&o))]);
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn trace_partition_derives_a_profile() {
    let dir = tempfile::tempdir().unwrap();
    let o = dnnsim(&["trace", "partition", &trace_file(dir.path()), "--cf", "0.2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total_size"], 300.0);
    assert_eq!(v["params"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_trace_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dnnsim(&["trace", "parse", &write(dir.path(), "t.csv", "x,y\n")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_synth_and_mutate() {
    let dir = tempfile::tempdir().unwrap();
    let a = dnnsim(&["trace", "synth", "--preset", "vgg16", "--seed", "3"]);
    let b = dnnsim(&["trace", "synth", "--preset", "vgg16", "--seed", "3"]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    let v: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(v["params"].as_array().unwrap().len(), 22);
    assert_eq!(v["total_size"], 6.58e9);

    let profile = write(dir.path(), "p.json", &stdout(&a));
    let m = dnnsim(&["trace", "mutate", &profile, "--template", "compute_heavy", "--count", "3"]);
    assert!(m.status.success(), "{}", stderr(&m));
    let v: serde_json::Value = serde_json::from_str(&stdout(&m)).unwrap();
    let names: Vec<&str> = v["params"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 25);
    assert!(names[21].starts_with("mod35x35x288"));

    let unknown = dnnsim(&["trace", "synth", "--preset", "alexnet"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn selfcheck_passes_and_is_reproducible() {
    let a = dnnsim(&["selfcheck", "--seed", "42", "--instances", "60"]);
    assert!(a.status.success(), "{}", stdout(&a));
    assert!(stdout(&a).lines().all(|l| l.starts_with("PASS ")));
    let b = dnnsim(&["selfcheck", "--seed", "42", "--instances", "60"]);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn selfcheck_catches_an_injected_rate_bug() {
    let o = dnnsim(&["selfcheck", "--instances", "30", "--inject-fault", "0.7"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL work_conservation"));
    assert!(stderr(&o).starts_with("error:invariant:"));
}
