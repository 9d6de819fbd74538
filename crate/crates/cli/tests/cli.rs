use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use raego::experiments::METRICS_CSV_HEADER;
use raego::sim::{policy_rng, run_cold_start, Trace, REPORT_CSV_HEADER, TRACE_CSV_HEADER};
use raego::{SimConfig, SimEnvironment};
use sha2::{Digest, Sha256};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn raego(args: &[&str], stdin: Option<&str>) -> Outcome {
    let mut child = Command::new(env!("CARGO_BIN_EXE_raego"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    drop(pipe);
    let out = child.wait_with_output().unwrap();
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic_ratings.csv")
}

fn manifest(out: &Path) -> serde_json::Value {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    serde_json::from_str(&fs::read_to_string(PathBuf::from(p)).unwrap()).unwrap()
}

#[test]
fn aggregate_examples() {
    let out = raego(&["aggregate", "--algo", "tournament_greedy"], Some("0,1,2\n0,1,2\n2,1,0\n"));
    assert_eq!((out.code, out.stdout.as_str()), (0, "0,1,2\n"));

    let out = raego(&["aggregate", "--algo", "dictator", "--weights", "0.2,0.8"], Some("0,1\n1,0\n"));
    assert_eq!((out.code, out.stdout.as_str()), (0, "1,0\n"));

    let out = raego(&["aggregate", "--weights", "0.7,0.3", "--gamma", "1,1"], Some("0,1\n1,0\n"));
    assert_eq!((out.code, out.stdout.as_str()), (0, "0,1\n"));
}

#[test]
fn exit_codes() {
    let out = raego(&["aggregate", "--algo", "kemeny"], Some("0,1\n"));
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("kemeny"));
    assert_eq!(raego(&["frobnicate"], None).code, 2);
    assert_eq!(raego(&["bench", "--threads", "0"], None).code, 2);
    assert_eq!(raego(&["--help"], None).code, 0);

    let bad = raego(&["aggregate"], Some("0,1,2\n0,1\n"));
    assert_eq!(bad.code, 1);
    assert!(bad.stderr.contains("line 2"));
    assert_eq!(raego(&["aggregate", "--weights", "1"], Some("0,1\n1,0\n")).code, 1);
    assert_eq!(raego(&["aggregate", "--algo", "borda", "--gamma", "1,1"], Some("0,1\n1,0\n")).code, 1);
    assert_eq!(raego(&["simplex", "--targets", "/nonexistent/targets.txt"], None).code, 1);
}

#[test]
fn bench_rows_are_reproducible() {
    let args = ["bench", "--trials", "1", "--seed", "3", "--algos", "dictator,borda,tournament_greedy"];
    let a = raego(&args, None);
    let b = raego(&args, None);
    assert_eq!(a.code, 0);
    assert_eq!(a.stdout, b.stdout);
    let lines: Vec<&str> = a.stdout.lines().collect();
    assert_eq!(lines[0], METRICS_CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("dictator,3,8,uniform,"));
}

#[test]
fn thread_count_does_not_change_results() {
    let args = |t: &'static str| ["bench", "--trials", "500", "--m", "6", "--weights", "random", "--threads", t];
    assert_eq!(raego(&args("1"), None).stdout, raego(&args("4"), None).stdout);
}

#[test]
fn simplex_grid_three_has_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets.txt");
    fs::write(&targets, "0,1,2,3\n3,2,1,0\n1,3,0,2\n").unwrap();
    let out = raego(&["simplex", "--targets", targets.to_str().unwrap(), "--grid", "3"], None);
    assert_eq!(out.code, 0);
    let lines: Vec<&str> = out.stdout.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "x,y,z,dictator,copeland,lehmer,borda,tournament_greedy");
    // At a vertex every rule returns that target: 0,1,2,3 has Cantor code 0.
    assert_eq!(lines[1], "1.000000,0.000000,0.000000,0,0,0,0,0");
}

#[test]
fn weakpo_dictator_precision_is_one() {
    let out = raego(&["weakpo", "--m", "5", "--samples", "500", "--instances", "2", "--seed", "11"], None);
    assert_eq!(out.code, 0);
    let dictator = out.stdout.lines().find(|l| l.starts_with("dictator,")).unwrap();
    assert_eq!(dictator.split(',').nth(7), Some("1.000000"));
}

#[test]
fn dataset_on_bundled_fixture() {
    let file = fixture();
    let out = raego(
        &["dataset", "--file", file.to_str().unwrap(), "--voters", "50", "--trials", "50", "--algos", "borda,tournament_greedy"],
        None,
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    let eff: Vec<f64> = out
        .stdout
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert!(eff[1] <= eff[0], "tournament_greedy {} vs borda {}", eff[1], eff[0]);
}

#[test]
fn toy_writes_trace_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("toy.csv");
    let out = raego(&["toy", "--seeds", "2", "--rounds", "2", "--out", out_path.to_str().unwrap()], None);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stderr.contains("alpha 1 vs 0"));
    let trace = fs::read_to_string(&out_path).unwrap();
    assert!(trace.starts_with("seed,alpha,round,x,y,z,reward\n"));
    assert_eq!(trace.lines().count(), 1 + 2 * 2 * 2);
    let summary = fs::read_to_string(dir.path().join("toy.csv.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);

    let m = manifest(&out_path);
    assert_eq!(m["command"], "toy");
    assert_eq!(m["seed"], 0);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    assert_eq!(outputs[0]["schema"], "toy_trace");
    assert_eq!(outputs[0]["schema_version"], 1);
    assert_eq!(outputs[0]["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(trace.as_bytes())));
}

#[test]
fn sim_random_policy_is_the_cold_start_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("re.csv");
    let seed = 7;
    let out = raego(
        &["sim", "--policy", "ra-re", "--pages", "400", "--cold-pages", "100", "--seed", "7", "--out", out_path.to_str().unwrap()],
        None,
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    let env = SimEnvironment::new(SimConfig::default()).unwrap();
    let cold = run_cold_start(&env, seed, 100, 400, &mut policy_rng(seed, 1)).unwrap();
    let mut expected = Vec::new();
    Trace::write_csv(&[&cold.trace], &mut expected).unwrap();
    assert_eq!(fs::read(&out_path).unwrap(), expected);
    // One policy: no comparison table.
    assert!(!dir.path().join("re.csv.report.csv").exists());
}

#[test]
fn sim_report_matches_report_command() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sim.csv");
    let out = raego(
        &["sim", "--preset", "two-context", "--pages", "600", "--cold-pages", "300", "--refresh", "300", "--out", out_path.to_str().unwrap()],
        None,
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    let trace = fs::read_to_string(&out_path).unwrap();
    assert!(trace.starts_with(TRACE_CSV_HEADER));
    let traces = Trace::read_csv(trace.as_bytes()).unwrap();
    assert_eq!(traces.len(), 3);
    assert!(traces.iter().all(|t| t.records.len() == 600));

    let table = fs::read_to_string(dir.path().join("sim.csv.report.csv")).unwrap();
    assert!(table.starts_with(REPORT_CSV_HEADER));
    assert!(table.lines().nth(1).unwrap().starts_with("ra-re,600,"));
    assert!(table.lines().nth(1).unwrap().contains(",0.0000,"));
    let again = raego(&["report", out_path.to_str().unwrap()], None);
    assert_eq!(again.code, 0, "{}", again.stderr);
    assert_eq!(again.stdout, table);
    assert_eq!(manifest(&out_path)["config"]["env"]["features"], serde_json::json!([2]));
    assert_eq!(raego(&["report", out_path.to_str().unwrap(), "--baseline", "ra-ego"], None).code, 0);
}

#[test]
fn sim_reads_environment_json() {
    let dir = tempfile::tempdir().unwrap();
    let env_path = dir.path().join("env.json");
    let config = SimConfig {
        features: vec![3],
        items: 6,
        ..SimConfig::default()
    };
    fs::write(&env_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = raego(&["sim", "--env", env_path.to_str().unwrap(), "--pages", "50", "--cold-pages", "20", "--policy", "ra-re,ra-be"], None);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.stdout.lines().count(), 1 + 100);
    assert!(out.stderr.starts_with(REPORT_CSV_HEADER));

    fs::write(&env_path, r#"{"features":[2],"items":4,"noise":[0.1],"conversion":0.5,"experts":[[1.0]],"bogus":1}"#).unwrap();
    assert_eq!(raego(&["sim", "--env", env_path.to_str().unwrap()], None).code, 1);
}

#[test]
fn toy_runs_are_paired_by_seed() {
    let a = raego(&["toy", "--seeds", "1", "--rounds", "2", "--seed", "4", "--alpha", "0.5"], None);
    assert_eq!(a.code, 0, "{}", a.stderr);
    let b = raego(&["toy", "--seeds", "1", "--rounds", "2", "--seed", "4", "--alpha", "0.5,2"], None);
    let first: Vec<&str> = b.stdout.lines().filter(|l| l.starts_with("4,0.5,")).collect();
    assert_eq!(first, a.stdout.lines().skip(1).collect::<Vec<_>>());
}
