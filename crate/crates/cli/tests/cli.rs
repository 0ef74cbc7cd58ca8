use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::Command;
use std::thread;

use decsolve::metrics::load_report;
use decsolve::problem::load_system;
use decsolve_cli::{config_from_report, execute, EXIT_ABORTED, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["decsolve"];
    argv.extend_from_slice(args);
    execute(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn trajectory(path: &Path) -> Vec<f64> {
    load_report(path).unwrap()[0].result.trajectory.clone()
}

#[test]
fn solve_converges_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.json");
    let code = run(&[
        "solve", "--problem", "p1", "--n", "100", "--pop", "40", "--selection", "bas", "--epsilon", "1e-8",
        "--seed", "42", "--output", s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let records = load_report(&out).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].result.converged);
    assert_eq!(records[0].topology, "single");
}

#[test]
fn simulate_and_solve_share_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.json");
    let single = dir.path().join("single.json");
    let common = ["--n", "100", "--pop", "40", "--seed", "7"];
    let mut a = vec!["simulate", "--slaves", "5", "--output", s(&sim)];
    a.extend_from_slice(&common);
    let mut b = vec!["solve", "--output", s(&single)];
    b.extend_from_slice(&common);
    assert_eq!(run(&a), EXIT_OK);
    assert_eq!(run(&b), EXIT_OK);
    let (ts, tv) = (trajectory(&single), trajectory(&sim));
    assert!(!ts.is_empty());
    assert_eq!(ts, tv);
}

#[test]
fn single_matches_one_slave_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.json");
    let single = dir.path().join("single.json");
    let common = ["--n", "30", "--pop", "20", "--seed", "3", "--max-gen", "30"];
    let mut a = vec!["simulate", "--slaves", "1", "--output", s(&sim)];
    a.extend_from_slice(&common);
    let mut b = vec!["solve", "--output", s(&single)];
    b.extend_from_slice(&common);
    run(&a);
    run(&b);
    assert_eq!(trajectory(&sim), trajectory(&single));
}

#[test]
fn indivisible_population_is_a_usage_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.csv");
    assert_eq!(run(&["solve", "--pop", "7", "--slaves", "3", "--output", s(&out)]), EXIT_USAGE);
    assert!(!out.exists());
    assert_eq!(run(&["simulate", "--pop", "10", "--slaves", "3", "--output", s(&out)]), EXIT_USAGE);
    assert!(!out.exists());
}

#[test]
fn bad_flags_exit_64_and_help_exits_0() {
    assert_eq!(run(&["solve", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(run(&["solve", "--pop", "many"]), EXIT_USAGE);
    assert_eq!(run(&["solve", "--selection", "roulette"]), EXIT_USAGE);
    assert_eq!(run(&["solve", "--epsilon", "-1"]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&[]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
    assert_eq!(run(&["--version"]), EXIT_OK);
}

#[test]
fn generation_limit_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    assert_eq!(run(&["solve", "--n", "20", "--max-gen", "2", "--output", s(&out)]), EXIT_NOT_CONVERGED);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# config[single]="));
    assert!(text.lines().any(|l| l.starts_with("run,topology,selection")));
}

#[test]
fn embedded_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let args = ["solve", "--n", "25", "--pop", "12", "--seed", "11", "--selection", "ts", "--max-gen", "25"];
    let mut a = args.to_vec();
    a.extend_from_slice(&["--output", s(&first)]);
    run(&a);

    let cfgs = config_from_report(&first).unwrap();
    assert_eq!(cfgs.len(), 1);
    let mut cfg = cfgs[0].clone();
    let second = dir.path().join("second.json");
    cfg.output = Some(second.clone());
    cfg.format = decsolve::metrics::ReportFormat::Json;
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    run(&["solve", "--config", s(&cfg_path)]);

    let json_first = dir.path().join("first.json");
    a.pop();
    a.push(s(&json_first));
    run(&a);
    assert_eq!(trajectory(&json_first), trajectory(&second));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"params":{"max_gen":3},"problem":{"n":12}}"#).unwrap();
    let out = dir.path().join("r.json");
    run(&["solve", "--config", s(&cfg_path), "--max-gen", "5", "--output", s(&out)]);
    let rec = &load_report(&out).unwrap()[0];
    assert_eq!(rec.result.generations, 5);
    assert_eq!(rec.config["problem"]["n"], 12);

    fs::write(&cfg_path, "{not json").unwrap();
    assert_eq!(run(&["solve", "--config", s(&cfg_path)]), EXIT_USAGE);
}

#[test]
fn gen_problem_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p6.json");
    assert_eq!(run(&["gen-problem", "--problem", "p6", "--n", "8", "--seed", "4", "--output", s(&path)]), EXIT_OK);
    let sys = load_system(&path).unwrap();
    assert_eq!(sys.n(), 8);
    assert_eq!(sys.diag(0), 70.0);

    let out = dir.path().join("r.json");
    assert_eq!(
        run(&["solve", "--problem-file", s(&path), "--pop", "10", "--output", s(&out)]),
        EXIT_OK
    );
    assert_eq!(run(&["gen-problem", "--problem", "file"]), EXIT_USAGE);
}

#[test]
fn report_merges_runs_and_fills_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let single = dir.path().join("single.json");
    let sim = dir.path().join("sim.json");
    let common = ["--n", "20", "--pop", "10", "--max-gen", "20"];
    let mut a = vec!["solve", "--output", s(&single)];
    a.extend_from_slice(&common);
    let mut b = vec!["simulate", "--slaves", "5", "--output", s(&sim)];
    b.extend_from_slice(&common);
    run(&a);
    run(&b);
    let merged = dir.path().join("merged.csv");
    assert_eq!(run(&["report", s(&single), s(&sim), "--output", s(&merged)]), EXIT_OK);
    let text = fs::read_to_string(&merged).unwrap();
    let header: Vec<&str> = text.lines().find(|l| l.starts_with("run,")).unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "speedup").unwrap();
    let total = text.lines().find(|l| l.starts_with("virtual-5,") && l.contains(",total,")).unwrap();
    let speedup: f64 = total.split(',').nth(col).unwrap().parse().unwrap();
    assert!(speedup > 0.0);

    let again = dir.path().join("again.csv");
    run(&["report", s(&single), s(&sim), "--output", s(&again)]);
    assert_eq!(fs::read(&merged).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn master_and_slaves_over_loopback() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let sim = dir.path().join("sim.json");
    let common = ["--n", "20", "--pop", "8", "--seed", "5", "--max-gen", "15"];

    let slaves: Vec<_> = (0..2)
        .map(|_| {
            let addr = addr.clone();
            thread::spawn(move || run(&["slave", "--connect", &addr]))
        })
        .collect();
    let mut m = vec!["master", "--listen", &addr, "--expect", "2", "--output", s(&net)];
    m.extend_from_slice(&common);
    let code = run(&m);
    for h in slaves {
        assert_eq!(h.join().unwrap(), EXIT_OK);
    }
    assert!(code == EXIT_OK || code == EXIT_NOT_CONVERGED);

    let mut v = vec!["simulate", "--slaves", "2", "--output", s(&sim)];
    v.extend_from_slice(&common);
    run(&v);
    assert_eq!(trajectory(&net), trajectory(&sim));
}

#[test]
fn master_without_slaves_aborts() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let code = run(&["master", "--listen", &addr, "--expect", "1", "--handshake-timeout", "0.2", "--n", "10", "--pop", "4"]);
    assert_eq!(code, EXIT_ABORTED);
}

#[test]
fn slave_without_master_fails() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let code = run(&["slave", "--connect", &addr, "--handshake-timeout", "0.2"]);
    assert_ne!(code, EXIT_OK);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_decsolve");
    let status = Command::new(bin).args(["solve", "--pop", "7", "--slaves", "3"]).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_USAGE));
    let out = Command::new(bin)
        .args(["solve", "--n", "10", "--pop", "4", "--max-gen", "1", "--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_NOT_CONVERGED));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["runs"][0]["result"]["generations"], 1);
}
