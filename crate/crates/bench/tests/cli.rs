use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DVector;
use sock_bench::files::read_instance;
use sock_bench::run::{sock_params, Algo, Mode, Problem, RunSpec};
use sock_core::solvers::CSV_HEADER;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sock-bench"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = cli(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, name: &str, dim: usize, samples: usize, lambda2: f64) -> String {
    ok(
        &[
            "gen",
            "--dim",
            &dim.to_string(),
            "--samples",
            &samples.to_string(),
            "--noise-v",
            "1.5",
            "--lambda1",
            "0.5",
            "--lambda2",
            &lambda2.to_string(),
            "--seed",
            "4",
            "--out",
            name,
        ],
        dir,
    )
}

fn reference(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn gen_is_deterministic_and_reports_constants() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let first = gen(p, "a.json", 6, 40, 0.1);
    gen(p, "b.json", 6, 40, 0.1);
    assert_eq!(
        fs::read(p.join("a.json")).unwrap(),
        fs::read(p.join("b.json")).unwrap()
    );
    for key in ["L = ", "mu = ", "kappa = "] {
        assert!(first.contains(key), "{first}");
    }
    let rank_deficient = gen(p, "c.json", 10, 6, 0.1);
    assert!(rank_deficient.contains("mu = 0e0"), "{rank_deficient}");
    assert!(!cli(
        &[
            "gen",
            "--dim",
            "0",
            "--samples",
            "5",
            "--noise-v",
            "1",
            "--out",
            "d.json"
        ],
        p
    )
    .status
    .success());
}

#[test]
fn refsol_writes_the_reference_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "i.json", 6, 40, 0.0);
    ok(
        &[
            "refsol",
            "--instance",
            "i.json",
            "--tol",
            "1e-11",
            "--out",
            "r.json",
        ],
        p,
    );
    let r = reference(p, "r.json");
    let mut keys: Vec<&String> = r.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["h_star", "residual", "tol", "x_star"]);

    // with lambda2 = 0 the optimum solves 2 lambda1 M x = -abar
    let inst = read_instance(&p.join("i.json")).unwrap();
    let direct = (&inst.quad_matrix * (2.0 * inst.lambda1))
        .lu()
        .solve(&(-&inst.mean_col))
        .unwrap();
    let x = DVector::from_vec(floats(&r["x_star"]));
    assert!((x - direct).amax() <= 1e-8);

    // a looser solve never undercuts the tighter one by more than its residual
    ok(
        &[
            "refsol",
            "--instance",
            "i.json",
            "--tol",
            "1e-4",
            "--out",
            "loose.json",
        ],
        p,
    );
    let loose = reference(p, "loose.json");
    let (h_tight, h_loose) = (
        r["h_star"].as_f64().unwrap(),
        loose["h_star"].as_f64().unwrap(),
    );
    assert!(h_tight <= h_loose + loose["residual"].as_f64().unwrap());
}

#[test]
fn refsol_is_zero_when_l1_dominates() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "i.json", 6, 40, 0.0);
    let abar = read_instance(&p.join("i.json")).unwrap().mean_col.amax();
    gen(p, "big.json", 6, 40, abar * 1.01);
    ok(&["refsol", "--instance", "big.json", "--out", "r.json"], p);
    let r = reference(p, "r.json");
    assert_eq!(r["h_star"].as_f64().unwrap(), 0.0);
    assert!(floats(&r["x_star"]).iter().all(|&v| v == 0.0));
}

#[test]
fn solve_writes_one_row_per_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "i.json", 6, 40, 0.05);
    ok(&["refsol", "--instance", "i.json", "--out", "r.json"], p);
    let args = |out: &'static str| {
        [
            "solve",
            "--instance",
            "i.json",
            "--reference",
            "r.json",
            "--algo",
            "sock",
            "--snapshots",
            "7",
            "--seed",
            "3",
            "--out",
            out,
        ]
    };
    ok(&args("t1.csv"), p);
    ok(&args("t2.csv"), p);
    let text = fs::read_to_string(p.join("t1.csv")).unwrap();
    assert_eq!(text, fs::read_to_string(p.join("t2.csv")).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + 8);
    assert!(!text.contains('\r'));

    let inst = read_instance(&p.join("i.json")).unwrap();
    let n = inst.samples as u64;
    let reference = sock_bench::files::read_reference(&p.join("r.json")).unwrap();
    let problem = Problem::new(inst, Some(reference), 0.0, None).unwrap();
    let spec = RunSpec {
        snapshots: Some(7),
        ..RunSpec::new(Algo::Sock, Mode::Practical)
    };
    let params = sock_params(&problem, &spec).unwrap();
    let (m, a, b) = (
        params.m as u64,
        params.batch_inner_value,
        params.batch_inner_jac,
    );
    let want = 7 * (n + 2 * n + m * (2 * a + 2 * b + n));
    let last: Vec<&str> = lines[8].split(',').collect();
    let units: u64 = last[2..5].iter().map(|v| v.parse::<u64>().unwrap()).sum();
    assert_eq!(units, want);
    assert!(last[7].parse::<f64>().unwrap() >= -1e-9);
    assert!(last[8].is_empty());

    // every algorithm runs through the CLI
    for algo in ["gock", "nock", "mlsock", "vrscpg"] {
        let mut a = args("x.csv").to_vec();
        a[6] = algo;
        if algo == "nock" {
            a.extend(["--option", "i", "--stages", "3"]);
        }
        ok(&a, p);
        assert!(fs::read_to_string(p.join("x.csv"))
            .unwrap()
            .starts_with(CSV_HEADER));
    }
}

/// Convex instance on which capped option II batches (C = 1) diverge.
fn divergent_instance(dir: &Path) {
    ok(
        &[
            "gen",
            "--dim",
            "30",
            "--samples",
            "20",
            "--noise-v",
            "1.5",
            "--lambda1",
            "0.5",
            "--lambda2",
            "1",
            "--seed",
            "4",
            "--out",
            "convex.json",
        ],
        dir,
    );
}

#[test]
fn solve_failure_keeps_the_diagnostic_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    divergent_instance(p);
    let out = cli(
        &[
            "solve",
            "--instance",
            "convex.json",
            "--algo",
            "nock",
            "--out",
            "t.csv",
        ],
        p,
    );
    assert!(!out.status.success());
    let text = fs::read_to_string(p.join("t.csv")).unwrap();
    let last = text.lines().last().unwrap();
    let objective = last.split(',').nth(6).unwrap();
    assert!(!objective.parse::<f64>().unwrap().is_finite(), "{last}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));

    // parameters outside their invariants are rejected before running
    gen(p, "i.json", 6, 40, 0.05);
    let out = cli(
        &[
            "solve",
            "--instance",
            "i.json",
            "--algo",
            "sock",
            "--alpha",
            "1e6",
            "--out",
            "u.csv",
        ],
        p,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid parameter"));
}

const SWEEP: &str = "\
[instance]
path = i.json
reference = r.json
x0 = 0.5

[run]
id = gock
algo = gock
mode = practical
seeds = 1, 2, 3
snapshots = 5

[run]
id = sock
algo = sock
mode = practical
seeds = 1, 2, 3
snapshots = 5
";

#[test]
fn bench_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "i.json", 6, 40, 0.05);
    ok(&["refsol", "--instance", "i.json", "--out", "r.json"], p);
    fs::write(p.join("sweep.cfg"), SWEEP).unwrap();
    ok(&["bench", "sweep.cfg", "--out", "out", "--jobs", "3"], p);
    let mut names: Vec<String> = fs::read_dir(p.join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 7);
    assert!(names.contains(&"summary.csv".to_string()));

    let inst = read_instance(&p.join("i.json")).unwrap();
    let h_star = reference(p, "r.json")["h_star"].as_f64().unwrap();
    let gap0 = inst.dense_objective(&DVector::from_element(6, 0.5)) - h_star;
    let summary = fs::read_to_string(p.join("out/summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let ids: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    for id in ["gock", "sock"] {
        let first = rows.iter().find(|r| r[0] == id).unwrap();
        assert_eq!(first[1], "0");
        assert_eq!(first[2], "3");
        let mean: f64 = first[3].parse().unwrap();
        assert!(
            (mean - gap0).abs() <= 1e-10 * gap0.abs().max(1.0),
            "{mean} vs {gap0}"
        );
    }
}

#[test]
fn bench_continues_after_a_failed_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    divergent_instance(p);
    let config = "\
[instance]
path = convex.json

[run]
id = broken
algo = nock
mode = practical
seeds = 1

[run]
id = fine
algo = nock
mode = practical
option = i
stages = 4
seeds = 1, 2
";
    fs::write(p.join("sweep.cfg"), config).unwrap();
    let out = cli(&["bench", "sweep.cfg", "--out", "out", "--jobs", "2"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run broken seed 1 failed"));
    for name in [
        "fine_seed1.csv",
        "fine_seed2.csv",
        "broken_seed1.csv",
        "summary.csv",
    ] {
        assert!(p.join("out").join(name).exists(), "{name}");
    }
    let summary = fs::read_to_string(p.join("out/summary.csv")).unwrap();
    assert!(!summary.contains("broken"));
    assert!(summary.contains("fine,0,2,"));

    fs::write(
        p.join("bad.cfg"),
        config.replace("seeds = 1\n", "seeds = 1\ncolour = red\n"),
    )
    .unwrap();
    let out = cli(&["bench", "bad.cfg", "--out", "out2"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}
