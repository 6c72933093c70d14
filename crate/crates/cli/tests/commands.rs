use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdkf-sched"));
    cmd.env("CDKF_SCHED_THREADS", "2");
    cmd
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn write_rates(path: &Path, nodes: &[f64], rates: &[Vec<f64>]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    let sensors = rates.first().map_or(0, Vec::len);
    let mut header = vec!["interval".to_string(), "t_start".into(), "t_end".into()];
    header.extend((1..=sensors).map(|s| format!("lambda_{s}")));
    w.write_record(&header).unwrap();
    for (k, r) in rates.iter().enumerate() {
        let mut row = vec![
            k.to_string(),
            nodes[k].to_string(),
            nodes[k + 1].to_string(),
        ];
        row.extend(r.iter().map(|v| v.to_string()));
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn water_plan_has_documented_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("water.json");
    let out = run(&[
        "plan",
        "--config",
        p(&cfg),
        "--grid-n",
        "60",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("rates.csv"));
    assert_eq!(
        header,
        ["interval", "t_start", "t_end", "lambda_1", "lambda_2"]
    );
    assert_eq!(rows.len(), 59);
    let (header, rows) = read_csv(&dir.path().join("inputs.csv"));
    assert_eq!(header, ["interval", "t_start", "t_end", "u_1", "u_2"]);
    assert_eq!(rows.len(), 59);
    let (header, rows) = read_csv(&dir.path().join("bound.csv"));
    assert_eq!(
        &header[..5],
        ["node", "t", "trace", "fouling_1", "fouling_2"]
    );
    assert_eq!(rows.len(), 60);
    let solve: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("solve.json")).unwrap()).unwrap();
    assert_eq!(solve["converged"], true);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "plan");
    assert_eq!(manifest["scenario"], "water");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);

    // Round trip: every sensor gets floor(Λ + 0.5) events.
    let out = run(&[
        "schedule",
        "--rates",
        p(&dir.path().join("rates.csv")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let (_, rates) = read_csv(&dir.path().join("rates.csv"));
    let (_, events) = read_csv(&dir.path().join("schedule.csv"));
    for s in 0..2 {
        let total: f64 = rates
            .iter()
            .map(|r| (num(&r[2]) - num(&r[1])) * num(&r[3 + s]))
            .sum();
        let count = events
            .iter()
            .filter(|e| e[0] == (s + 1).to_string())
            .count();
        assert_eq!(count as f64, (total + 0.5).floor(), "sensor {}", s + 1);
    }
}

#[test]
fn constant_rate_schedule_places_midpoints() {
    let dir = TempDir::new().unwrap();
    let rates = dir.path().join("rates.csv");
    write_rates(
        &rates,
        &[0.0, 1.0, 2.0, 3.0],
        &[vec![2.0], vec![2.0], vec![2.0]],
    );
    let out = run(&["schedule", "--rates", p(&rates), "--out", p(dir.path())]);
    assert_eq!(code(&out), 0);
    let (header, rows) = read_csv(&dir.path().join("schedule.csv"));
    assert_eq!(header, ["sensor", "t"]);
    assert_eq!(rows.len(), 6);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], "1");
        // Equal-mass cells of width 0.5; centroids at their midpoints.
        let expected = 0.25 + 0.5 * i as f64;
        assert!(
            (num(&row[1]) - expected).abs() < 1e-12,
            "{} vs {expected}",
            row[1]
        );
    }
}

#[test]
fn zero_rates_give_header_only() {
    let dir = TempDir::new().unwrap();
    let rates = dir.path().join("rates.csv");
    write_rates(&rates, &[0.0, 0.5, 1.0], &[vec![0.0, 0.0], vec![0.0, 0.0]]);
    let out = run(&["schedule", "--rates", p(&rates), "--out", p(dir.path())]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read_to_string(dir.path().join("schedule.csv")).unwrap(),
        "sensor,t\n"
    );
}

#[test]
fn malformed_rates_exit_one() {
    let dir = TempDir::new().unwrap();
    let rates = dir.path().join("rates.csv");
    fs::write(&rates, "interval,t_start,t_end,lambda_1\n0,0,1,abc\n").unwrap();
    let out = run(&["schedule", "--rates", p(&rates), "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_config_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"scenario": "scalar", "a": 0.0, "sigma2": -1.0, "c": 1.0, "r": 1.0, "sigma_0": 1.0, "horizon": 1.0, "grid_n": 5, "w_sigma": 1.0, "w_lambda": 0.1}"#)
        .unwrap();
    let out = run(&["plan", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    let out = run(&[
        "plan",
        "--config",
        p(&dir.path().join("missing.json")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn verify_on_water_reports_precondition_violation() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("water.json");
    let rates = dir.path().join("rates.csv");
    let nodes: Vec<f64> = (0..60).map(|k| 5.0 * k as f64 / 59.0).collect();
    write_rates(&rates, &nodes, &vec![vec![1.0, 1.0]; 59]);
    let out = run(&[
        "verify",
        "--config",
        p(&cfg),
        "--rates",
        p(&rates),
        "--reps",
        "10",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("precondition"));
}

#[test]
fn verify_on_scalar_passes_and_rejects_mismatched_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("scalar.json");
    let rates = dir.path().join("rates.csv");
    let nodes: Vec<f64> = (0..21).map(|k| k as f64 / 20.0).collect();
    write_rates(&rates, &nodes, &vec![vec![2.0]; 20]);
    let out = run(&[
        "verify",
        "--config",
        p(&cfg),
        "--rates",
        p(&rates),
        "--reps",
        "2000",
        "--seed",
        "5",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["replications"], 2000);

    let out = run(&[
        "verify",
        "--config",
        p(&cfg),
        "--grid-n",
        "11",
        "--rates",
        p(&rates),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn simulate_is_deterministic_and_tracks_energy_jumps() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("robot.json");
    let schedule = dir.path().join("schedule.csv");
    fs::write(&schedule, "sensor,t\n1,0.1\n2,0.25\n1,0.4\n2,0.7\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&[
            "simulate",
            "--config",
            p(&cfg),
            "--schedule",
            p(&schedule),
            "--seed",
            "11",
            "--out",
            p(out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["truth.csv", "filter.csv", "smooth.csv", "stats.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }

    let (header, rows) = read_csv(&a.join("truth.csv"));
    let energy = header.iter().position(|h| h == "energy").unwrap();
    let cost = [0.05, 0.02];
    let mut checked = 0;
    for pair in rows.windows(2) {
        if pair[0][1] == "pre" && pair[1][1] == "post" {
            assert_eq!(pair[0][0], pair[1][0]);
            let s: usize = pair[0][2].parse().unwrap();
            let drop = num(&pair[0][energy]) - num(&pair[1][energy]);
            assert!((drop - cost[s - 1]).abs() < 1e-12, "sensor {s} drop {drop}");
            checked += 1;
        }
    }
    assert_eq!(checked, 4);
}

#[test]
fn empty_schedule_filter_matches_prediction() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("scalar.json");
    let schedule = dir.path().join("schedule.csv");
    fs::write(&schedule, "sensor,t\n").unwrap();
    let out = run(&[
        "simulate",
        "--config",
        p(&cfg),
        "--schedule",
        p(&schedule),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // dΣ/dt = σ² with A = 0, so the prediction-only trace is Σ₀ + σ² t.
    let (_, rows) = read_csv(&dir.path().join("filter.csv"));
    for row in &rows {
        let t = num(&row[0]);
        assert!((num(&row[2]) - (1.0 + 0.5 * t)).abs() < 1e-9, "t={t}");
    }
}

#[test]
fn robot_bound_respects_trace_limit_up_to_reported_violation() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("robot.json")).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
    cfg["grid_n"] = 8.into();
    cfg["max_outer"] = 6.into();
    cfg["max_inner"] = 60.into();
    let path = dir.path().join("robot.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = run(&["plan", "--config", p(&path), "--out", p(dir.path())]);
    assert!(
        matches!(code(&out), 0 | 2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let solve: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("solve.json")).unwrap()).unwrap();
    let violation = solve["max_violation"].as_f64().unwrap();
    let (header, rows) = read_csv(&dir.path().join("bound.csv"));
    let slack = header.iter().position(|h| h == "slack_1").unwrap();
    let c_sigma = cfg["c_sigma"].as_f64().unwrap();
    let window = 0.5;
    let mut checked = 0;
    // Running constraints act on the control nodes; the terminal row has an empty slack.
    for row in rows
        .iter()
        .filter(|r| num(&r[1]) >= window - 1e-12 && !r[slack].is_empty())
    {
        assert!(
            num(&row[2]) <= c_sigma + num(&row[slack]) + violation + 1e-9,
            "node {}",
            row[0]
        );
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn gp_demo_matches_dense_regression() {
    let dir = TempDir::new().unwrap();
    let out = run(&["gp-demo", "--seed", "4", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gp_demo.json")).unwrap())
            .unwrap();
    for k in summary["kernels"].as_array().unwrap() {
        assert!(k["max_mean_deviation"].as_f64().unwrap() < 1e-6);
        assert!(k["max_var_deviation"].as_f64().unwrap() < 1e-6);
    }
}

#[test]
fn compare_rejects_zero_replications() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("scalar.json");
    let out = run(&[
        "compare",
        "--config",
        p(&cfg),
        "--reps",
        "0",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn compare_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("water.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&[
            "compare",
            "--config",
            p(&cfg),
            "--grid-n",
            "30",
            "--reps",
            "3",
            "--seed",
            "9",
            "--out",
            p(out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        fs::read(a.join("compare.csv")).unwrap(),
        fs::read(b.join("compare.csv")).unwrap()
    );
    let (header, rows) = read_csv(&a.join("compare.csv"));
    assert_eq!(
        header,
        ["method", "signal", "mean", "std", "max", "min", "events"]
    );
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    for m in ["Optimized", "M-Optimized", "Greedy", "Random"] {
        assert!(methods.contains(&m));
    }
}
