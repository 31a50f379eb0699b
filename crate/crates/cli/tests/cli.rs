use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn primseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_primseg"))
        .args(args)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = primseg(args);
    assert!(
        out.status.success(),
        "primseg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = primseg(args);
    assert!(
        !out.status.success(),
        "primseg {args:?} unexpectedly succeeded"
    );
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate_recovery(&self, frames: usize, seed: u64) -> PathBuf {
        let out = self.path(&format!("sim{seed}"));
        ok(&[
            "simulate",
            "--fixture",
            "recovery",
            "--frames",
            &frames.to_string(),
            "--seed",
            &seed.to_string(),
            "--out",
            p(&out),
        ]);
        out
    }

    fn train(&self, data: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let mut args = vec!["train", p(data), "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

const SHORT: [&str; 6] = ["--sweeps", "30", "--burn-in", "10", "--thin", "2"];

#[test]
fn end_to_end_on_recovery_data() {
    let ws = Workspace::new();
    let sim = ws.simulate_recovery(300, 1);
    let data = sim.join("data.csv");
    let truth = json(&sim.join("truth.json"));
    assert_eq!(truth["states"].as_array().unwrap().len(), 300);

    let run = ws.train(&data, "run", &SHORT);
    let loglik = fs::read_to_string(run.join("loglik.csv")).unwrap();
    assert_eq!(loglik.lines().count(), 31);
    assert_eq!(loglik.lines().next(), Some("sweep,loglik"));

    let seg = ws.path("seg");
    ok(&[
        "segment",
        p(&data),
        "--checkpoint",
        p(&run.join("checkpoint.json")),
        "--out",
        p(&seg),
    ]);
    let report = json(&seg.join("report.json"));
    assert_eq!(report["d"], 2);
    assert_eq!(report["T_seconds"], 30.0);
    let stats = json(&seg.join("stats.json"));
    assert!(stats["sets"].as_u64().unwrap() <= 30);
    assert_eq!(stats["total"], report["total_primitives"]);

    let printed: Value =
        serde_json::from_str(&ok(&["stats", p(&seg.join("segments.csv"))])).unwrap();
    assert_eq!(printed, stats);

    // Segments tile the sequence: first starts at 0, last ends at the last frame.
    let csv = fs::read_to_string(seg.join("segments.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows[0].starts_with("0,"));
    assert!(rows[rows.len() - 1].contains(",29.9,"));

    let checked = ok(&[
        "check-format",
        p(&data),
        p(&sim.join("truth.json")),
        p(&run.join("checkpoint.json")),
        p(&run.join("loglik.csv")),
        p(&seg.join("segments.csv")),
        p(&seg.join("stats.json")),
        p(&seg.join("report.json")),
    ]);
    assert_eq!(checked.lines().filter(|l| l.starts_with("ok")).count(), 7);
}

#[test]
fn same_seed_same_bytes_and_different_seed_differs() {
    let ws = Workspace::new();
    let sim = ws.simulate_recovery(200, 2);
    let again = ws.path("again");
    ok(&[
        "simulate",
        "--fixture",
        "recovery",
        "--frames",
        "200",
        "--seed",
        "2",
        "--out",
        p(&again),
    ]);
    assert_eq!(
        fs::read(sim.join("data.csv")).unwrap(),
        fs::read(again.join("data.csv")).unwrap()
    );

    let data = sim.join("data.csv");
    let a = ws.train(
        &data,
        "a",
        &[&SHORT[..], &["--seed", "5", "--chains", "2"]].concat(),
    );
    let b = ws.train(
        &data,
        "b",
        &[&SHORT[..], &["--seed", "5", "--chains", "2"]].concat(),
    );
    // Seeds 5 and 6 are taken by the two chains above.
    let c = ws.train(&data, "c", &[&SHORT[..], &["--seed", "9"]].concat());
    for f in ["checkpoint.json", "loglik.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.join("loglik.csv")).unwrap(),
        fs::read(c.join("loglik.csv")).unwrap()
    );
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let ws = Workspace::new();
    let data = ws.simulate_recovery(150, 3).join("data.csv");
    let full = ws.train(
        &data,
        "full",
        &[
            "--sweeps",
            "24",
            "--burn-in",
            "6",
            "--thin",
            "3",
            "--seed",
            "8",
        ],
    );
    let half = ws.train(
        &data,
        "half",
        &[
            "--sweeps",
            "12",
            "--burn-in",
            "6",
            "--thin",
            "3",
            "--seed",
            "8",
        ],
    );
    let resumed = ws.train(
        &data,
        "resumed",
        &[
            "--resume",
            p(&half.join("checkpoint.json")),
            "--sweeps",
            "24",
        ],
    );
    for f in ["checkpoint.json", "loglik.csv"] {
        assert_eq!(
            fs::read(full.join(f)).unwrap(),
            fs::read(resumed.join(f)).unwrap(),
            "{f}"
        );
    }
    let err = fails(&[
        "train",
        p(&data),
        "--out",
        p(&ws.path("x")),
        "--resume",
        p(&half.join("checkpoint.json")),
        "--sweeps",
        "5",
    ]);
    assert!(err.contains("below"), "{err}");
}

#[test]
fn config_file_and_flag_precedence() {
    let ws = Workspace::new();
    let data = ws.simulate_recovery(120, 4).join("data.csv");
    let cfg = ws.path("cfg.json");
    fs::write(
        &cfg,
        r#"{"sweeps": 20, "burn_in": 5, "thin": 5, "seed": 3, "truncation_L": 7}"#,
    )
    .unwrap();
    let run = ws.train(&data, "run", &["--config", p(&cfg), "--sweeps", "25"]);
    let ck = json(&run.join("checkpoint.json"));
    assert_eq!(ck["sweep"], 25);
    assert_eq!(ck["seed"], 3);
    assert_eq!(ck["hyper"]["truncation_L"], 7);
    assert_eq!(ck["model"]["beta"].as_array().unwrap().len(), 7);

    fs::write(&cfg, r#"{"sweeps": 20, "burn_in": 5, "stickiness": 3}"#).unwrap();
    let err = fails(&[
        "train",
        p(&data),
        "--out",
        p(&ws.path("bad")),
        "--config",
        p(&cfg),
    ]);
    assert!(err.contains("stickiness"), "{err}");

    let err = fails(&[
        "train",
        p(&data),
        "--out",
        p(&ws.path("bad")),
        "--sweeps",
        "5",
        "--burn-in",
        "5",
    ]);
    assert!(err.contains("burn_in"), "{err}");
}

#[test]
fn dimension_mismatch_names_both_dimensions() {
    let ws = Workspace::new();
    let small = ws.simulate_recovery(100, 5).join("data.csv");
    let run = ws.train(&small, "run", &SHORT);
    let binary = ws.path("bin");
    ok(&[
        "simulate",
        "--fixture",
        "binary",
        "--seed",
        "1",
        "--out",
        p(&binary),
    ]);
    let err = fails(&[
        "segment",
        p(&binary.join("data.csv")),
        "--checkpoint",
        p(&run.join("checkpoint.json")),
        "--out",
        p(&ws.path("seg")),
    ]);
    assert!(err.contains("d=2") && err.contains("d=17"), "{err}");
}

#[test]
fn segmenting_new_data_decodes_with_map_model() {
    let ws = Workspace::new();
    let train_data = ws.simulate_recovery(200, 6).join("data.csv");
    let other = ws.simulate_recovery(150, 7).join("data.csv");
    let run = ws.train(&train_data, "run", &SHORT);
    let seg = ws.path("seg");
    ok(&[
        "segment",
        p(&other),
        "--checkpoint",
        p(&run.join("checkpoint.json")),
        "--out",
        p(&seg),
    ]);
    assert_eq!(json(&seg.join("report.json"))["T_seconds"], 15.0);
}

#[test]
fn simulate_rejects_bad_requests() {
    let ws = Workspace::new();
    let out = ws.path("x");
    fails(&[
        "simulate",
        "--fixture",
        "recovery",
        "--frames",
        "0",
        "--out",
        p(&out),
    ]);
    fails(&["simulate", "--fixture", "recovery", "--out", p(&out)]);
    fails(&["simulate", "--out", p(&out), "--frames", "10"]);
    fails(&[
        "simulate",
        "--fixture",
        "binary",
        "--frames",
        "500",
        "--out",
        p(&out),
    ]);
}

#[test]
fn simulate_from_checkpoint() {
    let ws = Workspace::new();
    let data = ws.simulate_recovery(150, 8).join("data.csv");
    let run = ws.train(&data, "run", &SHORT);
    let out = ws.path("resim");
    ok(&[
        "simulate",
        "--checkpoint",
        p(&run.join("checkpoint.json")),
        "--frames",
        "80",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    let truth = json(&out.join("truth.json"));
    assert_eq!(truth["states"].as_array().unwrap().len(), 80);
    ok(&[
        "check-format",
        p(&out.join("data.csv")),
        p(&out.join("truth.json")),
    ]);
}

fn write_segments(path: &Path, boundaries_s: &[f64], last_s: f64) {
    let mut text = String::from("start_s,end_s,label\n");
    let mut start = 0.0;
    for (i, b) in boundaries_s.iter().chain([&(last_s + 0.1)]).enumerate() {
        let end = ((b - 0.1) * 10.0).round() / 10.0;
        text.push_str(&format!("{start},{end},{}\n", i % 2));
        start = *b;
    }
    fs::write(path, text).unwrap();
}

#[test]
fn validate_recall_on_known_boundaries() {
    let ws = Workspace::new();
    let sim = ws.path("bin");
    ok(&[
        "simulate",
        "--fixture",
        "binary",
        "--seed",
        "4",
        "--out",
        p(&sim),
    ]);
    let data = sim.join("data.csv");
    let truth = json(&sim.join("truth.json"));
    let times: Vec<f64> = truth["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["time_s"].as_f64().unwrap())
        .collect();
    assert_eq!(times.len(), 10);

    let perfect = ws.path("perfect.csv");
    write_segments(&perfect, &times, 99.9);
    let v: Value = serde_json::from_str(&ok(&["validate", p(&data), p(&perfect)])).unwrap();
    assert_eq!(v["recall"], 1.0);

    // Drop one boundary: nine of ten events remain matched.
    let nine = ws.path("nine.csv");
    write_segments(&nine, &times[1..], 99.9);
    let v: Value =
        serde_json::from_str(&ok(&["validate", p(&data), p(&nine), "--tol", "0.5"])).unwrap();
    assert_eq!(v["recall"], 0.9);
    assert_eq!(v["missed"].as_array().unwrap().len(), 1);

    // Shift every boundary by 0.8 s: matched at 1.0 s, not at 0 or 0.5 s.
    let shifted: Vec<f64> = times
        .iter()
        .map(|t| ((t + 0.8) * 10.0).round() / 10.0)
        .collect();
    let late = ws.path("late.csv");
    write_segments(&late, &shifted, 99.9);
    let mut last = -1.0;
    for (tol, want) in [("0", 0.0), ("0.5", 0.0), ("1.0", 1.0)] {
        let out = ws.path(&format!("val{tol}.json"));
        let v: Value = serde_json::from_str(&ok(&[
            "validate",
            p(&data),
            p(&late),
            "--tol",
            tol,
            "--out",
            p(&out),
        ]))
        .unwrap();
        let r = v["recall"].as_f64().unwrap();
        assert_eq!(r, want, "tol {tol}");
        assert!(r >= last);
        last = r;
        ok(&["check-format", p(&out)]);
    }

    // Segments that do not fit the data are rejected.
    let short = ws.path("short.csv");
    write_segments(&short, &times, 50.0);
    fails(&["validate", p(&data), p(&short)]);
}

#[test]
fn check_format_flags_bad_files() {
    let ws = Workspace::new();
    let bad = ws.path("bad.csv");
    fs::write(&bad, "start_s,end_s,label\n0,1,2\n0.5,2,1\n").unwrap();
    let out = primseg(&["check-format", p(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL"));

    let good = ws.path("seg.csv");
    fs::write(&good, "start_s,end_s,label\n0,1,2\n1.1,2,1\n").unwrap();
    ok(&["check-format", "--kind", "segments", p(&good)]);
    fails(&["check-format", "--kind", "loglik", p(&good)]);
    fails(&["check-format", "--kind", "bogus", p(&good)]);
}

#[test]
fn drop_inactive_shrinks_dimension() {
    let ws = Workspace::new();
    let sim = ws.path("bin");
    ok(&[
        "simulate",
        "--fixture",
        "binary",
        "--seed",
        "2",
        "--out",
        p(&sim),
    ]);
    let data = sim.join("data.csv");
    let run = ws.train(&data, "run", &[&SHORT[..], &["--drop-inactive"]].concat());
    // Channels 4 and 5 never carry a car in the binary fixture.
    assert_eq!(json(&run.join("checkpoint.json"))["dim"], 11);
    let seg = ws.path("seg");
    ok(&[
        "segment",
        p(&data),
        "--drop-inactive",
        "--checkpoint",
        p(&run.join("checkpoint.json")),
        "--out",
        p(&seg),
    ]);
    assert_eq!(json(&seg.join("report.json"))["d"], 11);
}
