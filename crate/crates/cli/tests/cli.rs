use std::path::Path;
use std::process::{Command, Output};

use scenario_core::config::RunConfig;
use scenario_core::sim::Environment;
use scenario_core::uncertainty::read_batch_file;

fn smpcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smpcc")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn bounds_prints_table_and_check() {
    let out = smpcc(&["bounds"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("# config_hash="));
    assert!(text.contains("sample_size=53457"));
    let rows: Vec<&str> = text.lines().skip_while(|l| *l != "s,eps").skip(1).filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 22, "s = 0..=20 plus the s = P row");
    assert_eq!(rows.last().unwrap(), &"53407,1");
    assert!(text.contains("# check eps(20)"));
}

#[test]
fn bounds_accepts_overrides() {
    let out = smpcc(&["bounds", "--eps", "0.05", "--beta", "1e-3", "--s-bar", "5", "--discard", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s: u64 = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("sample_size="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(s > 5 && s < 10_000);
}

#[test]
fn argument_and_config_errors_exit_one() {
    assert_eq!(code(&smpcc(&["frobnicate"])), 1);
    assert_eq!(code(&smpcc(&["bounds", "--eps", "abc"])), 1);
    assert_eq!(code(&smpcc(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(dir.path(), "[risk]\nepsilon = 0.01\n");
    let out = smpcc(&["--config", &typo, "bounds"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("epsilon"), "{}", stderr(&out));

    let bad = write_config(dir.path(), "[risk]\neps = 1.5\n");
    assert_eq!(code(&smpcc(&["--config", &bad, "bounds"])), 1);
    assert_eq!(code(&smpcc(&["--config", "/nonexistent/run.toml", "bounds"])), 1);
    assert_eq!(code(&smpcc(&["--jobs", "0", "bounds"])), 1);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = smpcc(&["--out", dir.path().to_str().unwrap(), "replay", "/nonexistent/trace.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn malformed_trace_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "# config_hash=abc\n# seed=0\n# eps=0.0111\ncycle,time\n0,0,oops\n").unwrap();
    let out = smpcc(&["--out", dir.path().to_str().unwrap(), "replay", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 5"), "{}", stderr(&out));
}

#[test]
fn zero_pedestrian_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = smpcc(&["--out", dir.path().to_str().unwrap(), "--seed", "3", "simulate", "--pedestrians", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = stdout(&out);
    assert!(metrics.contains("completed = true"));
    assert!(metrics.contains("collisions = 0"));
    let trace = std::fs::read_to_string(dir.path().join("episode_p0_s3.csv")).unwrap();
    assert!(trace.starts_with("# config_hash="));
    assert!(trace.lines().last().unwrap().starts_with("# outcome=completed"));
}

#[test]
fn presample_is_byte_identical_and_round_trips() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = smpcc(&["--out", d.path().to_str().unwrap(), "presample", "--pedestrians", "2"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let text = stdout(&out);
        for line in text.lines().skip(2) {
            let fraction: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
            assert!(fraction >= 0.9, "{line}");
        }
    }
    let env = Environment::prepare(&RunConfig::default(), 2).unwrap();
    for i in 0..2 {
        let name = format!("batch_{i}.smpb");
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert_eq!(x, y);
        assert_eq!(read_batch_file(&a.path().join(&name)).unwrap(), env.batches[i]);
    }
}

fn strip_timing_columns(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != 8 && *i != 9)
                .map(|(_, v)| v)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn sweep_is_deterministic_across_jobs() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg = write_config(cfg_dir.path(), "[sim]\ncourse_length = 6.0\n");
    let mut summaries = Vec::new();
    let mut episodes = Vec::new();
    let batches = tempfile::tempdir().unwrap();
    let out = smpcc(&["--config", &cfg, "--out", batches.path().to_str().unwrap(), "presample", "--pedestrians", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for jobs in ["1", "2"] {
        let d = tempfile::tempdir().unwrap();
        let dir = d.path().to_str().unwrap();
        let out = smpcc(&[
            "--config",
            &cfg,
            "--out",
            dir,
            "--jobs",
            jobs,
            "--seed",
            "10",
            "sweep",
            "--pedestrians",
            "0,1",
            "--seeds",
            "3",
            "--batches",
            batches.path().to_str().unwrap(),
            "--check",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let summary = std::fs::read_to_string(d.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with("# config_hash="));
        assert_eq!(summary.lines().count(), 4);
        summaries.push(strip_timing_columns(&summary));
        episodes.push(std::fs::read_to_string(d.path().join("episodes.csv")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
    assert_eq!(episodes[0], episodes[1]);
    assert_eq!(episodes[0].lines().count(), 7);
}

#[test]
fn failed_check_exits_three() {
    // One supporting half-space per obstacle is far too tight a bound.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[risk]\ns_bar = 1\n[sim]\ncourse_length = 6.0\npedestrians = 2\ntimeout = 4.0\n",
    );
    let out = smpcc(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "sweep", "--seeds", "1", "--check"]);
    assert_eq!(code(&out), 3, "{}\n{}", stdout(&out), stderr(&out));
    assert!(stderr(&out).contains("acceptance check failed"));
}

#[test]
fn six_pedestrian_replay_renders_polygons() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = smpcc(&["--out", d, "--seed", "1", "simulate", "--pedestrians", "6"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let live = stdout(&out);

    let trace = dir.path().join("episode_p6_s1.csv");
    let out = smpcc(&["--out", d, "replay", trace.to_str().unwrap(), "--cycle", "20"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let replayed = stdout(&out);
    // Metrics recomputed from the trace equal the live ones.
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#') && !l.starts_with("svg")).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&live), body(&replayed));

    let svg = std::fs::read_to_string(dir.path().join("episode_p6_s1_cycle20.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polygon").count(), 15, "one polygon per stage");
    assert!(svg.contains("cycle 20"));
    assert!(svg.matches("<circle").count() > 6);

    let out = smpcc(&["--out", d, "replay", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("_cycle"));
}

#[test]
fn replay_rejects_unknown_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&smpcc(&["--out", d, "simulate", "--pedestrians", "0"])), 0);
    let trace = dir.path().join("episode_p0_s0.csv");
    let out = smpcc(&["--out", d, "replay", trace.to_str().unwrap(), "--cycle", "100000"]);
    assert_eq!(code(&out), 1);
}
