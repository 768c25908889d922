use scenario_core::config::RunConfig;
use scenario_core::sim::{metrics_from_trace, parse_trace, run_episode, run_sweep, strip_timing, Environment, RunMetrics, SimError};

fn short_course(pedestrians: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.sim.pedestrians = pedestrians;
    cfg.sim.course_length = 6.0;
    cfg
}

fn without_timing(m: &RunMetrics) -> RunMetrics {
    RunMetrics {
        planning_time_mean: 0.0,
        planning_time_max: 0.0,
        scenario_time_mean: 0.0,
        scenario_time_max: 0.0,
        ..m.clone()
    }
}

#[test]
fn episodes_are_deterministic_and_replayable() {
    let cfg = short_course(2);
    let env = Environment::prepare(&cfg, 2).unwrap();
    let a = run_episode(&env, &cfg, 5).unwrap();
    let b = run_episode(&env, &cfg, 5).unwrap();
    assert_eq!(strip_timing(&a.trace), strip_timing(&b.trace));
    assert_eq!(a.polytopes, b.polytopes);
    assert!(a.metrics.completed);
    assert_eq!(a.metrics.collisions, 0);

    let c = run_episode(&env, &cfg, 6).unwrap();
    assert_ne!(strip_timing(&a.trace), strip_timing(&c.trace));

    assert_eq!(metrics_from_trace(&a.trace).unwrap(), a.metrics);
    let parsed = parse_trace(&a.trace).unwrap();
    assert_eq!(parsed.rows, a.rows);
    assert_eq!(parsed.seed, 5);
    assert_eq!(parsed.config_hash, cfg.hash());
}

#[test]
fn trace_errors_carry_line_numbers() {
    let cfg = short_course(0);
    let env = Environment::prepare(&cfg, 0).unwrap();
    let out = run_episode(&env, &cfg, 1).unwrap();
    let mut lines: Vec<String> = out.trace.lines().map(str::to_string).collect();
    lines[7] = lines[7].replacen(',', ",x", 2);
    match parse_trace(&lines.join("\n")) {
        Err(SimError::Trace { line, .. }) => assert_eq!(line, 8),
        other => panic!("expected a trace error, got {other:?}"),
    }
    let cut: String = out.trace.lines().take(10).map(|l| format!("{l}\n")).collect();
    assert!(matches!(parse_trace(&cut), Err(SimError::Trace { .. })));
}

#[test]
fn sweep_results_ignore_job_count() {
    let cfg = short_course(1);
    let env = Environment::prepare(&cfg, 1).unwrap();
    let seeds = [3, 4, 5];
    let one = run_sweep(&env, &cfg, &seeds, 1, |_, _| Ok(())).unwrap();
    let three = run_sweep(&env, &cfg, &seeds, 3, |_, _| Ok(())).unwrap();
    assert_eq!(one.iter().map(|r| r.0).collect::<Vec<_>>(), seeds);
    for ((s1, m1), (s3, m3)) in one.iter().zip(&three) {
        assert_eq!(s1, s3);
        assert_eq!(without_timing(m1), without_timing(m3));
    }
}

#[test]
fn too_few_batches_is_a_config_error() {
    let cfg = short_course(3);
    let env = Environment::prepare(&cfg, 1).unwrap();
    assert!(matches!(run_episode(&env, &cfg, 0), Err(SimError::Config(_))));
}
