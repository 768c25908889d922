use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use thiserror::Error;

use scenario_core::config::{ConfigError, RunConfig};
use scenario_core::risk::{eps_allocation, eps_table, solve_sample_size, RiskError, DEFAULT_SAMPLE_CEILING};
use scenario_core::sim::{
    aggregate_sweep, metrics_from_trace, parse_trace, run_episode, run_sweep, Environment, SimError, SweepSummary,
};
use scenario_core::uncertainty::{read_batch_file, write_batch_file, ArchiveError};

mod svg;

#[derive(Parser)]
#[command(name = "smpcc", version, about = "Scenario-based MPCC: risk bounds, scenario batches, crossing simulations")]
struct Cli {
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Episode seed (simulate, replay) or first seed of a sweep.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample size and eps(s) table for the configured risk profile.
    Bounds {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        s_bar: Option<usize>,
        #[arg(long)]
        discard: Option<usize>,
    },
    /// Sample, prune and archive one batch per pedestrian slot.
    Presample {
        #[arg(long)]
        pedestrians: Option<usize>,
    },
    /// One closed-loop episode; writes its trace and polygon dump.
    Simulate {
        #[arg(long)]
        pedestrians: Option<usize>,
        /// Directory of archived batches from `presample`.
        #[arg(long)]
        batches: Option<PathBuf>,
    },
    /// Seeded episodes per pedestrian count, summarized into one table.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        pedestrians: Vec<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        /// Exit 3 unless every run is collision-, risk- and support-clean.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        batches: Option<PathBuf>,
        /// Also write per-episode traces.
        #[arg(long)]
        traces: bool,
    },
    /// Recomputes metrics from a trace and renders one frame as SVG.
    Replay {
        trace: PathBuf,
        /// Polygon dump; defaults to the trace's sibling `*_polytopes.csv`.
        #[arg(long)]
        polytopes: Option<PathBuf>,
        /// Cycle drawn with its polygons; defaults to the riskiest cycle.
        #[arg(long)]
        cycle: Option<usize>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("acceptance check failed: {0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Check(_) => 3,
            _ => 2,
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn batch_path(dir: &Path, slot: usize) -> PathBuf {
    dir.join(format!("batch_{slot}.smpb"))
}

fn environment(cfg: &RunConfig, slots: usize, archive: Option<&Path>) -> Result<Environment, CliError> {
    match archive {
        None => Ok(Environment::prepare(cfg, slots)?),
        Some(dir) => {
            let profile = cfg.risk.profile()?;
            let mut batches = Vec::with_capacity(slots);
            for i in 0..slots {
                let b = read_batch_file(&batch_path(dir, i))?;
                if b.len() != profile.sample_size {
                    return Err(CliError::Usage(format!(
                        "{} holds {} samples but the risk profile needs {}",
                        batch_path(dir, i).display(),
                        b.len(),
                        profile.sample_size
                    )));
                }
                batches.push(b);
            }
            Ok(Environment::from_batches(profile, batches))
        }
    }
}

fn cmd_bounds(cfg: &RunConfig, eps: Option<f64>, beta: Option<f64>, s_bar: Option<usize>, discard: Option<usize>) -> Result<(), CliError> {
    let eps = eps.unwrap_or(cfg.risk.eps);
    let beta = beta.unwrap_or(cfg.risk.beta);
    let s_bar = s_bar.unwrap_or(cfg.risk.s_bar) as u64;
    let discard = discard.unwrap_or(cfg.risk.discard) as u64;
    let s = solve_sample_size(eps, beta, s_bar, discard, DEFAULT_SAMPLE_CEILING)?;
    let kept = s - discard;
    println!("# config_hash={}", cfg.hash());
    println!("# eps={eps} beta={beta} s_bar={s_bar} discard={discard}");
    println!("sample_size={s}");
    println!("s,eps");
    for (i, e) in eps_table(s, kept, s_bar, beta)?.iter().enumerate() {
        println!("{i},{e}");
    }
    println!("{kept},{}", eps_allocation(s, kept, kept, beta)?);
    let below = eps_allocation(s - 1, s - 1 - discard, s_bar, beta)?;
    println!("# check eps({s_bar}) at S={s}: {} <= {eps}; at S-1: {below} > {eps}", eps_allocation(s, kept, s_bar, beta)?);
    Ok(())
}

fn cmd_presample(cli: &Cli, cfg: &RunConfig, pedestrians: Option<usize>) -> Result<(), CliError> {
    let slots = pedestrians.unwrap_or(cfg.sim.pedestrians).max(1);
    let dir = out_dir(cli, cfg)?;
    let env = Environment::prepare(cfg, slots)?;
    println!("# config_hash={}", cfg.hash());
    println!("slot,seed,samples,relevant,pruned_fraction,file");
    for (i, (b, r)) in env.batches.iter().zip(&env.reports).enumerate() {
        let path = batch_path(&dir, i);
        write_batch_file(b, &path)?;
        println!("{i},{},{},{},{:.4},{}", b.seed, r.total, r.relevant, r.pruned_fraction, path.display());
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, cfg: &mut RunConfig, pedestrians: Option<usize>, batches: Option<&Path>) -> Result<(), CliError> {
    if let Some(n) = pedestrians {
        cfg.sim.pedestrians = n;
    }
    let seed = cli.seed.unwrap_or(cfg.sim.seed);
    let dir = out_dir(cli, cfg)?;
    let env = environment(cfg, cfg.sim.pedestrians, batches)?;
    let out = run_episode(&env, cfg, seed)?;
    let stem = format!("episode_p{}_s{seed}", cfg.sim.pedestrians);
    write_file(&dir.join(format!("{stem}.csv")), &out.trace)?;
    if cfg.sim.dump_polytopes {
        write_file(&dir.join(format!("{stem}_polytopes.csv")), &out.polytopes)?;
    }
    println!("# config_hash={}", cfg.hash());
    print!("{}", toml::to_string(&out.metrics).expect("metrics serialize"));
    Ok(())
}

fn cmd_sweep(
    cli: &Cli,
    cfg: &mut RunConfig,
    pedestrians: &[usize],
    seeds: Option<usize>,
    check: bool,
    batches: Option<&Path>,
    traces: bool,
) -> Result<(), CliError> {
    let counts = if pedestrians.is_empty() { vec![cfg.sim.pedestrians] } else { pedestrians.to_vec() };
    let first = cli.seed.unwrap_or(cfg.sim.seed);
    let n = seeds.unwrap_or(cfg.sim.seeds);
    let seed_list: Vec<u64> = (0..n as u64).map(|i| first + i).collect();
    let dir = out_dir(cli, cfg)?;
    cfg.sim.dump_polytopes &= traces;
    let env = environment(cfg, counts.iter().copied().max().unwrap_or(0), batches)?;
    let mut summary = SweepSummary { config_hash: cfg.hash(), rows: Vec::new() };
    let mut per_episode = String::from("pedestrians,seed,completed,time_to_completion,max_risk,risk_violations,collisions,support_violations,feasibility_incidents\n");
    for &p in &counts {
        let mut c = cfg.clone();
        c.sim.pedestrians = p;
        info!("sweep: {p} pedestrians, {n} seeds, {} jobs", cli.jobs);
        let results = run_sweep(&env, &c, &seed_list, cli.jobs, |seed, out| {
            if traces {
                let stem = dir.join(format!("episode_p{p}_s{seed}"));
                std::fs::write(stem.with_extension("csv"), &out.trace)
                    .and_then(|_| if c.sim.dump_polytopes { std::fs::write(format!("{}_polytopes.csv", stem.display()), &out.polytopes) } else { Ok(()) })
                    .map_err(|source| SimError::Io { path: stem.clone(), source })?;
            }
            Ok(())
        })?;
        for (seed, m) in &results {
            per_episode.push_str(&format!(
                "{p},{seed},{},{},{},{},{},{},{}\n",
                m.completed as u8,
                m.time_to_completion,
                m.max_first_stage_collision_prob,
                m.risk_violations,
                m.collisions,
                m.support_violations,
                m.feasibility_incidents
            ));
        }
        let metrics: Vec<_> = results.into_iter().map(|(_, m)| m).collect();
        summary.rows.push(aggregate_sweep(p, &metrics));
    }
    let csv = summary.to_csv();
    write_file(&dir.join("summary.csv"), &csv)?;
    write_file(&dir.join("episodes.csv"), &per_episode)?;
    print!("{csv}");
    if check && !summary.is_clean() {
        return Err(CliError::Check("collisions, risk violations or support violations recorded".into()));
    }
    Ok(())
}

fn cmd_replay(cli: &Cli, cfg: &RunConfig, trace_path: &Path, polytopes: Option<&Path>, cycle: Option<usize>) -> Result<(), CliError> {
    let text = read_file(trace_path)?;
    let trace = parse_trace(&text)?;
    let metrics = metrics_from_trace(&text)?;
    let poly_path = polytopes.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = trace_path.file_stem().unwrap_or_default().to_string_lossy();
        trace_path.with_file_name(format!("{stem}_polytopes.csv"))
    });
    let frames = if poly_path.exists() {
        let body = read_file(&poly_path)?;
        svg::parse_polytopes(&body).map_err(|(line, m)| SimError::Trace { line, message: format!("{}: {m}", poly_path.display()) })?
    } else {
        Vec::new()
    };
    let frame = cycle.unwrap_or_else(|| {
        trace
            .rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.stage1_risk.total_cmp(&b.1.stage1_risk).then(b.0.cmp(&a.0)))
            .map_or(0, |(_, r)| r.cycle)
    });
    if !trace.rows.iter().any(|r| r.cycle == frame) {
        return Err(CliError::Usage(format!("trace has no cycle {frame}")));
    }
    let image = svg::render(&trace, &frames, frame, cfg.planner.mpcc.geometry.disc_radius, cfg.sim.course_length);
    let dir = out_dir(cli, cfg)?;
    let stem = trace_path.file_stem().unwrap_or_default().to_string_lossy();
    let svg_path = dir.join(format!("{stem}_cycle{frame}.svg"));
    write_file(&svg_path, &image)?;
    println!("# config_hash={}", trace.config_hash);
    print!("{}", toml::to_string(&metrics).expect("metrics serialize"));
    println!("svg = {:?}", svg_path.display().to_string());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    match &cli.command {
        Command::Bounds { eps, beta, s_bar, discard } => cmd_bounds(&cfg, *eps, *beta, *s_bar, *discard),
        Command::Presample { pedestrians } => cmd_presample(cli, &cfg, *pedestrians),
        Command::Simulate { pedestrians, batches } => cmd_simulate(cli, &mut cfg, *pedestrians, batches.as_deref()),
        Command::Sweep { pedestrians, seeds, check, batches, traces } => {
            cmd_sweep(cli, &mut cfg, pedestrians, *seeds, *check, batches.as_deref(), *traces)
        }
        Command::Replay { trace, polytopes, cycle } => cmd_replay(cli, &cfg, trace, polytopes.as_deref(), *cycle),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("smpcc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
