//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use brwre::env::{environment_json, load_environment, sample_environment, zeta_of, Environment, Window};
use brwre::fkpp::{duality_check, run_fkpp, KppInitial};
use brwre::hitmgf::{TruncationConfig, DEFAULT_BURN};
use brwre::lattice::IntegratorConfig;
use brwre::pam::{FrontTrace, InitialCondition, PamConfig, PamState};
use brwre::sim::{medians_from, simulate, SimConfig, SimInitial};
use brwre::stats;
use brwre::tilt::{sigma_constants, Population, TiltConfig, DEFAULT_LAG_CUTOFF, V_MAX};
use brwre::verify::{Outcome, Runner};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{num, Output};
use crate::{Cli, CliError, Command};

pub const DEGENERATE_VERDICT: &str = "degenerate variance, CLT experiments disabled";

/// Steps between wall-clock checks of a PAM run.
const CHECK_EVERY: usize = 256;

const CHECKPOINT: &str = "pam.checkpoint.json";

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let need = |name: &str| {
        config.as_ref().ok_or_else(|| CliError::Usage(format!("`{name}` needs --config")))
    };
    match &cli.command {
        Command::Env => cmd_env(cli, need("env")?),
        Command::Lyapunov => cmd_lyapunov(cli, need("lyapunov")?),
        Command::Pam { env, resume, max_steps } => cmd_pam(cli, need("pam")?, env.as_deref(), *resume, *max_steps),
        Command::Fkpp { env, no_duality } => cmd_fkpp(cli, need("fkpp")?, env.as_deref(), *no_duality),
        Command::Sim { env } => cmd_sim(cli, need("sim")?, env.as_deref()),
        Command::Verify { suite } => cmd_verify(cli, config.as_ref(), suite),
    }
}

fn seed_of(cli: &Cli, cfg: &ExperimentConfig) -> u64 {
    cli.seed.unwrap_or(cfg.seed)
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn environment(cfg: &ExperimentConfig, seed: u64, file: Option<&Path>) -> Result<Environment, CliError> {
    match file {
        Some(p) => Ok(load_environment(p)?),
        None => Ok(sample_environment(&cfg.law, cfg.window(), seed)?),
    }
}

fn integrator(cfg: &ExperimentConfig, env: &Environment) -> IntegratorConfig {
    match cfg.tolerances.dt {
        Some(dt) => IntegratorConfig::with_dt(dt),
        None => IntegratorConfig::for_env(env),
    }
}

fn population(cfg: &ExperimentConfig, seed: u64) -> Result<Population, CliError> {
    let tilt = TiltConfig { trunc: TruncationConfig { tol: cfg.tolerances.mgf_tol, ..TruncationConfig::default() }, ..TiltConfig::default() };
    Ok(Population::with_config(&cfg.law, cfg.lyapunov.population_sites, seed, tilt)?)
}

fn cmd_env(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let seed = seed_of(cli, cfg);
    let env = environment(cfg, seed, None)?;
    let out = Output::new(&cli.out, Some(cfg), seed)?;
    let path = out.json("env.json", environment_json(&env))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_lyapunov(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let seed = seed_of(cli, cfg);
    let out = Output::new(&cli.out, Some(cfg), seed)?;
    let pop = population(cfg, seed)?;
    let curve = pop.curve(&cfg.lyapunov.velocities, V_MAX)?;
    let degenerate = cfg.law.is_degenerate();

    let n = cfg.lyapunov.population_sites;
    let long = if degenerate {
        None
    } else {
        Some(sample_environment(&cfg.law, Window::new(-DEFAULT_BURN, n as i64), seed ^ 0x5157)?)
    };
    let mut rows = Vec::with_capacity(curve.points.len());
    for p in &curve.points {
        let sigma = match (&long, p.eta_bar) {
            (Some(env), Some(_)) => Some(sigma_constants(&zeta_of(env), n, p.v, DEFAULT_LAG_CUTOFF, &pop.cfg)?),
            _ => None,
        };
        rows.push(vec![
            num(p.v),
            num(p.lambda),
            opt(p.eta_bar),
            opt(p.legendre),
            opt(sigma.as_ref().map(|s| s.sigma_v2)),
            opt(sigma.as_ref().map(|s| s.sigma_bar_v)),
        ]);
    }
    out.csv("lyapunov.csv", &["v", "lambda", "eta_bar", "legendre", "sigma_v2", "sigma_bar"], rows)?;

    let verdict = if degenerate {
        DEGENERATE_VERDICT.to_string()
    } else if curve.vel_holds {
        "VEL holds: v_0 exceeds v_c".to_string()
    } else {
        "VEL fails: v_0 is not separated from v_c".to_string()
    };
    out.json(
        "lyapunov.json",
        json!({ "es": pop.es(), "v_c": curve.v_c, "v_0": curve.v_0, "vel_holds": curve.vel_holds, "verdict": verdict }),
    )?;
    println!("v_c = {}\nv_0 = {}\n{verdict}", curve.v_c, curve.v_0);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    seed: u64,
    env_seed: u64,
    state: PamState,
}

fn cmd_pam(
    cli: &Cli,
    cfg: &ExperimentConfig,
    env_file: Option<&Path>,
    resume: bool,
    max_steps: Option<usize>,
) -> Result<(), CliError> {
    let seed = seed_of(cli, cfg);
    let env = environment(cfg, seed, env_file)?;
    let out = Output::new(&cli.out, Some(cfg), seed)?;
    let ckpt_path = out.path(CHECKPOINT);

    let mut state = if resume {
        let text = fs::read_to_string(&ckpt_path)
            .map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", ckpt_path.display())))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("corrupt checkpoint: {e}")))?;
        if ck.config_hash != cfg.hash() || ck.seed != seed || ck.env_seed != env.seed {
            return Err(CliError::Usage("checkpoint was written by a different configuration".into()));
        }
        ck.state
    } else {
        let mut pc = PamConfig::new(&env);
        pc.integrator = integrator(cfg, &env);
        pc.tilt = cfg.pam.tilt;
        pc.tn_max = cfg.pam.tn_max;
        PamState::new(InitialCondition::Delta, cfg.pam.horizon, pc, &cfg.pam.times)?
    };

    let checkpoint = |state: &PamState| -> Result<(), CliError> {
        let ck = Checkpoint { config_hash: cfg.hash(), seed, env_seed: env.seed, state: state.clone() };
        write_atomic(&ckpt_path, &serde_json::to_string(&ck).expect("checkpoint serializes"))?;
        log::info!("checkpoint at t = {}", state.field.time);
        Ok(())
    };
    let mut budget = max_steps.unwrap_or(usize::MAX);
    let mut last = Instant::now();
    while !state.done() {
        if budget == 0 {
            checkpoint(&state)?;
            println!("stopped at t = {}; continue with --resume", state.field.time);
            return Ok(());
        }
        let steps = CHECK_EVERY.min(budget);
        state.advance_steps(&env, steps)?;
        budget -= steps;
        if let Some(every) = cfg.pam.checkpoint_seconds {
            if last.elapsed().as_secs_f64() >= every && !state.done() {
                checkpoint(&state)?;
                last = Instant::now();
            }
        }
    }
    let run = state.finish();

    let velocities = if cfg.pam.velocities.is_empty() {
        Vec::new()
    } else {
        let pop = population(cfg, seed)?;
        cfg.pam.velocities.iter().map(|&v| Ok((v, pop.lyapunov(v)?))).collect::<Result<Vec<_>, CliError>>()?
    };
    let trace = FrontTrace::from_run(&run, &velocities)?;

    let snapshot_rows = run.snapshots.iter().flat_map(|f| {
        (f.x_lo..=f.x_hi()).filter_map(move |x| {
            let l = f.ln_value(x);
            l.is_finite().then(|| vec![num(f.time), x.to_string(), num(l)])
        })
    });
    out.csv("pam_snapshots.csv", &["t", "x", "ln_u"], snapshot_rows)?;

    let mut columns: Vec<String> = ["t", "m_bar", "m_bar_interp"].map(String::from).to_vec();
    for (v, _) in &velocities {
        columns.push(format!("m_bar_v={v}"));
        columns.push(format!("u_v={v}"));
    }
    let front_rows = (0..trace.times.len()).map(|k| {
        let mut row = vec![num(trace.times[k]), trace.m_bar[k].to_string(), num(trace.m_bar_interp[k])];
        for j in 0..velocities.len() {
            row.push(trace.m_bar_v[j][k].to_string());
            row.push(num(trace.u_v[j][k]));
        }
        row
    });
    let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    out.csv("pam_fronts.csv", &column_refs, front_rows)?;
    out.csv("pam_tn.csv", &["n", "t_n"], trace.tn.iter().enumerate().map(|(n, t)| vec![n.to_string(), num(*t)]))?;
    out.json(
        "pam.json",
        json!({ "horizon": run.horizon, "env_seed": env.seed, "velocities": velocities, "tn_reached": trace.tn.len() }),
    )?;
    if ckpt_path.exists() {
        fs::remove_file(&ckpt_path)?;
    }
    println!("{} snapshots, T_n up to n = {}", trace.times.len(), trace.tn.len() as i64 - 1);
    Ok(())
}

fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_fkpp(cli: &Cli, cfg: &ExperimentConfig, env_file: Option<&Path>, no_duality: bool) -> Result<(), CliError> {
    let seed = seed_of(cli, cfg);
    let env = environment(cfg, seed, env_file)?;
    let out = Output::new(&cli.out, Some(cfg), seed)?;
    let ic = integrator(cfg, &env);
    let run = run_fkpp(&env, KppInitial::StepLeft, &cfg.fkpp.times, &ic)?;

    let snapshot_rows = run
        .snapshots
        .iter()
        .flat_map(|f| (f.x_lo..=f.x_hi()).map(move |x| vec![num(f.time), x.to_string(), num(f.value(x))]));
    out.csv("fkpp_snapshots.csv", &["t", "x", "w"], snapshot_rows)?;
    out.csv(
        "fkpp_fronts.csv",
        &["t", "m_hat", "m_hat_interp"],
        run.fronts.iter().map(|p| vec![num(p.t), p.m_hat.to_string(), num(p.m_hat_interp)]),
    )?;

    if !no_duality {
        let f = &cfg.fkpp;
        let rows = duality_check(&env, &f.duality_sites, f.duality_time, f.duality_replicas, seed, &ic)?;
        out.csv(
            "duality.csv",
            &["x", "w", "p_hat", "sigma", "ci_low", "ci_high", "within"],
            rows.iter().map(|r| {
                vec![r.x.to_string(), num(r.w), num(r.p_hat), num(r.sigma), num(r.ci_low), num(r.ci_high), r.within.to_string()]
            }),
        )?;
        let inside = rows.iter().filter(|r| r.within).count();
        println!("duality at t = {}: {inside}/{} sites within 3 sigma", f.duality_time, rows.len());
    }
    println!("{} fronts", run.fronts.len());
    Ok(())
}

fn cmd_sim(cli: &Cli, cfg: &ExperimentConfig, env_file: Option<&Path>) -> Result<(), CliError> {
    let seed = seed_of(cli, cfg);
    let env = environment(cfg, seed, env_file)?;
    let out = Output::new(&cli.out, Some(cfg), seed)?;
    let s = &cfg.sim;
    let mut sc = SimConfig::new(s.horizon).with_schedule(&s.times);
    sc.cap = s.cap;
    let reps = simulate(&env, &SimInitial::Single(0), &sc, seed, s.replicas)?;

    let replica_rows = reps.iter().enumerate().flat_map(|(k, r)| {
        sc.schedule.iter().enumerate().map(move |(j, t)| {
            vec![k.to_string(), num(*t), r.max[j].to_string(), r.pop[j].to_string(), r.truncated.to_string()]
        })
    });
    out.csv("sim_replicas.csv", &["replica", "t", "max", "pop", "truncated"], replica_rows)?;

    let mut mean_rows = Vec::new();
    for (j, t) in sc.schedule.iter().enumerate() {
        let lo = reps.iter().filter(|r| !r.snapshots[j].1.is_empty()).map(|r| r.snapshots[j].0).min();
        let hi = reps.iter().filter(|r| !r.snapshots[j].1.is_empty()).map(|r| r.snapshots[j].0 + r.snapshots[j].1.len() as i64 - 1).max();
        let (Some(lo), Some(hi)) = (lo, hi) else { continue };
        for x in lo..=hi {
            let total: u64 = reps
                .iter()
                .map(|r| {
                    let (a, c) = &r.snapshots[j];
                    usize::try_from(x - a).ok().and_then(|i| c.get(i)).copied().unwrap_or(0)
                })
                .sum();
            mean_rows.push(vec![num(*t), x.to_string(), num(total as f64 / reps.len() as f64)]);
        }
    }
    out.csv("sim_mean_occupation.csv", &["t", "x", "mean"], mean_rows)?;

    let medians = medians_from(&reps, &sc.schedule, &sc.schedule)?;
    out.csv(
        "sim_medians.csv",
        &["t", "median", "lower", "upper", "half_width", "truncated"],
        medians.iter().map(|m| {
            vec![num(m.t), m.median.to_string(), m.lower.to_string(), m.upper.to_string(), num(m.half_width), m.truncated.to_string()]
        }),
    )?;
    println!("{} replicas to t = {}", reps.len(), s.horizon);
    Ok(())
}

/// Criterion numbers of a suite name, or `None` for the calibration suite.
pub fn suite_criteria(suite: &str) -> Result<Option<Vec<u8>>, CliError> {
    match suite {
        "calibration" => Ok(None),
        "fast" => Ok(Some(vec![1, 2, 3, 4, 12])),
        "full" => Ok(Some((1..=12).collect())),
        list => list
            .split(',')
            .map(|s| match s.trim().parse::<u8>() {
                Ok(k) if (1..=12).contains(&k) => Ok(k),
                _ => Err(CliError::Usage(format!("unknown suite `{suite}`: use calibration, fast, full or criterion numbers 1-12"))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
    }
}

fn cmd_verify(cli: &Cli, cfg: Option<&ExperimentConfig>, suite: &str) -> Result<(), CliError> {
    let criteria = suite_criteria(suite)?;
    let seed = cli.seed.or(cfg.map(|c| c.seed)).unwrap_or(0);
    let out = Output::new(&cli.out, cfg, seed)?;
    let failed = match criteria {
        None => {
            let reports = stats::calibration_suite(seed)?;
            for r in &reports {
                println!("{} [{}] statistic {} p {}", r.test, if r.pass { "PASS" } else { "FAIL" }, r.statistic, opt(r.p_value));
            }
            let failed: Vec<String> = reports.iter().filter(|r| !r.pass).map(|r| r.test.clone()).collect();
            out.json("verify.json", json!({ "suite": suite, "reports": reports }))?;
            failed
        }
        Some(ids) => {
            let runner = Runner::new(seed);
            let outcomes: Vec<Outcome> = ids
                .iter()
                .map(|&id| {
                    let o = runner.run(id);
                    println!("{}", o.line());
                    o
                })
                .collect();
            out.json("verify.json", json!({ "suite": suite, "outcomes": outcomes }))?;
            outcomes.iter().filter(|o| !o.pass).map(|o| format!("criterion {}", o.id)).collect()
        }
    };
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(failed.join(", ")))
    }
}
