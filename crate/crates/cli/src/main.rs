//! Batch CLI for the expanding-map perturbation pipeline.
//!
//! Subcommands mirror the stages: `orbits`, `alpha`, `subaction`, `plan`,
//! `perturb`, `verify`, and `run` (the whole pipeline). Inputs come from a
//! JSON config; outputs are CSV/JSON reports, deterministic for a fixed
//! config and seed. Errors are emitted as machine-readable JSON on stderr
//! with a nonzero exit status.

mod config;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};

use config::ExperimentConfig;
use lyapmin::circle_map::MapError;
use lyapmin::conjugacy::ConjugacyError;
use lyapmin::orbits::{enumerate_periodic_orbits, OrbitError};
use lyapmin::perturbation::{assemble_plan, PerturbError, PerturbationPlan, Regime};
use lyapmin::subaction::{
    solve_subaction, subaction_csv, SolveParams, SubactionError,
};
use lyapmin::tol::Tolerances;
use lyapmin::verifier::{verify_neighborhood, NeighborhoodReport};

#[derive(Parser)]
#[command(name = "lyapmin", version, about = "Lyapunov-minimizing periodic measures for expanding circle maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Constant regime, `paper` or `practical` (overrides the config).
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Orbit period budget (overrides the config).
    #[arg(long)]
    max_period: Option<usize>,
    /// Sub-action grid size (overrides the config).
    #[arg(long)]
    grid_n: Option<usize>,
    /// Number of sampled maps in the verification ball (overrides the config).
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate periodic orbits and export the catalog.
    Orbits(CommonArgs),
    /// Estimate the minimal Lyapunov exponent.
    Alpha(CommonArgs),
    /// Solve the sub-action and export it.
    Subaction(CommonArgs),
    /// Assemble the perturbation plan.
    Plan(CommonArgs),
    /// Assemble the plan and export the perturbed map(s).
    Perturb(CommonArgs),
    /// Assemble the plan and certify the sampled neighborhood.
    Verify(CommonArgs),
    /// Full pipeline: orbits, subaction, plan, verification, summary.
    Run(CommonArgs),
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse()
}

fn main() {
    std::process::exit(match dispatch() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            1
        }
    });
}

fn dispatch() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Orbits(a) => cmd_orbits(&load(&a)?),
        Command::Alpha(a) => cmd_alpha(&load(&a)?),
        Command::Subaction(a) => cmd_subaction(&load(&a)?),
        Command::Plan(a) => cmd_plan(&load(&a)?).map(|_| 0),
        Command::Perturb(a) => cmd_perturb(&load(&a)?),
        Command::Verify(a) => cmd_verify(&load(&a)?),
        Command::Run(a) => cmd_run(&load(&a)?),
    }
}

/// Load the config and fold the CLI overrides in.
fn load(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(regime) = args.regime {
        cfg.regime = regime;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = args.max_period {
        cfg.max_period = p;
    }
    if let Some(n) = args.grid_n {
        cfg.grid_n = n;
    }
    if let Some(s) = args.samples {
        cfg.sample_count = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_text(path, &body)
}

fn cmd_orbits(cfg: &ExperimentConfig) -> Result<i32> {
    let dir = out_dir(cfg)?;
    let tols = Tolerances::default();
    cfg.map.expansion_profile(4096)?;
    let catalog = enumerate_periodic_orbits(&cfg.map, cfg.max_period, &tols)?;
    write_text(&dir.join("orbits.csv"), &catalog.to_csv())?;
    write_json(&dir.join("orbits.json"), &catalog)?;
    println!(
        "{} orbits up to period {}; min Lyapunov average {}",
        catalog.orbits.len(),
        cfg.max_period,
        catalog.min_lyapunov()
    );
    Ok(0)
}

fn solve(cfg: &ExperimentConfig) -> Result<lyapmin::SubAction> {
    let params = SolveParams {
        grid_n: cfg.grid_n,
        anchor_max_period: cfg.anchor_period,
        ..SolveParams::default()
    };
    Ok(solve_subaction(&cfg.map, &params, &Tolerances::default())?)
}

fn cmd_alpha(cfg: &ExperimentConfig) -> Result<i32> {
    let dir = out_dir(cfg)?;
    let sub = solve(cfg)?;
    #[derive(Serialize)]
    struct AlphaReport {
        alpha: f64,
        alpha_orbit: f64,
        alpha_iterative: f64,
        defect: f64,
        anchor_period: usize,
    }
    let report = AlphaReport {
        alpha: sub.alpha,
        alpha_orbit: sub.alpha_orbit,
        alpha_iterative: sub.alpha_iterative,
        defect: sub.defect,
        anchor_period: cfg.anchor_period,
    };
    write_json(&dir.join("alpha.json"), &report)?;
    println!("alpha = {} (orbit anchor, defect {})", sub.alpha, sub.defect);
    Ok(0)
}

fn subaction_header(sub: &lyapmin::SubAction) -> serde_json::Value {
    serde_json::json!({
        "alpha": sub.alpha,
        "defect": sub.defect,
        "lip_f": sub.lip_f,
        "n": sub.f.n,
    })
}

fn cmd_subaction(cfg: &ExperimentConfig) -> Result<i32> {
    let dir = out_dir(cfg)?;
    let sub = solve(cfg)?;
    write_text(&dir.join("subaction.csv"), &subaction_csv(&cfg.map, &sub))?;
    write_json(&dir.join("subaction.json"), &subaction_header(&sub))?;
    println!(
        "alpha = {}, defect = {}, Lip(f) = {}",
        sub.alpha, sub.defect, sub.lip_f
    );
    Ok(0)
}

fn cmd_plan(cfg: &ExperimentConfig) -> Result<PerturbationPlan> {
    let dir = out_dir(cfg)?;
    let plan = assemble_plan(
        &cfg.map,
        cfg.epsilon,
        &cfg.plan_options(),
        &Tolerances::default(),
    )?;
    write_json(&dir.join("plan.json"), &plan.record())?;
    println!(
        "plan: orbit period {}, G* = {}, regime {}",
        plan.orbit.period, plan.ledger.g_star, plan.ledger.regime
    );
    Ok(plan)
}

fn cmd_perturb(cfg: &ExperimentConfig) -> Result<i32> {
    let dir = out_dir(cfg)?;
    let plan = cmd_plan(cfg)?;
    write_json(&dir.join("map_s0.json"), &plan.perturbed_map)?;
    if let Some(smooth) = plan.mollified_map() {
        write_json(&dir.join("map_s_delta.json"), &smooth)?;
    }
    Ok(0)
}

fn cmd_verify_inner(cfg: &ExperimentConfig) -> Result<(PerturbationPlan, NeighborhoodReport)> {
    let dir = out_dir(cfg)?;
    let plan = cmd_plan(cfg)?;
    let report = verify_neighborhood(
        &plan,
        cfg.sample_count,
        &cfg.verify_config(),
        &Tolerances::default(),
    )?;
    write_json(&dir.join("verification.json"), &report)?;
    println!(
        "verification: {} maps, all_pass = {}",
        report.reports.len(),
        report.all_pass
    );
    Ok((plan, report))
}

fn cmd_verify(cfg: &ExperimentConfig) -> Result<i32> {
    let (_, report) = cmd_verify_inner(cfg)?;
    Ok(if report.all_pass { 0 } else { 1 })
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<i32> {
    let dir = out_dir(cfg)?;
    let tols = Tolerances::default();
    cfg.map.expansion_profile(4096)?;

    let catalog = enumerate_periodic_orbits(&cfg.map, cfg.max_period, &tols)?;
    write_text(&dir.join("orbits.csv"), &catalog.to_csv())?;

    let plan = assemble_plan(&cfg.map, cfg.epsilon, &cfg.plan_options(), &tols)?;
    write_json(&dir.join("plan.json"), &plan.record())?;

    let sub = &plan.subaction;
    write_text(&dir.join("subaction.csv"), &subaction_csv(&cfg.map, sub))?;
    write_json(&dir.join("subaction.json"), &subaction_header(sub))?;

    let report = verify_neighborhood(&plan, cfg.sample_count, &cfg.verify_config(), &tols)?;
    write_json(&dir.join("verification.json"), &report)?;

    let mut summary = String::new();
    summary.push_str(&format!("map_id = {}\n", cfg.map.map_id()));
    summary.push_str(&format!("regime = {}\n", cfg.regime));
    summary.push_str(&format!("seed = {}\n", cfg.seed));
    summary.push_str(&format!(
        "orbits = {} (max period {})\n",
        catalog.orbits.len(),
        cfg.max_period
    ));
    summary.push_str(&format!("alpha = {}\n", sub.alpha));
    summary.push_str(&format!("subaction defect = {}\n", sub.defect));
    summary.push_str(&format!(
        "selected orbit: period {}, code {}, G* = {}, d* = {}\n",
        plan.orbit.period,
        plan.orbit.code_string(),
        plan.ledger.g_star,
        plan.ledger.d_star
    ));
    summary.push_str(&format!(
        "eps = {}, K = {}, L = {}, rho = {}, eps0 = {}, eps_tilde = {}\n",
        plan.ledger.epsilon,
        plan.ledger.k,
        plan.ledger.l,
        plan.ledger.rho,
        plan.ledger.eps0_tilde,
        plan.ledger.eps_tilde
    ));
    let relaxed = plan.ledger.relaxed();
    summary.push_str(&format!(
        "relaxed inequalities = {}\n",
        if relaxed.is_empty() {
            "none".to_string()
        } else {
            relaxed.join("; ")
        }
    ));
    summary.push_str(&format!(
        "verified maps = {}, all_pass = {}\n",
        report.reports.len(),
        report.all_pass
    ));
    if let Some(worst) = report
        .reports
        .iter()
        .min_by(|a, b| a.minimality_margin.total_cmp(&b.minimality_margin))
    {
        summary.push_str(&format!(
            "worst minimality margin = {}\n",
            worst.minimality_margin
        ));
    }
    write_text(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(if report.all_pass { 0 } else { 1 })
}

/// Map an error chain onto a stable machine-readable kind.
fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<MapError>() {
            return match e {
                MapError::NotExpanding { .. } => "NotExpanding",
                MapError::ConvergenceFailure(_) => "ConvergenceFailure",
                MapError::InvalidMap(_) => "InvalidMap",
            };
        }
        if let Some(e) = cause.downcast_ref::<OrbitError>() {
            return match e {
                OrbitError::BudgetExceeded { .. } => "BudgetExceeded",
                OrbitError::ConvergenceFailure { .. } => "ConvergenceFailure",
                OrbitError::NotFoundWithinBudget { .. } => "NotFoundWithinBudget",
                OrbitError::EmptyTargetSet => "EmptyTargetSet",
                OrbitError::Map(MapError::NotExpanding { .. }) => "NotExpanding",
                OrbitError::Map(_) => "MapError",
            };
        }
        if let Some(e) = cause.downcast_ref::<SubactionError>() {
            return match e {
                SubactionError::NonConvergence { .. } => "NonConvergence",
                SubactionError::EmptySet { .. } => "EmptySet",
                SubactionError::BadParams(_) => "BadParams",
                SubactionError::Map(MapError::NotExpanding { .. }) => "NotExpanding",
                _ => "SubactionError",
            };
        }
        if let Some(e) = cause.downcast_ref::<PerturbError>() {
            return match e {
                PerturbError::Overflow(_) => "Overflow",
                PerturbError::Infeasible(_) => "Infeasible",
                PerturbError::GammaOutOfRange { .. } => "GammaOutOfRange",
                PerturbError::SupportOverlap => "SupportOverlap",
                PerturbError::PlanInvalid { .. } => "PlanInvalid",
                PerturbError::InvalidMollifyDelta { .. } => "InvalidMollifyDelta",
                PerturbError::BadOptions(_) => "BadOptions",
                PerturbError::Map(MapError::NotExpanding { .. }) => "NotExpanding",
                _ => "PerturbError",
            };
        }
        if cause.downcast_ref::<ConjugacyError>().is_some() {
            return "ConjugacyError";
        }
    }
    "Error"
}

fn error_json(err: &anyhow::Error) -> String {
    serde_json::json!({
        "error": {
            "kind": error_kind(err),
            "message": format!("{err:#}"),
        }
    })
    .to_string()
}
