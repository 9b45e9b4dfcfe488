//! Process entry point: `nlflow <mode> --config <path> [--out <dir>] [--seed <u64>]`.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{parse_config_in, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::flow::{assumption_h_probe, refinement_compare, run_flow, FlowConfig};
use crate::grid::{build_slab_set, CellShift, HeightField, SlabSet, TorusGrid};
use crate::initial::{generate_initial, InitialSpec};
use crate::kernel::{check_kernel_bounds, KernelFamily};
use crate::perimeter::{
    check_halfspace_minimality, check_submodularity, check_translation_invariance, FunctionalKind, FunctionalSpec, PerimeterFunctional,
    SolverCapability,
};
use crate::step::{assemble_step_energy, solve_step_exhaustive, solve_step_lovasz, solve_step_mincut_with, LovaszOptions, MincutOptions};
use crate::weights::{cached_kernel_weights, WeightOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECKS: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_GRID: i32 = 4;
pub const EXIT_PERIMETER: i32 = 5;
pub const EXIT_SOLVER: i32 = 6;
pub const EXIT_MARGIN: i32 = 7;

const EXIT_HELP: &str = "\
Exit status:
  0  success, all checks passed
  1  a check failed (see the JSON report on stdout)
  2  usage, config, parse or parameter error
  3  I/O error
  4  invalid grid or height field
  5  perimeter or kernel error (non-integrable kernel, weight cache mismatch, ...)
  6  step solver error (uncertified minimizer, instance too large)
  7  slab margin exhausted during a flow

Environment:
  NLFLOW_THREADS  worker threads (0 or unset = all cores)";

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Flow,
    Ladder,
    Probe,
    Validate,
    Oracle,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Flow => Mode::Flow,
            ModeArg::Ladder => Mode::Ladder,
            ModeArg::Probe => Mode::Probe,
            ModeArg::Validate => Mode::Validate,
            ModeArg::Oracle => Mode::Oracle,
        }
    }
}

/// Minimizing-movements flows of periodic Lipschitz subgraphs under nonlocal perimeters.
#[derive(Debug, Parser)]
#[command(name = "nlflow", version, after_help = EXIT_HELP)]
struct Args {
    mode: ModeArg,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::InvalidParameter { .. } => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::InvalidGrid(_) | Error::InvalidHeightField(_) | Error::NoBoundary | Error::GridMismatch | Error::Translation(_) => EXIT_GRID,
        Error::NonIntegrable(_) | Error::NotPairwise(_) | Error::CacheMismatch(_) => EXIT_PERIMETER,
        Error::NotCertified { .. } | Error::InstanceTooLarge(_) => EXIT_SOLVER,
        Error::SlabMargin(_) => EXIT_MARGIN,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidGrid(_) => "invalid_grid",
        Error::InvalidHeightField(_) => "invalid_height_field",
        Error::NoBoundary => "no_boundary",
        Error::GridMismatch => "grid_mismatch",
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::Translation(_) => "translation",
        Error::NonIntegrable(_) => "non_integrable",
        Error::NotPairwise(_) => "not_pairwise",
        Error::InstanceTooLarge(_) => "instance_too_large",
        Error::SlabMargin(_) => "slab_margin",
        Error::NotCertified { .. } => "not_certified",
        Error::Parse(_) => "parse",
        Error::Config(_) => "config",
        Error::CacheMismatch(_) => "cache_mismatch",
        Error::Io(_) => "io",
    }
}

/// Named pass/fail outcome of one check.
struct Check {
    name: String,
    passed: bool,
    detail: Value,
}

fn check(name: impl Into<String>, passed: bool, detail: Value) -> Check {
    Check { name: name.into(), passed, detail }
}

struct Outcome {
    summary: Value,
    checks: Vec<Check>,
}

/// Parses `args` (including the program name), runs the mode and prints a JSON report.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let mode: Mode = args.mode.into();
    let (report, code) = match execute(&args, mode) {
        Ok(out) => {
            let failed: Vec<&str> = out.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            let code = if failed.is_empty() { EXIT_OK } else { EXIT_CHECKS };
            let checks: Vec<Value> = out.checks.iter().map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail})).collect();
            let report = json!({
                "mode": mode.name(),
                "status": if failed.is_empty() { "ok" } else { "failed" },
                "exit_code": code,
                "failed_checks": failed,
                "checks": checks,
                "summary": out.summary,
            });
            (report, code)
        }
        Err(e) => {
            let code = exit_code(&e);
            let problems = match &e {
                Error::Config(list) => list.clone(),
                other => vec![other.to_string()],
            };
            let report = json!({
                "mode": mode.name(),
                "status": "error",
                "exit_code": code,
                "error_kind": error_kind(&e),
                "message": e.to_string(),
                "problems": problems,
            });
            (report, code)
        }
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    code
}

fn configure_threads() {
    let n = std::env::var("NLFLOW_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
    // a second call in the same process keeps the existing pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn execute(args: &Args, mode: Mode) -> Result<Outcome> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = parse_config_in(&text, args.config.parent())?;
    match cfg.mode {
        Some(m) if m != mode => {
            return Err(Error::Config(vec![format!("mode: config declares `{}` but `{}` was requested", m.name(), mode.name())]));
        }
        Some(_) => {}
        // re-validate with the mode's own requirements
        None => cfg = parse_config_in(&format!("{text}\nmode = {}\n", mode.name()), args.config.parent())?,
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        if let InitialSpec::RandomLipschitz { seed: s, .. } = &mut cfg.initial {
            *s = seed;
        }
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    let grid = cfg.grid()?;
    let out = match mode {
        Mode::Validate => run_validate(&cfg, &grid)?,
        _ => {
            let p = build_functional(&cfg, &grid)?;
            match mode {
                Mode::Flow => run_flow_mode(&cfg, &grid, &p)?,
                Mode::Ladder => run_ladder(&cfg, &grid, &p)?,
                Mode::Probe => run_probe(&cfg, &grid, &p)?,
                Mode::Oracle => run_oracle(&cfg, &grid, &p)?,
                Mode::Validate => unreachable!(),
            }
        }
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        let checks: Vec<Value> = out.checks.iter().map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail})).collect();
        let body = json!({"mode": mode.name(), "checks": checks, "summary": out.summary});
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&body).expect("report serializes") + "\n")?;
    }
    Ok(out)
}

/// Builds the functional, going through the weight cache when one is configured.
pub fn build_functional(cfg: &RunConfig, grid: &TorusGrid<f64>) -> Result<PerimeterFunctional<f64>> {
    match (&cfg.functional, &cfg.weight_cache) {
        (FunctionalSpec::Kernel(k), Some(path)) => {
            let w = cached_kernel_weights(k, grid, WeightOptions::default(), path)?;
            PerimeterFunctional::from_kernel_weights(cfg.functional.clone(), grid, &w)
        }
        _ => PerimeterFunctional::new(cfg.functional.clone(), grid, WeightOptions::default()),
    }
}

fn initial_field(cfg: &RunConfig, grid: &TorusGrid<f64>) -> Result<HeightField<f64>> {
    generate_initial(&cfg.initial, grid, cfg.lipschitz)
}

fn mincut_options(cfg: &RunConfig) -> MincutOptions {
    MincutOptions { band: cfg.band, ..MincutOptions::default() }
}

fn run_flow_mode(cfg: &RunConfig, grid: &TorusGrid<f64>, p: &PerimeterFunctional<f64>) -> Result<Outcome> {
    let (h, t) = (cfg.h.expect("validated"), cfg.t_final.expect("validated"));
    let mut fc = FlowConfig::new(initial_field(cfg, grid)?, h, t, p);
    fc.record_every = cfg.record_every;
    fc.mincut = mincut_options(cfg);
    let tr = run_flow(&fc)?;
    if let Some(dir) = &cfg.out_dir {
        tr.write(dir)?;
    }
    let q = tr.quantum;
    let mut prev = tr.initial_perimeter_q;
    let mut increases = 0;
    for s in &tr.steps {
        if s.perimeter_q > prev {
            increases += 1;
        }
        prev = s.perimeter_q;
    }
    let total = tr.total_dissipation();
    let p0 = tr.initial_perimeter_q as f64 * q;
    let summary = json!({
        "steps": tr.steps.len(),
        "snapshots": tr.times.len(),
        "initial_perimeter": p0,
        "final_perimeter": tr.steps.last().map_or(p0, |s| s.perimeter_q as f64 * q),
        "total_dissipation": total,
    });
    let checks = vec![
        check("perimeter monotonicity", increases == 0, json!({"increasing_steps": increases})),
        check("dissipation bound", total <= p0 + 1e-9 * tr.scale, json!({"total_dissipation": total, "initial_perimeter": p0})),
    ];
    Ok(Outcome { summary, checks })
}

fn run_ladder(cfg: &RunConfig, grid: &TorusGrid<f64>, p: &PerimeterFunctional<f64>) -> Result<Outcome> {
    let t = cfg.t_final.expect("validated");
    let rep = refinement_compare(&initial_field(cfg, grid)?, &cfg.hs, t, p, mincut_options(cfg))?;
    if let Some(dir) = &cfg.out_dir {
        for (h, tr) in rep.hs.iter().zip(&rep.traces) {
            tr.write(&dir.join(format!("h_{h:e}")))?;
        }
    }
    let summary = json!({ "hs": rep.hs, "rungs": rep.rungs });
    let checks = vec![check(
        "ladder monotonicity",
        rep.monotone,
        json!({"deviations": rep.rungs.iter().map(|r| r.deviation).collect::<Vec<_>>()}),
    )];
    Ok(Outcome { summary, checks })
}

fn run_probe(cfg: &RunConfig, grid: &TorusGrid<f64>, p: &PerimeterFunctional<f64>) -> Result<Outcome> {
    let f = initial_field(cfg, grid)?;
    let rep = assumption_h_probe(p, &f, &cfg.eps, cfg.delta)?;
    let mut checks = Vec::new();
    match rep.analytic_derivative {
        Some(d) => {
            let smallest = rep.rows.iter().copied().fold((f64::INFINITY, 0.0), |a, r| if r.0 < a.0 { r } else { a });
            let rel = (smallest.1 - d).abs() / d.abs();
            checks.push(check("euclidean derivative", rel <= 0.05, json!({"eps": smallest.0, "ratio": smallest.1, "analytic": d, "relative_error": rel})));
        }
        None => checks.push(check("positive probe ratio", rep.c_estimate > 0.0, json!({"c_estimate": rep.c_estimate}))),
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("eps,ratio\n");
        for (e, r) in &rep.rows {
            csv.push_str(&format!("{e:.11e},{r:.11e}\n"));
        }
        std::fs::write(dir.join("probe.csv"), csv)?;
    }
    Ok(Outcome { summary: serde_json::to_value(&rep).expect("serializes"), checks })
}

fn run_validate(cfg: &RunConfig, grid: &TorusGrid<f64>) -> Result<Outcome> {
    let mut checks = Vec::new();
    // kernel symmetry comes first: an asymmetric table is reported, not built
    if let FunctionalSpec::Kernel(k) = &cfg.functional {
        if let KernelFamily::FractionalAniso(psi) = &k.family {
            let even = psi.evenness_defect();
            checks.push(check("kernel evenness", even <= 1e-12, json!({"defect": even})));
            let refl = psi.reflection_defect();
            checks.push(check("kernel reflection symmetry", refl <= 1e-12, json!({"defect": refl})));
        }
        let b = check_kernel_bounds(k, grid.dim(), 2000, cfg.seed);
        checks.push(check(
            "kernel bounds",
            b.tail_violations == 0 && b.core_violations == 0,
            serde_json::to_value(&b).expect("serializes"),
        ));
        if checks.iter().any(|c| !c.passed) {
            return Ok(Outcome { summary: json!({"functional": "kernel"}), checks });
        }
    }
    let p = build_functional(cfg, grid)?;
    let tol = match p.kind() {
        FunctionalKind::SharpFractional => 1e-4,
        _ => 1e-9,
    };
    let sub = check_submodularity(&p, cfg.n_pairs, cfg.seed)?;
    checks.push(check("submodularity", sub.max_violation_rel <= tol, serde_json::to_value(&sub).expect("serializes")));

    let f = initial_field(cfg, grid)?;
    let set = build_slab_set(&f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_616e);
    let n = grid.n_cols() as i64;
    let slack = (set.min_top() as i64 - 2).min(grid.n_levels() as i64 - set.max_top() as i64 - 2).max(0);
    let shifts: Vec<CellShift> = (0..16)
        .map(|_| {
            let mut hz = [rng.gen_range(0..n), 0];
            if grid.dim() == 3 {
                hz[1] = rng.gen_range(0..n);
            }
            CellShift::new(hz, rng.gen_range(-slack..=slack))
        })
        .collect();
    let tr = check_translation_invariance(&p, &set, &shifts)?;
    checks.push(check("translation invariance", tr.max_rel_deviation <= 1e-9, serde_json::to_value(&tr).expect("serializes")));

    let hs = check_halfspace_minimality(&p, cfg.competitors, cfg.seed)?;
    checks.push(check("halfspace minimality", hs.max_excess <= 1e-6 * p.scale(), serde_json::to_value(&hs).expect("serializes")));
    Ok(Outcome { summary: json!({"functional": p.kind().name(), "scale": p.scale()}), checks })
}

/// Random previous set with a boundary strictly inside the slab.
fn random_tops(grid: &TorusGrid<f64>, rng: &mut ChaCha8Rng) -> Result<SlabSet<f64>> {
    let n = grid.n_levels() as u32;
    let tops = (0..grid.column_count()).map(|_| rng.gen_range(1..n)).collect();
    SlabSet::from_tops(grid.clone(), tops)
}

fn run_oracle(cfg: &RunConfig, grid: &TorusGrid<f64>, p: &PerimeterFunctional<f64>) -> Result<Outcome> {
    let h = cfg.h.unwrap_or(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mismatches = Vec::new();
    for i in 0..cfg.oracle_instances {
        let prev = random_tops(grid, &mut rng)?;
        let prob = assemble_step_energy(&prev, h, p)?;
        let exact = solve_step_exhaustive(&prob)?;
        let got = match p.capability() {
            SolverCapability::Pairwise => solve_step_mincut_with(&prob, mincut_options(cfg))?,
            SolverCapability::GenericSubmodular => solve_step_lovasz(&prob, LovaszOptions::default())?,
        };
        let energy = got.energy_q == exact.energy_q;
        let minimal = got.minimal.tops() == exact.minimal.tops();
        let maximal = got.maximal.tops() == exact.maximal.tops();
        if !(energy && minimal && maximal) {
            mismatches.push(json!({
                "instance": i,
                "previous_tops": prev.tops(),
                "energy_q": [got.energy_q, exact.energy_q],
                "minimal_matches": minimal,
                "maximal_matches": maximal,
            }));
        }
    }
    let summary = json!({"instances": cfg.oracle_instances, "h": h, "functional": p.kind().name()});
    let checks = vec![check("solver matches enumeration", mismatches.is_empty(), json!({"mismatches": mismatches}))];
    Ok(Outcome { summary, checks })
}

/// Reads a config file, resolving relative paths against its directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config_in(&std::fs::read_to_string(path)?, path.parent())
}
