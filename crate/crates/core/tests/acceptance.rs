//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlflow::flow::{
    assumption_h_probe, flow_step, halfspace_convergence, holder_diagnostic, refinement_compare, run_flow, semigroup_check, FlowConfig,
    FlowTrace, HolderReport,
};
use nlflow::grid::{build_slab_set, lipschitz_constant, HeightField, SlabSet, TorusGrid};
use nlflow::initial::{generate_initial, InitialSpec};
use nlflow::kernel::KernelSpec;
use nlflow::perimeter::{
    check_halfspace_minimality, check_submodularity, eval_euclidean, eval_minkowski, eval_riesz, eval_sharp_fractional, FunctionalKind,
    FunctionalSpec, PerimeterFunctional, ZeroParts,
};
use nlflow::step::{assemble_step_energy, solve_step_exhaustive, solve_step_mincut_with, LovaszOptions, MincutOptions};
use nlflow::weights::WeightOptions;
use nlflow::Result;

type Outcome = Result<(bool, String)>;

fn grid(n_cols: usize, n_levels: usize, r: f64) -> TorusGrid<f64> {
    TorusGrid::new(2, n_cols, n_levels, r).unwrap()
}

fn functional(spec: FunctionalSpec, g: &TorusGrid<f64>) -> Result<PerimeterFunctional<f64>> {
    PerimeterFunctional::new(spec, g, WeightOptions::default())
}

fn kernel(s: f64) -> FunctionalSpec {
    FunctionalSpec::Kernel(KernelSpec::fractional(2, s))
}

fn all_six() -> Vec<FunctionalSpec> {
    vec![
        kernel(0.5),
        FunctionalSpec::SharpFractional { s: 0.5 },
        FunctionalSpec::Riesz { alpha: 0.5 },
        FunctionalSpec::ZeroFractional(ZeroParts::BOTH),
        FunctionalSpec::Minkowski { rho: 0.1 },
        FunctionalSpec::Euclidean,
    ]
}

fn sinusoid(g: &TorusGrid<f64>, amplitude: f64) -> Result<HeightField<f64>> {
    generate_initial(&InitialSpec::Sinusoid { amplitude, frequency: 1 }, g, None)
}

fn no_band() -> MincutOptions {
    MincutOptions { band: false, ..MincutOptions::default() }
}

fn oracle_equivalence() -> Outcome {
    let g = grid(4, 6, 0.75);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ps: Vec<_> = [0.3, 0.5, 0.7].iter().map(|&s| functional(kernel(s), &g)).collect::<Result<_>>()?;
    let start = Instant::now();
    let instances = 30;
    let mut bad = 0;
    for i in 0..instances {
        let p = &ps[i % ps.len()];
        let h = [0.01, 0.05, 0.2][rng.gen_range(0..3)];
        let tops = (0..4).map(|_| rng.gen_range(1..6)).collect();
        let prev = SlabSet::from_tops(g.clone(), tops)?;
        let prob = assemble_step_energy(&prev, h, p)?;
        let exact = solve_step_exhaustive(&prob)?;
        for opts in [MincutOptions::default(), no_band()] {
            let got = solve_step_mincut_with(&prob, opts)?;
            if got.energy_q != exact.energy_q || got.minimal.tops() != exact.minimal.tops() || got.maximal.tops() != exact.maximal.tops() {
                bad += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((bad == 0 && secs < 10.0, format!("{instances} instances, {bad} mismatches, {secs:.2} s")))
}

fn halfspace_minimality() -> Outcome {
    let g = grid(64, 128, 1.0);
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for spec in all_six() {
        let p = functional(spec, &g)?;
        let r = check_halfspace_minimality(&p, 100, 2)?;
        let pass = r.max_excess <= 1e-6 * p.scale();
        ok &= pass;
        parts.push(format!("{} excess {:.3e}", p.kind().name(), r.max_excess));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((ok && secs < 120.0, format!("{}; {secs:.1} s", parts.join(", "))))
}

fn halfspace_stationarity() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let cases = [
        (kernel(0.5), grid(32, 64, 1.0)),
        (FunctionalSpec::SharpFractional { s: 0.5 }, grid(32, 64, 1.0)),
        (FunctionalSpec::Riesz { alpha: 0.5 }, grid(8, 16, 1.0)),
        (FunctionalSpec::ZeroFractional(ZeroParts::BOTH), grid(8, 16, 1.0)),
        (FunctionalSpec::Euclidean, grid(32, 64, 1.0)),
    ];
    for (spec, g) in cases {
        let p = functional(spec, &g)?;
        let h0 = SlabSet::halfspace(g.clone(), (g.n_levels() / 2) as u32)?;
        for h in [0.1, 0.01] {
            let res = solve_step_mincut_with(&assemble_step_energy(&h0, h, &p)?, no_band())?;
            let pass = res.minimal.tops() == h0.tops() && res.maximal.tops() == h0.tops();
            ok &= pass;
            if !pass {
                parts.push(format!("{} h={h} moved", p.kind().name()));
            }
        }
    }
    Ok((ok, if parts.is_empty() { "5 pairwise functionals, h in {0.1, 0.01}, minimal and maximal fixed".into() } else { parts.join(", ") }))
}

fn exact_values() -> Outcome {
    let g = grid(64, 128, 1.0);
    let levels = [32u32, 64, 96];
    let mut riesz: f64 = 0.0;
    let mut sharp: f64 = 0.0;
    let mut mink: f64 = 0.0;
    for &l in &levels {
        let hl = SlabSet::halfspace(g.clone(), l)?;
        riesz = riesz.max(eval_riesz(&hl, 0.5)?.abs());
        sharp = sharp.max(eval_sharp_fractional(&hl, 0.5)?.abs());
        mink = mink.max((eval_minkowski(&hl, 0.1)? - 1.0).abs());
    }
    let mut eucl: f64 = 0.0;
    for c in [-0.5, 0.0, 0.3] {
        eucl = eucl.max((eval_euclidean(&HeightField::constant(g.clone(), c)?) - 1.0).abs());
    }
    let tol_mink = g.vertical_step() / 0.1;
    let ok = riesz == 0.0 && sharp <= 1e-4 && mink <= tol_mink && eucl <= 1e-12;
    Ok((ok, format!("riesz {riesz:e}, sharp {sharp:.2e}, minkowski |P-1| {mink:.2e} (tol {tol_mink:.3e}), euclidean |P-1| {eucl:.1e}")))
}

fn submodularity() -> Outcome {
    let g = grid(64, 128, 1.0);
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for spec in all_six() {
        let p = functional(spec, &g)?;
        let r = check_submodularity(&p, 1000, 3)?;
        let tol = if p.kind() == FunctionalKind::SharpFractional { 1e-4 } else { 1e-9 };
        ok &= r.max_violation_rel <= tol;
        parts.push(format!("{} {:.2e}", p.kind().name(), r.max_violation_rel));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((ok && secs < 300.0, format!("max violation / scale: {}; {secs:.1} s", parts.join(", "))))
}

fn random_field(g: &TorusGrid<f64>, rng: &mut ChaCha8Rng, amplitude: f64, shift: f64) -> Result<SlabSet<f64>> {
    let f = generate_initial(&InitialSpec::RandomLipschitz { amplitude, lipschitz: rng.gen_range(0.5..2.0), seed: rng.gen() }, g, None)?;
    let v: Vec<f64> = f.values().iter().map(|x| x + shift).collect();
    build_slab_set(&HeightField::new(g.clone(), v, f.lipschitz())?)
}

fn comparison_principle() -> Outcome {
    let g = grid(32, 64, 0.5);
    let ps = [functional(kernel(0.5), &g)?, functional(FunctionalSpec::SharpFractional { s: 0.5 }, &g)?, functional(FunctionalSpec::Euclidean, &g)?];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut violations, mut moved) = (0, 0);
    for i in 0..50 {
        let p = &ps[i % ps.len()];
        let mut e = random_field(&g, &mut rng, 0.12, 0.0)?;
        let lift = rng.gen_range(0.0..0.1);
        let other = random_field(&g, &mut rng, 0.12, lift)?;
        let mut f = e.union(&other)?;
        let e0 = e.clone();
        for _ in 0..20 {
            e = flow_step(&e, 0.002, p, MincutOptions::default(), LovaszOptions::default())?.minimal;
            f = flow_step(&f, 0.002, p, MincutOptions::default(), LovaszOptions::default())?.minimal;
            if !e.is_subset_of(&f) {
                violations += 1;
            }
        }
        if e.tops() != e0.tops() {
            moved += 1;
        }
    }
    Ok((violations == 0, format!("50 pairs x 20 steps, {violations} violations ({moved} of 50 lower sets moved)")))
}

fn sinusoid_trace(spec: FunctionalSpec) -> Result<(FlowTrace<f64>, f64)> {
    let g = grid(64, 128, 0.5);
    let p = functional(spec, &g)?;
    let f0 = sinusoid(&g, 0.2)?;
    let l = f0.lipschitz();
    let tr = run_flow(&FlowConfig::new(f0, 0.002, 0.2, &p))?;
    Ok((tr, l))
}

fn lipschitz_preservation(traces: &[(FlowTrace<f64>, f64)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (tr, l) in traces {
        let g = tr.heights[0].grid();
        let bound = l + 2.0 * g.vertical_step() / g.horizontal_step();
        let worst = tr.heights.iter().map(lipschitz_constant).fold(0.0, f64::max);
        ok &= tr.steps.len() == 100 && worst <= bound;
        parts.push(format!("{} steps max L {worst:.4} <= {bound:.4}", tr.steps.len()));
    }
    Ok((ok, parts.join("; ")))
}

fn dissipation(traces: &[(FlowTrace<f64>, f64)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (tr, _) in traces {
        let tol = 1e-9 * tr.scale;
        let mut prev = tr.initial_perimeter_q;
        let mut worst_rise = f64::NEG_INFINITY;
        for s in &tr.steps {
            worst_rise = worst_rise.max((s.perimeter_q - prev) as f64 * tr.quantum);
            prev = s.perimeter_q;
        }
        let total = tr.total_dissipation();
        let p0 = tr.initial_perimeter_q as f64 * tr.quantum;
        ok &= worst_rise <= tol && total <= p0 + tol;
        parts.push(format!("max step change {worst_rise:.3e}, dissipation {total:.4e} <= P(E0) {p0:.4e}"));
    }
    Ok((ok, parts.join("; ")))
}

struct KernelFlows {
    traces: Vec<FlowTrace<f64>>,
    hs: Vec<f64>,
    holder: Vec<HolderReport>,
    deviations: Vec<f64>,
    monotone: bool,
}

fn kernel_flows() -> Result<KernelFlows> {
    let g = grid(128, 256, 0.5);
    let p = functional(kernel(0.5), &g)?;
    let ladder = refinement_compare(&sinusoid(&g, 0.2)?, &[0.04, 0.02, 0.01], 0.4, &p, MincutOptions::default())?;
    let holder = ladder.traces.iter().map(holder_diagnostic).collect::<Result<_>>()?;
    Ok(KernelFlows {
        hs: ladder.hs.clone(),
        deviations: ladder.rungs.iter().map(|r| r.deviation).collect(),
        monotone: ladder.monotone,
        traces: ladder.traces,
        holder,
    })
}

fn holder(k: &KernelFlows) -> Outcome {
    let (a, b) = (&k.holder[1], &k.holder[2]);
    let ratio = a.c_emp.max(b.c_emp) / a.c_emp.min(b.c_emp);
    let slopes_ok = [a, b].iter().all(|r| r.slope.is_some_and(|s| s <= 0.55));
    let ok = a.c_emp.is_finite() && b.c_emp.is_finite() && ratio <= 2.0 && slopes_ok;
    let fmt = |s: Option<f64>| s.map_or("none".to_string(), |s| format!("{s:.3}"));
    Ok((
        ok,
        format!(
            "C_emp {:.4} (h=0.02), {:.4} (h=0.01), ratio {ratio:.3}; slopes {} / {}",
            a.c_emp,
            b.c_emp,
            fmt(a.slope),
            fmt(b.slope)
        ),
    ))
}

fn min_c_emp(k: &KernelFlows) -> f64 {
    k.holder.iter().map(|r| r.c_emp).fold(f64::INFINITY, f64::min)
}

fn ladder(k: &KernelFlows) -> Outcome {
    let c = min_c_emp(k);
    // each rung against the finer of its two step sizes
    let bounded = k.deviations.iter().zip(&k.hs[1..]).all(|(d, h)| *d <= c * h.sqrt());
    Ok((
        k.monotone && bounded,
        format!("deviations {:?}, bounds C_emp*sqrt(h) = {:?}", k.deviations, k.hs[1..].iter().map(|h| c * h.sqrt()).collect::<Vec<_>>()),
    ))
}

fn semigroup() -> Outcome {
    let g = grid(128, 256, 0.5);
    let p = functional(kernel(0.5), &g)?;
    let r = semigroup_check(&sinusoid(&g, 0.2)?, 0.01, 0.2, 0.3, &p)?;
    Ok((r.equal, format!("h=0.01, (t1, t2) = (0.2, 0.3): {} differing columns", r.differing_columns)))
}

fn halfspace_convergence_check(k: &KernelFlows) -> Outcome {
    let tol = k.traces[0].sets[0].grid().vertical_step() * 3.0;
    let reps: Vec<_> = k.traces.iter().map(|t| halfspace_convergence(t, tol)).collect();
    let reached = reps.iter().all(|r| r.detection_time.is_some());
    let monotone = reps.iter().all(|r| r.monotonicity_violations == 0);
    let c = min_c_emp(k);
    let stable = reps.windows(2).zip(&k.hs[1..]).all(|(w, h)| (w[0].lambda - w[1].lambda).abs() <= c * h.sqrt());
    let times: Vec<_> = reps.iter().map(|r| r.detection_time).collect();
    let lambdas: Vec<_> = reps.iter().map(|r| format!("{:.5}", r.lambda)).collect();
    Ok((reached && monotone && stable, format!("detection times {times:?}, lambda {lambdas:?}, oscillation monotone: {monotone}")))
}

fn probe() -> Outcome {
    let g = grid(32, 4096, 0.3);
    let f = sinusoid(&g, 0.2)?;
    let eps = [1e-2, 3e-3, 1e-3];
    let mut ok = true;
    let mut parts = Vec::new();
    for spec in all_six() {
        let p = functional(spec, &g)?;
        let r = assumption_h_probe(&p, &f, &eps, 0.1)?;
        match r.analytic_derivative {
            Some(d) => {
                let at = r.rows.iter().find(|row| row.0 == 1e-3).expect("eps 1e-3 probed").1;
                let rel = (at - d).abs() / d;
                ok &= rel <= 0.05;
                parts.push(format!("euclidean {at:.5} vs {d:.5} ({:.3}%)", rel * 100.0));
            }
            None => {
                ok &= r.c_estimate > 0.0;
                parts.push(format!("{} min ratio {:.3}", r.functional, r.c_estimate));
            }
        }
    }
    Ok((ok, parts.join(", ")))
}

fn report(n: usize, name: &str, out: Outcome, failures: &mut Vec<usize>) {
    let (pass, detail) = match out {
        Ok(x) => x,
        Err(e) => (false, format!("error: {e}")),
    };
    if !pass {
        failures.push(n);
    }
    println!("{} [{n:2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn main() {
    let start = Instant::now();
    let mut failures = Vec::new();
    report(1, "oracle equivalence", oracle_equivalence(), &mut failures);
    report(2, "halfspace minimality", halfspace_minimality(), &mut failures);
    report(3, "halfspace stationarity", halfspace_stationarity(), &mut failures);
    report(4, "exact values", exact_values(), &mut failures);
    report(5, "submodularity sampling", submodularity(), &mut failures);
    report(6, "comparison principle", comparison_principle(), &mut failures);
    let traces: Result<Vec<_>> = [kernel(0.5), FunctionalSpec::Euclidean].into_iter().map(sinusoid_trace).collect();
    match traces {
        Ok(t) => {
            report(7, "Lipschitz preservation", lipschitz_preservation(&t), &mut failures);
            report(8, "dissipation and monotonicity", dissipation(&t), &mut failures);
        }
        Err(e) => {
            report(7, "Lipschitz preservation", Err(clone_err(&e)), &mut failures);
            report(8, "dissipation and monotonicity", Err(e), &mut failures);
        }
    }
    match kernel_flows() {
        Ok(k) => {
            report(9, "Hoelder continuity in time", holder(&k), &mut failures);
            report(10, "ladder Cauchy behaviour", ladder(&k), &mut failures);
            report(11, "semigroup", semigroup(), &mut failures);
            report(12, "halfspace convergence", halfspace_convergence_check(&k), &mut failures);
        }
        Err(e) => {
            for (n, name) in [(9, "Hoelder continuity in time"), (10, "ladder Cauchy behaviour"), (12, "halfspace convergence")] {
                report(n, name, Err(clone_err(&e)), &mut failures);
            }
            report(11, "semigroup", semigroup(), &mut failures);
        }
    }
    report(13, "assumption (H) probe", probe(), &mut failures);
    println!("acceptance: {} of 13 passed in {:.1} s", 13 - failures.len(), start.elapsed().as_secs_f64());
    if !failures.is_empty() {
        println!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
}

fn clone_err(e: &nlflow::Error) -> nlflow::Error {
    nlflow::Error::Parse(e.to_string())
}
