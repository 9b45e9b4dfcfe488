//! Discrete flows `E_{kh} = T_h E_{(k−1)h}` and their diagnostics.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{build_slab_set, height_of, lipschitz_constant, oscillation, symmetric_difference_volume, vertical_scale, HeightField, SlabSet};
use crate::perimeter::{eval_euclidean, FunctionalKind, PerimeterFunctional, SolverCapability};
use crate::scalar::Real;
use crate::step::{assemble_step_energy, solve_step_lovasz, solve_step_mincut_with, LovaszOptions, MincutOptions, SolverStats, StepResult};

/// Largest number of steps a single flow may take.
pub const STEP_BUDGET: usize = 1_000_000;

/// Cells of headroom below which a flow aborts.
const MARGIN_CELLS: u32 = 2;

#[derive(Clone, Debug)]
pub struct FlowConfig<'a, T> {
    pub initial: HeightField<T>,
    pub h: T,
    pub t_final: T,
    pub functional: &'a PerimeterFunctional<T>,
    /// Steps between snapshots (the first and last steps are always recorded).
    pub record_every: usize,
    pub mincut: MincutOptions,
    pub lovasz: LovaszOptions,
    /// Require the initial boundary at distance `R/4` from the slab edges.
    pub check_initial_margin: bool,
}

impl<'a, T: Real> FlowConfig<'a, T> {
    pub fn new(initial: HeightField<T>, h: T, t_final: T, functional: &'a PerimeterFunctional<T>) -> Self {
        Self {
            initial,
            h,
            t_final,
            functional,
            record_every: 1,
            mincut: MincutOptions::default(),
            lovasz: LovaszOptions::default(),
            check_initial_margin: true,
        }
    }
}

/// Number of steps `T/h`, which must be a whole number.
pub fn step_count<T: Real>(h: T, t: T) -> Result<usize> {
    let (h, t) = (h.f64(), t.f64());
    if !(h > 0.0 && h.is_finite()) {
        return Err(param("h", format!("must be positive, got {h}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(param("T", format!("must be nonnegative, got {t}")));
    }
    let k = (t / h).round();
    if (k * h - t).abs() > 1e-9 * t.max(h) {
        return Err(param("T", format!("{t} is not a multiple of h = {h}")));
    }
    if k > STEP_BUDGET as f64 {
        return Err(param("T", format!("{k} steps exceed the budget of {STEP_BUDGET}")));
    }
    Ok(k as usize)
}

/// One solved step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub perimeter_q: i64,
    pub dissipation: f64,
    pub dissipation_q: i64,
    /// Largest column gap between the extremal minimizers, in cells.
    pub extremal_gap_cells: u32,
    pub stats: SolverStats,
}

/// Time-indexed record of a discrete flow.
#[derive(Clone, Debug)]
pub struct FlowTrace<T> {
    pub h: T,
    pub quantum: f64,
    pub scale: f64,
    pub initial_perimeter_q: i64,
    /// Snapshot step indices and times.
    pub snapshot_steps: Vec<usize>,
    pub times: Vec<T>,
    pub sets: Vec<SlabSet<T>>,
    pub heights: Vec<HeightField<T>>,
    pub perimeters: Vec<T>,
    pub symdiff_to_initial: Vec<T>,
    /// One entry per step.
    pub steps: Vec<StepRecord>,
}

impl<T: Real> FlowTrace<T> {
    pub fn final_set(&self) -> &SlabSet<T> {
        self.sets.last().expect("a trace holds the initial snapshot")
    }

    pub fn total_dissipation(&self) -> f64 {
        self.steps.iter().map(|s| s.dissipation).sum()
    }

    /// Dissipation summed over the steps ending at each snapshot.
    pub fn snapshot_dissipations(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.snapshot_steps.len());
        let mut prev = 0;
        for &k in &self.snapshot_steps {
            out.push(self.steps[prev..k].iter().map(|s| s.dissipation).sum());
            prev = k;
        }
        out
    }

    /// Diagnostics table: one row per snapshot, 12 significant digits.
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("time,perimeter,dissipation,oscillation,symdiff_to_initial,lipschitz_constant\n");
        let diss = self.snapshot_dissipations();
        for i in 0..self.times.len() {
            let _ = writeln!(
                out,
                "{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}",
                self.times[i].f64(),
                self.perimeters[i].f64(),
                diss[i],
                oscillation(&self.heights[i]).f64(),
                self.symdiff_to_initial[i].f64(),
                lipschitz_constant(&self.heights[i]).f64(),
            );
        }
        out
    }

    /// Writes `diagnostics.csv` and one `snapshot_NNNNN.txt` per snapshot.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("diagnostics.csv"), self.diagnostics_csv())?;
        for (i, f) in self.heights.iter().enumerate() {
            std::fs::write(dir.join(format!("snapshot_{i:05}.txt")), f.to_text())?;
        }
        Ok(())
    }
}

/// Row of the diagnostics table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub time: f64,
    pub perimeter: f64,
    pub dissipation: f64,
    pub oscillation: f64,
    pub symdiff_to_initial: f64,
    pub lipschitz_constant: f64,
}

pub fn parse_diagnostics_csv(text: &str) -> Result<Vec<DiagnosticsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("time,perimeter,dissipation,oscillation,symdiff_to_initial,lipschitz_constant") => {}
        other => return Err(Error::Parse(format!("unexpected diagnostics header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number in `{l}`"))))
                .collect::<Result<_>>()?;
            if v.len() != 6 {
                return Err(Error::Parse(format!("expected 6 fields in `{l}`")));
            }
            Ok(DiagnosticsRow {
                time: v[0],
                perimeter: v[1],
                dissipation: v[2],
                oscillation: v[3],
                symdiff_to_initial: v[4],
                lipschitz_constant: v[5],
            })
        })
        .collect()
}

fn check_margin<T: Real>(set: &SlabSet<T>, step: usize) -> Result<()> {
    let n = set.grid().n_levels() as u32;
    if set.max_top() + MARGIN_CELLS > n || set.min_top() < MARGIN_CELLS {
        return Err(Error::SlabMargin(format!(
            "boundary within {MARGIN_CELLS} cells of the slab edge after step {step} (tops in [{}, {}] of {n})",
            set.min_top(),
            set.max_top()
        )));
    }
    Ok(())
}

/// One step of the scheme: the minimal minimizer `T_h⁻[E]`, plus the solver record.
pub fn flow_step<T: Real>(set: &SlabSet<T>, h: T, p: &PerimeterFunctional<T>, mincut: MincutOptions, lovasz: LovaszOptions) -> Result<StepResult<T>> {
    let prob = assemble_step_energy(set, h, p)?;
    let res = match p.capability() {
        SolverCapability::Pairwise => solve_step_mincut_with(&prob, mincut)?,
        SolverCapability::GenericSubmodular => solve_step_lovasz(&prob, lovasz)?,
    };
    if !res.stats.certified {
        return Err(Error::NotCertified { gap: res.stats.gap, tol: lovasz.relative_gap * p.scale() });
    }
    Ok(res)
}

/// Runs the scheme from `cfg.initial` for `T/h` steps.
pub fn run_flow<T: Real>(cfg: &FlowConfig<'_, T>) -> Result<FlowTrace<T>> {
    if cfg.record_every == 0 {
        return Err(param("record_every", "must be at least 1"));
    }
    let grid = cfg.initial.grid();
    cfg.functional.grid().ensure_same(grid)?;
    if cfg.check_initial_margin {
        let r = grid.half_height();
        let quarter = r / T::lit(4.0);
        let (lo, hi) = cfg.initial.values().iter().fold((r, -r), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > r - quarter || lo < -r + quarter {
            return Err(Error::SlabMargin(format!(
                "initial heights span [{lo}, {hi}]; keep them within R/4 = {quarter} of the slab edges"
            )));
        }
    }
    let set = build_slab_set(&cfg.initial)?;
    flow_from_set(&set, cfg)
}

fn flow_from_set<T: Real>(initial: &SlabSet<T>, cfg: &FlowConfig<'_, T>) -> Result<FlowTrace<T>> {
    let p = cfg.functional;
    let steps = step_count(cfg.h, cfg.t_final)?;
    check_margin(initial, 0)?;
    let p0 = p.energy_q(initial)?;
    let q = p.quantum();
    let mut tr = FlowTrace {
        h: cfg.h,
        quantum: q,
        scale: p.scale(),
        initial_perimeter_q: p0,
        snapshot_steps: vec![],
        times: vec![],
        sets: vec![],
        heights: vec![],
        perimeters: vec![],
        symdiff_to_initial: vec![],
        steps: Vec::with_capacity(steps),
    };
    let record = |tr: &mut FlowTrace<T>, k: usize, set: &SlabSet<T>, pq: i64| -> Result<()> {
        tr.snapshot_steps.push(k);
        tr.times.push(cfg.h * T::count(k));
        tr.heights.push(height_of(set));
        tr.perimeters.push(T::lit(pq as f64 * q));
        tr.symdiff_to_initial.push(symmetric_difference_volume(initial, set)?);
        tr.sets.push(set.clone());
        Ok(())
    };
    record(&mut tr, 0, initial, p0)?;
    let mut set = initial.clone();
    for k in 1..=steps {
        let res = flow_step(&set, cfg.h, p, cfg.mincut, cfg.lovasz)?;
        let gap = res.minimal.tops().iter().zip(res.maximal.tops()).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0);
        tr.steps.push(StepRecord {
            step: k,
            time: (cfg.h * T::count(k)).f64(),
            perimeter_q: res.perimeter_q,
            dissipation: res.dissipation.f64(),
            dissipation_q: res.dissipation_q,
            extremal_gap_cells: gap,
            stats: res.stats,
        });
        set = res.minimal;
        check_margin(&set, k)?;
        if k % cfg.record_every == 0 || k == steps {
            let pq = tr.steps.last().map_or(p0, |s| s.perimeter_q);
            record(&mut tr, k, &set, pq)?;
        }
    }
    Ok(tr)
}

/// Hölder-in-time fit of a trace.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct HolderReport {
    pub pairs: usize,
    /// `sup |E_t △ E_s| / max{h^{1/2}, |t − s|^{1/2}}`.
    pub c_emp: f64,
    /// Log-log slope of the lag envelope over `|t − s| ∈ [4h, T/2]`.
    pub slope: Option<f64>,
    pub slope_points: usize,
    /// `(lag, max |E_t △ E_s| at that lag)`.
    pub envelope: Vec<(f64, f64)>,
}

pub fn holder_diagnostic<T: Real>(tr: &FlowTrace<T>) -> Result<HolderReport> {
    let n = tr.sets.len();
    if n < 10 {
        return Err(param("trace", format!("need at least 10 snapshots, got {n}")));
    }
    let h = tr.h.f64();
    let t_end = tr.times[n - 1].f64() - tr.times[0].f64();
    let mut c_emp: f64 = 0.0;
    let mut env: Vec<(usize, f64)> = Vec::new();
    let mut pairs = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            pairs += 1;
            let v = symmetric_difference_volume(&tr.sets[i], &tr.sets[j])?.f64();
            let lag = (tr.times[j] - tr.times[i]).f64();
            c_emp = c_emp.max(v / h.max(lag).sqrt());
            let lag_steps = tr.snapshot_steps[j] - tr.snapshot_steps[i];
            match env.iter_mut().find(|e| e.0 == lag_steps) {
                Some(e) => e.1 = e.1.max(v),
                None => env.push((lag_steps, v)),
            }
        }
    }
    env.sort_by_key(|e| e.0);
    let envelope: Vec<(f64, f64)> = env.iter().map(|&(k, v)| (k as f64 * h, v)).collect();
    let pts: Vec<(f64, f64)> = envelope
        .iter()
        .filter(|&&(lag, v)| lag >= 4.0 * h * (1.0 - 1e-9) && lag <= 0.5 * t_end * (1.0 + 1e-9) && v > 0.0)
        .map(|&(lag, v)| (lag.ln(), v.ln()))
        .collect();
    let slope = (pts.len() >= 2).then(|| {
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / m, sy / m);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(HolderReport { pairs, c_emp, slope, slope_points: pts.len(), envelope })
}

/// One rung of an `h`-refinement ladder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rung {
    pub h_coarse: f64,
    pub h_fine: f64,
    /// `sup_t |E^{(h_coarse)}_t △ E^{(h_fine)}_t|` over the coarse snapshot times.
    pub deviation: f64,
    pub at_time: f64,
}

#[derive(Clone, Debug)]
pub struct LadderReport<T> {
    pub hs: Vec<f64>,
    pub rungs: Vec<Rung>,
    /// Rung deviations never increase down the ladder.
    pub monotone: bool,
    pub traces: Vec<FlowTrace<T>>,
}

fn set_at<'t, T: Real>(tr: &'t FlowTrace<T>, step: usize) -> Option<&'t SlabSet<T>> {
    tr.snapshot_steps.iter().position(|&k| k == step).map(|i| &tr.sets[i])
}

/// Runs the flow at each `h` (descending) and compares consecutive rungs at the
/// coarsest snapshot times.
pub fn refinement_compare<T: Real>(
    initial: &HeightField<T>,
    hs: &[T],
    t_final: T,
    p: &PerimeterFunctional<T>,
    mincut: MincutOptions,
) -> Result<LadderReport<T>> {
    if hs.len() < 3 {
        return Err(param("hs", "a ladder needs at least three time steps"));
    }
    if hs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(param("hs", "time steps must be strictly descending"));
    }
    for &h in hs {
        step_count(h, t_final)?;
    }
    let traces: Vec<FlowTrace<T>> = hs
        .par_iter()
        .map(|&h| {
            let mut cfg = FlowConfig::new(initial.clone(), h, t_final, p);
            cfg.mincut = mincut;
            run_flow(&cfg)
        })
        .collect::<Result<_>>()?;
    let coarse_steps = step_count(hs[0], t_final)?;
    let mut rungs = Vec::new();
    for i in 0..hs.len() - 1 {
        let (a, b) = (&traces[i], &traces[i + 1]);
        let ra = (hs[0] / hs[i]).f64().round() as usize;
        let rb = (hs[0] / hs[i + 1]).f64().round() as usize;
        let mut worst = (0.0, 0.0);
        for k in 0..=coarse_steps {
            let (sa, sb) = match (set_at(a, k * ra), set_at(b, k * rb)) {
                (Some(x), Some(y)) => (x, y),
                _ => continue,
            };
            let v = symmetric_difference_volume(sa, sb)?.f64();
            if v > worst.0 {
                worst = (v, k as f64 * hs[0].f64());
            }
        }
        rungs.push(Rung { h_coarse: hs[i].f64(), h_fine: hs[i + 1].f64(), deviation: worst.0, at_time: worst.1 });
    }
    let monotone = rungs.windows(2).all(|w| w[1].deviation <= w[0].deviation);
    Ok(LadderReport { hs: hs.iter().map(|h| h.f64()).collect(), rungs, monotone, traces })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub t1: f64,
    pub t2: f64,
    /// Columns whose tops differ between the direct and the composed flow.
    pub differing_columns: usize,
    pub deviation: f64,
    pub equal: bool,
}

/// Compares `E_{t1+t2}[E0]` with `E_{t2}[E_{t1}[E0]]` at fixed `h`.
pub fn semigroup_check<T: Real>(initial: &HeightField<T>, h: T, t1: T, t2: T, p: &PerimeterFunctional<T>) -> Result<SemigroupReport> {
    step_count(h, t1)?;
    step_count(h, t2)?;
    let direct = run_flow(&FlowConfig { record_every: usize::MAX, ..FlowConfig::new(initial.clone(), h, t1 + t2, p) })?;
    let first = run_flow(&FlowConfig { record_every: usize::MAX, ..FlowConfig::new(initial.clone(), h, t1, p) })?;
    let mid = first.final_set().clone();
    let second = flow_from_set(&mid, &FlowConfig { record_every: usize::MAX, ..FlowConfig::new(initial.clone(), h, t2, p) })?;
    let (a, b) = (direct.final_set(), second.final_set());
    let differing = a.tops().iter().zip(b.tops()).filter(|(x, y)| x != y).count();
    Ok(SemigroupReport {
        t1: t1.f64(),
        t2: t2.f64(),
        differing_columns: differing,
        deviation: symmetric_difference_volume(a, b)?.f64(),
        equal: differing == 0,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    pub oscillations: Vec<f64>,
    /// First snapshot time with oscillation at most `tol`.
    pub detection_time: Option<f64>,
    /// Snapshots whose oscillation exceeds the previous one by more than one cell.
    pub monotonicity_violations: usize,
    pub max_increase: f64,
    /// Terminal mean height.
    pub lambda: f64,
}

pub fn halfspace_convergence<T: Real>(tr: &FlowTrace<T>, tol: T) -> ConvergenceReport {
    let slack = tr.sets[0].grid().vertical_step().f64();
    let osc: Vec<f64> = tr.heights.iter().map(|f| oscillation(f).f64()).collect();
    let times: Vec<f64> = tr.times.iter().map(|t| t.f64()).collect();
    let detection_time = osc.iter().position(|&o| o <= tol.f64()).map(|i| times[i]);
    let mut violations = 0;
    let mut max_increase: f64 = 0.0;
    for w in osc.windows(2) {
        let inc = w[1] - w[0];
        max_increase = max_increase.max(inc);
        if inc > slack * (1.0 + 1e-9) {
            violations += 1;
        }
    }
    let lambda = tr.heights.last().map_or(0.0, |f| f.mean().f64());
    ConvergenceReport { times, oscillations: osc, detection_time, monotonicity_violations: violations, max_increase, lambda }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub functional: String,
    /// `(ε, [𝒫(E) − 𝒫(E_ε)]/ε)`.
    pub rows: Vec<(f64, f64)>,
    /// Smallest ratio, the estimate of `C(δ, L)`.
    pub c_estimate: f64,
    /// `∫ |∇f|² / √(1 + |∇f|²)` for the Euclidean perimeter.
    pub analytic_derivative: Option<f64>,
}

/// Centered fourth-order derivative of a periodic height field.
fn gradient_sq<T: Real>(f: &HeightField<T>, c: usize) -> f64 {
    let g = f.grid();
    let n = g.n_cols() as i64;
    let h = g.horizontal_step().f64();
    let v = f.values();
    let [a, b] = g.column_coords(c);
    let mut s = 0.0;
    for axis in 0..g.dim() - 1 {
        let at = |k: i64| {
            let mut co = [a, b];
            co[axis] = (co[axis] as i64 + k).rem_euclid(n) as usize;
            v[g.column_from_coords(co)].f64()
        };
        let d = (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h);
        s += d * d;
    }
    s
}

/// Measures `[𝒫(E) − 𝒫(E_ε)]/ε` for `E_ε = {x_d ≤ (1 − ε) f}`.
pub fn assumption_h_probe<T: Real>(p: &PerimeterFunctional<T>, f: &HeightField<T>, eps_list: &[T], delta: T) -> Result<ProbeReport> {
    if !(oscillation(f) >= delta) || !(delta > T::zero()) {
        return Err(param("delta", format!("oscillation {} is below δ = {delta}", oscillation(f))));
    }
    if eps_list.is_empty() {
        return Err(param("eps_list", "needs at least one ε"));
    }
    let euclid = p.kind() == FunctionalKind::Euclidean;
    let value = |g: &HeightField<T>| -> Result<f64> {
        if euclid {
            Ok(eval_euclidean(g).f64())
        } else {
            Ok(p.eval_height(g)?.f64())
        }
    };
    let base = value(f)?;
    let mut rows = Vec::new();
    for &eps in eps_list {
        let scaled = vertical_scale(f, eps)?;
        rows.push((eps.f64(), (base - value(&scaled)?) / eps.f64()));
    }
    let c_estimate = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let analytic_derivative = euclid.then(|| {
        let g = f.grid();
        let area = g.column_area().f64();
        (0..g.column_count())
            .map(|c| {
                let q = gradient_sq(f, c);
                q / (1.0 + q).sqrt()
            })
            .sum::<f64>()
            * area
    });
    Ok(ProbeReport { functional: p.kind().name().into(), rows, c_estimate, analytic_derivative })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::initial::{generate_initial, InitialSpec};
    use crate::kernel::KernelSpec;
    use crate::perimeter::FunctionalSpec;
    use crate::weights::WeightOptions;

    fn setup(n_cols: usize, n_levels: usize) -> (TorusGrid<f64>, PerimeterFunctional<f64>) {
        let g = TorusGrid::new(2, n_cols, n_levels, 0.5).unwrap();
        let p = PerimeterFunctional::new(FunctionalSpec::Kernel(KernelSpec::fractional(2, 0.5)), &g, WeightOptions::default()).unwrap();
        (g, p)
    }

    fn sinusoid(g: &TorusGrid<f64>, a: f64) -> HeightField<f64> {
        generate_initial(&InitialSpec::Sinusoid { amplitude: a, frequency: 1 }, g, None).unwrap()
    }

    #[test]
    fn halfspace_flow_is_constant() {
        let (g, p) = setup(16, 32);
        let f = HeightField::constant(g.clone(), 0.0).unwrap();
        let tr = run_flow(&FlowConfig::new(f, 0.02, 0.2, &p)).unwrap();
        assert!(tr.sets.iter().all(|s| s == &tr.sets[0]));
        assert!(tr.perimeters.iter().all(|&v| v == tr.perimeters[0]));
        let h = holder_diagnostic(&tr).unwrap();
        assert_eq!(h.c_emp, 0.0);
        let c = halfspace_convergence(&tr, 0.01);
        assert_eq!(c.detection_time, Some(0.0));
    }

    #[test]
    fn sinusoid_flow_decays_and_is_deterministic() {
        let (g, p) = setup(16, 32);
        let f = sinusoid(&g, 0.15);
        let cfg = FlowConfig::new(f, 0.02, 0.3, &p);
        let a = run_flow(&cfg).unwrap();
        let b = run_flow(&cfg).unwrap();
        assert_eq!(a.sets, b.sets);
        assert_eq!(a.diagnostics_csv(), b.diagnostics_csv());
        let mut prev = a.initial_perimeter_q;
        for s in &a.steps {
            assert!(s.perimeter_q + s.dissipation_q <= prev);
            prev = s.perimeter_q;
        }
        assert!(oscillation(a.heights.last().unwrap()) < oscillation(&a.heights[0]));
        let rows = parse_diagnostics_csv(&a.diagnostics_csv()).unwrap();
        assert_eq!(rows.len(), a.times.len());
        assert!((rows[3].perimeter - a.perimeters[3]).abs() <= 1e-11 * a.perimeters[3]);
    }

    #[test]
    fn semigroup_is_exact() {
        let (g, p) = setup(16, 32);
        let f = sinusoid(&g, 0.15);
        let r = semigroup_check(&f, 0.02, 0.1, 0.06, &p).unwrap();
        assert!(r.equal, "{r:?}");
        let r0 = semigroup_check(&f, 0.02, 0.1, 0.0, &p).unwrap();
        assert!(r0.equal);
    }

    #[test]
    fn margin_policy() {
        let (g, p) = setup(16, 32);
        let f = HeightField::constant(g, 0.45).unwrap();
        assert!(matches!(run_flow(&FlowConfig::new(f, 0.02, 0.1, &p)), Err(Error::SlabMargin(_))));
        assert!(step_count(0.03, 0.1).is_err());
    }

    #[test]
    fn probe_rejects_flat_data() {
        let (g, p) = setup(16, 32);
        let f = HeightField::constant(g, 0.1).unwrap();
        assert!(assumption_h_probe(&p, &f, &[0.01], 0.05).is_err());
    }

    #[test]
    fn euclidean_probe_matches_derivative() {
        let g = TorusGrid::new(2, 256, 16, 0.5).unwrap();
        let p = PerimeterFunctional::new(FunctionalSpec::Euclidean, &g, WeightOptions::default()).unwrap();
        let f = sinusoid(&g, 0.2);
        let r = assumption_h_probe(&p, &f, &[1e-3], 0.1).unwrap();
        let d = r.analytic_derivative.unwrap();
        assert!((r.rows[0].1 - d).abs() < 0.05 * d, "{r:?}");
    }
}
