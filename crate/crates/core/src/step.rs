//! One minimizing-movements step: minimize `𝒫(F) + Σ_{cells ∈ F} vol·sdist_E/h` over
//! monotone slab sets and return both extremal minimizers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{signed_distance, ScalarField, SlabSet};
use crate::maxflow::{FlowNetwork, INF};
use crate::perimeter::{not_pairwise, Pairwise, PerimeterFunctional, SolverCapability};
use crate::scalar::Real;

/// Largest configuration count accepted by [`solve_step_exhaustive`].
pub const EXHAUSTIVE_LIMIT: f64 = 1e7;

/// Energy of one step, assembled from the previous set.
#[derive(Clone, Debug)]
pub struct StepProblem<'a, T> {
    functional: &'a PerimeterFunctional<T>,
    prev: SlabSet<T>,
    h: T,
    sdist: ScalarField<T>,
    unary: Vec<T>,
    unary_q: Vec<i64>,
    /// Per column, `prefix[c][a] = Σ_{k<a} unary_q(c, k)`.
    prefix: Vec<Vec<i64>>,
}

/// Builds the step energy from `signed_distance(prev)`.
pub fn assemble_step_energy<'a, T: Real>(prev: &SlabSet<T>, h: T, p: &'a PerimeterFunctional<T>) -> Result<StepProblem<'a, T>> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(param("h", format!("time step must be positive, got {h}")));
    }
    p.grid().ensure_same(prev.grid())?;
    let sdist = signed_distance(prev)?;
    let grid = prev.grid();
    let vol = grid.cell_volume();
    let unary: Vec<T> = sdist.values().iter().map(|&s| vol * s / h).collect();
    let q = p.quantum();
    let unary_q: Vec<i64> = unary.iter().map(|u| (u.f64() / q).round() as i64).collect();
    let n = grid.n_levels();
    let prefix = (0..grid.column_count())
        .map(|c| {
            let mut acc = vec![0i64; n + 1];
            for k in 0..n {
                acc[k + 1] = acc[k] + unary_q[grid.cell_index(c, k)];
            }
            acc
        })
        .collect();
    Ok(StepProblem { functional: p, prev: prev.clone(), h, sdist, unary, unary_q, prefix })
}

impl<'a, T: Real> StepProblem<'a, T> {
    pub fn functional(&self) -> &'a PerimeterFunctional<T> {
        self.functional
    }

    pub fn previous(&self) -> &SlabSet<T> {
        &self.prev
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn signed_distance(&self) -> &ScalarField<T> {
        &self.sdist
    }

    /// Per-cell volume term `vol·sdist_E/h`.
    pub fn unary(&self) -> &[T] {
        &self.unary
    }

    pub fn unary_q(&self) -> &[i64] {
        &self.unary_q
    }

    #[inline]
    fn column_cost(&self, c: usize, a: usize) -> i64 {
        self.prefix[c][a]
    }

    pub(crate) fn energy_tops(&self, tops: &[u32]) -> i64 {
        let vol: i64 = tops.iter().enumerate().map(|(c, &a)| self.column_cost(c, a as usize)).sum();
        self.functional.energy_tops(tops) + vol
    }

    /// Integer step energy of a candidate.
    pub fn energy_q(&self, f: &SlabSet<T>) -> Result<i64> {
        self.prev.grid().ensure_same(f.grid())?;
        Ok(self.energy_tops(f.tops()))
    }

    pub fn energy(&self, f: &SlabSet<T>) -> Result<T> {
        Ok(T::lit(self.energy_q(f)? as f64 * self.functional.quantum()))
    }

    /// Constant separating this energy from `𝒫(F) + (1/h)∫_{E△F} dist(·, ∂E)`:
    /// the latter equals `energy(F) − Σ_{cells ∈ E} unary`.
    pub fn dropped_constant(&self) -> T {
        let g = self.prev.grid();
        (0..g.column_count())
            .flat_map(|c| (0..self.prev.tops()[c] as usize).map(move |k| g.cell_index(c, k)))
            .map(|i| self.unary[i])
            .sum()
    }

    fn result(&self, minimal: Vec<u32>, maximal: Vec<u32>, stats: SolverStats) -> Result<StepResult<T>> {
        let g = self.prev.grid().clone();
        let e_min = self.energy_tops(&minimal);
        let e_max = self.energy_tops(&maximal);
        if e_min != e_max {
            return Err(Error::NotCertified { gap: (e_min - e_max).abs() as f64 * self.functional.quantum(), tol: 0.0 });
        }
        let minimal = SlabSet::from_tops(g.clone(), minimal)?;
        let maximal = SlabSet::from_tops(g, maximal)?;
        let dissipation = dissipation_from(&self.prev, &minimal, &self.sdist, self.h);
        let dq: i64 = self.prev
            .tops()
            .iter()
            .zip(minimal.tops())
            .enumerate()
            .map(|(c, (&a, &b))| (self.column_cost(c, a.max(b) as usize) - self.column_cost(c, a.min(b) as usize)).abs())
            .sum();
        let q = self.functional.quantum();
        Ok(StepResult {
            energy: T::lit(e_min as f64 * q),
            energy_q: e_min,
            perimeter_q: self.functional.energy_tops(minimal.tops()),
            dissipation,
            dissipation_q: dq,
            minimal,
            maximal,
            stats,
        })
    }
}

/// Solver bookkeeping exposed to the CLI.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub strategy: String,
    pub networks: usize,
    pub max_nodes: usize,
    pub max_arcs: usize,
    pub augmentations: u64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub certified: bool,
    /// Upper minus lower bound on the optimum (energy units; 0 for exact solvers).
    pub gap: f64,
}

impl SolverStats {
    fn absorb(&mut self, g: &FlowNetwork) {
        self.networks += 1;
        self.max_nodes = self.max_nodes.max(g.node_count());
        self.max_arcs = self.max_arcs.max(g.arc_count());
        self.augmentations += g.augmentations();
    }
}

/// Both extremal minimizers of one step.
#[derive(Clone, Debug)]
pub struct StepResult<T> {
    /// `T_h⁻[E]`.
    pub minimal: SlabSet<T>,
    /// `T_h⁺[E]`.
    pub maximal: SlabSet<T>,
    /// Step energy at the minimizers (`energy_q × quantum`).
    pub energy: T,
    pub energy_q: i64,
    /// Integer perimeter of the minimal minimizer.
    pub perimeter_q: i64,
    /// `(1/h)∫_{E△T_h⁻[E]} dist(·, ∂E)`.
    pub dissipation: T,
    /// The same sum in integer units, `Σ_{E△T} |unary_q|`.
    pub dissipation_q: i64,
    pub stats: SolverStats,
}

/// `(1/h) Σ_{cells in E△F} |sdist_E(center)|·vol`.
pub fn dissipation_value<T: Real>(e: &SlabSet<T>, f: &SlabSet<T>, h: T) -> Result<T> {
    e.grid().ensure_same(f.grid())?;
    if !(h > T::zero()) {
        return Err(param("h", "time step must be positive"));
    }
    if e == f {
        return Ok(T::zero());
    }
    let sd = signed_distance(e)?;
    Ok(dissipation_from(e, f, &sd, h))
}

fn dissipation_from<T: Real>(e: &SlabSet<T>, f: &SlabSet<T>, sd: &ScalarField<T>, h: T) -> T {
    let g = e.grid();
    let mut acc = T::zero();
    for (c, (&a, &b)) in e.tops().iter().zip(f.tops()).enumerate() {
        for k in a.min(b) as usize..a.max(b) as usize {
            acc = acc + sd.at(c, k).abs();
        }
    }
    acc * g.cell_volume() / h
}

/// Exact strategy for pairwise functionals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MincutStrategy {
    /// Column descent for difference forms, cell network otherwise.
    #[default]
    Auto,
    /// Steepest descent on the column tops; each move is a min cut over columns.
    ColumnDescent,
    /// One node per slab cell with infinite downward arcs.
    CellNetwork,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MincutOptions {
    pub strategy: MincutStrategy,
    /// Restrict the cell network to tops in `[min top E, max top E]` (valid by the
    /// comparison principle against the enclosing halfspaces).
    pub band: bool,
}

impl Default for MincutOptions {
    fn default() -> Self {
        Self { strategy: MincutStrategy::Auto, band: true }
    }
}

/// Solves a step of a pairwise functional by minimum cuts.
pub fn solve_step_mincut<T: Real>(prob: &StepProblem<'_, T>) -> Result<StepResult<T>> {
    solve_step_mincut_with(prob, MincutOptions::default())
}

pub fn solve_step_mincut_with<T: Real>(prob: &StepProblem<'_, T>, opts: MincutOptions) -> Result<StepResult<T>> {
    let start = Instant::now();
    let pw = prob.functional.pairwise().ok_or_else(|| not_pairwise(prob.functional.kind()))?;
    let strategy = match opts.strategy {
        MincutStrategy::Auto if pw.difference_form() => MincutStrategy::ColumnDescent,
        MincutStrategy::Auto => MincutStrategy::CellNetwork,
        s => s,
    };
    let mut stats = SolverStats { certified: true, ..Default::default() };
    let (minimal, maximal) = match strategy {
        MincutStrategy::ColumnDescent => {
            if !pw.difference_form() {
                return Err(param("strategy", "column descent needs a difference-form functional"));
            }
            stats.strategy = "column_descent".into();
            column_descent(prob, &pw, &mut stats)?
        }
        _ => {
            stats.strategy = "cell_network".into();
            let n = prob.prev.grid().n_levels() as u32;
            let (lo, hi) = if opts.band { (prob.prev.min_top(), prob.prev.max_top()) } else { (0, n) };
            if pw.uses_top() {
                let mut best: Option<(i64, Vec<u32>, Vec<u32>)> = None;
                for r in lo..=hi {
                    let (e, mn, mx) = cell_network(prob, &pw, lo, r, r as i64, &mut stats)?;
                    best = match best {
                        None => Some((e, mn, mx)),
                        Some((be, bmn, bmx)) if e == be => Some((
                            be,
                            bmn.iter().zip(&mn).map(|(a, b)| *a.min(b)).collect(),
                            bmx.iter().zip(&mx).map(|(a, b)| *a.max(b)).collect(),
                        )),
                        Some((be, ..)) if e < be => Some((e, mn, mx)),
                        keep => keep,
                    };
                }
                let (_, mn, mx) = best.expect("band holds at least one level");
                (mn, mx)
            } else {
                let (_, mn, mx) = cell_network(prob, &pw, lo, hi, 0, &mut stats)?;
                (mn, mx)
            }
        }
    };
    stats.wall_time_s = start.elapsed().as_secs_f64();
    prob.result(minimal, maximal, stats)
}

/// Unordered interacting column pairs `(i, j, o_ij, o_ji)` with activity flags.
fn column_pairs<T: Real>(pw: &Pairwise<'_, T>) -> Vec<(usize, usize, Option<usize>, Option<usize>)> {
    let g = pw.grid();
    let cols = g.column_count();
    let mut active = vec![false; cols];
    for &o in pw.active() {
        active[o] = true;
    }
    let mut out = Vec::new();
    for i in 0..cols {
        for j in (i + 1)..cols {
            let oij = g.column_offset(i, j);
            let oji = g.column_offset(j, i);
            if active[oij] || active[oji] {
                out.push((i, j, active[oij].then_some(oij), active[oji].then_some(oji)));
            }
        }
    }
    out
}

#[inline]
fn pair_value<T: Real>(pw: &Pairwise<'_, T>, oij: Option<usize>, oji: Option<usize>, a: i64, b: i64, r: i64) -> i64 {
    oij.map_or(0, |o| pw.pair(o, a, b, r)) + oji.map_or(0, |o| pw.pair(o, b, a, r))
}

/// Adds linear node costs as terminal arcs and returns the constant they shed.
fn terminal_arcs(g: &mut FlowNetwork, unary: &[i64], s: usize, t: usize) -> i64 {
    let mut constant = 0;
    for (v, &b) in unary.iter().enumerate() {
        if b > 0 {
            g.add_arc(v, t, b, 0);
        } else if b < 0 {
            constant += b;
            g.add_arc(s, v, -b, 0);
        }
    }
    constant
}

/// Minimizes over tops in `[lo, hi]` with the slab forms evaluated at top bound `r`.
/// Returns the optimal energy and the minimal and maximal minimizers.
fn cell_network<T: Real>(
    prob: &StepProblem<'_, T>,
    pw: &Pairwise<'_, T>,
    lo: u32,
    hi: u32,
    r: i64,
    stats: &mut SolverStats,
) -> Result<(i64, Vec<u32>, Vec<u32>)> {
    let grid = prob.prev.grid();
    let cols = grid.column_count();
    let l = (hi - lo) as usize;
    let lo_i = lo as i64;
    let node = |c: usize, k: usize| c * l + (k - 1);
    let nodes = cols * l;
    let (s, t) = (nodes, nodes + 1);
    let mut g = FlowNetwork::new(nodes + 2);
    let mut unary = vec![0i64; nodes];
    let mut constant = pw.constant();
    for c in 0..cols {
        let gc = |a: i64| prob.column_cost(c, a as usize) + pw.column(a, r);
        constant += gc(lo_i);
        for k in 1..=l {
            unary[node(c, k)] += gc(lo_i + k as i64) - gc(lo_i + k as i64 - 1);
        }
        for k in 1..l {
            g.add_arc(node(c, k + 1), node(c, k), INF, 0);
        }
    }
    if l > 0 {
        for (i, j, oij, oji) in column_pairs(pw) {
            let f = |a: usize, b: usize| pair_value(pw, oij, oji, lo_i + a as i64, lo_i + b as i64, r);
            // rows of f over the label grid, reused for the mixed differences
            let mut prev_row: Vec<i64> = (0..=l).map(|b| f(0, b)).collect();
            constant += prev_row[0];
            for b in 1..=l {
                unary[node(j, b)] += prev_row[b] - prev_row[b - 1];
            }
            for a in 1..=l {
                let row: Vec<i64> = (0..=l).map(|b| f(a, b)).collect();
                unary[node(i, a)] += row[0] - prev_row[0];
                for b in 1..=l {
                    let d = row[b] - prev_row[b] - row[b - 1] + prev_row[b - 1];
                    if d > 0 {
                        return Err(Error::NotPairwise("pair term is not submodular"));
                    }
                    if d < 0 {
                        unary[node(i, a)] += d;
                        g.add_arc(node(i, a), node(j, b), -d, 0);
                    }
                }
                prev_row = row;
            }
        }
    } else {
        for (_, _, oij, oji) in column_pairs(pw) {
            constant += pair_value(pw, oij, oji, lo_i, lo_i, r);
        }
    }
    constant += terminal_arcs(&mut g, &unary, s, t);
    let flow = g.max_flow(s, t);
    stats.absorb(&g);
    let lo_side = g.source_side(s);
    let hi_side = g.maximal_source_side(t);
    let tops = |side: &[bool]| -> Vec<u32> {
        (0..cols).map(|c| lo + (1..=l).filter(|&k| side[node(c, k)]).count() as u32).collect()
    };
    Ok((constant + flow, tops(&lo_side), tops(&hi_side)))
}

/// Best `±1` move on a subset of columns: returns the change in energy and the minimal
/// and maximal optimal subsets.
fn best_move<T: Real>(
    prob: &StepProblem<'_, T>,
    pw: &Pairwise<'_, T>,
    pairs: &[(usize, usize, Option<usize>, Option<usize>)],
    tops: &[u32],
    up: bool,
    stats: &mut SolverStats,
) -> (i64, Vec<bool>, Vec<bool>) {
    let cols = tops.len();
    let n = prob.prev.grid().n_levels() as i64;
    let sg: i64 = if up { 1 } else { -1 };
    let (s, t) = (cols, cols + 1);
    let mut g = FlowNetwork::new(cols + 2);
    let mut unary = vec![0i64; cols];
    let mut constant = 0i64;
    for c in 0..cols {
        let a = tops[c] as i64;
        if !(0..=n).contains(&(a + sg)) {
            g.add_arc(c, t, INF, 0);
            continue;
        }
        unary[c] += prob.column_cost(c, (a + sg) as usize) - prob.column_cost(c, a as usize);
    }
    for &(i, j, oij, oji) in pairs {
        let (a, b) = (tops[i] as i64, tops[j] as i64);
        let f = |xi: i64, xj: i64| pair_value(pw, oij, oji, a + sg * xi, b + sg * xj, 0);
        let (fa, fb, fc, fd) = (f(0, 0), f(0, 1), f(1, 0), f(1, 1));
        // fa + (fc − fa)x_i + (fd − fc)x_j + k(1 − x_i)x_j
        let k = fb + fc - fa - fd;
        debug_assert!(k >= 0, "difference forms give submodular moves");
        unary[i] += fc - fa;
        unary[j] += fd - fc;
        if k > 0 {
            g.add_arc(j, i, k, 0);
        }
    }
    constant += terminal_arcs(&mut g, &unary, s, t);
    let flow = g.max_flow(s, t);
    stats.absorb(&g);
    let mut lo = g.source_side(s);
    let mut hi = g.maximal_source_side(t);
    lo.truncate(cols);
    hi.truncate(cols);
    (constant + flow, lo, hi)
}

fn apply(tops: &mut [u32], set: &[bool], up: bool) {
    for (t, &b) in tops.iter_mut().zip(set) {
        if b {
            *t = if up { *t + 1 } else { *t - 1 };
        }
    }
}

/// Steepest descent on the L♮-convex top energy, then walks to the extremal minimizers
/// by repeatedly applying the largest zero-cost move.
fn column_descent<T: Real>(prob: &StepProblem<'_, T>, pw: &Pairwise<'_, T>, stats: &mut SolverStats) -> Result<(Vec<u32>, Vec<u32>)> {
    let pairs = column_pairs(pw);
    let mut tops = prob.prev.tops().to_vec();
    loop {
        stats.iterations += 1;
        let (vu, xu, _) = best_move(prob, pw, &pairs, &tops, true, stats);
        let (vd, xd, _) = best_move(prob, pw, &pairs, &tops, false, stats);
        if vu >= 0 && vd >= 0 {
            break;
        }
        if vu <= vd {
            apply(&mut tops, &xu, true);
        } else {
            apply(&mut tops, &xd, false);
        }
    }
    let mut extremal = |up: bool| -> Result<Vec<u32>> {
        let mut a = tops.clone();
        loop {
            stats.iterations += 1;
            let (v, _, x) = best_move(prob, pw, &pairs, &a, up, stats);
            if v != 0 {
                return Err(Error::NotCertified { gap: v.abs() as f64 * prob.functional.quantum(), tol: 0.0 });
            }
            if !x.iter().any(|&b| b) {
                return Ok(a);
            }
            apply(&mut a, &x, up);
        }
    };
    let minimal = extremal(false)?;
    let maximal = extremal(true)?;
    Ok((minimal, maximal))
}

/// Enumerates every monotone configuration (test oracle).
pub fn solve_step_exhaustive<T: Real>(prob: &StepProblem<'_, T>) -> Result<StepResult<T>> {
    let start = Instant::now();
    let g = prob.prev.grid();
    let cols = g.column_count();
    let n = g.n_levels() as u32;
    let count = (n as f64 + 1.0).powi(cols as i32);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::InstanceTooLarge(count));
    }
    let mut tops = vec![0u32; cols];
    let mut best = i64::MAX;
    let mut minimal = vec![n; cols];
    let mut maximal = vec![0u32; cols];
    let mut visited = 0usize;
    loop {
        visited += 1;
        let e = prob.energy_tops(&tops);
        if e < best {
            best = e;
            minimal.copy_from_slice(&tops);
            maximal.copy_from_slice(&tops);
        } else if e == best {
            for c in 0..cols {
                minimal[c] = minimal[c].min(tops[c]);
                maximal[c] = maximal[c].max(tops[c]);
            }
        }
        // odometer
        let mut c = 0;
        while c < cols && tops[c] == n {
            tops[c] = 0;
            c += 1;
        }
        if c == cols {
            break;
        }
        tops[c] += 1;
    }
    let stats = SolverStats {
        strategy: "exhaustive".into(),
        iterations: visited,
        wall_time_s: start.elapsed().as_secs_f64(),
        certified: true,
        ..Default::default()
    };
    prob.result(minimal, maximal, stats)
}

/// Controls of the generic submodular solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LovaszOptions {
    pub subgradient_iterations: usize,
    pub mnp_iterations: usize,
    /// Largest accepted duality gap relative to the functional's scale.
    pub relative_gap: f64,
}

impl Default for LovaszOptions {
    fn default() -> Self {
        Self { subgradient_iterations: 300, mnp_iterations: 5000, relative_gap: 1e-9 }
    }
}

/// Set energy on arbitrary cell subsets: the functional's generic extension, the
/// volume term, and a penalty on every vertical monotonicity break.
struct GenericEnergy<'p, 'a, T> {
    prob: &'p StepProblem<'a, T>,
    penalty: i64,
    tracker: std::cell::RefCell<crate::perimeter::MinkowskiTracker>,
}

impl<T: Real> GenericEnergy<'_, '_, T> {
    fn value(&self, occ: &[bool]) -> i64 {
        let g = self.prob.prev.grid();
        let n = g.n_levels();
        let base = self.prob.functional.minkowski_generic(occ).expect("generic extension exists");
        let mut e = base;
        for (i, &b) in occ.iter().enumerate() {
            if b {
                e += self.prob.unary_q[i];
            }
        }
        for c in 0..g.column_count() {
            for k in 0..n - 1 {
                if !occ[g.cell_index(c, k)] && occ[g.cell_index(c, k + 1)] {
                    e += self.penalty;
                }
            }
        }
        e
    }

    /// Greedy vertex of the base polytope for the order of increasing `w`.
    fn greedy(&self, w: &[f64]) -> Vec<f64> {
        let g = self.prob.prev.grid();
        let n = g.n_levels();
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
        let mut tracker = self.tracker.borrow_mut();
        tracker.reset();
        let mut occ = vec![false; w.len()];
        let mut q = vec![0.0; w.len()];
        for &i in &order {
            let before = tracker.energy();
            tracker.insert(i);
            let mut d = tracker.energy() - before + self.prob.unary_q[i];
            // monotonicity breaks with the cells just below and above
            let (c, k) = (i / n, i % n);
            debug_assert_eq!(g.cell_index(c, k), i);
            if k > 0 && !occ[i - 1] {
                d += self.penalty;
            }
            if k + 1 < n && occ[i + 1] {
                d -= self.penalty;
            }
            occ[i] = true;
            q[i] = d as f64;
        }
        q
    }
}

/// Decreasing isotonic regression (pool adjacent violators), clipped to `[0, 1]`.
fn project_decreasing(y: &mut [f64]) {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y.iter() {
        let mut cur = (v, 1usize);
        while let Some(&(m, w)) = blocks.last() {
            if m < cur.0 {
                let tot = w + cur.1;
                cur = ((m * w as f64 + cur.0 * cur.1 as f64) / tot as f64, tot);
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut i = 0;
    for (m, w) in blocks {
        for slot in &mut y[i..i + w] {
            *slot = m.clamp(0.0, 1.0);
        }
        i += w;
    }
}

/// Affine minimizer of the points: coefficients summing to one.
fn affine_minimizer(pts: &[Vec<f64>]) -> Vec<f64> {
    let k = pts.len();
    if k == 1 {
        return vec![1.0];
    }
    let p0 = &pts[0];
    let dirs: Vec<Vec<f64>> = pts[1..].iter().map(|p| p.iter().zip(p0).map(|(a, b)| a - b).collect()).collect();
    let m = k - 1;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut a = vec![vec![0.0; m + 1]; m];
    for i in 0..m {
        for j in 0..m {
            a[i][j] = dot(&dirs[i], &dirs[j]);
        }
        a[i][m] = -dot(&dirs[i], p0);
    }
    let ridge = 1e-14 * (0..m).map(|i| a[i][i]).fold(0.0, f64::max);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += ridge;
    }
    // Gaussian elimination with partial pivoting
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap_or(col);
        a.swap(col, piv);
        let d = a[col][col];
        if d == 0.0 {
            continue;
        }
        for r in (col + 1)..m {
            let f = a[r][col] / d;
            if f != 0.0 {
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut beta = vec![0.0; m];
    for i in (0..m).rev() {
        let mut v = a[i][m];
        for j in (i + 1)..m {
            v -= a[i][j] * beta[j];
        }
        beta[i] = if a[i][i] != 0.0 { v / a[i][i] } else { 0.0 };
    }
    let mut alpha = Vec::with_capacity(k);
    alpha.push(1.0 - beta.iter().sum::<f64>());
    alpha.extend(beta);
    alpha
}

fn combine(pts: &[Vec<f64>], lam: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; pts[0].len()];
    for (p, &l) in pts.iter().zip(lam) {
        for (xi, pi) in x.iter_mut().zip(p) {
            *xi += l * pi;
        }
    }
    x
}

/// Fujishige–Wolfe minimum-norm point of the base polytope.
fn min_norm_point<T: Real>(e: &GenericEnergy<'_, '_, T>, n: usize, max_iter: usize) -> (Vec<f64>, usize) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut pts = vec![e.greedy(&vec![0.0; n])];
    let mut lam = vec![1.0];
    let mut x = pts[0].clone();
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let q = e.greedy(&x);
        let xx = dot(&x, &x);
        if xx - dot(&x, &q) <= 1e-12 * xx.max(1.0) {
            break;
        }
        if pts.iter().any(|p| p == &q) {
            break;
        }
        pts.push(q);
        lam.push(0.0);
        loop {
            let alpha = affine_minimizer(&pts);
            if alpha.iter().all(|&a| a > 1e-14) {
                lam = alpha;
                x = combine(&pts, &lam);
                break;
            }
            let mut theta: f64 = 1.0;
            for (a, l) in alpha.iter().zip(&lam) {
                if *a <= 1e-14 && l - a > 0.0 {
                    theta = theta.min(l / (l - a));
                }
            }
            for (l, a) in lam.iter_mut().zip(&alpha) {
                *l = theta * a + (1.0 - theta) * *l;
            }
            let keep: Vec<bool> = lam.iter().map(|&l| l > 1e-14).collect();
            let mut i = 0;
            pts.retain(|_| {
                i += 1;
                keep[i - 1]
            });
            lam.retain(|&l| l > 1e-14);
            let s: f64 = lam.iter().sum();
            for l in lam.iter_mut() {
                *l /= s;
            }
            x = combine(&pts, &lam);
            if pts.len() == 1 {
                break;
            }
        }
    }
    (x, it)
}

/// Solves a step of a generic submodular functional: projected subgradient on the
/// monotone Lovász extension for candidates, and a minimum-norm-point certificate whose
/// sign pattern gives the extremal minimizers. A gap above the tolerance is reported in
/// `stats.certified`, not as an error.
pub fn solve_step_lovasz<T: Real>(prob: &StepProblem<'_, T>, opts: LovaszOptions) -> Result<StepResult<T>> {
    let start = Instant::now();
    let f = prob.functional;
    if f.capability() != SolverCapability::GenericSubmodular {
        return Err(param("kind", "the Lovász solver handles generic submodular functionals"));
    }
    let g = prob.prev.grid();
    let cells = g.cell_count();
    let n = g.n_levels();
    let cols = g.column_count();
    let zero = vec![false; cells];
    let full_unary: i64 = prob.unary_q.iter().map(|u| u.abs()).sum();
    let full = f.minkowski_generic(&vec![true; cells]).unwrap_or(0).max(f.minkowski_generic(&zero).unwrap_or(0));
    let penalty = 2 * full_unary + (cells as i64) * full.max(1) + 1;
    let tracker = std::cell::RefCell::new(f.minkowski_tracker().expect("generic functionals carry a Minkowski table"));
    let energy = GenericEnergy { prob, penalty, tracker };

    let tops_of = |x: &[f64], keep: &dyn Fn(f64) -> bool| -> Option<Vec<u32>> {
        let occ: Vec<bool> = x.iter().map(|&v| keep(v)).collect();
        SlabSet::from_occupancy(g.clone(), &occ).ok().map(|s| s.tops().to_vec())
    };
    let mut best_tops = prob.prev.tops().to_vec();
    let mut best = prob.energy_tops(&best_tops);
    let consider = |t: Vec<u32>, best: &mut i64, best_tops: &mut Vec<u32>| {
        let e = prob.energy_tops(&t);
        if e < *best {
            *best = e;
            *best_tops = t;
        }
    };

    // projected subgradient from the previous set
    let mut x: Vec<f64> = prob.prev.occupancy().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut step0 = 0.0;
    for it in 0..opts.subgradient_iterations {
        // subgradient of the Lovász extension: greedy in order of decreasing x
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let sgrad = energy.greedy(&neg);
        let norm = sgrad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        if it == 0 {
            step0 = 0.5 / norm;
        }
        let eta = step0 / ((it + 1) as f64).sqrt();
        for (xi, gi) in x.iter_mut().zip(&sgrad) {
            *xi -= eta * gi;
        }
        for c in 0..cols {
            project_decreasing(&mut x[c * n..(c + 1) * n]);
        }
        let mut levels: Vec<f64> = x.clone();
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        for &theta in &levels {
            if let Some(t) = tops_of(&x, &|v| v >= theta) {
                consider(t, &mut best, &mut best_tops);
            }
        }
    }

    // certificate
    let (xs, mnp_iters) = min_norm_point(&energy, cells, opts.mnp_iterations);
    let f_empty = energy.value(&zero) as f64;
    let lower = f_empty + xs.iter().map(|&v| v.min(0.0)).sum::<f64>();
    let mut order: Vec<f64> = xs.clone();
    order.sort_by(|a, b| a.total_cmp(b));
    order.dedup();
    // level sets {x* < θ}, from smallest to largest
    let mut thresholds: Vec<f64> = vec![f64::NEG_INFINITY];
    thresholds.extend(order.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);
    let mut level_sets = Vec::new();
    for &theta in &thresholds {
        if let Some(t) = tops_of(&xs, &|v| v < theta) {
            let e = prob.energy_tops(&t);
            consider(t.clone(), &mut best, &mut best_tops);
            level_sets.push((e, t));
        }
    }
    let gap = best as f64 - lower;
    let q = f.quantum();
    // integer energies: a gap below one quantum is a proof; otherwise accept the
    // declared tolerance, which absorbs round-off in the dual point
    let tol = (opts.relative_gap * f.scale()).max(q);
    let certified = gap * q < tol;
    let optimal: Vec<&Vec<u32>> = level_sets.iter().filter(|(e, _)| *e == best).map(|(_, t)| t).collect();
    let (minimal, maximal) = match (optimal.first(), optimal.last()) {
        (Some(a), Some(b)) => ((*a).clone(), (*b).clone()),
        _ => (best_tops.clone(), best_tops.clone()),
    };
    let stats = SolverStats {
        strategy: "lovasz".into(),
        iterations: opts.subgradient_iterations + mnp_iters,
        wall_time_s: start.elapsed().as_secs_f64(),
        certified,
        gap: gap.max(0.0) * q,
        ..Default::default()
    };
    prob.result(minimal, maximal, stats)
}

/// Dispatches on the functional's solver capability.
pub fn solve_step<T: Real>(prob: &StepProblem<'_, T>) -> Result<StepResult<T>> {
    match prob.functional.capability() {
        SolverCapability::Pairwise => solve_step_mincut(prob),
        SolverCapability::GenericSubmodular => solve_step_lovasz(prob, LovaszOptions::default()),
    }
}
