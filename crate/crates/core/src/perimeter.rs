//! Generalized perimeters on monotone slab sets.
//!
//! Each functional is reduced to integer tables in a fixed quantum, so energies are
//! exact integers and the step solvers minimize exactly; reported values are
//! `integer × quantum`. Pairwise functionals decompose over ordered column pairs:
//!
//! * kernel and sharp forms: `Φ_o(m)` of the top difference `m = a_j − a_i`;
//! * slab forms (Riesz, long part of the 0-perimeter): `C_o(a_i, a_j; r) + Ω(r − a_i)`
//!   with `r` the highest top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{build_slab_set, fat_neighborhood, translate_set, CellShift, HeightField, SlabSet, TorusGrid};
use crate::initial::{generate_initial, InitialSpec};
use crate::kernel::{KernelSpec, PowerKernel, SharpKernel, Window};
use crate::scalar::Real;
use crate::weights::{build_weights, f64_grid, precompute_kernel_weights, Need, PairwiseWeights, WeightOptions};

/// Quantum of the integer energies, relative to the functional's energy scale.
pub const QUANTUM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Kernel,
    SharpFractional,
    Riesz,
    ZeroFractional,
    Minkowski,
    Euclidean,
}

impl FunctionalKind {
    pub const ALL: [FunctionalKind; 6] = [
        FunctionalKind::Kernel,
        FunctionalKind::SharpFractional,
        FunctionalKind::Riesz,
        FunctionalKind::ZeroFractional,
        FunctionalKind::Minkowski,
        FunctionalKind::Euclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionalKind::Kernel => "kernel",
            FunctionalKind::SharpFractional => "sharp_fractional",
            FunctionalKind::Riesz => "riesz",
            FunctionalKind::ZeroFractional => "zero_fractional",
            FunctionalKind::Minkowski => "minkowski",
            FunctionalKind::Euclidean => "euclidean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn capability(self) -> SolverCapability {
        match self {
            FunctionalKind::Minkowski => SolverCapability::GenericSubmodular,
            _ => SolverCapability::Pairwise,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverCapability {
    Pairwise,
    GenericSubmodular,
}

/// Which parts of the 0-perimeter are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroParts {
    /// `𝒢⁰(E, E^c)`: kernel `‖ξ‖^{-d}` on `‖ξ‖ < 1`.
    pub short: bool,
    /// `lim 𝒬⁰`: kernel `‖ξ‖^{-d}` on `‖ξ‖ > 1`, slab form.
    pub long: bool,
}

impl ZeroParts {
    pub const BOTH: ZeroParts = ZeroParts { short: true, long: true };
}

/// Parameters selecting one perimeter.
#[derive(Clone, Debug)]
pub enum FunctionalSpec {
    Kernel(KernelSpec),
    SharpFractional { s: f64 },
    Riesz { alpha: f64 },
    ZeroFractional(ZeroParts),
    Minkowski { rho: f64 },
    Euclidean,
}

impl FunctionalSpec {
    pub fn kind(&self) -> FunctionalKind {
        match self {
            FunctionalSpec::Kernel(_) => FunctionalKind::Kernel,
            FunctionalSpec::SharpFractional { .. } => FunctionalKind::SharpFractional,
            FunctionalSpec::Riesz { .. } => FunctionalKind::Riesz,
            FunctionalSpec::ZeroFractional(_) => FunctionalKind::ZeroFractional,
            FunctionalSpec::Minkowski { .. } => FunctionalKind::Minkowski,
            FunctionalSpec::Euclidean => FunctionalKind::Euclidean,
        }
    }

    pub fn capability(&self) -> SolverCapability {
        self.kind().capability()
    }

    /// Checks the parameter ranges against a grid.
    pub fn validate<T: Real>(&self, grid: &TorusGrid<T>) -> Result<()> {
        let dim = grid.dim();
        match self {
            FunctionalSpec::Kernel(k) => k.validate(dim),
            FunctionalSpec::SharpFractional { s } => {
                if *s > 0.0 && *s < 1.0 {
                    Ok(())
                } else {
                    Err(param("s", format!("fractional order must lie in (0,1), got {s}")))
                }
            }
            FunctionalSpec::Riesz { alpha } => {
                let top = dim as f64 - 1.0;
                if *alpha > 0.0 && *alpha < top {
                    Ok(())
                } else {
                    Err(param("alpha", format!("Riesz order must lie in (0,{top}), got {alpha}")))
                }
            }
            FunctionalSpec::ZeroFractional(p) => {
                if p.short || p.long {
                    Ok(())
                } else {
                    Err(param("zero_parts", "at least one part must be enabled"))
                }
            }
            FunctionalSpec::Minkowski { rho } => {
                let min = grid.horizontal_step().f64().max(grid.vertical_step().f64());
                if *rho >= min && rho.is_finite() {
                    Ok(())
                } else {
                    Err(param("rho", format!("must be at least the grid resolution {min:e}, got {rho}")))
                }
            }
            FunctionalSpec::Euclidean => Ok(()),
        }
    }
}

/// `Φ_o(m)` rows, `m ∈ [−n, n]`, for offsets `o ≠ 0`.
#[derive(Clone, Debug)]
struct DiffTable {
    n: i64,
    rows: Vec<Vec<i64>>,
}

impl DiffTable {
    #[inline]
    fn at(&self, o: usize, m: i64) -> i64 {
        self.rows[o][(m + self.n) as usize]
    }
}

/// Suffix sums of one slab-form kernel: `S0(j) = Σ_{Δ≥j} w`, `S1(j) = Σ_{j≤Δ≤M} wΔ`
/// for `j ∈ [−n, n+1]`, and `ΩP(q) = Σ_{p=1}^{q} Ω(p)`.
#[derive(Clone, Debug)]
struct SlabTable {
    n: i64,
    s0: Vec<Vec<i64>>,
    s1: Vec<Vec<i64>>,
    omega_prefix: Vec<i64>,
}

impl SlabTable {
    #[inline]
    fn cross(&self, o: usize, a1: i64, a2: i64, r: i64) -> i64 {
        let n = self.n;
        let s0 = &self.s0[o];
        let s1 = &self.s1[o];
        let m = a2 - a1;
        let u = r - a1;
        let i = |j: i64| (j + n) as usize;
        (s1[i(m + 1)] - s1[i(u + 1)]) - m * (s0[i(m + 1)] - s0[i(u + 1)]) + (r - a2) * s0[i(u + 1)]
    }

    /// Same-column term: self interaction `C_0(a, a; r)` plus `ΩP(r − a)`.
    #[inline]
    fn column(&self, a: i64, r: i64) -> i64 {
        self.cross(0, a, a, r) + self.omega_prefix[(r - a) as usize]
    }
}

/// Ball–cube reach of the Minkowski pre-content: `reach[o]` is the largest `Δ ≥ 0` with
/// the cell at `(o, Δ)` meeting the closed `ρ`-ball around a cell center, or −1.
#[derive(Clone, Debug)]
struct MinkTable {
    reach: Vec<i64>,
    active: Vec<usize>,
    cell: i64,
}

/// Minkowski count of a growing cell set, updated one insertion at a time.
pub(crate) struct MinkowskiTracker {
    watchers: Vec<Vec<u32>>,
    size: Vec<u32>,
    full0: Vec<bool>,
    empty0: Vec<bool>,
    occ_in: Vec<u32>,
    count: i64,
    cell: i64,
}

impl MinkowskiTracker {
    fn mixed(&self, i: usize) -> bool {
        (self.occ_in[i] > 0 || self.full0[i]) && (self.occ_in[i] < self.size[i] || self.empty0[i])
    }

    /// Back to the empty set.
    pub(crate) fn reset(&mut self) {
        self.occ_in.iter_mut().for_each(|v| *v = 0);
        self.count = (0..self.size.len()).filter(|&i| self.mixed(i)).count() as i64;
    }

    pub(crate) fn energy(&self) -> i64 {
        self.count * self.cell
    }

    /// Inserts a cell that is not yet in the set.
    pub(crate) fn insert(&mut self, cell: usize) {
        for w in 0..self.watchers[cell].len() {
            let i = self.watchers[cell][w] as usize;
            let was = self.mixed(i);
            self.occ_in[i] += 1;
            self.count += self.mixed(i) as i64 - was as i64;
        }
    }
}

#[derive(Clone, Debug)]
struct Form {
    diff: Option<DiffTable>,
    slab: Option<SlabTable>,
    mink: Option<MinkTable>,
    /// Offsets `o ≠ 0` with a nonzero pair term.
    active: Vec<usize>,
    constant: i64,
}

/// A perimeter on a fixed grid, with its integer tables.
#[derive(Clone, Debug)]
pub struct PerimeterFunctional<T> {
    spec: FunctionalSpec,
    grid: TorusGrid<T>,
    quantum: f64,
    scale: f64,
    form: Form,
}

#[inline]
fn quantize(x: f64, q: f64) -> i64 {
    (x / q).round() as i64
}

/// Weights of one kernel rounded to the quantum.
struct QuantWeights {
    n: i64,
    w: Vec<Vec<i64>>,
    t0_up: Vec<i64>,
    t0_down: Vec<i64>,
    t1_up: Vec<i64>,
}

impl QuantWeights {
    fn new(w: &PairwiseWeights, q: f64) -> Self {
        let cols = w.grid().column_count();
        let n = w.window() as i64;
        Self {
            n,
            w: (0..cols).map(|o| w.row(o).iter().map(|&v| quantize(v, q)).collect()).collect(),
            t0_up: (0..cols).map(|o| quantize(w.tail0(o, true), q)).collect(),
            t0_down: (0..cols).map(|o| quantize(w.tail0(o, false), q)).collect(),
            t1_up: (0..cols).map(|o| quantize(w.tail1(o, true), q)).collect(),
        }
    }

    #[inline]
    fn at(&self, o: usize, d: i64) -> i64 {
        self.w[o][(d + self.n) as usize]
    }

    /// `Φ_o(m) = Σ_{Δ>m} w(o,Δ)(Δ − m)`; `renormalize` subtracts `Φ_o(0)` (and drops the
    /// first-moment tail, which cancels).
    fn diff_table(&self, levels: i64, renormalize: bool) -> DiffTable {
        let n = levels;
        let m_win = self.n;
        let rows = (0..self.w.len())
            .map(|o| {
                // suffix sums over Δ ∈ [j, M]
                let mut s0 = vec![0i64; (2 * m_win + 3) as usize];
                let mut s1 = vec![0i64; (2 * m_win + 3) as usize];
                for d in (-m_win..=m_win).rev() {
                    let i = (d + m_win) as usize;
                    s0[i] = s0[i + 1] + self.at(o, d);
                    s1[i] = s1[i + 1] + self.at(o, d) * d;
                }
                let sfx = |v: &Vec<i64>, j: i64| v[(j.clamp(-m_win, m_win + 1) + m_win) as usize];
                let t0 = self.t0_up[o];
                let t1 = if renormalize { 0 } else { self.t1_up[o] };
                let phi = |m: i64| sfx(&s1, m + 1) - m * sfx(&s0, m + 1) + t1 - m * t0;
                let base = if renormalize { phi(0) } else { 0 };
                (-n..=n).map(|m| phi(m) - base).collect()
            })
            .collect();
        DiffTable { n, rows }
    }

    fn slab_table(&self, levels: i64) -> SlabTable {
        let n = levels;
        let m_win = self.n;
        assert!(m_win >= n, "slab form needs the window to cover the slab");
        let len = (2 * n + 2) as usize;
        let mut s0 = Vec::with_capacity(self.w.len());
        let mut s1 = Vec::with_capacity(self.w.len());
        for o in 0..self.w.len() {
            let mut a0 = vec![0i64; len];
            let mut a1 = vec![0i64; len];
            // index j + n for j ∈ [−n, n+1]; beyond n only the tail remains
            let mut acc0: i64 = self.t0_up[o] + (n + 1..=m_win).map(|d| self.at(o, d)).sum::<i64>();
            let mut acc1: i64 = 0;
            a0[len - 1] = acc0;
            a1[len - 1] = acc1;
            for j in (-n..=n).rev() {
                acc0 += self.at(o, j);
                acc1 += self.at(o, j) * j;
                a0[(j + n) as usize] = acc0;
                a1[(j + n) as usize] = acc1;
            }
            s0.push(a0);
            s1.push(a1);
        }
        // Ω(q) = Σ_o [T0⁻ + Σ_{−M≤Δ<q} w(o,Δ)]
        let mut omega_prefix = vec![0i64; (n + 1) as usize];
        for qv in 1..=n {
            let mut om = 0i64;
            for o in 0..self.w.len() {
                om += self.t0_down[o];
                om += (-m_win..qv).map(|d| self.at(o, d)).sum::<i64>();
            }
            omega_prefix[qv as usize] = omega_prefix[(qv - 1) as usize] + om;
        }
        SlabTable { n, s0, s1, omega_prefix }
    }
}

/// Flat in-window interaction `Σ_c Σ_o Σ_{0<Δ≤M} w(o,Δ)Δ`.
fn flat_interaction(w: &PairwiseWeights) -> f64 {
    let m = w.window() as i64;
    let cols = w.grid().column_count();
    let per: f64 = (0..cols).map(|o| (1..=m).map(|d| w.weight(o, d) * d as f64).sum::<f64>()).sum();
    per * cols as f64
}

fn active_offsets(cols: usize, nonzero: impl Fn(usize) -> bool) -> Vec<usize> {
    (1..cols).filter(|&o| nonzero(o)).collect()
}

impl<T: Real> PerimeterFunctional<T> {
    /// Builds the integer tables of `spec` on `grid` (computing weights as needed).
    pub fn new(spec: FunctionalSpec, grid: &TorusGrid<T>, opts: WeightOptions) -> Result<Self> {
        spec.validate(grid)?;
        let g = f64_grid(grid);
        let dim = g.dim();
        let n = g.n_levels();
        match &spec {
            FunctionalSpec::Kernel(k) => {
                let w = precompute_kernel_weights(k, &g, opts)?;
                Self::from_kernel_weights(spec.clone(), grid, &w)
            }
            FunctionalSpec::SharpFractional { s } => {
                let kernel = SharpKernel { dim, s: *s };
                let w = build_weights(&kernel, &g, n, Need { self_weight: false, first_moment: false }, opts, format!("sharp {s:e}"))?;
                let scale = flat_interaction(&w);
                let q = QUANTUM * scale;
                let qw = QuantWeights::new(&w, q);
                let diff = qw.diff_table(n as i64, true);
                let active = active_offsets(g.column_count(), |o| diff.rows[o].iter().any(|&v| v != 0));
                let form = Form { diff: Some(diff), slab: None, mink: None, active, constant: 0 };
                Ok(Self { spec, grid: grid.clone(), quantum: q, scale, form })
            }
            FunctionalSpec::Riesz { alpha } => {
                let kernel = PowerKernel { dim, exponent: dim as f64 - alpha, window: Window::All };
                let w = build_weights(&kernel, &g, n, Need { self_weight: true, first_moment: false }, opts, format!("riesz {alpha:e}"))?;
                let scale = flat_interaction(&w);
                let q = QUANTUM * scale;
                let slab = QuantWeights::new(&w, q).slab_table(n as i64);
                let active = (1..g.column_count()).collect();
                let form = Form { diff: None, slab: Some(slab), mink: None, active, constant: 0 };
                Ok(Self { spec, grid: grid.clone(), quantum: q, scale, form })
            }
            FunctionalSpec::ZeroFractional(parts) => {
                let d = dim as f64;
                let short_w = if parts.short {
                    let k = PowerKernel { dim, exponent: d, window: Window::Inside(1.0) };
                    Some(build_weights(&k, &g, n, Need { self_weight: false, first_moment: true }, opts, "zero-short".into())?)
                } else {
                    None
                };
                let long_w = if parts.long {
                    let k = PowerKernel { dim, exponent: d, window: Window::Outside(1.0) };
                    Some(build_weights(&k, &g, n, Need { self_weight: true, first_moment: false }, opts, "zero-long".into())?)
                } else {
                    None
                };
                // one quantum for both parts so that their sum stays exact
                let scale = zero_scale(short_w.as_ref(), long_w.as_ref());
                let q = QUANTUM * scale;
                let mut constant = 0;
                let diff = short_w.as_ref().map(|w| {
                    let t = QuantWeights::new(w, q).diff_table(n as i64, false);
                    constant = t.at(0, 0) * g.column_count() as i64;
                    t
                });
                let slab = long_w.as_ref().map(|w| QuantWeights::new(w, q).slab_table(n as i64));
                let active = if slab.is_some() {
                    (1..g.column_count()).collect()
                } else {
                    let t = diff.as_ref().expect("one part is enabled");
                    active_offsets(g.column_count(), |o| t.rows[o].iter().any(|&v| v != 0))
                };
                let form = Form { diff, slab, mink: None, active, constant };
                Ok(Self { spec, grid: grid.clone(), quantum: q, scale, form })
            }
            FunctionalSpec::Minkowski { rho } => {
                let q = QUANTUM;
                let vs = g.vertical_step();
                let reach: Vec<i64> = (0..g.column_count())
                    .map(|o| {
                        let gap = g.footprint_gap_sq(o);
                        if gap > rho * rho {
                            return -1;
                        }
                        let v = (rho * rho - gap).sqrt();
                        // largest Δ with (Δ − ½)δ_v ≤ v
                        let mut d = (v / vs + 0.5).floor() as i64;
                        while d > 0 && ((d as f64 - 0.5) * vs).powi(2) + gap > rho * rho {
                            d -= 1;
                        }
                        while (((d + 1) as f64 - 0.5) * vs).powi(2) + gap <= rho * rho {
                            d += 1;
                        }
                        d
                    })
                    .collect();
                let active: Vec<usize> = (0..g.column_count()).filter(|&o| reach[o] >= 0).collect();
                let cell = quantize(g.cell_volume() / (2.0 * rho), q);
                let form = Form { diff: None, slab: None, mink: Some(MinkTable { reach, active, cell }), active: vec![], constant: 0 };
                Ok(Self { spec, grid: grid.clone(), quantum: q, scale: 1.0, form })
            }
            FunctionalSpec::Euclidean => {
                let q = QUANTUM;
                let cols = g.column_count();
                let mut mult = vec![0u32; cols];
                for axis in 0..dim - 1 {
                    for s in [1usize, g.n_cols() - 1] {
                        let mut c = [0usize; 2];
                        c[axis] = s;
                        mult[g.column_from_coords(c)] += 1;
                    }
                }
                let face = g.vertical_step() * g.horizontal_step().powi(dim as i32 - 2);
                let nl = n as i64;
                let rows = (0..cols)
                    .map(|o| {
                        // quantize the unit cost so that rows stay exactly convex in m
                        let unit = quantize(mult[o] as f64 * face / 2.0, q);
                        (-nl..=nl).map(|m| unit * m.abs()).collect()
                    })
                    .collect();
                let diff = DiffTable { n: nl, rows };
                let active = active_offsets(cols, |o| mult[o] > 0);
                let form = Form { diff: Some(diff), slab: None, mink: None, active, constant: quantize(1.0, q) };
                Ok(Self { spec, grid: grid.clone(), quantum: q, scale: 1.0, form })
            }
        }
    }

    /// Kernel perimeter from a precomputed (possibly cached) weight table.
    pub fn from_kernel_weights(spec: FunctionalSpec, grid: &TorusGrid<T>, w: &PairwiseWeights) -> Result<Self> {
        if !matches!(spec, FunctionalSpec::Kernel(_)) {
            return Err(param("kind", "weight tables apply to the kernel perimeter only"));
        }
        let g = f64_grid(grid);
        g.ensure_same(w.grid())?;
        let cols = g.column_count();
        let flat: f64 = (0..cols)
            .map(|o| (1..=w.window() as i64).map(|d| w.weight(o, d) * d as f64).sum::<f64>() + w.tail1(o, true))
            .sum::<f64>()
            * cols as f64
            + w.tail_correction();
        let scale = flat;
        let q = QUANTUM * scale;
        let diff = QuantWeights::new(w, q).diff_table(g.n_levels() as i64, false);
        let constant = diff.at(0, 0) * cols as i64 + quantize(w.tail_correction(), q);
        let active = active_offsets(cols, |o| diff.rows[o].iter().any(|&v| v != 0));
        let form = Form { diff: Some(diff), slab: None, mink: None, active, constant };
        Ok(Self { spec, grid: grid.clone(), quantum: q, scale, form })
    }

    pub fn spec(&self) -> &FunctionalSpec {
        &self.spec
    }

    pub fn kind(&self) -> FunctionalKind {
        self.spec.kind()
    }

    pub fn capability(&self) -> SolverCapability {
        self.spec.capability()
    }

    pub fn grid(&self) -> &TorusGrid<T> {
        &self.grid
    }

    /// Size of one integer energy unit.
    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    /// Reference magnitude of the functional (flat in-window interaction for the
    /// nonlocal kernels, the torus area otherwise).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Integer energy of a set.
    pub fn energy_q(&self, set: &SlabSet<T>) -> Result<i64> {
        self.grid.ensure_same(set.grid())?;
        Ok(self.energy_tops(set.tops()))
    }

    /// `𝒫(S)` as `energy_q × quantum`.
    pub fn eval(&self, set: &SlabSet<T>) -> Result<T> {
        Ok(T::lit(self.energy_q(set)? as f64 * self.quantum))
    }

    pub fn eval_height(&self, f: &HeightField<T>) -> Result<T> {
        self.eval(&build_slab_set(f)?)
    }

    pub(crate) fn energy_tops(&self, tops: &[u32]) -> i64 {
        let f = &self.form;
        let mut e = f.constant;
        let cols = tops.len();
        let r = tops.iter().copied().max().unwrap_or(0) as i64;
        if let Some(d) = &f.diff {
            for (c1, &t1) in tops.iter().enumerate() {
                for &o in &f.active {
                    let t2 = tops[self.grid.shift_column(c1, o)];
                    e += d.at(o, t2 as i64 - t1 as i64);
                }
            }
        }
        if let Some(s) = &f.slab {
            for (c1, &t1) in tops.iter().enumerate() {
                e += s.column(t1 as i64, r);
                for &o in &f.active {
                    let t2 = tops[self.grid.shift_column(c1, o)];
                    e += s.cross(o, t1 as i64, t2 as i64, r);
                }
            }
        }
        if let Some(m) = &f.mink {
            e += m.cell * self.minkowski_count(m, tops) as i64;
        }
        debug_assert_eq!(cols, self.grid.column_count());
        e
    }

    fn minkowski_count(&self, m: &MinkTable, tops: &[u32]) -> usize {
        let n = self.grid.n_levels() as i64;
        let mut count = 0usize;
        for (c, &t) in tops.iter().enumerate() {
            let t = t as i64;
            let mut lo = i64::MAX;
            let mut hi = i64::MIN;
            for &o in &m.active {
                let tj = tops[self.grid.shift_column(c, o)] as i64;
                lo = lo.min(tj - m.reach[o]);
                hi = hi.max(tj + m.reach[o]);
            }
            count += (t - lo.clamp(0, t)) as usize;
            count += (hi.clamp(t, n) - t) as usize;
        }
        count
    }

    /// Minkowski count for an arbitrary (not necessarily monotone) occupancy: cells whose
    /// `ρ`-ball meets both the set and its complement. Out-of-slab space counts as
    /// occupied below and empty above.
    pub(crate) fn minkowski_generic(&self, occ: &[bool]) -> Option<i64> {
        let m = self.form.mink.as_ref()?;
        let g = &self.grid;
        let n = g.n_levels() as i64;
        let mut count = 0i64;
        for c in 0..g.column_count() {
            for k in 0..n {
                let mut full = false;
                let mut empty = false;
                for &o in &m.active {
                    let j = g.shift_column(c, o);
                    let reach = m.reach[o];
                    if k - reach < 0 {
                        full = true;
                    }
                    if k + reach >= n {
                        empty = true;
                    }
                    for l in (k - reach).max(0)..=(k + reach).min(n - 1) {
                        if occ[g.cell_index(j, l as usize)] {
                            full = true;
                        } else {
                            empty = true;
                        }
                    }
                    if full && empty {
                        break;
                    }
                }
                if full && empty {
                    count += 1;
                }
            }
        }
        Some(count * m.cell)
    }

    /// Incremental form of [`Self::minkowski_generic`] under cell insertions.
    pub(crate) fn minkowski_tracker(&self) -> Option<MinkowskiTracker> {
        let m = self.form.mink.as_ref()?;
        let g = &self.grid;
        let n = g.n_levels() as i64;
        let cells = g.cell_count();
        let mut watchers = vec![Vec::new(); cells];
        let mut size = vec![0u32; cells];
        let mut full0 = vec![false; cells];
        let mut empty0 = vec![false; cells];
        for c in 0..g.column_count() {
            for k in 0..n {
                let me = g.cell_index(c, k as usize);
                for &o in &m.active {
                    let j = g.shift_column(c, o);
                    let reach = m.reach[o];
                    full0[me] |= k - reach < 0;
                    empty0[me] |= k + reach >= n;
                    for l in (k - reach).max(0)..=(k + reach).min(n - 1) {
                        watchers[g.cell_index(j, l as usize)].push(me as u32);
                        size[me] += 1;
                    }
                }
            }
        }
        let mut t = MinkowskiTracker { watchers, size, full0, empty0, occ_in: vec![0; cells], count: 0, cell: m.cell };
        t.reset();
        Some(t)
    }

    /// Column-pair structure for the pairwise solvers; `None` for the Minkowski
    /// pre-content.
    pub(crate) fn pairwise(&self) -> Option<Pairwise<'_, T>> {
        if self.form.mink.is_some() {
            return None;
        }
        Some(Pairwise { p: self })
    }
}

fn zero_scale(short: Option<&PairwiseWeights>, long: Option<&PairwiseWeights>) -> f64 {
    let mut s = 0.0;
    if let Some(w) = short {
        let cols = w.grid().column_count();
        s += (0..cols).map(|o| w.tail1(o, true)).sum::<f64>() * cols as f64 + flat_interaction(w);
    }
    if let Some(w) = long {
        s += flat_interaction(w);
    }
    s
}

/// Ordered column-pair view of a pairwise functional at a fixed top bound `r`
/// (ignored by the difference forms).
pub(crate) struct Pairwise<'a, T> {
    p: &'a PerimeterFunctional<T>,
}

impl<T: Real> Pairwise<'_, T> {
    /// Whether the energy depends on the highest top (slab forms).
    pub fn uses_top(&self) -> bool {
        self.p.form.slab.is_some()
    }

    /// Whether every pair term is a convex function of the top difference, so the
    /// energy is L♮-convex in the tops.
    pub fn difference_form(&self) -> bool {
        self.p.form.slab.is_none()
    }

    pub fn active(&self) -> &[usize] {
        &self.p.form.active
    }

    pub fn constant(&self) -> i64 {
        self.p.form.constant
    }

    pub fn grid(&self) -> &TorusGrid<T> {
        &self.p.grid
    }

    /// Ordered pair term for column `i` (top `a`) and the column at offset `o` (top `b`).
    #[inline]
    pub fn pair(&self, o: usize, a: i64, b: i64, r: i64) -> i64 {
        let f = &self.p.form;
        let mut e = 0;
        if let Some(d) = &f.diff {
            e += d.at(o, b - a);
        }
        if let Some(s) = &f.slab {
            e += s.cross(o, a, b, r);
        }
        e
    }

    /// Same-column term.
    #[inline]
    pub fn column(&self, a: i64, r: i64) -> i64 {
        match &self.p.form.slab {
            Some(s) => s.column(a, r),
            None => 0,
        }
    }
}

/// Kernel perimeter summed directly in floating point from a weight table: the
/// double sum over occupied × empty cell pairs (with vertical tails) plus the
/// `r_cut` correction.
pub fn eval_kernel_perimeter<T: Real>(set: &SlabSet<T>, w: &PairwiseWeights) -> Result<T> {
    Ok(T::lit(kernel_pair_sum(set, w)? + w.tail_correction()))
}

/// The double sum of [`eval_kernel_perimeter`] without the `r_cut` correction.
pub fn kernel_pair_sum<T: Real>(set: &SlabSet<T>, w: &PairwiseWeights) -> Result<f64> {
    let g = f64_grid(set.grid());
    g.ensure_same(w.grid())?;
    let m_win = w.window() as i64;
    let tops = set.tops();
    let mut total = 0.0;
    for (c1, &t1) in tops.iter().enumerate() {
        for o in 0..g.column_count() {
            let t2 = tops[g.shift_column(c1, o)];
            let m = t2 as i64 - t1 as i64;
            let mut acc = w.tail1(o, true) - m as f64 * w.tail0(o, true);
            for d in (m + 1).max(-m_win)..=m_win {
                acc += w.weight(o, d) * (d - m) as f64;
            }
            total += acc;
        }
    }
    Ok(total)
}

/// Renormalized periodic fractional perimeter `𝒫^s_♯`.
pub fn eval_sharp_fractional<T: Real>(set: &SlabSet<T>, s: f64) -> Result<T> {
    PerimeterFunctional::new(FunctionalSpec::SharpFractional { s }, set.grid(), WeightOptions::default())?.eval(set)
}

/// Riesz perimeter `𝒫^α` (the `R → ∞` limit, evaluated in closed form).
pub fn eval_riesz<T: Real>(set: &SlabSet<T>, alpha: f64) -> Result<T> {
    PerimeterFunctional::new(FunctionalSpec::Riesz { alpha }, set.grid(), WeightOptions::default())?.eval(set)
}

/// 0-fractional perimeter with the selected parts.
pub fn eval_zero_fractional<T: Real>(set: &SlabSet<T>, parts: ZeroParts) -> Result<T> {
    PerimeterFunctional::new(FunctionalSpec::ZeroFractional(parts), set.grid(), WeightOptions::default())?.eval(set)
}

/// Minkowski pre-content `(1/2ρ) |{x : |sdist(x)| ≤ ρ}|` over the slab cells.
pub fn eval_minkowski<T: Real>(set: &SlabSet<T>, rho: T) -> Result<T> {
    FunctionalSpec::Minkowski { rho: rho.f64() }.validate(set.grid())?;
    let mask = fat_neighborhood(set, rho)?;
    Ok(mask.volume() / (T::lit(2.0) * rho))
}

/// Graph area `∫ √(1 + |∇f|²)` with fourth-order centered periodic differences and the
/// (periodic) trapezoid rule.
pub fn eval_euclidean<T: Real>(f: &HeightField<T>) -> T {
    let g = f.grid();
    let n = g.n_cols();
    let h = g.horizontal_step();
    let v = f.values();
    let twelve_h = T::lit(12.0) * h;
    let deriv = |c: usize, axis: usize| -> T {
        let [a, b] = g.column_coords(c);
        let at = |s: i64| -> T {
            let mut co = [a, b];
            co[axis] = (co[axis] as i64 + s).rem_euclid(n as i64) as usize;
            v[g.column_from_coords(co)]
        };
        (at(-2) - T::lit(8.0) * at(-1) + T::lit(8.0) * at(1) - at(2)) / twelve_h
    };
    let area: T = (0..g.column_count())
        .map(|c| {
            let mut s = T::one();
            for axis in 0..g.dim() - 1 {
                let d = deriv(c, axis);
                s = s + d * d;
            }
            s.sqrt()
        })
        .sum();
    area * g.column_area()
}

/// Outcome of sampling the submodularity inequality.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SubmodularityReport {
    pub pairs: usize,
    /// Largest `𝒫(E∪F) + 𝒫(E∩F) − 𝒫(E) − 𝒫(F)` (energy units; ≤ 0 means no violation).
    pub max_violation: f64,
    pub max_violation_rel: f64,
}

fn random_field<T: Real>(grid: &TorusGrid<T>, rng: &mut ChaCha8Rng) -> Result<HeightField<T>> {
    let r = grid.half_height().f64();
    let amplitude = r * rng.gen_range(0.1..0.6);
    let lipschitz = rng.gen_range(0.3..3.0);
    generate_initial(&InitialSpec::RandomLipschitz { amplitude, lipschitz, seed: rng.gen() }, grid, None)
}

/// Samples random Lipschitz subgraph pairs and evaluates the four-term inequality
/// (union and intersection are pointwise max and min of the tops).
pub fn check_submodularity<T: Real>(p: &PerimeterFunctional<T>, n_pairs: usize, seed: u64) -> Result<SubmodularityReport> {
    if n_pairs == 0 {
        return Err(param("n_pairs", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = i64::MIN;
    for _ in 0..n_pairs {
        let e = build_slab_set(&random_field(p.grid(), &mut rng)?)?;
        let f = build_slab_set(&random_field(p.grid(), &mut rng)?)?;
        let v = p.energy_q(&e.union(&f)?)? + p.energy_q(&e.intersection(&f)?)? - p.energy_q(&e)? - p.energy_q(&f)?;
        worst = worst.max(v);
    }
    let max_violation = worst as f64 * p.quantum();
    Ok(SubmodularityReport { pairs: n_pairs, max_violation, max_violation_rel: max_violation / p.scale() })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TranslationReport {
    pub shifts: usize,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
}

/// Largest deviation of `𝒫(S + τ)` from `𝒫(S)` over grid-aligned shifts.
pub fn check_translation_invariance<T: Real>(
    p: &PerimeterFunctional<T>,
    set: &SlabSet<T>,
    shifts: &[CellShift],
) -> Result<TranslationReport> {
    let base = p.energy_q(set)?;
    let mut worst = 0i64;
    for &s in shifts {
        let moved = translate_set(set, s)?;
        worst = worst.max((p.energy_q(&moved)? - base).abs());
    }
    let abs = worst as f64 * p.quantum();
    let denom = (base.abs() as f64 * p.quantum()).max(p.scale() * QUANTUM);
    Ok(TranslationReport { shifts: shifts.len(), max_abs_deviation: abs, max_rel_deviation: abs / denom })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct HalfspaceReport {
    pub competitors: usize,
    pub halfspace_value: f64,
    pub min_competitor_value: f64,
    /// Largest `𝒫(H) − 𝒫(F)` (≤ 0 when the halfspace wins).
    pub max_excess: f64,
}

/// Compares `𝒫` of the halfspace through the slab center against random Lipschitz
/// competitors, all evaluated in the integer tables.
pub fn check_halfspace_minimality<T: Real>(p: &PerimeterFunctional<T>, competitors: usize, seed: u64) -> Result<HalfspaceReport> {
    let grid = p.grid();
    let h = SlabSet::halfspace(grid.clone(), (grid.n_levels() / 2) as u32)?;
    let hv = p.energy_q(&h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_c = i64::MAX;
    for _ in 0..competitors {
        let f = build_slab_set(&random_field(grid, &mut rng)?)?;
        min_c = min_c.min(p.energy_q(&f)?);
    }
    let q = p.quantum();
    Ok(HalfspaceReport {
        competitors,
        halfspace_value: hv as f64 * q,
        min_competitor_value: min_c as f64 * q,
        max_excess: (hv - min_c) as f64 * q,
    })
}

/// Error used when a solver needs pair terms that a functional does not have.
pub(crate) fn not_pairwise(kind: FunctionalKind) -> Error {
    Error::NotPairwise(kind.name())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{height_of, HeightField};
    use crate::kernel::Kernel;
    use num_bigint::BigInt;
    use num_rational::BigRational;

    fn grid(n_cols: usize, n_levels: usize, r: f64) -> TorusGrid<f64> {
        TorusGrid::new(2, n_cols, n_levels, r).unwrap()
    }

    fn random_set(g: &TorusGrid<f64>, seed: u64) -> SlabSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        build_slab_set(&random_field(g, &mut rng).unwrap()).unwrap()
    }

    fn step_set(g: &TorusGrid<f64>, low: u32, high: u32) -> SlabSet<f64> {
        let half = g.column_count() / 2;
        let tops = (0..g.column_count()).map(|c| if c < half { low } else { high }).collect();
        SlabSet::from_tops(g.clone(), tops).unwrap()
    }

    fn all_specs(g: &TorusGrid<f64>) -> Vec<FunctionalSpec> {
        vec![
            FunctionalSpec::Kernel(KernelSpec::fractional(2, 0.5)),
            FunctionalSpec::SharpFractional { s: 0.5 },
            FunctionalSpec::Riesz { alpha: 0.5 },
            FunctionalSpec::ZeroFractional(ZeroParts::BOTH),
            FunctionalSpec::Minkowski { rho: 2.0 * g.vertical_step().max(g.horizontal_step()) },
            FunctionalSpec::Euclidean,
        ]
    }

    /// Occupied × empty cell pairs over a depth range wide enough to hold every
    /// in-window pair, plus the table's tails beyond the window.
    fn double_sum(set: &SlabSet<f64>, w: &PairwiseWeights) -> f64 {
        let g = set.grid();
        let n = g.n_levels() as i64;
        let m = w.window() as i64;
        let mut total = 0.0;
        for c1 in 0..g.column_count() {
            for c2 in 0..g.column_count() {
                let o = g.column_offset(c1, c2);
                let (a, b) = (set.tops()[c1] as i64, set.tops()[c2] as i64);
                for k1 in -m..a {
                    for k2 in b..n + m {
                        let d = k2 - k1;
                        if d <= m {
                            total += w.weight(o, d);
                        }
                    }
                }
                total += w.tail1(o, true) - (b - a) as f64 * w.tail0(o, true);
            }
        }
        total
    }

    #[test]
    fn kernel_matches_double_sum() {
        let g = grid(8, 8, 1.0);
        let spec = KernelSpec::fractional(2, 0.5);
        let w = precompute_kernel_weights(&spec, &g, WeightOptions::default()).unwrap();
        let p = PerimeterFunctional::new(FunctionalSpec::Kernel(spec), &g, WeightOptions::default()).unwrap();
        for seed in 0..4 {
            let set = random_set(&g, seed);
            let oracle = double_sum(&set, &w);
            let direct = eval_kernel_perimeter(&set, &w).unwrap();
            let exact = p.eval(&set).unwrap();
            assert!((direct - oracle).abs() <= 1e-12 * oracle, "{direct} {oracle}");
            assert!((exact - oracle).abs() <= 1e-9 * oracle, "{exact} {oracle}");
        }
    }

    #[test]
    fn kernel_halfspace_level_independent() {
        let g = grid(8, 8, 1.0);
        let p = PerimeterFunctional::new(FunctionalSpec::Kernel(KernelSpec::fractional(2, 0.5)), &g, WeightOptions::default()).unwrap();
        let v: Vec<i64> = (0..=8).map(|l| p.energy_q(&SlabSet::halfspace(g.clone(), l).unwrap()).unwrap()).collect();
        assert!(v.iter().all(|&x| x == v[0] && x > 0));
    }

    #[test]
    fn r_cut_converges_from_below() {
        let g = grid(8, 8, 1.0);
        let set = random_set(&g, 7);
        // in-window double sum: the full pair sum without the vertical tails
        let full = {
            let w = precompute_kernel_weights(&KernelSpec::fractional(2, 0.5), &g, WeightOptions::default()).unwrap();
            let mut tails = 0.0;
            for (c1, &t1) in set.tops().iter().enumerate() {
                for o in 0..g.column_count() {
                    let m = set.tops()[g.shift_column(c1, o)] as f64 - t1 as f64;
                    tails += w.tail1(o, true) - m * w.tail0(o, true);
                }
            }
            kernel_pair_sum(&set, &w).unwrap() - tails
        };
        let mut prev = 0.0;
        // the largest center distance inside the window is below 2.1
        for r in [0.5, 0.75, 1.0, 1.5, 2.2] {
            let mut spec = KernelSpec::fractional(2, 0.5);
            spec.r_cut = Some(r);
            let w = precompute_kernel_weights(&spec, &g, WeightOptions::default()).unwrap();
            let v = kernel_pair_sum(&set, &w).unwrap();
            assert!(v > prev && v <= full * (1.0 + 1e-12), "r_cut {r}: {v} vs {prev}, full {full}");
            prev = v;
        }
        assert!((full - prev).abs() <= 1e-12 * full);
    }

    #[test]
    fn sharp_vanishes_on_halfspaces_and_matches_truncated_sum() {
        let g = grid(8, 8, 1.0);
        let p = PerimeterFunctional::new(FunctionalSpec::SharpFractional { s: 0.5 }, &g, WeightOptions::default()).unwrap();
        for l in 0..=8 {
            assert_eq!(p.energy_q(&SlabSet::halfspace(g.clone(), l).unwrap()).unwrap(), 0);
        }
        // pairwise sums of χ_E χ_{E^c} − χ_H χ_{H^c} with H at each column's own top,
        // cells to a depth where the remaining tail is below the tolerance
        let depth = 400i64;
        let kernel = SharpKernel { dim: 2, s: 0.5 };
        let need = Need { self_weight: false, first_moment: false };
        let w = build_weights(&kernel, &g, depth as usize, need, WeightOptions::default(), "oracle".into()).unwrap();
        let f = HeightField::from_fn(g.clone(), 0.2 * std::f64::consts::TAU, |[x, _]| 0.2 * (std::f64::consts::TAU * x).sin()).unwrap();
        let set = build_slab_set(&f).unwrap();
        let mut oracle = 0.0;
        for c1 in 0..8 {
            for c2 in 0..8 {
                let o = g.column_offset(c1, c2);
                let m = set.tops()[c2] as i64 - set.tops()[c1] as i64;
                for d in -depth..=depth {
                    oracle += w.weight(o, d) * ((d - m).max(0) - d.max(0)) as f64;
                }
            }
        }
        let v = p.eval(&set).unwrap();
        assert!((v - oracle).abs() <= 1e-4 * oracle.abs(), "{v} {oracle}");
        let shifted = translate_set(&set, CellShift::new([1, 0], 0)).unwrap();
        assert_eq!(p.energy_q(&shifted).unwrap(), p.energy_q(&set).unwrap());
    }

    /// `2J(E∩S, E^c∩S) + J(E^c∩S, E^c∩S)` on `S = (−depth, r)` in cells.
    fn slab_sum(set: &SlabSet<f64>, w: &PairwiseWeights, depth: i64) -> f64 {
        let g = set.grid();
        let cols = g.column_count();
        let r = set.max_top() as i64;
        let mut total = 0.0;
        for c2 in 0..cols {
            for k2 in set.tops()[c2] as i64..r {
                for c1 in 0..cols {
                    let o = g.column_offset(c1, c2);
                    for k1 in -depth..set.tops()[c1] as i64 {
                        total += 2.0 * w.weight(o, k2 - k1);
                    }
                    for k1 in set.tops()[c1] as i64..r {
                        total += w.weight(o, k2 - k1);
                    }
                }
            }
        }
        total
    }

    /// Extrapolates `V(D) = V∞ + a D^{-p} + b D^{-p-1}` from depths `D, 4D, 16D`.
    fn richardson(v: [f64; 3], d: [f64; 3], p: f64) -> f64 {
        let mut a = [[0.0; 4]; 3];
        for i in 0..3 {
            a[i] = [1.0, d[i].powf(-p), d[i].powf(-p - 1.0), v[i]];
        }
        for col in 0..3 {
            for r in (col + 1)..3 {
                let f = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
        let mut x = [0.0; 3];
        for i in (0..3).rev() {
            let mut s = a[i][3];
            for j in (i + 1)..3 {
                s -= a[i][j] * x[j];
            }
            x[i] = s / a[i][i];
        }
        x[0]
    }

    fn slab_oracle(kernel: &dyn Kernel, set: &SlabSet<f64>, p: f64) -> f64 {
        let g = set.grid();
        let n = g.n_levels() as i64;
        let base = 32i64;
        let depths = [base, 4 * base, 16 * base];
        let need = Need { self_weight: true, first_moment: false };
        let w = build_weights(kernel, g, (16 * base + n) as usize, need, WeightOptions::default(), "oracle".into()).unwrap();
        let vals = depths.map(|d| slab_sum(set, &w, d));
        // depth measured from the slab bottom in length units
        let lengths = depths.map(|d| (d as f64) * g.vertical_step());
        richardson(vals, lengths, p)
    }

    #[test]
    fn riesz_matches_extrapolated_slab_sum() {
        let g = grid(8, 8, 1.0);
        let p = PerimeterFunctional::new(FunctionalSpec::Riesz { alpha: 0.5 }, &g, WeightOptions::default()).unwrap();
        for l in 0..=8 {
            assert_eq!(p.energy_q(&SlabSet::halfspace(g.clone(), l).unwrap()).unwrap(), 0);
        }
        let set = step_set(&g, 3, 5);
        let kernel = PowerKernel { dim: 2, exponent: 1.5, window: Window::All };
        let oracle = slab_oracle(&kernel, &set, 0.5);
        let v = p.eval(&set).unwrap();
        assert!((v - oracle).abs() <= 1e-4 * oracle, "{v} {oracle}");
        for seed in 0..5 {
            assert!(p.energy_q(&random_set(&g, seed)).unwrap() >= 0);
        }
    }

    #[test]
    fn zero_fractional_parts() {
        let g = grid(8, 8, 1.0);
        let set = step_set(&g, 3, 5);
        let build = |parts| PerimeterFunctional::new(FunctionalSpec::ZeroFractional(parts), &g, WeightOptions::default()).unwrap();
        let both = build(ZeroParts::BOTH);
        let short = build(ZeroParts { short: true, long: false });
        let long = build(ZeroParts { short: false, long: true });
        let sum = short.eval(&set).unwrap() + long.eval(&set).unwrap();
        assert!((both.eval(&set).unwrap() - sum).abs() <= 1e-10 * sum);
        let h = SlabSet::halfspace(g.clone(), 4).unwrap();
        assert_eq!(long.energy_q(&h).unwrap(), 0);
        assert!(short.eval(&h).unwrap() > 0.0);

        let d = 2.0;
        let sw = build_weights(
            &PowerKernel { dim: 2, exponent: d, window: Window::Inside(1.0) },
            &g,
            8,
            Need { self_weight: false, first_moment: true },
            WeightOptions::default(),
            "oracle".into(),
        )
        .unwrap();
        let short_oracle = double_sum(&set, &sw);
        assert!((short.eval(&set).unwrap() - short_oracle).abs() <= 1e-9 * short_oracle);
        let lk = PowerKernel { dim: 2, exponent: d, window: Window::Outside(1.0) };
        let long_oracle = slab_oracle(&lk, &set, 1.0);
        let lv = long.eval(&set).unwrap();
        assert!((lv - long_oracle).abs() <= 1e-4 * long_oracle, "{lv} {long_oracle}");
    }

    #[test]
    fn minkowski_routes_agree() {
        let g = grid(16, 16, 1.0);
        for rho in [0.125, 0.2, 0.3] {
            let p = PerimeterFunctional::new(FunctionalSpec::Minkowski { rho }, &g, WeightOptions::default()).unwrap();
            for seed in 0..6 {
                let set = random_set(&g, seed);
                let generic = p.minkowski_generic(&set.occupancy()).unwrap();
                assert_eq!(generic, p.energy_q(&set).unwrap());
                let fat = eval_minkowski(&set, rho).unwrap();
                assert!((fat - p.eval(&set).unwrap()).abs() <= 1e-9, "rho {rho}");
            }
            let h = SlabSet::halfspace(g.clone(), 8).unwrap();
            assert!((eval_minkowski(&h, rho).unwrap() - 1.0).abs() <= g.vertical_step() / rho);
        }
    }

    #[test]
    fn minkowski_tracker_follows_insertions() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let g = grid(6, 10, 1.0);
        let p = PerimeterFunctional::new(FunctionalSpec::Minkowski { rho: 0.3 }, &g, WeightOptions::default()).unwrap();
        let mut t = p.minkowski_tracker().unwrap();
        let mut order: Vec<usize> = (0..g.cell_count()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let mut occ = vec![false; g.cell_count()];
        assert_eq!(t.energy(), p.minkowski_generic(&occ).unwrap());
        for i in order {
            t.insert(i);
            occ[i] = true;
            assert_eq!(t.energy(), p.minkowski_generic(&occ).unwrap());
        }
    }

    #[test]
    fn minkowski_rejects_subgrid_radius() {
        let g = grid(16, 16, 1.0);
        let h = SlabSet::halfspace(g.clone(), 8).unwrap();
        assert!(eval_minkowski(&h, 0.05).is_err());
    }

    /// Adaptive Simpson on `[a, b]`.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
    }

    #[test]
    fn euclidean_matches_quadrature() {
        let g = grid(256, 16, 1.0);
        let tau = std::f64::consts::TAU;
        let f = HeightField::from_fn(g.clone(), 0.2 * tau, |[x, _]| 0.2 * (tau * x).sin()).unwrap();
        let oracle = simpson(&|x| (1.0 + (0.2 * tau * (tau * x).cos()).powi(2)).sqrt(), 0.0, 1.0, 1e-13);
        assert!((eval_euclidean(&f) - oracle).abs() < 1e-6);
        let flat = HeightField::constant(g, 0.3).unwrap();
        assert!((eval_euclidean(&flat) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn halfspace_beats_competitors() {
        let g = grid(16, 16, 1.0);
        for spec in all_specs(&g) {
            let p = PerimeterFunctional::new(spec, &g, WeightOptions::default()).unwrap();
            let rep = check_halfspace_minimality(&p, 100, 1).unwrap();
            assert!(rep.max_excess <= 1e-6 * p.scale(), "{:?}: {rep:?}", p.kind());
        }
    }

    #[test]
    fn submodular_and_translation_invariant() {
        let g = grid(16, 16, 1.0);
        for spec in all_specs(&g) {
            let p = PerimeterFunctional::new(spec, &g, WeightOptions::default()).unwrap();
            let rep = check_submodularity(&p, 200, 2).unwrap();
            assert!(rep.max_violation <= 0.0, "{:?}: {rep:?}", p.kind());
            let set = random_set(&g, 4);
            let period = CellShift::new([16, 0], 0);
            let t = check_translation_invariance(&p, &set, &[period, CellShift::new([1, 0], 0)]).unwrap();
            assert_eq!(t.max_abs_deviation, 0.0, "{:?}", p.kind());
        }
    }

    #[test]
    fn submodularity_exact_resummation() {
        let g = grid(8, 8, 1.0);
        let w = precompute_kernel_weights(&KernelSpec::fractional(2, 0.5), &g, WeightOptions::default()).unwrap();
        let exact = |set: &SlabSet<f64>| -> BigRational {
            let m = w.window() as i64;
            let r = |x: f64| BigRational::from_float(x).unwrap();
            let mut total = BigRational::from_integer(BigInt::from(0));
            for (c1, &t1) in set.tops().iter().enumerate() {
                for o in 0..g.column_count() {
                    let t2 = set.tops()[g.shift_column(c1, o)];
                    let mm = t2 as i64 - t1 as i64;
                    total += r(w.tail1(o, true)) - r(w.tail0(o, true)) * BigRational::from_integer(mm.into());
                    for d in (mm + 1).max(-m)..=m {
                        total += r(w.weight(o, d)) * BigRational::from_integer((d - mm).into());
                    }
                }
            }
            total
        };
        let e = random_set(&g, 21);
        let f = random_set(&g, 22);
        let lhs = exact(&e.union(&f).unwrap()) + exact(&e.intersection(&f).unwrap());
        let rhs = exact(&e) + exact(&f);
        assert!(lhs <= rhs);
    }

    #[test]
    fn heights_round_trip_through_evaluators() {
        let g = grid(8, 8, 1.0);
        let set = random_set(&g, 3);
        let p = PerimeterFunctional::new(FunctionalSpec::Euclidean, &g, WeightOptions::default()).unwrap();
        assert_eq!(p.eval_height(&height_of(&set)).unwrap(), p.eval(&set).unwrap());
    }
}
