//! Cell-pair interaction weights `w(o, Δ) = ∬_{cell × cell'} K(x − y)` and their
//! vertical tails, on a fixed grid.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::kernel::{torus_norm, wrap, Kernel, KernelSpec, SpecKernel};
use crate::quadrature::{integrate_corner, integrate_regular, semi_infinite_by, Cube, Singularities};
use crate::scalar::Real;

/// Quadrature controls for weight tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightOptions {
    /// Cap on the per-axis Gauss–Legendre order of each graded sub-box.
    pub max_order: usize,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self { max_order: 8 }
    }
}

/// Which parts of the table a functional needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Need {
    /// Weight of a cell with itself (finite only for weakly singular kernels).
    pub self_weight: bool,
    /// First-moment tails `Σ_{Δ>M} w Δ`.
    pub first_moment: bool,
}

/// Point singularities at the lattice `ℤ^{d−1} × {0}` and an optional radial jump.
struct Lattice {
    dim: usize,
    jump: Option<f64>,
}

impl Singularities for Lattice {
    fn distance(&self, c: &Cube) -> f64 {
        let mut d2 = 0.0;
        for i in 0..self.dim {
            let d = if i + 1 == self.dim {
                if c.lo[i] > 0.0 {
                    c.lo[i]
                } else if c.hi[i] < 0.0 {
                    -c.hi[i]
                } else {
                    0.0
                }
            } else if c.hi[i].floor() >= c.lo[i].ceil() {
                0.0
            } else {
                wrap(c.lo[i]).abs().min(wrap(c.hi[i]).abs())
            };
            d2 += d * d;
        }
        d2.sqrt()
    }

    fn straddles(&self, c: &Cube) -> bool {
        let Some(r) = self.jump else { return false };
        let lo = self.distance(c);
        if lo >= r {
            return false;
        }
        let mut hi: f64 = 0.0;
        for mask in 0..(1u32 << self.dim) {
            let mut p = [0.0; 3];
            for i in 0..self.dim {
                p[i] = if mask & (1 << i) != 0 { c.hi[i] } else { c.lo[i] };
            }
            hi = hi.max(torus_norm(&p, self.dim, crate::grid::NormConvention::Squared));
        }
        hi > r
    }
}

fn is_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-12
}

/// Integrates `K(ζ)·Π_h tent(ζ_h − c_h)·vfac(ζ_d)` with the horizontal tents of half-width
/// `δ'` centered at `c`, over the vertical pieces given (each must keep `vfac` smooth).
fn tent_integral(
    kernel: &dyn Kernel,
    grid: &TorusGrid<f64>,
    center: [f64; 3],
    vpieces: &[(f64, f64)],
    vfac: &(dyn Fn(f64) -> f64 + Sync),
    cap: usize,
) -> Result<f64> {
    let dim = grid.dim();
    let hstep = grid.horizontal_step();
    let sing = Lattice { dim, jump: kernel.window().radius() };
    // tents as distances to their endpoints, exact next to a singular corner
    let ends: [(f64, f64); 2] = std::array::from_fn(|i| (center[i] - hstep, center[i] + hstep));
    let f = |p: &[f64; 3]| -> f64 {
        let mut t = vfac(p[dim - 1]);
        for i in 0..dim - 1 {
            t *= (p[i] - ends[i].0).min(ends[i].1 - p[i]).max(0.0);
        }
        if t == 0.0 {
            return 0.0;
        }
        t * kernel.eval(p)
    };
    // horizontal intervals: both tent halves, split at the wrap seams
    let mut hsplits: Vec<Vec<(f64, f64)>> = Vec::new();
    for &c in center.iter().take(dim - 1) {
        let mut parts = Vec::new();
        for (a, b) in [(c - hstep, c), (c, c + hstep)] {
            let mut cuts = vec![a];
            let first = (a - 0.5).floor() as i64 + 1;
            let mut k = first;
            while (k as f64) + 0.5 < b {
                let s = k as f64 + 0.5;
                if s > a + 1e-15 {
                    cuts.push(s);
                }
                k += 1;
            }
            cuts.push(b);
            for w in cuts.windows(2) {
                parts.push((w[0], w[1]));
            }
        }
        hsplits.push(parts);
    }
    let mut total = 0.0;
    let h0 = &hsplits[0];
    let h1: Vec<(f64, f64)> = if dim == 3 { hsplits[1].clone() } else { vec![(0.0, 0.0)] };
    for &(a0, b0) in h0 {
        for &(a1, b1) in &h1 {
            for &(vl, vh) in vpieces {
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                lo[0] = a0;
                hi[0] = b0;
                if dim == 3 {
                    lo[1] = a1;
                    hi[1] = b1;
                }
                lo[dim - 1] = vl;
                hi[dim - 1] = vh;
                let cube = Cube::new(dim, lo, hi);
                // a lattice point can only sit at a corner
                let mut at_hi = [false; 3];
                let mut corner = true;
                for i in 0..dim {
                    let hits = |x: f64| if i + 1 == dim { x == 0.0 } else { is_integer(x) };
                    if hits(lo[i]) {
                        at_hi[i] = false;
                    } else if hits(hi[i]) {
                        at_hi[i] = true;
                    } else {
                        corner = false;
                        break;
                    }
                }
                total += if corner {
                    integrate_corner(&f, &cube, at_hi, &sing, cap)?
                } else {
                    integrate_regular(&f, &cube, &sing, cap)
                };
            }
        }
    }
    Ok(total)
}

/// `∬ K(x − y)` for `x` in a reference cell and `y` in the cell displaced by `offset`
/// columns and `delta` levels.
pub fn cell_pair_weight(
    kernel: &dyn Kernel,
    grid: &TorusGrid<f64>,
    offset: [i64; 2],
    delta: i64,
    opts: WeightOptions,
) -> Result<f64> {
    let dim = grid.dim();
    let hs = grid.horizontal_step();
    let vs = grid.vertical_step();
    let mut c = [0.0; 3];
    for i in 0..dim - 1 {
        c[i] = -(offset[i] as f64) * hs;
    }
    let cv = -(delta as f64) * vs;
    c[dim - 1] = cv;
    let (lo, hi) = (cv - vs, cv + vs);
    tent_integral(kernel, grid, c, &[(lo, cv), (cv, hi)], &|v| (v - lo).min(hi - v).max(0.0), opts.max_order)
}

/// Tails `Σ_{Δ>M} w(o, ±Δ)` (`moment = 0`) or `Σ_{Δ>M} w(o, ±Δ)·Δ` (`moment = 1`).
pub fn tail_sum(
    kernel: &dyn Kernel,
    grid: &TorusGrid<f64>,
    offset: [i64; 2],
    window: usize,
    upward: bool,
    moment: u8,
    opts: WeightOptions,
) -> Result<f64> {
    let dim = grid.dim();
    let hs = grid.horizontal_step();
    let vs = grid.vertical_step();
    let mut c = [0.0; 3];
    for i in 0..dim - 1 {
        c[i] = -(offset[i] as f64) * hs;
    }
    let m = window as f64;
    let b = m * vs;
    let a = (m + 1.0) * vs;
    // ζ_d = x_d − y_d is negative for cells above
    let sign = if upward { -1.0 } else { 1.0 };
    let piece = |t_lo: f64, t_hi: f64, fac: &(dyn Fn(f64) -> f64 + Sync)| -> Result<f64> {
        let (vl, vh) = if upward { (-t_hi, -t_lo) } else { (t_lo, t_hi) };
        tent_integral(kernel, grid, c, &[(vl, vh)], fac, opts.max_order)
    };
    let ramp = match moment {
        0 => piece(b, a, &|v: f64| (v * sign - b).max(0.0))?,
        _ => piece(b, a, &|v: f64| (m + 1.0) * (v * sign - b).max(0.0))?,
    };
    let beyond_fac = move |v: f64| if moment == 0 { vs } else { v * sign };
    let far = kernel.far_field();
    let numeric_end = far.map(|f| f.from.max(a));
    let err = std::cell::RefCell::new(None);
    let numeric = match numeric_end {
        Some(end) if end > a => {
            // dyadic split keeps the vertical boxes comparable to their distance
            let mut acc = 0.0;
            let mut lo = a;
            while lo < end {
                let hi = (2.0 * lo).min(end);
                acc += piece(lo, hi, &beyond_fac)?;
                lo = hi;
            }
            acc
        }
        Some(_) => 0.0,
        None => semi_infinite_by(
            &|lo, hi| match piece(lo, hi, &beyond_fac) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            a,
        )
        .map_err(|e| err.borrow_mut().take().unwrap_or(e))?,
    };
    let analytic = match (far, numeric_end) {
        (Some(f), Some(end)) => {
            let area = hs.powi(2 * (dim as i32 - 1));
            if moment == 0 {
                f.coef * area * vs * end.powf(1.0 - f.beta) / (f.beta - 1.0)
            } else if f.beta > 2.0 {
                f.coef * area * end.powf(2.0 - f.beta) / (f.beta - 2.0)
            } else {
                return Err(Error::NonIntegrable("first vertical moment of the kernel diverges".into()));
            }
        }
        _ => 0.0,
    };
    Ok(ramp + numeric + analytic)
}

/// Weight table of one kernel on one grid, with vertical window `[-M, M]` and tails.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseWeights {
    grid: TorusGrid<f64>,
    window: usize,
    w: Vec<f64>,
    t0_up: Vec<f64>,
    t0_down: Vec<f64>,
    t1_up: Vec<f64>,
    t1_down: Vec<f64>,
    tail_correction: f64,
    label: String,
}

impl PairwiseWeights {
    pub fn grid(&self) -> &TorusGrid<f64> {
        &self.grid
    }

    /// Vertical window `M`: weights are stored for `|Δ| ≤ M`.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Weight for the column offset index `o` and level difference `delta`.
    #[inline]
    pub fn weight(&self, o: usize, delta: i64) -> f64 {
        let m = self.window as i64;
        if delta.abs() > m {
            return 0.0;
        }
        self.w[o * (2 * self.window + 1) + (delta + m) as usize]
    }

    /// Row of weights for `Δ ∈ [−M, M]`.
    pub fn row(&self, o: usize) -> &[f64] {
        let len = 2 * self.window + 1;
        &self.w[o * len..(o + 1) * len]
    }

    pub fn tail0(&self, o: usize, upward: bool) -> f64 {
        if upward {
            self.t0_up[o]
        } else {
            self.t0_down[o]
        }
    }

    pub fn tail1(&self, o: usize, upward: bool) -> f64 {
        if upward {
            self.t1_up[o]
        } else {
            self.t1_down[o]
        }
    }

    /// Flat-interface contribution of the interactions dropped by `r_cut`.
    pub fn tail_correction(&self) -> f64 {
        self.tail_correction
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Largest `|w(o, Δ) − w(−o, −Δ)|` relative to the largest weight.
    pub fn negation_defect(&self) -> f64 {
        let m = self.window as i64;
        let scale = self.w.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for o in 0..self.grid.column_count() {
            let no = self.grid.negate_offset(o);
            for d in -m..=m {
                worst = worst.max((self.weight(o, d) - self.weight(no, -d)).abs());
            }
        }
        worst / scale
    }

    fn header(&self) -> String {
        format!("{} {} window={}", self.label, self.grid.signature(), self.window)
    }

    /// Writes the table: one header line, then weight and tail records in fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header());
        let m = self.window as i64;
        for o in 0..self.grid.column_count() {
            for d in -m..=m {
                let _ = writeln!(out, "w {o} {d} {:e}", self.weight(o, d));
            }
        }
        for o in 0..self.grid.column_count() {
            let _ = writeln!(
                out,
                "t {o} {:e} {:e} {:e} {:e}",
                self.t0_up[o], self.t0_down[o], self.t1_up[o], self.t1_down[o]
            );
        }
        let _ = writeln!(out, "c {:e}", self.tail_correction);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads a table written by [`PairwiseWeights::to_text`], requiring an exact header
    /// match with `expected`.
    pub fn from_text(text: &str, expected: &PairwiseWeights) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != expected.header() {
            return Err(Error::CacheMismatch(format!("found `{header}`, expected `{}`", expected.header())));
        }
        Self::parse_body(lines, expected.clone())
    }

    fn parse_body<'a>(lines: impl Iterator<Item = &'a str>, mut out: PairwiseWeights) -> Result<Self> {
        let m = out.window as i64;
        let len = 2 * out.window + 1;
        let bad = |l: &str| Error::CacheMismatch(format!("malformed record `{l}`"));
        let cols = out.grid.column_count();
        let mut seen_w = 0usize;
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.first().copied() {
                Some("w") if f.len() == 4 => {
                    let o: usize = f[1].parse().map_err(|_| bad(line))?;
                    let d: i64 = f[2].parse().map_err(|_| bad(line))?;
                    let v: f64 = f[3].parse().map_err(|_| bad(line))?;
                    if o >= cols || d.abs() > m {
                        return Err(bad(line));
                    }
                    out.w[o * len + (d + m) as usize] = v;
                    seen_w += 1;
                }
                Some("t") if f.len() == 6 => {
                    let o: usize = f[1].parse().map_err(|_| bad(line))?;
                    if o >= cols {
                        return Err(bad(line));
                    }
                    let vals: std::result::Result<Vec<f64>, _> = f[2..].iter().map(|x| x.parse::<f64>()).collect();
                    let v = vals.map_err(|_| bad(line))?;
                    out.t0_up[o] = v[0];
                    out.t0_down[o] = v[1];
                    out.t1_up[o] = v[2];
                    out.t1_down[o] = v[3];
                }
                Some("c") if f.len() == 2 => out.tail_correction = f[1].parse().map_err(|_| bad(line))?,
                None => {}
                _ => return Err(bad(line)),
            }
        }
        if seen_w != cols * len {
            return Err(Error::CacheMismatch("incomplete weight records".into()));
        }
        Ok(out)
    }

    fn empty(grid: TorusGrid<f64>, window: usize, label: String) -> Self {
        let cols = grid.column_count();
        Self {
            w: vec![0.0; cols * (2 * window + 1)],
            t0_up: vec![0.0; cols],
            t0_down: vec![0.0; cols],
            t1_up: vec![0.0; cols],
            t1_down: vec![0.0; cols],
            tail_correction: 0.0,
            grid,
            window,
            label,
        }
    }
}

/// Canonical representative under the kernel's reflection symmetries.
fn canonical(dim: usize, off: [i64; 2], delta: i64) -> ([i64; 2], i64) {
    let mut a = [off[0].abs(), off[1].abs()];
    if dim == 3 && a[0] > a[1] {
        a.swap(0, 1);
    }
    (a, delta.abs())
}

pub(crate) fn f64_grid<T: Real>(grid: &TorusGrid<T>) -> TorusGrid<f64> {
    TorusGrid::new(grid.dim(), grid.n_cols(), grid.n_levels(), grid.half_height().f64()).expect("valid grid stays valid")
}

/// Computes the full table for `kernel` with window `M = window`.
pub(crate) fn build_weights(
    kernel: &dyn Kernel,
    grid: &TorusGrid<f64>,
    window: usize,
    need: Need,
    opts: WeightOptions,
    label: String,
) -> Result<PairwiseWeights> {
    let dim = grid.dim();
    let cols = grid.column_count();
    let m = window as i64;
    let symmetric = kernel.symmetric();
    let mut jobs: Vec<([i64; 2], i64)> = Vec::new();
    let mut index: HashMap<([i64; 2], i64), usize> = HashMap::new();
    for o in 0..cols {
        let off = grid.offset_wrapped(o);
        for d in -m..=m {
            if off == [0, 0] && d == 0 && !need.self_weight {
                continue;
            }
            let key = if symmetric { canonical(dim, off, d) } else { (off, d) };
            if !index.contains_key(&key) {
                index.insert(key, jobs.len());
                jobs.push(key);
            }
        }
    }
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(off, d)| cell_pair_weight(kernel, grid, off, d, opts))
        .collect::<Result<Vec<f64>>>()?;
    let mut out = PairwiseWeights::empty(grid.clone(), window, label);
    let len = 2 * window + 1;
    for o in 0..cols {
        let off = grid.offset_wrapped(o);
        for d in -m..=m {
            if off == [0, 0] && d == 0 && !need.self_weight {
                continue;
            }
            let key = if symmetric { canonical(dim, off, d) } else { (off, d) };
            out.w[o * len + (d + m) as usize] = values[index[&key]];
        }
    }
    // tails
    let mut tail_jobs: Vec<([i64; 2], bool)> = Vec::new();
    let mut tail_index: HashMap<([i64; 2], bool), usize> = HashMap::new();
    for o in 0..cols {
        let off = grid.offset_wrapped(o);
        for up in [true, false] {
            let key = if symmetric { (canonical(dim, off, 0).0, true) } else { (off, up) };
            if !tail_index.contains_key(&key) {
                tail_index.insert(key, tail_jobs.len());
                tail_jobs.push(key);
            }
        }
    }
    let tails: Vec<(f64, f64)> = tail_jobs
        .par_iter()
        .map(|&(off, up)| -> Result<(f64, f64)> {
            let t0 = tail_sum(kernel, grid, off, window, up, 0, opts)?;
            let t1 = if need.first_moment { tail_sum(kernel, grid, off, window, up, 1, opts)? } else { 0.0 };
            Ok((t0, t1))
        })
        .collect::<Result<Vec<_>>>()?;
    for o in 0..cols {
        let off = grid.offset_wrapped(o);
        for up in [true, false] {
            let key = if symmetric { (canonical(dim, off, 0).0, true) } else { (off, up) };
            let (t0, t1) = tails[tail_index[&key]];
            if up {
                out.t0_up[o] = t0;
                out.t1_up[o] = t1;
            } else {
                out.t0_down[o] = t0;
                out.t1_down[o] = t1;
            }
        }
    }
    Ok(out)
}

/// Cell-pair weights of a kernel perimeter on `grid`, with vertical window equal to the
/// number of levels. With `r_cut`, interactions between cells whose centers are farther
/// apart are dropped and their flat-interface contribution is kept as `tail_correction`.
pub fn precompute_kernel_weights<T: Real>(spec: &KernelSpec, grid: &TorusGrid<T>, opts: WeightOptions) -> Result<PairwiseWeights> {
    let g = f64_grid(grid);
    spec.validate(g.dim())?;
    if let Some(r) = spec.r_cut {
        let min = 2.0 * g.horizontal_step().max(g.vertical_step());
        if !(r >= min) {
            return Err(Error::param("r_cut", format!("must be at least {min:e} (twice the larger cell step)")));
        }
    }
    let kernel = SpecKernel { spec, dim: g.dim() };
    let label = spec.signature();
    let mut w = build_weights(&kernel, &g, g.n_levels(), Need { self_weight: false, first_moment: true }, opts, label)?;
    if let Some(r) = spec.r_cut {
        apply_cutoff(&mut w, r);
    }
    Ok(w)
}

/// Loads `path` if it holds a table for the same kernel and grid, otherwise computes
/// the table and writes it there.
pub fn cached_kernel_weights<T: Real>(spec: &KernelSpec, grid: &TorusGrid<T>, opts: WeightOptions, path: &Path) -> Result<PairwiseWeights> {
    let g = f64_grid(grid);
    let template = PairwiseWeights::empty(g.clone(), g.n_levels(), spec.signature());
    if let Ok(text) = std::fs::read_to_string(path) {
        match PairwiseWeights::from_text(&text, &template) {
            Ok(w) => return Ok(w),
            Err(Error::CacheMismatch(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let w = precompute_kernel_weights(spec, grid, opts)?;
    w.save(path)?;
    Ok(w)
}

fn apply_cutoff(w: &mut PairwiseWeights, r: f64) {
    let g = w.grid.clone();
    let m = w.window as i64;
    let len = 2 * w.window + 1;
    let vs = g.vertical_step();
    let mut dropped = 0.0;
    for o in 0..g.column_count() {
        let hd = g.offset_distance(o);
        for d in -m..=m {
            let dist = (hd * hd + (d as f64 * vs).powi(2)).sqrt();
            if dist > r {
                let slot = &mut w.w[o * len + (d + m) as usize];
                if d > 0 {
                    dropped += *slot * d as f64;
                }
                *slot = 0.0;
            }
        }
        dropped += w.t1_up[o];
        w.t0_up[o] = 0.0;
        w.t0_down[o] = 0.0;
        w.t1_up[o] = 0.0;
        w.t1_down[o] = 0.0;
    }
    // every ordered column pair of a flat interface loses the same amount
    w.tail_correction = dropped * g.column_count() as f64;
}
