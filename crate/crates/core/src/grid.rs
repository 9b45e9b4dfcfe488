//! Discrete torus slab, Lipschitz subgraphs and the set operations built on them.
//!
//! The periodic cell `T^{d-1}` has unit side and is split into `n_cols` cells per
//! torus direction; the slab `(-R, R)` is split into `n_levels` layers. Sets are
//! cell-wise: a monotone [`SlabSet`] is stored as one top index per column, so
//! vertical monotonicity holds by construction.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Conventions for the horizontal part of the periodic norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormConvention {
    /// `(|xi_d|^2 + min_z |xi' + z|^2)^(1/2)`: geodesic distance on the flat cylinder.
    #[default]
    Squared,
    /// `(|xi_d|^2 + min_z |xi' + z|)^(1/2)`: horizontal term left unsquared.
    AsPrinted,
}

/// Periodic norm of an offset `(horizontal, vertical)`; `horizontal` has `d - 1` entries.
pub fn periodic_norm<T: Real>(horizontal: &[T], vertical: T, convention: NormConvention) -> T {
    let wrapped_sq: T = horizontal
        .iter()
        .map(|&x| {
            let w = x - x.round();
            w * w
        })
        .sum();
    match convention {
        NormConvention::Squared => (vertical * vertical + wrapped_sq).sqrt(),
        NormConvention::AsPrinted => (vertical * vertical + wrapped_sq.sqrt()).sqrt(),
    }
}

/// Discretization of `T^{d-1} x (-R, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusGrid<T> {
    dim: usize,
    n_cols: usize,
    n_levels: usize,
    half_height: T,
}

impl<T: Real> TorusGrid<T> {
    pub fn new(dim: usize, n_cols: usize, n_levels: usize, half_height: T) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n_cols < 2 {
            return Err(Error::InvalidGrid(format!("n_cols must be >= 2, got {n_cols}")));
        }
        if n_levels < 2 {
            return Err(Error::InvalidGrid(format!("n_levels must be >= 2, got {n_levels}")));
        }
        if !(half_height > T::zero()) || !half_height.is_finite() {
            return Err(Error::InvalidGrid(format!("R must be positive and finite, got {half_height}")));
        }
        if n_levels > u32::MAX as usize / 4 {
            return Err(Error::InvalidGrid("n_levels too large".into()));
        }
        Ok(Self { dim, n_cols, n_levels, half_height })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn half_height(&self) -> T {
        self.half_height
    }

    /// Horizontal cell size `1 / n_cols`.
    pub fn horizontal_step(&self) -> T {
        T::one() / T::count(self.n_cols)
    }

    /// Vertical cell size `2R / n_levels`.
    pub fn vertical_step(&self) -> T {
        T::lit(2.0) * self.half_height / T::count(self.n_levels)
    }

    /// Number of columns, `n_cols^(d-1)`.
    pub fn column_count(&self) -> usize {
        self.n_cols.pow(self.dim as u32 - 1)
    }

    pub fn cell_count(&self) -> usize {
        self.column_count() * self.n_levels
    }

    pub fn cell_volume(&self) -> T {
        self.horizontal_step().powi(self.dim as i32 - 1) * self.vertical_step()
    }

    /// Horizontal area of one column, `n_cols^{-(d-1)}`.
    pub fn column_area(&self) -> T {
        self.horizontal_step().powi(self.dim as i32 - 1)
    }

    /// Cell index of `(column, level)`.
    #[inline]
    pub fn cell_index(&self, column: usize, level: usize) -> usize {
        column * self.n_levels + level
    }

    /// Torus coordinates of a column (second entry is 0 when `d = 2`).
    #[inline]
    pub fn column_coords(&self, column: usize) -> [usize; 2] {
        if self.dim == 2 {
            [column, 0]
        } else {
            [column % self.n_cols, column / self.n_cols]
        }
    }

    #[inline]
    pub fn column_from_coords(&self, coords: [usize; 2]) -> usize {
        if self.dim == 2 {
            coords[0] % self.n_cols
        } else {
            coords[0] % self.n_cols + self.n_cols * (coords[1] % self.n_cols)
        }
    }

    /// Horizontal coordinates of the column center.
    pub fn column_center(&self, column: usize) -> [T; 2] {
        let [a, b] = self.column_coords(column);
        let step = self.horizontal_step();
        let half = T::lit(0.5);
        let y = if self.dim == 2 { T::zero() } else { (T::count(b) + half) * step };
        [(T::count(a) + half) * step, y]
    }

    /// Height of the center of level `k`.
    #[inline]
    pub fn level_center(&self, level: usize) -> T {
        -self.half_height + (T::count(level) + T::lit(0.5)) * self.vertical_step()
    }

    /// Height of the top face of a column holding `top` occupied cells.
    #[inline]
    pub fn top_height(&self, top: u32) -> T {
        -self.half_height + T::count(top as usize) * self.vertical_step()
    }

    /// Index of the horizontal offset that carries column `from` onto column `to`.
    #[inline]
    pub fn column_offset(&self, from: usize, to: usize) -> usize {
        let [a1, b1] = self.column_coords(from);
        let [a2, b2] = self.column_coords(to);
        let n = self.n_cols;
        self.column_from_coords([(a2 + n - a1) % n, (b2 + n - b1) % n])
    }

    /// Column reached from `column` by the offset with index `offset`.
    #[inline]
    pub fn shift_column(&self, column: usize, offset: usize) -> usize {
        let [a, b] = self.column_coords(column);
        let [oa, ob] = self.column_coords(offset);
        self.column_from_coords([a + oa, b + ob])
    }

    /// Offset index of the negated offset.
    #[inline]
    pub fn negate_offset(&self, offset: usize) -> usize {
        let [a, b] = self.column_coords(offset);
        let n = self.n_cols;
        self.column_from_coords([(n - a) % n, (n - b) % n])
    }

    /// Offset coordinates in cell units, wrapped into `(-n/2, n/2]`.
    pub fn offset_wrapped(&self, offset: usize) -> [i64; 2] {
        let n = self.n_cols as i64;
        let wrap = |v: usize| {
            let v = v as i64;
            if 2 * v > n {
                v - n
            } else {
                v
            }
        };
        let [a, b] = self.column_coords(offset);
        [wrap(a), if self.dim == 2 { 0 } else { wrap(b) }]
    }

    /// Squared horizontal gap between a column center and the closed footprint of
    /// another column at the given offset (periodic images included).
    pub fn footprint_gap_sq(&self, offset: usize) -> T {
        let step = self.horizontal_step();
        let half = T::lit(0.5);
        self.offset_wrapped(offset)
            .iter()
            .map(|&w| {
                let g = (T::lit(w.unsigned_abs() as f64) - half).max(T::zero()) * step;
                g * g
            })
            .sum()
    }

    /// Geodesic distance between column centers at the given offset.
    pub fn offset_distance(&self, offset: usize) -> T {
        let step = self.horizontal_step();
        self.offset_wrapped(offset)
            .iter()
            .map(|&w| {
                let g = T::lit(w as f64) * step;
                g * g
            })
            .sum::<T>()
            .sqrt()
    }

    /// Short textual identity used to key caches.
    pub fn signature(&self) -> String {
        format!("d{}-c{}-l{}-R{:e}", self.dim, self.n_cols, self.n_levels, self.half_height.f64())
    }

    pub(crate) fn ensure_same(&self, other: &Self) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Height function `f_E` sampled at column centers, with its declared Lipschitz bound.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightField<T> {
    grid: TorusGrid<T>,
    values: Vec<T>,
    lipschitz: T,
}

impl<T: Real> HeightField<T> {
    /// Validated constructor: values strictly inside `(-R, R)` and `L`-Lipschitz on the torus.
    pub fn new(grid: TorusGrid<T>, values: Vec<T>, lipschitz: T) -> Result<Self> {
        if values.len() != grid.column_count() {
            return Err(Error::InvalidHeightField(format!(
                "expected {} values, got {}",
                grid.column_count(),
                values.len()
            )));
        }
        let r = grid.half_height();
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || v.abs() >= r) {
            return Err(Error::InvalidHeightField(format!("value {v} at column {i} is outside (-R, R)")));
        }
        if !(lipschitz >= T::zero()) || !lipschitz.is_finite() {
            return Err(Error::InvalidHeightField(format!("Lipschitz bound {lipschitz} must be finite and >= 0")));
        }
        let field = Self { grid, values, lipschitz };
        let measured = lipschitz_constant(&field);
        let slack = T::lit(1e-9) * (T::one() + lipschitz) + T::lit(T::REL_EPS * 10.0) * (T::one() + measured);
        if measured > lipschitz + slack {
            return Err(Error::InvalidHeightField(format!(
                "measured Lipschitz constant {measured} exceeds declared bound {lipschitz}"
            )));
        }
        Ok(field)
    }

    /// Samples `f` at column centers.
    pub fn from_fn(grid: TorusGrid<T>, lipschitz: T, f: impl Fn([T; 2]) -> T) -> Result<Self> {
        let values = (0..grid.column_count()).map(|c| f(grid.column_center(c))).collect();
        Self::new(grid, values, lipschitz)
    }

    pub fn constant(grid: TorusGrid<T>, value: T) -> Result<Self> {
        let values = vec![value; grid.column_count()];
        Self::new(grid, values, T::zero())
    }

    /// Unvalidated constructor for heights on the closed slab (used for cell-top heights).
    pub(crate) fn from_parts(grid: TorusGrid<T>, values: Vec<T>, lipschitz: T) -> Self {
        Self { grid, values, lipschitz }
    }

    pub fn grid(&self) -> &TorusGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    /// Mean height over the torus.
    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::count(self.values.len())
    }

    /// Plain-text form: header `d n_cols n_levels R L`, then one height per line.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {:.16e} {:.16e}",
            g.dim(),
            g.n_cols(),
            g.n_levels(),
            g.half_height().f64(),
            self.lipschitz.f64()
        );
        for v in &self.values {
            let _ = writeln!(out, "{:.16e}", v.f64());
        }
        out
    }

    /// Parses [`HeightField::to_text`] output. Heights on the closed slab are accepted
    /// so that cell-top fields written by [`height_of`] round-trip.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty height-field file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!("header needs `d n_cols n_levels R L`, got `{header}`")));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Parse(format!("{what}: {e}")))
        };
        let int = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|e| Error::Parse(format!("{what}: {e}")))
        };
        let grid = TorusGrid::new(
            int(fields[0], "d")?,
            int(fields[1], "n_cols")?,
            int(fields[2], "n_levels")?,
            T::lit(num(fields[3], "R")?),
        )?;
        let lipschitz = T::lit(num(fields[4], "L")?);
        let values = lines
            .map(|l| num(l, "height").map(T::lit))
            .collect::<Result<Vec<T>>>()?;
        if values.len() != grid.column_count() {
            return Err(Error::Parse(format!("expected {} heights, got {}", grid.column_count(), values.len())));
        }
        let r = grid.half_height();
        if values.iter().any(|v| !v.is_finite() || v.abs() > r) {
            return Err(Error::Parse("height outside [-R, R]".into()));
        }
        Ok(Self::from_parts(grid, values, lipschitz))
    }
}

/// Monotone cell-wise subset of the slab (a discrete member of `M_R`).
///
/// Column `c` holds cells `0..tops[c]`; everything below the slab is occupied and
/// everything above it is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct SlabSet<T> {
    grid: TorusGrid<T>,
    tops: Vec<u32>,
}

impl<T: Real> SlabSet<T> {
    pub fn from_tops(grid: TorusGrid<T>, tops: Vec<u32>) -> Result<Self> {
        if tops.len() != grid.column_count() {
            return Err(Error::InvalidGrid(format!(
                "expected {} column tops, got {}",
                grid.column_count(),
                tops.len()
            )));
        }
        if let Some(t) = tops.iter().find(|&&t| t as usize > grid.n_levels()) {
            return Err(Error::InvalidGrid(format!("column top {t} exceeds n_levels")));
        }
        Ok(Self { grid, tops })
    }

    /// Builds a set from per-cell occupancy (`cell_index` layout), rejecting
    /// non-monotone columns.
    pub fn from_occupancy(grid: TorusGrid<T>, occupancy: &[bool]) -> Result<Self> {
        if occupancy.len() != grid.cell_count() {
            return Err(Error::InvalidGrid("occupancy length does not match grid".into()));
        }
        let n = grid.n_levels();
        let mut tops = Vec::with_capacity(grid.column_count());
        for (c, column) in occupancy.chunks(n).enumerate() {
            let top = column.iter().take_while(|&&b| b).count();
            if column[top..].iter().any(|&b| b) {
                return Err(Error::InvalidGrid(format!("column {c} is not vertically monotone")));
            }
            tops.push(top as u32);
        }
        Ok(Self { grid, tops })
    }

    /// Flat set `{x_d <= top_height(level)}`.
    pub fn halfspace(grid: TorusGrid<T>, level: u32) -> Result<Self> {
        let tops = vec![level; grid.column_count()];
        Self::from_tops(grid, tops)
    }

    pub fn grid(&self) -> &TorusGrid<T> {
        &self.grid
    }

    pub fn tops(&self) -> &[u32] {
        &self.tops
    }

    #[inline]
    pub fn is_occupied(&self, column: usize, level: usize) -> bool {
        level < self.tops[column] as usize
    }

    pub fn occupancy(&self) -> Vec<bool> {
        let n = self.grid.n_levels();
        self.tops
            .iter()
            .flat_map(|&t| (0..n).map(move |k| k < t as usize))
            .collect()
    }

    pub fn occupied_cells(&self) -> usize {
        self.tops.iter().map(|&t| t as usize).sum()
    }

    /// Highest column top (the discrete `rho_E`, as a level index).
    pub fn max_top(&self) -> u32 {
        self.tops.iter().copied().max().unwrap_or(0)
    }

    pub fn min_top(&self) -> u32 {
        self.tops.iter().copied().min().unwrap_or(0)
    }

    /// True when every column top is equal (a discrete halfspace).
    pub fn is_flat(&self) -> bool {
        self.tops.windows(2).all(|w| w[0] == w[1])
    }

    /// True when the boundary lies strictly inside the slab somewhere.
    pub fn has_boundary(&self) -> bool {
        let n = self.grid.n_levels() as u32;
        !(self.tops.iter().all(|&t| t == 0) || self.tops.iter().all(|&t| t == n))
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let tops = self.tops.iter().zip(&other.tops).map(|(a, b)| *a.max(b)).collect();
        Ok(Self { grid: self.grid.clone(), tops })
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let tops = self.tops.iter().zip(&other.tops).map(|(a, b)| *a.min(b)).collect();
        Ok(Self { grid: self.grid.clone(), tops })
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.grid == other.grid && self.tops.iter().zip(&other.tops).all(|(a, b)| a <= b)
    }

    /// Complement within the slab, reflected through `x_d = 0` so that it is again a
    /// subgraph: level `k` of the result corresponds to level `n - 1 - k` here.
    pub fn complement_reflected(&self) -> Self {
        let n = self.grid.n_levels() as u32;
        Self { grid: self.grid.clone(), tops: self.tops.iter().map(|&t| n - t).collect() }
    }
}

/// Real-valued field with one entry per slab cell (`cell_index` layout).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    grid: TorusGrid<T>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn grid(&self) -> &TorusGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn at(&self, column: usize, level: usize) -> T {
        self.values[self.grid.cell_index(column, level)]
    }
}

/// Boolean mask over slab cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMask<T> {
    grid: TorusGrid<T>,
    mask: Vec<bool>,
}

impl<T: Real> CellMask<T> {
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn volume(&self) -> T {
        T::count(self.count()) * self.grid.cell_volume()
    }
}

/// Closed subgraph `{x_d <= f(x')}` sampled at cell centers.
pub fn build_slab_set<T: Real>(f: &HeightField<T>) -> Result<SlabSet<T>> {
    let grid = f.grid();
    let r = grid.half_height();
    if let Some(v) = f.values().iter().find(|v| !v.is_finite() || v.abs() >= r) {
        return Err(Error::InvalidHeightField(format!("value {v} is outside (-R, R)")));
    }
    let n = grid.n_levels();
    let dv = grid.vertical_step();
    let tops = f
        .values()
        .iter()
        .map(|&v| {
            let guess = ((v + r) / dv - T::lit(0.5)).floor().to_i64().unwrap_or(-1) + 1;
            let mut top = guess.clamp(0, n as i64) as usize;
            while top > 0 && grid.level_center(top - 1) > v {
                top -= 1;
            }
            while top < n && grid.level_center(top) <= v {
                top += 1;
            }
            top as u32
        })
        .collect();
    SlabSet::from_tops(grid.clone(), tops)
}

/// Height field of cell tops; inverse of [`build_slab_set`] up to quantization.
pub fn height_of<T: Real>(set: &SlabSet<T>) -> HeightField<T> {
    let grid = set.grid().clone();
    let values: Vec<T> = set.tops().iter().map(|&t| grid.top_height(t)).collect();
    let mut field = HeightField::from_parts(grid, values, T::zero());
    field.lipschitz = lipschitz_constant(&field);
    field
}

/// Signed distance to the polyhedral boundary of a cell-wise set, sampled at cell
/// centers: negative inside, positive outside, horizontal images included.
pub fn signed_distance<T: Real>(set: &SlabSet<T>) -> Result<ScalarField<T>> {
    if !set.has_boundary() {
        return Err(Error::NoBoundary);
    }
    let grid = set.grid();
    let n = grid.n_levels();
    let cols = grid.column_count();
    let gaps: Vec<T> = (0..cols).map(|o| grid.footprint_gap_sq(o)).collect();
    let heights: Vec<T> = set.tops().iter().map(|&t| grid.top_height(t)).collect();
    let mut values = vec![T::zero(); grid.cell_count()];
    for c in 0..cols {
        let top_c = set.tops()[c] as usize;
        for (k, slot) in values[c * n..(c + 1) * n].iter_mut().enumerate() {
            let y = grid.level_center(k);
            let inside = k < top_c;
            let mut best = T::infinity();
            for j in 0..cols {
                let g = gaps[grid.column_offset(c, j)];
                if g >= best * best {
                    continue;
                }
                let v = if inside { heights[j] - y } else { y - heights[j] };
                let v = v.max(T::zero());
                let d2 = g + v * v;
                if d2 < best * best {
                    best = d2.sqrt();
                }
            }
            *slot = if inside { -best } else { best };
        }
    }
    Ok(ScalarField { grid: grid.clone(), values })
}

/// Cells whose centers lie within `rho` of the boundary.
pub fn fat_neighborhood<T: Real>(set: &SlabSet<T>, rho: T) -> Result<CellMask<T>> {
    if !(rho > T::zero()) {
        return Err(Error::param("rho", "neighborhood radius must be positive"));
    }
    let sd = signed_distance(set)?;
    let mask = sd.values().iter().map(|v| v.abs() <= rho).collect();
    Ok(CellMask { grid: set.grid().clone(), mask })
}

/// `|A symmetric-difference B|` as an exact cell count times the cell volume.
pub fn symmetric_difference_volume<T: Real>(a: &SlabSet<T>, b: &SlabSet<T>) -> Result<T> {
    a.grid().ensure_same(b.grid())?;
    let cells: u64 = a.tops().iter().zip(b.tops()).map(|(&x, &y)| x.abs_diff(y) as u64).sum();
    Ok(T::lit(cells as f64) * a.grid().cell_volume())
}

pub fn oscillation<T: Real>(f: &HeightField<T>) -> T {
    let (lo, hi) = f
        .values()
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// `x_d <= (1 - eps) f(x')`.
pub fn vertical_scale<T: Real>(f: &HeightField<T>, eps: T) -> Result<HeightField<T>> {
    if !(eps > T::zero() && eps < T::one()) {
        return Err(Error::param("eps", format!("must lie in (0, 1), got {eps}")));
    }
    let s = T::one() - eps;
    let values = f.values().iter().map(|&v| v * s).collect();
    Ok(HeightField::from_parts(f.grid().clone(), values, f.lipschitz() * s))
}

/// Largest column count (per side) for which `d = 3` uses all pairs.
const ALL_PAIRS_SIDE_LIMIT: usize = 64;
/// Ring radius (in columns) used above [`ALL_PAIRS_SIDE_LIMIT`].
const RING_RADIUS: usize = 8;

/// Exact discrete Lipschitz constant: max over column pairs of `|df| / dist`.
pub fn lipschitz_constant<T: Real>(f: &HeightField<T>) -> T {
    let grid = f.grid();
    if grid.dim() == 3 && grid.n_cols() > ALL_PAIRS_SIDE_LIMIT {
        lipschitz_ring(f, RING_RADIUS)
    } else {
        lipschitz_all_pairs(f)
    }
}

/// All-pairs Lipschitz constant (the reference definition).
pub fn lipschitz_all_pairs<T: Real>(f: &HeightField<T>) -> T {
    let grid = f.grid();
    let cols = grid.column_count();
    let dist: Vec<T> = (0..cols).map(|o| grid.offset_distance(o)).collect();
    let v = f.values();
    let mut best = T::zero();
    for i in 0..cols {
        for j in (i + 1)..cols {
            let slope = (v[i] - v[j]).abs() / dist[grid.column_offset(i, j)];
            if slope > best {
                best = slope;
            }
        }
    }
    best
}

fn lipschitz_ring<T: Real>(f: &HeightField<T>, radius: usize) -> T {
    let grid = f.grid();
    let n = grid.n_cols();
    let v = f.values();
    let r = radius.min(n / 2) as i64;
    let mut best = T::zero();
    for c in 0..grid.column_count() {
        let [a, b] = grid.column_coords(c);
        for da in -r..=r {
            for db in -r..=r {
                if da == 0 && db == 0 {
                    continue;
                }
                let j = grid.column_from_coords([
                    (a as i64 + da).rem_euclid(n as i64) as usize,
                    (b as i64 + db).rem_euclid(n as i64) as usize,
                ]);
                let d = grid.offset_distance(grid.column_offset(c, j));
                let slope = (v[c] - v[j]).abs() / d;
                if slope > best {
                    best = slope;
                }
            }
        }
    }
    best
}

/// Grid-aligned translation in cell units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CellShift {
    pub horizontal: [i64; 2],
    pub vertical: i64,
}

impl CellShift {
    pub fn new(horizontal: [i64; 2], vertical: i64) -> Self {
        Self { horizontal, vertical }
    }

    /// Converts a length offset, requiring every component to be a grid multiple.
    pub fn from_lengths<T: Real>(grid: &TorusGrid<T>, horizontal: &[T], vertical: T) -> Result<Self> {
        if horizontal.len() != grid.dim() - 1 {
            return Err(Error::Translation(format!("expected {} horizontal components", grid.dim() - 1)));
        }
        let snap = |x: T, step: T, what: &str| -> Result<i64> {
            let q = x / step;
            let r = q.round();
            if (q - r).abs() > T::lit(1e-6) {
                return Err(Error::Translation(format!("{what} component {x} is not a multiple of {step}")));
            }
            Ok(r.to_i64().unwrap_or(0))
        };
        let mut h = [0i64; 2];
        for (slot, &x) in h.iter_mut().zip(horizontal) {
            *slot = snap(x, grid.horizontal_step(), "horizontal")?;
        }
        Ok(Self { horizontal: h, vertical: snap(vertical, grid.vertical_step(), "vertical")? })
    }
}

/// Translates a set by a grid-aligned offset, wrapping horizontally.
pub fn translate_set<T: Real>(set: &SlabSet<T>, shift: CellShift) -> Result<SlabSet<T>> {
    let grid = set.grid();
    let n = grid.n_cols() as i64;
    let levels = grid.n_levels() as i64;
    let mut tops = vec![0u32; grid.column_count()];
    for (c, &t) in set.tops().iter().enumerate() {
        let [a, b] = grid.column_coords(c);
        let dest = grid.column_from_coords([
            (a as i64 + shift.horizontal[0]).rem_euclid(n) as usize,
            (b as i64 + shift.horizontal[1]).rem_euclid(n) as usize,
        ]);
        let moved = t as i64 + shift.vertical;
        if !(0..=levels).contains(&moved) {
            return Err(Error::Translation(format!(
                "vertical shift {} moves column {c} out of the slab",
                shift.vertical
            )));
        }
        tops[dest] = moved as u32;
    }
    SlabSet::from_tops(grid.clone(), tops)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_cols: usize, n_levels: usize, r: f64) -> TorusGrid<f64> {
        TorusGrid::new(2, n_cols, n_levels, r).unwrap()
    }

    #[test]
    fn periodic_norm_examples() {
        assert_eq!(periodic_norm(&[0.0], 0.0, NormConvention::Squared), 0.0);
        assert!((periodic_norm(&[0.75f64], 0.0, NormConvention::Squared) - 0.25).abs() < 1e-15);
        assert_eq!(periodic_norm(&[0.0], 2.0, NormConvention::Squared), 2.0);
        // printed form keeps the horizontal term unsquared
        assert!((periodic_norm(&[0.75f64], 0.0, NormConvention::AsPrinted) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(TorusGrid::new(2, 1, 4, 1.0).is_err());
        assert!(TorusGrid::new(2, 4, 1, 1.0).is_err());
        assert!(TorusGrid::new(2, 4, 4, 0.0).is_err());
        assert!(TorusGrid::new(4, 4, 4, 1.0).is_err());
        assert!(TorusGrid::new(2, 4, 4, f64::INFINITY).is_err());
    }

    #[test]
    fn halfspace_occupancy() {
        let g = grid(4, 4, 1.0);
        let f = HeightField::constant(g.clone(), 0.0).unwrap();
        let s = build_slab_set(&f).unwrap();
        assert!(s.tops().iter().all(|&t| t == 2));
        let dv = g.vertical_step();
        let f = HeightField::constant(g, 1.0 - dv / 4.0).unwrap();
        assert!(build_slab_set(&f).unwrap().tops().iter().all(|&t| t == 4));
    }

    #[test]
    fn sinusoid_occupancy_matches_cell_comparison() {
        let g = grid(8, 16, 1.0);
        let f = HeightField::from_fn(g.clone(), 2.0 * std::f64::consts::PI * 0.2, |x| {
            0.2 * (2.0 * std::f64::consts::PI * x[0]).sin()
        })
        .unwrap();
        let s = build_slab_set(&f).unwrap();
        for c in 0..8 {
            for k in 0..16 {
                assert_eq!(s.is_occupied(c, k), g.level_center(k) <= f.values()[c]);
            }
        }
    }

    #[test]
    fn values_outside_slab_are_rejected() {
        let g = grid(4, 4, 1.0);
        assert!(HeightField::new(g.clone(), vec![1.0, 0.0, 0.0, 0.0], 10.0).is_err());
        assert!(HeightField::new(g, vec![0.9, 0.0, 0.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn height_round_trip_is_quantization() {
        let g = grid(8, 16, 1.0);
        let f = HeightField::from_fn(g.clone(), 2.0, |x| 0.3 * (2.0 * std::f64::consts::PI * x[0]).cos()).unwrap();
        let s = build_slab_set(&f).unwrap();
        let h = height_of(&s);
        assert_eq!(build_slab_set(&HeightField::from_parts(g.clone(), h.values().to_vec(), 10.0)).unwrap(), s);
        for (q, v) in h.values().iter().zip(f.values()) {
            assert!((q - v).abs() <= g.vertical_step());
        }
    }

    #[test]
    fn monotone_occupancy_round_trip_and_rejection() {
        let g = grid(2, 3, 1.0);
        let occ = vec![true, true, false, true, false, false];
        let s = SlabSet::from_occupancy(g.clone(), &occ).unwrap();
        assert_eq!(s.tops(), &[2, 1]);
        assert_eq!(s.occupancy(), occ);
        assert!(SlabSet::from_occupancy(g, &[true, false, true, false, false, false]).is_err());
    }

    #[test]
    fn signed_distance_flat_interface() {
        let g = grid(4, 20, 1.0);
        // top face at 0
        let s = SlabSet::halfspace(g.clone(), 10).unwrap();
        let sd = signed_distance(&s).unwrap();
        for c in 0..4 {
            for k in 0..20 {
                assert!((sd.at(c, k) - g.level_center(k)).abs() < 1e-14);
            }
        }
        // center at 0.3: level 13 -> center -1 + 13.5*0.1 = 0.35; use level with center 0.25
        assert!((sd.at(0, 12) - 0.25).abs() < 1e-14);
        assert!((sd.at(0, 5) + 0.45).abs() < 1e-14);
    }

    #[test]
    fn signed_distance_rejects_degenerate_sets() {
        let g = grid(4, 4, 1.0);
        assert!(matches!(signed_distance(&SlabSet::halfspace(g.clone(), 0).unwrap()), Err(Error::NoBoundary)));
        assert!(matches!(signed_distance(&SlabSet::halfspace(g, 4).unwrap()), Err(Error::NoBoundary)));
    }

    #[test]
    fn fat_neighborhood_of_flat_interface() {
        let g = grid(4, 16, 1.0); // dv = 0.125
        let s = SlabSet::halfspace(g.clone(), 8).unwrap();
        let m = fat_neighborhood(&s, 0.25).unwrap();
        // centers at +-0.0625, +-0.1875 qualify
        assert_eq!(m.count(), 4 * 4);
        assert!((m.volume() - 0.5).abs() <= g.vertical_step() + 1e-12);
        let m = fat_neighborhood(&s, 0.05).unwrap();
        assert_eq!(m.count(), 0);
        let m = fat_neighborhood(&s, 0.0625).unwrap();
        assert_eq!(m.count(), 8);
    }

    #[test]
    fn symmetric_difference_examples() {
        let g = grid(4, 8, 1.0);
        let a = SlabSet::halfspace(g.clone(), 4).unwrap();
        let b = SlabSet::halfspace(g.clone(), 5).unwrap();
        assert_eq!(symmetric_difference_volume(&a, &a).unwrap(), 0.0);
        assert!((symmetric_difference_volume(&a, &b).unwrap() - g.vertical_step()).abs() < 1e-15);
        let other = SlabSet::halfspace(grid(4, 6, 1.0), 3).unwrap();
        assert!(symmetric_difference_volume(&a, &other).is_err());
    }

    #[test]
    fn oscillation_and_vertical_scale() {
        let g = grid(512, 16, 1.0);
        let f = HeightField::from_fn(g.clone(), 1.3, |x| 0.2 * (2.0 * std::f64::consts::PI * x[0]).sin()).unwrap();
        let osc = oscillation(&f);
        assert!((osc - 0.4).abs() < 2.0 * std::f64::consts::PI * 0.2 / 512.0);
        let scaled = vertical_scale(&f, 0.25).unwrap();
        assert!((oscillation(&scaled) - 0.75 * osc).abs() < 1e-15);
        assert!((scaled.lipschitz() - 0.75 * 1.3).abs() < 1e-15);
        let c = HeightField::constant(g, 0.4).unwrap();
        assert_eq!(oscillation(&c), 0.0);
        assert!(vertical_scale(&c, 0.0).is_err());
        assert!(vertical_scale(&c, 1.0).is_err());
        let s = vertical_scale(&c, 0.5).unwrap();
        assert!(s.values().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let tiny = vertical_scale(&f, 1e-15).unwrap();
        for (a, b) in tiny.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sawtooth_oscillation() {
        // slope L on [0, 1/2), slope -L on [1/2, 1): max - min = L/2
        let l = 1.0;
        let g = grid(400, 8, 1.0);
        let f = HeightField::from_fn(g, l, |x| {
            let t = x[0];
            if t < 0.5 { l * t - 0.125 } else { l * (1.0 - t) - 0.125 }
        })
        .unwrap();
        assert!((oscillation(&f) - l / 2.0).abs() <= l / 400.0);
    }

    #[test]
    fn lipschitz_examples() {
        let g = grid(2, 4, 1.0);
        let f = HeightField::new(g.clone(), vec![0.0, 0.3], 0.6).unwrap();
        assert!((lipschitz_constant(&f) - 0.6).abs() < 1e-15);
        let c = HeightField::constant(g, 0.1).unwrap();
        assert_eq!(lipschitz_constant(&c), 0.0);
    }

    #[test]
    fn translation_examples() {
        let g = grid(4, 8, 1.0);
        let s = SlabSet::from_tops(g.clone(), vec![3, 4, 5, 4]).unwrap();
        assert_eq!(translate_set(&s, CellShift::default()).unwrap(), s);
        assert_eq!(translate_set(&s, CellShift::new([4, 0], 0)).unwrap(), s);
        let full = CellShift::from_lengths(&g, &[1.0], 0.0).unwrap();
        assert_eq!(translate_set(&s, full).unwrap(), s);
        let h0 = SlabSet::halfspace(g.clone(), 4).unwrap();
        let up = CellShift::from_lengths(&g, &[0.0], g.vertical_step()).unwrap();
        assert_eq!(translate_set(&h0, up).unwrap(), SlabSet::halfspace(g.clone(), 5).unwrap());
        assert!(translate_set(&s, CellShift::new([0, 0], 4)).is_err());
        assert!(CellShift::from_lengths(&g, &[0.1], 0.0).is_err());
        let moved = translate_set(&s, CellShift::new([1, 0], 0)).unwrap();
        assert_eq!(moved.tops(), &[4, 3, 4, 5]);
    }

    #[test]
    fn height_field_text_round_trip() {
        let g = grid(8, 16, 0.75);
        let f = HeightField::from_fn(g, 2.0, |x| 0.1 * (2.0 * std::f64::consts::PI * x[0]).sin()).unwrap();
        let back = HeightField::<f64>::from_text(&f.to_text()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn three_dimensional_columns() {
        let g = TorusGrid::new(3, 4, 6, 1.0).unwrap();
        assert_eq!(g.column_count(), 16);
        let c = g.column_from_coords([1, 2]);
        assert_eq!(g.column_coords(c), [1, 2]);
        let o = g.column_offset(c, g.column_from_coords([0, 3]));
        assert_eq!(g.offset_wrapped(o), [-1, 1]);
        assert_eq!(g.negate_offset(o), g.column_offset(g.column_from_coords([0, 3]), c));
        let f = HeightField::from_fn(g.clone(), 4.0, |x| 0.2 * (2.0 * std::f64::consts::PI * x[1]).sin()).unwrap();
        let s = build_slab_set(&f).unwrap();
        let sd = signed_distance(&s).unwrap();
        for col in 0..16 {
            for k in 0..6 {
                assert_eq!(sd.at(col, k) < 0.0, s.is_occupied(col, k));
            }
        }
    }

    #[test]
    fn single_precision_geometry() {
        let g = TorusGrid::<f32>::new(2, 8, 16, 1.0).unwrap();
        let f = HeightField::from_fn(g, 1.3, |x| 0.2 * (2.0 * std::f32::consts::PI * x[0]).sin()).unwrap();
        let s = build_slab_set(&f).unwrap();
        let sd = signed_distance(&s).unwrap();
        assert_eq!(sd.values().len(), 128);
        assert!((periodic_norm(&[0.75f32], 0.0, NormConvention::Squared) - 0.25).abs() < 1e-6);
    }
}
