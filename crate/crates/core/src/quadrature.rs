//! Gauss–Legendre cubature on boxes with geometric grading toward point
//! singularities, dyadic shells for singular corners, and semi-infinite tails.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Highest Gauss–Legendre order kept in the node table.
pub const MAX_ORDER: usize = 16;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (&'static [f64], &'static [f64]) {
    static TABLE: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..=MAX_ORDER).map(legendre_rule).collect());
    let (x, w) = &table[n.clamp(1, MAX_ORDER)];
    (x, w)
}

fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    match n {
        0 => return (Vec::new(), Vec::new()),
        1 => return (vec![0.0], vec![2.0]),
        _ => {}
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Axis-aligned box in up to three dimensions; only the first `dim` entries are used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cube {
    pub dim: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Cube {
    pub fn new(dim: usize, lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { dim, lo, hi }
    }

    fn half(&self, i: usize) -> f64 {
        0.5 * (self.hi[i] - self.lo[i])
    }

    fn split(&self, dims: &[bool; 3]) -> Vec<Cube> {
        let mut out = vec![*self];
        for i in 0..self.dim {
            if !dims[i] {
                continue;
            }
            let mid = 0.5 * (self.lo[i] + self.hi[i]);
            out = out
                .into_iter()
                .flat_map(|c| {
                    let mut a = c;
                    let mut b = c;
                    a.hi[i] = mid;
                    b.lo[i] = mid;
                    [a, b]
                })
                .collect();
        }
        out
    }
}

/// Where an integrand may lose smoothness.
pub trait Singularities: Sync {
    /// Distance from the box to the nearest point singularity (`0` if it touches one).
    fn distance(&self, cube: &Cube) -> f64;
    /// True if a jump surface crosses the box interior.
    fn straddles(&self, _cube: &Cube) -> bool {
        false
    }
}

/// No singularities at all.
pub struct Smooth;

impl Singularities for Smooth {
    fn distance(&self, _cube: &Cube) -> f64 {
        f64::INFINITY
    }
}

const GRADE_RATIO: f64 = 3.0;
const MAX_DEPTH: usize = 40;
const MAX_JUMP_DEPTH: usize = 9;
const TARGET_DIGITS: f64 = 13.0;

/// Gauss–Legendre order that makes the rule accurate to about [`TARGET_DIGITS`] for an
/// integrand analytic in a Bernstein ellipse reaching `ratio` half-lengths away.
fn order_for(ratio: f64, cap: usize) -> usize {
    if !ratio.is_finite() {
        return 1.max(cap.min(2));
    }
    let rho = ratio + (ratio * ratio - 1.0).max(0.0).sqrt();
    let q = (TARGET_DIGITS * std::f64::consts::LN_10 / (2.0 * rho.ln())).ceil() as usize;
    q.clamp(1, cap.max(1))
}

/// Tensor Gauss–Legendre rule with per-axis orders.
pub fn gl_cube(f: &dyn Fn(&[f64; 3]) -> f64, cube: &Cube, orders: [usize; 3]) -> f64 {
    let dim = cube.dim;
    let rules: Vec<(&[f64], &[f64])> = (0..dim).map(|i| gauss_legendre(orders[i])).collect();
    let mut p = [0.0; 3];
    let mut total = 0.0;
    let n0 = rules[0].0.len();
    let n1 = if dim > 1 { rules[1].0.len() } else { 1 };
    let n2 = if dim > 2 { rules[2].0.len() } else { 1 };
    let c = [
        0.5 * (cube.lo[0] + cube.hi[0]),
        0.5 * (cube.lo[1] + cube.hi[1]),
        0.5 * (cube.lo[2] + cube.hi[2]),
    ];
    let h = [cube.half(0), cube.half(1), cube.half(2)];
    for a in 0..n0 {
        p[0] = c[0] + h[0] * rules[0].0[a];
        let wa = rules[0].1[a];
        for b in 0..n1 {
            let wb = if dim > 1 {
                p[1] = c[1] + h[1] * rules[1].0[b];
                rules[1].1[b]
            } else {
                1.0
            };
            for k in 0..n2 {
                let wk = if dim > 2 {
                    p[2] = c[2] + h[2] * rules[2].0[k];
                    rules[2].1[k]
                } else {
                    1.0
                };
                total += wa * wb * wk * f(&p);
            }
        }
    }
    let jac: f64 = (0..dim).map(|i| h[i]).product();
    total * jac
}

/// Integrates over a box whose closure avoids every point singularity, grading the
/// partition geometrically toward the nearest one.
pub fn integrate_regular(f: &dyn Fn(&[f64; 3]) -> f64, cube: &Cube, sing: &dyn Singularities, cap: usize) -> f64 {
    integrate_regular_at(f, cube, sing, cap, 0, 0)
}

fn integrate_regular_at(
    f: &dyn Fn(&[f64; 3]) -> f64,
    cube: &Cube,
    sing: &dyn Singularities,
    cap: usize,
    depth: usize,
    jump_depth: usize,
) -> f64 {
    if jump_depth < MAX_JUMP_DEPTH && sing.straddles(cube) {
        return cube
            .split(&[true; 3])
            .iter()
            .map(|c| integrate_regular_at(f, c, sing, cap, depth, jump_depth + 1))
            .sum();
    }
    let dist = sing.distance(cube);
    let mut split = [false; 3];
    let mut any = false;
    for (i, s) in split.iter_mut().enumerate().take(cube.dim) {
        if cube.half(i) * GRADE_RATIO > dist {
            *s = true;
            any = true;
        }
    }
    if any && depth < MAX_DEPTH {
        return cube
            .split(&split)
            .iter()
            .map(|c| integrate_regular_at(f, c, sing, cap, depth + 1, jump_depth))
            .sum();
    }
    let mut orders = [1usize; 3];
    for (i, o) in orders.iter_mut().enumerate().take(cube.dim) {
        *o = order_for(dist / cube.half(i).max(f64::MIN_POSITIVE), cap);
    }
    gl_cube(f, cube, orders)
}

/// Integrates over a box with a point singularity at one corner (`at_hi[i]` selects
/// the upper face on axis `i`) by dyadic shells plus a geometric remainder.
pub fn integrate_corner(
    f: &dyn Fn(&[f64; 3]) -> f64,
    cube: &Cube,
    at_hi: [bool; 3],
    sing: &dyn Singularities,
    cap: usize,
) -> Result<f64> {
    let dim = cube.dim;
    let corner: [f64; 3] = std::array::from_fn(|i| if at_hi[i] { cube.hi[i] } else { cube.lo[i] });
    let far: [f64; 3] = std::array::from_fn(|i| if at_hi[i] { cube.lo[i] } else { cube.hi[i] });
    let mut total = 0.0;
    let mut prev_shell = f64::NAN;
    let mut prev_ratio = f64::NAN;
    let mut scale = 1.0;
    for level in 0..400 {
        let lo_far: [f64; 3] = std::array::from_fn(|i| corner[i] + (far[i] - corner[i]) * scale);
        let mid: [f64; 3] = std::array::from_fn(|i| corner[i] + (far[i] - corner[i]) * scale * 0.5);
        let mut shell = 0.0;
        for mask in 1u32..(1 << dim) {
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            for i in 0..dim {
                let (a, b) = if mask & (1 << i) != 0 { (mid[i], lo_far[i]) } else { (corner[i], mid[i]) };
                lo[i] = a.min(b);
                hi[i] = a.max(b);
            }
            shell += integrate_regular(f, &Cube::new(dim, lo, hi), sing, cap);
        }
        if !shell.is_finite() {
            return Err(Error::NonIntegrable(format!("non-finite shell contribution at level {level}")));
        }
        total += shell;
        scale *= 0.5;
        if shell == 0.0 {
            return Ok(total);
        }
        let ratio = shell / prev_shell;
        if level >= 12 && ratio.is_finite() && ratio >= 1.0 - 1e-9 {
            return Err(Error::NonIntegrable(format!(
                "shell contributions stop decaying near the singular corner (ratio {ratio:.4})"
            )));
        }
        let settled = (ratio - prev_ratio).abs() <= 1e-9 * ratio.abs().max(1.0);
        if level >= 6 && ratio.is_finite() && ratio > 0.0 && ratio < 1.0 && settled {
            let rest = shell * ratio / (1.0 - ratio);
            if rest.abs() <= 1e-3 * total.abs() || level >= 40 {
                return Ok(total + rest);
            }
        }
        if level >= 6 && shell.abs() <= 1e-15 * total.abs() {
            return Ok(total);
        }
        prev_ratio = ratio;
        prev_shell = shell;
    }
    Err(Error::NonIntegrable("dyadic refinement did not settle".into()))
}

/// `∫_a^∞ g(t) dt` for a smooth, eventually power-law decaying `g`.
pub fn semi_infinite(g: &dyn Fn(f64) -> f64, a: f64) -> Result<f64> {
    let (x, w) = gauss_legendre(MAX_ORDER);
    semi_infinite_by(
        &|lo: f64, hi: f64| {
            let c = 0.5 * (lo + hi);
            let h = 0.5 * (hi - lo);
            x.iter().zip(w).map(|(xi, wi)| wi * g(c + h * xi)).sum::<f64>() * h
        },
        a,
    )
}

/// Sums `piece(a 2^k, a 2^{k+1})` over doubling intervals and closes the series with a
/// geometric remainder once the interval ratio settles.
pub fn semi_infinite_by(piece: &dyn Fn(f64, f64) -> f64, a: f64) -> Result<f64> {
    assert!(a > 0.0, "semi-infinite integral needs a positive lower limit");
    let mut total = 0.0;
    let mut lo = a;
    let mut prev = f64::NAN;
    let mut prev_ratio = f64::NAN;
    for k in 0..1500 {
        let p = piece(lo, 2.0 * lo);
        if !p.is_finite() {
            return Err(Error::NonIntegrable("non-finite tail contribution".into()));
        }
        total += p;
        lo *= 2.0;
        if p == 0.0 {
            return Ok(total);
        }
        let ratio = p / prev;
        if k >= 8 && ratio.is_finite() && ratio >= 1.0 - 1e-9 {
            return Err(Error::NonIntegrable(format!("tail does not decay (interval ratio {ratio:.4})")));
        }
        let settled = (ratio - prev_ratio).abs() <= 1e-10 * ratio.abs().max(1.0);
        if k >= 3 && ratio > 0.0 && ratio < 1.0 && settled {
            return Ok(total + p * ratio / (1.0 - ratio));
        }
        if k >= 3 && p.abs() <= 1e-17 * total.abs() {
            return Ok(total);
        }
        if !lo.is_finite() {
            break;
        }
        prev_ratio = ratio;
        prev = p;
    }
    Err(Error::NonIntegrable("tail integral did not settle".into()))
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}
