//! Interaction kernels on the periodic cylinder and their specifications.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::NormConvention;
use crate::quadrature::{gamma, gauss_legendre};

/// Distance to the nearest integer.
#[inline]
pub(crate) fn wrap(x: f64) -> f64 {
    x - x.round()
}

/// Periodic norm of `(horizontal, vertical)` for the given convention.
#[inline]
pub(crate) fn torus_norm(p: &[f64; 3], dim: usize, convention: NormConvention) -> f64 {
    let v = p[dim - 1];
    let mut h2 = 0.0;
    for &x in &p[..dim - 1] {
        let w = wrap(x);
        h2 += w * w;
    }
    match convention {
        NormConvention::Squared => (h2 + v * v).sqrt(),
        NormConvention::AsPrinted => (h2.sqrt() + v * v).sqrt(),
    }
}

/// Zero-homogeneous angular factor tabulated on a set of directions, looked up by
/// nearest direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiTable {
    dim: usize,
    directions: Vec<[f64; 3]>,
    values: Vec<f64>,
}

impl PsiTable {
    pub fn new(dim: usize, directions: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(param("psi", "dimension must be 2 or 3"));
        }
        if directions.is_empty() || directions.len() != values.len() {
            return Err(param("psi", "needs one value per direction and at least one direction"));
        }
        let mut dirs = Vec::with_capacity(directions.len());
        for d in directions {
            if d.len() != dim {
                return Err(param("psi", format!("direction {d:?} does not have {dim} components")));
            }
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n.is_finite() && n > 0.0) {
                return Err(param("psi", "directions must be nonzero"));
            }
            let mut u = [0.0; 3];
            for (i, x) in d.iter().enumerate() {
                u[i] = x / n;
            }
            dirs.push(u);
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(param("psi", "values must be positive and finite"));
        }
        Ok(Self { dim, directions: dirs, values })
    }

    /// Uniform table on `n` planar directions (`d = 2`) from a function of the angle.
    pub fn planar(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut dirs = Vec::with_capacity(n);
        let mut vals = Vec::with_capacity(n);
        for k in 0..n {
            let th = std::f64::consts::TAU * k as f64 / n as f64;
            dirs.push(vec![th.cos(), th.sin()]);
            vals.push(f(th));
        }
        Self::new(2, dirs, vals)
    }

    /// Reads lines `u_1 ... u_d value`; `#` starts a comment.
    pub fn from_text(dim: usize, text: &str) -> Result<Self> {
        let mut dirs = Vec::new();
        let mut vals = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| Error::Parse(format!("psi table line {}: {e}", ln + 1)))?;
            if nums.len() != dim + 1 {
                return Err(Error::Parse(format!("psi table line {}: expected {} numbers", ln + 1, dim + 1)));
            }
            vals.push(nums[dim]);
            dirs.push(nums[..dim].to_vec());
        }
        Self::new(dim, dirs, vals)
    }

    pub fn load(dim: usize, path: &Path) -> Result<Self> {
        Self::from_text(dim, &std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn lookup(&self, u: &[f64; 3]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut val = self.values[0];
        for (d, v) in self.directions.iter().zip(&self.values) {
            let dot: f64 = (0..self.dim).map(|i| d[i] * u[i]).sum();
            if dot > best {
                best = dot;
                val = *v;
            }
        }
        val
    }

    /// Largest `|ψ(u) − ψ(g u)|` over table directions for the sign flips `g` in `flips`
    /// (one bool per axis).
    fn flip_defect(&self, flips: &[[bool; 3]]) -> f64 {
        let mut worst: f64 = 0.0;
        for (d, v) in self.directions.iter().zip(&self.values) {
            for f in flips {
                let mut g = *d;
                for i in 0..self.dim {
                    if f[i] {
                        g[i] = -g[i];
                    }
                }
                worst = worst.max((self.lookup(&g) - v).abs());
            }
        }
        worst
    }

    /// Defect of `ψ(u) = ψ(−u)`.
    pub fn evenness_defect(&self) -> f64 {
        self.flip_defect(&[[true; 3]])
    }

    /// Defect of the separate reflections `x' → −x'` and `x_d → −x_d`.
    pub fn reflection_defect(&self) -> f64 {
        let d = self.dim;
        let mut hor = [false; 3];
        for h in hor.iter_mut().take(d - 1) {
            *h = true;
        }
        let mut ver = [false; 3];
        ver[d - 1] = true;
        self.flip_defect(&[hor, ver])
    }
}

/// User-supplied kernel `K(ξ)` evaluated at a representative offset.
#[derive(Clone)]
pub struct CustomKernel {
    pub name: String,
    pub f: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    /// Whether `K(ξ) = K(−ξ)` and the coordinate reflections hold.
    pub symmetric: bool,
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel").field("name", &self.name).field("symmetric", &self.symmetric).finish()
    }
}

#[derive(Clone, Debug)]
pub enum KernelFamily {
    FractionalGeodesic,
    FractionalAniso(PsiTable),
    Custom(CustomKernel),
}

impl KernelFamily {
    pub fn name(&self) -> &str {
        match self {
            KernelFamily::FractionalGeodesic => "fractional_geodesic",
            KernelFamily::FractionalAniso(_) => "fractional_aniso",
            KernelFamily::Custom(c) => &c.name,
        }
    }
}

/// Kernel of a nonlocal perimeter `P_K(E) = ∫_E ∫_{E^c} K(x − y)`.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub s: f64,
    pub p: f64,
    pub gamma: f64,
    pub r_cut: Option<f64>,
    pub norm: NormConvention,
}

impl KernelSpec {
    /// `‖ξ‖^{-(d+s)}` with the decay exponent and bound constant it satisfies.
    pub fn fractional(dim: usize, s: f64) -> Self {
        Self {
            family: KernelFamily::FractionalGeodesic,
            s,
            p: dim as f64 + s,
            gamma: 1.0,
            r_cut: None,
            norm: NormConvention::Squared,
        }
    }

    pub fn aniso(dim: usize, s: f64, psi: PsiTable) -> Self {
        let gamma = psi.max_value();
        Self { family: KernelFamily::FractionalAniso(psi), s, p: dim as f64 + s, gamma, r_cut: None, norm: NormConvention::Squared }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::NonIntegrable(format!("s = {} must lie in (0,1)", self.s)));
        }
        if !(self.p > 2.0) || !self.p.is_finite() {
            return Err(Error::NonIntegrable(format!("tail exponent p = {} must exceed 2", self.p)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(param("gamma", "must be positive"));
        }
        if let KernelFamily::FractionalAniso(psi) = &self.family {
            if psi.dim() != dim {
                return Err(param("psi", "table dimension differs from the grid"));
            }
        }
        Ok(())
    }

    /// Evaluates `K` at the offset `p` (horizontal components first, vertical last).
    pub fn eval(&self, p: &[f64; 3], dim: usize) -> f64 {
        let r = torus_norm(p, dim, self.norm);
        let base = r.powf(-(dim as f64 + self.s));
        match &self.family {
            KernelFamily::FractionalGeodesic => base,
            KernelFamily::FractionalAniso(psi) => {
                let mut u = [0.0; 3];
                for i in 0..dim - 1 {
                    u[i] = wrap(p[i]);
                }
                u[dim - 1] = p[dim - 1];
                let n = (0..dim).map(|i| u[i] * u[i]).sum::<f64>().sqrt();
                if n > 0.0 {
                    for x in u.iter_mut().take(dim) {
                        *x /= n;
                    }
                }
                psi.lookup(&u) * base
            }
            KernelFamily::Custom(c) => (c.f)(&p[..dim - 1], p[dim - 1]),
        }
    }

    /// Evenness and coordinate-reflection symmetry of the kernel, as declared.
    pub fn symmetric(&self) -> bool {
        match &self.family {
            KernelFamily::FractionalGeodesic => true,
            KernelFamily::FractionalAniso(psi) => psi.evenness_defect() == 0.0 && psi.reflection_defect() == 0.0,
            KernelFamily::Custom(c) => c.symmetric,
        }
    }

    /// Cache header fields.
    pub fn signature(&self) -> String {
        let r = self.r_cut.map_or_else(|| "none".to_string(), |r| format!("{r:e}"));
        format!("{} {:e} {:e} {:e} {}", self.family.name(), self.s, self.p, self.gamma, r)
    }
}

/// Result of sampling the kernel against its declared bounds.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct KernelBoundReport {
    pub samples: usize,
    pub tail_violations: usize,
    pub core_violations: usize,
    pub worst_tail_ratio: f64,
    pub worst_core_ratio: f64,
}

/// Spot-checks `K ≤ γ|ξ_d|^{-p}` for `|ξ_d| ≥ 1` and `K ≤ γ‖ξ‖^{-(d+s)}` for `|ξ_d| < 1`.
pub fn check_kernel_bounds(spec: &KernelSpec, dim: usize, samples: usize, seed: u64) -> KernelBoundReport {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rep = KernelBoundReport { samples, ..Default::default() };
    for i in 0..samples {
        let mut p = [0.0; 3];
        for x in p.iter_mut().take(dim - 1) {
            *x = rng.gen_range(-0.5..0.5);
        }
        let v = if i % 2 == 0 { rng.gen_range(1.0..50.0) } else { rng.gen_range(-1.0..1.0) };
        p[dim - 1] = if rng.gen_bool(0.5) { v } else { -v };
        let k = spec.eval(&p, dim);
        let vd = p[dim - 1].abs();
        if vd >= 1.0 {
            let ratio = k / (spec.gamma * vd.powf(-spec.p));
            rep.worst_tail_ratio = rep.worst_tail_ratio.max(ratio);
            if ratio > 1.0 + 1e-12 {
                rep.tail_violations += 1;
            }
        } else {
            let r = torus_norm(&p, dim, spec.norm);
            if r == 0.0 {
                continue;
            }
            let ratio = k / (spec.gamma * r.powf(-(dim as f64 + spec.s)));
            rep.worst_core_ratio = rep.worst_core_ratio.max(ratio);
            if ratio > 1.0 + 1e-12 {
                rep.core_violations += 1;
            }
        }
    }
    rep
}

/// Radial window applied to a kernel, on the periodic norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    All,
    Inside(f64),
    Outside(f64),
}

impl Window {
    #[inline]
    pub fn keeps(self, r: f64) -> bool {
        match self {
            Window::All => true,
            Window::Inside(a) => r < a,
            Window::Outside(a) => r > a,
        }
    }

    pub fn radius(self) -> Option<f64> {
        match self {
            Window::All => None,
            Window::Inside(a) | Window::Outside(a) => Some(a),
        }
    }
}

/// Horizontally averaged far field `c·t^{-β}` of a kernel, valid for `t ≥ from`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FarField {
    pub coef: f64,
    pub beta: f64,
    pub from: f64,
}

/// Point-evaluable kernel used to build cell-pair weights.
pub trait Kernel: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, p: &[f64; 3]) -> f64;
    fn window(&self) -> Window {
        Window::All
    }
    fn far_field(&self) -> Option<FarField> {
        None
    }
    /// Evenness plus coordinate reflections and (for `d = 3`) horizontal axis swap.
    fn symmetric(&self) -> bool {
        true
    }
}

/// `ψ(ξ/‖ξ‖)·‖ξ‖^{-(d+s)}` and custom kernels.
pub struct SpecKernel<'a> {
    pub spec: &'a KernelSpec,
    pub dim: usize,
}

impl Kernel for SpecKernel<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, p: &[f64; 3]) -> f64 {
        self.spec.eval(p, self.dim)
    }
    fn symmetric(&self) -> bool {
        match &self.spec.family {
            KernelFamily::FractionalGeodesic => true,
            // the horizontal axis swap is not part of the declared symmetry
            _ => self.dim == 2 && self.spec.symmetric(),
        }
    }
}

/// `‖ξ‖^{-e}` on the periodic norm, optionally windowed (Riesz and zero-order kernels).
pub struct PowerKernel {
    pub dim: usize,
    pub exponent: f64,
    pub window: Window,
}

impl Kernel for PowerKernel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, p: &[f64; 3]) -> f64 {
        let r = torus_norm(p, self.dim, NormConvention::Squared);
        if self.window.keeps(r) {
            r.powf(-self.exponent)
        } else {
            0.0
        }
    }
    fn window(&self) -> Window {
        self.window
    }
}

/// Constant `c_{d,s} = ∫_{ℝ^{d−1}} (|u|² + 1)^{-(d+s)/2} du`.
pub fn image_constant(dim: usize, s: f64) -> f64 {
    match dim {
        2 => std::f64::consts::PI.sqrt() * gamma((1.0 + s) / 2.0) / gamma((2.0 + s) / 2.0),
        _ => std::f64::consts::TAU / (1.0 + s),
    }
}

/// `∫_b^∞ (u² + t²)^{-e/2} du` for `b > 0`, `e > 1`.
pub fn power_tail(b: f64, t: f64, e: f64) -> f64 {
    let t = t.abs();
    if t == 0.0 {
        return b.powf(1.0 - e) / (e - 1.0);
    }
    if b >= 2.0 * t {
        return binomial_tail(b, t, e);
    }
    // the integrand is analytic within distance t of [b, 2t]
    let (x, w) = gauss_legendre(crate::quadrature::MAX_ORDER);
    let (lo, hi) = (b, 2.0 * t);
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let near = x
        .iter()
        .zip(w)
        .map(|(xi, wi)| {
            let u = c + h * xi;
            wi * (u * u + t * t).powf(-e / 2.0)
        })
        .sum::<f64>()
        * h;
    near + binomial_tail(hi, t, e)
}

/// Series `Σ_k C(−e/2, k) t^{2k} b^{1−e−2k}/(e+2k−1)`, for `t ≤ b/2`.
fn binomial_tail(b: f64, t: f64, e: f64) -> f64 {
    let r = (t / b) * (t / b);
    let mut coef = 1.0;
    let mut pow = 1.0;
    let mut sum = 0.0;
    for k in 0..200 {
        let kf = k as f64;
        let term = coef * pow / (e + 2.0 * kf - 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        coef *= (-e / 2.0 - kf) / (kf + 1.0);
        pow *= r;
    }
    sum * b.powf(1.0 - e)
}

/// Euler–Maclaurin end corrections `g'/24 − 7g'''/5760` of `g(u) = (u² + t²)^{-e/2}` at `u = b`.
#[inline]
fn power_end_correction(b: f64, t: f64, e: f64) -> f64 {
    let q = b * b + t * t;
    let g1 = -e * b * q.powf(-e / 2.0 - 1.0);
    let g3 = 3.0 * e * (e + 2.0) * b * q.powf(-e / 2.0 - 2.0)
        - e * (e + 2.0) * (e + 4.0) * b.powi(3) * q.powf(-e / 2.0 - 3.0);
    g1 / 24.0 - 7.0 * g3 / 5760.0
}

/// Periodic-image sum `Σ_{z∈ℤ^{d−1}} |(ξ' + z, ξ_d)|^{-e}` on one axis: direct terms for
/// `|z| ≤ z_max` plus an Euler–Maclaurin tail.
fn image_row(x: f64, t: f64, e: f64, z_max: i64) -> f64 {
    let x = wrap(x);
    let t2 = t * t;
    let mut acc = 0.0;
    for z in -z_max..=z_max {
        let u = x + z as f64;
        acc += (u * u + t2).powf(-e / 2.0);
    }
    let h = z_max as f64 + 0.5;
    for b in [h + x, h - x] {
        acc += power_tail(b, t, e) + power_end_correction(b, t, e);
    }
    acc
}

/// Image-summed Euclidean kernel `K♯(ξ) = Σ_z |ξ + (z, 0)|^{-(d+s)}`.
pub struct SharpKernel {
    pub dim: usize,
    pub s: f64,
}

const SHARP_IMAGES_2D: i64 = 16;
const SHARP_IMAGES_3D: i64 = 8;
/// Height beyond which the horizontal variation of `K♯` is below ~1e-10 of its mean.
pub const SHARP_FAR_FROM: f64 = 4.0;

impl SharpKernel {
    pub fn eval_with_images(&self, p: &[f64; 3], z_max: i64) -> f64 {
        let e = self.dim as f64 + self.s;
        if self.dim == 2 {
            return image_row(p[0], p[1], e, z_max);
        }
        let y = wrap(p[1]);
        let t2 = p[2] * p[2];
        let mut acc = 0.0;
        for z in -z_max..=z_max {
            let v = y + z as f64;
            acc += image_row(p[0], (v * v + t2).sqrt(), e, SHARP_IMAGES_2D);
        }
        // rows beyond |z| > z_max: each row sums to c·ρ^{1−e}, ρ² = v² + t²
        let c1 = std::f64::consts::PI.sqrt() * gamma((e - 1.0) / 2.0) / gamma(e / 2.0);
        let h = z_max as f64 + 0.5;
        let t = p[2].abs();
        let e1 = e - 1.0;
        for b in [h + y, h - y] {
            acc += c1 * (power_tail(b, t, e1) + power_end_correction(b, t, e1));
        }
        acc
    }
}

impl Kernel for SharpKernel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, p: &[f64; 3]) -> f64 {
        let z = if self.dim == 2 { SHARP_IMAGES_2D } else { SHARP_IMAGES_3D };
        self.eval_with_images(p, z)
    }
    fn far_field(&self) -> Option<FarField> {
        Some(FarField { coef: image_constant(self.dim, self.s), beta: 1.0 + self.s, from: SHARP_FAR_FROM })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_tail_matches_quadrature() {
        for &(b, t, e) in &[(3.5, 0.2, 2.5), (10.5, 1.3, 2.1), (6.5, 0.0, 2.9), (2.5, 4.0, 3.7), (0.3, 1.0, 2.5)] {
            let exact = crate::quadrature::semi_infinite(&|u: f64| (u * u + t * t).powf(-e / 2.0), b).unwrap();
            let v = power_tail(b, t, e);
            assert!((v - exact).abs() < 1e-11 * exact, "b={b} t={t} e={e}: {v} vs {exact}");
        }
    }

    #[test]
    fn sharp_kernel_converges_in_images() {
        let k = SharpKernel { dim: 2, s: 0.5 };
        for &(x, t) in &[(0.1, 0.05), (0.4, 0.7), (0.0, 2.0)] {
            let p = [x, t, 0.0];
            let a = k.eval(&p);
            let n = 100_000i64;
            let mut brute = 0.0;
            for z in -n..=n {
                let u = x + z as f64;
                brute += (u * u + t * t).powf(-1.25);
            }
            let h = n as f64 + 0.5;
            brute += power_tail(h + x, t, 2.5) + power_tail(h - x, t, 2.5);
            assert!((a - brute).abs() < 1e-10 * brute, "{a} vs {brute}");
        }
    }

    #[test]
    fn sharp_far_field_mean() {
        let k = SharpKernel { dim: 2, s: 0.3 };
        let t = SHARP_FAR_FROM;
        let c = image_constant(2, 0.3) * t.powf(-1.3);
        for x in [0.0, 0.25, 0.5] {
            let v = k.eval(&[x, t, 0.0]);
            assert!((v - c).abs() < 1e-9 * c, "{v} vs {c}");
        }
        let k3 = SharpKernel { dim: 3, s: 0.4 };
        let c3 = image_constant(3, 0.4) * t.powf(-1.4);
        let v = k3.eval(&[0.3, 0.1, t]);
        assert!((v - c3).abs() < 1e-8 * c3, "{v} vs {c3}");
    }

    #[test]
    fn psi_lookup_and_symmetry() {
        let psi = PsiTable::planar(8, |th| 1.0 + 0.5 * (2.0 * th).cos()).unwrap();
        assert!(psi.evenness_defect() < 1e-12);
        assert!(psi.reflection_defect() < 1e-12);
        assert!((psi.lookup(&[1.0, 0.05, 0.0]) - 1.5).abs() < 1e-12);
        let skew = PsiTable::planar(8, |th| 1.0 + 0.5 * th.cos()).unwrap();
        assert!(skew.evenness_defect() > 0.1);
        let text = "1 0 2\n-1 0 2\n0 1 1 # up\n0 -1 1\n";
        let t = PsiTable::from_text(2, text).unwrap();
        assert_eq!(t.lookup(&[0.1, -0.9, 0.0]), 1.0);
        assert!(PsiTable::from_text(2, "1 0").is_err());
    }

    #[test]
    fn kernel_spec_bounds_and_validation() {
        let spec = KernelSpec::fractional(2, 0.5);
        assert!(spec.validate(2).is_ok());
        let rep = check_kernel_bounds(&spec, 2, 2000, 7);
        assert_eq!(rep.tail_violations + rep.core_violations, 0);
        let mut bad = spec.clone();
        bad.s = 1.5;
        assert!(matches!(bad.validate(2), Err(Error::NonIntegrable(_))));
        bad.s = 0.5;
        bad.p = 1.0;
        assert!(bad.validate(2).is_err());
        let mut loose = spec.clone();
        loose.p = 4.0;
        assert!(check_kernel_bounds(&loose, 2, 2000, 7).tail_violations > 0);
    }

    #[test]
    fn geodesic_kernel_is_periodic() {
        let spec = KernelSpec::fractional(2, 0.5);
        let a = spec.eval(&[0.2, 0.3, 0.0], 2);
        let b = spec.eval(&[1.2, 0.3, 0.0], 2);
        let c = spec.eval(&[-0.8, -0.3, 0.0], 2);
        assert!((a - b).abs() < 1e-12 * a && (a - c).abs() < 1e-12 * a);
    }
}
