//! Initial height fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param, Result};
use crate::grid::{HeightField, TorusGrid};
use crate::scalar::Real;

/// Generator of an initial periodic Lipschitz graph.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    Constant { value: f64 },
    /// `A sin(2πkx)` for `d = 2`, `A sin(2πkx) sin(2πky)` for `d = 3`.
    Sinusoid { amplitude: f64, frequency: u32 },
    /// Triangle wave in `x` with slopes `±L` and `k` teeth (oscillation `L/(2k)`).
    Sawtooth { slope: f64, frequency: u32 },
    /// Periodic midpoint-displacement path, increments clipped to `L δ'`, mean 0,
    /// values clipped to `±amplitude`.
    RandomLipschitz { amplitude: f64, lipschitz: f64, seed: u64 },
}

impl InitialSpec {
    pub fn name(&self) -> &'static str {
        match self {
            InitialSpec::Constant { .. } => "constant",
            InitialSpec::Sinusoid { .. } => "sinusoid",
            InitialSpec::Sawtooth { .. } => "sawtooth",
            InitialSpec::RandomLipschitz { .. } => "random_lipschitz",
        }
    }

    /// Lipschitz bound the generated field is declared with.
    pub fn declared_lipschitz(&self, dim: usize) -> f64 {
        let _ = dim;
        match *self {
            InitialSpec::Constant { .. } => 0.0,
            InitialSpec::Sinusoid { amplitude, frequency } => std::f64::consts::TAU * frequency as f64 * amplitude.abs(),
            InitialSpec::Sawtooth { slope, .. } => slope.abs(),
            InitialSpec::RandomLipschitz { lipschitz, .. } => lipschitz,
        }
    }
}

/// Samples the generator at column centers. `lipschitz` overrides the declared bound
/// and must not be smaller than it.
pub fn generate_initial<T: Real>(spec: &InitialSpec, grid: &TorusGrid<T>, lipschitz: Option<f64>) -> Result<HeightField<T>> {
    let dim = grid.dim();
    let declared = spec.declared_lipschitz(dim);
    let l = match lipschitz {
        Some(l) if l + 1e-12 < declared => {
            return Err(param(
                "lipschitz",
                format!("{} needs L >= {declared:.6}, got {l}", spec.name()),
            ))
        }
        Some(l) => l,
        None => declared,
    };
    let r = grid.half_height().f64();
    let values: Vec<f64> = match *spec {
        InitialSpec::Constant { value } => vec![value; grid.column_count()],
        InitialSpec::Sinusoid { amplitude, frequency } => {
            if frequency == 0 {
                return Err(param("frequency", "must be at least 1"));
            }
            let k = std::f64::consts::TAU * frequency as f64;
            (0..grid.column_count())
                .map(|c| {
                    let [x, y] = grid.column_center(c).map(|v| v.f64());
                    if dim == 2 {
                        amplitude * (k * x).sin()
                    } else {
                        amplitude * (k * x).sin() * (k * y).sin()
                    }
                })
                .collect()
        }
        InitialSpec::Sawtooth { slope, frequency } => {
            if frequency == 0 {
                return Err(param("frequency", "must be at least 1"));
            }
            let period = 1.0 / frequency as f64;
            (0..grid.column_count())
                .map(|c| {
                    let x = grid.column_center(c)[0].f64();
                    let u = (x / period).fract() * period;
                    slope * (period / 4.0 - (u - period / 2.0).abs())
                })
                .collect()
        }
        InitialSpec::RandomLipschitz { amplitude, lipschitz: lr, seed } => {
            if !(lr > 0.0) {
                return Err(param("lipschitz", "random_lipschitz needs L > 0"));
            }
            if !(amplitude > 0.0) {
                return Err(param("amplitude", "must be positive"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let step = grid.horizontal_step().f64();
            let n = grid.n_cols();
            if dim == 2 {
                random_path(&mut rng, n, amplitude, lr * step)
            } else {
                // sum of two axis paths, each with half the slope budget per axis
                let gx = random_path(&mut rng, n, amplitude, lr * step / 2.0);
                let gy = random_path(&mut rng, n, amplitude, lr * step / 2.0);
                (0..grid.column_count())
                    .map(|c| {
                        let [a, b] = grid.column_coords(c);
                        (gx[a] + gy[b]).clamp(-amplitude, amplitude)
                    })
                    .collect()
            }
        }
    };
    if let Some(v) = values.iter().find(|v| !(v.abs() < r)) {
        return Err(param("amplitude", format!("initial value {v} leaves the slab (-{r}, {r})")));
    }
    let values = values.into_iter().map(T::lit).collect();
    HeightField::new(grid.clone(), values, T::lit(l))
}

/// Periodic path of `n` values with `|increment| ≤ max_step`, mean 0, `|value| ≤ amplitude`.
fn random_path(rng: &mut ChaCha8Rng, n: usize, amplitude: f64, max_step: f64) -> Vec<f64> {
    // midpoint displacement on the periodic index range
    let mut v = vec![f64::NAN; n];
    v[0] = 0.0;
    let mut fixed = vec![0usize];
    let mut scale = amplitude;
    let mut width = n;
    while width > 1 {
        let mut next = Vec::with_capacity(2 * fixed.len());
        for (i, &a) in fixed.iter().enumerate() {
            let b = if i + 1 < fixed.len() { fixed[i + 1] } else { n };
            next.push(a);
            if b - a >= 2 {
                let mid = a + (b - a) / 2;
                let vb = v[b % n];
                v[mid] = 0.5 * (v[a] + vb) + scale * rng.gen_range(-1.0..1.0);
                next.push(mid);
            }
        }
        fixed = next;
        scale *= 0.5;
        width = width.div_ceil(2);
    }
    let mut inc: Vec<f64> = (0..n).map(|i| v[(i + 1) % n] - v[i]).collect();
    let cap = max_step * (1.0 - 1e-9);
    for _ in 0..200 {
        for d in inc.iter_mut() {
            *d = d.clamp(-cap, cap);
        }
        let mean = inc.iter().sum::<f64>() / n as f64;
        if mean.abs() <= 1e-15 * cap.max(1e-300) {
            break;
        }
        for d in inc.iter_mut() {
            *d -= mean;
        }
    }
    for d in inc.iter_mut() {
        *d = d.clamp(-max_step, max_step);
    }
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    for d in &inc[..n] {
        out.push(acc);
        acc += d;
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    out.iter().map(|x| (x - mean).clamp(-amplitude, amplitude)).collect()
}
