//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{NormConvention, TorusGrid};
use crate::initial::InitialSpec;
use crate::kernel::{KernelSpec, PsiTable};
use crate::perimeter::{FunctionalKind, FunctionalSpec, ZeroParts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Flow,
    Ladder,
    Probe,
    Validate,
    Oracle,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Flow, Mode::Ladder, Mode::Probe, Mode::Validate, Mode::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Flow => "flow",
            Mode::Ladder => "ladder",
            Mode::Probe => "probe",
            Mode::Validate => "validate",
            Mode::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Fully validated run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub dim: usize,
    pub n_cols: usize,
    pub n_levels: usize,
    pub half_height: f64,
    pub functional: FunctionalSpec,
    /// Path the ψ table was read from.
    pub psi_table: Option<PathBuf>,
    pub weight_cache: Option<PathBuf>,
    pub initial: InitialSpec,
    pub lipschitz: Option<f64>,
    pub h: Option<f64>,
    pub hs: Vec<f64>,
    pub t_final: Option<f64>,
    pub record_every: usize,
    pub band: bool,
    pub eps: Vec<f64>,
    pub delta: f64,
    pub n_pairs: usize,
    pub competitors: usize,
    pub oracle_instances: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn grid(&self) -> Result<TorusGrid<f64>> {
        TorusGrid::new(self.dim, self.n_cols, self.n_levels, self.half_height)
    }
}

const KEYS: &[&str] = &[
    "mode",
    "dim",
    "n_cols",
    "n_levels",
    "R",
    "kind",
    "family",
    "s",
    "p",
    "gamma",
    "r_cut",
    "norm",
    "psi_table",
    "weight_cache",
    "alpha",
    "rho",
    "zero_parts",
    "initial",
    "value",
    "amplitude",
    "frequency",
    "slope",
    "L",
    "seed",
    "h",
    "hs",
    "T",
    "record_every",
    "band",
    "eps",
    "delta",
    "n_pairs",
    "competitors",
    "oracle_instances",
    "out_dir",
];

/// Collects every problem instead of stopping at the first.
struct Reader {
    map: BTreeMap<String, (usize, String)>,
    errors: Vec<String>,
}

impl Reader {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn parse<V: std::str::FromStr>(&mut self, key: &str) -> Option<V> {
        let (line, text) = self.map.get(key)?.clone();
        match text.parse::<V>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.errors.push(format!("{key} (line {line}): cannot parse `{text}`"));
                None
            }
        }
    }

    fn list(&mut self, key: &str) -> Vec<f64> {
        let Some((line, text)) = self.map.get(key).cloned() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.parse::<f64>() {
                Ok(v) => out.push(v),
                Err(_) => self.errors.push(format!("{key} (line {line}): cannot parse `{part}`")),
            }
        }
        out
    }

    fn required<V: std::str::FromStr>(&mut self, key: &str) -> Option<V> {
        if !self.map.contains_key(key) {
            self.errors.push(format!("{key}: required"));
            return None;
        }
        self.parse(key)
    }

    fn check(&mut self, key: &str, ok: bool, why: impl FnOnce() -> String) {
        if !ok {
            self.errors.push(format!("{key}: {}", why()));
        }
    }
}

/// Parses and validates a configuration. Relative paths resolve against `base`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_in(text, None)
}

pub fn parse_config_in(text: &str, base: Option<&std::path::Path>) -> Result<RunConfig> {
    let mut r = Reader { map: BTreeMap::new(), errors: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            r.errors.push(format!("line {ln}: expected `key = value`"));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            r.errors.push(format!("{k} (line {ln}): unknown key"));
            continue;
        }
        if r.map.insert(k.to_string(), (ln, v.to_string())).is_some() {
            r.errors.push(format!("{k} (line {ln}): duplicate key"));
        }
    }
    let path = |p: &str| -> PathBuf {
        let p = PathBuf::from(p);
        match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }
    };

    let mode = match r.raw("mode") {
        None => None,
        Some(m) => {
            let m = m.to_string();
            let parsed = Mode::parse(&m);
            r.check("mode", parsed.is_some(), || format!("unknown mode `{m}` (flow, ladder, probe, validate, oracle)"));
            parsed
        }
    };

    let dim: usize = r.parse("dim").unwrap_or(2);
    r.check("dim", dim == 2 || dim == 3, || format!("must be 2 or 3, got {dim}"));
    let n_cols: usize = r.required("n_cols").unwrap_or(2);
    r.check("n_cols", n_cols >= 2, || format!("must be at least 2, got {n_cols}"));
    let n_levels: usize = r.required("n_levels").unwrap_or(2);
    r.check("n_levels", n_levels >= 2, || format!("must be at least 2, got {n_levels}"));
    let half_height: f64 = r.required("R").unwrap_or(1.0);
    r.check("R", half_height > 0.0 && half_height.is_finite(), || format!("must be positive, got {half_height}"));

    // functional
    let kind_name = r.raw("kind").unwrap_or("").to_string();
    let kind = FunctionalKind::parse(&kind_name);
    if r.raw("kind").is_none() {
        r.errors.push("kind: required".into());
    } else if kind.is_none() {
        let names: Vec<_> = FunctionalKind::ALL.iter().map(|k| k.name()).collect();
        r.errors.push(format!("kind: unknown functional `{kind_name}` ({})", names.join(", ")));
    }
    let mut psi_table = None;
    let functional = match kind {
        Some(FunctionalKind::Kernel) => {
            let s: f64 = r.required("s").unwrap_or(0.5);
            let family = r.raw("family").unwrap_or("fractional_geodesic").to_string();
            let mut spec = match family.as_str() {
                "fractional_geodesic" => KernelSpec::fractional(dim, s),
                "fractional_aniso" => match r.raw("psi_table").map(path) {
                    None => {
                        r.errors.push("psi_table: required for family fractional_aniso".into());
                        KernelSpec::fractional(dim, s)
                    }
                    Some(p) => match PsiTable::load(dim, &p) {
                        Ok(t) => {
                            psi_table = Some(p);
                            KernelSpec::aniso(dim, s, t)
                        }
                        Err(e) => {
                            r.errors.push(format!("psi_table: {} ({e})", p.display()));
                            KernelSpec::fractional(dim, s)
                        }
                    },
                },
                other => {
                    r.errors.push(format!("family: unknown kernel family `{other}` (fractional_geodesic, fractional_aniso)"));
                    KernelSpec::fractional(dim, s)
                }
            };
            if let Some(p) = r.parse("p") {
                spec.p = p;
            }
            if let Some(g) = r.parse("gamma") {
                spec.gamma = g;
            }
            spec.r_cut = r.parse("r_cut");
            match r.raw("norm") {
                None | Some("squared") => {}
                Some("as_printed") => spec.norm = NormConvention::AsPrinted,
                Some(o) => {
                    let o = o.to_string();
                    r.errors.push(format!("norm: unknown convention `{o}` (squared, as_printed)"));
                }
            }
            if let Err(e) = spec.validate(dim) {
                r.errors.push(format!("s/p/gamma: {e}"));
            }
            FunctionalSpec::Kernel(spec)
        }
        Some(FunctionalKind::SharpFractional) => FunctionalSpec::SharpFractional { s: r.required("s").unwrap_or(0.5) },
        Some(FunctionalKind::Riesz) => FunctionalSpec::Riesz { alpha: r.required("alpha").unwrap_or(0.5) },
        Some(FunctionalKind::ZeroFractional) => {
            let parts = match r.raw("zero_parts").unwrap_or("both") {
                "both" => ZeroParts::BOTH,
                "short" => ZeroParts { short: true, long: false },
                "long" => ZeroParts { short: false, long: true },
                o => {
                    let o = o.to_string();
                    r.errors.push(format!("zero_parts: unknown value `{o}` (both, short, long)"));
                    ZeroParts::BOTH
                }
            };
            FunctionalSpec::ZeroFractional(parts)
        }
        Some(FunctionalKind::Minkowski) => FunctionalSpec::Minkowski { rho: r.required("rho").unwrap_or(1.0) },
        Some(FunctionalKind::Euclidean) | None => FunctionalSpec::Euclidean,
    };
    let relevant: &[&str] = match kind {
        Some(FunctionalKind::Kernel) => &["s", "family", "p", "gamma", "r_cut", "norm", "psi_table", "weight_cache"],
        Some(FunctionalKind::SharpFractional) => &["s"],
        Some(FunctionalKind::Riesz) => &["alpha"],
        Some(FunctionalKind::ZeroFractional) => &["zero_parts"],
        Some(FunctionalKind::Minkowski) => &["rho"],
        _ => &[],
    };
    for key in ["s", "family", "p", "gamma", "r_cut", "norm", "psi_table", "weight_cache", "alpha", "rho", "zero_parts"] {
        if kind.is_some() && r.map.contains_key(key) && !relevant.contains(&key) {
            r.errors.push(format!("{key}: does not apply to kind `{kind_name}`"));
        }
    }
    if let Ok(g) = TorusGrid::new(dim, n_cols, n_levels, half_height) {
        if kind.is_some() && !matches!(functional, FunctionalSpec::Kernel(_)) {
            if let Err(e) = functional.validate(&g) {
                r.errors.push(match e {
                    Error::InvalidParameter { name, reason } => format!("{name}: {reason}"),
                    e => e.to_string(),
                });
            }
        }
    }
    let weight_cache = r.raw("weight_cache").map(path);

    // initial datum
    let seed: u64 = r.parse("seed").unwrap_or(0);
    let init_name = r.raw("initial").unwrap_or("").to_string();
    let initial = match init_name.as_str() {
        "constant" => InitialSpec::Constant { value: r.parse("value").unwrap_or(0.0) },
        "sinusoid" => InitialSpec::Sinusoid { amplitude: r.required("amplitude").unwrap_or(0.0), frequency: r.parse("frequency").unwrap_or(1) },
        "sawtooth" => InitialSpec::Sawtooth { slope: r.required("slope").unwrap_or(0.0), frequency: r.parse("frequency").unwrap_or(1) },
        "random_lipschitz" => InitialSpec::RandomLipschitz {
            amplitude: r.required("amplitude").unwrap_or(0.0),
            lipschitz: r.required("L").unwrap_or(1.0),
            seed,
        },
        "" => {
            r.errors.push("initial: required".into());
            InitialSpec::Constant { value: 0.0 }
        }
        o => {
            r.errors.push(format!("initial: unknown generator `{o}` (constant, sinusoid, sawtooth, random_lipschitz)"));
            InitialSpec::Constant { value: 0.0 }
        }
    };
    let lipschitz = if matches!(initial, InitialSpec::RandomLipschitz { .. }) { None } else { r.parse("L") };
    if let Some(l) = lipschitz {
        let declared = initial.declared_lipschitz(dim);
        r.check("L", l + 1e-12 >= declared, || format!("{} needs L >= {declared:.6}, got {l}", initial.name()));
    }
    if let InitialSpec::Sinusoid { amplitude, .. } | InitialSpec::RandomLipschitz { amplitude, .. } = initial {
        r.check("amplitude", amplitude.abs() < half_height, || format!("|amplitude| must stay inside the slab (R = {half_height})"));
    }
    if let InitialSpec::Constant { value } = initial {
        r.check("value", value.abs() < half_height, || format!("must lie inside (-R, R) = (-{half_height}, {half_height})"));
    }

    // flow parameters
    let h: Option<f64> = r.parse("h");
    if let Some(h) = h {
        r.check("h", h > 0.0 && h.is_finite(), || format!("must be positive, got {h}"));
    }
    let hs = r.list("hs");
    r.check("hs", hs.iter().all(|&h| h > 0.0) && hs.windows(2).all(|w| w[1] < w[0]), || "must be positive and strictly descending".into());
    let t_final: Option<f64> = r.parse("T");
    if let Some(t) = t_final {
        r.check("T", t >= 0.0 && t.is_finite(), || format!("must be nonnegative, got {t}"));
        if let Some(h) = h.filter(|h| *h > 0.0) {
            r.check("T", crate::flow::step_count(h, t).is_ok(), || format!("must be a multiple of h = {h} within the step budget"));
        }
        for &hh in hs.iter().filter(|h| **h > 0.0) {
            r.check("hs", crate::flow::step_count(hh, t).is_ok(), || format!("T = {t} is not a multiple of {hh}"));
        }
    }
    let record_every: usize = r.parse("record_every").unwrap_or(1);
    r.check("record_every", record_every >= 1, || "must be at least 1".into());
    let band: bool = r.parse("band").unwrap_or(true);
    let eps = r.list("eps");
    r.check("eps", eps.iter().all(|&e| e > 0.0 && e < 1.0), || "values must lie in (0, 1)".into());
    let delta: f64 = r.parse("delta").unwrap_or(1e-2);
    r.check("delta", delta > 0.0, || "must be positive".into());
    let n_pairs: usize = r.parse("n_pairs").unwrap_or(1000);
    r.check("n_pairs", n_pairs >= 1, || "must be at least 1".into());
    let competitors: usize = r.parse("competitors").unwrap_or(100);
    r.check("competitors", competitors >= 1, || "must be at least 1".into());
    let oracle_instances: usize = r.parse("oracle_instances").unwrap_or(20);
    let out_dir = r.raw("out_dir").map(path);

    match mode {
        Some(Mode::Flow) => {
            r.check("h", h.is_some(), || "required in flow mode".into());
            r.check("T", t_final.is_some(), || "required in flow mode".into());
        }
        Some(Mode::Ladder) => {
            r.check("hs", hs.len() >= 3, || "ladder mode needs at least three time steps".into());
            r.check("T", t_final.is_some(), || "required in ladder mode".into());
        }
        Some(Mode::Probe) => r.check("eps", !eps.is_empty(), || "required in probe mode".into()),
        _ => {}
    }

    if !r.errors.is_empty() {
        return Err(Error::Config(r.errors));
    }
    Ok(RunConfig {
        mode,
        dim,
        n_cols,
        n_levels,
        half_height,
        functional,
        psi_table,
        weight_cache,
        initial,
        lipschitz,
        h,
        hs,
        t_final,
        record_every,
        band,
        eps,
        delta,
        n_pairs,
        competitors,
        oracle_instances,
        seed,
        out_dir,
    })
}
