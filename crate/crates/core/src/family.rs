//! Analytic density families and materialization onto grids.
//!
//! Families with a jump discontinuity (uniform, exponential) get the cell
//! containing the jump assigned its exact cell-average mass, so total mass
//! is preserved exactly and moment errors stay O(h^2). Smooth families are
//! sampled pointwise at cell centers, where the midpoint rule is spectrally
//! accurate.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::density::{GridConfig, GridDensity};
use crate::error::{Error, Result};
use crate::special::{beta_inc, gamma_p, normal_cdf, normal_sf, phi};

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Gaussian { mean: f64, sd: f64 },
    Uniform { a: f64, b: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    Beta { alpha: f64, beta: f64 },
    GaussianMixture { components: Vec<MixtureComponent> },
    Triangular { a: f64, c: f64, b: f64 },
    GridFile { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// A density family plus the flag deciding whether `materialize` applies the
/// affine map to mean 0, variance 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySpec {
    pub family: Family,
    pub standardize: bool,
}

impl FamilySpec {
    pub fn new(family: Family, standardize: bool) -> Self {
        Self { family, standardize }
    }

    /// Standard normal.
    pub fn gaussian(mean: f64, sd: f64) -> Self {
        Self::new(Family::Gaussian { mean, sd }, true)
    }

    /// Gaussian left on its own scale.
    pub fn gaussian_raw(mean: f64, sd: f64) -> Self {
        Self::new(Family::Gaussian { mean, sd }, false)
    }

    /// Uniform standardized to [-sqrt(3), sqrt(3)].
    pub fn uniform_std() -> Self {
        Self::new(Family::Uniform { a: 0.0, b: 1.0 }, true)
    }

    /// Exponential standardized to density e^{-(x+1)} on x >= -1.
    pub fn exponential_std() -> Self {
        Self::new(Family::Exponential { rate: 1.0 }, true)
    }

    pub fn gamma_std(shape: f64) -> Self {
        Self::new(Family::Gamma { shape, scale: 1.0 }, true)
    }

    pub fn beta_std(alpha: f64, beta: f64) -> Self {
        Self::new(Family::Beta { alpha, beta }, true)
    }

    pub fn triangular_std() -> Self {
        Self::new(Family::Triangular { a: -1.0, c: 0.0, b: 1.0 }, true)
    }

    pub fn mixture_std(components: Vec<MixtureComponent>) -> Self {
        Self::new(Family::GaussianMixture { components }, true)
    }

    /// Parse the name used by the CLI `--family` flag; standardized.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "gaussian" | "normal" => Ok(Self::gaussian(0.0, 1.0)),
            "uniform" => Ok(Self::uniform_std()),
            "exponential" => Ok(Self::exponential_std()),
            "gamma2" => Ok(Self::gamma_std(2.0)),
            "gamma4" => Ok(Self::gamma_std(4.0)),
            "beta22" => Ok(Self::beta_std(2.0, 2.0)),
            "beta25" => Ok(Self::beta_std(2.0, 5.0)),
            "triangular" => Ok(Self::triangular_std()),
            "mixture" => Ok(Self::mixture_std(vec![
                MixtureComponent { weight: 0.6, mean: -0.8, sd: 0.8 },
                MixtureComponent { weight: 0.4, mean: 1.2, sd: 0.9 },
            ])),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

impl Family {
    fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::Uniform { .. } => "uniform",
            Family::Exponential { .. } => "exponential",
            Family::Gamma { .. } => "gamma",
            Family::Beta { .. } => "beta",
            Family::GaussianMixture { .. } => "gaussian_mixture",
            Family::Triangular { .. } => "triangular",
            Family::GridFile { .. } => "grid_file",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidParams { family: self.name().into(), reason: reason.into() })
        };
        match self {
            Family::Gaussian { sd, .. } => {
                if !(*sd > 0.0) {
                    return bad("sd must be positive");
                }
            }
            Family::Uniform { a, b } => {
                if !(b > a) {
                    return bad("requires b > a");
                }
            }
            Family::Exponential { rate } => {
                if !(*rate > 0.0) {
                    return bad("rate must be positive");
                }
            }
            Family::Gamma { shape, scale } => {
                if !(*shape >= 1.0) || !(*scale > 0.0) {
                    return bad("requires shape >= 1 (bounded density) and scale > 0");
                }
            }
            Family::Beta { alpha, beta } => {
                if !(*alpha >= 1.0) || !(*beta >= 1.0) {
                    return bad("requires alpha, beta >= 1 (bounded density)");
                }
            }
            Family::GaussianMixture { components } => {
                if components.is_empty() {
                    return bad("needs at least one component");
                }
                let w: f64 = components.iter().map(|c| c.weight).sum();
                if (w - 1.0).abs() > 1e-9 || components.iter().any(|c| c.weight < 0.0 || c.sd <= 0.0)
                {
                    return bad("weights must be nonnegative and sum to 1; sds positive");
                }
            }
            Family::Triangular { a, c, b } => {
                if !(a <= c && c <= b && b > a) {
                    return bad("requires a <= c <= b with b > a");
                }
            }
            Family::GridFile { .. } => {}
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            Family::Gaussian { mean, .. } => *mean,
            Family::Uniform { a, b } => 0.5 * (a + b),
            Family::Exponential { rate } => 1.0 / rate,
            Family::Gamma { shape, scale } => shape * scale,
            Family::Beta { alpha, beta } => alpha / (alpha + beta),
            Family::GaussianMixture { components } => {
                components.iter().map(|c| c.weight * c.mean).sum()
            }
            Family::Triangular { a, c, b } => (a + b + c) / 3.0,
            Family::GridFile { .. } => unreachable!("grid files carry their own moments"),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Family::Gaussian { sd, .. } => sd * sd,
            Family::Uniform { a, b } => (b - a) * (b - a) / 12.0,
            Family::Exponential { rate } => 1.0 / (rate * rate),
            Family::Gamma { shape, scale } => shape * scale * scale,
            Family::Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            Family::GaussianMixture { components } => {
                let m = self.mean();
                components
                    .iter()
                    .map(|c| c.weight * (c.sd * c.sd + (c.mean - m) * (c.mean - m)))
                    .sum()
            }
            Family::Triangular { a, c, b } => {
                (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0
            }
            Family::GridFile { .. } => unreachable!("grid files carry their own moments"),
        }
    }

    /// Density on the family's own scale.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Family::Gaussian { mean, sd } => phi((x - mean) / sd) / sd,
            Family::Uniform { a, b } => {
                if x >= *a && x <= *b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Family::Exponential { rate } => {
                if x >= 0.0 {
                    rate * (-rate * x).exp()
                } else {
                    0.0
                }
            }
            Family::Gamma { shape, scale } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let z = x / scale;
                ((shape - 1.0) * z.ln() - z - libm::lgamma(*shape)).exp() / scale
            }
            Family::Beta { alpha, beta } => {
                if x <= 0.0 || x >= 1.0 {
                    return 0.0;
                }
                let ln_b =
                    libm::lgamma(alpha + beta) - libm::lgamma(*alpha) - libm::lgamma(*beta);
                (ln_b + (alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln()).exp()
            }
            Family::GaussianMixture { components } => components
                .iter()
                .map(|c| c.weight * phi((x - c.mean) / c.sd) / c.sd)
                .sum(),
            Family::Triangular { a, c, b } => {
                if x < *a || x > *b {
                    0.0
                } else if x <= *c {
                    if c > a {
                        2.0 * (x - a) / ((b - a) * (c - a))
                    } else {
                        2.0 / (b - a)
                    }
                } else if b > c {
                    2.0 * (b - x) / ((b - a) * (b - c))
                } else {
                    2.0 / (b - a)
                }
            }
            Family::GridFile { .. } => unreachable!(),
        }
    }

    /// Distribution function, used for exact jump-cell averages and tail
    /// accounting.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Family::Gaussian { mean, sd } => normal_cdf((x - mean) / sd),
            Family::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Family::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -libm::expm1(-rate * x)
                }
            }
            Family::Gamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_p(*shape, x / scale)
                }
            }
            Family::Beta { alpha, beta } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    beta_inc(*alpha, *beta, x)
                }
            }
            Family::GaussianMixture { components } => components
                .iter()
                .map(|c| c.weight * normal_cdf((x - c.mean) / c.sd))
                .sum(),
            Family::Triangular { a, c, b } => {
                if x <= *a {
                    0.0
                } else if x >= *b {
                    1.0
                } else if x <= *c {
                    (x - a) * (x - a) / ((b - a) * (c - a))
                } else {
                    1.0 - (b - x) * (b - x) / ((b - a) * (b - c))
                }
            }
            Family::GridFile { .. } => unreachable!(),
        }
    }

    /// Tail mass outside [lo, hi], with accurate upper tails.
    fn tail_mass(&self, lo: f64, hi: f64) -> f64 {
        let upper = match self {
            Family::Gaussian { mean, sd } => normal_sf((hi - mean) / sd),
            Family::GaussianMixture { components } => components
                .iter()
                .map(|c| c.weight * normal_sf((hi - c.mean) / c.sd))
                .sum(),
            _ => 1.0 - self.cdf(hi),
        };
        self.cdf(lo) + upper
    }

    /// Locations where the density jumps (support edges with nonzero value).
    fn jumps(&self) -> Vec<f64> {
        match self {
            Family::Uniform { a, b } => vec![*a, *b],
            Family::Exponential { .. } => vec![0.0],
            _ => Vec::new(),
        }
    }
}

/// Evaluate a family's density on `grid` and renormalize. When
/// `spec.standardize` is set, the affine change of variables to mean 0 and
/// variance 1 is applied analytically (the grid holds
/// `sigma * pdf(mean + sigma * y)`).
pub fn materialize(spec: &FamilySpec, grid: GridConfig) -> Result<GridDensity> {
    assert!(grid.points >= (1 << 10), "grid needs at least 2^10 points");
    if let Family::GridFile { path } = &spec.family {
        let p = read_grid_file(path)?;
        return if spec.standardize { p.standardize() } else { Ok(p) };
    }
    let (shift, scale) = if spec.standardize {
        (spec.family.mean(), spec.family.variance().sqrt())
    } else {
        (0.0, 1.0)
    };
    materialize_affine(&spec.family, shift, scale, grid)
}

/// Materialize the density of `w * X` analytically (no interpolation), where
/// `X` follows the standardized family. Used to prepare weighted summands.
pub fn materialize_scaled(spec: &FamilySpec, w: f64, grid: GridConfig) -> Result<GridDensity> {
    assert!(w > 0.0);
    if let Family::GridFile { .. } = &spec.family {
        let std = materialize(spec, grid)?;
        return std.scale_onto(w, grid);
    }
    // w * (X - m)/s  ==  affine view with shift m and output scale s/w
    let (m, s) = (spec.family.mean(), spec.family.variance().sqrt());
    materialize_affine(&spec.family, m, s / w, grid)
}

/// Materialize `scale_out^{-1} * (X - shift)` where X has the given family:
/// density `scale_out * pdf(shift + scale_out * y)`, with exact jump-cell
/// averages through the family CDF.
fn materialize_affine(
    family: &Family,
    shift: f64,
    scale_out: f64,
    grid: GridConfig,
) -> Result<GridDensity> {
    family.validate()?;
    let h = grid.h();
    let to_src = |y: f64| shift + scale_out * y;
    let jumps = family.jumps();
    let mut values = Vec::with_capacity(grid.points);
    for i in 0..grid.points {
        let y = grid.x0() + i as f64 * h;
        let (l, r) = (to_src(y - 0.5 * h), to_src(y + 0.5 * h));
        let straddles = jumps.iter().any(|j| *j > l && *j < r);
        let v = if straddles {
            (family.cdf(r) - family.cdf(l)) / h
        } else {
            scale_out * family.pdf(to_src(y))
        };
        values.push(v.max(0.0));
    }
    let tail = family.tail_mass(to_src(grid.lo), to_src(grid.hi));
    if tail > crate::density::TOL_TRUNCATED {
        return Err(Error::GridTooSmall { deficit: tail });
    }
    let mass = h * values.iter().sum::<f64>();
    if !(mass > 0.0) {
        return Err(Error::AllZero);
    }
    let inv = 1.0 / mass;
    for v in &mut values {
        *v *= inv;
    }
    Ok(GridDensity::from_parts(grid.x0(), h, values, tail))
}

/// Two-column text format: x and p(x), equally spaced x.
pub fn read_grid_file(path: &Path) -> Result<GridDensity> {
    let text = fs::read_to_string(path)?;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (x, v) = match (it.next(), it.next()) {
            (Some(x), Some(v)) => (x, v),
            _ => {
                return Err(Error::GridFileFormat(format!(
                    "line {}: expected two columns",
                    lineno + 1
                )))
            }
        };
        let x: f64 = x.parse().map_err(|_| {
            Error::GridFileFormat(format!("line {}: bad x value", lineno + 1))
        })?;
        let v: f64 = v.parse().map_err(|_| {
            Error::GridFileFormat(format!("line {}: bad density value", lineno + 1))
        })?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::GridFileFormat(format!(
                "line {}: density must be finite and nonnegative",
                lineno + 1
            )));
        }
        xs.push(x);
        vs.push(v);
    }
    if xs.len() < 2 {
        return Err(Error::GridFileFormat("need at least two rows".into()));
    }
    let h = xs[1] - xs[0];
    if !(h > 0.0) {
        return Err(Error::GridFileFormat("x must be strictly increasing".into()));
    }
    for i in 1..xs.len() {
        let step = xs[i] - xs[i - 1];
        if (step - h).abs() > 1e-9 * h {
            return Err(Error::GridFileFormat(format!(
                "x spacing mismatch at row {}: {} vs {}",
                i + 1,
                step,
                h
            )));
        }
    }
    GridDensity::new(xs[0], h, vs, 0.0)
}

// JSON encoding: {"family": "...", "params": {...}, "standardize": bool}

impl Serialize for FamilySpec {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let params = match &self.family {
            Family::Gaussian { mean, sd } => json!({"mean": mean, "sd": sd}),
            Family::Uniform { a, b } => json!({"a": a, "b": b}),
            Family::Exponential { rate } => json!({"rate": rate}),
            Family::Gamma { shape, scale } => json!({"shape": shape, "scale": scale}),
            Family::Beta { alpha, beta } => json!({"alpha": alpha, "beta": beta}),
            Family::GaussianMixture { components } => json!({"components": components}),
            Family::Triangular { a, c, b } => json!({"a": a, "c": c, "b": b}),
            Family::GridFile { path } => json!({"path": path}),
        };
        json!({
            "family": self.family.name(),
            "params": params,
            "standardize": self.standardize,
        })
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for FamilySpec {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(de)?;
        parse_family_spec(&v).map_err(D::Error::custom)
    }
}

pub fn parse_family_spec(v: &Value) -> Result<FamilySpec> {
    let name = v
        .get("family")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::UnknownFamily("<missing family field>".into()))?;
    let standardize = v.get("standardize").and_then(Value::as_bool).unwrap_or(true);
    let p = v.get("params").cloned().unwrap_or_else(|| json!({}));
    let num = |key: &str, default: Option<f64>| -> Result<f64> {
        match p.get(key).and_then(Value::as_f64) {
            Some(x) => Ok(x),
            None => default.ok_or_else(|| Error::InvalidParams {
                family: name.into(),
                reason: format!("missing parameter `{key}`"),
            }),
        }
    };
    let family = match name {
        "gaussian" | "normal" => Family::Gaussian {
            mean: num("mean", Some(0.0))?,
            sd: num("sd", Some(1.0))?,
        },
        "uniform" => Family::Uniform { a: num("a", Some(0.0))?, b: num("b", Some(1.0))? },
        "exponential" => Family::Exponential { rate: num("rate", Some(1.0))? },
        "gamma" => Family::Gamma { shape: num("shape", None)?, scale: num("scale", Some(1.0))? },
        "beta" => Family::Beta { alpha: num("alpha", None)?, beta: num("beta", None)? },
        "gaussian_mixture" => {
            let components: Vec<MixtureComponent> = serde_json::from_value(
                p.get("components").cloned().unwrap_or(Value::Null),
            )
            .map_err(|e| Error::InvalidParams {
                family: name.into(),
                reason: format!("components: {e}"),
            })?;
            Family::GaussianMixture { components }
        }
        "triangular" => Family::Triangular {
            a: num("a", Some(-1.0))?,
            c: num("c", Some(0.0))?,
            b: num("b", Some(1.0))?,
        },
        "grid_file" => {
            let path = p
                .get("path")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::InvalidParams {
                    family: name.into(),
                    reason: "missing parameter `path`".into(),
                })?;
            Family::GridFile { path: PathBuf::from(path) }
        }
        other => return Err(Error::UnknownFamily(other.into())),
    };
    family.validate()?;
    Ok(FamilySpec { family, standardize })
}
