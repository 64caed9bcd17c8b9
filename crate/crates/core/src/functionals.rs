//! Entropy and distance functionals: differential entropy, entropic distance
//! to normality, relative entropy against the standard normal, total
//! variation, quadratic Wasserstein, and the bounded-density entropy bound.
//!
//! Conventions: total variation is the mass of the difference,
//! `int |p - q|`, ranging over [0, 2]. Under that convention Pinsker reads
//! `D(X||Z) >= TV^2 / 8`.

use serde::{Deserialize, Serialize};

use crate::density::{GridConfig, GridDensity};
use crate::error::{Error, Result};
use crate::family::{materialize, FamilySpec};
use crate::special::phi;

const LOG_2PI: f64 = 1.8378770664093453;

/// Differential entropy -int p log p, with 0 log 0 = 0.
pub fn differential_entropy(p: &GridDensity) -> f64 {
    let mut acc = 0.0;
    for v in &p.values {
        if *v > 0.0 {
            acc -= v * v.ln();
        }
    }
    acc * p.h
}

/// Entropic distance to normality D(X) = h(Z) - h(X), Z matched in mean and
/// variance. Returns the raw quadrature value, which may be a hair negative.
pub fn entropic_distance_raw(p: &GridDensity) -> Result<f64> {
    let m = p.moments()?;
    Ok(0.5 * (LOG_2PI + 1.0) + 0.5 * m.variance.ln() - differential_entropy(p))
}

/// D(X) clamped at zero for reporting.
pub fn entropic_distance(p: &GridDensity) -> Result<f64> {
    Ok(entropic_distance_raw(p)?.max(0.0))
}

/// Relative entropy D(X||Z) = int p log(p/phi) against the standard normal.
/// log(phi) is expanded analytically so far tails never underflow.
pub fn relative_entropy_vs_std_normal(p: &GridDensity) -> f64 {
    let mut acc = 0.0;
    for (i, v) in p.values.iter().enumerate() {
        if *v > 0.0 {
            let x = p.x(i);
            acc += v * (v.ln() + 0.5 * x * x + 0.5 * LOG_2PI);
        }
    }
    acc * p.h
}

/// Total variation int |p - q|, aligning grids by resampling if needed.
pub fn tv_distance(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    let q = align_onto(p, q)?;
    let mut acc = 0.0;
    for (a, b) in p.values.iter().zip(q.values.iter()) {
        acc += (a - b).abs();
    }
    Ok(acc * p.h)
}

/// Total variation against the standard normal on p's own grid.
pub fn tv_distance_to_std_normal(p: &GridDensity) -> f64 {
    let mut acc = 0.0;
    for (i, v) in p.values.iter().enumerate() {
        acc += (v - phi(p.x(i))).abs();
    }
    acc * p.h
}

/// Quadratic Wasserstein distance via the monotone (quantile) coupling,
/// optimal in one dimension: W2^2 = int_0^1 (Fp^{-1}(u) - Fq^{-1}(u))^2 du
/// by midpoint rule with 2^14 nodes.
pub fn w2_distance(p: &GridDensity, q: &GridDensity) -> f64 {
    let qp = QuantileFn::new(p);
    let qq = QuantileFn::new(q);
    let nodes = 1 << 14;
    let mut acc = 0.0;
    for j in 0..nodes {
        let u = (j as f64 + 0.5) / nodes as f64;
        let d = qp.eval(u) - qq.eval(u);
        acc += d * d;
    }
    (acc / nodes as f64).sqrt()
}

/// W2 against the standard normal materialized on p's grid window.
pub fn w2_distance_to_std_normal(p: &GridDensity) -> Result<f64> {
    let cfg = GridConfig {
        points: p.len(),
        lo: p.x0 - 0.5 * p.h,
        hi: p.x0 + (p.len() as f64 - 0.5) * p.h,
    };
    let z = materialize(&FamilySpec::gaussian(0.0, 1.0), cfg)?;
    Ok(w2_distance(p, &z))
}

/// Piecewise-linear quantile function built from cumulative cell masses.
struct QuantileFn {
    edges: Vec<f64>, // CDF at right cell edges
    x0: f64,
    h: f64,
    values: Vec<f64>,
}

impl QuantileFn {
    fn new(p: &GridDensity) -> Self {
        Self { edges: p.cdf_edges(), x0: p.x0, h: p.h, values: p.values.clone() }
    }

    fn eval(&self, u: f64) -> f64 {
        let n = self.edges.len();
        // first cell with cumulative mass >= u
        let mut lo = 0usize;
        let mut hi = n - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.edges[mid] < u {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let prev = if lo == 0 { 0.0 } else { self.edges[lo - 1] };
        let left = self.x0 + lo as f64 * self.h - 0.5 * self.h;
        let dens = self.values[lo];
        if dens > 0.0 {
            left + ((u - prev) / (self.h * dens)).clamp(0.0, 1.0) * self.h
        } else {
            left
        }
    }
}

/// Entropy bound for a density bounded by M with standard deviation sigma:
/// D(X) <= log(M sigma sqrt(2 pi e)). Requires M sigma >= 1/sqrt(12), the
/// universal lower bound attained only by uniform laws.
pub fn bounded_density_bound(m: f64, sigma: f64) -> Result<f64> {
    assert!(m > 0.0 && sigma > 0.0);
    let ms = m * sigma;
    if ms < 1.0 / 12f64.sqrt() {
        return Err(Error::ImpossibleDensityBound { m_sigma: ms });
    }
    Ok(ms.ln() + 0.5 * (LOG_2PI + 1.0))
}

/// Full functional panel for one density.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DistanceReport {
    pub entropy: f64,
    pub entropic_distance: f64,
    pub entropic_distance_raw: f64,
    pub relative_entropy: f64,
    pub tv: f64,
    pub w2: f64,
    pub density_max: f64,
    pub pinsker_slack: f64,
    pub talagrand_slack: f64,
}

pub fn distance_report(p: &GridDensity) -> Result<DistanceReport> {
    let entropy = differential_entropy(p);
    let raw = entropic_distance_raw(p)?;
    let rel = relative_entropy_vs_std_normal(p);
    let tv = tv_distance_to_std_normal(p);
    let w2 = w2_distance_to_std_normal(p)?;
    Ok(DistanceReport {
        entropy,
        entropic_distance: raw.max(0.0),
        entropic_distance_raw: raw,
        relative_entropy: rel,
        tv,
        w2,
        density_max: p.max_value(),
        pinsker_slack: rel - tv * tv / 8.0,
        talagrand_slack: 2.0 * rel - w2 * w2,
    })
}

/// Resample q onto p's grid if the layouts differ.
fn align_onto(p: &GridDensity, q: &GridDensity) -> Result<GridDensity> {
    if (p.h - q.h).abs() <= 1e-12 * p.h {
        let offset = (q.x0 - p.x0) / p.h;
        if (offset - offset.round()).abs() <= 1e-9 {
            // same lattice; pad/trim by index shift
            let shift = offset.round() as isize;
            let mut values = vec![0.0; p.len()];
            for (j, v) in q.values.iter().enumerate() {
                let i = j as isize + shift;
                if i >= 0 && (i as usize) < values.len() {
                    values[i as usize] = *v;
                }
            }
            return Ok(GridDensity {
                x0: p.x0,
                h: p.h,
                values,
                truncated_mass: q.truncated_mass,
            });
        }
    }
    if !q.h.is_finite() || q.h <= 0.0 {
        return Err(Error::IncompatibleGrids("invalid spacing".into()));
    }
    q.resample_onto(p.x0, p.h, p.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GridConfig;

    const D_UNIFORM: f64 = 0.17648521034325676; // (1/2) log(pi e / 6)
    const D_EXP: f64 = 0.4189385332046727; // (1/2) log(2 pi e) - 1

    #[test]
    fn entropy_closed_forms() {
        let fine = GridConfig::fine_single();
        let z = materialize(&FamilySpec::gaussian(0.0, 1.0), fine).unwrap();
        let hz = differential_entropy(&z);
        assert!((hz - 0.5 * (LOG_2PI + 1.0)).abs() < 1e-8, "h(Z) = {hz}");

        let u = materialize(&FamilySpec::uniform_std(), fine).unwrap();
        let hu = differential_entropy(&u);
        assert!((hu - (2.0 * 3.0f64.sqrt()).ln()).abs() < 1e-4, "h(U) = {hu}");

        let e = materialize(&FamilySpec::exponential_std(), fine).unwrap();
        let he = differential_entropy(&e);
        assert!((he - 1.0).abs() < 1e-7, "h(E) = {he}");
    }

    #[test]
    fn entropic_distance_closed_forms() {
        let fine = GridConfig::fine_single();
        let z = materialize(&FamilySpec::gaussian(0.0, 1.0), fine).unwrap();
        assert!(entropic_distance(&z).unwrap() < 1e-7);
        assert!(entropic_distance_raw(&z).unwrap() >= -1e-7);

        let u = materialize(&FamilySpec::uniform_std(), fine).unwrap();
        assert!((entropic_distance(&u).unwrap() - D_UNIFORM).abs() < 1e-4);

        let e = materialize(&FamilySpec::exponential_std(), fine).unwrap();
        assert!((entropic_distance(&e).unwrap() - D_EXP).abs() < 1e-4);
    }

    #[test]
    fn gaussian_entropic_distance_is_affine_invariant() {
        let g = GridConfig::default_single();
        let p = materialize(&FamilySpec::gaussian_raw(5.0, 2.0), g).unwrap();
        let d = entropic_distance(&p).unwrap();
        assert!(d < 1e-7, "D of a shifted gaussian = {d}");
    }

    #[test]
    fn relative_entropy_values() {
        let g = GridConfig::default_single();
        let z = materialize(&FamilySpec::gaussian(0.0, 1.0), g).unwrap();
        assert!(relative_entropy_vs_std_normal(&z).abs() < 1e-10);

        // N(0, 1/4): log 2 + (1/4 - 1)/2
        let half = materialize(&FamilySpec::gaussian_raw(0.0, 0.5), g).unwrap();
        let truth = 2.0f64.ln() - 0.375;
        let got = relative_entropy_vs_std_normal(&half);
        assert!((got - truth).abs() < 1e-8, "got {got}, expected {truth}");

        // standardized input: relative entropy equals entropic distance
        let u = materialize(&FamilySpec::uniform_std(), GridConfig::fine_single()).unwrap();
        let d = entropic_distance(&u).unwrap();
        let rel = relative_entropy_vs_std_normal(&u);
        assert!((d - rel).abs() < 1e-7);
        assert!((rel - D_UNIFORM).abs() < 1e-4);
    }

    #[test]
    fn relative_entropy_mismatch_formula() {
        // D(X||Z) = D(X) + log(1/sigma) + (E X^2 - 1)/2 for mean-zero X
        let g = GridConfig::default_single();
        let p = materialize(&FamilySpec::gaussian_raw(0.3, 1.4), g).unwrap();
        let m = p.moments().unwrap();
        let d = entropic_distance_raw(&p).unwrap();
        let ex2 = m.variance + m.mean * m.mean;
        let expected = d - 0.5 * m.variance.ln() + (ex2 - 1.0) / 2.0;
        let got = relative_entropy_vs_std_normal(&p);
        assert!((got - expected).abs() < 1e-9, "got {got}, expected {expected}");
    }

    #[test]
    fn tv_basics() {
        let g = GridConfig::default_single();
        let p = materialize(&FamilySpec::uniform_std(), g).unwrap();
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);

        // disjoint supports -> 2
        let a = materialize(
            &FamilySpec::new(crate::family::Family::Uniform { a: -10.0, b: -5.0 }, false),
            g,
        )
        .unwrap();
        let b = materialize(
            &FamilySpec::new(crate::family::Family::Uniform { a: 5.0, b: 10.0 }, false),
            g,
        )
        .unwrap();
        let tv = tv_distance(&a, &b).unwrap();
        assert!((tv - 2.0).abs() < 1e-9);
    }

    #[test]
    fn tv_uniform_vs_normal_cross_checked_at_higher_resolution() {
        let coarse = materialize(&FamilySpec::uniform_std(), GridConfig::default_single()).unwrap();
        let tv = tv_distance_to_std_normal(&coarse);
        let fine = materialize(
            &FamilySpec::uniform_std(),
            GridConfig::new(1 << 16, -32.0, 32.0),
        )
        .unwrap();
        let oracle = tv_distance_to_std_normal(&fine);
        assert!((tv - oracle).abs() < 1e-4, "tv={tv} oracle={oracle}");
    }

    #[test]
    fn w2_translation_cost() {
        let g = GridConfig::default_single();
        let p = materialize(&FamilySpec::gaussian(0.0, 1.0), g).unwrap();
        assert!(w2_distance(&p, &p) < 1e-12);
        for m in [0.5, 2.0, -1.25] {
            let q = materialize(&FamilySpec::gaussian_raw(m, 1.0), g).unwrap();
            let w = w2_distance(&q, &p);
            assert!((w - m.abs()).abs() < 2e-4, "m={m} w={w}");
        }
    }

    #[test]
    fn pinsker_and_talagrand_hold() {
        let g = GridConfig::default_single();
        for name in ["gaussian", "uniform", "exponential", "gamma2", "beta22", "mixture"] {
            let p = materialize(&FamilySpec::by_name(name).unwrap(), g).unwrap();
            let rep = distance_report(&p).unwrap();
            assert!(rep.pinsker_slack >= -1e-7, "{name}: pinsker slack {}", rep.pinsker_slack);
            assert!(
                rep.talagrand_slack >= -1e-6,
                "{name}: talagrand slack {}",
                rep.talagrand_slack
            );
            assert!(rep.entropic_distance_raw >= -1e-7);
        }
    }

    #[test]
    fn bounded_density_bound_cases() {
        // uniform attains equality
        let ms = 1.0 / 12f64.sqrt();
        let b = bounded_density_bound(ms, 1.0).unwrap();
        assert!((b - D_UNIFORM).abs() < 1e-12);
        let b11 = bounded_density_bound(1.0, 1.0).unwrap();
        assert!((b11 - 0.5 * (LOG_2PI + 1.0)).abs() < 1e-12);
        assert!(matches!(
            bounded_density_bound(0.2, 1.0),
            Err(Error::ImpossibleDensityBound { .. })
        ));
    }

    #[test]
    fn bound_covers_every_grid_density() {
        let g = GridConfig::default_single();
        for name in ["gaussian", "uniform", "exponential", "gamma2", "beta22", "mixture"] {
            let p = materialize(&FamilySpec::by_name(name).unwrap(), g).unwrap();
            let m = p.moments().unwrap();
            let bound = bounded_density_bound(p.max_value(), m.variance.sqrt()).unwrap();
            let d = entropic_distance_raw(&p).unwrap();
            assert!(d <= bound + 1e-7, "{name}: D={d} bound={bound}");
        }
    }

    #[test]
    fn entropy_power_monotonicity_under_convolution() {
        // D((X+Y)/sqrt(2)) <= max(D(X), D(Y)) for standardized X, Y
        let g = GridConfig::default_single();
        let names = ["uniform", "exponential", "gamma2", "beta22"];
        for a in names {
            for b in names {
                let pa = materialize(&FamilySpec::by_name(a).unwrap(), g).unwrap();
                let pb = materialize(&FamilySpec::by_name(b).unwrap(), g).unwrap();
                let sum = crate::lab::convolve_sum(
                    &[pa.clone(), pb.clone()],
                    &[std::f64::consts::FRAC_1_SQRT_2; 2],
                    g,
                )
                .unwrap();
                let d = entropic_distance(&sum).unwrap();
                let da = entropic_distance(&pa).unwrap();
                let db = entropic_distance(&pb).unwrap();
                assert!(d <= da.max(db) + 1e-6, "{a}+{b}: {d} vs {}", da.max(db));
            }
        }
    }
}
