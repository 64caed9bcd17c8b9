//! FFT convolution of grid densities.
//!
//! The linear convolution of two midpoint-sampled densities on a common
//! spacing `h` is `h * (discrete convolution)`, supported on the Minkowski
//! sum of the grids. Round-off negatives are clamped and budgeted at 1e-10
//! per convolution.

use std::sync::Mutex;
use std::sync::OnceLock;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::density::GridDensity;
use crate::error::{Error, Result};

const CLAMP_BUDGET: f64 = 1e-10;

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    let fft = planner().lock().unwrap().plan_fft_forward(buf.len());
    fft.process(buf);
}

pub(crate) fn fft_inverse(buf: &mut [Complex64]) {
    let fft = planner().lock().unwrap().plan_fft_inverse(buf.len());
    fft.process(buf);
}

/// Density of `X + Y` for independent X ~ p, Y ~ q on a common spacing.
/// The result has `p.len() + q.len() - 1` cells starting at `p.x0 + q.x0`.
pub fn convolve(p: &GridDensity, q: &GridDensity) -> Result<GridDensity> {
    if (p.h - q.h).abs() > 1e-12 * p.h {
        return Err(Error::IncompatibleGrids(format!(
            "convolution requires equal spacing (got {} and {})",
            p.h, q.h
        )));
    }
    let out_len = p.len() + q.len() - 1;
    let fft_len = out_len.next_power_of_two();
    let mut a = vec![Complex64::default(); fft_len];
    let mut b = vec![Complex64::default(); fft_len];
    for (dst, v) in a.iter_mut().zip(&p.values) {
        dst.re = *v;
    }
    for (dst, v) in b.iter_mut().zip(&q.values) {
        dst.re = *v;
    }
    fft_forward(&mut a);
    fft_forward(&mut b);
    let scale = p.h / fft_len as f64;
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x *= *y * scale;
    }
    fft_inverse(&mut a);

    let mut clamped = 0.0;
    let mut values = Vec::with_capacity(out_len);
    for z in a.iter().take(out_len) {
        let v = z.re;
        if v < 0.0 {
            clamped -= v * p.h;
            values.push(0.0);
        } else {
            values.push(v);
        }
    }
    if clamped > CLAMP_BUDGET {
        return Err(Error::ClampBudgetExceeded { clamped });
    }
    let d = GridDensity {
        x0: p.x0 + q.x0,
        h: p.h,
        values,
        truncated_mass: p.truncated_mass + q.truncated_mass + clamped,
    };
    Ok(d)
}

/// Convolve and crop the result back to `[lo, hi]`, folding lost tail mass
/// into the truncation budget.
pub fn convolve_cropped(p: &GridDensity, q: &GridDensity, lo: f64, hi: f64) -> Result<GridDensity> {
    let full = convolve(p, q)?;
    let before = full.mass();
    let cropped = full.crop(lo, hi)?;
    let lost = (before - cropped.mass()).max(0.0);
    if lost > 1e-8 {
        return Err(Error::SupportOverflow { lost });
    }
    Ok(cropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GridConfig;
    use crate::family::{materialize, FamilySpec};

    #[test]
    fn two_gaussians_give_variance_two() {
        let g = GridConfig::new(1 << 12, -32.0, 32.0);
        let p = materialize(&FamilySpec::gaussian(0.0, 1.0), g).unwrap();
        let r = convolve(&p, &p).unwrap().normalize().unwrap();
        let m = r.moments().unwrap();
        assert!(m.mean.abs() < 1e-9);
        assert!((m.variance - 2.0).abs() < 1e-8, "var = {}", m.variance);
        // pointwise N(0, 2)
        let s2 = std::f64::consts::TAU.sqrt() * 2.0f64.sqrt();
        for i in (0..r.len()).step_by(211) {
            let x = r.x(i);
            let truth = (-x * x / 4.0).exp() / s2;
            assert!((r.values[i] - truth).abs() < 1e-9);
        }
    }

    #[test]
    fn two_uniforms_give_triangle() {
        let g = GridConfig::new(1 << 12, -32.0, 32.0);
        let p = materialize(&FamilySpec::uniform_std(), g).unwrap();
        let r = convolve(&p, &p).unwrap().normalize().unwrap();
        let a = 2.0 * 3.0f64.sqrt();
        for i in (0..r.len()).step_by(173) {
            let x = r.x(i);
            let truth = if x.abs() < a { (a - x.abs()) / (a * a) } else { 0.0 };
            if x.abs() < a - 2.0 * r.h || x.abs() > a + 2.0 * r.h {
                assert!((r.values[i] - truth).abs() < 1e-4, "x={x}");
            }
        }
        let m = r.moments().unwrap();
        assert!((m.variance - 2.0).abs() < 1e-6);
    }

    #[test]
    fn mass_is_preserved() {
        let g = GridConfig::new(1 << 12, -32.0, 32.0);
        let p = materialize(&FamilySpec::exponential_std(), g).unwrap();
        let r = convolve(&p, &p).unwrap();
        assert!((r.mass() - 1.0).abs() < 1e-10, "mass = {}", r.mass());
    }
}
