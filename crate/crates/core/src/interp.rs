//! Monotone cubic (Fritsch–Carlson) interpolation on uniform grids.
//!
//! Used for all density resampling. The shape-preserving slopes keep the
//! interpolant within the local data range, so nonnegative data never
//! produce negative values and jump discontinuities do not ring.

use crate::density::GridDensity;

/// Evaluate the monotone cubic through the cell centers of `p` at `x`.
/// Returns 0 outside the grid.
pub fn pchip_resample(p: &GridDensity, x: f64) -> f64 {
    let n = p.values.len();
    if n == 0 {
        return 0.0;
    }
    let t = (x - p.x0) / p.h;
    if t < 0.0 || t > (n - 1) as f64 {
        return 0.0;
    }
    if n == 1 {
        return p.values[0];
    }
    let i = (t.floor() as usize).min(n - 2);
    let s = t - i as f64;
    let y0 = p.values[i];
    let y1 = p.values[i + 1];
    let d0 = slope(p, i);
    let d1 = slope(p, i + 1);
    // cubic Hermite on [0,1] with h folded into the slopes
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * d0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * d1
}

/// Fritsch–Carlson limited slope at node `i`, in units of the grid step.
fn slope(p: &GridDensity, i: usize) -> f64 {
    let n = p.values.len();
    let sec = |j: usize| p.values[j + 1] - p.values[j];
    if i == 0 {
        return edge_slope(sec(0), if n > 2 { sec(1) } else { sec(0) });
    }
    if i == n - 1 {
        return edge_slope(sec(n - 2), if n > 2 { sec(n - 3) } else { sec(n - 2) });
    }
    let a = sec(i - 1);
    let b = sec(i);
    if a * b <= 0.0 {
        0.0
    } else {
        // harmonic mean; uniform spacing makes the weights equal
        2.0 * a * b / (a + b)
    }
}

/// One-sided boundary slope with the usual shape limiter.
fn edge_slope(nearest: f64, next: f64) -> f64 {
    let d = (3.0 * nearest - next) / 2.0;
    if d * nearest <= 0.0 {
        0.0
    } else if nearest * next <= 0.0 && d.abs() > 3.0 * nearest.abs() {
        3.0 * nearest
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>) -> GridDensity {
        GridDensity { x0: 0.0, h: 1.0, values, truncated_mass: 0.0 }
    }

    #[test]
    fn reproduces_nodes() {
        let p = grid(vec![0.0, 1.0, 0.5, 0.25]);
        for i in 0..4 {
            assert!((pchip_resample(&p, i as f64) - p.values[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn stays_nonnegative_at_jump() {
        // step data: interpolant must not undershoot below 0
        let p = grid(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        for k in 0..=600 {
            let x = k as f64 * 0.01;
            let v = pchip_resample(&p, x);
            assert!(v >= 0.0 && v <= 1.0 + 1e-15, "overshoot at {x}: {v}");
        }
    }

    #[test]
    fn zero_outside() {
        let p = grid(vec![1.0, 1.0]);
        assert_eq!(pchip_resample(&p, -0.01), 0.0);
        assert_eq!(pchip_resample(&p, 1.01), 0.0);
    }

    #[test]
    fn near_cubic_accuracy_on_smooth_data() {
        // resample a gaussian at half-step offsets
        let n = 512;
        let h = 16.0 / n as f64;
        let x0 = -8.0 + 0.5 * h;
        let values: Vec<f64> =
            (0..n).map(|i| (-(x0 + i as f64 * h).powi(2) / 2.0).exp()).collect();
        let p = GridDensity { x0, h, values, truncated_mass: 0.0 };
        let mut worst: f64 = 0.0;
        for i in 0..n - 1 {
            let x = p.x(i) + 0.5 * h;
            let truth = (-x * x / 2.0).exp();
            worst = worst.max((pchip_resample(&p, x) - truth).abs());
        }
        assert!(worst < 5.0 * h.powi(3), "worst interp error {worst}");
    }
}
