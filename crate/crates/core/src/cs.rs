//! Cauchy–Schwarz envelope functions and their tangent linearizations.
//!
//! `g_lower(x, y) <= Tr[A' M] <= g_upper(x, y)` for any operator `0 <= M <= I`
//! and pure states with `Tr[A M] = x` and `|<A|A'>| = y`. The slopes feed the
//! linearized constraints used by the decoy linear programs; because
//! `g_lower` is convex and `g_upper` concave in `x`, every tangent line is
//! itself a valid bound.

use num_traits::Float;

/// Slack allowed before an argument outside [0, 1] is a contract violation.
const DOMAIN_SLACK: f64 = 1e-12;

/// Evaluation clamp for the slopes, which diverge at x in {0, 1} on the
/// active branch. Tangents taken at the clamped point remain valid bounds.
const SLOPE_CLAMP: f64 = 1e-9;

fn checked_unit<F: Float>(v: F, name: &str) -> F {
    let slack = F::from(DOMAIN_SLACK).unwrap();
    assert!(
        v >= -slack && v <= F::one() + slack,
        "{name} = {} outside [0, 1]",
        v.to_f64().unwrap_or(f64::NAN)
    );
    v.max(F::zero()).min(F::one())
}

/// Lower CS envelope.
pub fn g_lower<F: Float>(x: F, y: F) -> F {
    let x = checked_unit(x, "x");
    let y = checked_unit(y, "y");
    let one = F::one();
    let two = F::from(2.0).unwrap();
    let s = one - y * y;
    if x <= s {
        return F::zero();
    }
    let rad = (s * x * (one - x)).max(F::zero());
    (x + s * (one - two * x) - two * y * rad.sqrt()).max(F::zero())
}

/// Upper CS envelope.
pub fn g_upper<F: Float>(x: F, y: F) -> F {
    let x = checked_unit(x, "x");
    let y = checked_unit(y, "y");
    let one = F::one();
    let two = F::from(2.0).unwrap();
    if x >= y * y {
        return one;
    }
    let s = one - y * y;
    let rad = (s * x * (one - x)).max(F::zero());
    (x + s * (one - two * x) + two * y * rad.sqrt()).min(one)
}

/// Partial derivative of `g_lower` in its first argument; zero on the
/// inactive branch. `x` is clamped away from {0, 1} before evaluation.
pub fn g_lower_slope<F: Float>(x: F, y: F) -> F {
    let x = checked_unit(x, "x");
    let y = checked_unit(y, "y");
    let one = F::one();
    let two = F::from(2.0).unwrap();
    let s = one - y * y;
    if x <= s {
        return F::zero();
    }
    let clamp = F::from(SLOPE_CLAMP).unwrap();
    let xc = x.max(clamp).min(one - clamp);
    -one + two * y * y - (one - two * xc) * y * (s / (xc * (one - xc))).sqrt()
}

/// Partial derivative of `g_upper` in its first argument; zero on the
/// inactive branch.
pub fn g_upper_slope<F: Float>(x: F, y: F) -> F {
    let x = checked_unit(x, "x");
    let y = checked_unit(y, "y");
    let one = F::one();
    let two = F::from(2.0).unwrap();
    if x >= y * y {
        return F::zero();
    }
    let s = one - y * y;
    let clamp = F::from(SLOPE_CLAMP).unwrap();
    let xc = x.max(clamp).min(one - clamp);
    -one + two * y * y + (one - two * xc) * y * (s / (xc * (one - xc))).sqrt()
}

/// Tangent line `value + slope * (x - x0)` of the lower envelope at `x0`,
/// returned as (intercept, slope) with intercept = g_lower(x0) - slope*x0.
pub fn lower_tangent<F: Float>(x0: F, y: F) -> (F, F) {
    let m = g_lower_slope(x0, y);
    (g_lower(x0, y) - m * x0, m)
}

/// Tangent line of the upper envelope at `x0` as (intercept, slope).
pub fn upper_tangent<F: Float>(x0: F, y: F) -> (F, F) {
    let m = g_upper_slope(x0, y);
    (g_upper(x0, y) - m * x0, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_examples() {
        // y = 1 makes (1 - y^2) = 0.
        assert!((g_lower(0.5, 1.0) - 0.5).abs() < 1e-15);
        // Inactive branch: 0.3 <= 1 - 0.64.
        assert_eq!(g_lower(0.3, 0.8), 0.0);
        // Active branch value, checked against the closed form by hand.
        let g = g_lower(0.9, 0.9);
        let expect = 0.9 + 0.19 * (1.0 - 1.8) - 2.0 * 0.9 * (0.19f64 * 0.9 * 0.1).sqrt();
        assert!((g - expect).abs() < 1e-15);
    }

    #[test]
    fn upper_examples() {
        // Inactive branch: 0.5 >= 0.36.
        assert_eq!(g_upper(0.5, 0.6), 1.0);
        // x = 0 collapses both radicals.
        assert!((g_upper(0.0, 0.7) - (1.0 - 0.49)).abs() < 1e-15);
        let g = g_upper(0.1, 0.9);
        let expect = 0.1 + 0.19 * 0.8 + 2.0 * 0.9 * (0.19f64 * 0.1 * 0.9).sqrt();
        assert!((g - expect).abs() < 1e-15);
    }

    #[test]
    fn slope_examples() {
        assert_eq!(g_lower_slope(0.3, 0.8), 0.0);
        // g_lower(x, 1) = x, slope 1.
        assert!((g_lower_slope(0.5, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slopes_match_finite_differences() {
        let h = 1e-7;
        for &y in &[0.3, 0.6, 0.9, 0.99] {
            for i in 1..50 {
                let x = i as f64 / 50.0;
                if x > 1.0 - y * y + 1e-3 && x < 1.0 - 2.0 * h {
                    let fd = (g_lower(x + h, y) - g_lower(x - h, y)) / (2.0 * h);
                    assert!(
                        (g_lower_slope(x, y) - fd).abs() < 1e-6,
                        "lower slope mismatch at x={x} y={y}"
                    );
                }
                if x < y * y - 1e-3 && x > 2.0 * h {
                    let fd = (g_upper(x + h, y) - g_upper(x - h, y)) / (2.0 * h);
                    assert!(
                        (g_upper_slope(x, y) - fd).abs() < 1e-6,
                        "upper slope mismatch at x={x} y={y}"
                    );
                }
            }
        }
    }

    #[test]
    fn upper_slope_continuous_at_branch_point() {
        // Approaching x -> y^2 from below the envelope meets 1 smoothly.
        let y = 0.8f64;
        let x = y * y - 1e-9;
        assert!(g_upper(x, y) <= 1.0);
        assert!((g_upper(x, y) - 1.0).abs() < 1e-4);
        assert!(g_upper_slope(x, y).abs() < 1e-3);
    }

    #[test]
    fn envelopes_work_in_f32_too() {
        let lo = g_lower(0.9f32, 0.9f32);
        let hi = g_upper(0.9f32, 0.9f32);
        assert!(lo > 0.0 && lo < hi && hi <= 1.0);
    }

    #[test]
    #[should_panic(expected = "outside [0, 1]")]
    fn rejects_out_of_domain() {
        g_lower(1.5, 0.5f64);
    }

    #[test]
    fn lower_envelope_matches_brute_force_oracle() {
        // Minimize Tr[A' M] over real 2x2 operators 0 <= M <= I with
        // Tr[A M] pinned near 0.9, for states with overlap 0.9. The scan
        // runs over the eigenbasis angle and both eigenvalues.
        let y: f64 = 0.9;
        let x_target = 0.9;
        let a = [1.0, 0.0];
        let ap = [y, (1.0 - y * y).sqrt()];
        let mut min_seen = f64::INFINITY;
        let n = 400;
        for it in 0..n {
            let theta = std::f64::consts::PI * it as f64 / n as f64;
            let (c, s) = (theta.cos(), theta.sin());
            // Eigenvectors (c, s) and (-s, c); eigenvalues u1, u2.
            let q = |v: [f64; 2], u1: f64, u2: f64| {
                let p1 = (v[0] * c + v[1] * s).powi(2);
                let p2 = (-v[0] * s + v[1] * c).powi(2);
                u1 * p1 + u2 * p2
            };
            for i1 in 0..=n {
                let u1 = i1 as f64 / n as f64;
                // Solve u2 from the Tr[A M] pin where possible.
                let p1 = (a[0] * c + a[1] * s).powi(2);
                let p2 = 1.0 - p1;
                if p2 < 1e-9 {
                    continue;
                }
                let u2 = (x_target - u1 * p1) / p2;
                if !(0.0..=1.0).contains(&u2) {
                    continue;
                }
                debug_assert!((q(a, u1, u2) - x_target).abs() < 1e-12);
                min_seen = min_seen.min(q(ap, u1, u2));
            }
        }
        let bound = g_lower(x_target, y);
        assert!(
            min_seen >= bound - 1e-12,
            "brute force {min_seen} beats the envelope {bound}"
        );
        assert!(
            min_seen <= bound + 2e-3,
            "brute force {min_seen} never approaches the envelope {bound}"
        );
    }

    #[test]
    fn tangent_lines_bound_envelopes_on_grid() {
        // Tangent property on a 50x50x20 grid, tolerance 1e-12.
        for iy in 1..=20 {
            let y = iy as f64 / 20.0;
            for i0 in 0..=50 {
                let x0 = i0 as f64 / 50.0;
                let (bl, ml) = lower_tangent(x0, y);
                let (bu, mu) = upper_tangent(x0, y);
                for ix in 0..=50 {
                    let x = ix as f64 / 50.0;
                    assert!(
                        g_lower(x, y) >= bl + ml * x - 1e-12,
                        "lower tangent violated at x0={x0} x={x} y={y}"
                    );
                    assert!(
                        g_upper(x, y) <= bu + mu * x + 1e-12,
                        "upper tangent violated at x0={x0} x={x} y={y}"
                    );
                }
            }
        }
    }
}
