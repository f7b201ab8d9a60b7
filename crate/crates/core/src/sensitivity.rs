//! Modulator sensitivity: the deviation-to-signal ratio of a sinusoidal
//! response curve, and the bias point that maximizes it. Biasing a
//! modulator to that point makes tiny intensity deviations measurable.

use crate::error::{Error, Result};

/// Sinusoidal response-curve parameters of an MZI-type modulator.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityCurve {
    /// Input intensity.
    pub alpha_in: f64,
    /// Modulator bias offset (radians).
    pub beta_b: f64,
    /// Unavoidable background intensity.
    pub background: f64,
    /// Detection noise added to the denominator.
    pub noise: f64,
}

/// Guard below which the denominator is treated as zero.
const DENOM_FLOOR: f64 = 1e-15;

impl SensitivityCurve {
    /// Response `I(beta) = alpha_in [cos(beta + beta_b) + 1 + I_b] / 2`.
    pub fn intensity(&self, beta: f64) -> f64 {
        self.alpha_in * ((beta + self.beta_b).cos() + 1.0 + self.background) / 2.0
    }

    /// Analytic derivative of the response.
    pub fn intensity_slope(&self, beta: f64) -> f64 {
        -self.alpha_in * (beta + self.beta_b).sin() / 2.0
    }

    /// Sensitivity `|I'(beta)| / (I(beta) + I_n)`. Returns the value and a
    /// flag marking a vanishing denominator (value is then +infinity).
    pub fn sensitivity(&self, beta: f64) -> (f64, bool) {
        let denom = self.intensity(beta) + self.noise;
        if denom < DENOM_FLOOR {
            return (f64::INFINITY, true);
        }
        (self.intensity_slope(beta).abs() / denom, false)
    }

    /// Global maximizer of the sensitivity over one period: dense 4096-point
    /// grid plus golden-section refinement. Flagged (zero-denominator)
    /// points are excluded.
    pub fn best_bias(&self) -> Result<f64> {
        if self.alpha_in <= 0.0 {
            return Err(Error::Search(
                "flat response curve: alpha_in must be positive".into(),
            ));
        }
        if self.noise <= 0.0 && self.background <= 0.0 {
            return Err(Error::Search(
                "sensitivity unbounded: need noise > 0 or background > 0".into(),
            ));
        }
        let tau = std::f64::consts::TAU;
        const GRID: usize = 4096;
        let mut best = None::<(f64, f64)>;
        for i in 0..GRID {
            let beta = tau * i as f64 / GRID as f64;
            let (v, flagged) = self.sensitivity(beta);
            if flagged {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((beta, v));
            }
        }
        let (beta0, _) = best.ok_or_else(|| {
            Error::Search("every grid point hit a vanishing denominator".into())
        })?;
        // Local golden-section refinement around the best grid point.
        let h = tau / GRID as f64;
        let (mut lo, mut hi) = (beta0 - h, beta0 + h);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let score = |b: f64| {
            let (v, flagged) = self.sensitivity(b);
            if flagged {
                f64::NEG_INFINITY
            } else {
                v
            }
        };
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = score(x1);
        let mut f2 = score(x2);
        while hi - lo > 1e-10 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = score(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = score(x1);
            }
        }
        let refined = if f1 >= f2 { x1 } else { x2 };
        Ok(refined.rem_euclid(tau))
    }
}
