//! Decomposition of the virtual key states into the three actual signal
//! states, the S weighting factors, and the worst-case auxiliary phase.
//!
//! The closed-form coefficients express each virtual-state projector as a
//! real combination of the projectors onto the two key states and an
//! auxiliary X state. The published sign/labelling conventions are ambiguous
//! (which coefficient triple reproduces which virtual state), so
//! [`decompose`] settles the pairing numerically with an explicit 2x2
//! operator-identity check and records the outcome.

use crate::error::{Error, Result};
use crate::model::ProtocolConfig;

/// Minimal complex scalar for the 2x2 identity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
struct C {
    re: f64,
    im: f64,
}

impl C {
    const ZERO: C = C { re: 0.0, im: 0.0 };

    fn new(re: f64, im: f64) -> C {
        C { re, im }
    }

    fn from_polar(r: f64, theta: f64) -> C {
        C::new(r * theta.cos(), r * theta.sin())
    }

    fn conj(self) -> C {
        C::new(self.re, -self.im)
    }

    fn mul(self, o: C) -> C {
        C::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn add(self, o: C) -> C {
        C::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: C) -> C {
        C::new(self.re - o.re, self.im - o.im)
    }

    fn scale(self, s: f64) -> C {
        C::new(self.re * s, self.im * s)
    }

    fn norm_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// 2x2 complex matrix stored row-major.
#[derive(Debug, Clone, Copy)]
struct Mat2([C; 4]);

impl Mat2 {
    fn zero() -> Mat2 {
        Mat2([C::ZERO; 4])
    }

    /// Projector v v^dagger / |v|^2 of a (not necessarily normalized) vector.
    fn projector(v: [C; 2]) -> Mat2 {
        let n = v[0].norm_sq() + v[1].norm_sq();
        let mut m = Mat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                m.0[i * 2 + j] = v[i].mul(v[j].conj()).scale(1.0 / n);
            }
        }
        m
    }

    fn axpy(&mut self, a: f64, m: &Mat2) {
        for k in 0..4 {
            self.0[k] = self.0[k].add(m.0[k].scale(a));
        }
    }

    fn frobenius_dist(&self, o: &Mat2) -> f64 {
        self.0
            .iter()
            .zip(o.0.iter())
            .map(|(a, b)| a.sub(*b).norm_sq())
            .sum::<f64>()
            .sqrt()
    }
}

/// Which virtual state the first coefficient triple (c0, c1, c2) reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// (c0, c1, c2) reproduces the minus state.
    FirstTripleMinus,
    /// (c0, c1, c2) reproduces the plus state.
    FirstTriplePlus,
}

/// Full output of the virtual-state decomposition at one auxiliary phase.
#[derive(Debug, Clone)]
pub struct VirtualDecomposition {
    /// Normalized coefficients; c0+c1+c2 = 1 and c3+c4+c5 = 1.
    pub c: [f64; 6],
    /// Pre-normalization coefficients c0'..c5'.
    pub c_prime: [f64; 6],
    /// Intermediates c6..c9.
    pub c_aux: [f64; 4],
    /// Relative phase of the virtual-state superpositions.
    pub phi_prime: f64,
    /// Ensemble weights of the minus/plus virtual states; they sum to
    /// P_Z^A * p_mu.
    pub p_minus_v: f64,
    pub p_plus_v: f64,
    /// Weight attached to the (c0,c1,c2) group (the X,kappa=0 block of the
    /// phase-error expression) and to the (c3,c4,c5) group (kappa=1 block).
    pub q0: f64,
    pub q1: f64,
    pub pairing: Pairing,
    /// Frobenius residual of the verified operator identity.
    pub residual: f64,
}

/// Computes the decomposition at SPF angles (delta1, delta2) and auxiliary
/// phase `phi`. Errors if the c7 radicand is not positive.
pub fn decompose(
    delta1: f64,
    delta2: f64,
    phi: f64,
    cfg: &ProtocolConfig,
) -> Result<VirtualDecomposition> {
    let (s1h, c1h) = ((delta1 / 2.0).sin(), (delta1 / 2.0).cos());
    let (s2h, c2h) = ((delta2 / 2.0).sin(), (delta2 / 2.0).cos());
    let (sd1, cd1) = (delta1.sin(), delta1.cos());
    let cphi = phi.cos();

    let c6 = 2.0 * c1h * c1h * c2h * cphi * s1h - c1h * (-2.0 + s2h) / 2.0
        - c1h.powi(3) * s2h / 2.0
        + 3.0 * s1h * sd1 * s2h / 4.0;
    let c7_rad = c1h * c1h * (1.0 + s2h) * (1.0 + c2h * cphi * sd1 - cd1 * s2h);
    if c7_rad <= 0.0 {
        return Err(Error::Domain(format!(
            "c7 radicand {c7_rad} <= 0 at delta1={delta1}, delta2={delta2}, phi={phi}"
        )));
    }
    let c7 = c7_rad.sqrt();
    let c8 = c1h * (1.0 + s2h);
    let c9 = 2.0 * c1h.powi(3);

    let cp = [
        0.5 + c6 / (2.0 * c7),
        0.5 + c8 / (2.0 * c7),
        -c9 / (2.0 * c7),
        0.5 - c6 / (2.0 * c7),
        0.5 - c8 / (2.0 * c7),
        c9 / (2.0 * c7),
    ];
    let n012 = cp[0] + cp[1] + cp[2];
    let n345 = cp[3] + cp[4] + cp[5];
    if n012.abs() < 1e-14 || n345.abs() < 1e-14 {
        return Err(Error::Domain(format!(
            "degenerate coefficient normalization at delta1={delta1}, delta2={delta2}, phi={phi}"
        )));
    }
    let c = [
        cp[0] / n012,
        cp[1] / n012,
        cp[2] / n012,
        cp[3] / n345,
        cp[4] / n345,
        cp[5] / n345,
    ];

    // Quadrant-correct phase: the two components are cos(phi') and sin(phi').
    let cos_pp = (-(1.0 + cd1) * c2h * cphi - sd1 * (1.0 + s2h)) / (2.0 * c7);
    let sin_pp = (-(1.0 + cd1) * c2h * phi.sin()) / (2.0 * c7);
    let phi_prime = sin_pp.atan2(cos_pp);

    // Explicit qubit vectors for the identity check, with the key-1 state
    // written as -sin(d1/2)|0> + cos(d1/2)|1>. Flipping that sign is the
    // same as swapping the two virtual states, which the pairing search
    // covers anyway.
    let phi0 = [C::new(1.0, 0.0), C::ZERO];
    let phi1 = [C::new(-s1h, 0.0), C::new(c1h, 0.0)];
    let th2 = delta2 / 4.0 + std::f64::consts::FRAC_PI_4;
    let phi_plus_aux = [C::new(th2.cos(), 0.0), C::from_polar(th2.sin(), phi)];
    let e_pp = C::from_polar(1.0, phi_prime);
    let v_plus = [
        phi0[0].add(e_pp.mul(phi1[0])),
        phi0[1].add(e_pp.mul(phi1[1])),
    ];
    let v_minus = [
        phi0[0].sub(e_pp.mul(phi1[0])),
        phi0[1].sub(e_pp.mul(phi1[1])),
    ];
    let norm_plus = v_plus[0].norm_sq() + v_plus[1].norm_sq();
    let norm_minus = v_minus[0].norm_sq() + v_minus[1].norm_sq();

    let p0 = Mat2::projector(phi0);
    let p1 = Mat2::projector(phi1);
    let pa = Mat2::projector(phi_plus_aux);
    let mut m012 = Mat2::zero();
    m012.axpy(c[0], &p0);
    m012.axpy(c[1], &p1);
    m012.axpy(c[2], &pa);
    let mut m345 = Mat2::zero();
    m345.axpy(c[3], &p0);
    m345.axpy(c[4], &p1);
    m345.axpy(c[5], &pa);
    let proj_plus = Mat2::projector(v_plus);
    let proj_minus = Mat2::projector(v_minus);

    let res_minus_first = m012.frobenius_dist(&proj_minus) + m345.frobenius_dist(&proj_plus);
    let res_plus_first = m012.frobenius_dist(&proj_plus) + m345.frobenius_dist(&proj_minus);
    let (pairing, residual) = if res_minus_first <= res_plus_first {
        (Pairing::FirstTripleMinus, res_minus_first)
    } else {
        (Pairing::FirstTriplePlus, res_plus_first)
    };

    let sector = cfg.alice_z_prob() * cfg.intensity_prob(crate::model::Intensity::Mu);
    let p_plus_v = 0.25 * sector * norm_plus;
    let p_minus_v = 0.25 * sector * norm_minus;
    let (q0, q1) = match pairing {
        Pairing::FirstTripleMinus => (p_minus_v, p_plus_v),
        Pairing::FirstTriplePlus => (p_plus_v, p_minus_v),
    };

    Ok(VirtualDecomposition {
        c,
        c_prime: cp,
        c_aux: [c6, c7, c8, c9],
        phi_prime,
        p_minus_v,
        p_plus_v,
        q0,
        q1,
        pairing,
        residual,
    })
}

/// The four S factors weighting the phase-error terms. S2 <= 0 <= S1 by
/// construction of the max/min splits.
#[derive(Debug, Clone, Copy)]
pub struct SFactors {
    pub s: [f64; 4],
}

pub fn s_factors(dec: &VirtualDecomposition, cfg: &ProtocolConfig) -> SFactors {
    let pb = cfg.bob_z_prob;
    let s1 = pb
        * (dec.q0 * (dec.c[0].max(0.0) + dec.c[1].max(0.0))
            + dec.q1 * (dec.c[3].max(0.0) + dec.c[4].max(0.0)));
    let s2 = pb
        * (dec.q0 * (dec.c[0].min(0.0) + dec.c[1].min(0.0))
            + dec.q1 * (dec.c[3].min(0.0) + dec.c[4].min(0.0)));
    let s3 = pb * dec.q1 * dec.c[5];
    let s4 = pb * dec.q0 * dec.c[2];
    SFactors {
        s: [s1, s2, s3, s4],
    }
}

/// Zeta weight grid over (encoding r, outcome kappa) for one LP family.
pub type ZetaGrid = [[f64; 2]; 3];

/// The weight vectors defining the four estimated linear combinations.
/// A family whose S factor vanishes is dropped (its bound contributes 0).
pub struct PhaseErrorWeights {
    pub s: SFactors,
    pub zeta: [Option<ZetaGrid>; 4],
}

/// Threshold below which an S factor is treated as exactly zero and the
/// corresponding term dropped.
const S_DROP: f64 = 1e-300;

pub fn zeta_weights(dec: &VirtualDecomposition, cfg: &ProtocolConfig) -> PhaseErrorWeights {
    let s = s_factors(dec, cfg);
    let pb = cfg.bob_z_prob;
    let mut zeta: [Option<ZetaGrid>; 4] = [None, None, None, None];

    if s.s[0].abs() > S_DROP {
        let mut g = [[0.0; 2]; 3];
        g[0][0] = pb * dec.q0 * dec.c[0].max(0.0) / s.s[0];
        g[1][0] = pb * dec.q0 * dec.c[1].max(0.0) / s.s[0];
        g[0][1] = pb * dec.q1 * dec.c[3].max(0.0) / s.s[0];
        g[1][1] = pb * dec.q1 * dec.c[4].max(0.0) / s.s[0];
        zeta[0] = Some(g);
    }
    if s.s[1].abs() > S_DROP {
        let mut g = [[0.0; 2]; 3];
        g[0][0] = pb * dec.q0 * dec.c[0].min(0.0) / s.s[1];
        g[1][0] = pb * dec.q0 * dec.c[1].min(0.0) / s.s[1];
        g[0][1] = pb * dec.q1 * dec.c[3].min(0.0) / s.s[1];
        g[1][1] = pb * dec.q1 * dec.c[4].min(0.0) / s.s[1];
        zeta[1] = Some(g);
    }
    if s.s[2].abs() > S_DROP {
        let mut g = [[0.0; 2]; 3];
        g[2][1] = 1.0;
        zeta[2] = Some(g);
    }
    if s.s[3].abs() > S_DROP {
        let mut g = [[0.0; 2]; 3];
        g[2][0] = 1.0;
        zeta[3] = Some(g);
    }
    PhaseErrorWeights { s, zeta }
}

/// Maximizes `objective` over the auxiliary phase on [0, 2pi): dense grid
/// scan followed by golden-section refinement to 1e-4 rad. Grid evaluation
/// failures propagate with the phase attached. The returned bound is never
/// below the grid maximum.
pub fn worst_case_phi<F>(objective: F, grid: usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    assert!(grid >= 4, "phi grid too small");
    let tau = std::f64::consts::TAU;
    let eval = |phi: f64| -> Result<f64> {
        objective(phi).map_err(|e| Error::Search(format!("phi={phi:.6}: {e}")))
    };
    let mut best_i = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..grid {
        let v = eval(tau * i as f64 / grid as f64)?;
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let h = tau / grid as f64;
    let mut lo = tau * best_i as f64 / grid as f64 - h;
    let mut hi = lo + 2.0 * h;
    // Golden-section search for the maximum.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    while hi - lo > 1e-4 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = eval(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = eval(x1)?;
        }
    }
    let (mut phi_star, mut v_star) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    if best_v > v_star {
        phi_star = tau * best_i as f64 / grid as f64;
        v_star = best_v;
    }
    Ok((phi_star.rem_euclid(tau), v_star))
}
