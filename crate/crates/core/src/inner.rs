//! Inner-product lower bounds between transmitted states: the pairwise
//! intensity bound `tau`, its bit-averaged variant `tau_prime`, and the
//! `chi` chain relating the auxiliary X state to the actual one.
//!
//! Coarse mode evaluates closed-form products over the future rounds with
//! per-distance worst-case parameters; fine mode walks every future setting
//! assignment and looks the parameters up per context.

use crate::epsilon::{encoding_pair_index, EpsilonSet, Family, FineKey};
use crate::error::{Error, Result};
use crate::model::{Encoding, Intensity, ProtocolConfig, Setting, SettingSequence, NUM_SETTINGS};

#[inline]
fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Exponent factor `1 - sqrt((1 - e_hat^2) (1 - e_state))`.
#[inline]
fn kappa(e_hat: f64, e_state: f64) -> f64 {
    1.0 - ((1.0 - e_hat * e_hat) * (1.0 - e_state)).max(0.0).sqrt()
}

/// One branch of a tau evaluation: the current-round overlap deviation and
/// the summed future-round attenuation.
#[derive(Debug, Clone, Copy)]
struct TauVariant {
    dev0: f64,
    future: f64,
}

/// Evaluates `tau` for every photon number without redoing the future sums.
#[derive(Debug, Clone)]
pub struct TauBuilder {
    variants: Vec<TauVariant>,
}

impl TauBuilder {
    pub fn eval(&self, n: usize) -> f64 {
        let mut best = f64::INFINITY;
        for v in &self.variants {
            let val = (1.0 - v.dev0).max(0.0).powf(n as f64 / 2.0) * v.future;
            best = best.min(val);
        }
        clamp01(best)
    }
}

struct FutureWalk<'a> {
    cfg: &'a ProtocolConfig,
    eps: &'a EpsilonSet,
    past: &'a [Setting],
    xi: usize,
}

impl<'a> FutureWalk<'a> {
    /// Coarse closed form: the sum over future sequences factorizes into a
    /// product of per-distance sums.
    fn coarse(&self, family: Family) -> f64 {
        let coarse = &self.eps.coarse;
        let (int_t, state_t) = match family {
            Family::R => (&coarse.int_r, &coarse.state_r),
            Family::A => (&coarse.int_a, &coarse.state_a),
        };
        let mut product = 1.0;
        for w in 1..=self.xi {
            let mut sum = 0.0;
            for idx in 0..NUM_SETTINGS {
                let s = Setting::from_index(idx);
                let (i, j) = (s.intensity.index(), s.encoding.index());
                let k = kappa(int_t[w - 1][i][j], state_t[w - 1][i][j]);
                sum += self.cfg.setting_prob(s) * (-self.cfg.intensity(s.intensity) * k).exp();
            }
            product *= sum;
        }
        product
    }

    /// Fine mode: depth-first sum over all future assignments. `lo`/`hi` is
    /// the varied pair at the current round, `other` the fixed coordinate.
    fn fine(&self, family: Family, lo: usize, hi: usize, other: usize) -> Result<f64> {
        let fine = self
            .eps
            .fine
            .as_ref()
            .ok_or_else(|| Error::MissingEpsilon("fine mode without fine data".into()))?;
        let mut suffix: Vec<Setting> = Vec::with_capacity(self.xi);
        self.fine_rec(fine, family, lo, hi, other, 1, &mut suffix)
    }

    #[allow(clippy::too_many_arguments)]
    fn fine_rec(
        &self,
        fine: &crate::epsilon::FineEpsilons,
        family: Family,
        lo: usize,
        hi: usize,
        other: usize,
        depth: usize,
        suffix: &mut Vec<Setting>,
    ) -> Result<f64> {
        if depth > self.xi {
            return Ok(1.0);
        }
        let mut total = 0.0;
        for idx in 0..NUM_SETTINGS {
            let s = Setting::from_index(idx);
            suffix.push(s);
            // Context: future slots newest-first, then the still-relevant
            // part of the past window.
            let mut ctx = 0u32;
            for f in suffix.iter().rev() {
                ctx = ctx * NUM_SETTINGS as u32 + f.index() as u32;
            }
            for p in &self.past[..self.xi - depth] {
                ctx = ctx * NUM_SETTINGS as u32 + p.index() as u32;
            }
            let key = FineKey::new(lo, hi, depth, other, ctx);
            let e_hat = fine.int(family, key)?;
            let e_state = fine.state(family, key)?;
            let e_bar = fine.bar(family, key)?;
            let factor = self.cfg.setting_prob(s)
                * (-self.cfg.intensity(s.intensity) * (1.0 + e_bar) * kappa(e_hat, e_state))
                    .exp();
            let deeper = self.fine_rec(fine, family, lo, hi, other, depth + 1, suffix)?;
            total += factor * deeper;
            suffix.pop();
        }
        Ok(total)
    }
}

/// Builds the tau evaluator for the intensity pair (a, a'), conditioned on
/// the past sequence. Fine mode takes the minimum over the fixed encoding,
/// the conservative reading of the per-encoding bound.
pub fn tau_builder(
    a: Intensity,
    a_prime: Intensity,
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<TauBuilder> {
    assert_ne!(a, a_prime, "tau requires distinct intensities");
    let walk = FutureWalk {
        cfg,
        eps,
        past: &past.0,
        xi: cfg.xi,
    };
    let variants = match cfg.mode {
        crate::model::EpsilonMode::Coarse => vec![TauVariant {
            dev0: eps.coarse.state_a0_pair(a, a_prime),
            future: walk.coarse(Family::A),
        }],
        crate::model::EpsilonMode::Fine => {
            let fine = eps
                .fine
                .as_ref()
                .ok_or_else(|| Error::MissingEpsilon("fine mode without fine data".into()))?;
            let mut out = Vec::with_capacity(3);
            for r in Encoding::ALL {
                let key = FineKey::new(a.index(), a_prime.index(), 0, r.index(), past.pack());
                let dev0 = fine.state(Family::A, key)?;
                let future = walk.fine(Family::A, a.index(), a_prime.index(), r.index())?;
                out.push(TauVariant { dev0, future });
            }
            out
        }
    };
    Ok(TauBuilder { variants })
}

/// Single-value convenience over [`tau_builder`].
pub fn tau(
    n: usize,
    a: Intensity,
    a_prime: Intensity,
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    Ok(tau_builder(a, a_prime, past, eps, cfg)?.eval(n))
}

/// The `u` weights of the bit-averaged purification for one intensity.
fn u_weights(n: usize, a_nom: f64, p0: f64, p1: f64, e_hat: f64, e_bar: f64) -> (f64, f64) {
    let k = a_nom * (1.0 + e_bar) * e_hat;
    let u0 = p0.max(p1) * (-k).exp() * (1.0 + e_hat).powi(n as i32);
    let u1 = p0.min(p1) * k.exp() * (1.0 - e_hat).max(0.0).powi(n as i32);
    (u0, u1)
}

/// Bit-averaged prefactor multiplying tau in `tau_prime`; in (0, 1].
pub fn tau_prime_prefactor(
    n: usize,
    a: Intensity,
    a_prime: Intensity,
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    let p0 = cfg.encoding_probs.bit0;
    let p1 = cfg.encoding_probs.bit1;
    let lookup = |ai: Intensity| -> Result<(f64, f64)> {
        match cfg.mode {
            crate::model::EpsilonMode::Coarse => Ok((
                eps.coarse.bit_int[ai.index()],
                eps.coarse.bit_int_bar[ai.index()],
            )),
            crate::model::EpsilonMode::Fine => {
                let fine = eps
                    .fine
                    .as_ref()
                    .ok_or_else(|| Error::MissingEpsilon("fine mode without fine data".into()))?;
                let key = (ai.index() as u8, past.pack());
                let e_hat = fine.bit_int.get(&key).copied().ok_or_else(|| {
                    Error::MissingEpsilon(format!("bit_int[{},{}]", key.0, key.1))
                })?;
                let e_bar = fine.bit_int_bar.get(&key).copied().ok_or_else(|| {
                    Error::MissingEpsilon(format!("bit_int_bar[{},{}]", key.0, key.1))
                })?;
                Ok((e_hat, e_bar))
            }
        }
    };
    let (eh_a, eb_a) = lookup(a)?;
    let (eh_ap, eb_ap) = lookup(a_prime)?;
    let (ua0, ua1) = u_weights(n, cfg.intensity(a), p0, p1, eh_a, eb_a);
    let (up0, up1) = u_weights(n, cfg.intensity(a_prime), p0, p1, eh_ap, eb_ap);
    let num = (ua0 * up0).sqrt() + (ua1 * up1).sqrt();
    let den = (ua0 + ua1).sqrt() * (up0 + up1).sqrt();
    Ok(clamp01(num / den))
}

/// `tau_prime = prefactor * tau` for the bit-averaged Z states.
pub fn tau_prime(
    n: usize,
    a: Intensity,
    a_prime: Intensity,
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    let t = tau(n, a, a_prime, past, eps, cfg)?;
    let pre = tau_prime_prefactor(n, a, a_prime, past, eps, cfg)?;
    Ok(clamp01(pre * t))
}

/// Future attenuation for the encoding pair `(r, r_hat)`, fixed current
/// intensity mu (the phase-error chain is conditioned on the signal).
fn chi_prime_future(
    pair: (Encoding, Encoding),
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    let walk = FutureWalk {
        cfg,
        eps,
        past: &past.0,
        xi: cfg.xi,
    };
    match cfg.mode {
        crate::model::EpsilonMode::Coarse => Ok(walk.coarse(Family::R)),
        crate::model::EpsilonMode::Fine => walk.fine(
            Family::R,
            pair.0.index(),
            pair.1.index(),
            Intensity::Mu.index(),
        ),
    }
}

fn state_r0(
    pair: (Encoding, Encoding),
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    match cfg.mode {
        crate::model::EpsilonMode::Coarse => {
            Ok(eps.coarse.state_r0[encoding_pair_index(pair.0, pair.1)])
        }
        crate::model::EpsilonMode::Fine => {
            let fine = eps
                .fine
                .as_ref()
                .ok_or_else(|| Error::MissingEpsilon("fine mode without fine data".into()))?;
            fine.state(
                Family::R,
                FineKey::new(
                    pair.0.index(),
                    pair.1.index(),
                    0,
                    Intensity::Mu.index(),
                    past.pack(),
                ),
            )
        }
    }
}

/// `chi'_{r,r_hat}`: current-round overlap retention times the future
/// attenuation.
pub fn chi_prime_pair(
    pair: (Encoding, Encoding),
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    let dev0 = state_r0(pair, past, eps, cfg)?;
    Ok((1.0 - dev0).max(0.0).sqrt() * chi_prime_future(pair, past, eps, cfg)?)
}

/// `chi''_{r,r_hat} = (1 + eps_r(0-distance))^(1/2)`.
pub fn chi_double_prime_pair(
    pair: (Encoding, Encoding),
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    let dev0 = state_r0(pair, past, eps, cfg)?;
    Ok((1.0 + dev0).sqrt())
}

fn delta_shifts(
    past: &SettingSequence,
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
) -> Result<(f64, f64, f64)> {
    match cfg.mode {
        crate::model::EpsilonMode::Coarse => Ok(eps.delta_worst_case()),
        crate::model::EpsilonMode::Fine => {
            let fine = eps
                .fine
                .as_ref()
                .ok_or_else(|| Error::MissingEpsilon("fine mode without fine data".into()))?;
            let get = |pair: usize| -> Result<f64> {
                fine.delta
                    .get(&(pair as u8, Intensity::Mu.index() as u8, past.pack()))
                    .copied()
                    .ok_or_else(|| Error::MissingEpsilon(format!("delta[{pair}]")))
            };
            Ok((get(0)?, get(1)?, get(2)?))
        }
    }
}

/// Radicand floor used when an overlap argument reaches 1.
const RADICAND_FLOOR: f64 = 1e-15;

/// The lower bound `chi` on the overlap between the auxiliary state and the
/// actual X state. Returns the bound and a flag set when a denominator
/// radicand had to be clamped or the raw value left [0, 1].
pub fn chi_bound(
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
    past: &SettingSequence,
) -> Result<(f64, bool)> {
    if cfg.delta1 >= 0.5 || cfg.delta2 >= 0.5 {
        return Err(Error::Domain(format!(
            "chi chain requires delta1, delta2 < 0.5 rad (got {}, {})",
            cfg.delta1, cfg.delta2
        )));
    }
    let (d01, d0p, d1p) = delta_shifts(past, eps, cfg)?;
    let cp_0p = chi_prime_pair((Encoding::Bit0, Encoding::Plus), past, eps, cfg)?;
    let cp_1p = chi_prime_pair((Encoding::Bit1, Encoding::Plus), past, eps, cfg)?;
    let cpp_01 = chi_double_prime_pair((Encoding::Bit0, Encoding::Bit1), past, eps, cfg)?;
    let cpp_0p = chi_double_prime_pair((Encoding::Bit0, Encoding::Plus), past, eps, cfg)?;
    Ok(assemble_chi(cfg, d01, d0p, d1p, cp_0p, cp_1p, cpp_01, cpp_0p))
}

#[allow(clippy::too_many_arguments)]
fn assemble_chi(
    cfg: &ProtocolConfig,
    d01: f64,
    d0p: f64,
    d1p: f64,
    cp_0p: f64,
    cp_1p: f64,
    cpp_01: f64,
    cpp_0p: f64,
) -> (f64, bool) {
    let th2 = cfg.delta2 / 4.0 + std::f64::consts::FRAC_PI_4;
    let s1 = (cfg.delta1 / 2.0).sin();
    let x = (th2.cos() - d0p) * cp_0p;
    let y = (s1 - d01) * cpp_01;
    let num = ((th2 - cfg.delta1 / 2.0).sin() - d1p) * cp_1p - x * y;
    let mut flagged = false;
    let mut rad = |v: f64| -> f64 {
        if v <= 0.0 {
            flagged = true;
            RADICAND_FLOOR
        } else {
            v
        }
    };
    let den = rad(1.0 - x * x).sqrt() * rad(1.0 - y * y).sqrt();
    let chi_prime = num / den;
    let tail = 1.0 - 2.0 * cpp_0p * (th2.cos() - d0p).powi(2);
    let chi = (1.0 + chi_prime) / 2.0 - ((1.0 - chi_prime) / 2.0 * tail).abs();
    if !(0.0..=1.0).contains(&chi) {
        flagged = true;
    }
    (clamp01(chi), flagged)
}

/// Main-text variant of the chain, which drops the overlap-shift
/// corrections. Exposed for comparison only; the full chain above is the
/// one used by the engine.
pub fn chi_bound_main_text(
    eps: &EpsilonSet,
    cfg: &ProtocolConfig,
    past: &SettingSequence,
) -> Result<(f64, bool)> {
    let cp_0p = chi_prime_pair((Encoding::Bit0, Encoding::Plus), past, eps, cfg)?;
    let cp_1p = chi_prime_pair((Encoding::Bit1, Encoding::Plus), past, eps, cfg)?;
    let th2 = cfg.delta2 / 4.0 + std::f64::consts::FRAC_PI_4;
    let s1 = (cfg.delta1 / 2.0).sin();
    let mut flagged = false;
    let r = 1.0 - (cp_0p * th2.cos()).powi(2);
    let r = if r <= 0.0 {
        flagged = true;
        RADICAND_FLOOR
    } else {
        r
    };
    let chi_prime =
        ((th2 - cfg.delta1 / 2.0).sin() * cp_1p - th2.cos() * s1 * cp_0p) / (r.sqrt() * (cfg.delta1 / 2.0).cos());
    let chi = (1.0 + chi_prime) / 2.0 - ((1.0 - chi_prime) / 2.0 * (cfg.delta2 / 2.0).sin()).abs();
    if !(0.0..=1.0).contains(&chi) {
        flagged = true;
    }
    Ok((clamp01(chi), flagged))
}

/// Per-sequence bundle of all inner-product bounds needed by the linear
/// programs: `tau[n][a][a']` and `tau_prime[n][a][a']` (diagonal 1), plus
/// the chi bound.
#[derive(Debug, Clone)]
pub struct InnerProductBounds {
    pub tau: Vec<[[f64; 3]; 3]>,
    pub tau_prime: Vec<[[f64; 3]; 3]>,
    pub chi: f64,
    pub chi_flagged: bool,
}

impl InnerProductBounds {
    pub fn compute(
        eps: &EpsilonSet,
        cfg: &ProtocolConfig,
        past: &SettingSequence,
    ) -> Result<InnerProductBounds> {
        let n_max = cfg.n_cut;
        let mut tau_t = vec![[[1.0f64; 3]; 3]; n_max + 1];
        let mut tau_p_t = vec![[[1.0f64; 3]; 3]; n_max + 1];
        for ai in 0..3 {
            for aj in 0..3 {
                if ai == aj {
                    continue;
                }
                let a = Intensity::from_index(ai);
                let ap = Intensity::from_index(aj);
                let builder = tau_builder(a, ap, past, eps, cfg)?;
                for n in 0..=n_max {
                    let t = builder.eval(n);
                    tau_t[n][ai][aj] = t;
                    let pre = tau_prime_prefactor(n, a, ap, past, eps, cfg)?;
                    tau_p_t[n][ai][aj] = clamp01(pre * t);
                }
            }
        }
        let (chi, chi_flagged) = chi_bound(eps, cfg, past)?;
        Ok(InnerProductBounds {
            tau: tau_t,
            tau_prime: tau_p_t,
            chi,
            chi_flagged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_config;

    #[test]
    fn tau_is_one_without_imperfections() {
        let cfg = test_config(2);
        let eps = EpsilonSet::zero(2);
        let past = SettingSequence::enumerate(2, 4).unwrap()[17].clone();
        for n in [0, 1, 5, 10] {
            let t = tau(n, Intensity::Mu, Intensity::Nu, &past, &eps, &cfg).unwrap();
            assert!((t - 1.0).abs() < 1e-15, "n={n}: tau={t}");
        }
    }

    #[test]
    fn tau_xi_zero_reduces_to_w0_power() {
        let mut cfg = test_config(0);
        cfg.xi = 0;
        let mut eps = EpsilonSet::zero(0);
        eps.coarse.state_a0[Intensity::Mu.index()][Intensity::Nu.index()] = 1e-6;
        let past = SettingSequence::empty();
        let t = tau(1, Intensity::Mu, Intensity::Nu, &past, &eps, &cfg).unwrap();
        assert!((t - (1.0f64 - 1e-6).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tau_coarse_xi1_matches_hand_sum() {
        // Uniform probabilities, all distance-1 parameters 1e-6, intensities
        // (0.5, 0.1, 0.005); oracle is the explicit 9-term sum.
        let mut cfg = test_config(1);
        cfg.intensities = crate::model::Intensities {
            mu: 0.5,
            nu: 0.1,
            omega: 0.005,
        };
        cfg.intensity_probs = crate::model::Intensities {
            mu: 1.0 / 3.0,
            nu: 1.0 / 3.0,
            omega: 1.0 / 3.0,
        };
        cfg.encoding_probs = crate::model::EncodingProbs {
            bit0: 1.0 / 3.0,
            bit1: 1.0 / 3.0,
            plus: 1.0 / 3.0,
        };
        let mut eps = EpsilonSet::zero(1);
        eps.coarse.state_a = vec![[[1e-6; 3]; 3]];
        eps.coarse.int_a = vec![[[1e-6; 3]; 3]];
        let past = SettingSequence::enumerate(1, 4).unwrap()[4].clone();

        let k = 1.0 - ((1.0 - 1e-12f64) * (1.0 - 1e-6)).sqrt();
        let mut oracle = 0.0;
        for idx in 0..9 {
            let s = Setting::from_index(idx);
            oracle += (1.0 / 9.0) * (-cfg.intensity(s.intensity) * k).exp();
        }
        let t = tau(0, Intensity::Mu, Intensity::Omega, &past, &eps, &cfg).unwrap();
        assert!((t - oracle).abs() < 1e-15, "tau={t} oracle={oracle}");
    }

    #[test]
    fn tau_monotone_in_n_and_eps() {
        let cfg = test_config(1);
        let past = SettingSequence::enumerate(1, 4).unwrap()[0].clone();
        let grid = [0.0, 1e-8, 1e-6, 1e-4, 1e-2];
        let mut prev_by_eps = f64::INFINITY;
        for &e in &grid {
            let eps = EpsilonSet::uniform(1, e, true);
            let b = tau_builder(Intensity::Mu, Intensity::Nu, &past, &eps, &cfg).unwrap();
            let mut prev = f64::INFINITY;
            for n in 0..=10 {
                let t = b.eval(n);
                assert!(t <= prev + 1e-15, "tau increased in n at eps={e}");
                prev = t;
            }
            let t1 = b.eval(1);
            assert!(t1 <= prev_by_eps + 1e-15, "tau increased in eps at {e}");
            prev_by_eps = t1;
        }
    }

    #[test]
    fn tau_prime_prefactor_one_when_symmetric() {
        // No bit-intensity imbalance: prefactor is exactly 1 even for
        // asymmetric bit probabilities.
        let mut cfg = test_config(1);
        cfg.encoding_probs = crate::model::EncodingProbs {
            bit0: 0.5,
            bit1: 0.25,
            plus: 0.25,
        };
        let eps = EpsilonSet::uniform(1, 1e-6, false); // no-cross: bit_int = 0
        let past = SettingSequence::enumerate(1, 4).unwrap()[3].clone();
        for n in [0, 1, 7] {
            let pre =
                tau_prime_prefactor(n, Intensity::Mu, Intensity::Nu, &past, &eps, &cfg).unwrap();
            assert!((pre - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tau_prime_n0_prefactor_from_u() {
        // n = 0: the (1 +/- e_hat)^n factors collapse to 1.
        let cfg = test_config(0);
        let mut eps = EpsilonSet::zero(0);
        eps.coarse.bit_int = [1e-3; 3];
        eps.coarse.bit_int_bar = [1e-3; 3];
        let past = SettingSequence::empty();
        let pre = tau_prime_prefactor(0, Intensity::Mu, Intensity::Nu, &past, &eps, &cfg).unwrap();
        // Oracle: direct u evaluation.
        let u = |a: f64| {
            let k = a * (1.0 + 1e-3) * 1e-3;
            (0.375f64 * (-k).exp(), 0.375f64 * k.exp())
        };
        let (ua0, ua1) = u(0.5);
        let (up0, up1) = u(0.09);
        let oracle = ((ua0 * up0).sqrt() + (ua1 * up1).sqrt())
            / ((ua0 + ua1).sqrt() * (up0 + up1).sqrt());
        assert!((pre - oracle).abs() < 1e-15);
    }

    #[test]
    fn chi_is_one_in_ideal_case() {
        let mut cfg = test_config(0);
        cfg.delta1 = 0.0;
        cfg.delta2 = 0.0;
        let eps = EpsilonSet::zero(0);
        let (chi, flagged) = chi_bound(&eps, &cfg, &SettingSequence::empty()).unwrap();
        assert!((chi - 1.0).abs() < 1e-12, "chi={chi}");
        assert!(!flagged);
    }

    #[test]
    fn chi_monotone_in_delta_shifts() {
        // The chain loosens (chi drops) as the (0,+) and (1,+) shifts grow
        // and tightens as the (0,1) shift grows: a larger Z-state overlap
        // deviation means more orthogonal key states.
        let mut cfg = test_config(0);
        cfg.delta1 = 0.02;
        cfg.delta2 = 0.02;
        let probe = |d01: f64, d0p: f64, d1p: f64| -> f64 {
            let mut eps = EpsilonSet::uniform(0, 1e-6, true);
            eps.coarse.delta = [
                crate::epsilon::Interval::point(d01),
                crate::epsilon::Interval::point(d0p),
                crate::epsilon::Interval::point(d1p),
            ];
            chi_bound(&eps, &cfg, &SettingSequence::empty()).unwrap().0
        };
        let base = probe(1e-4, 1e-4, 1e-4);
        assert!(probe(1e-4, 1e-4, 2e-4) <= base + 1e-12);
        assert!(probe(1e-4, 2e-4, 1e-4) <= base + 1e-12);
        assert!(probe(2e-4, 1e-4, 1e-4) + 1e-12 >= base);
    }

    #[test]
    fn chi_flags_clamped_radicands() {
        // An overlap shift driving the (0,+) argument past 1 forces the
        // denominator radicand onto its floor and sets the flag.
        let mut cfg = test_config(0);
        cfg.delta1 = 0.0;
        cfg.delta2 = 0.0;
        let mut eps = EpsilonSet::zero(0);
        eps.coarse.delta[1] = crate::epsilon::Interval::point(-0.5);
        let (chi, flagged) = chi_bound(&eps, &cfg, &SettingSequence::empty()).unwrap();
        assert!(flagged);
        assert!((0.0..=1.0).contains(&chi));
    }

    #[test]
    fn chi_requires_small_spf_angles() {
        let mut cfg = test_config(0);
        cfg.delta1 = 0.7;
        let eps = EpsilonSet::zero(0);
        assert!(matches!(
            chi_bound(&eps, &cfg, &SettingSequence::empty()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn chi_value_matches_independent_transcription() {
        // Full-chain value at a synthetic point, recomputed here from
        // scratch: 9-term future attenuation, overlap retention factors,
        // then the combination.
        let mut cfg = test_config(1);
        cfg.delta1 = 0.0;
        cfg.delta2 = 0.02;
        let e = 1e-6;
        let eps = EpsilonSet::uniform(1, e, true);
        let past = SettingSequence::enumerate(1, 4).unwrap()[2].clone();
        let (chi, flagged) = chi_bound(&eps, &cfg, &past).unwrap();
        assert!(!flagged);

        let kappa = 1.0 - ((1.0 - e * e) * (1.0 - e)).sqrt();
        let mut future = 0.0;
        for idx in 0..9 {
            let s = Setting::from_index(idx);
            future += cfg.setting_prob(s) * (-cfg.intensity(s.intensity) * kappa).exp();
        }
        let cp = (1.0 - e).sqrt() * future; // same for (0,+) and (1,+)
        let cpp = (1.0 + e).sqrt();
        let th2 = cfg.delta2 / 4.0 + std::f64::consts::FRAC_PI_4;
        // Conservative corner: (0,1) low, (0,+) and (1,+) high.
        let (d01, d0p, d1p) = (-e, e, e);
        let x = (th2.cos() - d0p) * cp;
        let yv = (0.0f64 - d01) * cpp;
        let num = (th2.sin() - d1p) * cp - x * yv;
        let chi_p = num / ((1.0 - x * x).sqrt() * (1.0 - yv * yv).sqrt());
        let tail = 1.0 - 2.0 * cpp * (th2.cos() - d0p).powi(2);
        let oracle = (1.0 + chi_p) / 2.0 - ((1.0 - chi_p) / 2.0 * tail).abs();
        assert!(
            (chi - oracle).abs() < 1e-14,
            "chi {chi} vs independent transcription {oracle}"
        );
    }

    #[test]
    fn main_text_chi_matches_full_chain_without_shifts() {
        let mut cfg = test_config(1);
        cfg.delta1 = 0.01;
        cfg.delta2 = 0.02;
        let mut eps = EpsilonSet::uniform(1, 1e-6, false);
        // Zero the shift intervals and the chi'' correction so the two
        // variants coincide up to the chi''_{0,1} factor.
        eps.coarse.delta = [crate::epsilon::Interval::point(0.0); 3];
        eps.coarse.state_r0 = [0.0; 3];
        let past = SettingSequence::enumerate(1, 4).unwrap()[0].clone();
        let (full, _) = chi_bound(&eps, &cfg, &past).unwrap();
        let (mt, _) = chi_bound_main_text(&eps, &cfg, &past).unwrap();
        assert!((full - mt).abs() < 1e-12, "full={full} mt={mt}");
    }
}
