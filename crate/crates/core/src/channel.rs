//! Analytic channel model: reference yields per photon number, gains per
//! setting window, the sifted-key error rate and the signal gain. These are
//! the statistics a real experiment would supply to the estimation stage.

use crate::error::Result;
use crate::model::{
    Basis, ChannelConfig, Encoding, ProtocolConfig, Setting, SettingSequence, NUM_SETTINGS,
};
use crate::tables::FineGrainedSource;

/// Detector response probabilities `alpha_{x,kappa}` of a qubit with
/// early-bin amplitude `lambda` (non-negative superposition convention):
/// indexed `[basis][kappa]`.
pub fn born_response(lambda: f64) -> [[f64; 2]; 2] {
    let l2 = lambda * lambda;
    let c = (1.0 - l2).max(0.0).sqrt();
    [
        [l2, 1.0 - l2],
        [0.5 * (lambda + c).powi(2), 0.5 * (lambda - c).powi(2)],
    ]
}

/// Response table of the flat-SPF model states at angles (delta1, delta2),
/// including the sign of the key-1 amplitude; used for the reference yields.
pub fn spf_response(r: Encoding, delta1: f64, delta2: f64) -> [[f64; 2]; 2] {
    match r {
        Encoding::Bit0 => [[1.0, 0.0], [0.5, 0.5]],
        Encoding::Bit1 => {
            let (s, c) = ((delta1 / 2.0).sin(), (delta1 / 2.0).cos());
            [
                [s * s, c * c],
                [0.5 * (c - s).powi(2), 0.5 * (c + s).powi(2)],
            ]
        }
        Encoding::Plus => {
            let th = delta2 / 4.0 + std::f64::consts::FRAC_PI_4;
            let (c, s) = (th.cos(), th.sin());
            [
                [c * c, s * s],
                [0.5 * (c + s).powi(2), 0.5 * (c - s).powi(2)],
            ]
        }
    }
}

/// Ideal reference yield for an n-photon state with detector response
/// `resp` at overall efficiency `eta` and dark-count probability `dark`.
/// Double clicks are folded in as a random single-detector response.
pub fn reference_yield_from_response(n: usize, resp: f64, eta: f64, dark: f64) -> f64 {
    let nd = 1.0 - dark;
    let ni = n as i32;
    0.5 * (1.0 - nd * nd * (1.0 - eta).powi(ni) + nd * (1.0 - (1.0 - resp) * eta).powi(ni)
        - nd * (1.0 - resp * eta).powi(ni))
}

/// Reference yield of the flat-SPF state with encoding `r`.
pub fn reference_yield(
    n: usize,
    r: Encoding,
    basis: Basis,
    kappa: usize,
    eta: f64,
    dark: f64,
    cfg: &ProtocolConfig,
) -> f64 {
    let resp = spf_response(r, cfg.delta1, cfg.delta2)[basis.index()][kappa];
    reference_yield_from_response(n, resp, eta, dark)
}

/// Gain of a phase-randomized pulse with mean photon number `alpha_s` and
/// detector response `resp`.
pub fn gain_from_response(alpha_s: f64, resp: f64, eta: f64, dark: f64) -> f64 {
    let nd = 1.0 - dark;
    0.5 * (1.0 - nd * (-eta * alpha_s * resp).exp())
        * (1.0 + nd * (-eta * alpha_s * (1.0 - resp)).exp())
}

/// Gain for a window of the fine-grained source.
pub fn gain(
    window: usize,
    basis: Basis,
    kappa: usize,
    src: &FineGrainedSource,
    eta: f64,
    dark: f64,
) -> f64 {
    let resp = born_response(src.lambda(window))[basis.index()][kappa];
    gain_from_response(src.alpha(window), resp, eta, dark)
}

/// Observable statistics for every setting window at one channel point.
#[derive(Debug, Clone)]
pub struct ObservedStatistics {
    pub xi: usize,
    /// `gains[window][basis][kappa]`, windows in enumeration order.
    pub gains: Vec<[[f64; 2]; 2]>,
    /// Sifted Z-basis bit-error rate; absent when nothing is detected.
    pub e_b: Option<f64>,
    /// Detection probability given both sides chose Z and the signal
    /// intensity was selected.
    pub q_mu_z: f64,
    /// Number of raw probabilities clamped into [0, 1].
    pub clamp_events: usize,
}

/// Tolerance band for raw probabilities before clamping.
const PROB_BAND: f64 = 1e-12;

/// Computes all gains for windows of length xi + 1 plus the derived
/// sifted-key quantities. The configured misalignment enters the error rate
/// as a classical flip of the Z click distribution.
pub fn observables(
    src: &FineGrainedSource,
    chan: &ChannelConfig,
    eta: f64,
    cfg: &ProtocolConfig,
) -> Result<ObservedStatistics> {
    let xi = src.xi;
    let windows = src.num_windows();
    let past_count = NUM_SETTINGS.pow(xi as u32);
    let mut gains = vec![[[0.0f64; 2]; 2]; windows];
    let mut clamp_events = 0usize;
    for (w, g) in gains.iter_mut().enumerate() {
        for basis in Basis::ALL {
            for kappa in 0..2 {
                let raw = gain(w, basis, kappa, src, eta, chan.dark_count);
                debug_assert!(
                    (-PROB_BAND..=1.0 + PROB_BAND).contains(&raw),
                    "gain {raw} far outside [0, 1]"
                );
                let clamped = raw.clamp(0.0, 1.0);
                if clamped != raw {
                    clamp_events += 1;
                }
                g[basis.index()][kappa] = clamped;
            }
        }
    }

    // Sifted-key quantities: a_k = mu, both sides Z, averaged over the bit
    // settings and the past sequence.
    let mut detected = 0.0;
    let mut wrong = 0.0;
    let m = chan.misalignment;
    let pz = cfg.alice_z_prob();
    for r in Encoding::Z {
        let p_r = cfg.encoding_prob(r) / pz;
        for past_code in 0..past_count {
            let past = SettingSequence::unpack(past_code as u32, xi);
            let w_past = past.probability(cfg);
            let window = Setting::new(crate::model::Intensity::Mu, r).index() * past_count
                + past_code;
            let g = &gains[window];
            let (right, flip) = match r {
                Encoding::Bit0 => (g[0][0], g[0][1]),
                _ => (g[0][1], g[0][0]),
            };
            detected += p_r * w_past * (right + flip);
            wrong += p_r * w_past * ((1.0 - m) * flip + m * right);
        }
    }
    let e_b = if detected > 0.0 {
        Some(wrong / detected)
    } else {
        None
    };
    Ok(ObservedStatistics {
        xi,
        gains,
        e_b,
        q_mu_z: detected,
        clamp_events,
    })
}

impl ObservedStatistics {
    /// CSV dump, one row per window x basis x outcome, enumeration order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,basis,outcome,gain\n");
        for (w, g) in self.gains.iter().enumerate() {
            for (bi, basis) in ["Z", "X"].iter().enumerate() {
                for kappa in 0..2 {
                    out += &format!("{w},{basis},{kappa},{:.12e}\n", g[bi][kappa]);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_config;

    #[test]
    fn reference_yield_examples() {
        // Vacuum with no dark counts.
        assert_eq!(reference_yield_from_response(0, 0.7, 0.3, 0.0), 0.0);
        // Single photon, perfect detection, Z basis, kappa = 0, bit 0.
        let cfg = test_config(0);
        let y = reference_yield(1, Encoding::Bit0, Basis::Z, 0, 1.0, 0.0, &cfg);
        assert!((y - 1.0).abs() < 1e-15);
        // Wrong detector never fires for the ideal bit 0.
        let y = reference_yield(1, Encoding::Bit0, Basis::Z, 1, 1.0, 0.0, &cfg);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn spf_response_rows_are_normalized() {
        for r in Encoding::ALL {
            let resp = spf_response(r, 0.07, 0.04);
            for b in 0..2 {
                let s = resp[b][0] + resp[b][1];
                assert!((s - 1.0).abs() < 1e-12, "row {r:?}/{b} sums to {s}");
            }
        }
    }

    #[test]
    fn gain_matches_poisson_yield_series() {
        // Poisson-weighted reference yields reproduce the closed-form gain
        // for the ideal source.
        let cfg = test_config(0);
        let (eta, dark) = (0.31, 1e-5);
        for r in Encoding::ALL {
            for basis in Basis::ALL {
                for kappa in 0..2 {
                    let resp = spf_response(r, cfg.delta1, cfg.delta2)[basis.index()][kappa];
                    let alpha = 0.47;
                    let q = gain_from_response(alpha, resp, eta, dark);
                    let mut series = 0.0;
                    let mut pn = (-alpha).exp();
                    for n in 0..=40 {
                        if n > 0 {
                            pn *= alpha / n as f64;
                        }
                        series += pn * reference_yield_from_response(n, resp, eta, dark);
                    }
                    assert!(
                        (q - series).abs() < 1e-9,
                        "series mismatch: q={q} series={series}"
                    );
                }
            }
        }
    }

    #[test]
    fn click_probability_non_decreasing_in_photon_number() {
        for &resp in &[0.0, 0.3, 0.5, 1.0] {
            let mut prev = 0.0;
            for n in 0..=12 {
                let total = reference_yield_from_response(n, resp, 0.17, 1e-6)
                    + reference_yield_from_response(n, 1.0 - resp, 0.17, 1e-6);
                assert!(total + 1e-12 >= prev, "click prob fell at n={n}, resp={resp}");
                prev = total;
            }
        }
    }

    #[test]
    fn dark_count_only_gain() {
        let q = gain_from_response(0.5, 0.3, 0.0, 1e-3);
        let expect = 0.5 * (1.0 - (1.0 - 1e-3)) * (1.0 + (1.0 - 1e-3));
        assert!((q - expect).abs() < 1e-15);
        assert_eq!(gain_from_response(0.5, 0.3, 0.0, 0.0), 0.0);
    }

    #[test]
    fn no_detections_reports_absent_error_rate() {
        let cfg = test_config(1);
        let chan = ChannelConfig {
            eta_det: 0.0,
            dark_count: 0.0,
            misalignment: 0.0,
        };
        let src = FineGrainedSource::ideal(&cfg);
        let obs = observables(&src, &chan, 0.0, &cfg).unwrap();
        assert!(obs.e_b.is_none());
        assert_eq!(obs.q_mu_z, 0.0);
    }

    #[test]
    fn ideal_source_has_zero_qber() {
        let cfg = test_config(1);
        let chan = ChannelConfig {
            eta_det: 0.2,
            dark_count: 0.0,
            misalignment: 0.0,
        };
        let src = FineGrainedSource::ideal(&cfg);
        let obs = observables(&src, &chan, chan.eta(3.0), &cfg).unwrap();
        assert!(obs.e_b.unwrap() < 1e-15);
        assert!(obs.q_mu_z > 0.0);
    }

    #[test]
    fn dark_dominated_qber_approaches_half() {
        let cfg = test_config(0);
        let chan = ChannelConfig {
            eta_det: 0.0,
            dark_count: 1e-5,
            misalignment: 0.0,
        };
        let src = FineGrainedSource::ideal(&cfg);
        let obs = observables(&src, &chan, 0.0, &cfg).unwrap();
        let eb = obs.e_b.unwrap();
        assert!((eb - 0.5).abs() < 1e-6, "eb = {eb}");
    }

    #[test]
    fn misalignment_sets_error_floor() {
        let cfg = test_config(0);
        let chan = ChannelConfig {
            eta_det: 0.2,
            dark_count: 0.0,
            misalignment: 0.015,
        };
        let src = FineGrainedSource::ideal(&cfg);
        let obs = observables(&src, &chan, 0.2, &cfg).unwrap();
        assert!((obs.e_b.unwrap() - 0.015).abs() < 1e-12);
    }

    #[test]
    fn csv_dump_lists_every_cell() {
        let cfg = test_config(1);
        let chan = ChannelConfig {
            eta_det: 0.2,
            dark_count: 1e-6,
            misalignment: 0.0,
        };
        let src = FineGrainedSource::ideal(&cfg);
        let obs = observables(&src, &chan, 0.1, &cfg).unwrap();
        assert_eq!(obs.clamp_events, 0);
        let csv = obs.to_csv();
        assert_eq!(csv.lines().count(), 1 + 81 * 4);
        assert!(csv.starts_with("window,basis,outcome,gain\n"));
    }

    #[test]
    fn qber_symmetric_under_bit_swap() {
        let mut cfg = test_config(1);
        cfg.encoding_probs.bit0 = 0.375;
        cfg.encoding_probs.bit1 = 0.375;
        let chan = ChannelConfig {
            eta_det: 0.15,
            dark_count: 1e-6,
            misalignment: 0.02,
        };
        let src = FineGrainedSource::ideal(&cfg);
        let a = observables(&src, &chan, 0.1, &cfg).unwrap().e_b.unwrap();
        // Bit labels only enter through their probabilities; swapping equal
        // probabilities cannot change the rate.
        let mut swapped = cfg.clone();
        std::mem::swap(
            &mut swapped.encoding_probs.bit0,
            &mut swapped.encoding_probs.bit1,
        );
        let b = observables(&FineGrainedSource::ideal(&swapped), &chan, 0.1, &swapped)
            .unwrap()
            .e_b
            .unwrap();
        assert!((a - b).abs() < 1e-15);
    }
}
