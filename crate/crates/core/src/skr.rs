//! Secret-key-rate engine: per-sequence phase-error bounds, averaging over
//! setting sequences, and the loss sweep.
//!
//! Formally the protocol splits into xi + 1 interleaved sub-protocols so
//! that the virtual-state argument applies round by round; all of them have
//! identical statistics and the split carries no asymptotic penalty, so the
//! engine evaluates one representative sub-protocol.

use num_traits::Float;
use rayon::prelude::*;

use crate::channel::{observables, ObservedStatistics};
use crate::cs::{g_lower, g_upper};
use crate::decoy::{
    build_bound_lp, build_yield_lp, photon_bounds, solve_lp, Direction, PhotonBounds, RefYields,
};
use crate::epsilon::EpsilonSet;
use crate::error::{Error, Result};
use crate::inner::InnerProductBounds;
use crate::model::{
    ChannelConfig, EpsilonMode, Intensity, ProtocolConfig, SettingSequence, NUM_SETTINGS,
};
use crate::simplex::SolveStatus;
use crate::tables::FineGrainedSource;
use crate::virt::{decompose, worst_case_phi, zeta_weights};

/// Binary entropy with the continuous extension h(0) = h(1) = 0.
pub fn binary_entropy<F: Float>(x: F) -> F {
    let zero = F::zero();
    let one = F::one();
    if x <= zero || x >= one {
        return zero;
    }
    let ln2 = F::from(std::f64::consts::LN_2).unwrap();
    -(x * x.ln() + (one - x) * (one - x).ln()) / ln2
}

/// Per-loss-point output of the engine.
#[derive(Debug, Clone)]
pub struct SkrPoint {
    pub loss_db: f64,
    pub k_per_pulse: f64,
    pub k_bps: f64,
    pub y1_lower: f64,
    pub ep_upper: f64,
    pub e_b: Option<f64>,
    pub q_mu_z: f64,
    pub p1_lower: f64,
    pub flagged_sequences: usize,
    pub clamp_events: usize,
    /// Per-sequence bounds and statuses, in enumeration order (one entry
    /// when the uniform fast path applies).
    pub diagnostics: Vec<SequenceDiag>,
}

/// Diagnostics for one past sequence at one channel point.
#[derive(Debug, Clone)]
pub struct SequenceDiag {
    pub past_code: u32,
    pub yield_lower: f64,
    pub eph_upper: f64,
    pub phi_star: f64,
    pub flagged: bool,
    pub note: Option<String>,
}

/// Inputs that do not change across the loss sweep.
pub struct SweepContext {
    pub bounds: PhotonBounds,
    /// Inner-product bounds per past sequence (a single entry when the
    /// uniform fast path applies).
    pub inner: Vec<InnerProductBounds>,
    pub fast_path: bool,
    pub n_past: usize,
}

/// Precomputes photon bounds and per-sequence inner products. With a
/// history-independent source in coarse mode every past sequence is
/// interchangeable, so one representative is enough.
pub fn prepare(
    cfg: &ProtocolConfig,
    src: &FineGrainedSource,
    eps: &EpsilonSet,
) -> Result<SweepContext> {
    cfg.validate()?;
    eps.validate()?;
    if src.xi != cfg.xi || eps.xi != cfg.xi {
        return Err(Error::Config(vec![format!(
            "correlation ranges disagree: cfg xi={}, source xi={}, epsilons xi={}",
            cfg.xi, src.xi, eps.xi
        )]));
    }
    let bounds = photon_bounds(src, cfg)?;
    let fast_path = cfg.mode == EpsilonMode::Coarse && src.is_uniform();
    let n_past = if fast_path {
        1
    } else {
        NUM_SETTINGS.pow(cfg.xi as u32)
    };
    let inner: Vec<InnerProductBounds> = (0..n_past)
        .into_par_iter()
        .map(|code| {
            let past = SettingSequence::unpack(code as u32, cfg.xi);
            InnerProductBounds::compute(eps, cfg, &past)
        })
        .collect::<Result<_>>()?;
    Ok(SweepContext {
        bounds,
        inner,
        fast_path,
        n_past,
    })
}

/// Upper-bounds the normalized phase-error yield for one past sequence at
/// one auxiliary phase. Any non-optimal linear program aborts the phase.
#[allow(clippy::too_many_arguments)]
pub fn phase_error_at_phi(
    phi: f64,
    past_code: u32,
    inner: &InnerProductBounds,
    stats: &ObservedStatistics,
    bounds: &PhotonBounds,
    refs: &RefYields,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    let dec = decompose(cfg.delta1, cfg.delta2, phi, cfg)?;
    let w = zeta_weights(&dec, cfg);

    let solve_family = |j: usize, dir: Direction| -> Result<f64> {
        let zeta = w.zeta[j].as_ref().expect("family present");
        let lp = build_bound_lp(zeta, j, past_code, stats, bounds, inner, refs, cfg, dir)?;
        let out = solve_lp(&lp, dir);
        if out.status != SolveStatus::Optimal {
            return Err(Error::Search(format!(
                "family T{} LP ended {:?}",
                j + 1,
                out.status
            )));
        }
        Ok(out.value)
    };

    // Each family is solved in the direction its S sign makes binding:
    // S1 >= 0 wants the upper bound of T1, S2 <= 0 the lower bound of T2,
    // and the auxiliary-state terms follow the signs of S3/S4.
    let mut t: [Option<f64>; 4] = [None; 4];
    if w.zeta[0].is_some() && w.s.s[0] > 0.0 {
        t[0] = Some(solve_family(0, Direction::Max)?);
    }
    if w.zeta[1].is_some() && w.s.s[1] < 0.0 {
        t[1] = Some(solve_family(1, Direction::Min)?);
    }
    for j in [2usize, 3] {
        if w.zeta[j].is_none() || w.s.s[j] == 0.0 {
            continue;
        }
        let dir = if w.s.s[j] > 0.0 {
            Direction::Max
        } else {
            Direction::Min
        };
        t[j] = Some(solve_family(j, dir)?);
    }
    let sector = cfg.alice_z_prob() * cfg.intensity_prob(Intensity::Mu) * cfg.bob_z_prob;
    Ok(phase_error_bound(&t, &w, inner.chi, cfg) / sector)
}

/// Combines the four solved bounds into the phase-error mass
/// `S1 T1 + S2 T2 + max(S3,0) g_U(T3, chi) + min(S3,0) g_L(T3, chi) + ...`,
/// clamped to the Z-sector mass. `t[j]` carries the bound for family j in
/// the direction dictated by the sign of S_j; dropped families pass None.
pub fn phase_error_bound(
    t: &[Option<f64>; 4],
    w: &crate::virt::PhaseErrorWeights,
    chi: f64,
    cfg: &ProtocolConfig,
) -> f64 {
    let mut e = 0.0;
    if let Some(t1) = t[0] {
        e += w.s.s[0] * t1;
    }
    if let Some(t2) = t[1] {
        e += w.s.s[1] * t2;
    }
    for j in [2usize, 3] {
        let Some(tj) = t[j] else { continue };
        let s = w.s.s[j];
        if s > 0.0 {
            e += s * g_upper(tj, chi);
        } else if s < 0.0 {
            e += s * g_lower(tj, chi);
        }
    }
    let sector = cfg.alice_z_prob() * cfg.intensity_prob(Intensity::Mu) * cfg.bob_z_prob;
    e.clamp(0.0, sector)
}

/// Conservative contribution of a sequence whose bounds are unavailable.
const FLAGGED_EPH: f64 = 0.5;

fn solve_sequence(
    past_code: u32,
    inner: &InnerProductBounds,
    stats: &ObservedStatistics,
    bounds: &PhotonBounds,
    refs: &RefYields,
    cfg: &ProtocolConfig,
    phi_grid: usize,
) -> Result<SequenceDiag> {
    let yield_lp = build_yield_lp(past_code, stats, bounds, inner, refs, cfg)?;
    let yout = solve_lp(&yield_lp, Direction::Min);
    if yout.status != SolveStatus::Optimal {
        return Ok(SequenceDiag {
            past_code,
            yield_lower: 0.0,
            eph_upper: FLAGGED_EPH,
            phi_star: 0.0,
            flagged: true,
            note: Some(format!("yield LP ended {:?}", yout.status)),
        });
    }
    match worst_case_phi(
        |phi| phase_error_at_phi(phi, past_code, inner, stats, bounds, refs, cfg),
        phi_grid,
    ) {
        Ok((phi_star, eph)) => Ok(SequenceDiag {
            past_code,
            yield_lower: yout.value,
            eph_upper: eph,
            phi_star,
            flagged: false,
            note: None,
        }),
        Err(e) => Ok(SequenceDiag {
            past_code,
            yield_lower: 0.0,
            eph_upper: FLAGGED_EPH,
            phi_star: 0.0,
            flagged: true,
            note: Some(e.to_string()),
        }),
    }
}

/// Averages per-sequence results with the sequence-probability weights, in
/// enumeration order. Returns (y_Z lower, e_p upper, flagged count).
pub fn aggregate(
    diags: &[SequenceDiag],
    cfg: &ProtocolConfig,
    fast_path: bool,
) -> (f64, f64, usize) {
    let mut y = 0.0;
    let mut eph = 0.0;
    let mut flagged = 0;
    for d in diags {
        let weight = if fast_path {
            1.0
        } else {
            SettingSequence::unpack(d.past_code, cfg.xi).probability(cfg)
        };
        if d.flagged {
            flagged += 1;
            eph += weight * FLAGGED_EPH;
        } else {
            y += weight * d.yield_lower;
            eph += weight * d.eph_upper;
        }
    }
    let e_p = if y > 0.0 { (eph / y).min(1.0) } else { 1.0 };
    (y, e_p, flagged)
}

/// Final key-rate formula, floored at zero.
pub fn key_rate(
    cfg: &ProtocolConfig,
    p1_lower: f64,
    y_lower: f64,
    ep_upper: f64,
    e_b: f64,
    q_mu_z: f64,
) -> f64 {
    assert!(
        (-1e-12..=1.0 + 1e-12).contains(&ep_upper) && (-1e-12..=1.0 + 1e-12).contains(&e_b),
        "error rates outside [0, 1]: ep={ep_upper}, eb={e_b}"
    );
    let bracket = p1_lower * y_lower * (1.0 - binary_entropy(ep_upper.clamp(0.0, 1.0)))
        - cfg.error_correction_f * q_mu_z * binary_entropy(e_b.clamp(0.0, 1.0));
    let k = cfg.intensity_prob(Intensity::Mu) * cfg.alice_z_prob() * cfg.bob_z_prob * bracket;
    k.max(0.0)
}

/// Evaluates one loss point. Per-sequence failures degrade to conservative
/// flags rather than aborting the point.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_point(
    cfg: &ProtocolConfig,
    chan: &ChannelConfig,
    loss_db: f64,
    src: &FineGrainedSource,
    ctx: &SweepContext,
    clock_hz: f64,
    phi_grid: usize,
) -> Result<SkrPoint> {
    let eta = chan.eta(loss_db);
    let stats = observables(src, chan, eta, cfg)?;
    let refs = RefYields::compute(cfg, eta, chan.dark_count);

    let diags: Vec<SequenceDiag> = (0..ctx.n_past)
        .into_par_iter()
        .map(|code| {
            solve_sequence(
                code as u32,
                &ctx.inner[code],
                &stats,
                &ctx.bounds,
                &refs,
                cfg,
                phi_grid,
            )
        })
        .collect::<Result<_>>()?;

    let (y_lower, ep_upper, flagged) = aggregate(&diags, cfg, ctx.fast_path);
    let p1_lower = ctx.bounds.lower[1][Intensity::Mu.index()];
    let k = match stats.e_b {
        Some(e_b) if y_lower > 0.0 => {
            key_rate(cfg, p1_lower, y_lower, ep_upper, e_b, stats.q_mu_z)
        }
        _ => 0.0,
    };
    Ok(SkrPoint {
        loss_db,
        k_per_pulse: k,
        k_bps: k * clock_hz,
        y1_lower: y_lower,
        ep_upper,
        e_b: stats.e_b,
        q_mu_z: stats.q_mu_z,
        p1_lower,
        flagged_sequences: flagged,
        clamp_events: stats.clamp_events,
        diagnostics: diags,
    })
}

/// Sweep over a loss grid. A failed point yields K = 0 with a warning and
/// the sweep continues. The per-pulse rate must be non-increasing in loss.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    cfg: &ProtocolConfig,
    chan: &ChannelConfig,
    losses: &[f64],
    src: &FineGrainedSource,
    eps: &EpsilonSet,
    clock_hz: f64,
    paranoid_phi: bool,
    warnings: &mut Vec<String>,
) -> Result<Vec<SkrPoint>> {
    chan.validate()?;
    let ctx = prepare(cfg, src, eps)?;
    let phi_grid = if paranoid_phi { 1024 } else { cfg.phi_grid };
    let mut points = Vec::with_capacity(losses.len());
    for &loss in losses {
        match evaluate_point(cfg, chan, loss, src, &ctx, clock_hz, phi_grid) {
            Ok(p) => {
                if p.flagged_sequences > 0 {
                    warnings.push(format!(
                        "loss {loss} dB: {} flagged sequences",
                        p.flagged_sequences
                    ));
                }
                if p.clamp_events > 0 {
                    warnings.push(format!(
                        "loss {loss} dB: {} clamped probabilities",
                        p.clamp_events
                    ));
                }
                points.push(p);
            }
            Err(e) => {
                warnings.push(format!("loss {loss} dB failed: {e}"));
                points.push(SkrPoint {
                    loss_db: loss,
                    k_per_pulse: 0.0,
                    k_bps: 0.0,
                    y1_lower: 0.0,
                    ep_upper: 1.0,
                    e_b: None,
                    q_mu_z: 0.0,
                    p1_lower: 0.0,
                    flagged_sequences: ctx.n_past,
                    clamp_events: 0,
                    diagnostics: Vec::new(),
                });
            }
        }
    }
    for w in points.windows(2) {
        if w[0].loss_db < w[1].loss_db {
            assert!(
                w[1].k_per_pulse <= w[0].k_per_pulse + 1e-12,
                "key rate increased with loss: K({}) = {} < K({}) = {}",
                w[0].loss_db,
                w[0].k_per_pulse,
                w[1].loss_db,
                w[1].k_per_pulse
            );
        }
    }
    Ok(points)
}

/// CSV column header for sweep outputs.
pub const CSV_HEADER: &str =
    "loss_db,skr_per_pulse,skr_bps,y1_lower,ep_upper,eb,q_mu_z,p1_lower,flagged_sequences";

/// Deterministic formatting with 12 significant digits.
pub fn csv_row(p: &SkrPoint) -> String {
    let eb = match p.e_b {
        Some(v) => format!("{v:.11e}"),
        None => "nan".to_string(),
    };
    format!(
        "{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{eb},{:.11e},{:.11e},{}",
        p.loss_db,
        p.k_per_pulse,
        p.k_bps,
        p.y1_lower,
        p.ep_upper,
        p.q_mu_z,
        p.p1_lower,
        p.flagged_sequences
    )
}
