//! Per-sequence decoy linear programs: photon-number bounds, gain
//! sandwiches and linearized CS constraints over the yield variables
//! `v(n, a)`, solved for the four phase-error combinations and the
//! bit-averaged single-photon yield.

use crate::channel::{spf_response, reference_yield_from_response, ObservedStatistics};
use crate::cs::{lower_tangent, upper_tangent};
use crate::error::{Error, Result};
use crate::inner::InnerProductBounds;
use crate::model::{Encoding, Intensity, ProtocolConfig, NUM_SETTINGS};
use crate::simplex::{self, LinearProgram, Sense, SolveStatus};
use crate::tables::FineGrainedSource;
use crate::virt::ZetaGrid;

/// Poisson probabilities `p_n` for n = 0..=n_cut.
pub fn poisson_terms(alpha: f64, n_cut: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_cut + 1);
    let mut p = (-alpha).exp();
    out.push(p);
    for n in 1..=n_cut {
        p *= alpha / n as f64;
        out.push(p);
    }
    out
}

/// Elementwise min/max of the Poisson photon-number probabilities over
/// every sequence, per current intensity setting.
#[derive(Debug, Clone)]
pub struct PhotonBounds {
    /// `lower[n][a]`, `upper[n][a]`
    pub lower: Vec<[f64; 3]>,
    pub upper: Vec<[f64; 3]>,
    /// Per-sequence tail mass bound: the gain combinations are mixtures
    /// over fixed sequences, so the mass above the cutoff is at most the
    /// worst single-sequence tail `max_s (1 - sum_n p_{n|s})`. The naive
    /// `1 - sum_n lower[n][a]` sums minima attained at different sequences
    /// and is orders of magnitude looser for a correlated source.
    pub tail: [f64; 3],
}

/// Required Poisson tail mass at the cutoff for the largest intensity.
const TAIL_GUARD: f64 = 1e-8;

pub fn photon_bounds(src: &FineGrainedSource, cfg: &ProtocolConfig) -> Result<PhotonBounds> {
    let n_cut = cfg.n_cut;
    let max_alpha = src.max_alpha();
    let tail = 1.0 - poisson_terms(max_alpha, n_cut).iter().sum::<f64>();
    if tail >= TAIL_GUARD {
        return Err(Error::Capacity(format!(
            "Poisson tail {tail:.3e} at n_cut = {n_cut} exceeds {TAIL_GUARD:.0e} for the \
             largest intensity {max_alpha}; raise n_cut"
        )));
    }
    let mut lower = vec![[f64::INFINITY; 3]; n_cut + 1];
    let mut upper = vec![[f64::NEG_INFINITY; 3]; n_cut + 1];
    let mut tail_bound = [0.0f64; 3];
    let past_count = src.num_windows() / NUM_SETTINGS;
    for window in 0..src.num_windows() {
        let a = (window / past_count) / 3; // intensity index of the setting
        let terms = poisson_terms(src.alpha(window), n_cut);
        for (n, &p) in terms.iter().enumerate() {
            lower[n][a] = lower[n][a].min(p);
            upper[n][a] = upper[n][a].max(p);
        }
        tail_bound[a] = tail_bound[a].max(1.0 - terms.iter().sum::<f64>());
    }
    Ok(PhotonBounds {
        lower,
        upper,
        tail: tail_bound,
    })
}

/// Reference yields of the flat-SPF model at the simulated channel point;
/// used as tangent points for the CS linearization. Indexed
/// `[basis][kappa][encoding][n]`.
#[derive(Debug, Clone)]
pub struct RefYields {
    y: Vec<f64>,
    n_cut: usize,
}

impl RefYields {
    pub fn compute(cfg: &ProtocolConfig, eta: f64, dark: f64) -> RefYields {
        let n_cut = cfg.n_cut;
        let mut y = vec![0.0; 2 * 2 * 3 * (n_cut + 1)];
        for (bi, _) in ["Z", "X"].iter().enumerate() {
            for kappa in 0..2 {
                for r in Encoding::ALL {
                    let resp = spf_response(r, cfg.delta1, cfg.delta2)[bi][kappa];
                    for n in 0..=n_cut {
                        y[RefYields::idx(bi, kappa, r.index(), n, n_cut)] =
                            reference_yield_from_response(n, resp, eta, dark);
                    }
                }
            }
        }
        RefYields { y, n_cut }
    }

    #[inline]
    fn idx(basis: usize, kappa: usize, r: usize, n: usize, n_cut: usize) -> usize {
        ((basis * 2 + kappa) * 3 + r) * (n_cut + 1) + n
    }

    #[inline]
    pub fn get(&self, basis: usize, kappa: usize, r: usize, n: usize) -> f64 {
        self.y[RefYields::idx(basis, kappa, r, n, self.n_cut)]
    }

    /// X-basis reference combination per photon number for a zeta grid.
    pub fn combo_x(&self, zeta: &ZetaGrid) -> Vec<f64> {
        (0..=self.n_cut)
            .map(|n| {
                let mut acc = 0.0;
                for r in 0..3 {
                    for kappa in 0..2 {
                        acc += zeta[r][kappa] * self.get(1, kappa, r, n);
                    }
                }
                acc.clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Bit-averaged Z-basis double-outcome reference per photon number.
    pub fn combo_z_bit_avg(&self, cfg: &ProtocolConfig) -> Vec<f64> {
        let pz = cfg.alice_z_prob();
        (0..=self.n_cut)
            .map(|n| {
                let mut acc = 0.0;
                for r in Encoding::Z {
                    acc += cfg.encoding_prob(r) * (self.get(0, 0, r.index(), n) + self.get(0, 1, r.index(), n));
                }
                (acc / pz).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Provenance of one LP constraint, used by the debug dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintTag {
    GainLower(Intensity),
    GainUpper(Intensity),
    CsUpper { n: usize, a: Intensity, ap: Intensity },
    CsLower { n: usize, a: Intensity, ap: Intensity },
}

impl std::fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstraintTag::GainLower(a) => write!(f, "gain-lower[{}]", a.label()),
            ConstraintTag::GainUpper(a) => write!(f, "gain-upper[{}]", a.label()),
            ConstraintTag::CsUpper { n, a, ap } => {
                write!(f, "cs-upper[n={n},{}->{}]", a.label(), ap.label())
            }
            ConstraintTag::CsLower { n, a, ap } => {
                write!(f, "cs-lower[n={n},{}->{}]", a.label(), ap.label())
            }
        }
    }
}

/// One assembled estimation problem plus constraint provenance.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub lp: LinearProgram<f64>,
    pub tags: Vec<ConstraintTag>,
    /// Human label, e.g. "max v3(1,mu)".
    pub label: String,
}

impl LpProblem {
    /// Plain-text dump: one line per constraint
    /// `coeffs... <= rhs # provenance-tag`.
    pub fn dump(&self) -> String {
        let mut out = format!("# {}\n", self.label);
        for ((coeffs, sense, rhs), tag) in self.lp.constraints.iter().zip(&self.tags) {
            let cs: Vec<String> = coeffs.iter().map(|c| format!("{c:.12e}")).collect();
            let op = match sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
            };
            out += &format!("{} {op} {rhs:.12e} # {tag}\n", cs.join(" "));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Max,
    Min,
}

/// Index of variable v(n, a).
#[inline]
fn var(n: usize, a: usize) -> usize {
    n * 3 + a
}

struct FamilySpec<'a> {
    /// Observed gain combination per intensity.
    q: [f64; 3],
    /// Tangent points per photon number.
    x0: &'a [f64],
    /// Overlap lower bounds tau[n][a][a'].
    tau: &'a [[[f64; 3]; 3]],
    /// Scale on the photon-probability sums (1, or P_Z^A for the yield LP).
    scale: f64,
    label: String,
}

fn build_family_lp(
    spec: &FamilySpec<'_>,
    bounds: &PhotonBounds,
    n_cut: usize,
    direction: Direction,
) -> Result<LpProblem> {
    let nv = (n_cut + 1) * 3;
    let mut objective = vec![0.0; nv];
    objective[var(1, Intensity::Mu.index())] = match direction {
        Direction::Max => 1.0,
        Direction::Min => -1.0,
    };
    let mut constraints = Vec::with_capacity(6 + 2 * 6 * (n_cut + 1));
    let mut tags = Vec::with_capacity(constraints.capacity());

    for a in 0..3 {
        let mut lo = vec![0.0; nv];
        let mut hi = vec![0.0; nv];
        for n in 0..=n_cut {
            lo[var(n, a)] = spec.scale * bounds.lower[n][a];
            hi[var(n, a)] = spec.scale * bounds.upper[n][a];
        }
        // sum_n p^L v <= Q
        constraints.push((lo, Sense::Le, spec.q[a]));
        tags.push(ConstraintTag::GainLower(Intensity::from_index(a)));
        // Q <= sum_n p^U v + tail  =>  sum_n p^U v >= Q - tail
        constraints.push((hi, Sense::Ge, spec.q[a] - spec.scale * bounds.tail[a]));
        tags.push(ConstraintTag::GainUpper(Intensity::from_index(a)));
    }

    for n in 0..=n_cut {
        let x0 = spec.x0[n];
        for a in 0..3 {
            for ap in 0..3 {
                if a == ap {
                    continue;
                }
                let y = spec.tau[n][a][ap];
                let (tu, mu) = upper_tangent(x0, y);
                let (tl, ml) = lower_tangent(x0, y);
                if !(tu.is_finite() && mu.is_finite() && tl.is_finite() && ml.is_finite()) {
                    return Err(Error::LpBuild(format!(
                        "non-finite tangent coefficient at n={n}, a={}, a'={}",
                        Intensity::from_index(a).label(),
                        Intensity::from_index(ap).label()
                    )));
                }
                // v(n, a') <= tu + mu v(n, a)
                let mut cu = vec![0.0; nv];
                cu[var(n, ap)] = 1.0;
                cu[var(n, a)] -= mu;
                constraints.push((cu, Sense::Le, tu));
                tags.push(ConstraintTag::CsUpper {
                    n,
                    a: Intensity::from_index(a),
                    ap: Intensity::from_index(ap),
                });
                // v(n, a') >= tl + ml v(n, a)
                let mut cl = vec![0.0; nv];
                cl[var(n, ap)] = 1.0;
                cl[var(n, a)] -= ml;
                constraints.push((cl, Sense::Ge, tl));
                tags.push(ConstraintTag::CsLower {
                    n,
                    a: Intensity::from_index(a),
                    ap: Intensity::from_index(ap),
                });
            }
        }
    }

    Ok(LpProblem {
        lp: LinearProgram {
            objective,
            constraints,
            bounds: vec![(0.0, 1.0); nv],
        },
        tags,
        label: format!(
            "{} {} v(1,mu)",
            match direction {
                Direction::Max => "max",
                Direction::Min => "min",
            },
            spec.label
        ),
    })
}

/// Gain combination `sum_{r,kappa} zeta[r][kappa] Q^{X,kappa}_{(a,r)past}`
/// per intensity.
pub fn x_gain_combo(
    zeta: &ZetaGrid,
    past_code: u32,
    stats: &ObservedStatistics,
    xi: usize,
) -> [f64; 3] {
    let past_count = NUM_SETTINGS.pow(xi as u32);
    let mut q = [0.0; 3];
    for (a, qa) in q.iter_mut().enumerate() {
        for r in 0..3 {
            let window = (a * 3 + r) * past_count + past_code as usize;
            for kappa in 0..2 {
                *qa += zeta[r][kappa] * stats.gains[window][1][kappa];
            }
        }
    }
    q
}

/// Bit-averaged Z-basis double-outcome gain per intensity:
/// `sum_{r in {0,1}} p_r (Q^{Z,0} + Q^{Z,1})`.
pub fn z_gain_combo(
    cfg: &ProtocolConfig,
    past_code: u32,
    stats: &ObservedStatistics,
    xi: usize,
) -> [f64; 3] {
    let past_count = NUM_SETTINGS.pow(xi as u32);
    let mut q = [0.0; 3];
    for (a, qa) in q.iter_mut().enumerate() {
        for r in Encoding::Z {
            let window = (a * 3 + r.index()) * past_count + past_code as usize;
            let g = &stats.gains[window][0];
            *qa += cfg.encoding_prob(r) * (g[0] + g[1]);
        }
    }
    q
}

/// Builds the LP bounding the phase-error combination `j` (0-based index
/// into the zeta families) for one past sequence.
#[allow(clippy::too_many_arguments)]
pub fn build_bound_lp(
    zeta: &ZetaGrid,
    j: usize,
    past_code: u32,
    stats: &ObservedStatistics,
    bounds: &PhotonBounds,
    inner: &InnerProductBounds,
    refs: &RefYields,
    cfg: &ProtocolConfig,
    direction: Direction,
) -> Result<LpProblem> {
    let x0 = refs.combo_x(zeta);
    let spec = FamilySpec {
        q: x_gain_combo(zeta, past_code, stats, cfg.xi),
        x0: &x0,
        tau: &inner.tau,
        scale: 1.0,
        label: format!("T{}", j + 1),
    };
    build_family_lp(&spec, bounds, cfg.n_cut, direction)
}

/// Builds the LP lower-bounding the bit-averaged single-photon Z yield.
pub fn build_yield_lp(
    past_code: u32,
    stats: &ObservedStatistics,
    bounds: &PhotonBounds,
    inner: &InnerProductBounds,
    refs: &RefYields,
    cfg: &ProtocolConfig,
) -> Result<LpProblem> {
    let x0 = refs.combo_z_bit_avg(cfg);
    let spec = FamilySpec {
        q: z_gain_combo(cfg, past_code, stats, cfg.xi),
        x0: &x0,
        tau: &inner.tau_prime,
        scale: cfg.alice_z_prob(),
        label: "yield".to_string(),
    };
    build_family_lp(&spec, bounds, cfg.n_cut, Direction::Min)
}

/// Solved bound with the sign convention of the requested direction
/// restored (the builder negates objectives for minimization).
#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub status: SolveStatus,
    /// Bound value in [0, 1] for optimal solves.
    pub value: f64,
    pub residual: f64,
}

/// A returned point violating constraints by more than this is treated as
/// a solver failure rather than a usable bound.
const RESIDUAL_GUARD: f64 = 1e-7;

pub fn solve_lp(problem: &LpProblem, direction: Direction) -> LpOutcome {
    let sol = simplex::solve(&problem.lp);
    let value = match direction {
        Direction::Max => sol.objective,
        Direction::Min => -sol.objective,
    };
    let status = if sol.status == SolveStatus::Optimal && sol.residual > RESIDUAL_GUARD {
        SolveStatus::Stalled
    } else {
        sol.status
    };
    LpOutcome {
        status,
        value: value.clamp(0.0, 1.0),
        residual: sol.residual,
    }
}

/// Convenience: the "true" value of a family combination computed straight
/// from the reference yields at n = 1 (used by soundness tests and the
/// engine's diagnostics).
pub fn true_combo_value(x0: &[f64]) -> f64 {
    x0[1]
}

/// Evaluates tau-collapse conditions. With every overlap equal to 1 the CS
/// tangents force equality across intensities; exposed for tests.
pub fn cs_collapsed(inner: &InnerProductBounds) -> bool {
    inner
        .tau
        .iter()
        .all(|t| {
            (0..3).all(|a| (0..3).all(|ap| a == ap || (t[a][ap] - 1.0).abs() < 1e-15))
        })
}
