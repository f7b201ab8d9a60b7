//! Cross-module integration checks that exercise the full estimation
//! pipeline through the public API.

use decoybound::channel::observables;
use decoybound::config::{preset, EpsilonSection, TablesSection};
use decoybound::decoy::{photon_bounds, RefYields};
use decoybound::epsilon::EpsilonSet;
use decoybound::inner::InnerProductBounds;
use decoybound::model::{ChannelConfig, EpsilonMode, SettingSequence};
use decoybound::skr::{evaluate_point, phase_error_at_phi, prepare};
use decoybound::tables::FineGrainedSource;
use decoybound::virt::worst_case_phi;

fn tables_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/tables")
}

#[test]
fn golden_phase_search_beats_dense_grid_on_full_pipeline() {
    // At nonzero SPF angles the auxiliary phase matters; the production
    // search (64-point grid + golden refinement) must dominate a plain
    // 1024-point dense scan of the same objective.
    let mut cfg = preset("ideal-250").unwrap().protocol;
    cfg.delta1 = 0.05;
    cfg.delta2 = 0.03;
    let chan = ChannelConfig {
        eta_det: 0.1,
        dark_count: 1e-6,
        misalignment: 0.0,
    };
    let src = FineGrainedSource::ideal(&cfg);
    let eps = EpsilonSet::uniform(0, 1e-6, true);
    let eta = chan.eta(3.0);
    let stats = observables(&src, &chan, eta, &cfg).unwrap();
    let bounds = photon_bounds(&src, &cfg).unwrap();
    let inner = InnerProductBounds::compute(&eps, &cfg, &SettingSequence::empty()).unwrap();
    let refs = RefYields::compute(&cfg, eta, chan.dark_count);

    let objective =
        |phi: f64| phase_error_at_phi(phi, 0, &inner, &stats, &bounds, &refs, &cfg);
    let (_, engine_value) = worst_case_phi(objective, 64).unwrap();
    let mut dense = f64::NEG_INFINITY;
    for i in 0..1024 {
        let phi = std::f64::consts::TAU * i as f64 / 1024.0;
        dense = dense.max(objective(phi).unwrap());
    }
    assert!(
        engine_value >= dense - 1e-9,
        "search {engine_value} vs dense grid {dense}"
    );
}

#[test]
fn fine_mode_is_at_least_as_tight_as_coarse() {
    // Per-sequence parameters can only sharpen the worst-case analysis, so
    // the fine key rate dominates the coarse one on the same source.
    let mut cfg = preset("overclock-500-xi1").unwrap();
    cfg.tables = Some(TablesSection {
        dir: tables_dir(),
        marginalization: Default::default(),
        sidechannel_floor: vec![],
    });
    cfg.epsilons = EpsilonSection::FromTables;
    cfg.protocol.phi_grid = 16;

    let mut rates = Vec::new();
    for mode in [EpsilonMode::Coarse, EpsilonMode::Fine] {
        let mut c = cfg.clone();
        c.protocol.mode = mode;
        let (src, eps) = c.resolve_inputs().unwrap();
        let ctx = prepare(&c.protocol, &src, &eps).unwrap();
        let p = evaluate_point(
            &c.protocol,
            &c.channel.channel(),
            5.0,
            &src,
            &ctx,
            1.0,
            c.protocol.phi_grid,
        )
        .unwrap();
        assert_eq!(p.flagged_sequences, 0);
        rates.push(p.k_per_pulse);
    }
    assert!(
        rates[1] >= rates[0] - 1e-12,
        "fine {} below coarse {}",
        rates[1],
        rates[0]
    );
    assert!(rates[0] > 0.0);
}

#[test]
fn fine_bounds_bracket_per_sequence_truth() {
    // For the table-driven source the simulated gains come from the same
    // channel model as the per-sequence true yields, so every solved bound
    // must bracket the truth; a mis-keyed or mis-signed fine parameter
    // would cut the true point out of the feasible set. Also checks that
    // coarse bounds are never tighter than fine ones.
    use decoybound::decoy::{build_bound_lp, build_yield_lp, solve_lp, Direction};
    use decoybound::model::{Encoding, Intensity, Setting, NUM_SETTINGS};
    use decoybound::simplex::SolveStatus;
    use decoybound::virt::{decompose, zeta_weights};

    let mut cfg = preset("overclock-500-xi1").unwrap();
    cfg.tables = Some(TablesSection {
        dir: tables_dir(),
        marginalization: Default::default(),
        sidechannel_floor: vec![],
    });
    cfg.epsilons = EpsilonSection::FromTables;
    let chan = cfg.channel.channel();
    let eta = chan.eta(4.0);

    let run_mode = |mode: EpsilonMode, past_code: u32| -> Vec<(f64, f64, f64)> {
        let mut c = cfg.clone();
        c.protocol.mode = mode;
        let (src, eps) = c.resolve_inputs().unwrap();
        let pcfg = &c.protocol;
        let stats = observables(&src, &chan, eta, pcfg).unwrap();
        let bounds = photon_bounds(&src, pcfg).unwrap();
        let past = SettingSequence::unpack(past_code, 1);
        let inner = InnerProductBounds::compute(&eps, pcfg, &past).unwrap();
        let refs = RefYields::compute(pcfg, eta, chan.dark_count);
        let dec = decompose(pcfg.delta1, pcfg.delta2, 0.7, pcfg).unwrap();
        let w = zeta_weights(&dec, pcfg);

        // True single-photon yield of window (a, r) + past under the model:
        // the simulated gain is the Poisson mixture over exactly these
        // per-photon-number yields, so they are what the LP must contain.
        let true_y1 = |a: Intensity, r: Encoding, basis: usize, kappa: usize| -> f64 {
            let window =
                Setting::new(a, r).index() * NUM_SETTINGS.pow(1) + past_code as usize;
            let resp = decoybound::channel::born_response(src.lambda(window))[basis][kappa];
            decoybound::channel::reference_yield_from_response(1, resp, eta, chan.dark_count)
        };
        let mut out = Vec::new();
        for j in 0..4 {
            let Some(zeta) = &w.zeta[j] else { continue };
            let mut truth = 0.0;
            for (r, row) in zeta.iter().enumerate() {
                for (kappa, &zv) in row.iter().enumerate() {
                    if zv > 0.0 {
                        truth += zv
                            * true_y1(Intensity::Mu, Encoding::from_index(r), 1, kappa);
                    }
                }
            }
            let hi = solve_lp(
                &build_bound_lp(
                    zeta, j, past_code, &stats, &bounds, &inner, &refs, pcfg,
                    Direction::Max,
                )
                .unwrap(),
                Direction::Max,
            );
            let lo = solve_lp(
                &build_bound_lp(
                    zeta, j, past_code, &stats, &bounds, &inner, &refs, pcfg,
                    Direction::Min,
                )
                .unwrap(),
                Direction::Min,
            );
            assert_eq!(hi.status, SolveStatus::Optimal);
            assert_eq!(lo.status, SolveStatus::Optimal);
            assert!(
                lo.value <= truth + 1e-9 && truth <= hi.value + 1e-9,
                "family {j}, past {past_code}: {} <= {truth} <= {} violated",
                lo.value,
                hi.value
            );
            out.push((lo.value, truth, hi.value));
        }
        // Bit-averaged yield: weight the per-encoding truths with the
        // actual photon-number probabilities of each window.
        let mut num = 0.0;
        let mut den = 0.0;
        for r in Encoding::Z {
            let window = Setting::new(Intensity::Mu, r).index() * NUM_SETTINGS.pow(1)
                + past_code as usize;
            let alpha = src.alpha(window);
            let p1 = alpha * (-alpha).exp();
            let p_r = cfg.protocol.encoding_prob(r);
            num += p_r * p1 * (true_y1(Intensity::Mu, r, 0, 0) + true_y1(Intensity::Mu, r, 0, 1));
            den += p_r * p1;
        }
        let truth = num / den;
        let lo = solve_lp(
            &build_yield_lp(past_code, &stats, &bounds, &inner, &refs, pcfg).unwrap(),
            Direction::Min,
        );
        assert_eq!(lo.status, SolveStatus::Optimal);
        assert!(
            lo.value <= truth + 1e-9,
            "yield, past {past_code}: lower {} above truth {truth}",
            lo.value
        );
        out.push((lo.value, truth, 1.0));
        out
    };

    for past_code in [0u32, 4, 8] {
        let fine = run_mode(EpsilonMode::Fine, past_code);
        let coarse = run_mode(EpsilonMode::Coarse, past_code);
        for (f, c) in fine.iter().zip(&coarse) {
            assert!(
                c.0 <= f.0 + 1e-9 && f.2 <= c.2 + 1e-9,
                "coarse bounds tighter than fine at past {past_code}: {c:?} vs {f:?}"
            );
        }
    }
}

#[test]
fn fine_tau_matches_direct_recomputation() {
    // Rebuilds the fine-grained tau for xi = 1 straight from the composed
    // source, without going through the derived parameter maps: the
    // current-round overlap deviation between the two intensity windows,
    // then one future round whose deviations come from the window pair
    // differing at distance 1. Any key-orientation mistake in the derived
    // maps would surface here.
    use decoybound::model::{Encoding, Intensity, Setting, NUM_SETTINGS};

    let mut cfg = preset("overclock-500-xi1").unwrap();
    cfg.tables = Some(TablesSection {
        dir: tables_dir(),
        marginalization: Default::default(),
        sidechannel_floor: vec![],
    });
    cfg.epsilons = EpsilonSection::FromTables;
    cfg.protocol.mode = EpsilonMode::Fine;
    let (src, eps) = cfg.resolve_inputs().unwrap();
    let pcfg = &cfg.protocol;

    let window = |cur: Setting, prev: Setting| cur.index() * NUM_SETTINGS + prev.index();
    let overlap = |w1: usize, w2: usize| {
        let (l1, l2) = (src.lambda(w1), src.lambda(w2));
        l1 * l2 + ((1.0 - l1 * l1) * (1.0 - l2 * l2)).max(0.0).sqrt()
    };

    let (a, ap) = (Intensity::Mu, Intensity::Nu);
    for past_idx in [0usize, 5, 8] {
        let past_setting = Setting::from_index(past_idx);
        let past = SettingSequence(vec![past_setting]);
        for n in [0usize, 1, 4] {
            let mut oracle = f64::INFINITY;
            for r in Encoding::ALL {
                let w1 = window(Setting::new(a, r), past_setting);
                let w2 = window(Setting::new(ap, r), past_setting);
                let dev0 = 1.0 - overlap(w1, w2).powi(2);
                let mut future = 0.0;
                for s1_idx in 0..NUM_SETTINGS {
                    let s1 = Setting::from_index(s1_idx);
                    // Window pair of the future round: current s1, previous
                    // round carrying (a, r) vs (a', r).
                    let f1 = window(s1, Setting::new(a, r));
                    let f2 = window(s1, Setting::new(ap, r));
                    let (al1, al2) = (src.alpha(f1), src.alpha(f2));
                    let e_hat = ((al1 - al2) / (al1 + al2)).abs();
                    let e_state = 1.0 - overlap(f1, f2).powi(2);
                    let e_bar = (al1 + al2) / (2.0 * pcfg.intensity(s1.intensity)) - 1.0;
                    let kappa =
                        1.0 - ((1.0 - e_hat * e_hat) * (1.0 - e_state.max(0.0))).sqrt();
                    future += pcfg.setting_prob(s1)
                        * (-pcfg.intensity(s1.intensity) * (1.0 + e_bar) * kappa).exp();
                }
                oracle = oracle.min((1.0 - dev0.max(0.0)).powf(n as f64 / 2.0) * future);
            }
            let engine = decoybound::inner::tau(n, a, ap, &past, &eps, pcfg).unwrap();
            assert!(
                (engine - oracle.clamp(0.0, 1.0)).abs() < 1e-15,
                "past {past_idx}, n={n}: engine {engine} vs direct {oracle}"
            );
        }
    }
}

#[test]
fn cross_correlations_cost_key_rate() {
    // Switching on the cross families can only hurt.
    let base = preset("overclock-1g-xi3").unwrap();
    let cross = preset("overclock-1g-xi3-cross").unwrap();
    let run = |cfg: &decoybound::config::RunConfig| {
        let (src, eps) = cfg.resolve_inputs().unwrap();
        let ctx = prepare(&cfg.protocol, &src, &eps).unwrap();
        evaluate_point(
            &cfg.protocol,
            &cfg.channel.channel(),
            5.0,
            &src,
            &ctx,
            cfg.output.clock_hz,
            16,
        )
        .unwrap()
        .k_per_pulse
    };
    let k_base = run(&base);
    let k_cross = run(&cross);
    assert!(k_base > 0.0 && k_cross > 0.0);
    assert!(
        k_cross <= k_base + 1e-12,
        "cross-correlated rate {k_cross} above the uncorrelated {k_base}"
    );
}
