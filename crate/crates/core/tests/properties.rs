use std::sync::Arc;

use irsim::asymptotics::{det_sinr_de, det_sinr_onoff, det_sinr_perfect};
use irsim::estimation::{de_nmse, de_statistics, onoff_statistics, trace_covariance_onoff};
use irsim::model::{cascaded_channel_matrix, effective_channel, generate_h1_los, generate_h1_unitary, sample_user_channels};
use irsim::montecarlo::{point_context, reference_spec, run_experiment, run_trial, Metric, PhasePolicy, Sweep, SweepParam};
use irsim::phase_opt::{discrete_phase_search, project_unit_modulus, SearchMode};
use irsim::transceiver::{trace_channel_covariance, Protocol};
use irsim::{C64, CVec, Geometry, IrsConfig, LinkGains, Stream, SystemConfig};
use proptest::prelude::*;

fn gains_strategy(k: usize) -> impl Strategy<Value = LinkGains> {
    (
        0.05f64..2.0,
        prop::collection::vec(0.05f64..3.0, k),
        prop::collection::vec(0.05f64..3.0, k),
    )
        .prop_map(|(beta1, beta2, betad)| LinkGains { beta1, beta2, betad })
}

fn scaled(g: &LinkGains, s: f64) -> LinkGains {
    LinkGains {
        beta1: g.beta1,
        beta2: g.beta2.iter().map(|b| b * s).collect(),
        betad: g.betad.iter().map(|b| b * s).collect(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projection_is_nearest_unit_modulus_point(
        re in prop::collection::vec(-5.0f64..5.0, 6),
        im in prop::collection::vec(-5.0f64..5.0, 6),
        alpha in prop::collection::vec(0.1f64..1.0, 6),
        theta in prop::collection::vec(0.0f64..std::f64::consts::TAU, 6),
    ) {
        let v_bar = CVec::from_fn(6, |i, _| C64::new(re[i], im[i]));
        let p = project_unit_modulus(&v_bar, &alpha);
        for (x, a) in p.v().iter().zip(&alpha) {
            prop_assert!((x.norm() - a).abs() < 1e-12);
        }
        let other = IrsConfig::from_phases(&alpha, &theta);
        prop_assert!((p.v() - &v_bar).norm() <= (other.v() - &v_bar).norm() + 1e-12);
    }

    #[test]
    fn effective_channel_is_affine_in_v(
        seed in any::<u64>(),
        t1 in prop::collection::vec(0.0f64..6.3, 5),
        t2 in prop::collection::vec(0.0f64..6.3, 5),
    ) {
        let gains = LinkGains { beta1: 0.3, beta2: vec![1.0, 0.5], betad: vec![0.7, 1.1] };
        let h1 = Arc::new(generate_h1_unitary(4, 5, gains.beta1, seed).unwrap());
        let ch = sample_user_channels(Stream::new(seed), &gains, h1);
        let alpha = [1.0, 0.8, 0.6, 0.9, 0.5];
        let (v1, v2) = (IrsConfig::from_phases(&alpha, &t1), IrsConfig::from_phases(&alpha, &t2));
        for k in 0..2 {
            let h0 = cascaded_channel_matrix(&ch, k);
            let want = &ch.hd[k] + &h0 * v1.v();
            prop_assert!((effective_channel(&ch, &v1, k) - &want).norm() < 1e-12 * want.norm());
            let d1 = effective_channel(&ch, &v1, k) - &ch.hd[k];
            let d2 = effective_channel(&ch, &v2, k) - &ch.hd[k];
            prop_assert!((&h0 * (v1.v() + v2.v()) - (d1 + d2)).norm() < 1e-12);
        }
    }

    #[test]
    fn equivalents_invariant_to_joint_gain_and_snr_scaling(
        gains in gains_strategy(3),
        s in 0.01f64..100.0,
        rho_db in -10.0f64..20.0,
        rho_tr_db in -10.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let (m, n, k) = (4, 6, 3);
        let config = SystemConfig::new(m, n, k).with_rho_db(rho_db).with_rho_tr_db(rho_tr_db);
        let other = config.clone().with_rho(config.rho() / s).with_rho_tr(config.rho_tr / s);
        let g2 = scaled(&gains, s);
        let h1 = Arc::new(generate_h1_unitary(m, n, gains.beta1, seed % 1000).unwrap());
        let v = IrsConfig::random_continuous(&config.alpha, &mut Stream::new(seed).rng());

        let a = det_sinr_perfect(&gains, &h1, &config);
        let b = det_sinr_perfect(&g2, &h1, &other);
        let c = det_sinr_onoff(&onoff_statistics(&config, &gains, h1.clone()).unwrap(), &v, &config);
        let d = det_sinr_onoff(&onoff_statistics(&other, &g2, h1.clone()).unwrap(), &v, &other);
        let e = det_sinr_de(&de_statistics(&config, &gains, &h1).unwrap(), &config);
        let f = det_sinr_de(&de_statistics(&other, &g2, &h1).unwrap(), &other);
        for (x, y) in [(a, b), (c, d), (e, f)] {
            for (p, q) in x.gamma.iter().zip(&y.gamma) {
                prop_assert!(rel(*p, *q) < 1e-9, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn equivalents_increase_with_snr(
        gains in gains_strategy(3),
        rho_db in -20.0f64..20.0,
        step in 0.5f64..10.0,
        rho_tr_db in -10.0f64..20.0,
    ) {
        let (m, n, k) = (6, 6, 3);
        let h1 = Arc::new(generate_h1_los(m, n, gains.beta1, &Geometry::reference(k)).unwrap());
        let lo = SystemConfig::new(m, n, k).with_rho_db(rho_db).with_rho_tr_db(rho_tr_db);
        let hi = lo.clone().with_rho_db(rho_db + step);
        let v = IrsConfig::zero_phase(&lo.alpha);
        let on = onoff_statistics(&lo, &gains, h1.clone()).unwrap();
        let de = de_statistics(&lo, &gains, &h1).unwrap();
        let pairs = [
            (det_sinr_perfect(&gains, &h1, &lo), det_sinr_perfect(&gains, &h1, &hi)),
            (det_sinr_onoff(&on, &v, &lo), det_sinr_onoff(&on, &v, &hi)),
            (det_sinr_de(&de, &lo), det_sinr_de(&de, &hi)),
        ];
        for (a, b) in pairs {
            for (x, y) in a.gamma.iter().zip(&b.gamma) {
                prop_assert!(y > x);
            }
        }
        // better training means better estimates (rates can still drop: power is shared)
        let better = lo.clone().with_rho_tr_db(rho_tr_db + step);
        let on2 = onoff_statistics(&better, &gains, h1.clone()).unwrap();
        let de2 = de_statistics(&better, &gains, &h1).unwrap();
        for k in 0..k {
            prop_assert!(trace_covariance_onoff(&on2, &v, k) > trace_covariance_onoff(&on, &v, k));
            prop_assert!(de_nmse(&de2, k) < de_nmse(&de, k));
        }
    }

    #[test]
    fn estimate_energy_below_channel_energy(
        gains in gains_strategy(2),
        rho_tr_db in -20.0f64..30.0,
        theta in prop::collection::vec(0.0f64..6.3, 5),
    ) {
        let config = SystemConfig::new(4, 5, 2).with_rho_tr_db(rho_tr_db);
        let h1 = Arc::new(generate_h1_los(4, 5, gains.beta1, &Geometry::reference(2)).unwrap());
        let stats = onoff_statistics(&config, &gains, h1.clone()).unwrap();
        let v = IrsConfig::from_phases(&config.alpha, &theta);
        for k in 0..2 {
            let est = trace_covariance_onoff(&stats, &v, k);
            let full = trace_channel_covariance(4, gains.betad[k], gains.beta2[k], &h1, &config.alpha);
            prop_assert!(est > 0.0 && est <= full * (1.0 + 1e-12));
        }
    }

    #[test]
    fn perfect_csi_sinr_monotone_in_rho_per_trial(seed in any::<u64>(), rho_db in -20.0f64..15.0, step in 0.5f64..10.0) {
        let mut spec = reference_spec(6, 4, 3);
        spec.protocols = vec![Protocol::Perfect];
        // phases drawn from the trial stream, so both points see the same v
        spec.phase_policy = PhasePolicy::RandomDiscrete { bits: 2, per_trial: true };
        spec.sweep = Sweep { param: SweepParam::RhoDb, values: vec![rho_db, rho_db + step] };
        let lo = point_context(&spec, 0).unwrap();
        let hi = point_context(&spec, 1).unwrap();
        let stream = Stream::new(seed).child(3);
        let a = run_trial(&lo, &[Protocol::Perfect], stream);
        let b = run_trial(&hi, &[Protocol::Perfect], stream);
        for (x, y) in a.sinr[0].1.iter().zip(&b.sinr[0].1) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn exhaustive_search_dominates_greedy(w in prop::collection::vec(-1.0f64..1.0, 8)) {
        let target: Vec<C64> = w.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
        let objective = |v: &IrsConfig| -> f64 {
            let s: C64 = v.v().iter().zip(&target).map(|(a, b)| a * b).sum();
            s.norm() - v.v()[0].re * target[1].im
        };
        let alpha = [1.0; 4];
        let full = discrete_phase_search(objective, &alpha, 2, SearchMode::Exhaustive).unwrap();
        let greedy = discrete_phase_search(objective, &alpha, 2, SearchMode::Greedy { max_passes: 4 }).unwrap();
        prop_assert_eq!(full.evaluations, 256);
        prop_assert!(full.value >= greedy.value);
    }
}

#[test]
fn user_draws_do_not_depend_on_later_users() {
    let few = LinkGains { beta1: 1.0, beta2: vec![1.0; 2], betad: vec![1.0; 2] };
    let many = LinkGains { beta1: 1.0, beta2: vec![1.0; 5], betad: vec![1.0; 5] };
    let h1 = Arc::new(generate_h1_unitary(3, 4, 1.0, 0).unwrap());
    let a = sample_user_channels(Stream::new(8), &few, h1.clone());
    let b = sample_user_channels(Stream::new(8), &many, h1);
    assert_eq!(a.hd, b.hd[..2]);
    assert_eq!(a.h2, b.h2[..2]);
}

#[test]
fn standard_error_shrinks_as_inverse_root_of_trials() {
    let stderr = |trials: usize| {
        let mut spec = reference_spec(6, 4, 3);
        spec.trials = trials;
        spec.protocols = vec![Protocol::Perfect];
        let r = run_experiment(&spec).unwrap();
        r.curves[0].points[0].metric(Metric::MeanSinr).stderr
    };
    let ratio = stderr(500) / stderr(8000);
    assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
}
