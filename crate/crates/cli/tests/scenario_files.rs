use std::path::Path;

use irsim::montecarlo::{SweepParam, TrainingSnr};
use irsim_cli::scenario::{parse_str, ScenarioError, ScenarioFile};
use proptest::prelude::*;

fn resolve(text: &str) -> Result<irsim_cli::ResolvedScenario, ScenarioError> {
    parse_str(text, Path::new("test.json"))?.resolve()
}

#[test]
fn minimal_file_gets_defaults() {
    let r = resolve(r#"{"system":{"M":8,"N":4,"K":2}}"#).unwrap();
    let s = &r.spec;
    assert_eq!((s.config.m, s.config.n, s.config.k), (8, 4, 2));
    assert_eq!(s.sweep.param, SweepParam::RhoDb);
    assert_eq!(s.sweep.values, vec![0.0]);
    assert_eq!(s.trials, 10_000);
    assert_eq!(s.seed, 42);
    assert_eq!(s.protocols.len(), 3);
    assert!((s.config.tau_c / s.config.tau - 0.01).abs() < 1e-15);
    assert!(matches!(s.training, TrainingSnr::Fixed { .. }));
    assert_eq!(r.output.format, "csv");
}

#[test]
fn tau_c_not_below_tau_is_rejected() {
    let err = resolve(r#"{"system":{"M":8,"N":4,"K":2,"tau_c_frac":1.5}}"#).unwrap_err();
    assert!(err.to_string().contains("tau_c must be < tau"), "{err}");
}

#[test]
fn range_grid_has_eleven_points() {
    let r = resolve(r#"{"system":{"M":8,"N":4,"K":2,"rho_grid_dB":{"start":-30,"stop":20,"step":5}}}"#).unwrap();
    assert_eq!(r.spec.sweep.values.len(), 11);
    assert_eq!(r.spec.sweep.values[0], -30.0);
    assert_eq!(r.spec.sweep.values[10], 20.0);
}

#[test]
fn diagnostics_name_the_key() {
    let cases = [
        (r#"{"system":{"M":8,"N":4,"K":2,"tau":20}}"#, "system.tau_ms"),
        (r#"{"system":{"M":8,"N":4,"K":2,"tau_us":20}}"#, "system.tau_ms"),
        (r#"{"system":{"M":8,"N":4,"K":2},"geometry":{"arc_radius":100}}"#, "geometry.arc_radius_m"),
        (r#"{"system":{"M":8,"N":4,"K":2,"speed":1}}"#, "system.speed"),
        (r#"{"system":{"M":8,"K":2}}"#, "system.N"),
        (r#"{"system":{"M":8,"N":4,"K":2,"rho_grid_dB":{"start":5,"stop":0,"step":1}}}"#, "system.rho_grid_dB"),
        (r#"{"system":{"M":8,"N":4,"K":2,"rho_dB":3,"sigma2_W":1}}"#, "system.sigma2_W"),
        (r#"{"system":{"M":8,"N":4,"K":2,"alpha":[1,1]}}"#, "system.alpha"),
    ];
    for (text, key) in cases {
        let err = resolve(text).unwrap_err();
        assert!(err.to_string().contains(key), "{text}: {err}");
    }
}

#[test]
fn error_kinds() {
    assert!(matches!(
        resolve(r#"{"system":{"M":8,"N":4,"K":2,"P_max":1}}"#),
        Err(ScenarioError::UnitSuffix { .. })
    ));
    assert!(matches!(resolve(r#"{"system":{"M":8,"N":4,"K":2},"x":1}"#), Err(ScenarioError::UnknownKey { .. })));
    assert!(matches!(resolve(r#"{"mc":{}}"#), Err(ScenarioError::MissingKey { .. })));
    assert!(matches!(resolve(r#"{"system":"#), Err(ScenarioError::Syntax { .. })));
    assert!(matches!(
        resolve(r#"{"system":{"M":8,"N":4,"K":2,"rho_grid_dB":[]}}"#),
        Err(ScenarioError::InconsistentGrid { .. })
    ));
}

fn assert_round_trip(text: &str) {
    let first = resolve(text).unwrap();
    let echo = ScenarioFile::echo(&first.spec, &first.output);
    let echoed = serde_json::to_string_pretty(&echo).unwrap();
    let second = resolve(&echoed).unwrap();
    assert_eq!(first, second, "{echoed}");
    // the echo is a fixed point
    assert_eq!(echo, ScenarioFile::echo(&second.spec, &second.output));
}

#[test]
fn echo_round_trips_typical_files() {
    assert_round_trip(r#"{"system":{"M":8,"N":4,"K":2}}"#);
    assert_round_trip(
        r#"{"name":"phys","system":{"M":16,"N":8,"K":3,"P_max_W":2e-9,"sigma2_W":1e-19,"tau_ms":10,"tau_c_frac":0.02,
            "rho_tr_model":{"p_c_W":1,"sigma2_J":1e-19},"alpha":0.8,"powers":[0.5,0.25,0.25]},
            "geometry":{"arc_radius_m":120,"arc_deg":[-20,40],"irs_height_m":30},
            "pathloss":{"C0_dB":30,"eta_h2":2.5},
            "sweep":{"param":"N","values":[4,8,16]},"phase_policy":{"kind":"greedy_discrete","bits":1},
            "mc":{"trials":5,"seed":7},"output":{"path":"out"}}"#,
    );
    assert_round_trip(
        r#"{"system":{"M":4,"N":2,"K":2,"rho_grid_dB":[-5,0,5],"rho_tr_dB":3},"gains":{"beta1_lin":1,"beta2_lin":[1,2],"betad_lin":[1,0.5]},
            "h1":{"model":"unitary","seed":3},"protocol":["perfect","de"],"phase_policy":{"kind":"fixed","theta_rad":[0.1,2.0]},
            "optimizer":{"epsilon":1e-8,"init_seed":9},"irs":true}"#,
    );
    assert_round_trip(r#"{"system":{"M":8,"N":4,"K":2},"geometry":{"users_m":[[100,0,0],[50,50,0]],"bs_m":[0,0,10]}}"#);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn echo_round_trips(
        m in 1usize..64, n in 0usize..32, k in 1usize..8,
        rho_db in -40.0f64..40.0, rho_tr_db in -10.0f64..30.0,
        tau_ms in 0.5f64..100.0, frac in 0.001f64..0.9,
        p in 1e-12f64..10.0, seed in any::<u64>(), trials in 1usize..100_000,
    ) {
        let text = format!(
            r#"{{"system":{{"M":{m},"N":{n},"K":{k},"P_max_W":{p:e},"rho_dB":{rho_db:e},"rho_tr_dB":{rho_tr_db:e},
                "tau_ms":{tau_ms:e},"tau_c_frac":{frac:e}}},"mc":{{"trials":{trials},"seed":{seed}}}}}"#
        );
        let first = resolve(&text).unwrap();
        let echoed = serde_json::to_string(&ScenarioFile::echo(&first.spec, &first.output)).unwrap();
        prop_assert_eq!(first, resolve(&echoed).unwrap());
    }
}
