//! Cross-module integration: shipped feeder structure, round-trips, and the
//! relaxation-mode degeneration property.

use std::path::PathBuf;

use svropf::builder::{build_mbopf, lift_point, BuildOptions, SvrMode};
use svropf::loadflow::{sweep, SweepOptions};
use svropf::netmodel::{parse_feeder, radial_order, to_feeder_file, Network, PhaseMask};
use svropf::svrgain::SvrType;

fn load(name: &str) -> Network {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("feeders")
        .join(name);
    parse_feeder(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn ieee13_transcription_structure() {
    // Cross-checked against the published test-feeder documentation: 13
    // named buses plus the regulator secondary, one wye SVR, and the
    // 1/2/3-phase laterals.
    let net = load("ieee13.json");
    assert_eq!(net.n_buses(), 14);
    assert_eq!(net.lines.len(), 12);
    assert_eq!(net.svrs.len(), 1);
    assert_eq!(net.svrs[0].spec.svr_type, SvrType::Wye);
    assert!(radial_order(&net, true).unwrap().radial);

    let by_ext = |ext: u64| net.buses.iter().find(|b| b.ext_id == ext).unwrap();
    assert_eq!(by_ext(645).phases, PhaseMask::parse("bc").unwrap());
    assert_eq!(by_ext(646).phases, PhaseMask::parse("bc").unwrap());
    assert_eq!(by_ext(684).phases, PhaseMask::parse("ac").unwrap());
    assert_eq!(by_ext(611).phases, PhaseMask::parse("c").unwrap());
    assert_eq!(by_ext(652).phases, PhaseMask::parse("a").unwrap());
    assert_eq!(by_ext(671).phases, PhaseMask::ABC);

    // Total constant-power load matches the documented 3466 kW on the
    // 5 MVA base.
    let total_kw: f64 = net
        .buses
        .iter()
        .flat_map(|b| b.load_s.iter())
        .map(|s| s.re)
        .sum::<f64>()
        * 5000.0;
    assert!((total_kw - 3466.0).abs() < 1e-6, "{total_kw}");
}

#[test]
fn ieee37_transcription_structure() {
    let net = load("ieee37.json");
    assert_eq!(net.n_buses(), 38); // 35 feeder buses + 799 + regulator bus + HV slack
    assert_eq!(net.lines.len(), 36);
    assert_eq!(net.svrs.len(), 1);
    assert!(radial_order(&net, true).unwrap().radial);
    assert!(net.buses.iter().all(|b| b.phases == PhaseMask::ABC));
    let total_kw: f64 = net
        .buses
        .iter()
        .flat_map(|b| b.load_s.iter())
        .map(|s| s.re)
        .sum::<f64>()
        * 2500.0;
    assert!((total_kw - 2457.0).abs() < 1e-6, "{total_kw}");
}

#[test]
fn shipped_feeders_round_trip() {
    for file in [
        "synthetic/wye4.json",
        "synthetic/closed_delta4.json",
        "synthetic/open_delta4.json",
        "ieee13.json",
        "ieee37.json",
    ] {
        let net = load(file);
        let text = serde_json::to_string(&to_feeder_file(&net)).unwrap();
        let net2 = parse_feeder(&text).unwrap();
        assert_eq!(net.n_buses(), net2.n_buses(), "{file}");
        for (a, b) in net.buses.iter().zip(&net2.buses) {
            assert_eq!(a.ext_id, b.ext_id);
            assert_eq!(a.phases, b.phases);
            assert_eq!(a.load_s, b.load_s, "{file} bus {}", a.ext_id);
            assert_eq!(a.shunt_y, b.shunt_y);
        }
        for (a, b) in net.lines.iter().zip(&net2.lines) {
            assert_eq!((a.from, a.to), (b.from, b.to));
            assert_eq!(a.z, b.z);
        }
        for (a, b) in net.svrs.iter().zip(&net2.svrs) {
            assert_eq!((a.from, a.to), (b.from, b.to));
            assert_eq!(a.spec, b.spec);
        }
    }
}

#[test]
fn gang_wye_lift_is_feasible_for_both_mbopf_and_cgopf() {
    // Mode degeneration: with a single gang-operated wye SVR, the exactly
    // lifted load-flow point satisfies both program variants.
    let net = load("synthetic/wye4.json");
    let ratios = vec![vec![0.95, 0.95, 0.95]];
    let inj = net.load_injections();
    let lf = sweep(
        &net,
        &ratios,
        &inj,
        &SweepOptions {
            tol: 1e-13,
            ..Default::default()
        },
    )
    .unwrap();
    for mode in [SvrMode::Mbopf, SvrMode::CgopfStyle] {
        let opts = BuildOptions {
            svr_mode: mode,
            gang_override: Some(true),
            delta: vec![5.0],
            ..Default::default()
        };
        let (p, vm) = build_mbopf(&net, &opts).unwrap();
        let x = lift_point(&net, &vm, &lf, &inj, &ratios);
        let (eq, ineq, soc, psd) = p.residuals(&x);
        assert!(eq < 1e-9, "{mode:?} eq {eq}");
        assert!(ineq < 1e-9, "{mode:?} ineq {ineq}");
        assert!(soc < 1e-9, "{mode:?} soc {soc}");
        assert!(psd < 1e-7, "{mode:?} psd {psd}");
    }
}

#[test]
fn per_unit_feeders_parse_without_base_block() {
    // A fully per-unit document needs no base block; an ohmic line without
    // one is a units error.
    let pu = r#"{
        "buses": [{"id": 0, "phases": "a"}, {"id": 1, "phases": "a"}],
        "lines": [{"from": 0, "to": 1, "z": [[[0.01, 0.02]]]}],
        "slack": {"bus": 0, "voltage": [[1, 0]]},
        "v_min": 0.9, "v_max": 1.1
    }"#;
    assert!(parse_feeder(pu).is_ok());
    let ohm = pu.replace(r#""z": [[[0.01, 0.02]]]"#, r#""z": [[[0.01, 0.02]]], "units": "ohm""#);
    assert!(matches!(
        parse_feeder(&ohm),
        Err(svropf::netmodel::NetError::Units(_))
    ));
}
