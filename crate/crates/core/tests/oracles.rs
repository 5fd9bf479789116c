//! Frozen values from independent implementations (scipy for the normal
//! distribution, a separate Python port of the synthetic model and matcher).

use aspo_core::acquisition::{expected_improvement, normal_cdf};
use aspo_core::assets::Assets;
use aspo_core::checkpoint::SynthesisTimeModel;
use aspo_core::eval::{estimated_execution_time_ms, EvaluationResult};
use aspo_core::gp::matern52;
use aspo_core::space::Value;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn expected_improvement_matches_scipy() {
    // (mean, sigma, best, scipy value)
    let cases = [
        (0.0, 1.0, 0.0, 0.398_942_280_401_432_7),
        (0.3, 0.5, 1.0, 0.718_334_071_354_232_7),
        (2.0, 1.5, 1.0, 0.226_679_470_736_605_5),
        (-1.0, 0.2, -0.9, 0.139_559_311_480_261_2),
    ];
    for (m, s, b, want) in cases {
        let got = expected_improvement(m, s * s, b);
        assert!(
            close(got, want, 1e-12),
            "EI({m},{s},{b}) = {got}, want {want}"
        );
    }
    assert!(close(normal_cdf(-1.3), 0.096_800_484_585_610_36, 1e-13));
    assert!(close(normal_cdf(2.1), 0.982_135_579_437_183_4, 1e-13));
}

#[test]
fn matern_matches_closed_form() {
    assert_eq!(matern52(0.0), 1.0);
    assert!(close(matern52(0.5), 0.828_649_142_418_125_3, 1e-14));
    assert!(close(matern52(1.7), 0.214_878_813_773_106_7, 1e-14));
}

#[test]
fn boom_model_matches_reference_port() {
    let assets = Assets::bundled().unwrap();
    let boom = assets.processor("boom").unwrap();
    let model = boom.model.bind(boom.space.clone()).unwrap();
    let space = &boom.space;
    let default = space.default_configuration();

    let m = model.metrics(&default, "multiply", 0).unwrap();
    assert!(close(m.fmax_mhz, 84.21, 1e-12));
    assert_eq!(m.luts, 82_200);
    assert!(close(m.power_w, 1.5242, 1e-12));
    // cycles carry a +-1% deterministic jitter around the noiseless value
    let noiseless = 95_823.013_5;
    assert!((m.cycles as f64 - noiseless).abs() <= 0.01 * noiseless + 1.0);

    let mut big = default.clone();
    for (name, v) in [
        ("FetchWidth", 8),
        ("DecodeWidth", 4),
        ("RobEntry", 128),
        ("FetchBufferEntry", 32),
    ] {
        let i = space.index_of(name).unwrap();
        big = big.with_level(i, space.param(i).level_of(&Value::Int(v)).unwrap());
    }
    let mb = model.metrics(&big, "multiply", 0).unwrap();
    assert!(close(mb.fmax_mhz, 63.84, 1e-12));
    assert_eq!(mb.luts, 109_600);
    assert!((mb.cycles as f64 - 53_315.763_2).abs() <= 0.01 * 53_315.763_2 + 1.0);

    assert!(close(
        model.synthesis_minutes(&big, Some(&default)),
        55.692_031_724_137_93,
        1e-12
    ));
    assert_eq!(model.synthesis_minutes(&big, None), 80.6);
    assert_eq!(model.synthesis_minutes(&big, Some(&big)), 51.0);
}

#[test]
fn eet_is_cycles_over_fmax() {
    // 95823 cycles at 84.21 MHz
    let r = EvaluationResult::ok(95_823, 84.21, 1, 1.0, 1.0);
    assert!(close(
        estimated_execution_time_ms(&r).unwrap(),
        1.1379052369077307,
        1e-12
    ));
}
