//! Pipeline integration: targets parsed from spec text, compiled through the
//! public API, and measured by the harness.

use vocabflow::compile::{compile_flow_sequence, compile_neural_ode, CompileOptions};
use vocabflow::harness::{lp_error, sup_error, BoxDomain, GridSpec};
use vocabflow::target::{parse_target, CompileInput};
use vocabflow::vocab::{format_sentence, parse_sentence};

const SHEAR_THEN_ROTATE: &str = r#"
kind = "composition"
dim = 2

[[flow]]
kind = "affine_flow"
tau = 1.0
a = [[0.0, 0.5], [0.0, 0.0]]
b = [0.0, 0.0]

[[flow]]
kind = "affine_flow"
tau = 0.7853981633974483
a = [[0.0, -1.0], [1.0, 0.0]]
b = [0.0, 0.0]
"#;

#[test]
fn parsed_composition_compiles_and_measures() {
    let spec = parse_target(SHEAR_THEN_ROTATE).unwrap();
    let omega = BoxDomain::uniform(2, -1.0, 1.0).unwrap();
    let opts = CompileOptions::default();
    let flows = match spec.to_compile_input().unwrap() {
        CompileInput::Flows(f) => f,
        other => panic!("unexpected input {other:?}"),
    };
    let (sentence, report) = compile_flow_sequence(&flows, 0.1, &omega, &opts, None).unwrap();
    assert!(report.measured_sup_error <= 0.1);

    // Independent measurement through the harness on a different grid.
    let target = spec.to_target_map().unwrap();
    let grid = GridSpec { lattice_per_axis: 21, random: 128, seed: 9 };
    let rep = sup_error(&target, &sentence, &omega, &grid).unwrap();
    assert!(rep.sup_error <= 0.1, "sup {}", rep.sup_error);
    let lp = lp_error(&target, &sentence, &omega, 2.0, &grid).unwrap();
    assert!(lp <= rep.sup_error * omega.volume().sqrt() + 1e-12);
}

#[test]
fn compiled_sentence_text_round_trips() {
    let spec = parse_target(SHEAR_THEN_ROTATE).unwrap();
    let omega = BoxDomain::uniform(2, -1.0, 1.0).unwrap();
    let flows = match spec.to_compile_input().unwrap() {
        CompileInput::Flows(f) => f,
        _ => unreachable!(),
    };
    let (sentence, _) =
        compile_flow_sequence(&flows, 0.2, &omega, &CompileOptions::default(), None).unwrap();
    let text = format_sentence(&sentence);
    let back = parse_sentence(&text).unwrap();
    assert_eq!(back, sentence);
}

#[test]
fn neural_ode_target_from_text_end_to_end() {
    let text = r#"
kind = "neural_ode"
dim = 2
width = 1
a_neg = 0.5
breakpoints = [0.0, 0.5, 1.0]

[[interval]]
s = [[0.1, 0.0]]
w = [[0.6, -0.2]]
b = [0.1]

[[interval]]
s = [[0.0, -0.1]]
w = [[0.3, 0.5]]
b = [-0.2]
"#;
    let spec = parse_target(text).unwrap();
    let field = match spec.to_compile_input().unwrap() {
        CompileInput::Node(f) => f,
        _ => unreachable!(),
    };
    let omega = BoxDomain::uniform(2, -1.0, 1.0).unwrap();
    let (sentence, report) =
        compile_neural_ode(&field, 0.1, &omega, &CompileOptions::default()).unwrap();
    assert!(report.measured_sup_error <= 0.1);
    assert!(report.euler_steps.unwrap_or(0) >= 2, "steps must cover both intervals");

    let target = spec.to_target_map().unwrap();
    let grid = GridSpec { lattice_per_axis: 17, random: 64, seed: 4 };
    let rep = sup_error(&target, &sentence, &omega, &grid).unwrap();
    assert!(rep.sup_error <= 0.12, "sup {}", rep.sup_error);
}

#[test]
fn single_precision_kernels_work() {
    use vocabflow::flows::{AffineFlow, LeakyFlow};
    use vocabflow::linalg::Mat;
    use vocabflow::vocab::{apply_word, vocabulary};

    // Words evaluate in f32.
    for w in vocabulary(2) {
        let y: Vec<f32> = apply_word(&w, &[0.5f32, -0.25]);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    // Affine and leaky flows in f32 against their f64 counterparts.
    let a32 = Mat::<f32>::from_rows(&[vec![0.0, -0.5], vec![0.5, 0.0]]).unwrap();
    let f32flow = AffineFlow::new(a32, vec![0.1, 0.0], 1.0).unwrap();
    let a64 = Mat::<f64>::from_rows(&[vec![0.0, -0.5], vec![0.5, 0.0]]).unwrap();
    let f64flow = AffineFlow::new(a64, vec![0.1, 0.0], 1.0).unwrap();
    let y32 = f32flow.eval(&[0.3f32, -0.7]);
    let y64 = f64flow.eval(&[0.3f64, -0.7]);
    for (a, b) in y32.iter().zip(&y64) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }

    let l32 = LeakyFlow::new(vec![0.2f32], vec![-0.1], 1.0).unwrap();
    assert!((l32.eval(&[-1.0f32])[0] - (-(0.2f32).exp())).abs() < 1e-6);
}

#[test]
fn empty_composition_is_identity_target() {
    let spec = parse_target("kind = \"composition\"\ndim = 2\n").unwrap();
    let target = spec.to_target_map().unwrap();
    assert_eq!(target.eval(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
}

#[test]
fn dense_three_dimensional_affine_compiles_exactly() {
    use rand::prelude::*;
    use vocabflow::flows::{AffineFlow, Flow};
    use vocabflow::linalg::Mat;
    use vocabflow::num::dist2;
    use vocabflow::compile::compile_flow;

    // Dense generators with a moderate norm keep the realized matrix close
    // enough to the identity that the elementary factorization applies; this
    // exercises the multi-column shear ordering.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
    let omega = BoxDomain::uniform(3, -1.0, 1.0).unwrap();
    let opts = CompileOptions::default();
    for _ in 0..5 {
        let mut a = Mat::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = rng.gen_range(-0.4..0.4);
            }
        }
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let flow = Flow::Affine(AffineFlow::new(a, b, 1.0).unwrap());
        let (sentence, stats) = compile_flow(&flow, 0.05, &omega, &opts).unwrap();
        assert!(stats.exact_path, "expected the factorization path");
        let probe = omega.probe_points(3);
        let worst = probe
            .iter()
            .map(|x| dist2(&sentence.apply(x).unwrap(), &flow.eval(x)))
            .fold(0.0, f64::max);
        assert!(worst <= 0.05, "measured {worst}");
    }
}

#[test]
fn four_dimensional_leaky_affine_composition_compiles() {
    use vocabflow::flows::{AffineFlow, Flow, LeakyFlow};
    use vocabflow::linalg::Mat;

    let d = 4;
    let omega = BoxDomain::uniform(d, -1.0, 1.0).unwrap();
    let mut a = Mat::zeros(d, d);
    a[(0, 1)] = 0.3;
    a[(2, 3)] = -0.4;
    a[(1, 1)] = 0.2;
    let flows = vec![
        Flow::Affine(AffineFlow::new(a, vec![0.1, 0.0, -0.2, 0.0], 1.0).unwrap()),
        Flow::Leaky(
            LeakyFlow::new(vec![0.2, 0.0, -0.3, 0.1], vec![0.0, 0.4, 0.0, -0.1], 1.0).unwrap(),
        ),
    ];
    let (sentence, report) =
        compile_flow_sequence(&flows, 0.1, &omega, &CompileOptions::default(), None).unwrap();
    assert!(report.measured_sup_error <= 0.1);
    assert!(!sentence.is_empty());
}

#[test]
fn lipschitz_overflow_reports_resource_error() {
    use vocabflow::flows::{Flow, LeakyFlow};
    use vocabflow::Error;

    // A few hundred strongly expanding flows overflow the downstream
    // Lipschitz product long before any words are emitted.
    let boom = Flow::Leaky(LeakyFlow::new(vec![400.0, 400.0], vec![400.0, 400.0], 1.0).unwrap());
    let flows = vec![boom.clone(), boom.clone(), boom];
    let omega = BoxDomain::uniform(2, -1.0, 1.0).unwrap();
    match compile_flow_sequence(&flows, 0.1, &omega, &CompileOptions::default(), None) {
        Err(Error::ResourceExhausted(_)) => {}
        other => panic!("expected resource error, got {other:?}"),
    }
}

#[test]
fn single_precision_compile_end_to_end() {
    use vocabflow::flows::{AffineFlow, Flow, LeakyFlow};
    use vocabflow::linalg::Mat;
    use vocabflow::num::dist2;
    use vocabflow::compile::compile_flow;

    let omega = BoxDomain::<f32>::uniform(2, -1.0, 1.0).unwrap();
    let opts = CompileOptions::default();
    let flows = [
        Flow::Affine(
            AffineFlow::new(
                Mat::<f32>::from_rows(&[vec![0.1, 0.3], vec![-0.2, 0.0]]).unwrap(),
                vec![0.4, -0.1],
                1.0,
            )
            .unwrap(),
        ),
        Flow::Leaky(LeakyFlow::new(vec![0.3f32, -0.2], vec![0.0, 0.25], 1.0).unwrap()),
    ];
    for flow in &flows {
        let (sentence, _) = compile_flow(flow, 0.05f32, &omega, &opts).unwrap();
        let probe = omega.probe_points(opts.seed);
        let worst = probe
            .iter()
            .map(|x| dist2(&sentence.apply(x).unwrap(), &flow.eval(x)))
            .fold(0.0f32, f32::max);
        assert!(worst <= 0.05, "f32 compile measured {worst}");
    }
}
