//! Oracle-coherence self checks behind the `check` subcommand: every closed
//! form is compared against the independent Runge-Kutta oracle, the six-flow
//! step decomposition against direct step evaluation, and the Diophantine
//! time expansion against its contract, all from one seed.

use crate::compile::{decompose_step, StepT};
use crate::flows::{AffineFlow, LeakyFlow};
use crate::harness::rk4_flow;
use crate::kron::kronecker_pq;
use crate::linalg::Mat;
use crate::num::dist2;
use crate::vocab::{apply_word, inverse_word, vocabulary};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Result of one self check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub samples: u64,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn outcome(name: &'static str, samples: u64, max_error: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome { name, samples, max_error, tolerance, pass: max_error <= tolerance }
}

fn words_vs_oracle(samples: u32, seed: u64) -> CheckOutcome {
    let dims = [1usize, 2, 3, 5];
    let cases: Vec<(usize, u64)> = dims
        .iter()
        .flat_map(|&d| (0..samples.max(1)).map(move |k| (d, k as u64)))
        .collect();
    let max_error = cases
        .par_iter()
        .map(|&(d, k)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (d as u64) << 32 ^ k);
            let vocab = vocabulary(d);
            let w = vocab[rng.gen_range(0..vocab.len())];
            let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let want = apply_word(&w, &x0);
            let got = rk4_flow(
                |x: &[f64], _| {
                    let mut f = vec![0.0; d];
                    w.basis.field(x, &mut f);
                    f
                },
                w.signed_time::<f64>(),
                &x0,
                1e-9,
            )
            .expect("oracle must converge");
            dist2(&want, &got)
        })
        .reduce(|| 0.0, f64::max);
    outcome("words_vs_rk4", cases.len() as u64, max_error, 1e-6)
}

fn word_inverses(samples: u32, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let mut max_error = 0.0f64;
    let n = samples.max(1) * 4;
    for _ in 0..n {
        let d = rng.gen_range(1..6);
        let vocab = vocabulary(d);
        let w = vocab[rng.gen_range(0..vocab.len())];
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let back = apply_word(&inverse_word(&w), &apply_word(&w, &x));
        max_error = max_error.max(dist2(&x, &back));
    }
    outcome("word_inverse_roundtrip", n as u64, max_error, 1e-12)
}

fn affine_flows_vs_oracle(samples: u32, seed: u64) -> CheckOutcome {
    let cases: Vec<u64> = (0..samples.max(1) as u64).collect();
    let max_error = cases
        .par_iter()
        .map(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x22 ^ k);
            let d = rng.gen_range(1..5);
            let mut a = Mat::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    a[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tau = rng.gen_range(0.0..2.0);
            let flow = AffineFlow::new(a.clone(), b.clone(), tau).unwrap();
            let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let want = flow.eval(&x0);
            let got = rk4_flow(
                |x: &[f64], _| {
                    let mut f = a.mul_vec(x);
                    for (fi, &bi) in f.iter_mut().zip(&b) {
                        *fi += bi;
                    }
                    f
                },
                tau,
                &x0,
                1e-10,
            )
            .expect("oracle must converge");
            dist2(&want, &got)
        })
        .reduce(|| 0.0, f64::max);
    outcome("affine_flow_vs_rk4", cases.len() as u64, max_error, 1e-8)
}

fn leaky_flows_vs_oracle(samples: u32, seed: u64) -> CheckOutcome {
    let cases: Vec<u64> = (0..samples.max(1) as u64).collect();
    let max_error = cases
        .par_iter()
        .map(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x33 ^ k);
            let d = rng.gen_range(1..5);
            let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let beta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let tau = rng.gen_range(0.0..2.0);
            let flow = LeakyFlow::new(alpha.clone(), beta.clone(), tau).unwrap();
            let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let want = flow.eval(&x0);
            let got = rk4_flow(
                |x: &[f64], _| {
                    x.iter()
                        .enumerate()
                        .map(|(i, &xi)| if xi < 0.0 { alpha[i] * xi } else { beta[i] * xi })
                        .collect()
                },
                tau,
                &x0,
                1e-9,
            )
            .expect("oracle must converge");
            dist2(&want, &got)
        })
        .reduce(|| 0.0, f64::max);
    outcome("leaky_flow_vs_rk4", cases.len() as u64, max_error, 1e-6)
}

/// Random feasible Euler step covering all three decomposition cases and
/// both pivot signs.
pub fn random_feasible_step(d: usize, rng: &mut ChaCha8Rng) -> StepT<f64> {
    let a_neg: f64 = rng.gen_range(0.2..0.9);
    let target = rng.gen_range(0..d);
    let case = rng.gen_range(0..if d == 1 { 2 } else { 3 });
    let mut w = vec![0.0f64; d];
    match case {
        0 => {}
        1 => w[target] = rng.gen_range(0.2..2.0) * if rng.gen_bool(0.5) { -1.0 } else { 1.0 },
        _ => {
            for wi in w.iter_mut() {
                if rng.gen_bool(0.7) {
                    *wi = rng.gen_range(-2.0..2.0);
                }
            }
            let pivot = (0..d).find(|&l| l != target).unwrap();
            if w[pivot].abs() < 0.1 {
                w[pivot] = if rng.gen_bool(0.5) { -0.7 } else { 0.7 };
            }
        }
    }
    let m = (1.0 / a_neg).max(a_neg);
    let cap = if w[target].abs() > 1e-9 { 0.9 / (m * w[target].abs()) } else { 1.0 };
    let a = rng.gen_range(0.05..1.0) * cap * if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
    StepT { target, a, w, b: rng.gen_range(-1.0..1.0), a_neg, time_index: 0 }
}

fn step_decomposition(samples: u32, seed: u64) -> CheckOutcome {
    let cases: Vec<u64> = (0..samples.max(1) as u64).collect();
    let max_error = cases
        .par_iter()
        .map(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x44 ^ k);
            let d = rng.gen_range(1..5);
            let step = random_feasible_step(d, &mut rng);
            let flows = decompose_step(&step).expect("feasible step must decompose");
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let mut y = x.clone();
                for f in &flows {
                    y = f.eval(&y);
                }
                worst = worst.max(dist2(&y, &step.apply(&x)));
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    outcome("step_decomposition_exactness", cases.len() as u64, max_error, 1e-9)
}

fn kronecker_contract(samples: u32, seed: u64) -> CheckOutcome {
    let cases: Vec<u64> = (0..samples.max(1) as u64).collect();
    // Reported value is the worst |residual|/eps ratio; the contract
    // requires it to stay strictly below 1.
    let max_ratio = cases
        .par_iter()
        .map(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55 ^ k);
            let t: f64 = rng.gen_range(1e-3..10.0);
            let mut worst = 0.0f64;
            for eps in [1e-2, 1e-4, 1e-6] {
                let pair = kronecker_pq(t, eps).expect("search must succeed");
                worst = worst.max(pair.residual.abs() / eps);
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    outcome("kronecker_contract", cases.len() as u64 * 3, max_ratio, 1.0)
}

/// Runs the whole oracle-coherence suite with `samples` draws per check.
pub fn run_self_checks(samples: u32, seed: u64) -> Vec<CheckOutcome> {
    vec![
        words_vs_oracle(samples, seed),
        word_inverses(samples, seed),
        affine_flows_vs_oracle(samples, seed),
        leaky_flows_vs_oracle(samples, seed),
        step_decomposition(samples, seed),
        kronecker_contract(samples, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let outcomes = run_self_checks(20, 42);
        assert_eq!(outcomes.len(), 6);
        for o in &outcomes {
            assert!(o.pass, "{} failed: {} > {}", o.name, o.max_error, o.tolerance);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = run_self_checks(10, 7);
        let b = run_self_checks(10, 7);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.max_error.to_bits(), y.max_error.to_bits());
        }
    }
}
