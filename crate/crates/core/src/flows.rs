//! The two intermediate-representation flow families: affine flows
//! (`x' = Ax + b`) and leaky-ReLU flows (`x' = Σ_{α,β}(x)`), with exact
//! evaluation, composition, and the matrix-logarithm special forms used to
//! certify affine maps as flows.
//!
//! Affine flows are stored in generator form `(A, b, τ)`; the realized map
//! `x ↦ e^{Aτ}x + c` is obtained from one augmented matrix exponential, so no
//! general real-matrix-logarithm routine is ever needed.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::num::Scalar;

/// Flow map of `x' = Ax + b` for time `τ ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFlow<F> {
    a: Mat<F>,
    b: Vec<F>,
    tau: F,
}

/// The exact affine map `x ↦ w·x + c` realized by an affine flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactAffine<F> {
    pub w: Mat<F>,
    pub c: Vec<F>,
}

impl<F: Scalar> ExactAffine<F> {
    pub fn identity(d: usize) -> Self {
        ExactAffine { w: Mat::identity(d), c: vec![F::zero(); d] }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn apply(&self, x: &[F]) -> Vec<F> {
        let mut y = self.w.mul_vec(x);
        for (yi, &ci) in y.iter_mut().zip(&self.c) {
            *yi = *yi + ci;
        }
        y
    }
}

impl<F: Scalar> AffineFlow<F> {
    /// Creates a flow from generator matrix, offset, and nonnegative time.
    pub fn new(a: Mat<F>, b: Vec<F>, tau: F) -> Result<Self> {
        if !a.is_square() || a.rows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.rows(), found: b.len() });
        }
        if tau < F::zero() || !tau.is_finite() {
            return Err(Error::InvalidInput(format!("flow time must be nonnegative, got {tau}")));
        }
        Ok(AffineFlow { a, b, tau })
    }

    /// Pure translation by `v` (zero generator matrix, unit time).
    pub fn translation(v: Vec<F>) -> Self {
        let d = v.len();
        AffineFlow { a: Mat::zeros(d, d), b: v, tau: F::one() }
    }

    /// Flow with the given generator and unit time whose realized map is
    /// `x ↦ e^{A}x + c` for a *prescribed* realized offset `c`. The generator
    /// offset solving `∫₀¹ e^{A s} ds · b = c` is computed by a linear solve.
    pub fn from_generator_and_offset(a: Mat<F>, c: Vec<F>) -> Result<Self> {
        let d = a.rows();
        if d != c.len() {
            return Err(Error::DimensionMismatch { expected: d, found: c.len() });
        }
        if c.iter().all(|&v| v == F::zero()) {
            return AffineFlow::new(a, c, F::one());
        }
        // exp([[A, I], [0, 0]]) has ∫₀¹ e^{As} ds in its upper-right block.
        let mut aug = Mat::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                aug[(i, j)] = a[(i, j)];
            }
            aug[(i, d + i)] = F::one();
        }
        let e = aug.expm();
        let mut phi1 = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                phi1[(i, j)] = e[(i, d + j)];
            }
        }
        let b = phi1.solve_vec(&c)?;
        AffineFlow::new(a, b, F::one())
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn generator(&self) -> (&Mat<F>, &[F]) {
        (&self.a, &self.b)
    }

    pub fn tau(&self) -> F {
        self.tau
    }

    // Flow with the same generator, negated, realizing the inverse map.
    pub fn inverse(&self) -> Self {
        AffineFlow {
            a: self.a.scale(-F::one()),
            b: self.b.iter().map(|&v| -v).collect(),
            tau: self.tau,
        }
    }

    /// Realizes the exact affine map via the augmented `(d+1)×(d+1)` block
    /// exponential `exp(τ·[[A, b], [0, 0]])`, which carries the offset
    /// integral `∫₀^τ e^{A(τ−s)} b ds` in its last column.
    pub fn realize(&self) -> ExactAffine<F> {
        let d = self.dim();
        let mut aug = Mat::zeros(d + 1, d + 1);
        for i in 0..d {
            for j in 0..d {
                aug[(i, j)] = self.a[(i, j)] * self.tau;
            }
            aug[(i, d)] = self.b[i] * self.tau;
        }
        let e = aug.expm();
        let mut w = Mat::zeros(d, d);
        let mut c = vec![F::zero(); d];
        for i in 0..d {
            for j in 0..d {
                w[(i, j)] = e[(i, j)];
            }
            c[i] = e[(i, d)];
        }
        ExactAffine { w, c }
    }

    pub fn eval(&self, x: &[F]) -> Vec<F> {
        self.realize().apply(x)
    }

    /// Upper bound on the Lipschitz constant of the realized map
    /// (Frobenius norm dominates the spectral norm).
    pub fn lipschitz(&self) -> F {
        self.realize().w.norm_fro()
    }
}

/// Evaluates an affine flow at a point.
pub fn eval_affine_flow<F: Scalar>(f: &AffineFlow<F>, x: &[F]) -> Vec<F> {
    f.eval(x)
}

/// Flow map of the generalized leaky-ReLU field `x' = Σ_{α,β}(x)` for time
/// `τ ≥ 0`: coordinate `i` scales by `e^{τ α_i}` on the negative half-line
/// and by `e^{τ β_i}` on the nonnegative one.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakyFlow<F> {
    alpha: Vec<F>,
    beta: Vec<F>,
    tau: F,
}

impl<F: Scalar> LeakyFlow<F> {
    pub fn new(alpha: Vec<F>, beta: Vec<F>, tau: F) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::DimensionMismatch { expected: alpha.len(), found: beta.len() });
        }
        if tau < F::zero() || !tau.is_finite() {
            return Err(Error::InvalidInput(format!("flow time must be nonnegative, got {tau}")));
        }
        Ok(LeakyFlow { alpha, beta, tau })
    }

    /// Flow with unit time realizing the given strictly positive slopes.
    pub fn from_slopes(neg: &[F], pos: &[F]) -> Result<Self> {
        if neg.iter().chain(pos).any(|&s| s <= F::zero()) {
            return Err(Error::NotAFlow("leaky slopes must be strictly positive".into()));
        }
        LeakyFlow::new(
            neg.iter().map(|&s| s.ln()).collect(),
            pos.iter().map(|&s| s.ln()).collect(),
            F::one(),
        )
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn log_slopes(&self) -> (&[F], &[F]) {
        (&self.alpha, &self.beta)
    }

    pub fn tau(&self) -> F {
        self.tau
    }

    /// Realized slopes `(e^{τα_i}, e^{τβ_i})`, strictly positive by form.
    pub fn realized_slopes(&self) -> (Vec<F>, Vec<F>) {
        (
            self.alpha.iter().map(|&a| (a * self.tau).exp()).collect(),
            self.beta.iter().map(|&b| (b * self.tau).exp()).collect(),
        )
    }

    pub fn inverse(&self) -> Self {
        LeakyFlow {
            alpha: self.alpha.iter().map(|&v| -v).collect(),
            beta: self.beta.iter().map(|&v| -v).collect(),
            tau: self.tau,
        }
    }

    pub fn eval(&self, x: &[F]) -> Vec<F> {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let rate = if xi < F::zero() { self.alpha[i] } else { self.beta[i] };
                xi * (rate * self.tau).exp()
            })
            .collect()
    }

    /// Maximum realized slope.
    pub fn lipschitz(&self) -> F {
        let (neg, pos) = self.realized_slopes();
        neg.into_iter().chain(pos).fold(F::zero(), F::max)
    }
}

/// Evaluates a leaky-ReLU flow at a point.
pub fn eval_leaky_flow<F: Scalar>(f: &LeakyFlow<F>, x: &[F]) -> Vec<F> {
    f.eval(x)
}

/// A flow in `H1 ∪ H2`.
#[derive(Debug, Clone, PartialEq)]
pub enum Flow<F> {
    Affine(AffineFlow<F>),
    Leaky(LeakyFlow<F>),
}

impl<F: Scalar> Flow<F> {
    pub fn dim(&self) -> usize {
        match self {
            Flow::Affine(f) => f.dim(),
            Flow::Leaky(f) => f.dim(),
        }
    }

    pub fn eval(&self, x: &[F]) -> Vec<F> {
        match self {
            Flow::Affine(f) => f.eval(x),
            Flow::Leaky(f) => f.eval(x),
        }
    }

    pub fn lipschitz(&self) -> F {
        match self {
            Flow::Affine(f) => f.lipschitz(),
            Flow::Leaky(f) => f.lipschitz(),
        }
    }
}

/// Generator of the upper-triangular map `U = [[λ, w], [0, I]]`:
/// top-left `ln λ`, top row `(ln λ)/(λ−1)·w` (just `w` when `λ = 1`), zeros
/// elsewhere, so that `exp(result) = U`. The coefficient is evaluated through
/// `ln_1p` to stay accurate near `λ = 1`.
pub fn triangular_log<F: Scalar>(lambda: F, w: &[F]) -> Result<Mat<F>> {
    if !(lambda > F::zero()) {
        return Err(Error::NotAFlow(format!(
            "triangular form requires a positive pivot, got {lambda}"
        )));
    }
    let d = w.len() + 1;
    let u = lambda - F::one();
    let log_lambda = u.ln_1p();
    let coeff = if u == F::zero() { F::one() } else { log_lambda / u };
    let mut g = Mat::zeros(d, d);
    g[(0, 0)] = log_lambda;
    for (k, &wk) in w.iter().enumerate() {
        g[(0, k + 1)] = coeff * wk;
    }
    Ok(g)
}

/// Conjugates a generator: returns `Q A Q⁻¹`, so that
/// `exp(QAQ⁻¹) = Q e^A Q⁻¹`. Rejects badly conditioned `Q`.
pub fn conjugate_generator<F: Scalar>(a: &Mat<F>, q: &Mat<F>) -> Result<Mat<F>> {
    if !q.is_square() || q.rows() != a.rows() {
        return Err(Error::DimensionMismatch { expected: a.rows(), found: q.rows() });
    }
    let q_inv = q
        .inverse()
        .map_err(|_| Error::SingularMatrix("conjugation matrix is singular".into()))?;
    let cond = q.norm_1() * q_inv.norm_1();
    if cond > F::c(1e12) {
        return Err(Error::SingularMatrix(format!(
            "conjugation matrix condition number {cond} exceeds 1e12"
        )));
    }
    Ok(q.mul(a).mul(&q_inv))
}

/// Exact affine map of applying `f1` then `f2`.
pub fn compose_affine<F: Scalar>(
    f1: &AffineFlow<F>,
    f2: &AffineFlow<F>,
) -> Result<ExactAffine<F>> {
    if f1.dim() != f2.dim() {
        return Err(Error::DimensionMismatch { expected: f1.dim(), found: f2.dim() });
    }
    let m1 = f1.realize();
    let m2 = f2.realize();
    let w = m2.w.mul(&m1.w);
    let c = m2.apply(&m1.c);
    Ok(ExactAffine { w, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::dist2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(d: usize, scale: f64, rng: &mut impl Rng) -> Mat<f64> {
        let mut m = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = rng.gen_range(-scale..scale);
            }
        }
        m
    }

    #[test]
    fn pure_translation() {
        let f = AffineFlow::new(Mat::zeros(2, 2), vec![1.0, 0.0], 2.0).unwrap();
        assert_eq!(f.eval(&[0.0, 0.0]), vec![2.0, 0.0]);
    }

    #[test]
    fn diagonal_exponential() {
        let mut a = Mat::zeros(2, 2);
        a[(0, 0)] = 1.0;
        let f = AffineFlow::new(a, vec![0.0, 0.0], 1.0).unwrap();
        let y = f.eval(&[1.0, 5.0]);
        assert!((y[0] - std::f64::consts::E).abs() < 1e-14);
        assert_eq!(y[1], 5.0);
    }

    #[test]
    fn rotation_flow() {
        let th = std::f64::consts::FRAC_PI_6;
        let a = Mat::from_rows(&[vec![0.0, -th], vec![th, 0.0]]).unwrap();
        let f = AffineFlow::new(a, vec![0.0, 0.0], 1.0).unwrap();
        let y = f.eval(&[1.0, 0.0]);
        assert!((y[0] - 0.8660254037844387).abs() < 1e-12);
        assert!((y[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_time_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_mat(3, 2.0, &mut rng);
        let f = AffineFlow::new(a, vec![0.3, -0.1, 2.0], 0.0).unwrap();
        let x = [0.4, -1.0, 2.5];
        assert!(dist2(&f.eval(&x), &x) <= 1e-15);
    }

    #[test]
    fn negative_time_is_rejected() {
        assert!(AffineFlow::new(Mat::<f64>::zeros(1, 1), vec![0.0], -1.0).is_err());
        assert!(LeakyFlow::new(vec![0.0f64], vec![0.0], -0.5).is_err());
    }

    #[test]
    fn flow_semigroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = rand_mat(3, 1.0, &mut rng);
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (t1, t2) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let f1 = AffineFlow::new(a.clone(), b.clone(), t1).unwrap();
            let f2 = AffineFlow::new(a.clone(), b.clone(), t2).unwrap();
            let f12 = AffineFlow::new(a.clone(), b.clone(), t1 + t2).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let via = f2.eval(&f1.eval(&x));
            let direct = f12.eval(&x);
            assert!(dist2(&via, &direct) <= 1e-10);
        }
    }

    #[test]
    fn leaky_identity_and_slopes() {
        let f = LeakyFlow::new(vec![0.0, 0.0], vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(f.eval(&[-3.0, 4.0]), vec![-3.0, 4.0]);

        let g = LeakyFlow::new(vec![2f64.ln()], vec![0.0], 1.0).unwrap();
        assert_eq!(g.eval(&[-1.0]), vec![-2.0]);
        assert_eq!(g.eval(&[1.0]), vec![1.0]);
    }

    #[test]
    fn leaky_preserves_signs_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let d = 3;
            let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let beta: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f = LeakyFlow::new(alpha, beta, rng.gen_range(0.0..2.0)).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let y = f.eval(&x);
            for i in 0..d {
                assert_eq!(y[i] < 0.0, x[i] < 0.0, "sign must be preserved");
                // strict monotonicity per coordinate
                let mut xp = x.clone();
                xp[i] += 1e-3;
                let yp = f.eval(&xp);
                assert!(yp[i] > y[i]);
            }
        }
    }

    #[test]
    fn triangular_log_unit_pivot_is_shift() {
        let g = triangular_log(1.0f64, &[3.0]).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(0, 1)], 3.0);
        assert_eq!(g[(1, 0)], 0.0);
        assert_eq!(g[(1, 1)], 0.0);
    }

    #[test]
    fn triangular_log_pivot_two() {
        let g = triangular_log(2.0f64, &[3.0]).unwrap();
        assert!((g[(0, 0)] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g[(0, 1)] - 3.0 * std::f64::consts::LN_2).abs() < 1e-13);
    }

    #[test]
    fn triangular_log_domain() {
        assert!(triangular_log(0.5, &[1.0, -2.0]).is_ok());
        assert!(matches!(triangular_log(0.0, &[1.0]), Err(Error::NotAFlow(_))));
        assert!(matches!(triangular_log(-1.0, &[1.0]), Err(Error::NotAFlow(_))));
    }

    #[test]
    fn triangular_log_exp_reproduces_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &lambda in &[0.1, 0.5, 1.0, 1.0 + 1e-9, 2.0, 10.0] {
            for d in 2..=8 {
                let w: Vec<f64> = (0..d - 1).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let g = triangular_log(lambda, &w).unwrap();
                let e = g.expm();
                assert!((e[(0, 0)] - lambda).abs() <= 1e-10);
                for (k, &wk) in w.iter().enumerate() {
                    assert!((e[(0, k + 1)] - wk).abs() <= 1e-10);
                }
                for i in 1..d {
                    for j in 0..d {
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((e[(i, j)] - want).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conjugation_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = rand_mat(3, 2.0, &mut rng);
        let got = conjugate_generator(&a, &Mat::identity(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((got[(i, j)] - a[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn conjugation_by_permutation_matches_permuted_u() {
        let g = triangular_log(2.0f64, &[3.0]).unwrap();
        // Swap coordinates 1 and 2.
        let q = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let conj = conjugate_generator(&g, &q).unwrap();
        let e = conj.expm();
        // Permuted U = [[1, 0], [3, 2]].
        assert!((e[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((e[(1, 0)] - 3.0).abs() < 1e-12);
        assert!((e[(1, 1)] - 2.0).abs() < 1e-12);
        assert!(e[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn conjugation_by_diagonal_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = rand_mat(2, 1.0, &mut rng);
        let q = Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]).unwrap();
        let conj = conjugate_generator(&a, &q).unwrap();
        let lhs = conj.expm();
        let rhs = q.mul(&a.expm()).mul(&q.inverse().unwrap());
        for i in 0..2 {
            for j in 0..2 {
                assert!((lhs[(i, j)] - rhs[(i, j)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn conjugation_rejects_singular_q() {
        let a = Mat::<f64>::identity(2);
        let q = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(conjugate_generator(&a, &q).is_err());
    }

    #[test]
    fn compose_identity_and_translations() {
        let id = AffineFlow::new(Mat::<f64>::zeros(2, 2), vec![0.0, 0.0], 0.0).unwrap();
        let t1 = AffineFlow::translation(vec![1.0, 2.0]);
        let comp = compose_affine(&id, &t1).unwrap();
        assert_eq!(comp.apply(&[0.0, 0.0]), vec![1.0, 2.0]);

        let t2 = AffineFlow::translation(vec![-0.5, 3.0]);
        let comp = compose_affine(&t1, &t2).unwrap();
        assert_eq!(comp.apply(&[0.0, 0.0]), vec![0.5, 5.0]);
    }

    #[test]
    fn compose_matches_pointwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let f1 = AffineFlow::new(
                rand_mat(3, 1.0, &mut rng),
                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                rng.gen_range(0.0..1.5),
            )
            .unwrap();
            let f2 = AffineFlow::new(
                rand_mat(3, 1.0, &mut rng),
                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                rng.gen_range(0.0..1.5),
            )
            .unwrap();
            let comp = compose_affine(&f1, &f2).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let via = f2.eval(&f1.eval(&x));
                assert!(dist2(&comp.apply(&x), &via) <= 1e-12);
            }
        }
    }

    #[test]
    fn prescribed_offset_flow_realizes_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let a = rand_mat(3, 1.5, &mut rng);
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f = AffineFlow::from_generator_and_offset(a.clone(), c.clone()).unwrap();
            let m = f.realize();
            let e = a.expm();
            for i in 0..3 {
                assert!((m.c[i] - c[i]).abs() <= 1e-11);
                for j in 0..3 {
                    assert!((m.w[(i, j)] - e[(i, j)]).abs() <= 1e-11);
                }
            }
        }
    }

    #[test]
    fn leaky_flow_matches_oracle_on_many_points() {
        use crate::harness::rk4_flow;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let d = 2;
        let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let beta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let tau = rng.gen_range(0.1..2.0);
        let flow = LeakyFlow::new(alpha.clone(), beta.clone(), tau).unwrap();
        let field = |x: &[f64], _t: f64| -> Vec<f64> {
            x.iter()
                .enumerate()
                .map(|(i, &xi)| if xi < 0.0 { alpha[i] * xi } else { beta[i] * xi })
                .collect()
        };
        for _ in 0..1000 {
            let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let want = flow.eval(&x0);
            let got = rk4_flow(field, tau, &x0, 1e-9).unwrap();
            assert!(dist2(&want, &got) <= 1e-6);
        }
    }

    #[test]
    fn affine_flow_matches_oracle_on_random_instances() {
        use crate::harness::rk4_flow;
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..40 {
            let d = rng.gen_range(1..4);
            let a = rand_mat(d, 1.0, &mut rng);
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
            .unwrap();
            assert!(dist2(&want, &got) <= 1e-8);
        }
    }

    #[test]
    fn inverse_flow_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let f = AffineFlow::new(
            rand_mat(2, 1.0, &mut rng),
            vec![0.5, -0.25],
            0.8,
        )
        .unwrap();
        let x = [0.7, -0.3];
        let y = f.inverse().eval(&f.eval(&x));
        assert!(dist2(&x, &y) <= 1e-12);

        let g = LeakyFlow::new(vec![0.4, -0.2], vec![0.1, 0.9], 1.3).unwrap();
        let z = g.inverse().eval(&g.eval(&x));
        assert!(dist2(&x, &z) <= 1e-13);
    }
}
