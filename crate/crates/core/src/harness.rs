//! Ground-truth oracles and error measurement: compact box domains with
//! deterministic point sets, a Runge-Kutta integration oracle kept fully
//! independent of the closed-form evaluators, evaluation targets, and
//! sup-/L^p-error reports.

use crate::compile::NeuralOdeField;
use crate::error::{Error, Result};
use crate::flows::{AffineFlow, ExactAffine, LeakyFlow};
use crate::num::{dist2, Scalar};
use crate::vocab::Sentence;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Compact axis-aligned box, nondegenerate in every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain<F> {
    lower: Vec<F>,
    upper: Vec<F>,
}

impl<F: Scalar> BoxDomain<F> {
    pub fn new(lower: Vec<F>, upper: Vec<F>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(&l, &u)| !(l < u)) {
            return Err(Error::InvalidInput("box must satisfy lower < upper per axis".into()));
        }
        Ok(BoxDomain { lower, upper })
    }

    /// Cube `[lo, hi]^d`.
    pub fn uniform(d: usize, lo: F, hi: F) -> Result<Self> {
        BoxDomain::new(vec![lo; d], vec![hi; d])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[F] {
        &self.lower
    }

    pub fn upper(&self) -> &[F] {
        &self.upper
    }

    pub fn volume(&self) -> F {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(F::one(), |v, (&l, &u)| v * (u - l))
    }

    pub fn diameter(&self) -> F {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(F::zero(), |s, (&l, &u)| s + (u - l) * (u - l))
            .sqrt()
    }

    /// Largest point norm over the box (attained at a corner).
    pub fn sup_norm(&self) -> F {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(F::zero(), |s, (&l, &u)| {
                let m = l.abs().max(u.abs());
                s + m * m
            })
            .sqrt()
    }

    pub fn contains(&self, x: &[F]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| v >= l && v <= u)
    }

    /// Box grown by `margin` on every side.
    pub fn inflate(&self, margin: F) -> BoxDomain<F> {
        BoxDomain {
            lower: self.lower.iter().map(|&l| l - margin).collect(),
            upper: self.upper.iter().map(|&u| u + margin).collect(),
        }
    }

    /// The `2^min(d, cap)` corner points; when `d > cap` only the first
    /// `cap` axes vary and the rest sit at the lower bound.
    pub fn corners(&self, cap: u32) -> Vec<Vec<F>> {
        let d = self.dim();
        let vary = d.min(cap as usize);
        let mut out = Vec::with_capacity(1 << vary);
        for mask in 0u64..(1 << vary) {
            let mut p = self.lower.clone();
            for (axis, v) in p.iter_mut().enumerate().take(vary) {
                if mask >> axis & 1 == 1 {
                    *v = self.upper[axis];
                }
            }
            out.push(p);
        }
        out
    }

    /// Full lattice with per-axis resolution chosen so the total point count
    /// stays near `per_axis^min(d,4)`: `per_axis` points per axis for d <= 4,
    /// a reduced resolution for larger d.
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<F>> {
        let d = self.dim();
        let per_axis = per_axis.max(2);
        let res = if d <= 4 {
            per_axis
        } else {
            let budget = (per_axis as f64).powi(4);
            (budget.powf(1.0 / d as f64).floor() as usize).max(2)
        };
        let mut points = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            let p: Vec<F> = (0..d)
                .map(|axis| {
                    let t = F::from_usize(idx[axis]).unwrap() / F::from_usize(res - 1).unwrap();
                    self.lower[axis] + (self.upper[axis] - self.lower[axis]) * t
                })
                .collect();
            points.push(p);
            let mut axis = 0;
            loop {
                idx[axis] += 1;
                if idx[axis] < res {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
                if axis == d {
                    return points;
                }
            }
        }
    }

    /// Scrambled low-discrepancy sequence: additive recurrence with
    /// plastic-constant step sizes and a seeded per-axis rotation.
    pub fn low_discrepancy(&self, n: usize, seed: u64) -> Vec<Vec<F>> {
        let d = self.dim();
        // Root of x^{d+1} = x + 1.
        let mut phi = 1.5f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
        }
        let alpha: Vec<f64> = (1..=d).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        (0..n)
            .map(|k| {
                (0..d)
                    .map(|j| {
                        let u = (shift[j] + (k as f64 + 1.0) * alpha[j]).fract();
                        self.lower[j] + (self.upper[j] - self.lower[j]) * F::c(u)
                    })
                    .collect()
            })
            .collect()
    }

    /// Uniform random interior points from a seeded generator.
    pub fn random_points(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<F>> {
        (0..n)
            .map(|_| {
                (0..self.dim())
                    .map(|j| {
                        let u: f64 = rng.gen_range(0.0..1.0);
                        self.lower[j] + (self.upper[j] - self.lower[j]) * F::c(u)
                    })
                    .collect()
            })
            .collect()
    }

    /// Probe set used for step selection and flow validation:
    /// 256 low-discrepancy points plus the box corners.
    pub fn probe_points(&self, seed: u64) -> Vec<Vec<F>> {
        let mut pts = self.low_discrepancy(256, seed);
        pts.extend(self.corners(10));
        pts
    }

    /// Validation grid: a `33^min(d,4)`-sized lattice plus 512 random
    /// interior points.
    pub fn validation_points(&self, seed: u64) -> Vec<Vec<F>> {
        let mut pts = self.lattice(33);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
        pts.extend(self.random_points(512, &mut rng));
        pts
    }
}

/// Classical fixed-step RK4 over `[0, tau]` with `n` steps.
fn rk4_fixed<F: Scalar, V>(field: &V, tau: F, x0: &[F], n: u32) -> Vec<F>
where
    V: Fn(&[F], F) -> Vec<F>,
{
    let h = tau / F::from_u32(n).unwrap();
    let half = h / F::c(2.0);
    let sixth = h / F::c(6.0);
    let two = F::c(2.0);
    let mut x = x0.to_vec();
    let mut t = F::zero();
    for _ in 0..n {
        let k1 = field(&x, t);
        let x2: Vec<F> = x.iter().zip(&k1).map(|(&xi, &k)| xi + half * k).collect();
        let k2 = field(&x2, t + half);
        let x3: Vec<F> = x.iter().zip(&k2).map(|(&xi, &k)| xi + half * k).collect();
        let k3 = field(&x3, t + half);
        let x4: Vec<F> = x.iter().zip(&k3).map(|(&xi, &k)| xi + h * k).collect();
        let k4 = field(&x4, t + h);
        for i in 0..x.len() {
            x[i] = x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        t = t + h;
    }
    x
}

/// RK4 with step halving: refines until two successive refinements agree
/// within `tol`. The single independent oracle for every closed form in the
/// crate; deliberately shares no code with the evaluators it checks.
pub fn rk4_flow<F: Scalar, V>(field: V, tau: F, x0: &[F], tol: F) -> Result<Vec<F>>
where
    V: Fn(&[F], F) -> Vec<F>,
{
    if !(tol > F::zero()) {
        return Err(Error::InvalidInput("rk4 tolerance must be positive".into()));
    }
    if tau == F::zero() {
        return Ok(x0.to_vec());
    }
    let mut n: u32 = 8.max(tau.abs().ceil().to_u32().unwrap_or(8).saturating_mul(4));
    let mut coarse = rk4_fixed(&field, tau, x0, n);
    loop {
        n = n.saturating_mul(2);
        if n > 1 << 22 {
            return Err(Error::ResourceExhausted(
                "rk4 step halving did not converge (step underflow)".into(),
            ));
        }
        let fine = rk4_fixed(&field, tau, x0, n);
        if dist2(&coarse, &fine) < tol {
            return Ok(fine);
        }
        coarse = fine;
    }
}

/// What a compiled sentence is measured against.
#[derive(Debug, Clone)]
pub enum TargetMap<F> {
    /// Exact affine map `x -> Wx + c`.
    ExactAffine(ExactAffine<F>),
    Affine(AffineFlow<F>),
    Leaky(LeakyFlow<F>),
    /// Flow map of a neural ODE field, evaluated by piecewise RK4 with the
    /// given absolute tolerance.
    NeuralOde { field: NeuralOdeField<F>, tol: F },
    Composition(Vec<TargetMap<F>>),
}

impl<F: Scalar> TargetMap<F> {
    pub fn dim(&self) -> usize {
        match self {
            TargetMap::ExactAffine(m) => m.dim(),
            TargetMap::Affine(f) => f.dim(),
            TargetMap::Leaky(f) => f.dim(),
            TargetMap::NeuralOde { field, .. } => field.dim(),
            TargetMap::Composition(list) => list.first().map_or(0, |t| t.dim()),
        }
    }

    pub fn eval(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        match self {
            TargetMap::ExactAffine(m) => Ok(m.apply(x)),
            TargetMap::Affine(f) => Ok(f.eval(x)),
            TargetMap::Leaky(f) => Ok(f.eval(x)),
            TargetMap::NeuralOde { field, tol } => field.flow_map(x, *tol),
            TargetMap::Composition(list) => {
                let mut y = x.to_vec();
                for t in list {
                    y = t.eval(&y)?;
                }
                Ok(y)
            }
        }
    }
}

/// Resolution of the measurement grid: a lattice plus seeded random points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub lattice_per_axis: usize,
    pub random: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { lattice_per_axis: 33, random: 512, seed: 42 }
    }
}

impl GridSpec {
    pub fn points<F: Scalar>(&self, omega: &BoxDomain<F>) -> Vec<Vec<F>> {
        let mut pts = omega.lattice(self.lattice_per_axis);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0001);
        pts.extend(omega.random_points(self.random, &mut rng));
        pts
    }
}

/// Measured discrepancy between a target map and a sentence.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub sup_error: f64,
    pub lp_error: Option<f64>,
    pub lp_p: Option<f64>,
    pub argmax: Vec<f64>,
    pub lattice_per_axis: usize,
    pub random_points: usize,
    pub seed: u64,
    pub sentence_len: u64,
}

/// Per-point errors of a sentence against a target over a point set.
/// Evaluation is parallel; the reduction is done sequentially in point
/// order so results do not depend on thread count.
fn pointwise_errors<F: Scalar>(
    target: &TargetMap<F>,
    sentence: &Sentence,
    points: &[Vec<F>],
) -> Result<Vec<F>> {
    points
        .par_iter()
        .map(|x| -> Result<F> {
            let want = target.eval(x)?;
            let got = sentence.apply(x)?;
            Ok(dist2(&want, &got))
        })
        .collect()
}

/// Maximum Euclidean discrepancy over the lattice-plus-random grid.
pub fn sup_error<F: Scalar>(
    target: &TargetMap<F>,
    sentence: &Sentence,
    omega: &BoxDomain<F>,
    grid: &GridSpec,
) -> Result<ErrorReport> {
    if target.dim() != sentence.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: sentence.dim() });
    }
    let points = grid.points(omega);
    let errs = pointwise_errors(target, sentence, &points)?;
    let mut sup = F::zero();
    let mut argmax = 0usize;
    for (i, &e) in errs.iter().enumerate() {
        if e > sup {
            sup = e;
            argmax = i;
        }
    }
    Ok(ErrorReport {
        sup_error: sup.to_f64().unwrap_or(f64::NAN),
        lp_error: None,
        lp_p: None,
        argmax: points[argmax].iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
        lattice_per_axis: grid.lattice_per_axis,
        random_points: grid.random,
        seed: grid.seed,
        sentence_len: sentence.len(),
    })
}

/// Per-point dump `(x, err)` used by the optional report section.
pub fn pointwise_error_dump<F: Scalar>(
    target: &TargetMap<F>,
    sentence: &Sentence,
    omega: &BoxDomain<F>,
    grid: &GridSpec,
) -> Result<Vec<(Vec<F>, F)>> {
    let points = grid.points(omega);
    let errs = pointwise_errors(target, sentence, &points)?;
    Ok(points.into_iter().zip(errs).collect())
}

/// Riemann-sum estimate of the L^p discrepancy on the grid: the mean of
/// `err^p` over all grid points times the box volume, to the power `1/p`.
pub fn lp_error<F: Scalar>(
    target: &TargetMap<F>,
    sentence: &Sentence,
    omega: &BoxDomain<F>,
    p: F,
    grid: &GridSpec,
) -> Result<F> {
    if !(p >= F::one()) || !p.is_finite() {
        return Err(Error::InvalidInput(format!("p must lie in [1, inf), got {p}")));
    }
    if target.dim() != sentence.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: sentence.dim() });
    }
    let points = grid.points(omega);
    let errs = pointwise_errors(target, sentence, &points)?;
    let mean_pow = errs
        .iter()
        .fold(F::zero(), |acc, &e| acc + e.powf(p))
        / F::from_usize(errs.len()).unwrap();
    Ok((mean_pow * omega.volume()).powf(F::one() / p))
}

impl ErrorReport {
    /// `metric,value` CSV body; the optional dump appends `x...,err` rows.
    pub fn to_csv(&self, dump: Option<&[(Vec<f64>, f64)]>) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("sup_error,{}\n", self.sup_error));
        if let (Some(lp), Some(p)) = (self.lp_error, self.lp_p) {
            out.push_str(&format!("lp_error,{lp}\n"));
            out.push_str(&format!("lp_p,{p}\n"));
        }
        for (i, v) in self.argmax.iter().enumerate() {
            out.push_str(&format!("argmax_x{i},{v}\n"));
        }
        out.push_str(&format!("grid_lattice_per_axis,{}\n", self.lattice_per_axis));
        out.push_str(&format!("grid_random_points,{}\n", self.random_points));
        out.push_str(&format!("seed,{}\n", self.seed));
        out.push_str(&format!("sentence_len,{}\n", self.sentence_len));
        if let Some(points) = dump {
            for (x, err) in points {
                for v in x {
                    out.push_str(&format!("{v},"));
                }
                out.push_str(&format!("{err}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::vocab::{apply_word, vocabulary, Word};

    #[test]
    fn box_validation() {
        assert!(BoxDomain::new(vec![0.0], vec![1.0]).is_ok());
        assert!(BoxDomain::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxDomain::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoxDomain::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn grids_are_deterministic_and_inside() {
        let omega = BoxDomain::uniform(3, -1.0, 1.0).unwrap();
        let a = omega.probe_points(7);
        let b = omega.probe_points(7);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| omega.contains(p)));
        assert_eq!(omega.corners(10).len(), 8);
        assert_eq!(omega.lattice(5).len(), 125);
        let v = omega.validation_points(1);
        assert_eq!(v.len(), 33usize.pow(3) + 512);
    }

    #[test]
    fn lattice_resolution_shrinks_in_high_dim() {
        let omega = BoxDomain::uniform(5, 0.0, 1.0).unwrap();
        let n = omega.lattice(33).len();
        assert!(n <= 33usize.pow(4), "lattice too large: {n}");
    }

    #[test]
    fn rk4_zero_field_is_identity() {
        let x = rk4_flow(|_: &[f64], _| vec![0.0, 0.0], 1.0, &[0.3, -0.4], 1e-12).unwrap();
        assert_eq!(x, vec![0.3, -0.4]);
    }

    #[test]
    fn rk4_constant_field_translates() {
        let x = rk4_flow(|_: &[f64], _| vec![1.0, 0.0], 1.0, &[0.0, 0.0], 1e-13).unwrap();
        assert!((x[0] - 1.0).abs() <= 1e-12);
        assert!(x[1].abs() <= 1e-12);
    }

    #[test]
    fn rk4_matches_linear_word_closed_form() {
        // Field E_{12} x against the nilpotent closed form.
        let w = Word::new(
            crate::vocab::Basis::Linear { row: 0, col: 1 },
            crate::vocab::Sign::Pos,
            crate::vocab::Tau::One,
        );
        let x0 = [0.7, -1.3];
        let want = apply_word(&w, &x0);
        let got = rk4_flow(|x: &[f64], _| vec![x[1], 0.0], 1.0, &x0, 1e-12).unwrap();
        assert!(dist2(&want, &got) <= 1e-9);
    }

    #[test]
    fn oracle_agrees_with_all_word_families() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let d = 3;
        for w in vocabulary(d) {
            for _ in 0..3 {
                let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let want = apply_word(&w, &x0);
                let t = w.signed_time::<f64>();
                let got = rk4_flow(
                    |x: &[f64], _| {
                        let mut f = vec![0.0; d];
                        w.basis.field(x, &mut f);
                        f
                    },
                    t,
                    &x0,
                    1e-9,
                )
                .unwrap();
                assert!(dist2(&want, &got) <= 1e-6, "word {w:?} disagrees with oracle");
            }
        }
    }

    #[test]
    fn sup_error_self_comparison_is_zero() {
        let mut s = Sentence::new(2);
        s.push(Word::new(
            crate::vocab::Basis::Translate { axis: 0 },
            crate::vocab::Sign::Pos,
            crate::vocab::Tau::One,
        ))
        .unwrap();
        let target = TargetMap::ExactAffine(ExactAffine {
            w: Mat::identity(2),
            c: vec![1.0, 0.0],
        });
        let omega = BoxDomain::uniform(2, -1.0, 1.0).unwrap();
        let grid = GridSpec { lattice_per_axis: 9, random: 32, seed: 5 };
        let rep = sup_error(&target, &s, &omega, &grid).unwrap();
        assert!(rep.sup_error <= 1e-12);
        assert_eq!(rep.sentence_len, 1);
    }

    #[test]
    fn identity_sentence_vs_identity_target() {
        let s = Sentence::new(2);
        let target = TargetMap::ExactAffine(ExactAffine::identity(2));
        let omega = BoxDomain::uniform(2, -1.0, 1.0).unwrap();
        let rep = sup_error(&target, &s, &omega, &GridSpec::default()).unwrap();
        assert_eq!(rep.sup_error, 0.0);
    }

    #[test]
    fn lp_of_constant_discrepancy() {
        // Identity sentence against a constant translation: the pointwise
        // error is exactly |c| everywhere, so L^p = |c| * vol^{1/p}.
        let s = Sentence::new(2);
        let target = TargetMap::ExactAffine(ExactAffine {
            w: Mat::identity(2),
            c: vec![0.3, 0.4],
        });
        let omega = BoxDomain::uniform(2, -1.0, 1.0).unwrap();
        let grid = GridSpec { lattice_per_axis: 17, random: 64, seed: 3 };
        for p in [1.0, 2.0, 4.0] {
            let lp = lp_error(&target, &s, &omega, p, &grid).unwrap();
            let want = 0.5 * 4.0f64.powf(1.0 / p);
            assert!((lp - want).abs() <= 1e-10, "p={p}: {lp} vs {want}");
        }
    }

    #[test]
    fn lp_bounded_by_sup_times_volume_root() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let omega = BoxDomain::<f64>::uniform(2, -1.0, 1.0).unwrap();
        let grid = GridSpec { lattice_per_axis: 9, random: 64, seed: 11 };
        for _ in 0..5 {
            let mut s = Sentence::new(2);
            let vocab = vocabulary(2);
            for _ in 0..4 {
                s.push(vocab[rng.gen_range(0..vocab.len())]).unwrap();
            }
            let target = TargetMap::ExactAffine(ExactAffine::identity(2));
            let rep = sup_error(&target, &s, &omega, &grid).unwrap();
            for p in [1.0, 2.0] {
                let lp = lp_error(&target, &s, &omega, p, &grid).unwrap();
                let bound = rep.sup_error * omega.volume().powf(1.0 / p);
                assert!(lp <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = Sentence::new(3);
        let target = TargetMap::ExactAffine(ExactAffine::identity(2));
        let omega = BoxDomain::uniform(2, -1.0, 1.0).unwrap();
        assert!(matches!(
            sup_error(&target, &s, &omega, &GridSpec::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn grid_refinement_does_not_decrease_sup() {
        // Nested lattices: the finer sup dominates the coarser one.
        let mut s = Sentence::new(1);
        s.push(Word::new(
            crate::vocab::Basis::NegPart { axis: 0 },
            crate::vocab::Sign::Pos,
            crate::vocab::Tau::One,
        ))
        .unwrap();
        let target = TargetMap::ExactAffine(ExactAffine::identity(1));
        let omega = BoxDomain::uniform(1, -1.0, 1.0).unwrap();
        let coarse = sup_error(
            &target,
            &s,
            &omega,
            &GridSpec { lattice_per_axis: 9, random: 0, seed: 1 },
        )
        .unwrap();
        let fine = sup_error(
            &target,
            &s,
            &omega,
            &GridSpec { lattice_per_axis: 17, random: 0, seed: 1 },
        )
        .unwrap();
        assert!(fine.sup_error >= coarse.sup_error - 1e-15);
    }
}
