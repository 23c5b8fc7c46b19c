//! The lowering pipeline: neural-ODE flow maps are discretized into
//! single-coordinate forward-Euler steps, each step is decomposed into at
//! most six flows in H1 ∪ H2, each flow is reduced to elementary basis flows
//! (exactly where the realized map factors into shears, positive diagonal
//! scalings, and translations, by first-order splitting otherwise), and each
//! elementary time is realized as `p·1 − q·√2` vocabulary words.
//!
//! Every stage carries an explicit error budget and every compiled artifact
//! is validated on a measurement grid before it is returned; a compile that
//! cannot meet its requested tolerance fails loudly.

use crate::error::{Error, Result};
use crate::flows::{AffineFlow, ExactAffine, Flow, LeakyFlow};
use crate::harness::{rk4_flow, BoxDomain};
use crate::kron::{expand_time, KronMode};
use crate::linalg::Mat;
use crate::num::{dist2, Scalar};
use crate::split::{choose_n, lie_compose, split_affine, split_leaky};
use crate::vocab::{Basis, Sentence};
use rayon::prelude::*;

/// Piecewise-constant-in-time one-hidden-layer field
/// `v(x, t) = Σ_i s_i(t) · σ(w_i(t)·x + b_i(t))` with leaky slope
/// `a_neg ∈ (0, 1)` on the negative side of the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralOdeField<F> {
    dim: usize,
    width: usize,
    a_neg: F,
    breakpoints: Vec<F>,
    intervals: Vec<IntervalParams<F>>,
}

/// Parameters of one constant-in-time interval: `s[i]` and `w[i]` are
/// length-`d` vectors per hidden neuron, `b[i]` a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalParams<F> {
    pub s: Vec<Vec<F>>,
    pub w: Vec<Vec<F>>,
    pub b: Vec<F>,
}

impl<F: Scalar> NeuralOdeField<F> {
    pub fn new(
        dim: usize,
        width: usize,
        a_neg: F,
        breakpoints: Vec<F>,
        intervals: Vec<IntervalParams<F>>,
    ) -> Result<Self> {
        if dim == 0 || width == 0 {
            return Err(Error::InvalidInput("field needs positive dim and width".into()));
        }
        if !(a_neg > F::zero() && a_neg < F::one()) {
            return Err(Error::InvalidInput(format!(
                "leaky slope must lie in (0,1), got {a_neg}"
            )));
        }
        if breakpoints.len() < 2 || breakpoints[0] != F::zero() {
            return Err(Error::InvalidInput("breakpoints must start at 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("breakpoints must be strictly increasing".into()));
        }
        if intervals.len() + 1 != breakpoints.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameter intervals, got {}",
                breakpoints.len() - 1,
                intervals.len()
            )));
        }
        for iv in &intervals {
            if iv.s.len() != width || iv.w.len() != width || iv.b.len() != width {
                return Err(Error::InvalidInput("interval parameters must have `width` rows".into()));
            }
            if iv.s.iter().chain(iv.w.iter()).any(|row| row.len() != dim) {
                return Err(Error::InvalidInput("neuron vectors must have length `dim`".into()));
            }
            let finite = iv
                .s
                .iter()
                .chain(iv.w.iter())
                .flatten()
                .chain(iv.b.iter())
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidInput("field parameters must be finite".into()));
            }
        }
        Ok(NeuralOdeField { dim, width, a_neg, breakpoints, intervals })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn a_neg(&self) -> F {
        self.a_neg
    }

    pub fn tau(&self) -> F {
        *self.breakpoints.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[F] {
        &self.breakpoints
    }

    pub fn intervals(&self) -> &[IntervalParams<F>] {
        &self.intervals
    }

    pub fn is_zero(&self) -> bool {
        self.intervals
            .iter()
            .all(|iv| iv.s.iter().flatten().all(|&v| v == F::zero()))
    }

    fn interval_index(&self, t: F) -> usize {
        let k = self
            .breakpoints
            .iter()
            .skip(1)
            .position(|&bp| t < bp)
            .unwrap_or(self.intervals.len() - 1);
        k
    }

    /// Field value at `(x, t)`.
    pub fn eval(&self, x: &[F], t: F) -> Vec<F> {
        let iv = &self.intervals[self.interval_index(t)];
        let mut out = vec![F::zero(); self.dim];
        for i in 0..self.width {
            let pre = iv.w[i]
                .iter()
                .zip(x)
                .fold(iv.b[i], |acc, (&wj, &xj)| acc + wj * xj);
            let act = if pre < F::zero() { self.a_neg * pre } else { pre };
            for (o, &sj) in out.iter_mut().zip(&iv.s[i]) {
                *o = *o + sj * act;
            }
        }
        out
    }

    /// Flow map over `[0, τ]` by interval-wise RK4 with step halving.
    /// Integrating each constant-parameter interval separately keeps the
    /// integrator away from the time discontinuities.
    pub fn flow_map(&self, x0: &[F], tol: F) -> Result<Vec<F>> {
        if x0.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x0.len() });
        }
        let per_interval = tol / F::from_usize(self.intervals.len()).unwrap();
        let mut x = x0.to_vec();
        for (k, iv) in self.intervals.iter().enumerate() {
            let len = self.breakpoints[k + 1] - self.breakpoints[k];
            let a_neg = self.a_neg;
            let field = |x: &[F], _t: F| -> Vec<F> {
                let mut out = vec![F::zero(); x.len()];
                for i in 0..iv.s.len() {
                    let pre = iv.w[i]
                        .iter()
                        .zip(x)
                        .fold(iv.b[i], |acc, (&wj, &xj)| acc + wj * xj);
                    let act = if pre < F::zero() { a_neg * pre } else { pre };
                    for (o, &sj) in out.iter_mut().zip(&iv.s[i]) {
                        *o = *o + sj * act;
                    }
                }
                out
            };
            x = rk4_flow(field, len, &x, per_interval)?;
        }
        Ok(x)
    }
}

/// One forward-Euler split step: updates coordinate `target` by
/// `a · σ(w·x + b)` with leaky slope `a_neg`, identity elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct StepT<F> {
    pub target: usize,
    /// Premultiplied update size `Δt · s_ij`.
    pub a: F,
    pub w: Vec<F>,
    pub b: F,
    pub a_neg: F,
    pub time_index: u32,
}

impl<F: Scalar> StepT<F> {
    fn sigma(&self, v: F) -> F {
        if v < F::zero() {
            self.a_neg * v
        } else {
            v
        }
    }

    /// Direct evaluation of the step map.
    pub fn apply(&self, x: &[F]) -> Vec<F> {
        let pre = self.w.iter().zip(x).fold(self.b, |acc, (&wj, &xj)| acc + wj * xj);
        let mut y = x.to_vec();
        y[self.target] = y[self.target] + self.a * self.sigma(pre);
        y
    }

    /// Slope-positivity condition `max(1/α, α)·|a·w_j| < 1`.
    pub fn feasible(&self) -> bool {
        let alpha = self.a_neg;
        let m = (F::one() / alpha).max(alpha);
        m * (self.a * self.w[self.target]).abs() < F::one()
    }

    /// Global Lipschitz bound `1 + |a|·max(α,1)·‖w‖₂` of the step map.
    pub fn lipschitz(&self) -> F {
        F::one() + self.a.abs() * self.a_neg.max(F::one()) * crate::num::norm2(&self.w)
    }
}

/// Applies a step sequence left to right.
pub fn compose_steps<F: Scalar>(steps: &[StepT<F>], x: &[F]) -> Vec<F> {
    let mut y = x.to_vec();
    for s in steps {
        y = s.apply(&y);
    }
    y
}

/// Forward-Euler splitting of the field into single-coordinate steps.
///
/// The requested step count `n` is distributed over the constant-parameter
/// intervals proportionally to their length (at least one step each), so
/// step boundaries always align with the field's breakpoints. Steps are
/// ordered time-first, then neuron, then coordinate; zero-coefficient steps
/// are dropped. Fails with an infeasible-step error when the slope condition
/// requires a smaller `Δt`.
pub fn euler_split<F: Scalar>(field: &NeuralOdeField<F>, n: u32) -> Result<Vec<StepT<F>>> {
    if n == 0 {
        return Err(Error::InvalidInput("step count must be positive".into()));
    }
    let tau = field.tau();
    let mut steps = Vec::new();
    let mut time_index = 0u32;
    for (k, iv) in field.intervals.iter().enumerate() {
        let len = field.breakpoints[k + 1] - field.breakpoints[k];
        let local = (F::from_u32(n).unwrap() * len / tau)
            .ceil()
            .to_u32()
            .unwrap_or(1)
            .max(1);
        let dt = len / F::from_u32(local).unwrap();
        for _ in 0..local {
            for i in 0..field.width {
                for j in 0..field.dim {
                    let a = dt * iv.s[i][j];
                    if a == F::zero() {
                        continue;
                    }
                    let step = StepT {
                        target: j,
                        a,
                        w: iv.w[i].clone(),
                        b: iv.b[i],
                        a_neg: field.a_neg,
                        time_index,
                    };
                    if !step.feasible() {
                        return Err(Error::InfeasibleStep(format!(
                            "slope condition fails at step {time_index}, neuron {i}, \
                             coordinate {j}; refine the time step"
                        )));
                    }
                    steps.push(step);
                }
            }
            time_index += 1;
        }
    }
    Ok(steps)
}

// Coefficients with magnitude below this are treated as zero when choosing
// the decomposition case and pivot.
const W_THRESH: f64 = 1e-12;

fn unit<F: Scalar>(d: usize, i: usize, v: F) -> Vec<F> {
    let mut e = vec![F::zero(); d];
    e[i] = v;
    e
}

/// Decomposes one Euler step into at most six flows in H1 ∪ H2 whose
/// composition reproduces the step map pointwise.
///
/// Three cases, keyed on the thresholded weight vector:
/// 1. `w = 0`: the step is a constant shift, one affine flow.
/// 2. only `w_j ≠ 0` (the target coordinate): one leaky flow on coordinate
///    `j`, with the bias absorbed by a shift/unshift pair. The negative side
///    gets slope `1 + α·a·w_j` and the positive side `1 + a·w_j` when
///    `w_j > 0`, swapped for `w_j < 0`; the sign case analysis is checked by
///    the pointwise oracle tests.
/// 3. some `w_l ≠ 0` with `l ≠ j`: the six-factor form around the smallest
///    such pivot — send coordinate `l` to the preactivation (triangular
///    affine flow with the bias folded in), apply the leaky activation,
///    shear the result into coordinate `j`, undo the activation, absorb the
///    `w_j` feedback as a leaky flow, and invert the first factor. A
///    negative pivot is first normalized with
///    `σ_α(v) = −α·σ_{1/α}(−v)`.
pub fn decompose_step<F: Scalar>(step: &StepT<F>) -> Result<Vec<Flow<F>>> {
    let d = step.w.len();
    let j = step.target;
    let thresh = F::c(W_THRESH);
    let w_eff: Vec<F> = step
        .w
        .iter()
        .map(|&v| if v.abs() < thresh { F::zero() } else { v })
        .collect();

    if step.a == F::zero() {
        return Ok(Vec::new());
    }

    let pivot = (0..d).find(|&l| l != j && w_eff[l] != F::zero());

    if pivot.is_none() && w_eff[j] == F::zero() {
        // Case 1: constant shift a·σ(b) on the target coordinate.
        let value = step.a * step.sigma(step.b);
        if value == F::zero() {
            return Ok(Vec::new());
        }
        return Ok(vec![Flow::Affine(AffineFlow::translation(unit(d, j, value)))]);
    }

    if pivot.is_none() {
        // Case 2: self-coupled coordinate.
        let wj = w_eff[j];
        let neg = F::one() + step.a_neg * step.a * wj;
        let pos = F::one() + step.a * wj;
        if neg <= F::zero() || pos <= F::zero() {
            return Err(Error::InfeasibleStep(format!(
                "leaky slopes must stay positive, got ({neg}, {pos})"
            )));
        }
        let (slope_neg, slope_pos) = if wj > F::zero() { (neg, pos) } else { (pos, neg) };
        let mut neg_slopes = vec![F::one(); d];
        let mut pos_slopes = vec![F::one(); d];
        neg_slopes[j] = slope_neg;
        pos_slopes[j] = slope_pos;
        let core = Flow::Leaky(LeakyFlow::from_slopes(&neg_slopes, &pos_slopes)?);
        if step.b == F::zero() {
            return Ok(vec![core]);
        }
        let shift = step.b / wj;
        return Ok(vec![
            Flow::Affine(AffineFlow::translation(unit(d, j, shift))),
            core,
            Flow::Affine(AffineFlow::translation(unit(d, j, -shift))),
        ]);
    }

    // Case 3: cross-coordinate coupling through the smallest pivot l ≠ j.
    let l = pivot.unwrap();
    let (w3, b3, a3, alpha3) = if w_eff[l] > F::zero() {
        (w_eff.clone(), step.b, step.a, step.a_neg)
    } else {
        (
            w_eff.iter().map(|&v| -v).collect::<Vec<F>>(),
            -step.b,
            -step.a * step.a_neg,
            F::one() / step.a_neg,
        )
    };

    let f4_neg = F::one() + alpha3 * a3 * w3[j];
    let f4_pos = F::one() + a3 * w3[j];
    if f4_neg <= F::zero() || f4_pos <= F::zero() {
        return Err(Error::InfeasibleStep(format!(
            "leaky slopes must stay positive, got ({f4_neg}, {f4_pos})"
        )));
    }

    // Triangular generator of the pivot-row map z_l ← w3·z, other rows kept.
    let rest: Vec<F> = (0..d).filter(|&m| m != l).map(|m| w3[m]).collect();
    let tri = crate::flows::triangular_log(w3[l], &rest)?;
    let mut gen0 = Mat::zeros(d, d);
    gen0[(l, l)] = tri[(0, 0)];
    for (col, m) in (0..d).filter(|&m| m != l).enumerate() {
        gen0[(l, m)] = tri[(0, col + 1)];
    }

    let f0 = AffineFlow::from_generator_and_offset(gen0.clone(), unit(d, l, b3))?;
    let f5 = AffineFlow::from_generator_and_offset(gen0.scale(-F::one()), unit(d, l, -b3 / w3[l]))?;

    let leaky_at = |slope_neg: F, slope_pos: F| -> Result<Flow<F>> {
        let mut neg = vec![F::one(); d];
        let mut pos = vec![F::one(); d];
        neg[l] = slope_neg;
        pos[l] = slope_pos;
        Ok(Flow::Leaky(LeakyFlow::from_slopes(&neg, &pos)?))
    };

    let mut shear = Mat::zeros(d, d);
    shear[(j, l)] = a3;

    let mut flows = vec![
        Flow::Affine(f0),
        leaky_at(alpha3, F::one())?,
        Flow::Affine(AffineFlow::new(shear, vec![F::zero(); d], F::one())?),
        leaky_at(F::one() / alpha3, F::one())?,
    ];
    if w3[j] != F::zero() {
        flows.push(leaky_at(f4_neg, f4_pos)?);
    }
    flows.push(Flow::Affine(f5));
    Ok(flows)
}

/// Search and budgeting options shared by all compile entry points.
#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    pub seed: u64,
    pub kron: KronMode,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { seed: 42, kron: KronMode::Standard }
    }
}

/// Aggregate word-expansion statistics.
#[derive(Debug, Clone, Copy, Default)]
pub struct KronStats {
    pub components: u64,
    pub total_p: u64,
    pub total_q: u64,
    pub max_q: u64,
}

impl KronStats {
    fn absorb(&mut self, other: &KronStats) {
        self.components += other.components;
        self.total_p += other.total_p;
        self.total_q += other.total_q;
        self.max_q = self.max_q.max(other.max_q);
    }
}

/// Per-stage accounting of one compilation.
#[derive(Debug, Clone)]
pub struct CompilationReport {
    pub requested_epsilon: f64,
    /// Budget spent on discretization/splitting error.
    pub split_budget: f64,
    /// Budget spent on word-level time expansion.
    pub kron_budget: f64,
    /// Chosen Euler step count (neural-ODE compiles only).
    pub euler_steps: Option<u32>,
    pub flows_compiled: usize,
    /// Flows lowered through the exact factorization path.
    pub exact_flows: usize,
    /// Largest first-order splitting step count among Lie-path flows.
    pub lie_steps_max: u32,
    pub kron: KronStats,
    pub sentence_len: u64,
    pub measured_sup_error: f64,
    pub validation_points: usize,
    /// Wall-clock time; reported on stderr by the CLI, never serialized, so
    /// report files stay byte-identical across runs.
    pub wall_seconds: f64,
}

impl CompilationReport {
    fn empty(eps: f64) -> Self {
        CompilationReport {
            requested_epsilon: eps,
            split_budget: 0.0,
            kron_budget: 0.0,
            euler_steps: None,
            flows_compiled: 0,
            exact_flows: 0,
            lie_steps_max: 0,
            kron: KronStats::default(),
            sentence_len: 0,
            measured_sup_error: 0.0,
            validation_points: 0,
            wall_seconds: 0.0,
        }
    }

    /// `metric,value` CSV body (wall-clock excluded by design).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push(',');
            out.push_str(&v);
            out.push('\n');
        };
        push("requested_epsilon", format!("{}", self.requested_epsilon));
        push("split_budget", format!("{}", self.split_budget));
        push("kron_budget", format!("{}", self.kron_budget));
        push(
            "euler_steps",
            self.euler_steps.map_or_else(|| "0".into(), |n| n.to_string()),
        );
        push("flows_compiled", self.flows_compiled.to_string());
        push("exact_flows", self.exact_flows.to_string());
        push("lie_steps_max", self.lie_steps_max.to_string());
        push("kron_components", self.kron.components.to_string());
        push("kron_total_p", self.kron.total_p.to_string());
        push("kron_total_q", self.kron.total_q.to_string());
        push("kron_max_q", self.kron.max_q.to_string());
        push("sentence_len", self.sentence_len.to_string());
        push("measured_sup_error", format!("{}", self.measured_sup_error));
        push("validation_points", self.validation_points.to_string());
        out
    }
}

/// Elementary flow plan entry: a basis generator applied for a signed time.
type PlanStep<F> = (Basis, F);

/// Interval image of one elementary basis flow, kept exact per family.
fn step_image<F: Scalar>(basis: Basis, t: F, lower: &mut [F], upper: &mut [F]) {
    match basis {
        Basis::Translate { axis } => {
            let i = axis as usize;
            lower[i] = lower[i] + t;
            upper[i] = upper[i] + t;
        }
        Basis::Linear { row, col } => {
            let (i, jj) = (row as usize, col as usize);
            if i == jj {
                let s = t.exp();
                lower[i] = lower[i] * s;
                upper[i] = upper[i] * s;
            } else {
                let (a, b) = (t * lower[jj], t * upper[jj]);
                lower[i] = lower[i] + a.min(b);
                upper[i] = upper[i] + a.max(b);
            }
        }
        Basis::NegPart { axis } => {
            let i = axis as usize;
            let s = t.exp();
            if lower[i] < F::zero() {
                lower[i] = lower[i] * s;
            }
            if upper[i] < F::zero() {
                upper[i] = upper[i] * s;
            }
        }
        Basis::PosPart { axis } => {
            let i = axis as usize;
            let s = t.exp();
            if lower[i] >= F::zero() {
                lower[i] = lower[i] * s;
            }
            if upper[i] >= F::zero() {
                upper[i] = upper[i] * s;
            }
        }
    }
    for i in 0..lower.len() {
        if lower[i] > upper[i] {
            std::mem::swap(&mut lower[i], &mut upper[i]);
        }
    }
}

/// Lipschitz factor of one elementary basis flow.
fn step_lipschitz<F: Scalar>(basis: Basis, t: F) -> F {
    match basis {
        Basis::Translate { .. } => F::one(),
        Basis::Linear { row, col } => {
            if row == col {
                t.exp().max(F::one())
            } else {
                F::one() + t.abs()
            }
        }
        Basis::NegPart { .. } | Basis::PosPart { .. } => t.exp().max(F::one()),
    }
}

/// Sup of the unit basis field over an interval box.
fn field_sup<F: Scalar>(basis: Basis, lower: &[F], upper: &[F]) -> F {
    let coord_sup = |i: usize| lower[i].abs().max(upper[i].abs());
    match basis {
        Basis::Translate { .. } => F::one(),
        Basis::Linear { col, .. } => coord_sup(col as usize),
        Basis::NegPart { axis } | Basis::PosPart { axis } => coord_sup(axis as usize),
    }
}

/// Expands an elementary plan into words. Each step gets a time tolerance
/// `budget / (m · C_k · Λ_k)` where `C_k` bounds its field on the running
/// domain and `Λ_k` the Lipschitz amplification of the downstream steps, so
/// the realized composition stays within `budget` of the planned one.
fn emit_plan<F: Scalar>(
    sentence: &mut Sentence,
    plan: &[PlanStep<F>],
    budget: F,
    omega: &BoxDomain<F>,
    mode: KronMode,
) -> Result<KronStats> {
    let mut stats = KronStats::default();
    if plan.is_empty() {
        return Ok(stats);
    }
    let m = F::from_usize(plan.len()).unwrap();

    // Backward pass: downstream Lipschitz products.
    let mut lambda = vec![F::one(); plan.len()];
    let mut acc = F::one();
    for (k, &(basis, t)) in plan.iter().enumerate().rev() {
        lambda[k] = acc;
        acc = acc * step_lipschitz(basis, t);
        if !acc.is_finite() {
            return Err(Error::ResourceExhausted(
                "downstream Lipschitz product overflowed; budget infeasible".into(),
            ));
        }
    }

    // Forward pass: expand each step on the running domain.
    let mut lower = omega.lower().to_vec();
    let mut upper = omega.upper().to_vec();
    for (k, &(basis, t)) in plan.iter().enumerate() {
        let c_k = field_sup(basis, &lower, &upper);
        let weight = (c_k * lambda[k]).max(F::c(1e-9));
        let eps_k = (budget / (m * weight)).to_f64().unwrap_or(0.0);
        if !(eps_k > 0.0) {
            return Err(Error::ResourceExhausted(
                "per-word tolerance underflowed; budget infeasible".into(),
            ));
        }
        let runs = expand_time(basis, t.to_f64().unwrap(), eps_k, mode)?;
        for run in &runs {
            sentence.push_run(run.word, run.count)?;
            match run.word.tau {
                crate::vocab::Tau::One => stats.total_p += run.count as u64,
                crate::vocab::Tau::Sqrt2 => {
                    stats.total_q += run.count as u64;
                    stats.max_q = stats.max_q.max(run.count as u64);
                }
            }
        }
        stats.components += 1;
        step_image(basis, t, &mut lower, &mut upper);
    }
    Ok(stats)
}

/// Exact elementary factorization of a realized affine map, when it exists:
/// `W = L·D·U` (unit lower/upper triangular, positive diagonal) followed by
/// a translation. Every factor is a single basis flow, so composing the
/// plan reproduces the map without any splitting error. Returns `None` when
/// a pivot is nonpositive or the factorization is badly scaled, in which
/// case the caller falls back to first-order splitting.
fn exact_affine_plan<F: Scalar>(map: &ExactAffine<F>) -> Option<Vec<PlanStep<F>>> {
    let d = map.dim();
    let scale = map.w.max_abs().max(F::one());
    let pivot_floor = scale * F::c(1e-9);
    let entry_cap = F::c(1e8);

    let mut a = map.w.clone();
    let mut lower_entries: Vec<(usize, usize, F)> = Vec::new(); // (row, col, value)
    let mut upper_entries: Vec<(usize, usize, F)> = Vec::new();
    let mut diag = vec![F::one(); d];
    for k in 0..d {
        let piv = a[(k, k)];
        if piv < pivot_floor {
            return None;
        }
        diag[k] = piv;
        for jj in k + 1..d {
            let u = a[(k, jj)] / piv;
            if u.abs() > entry_cap {
                return None;
            }
            if u != F::zero() {
                upper_entries.push((k, jj, u));
            }
            a[(k, jj)] = u;
        }
        for i in k + 1..d {
            let l = a[(i, k)] / piv;
            if l.abs() > entry_cap {
                return None;
            }
            if l != F::zero() {
                lower_entries.push((i, k, l));
            }
            a[(i, k)] = l;
        }
        for i in k + 1..d {
            for jj in k + 1..d {
                a[(i, jj)] = a[(i, jj)] - a[(i, k)] * piv * a[(k, jj)];
            }
        }
    }

    let mut plan: Vec<PlanStep<F>> = Vec::new();
    // Apply U first: columns ascending, shears within a column commute.
    let mut cols: Vec<usize> = upper_entries.iter().map(|&(_, c, _)| c).collect();
    cols.sort_unstable();
    cols.dedup();
    for c in cols {
        for &(i, cc, u) in &upper_entries {
            if cc == c {
                plan.push((Basis::Linear { row: i as u32, col: cc as u32 }, u));
            }
        }
    }
    // Then the positive diagonal scalings.
    for (i, &dv) in diag.iter().enumerate() {
        if dv != F::one() {
            plan.push((Basis::Linear { row: i as u32, col: i as u32 }, dv.ln()));
        }
    }
    // Then L: columns descending.
    let mut cols: Vec<usize> = lower_entries.iter().map(|&(_, c, _)| c).collect();
    cols.sort_unstable();
    cols.dedup();
    for c in cols.into_iter().rev() {
        for &(i, cc, l) in &lower_entries {
            if cc == c {
                plan.push((Basis::Linear { row: i as u32, col: cc as u32 }, l));
            }
        }
    }
    // Finally the translation.
    for (i, &ci) in map.c.iter().enumerate() {
        if ci != F::zero() {
            plan.push((Basis::Translate { axis: i as u32 }, ci));
        }
    }

    // Reject factorizations whose reconstruction drifts; the caller then
    // falls back to first-order splitting.
    let mut rebuilt = Mat::identity(d);
    for (i, c, u) in upper_entries {
        rebuilt[(i, c)] = u;
    }
    for i in 0..d {
        for jj in 0..d {
            rebuilt[(i, jj)] = rebuilt[(i, jj)] * diag[i];
        }
    }
    let mut l_mat = Mat::identity(d);
    for (i, c, l) in lower_entries {
        l_mat[(i, c)] = l;
    }
    let rebuilt = l_mat.mul(&rebuilt);
    let err = rebuilt.sub(&map.w).max_abs();
    if err > scale * F::c(1e-12) {
        return None;
    }
    Some(plan)
}

/// Outcome of compiling a single flow.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowCompileStats {
    pub lie_steps: u32,
    pub exact_path: bool,
    pub kron: KronStats,
}

// Internal single-flow lowering; `compile_flow` adds the validation gate.
fn lower_flow<F: Scalar>(
    sentence: &mut Sentence,
    flow: &Flow<F>,
    eps_stage: F,
    omega: &BoxDomain<F>,
    opts: &CompileOptions,
) -> Result<FlowCompileStats> {
    let mut stats = FlowCompileStats::default();
    let margin = eps_stage + omega.diameter() * F::c(0.01);
    let work_box = omega.inflate(margin);
    let kron_budget = eps_stage / F::c(2.0);

    match flow {
        Flow::Affine(f) => {
            if f.tau() == F::zero() {
                return Ok(stats);
            }
            let realized = f.realize();
            if let Some(plan) = exact_affine_plan(&realized) {
                stats.exact_path = true;
                stats.lie_steps = 1;
                stats.kron = emit_plan(sentence, &plan, kron_budget, &work_box, opts.kron)?;
                return Ok(stats);
            }
            let (a, b) = f.generator();
            let split = split_affine(a, b);
            if split.is_empty() {
                return Ok(stats);
            }
            let probe = work_box.probe_points(opts.seed);
            let n = choose_n(&split, f.tau(), eps_stage / F::c(2.0), &probe, |x| {
                realized.apply(x)
            })?;
            stats.lie_steps = n;
            let plan = lie_compose(&split, f.tau(), n);
            stats.kron = emit_plan(sentence, &plan.steps, kron_budget, &work_box, opts.kron)?;
        }
        Flow::Leaky(f) => {
            if f.tau() == F::zero() {
                return Ok(stats);
            }
            let (alpha, beta) = f.log_slopes();
            let split = split_leaky(alpha, beta);
            if split.is_empty() {
                return Ok(stats);
            }
            // Leaky components commute, so the step search lands on n = 1.
            let probe = work_box.probe_points(opts.seed);
            let n = choose_n(&split, f.tau(), eps_stage / F::c(2.0), &probe, |x| f.eval(x))?;
            stats.lie_steps = n;
            let plan = lie_compose(&split, f.tau(), n);
            stats.kron = emit_plan(sentence, &plan.steps, kron_budget, &work_box, opts.kron)?;
        }
    }
    Ok(stats)
}

/// Compiles one flow to a sentence whose measured sup error on the probe
/// grid stays within `eps_stage`. The identity flow compiles to the empty
/// sentence.
pub fn compile_flow<F: Scalar>(
    flow: &Flow<F>,
    eps_stage: F,
    omega: &BoxDomain<F>,
    opts: &CompileOptions,
) -> Result<(Sentence, FlowCompileStats)> {
    if !(eps_stage > F::zero()) {
        return Err(Error::InvalidInput("stage budget must be positive".into()));
    }
    if flow.dim() != omega.dim() {
        return Err(Error::DimensionMismatch { expected: omega.dim(), found: flow.dim() });
    }
    let reference = match flow {
        Flow::Affine(f) => Flow::Affine(f.clone()),
        Flow::Leaky(f) => Flow::Leaky(f.clone()),
    };
    let exact = match &reference {
        Flow::Affine(f) => Some(f.realize()),
        Flow::Leaky(_) => None,
    };
    let eval_exact = |x: &[F]| -> Vec<F> {
        match (&exact, &reference) {
            (Some(m), _) => m.apply(x),
            (None, Flow::Leaky(f)) => f.eval(x),
            _ => unreachable!(),
        }
    };
    let probe = omega.probe_points(opts.seed);
    let mut eps_work = eps_stage;
    let mut last_measured = f64::NAN;
    for _attempt in 0..3 {
        let mut sentence = Sentence::new(flow.dim());
        let stats = lower_flow(&mut sentence, flow, eps_work, omega, opts)?;
        let measured = probe
            .par_iter()
            .map(|x| {
                let got = sentence.apply(x).expect("dimension checked");
                dist2(&got, &eval_exact(x))
            })
            .reduce(|| F::zero(), F::max);
        if measured <= eps_stage {
            return Ok((sentence, stats));
        }
        last_measured = measured.to_f64().unwrap_or(f64::NAN);
        eps_work = eps_work / F::c(4.0);
    }
    Err(Error::ValidationFailed {
        measured: last_measured,
        requested: eps_stage.to_f64().unwrap_or(f64::NAN),
    })
}

/// Per-flow budget divisors for a flow sequence: `ε_i = ε / (m·Λ_i)` with
/// `Λ_i` the product of Lipschitz estimates of the downstream flows.
fn sequence_lambdas<F: Scalar>(flows: &[Flow<F>]) -> Result<Vec<F>> {
    let mut lambdas = vec![F::one(); flows.len()];
    let mut acc = F::one();
    for (i, flow) in flows.iter().enumerate().rev() {
        lambdas[i] = acc.max(F::one());
        acc = acc * flow.lipschitz();
        if !acc.is_finite() {
            return Err(Error::ResourceExhausted(
                "downstream Lipschitz product overflowed; budget infeasible".into(),
            ));
        }
    }
    Ok(lambdas)
}

/// Exact image box of a flow (affine: interval arithmetic on `Wx + c`;
/// leaky: monotone coordinate-wise image).
fn flow_image_box<F: Scalar>(flow: &Flow<F>, omega: &BoxDomain<F>) -> Result<BoxDomain<F>> {
    let d = flow.dim();
    match flow {
        Flow::Affine(f) => {
            let m = f.realize();
            let mut lo = vec![F::zero(); d];
            let mut hi = vec![F::zero(); d];
            for i in 0..d {
                let mut l = m.c[i];
                let mut h = m.c[i];
                for jj in 0..d {
                    let a = m.w[(i, jj)] * omega.lower()[jj];
                    let b = m.w[(i, jj)] * omega.upper()[jj];
                    l = l + a.min(b);
                    h = h + a.max(b);
                }
                lo[i] = l;
                hi[i] = h;
            }
            BoxDomain::new(lo, hi)
        }
        Flow::Leaky(f) => {
            let lo = f.eval(omega.lower());
            let hi = f.eval(omega.upper());
            BoxDomain::new(lo, hi)
        }
    }
}

/// Compiles an ordered flow sequence under a shared budget.
///
/// Per-flow budgets are `ε_i = ε/(m·Λ_i)`; `Λ_i` defaults to the product of
/// the downstream flows' analytic Lipschitz estimates and can be overridden
/// by callers that know a tighter bound for the same composition (the
/// neural-ODE pipeline bounds whole Euler steps at once, which is what makes
/// deep step sequences affordable). Domains are tracked forward through the
/// sequence with a slack margin; the concatenated sentence is validated
/// against the exact composition on the validation grid.
pub fn compile_flow_sequence<F: Scalar>(
    flows: &[Flow<F>],
    eps: F,
    omega: &BoxDomain<F>,
    opts: &CompileOptions,
    lambda_override: Option<&[F]>,
) -> Result<(Sentence, CompilationReport)> {
    if !(eps > F::zero()) {
        return Err(Error::InvalidInput("budget must be positive".into()));
    }
    let d = omega.dim();
    let mut report = CompilationReport::empty(eps.to_f64().unwrap_or(f64::NAN));
    report.kron_budget = report.requested_epsilon;
    if flows.is_empty() {
        report.sentence_len = 0;
        return Ok((Sentence::new(d), report));
    }
    if flows.iter().any(|f| f.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: flows[0].dim() });
    }

    let lambdas = match lambda_override {
        Some(l) => {
            if l.len() != flows.len() {
                return Err(Error::InvalidInput("lambda override length mismatch".into()));
            }
            l.to_vec()
        }
        None => sequence_lambdas(flows)?,
    };
    let m = F::from_usize(flows.len()).unwrap();

    // Realize affine maps once; evaluating through the exponential per
    // validation point would dominate the runtime for deep sequences.
    enum Realized<F> {
        Aff(ExactAffine<F>),
        Leaky(LeakyFlow<F>),
    }
    let realized: Vec<Realized<F>> = flows
        .iter()
        .map(|f| match f {
            Flow::Affine(a) => Realized::Aff(a.realize()),
            Flow::Leaky(l) => Realized::Leaky(l.clone()),
        })
        .collect();
    let eval_composed = |x: &[F]| -> Vec<F> {
        let mut y = x.to_vec();
        for r in &realized {
            y = match r {
                Realized::Aff(m) => m.apply(&y),
                Realized::Leaky(l) => l.eval(&y),
            };
        }
        y
    };

    let validation = omega.validation_points(opts.seed);
    let mut shrink = F::one();
    let mut last_measured = f64::NAN;
    for _attempt in 0..3 {
        let mut sentence = Sentence::new(d);
        let mut stage_box = omega.inflate(eps + omega.diameter() * F::c(0.01));
        let mut stats_acc = KronStats::default();
        let mut exact_flows = 0usize;
        let mut lie_max = 0u32;
        for (i, flow) in flows.iter().enumerate() {
            let eps_i = eps * shrink / (m * lambdas[i].max(F::one()));
            if !(eps_i > F::zero()) {
                return Err(Error::ResourceExhausted(
                    "per-flow budget underflowed; budget infeasible".into(),
                ));
            }
            let (frag, stats) = compile_flow(flow, eps_i, &stage_box, opts)?;
            sentence.extend(&frag)?;
            stats_acc.absorb(&stats.kron);
            if stats.exact_path {
                exact_flows += 1;
            }
            lie_max = lie_max.max(stats.lie_steps);
            stage_box = flow_image_box(flow, &stage_box)?.inflate(eps + F::c(1e-6));
        }

        let measured = validation
            .par_iter()
            .map(|x| {
                let got = sentence.apply(x).expect("dimension checked");
                dist2(&got, &eval_composed(x))
            })
            .reduce(|| F::zero(), F::max);

        if measured <= eps {
            report.flows_compiled = flows.len();
            report.exact_flows = exact_flows;
            report.lie_steps_max = lie_max;
            report.kron = stats_acc;
            report.sentence_len = sentence.len();
            report.measured_sup_error = measured.to_f64().unwrap_or(f64::NAN);
            report.validation_points = validation.len();
            return Ok((sentence, report));
        }
        last_measured = measured.to_f64().unwrap_or(f64::NAN);
        shrink = shrink / F::c(4.0);
    }
    Err(Error::ValidationFailed {
        measured: last_measured,
        requested: eps.to_f64().unwrap_or(f64::NAN),
    })
}

const EULER_N_CAP: u32 = 1 << 16;

/// Compiles a neural-ODE flow map end to end: half the budget goes to the
/// Euler splitting (step count chosen against the RK4 oracle on the probe
/// grid), half to compiling the decomposed flow sequence; the result is
/// validated against the oracle on the validation grid.
pub fn compile_neural_ode<F: Scalar>(
    field: &NeuralOdeField<F>,
    eps: F,
    omega: &BoxDomain<F>,
    opts: &CompileOptions,
) -> Result<(Sentence, CompilationReport)> {
    if !(eps > F::zero()) {
        return Err(Error::InvalidInput("budget must be positive".into()));
    }
    if field.dim() != omega.dim() {
        return Err(Error::DimensionMismatch { expected: omega.dim(), found: field.dim() });
    }
    let mut report = CompilationReport::empty(eps.to_f64().unwrap_or(f64::NAN));
    if field.is_zero() {
        return Ok((Sentence::new(field.dim()), report));
    }

    let eps_half = eps / F::c(2.0);
    report.split_budget = eps_half.to_f64().unwrap_or(f64::NAN);
    report.kron_budget = eps_half.to_f64().unwrap_or(f64::NAN);

    let oracle_tol = F::c(1e-9).min(eps * F::c(1e-4));
    let probe = omega.probe_points(opts.seed);
    let oracle: Vec<Vec<F>> = probe
        .par_iter()
        .map(|x| field.flow_map(x, oracle_tol))
        .collect::<Result<_>>()?;

    // Step-count search: doubling until the Euler-split composition matches
    // the integrated flow within half the budget on the probe grid.
    let intervals = field.intervals().len() as u32;
    let mut n = intervals;
    let steps = loop {
        if n > EULER_N_CAP {
            return Err(Error::ResourceExhausted(format!(
                "Euler step search exceeded {EULER_N_CAP} steps"
            )));
        }
        match euler_split(field, n) {
            Err(Error::InfeasibleStep(_)) => {
                n *= 2;
                continue;
            }
            Err(e) => return Err(e),
            Ok(steps) => {
                let err = probe
                    .par_iter()
                    .zip(&oracle)
                    .map(|(x, want)| dist2(&compose_steps(&steps, x), want))
                    .reduce(|| F::zero(), F::max);
                if err <= eps_half {
                    break steps;
                }
                n *= 2;
            }
        }
    };
    report.euler_steps = Some(n);

    // Decompose into flows, tracking group boundaries so budget weights can
    // use the Lipschitz bound of whole steps instead of factor products.
    let mut flows: Vec<Flow<F>> = Vec::new();
    let mut group_of: Vec<usize> = Vec::new();
    let mut in_group_tail: Vec<F> = Vec::new();
    let mut step_lips: Vec<F> = Vec::new();
    for (g, step) in steps.iter().enumerate() {
        let group = decompose_step(step)?;
        step_lips.push(step.lipschitz());
        // Tail products of factor Lipschitz bounds inside this group.
        let lips: Vec<F> = group.iter().map(|f| f.lipschitz()).collect();
        let mut tail = vec![F::one(); group.len()];
        let mut acc = F::one();
        for i in (0..group.len()).rev() {
            tail[i] = acc;
            acc = acc * lips[i];
        }
        for (i, f) in group.into_iter().enumerate() {
            flows.push(f);
            group_of.push(g);
            in_group_tail.push(tail[i]);
        }
    }

    // Downstream amplification per flow: remaining factors of its own step
    // times the Lipschitz bounds of all later steps.
    let mut suffix = vec![F::one(); steps.len() + 1];
    for g in (0..steps.len()).rev() {
        suffix[g] = suffix[g + 1] * step_lips[g];
        if !suffix[g].is_finite() {
            return Err(Error::ResourceExhausted(
                "step Lipschitz product overflowed; budget infeasible".into(),
            ));
        }
    }
    let lambdas: Vec<F> = (0..flows.len())
        .map(|i| in_group_tail[i] * suffix[group_of[i] + 1])
        .collect();

    let (sentence, seq_report) =
        compile_flow_sequence(&flows, eps_half, omega, opts, Some(&lambdas))?;

    // End-to-end validation against the integration oracle.
    let validation = omega.validation_points(opts.seed);
    let measured = validation
        .par_iter()
        .map(|x| -> Result<F> {
            let want = field.flow_map(x, oracle_tol)?;
            let got = sentence.apply(x)?;
            Ok(dist2(&want, &got))
        })
        .try_reduce(|| F::zero(), |a, b| Ok(a.max(b)))?;
    if measured > eps {
        return Err(Error::ValidationFailed {
            measured: measured.to_f64().unwrap_or(f64::NAN),
            requested: eps.to_f64().unwrap_or(f64::NAN),
        });
    }

    report.flows_compiled = seq_report.flows_compiled;
    report.exact_flows = seq_report.exact_flows;
    report.lie_steps_max = seq_report.lie_steps_max;
    report.kron = seq_report.kron;
    report.sentence_len = sentence.len();
    report.measured_sup_error = measured.to_f64().unwrap_or(f64::NAN);
    report.validation_points = validation.len();
    Ok((sentence, report))
}


#[cfg(test)]
mod factor_tests {
    use super::*;

    // Canonical cross-coupled step: pivot on the first coordinate (positive
    // weight), target the last, zero bias. The six factors then take their
    // reference shapes: a row-replacement map sending x_1 to the
    // preactivation, the leaky activation on coordinate 1, a shear feeding
    // the target, the inverse activation, the feedback slopes, and the
    // inverse of the first factor.
    #[test]
    fn six_factor_structure_matches_expected_maps() {
        let (w1, w2, w3) = (0.8, -0.4, 0.5);
        let (a, alpha) = (0.3, 0.5);
        let step: StepT<f64> = StepT {
            target: 2,
            a,
            w: vec![w1, w2, w3],
            b: 0.0,
            a_neg: alpha,
            time_index: 0,
        };
        assert!(step.feasible());
        let flows = decompose_step(&step).unwrap();
        assert_eq!(flows.len(), 6);

        let affine = |f: &Flow<f64>| match f {
            Flow::Affine(a) => a.realize(),
            other => panic!("expected affine, got {other:?}"),
        };
        let slopes = |f: &Flow<f64>| match f {
            Flow::Leaky(l) => l.realized_slopes(),
            other => panic!("expected leaky, got {other:?}"),
        };
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;

        // F0: row 1 becomes w, other rows kept, no offset.
        let f0 = affine(&flows[0]);
        let want0 = [[w1, w2, w3], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            assert!(close(f0.c[i], 0.0));
            for j in 0..3 {
                assert!(close(f0.w[(i, j)], want0[i][j]), "F0[{i}][{j}]");
            }
        }

        // F1 and F3: activation and its inverse on coordinate 1.
        let (neg, pos) = slopes(&flows[1]);
        assert!(close(neg[0], alpha) && close(pos[0], 1.0));
        assert!(neg[1..].iter().chain(&pos[1..]).all(|&s| close(s, 1.0)));
        let (neg, pos) = slopes(&flows[3]);
        assert!(close(neg[0], 1.0 / alpha) && close(pos[0], 1.0));

        // F2: shear adding a times coordinate 1 onto the target.
        let f2 = affine(&flows[2]);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j {
                    1.0
                } else if (i, j) == (2, 0) {
                    a
                } else {
                    0.0
                };
                assert!(close(f2.w[(i, j)], want), "F2[{i}][{j}]");
            }
        }

        // F4: feedback slopes 1 + alpha*a*w3 (negative side) and 1 + a*w3.
        let (neg, pos) = slopes(&flows[4]);
        assert!(close(neg[0], 1.0 + alpha * a * w3));
        assert!(close(pos[0], 1.0 + a * w3));

        // F5 inverts F0.
        let f5 = affine(&flows[5]);
        let prod = f5.w.mul(&f0.w);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() <= 1e-11, "F5*F0[{i}][{j}]");
            }
        }
    }

    // With a negative pivot weight the construction first rewrites the step
    // using the reflection identity of the leaky activation; the factor list
    // must still compose to the same map and the activation factor must use
    // the reciprocal slope.
    #[test]
    fn negative_pivot_uses_reciprocal_activation() {
        let step: StepT<f64> = StepT {
            target: 1,
            a: 0.2,
            w: vec![-0.9, 0.3],
            b: 0.1,
            a_neg: 0.5,
            time_index: 0,
        };
        let flows = decompose_step(&step).unwrap();
        match &flows[1] {
            Flow::Leaky(l) => {
                let (neg, _) = l.realized_slopes();
                assert!((neg[0] - 2.0).abs() < 1e-12, "slope should be 1/a_neg");
            }
            other => panic!("expected leaky, got {other:?}"),
        }
        let x = [0.37, -0.82];
        let mut y = x.to_vec();
        for f in &flows {
            y = f.eval(&y);
        }
        assert!(crate::num::dist2(&y, &step.apply(&x)) <= 1e-11);
    }
}
