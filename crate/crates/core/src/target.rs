//! Target-spec files: the structured-text description of what to compile or
//! evaluate against. TOML with a `kind` discriminator; see the repository
//! README for the schema and examples.

use crate::compile::{IntervalParams, NeuralOdeField};
use crate::error::{Error, Result};
use crate::flows::{AffineFlow, ExactAffine, Flow, LeakyFlow};
use crate::harness::TargetMap;
use crate::linalg::Mat;
use serde::Deserialize;

/// One flow entry inside a `composition` target.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSpec {
    AffineFlow { tau: f64, a: Vec<Vec<f64>>, b: Vec<f64> },
    LeakyFlow { tau: f64, alpha: Vec<f64>, beta: Vec<f64> },
}

/// Per-interval neural-ODE parameters as written in the file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub s: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// A parsed target-spec file.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    AffineFlow {
        dim: usize,
        tau: f64,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    LeakyFlow {
        dim: usize,
        tau: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
    ExactAffine {
        dim: usize,
        w: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
    NeuralOde {
        dim: usize,
        width: usize,
        a_neg: f64,
        breakpoints: Vec<f64>,
        interval: Vec<IntervalSpec>,
        /// Integration tolerance when this target is evaluated.
        #[serde(default = "default_tol")]
        tol: f64,
    },
    Composition {
        dim: usize,
        #[serde(default)]
        flow: Vec<FlowSpec>,
    },
}

fn default_tol() -> f64 {
    1e-9
}

/// What the compiler accepts as input.
#[derive(Debug, Clone)]
pub enum CompileInput {
    Flows(Vec<Flow<f64>>),
    Node(NeuralOdeField<f64>),
}

/// Parses a target-spec file, reporting the offending line and column on
/// malformed input.
pub fn parse_target(text: &str) -> Result<TargetSpec> {
    toml::from_str(text).map_err(|e| {
        let (line, col) = e
            .span()
            .map(|span| offset_to_line_col(text, span.start))
            .unwrap_or((1, 1));
        Error::parse(line, col, e.message().to_string())
    })
}

fn offset_to_line_col(text: &str, offset: usize) -> (usize, usize) {
    let mut line = 1;
    let mut col = 1;
    for (i, ch) in text.char_indices() {
        if i >= offset {
            break;
        }
        if ch == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

fn check_matrix(a: &[Vec<f64>], d: usize, name: &str) -> Result<Mat<f64>> {
    if a.len() != d || a.iter().any(|row| row.len() != d) {
        return Err(Error::InvalidInput(format!("{name} must be a {d}x{d} matrix")));
    }
    Mat::from_rows(a)
}

fn check_vector(v: &[f64], d: usize, name: &str) -> Result<Vec<f64>> {
    if v.len() != d {
        return Err(Error::InvalidInput(format!("{name} must have length {d}")));
    }
    Ok(v.to_vec())
}

fn flow_from_spec(spec: &FlowSpec, d: usize) -> Result<Flow<f64>> {
    match spec {
        FlowSpec::AffineFlow { tau, a, b } => Ok(Flow::Affine(AffineFlow::new(
            check_matrix(a, d, "a")?,
            check_vector(b, d, "b")?,
            *tau,
        )?)),
        FlowSpec::LeakyFlow { tau, alpha, beta } => Ok(Flow::Leaky(LeakyFlow::new(
            check_vector(alpha, d, "alpha")?,
            check_vector(beta, d, "beta")?,
            *tau,
        )?)),
    }
}

impl TargetSpec {
    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::AffineFlow { dim, .. }
            | TargetSpec::LeakyFlow { dim, .. }
            | TargetSpec::ExactAffine { dim, .. }
            | TargetSpec::NeuralOde { dim, .. }
            | TargetSpec::Composition { dim, .. } => *dim,
        }
    }

    fn field(&self) -> Result<NeuralOdeField<f64>> {
        match self {
            TargetSpec::NeuralOde { dim, width, a_neg, breakpoints, interval, .. } => {
                let intervals = interval
                    .iter()
                    .map(|iv| IntervalParams { s: iv.s.clone(), w: iv.w.clone(), b: iv.b.clone() })
                    .collect();
                NeuralOdeField::new(*dim, *width, *a_neg, breakpoints.clone(), intervals)
            }
            _ => unreachable!(),
        }
    }

    /// The evaluation-side target map.
    pub fn to_target_map(&self) -> Result<TargetMap<f64>> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        match self {
            TargetSpec::AffineFlow { tau, a, b, .. } => Ok(TargetMap::Affine(AffineFlow::new(
                check_matrix(a, d, "a")?,
                check_vector(b, d, "b")?,
                *tau,
            )?)),
            TargetSpec::LeakyFlow { tau, alpha, beta, .. } => Ok(TargetMap::Leaky(LeakyFlow::new(
                check_vector(alpha, d, "alpha")?,
                check_vector(beta, d, "beta")?,
                *tau,
            )?)),
            TargetSpec::ExactAffine { w, c, .. } => Ok(TargetMap::ExactAffine(ExactAffine {
                w: check_matrix(w, d, "w")?,
                c: check_vector(c, d, "c")?,
            })),
            TargetSpec::NeuralOde { tol, .. } => {
                Ok(TargetMap::NeuralOde { field: self.field()?, tol: *tol })
            }
            TargetSpec::Composition { flow, .. } => {
                if flow.is_empty() {
                    // Empty composition is the identity.
                    return Ok(TargetMap::ExactAffine(ExactAffine::identity(d)));
                }
                let maps = flow
                    .iter()
                    .map(|f| {
                        flow_from_spec(f, d).map(|fl| match fl {
                            Flow::Affine(a) => TargetMap::Affine(a),
                            Flow::Leaky(l) => TargetMap::Leaky(l),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(TargetMap::Composition(maps))
            }
        }
    }

    /// The compile-side input; exact affine maps are evaluation-only.
    pub fn to_compile_input(&self) -> Result<CompileInput> {
        let d = self.dim();
        match self {
            TargetSpec::AffineFlow { tau, a, b, .. } => {
                Ok(CompileInput::Flows(vec![Flow::Affine(AffineFlow::new(
                    check_matrix(a, d, "a")?,
                    check_vector(b, d, "b")?,
                    *tau,
                )?)]))
            }
            TargetSpec::LeakyFlow { tau, alpha, beta, .. } => {
                Ok(CompileInput::Flows(vec![Flow::Leaky(LeakyFlow::new(
                    check_vector(alpha, d, "alpha")?,
                    check_vector(beta, d, "beta")?,
                    *tau,
                )?)]))
            }
            TargetSpec::NeuralOde { .. } => Ok(CompileInput::Node(self.field()?)),
            TargetSpec::Composition { flow, .. } => Ok(CompileInput::Flows(
                flow.iter().map(|f| flow_from_spec(f, d)).collect::<Result<Vec<_>>>()?,
            )),
            TargetSpec::ExactAffine { .. } => Err(Error::InvalidInput(
                "exact_affine targets are evaluation-only; compile affine_flow instead".into(),
            )),
        }
    }
}
