use std::fmt;
use std::sync::Arc;

use crate::error::{Result, TnnError};
use crate::quadrature::Grid1D;

pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One univariate factor of a CP term.
#[derive(Clone)]
pub enum Factor {
    /// Identically `c`; integrates against the plain mass Gram.
    Const(f64),
    Func {
        label: String,
        f: Fn1,
        /// Analytic derivative, needed for H¹ pairings.
        df: Option<Fn1>,
    },
}

impl fmt::Debug for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Const(c) => write!(f, "Const({c})"),
            Factor::Func { label, df, .. } => {
                write!(f, "Func({label}{})", if df.is_some() { ", d/dx" } else { "" })
            }
        }
    }
}

impl Factor {
    pub fn func(label: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Factor::Func {
            label: label.to_string(),
            f: Arc::new(f),
            df: None,
        }
    }

    pub fn func_with_derivative(
        label: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Factor::Func {
            label: label.to_string(),
            f: Arc::new(f),
            df: Some(Arc::new(df)),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Factor::Const(c) => *c,
            Factor::Func { f, .. } => f(x),
        }
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        match self {
            Factor::Const(_) => Some(0.0),
            Factor::Func { df, .. } => df.as_ref().map(|d| d(x)),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Factor::Const(_))
    }

    pub fn has_derivative(&self) -> bool {
        match self {
            Factor::Const(_) => true,
            Factor::Func { df, .. } => df.is_some(),
        }
    }
}

/// `Σ_ℓ Π_i factor[ℓ][i](x_i)`, a rank-`q` separable function on `d` coordinates.
#[derive(Clone, Debug)]
pub struct CpFunction {
    dim: usize,
    terms: Vec<Vec<Factor>>,
}

impl CpFunction {
    pub fn new(dim: usize, terms: Vec<Vec<Factor>>) -> Result<Self> {
        if dim == 0 {
            return Err(TnnError::invalid("CP function needs dimension >= 1"));
        }
        if let Some(l) = terms.iter().position(|t| t.len() != dim) {
            return Err(TnnError::invalid(format!(
                "CP term {l} has {} factors, expected {dim}",
                terms[l].len()
            )));
        }
        Ok(CpFunction { dim, terms })
    }

    /// The zero function (rank 0).
    pub fn zero(dim: usize) -> Self {
        CpFunction { dim, terms: Vec::new() }
    }

    /// Rank-1 product of the given factors.
    pub fn product(factors: Vec<Factor>) -> Result<Self> {
        let d = factors.len();
        CpFunction::new(d, vec![factors])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Vec<Factor>] {
        &self.terms
    }

    pub fn has_derivatives(&self) -> bool {
        self.terms.iter().flatten().all(Factor::has_derivative)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.iter().zip(x).map(|(f, &xi)| f.eval(xi)).product::<f64>())
            .sum()
    }

    /// Analytic gradient, if every factor carries a derivative.
    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.dim];
        for term in &self.terms {
            let vals: Vec<f64> = term.iter().zip(x).map(|(f, &xi)| f.eval(xi)).collect();
            for (i, gi) in g.iter_mut().enumerate() {
                let mut prod = term[i].derivative(x[i])?;
                for (k, v) in vals.iter().enumerate() {
                    if k != i {
                        prod *= v;
                    }
                }
                *gi += prod;
            }
        }
        Some(g)
    }

    /// Samples every non-constant factor on the matching grid.
    pub fn sample(&self, grids: &[Grid1D]) -> Result<SampledCp> {
        if grids.len() != self.dim {
            return Err(TnnError::invalid(format!(
                "{} grids for a {}-dimensional CP function",
                grids.len(),
                self.dim
            )));
        }
        let mut terms = Vec::with_capacity(self.terms.len());
        for (l, term) in self.terms.iter().enumerate() {
            let mut sampled = Vec::with_capacity(self.dim);
            for (i, (factor, grid)) in term.iter().zip(grids).enumerate() {
                sampled.push(match factor {
                    Factor::Const(c) => SampledFactor::Const(*c),
                    Factor::Func { f, df, .. } => {
                        let values = grid.sample(|x| f(x));
                        if values.iter().any(|v| !v.is_finite()) {
                            return Err(TnnError::numeric(format!(
                                "CP factor ({l}, {i}) is non-finite on the grid"
                            )));
                        }
                        let derivs = df.as_ref().map(|d| grid.sample(|x| d(x)));
                        if derivs.as_ref().is_some_and(|v| v.iter().any(|v| !v.is_finite())) {
                            return Err(TnnError::numeric(format!(
                                "CP factor ({l}, {i}) has a non-finite derivative on the grid"
                            )));
                        }
                        SampledFactor::Nodes { values, derivs }
                    }
                });
            }
            terms.push(sampled);
        }
        Ok(SampledCp { dim: self.dim, terms })
    }
}

/// A factor evaluated on its grid's nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum SampledFactor {
    Const(f64),
    Nodes { values: Vec<f64>, derivs: Option<Vec<f64>> },
}

impl SampledFactor {
    pub fn is_const(&self) -> bool {
        matches!(self, SampledFactor::Const(_))
    }
}

/// A [`CpFunction`] sampled once on fixed grids.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledCp {
    pub dim: usize,
    pub terms: Vec<Vec<SampledFactor>>,
}

impl SampledCp {
    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    /// Dimensions where term `l` has a non-constant factor, and the product of
    /// its constant factors.
    pub fn term_support(&self, l: usize) -> (Vec<usize>, f64) {
        let mut dims = Vec::new();
        let mut c = 1.0;
        for (i, f) in self.terms[l].iter().enumerate() {
            match f {
                SampledFactor::Const(v) => c *= v,
                SampledFactor::Nodes { .. } => dims.push(i),
            }
        }
        (dims, c)
    }
}
