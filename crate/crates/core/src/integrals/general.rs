use super::{CpFunction, LogScaled, SampledFactor};
use crate::diffengine::DualBatch;
use crate::error::{Result, TnnError};
use crate::quadrature::Grid1D;

pub const DEFAULT_K_MAX: usize = 4;

/// Which TNN factor enters a product: `Ψ` itself or `∂Ψ/∂x_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    Partial(usize),
}

/// Ordered list of TNN factors multiplied together in an integrand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorSpec {
    factors: Vec<Derivative>,
}

impl FactorSpec {
    pub fn new(factors: Vec<Derivative>, k_max: usize) -> Result<Self> {
        if factors.len() > k_max {
            return Err(TnnError::Capability(format!(
                "{} TNN factors requested, at most {k_max} supported",
                factors.len()
            )));
        }
        Ok(FactorSpec { factors })
    }

    pub fn factors(&self) -> &[Derivative] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// `∫ A(x) Π_t ∂^{β_t}Ψ(x) dx` by direct enumeration of the `p^T` rank-index
/// tuples, each contributing a product of `d` one-dimensional quadratures.
///
/// This is the general form of the separated scheme. It is exponential in the
/// number of factors `T` but only linear in `d`; the specialised Gram paths
/// in this module must agree with it.
pub fn cp_product_integral(
    batches: &[DualBatch],
    grids: &[Grid1D],
    coeff: &CpFunction,
    spec: &FactorSpec,
) -> Result<LogScaled> {
    let d = batches.len();
    if grids.len() != d || coeff.dim() != d {
        return Err(TnnError::invalid(format!(
            "{} batches, {} grids, coefficient of dimension {}",
            d,
            grids.len(),
            coeff.dim()
        )));
    }
    for f in spec.factors() {
        if let Derivative::Partial(i) = f {
            if *i >= d {
                return Err(TnnError::invalid(format!(
                    "partial derivative in dimension {i} of a {d}-dimensional model"
                )));
            }
        }
    }
    for (b, g) in batches.iter().zip(grids) {
        if b.len() != g.len() {
            return Err(TnnError::invalid("batch and grid sizes differ"));
        }
    }
    let p = batches[0].rank();
    let t = spec.len();
    let tuples = p.pow(t as u32);
    let sampled = coeff.sample(grids)?;
    let q = sampled.rank();

    // one_d[i][l * tuples + tuple]
    let mut one_d = Vec::with_capacity(d);
    let mut idx = vec![0usize; t];
    for i in 0..d {
        let batch = &batches[i];
        let grid = &grids[i];
        let rows: Vec<&ndarray::Array2<f64>> = spec
            .factors()
            .iter()
            .map(|f| match f {
                Derivative::Partial(k) if *k == i => &batch.dvalues,
                _ => &batch.values,
            })
            .collect();
        let mut vals = vec![0.0; q * tuples];
        for (l, term) in sampled.terms.iter().enumerate() {
            for tuple in 0..tuples {
                let mut r = tuple;
                for slot in idx.iter_mut() {
                    *slot = r % p;
                    r /= p;
                }
                let mut s = 0.0;
                for n in 0..grid.len() {
                    let coef = match &term[i] {
                        SampledFactor::Const(c) => *c,
                        SampledFactor::Nodes { values, .. } => values[n],
                    };
                    let mut prod = grid.weights()[n] * coef;
                    for (row, &j) in rows.iter().zip(&idx) {
                        prod *= row[[j, n]];
                    }
                    s += prod;
                }
                vals[l * tuples + tuple] = s;
            }
        }
        one_d.push(vals);
    }

    let mut total = LogScaled::ZERO;
    for l in 0..q {
        for tuple in 0..tuples {
            let k = l * tuples + tuple;
            total = total + LogScaled::product(one_d.iter().map(|v| v[k]));
        }
    }
    if !total.is_finite() {
        return Err(TnnError::numeric("product integral left the representable range"));
    }
    Ok(total)
}
