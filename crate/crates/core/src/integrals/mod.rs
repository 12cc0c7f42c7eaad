//! Separated quadrature of TNN integrands.
//!
//! A `d`-dimensional integral of a CP-structured integrand built from `Ψ`,
//! its first partial derivatives and CP coefficient functions reduces to
//! per-dimension `p × p` Gram matrices combined by Hadamard products. Every
//! routine here costs `O(d·p²)` plus the one-dimensional assembly, never
//! `O(N^d)`.
//!
//! Gram matrices are stored column-normalized: every output column of every
//! subnetwork is divided by its own L² norm, so normalized mass entries are
//! correlations in `[-1, 1]`. The per-column norm products over all
//! dimensions are divided by their maximum and folded into dimension 0, and
//! the removed common factor is kept as [`GramSet::log_scale`]. Hadamard
//! products over `d` dimensions therefore cannot overflow, and the dominant
//! rank term cannot underflow.

mod cp;
mod general;
mod logscale;

pub use cp::{CpFunction, Factor, Fn1, SampledCp, SampledFactor};
pub use general::{cp_product_integral, Derivative, FactorSpec, DEFAULT_K_MAX};
pub use logscale::LogScaled;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::diffengine::DualBatch;
use crate::error::{Result, TnnError};
use crate::quadrature::Grid1D;

fn check_aligned(batch: &DualBatch, grid: &Grid1D) -> Result<()> {
    if batch.len() != grid.len() || batch.dvalues.dim() != batch.values.dim() {
        return Err(TnnError::invalid(format!(
            "batch with {} points does not match grid with {} nodes",
            batch.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// `Σ_n c_n a_j(x_n) b_k(x_n)` for row-sample matrices `a`, `b` (`p × N`).
fn weighted_outer(a: &Array2<f64>, b: &Array2<f64>, c: &[f64]) -> Array2<f64> {
    let mut scaled = b.clone();
    for mut row in scaled.rows_mut() {
        row.iter_mut().zip(c).for_each(|(v, w)| *v *= w);
    }
    let mut m = a.dot(&scaled.t());
    if std::ptr::eq(a, b) {
        symmetrize(&mut m);
    }
    m
}

fn symmetrize(m: &mut Array2<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for k in (j + 1)..p {
            let v = 0.5 * (m[[j, k]] + m[[k, j]]);
            m[[j, k]] = v;
            m[[k, j]] = v;
        }
    }
}

/// `M[j,k] = Σ_n w_n φ_j(x_n) φ_k(x_n)`.
pub fn gram_mass(batch: &DualBatch, grid: &Grid1D) -> Result<Array2<f64>> {
    check_aligned(batch, grid)?;
    Ok(weighted_outer(&batch.values, &batch.values, grid.weights()))
}

/// `S[j,k] = Σ_n w_n φ_j'(x_n) φ_k'(x_n)`.
pub fn gram_stiffness(batch: &DualBatch, grid: &Grid1D) -> Result<Array2<f64>> {
    check_aligned(batch, grid)?;
    Ok(weighted_outer(&batch.dvalues, &batch.dvalues, grid.weights()))
}

/// `W[j,k] = Σ_n w_n g(x_n) φ_j(x_n) φ_k(x_n)`.
pub fn gram_weighted(batch: &DualBatch, grid: &Grid1D, g: impl Fn(f64) -> f64) -> Result<Array2<f64>> {
    let samples = grid.sample(g);
    gram_weighted_samples(batch, grid, &samples)
}

pub fn gram_weighted_samples(batch: &DualBatch, grid: &Grid1D, g: &[f64]) -> Result<Array2<f64>> {
    check_aligned(batch, grid)?;
    if g.len() != grid.len() {
        return Err(TnnError::invalid("coefficient samples do not match grid"));
    }
    if let Some(n) = g.iter().position(|v| !v.is_finite()) {
        return Err(TnnError::numeric(format!(
            "coefficient is non-finite at node {n} (x = {})",
            grid.nodes()[n]
        )));
    }
    let c: Vec<f64> = grid.weights().iter().zip(g).map(|(w, g)| w * g).collect();
    Ok(weighted_outer(&batch.values, &batch.values, &c))
}

/// `b[j] = Σ_n w_n g(x_n) φ_j(x_n)`, or with `φ_j'` when `use_derivative`.
pub fn cross_vector(
    batch: &DualBatch,
    grid: &Grid1D,
    g: impl Fn(f64) -> f64,
    use_derivative: bool,
) -> Result<Array1<f64>> {
    let samples = grid.sample(g);
    cross_vector_samples(batch, grid, &samples, use_derivative)
}

pub fn cross_vector_samples(batch: &DualBatch, grid: &Grid1D, g: &[f64], use_derivative: bool) -> Result<Array1<f64>> {
    check_aligned(batch, grid)?;
    if g.len() != grid.len() {
        return Err(TnnError::invalid("coefficient samples do not match grid"));
    }
    if let Some(n) = g.iter().position(|v| !v.is_finite()) {
        return Err(TnnError::numeric(format!("coefficient is non-finite at node {n}")));
    }
    let c: Array1<f64> = grid.weights().iter().zip(g).map(|(w, g)| w * g).collect();
    let rows = if use_derivative { &batch.dvalues } else { &batch.values };
    Ok(rows.dot(&c))
}

/// Plain `Σ_n w_n φ_j(x_n)`, the pairing of a constant factor.
fn weight_vector(batch: &DualBatch, grid: &Grid1D) -> Array1<f64> {
    let w = Array1::from(grid.weights().to_vec());
    batch.values.dot(&w)
}

/// Per-dimension Gram matrices of one model evaluation.
#[derive(Debug, Clone)]
pub struct GramSet {
    /// Normalized mass matrices `diag(r_i) M_i diag(r_i)`.
    pub mass: Vec<Array2<f64>>,
    /// Normalized stiffness matrices, scaled like `mass`.
    pub stiffness: Vec<Array2<f64>>,
    /// `weighted[ℓ][i]`: normalized weighted Gram of potential term `ℓ` in
    /// dimension `i`; `None` where that factor is constant.
    pub weighted: Vec<Vec<Option<Array2<f64>>>>,
    /// `cross[ℓ][i]`: right-hand-side pairing vectors `r_i ⊙ b_i`.
    pub cross: Vec<Vec<Array1<f64>>>,
    /// `r_i`, the per-dimension column scalings.
    pub scaling: Vec<Array1<f64>>,
    /// `ln` of the factor removed from every `d`-fold Gram product; pairings
    /// with a right-hand side carry half of it.
    pub log_scale: f64,
}

struct DimGrams {
    mass: Array2<f64>,
    stiffness: Array2<f64>,
    weighted: Vec<Option<Array2<f64>>>,
    cross: Vec<Array1<f64>>,
}

impl GramSet {
    /// Assembles mass and stiffness Grams, plus weighted Grams for every
    /// non-constant factor of `potential` and pairing vectors for `rhs`.
    pub fn assemble(
        batches: &[DualBatch],
        grids: &[Grid1D],
        potential: Option<&SampledCp>,
        rhs: Option<&SampledCp>,
    ) -> Result<Self> {
        let d = batches.len();
        if grids.len() != d {
            return Err(TnnError::invalid(format!("{} batches but {} grids", d, grids.len())));
        }
        for cp in [potential, rhs].into_iter().flatten() {
            if cp.dim != d {
                return Err(TnnError::invalid(format!(
                    "CP function has dimension {}, model has {d}",
                    cp.dim
                )));
            }
        }
        let per_dim: Vec<DimGrams> = (0..d)
            .into_par_iter()
            .map(|i| assemble_dim(i, &batches[i], &grids[i], potential, rhs))
            .collect::<Result<_>>()?;

        let (scaling, log_scale) = column_scaling(&per_dim)?;

        let q_pot = potential.map_or(0, SampledCp::rank);
        let q_rhs = rhs.map_or(0, SampledCp::rank);
        let mut set = GramSet {
            mass: Vec::with_capacity(d),
            stiffness: Vec::with_capacity(d),
            weighted: vec![Vec::with_capacity(d); q_pot],
            cross: vec![Vec::with_capacity(d); q_rhs],
            scaling,
            log_scale,
        };
        for (g, r) in per_dim.into_iter().zip(&set.scaling) {
            let rr = outer(r, r);
            set.mass.push(g.mass * &rr);
            set.stiffness.push(g.stiffness * &rr);
            for (l, w) in g.weighted.into_iter().enumerate() {
                set.weighted[l].push(w.map(|w| w * &rr));
            }
            for (l, c) in g.cross.into_iter().enumerate() {
                set.cross[l].push(c * r);
            }
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn rank(&self) -> usize {
        self.mass[0].nrows()
    }

    pub fn total_log_scale(&self) -> f64 {
        self.log_scale
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(j, k)| a[j] * b[k])
}

/// Column norms below this fraction of the largest norm in their dimension
/// are clamped, which keeps the scalings finite for dead columns.
const COLUMN_FLOOR: f64 = 1e-150;

/// Scalings `r_i` with `Π_i r_i[j] = exp(-L)` for every column `j`, and the
/// total log scale `2L`.
fn column_scaling(per_dim: &[DimGrams]) -> Result<(Vec<Array1<f64>>, f64)> {
    let p = per_dim[0].mass.nrows();
    let mut ln_norm = Vec::with_capacity(per_dim.len());
    for (i, g) in per_dim.iter().enumerate() {
        let diag = g.mass.diag();
        let top = diag.iter().cloned().fold(0.0, f64::max);
        if !(top > 0.0 && top.is_finite()) {
            return Err(TnnError::Degenerate(format!(
                "mass Gram of dimension {i} has no positive diagonal entry"
            )));
        }
        let floor = top.sqrt() * COLUMN_FLOOR;
        ln_norm.push(diag.mapv(|v| v.max(0.0).sqrt().max(floor).ln()));
    }
    let mut column_total = Array1::<f64>::zeros(p);
    for l in &ln_norm {
        column_total += l;
    }
    let big = column_total.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut scaling: Vec<Array1<f64>> = ln_norm.iter().map(|l| l.mapv(|v| (-v).exp())).collect();
    scaling[0] = Array1::from_shape_fn(p, |j| (column_total[j] - big - ln_norm[0][j]).exp());
    Ok((scaling, 2.0 * big))
}

fn assemble_dim(
    i: usize,
    batch: &DualBatch,
    grid: &Grid1D,
    potential: Option<&SampledCp>,
    rhs: Option<&SampledCp>,
) -> Result<DimGrams> {
    let mass = gram_mass(batch, grid)?;
    let stiffness = gram_stiffness(batch, grid)?;
    let weighted = match potential {
        None => Vec::new(),
        Some(v) => v
            .terms
            .iter()
            .map(|term| match &term[i] {
                SampledFactor::Const(_) => Ok(None),
                SampledFactor::Nodes { values, .. } => Ok(Some(gram_weighted_samples(batch, grid, values)?)),
            })
            .collect::<Result<_>>()?,
    };
    let cross = match rhs {
        None => Vec::new(),
        Some(f) => f
            .terms
            .iter()
            .map(|term| match &term[i] {
                SampledFactor::Const(c) => Ok(weight_vector(batch, grid) * *c),
                SampledFactor::Nodes { values, .. } => cross_vector_samples(batch, grid, values, false),
            })
            .collect::<Result<_>>()?,
    };
    Ok(DimGrams {
        mass,
        stiffness,
        weighted,
        cross,
    })
}

/// Hadamard product of all matrices and, for each `i`, the product of all but
/// the `i`-th, via prefix/suffix sweeps.
pub fn hadamard_exclusions(mats: &[&Array2<f64>]) -> (Array2<f64>, Vec<Array2<f64>>) {
    let d = mats.len();
    let shape = mats[0].raw_dim();
    let mut prefix = Vec::with_capacity(d + 1);
    prefix.push(Array2::<f64>::ones(shape));
    for m in mats {
        let next = prefix.last().unwrap() * *m;
        prefix.push(next);
    }
    let mut excl = vec![Array2::<f64>::zeros(shape); d];
    let mut suffix = Array2::<f64>::ones(shape);
    for i in (0..d).rev() {
        excl[i] = &prefix[i] * &suffix;
        suffix = &suffix * mats[i];
    }
    (prefix.pop().unwrap(), excl)
}

/// For pairs `(M_i, H_i)`, computes `K = Σ_{jk} Σ_i H_i ⊙ Π_{i'≠i} M_{i'}` and
/// the partial derivatives `∂K/∂H_i = Π_{i'≠i} M_{i'}` and
/// `∂K/∂M_i = Σ_{i''≠i} H_{i''} ⊙ Π_{i'∉{i,i''}} M_{i'}`.
///
/// The first exclusion list doubles as `∂(Σ Π M)/∂M_i`.
pub fn pair_exclusions(mass: &[Array2<f64>], one_body: &[Array2<f64>]) -> (f64, Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let d = mass.len();
    let shape = mass[0].raw_dim();
    // prefix[i] = (Π_{<i} M, Σ_{<i} H ⊙ rest)
    let mut pm = Vec::with_capacity(d + 1);
    let mut ps = Vec::with_capacity(d + 1);
    pm.push(Array2::<f64>::ones(shape));
    ps.push(Array2::<f64>::zeros(shape));
    for i in 0..d {
        let m_next = &pm[i] * &mass[i];
        let s_next = &pm[i] * &one_body[i] + &ps[i] * &mass[i];
        pm.push(m_next);
        ps.push(s_next);
    }
    let total = ps[d].sum();
    let mut excl_m = vec![Array2::<f64>::zeros(shape); d];
    let mut excl_s = vec![Array2::<f64>::zeros(shape); d];
    let mut qm = Array2::<f64>::ones(shape);
    let mut qs = Array2::<f64>::zeros(shape);
    for i in (0..d).rev() {
        excl_m[i] = &pm[i] * &qm;
        excl_s[i] = &pm[i] * &qs + &ps[i] * &qm;
        let qs_next = &qm * &one_body[i] + &qs * &mass[i];
        qm = &qm * &mass[i];
        qs = qs_next;
    }
    (total, excl_m, excl_s)
}

/// Vector analogue of [`pair_exclusions`] without the exclusion outputs:
/// `Σ_j Σ_i h_i[j] Π_{i'≠i} m_{i'}[j]`.
pub fn pair_sum_vectors(m: &[Array1<f64>], h: &[Array1<f64>]) -> f64 {
    let p = m[0].len();
    let mut acc_m = Array1::<f64>::ones(p);
    let mut acc_s = Array1::<f64>::zeros(p);
    for (mi, hi) in m.iter().zip(h) {
        acc_s = &acc_m * hi + &acc_s * mi;
        acc_m = &acc_m * mi;
    }
    acc_s.sum()
}

/// `∫Ψ²` by the separated scheme.
pub fn integral_psi2(grams: &GramSet) -> Result<LogScaled> {
    let refs: Vec<&Array2<f64>> = grams.mass.iter().collect();
    let (full, _) = hadamard_exclusions(&refs);
    finish(full.sum(), grams.total_log_scale(), "∫Ψ²")
}

/// `∫|∇Ψ|²` by the separated scheme.
pub fn integral_grad2(grams: &GramSet) -> Result<LogScaled> {
    let (total, _, _) = pair_exclusions(&grams.mass, &grams.stiffness);
    finish(total, grams.total_log_scale(), "∫|∇Ψ|²")
}

/// `∫vΨ²` for the potential whose weighted Grams are in `grams`.
pub fn integral_weighted_psi2(grams: &GramSet, v: &SampledCp) -> Result<LogScaled> {
    if grams.weighted.len() != v.rank() {
        return Err(TnnError::invalid("Gram set was not assembled for this potential"));
    }
    let parts = potential_split(grams, v);
    let mut total = 0.0;
    if parts.has_single {
        let (single, _, _) = pair_exclusions(&grams.mass, &parts.single_one_body);
        total += single;
    }
    for &(l, c) in &parts.multi {
        let mats = term_mats(grams, l);
        let (full, _) = hadamard_exclusions(&mats);
        total += c * full.sum();
    }
    finish(total, grams.total_log_scale(), "∫vΨ²")
}

/// `∫fΨ` for the right-hand side whose pairing vectors are in `grams`.
pub fn integral_cross(grams: &GramSet) -> Result<LogScaled> {
    let total: f64 = grams.cross.iter().map(|term| vector_product_sum(term)).sum();
    finish(total, 0.5 * grams.total_log_scale(), "∫fΨ")
}

fn finish(mantissa: f64, log_scale: f64, what: &str) -> Result<LogScaled> {
    let v = LogScaled::new(mantissa, log_scale);
    if !v.is_finite() {
        return Err(TnnError::numeric(format!("{what} left the representable range")));
    }
    Ok(v)
}

fn vector_product_sum(vs: &[Array1<f64>]) -> f64 {
    let mut acc = Array1::<f64>::ones(vs[0].len());
    for v in vs {
        acc *= v;
    }
    acc.sum()
}

/// Potential terms split into those acting in a single dimension (folded into
/// per-dimension one-body matrices) and the rest.
struct PotentialSplit {
    has_single: bool,
    single_one_body: Vec<Array2<f64>>,
    /// (term, product of constant factors)
    multi: Vec<(usize, f64)>,
    /// (term, dimension, product of constant factors)
    single: Vec<(usize, usize, f64)>,
}

fn potential_split(grams: &GramSet, v: &SampledCp) -> PotentialSplit {
    let d = grams.dim();
    let shape = grams.mass[0].raw_dim();
    let mut split = PotentialSplit {
        has_single: false,
        single_one_body: vec![Array2::zeros(shape); d],
        multi: Vec::new(),
        single: Vec::new(),
    };
    for l in 0..v.rank() {
        let (dims, c) = v.term_support(l);
        if dims.len() == 1 {
            let i = dims[0];
            let w = grams.weighted[l][i]
                .as_ref()
                .expect("weighted Gram for non-constant factor");
            split.single_one_body[i].scaled_add(c, w);
            split.single.push((l, i, c));
            split.has_single = true;
        } else {
            split.multi.push((l, c));
        }
    }
    split
}

fn term_mats(grams: &GramSet, l: usize) -> Vec<&Array2<f64>> {
    grams.weighted[l]
        .iter()
        .zip(&grams.mass)
        .map(|(w, m)| w.as_ref().unwrap_or(m))
        .collect()
}

/// Normalized values of the separated integrals entering the losses.
///
/// All Gram-type quantities carry the common factor `exp(Σ ln s_i)`; the
/// right-hand-side pairing carries its square root.
#[derive(Debug, Clone)]
pub struct SeparatedTerms {
    pub psi2: f64,
    pub grad2: f64,
    pub potential: f64,
    pub cross: f64,
    pub log_scale: f64,
    // partial derivatives with respect to the normalized inputs
    excl_mass: Vec<Array2<f64>>,
    grad_excl_mixed: Vec<Array2<f64>>,
    pot_excl_mixed: Option<Vec<Array2<f64>>>,
    pot_single: Vec<(usize, usize, f64)>,
    pot_multi: Vec<(usize, f64, Vec<Array2<f64>>)>,
    cross_excl: Vec<Vec<Array1<f64>>>,
}

/// Cotangents of a scalar loss with respect to the normalized Gram inputs.
#[derive(Debug, Clone)]
pub struct GramCotangent {
    pub mass: Vec<Array2<f64>>,
    pub stiffness: Vec<Array2<f64>>,
    pub weighted: Vec<Vec<Option<Array2<f64>>>>,
    pub cross: Vec<Vec<Array1<f64>>>,
}

impl SeparatedTerms {
    /// Evaluates `∫Ψ²`, `∫|∇Ψ|²`, `∫vΨ²` and `∫fΨ` together with what is
    /// needed to differentiate any linear combination of them.
    pub fn evaluate(grams: &GramSet, potential: Option<&SampledCp>) -> Result<Self> {
        let (grad2, excl_mass, grad_excl_mixed) = pair_exclusions(&grams.mass, &grams.stiffness);
        let psi2 = (&excl_mass[0] * &grams.mass[0]).sum();

        let mut pot_total = 0.0;
        let mut pot_excl_mixed = None;
        let mut pot_single = Vec::new();
        let mut pot_multi = Vec::new();
        if let Some(v) = potential {
            if grams.weighted.len() != v.rank() {
                return Err(TnnError::invalid("Gram set was not assembled for this potential"));
            }
            let split = potential_split(grams, v);
            if split.has_single {
                let (single, _, mixed) = pair_exclusions(&grams.mass, &split.single_one_body);
                pot_total += single;
                pot_excl_mixed = Some(mixed);
            }
            pot_single = split.single;
            for (l, c) in split.multi {
                let mats = term_mats(grams, l);
                let (full, excl) = hadamard_exclusions(&mats);
                pot_total += c * full.sum();
                pot_multi.push((l, c, excl));
            }
        }

        let mut cross_total = 0.0;
        let mut cross_excl = Vec::with_capacity(grams.cross.len());
        for term in &grams.cross {
            let d = term.len();
            let p = term[0].len();
            let mut prefix = vec![Array1::<f64>::ones(p)];
            for v in term {
                let next = prefix.last().unwrap() * v;
                prefix.push(next);
            }
            cross_total += prefix[d].sum();
            let mut excl = vec![Array1::<f64>::zeros(p); d];
            let mut suffix = Array1::<f64>::ones(p);
            for i in (0..d).rev() {
                excl[i] = &prefix[i] * &suffix;
                suffix = &suffix * &term[i];
            }
            cross_excl.push(excl);
        }

        let out = SeparatedTerms {
            psi2,
            grad2,
            potential: pot_total,
            cross: cross_total,
            log_scale: grams.total_log_scale(),
            excl_mass,
            grad_excl_mixed,
            pot_excl_mixed,
            pot_single,
            pot_multi,
            cross_excl,
        };
        if ![out.psi2, out.grad2, out.potential, out.cross]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(TnnError::numeric("separated integrals are not finite"));
        }
        Ok(out)
    }

    /// Cotangent of `a_psi2·psi2 + a_grad2·grad2 + a_pot·potential + a_cross·cross`
    /// (normalized values) with respect to the normalized Gram inputs.
    pub fn cotangent(&self, grams: &GramSet, a_psi2: f64, a_grad2: f64, a_pot: f64, a_cross: f64) -> GramCotangent {
        let d = grams.dim();
        let mut mass: Vec<Array2<f64>> = (0..d)
            .map(|i| &self.excl_mass[i] * a_psi2 + &self.grad_excl_mixed[i] * a_grad2)
            .collect();
        let stiffness: Vec<Array2<f64>> = self.excl_mass.iter().map(|e| e * a_grad2).collect();
        let mut weighted: Vec<Vec<Option<Array2<f64>>>> = grams
            .weighted
            .iter()
            .map(|t| {
                t.iter()
                    .map(|w| w.as_ref().map(|w| Array2::zeros(w.raw_dim())))
                    .collect()
            })
            .collect();
        if a_pot != 0.0 {
            if let Some(mixed) = &self.pot_excl_mixed {
                for (m, e) in mass.iter_mut().zip(mixed) {
                    m.scaled_add(a_pot, e);
                }
            }
            for &(l, i, c) in &self.pot_single {
                if let Some(w) = weighted[l][i].as_mut() {
                    w.scaled_add(a_pot * c, &self.excl_mass[i]);
                }
            }
            for (l, c, excl) in &self.pot_multi {
                for i in 0..d {
                    match weighted[*l][i].as_mut() {
                        Some(w) => w.scaled_add(a_pot * c, &excl[i]),
                        None => mass[i].scaled_add(a_pot * c, &excl[i]),
                    }
                }
            }
        }
        let cross = self
            .cross_excl
            .iter()
            .map(|t| t.iter().map(|e| e * a_cross).collect())
            .collect();
        GramCotangent {
            mass,
            stiffness,
            weighted,
            cross,
        }
    }
}

/// Transposes Gram assembly: turns cotangents on the normalized Gram inputs
/// into cotangents on each dimension's [`DualBatch`].
pub fn pullback_to_batches(
    batches: &[DualBatch],
    grids: &[Grid1D],
    grams: &GramSet,
    cot: &GramCotangent,
    potential: Option<&SampledCp>,
    rhs: Option<&SampledCp>,
) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
    let d = batches.len();
    (0..d)
        .into_par_iter()
        .map(|i| {
            let batch = &batches[i];
            let grid = &grids[i];
            let w = grid.weights();
            let r = &grams.scaling[i];
            let rr = outer(r, r);

            // values: Σ over mass-type matrices of (C + Cᵀ)·Φ·diag(w·g)
            let mut sym = &cot.mass[i] + &cot.mass[i].t();
            sym *= &rr;
            let mut cv = sym.dot(&batch.values);
            for (n, wn) in w.iter().enumerate() {
                cv.column_mut(n).mapv_inplace(|v| v * wn);
            }
            if let Some(v) = potential {
                for (l, term) in v.terms.iter().enumerate() {
                    if let (SampledFactor::Nodes { values: g, .. }, Some(c)) = (&term[i], &cot.weighted[l][i]) {
                        let mut s = c + &c.t();
                        s *= &rr;
                        let mut part = s.dot(&batch.values);
                        for (n, (wn, gn)) in w.iter().zip(g).enumerate() {
                            part.column_mut(n).mapv_inplace(|v| v * wn * gn);
                        }
                        cv += &part;
                    }
                }
            }
            if let Some(f) = rhs {
                for (l, term) in f.terms.iter().enumerate() {
                    let cb = &cot.cross[l][i] * r;
                    let p = cb.len();
                    match &term[i] {
                        SampledFactor::Const(c) => {
                            for j in 0..p {
                                let a = cb[j] * c;
                                cv.row_mut(j).zip_mut_with(&ndarray::aview1(w), |v, wn| *v += a * wn);
                            }
                        }
                        SampledFactor::Nodes { values: g, .. } => {
                            for j in 0..p {
                                let a = cb[j];
                                for (n, v) in cv.row_mut(j).iter_mut().enumerate() {
                                    *v += a * w[n] * g[n];
                                }
                            }
                        }
                    }
                }
            }

            let mut sym_s = &cot.stiffness[i] + &cot.stiffness[i].t();
            sym_s *= &rr;
            let mut cd = sym_s.dot(&batch.dvalues);
            for (n, wn) in w.iter().enumerate() {
                cd.column_mut(n).mapv_inplace(|v| v * wn);
            }
            Ok((cv, cd))
        })
        .collect()
}
