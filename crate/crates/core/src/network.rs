//! Subnetworks, the tensor neural network assembled from them, and model
//! checkpoints.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::{forward_dual, DualBatch};
use crate::error::{Result, TnnError};
use crate::quadrature::{composite_rule, Grid1D};

/// Smooth activation used in the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sine,
}

/// `tanh` through a single `exp` away from the origin, where glibc's
/// `expm1`-based path is several times slower. Agrees with `f64::tanh` to a
/// few ulp.
#[inline]
fn tanh(z: f64) -> f64 {
    let a = z.abs();
    let t = if a < 0.55 {
        let e = (2.0 * a).exp_m1();
        e / (e + 2.0)
    } else if a < 22.0 {
        1.0 - 2.0 / ((2.0 * a).exp() + 1.0)
    } else if a.is_nan() {
        return z;
    } else {
        1.0
    };
    t.copysign(z)
}

impl Activation {
    /// Returns `(σ(z), σ'(z), σ''(z))`.
    #[inline]
    pub fn eval3(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = tanh(z);
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Sine => {
                let (s, c) = z.sin_cos();
                (s, c, -s)
            }
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "sine" | "sin" => Some(Activation::Sine),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sine => "sine",
        }
    }
}

/// Boundary treatment applied after the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    None,
    /// Multiply by `(x - a)(b - x)` so outputs vanish on both endpoints.
    Dirichlet,
}

/// One affine layer `z = W h + b`, `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Scalar-input network emitting `p` outputs, one per rank index.
///
/// All hidden layers use the same activation; the output layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubNetwork {
    pub interval: (f64, f64),
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub boundary: Boundary,
    pub output_scale: f64,
}

impl SubNetwork {
    /// Layer widths, starting at 1 and ending at `p`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].fan_in()];
        dims.extend(self.layers.iter().map(Layer::fan_out));
        dims
    }

    pub fn rank(&self) -> usize {
        self.layers.last().map_or(0, Layer::fan_out)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Boundary factor and its derivative at `x`.
    #[inline]
    pub fn boundary_factor(&self, x: f64) -> (f64, f64) {
        match self.boundary {
            Boundary::None => (1.0, 0.0),
            Boundary::Dirichlet => {
                let (a, b) = self.interval;
                ((x - a) * (b - x), a + b - 2.0 * x)
            }
        }
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(TnnError::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.weight.iter_mut() {
                *v = flat[off];
                off += 1;
            }
            for v in l.bias.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(TnnError::invalid(format!("bad subnetwork interval [{a}, {b}]")));
        }
        if self.layers.is_empty() || self.layers[0].fan_in() != 1 {
            return Err(TnnError::invalid("first layer must take a scalar input"));
        }
        for w in self.layers.windows(2) {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(TnnError::invalid("layer widths do not chain"));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.fan_out() {
                return Err(TnnError::invalid("bias length does not match layer width"));
            }
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(TnnError::invalid("output_scale must be positive and finite"));
        }
        Ok(())
    }
}

/// Architecture and initialization settings for [`TnnModel::init`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub dim: usize,
    pub rank: usize,
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub boundary: Boundary,
    /// One interval per dimension.
    pub intervals: Vec<(f64, f64)>,
}

/// `Ψ(x) = Σ_j Π_i φ_{i,j}(x_i)` over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnnModel {
    pub subnets: Vec<SubNetwork>,
}

/// Subintervals and points of the rule used to normalize outputs at init.
const NORMALIZATION_RULE: (usize, usize) = (16, 8);

fn seed_for_dim(seed: u64, dim: usize) -> u64 {
    // splitmix64 step, keeps per-dimension streams unrelated
    let mut z = seed ^ (dim as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl TnnModel {
    /// Random initialization: uniform `±1/√fan_in` for weights and biases,
    /// followed by per-dimension output normalization.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        if spec.dim == 0 || spec.rank == 0 || spec.depth == 0 || spec.width == 0 {
            return Err(TnnError::invalid("dim, rank, depth and width must all be >= 1"));
        }
        if spec.intervals.len() != spec.dim {
            return Err(TnnError::invalid(format!(
                "{} intervals given for dimension {}",
                spec.intervals.len(),
                spec.dim
            )));
        }
        let mut dims = vec![1];
        dims.extend(std::iter::repeat_n(spec.width, spec.depth));
        dims.push(spec.rank);

        let mut subnets = Vec::with_capacity(spec.dim);
        for (i, &interval) in spec.intervals.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_for_dim(seed, i));
            let layers = dims
                .windows(2)
                .map(|w| {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
                    let bias = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..bound));
                    Layer { weight, bias }
                })
                .collect();
            let mut net = SubNetwork {
                interval,
                layers,
                activation: spec.activation,
                boundary: spec.boundary,
                output_scale: 1.0,
            };
            net.validate()?;
            let (a, b) = interval;
            let grid = composite_rule(a, b, NORMALIZATION_RULE.0, NORMALIZATION_RULE.1)?;
            let batch = forward_dual(&net, grid.nodes())?;
            let diag_mean = mass_diagonal_mean(&batch, &grid);
            if !(diag_mean.is_finite() && diag_mean > 0.0) {
                return Err(TnnError::numeric(format!(
                    "subnetwork {i} has zero output at initialization"
                )));
            }
            net.output_scale = 1.0 / diag_mean.sqrt();
            subnets.push(net);
        }
        Ok(TnnModel { subnets })
    }

    pub fn from_subnets(subnets: Vec<SubNetwork>) -> Result<Self> {
        let model = TnnModel { subnets };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subnets.is_empty() {
            return Err(TnnError::invalid("model needs at least one subnetwork"));
        }
        let p = self.subnets[0].rank();
        for (i, s) in self.subnets.iter().enumerate() {
            s.validate()?;
            if s.rank() != p {
                return Err(TnnError::invalid(format!(
                    "subnetwork {i} has rank {} but subnetwork 0 has rank {p}",
                    s.rank()
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.subnets.len()
    }

    pub fn rank(&self) -> usize {
        self.subnets[0].rank()
    }

    pub fn param_count(&self) -> usize {
        self.subnets.iter().map(SubNetwork::param_count).sum()
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.subnets.iter().map(|s| s.interval).collect()
    }

    /// Point value of `Ψ`. Diagnostics only; training works on grids.
    pub fn evaluate_point(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(TnnError::invalid(format!(
                "point has {} coordinates, model dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        let mut prod = vec![1.0; self.rank()];
        for (i, (net, &xi)) in self.subnets.iter().zip(x).enumerate() {
            let (a, b) = net.interval;
            if !(xi >= a && xi <= b) {
                return Err(TnnError::invalid(format!("coordinate {i} = {xi} outside [{a}, {b}]")));
            }
            let batch = forward_dual(net, &[xi])?;
            for (pj, v) in prod.iter_mut().zip(batch.values.column(0)) {
                *pj *= v;
            }
        }
        Ok(prod.iter().sum())
    }

    /// Values and input-derivatives of every subnetwork on its grid.
    pub fn evaluate_grid(&self, grids: &[Grid1D]) -> Result<Vec<DualBatch>> {
        if grids.len() != self.dim() {
            return Err(TnnError::invalid(format!(
                "{} grids for a {}-dimensional model",
                grids.len(),
                self.dim()
            )));
        }
        for (i, (net, g)) in self.subnets.iter().zip(grids).enumerate() {
            if net.interval != g.interval() {
                return Err(TnnError::invalid(format!(
                    "grid {i} covers {:?} but subnetwork covers {:?}",
                    g.interval(),
                    net.interval
                )));
            }
        }
        self.subnets
            .par_iter()
            .zip(grids.par_iter())
            .map(|(net, g)| forward_dual(net, g.nodes()))
            .collect()
    }

    /// Writes a JSON checkpoint; floats round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let record = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            dim: self.dim(),
            rank: self.rank(),
            model: self.clone(),
        };
        let text = serde_json::to_string(&record).map_err(|e| TnnError::Io(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint_str(&text)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let record: Checkpoint =
            serde_json::from_str(text).map_err(|e| TnnError::Io(format!("bad checkpoint: {e}")))?;
        if record.format != CHECKPOINT_FORMAT {
            return Err(TnnError::Io(format!("unknown checkpoint format {:?}", record.format)));
        }
        record.model.validate()?;
        if record.model.dim() != record.dim || record.model.rank() != record.rank {
            return Err(TnnError::Io("checkpoint header disagrees with model".into()));
        }
        Ok(record.model)
    }
}

const CHECKPOINT_FORMAT: &str = "tnn-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    dim: usize,
    rank: usize,
    model: TnnModel,
}

fn mass_diagonal_mean(batch: &DualBatch, grid: &Grid1D) -> f64 {
    let p = batch.values.nrows();
    let mut total = 0.0;
    for row in batch.values.rows() {
        total += row.iter().zip(grid.weights()).map(|(v, w)| w * v * v).sum::<f64>();
    }
    total / p as f64
}
