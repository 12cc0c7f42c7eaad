//! Values, input-derivatives and parameter gradients of a [`SubNetwork`].
//!
//! The input is a scalar, so the forward pass carries a first-order jet
//! `(h, ∂h/∂x)` through every layer. Both halves are stacked into one
//! `2N × width` matrix so each layer costs a single matrix product. The
//! reverse pass transposes that computation over the recorded layer
//! intermediates.

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::error::{Result, TnnError};
use crate::network::SubNetwork;

/// Subnetwork outputs on a batch of points, both `p × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBatch {
    /// `values[[j, n]] = φ_j(x_n)`
    pub values: Array2<f64>,
    /// `dvalues[[j, n]] = φ_j'(x_n)`
    pub dvalues: Array2<f64>,
}

impl DualBatch {
    pub fn rank(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

/// Gradient of one layer's weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradient of one subnetwork, congruent with its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub layers: Vec<LayerGradient>,
}

impl ParamGradient {
    pub fn zeros_like(net: &SubNetwork) -> Self {
        ParamGradient {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// Flattened in the same order as [`SubNetwork::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight *= c;
            l.bias *= c;
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn is_congruent(&self, net: &SubNetwork) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weight.dim() == l.weight.dim() && g.bias.len() == l.bias.len())
    }
}

/// Layer intermediates kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    xs: Vec<f64>,
    /// Stacked input to each layer.
    inputs: Vec<Array2<f64>>,
    /// `σ'(z)` of each hidden layer (top half of the stacked pre-activation).
    slope: Vec<Array2<f64>>,
    /// `σ''(z)·ż` of each hidden layer.
    curve: Vec<Array2<f64>>,
    /// Stacked raw output of the last layer, before scale and boundary factor.
    raw_out: Array2<f64>,
}

fn check_params(net: &SubNetwork) -> Result<()> {
    for (l, layer) in net.layers.iter().enumerate() {
        if let Some(k) = layer.weight.iter().position(|v| !v.is_finite()) {
            return Err(TnnError::numeric(format!("non-finite weight at layer {l}, entry {k}")));
        }
        if let Some(k) = layer.bias.iter().position(|v| !v.is_finite()) {
            return Err(TnnError::numeric(format!("non-finite bias at layer {l}, entry {k}")));
        }
    }
    Ok(())
}

/// Forward pass that also returns the tape needed by [`backward_with_tape`].
pub fn forward_recorded(net: &SubNetwork, xs: &[f64]) -> Result<(DualBatch, Tape)> {
    if let Some(k) = xs.iter().position(|x| !x.is_finite()) {
        return Err(TnnError::numeric(format!("non-finite input at point {k}")));
    }
    check_params(net)?;
    let n = xs.len();
    let last = net.layers.len() - 1;

    let mut h = Array2::<f64>::zeros((2 * n, 1));
    for (k, &x) in xs.iter().enumerate() {
        h[[k, 0]] = x;
        h[[n + k, 0]] = 1.0;
    }

    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut slope = Vec::with_capacity(last);
    let mut curve = Vec::with_capacity(last);
    for (l, layer) in net.layers.iter().enumerate() {
        let mut z = h.dot(&layer.weight.t());
        inputs.push(h);
        if l == last {
            z.slice_mut(s![..n, ..])
                .outer_iter_mut()
                .for_each(|mut row| row += &layer.bias);
            h = z;
            break;
        }
        let width = z.ncols();
        let mut d1 = vec![0.0; n * width];
        let mut d2 = vec![0.0; n * width];
        let act = net.activation;
        let bias = layer.bias.as_slice().expect("contiguous bias");
        if !z.is_standard_layout() {
            z = z.as_standard_layout().into_owned();
        }
        let flat = z.as_slice_mut().expect("standard layout");
        let (top, bot) = flat.split_at_mut(n * width);
        for (((t_row, b_row), s1_row), s2_row) in top
            .chunks_exact_mut(width)
            .zip(bot.chunks_exact_mut(width))
            .zip(d1.chunks_exact_mut(width))
            .zip(d2.chunks_exact_mut(width))
        {
            for c in 0..width {
                let (v, d, dd) = act.eval3(t_row[c] + bias[c]);
                t_row[c] = v;
                s1_row[c] = d;
                s2_row[c] = dd * b_row[c];
                b_row[c] *= d;
            }
        }
        let d1 = Array2::from_shape_vec((n, width), d1).expect("shape");
        let d2 = Array2::from_shape_vec((n, width), d2).expect("shape");
        slope.push(d1);
        curve.push(d2);
        h = z;
    }
    let raw_out = h;

    let p = net.rank();
    let mut values = Array2::<f64>::zeros((p, n));
    let mut dvalues = Array2::<f64>::zeros((p, n));
    let scale = net.output_scale;
    for (k, &x) in xs.iter().enumerate() {
        let (beta, dbeta) = net.boundary_factor(x);
        for j in 0..p {
            let o = raw_out[[k, j]];
            let od = raw_out[[n + k, j]];
            values[[j, k]] = scale * beta * o;
            dvalues[[j, k]] = scale * (dbeta * o + beta * od);
        }
    }
    if values.iter().chain(dvalues.iter()).any(|v| !v.is_finite()) {
        return Err(TnnError::numeric("subnetwork produced non-finite output"));
    }
    let tape = Tape {
        xs: xs.to_vec(),
        inputs,
        slope,
        curve,
        raw_out,
    };
    Ok((DualBatch { values, dvalues }, tape))
}

/// Values and first input-derivatives of `net` at `xs`.
pub fn forward_dual(net: &SubNetwork, xs: &[f64]) -> Result<DualBatch> {
    forward_recorded(net, xs).map(|(b, _)| b)
}

/// Gradient with respect to the parameters of
/// `Σ_{j,n} cot_values[j,n]·φ_j(x_n) + cot_dvalues[j,n]·φ_j'(x_n)`.
pub fn backward(
    net: &SubNetwork,
    xs: &[f64],
    cot_values: &Array2<f64>,
    cot_dvalues: &Array2<f64>,
) -> Result<ParamGradient> {
    let (_, tape) = forward_recorded(net, xs)?;
    backward_with_tape(net, &tape, cot_values, cot_dvalues)
}

pub fn backward_with_tape(
    net: &SubNetwork,
    tape: &Tape,
    cot_values: &Array2<f64>,
    cot_dvalues: &Array2<f64>,
) -> Result<ParamGradient> {
    let n = tape.xs.len();
    let p = net.rank();
    if cot_values.dim() != (p, n) || cot_dvalues.dim() != (p, n) {
        return Err(TnnError::invalid(format!(
            "cotangent shapes {:?}/{:?} do not match output shape ({p}, {n})",
            cot_values.dim(),
            cot_dvalues.dim()
        )));
    }
    if tape.raw_out.dim() != (2 * n, p) {
        return Err(TnnError::invalid("tape was recorded for a different network"));
    }

    // Pull back through output scale and boundary factor.
    let scale = net.output_scale;
    let mut g = Array2::<f64>::zeros((2 * n, p));
    for (k, &x) in tape.xs.iter().enumerate() {
        let (beta, dbeta) = net.boundary_factor(x);
        for j in 0..p {
            let cv = cot_values[[j, k]];
            let cd = cot_dvalues[[j, k]];
            g[[k, j]] = scale * (beta * cv + dbeta * cd);
            g[[n + k, j]] = scale * beta * cd;
        }
    }

    let mut layers = Vec::with_capacity(net.layers.len());
    for l in (0..net.layers.len()).rev() {
        let input = &tape.inputs[l];
        let weight = g.t().dot(input);
        let bias = g.slice(s![..n, ..]).sum_axis(Axis(0));
        layers.push(LayerGradient { weight, bias });
        if l == 0 {
            break;
        }
        let mut cot_h = g.dot(&net.layers[l].weight);
        let (mut c_top, mut c_bot) = cot_h.view_mut().split_at(Axis(0), n);
        Zip::from(&mut c_top)
            .and(&mut c_bot)
            .and(&tape.slope[l - 1])
            .and(&tape.curve[l - 1])
            .for_each(|ca, cda, &d1, &d2dz| {
                let top = *ca * d1 + *cda * d2dz;
                *cda *= d1;
                *ca = top;
            });
        g = cot_h;
    }
    layers.reverse();
    Ok(ParamGradient { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Boundary, Layer};
    use ndarray::array;

    fn single_layer(w: f64, b: f64) -> SubNetwork {
        // 1 -> 1 hidden (tanh) -> 1 output with identity readout
        SubNetwork {
            interval: (-1.0, 1.0),
            layers: vec![
                Layer {
                    weight: array![[w]],
                    bias: array![b],
                },
                Layer {
                    weight: array![[1.0]],
                    bias: array![0.0],
                },
            ],
            activation: Activation::Tanh,
            boundary: Boundary::None,
            output_scale: 1.0,
        }
    }

    fn random_net(seed: u64, activation: Activation, boundary: Boundary) -> SubNetwork {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dims = [1usize, 5, 4, 3];
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Array2::from_shape_fn((w[1], w[0]), |_| rng.gen_range(-1.0..1.0)),
                bias: Array1::from_shape_fn(w[1], |_| rng.gen_range(-1.0..1.0)),
            })
            .collect();
        SubNetwork {
            interval: (-0.5, 1.5),
            layers,
            activation,
            boundary,
            output_scale: 1.3,
        }
    }

    #[test]
    fn single_layer_closed_form() {
        let (w, b) = (0.7, -0.2);
        let net = single_layer(w, b);
        let xs = [-0.5, 0.0, 0.3, 0.9];
        let out = forward_dual(&net, &xs).unwrap();
        for (k, &x) in xs.iter().enumerate() {
            let t = (w * x + b).tanh();
            assert!((out.values[[0, k]] - t).abs() < 1e-15);
            assert!((out.dvalues[[0, k]] - w * (1.0 - t * t)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_network_gives_zero() {
        let net = single_layer(0.0, 0.0);
        let out = forward_dual(&net, &[0.1, 0.5]).unwrap();
        assert!(out.values.iter().chain(out.dvalues.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_inputs_and_params_are_reported() {
        let net = single_layer(0.3, 0.1);
        let err = forward_dual(&net, &[0.1, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("point 1"));
        let mut bad = single_layer(0.3, 0.1);
        bad.layers[1].weight[[0, 0]] = f64::INFINITY;
        let err = forward_dual(&bad, &[0.1]).unwrap_err();
        assert!(err.to_string().contains("layer 1"));
    }

    #[test]
    fn dvalues_match_finite_differences() {
        for (seed, act, bd) in [
            (1, Activation::Tanh, Boundary::None),
            (2, Activation::Sine, Boundary::None),
            (3, Activation::Tanh, Boundary::Dirichlet),
        ] {
            let net = random_net(seed, act, bd);
            let xs = [-0.3, 0.2, 0.77, 1.2];
            let h = 1e-5;
            let out = forward_dual(&net, &xs).unwrap();
            let plus: Vec<f64> = xs.iter().map(|x| x + h).collect();
            let minus: Vec<f64> = xs.iter().map(|x| x - h).collect();
            let (fp, fm) = (forward_dual(&net, &plus).unwrap(), forward_dual(&net, &minus).unwrap());
            for j in 0..3 {
                for k in 0..xs.len() {
                    let fd = (fp.values[[j, k]] - fm.values[[j, k]]) / (2.0 * h);
                    let an = out.dvalues[[j, k]];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-2), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let net = random_net(4, Activation::Tanh, Boundary::Dirichlet);
        let xs = [0.0, 0.5, 1.0];
        let z = Array2::zeros((3, 3));
        let g = backward(&net, &xs, &z, &z).unwrap();
        assert_eq!(g.norm_sqr(), 0.0);
        assert!(g.is_congruent(&net));
    }

    #[test]
    fn backward_rejects_bad_shapes() {
        let net = random_net(4, Activation::Tanh, Boundary::None);
        let z = Array2::zeros((3, 2));
        assert!(matches!(
            backward(&net, &[0.0, 0.5, 1.0], &z, &z),
            Err(TnnError::InvalidArgument(_))
        ));
    }

    fn contracted(net: &SubNetwork, xs: &[f64], cv: &Array2<f64>, cd: &Array2<f64>) -> f64 {
        let out = forward_dual(net, xs).unwrap();
        (&out.values * cv).sum() + (&out.dvalues * cd).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, act, bd) in [
            (5, Activation::Tanh, Boundary::Dirichlet),
            (6, Activation::Sine, Boundary::None),
        ] {
            let net = random_net(seed, act, bd);
            let xs = [-0.4, 0.1, 0.6, 1.1, 1.4];
            let cv = Array2::from_shape_fn((3, 5), |(j, k)| ((j * 5 + k) as f64 * 0.37).sin());
            let cd = Array2::from_shape_fn((3, 5), |(j, k)| ((j * 7 + k) as f64 * 0.21).cos());
            let grad = backward(&net, &xs, &cv, &cd).unwrap().flatten();
            let theta = net.flat_params();
            let h = 1e-5;
            for (i, &g) in grad.iter().enumerate() {
                let mut tp = theta.clone();
                tp[i] += h;
                let mut tm = theta.clone();
                tm[i] -= h;
                let mut np = net.clone();
                np.set_flat_params(&tp).unwrap();
                let mut nm = net.clone();
                nm.set_flat_params(&tm).unwrap();
                let fd = (contracted(&np, &xs, &cv, &cd) - contracted(&nm, &xs, &cv, &cd)) / (2.0 * h);
                assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-3), "param {i}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn backward_is_linear_in_cotangent() {
        let net = random_net(8, Activation::Tanh, Boundary::Dirichlet);
        let xs = [-0.2, 0.4, 0.9];
        let c1 = Array2::from_shape_fn((3, 3), |(j, k)| (j as f64 - k as f64) * 0.3);
        let c2 = Array2::from_shape_fn((3, 3), |(j, k)| (j * k) as f64 * 0.1 + 0.2);
        let d1 = Array2::from_shape_fn((3, 3), |(j, k)| (j + k) as f64 * 0.05);
        let d2 = Array2::from_shape_fn((3, 3), |(j, _)| -(j as f64));
        let g1 = backward(&net, &xs, &c1, &d1).unwrap().flatten();
        let g2 = backward(&net, &xs, &c2, &d2).unwrap().flatten();
        let g12 = backward(&net, &xs, &(&c1 + &c2), &(&d1 + &d2)).unwrap().flatten();
        for ((a, b), c) in g1.iter().zip(&g2).zip(&g12) {
            assert!((a + b - c).abs() < 1e-12 * (1.0 + c.abs()));
        }
    }
}
