//! Small fully connected network with manual backpropagation.
//!
//! Hidden layers use `tanh`, the output layer is linear. Batches are
//! row-major `batch × width` slices. Every output row is accumulated in a fixed
//! order that does not depend on the batch size, so evaluating one sample
//! alone or inside a batch gives bit-identical results.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer `y = x W + b` with `W` stored `n_in × n_out`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(n_in)`, zero bias.
    pub fn random<R: Rng + ?Sized>(n_in: usize, n_out: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (n_in as f64).sqrt();
        let weight = (0..n_in * n_out)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            n_in,
            n_out,
            weight,
            bias: vec![0.0; n_out],
        }
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn apply(&self, input: &[f64], batch: usize, out: &mut [f64]) {
        for r in 0..batch {
            let x = &input[r * self.n_in..(r + 1) * self.n_in];
            let y = &mut out[r * self.n_out..(r + 1) * self.n_out];
            y.copy_from_slice(&self.bias);
            for (k, &xk) in x.iter().enumerate() {
                let w = &self.weight[k * self.n_out..(k + 1) * self.n_out];
                for (yj, &wj) in y.iter_mut().zip(w) {
                    *yj += xk * wj;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_batch`]; `activations[0]` is the
/// input and the last entry is the network output.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub batch: usize,
    activations: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape has input")
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`. Hidden layers get unit gain,
    /// the output layer `output_gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let gain = if l == last { output_gain } else { 1.0 };
                Dense::random(w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Usage("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err(Error::Usage(format!(
                    "layer widths do not chain: {} -> {}",
                    w[0].n_out, w[1].n_in
                )));
            }
        }
        for l in &layers {
            if l.weight.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Usage("layer parameter length mismatch".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<MlpTape> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::Usage(format!(
                "input has {} values, expected {batch} × {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.n_out];
            layer.apply(activations.last().expect("non-empty"), batch, &mut out);
            if l != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(MlpTape { batch, activations })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = self.forward_batch(input, 1)?;
        Ok(tape.activations.pop().expect("non-empty"))
    }

    /// Reverse-mode pass. `d_output` is `∂loss/∂output` for every batch row;
    /// parameter gradients are added into `grad` in [`flatten`](Self::flatten)
    /// order.
    pub fn backward(&self, tape: &MlpTape, d_output: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.n_params());
        assert_eq!(d_output.len(), tape.batch * self.output_dim());
        let batch = tape.batch;
        let last = self.layers.len() - 1;
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.n_params();
        }

        let mut delta = d_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                let h = &tape.activations[l + 1];
                for (d, &y) in delta.iter_mut().zip(h) {
                    *d *= 1.0 - y * y;
                }
            }
            let x = &tape.activations[l];
            let (gw, gb) = grad[offsets[l]..offsets[l] + layer.n_params()]
                .split_at_mut(layer.weight.len());
            for r in 0..batch {
                let dz = &delta[r * layer.n_out..(r + 1) * layer.n_out];
                let xr = &x[r * layer.n_in..(r + 1) * layer.n_in];
                for (k, &xk) in xr.iter().enumerate() {
                    let row = &mut gw[k * layer.n_out..(k + 1) * layer.n_out];
                    for (g, &d) in row.iter_mut().zip(dz) {
                        *g += xk * d;
                    }
                }
                for (g, &d) in gb.iter_mut().zip(dz) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; batch * layer.n_in];
                for r in 0..batch {
                    let dz = &delta[r * layer.n_out..(r + 1) * layer.n_out];
                    let dx = &mut prev[r * layer.n_in..(r + 1) * layer.n_in];
                    for (k, dxk) in dx.iter_mut().enumerate() {
                        let w = &layer.weight[k * layer.n_out..(k + 1) * layer.n_out];
                        *dxk = w.iter().zip(dz).map(|(a, b)| a * b).sum();
                    }
                }
                delta = prev;
            }
        }
    }

    /// Parameters as one vector: per layer, weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line reference evaluation, written independently of `apply`.
    fn reference_forward(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (l, layer) in mlp.layers.iter().enumerate() {
            let mut y = vec![0.0; layer.n_out];
            for (j, yj) in y.iter_mut().enumerate() {
                let mut s = layer.bias[j];
                for (k, hk) in h.iter().enumerate() {
                    s += hk * layer.weight[k * layer.n_out + j];
                }
                *yj = if l + 1 < mlp.layers.len() { s.tanh() } else { s };
            }
            h = y;
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::from_layers(vec![Dense::zeros(3, 5), Dense::zeros(5, 2)]).unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_echoes() {
        let mut d = Dense::zeros(3, 3);
        for i in 0..3 {
            d.weight[i * 3 + i] = 1.0;
        }
        let mlp = Mlp::from_layers(vec![d]).unwrap();
        assert_eq!(mlp.forward(&[0.5, -7.0, 2.25]).unwrap(), vec![0.5, -7.0, 2.25]);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let mlp = Mlp::from_layers(vec![Dense::zeros(3, 2)]).unwrap();
        assert!(matches!(mlp.forward(&[1.0]), Err(Error::Usage(_))));
        assert!(Mlp::from_layers(vec![Dense::zeros(3, 2), Dense::zeros(3, 1)]).is_err());
    }

    #[test]
    fn matches_reference_on_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mlp = Mlp::new(&[14, 64, 64, 4], 1.0, &mut rng);
            let x: Vec<f64> = (0..14).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let ours = mlp.forward(&x).unwrap();
            let reference = reference_forward(&mlp, &x);
            for (a, b) in ours.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_rows_match_single_evaluation_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mlp = Mlp::new(&[6, 16, 3], 1.0, &mut rng);
        let xs: Vec<f64> = (0..6 * 7).map(|_| rng.random::<f64>()).collect();
        let tape = mlp.forward_batch(&xs, 7).unwrap();
        for r in 0..7 {
            let single = mlp.forward(&xs[r * 6..(r + 1) * 6]).unwrap();
            assert_eq!(&tape.output()[r * 3..(r + 1) * 3], single.as_slice());
        }
    }

    fn loss(mlp: &Mlp, xs: &[f64], batch: usize, w: &[f64]) -> f64 {
        let tape = mlp.forward_batch(xs, batch).unwrap();
        tape.output().iter().zip(w).map(|(y, w)| 0.5 * w * y * y + y).sum()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let mut mlp = Mlp::new(&[5, 7, 6, 3], 1.0, &mut rng);
            let batch = 4;
            let xs: Vec<f64> = (0..5 * batch).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let w: Vec<f64> = (0..3 * batch).map(|_| rng.random::<f64>()).collect();
            let tape = mlp.forward_batch(&xs, batch).unwrap();
            let d_out: Vec<f64> = tape.output().iter().zip(&w).map(|(y, w)| w * y + 1.0).collect();
            let mut grad = vec![0.0; mlp.n_params()];
            mlp.backward(&tape, &d_out, &mut grad);

            let base = mlp.flatten();
            let h = 1e-5;
            let mut fd = vec![0.0; base.len()];
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += h;
                mlp.load_flat(&p);
                let up = loss(&mlp, &xs, batch, &w);
                p[i] -= 2.0 * h;
                mlp.load_flat(&p);
                let down = loss(&mlp, &xs, batch, &w);
                fd[i] = (up - down) / (2.0 * h);
            }
            mlp.load_flat(&base);
            let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(diff / norm < 1e-6, "relative error {}", diff / norm);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mlp = Mlp::new(&[4, 8, 2], 1.0, &mut rng);
        let tape = mlp.forward_batch(&[0.1, 0.2, 0.3, 0.4], 1).unwrap();
        let mut grad = vec![0.0; mlp.n_params()];
        mlp.backward(&tape, &[0.0, 0.0], &mut grad);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_least_squares_gradient() {
        // L = ½ Σ_r ‖x_r W + b − t_r‖²  ⇒  ∂L/∂W = Xᵀ(XW + b − T), ∂L/∂b = Σ_r (x_r W + b − t_r)
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mlp = Mlp::new(&[3, 2], 1.0, &mut rng);
        let xs = [1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
        let ts = [0.3, -0.2, 1.0, 2.0];
        let tape = mlp.forward_batch(&xs, 2).unwrap();
        let resid: Vec<f64> = tape.output().iter().zip(&ts).map(|(y, t)| y - t).collect();
        let mut grad = vec![0.0; mlp.n_params()];
        mlp.backward(&tape, &resid, &mut grad);
        for k in 0..3 {
            for j in 0..2 {
                let expected = xs[k] * resid[j] + xs[3 + k] * resid[2 + j];
                assert!((grad[k * 2 + j] - expected).abs() < 1e-14);
            }
        }
        assert!((grad[6] - (resid[0] + resid[2])).abs() < 1e-14);
        assert!((grad[7] - (resid[1] + resid[3])).abs() < 1e-14);
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mlp = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        let mut other = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        other.load_flat(&mlp.flatten());
        assert_eq!(other, mlp);
    }
}
