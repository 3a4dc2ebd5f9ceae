use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mean_std, ModelError, PointBlock, Verdict};

/// Input, hidden `[64, 32, 32, 64]` with 32-wide boundary layers, output.
pub const AE_LAYOUT: [usize; 8] = [32, 32, 64, 32, 32, 64, 32, 32];

/// Fully connected autoencoder: ReLU on hidden layers, linear output,
/// trained by plain gradient descent on mean squared reconstruction error.
#[derive(Debug, Clone, PartialEq)]
pub struct AeState {
    pub layer_dims: Vec<usize>,
    /// Per layer, `out × in` row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub learning_rate: f64,
    /// Per-point errors above this are outliers.
    pub threshold: f64,
}

/// Gradient buffers shaped like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AeGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl AeState {
    /// Glorot-uniform weights and zero biases.
    pub fn new(layer_dims: &[usize], learning_rate: f64, seed: u64) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output layers");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            learning_rate,
            threshold: f64::INFINITY,
        }
    }

    pub fn zeros(layer_dims: &[usize]) -> Self {
        let mut s = Self::new(layer_dims, 0.0, 0);
        s.weights.iter_mut().for_each(|w| w.fill(0.0));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn layers(&self) -> usize {
        self.weights.len()
    }

    /// Pre-activations and activations for one point. `acts[0]` is the
    /// input; the last entry is the linear output.
    fn forward_point(&self, x: &[f64], pre: &mut [Vec<f64>], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(x);
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[l];
            let (before, after) = acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = self.biases[l][o] + row.iter().zip(input.iter()).map(|(a, b)| a * b).sum::<f64>();
                pre[l][o] = z;
                out[o] = if l == last { z } else { z.max(0.0) };
            }
        }
    }

    fn buffers(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let pre = self.layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        let acts = self.layer_dims.iter().map(|&d| vec![0.0; d]).collect();
        (pre, acts)
    }

    fn check(&self, block: &PointBlock) -> Result<(), ModelError> {
        if !self.is_finite() {
            return Err(ModelError::NonFiniteWeights);
        }
        block.check_dim(self.input_dim())
    }

    /// Reconstructions and per-point mean squared error.
    pub fn forward(&self, block: &PointBlock) -> Result<(PointBlock, Vec<f64>), ModelError> {
        self.check(block)?;
        let d = self.input_dim();
        let (mut pre, mut acts) = self.buffers();
        let mut recon = Vec::with_capacity(block.len() * d);
        let mut errors = Vec::with_capacity(block.len());
        for x in block.rows() {
            self.forward_point(x, &mut pre, &mut acts);
            let out = acts.last().unwrap();
            errors.push(point_error(out, x));
            recon.extend_from_slice(out);
        }
        let recon = PointBlock::new(*self.layer_dims.last().unwrap(), recon)
            .map_err(|_| ModelError::NonFiniteWeights)?;
        Ok((recon, errors))
    }

    /// Weighted mean reconstruction loss `Σ wᵢ eᵢ / Σ wᵢ`, its gradient,
    /// and the per-point errors. Gradients are accumulated unnormalized in
    /// point order and divided by `Σ wᵢ` once at the end.
    pub fn loss_and_gradient(
        &self,
        block: &PointBlock,
        sample_weights: Option<&[f64]>,
    ) -> Result<(f64, AeGradients, Vec<f64>), ModelError> {
        self.check(block)?;
        if let Some(w) = sample_weights {
            if w.len() != block.len() {
                return Err(ModelError::InvalidArgument(
                    "one weight per point required".into(),
                ));
            }
        }
        let mut grad = AeGradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        };
        let (mut pre, mut acts) = self.buffers();
        let mut deltas: Vec<Vec<f64>> = self.layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        let d_out = *self.layer_dims.last().unwrap() as f64;
        let mut errors = Vec::with_capacity(block.len());
        let mut weighted_loss = 0.0;
        let mut total_weight = 0.0;

        for (i, x) in block.rows().enumerate() {
            let w_i = sample_weights.map_or(1.0, |w| w[i]);
            self.forward_point(x, &mut pre, &mut acts);
            let out = acts.last().unwrap();
            let e = point_error(out, x);
            errors.push(e);
            weighted_loss += w_i * e;
            total_weight += w_i;

            let last = self.layers() - 1;
            for (k, dk) in deltas[last].iter_mut().enumerate() {
                *dk = w_i * (2.0 / d_out) * (out[k] - x[k]);
            }
            for l in (0..self.layers()).rev() {
                let n_in = self.layer_dims[l];
                let input = &acts[l];
                {
                    let gw = &mut grad.weights[l];
                    let gb = &mut grad.biases[l];
                    for (o, &dl) in deltas[l].iter().enumerate() {
                        gb[o] += dl;
                        if dl != 0.0 {
                            for (g, a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                                *g += dl * a;
                            }
                        }
                    }
                }
                if l > 0 {
                    let (lower, upper) = deltas.split_at_mut(l);
                    let below = &mut lower[l - 1];
                    let here = &upper[0];
                    let w = &self.weights[l];
                    for (j, b) in below.iter_mut().enumerate() {
                        if pre[l - 1][j] <= 0.0 {
                            *b = 0.0;
                            continue;
                        }
                        let mut s = 0.0;
                        for (o, &dl) in here.iter().enumerate() {
                            s += w[o * n_in + j] * dl;
                        }
                        *b = s;
                    }
                }
            }
        }
        if total_weight <= 0.0 {
            return Err(ModelError::InvalidArgument("total sample weight is zero".into()));
        }
        let scale = 1.0 / total_weight;
        for g in grad.weights.iter_mut().chain(grad.biases.iter_mut()) {
            g.iter_mut().for_each(|v| *v *= scale);
        }
        Ok((weighted_loss / total_weight, grad, errors))
    }

    /// Mean squared reconstruction loss of the block.
    pub fn loss(&self, block: &PointBlock) -> Result<f64, ModelError> {
        let (_, errors) = self.forward(block)?;
        Ok(errors.iter().sum::<f64>() / errors.len().max(1) as f64)
    }

    /// One gradient-descent step on the block's mean loss. Returns the loss
    /// before the step. The threshold becomes mean + 3σ of the batch errors.
    pub fn train_step(&mut self, block: &PointBlock, learning_rate: f64) -> Result<f64, ModelError> {
        self.train_step_weighted(block, None, learning_rate)
    }

    pub fn train_step_weighted(
        &mut self,
        block: &PointBlock,
        sample_weights: Option<&[f64]>,
        learning_rate: f64,
    ) -> Result<f64, ModelError> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(ModelError::InvalidArgument(format!(
                "learning rate {learning_rate} must be finite and >= 0"
            )));
        }
        if block.is_empty() {
            return Ok(0.0);
        }
        let (loss, grad, errors) = self.loss_and_gradient(block, sample_weights)?;
        if learning_rate > 0.0 {
            let mut next_w = self.weights.clone();
            let mut next_b = self.biases.clone();
            for (p, g) in next_w.iter_mut().zip(&grad.weights).chain(next_b.iter_mut().zip(&grad.biases)) {
                for (pv, gv) in p.iter_mut().zip(g) {
                    *pv -= learning_rate * gv;
                }
            }
            let finite = next_w
                .iter()
                .chain(&next_b)
                .all(|v| v.iter().all(|x| x.is_finite()));
            if !finite {
                return Err(ModelError::NonFiniteWeights);
            }
            self.weights = next_w;
            self.biases = next_b;
        }
        let (mean, std) = match sample_weights {
            None => mean_std(&errors),
            Some(w) => weighted_mean_std(&errors, w),
        };
        self.threshold = mean + 3.0 * std;
        Ok(loss)
    }

    pub fn score(&self, block: &PointBlock) -> Result<Vec<Verdict>, ModelError> {
        let (_, errors) = self.forward(block)?;
        Ok(errors
            .into_iter()
            .map(|e| Verdict {
                score: e,
                is_outlier: e > self.threshold,
            })
            .collect())
    }

    /// Flat view of every parameter, weights then biases, layer by layer.
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for w in &mut self.weights {
            if index < w.len() {
                return &mut w[index];
            }
            index -= w.len();
        }
        for b in &mut self.biases {
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }
}

impl AeGradients {
    /// Same flat order as [`AeState::parameter_mut`].
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter().copied())
            .collect()
    }
}

fn point_error(out: &[f64], x: &[f64]) -> f64 {
    out.iter().zip(x).map(|(o, v)| (o - v) * (o - v)).sum::<f64>() / x.len() as f64
}

fn weighted_mean_std(xs: &[f64], w: &[f64]) -> (f64, f64) {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = xs
        .iter()
        .zip(w)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum::<f64>()
        / total;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlops::{generate_block, GeneratorSpec};

    #[test]
    fn parameter_count_matches_layout() {
        let expected: usize = AE_LAYOUT.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert_eq!(expected, 11_552);
        assert_eq!(AeState::new(&AE_LAYOUT, 0.01, 0).parameter_count(), 11_552);
    }

    #[test]
    fn zero_model_zero_input() {
        let s = AeState::zeros(&AE_LAYOUT);
        let b = PointBlock::zeros(3, 32);
        let (recon, err) = s.forward(&b).unwrap();
        assert!(recon.values().iter().all(|&v| v == 0.0));
        assert_eq!(err, vec![0.0; 3]);
    }

    #[test]
    fn non_finite_weights_rejected() {
        let mut s = AeState::new(&AE_LAYOUT, 0.01, 0);
        s.weights[2][5] = f64::NAN;
        assert_eq!(
            s.forward(&PointBlock::zeros(1, 32)).unwrap_err(),
            ModelError::NonFiniteWeights
        );
    }

    #[test]
    fn divergence_is_an_error() {
        let mut s = AeState::new(&AE_LAYOUT, 0.01, 0);
        let b = PointBlock::new(32, vec![1e150; 64]).unwrap();
        let before = s.clone();
        assert_eq!(s.train_step(&b, 1e10), Err(ModelError::NonFiniteWeights));
        assert_eq!(s.weights, before.weights);
    }

    #[test]
    fn zero_learning_rate_only_moves_threshold() {
        let (b, _) = generate_block(&GeneratorSpec::with_seed(1), 20);
        let mut s = AeState::new(&AE_LAYOUT, 0.01, 3);
        let before = s.clone();
        s.train_step(&b, 0.0).unwrap();
        assert_eq!(s.weights, before.weights);
        assert_eq!(s.biases, before.biases);
        assert!(s.threshold.is_finite());
        assert!(s.train_step(&b, -1.0).is_err());
    }

    #[test]
    fn weighted_duplicates_match() {
        let (b, _) = generate_block(&GeneratorSpec::with_seed(4), 3);
        let (x, y) = (b.row(0).to_vec(), b.row(1).to_vec());
        let dup = PointBlock::from_rows(&[x.clone(), x.clone(), y.clone()]).unwrap();
        let dedup = PointBlock::from_rows(&[x, y]).unwrap();
        let mut a = AeState::new(&AE_LAYOUT, 0.01, 9);
        let mut c = a.clone();
        a.train_step(&dup, 0.001).unwrap();
        c.train_step_weighted(&dedup, Some(&[2.0, 1.0]), 0.001).unwrap();
        for (wa, wc) in a.weights.iter().flatten().zip(c.weights.iter().flatten()) {
            assert!((wa - wc).abs() <= 1e-12);
        }
        for (ba, bc) in a.biases.iter().flatten().zip(c.biases.iter().flatten()) {
            assert!((ba - bc).abs() <= 1e-12);
        }
    }
}
