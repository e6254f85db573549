//! Minimal dense network stack: affine layers with ReLU hidden activations,
//! analytic backward passes, and RMSProp/AdamW updates. There is no general
//! autodiff; the solver gradient is injected analytically upstream.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum NeuralError {
    #[error("input dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache does not match these parameters")]
    StaleCache,
    #[error("gradient shapes do not match parameter shapes")]
    ShapeMismatch,
}

/// Output head applied after the last affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    Identity,
    Softplus,
    Sigmoid,
}

/// Numerically stable softplus, strictly positive for every finite input.
pub fn softplus(x: f64) -> f64 {
    let v = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    v.max(f64::MIN_POSITIVE)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Softplus => softplus(z),
            OutputActivation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative with respect to the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Softplus => sigmoid(z),
            OutputActivation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

/// One affine layer, weights stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Dense multilayer perceptron with ReLU hidden activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
    output: OutputActivation,
}

impl MlpParams {
    /// He-uniform initialization over the given layer dimensions
    /// (`dims = [input, hidden.., output]`).
    pub fn new<R: Rng + ?Sized>(dims: &[usize], output: OutputActivation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                Layer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights: (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers, output }
    }

    /// All-zero parameters (used in tests and as gradient scratch).
    pub fn zeros(dims: &[usize], output: OutputActivation) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameter tensors in a fixed order (per layer: weights, bias).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    /// Forward pass; the cache keeps everything backward needs.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NeuralError> {
        if input.len() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers);
        let mut act: Vec<f64> = input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *zo += row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
            }
            let a: Vec<f64> = if li + 1 == n_layers {
                z.iter().map(|&v| self.output.apply(v)).collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre.push(z);
            post.push(a.clone());
            act = a;
        }
        let output = act;
        Ok((
            output,
            ForwardCache { input: input.to_vec(), pre, post },
        ))
    }

    /// Exact gradients of `<grad_output, output>` with respect to parameters
    /// and input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
    ) -> Result<(MlpGrads, Vec<f64>), NeuralError> {
        self.check_cache(cache)?;
        if grad_output.len() != self.output_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.output_dim(),
                got: grad_output.len(),
            });
        }
        let last = self.layers.len() - 1;
        let gz: Vec<f64> = grad_output
            .iter()
            .zip(&cache.pre[last])
            .map(|(&g, &z)| g * self.output.derivative(z))
            .collect();
        self.backprop_from(cache, gz)
    }

    /// Backward pass given the gradient with respect to the final
    /// pre-activation (before the output head). Used where the head and loss
    /// combine into a more stable fused gradient.
    pub fn backward_from_preactivation(
        &self,
        cache: &ForwardCache,
        grad_preact: &[f64],
    ) -> Result<(MlpGrads, Vec<f64>), NeuralError> {
        self.check_cache(cache)?;
        if grad_preact.len() != self.output_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.output_dim(),
                got: grad_preact.len(),
            });
        }
        self.backprop_from(cache, grad_preact.to_vec())
    }

    fn backprop_from(
        &self,
        cache: &ForwardCache,
        mut gz: Vec<f64>,
    ) -> Result<(MlpGrads, Vec<f64>), NeuralError> {
        let mut grads = MlpGrads::zeros_like(self);
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let below: &[f64] = if li == 0 { &cache.input } else { &cache.post[li - 1] };
            let gl = &mut grads.layers[li];
            for (o, &g) in gz.iter().enumerate() {
                gl.1[o] += g;
                let row = &mut gl.0[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &a) in row.iter_mut().zip(below) {
                    *w += g * a;
                }
            }
            let mut ga = vec![0.0; layer.in_dim];
            for (o, &g) in gz.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gai, &w) in ga.iter_mut().zip(row) {
                    *gai += g * w;
                }
            }
            if li > 0 {
                // Chain through the ReLU of the layer below.
                gz = ga
                    .iter()
                    .zip(&cache.pre[li - 1])
                    .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                    .collect();
            } else {
                return Ok((grads, ga));
            }
        }
        unreachable!("at least one layer");
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<(), NeuralError> {
        let ok = cache.input.len() == self.input_dim()
            && cache.pre.len() == self.layers.len()
            && cache
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.len() == l.out_dim);
        if ok {
            Ok(())
        } else {
            Err(NeuralError::StaleCache)
        }
    }
}

/// Intermediate activations from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Final pre-activations (logits for a Sigmoid head).
    pub fn output_preactivation(&self) -> &[f64] {
        self.pre.last().expect("nonempty network")
    }
}

/// Parameter gradients mirroring [`MlpParams`]: per layer (weights, bias).
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += scale * y;
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for x in &mut l.0 {
                *x *= factor;
            }
            for x in &mut l.1 {
                *x *= factor;
            }
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.0.as_slice());
            out.push(l.1.as_slice());
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    RmsProp,
    AdamW,
}

/// Optimizer hyperparameters; defaults match the usual published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Squared-gradient decay (RMSProp alpha / AdamW beta2).
    pub rms_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerHyper {
    pub fn rmsprop(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::RmsProp,
            learning_rate,
            rms_decay: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            learning_rate,
            rms_decay: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        match kind {
            OptimizerKind::RmsProp => {
                let mut h = Self::rmsprop(learning_rate);
                h.weight_decay = weight_decay;
                h
            }
            OptimizerKind::AdamW => Self::adamw(learning_rate, weight_decay),
        }
    }
}

/// Per-parameter moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub hyper: OptimizerHyper,
    pub step: u64,
    sq: Vec<Vec<f64>>,
    momentum: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn for_mlp(hyper: OptimizerHyper, params: &MlpParams) -> Self {
        Self::for_shapes(hyper, &params.tensors().iter().map(|t| t.len()).collect::<Vec<_>>())
    }

    pub fn for_shapes(hyper: OptimizerHyper, shapes: &[usize]) -> Self {
        Self {
            hyper,
            step: 0,
            sq: shapes.iter().map(|&s| vec![0.0; s]).collect(),
            momentum: shapes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Apply one update to an MLP given accumulated gradients.
    pub fn step_mlp(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<(), NeuralError> {
        let grad_tensors = grads.tensors();
        let mut param_tensors = params.tensors_mut();
        self.step_tensors(&mut param_tensors, &grad_tensors)
    }

    /// Apply one update to a flat parameter vector.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NeuralError> {
        self.step_tensors(&mut [params], &[grads])
    }

    fn step_tensors(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
    ) -> Result<(), NeuralError> {
        if params.len() != self.sq.len() || grads.len() != self.sq.len() {
            return Err(NeuralError::ShapeMismatch);
        }
        for ((p, g), (sq, m)) in params
            .iter()
            .zip(grads)
            .zip(self.sq.iter().zip(&self.momentum))
        {
            if p.len() != sq.len() || g.len() != sq.len() || m.len() != sq.len() {
                return Err(NeuralError::ShapeMismatch);
            }
        }
        self.step += 1;
        let h = self.hyper;
        match h.kind {
            OptimizerKind::RmsProp => {
                for ((p, g), sq) in params.iter_mut().zip(grads).zip(self.sq.iter_mut()) {
                    for i in 0..p.len() {
                        sq[i] = h.rms_decay * sq[i] + (1.0 - h.rms_decay) * g[i] * g[i];
                        let mut upd = g[i] / (sq[i].sqrt() + h.epsilon);
                        if h.weight_decay != 0.0 {
                            upd += h.weight_decay * p[i];
                        }
                        p[i] -= h.learning_rate * upd;
                    }
                }
            }
            OptimizerKind::AdamW => {
                let t = self.step as i32;
                let bc1 = 1.0 - h.beta1.powi(t);
                let bc2 = 1.0 - h.beta2.powi(t);
                for (((p, g), sq), m) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.sq.iter_mut())
                    .zip(self.momentum.iter_mut())
                {
                    for i in 0..p.len() {
                        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
                        sq[i] = h.beta2 * sq[i] + (1.0 - h.beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = sq[i] / bc2;
                        let upd = m_hat / (v_hat.sqrt() + h.epsilon) + h.weight_decay * p[i];
                        p[i] -= h.learning_rate * upd;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    /// Independent forward reimplementation: naive nested loops over an
    /// explicit weight-matrix view.
    fn forward_oracle(params: &MlpParams, input: &[f64]) -> Vec<f64> {
        let mut act = input.to_vec();
        let n = params.layers().len();
        for (li, layer) in params.layers().iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let mut s = layer.bias[o];
                for i in 0..layer.in_dim {
                    s += layer.weights[o * layer.in_dim + i] * act[i];
                }
                out[o] = if li + 1 == n {
                    params.output_activation().apply(s)
                } else {
                    s.max(0.0)
                };
            }
            act = out;
        }
        act
    }

    fn scalar_loss(params: &MlpParams, input: &[f64], grad_output: &[f64]) -> f64 {
        let (out, _) = params.forward(input).unwrap();
        out.iter().zip(grad_output).map(|(o, g)| o * g).sum()
    }

    /// Central finite differences over every parameter.
    fn fd_grads(params: &MlpParams, input: &[f64], grad_output: &[f64], h: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let n_tensors = params.tensors().len();
        for ti in 0..n_tensors {
            let len = params.tensors()[ti].len();
            let mut g = vec![0.0; len];
            for i in 0..len {
                let mut plus = params.clone();
                plus.tensors_mut()[ti][i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti][i] -= h;
                g[i] = (scalar_loss(&plus, input, grad_output)
                    - scalar_loss(&minus, input, grad_output))
                    / (2.0 * h);
            }
            out.push(g);
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    #[test]
    fn zero_net_identity_head_outputs_zero() {
        let params = MlpParams::zeros(&[3, 4, 2], OutputActivation::Identity);
        let (out, _) = params.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_weights_softplus_of_zero_is_ln_two() {
        let mut params = MlpParams::zeros(&[2, 2], OutputActivation::Softplus);
        // Identity weight matrix.
        {
            let mut t = params.tensors_mut();
            t[0][0] = 1.0;
            t[0][3] = 1.0;
        }
        let (out, _) = params.forward(&[0.0, 0.0]).unwrap();
        for o in out {
            assert!((o - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_independent_recomputation() {
        let mut rng = StdRng::seed_from_u64(1);
        for &head in &[
            OutputActivation::Identity,
            OutputActivation::Softplus,
            OutputActivation::Sigmoid,
        ] {
            let params = MlpParams::new(&[5, 7, 3], head, &mut rng);
            let input: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 0.3).collect();
            let (out, _) = params.forward(&input).unwrap();
            let oracle = forward_oracle(&params, &input);
            for (a, b) in out.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let params = MlpParams::zeros(&[3, 2], OutputActivation::Identity);
        assert!(matches!(
            params.forward(&[1.0, 2.0]),
            Err(NeuralError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let mut rng = StdRng::seed_from_u64(2);
        let params = MlpParams::new(&[4, 5, 3], OutputActivation::Softplus, &mut rng);
        let (_, cache) = params.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let (grads, ginput) = params.backward(&cache, &[0.0, 0.0, 0.0]).unwrap();
        assert!(ginput.iter().all(|&g| g == 0.0));
        for t in grads.tensors() {
            assert!(t.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn linear_single_layer_grad_input_is_w_transpose() {
        let mut rng = StdRng::seed_from_u64(3);
        let params = MlpParams::new(&[3, 2], OutputActivation::Identity, &mut rng);
        let input = [0.3, -0.7, 0.2];
        let (_, cache) = params.forward(&input).unwrap();
        let go = [1.5, -0.5];
        let (_, gi) = params.backward(&cache, &go).unwrap();
        let l = &params.layers()[0];
        for j in 0..3 {
            let expect: f64 = (0..2).map(|o| l.weights[o * 3 + j] * go[o]).sum();
            assert!((gi[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Gradient check over all heads and several seeds.
        for seed in 0..10u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            for &head in &[
                OutputActivation::Identity,
                OutputActivation::Softplus,
                OutputActivation::Sigmoid,
            ] {
                let params = MlpParams::new(&[4, 6, 5, 3], head, &mut rng);
                let input: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let go: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (_, cache) = params.forward(&input).unwrap();
                let (grads, _) = params.backward(&cache, &go).unwrap();
                let fd = fd_grads(&params, &input, &go, 1e-5);
                for (a, b) in grads.tensors().iter().zip(&fd) {
                    assert!(
                        rel_err(a, b) < 1e-4,
                        "seed {seed}, head {head:?}: rel err {}",
                        rel_err(a, b)
                    );
                }
            }
        }
    }

    #[test]
    fn softplus_strictly_positive_everywhere() {
        for &x in &[-1e6, -800.0, -50.0, 0.0, 3.0, 700.0, 1e6] {
            assert!(softplus(x) > 0.0, "softplus({x}) must be positive");
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = StdRng::seed_from_u64(4);
        let a = MlpParams::new(&[3, 2], OutputActivation::Identity, &mut rng);
        let b = MlpParams::new(&[4, 2], OutputActivation::Identity, &mut rng);
        let (_, cache) = a.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(b.backward(&cache, &[1.0, 1.0]).unwrap_err(), NeuralError::StaleCache);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut params = MlpParams::new(&[3, 4, 2], OutputActivation::Identity, &mut rng);
        let before = params.clone();
        let grads = MlpGrads::zeros_like(&params);
        for kind in [OptimizerKind::RmsProp, OptimizerKind::AdamW] {
            let mut state = OptimizerState::for_mlp(OptimizerHyper::new(kind, 0.1, 0.0), &params);
            state.step_mlp(&mut params, &grads).unwrap();
            assert_eq!(params, before, "{kind:?} with zero grads moved parameters");
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut rng = StdRng::seed_from_u64(6);
        let mut params = MlpParams::new(&[3, 2], OutputActivation::Identity, &mut rng);
        let before = params.clone();
        let mut grads = MlpGrads::zeros_like(&params);
        grads.layers[0].0.iter_mut().for_each(|g| *g = 1.0);
        let mut state =
            OptimizerState::for_mlp(OptimizerHyper::adamw(0.0, 0.01), &params);
        state.step_mlp(&mut params, &grads).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adamw_matches_hand_computed_two_step_trace() {
        // Single scalar parameter p=1, gradient 0.5 then -0.25, lr=0.1,
        // beta1=0.9, beta2=0.999, eps=1e-8, weight decay 0.01. The expected
        // values follow the decoupled-weight-decay update:
        //   p <- p - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * p )
        let hyper = OptimizerHyper::adamw(0.1, 0.01);
        let mut state = OptimizerState::for_shapes(hyper, &[1]);
        let mut p = [1.0f64];

        // Step 1: g = 0.5
        // m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
        // upd = 0.5/(0.5+1e-8) + 0.01*1 = 0.99999998 + 0.01
        state.step_flat(&mut p, &[0.5]).unwrap();
        let m1: f64 = 0.1 * 0.5;
        let v1: f64 = 0.001 * 0.25;
        let p1 = 1.0 - 0.1 * ((m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8) + 0.01 * 1.0);
        assert!((p[0] - p1).abs() < 1e-12, "{} vs {p1}", p[0]);

        // Step 2: g = -0.25
        let m2 = 0.9 * m1 + 0.1 * (-0.25);
        let v2 = 0.999 * v1 + 0.001 * 0.0625;
        let bc1 = 1.0 - 0.9f64.powi(2);
        let bc2 = 1.0 - 0.999f64.powi(2);
        let p2 = p1 - 0.1 * ((m2 / bc1) / ((v2 / bc2).sqrt() + 1e-8) + 0.01 * p1);
        state.step_flat(&mut p, &[-0.25]).unwrap();
        assert!((p[0] - p2).abs() < 1e-12, "{} vs {p2}", p[0]);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn rmsprop_single_step_matches_formula() {
        let hyper = OptimizerHyper::rmsprop(0.01);
        let mut state = OptimizerState::for_shapes(hyper, &[1]);
        let mut p = [2.0f64];
        state.step_flat(&mut p, &[4.0]).unwrap();
        let sq: f64 = 0.01 * 16.0;
        let expect = 2.0 - 0.01 * 4.0 / (sq.sqrt() + 1e-8);
        assert!((p[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let params = MlpParams::zeros(&[3, 2], OutputActivation::Identity);
        let other = MlpParams::zeros(&[3, 4, 2], OutputActivation::Identity);
        let mut state =
            OptimizerState::for_mlp(OptimizerHyper::rmsprop(0.1), &other);
        let mut p = params.clone();
        let g = MlpGrads::zeros_like(&params);
        assert_eq!(state.step_mlp(&mut p, &g).unwrap_err(), NeuralError::ShapeMismatch);
    }
}
