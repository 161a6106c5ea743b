//! Fully connected networks with rectified-linear hidden layers, a linear
//! output layer, and per-parameter Adam state.

use rand::Rng;

use super::{NeuralError, Result};

/// Optimizer and target-tracking hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Polyak averaging rate for target networks.
    pub polyak: f64,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(NeuralError::InvalidConfig("learning rate must be positive"));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(NeuralError::InvalidConfig("polyak rate must lie in (0,1]"));
        }
        Ok(())
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, polyak: 5e-3 }
    }
}

/// First/second moment accumulators with a shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One bias-corrected Adam update in place. Non-finite gradients abort
    /// the update (parameters and moments untouched, counter unchanged).
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], cfg: &OptimConfig) -> Result<()> {
        if grads.len() != params.len() {
            return Err(NeuralError::DimensionMismatch { expected: params.len(), got: grads.len() });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NeuralError::NonFiniteGradient);
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grads[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

/// Parameter gradients plus the gradient with respect to the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Activations recorded by a forward pass, sufficient for exact
/// backpropagation. Tied to the parameter version that produced it.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer (the raw network input, then each hidden
    /// activation).
    layer_inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Multilayer perceptron over flat `f64` parameters. Layout per layer:
/// weights in row-major (out x in) order, then biases. The architecture is
/// immutable after construction.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
    adam: AdamState,
    version: u64,
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Fan-in scaled uniform initialization.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut params = Vec::with_capacity(param_count(widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        let n = params.len();
        Self { widths: widths.to_vec(), params, adam: AdamState::new(n), version: 0 }
    }

    pub fn zeroed(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2);
        let n = param_count(widths);
        Self { widths: widths.to_vec(), params: vec![0.0; n], adam: AdamState::new(n), version: 0 }
    }

    pub fn from_parts(widths: Vec<usize>, params: Vec<f64>, adam: AdamState, version: u64) -> Result<Self> {
        if widths.len() < 2 || params.len() != param_count(&widths) || adam.m.len() != params.len() {
            return Err(NeuralError::Corrupt("mlp part sizes disagree with architecture"));
        }
        Ok(Self { widths, params, adam, version })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access for tests and file loading; invalidates any
    /// outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Multiply the final layer's weights and biases by `factor` (used to
    /// start policies near the action-space center).
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.widths.len() - 2;
        let offset: usize = self.widths[..last + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        self.version += 1;
        for p in &mut self.params[offset..] {
            *p *= factor;
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch { expected: self.input_dim(), got: input.len() });
        }
        let n_layers = self.widths.len() - 1;
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut activation = input.to_vec();
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;

            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = biases[o];
                for i in 0..n_in {
                    acc += row[i] * activation[i];
                }
                z[o] = acc;
            }
            if l + 1 < n_layers {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            layer_inputs.push(std::mem::replace(&mut activation, z));
        }
        Ok(ForwardCache { version: self.version, layer_inputs, output: activation })
    }

    /// Forward pass discarding the cache.
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.output)
    }

    /// Convenience for scalar-output networks (critics, value nets).
    pub fn scalar(&self, input: &[f64]) -> Result<f64> {
        let out = self.output(input)?;
        debug_assert_eq!(out.len(), 1);
        Ok(out[0])
    }

    /// Exact gradients of `upstream . output` with respect to all parameters
    /// and the input, given the cache of a matching forward pass.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(NeuralError::StaleCache);
        }
        if upstream.len() != self.output_dim() {
            return Err(NeuralError::DimensionMismatch { expected: self.output_dim(), got: upstream.len() });
        }
        let n_layers = self.widths.len() - 1;
        let mut param_grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            offset -= n_in * n_out + n_out;
            let weights = &self.params[offset..offset + n_in * n_out];
            let layer_in = &cache.layer_inputs[l];

            let (w_grads, b_grads) =
                param_grads[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut input_grad = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                b_grads[o] = d;
                let w_row = &weights[o * n_in..(o + 1) * n_in];
                let g_row = &mut w_grads[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    g_row[i] = d * layer_in[i];
                    input_grad[i] += d * w_row[i];
                }
            }
            if l > 0 {
                // layer_in is the rectified output of layer l-1.
                for (g, a) in input_grad.iter_mut().zip(layer_in) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = input_grad;
        }
        Ok(Gradients { params: param_grads, input: delta })
    }

    /// Standard Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &[f64], cfg: &OptimConfig) -> Result<()> {
        self.adam.apply(&mut self.params, grads, cfg)?;
        self.version += 1;
        Ok(())
    }

    /// `self <- (1 - rho) * self + rho * online`, elementwise.
    pub fn polyak_from(&mut self, online: &Mlp, rho: f64) -> Result<()> {
        if self.widths != online.widths {
            return Err(NeuralError::ArchitectureMismatch);
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = (1.0 - rho) * *t + rho * o;
        }
        self.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zeroed_final_layer_outputs_zero() {
        let mut net = Mlp::new(&[3, 8, 2], &mut rng(0));
        net.scale_output_layer(0.0);
        let out = net.output(&[0.3, -1.2, 4.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut net = Mlp::zeroed(&[3, 3]);
        {
            let p = net.params_mut();
            for i in 0..3 {
                p[i * 3 + i] = 1.0;
            }
        }
        let input = [0.5, -2.0, 3.25];
        assert_eq!(net.output(&input).unwrap(), input.to_vec());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = Mlp::new(&[4, 8, 8, 2], &mut rng(3));
        let input = [0.2, -0.4, 1.1, 0.7];
        let upstream = [0.8, -1.3];
        let cache = net.forward(&input).unwrap();
        let grads = net.backward(&cache, &upstream).unwrap();

        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for idx in 0..net.params().len() {
            let orig = net.params()[idx];
            net.params_mut()[idx] = orig + h;
            let f_plus: f64 = net.output(&input).unwrap().iter().zip(&upstream).map(|(o, u)| o * u).sum();
            net.params_mut()[idx] = orig - h;
            let f_minus: f64 = net.output(&input).unwrap().iter().zip(&upstream).map(|(o, u)| o * u).sum();
            net.params_mut()[idx] = orig;
            let fd = (f_plus - f_minus) / (2.0 * h);
            let denom = grads.params[idx].abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max((grads.params[idx] - fd).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max rel error {max_rel}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = Mlp::new(&[4, 8, 8, 2], &mut rng(4));
        let input = [0.2, -0.4, 1.1, 0.7];
        let upstream = [0.8, -1.3];
        let cache = net.forward(&input).unwrap();
        let grads = net.backward(&cache, &upstream).unwrap();

        let h = 1e-6;
        for i in 0..input.len() {
            let mut plus = input;
            let mut minus = input;
            plus[i] += h;
            minus[i] -= h;
            let f = |x: &[f64]| -> f64 {
                net.output(x).unwrap().iter().zip(&upstream).map(|(o, u)| o * u).sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let denom = grads.input[i].abs().max(fd.abs()).max(1e-6);
            assert!((grads.input[i] - fd).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let net = Mlp::new(&[3, 6, 2], &mut rng(5));
        let input = [1.0, 2.0, -0.5];
        let cache = net.forward(&input).unwrap();
        let g1 = net.backward(&cache, &[0.4, -0.2]).unwrap();
        let g2 = net.backward(&cache, &[0.8, -0.4]).unwrap();
        for (a, b) in g1.params.iter().zip(&g2.params) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let gz = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(gz.params.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Mlp::new(&[2, 4, 1], &mut rng(6));
        let cache = net.forward(&[0.1, 0.2]).unwrap();
        let grads = net.backward(&cache, &[1.0]).unwrap();
        net.adam_step(&grads.params, &OptimConfig::default()).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(NeuralError::StaleCache)));
    }

    #[test]
    fn adam_zero_gradient_is_a_noop() {
        let mut net = Mlp::new(&[2, 4, 1], &mut rng(7));
        let before = net.params().to_vec();
        net.adam_step(&vec![0.0; before.len()], &OptimConfig::default()).unwrap();
        assert_eq!(net.params(), &before[..]);
        assert_eq!(net.adam().step, 1);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        let mut net = Mlp::zeroed(&[1, 1]);
        let cfg = OptimConfig::default();
        let g = 0.37;
        let mut grads = vec![0.0; net.params().len()];
        grads[0] = g;
        net.adam_step(&grads, &cfg).unwrap();
        // With zero moments: m_hat = g, v_hat = g^2, step = -lr * g / (|g| + eps).
        let expected = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
        assert!((net.params()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_against_constant_gradient() {
        let mut net = Mlp::zeroed(&[1, 1]);
        let cfg = OptimConfig::default();
        let mut grads = vec![0.0; net.params().len()];
        grads[0] = 1.5;
        for _ in 0..100 {
            net.adam_step(&grads, &cfg).unwrap();
        }
        assert!(net.params()[0] < 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = Mlp::new(&[2, 2], &mut rng(8));
        let before = net.params().to_vec();
        let mut grads = vec![0.0; before.len()];
        grads[1] = f64::NAN;
        assert!(matches!(
            net.adam_step(&grads, &OptimConfig::default()),
            Err(NeuralError::NonFiniteGradient)
        ));
        assert_eq!(net.params(), &before[..]);
        assert_eq!(net.adam().step, 0);
    }

    #[test]
    fn polyak_endpoints_and_rate() {
        let online = Mlp::new(&[2, 3, 1], &mut rng(9));
        let mut target = Mlp::zeroed(&[2, 3, 1]);
        let mut frozen = target.clone();
        frozen.polyak_from(&online, 0.0).unwrap();
        assert_eq!(frozen.params(), target.params());

        let mut copied = Mlp::zeroed(&[2, 3, 1]);
        copied.polyak_from(&online, 1.0).unwrap();
        assert_eq!(copied.params(), online.params());

        target.polyak_from(&online, 5e-3).unwrap();
        for (t, o) in target.params().iter().zip(online.params()) {
            assert!((t - 0.005 * o).abs() < 1e-15);
        }
    }

    #[test]
    fn polyak_is_an_elementwise_contraction() {
        let online = Mlp::new(&[3, 5, 2], &mut rng(10));
        let mut target = Mlp::new(&[3, 5, 2], &mut rng(11));
        let rho = 0.25;
        let gaps: Vec<f64> = target.params().iter().zip(online.params()).map(|(t, o)| t - o).collect();
        target.polyak_from(&online, rho).unwrap();
        for ((t, o), gap) in target.params().iter().zip(online.params()).zip(gaps) {
            assert!(((t - o) - (1.0 - rho) * gap).abs() < 1e-12);
        }
    }

    #[test]
    fn polyak_rejects_architecture_mismatch() {
        let online = Mlp::new(&[2, 3, 1], &mut rng(12));
        let mut target = Mlp::new(&[2, 4, 1], &mut rng(13));
        assert!(matches!(target.polyak_from(&online, 0.5), Err(NeuralError::ArchitectureMismatch)));
    }

    #[test]
    fn parameters_stay_finite_on_outlier_regression() {
        use rand::Rng;
        let mut r = rng(21);
        let mut net = Mlp::new(&[1, 16, 1], &mut r);
        let cfg = OptimConfig { learning_rate: 1e-3, ..OptimConfig::default() };
        for step in 0..10_000 {
            let x = r.gen_range(-1.0..1.0);
            // Corrupted-reward style target: occasional huge outliers.
            let y = if step % 97 == 0 { r.gen_range(-30.0..30.0) } else { x };
            let cache = net.forward(&[x]).unwrap();
            let pred = cache.output()[0];
            let grads = net.backward(&cache, &[2.0 * (pred - y)]).unwrap();
            net.adam_step(&grads.params, &cfg).unwrap();
        }
        assert!(net.params().iter().all(|p| p.is_finite()));
    }
}
