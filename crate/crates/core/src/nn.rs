//! Small multilayer perceptrons with hand-written reverse-mode gradients,
//! categorical-distribution helpers and an adaptive-moment optimizer.
//!
//! Parameters are a single flat `Vec<f64>`. For every layer the weight matrix
//! is stored row-major (`[n_out][n_in]`) followed by its `n_out` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig("an MLP needs at least an input and an output layer".into()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Cached activations of one forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    pub fn hidden(&self) -> &[Vec<f64>] {
        let n = self.activations.len();
        &self.activations[1..n - 1]
    }
}

/// Affine + tanh stack with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let params = vec![0.0; spec.n_params()];
        Self { spec, params }
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.n_params() {
            return Err(Error::ShapeMismatch { expected: spec.n_params(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::DomainError("non-finite parameter".into()));
        }
        Ok(Self { spec, params })
    }

    /// Scaled-uniform initialisation with unit fan-in variance. The output
    /// layer is multiplied by `output_gain`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, output_gain: f64, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(spec.n_params());
        let n_layers = spec.layer_sizes.len() - 1;
        for (l, w) in spec.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let gain = if l + 1 == n_layers { output_gain } else { 1.0 };
            let bound = (3.0 / n_in as f64).sqrt() * gain;
            for _ in 0..n_in * n_out {
                params.push(rng.gen_range(-bound..=bound));
            }
            params.extend(std::iter::repeat(0.0).take(n_out));
        }
        Self { spec, params }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.activations.pop().unwrap())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::ShapeMismatch { expected: self.spec.input_dim(), got: input.len() });
        }
        let sizes = &self.spec.layer_sizes;
        let n_layers = sizes.len() - 1;
        let mut activations = Vec::with_capacity(sizes.len());
        activations.push(input.to_vec());
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            let prev = &activations[l];
            let mut out: Vec<f64> = weights
                .chunks_exact(n_in)
                .zip(biases)
                .map(|(row, b)| row.iter().zip(prev).map(|(w, x)| w * x).sum::<f64>() + b)
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
            offset += (n_in + 1) * n_out;
        }
        Ok(Trace { activations })
    }

    /// Gradients of `output_grad · forward(input)` with respect to the
    /// parameters and the input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        let mut param_grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_trace(&trace, output_grad, &mut param_grad)?;
        Ok((param_grad, input_grad))
    }

    /// Accumulates parameter gradients into `param_grad` and returns the input gradient.
    pub fn backward_trace(&self, trace: &Trace, output_grad: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        if output_grad.len() != self.spec.output_dim() {
            return Err(Error::ShapeMismatch { expected: self.spec.output_dim(), got: output_grad.len() });
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch { expected: self.params.len(), got: param_grad.len() });
        }
        let sizes = &self.spec.layer_sizes;
        let n_layers = sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in sizes.windows(2) {
            offsets.push(offset);
            offset += (w[0] + 1) * w[1];
        }
        let mut delta = output_grad.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let off = offsets[l];
            let prev = &trace.activations[l];
            let weights = &self.params[off..off + n_in * n_out];
            let (gw, rest) = param_grad[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for ((g_row, d), gb) in gw.chunks_exact_mut(n_in).zip(&delta).zip(rest.iter_mut()) {
                if *d == 0.0 {
                    continue;
                }
                for (g, x) in g_row.iter_mut().zip(prev) {
                    *g += d * x;
                }
                *gb += d;
            }
            let mut next = vec![0.0; n_in];
            for (row, d) in weights.chunks_exact(n_in).zip(&delta) {
                if *d == 0.0 {
                    continue;
                }
                for (n, w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            if l > 0 {
                for (n, a) in next.iter_mut().zip(prev) {
                    *n *= 1.0 - a * a;
                }
            }
            delta = next;
        }
        Ok(delta)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalEval {
    pub probs: Vec<f64>,
    pub log_prob: f64,
    pub entropy: f64,
    /// d log π(a) / d logits = onehot(a) − π
    pub grad_log_prob: Vec<f64>,
}

impl CategoricalEval {
    /// d H / d logits_k = −π_k (log π_k + H)
    pub fn grad_entropy(&self) -> Vec<f64> {
        self.probs
            .iter()
            .map(|&p| if p > 0.0 { -p * (p.ln() + self.entropy) } else { 0.0 })
            .collect()
    }
}

pub fn softmax_logprob_entropy(logits: &[f64], action: usize) -> CategoricalEval {
    let logp = log_softmax(logits);
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let entropy = -probs
        .iter()
        .zip(&logp)
        .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
        .sum::<f64>();
    let grad_log_prob = probs
        .iter()
        .enumerate()
        .map(|(k, p)| if k == action { 1.0 - p } else { -p })
        .collect();
    CategoricalEval { log_prob: logp[action], probs, entropy, grad_log_prob }
}

/// Samples an index from a probability vector by inverse CDF.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Bias-corrected adaptive moment estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::ShapeMismatch { expected: self.m.len(), got: params.len() });
        }
        if grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch { expected: self.m.len(), got: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mlp = Mlp::zeros(MlpSpec::new(vec![3, 4, 2]).unwrap());
        assert_eq!(mlp.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec::new(vec![3, 3]).unwrap();
        let mut params = vec![0.0; spec.n_params()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let mlp = Mlp::from_params(spec, params).unwrap();
        assert_eq!(mlp.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = MlpSpec::new(vec![106, 64, 32, 5]).unwrap();
        assert_eq!(spec.n_params(), 107 * 64 + 65 * 32 + 33 * 5);
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1]).is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = MlpSpec::new(vec![4, 8, 2]).unwrap();
        let a = Mlp::init(spec.clone(), 0.01, &mut ChaCha8Rng::seed_from_u64(5));
        let b = Mlp::init(spec, 0.01, &mut ChaCha8Rng::seed_from_u64(5));
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mlp = Mlp::zeros(MlpSpec::new(vec![3, 2]).unwrap());
        assert_eq!(mlp.forward(&[1.0]).unwrap_err(), Error::ShapeMismatch { expected: 3, got: 1 });
        assert!(mlp.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_layer_gradient_rows_are_the_input() {
        let spec = MlpSpec::new(vec![3, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::init(spec, 1.0, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let (pg, _) = mlp.backward(&x, &[0.0, 1.0]).unwrap();
        assert_eq!(&pg[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&pg[3..6], &x);
        assert_eq!(&pg[6..8], &[0.0, 1.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let spec = MlpSpec::new(vec![3, 5, 2]).unwrap();
        let mlp = Mlp::init(spec, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let (pg, ig) = mlp.backward(&[1.0, 2.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!(pg.iter().chain(&ig).all(|g| *g == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10 {
            let depth = 2 + trial % 3;
            let sizes: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..7)).collect();
            let spec = MlpSpec::new(sizes.clone()).unwrap();
            let mut mlp = Mlp::init(spec, 1.0, &mut rng);
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let objective = |m: &Mlp, x: &[f64]| -> f64 {
                m.forward(x).unwrap().iter().zip(&g).map(|(o, w)| o * w).sum()
            };
            let (pg, ig) = mlp.backward(&x, &g).unwrap();
            let eps = 1e-5;
            for i in 0..mlp.params.len() {
                let orig = mlp.params[i];
                mlp.params[i] = orig + eps;
                let up = objective(&mlp, &x);
                mlp.params[i] = orig - eps;
                let down = objective(&mlp, &x);
                mlp.params[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                assert!(rel_err(fd, pg[i]) <= 1e-4, "param {i}: fd {fd} vs {}", pg[i]);
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += eps;
                let mut xm = x.clone();
                xm[i] -= eps;
                let fd = (objective(&mlp, &xp) - objective(&mlp, &xm)) / (2.0 * eps);
                assert!(rel_err(fd, ig[i]) <= 1e-4);
            }
        }
    }

    #[test]
    fn hidden_activations_are_bounded() {
        let spec = MlpSpec::new(vec![4, 16, 8, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp = Mlp::init(spec, 1.0, &mut rng);
        let trace = mlp.forward_trace(&[50.0, -50.0, 20.0, 3.0]).unwrap();
        for layer in trace.hidden() {
            assert!(layer.iter().all(|a| *a > -1.0 - 1e-12 && *a < 1.0 + 1e-12));
        }
    }

    #[test]
    fn uniform_logits() {
        let eval = softmax_logprob_entropy(&[0.3; 5], 2);
        assert!((eval.log_prob + 5f64.ln()).abs() < 1e-12);
        assert!((eval.entropy - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit() {
        let eval = softmax_logprob_entropy(&[1000.0, 0.0, 0.0, 0.0, 0.0], 0);
        assert!(eval.log_prob.abs() < 1e-12);
        assert!(eval.entropy.abs() < 1e-12);
        assert!(eval.probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn categorical_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let k = rng.gen_range(2..7);
            let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = rng.gen_range(0..k);
            let eval = softmax_logprob_entropy(&logits, a);
            let h_grad = eval.grad_entropy();
            let eps = 1e-6;
            for i in 0..k {
                let mut up = logits.clone();
                up[i] += eps;
                let mut dn = logits.clone();
                dn[i] -= eps;
                let (eu, ed) = (softmax_logprob_entropy(&up, a), softmax_logprob_entropy(&dn, a));
                let fd_lp = (eu.log_prob - ed.log_prob) / (2.0 * eps);
                let fd_h = (eu.entropy - ed.entropy) / (2.0 * eps);
                assert!((fd_lp - eval.grad_log_prob[i]).abs() < 1e-6);
                assert!((fd_h - h_grad[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut opt = Adam::new(3, 0.1);
        let mut p = vec![1.0, 2.0, 3.0];
        opt.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_moves_against_constant_gradient() {
        let mut opt = Adam::new(2, 0.01);
        let mut p = vec![0.0, 0.0];
        for _ in 0..100 {
            opt.update(&mut p, &[1.0, -2.0]).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn adam_two_step_hand_computation() {
        // g1 = 0.5, g2 = -1.0, lr = 0.1, beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
        // Step 1: m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25 -> p = 1 - 0.1 * 0.5 / 0.5 = 0.9
        // Step 2: m = 0.045 - 0.1 = -0.055, v = 0.00024975 + 0.001 = 0.00124975
        //         m_hat = -0.055 / 0.19, v_hat = 0.00124975 / 0.001999
        let mut opt = Adam::new(1, 0.1);
        let mut p = vec![1.0];
        opt.update(&mut p, &[0.5]).unwrap();
        let p1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - p1).abs() < 1e-12);
        opt.update(&mut p, &[-1.0]).unwrap();
        let m_hat = -0.055 / 0.19;
        let v_hat = 0.00124975 / (1.0 - 0.999f64.powi(2));
        let expected = p1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-9, "{} vs {}", p[0], expected);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut opt = Adam::new(1, 0.1);
        let mut p = vec![1.0];
        assert_eq!(opt.update(&mut p, &[f64::NAN]).unwrap_err(), Error::NonFiniteGradient);
        assert_eq!(p, vec![1.0]);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn sampling_respects_degenerate_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }
}
