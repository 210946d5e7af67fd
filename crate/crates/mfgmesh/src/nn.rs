//! Q-network machinery built from scratch: a fixed three-linear-layer MLP
//! with ReLU activations, the softmax policy, the Munchausen regression
//! target, analytic backpropagation, and Adam.
//!
//! The policy is `π(a|o) = softmax(Q(o,·)/τ_q)`. Training minimises the
//! mean squared error between the taken action's Q-value and the constant
//! target
//!
//! ```text
//! T = r + [τ_q ln π'(a|o)]⁰_cl + γ Σ_a π'(a|o')·(Q'(o',a) − τ_q ln π'(a|o'))
//! ```
//!
//! where primes denote the target network and `[·]⁰_cl` clips to `[cl, 0]`.
//! No gradient flows through `T`. Log-policies are computed as log-softmax
//! directly (never the log of a softmax), which keeps the clipped term
//! finite even when the policy saturates; a saturated-away action has
//! probability exactly 0 and contributes exactly 0 to the entropy term.
//!
//! All arithmetic is f64 so gradient checks and cross-run byte equality
//! are exact. Shape mismatches are programming errors and panic.

use crate::env::N_ACTIONS;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("serialized network truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("serialized network header invalid: {0}")]
    BadHeader(String),
    #[error("layer {index} maps {got} inputs but previous layer emits {expected}")]
    ShapeChain { index: usize, expected: usize, got: usize },
    #[error("network must end in {N_ACTIONS} outputs, got {0}")]
    BadOutput(usize),
    #[error("network has no layers")]
    Empty,
}

/// One dense layer; `w` is row-major `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Layer {
        Layer { in_dim, out_dim, w: vec![0.0; out_dim * in_dim], b: vec![0.0; out_dim] }
    }

    fn random<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Layer {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut sample = |n: usize| {
            (0..n).map(|_| bound * (2.0 * rng.gen::<f64>() - 1.0)).collect::<Vec<f64>>()
        };
        Layer { in_dim, out_dim, w: sample(out_dim * in_dim), b: sample(out_dim) }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Width of both hidden layers: the largest power of two at most the
/// input length, floored at 16 so tiny grids still get a usable network.
pub fn hidden_width(input_len: usize) -> usize {
    let pow2 = if input_len == 0 {
        1
    } else {
        1usize << (usize::BITS - 1 - input_len.leading_zeros())
    };
    pow2.max(16)
}

/// Parameters of a Q-network (and, shape-wise, of its gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Per-parameter gradients, mirroring [`MlpParams`] shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// One training record: observation, taken action index, normalised
/// reward, and the successor observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

impl MlpParams {
    /// Standard architecture: input → hidden → hidden → 5 q-values, with
    /// uniform(±1/√fan_in) weights and biases.
    pub fn new_random<R: Rng>(input_len: usize, rng: &mut R) -> MlpParams {
        let h = hidden_width(input_len);
        MlpParams {
            layers: vec![
                Layer::random(input_len, h, rng),
                Layer::random(h, h, rng),
                Layer::random(h, N_ACTIONS, rng),
            ],
        }
    }

    /// Standard architecture with all parameters zero.
    pub fn zeros(input_len: usize) -> MlpParams {
        let h = hidden_width(input_len);
        MlpParams {
            layers: vec![
                Layer::zeros(input_len, h),
                Layer::zeros(h, h),
                Layer::zeros(h, N_ACTIONS),
            ],
        }
    }

    /// Builds from explicit layers; the chain must be shape-consistent and
    /// end in 5 outputs.
    pub fn from_layers(layers: Vec<Layer>) -> Result<MlpParams, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for (index, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(NnError::ShapeChain {
                    index: index + 1,
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        let out = layers.last().unwrap().out_dim;
        if out != N_ACTIONS {
            return Err(NnError::BadOutput(out));
        }
        Ok(MlpParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Q-values for an observation: Linear→ReLU→Linear→ReLU→Linear.
    pub fn forward(&self, obs: &[f64]) -> Vec<f64> {
        assert_eq!(obs.len(), self.input_len(), "observation length mismatch");
        let mut cur = obs.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if li != last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass keeping pre-activations per layer for backprop.
    fn forward_cached(&self, obs: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(obs.len(), self.input_len(), "observation length mismatch");
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut cur = obs.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.apply(&cur, &mut z);
            pres.push(z.clone());
            if li != last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            cur = z;
        }
        pres
    }

    /// Smallest |pre-activation| feeding a ReLU over a set of inputs.
    /// Finite-difference gradient checks need this margin to exceed the
    /// probe step, otherwise a kink flips inside the stencil.
    pub fn relu_margin(&self, inputs: &[Vec<f64>]) -> f64 {
        let last = self.layers.len() - 1;
        let mut margin = f64::INFINITY;
        for obs in inputs {
            for (li, z) in self.forward_cached(obs).iter().enumerate() {
                if li == last {
                    continue;
                }
                for &v in z {
                    margin = margin.min(v.abs());
                }
            }
        }
        margin
    }

    /// Flat little-endian encoding: layer count (u64), then each layer's
    /// (in, out) dims (u64 pairs), then per layer the row-major weights
    /// followed by the biases (f64).
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 16 * self.layers.len() + 8 * self.param_count());
        out.extend_from_slice(&(self.layers.len() as u64).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.in_dim as u64).to_le_bytes());
            out.extend_from_slice(&(l.out_dim as u64).to_le_bytes());
        }
        for l in &self.layers {
            for v in l.w.iter().chain(&l.b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<MlpParams, NnError> {
        let take_u64 = |at: usize| -> Result<u64, NnError> {
            let end = at + 8;
            if bytes.len() < end {
                return Err(NnError::Truncated { expected: end, got: bytes.len() });
            }
            Ok(u64::from_le_bytes(bytes[at..end].try_into().unwrap()))
        };
        let n_layers = take_u64(0)? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(NnError::BadHeader(format!("implausible layer count {n_layers}")));
        }
        let mut dims = Vec::with_capacity(n_layers);
        for li in 0..n_layers {
            let in_dim = take_u64(8 + 16 * li)? as usize;
            let out_dim = take_u64(16 + 16 * li)? as usize;
            if in_dim == 0 || out_dim == 0 {
                return Err(NnError::BadHeader(format!("zero dimension in layer {li}")));
            }
            dims.push((in_dim, out_dim));
        }
        let mut at = 8 + 16 * n_layers;
        let total: usize = dims.iter().map(|&(i, o)| o * i + o).sum();
        let expected = at + 8 * total;
        if bytes.len() != expected {
            return Err(NnError::Truncated { expected, got: bytes.len() });
        }
        let mut read_f64s = |n: usize| -> Vec<f64> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
                at += 8;
            }
            v
        };
        let layers = dims
            .iter()
            .map(|&(in_dim, out_dim)| Layer {
                in_dim,
                out_dim,
                w: read_f64s(out_dim * in_dim),
                b: read_f64s(out_dim),
            })
            .collect();
        MlpParams::from_layers(layers)
    }
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Gradients {
        Gradients {
            layers: params.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }
}

/// `softmax(q/τ)` with max-subtraction. Sums to 1; strictly positive for
/// finite q unless the exponent underflows, in which case an entry is
/// exactly 0 and the log-policy below stays the authority on its log.
pub fn policy_from_q(q: &[f64], tau_q: f64) -> Vec<f64> {
    assert!(tau_q > 0.0, "temperature must be positive");
    assert!(q.iter().all(|v| v.is_finite()), "non-finite q-values");
    let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = q.iter().map(|&v| ((v - max) / tau_q).exp()).collect();
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    p
}

/// Log-softmax of `q/τ`, computed directly so it is finite whenever q is.
pub fn log_policy_from_q(q: &[f64], tau_q: f64) -> Vec<f64> {
    assert!(tau_q > 0.0, "temperature must be positive");
    assert!(q.iter().all(|v| v.is_finite()), "non-finite q-values");
    let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = q.iter().map(|&v| ((v - max) / tau_q).exp()).sum();
    let log_z = z.ln();
    q.iter().map(|&v| (v - max) / tau_q - log_z).collect()
}

/// The regression target for one transition, computed entirely from the
/// target network; the caller must not differentiate through it.
pub fn munchausen_target(
    obs: &[f64],
    action: usize,
    reward: f64,
    next_obs: &[f64],
    target_params: &MlpParams,
    tau_q: f64,
    cl: f64,
    gamma: f64,
) -> f64 {
    assert!(cl < 0.0, "clip floor must be negative");
    let q_t = target_params.forward(obs);
    let log_pi_t = log_policy_from_q(&q_t, tau_q);
    let munchausen = (tau_q * log_pi_t[action]).clamp(cl, 0.0);
    let q_n = target_params.forward(next_obs);
    let pi_n = policy_from_q(&q_n, tau_q);
    let log_pi_n = log_policy_from_q(&q_n, tau_q);
    let next_value: f64 = pi_n
        .iter()
        .zip(q_n.iter().zip(&log_pi_n))
        .map(|(&p, (&q, &lp))| if p > 0.0 { p * (q - tau_q * lp) } else { 0.0 })
        .sum();
    let t = reward + munchausen + gamma * next_value;
    assert!(t.is_finite(), "non-finite target: degenerate log-policy upstream");
    t
}

/// Mean squared error of the taken-action Q-values against explicit
/// per-transition targets, with analytic gradients.
fn regression_loss_and_grads(
    params: &MlpParams,
    items: &[(&[f64], usize, f64)],
) -> (f64, Gradients) {
    assert!(!items.is_empty(), "empty batch");
    let mut grads = Gradients::zeros_like(params);
    let mut loss = 0.0;
    let scale = 1.0 / items.len() as f64;
    let last = params.layers.len() - 1;
    for &(obs, action, target) in items {
        let pres = params.forward_cached(obs);
        let q = &pres[last];
        let residual = q[action] - target;
        loss += scale * residual * residual;

        // d(loss)/d(q) is one-hot at the taken action.
        let mut dz = vec![0.0; N_ACTIONS];
        dz[action] = 2.0 * scale * residual;
        for li in (0..=last).rev() {
            let layer = &params.layers[li];
            let glayer = &mut grads.layers[li];
            let input: Vec<f64> = if li == 0 {
                obs.to_vec()
            } else {
                pres[li - 1].iter().map(|&z| z.max(0.0)).collect()
            };
            for o in 0..layer.out_dim {
                glayer.b[o] += dz[o];
                let row = &mut glayer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, xi) in row.iter_mut().zip(&input) {
                    *gw += dz[o] * xi;
                }
            }
            if li == 0 {
                break;
            }
            let mut dprev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dp, wi) in dprev.iter_mut().zip(row) {
                    *dp += dz[o] * wi;
                }
            }
            // ReLU gate of the previous layer's pre-activation.
            for (dp, &z) in dprev.iter_mut().zip(&pres[li - 1]) {
                if z <= 0.0 {
                    *dp = 0.0;
                }
            }
            dz = dprev;
        }
    }
    (loss, grads)
}

/// Munchausen loss over a batch: targets from the (frozen) target network,
/// then the mean squared taken-action error with analytic gradients.
pub fn loss_and_gradients(
    params: &MlpParams,
    target_params: &MlpParams,
    batch: &[Transition],
    tau_q: f64,
    cl: f64,
    gamma: f64,
) -> (f64, Gradients) {
    assert!(!batch.is_empty(), "empty batch");
    let targets: Vec<f64> = batch
        .iter()
        .map(|tr| {
            munchausen_target(
                &tr.obs, tr.action, tr.reward, &tr.next_obs, target_params, tau_q, cl, gamma,
            )
        })
        .collect();
    let items: Vec<(&[f64], usize, f64)> = batch
        .iter()
        .zip(&targets)
        .map(|(tr, &t)| (tr.obs.as_slice(), tr.action, t))
        .collect();
    regression_loss_and_grads(params, &items)
}

/// Deep copy of the online parameters into a fresh target network.
pub fn sync_target(params: &MlpParams) -> MlpParams {
    params.clone()
}

/// Adam with bias correction; β1=0.9, β2=0.999, ε=1e-8 (applied after the
/// square root).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl AdamState {
    pub fn new(like: &MlpParams, lr: f64) -> AdamState {
        let zeros =
            || like.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect::<Vec<_>>();
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, m: zeros(), v: zeros() }
    }

    /// One optimisation step; mutates `params` in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Gradients) {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (li, layer) in params.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            assert_eq!(g.in_dim, layer.in_dim, "gradient shape mismatch");
            assert_eq!(g.out_dim, layer.out_dim, "gradient shape mismatch");
            let (m, v) = (&mut self.m[li], &mut self.v[li]);
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            };
            update(&mut layer.w, &g.w, &mut m.w, &mut v.w);
            update(&mut layer.b, &g.b, &mut m.b, &mut v.b);
        }
    }
}
