//! From-scratch fully-connected Q-network machinery: forward/backward passes
//! in 64-bit floats, the RMSProp optimizer, replay memory, epsilon-greedy
//! scheduling, the DQN and double-DQN target computations, and a bit-exact
//! checkpoint format.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One experience record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Fully-connected network with rectifier hidden layers and a linear output.
/// Weights are stored `(fan_in, fan_out)` so a batch of rows multiplies
/// straight through.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Initialize with uniform weights in +-sqrt(6 / (fan_in + fan_out)).
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter(format!(
                "layer widths must list at least input and output, all positive: {widths:?}"
            )));
        }
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-bound..bound)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self { weights, biases })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_len(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_len(&self) -> usize {
        self.weights.last().unwrap().ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_len()];
        w.extend(self.weights.iter().map(|m| m.ncols()));
        w
    }

    /// Q-values for one state. Routed through the batch path so per-sample
    /// and batched evaluations agree bit-for-bit.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, state.len()), state.to_vec())
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Ok(self.forward_batch(&row)?.row(0).to_vec())
    }

    /// Q-values for a batch of states (one row per state).
    pub fn forward_batch(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        if states.ncols() != self.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "batch width {} does not match input width {}",
                states.ncols(),
                self.input_len()
            )));
        }
        let mut x = states.clone();
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            x = x.dot(w) + b;
            if l != last {
                x.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(x)
    }

    /// Gradients of `(target - q(state, action))^2` with respect to every
    /// parameter. Only the selected action's output unit receives error.
    pub fn backward(&self, state: &[f64], action: usize, target: f64) -> Result<Gradients> {
        let states = Array2::from_shape_vec((1, state.len()), state.to_vec())
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        let (grads, _) = self.backward_batch(&states, &[action], &[target])?;
        Ok(grads)
    }

    /// Mean-squared-error gradients over a minibatch; returns the mean loss.
    pub fn backward_batch(
        &self,
        states: &Array2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(Gradients, f64)> {
        let batch = states.nrows();
        if actions.len() != batch || targets.len() != batch {
            return Err(Error::DimensionMismatch(format!(
                "batch of {batch} states with {} actions and {} targets",
                actions.len(),
                targets.len()
            )));
        }
        if states.ncols() != self.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "batch width {} does not match input width {}",
                states.ncols(),
                self.input_len()
            )));
        }
        let num_actions = self.output_len();
        for &a in actions {
            if a >= num_actions {
                return Err(Error::IndexOutOfRange {
                    index: a as u64,
                    limit: num_actions as u64,
                });
            }
        }

        // forward with cached post-activation values per layer
        let last = self.num_layers() - 1;
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.num_layers() + 1);
        activations.push(states.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut x = activations.last().unwrap().dot(w) + b;
            if l != last {
                x.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(x);
        }

        // residual on the selected outputs; mean reduction over the batch
        let output = activations.last().unwrap();
        let mut delta = Array2::zeros(output.raw_dim());
        let mut loss = 0.0;
        for (row, (&a, &t)) in actions.iter().zip(targets).enumerate() {
            let residual = t - output[(row, a)];
            loss += residual * residual;
            // d/dq of (t - q)^2, averaged over the batch
            delta[(row, a)] = -2.0 * residual / batch as f64;
        }
        loss /= batch as f64;

        let mut d_weights = vec![Array2::zeros((0, 0)); self.num_layers()];
        let mut d_biases = vec![Array1::zeros(0); self.num_layers()];
        let mut delta = delta;
        for l in (0..self.num_layers()).rev() {
            d_weights[l] = activations[l].t().dot(&delta);
            d_biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                // rectifier gate of the previous hidden layer
                upstream
                    .zip_mut_with(&activations[l], |g, &h| *g = if h > 0.0 { *g } else { 0.0 });
                delta = upstream;
            }
        }
        Ok((
            Gradients {
                weights: d_weights,
                biases: d_biases,
            },
            loss,
        ))
    }

    /// Like [`Mlp::backward_batch`] but with several selected outputs per
    /// sample, all regressed toward the sample's single target. The loss is
    /// the mean over samples of the mean squared error over selected heads.
    pub fn backward_batch_multi(
        &self,
        states: &Array2<f64>,
        action_sets: &[Vec<usize>],
        targets: &[f64],
    ) -> Result<(Gradients, f64)> {
        let batch = states.nrows();
        if action_sets.len() != batch || targets.len() != batch {
            return Err(Error::DimensionMismatch(format!(
                "batch of {batch} states with {} action sets and {} targets",
                action_sets.len(),
                targets.len()
            )));
        }
        let last = self.num_layers() - 1;
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.num_layers() + 1);
        activations.push(states.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut x = activations.last().unwrap().dot(w) + b;
            if l != last {
                x.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(x);
        }

        let output = activations.last().unwrap();
        let mut delta = Array2::zeros(output.raw_dim());
        let mut loss = 0.0;
        for (row, (set, &t)) in action_sets.iter().zip(targets).enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidParameter(
                    "empty action set in multi-head backward".into(),
                ));
            }
            let weight = 1.0 / (batch * set.len()) as f64;
            let mut row_loss = 0.0;
            for &a in set {
                if a >= self.output_len() {
                    return Err(Error::IndexOutOfRange {
                        index: a as u64,
                        limit: self.output_len() as u64,
                    });
                }
                let residual = t - output[(row, a)];
                row_loss += residual * residual;
                delta[(row, a)] = -2.0 * residual * weight;
            }
            loss += row_loss / set.len() as f64;
        }
        loss /= batch as f64;

        let mut d_weights = vec![Array2::zeros((0, 0)); self.num_layers()];
        let mut d_biases = vec![Array1::zeros(0); self.num_layers()];
        let mut delta = delta;
        for l in (0..self.num_layers()).rev() {
            d_weights[l] = activations[l].t().dot(&delta);
            d_biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                upstream
                    .zip_mut_with(&activations[l], |g, &h| *g = if h > 0.0 { *g } else { 0.0 });
                delta = upstream;
            }
        }
        Ok((
            Gradients {
                weights: d_weights,
                biases: d_biases,
            },
            loss,
        ))
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Zero every parameter (useful for stuffing known Q-values via biases).
    pub fn zero_all(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    /// Set one output-layer bias; with zeroed weights the forward pass then
    /// returns exactly the bias vector.
    pub fn set_output_bias(&mut self, index: usize, value: f64) {
        let last = self.biases.len() - 1;
        self.biases[last][index] = value;
    }

    /// Serialize to the versioned binary checkpoint format.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(b"MLP1");
        buf.extend_from_slice(&1u32.to_le_bytes());
        let widths = self.widths();
        buf.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for w in &widths {
            buf.extend_from_slice(&(*w as u64).to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in b.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(Error::InvalidParameter("truncated checkpoint".into()));
            }
            let slice = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(slice)
        };
        if take(&mut cursor, 4)? != b"MLP1" {
            return Err(Error::InvalidParameter("not an MLP checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
        if version != 1 {
            return Err(Error::InvalidParameter(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let n_widths = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let mut widths = Vec::with_capacity(n_widths);
        for _ in 0..n_widths {
            widths.push(u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize);
        }
        if widths.len() < 2 {
            return Err(Error::InvalidParameter("checkpoint lists no layers".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut w = Array2::zeros((fan_in, fan_out));
            for v in w.iter_mut() {
                *v = f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
            }
            let mut b = Array1::zeros(fan_out);
            for v in b.iter_mut() {
                *v = f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
            }
            weights.push(w);
            biases.push(b);
        }
        if cursor != bytes.len() {
            return Err(Error::InvalidParameter(
                "trailing bytes after checkpoint payload".into(),
            ));
        }
        Ok(Self { weights, biases })
    }
}

/// Parameter-shaped gradient stack.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * c).collect(),
            biases: self.biases.iter().map(|b| b * c).collect(),
        }
    }
}

/// RMSProp with per-parameter squared-gradient accumulators:
/// `v <- rho * v + (1 - rho) * g^2`, `w <- w - lr * g / sqrt(v + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    rho: f64,
    eps: f64,
    sq_weights: Vec<Array2<f64>>,
    sq_biases: Vec<Array1<f64>>,
}

impl RmsProp {
    pub fn new(net: &Mlp, rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            sq_weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            sq_biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        let (rho, eps) = (self.rho, self.eps);
        for l in 0..net.weights.len() {
            self.sq_weights[l].zip_mut_with(&grads.weights[l], |v, &g| {
                *v = rho * *v + (1.0 - rho) * g * g;
            });
            let sq = &self.sq_weights[l];
            ndarray::Zip::from(&mut net.weights[l])
                .and(&grads.weights[l])
                .and(sq)
                .for_each(|w, &g, &v| *w -= lr * g / (v + eps).sqrt());

            self.sq_biases[l].zip_mut_with(&grads.biases[l], |v, &g| {
                *v = rho * *v + (1.0 - rho) * g * g;
            });
            let sq = &self.sq_biases[l];
            ndarray::Zip::from(&mut net.biases[l])
                .and(&grads.biases[l])
                .and(sq)
                .for_each(|b, &g, &v| *b -= lr * g / (v + eps).sqrt());
        }
    }
}

/// Copy all parameters from the evaluation network into the target network.
pub fn sync_target(eval_net: &Mlp, target_net: &mut Mlp) {
    target_net.weights = eval_net.weights.clone();
    target_net.biases = eval_net.biases.clone();
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `r_j + gamma * max_a' q_target(s_{j+1}, a')` per sample.
pub fn dqn_target(batch: &[Transition], target_net: &Mlp, gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            let q_next = target_net.forward(&t.next_state)?;
            let max = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(t.reward + gamma * max)
        })
        .collect()
}

/// Double-DQN target: the evaluation network selects the bootstrap action,
/// the target network scores it. Argmax ties break toward the lowest index.
pub fn ddqn_target(
    batch: &[Transition],
    eval_net: &Mlp,
    target_net: &Mlp,
    gamma: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            let chooser = eval_net.forward(&t.next_state)?;
            let a = argmax(&chooser);
            let q_next = target_net.forward(&t.next_state)?;
            Ok(t.reward + gamma * q_next[a])
        })
        .collect()
}

/// Epsilon-greedy action selection over the network's Q-values.
pub fn select_action<R: Rng + ?Sized>(
    net: &Mlp,
    state: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..net.output_len()))
    } else {
        Ok(argmax(&net.forward(state)?))
    }
}

/// Piecewise-linear exploration schedule, clamped at the end value.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_episodes: 2000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: u64) -> f64 {
        if episode >= self.decay_episodes {
            self.end
        } else {
            let frac = episode as f64 / self.decay_episodes as f64;
            self.start + (self.end - self.start) * frac
        }
    }
}

/// Bounded circular experience store; overwrites oldest-first once full.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            cursor: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform sample of `count` distinct stored transitions.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if count > self.items.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot sample {count} transitions from {} stored",
                self.items.len()
            )));
        }
        let idx = rand::seq::index::sample(rng, self.items.len(), count);
        Ok(idx.into_iter().map(|i| self.items[i].clone()).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// Views of a batch as the matrices the network update needs.
pub fn batch_matrices(batch: &[Transition]) -> (Array2<f64>, Vec<usize>, Vec<f64>) {
    let dim = batch.first().map(|t| t.state.len()).unwrap_or(0);
    let mut states = Array2::zeros((batch.len(), dim));
    for (row, t) in batch.iter().enumerate() {
        states
            .row_mut(row)
            .assign(&ArrayView1::from(t.state.as_slice()));
    }
    let actions = batch.iter().map(|t| t.action).collect();
    let rewards = batch.iter().map(|t| t.reward).collect();
    (states, actions, rewards)
}
