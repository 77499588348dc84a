//! Deep Q-network agent: MLP Q-function, experience replay, slowly-tracking
//! target network, epsilon-greedy action selection over legal-action masks,
//! and the temporal-difference training step.

mod checkpoint;
mod mlp;

pub use mlp::{Adam, Layer, Mlp};

use std::collections::VecDeque;

use rand::Rng;

use crate::env::EncodedState;
use crate::error::{AdvisorError, Result};

/// One stored experience. `next_legal` is the legal-action mask of the
/// successor state; TD targets take their max over it.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: EncodedState,
    pub action: usize,
    pub reward: f64,
    pub next_state: EncodedState,
    pub next_legal: Vec<bool>,
}

/// Ring buffer of transitions with oldest-first eviction.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { buf: VecDeque::with_capacity(capacity.min(16_384)), capacity }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<&Transition> {
        rand::seq::index::sample(rng, self.buf.len(), count.min(self.buf.len()))
            .into_iter()
            .map(|i| &self.buf[i])
            .collect()
    }

    /// Append zero entries to every stored state vector; kept experiences
    /// stay valid when the input grows by frequency slots that were zero at
    /// recording time.
    pub fn pad_states(&mut self, extra: usize) {
        for t in &mut self.buf {
            t.state.extend(std::iter::repeat(0.0).take(extra));
            t.next_state.extend(std::iter::repeat(0.0).take(extra));
        }
    }
}

/// Per-episode multiplicative exploration decay: eps(k) = start * decay^k.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub episode: u64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, decay: f64) -> Self {
        EpsilonSchedule { start, decay, episode: 0 }
    }

    /// The schedule warm starts resume from, as if `offset` episodes had
    /// already elapsed.
    pub fn with_offset(start: f64, decay: f64, offset: u64) -> Self {
        EpsilonSchedule { start, decay, episode: offset }
    }

    pub fn current(&self) -> f64 {
        self.start * self.decay.powi(self.episode as i32)
    }

    pub fn advance(&mut self) {
        self.episode += 1;
    }
}

/// Hyperparameters the agent itself needs (the training loop holds the rest).
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub hidden_layers: Vec<usize>,
    pub gamma: f64,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden_layers: vec![128, 64],
            gamma: 0.99,
            learning_rate: 5e-4,
            buffer_capacity: 10_000,
            batch_size: 32,
            epsilon_start: 1.0,
            epsilon_decay: 0.997,
        }
    }
}

/// Q-network, target network, optimizer state, replay buffer and epsilon
/// schedule, bound to one schema fingerprint.
#[derive(Debug, Clone)]
pub struct QAgent {
    pub net: Mlp,
    pub target: Mlp,
    pub optimizer: Adam,
    pub buffer: ReplayBuffer,
    pub epsilon: EpsilonSchedule,
    pub gamma: f64,
    pub batch_size: usize,
    pub fingerprint: String,
    pub episodes_trained: u64,
}

impl QAgent {
    pub fn new<R: Rng>(
        input_dim: usize,
        action_dim: usize,
        config: &AgentConfig,
        fingerprint: String,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&config.hidden_layers);
        dims.push(action_dim);
        let net = Mlp::init(&dims, rng);
        let target = net.clone();
        let optimizer = Adam::new(config.learning_rate, &net);
        QAgent {
            net,
            target,
            optimizer,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            epsilon: EpsilonSchedule::new(config.epsilon_start, config.epsilon_decay),
            gamma: config.gamma,
            batch_size: config.batch_size,
            fingerprint,
            episodes_trained: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Deterministic forward pass producing one Q-value per action.
    pub fn predict_q(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.input_dim() {
            return Err(AdvisorError::validation(format!(
                "state has dimension {}, network expects {}",
                state.len(),
                self.input_dim()
            )));
        }
        Ok(self.net.forward(state))
    }

    /// Epsilon-greedy over legal actions: with probability 1-eps the masked
    /// argmax (ties to the lowest id), otherwise uniform over legal actions.
    pub fn select_action<R: Rng>(
        &self,
        state: &[f64],
        mask: &[bool],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<usize> {
        let legal: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect();
        if legal.is_empty() {
            return Err(AdvisorError::validation("no legal action available"));
        }
        if rng.gen::<f64>() < epsilon {
            return Ok(legal[rng.gen_range(0..legal.len())]);
        }
        let q = self.predict_q(state)?;
        Ok(masked_argmax(&q, mask).expect("legal set nonempty"))
    }

    /// Pure exploitation (epsilon = 0) without consuming randomness.
    pub fn greedy_action(&self, state: &[f64], mask: &[bool]) -> Result<usize> {
        let q = self.predict_q(state)?;
        masked_argmax(&q, mask)
            .ok_or_else(|| AdvisorError::validation("no legal action available"))
    }

    pub fn store_transition(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// Sample a minibatch and take one gradient step; `None` until the buffer
    /// holds a full batch.
    pub fn train_step<R: Rng>(&mut self, rng: &mut R) -> Option<f64> {
        if self.buffer.len() < self.batch_size {
            return None;
        }
        let idx = rand::seq::index::sample(rng, self.buffer.len(), self.batch_size);
        let batch: Vec<Transition> = idx.into_iter().map(|i| self.buffer.buf[i].clone()).collect();
        Some(self.train_on_batch(&batch))
    }

    /// TD targets from the target network, respecting the successor's
    /// legal-action mask.
    pub fn td_targets(&self, batch: &[Transition]) -> Vec<f64> {
        batch
            .iter()
            .map(|t| {
                let q_next = self.target.forward(&t.next_state);
                let max_next = masked_max(&q_next, &t.next_legal)
                    .expect("successor state has at least one legal action");
                t.reward + self.gamma * max_next
            })
            .collect()
    }

    /// Mean squared TD error of `params` on a batch against fixed targets.
    pub fn loss_with_params(params: &Mlp, batch: &[Transition], targets: &[f64]) -> f64 {
        let mut loss = 0.0;
        for (t, &y) in batch.iter().zip(targets) {
            let q = params.forward(&t.state)[t.action];
            loss += (q - y) * (q - y);
        }
        loss / batch.len() as f64
    }

    /// Loss plus its analytic gradient with respect to `params`.
    pub fn loss_and_grad(params: &Mlp, batch: &[Transition], targets: &[f64]) -> (f64, Mlp) {
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let mut dout = vec![0.0; params.output_dim()];
        for (t, &y) in batch.iter().zip(targets) {
            let activations = params.forward_trace(&t.state);
            let q = activations.last().unwrap()[t.action];
            let diff = q - y;
            loss += diff * diff * scale;
            dout[t.action] = 2.0 * diff * scale;
            params.backward(&activations, &dout, &mut grads);
            dout[t.action] = 0.0;
        }
        (loss, grads)
    }

    /// One gradient step on a fixed batch; updates the online network only.
    pub fn train_on_batch(&mut self, batch: &[Transition]) -> f64 {
        let targets = self.td_targets(batch);
        let (loss, grads) = Self::loss_and_grad(&self.net, batch, &targets);
        self.optimizer.update(&mut self.net, &grads);
        loss
    }

    /// theta' = (1 - tau) theta' + tau theta; called once per episode.
    pub fn soft_update(&mut self, tau: f64) {
        self.target.soft_update_from(&self.net, tau);
    }

    /// Append zero-weighted input slots for newly added query frequencies.
    /// Replayed experiences are padded to match.
    pub fn widen_input(&mut self, extra: usize, new_fingerprint: String) {
        self.net.widen_input(extra);
        self.target.widen_input(extra);
        self.optimizer.widen_input(extra);
        self.buffer.pad_states(extra);
        self.fingerprint = new_fingerprint;
    }
}

/// Argmax over unmasked entries, ties broken by the lowest index.
pub fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if !ok {
            continue;
        }
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn masked_max(values: &[f64], mask: &[bool]) -> Option<f64> {
    masked_argmax(values, mask).map(|i| values[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_agent(seed: u64) -> QAgent {
        let config = AgentConfig {
            hidden_layers: vec![8],
            learning_rate: 1e-2,
            ..AgentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QAgent::new(3, 4, &config, "test".into(), &mut rng)
    }

    fn toy_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Transition> {
        (0..n)
            .map(|_| Transition {
                state: (0..3).map(|_| rng.gen_range(0.0..1.0)).collect(),
                action: rng.gen_range(0..4),
                reward: -rng.gen_range(0.1..1.0),
                next_state: (0..3).map(|_| rng.gen_range(0.0..1.0)).collect(),
                next_legal: vec![true, true, false, true],
            })
            .collect()
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let agent = toy_agent(0);
        assert!(agent.predict_q(&[0.0; 2]).is_err());
        assert_eq!(agent.predict_q(&[0.0; 3]).unwrap().len(), 4);
    }

    #[test]
    fn epsilon_zero_is_deterministic_masked_argmax() {
        let agent = toy_agent(1);
        let state = [0.3, 0.7, 0.1];
        let mask = [true, false, true, true];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let picked = agent.select_action(&state, &mask, 0.0, &mut rng).unwrap();
        let q = agent.predict_q(&state).unwrap();
        assert_eq!(picked, masked_argmax(&q, &mask).unwrap());
        assert!(mask[picked]);
        // Identical across calls.
        assert_eq!(picked, agent.greedy_action(&state, &mask).unwrap());
    }

    #[test]
    fn epsilon_one_is_uniform_over_legal_actions() {
        let agent = toy_agent(2);
        let state = [0.5, 0.5, 0.5];
        let mask = [true, true, true, true];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[agent.select_action(&state, &mask, 1.0, &mut rng).unwrap()] += 1;
        }
        // Binomial 3-sigma bound around p = 0.25.
        let sigma = (0.25 * 0.75 / n as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() <= 3.0 * sigma, "freq {freq}");
        }
    }

    #[test]
    fn masked_action_with_highest_q_is_never_selected() {
        let agent = toy_agent(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let state: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = agent.predict_q(&state).unwrap();
            let top = masked_argmax(&q, &[true; 4]).unwrap();
            let mut mask = [true; 4];
            mask[top] = false;
            let eps = rng.gen_range(0.0..1.0);
            let picked = agent.select_action(&state, &mask, eps, &mut rng).unwrap();
            assert_ne!(picked, top);
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let agent = toy_agent(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(agent
            .select_action(&[0.0; 3], &[false; 4], 0.5, &mut rng)
            .is_err());
    }

    #[test]
    fn gamma_zero_targets_equal_rewards() {
        let mut agent = toy_agent(5);
        agent.gamma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let batch = toy_batch(&mut rng, 8);
        let targets = agent.td_targets(&batch);
        for (t, y) in batch.iter().zip(&targets) {
            assert_eq!(*y, t.reward);
        }
        let loss = QAgent::loss_with_params(&agent.net, &batch, &targets);
        let expected: f64 = batch
            .iter()
            .map(|t| {
                let q = agent.net.forward(&t.state)[t.action];
                (q - t.reward) * (q - t.reward)
            })
            .sum::<f64>()
            / batch.len() as f64;
        assert!((loss - expected).abs() < 1e-15);
    }

    #[test]
    fn targets_respect_next_state_mask() {
        let agent = toy_agent(6);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut batch = toy_batch(&mut rng, 1);
        let q_next = agent.target.forward(&batch[0].next_state);
        let top = masked_argmax(&q_next, &[true; 4]).unwrap();
        let mut mask = vec![true; 4];
        mask[top] = false;
        batch[0].next_legal = mask.clone();
        let y = agent.td_targets(&batch)[0];
        let max_legal = masked_max(&q_next, &mask).unwrap();
        assert_eq!(y, batch[0].reward + agent.gamma * max_legal);
        assert!(max_legal < q_next[top] || q_next.iter().filter(|&&v| v == q_next[top]).count() > 1);
    }

    #[test]
    fn train_step_leaves_target_unchanged_until_soft_update() {
        let mut agent = toy_agent(7);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for t in toy_batch(&mut rng, 64) {
            agent.store_transition(t);
        }
        let target_before = agent.target.clone();
        let net_before = agent.net.clone();
        let loss = agent.train_step(&mut rng);
        assert!(loss.is_some());
        assert_eq!(agent.target, target_before);
        assert_ne!(agent.net, net_before);
        agent.soft_update(1e-3);
        assert_ne!(agent.target, target_before);
    }

    #[test]
    fn repeated_training_on_one_batch_drives_loss_down() {
        let mut agent = toy_agent(8);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let batch = toy_batch(&mut rng, 32);
        let mut losses = Vec::with_capacity(200);
        for _ in 0..200 {
            losses.push(agent.train_on_batch(&batch));
        }
        // Strictly decreasing over every 50-step window.
        for w in 0..=(losses.len() - 50) / 50 {
            let start = losses[w * 50];
            let end = losses[(w * 50 + 49).min(losses.len() - 1)];
            assert!(end < start, "window {w}: {start} -> {end}");
        }
    }

    /// Central finite differences over every parameter of a small network.
    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let config = AgentConfig {
            hidden_layers: vec![3],
            ..AgentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let agent = QAgent::new(2, 2, &config, "fd".into(), &mut rng);
        let batch: Vec<Transition> = (0..4)
            .map(|_| Transition {
                state: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                action: rng.gen_range(0..2),
                reward: -rng.gen_range(0.1..1.0),
                next_state: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                next_legal: vec![true, true],
            })
            .collect();
        let targets = agent.td_targets(&batch);
        let (_, grads) = QAgent::loss_and_grad(&agent.net, &batch, &targets);
        let analytic = grads.flatten();
        let mut flat = agent.net.flatten();
        let h = 1e-6;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            let mut plus = agent.net.zeros_like();
            plus.assign_flat(&flat);
            let lp = QAgent::loss_with_params(&plus, &batch, &targets);
            flat[i] = orig - h;
            let mut minus = agent.net.zeros_like();
            minus.assign_flat(&flat);
            let lm = QAgent::loss_with_params(&minus, &batch, &targets);
            flat[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                (numeric - analytic[i]).abs() / denom < 1e-4,
                "param {i}: numeric {numeric} analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn epsilon_schedule_decays_per_episode() {
        let mut eps = EpsilonSchedule::new(1.0, 0.997);
        assert_eq!(eps.current(), 1.0);
        for _ in 0..600 {
            eps.advance();
        }
        assert!((eps.current() - 0.997f64.powi(600)).abs() < 1e-12);
        let warm = EpsilonSchedule::with_offset(1.0, 0.997, 600);
        assert_eq!(warm.current(), eps.current());
    }

    #[test]
    fn replay_buffer_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(2);
        for r in 0..3 {
            buf.push(Transition {
                state: vec![r as f64],
                action: 0,
                reward: -(r as f64),
                next_state: vec![0.0],
                next_legal: vec![true],
            });
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.buf[0].reward, -1.0);
        assert_eq!(buf.buf[1].reward, -2.0);
    }
}
