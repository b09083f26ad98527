//! The tiny DDQN that picks the transmission mode per arriving task.
//!
//! One fully-connected hidden layer of 32 ReLU neurons, two outputs (DT,
//! CT), Xavier-initialized, trained by plain gradient descent on the
//! mean-square error against double-Q targets: the online network picks the
//! argmax action at the next state, the target network values it. The
//! forward and backward passes are written out by hand; the whole model is
//! a value type of a few hundred parameters.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::CoreError;
use crate::math;
use crate::params::SystemParams;
use crate::task::Mode;

/// Hidden-layer width.
pub const HIDDEN_NEURONS: usize = 32;
/// Output width: one Q value per transmission mode.
pub const ACTION_COUNT: usize = 2;
/// Replay memory capacity.
pub const REPLAY_CAPACITY: usize = 1000;

/// What the agent observes when a task arrives: residual bits per pending
/// task, slots remaining to each pending deadline (both zero-padded to
/// `max_tasks`, overflow summed into the last entry), and the battery
/// level. All entries are normalized: bits by the raw sample size, slots by
/// the deadline, battery by capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub queue_bits: Vec<f64>,
    pub remaining_slots: Vec<f64>,
    pub battery: f64,
}

impl AgentState {
    /// Builds the normalized state from `(residual_bits, slots_to_deadline)`
    /// pairs of the pending tasks, in queue order.
    pub fn build(
        pending: &[(f64, u32)],
        battery_j: f64,
        params: &SystemParams,
        max_tasks: usize,
    ) -> AgentState {
        let mut queue_bits = vec![0.0; max_tasks];
        let mut remaining_slots = vec![0.0; max_tasks];
        for (i, &(bits, slots)) in pending.iter().enumerate() {
            let slot_idx = i.min(max_tasks - 1);
            queue_bits[slot_idx] += bits / params.raw_bits;
            remaining_slots[slot_idx] += slots as f64 / params.deadline_slots as f64;
        }
        AgentState {
            queue_bits,
            remaining_slots,
            battery: if params.batt_cap_j > 0.0 { battery_j / params.batt_cap_j } else { 0.0 },
        }
    }

    /// Flat feature vector: queue bits, remaining slots, battery.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.queue_bits.len() + self.remaining_slots.len() + 1);
        out.extend_from_slice(&self.queue_bits);
        out.extend_from_slice(&self.remaining_slots);
        out.push(self.battery);
        out
    }

    pub fn feature_len(max_tasks: usize) -> usize {
        2 * max_tasks + 1
    }
}

/// The Q-value approximator.
///
/// Weights are stored row-major: `w1` has `HIDDEN_NEURONS` rows of
/// `input_dim` columns, `w2` has `ACTION_COUNT` rows of `HIDDEN_NEURONS`
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    input_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl QNetwork {
    /// Xavier-uniform initialization.
    pub fn xavier<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> QNetwork {
        let mut net = QNetwork::zeros(input_dim);
        let limit1 = math::sqrt(6.0 / (input_dim + HIDDEN_NEURONS) as f64);
        for w in net.w1.iter_mut() {
            *w = rng.gen_range(-limit1..limit1);
        }
        let limit2 = math::sqrt(6.0 / (HIDDEN_NEURONS + ACTION_COUNT) as f64);
        for w in net.w2.iter_mut() {
            *w = rng.gen_range(-limit2..limit2);
        }
        net
    }

    /// All-zero parameters (useful for crafting exact outputs in tests).
    pub fn zeros(input_dim: usize) -> QNetwork {
        QNetwork {
            input_dim,
            w1: vec![0.0; HIDDEN_NEURONS * input_dim],
            b1: vec![0.0; HIDDEN_NEURONS],
            w2: vec![0.0; ACTION_COUNT * HIDDEN_NEURONS],
            b2: vec![0.0; ACTION_COUNT],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Q values for a state: `W2 * relu(W1 s + b1) + b2`.
    pub fn forward(&self, state: &[f64]) -> Result<[f64; ACTION_COUNT], CoreError> {
        if state.len() != self.input_dim {
            return Err(CoreError::Domain("state width does not match the network input"));
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Domain("state must be finite"));
        }
        let (q, _) = self.forward_with_hidden(state);
        Ok(q)
    }

    fn forward_with_hidden(&self, state: &[f64]) -> ([f64; ACTION_COUNT], Vec<f64>) {
        let mut hidden = vec![0.0; HIDDEN_NEURONS];
        for (h, hval) in hidden.iter_mut().enumerate() {
            let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            let pre: f64 =
                self.b1[h] + row.iter().zip(state).map(|(w, s)| w * s).sum::<f64>();
            *hval = if pre > 0.0 { pre } else { 0.0 };
        }
        let mut q = [0.0; ACTION_COUNT];
        for (a, qval) in q.iter_mut().enumerate() {
            let row = &self.w2[a * HIDDEN_NEURONS..(a + 1) * HIDDEN_NEURONS];
            *qval = self.b2[a] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        (q, hidden)
    }

    /// Sets both output biases directly; handy to craft constant Q values.
    pub fn set_output_bias(&mut self, q: [f64; ACTION_COUNT]) {
        self.b2.copy_from_slice(&q);
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flat parameter access in the order `w1, b1, w2, b2` (for gradient
    /// checking and serialization).
    pub fn param(&self, idx: usize) -> f64 {
        let (slice, off) = self.locate(idx);
        match slice {
            0 => self.w1[off],
            1 => self.b1[off],
            2 => self.w2[off],
            _ => self.b2[off],
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let (slice, off) = self.locate(idx);
        match slice {
            0 => self.w1[off] = value,
            1 => self.b1[off] = value,
            2 => self.w2[off] = value,
            _ => self.b2[off] = value,
        }
    }

    fn locate(&self, idx: usize) -> (u8, usize) {
        let mut i = idx;
        if i < self.w1.len() {
            return (0, i);
        }
        i -= self.w1.len();
        if i < self.b1.len() {
            return (1, i);
        }
        i -= self.b1.len();
        if i < self.w2.len() {
            return (2, i);
        }
        i -= self.w2.len();
        (3, i)
    }
}

/// Epsilon-greedy mode selection; Q-value ties break toward DT.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<Mode, CoreError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(CoreError::Domain("epsilon must lie in [0, 1]"));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(Mode::from_action_index(rng.gen_range(0..ACTION_COUNT)));
    }
    let q = net.forward(state)?;
    Ok(if q[1] > q[0] { Mode::Ct } else { Mode::Dt })
}

/// Double-Q regression target: the online network chooses the next action,
/// the target network values it. Terminal transitions collapse to the
/// reward.
pub fn ddqn_target(
    reward: f64,
    next_state: &[f64],
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
    terminal: bool,
) -> Result<f64, CoreError> {
    if terminal || gamma == 0.0 {
        return Ok(reward);
    }
    let q_online = online.forward(next_state)?;
    let best = if q_online[1] > q_online[0] { 1 } else { 0 };
    let q_target = target.forward(next_state)?;
    Ok(reward + gamma * q_target[best])
}

/// One experience tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions with uniform minibatch sampling
/// (without replacement within a batch).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    write_pos: usize,
    total_pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer { capacity, items: Vec::new(), write_pos: 0, total_pushed: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write_pos] = t;
        }
        self.write_pos = (self.write_pos + 1) % self.capacity;
        self.total_pushed += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample of `n` distinct stored transitions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        debug_assert!(n <= self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

/// Agent hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub learn_rate: f64,
    pub discount: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the training episodes over which epsilon anneals
    /// linearly from start to end.
    pub eps_decay_frac: f64,
    pub minibatch: usize,
    /// Hard target-network copy cadence, in training steps.
    pub target_sync_every: u32,
    /// Penalty reward for a missed deadline, in Joules. Zero requests the
    /// derived default of ten times the energy of a full-window cap-power
    /// transmission.
    pub deadline_penalty_j: f64,
    /// Added to the reward when the deadline is met (default zero).
    pub success_bonus_j: f64,
    /// Width of the agent's queue view.
    pub max_tasks: usize,
    /// Energy that maps to one unit of training reward. Zero requests the
    /// derived default of one full-window cap-power transmission, which
    /// keeps target magnitudes O(1) regardless of the physical scale.
    pub reward_unit_j: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            learn_rate: 1.0e-3,
            discount: 0.95,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.5,
            minibatch: 64,
            target_sync_every: 20,
            deadline_penalty_j: 0.0,
            success_bonus_j: 0.0,
            max_tasks: 8,
            reward_unit_j: 0.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.learn_rate > 0.0) {
            return Err(CoreError::InvalidConfig("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(CoreError::InvalidConfig("discount must lie in [0, 1)"));
        }
        for e in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(CoreError::InvalidConfig("epsilon bounds must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.eps_decay_frac) {
            return Err(CoreError::InvalidConfig("epsilon decay fraction must lie in [0, 1]"));
        }
        if self.minibatch == 0 || self.minibatch > REPLAY_CAPACITY {
            return Err(CoreError::InvalidConfig("minibatch must fit the replay memory"));
        }
        if self.target_sync_every < 1 {
            return Err(CoreError::InvalidConfig("target sync cadence must be at least 1"));
        }
        if self.max_tasks == 0 {
            return Err(CoreError::InvalidConfig("max_tasks must be positive"));
        }
        Ok(())
    }

    /// Missed-deadline penalty: the configured value, or ten full-window
    /// cap-power transmissions when unset.
    pub fn penalty_j(&self, params: &SystemParams) -> f64 {
        if self.deadline_penalty_j > 0.0 {
            self.deadline_penalty_j
        } else {
            10.0 * params.p_max_w * params.deadline_slots as f64 * params.slot_s
        }
    }

    /// Energy per unit of training reward; defaults to one full-window
    /// cap-power transmission.
    pub fn reward_unit(&self, params: &SystemParams) -> f64 {
        if self.reward_unit_j > 0.0 {
            self.reward_unit_j
        } else {
            params.p_max_w * params.deadline_slots as f64 * params.slot_s
        }
    }

    /// Exploration rate for a training episode index.
    pub fn epsilon_for_episode(&self, episode: u32, total_episodes: u32) -> f64 {
        let decay_span = (total_episodes as f64 * self.eps_decay_frac).max(1.0);
        let progress = (episode as f64 / decay_span).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * progress
    }
}

/// Per-task reward: the negated energy drawn while the task was in flight
/// when the deadline was met (plus any success bonus), a fixed penalty
/// otherwise. Emitted once per task, at completion or at the deadline.
pub fn task_reward(energy_j: f64, deadline_met: bool, penalty_j: f64, bonus_j: f64) -> f64 {
    if deadline_met {
        bonus_j - energy_j
    } else {
        -penalty_j
    }
}

/// One gradient-descent step on the minibatch MSE against double-Q targets.
/// Mutates the online network and returns the pre-update loss.
pub fn train_step(
    online: &mut QNetwork,
    target: &QNetwork,
    batch: &[Transition],
    cfg: &AgentConfig,
) -> Result<f64, CoreError> {
    if batch.len() < cfg.minibatch {
        return Err(CoreError::Domain("batch smaller than the configured minibatch"));
    }
    let input_dim = online.input_dim;
    let inv_b = 1.0 / batch.len() as f64;

    let mut g_w1 = vec![0.0; online.w1.len()];
    let mut g_b1 = vec![0.0; online.b1.len()];
    let mut g_w2 = vec![0.0; online.w2.len()];
    let mut g_b2 = vec![0.0; online.b2.len()];
    let mut loss = 0.0;

    for t in batch {
        let y = ddqn_target(t.reward, &t.next_state, online, target, cfg.discount, t.terminal)?;
        let (q, hidden) = online.forward_with_hidden(&t.state);
        let err = q[t.action] - y;
        loss += err * err * inv_b;

        // dL/dq_a = 2 * err / B; only the taken action's head carries error.
        let dq = 2.0 * err * inv_b;
        g_b2[t.action] += dq;
        let w2_row = &online.w2[t.action * HIDDEN_NEURONS..(t.action + 1) * HIDDEN_NEURONS];
        for h in 0..HIDDEN_NEURONS {
            g_w2[t.action * HIDDEN_NEURONS + h] += dq * hidden[h];
            if hidden[h] > 0.0 {
                let dh = dq * w2_row[h];
                g_b1[h] += dh;
                for (i, &s) in t.state.iter().enumerate() {
                    g_w1[h * input_dim + i] += dh * s;
                }
            }
        }
    }

    let lr = cfg.learn_rate;
    for (w, g) in online.w1.iter_mut().zip(&g_w1) {
        *w -= lr * g;
    }
    for (b, g) in online.b1.iter_mut().zip(&g_b1) {
        *b -= lr * g;
    }
    for (w, g) in online.w2.iter_mut().zip(&g_w2) {
        *w -= lr * g;
    }
    for (b, g) in online.b2.iter_mut().zip(&g_b2) {
        *b -= lr * g;
    }
    Ok(loss)
}

/// Copies the online parameters into the target network.
pub fn sync_target(online: &QNetwork, target: &mut QNetwork) {
    target.clone_from(online);
}

/// Online/target pair with replay memory and the sync counter.
#[derive(Debug, Clone)]
pub struct DdqnAgent {
    pub online: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    pub cfg: AgentConfig,
    penalty_j: f64,
    reward_unit_j: f64,
    train_steps: u64,
}

impl DdqnAgent {
    /// Fresh agent: Xavier online network, target initialized as a copy.
    pub fn new<R: Rng + ?Sized>(
        cfg: AgentConfig,
        params: &SystemParams,
        rng: &mut R,
    ) -> Result<DdqnAgent, CoreError> {
        cfg.validate()?;
        let online = QNetwork::xavier(AgentState::feature_len(cfg.max_tasks), rng);
        let target = online.clone();
        let penalty_j = cfg.penalty_j(params);
        let reward_unit_j = cfg.reward_unit(params);
        Ok(DdqnAgent {
            online,
            target,
            buffer: ReplayBuffer::new(REPLAY_CAPACITY),
            cfg,
            penalty_j,
            reward_unit_j,
            train_steps: 0,
        })
    }

    pub fn penalty_j(&self) -> f64 {
        self.penalty_j
    }

    /// Reward for a finished task, in Joules.
    pub fn reward_for(&self, energy_j: f64, deadline_met: bool) -> f64 {
        task_reward(energy_j, deadline_met, self.penalty_j, self.cfg.success_bonus_j)
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Stores a transition (reward rescaled into training units) and runs
    /// one gradient step once the warm-up is over, copying into the target
    /// network on the sync cadence. Returns the step's loss, if any.
    pub fn push_and_train<R: Rng + ?Sized>(
        &mut self,
        mut transition: Transition,
        rng: &mut R,
    ) -> Result<Option<f64>, CoreError> {
        transition.reward /= self.reward_unit_j;
        self.buffer.push(transition);
        if self.buffer.len() < self.cfg.minibatch {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.cfg.minibatch, rng);
        let loss = train_step(&mut self.online, &self.target, &batch, &self.cfg)?;
        self.train_steps += 1;
        if self.train_steps % self.cfg.target_sync_every as u64 == 0 {
            sync_target(&self.online, &mut self.target);
        }
        Ok(Some(loss))
    }
}

// ---------------------------------------------------------------------------
// Checkpoint wire format
// ---------------------------------------------------------------------------

/// Magic bytes of a serialized network.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TRLQ";
/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a network: magic, version, the three layer dims as `u32`
/// little-endian, then `w1, b1, w2, b2` as row-major little-endian `f64`.
pub fn encode_network(net: &QNetwork) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * net.num_params());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(HIDDEN_NEURONS as u32).to_le_bytes());
    out.extend_from_slice(&(ACTION_COUNT as u32).to_le_bytes());
    for slice in [&net.w1, &net.b1, &net.w2, &net.b2] {
        for v in slice.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes [`encode_network`] output, rejecting bad magic, unknown versions
/// and dimension mismatches.
pub fn decode_network(bytes: &[u8]) -> Result<QNetwork, CoreError> {
    if bytes.len() < 20 {
        return Err(CoreError::BadCheckpoint("truncated header"));
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(CoreError::BadCheckpoint("bad magic"));
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    if read_u32(4) != CHECKPOINT_VERSION {
        return Err(CoreError::BadCheckpoint("unsupported version"));
    }
    let input_dim = read_u32(8) as usize;
    let hidden = read_u32(12) as usize;
    let actions = read_u32(16) as usize;
    if hidden != HIDDEN_NEURONS || actions != ACTION_COUNT || input_dim == 0 {
        return Err(CoreError::BadCheckpoint("dimension mismatch"));
    }
    let mut net = QNetwork::zeros(input_dim);
    let expected = 20 + 8 * net.num_params();
    if bytes.len() != expected {
        return Err(CoreError::BadCheckpoint("payload length mismatch"));
    }
    let mut off = 20;
    let mut read_f64 = |out: &mut [f64]| {
        for v in out.iter_mut() {
            *v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
    };
    read_f64(&mut net.w1);
    read_f64(&mut net.b1);
    read_f64(&mut net.w2);
    read_f64(&mut net.b2);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy_state(dim: usize, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn forward_zero_weights_collapses_to_output_bias() {
        let mut net = QNetwork::zeros(5);
        net.set_output_bias([3.5, -1.25]);
        let q = net.forward(&[0.2, -0.4, 1.0, 0.0, 0.7]).unwrap();
        assert_eq!(q, [3.5, -1.25]);
    }

    #[test]
    fn forward_hand_computed_toy_net() {
        // One meaningful input, one active hidden neuron.
        let mut net = QNetwork::zeros(1);
        net.w1[0] = 2.0; // neuron 0 reads the input doubled
        net.b1[0] = 1.0;
        net.w2[0] = 3.0; // action 0 reads neuron 0 tripled
        net.w2[HIDDEN_NEURONS] = -1.0; // action 1 negates it
        net.b2[1] = 0.5;
        // pre = 2*2 + 1 = 5, relu passes, q0 = 15, q1 = -5 + 0.5.
        let q = net.forward(&[2.0]).unwrap();
        assert!((q[0] - 15.0).abs() < 1e-15);
        assert!((q[1] + 4.5).abs() < 1e-15);
    }

    #[test]
    fn relu_kills_negative_preactivations() {
        let mut net = QNetwork::zeros(1);
        for h in 0..HIDDEN_NEURONS {
            net.w1[h] = 1.0;
            net.b1[h] = -10.0; // any |input| < 10 stays below zero
        }
        net.set_output_bias([0.25, -0.75]);
        let q = net.forward(&[3.0]).unwrap();
        assert_eq!(q, [0.25, -0.75]);
    }

    #[test]
    fn forward_rejects_non_finite_and_wrong_width() {
        let net = QNetwork::zeros(3);
        assert!(net.forward(&[1.0, f64::NAN, 0.0]).is_err());
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn select_action_greedy_and_ties() {
        let mut net = QNetwork::zeros(2);
        net.set_output_bias([3.0, 1.0]);
        let mut r = rng(1);
        assert_eq!(select_action(&net, &[0.0, 0.0], 0.0, &mut r).unwrap(), Mode::Dt);
        net.set_output_bias([1.0, 3.0]);
        assert_eq!(select_action(&net, &[0.0, 0.0], 0.0, &mut r).unwrap(), Mode::Ct);
        // Exact tie breaks toward DT.
        net.set_output_bias([1.0, 1.0]);
        assert_eq!(select_action(&net, &[0.0, 0.0], 0.0, &mut r).unwrap(), Mode::Dt);
    }

    #[test]
    fn select_action_uniform_under_full_exploration() {
        let net = QNetwork::zeros(2);
        let mut r = rng(42);
        let n = 10_000;
        let mut counts = [0u32; 2];
        for _ in 0..n {
            let a = select_action(&net, &[0.0, 0.0], 1.0, &mut r).unwrap();
            counts[a.action_index()] += 1;
        }
        // Chi-square with one degree of freedom; 10.83 is the 0.1% cutoff.
        let expected = n as f64 / 2.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 10.83, "chi-square {chi2} too large for uniform actions");
    }

    #[test]
    fn ddqn_target_terminal_and_zero_gamma() {
        let net = QNetwork::zeros(2);
        let s = [0.0, 0.0];
        assert_eq!(ddqn_target(2.5, &s, &net, &net, 0.0, false).unwrap(), 2.5);
        assert_eq!(ddqn_target(-1.0, &s, &net, &net, 0.9, true).unwrap(), -1.0);
    }

    #[test]
    fn double_q_rule_uses_online_argmax_and_target_value() {
        // Online says action 0 is best, target values action 0 at 1 but
        // action 1 at 9: the double-Q target must be 1, where a plain max
        // over the target would give 9.
        let mut online = QNetwork::zeros(2);
        online.set_output_bias([5.0, 0.0]);
        let mut target = QNetwork::zeros(2);
        target.set_output_bias([1.0, 9.0]);
        let y = ddqn_target(0.0, &[0.0, 0.0], &online, &target, 1.0, false).unwrap();
        assert_eq!(y, 1.0);
        let single_q_max = target.forward(&[0.0, 0.0]).unwrap()[1];
        assert_eq!(single_q_max, 9.0);
        assert_ne!(y, single_q_max);
    }

    #[test]
    fn replay_buffer_ring_semantics() {
        let mut buf = ReplayBuffer::new(REPLAY_CAPACITY);
        let make = |i: usize| Transition {
            state: vec![i as f64],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0],
            terminal: false,
        };
        for i in 0..1500 {
            buf.push(make(i));
        }
        assert_eq!(buf.len(), REPLAY_CAPACITY);
        assert_eq!(buf.total_pushed(), 1500);
        let oldest =
            buf.iter().map(|t| t.state[0] as usize).min().unwrap();
        assert_eq!(oldest, 500, "first 500 transitions must be gone");
    }

    #[test]
    fn replay_sample_is_without_replacement() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..100 {
            buf.push(Transition {
                state: vec![i as f64],
                action: 0,
                reward: 0.0,
                next_state: vec![0.0],
                terminal: false,
            });
        }
        let mut r = rng(5);
        let batch = buf.sample(64, &mut r);
        let mut seen: Vec<i64> = batch.iter().map(|t| t.state[0] as i64).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn train_step_zero_error_leaves_parameters_unchanged() {
        let cfg = AgentConfig { minibatch: 4, ..Default::default() };
        let mut online = QNetwork::zeros(2);
        online.set_output_bias([1.0, 2.0]);
        let target = online.clone();
        // Terminal transitions with reward equal to the current Q value.
        let batch: Vec<Transition> = (0..4)
            .map(|i| Transition {
                state: vec![0.0, 0.0],
                action: i % 2,
                reward: if i % 2 == 0 { 1.0 } else { 2.0 },
                next_state: vec![0.0, 0.0],
                terminal: true,
            })
            .collect();
        let before = online.clone();
        let loss = train_step(&mut online, &target, &batch, &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(online, before);
    }

    #[test]
    fn train_step_requires_full_minibatch() {
        let cfg = AgentConfig::default();
        let mut online = QNetwork::zeros(2);
        let target = online.clone();
        let batch = vec![
            Transition {
                state: vec![0.0, 0.0],
                action: 0,
                reward: 0.0,
                next_state: vec![0.0, 0.0],
                terminal: true,
            };
            10
        ];
        assert!(train_step(&mut online, &target, &batch, &cfg).is_err());
    }

    #[test]
    fn analytic_gradient_matches_central_finite_differences() {
        let dim = 5;
        let cfg = AgentConfig { minibatch: 3, learn_rate: 1.0, ..Default::default() };
        let mut r = rng(11);
        let online0 = QNetwork::xavier(dim, &mut r);
        let target = QNetwork::xavier(dim, &mut r);
        let batch: Vec<Transition> = (0..3)
            .map(|i| Transition {
                state: toy_state(dim, 100 + i),
                action: (i % 2) as usize,
                reward: 0.3 * i as f64 - 0.2,
                next_state: toy_state(dim, 200 + i),
                terminal: i == 2,
            })
            .collect();

        let loss_at = |net: &QNetwork| -> f64 {
            let mut total = 0.0;
            for t in &batch {
                let y = ddqn_target(t.reward, &t.next_state, &online0, &target, cfg.discount, t.terminal)
                    .unwrap();
                let q = net.forward(&t.state).unwrap();
                total += (q[t.action] - y) * (q[t.action] - y) / batch.len() as f64;
            }
            total
        };

        // Analytic gradient read off from the parameter delta of one step
        // with unit learning rate. The double-Q targets are computed against
        // the frozen online0, so freeze them in the FD loss too.
        let mut stepped = online0.clone();
        let target_frozen = target.clone();
        // train_step computes targets with the *current* online net; using a
        // copy keeps the FD comparison consistent because the batch's next
        // states only enter through y, which the loss closure also freezes.
        train_step(&mut stepped, &target_frozen, &batch, &cfg).unwrap();

        let h = 1.0e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..online0.num_params() {
            let analytic = online0.param(idx) - stepped.param(idx); // lr = 1
            let mut plus = online0.clone();
            plus.set_param(idx, online0.param(idx) + h);
            let mut minus = online0.clone();
            minus.set_param(idx, online0.param(idx) - h);
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs()).max(1.0e-8);
            worst = worst.max((analytic - fd).abs() / denom);
        }
        assert!(worst <= 1.0e-4, "max relative gradient error {worst}");
    }

    #[test]
    fn loss_decreases_over_two_hundred_steps() {
        let dim = 5;
        let cfg = AgentConfig { minibatch: 8, learn_rate: 1.0e-2, ..Default::default() };
        let mut r = rng(21);
        let mut online = QNetwork::xavier(dim, &mut r);
        let target = QNetwork::xavier(dim, &mut r);
        let batch: Vec<Transition> = (0..8)
            .map(|i| Transition {
                state: toy_state(dim, 300 + i),
                action: (i % 2) as usize,
                reward: 0.1 * i as f64,
                next_state: toy_state(dim, 400 + i),
                terminal: true,
            })
            .collect();
        let first = train_step(&mut online, &target, &batch, &cfg).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = train_step(&mut online, &target, &batch, &cfg).unwrap();
        }
        assert!(last < first, "loss failed to decrease: {first} -> {last}");
    }

    #[test]
    fn sync_target_copies_and_is_idempotent() {
        let mut r = rng(31);
        let online = QNetwork::xavier(4, &mut r);
        let mut target = QNetwork::zeros(4);
        sync_target(&online, &mut target);
        let s = toy_state(4, 77);
        assert_eq!(online.forward(&s).unwrap(), target.forward(&s).unwrap());
        let once = target.clone();
        sync_target(&online, &mut target);
        assert_eq!(once, target);
    }

    #[test]
    fn agent_syncs_on_cadence_only() {
        let params = SystemParams::default();
        let cfg = AgentConfig { minibatch: 2, target_sync_every: 3, ..Default::default() };
        let mut r = rng(41);
        let mut agent = DdqnAgent::new(cfg, &params, &mut r).unwrap();
        let dim = agent.online.input_dim();
        let make = |i: u64| Transition {
            state: toy_state(dim, 500 + i),
            action: (i % 2) as usize,
            reward: -1.0e-6 * i as f64,
            next_state: toy_state(dim, 600 + i),
            terminal: false,
        };
        let mut syncs = 0;
        let mut target_before = agent.target.clone();
        for i in 0..12 {
            agent.push_and_train(make(i), &mut r).unwrap();
            if agent.target != target_before {
                syncs += 1;
                target_before = agent.target.clone();
                assert_eq!(agent.train_steps() % 3, 0, "target changed off-cadence");
            }
        }
        assert!(syncs >= 2, "expected several syncs, saw {syncs}");
    }

    #[test]
    fn task_reward_sign_conventions() {
        assert_eq!(task_reward(0.0, true, 5.0, 0.0), 0.0);
        assert_eq!(task_reward(0.6, true, 5.0, 0.0), -0.6);
        assert_eq!(task_reward(0.6, false, 5.0, 0.0), -5.0);
        assert_eq!(task_reward(0.6, true, 5.0, 1.0), 0.4);
    }

    #[test]
    fn agent_state_normalizes_and_pads() {
        let params = SystemParams {
            raw_bits: 10_000.0,
            deadline_slots: 20,
            batt_cap_j: 50.0,
            ..Default::default()
        };
        let s = AgentState::build(&[(5_000.0, 10), (10_000.0, 20)], 25.0, &params, 4);
        assert_eq!(s.queue_bits, vec![0.5, 1.0, 0.0, 0.0]);
        assert_eq!(s.remaining_slots, vec![0.5, 1.0, 0.0, 0.0]);
        assert_eq!(s.battery, 0.5);
        assert_eq!(s.features().len(), AgentState::feature_len(4));
        // Overflow folds into the last entry.
        let many: Vec<(f64, u32)> = (0..6).map(|_| (10_000.0, 20)).collect();
        let s = AgentState::build(&many, 25.0, &params, 4);
        assert_eq!(s.queue_bits, vec![1.0, 1.0, 1.0, 3.0]);
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let mut r = rng(51);
        let net = QNetwork::xavier(17, &mut r);
        let bytes = encode_network(&net);
        assert_eq!(&bytes[0..4], b"TRLQ");
        let back = decode_network(&bytes).unwrap();
        assert_eq!(net, back);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_network(&bad_magic).is_err());

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(decode_network(&bad_version).is_err());

        let mut bad_dim = bytes.clone();
        bad_dim[12] = 31; // hidden width
        assert!(decode_network(&bad_dim).is_err());

        let truncated = &bytes[..bytes.len() - 8];
        assert!(decode_network(truncated).is_err());
    }

    #[test]
    fn epsilon_schedule_anneals_linearly_then_floors() {
        let cfg = AgentConfig::default();
        assert_eq!(cfg.epsilon_for_episode(0, 100), 1.0);
        let mid = cfg.epsilon_for_episode(25, 100);
        assert!((mid - 0.525).abs() < 1e-12);
        assert!((cfg.epsilon_for_episode(50, 100) - 0.05).abs() < 1e-12);
        assert!((cfg.epsilon_for_episode(99, 100) - 0.05).abs() < 1e-12);
    }
}
