//! The two learning tiers: decentralized per-pair agents for channel/power
//! allocation with fingerprint observations, and the centralized BS agent
//! driving the RIS phase shifts and position. Includes the discrete action
//! codecs and the training loops for both tiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{LinkGains, RisConfig};
use crate::environment::{
    evaluate_outcome, marl_reward, ris_reward, AllocationState, Environment, ScenarioConfig,
    Topology,
};
use crate::error::{Error, Result};
use crate::neural::{
    argmax, batch_matrices, ddqn_target, dqn_target, sync_target, EpsilonSchedule, Mlp,
    ReplayMemory, RmsProp, Transition,
};
use crate::seeding::{child_seed, component, substream};

/// Observation features are clamped to this dB window before being mapped
/// affinely onto [0, 1]; the window brackets the default noise floor.
pub const OBS_DB_FLOOR: f64 = -130.0;
pub const OBS_DB_CEIL: f64 = 0.0;

fn norm_db(db: f64) -> f64 {
    (db.clamp(OBS_DB_FLOOR, OBS_DB_CEIL) - OBS_DB_FLOOR) / (OBS_DB_CEIL - OBS_DB_FLOOR)
}

fn power_gain_db(gain: f64) -> f64 {
    10.0 * gain.max(1e-300).log10()
}

fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts.max(1e-300) * 1e3).log10()
}

/// Training hyperparameters for both tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Episodes for the resource-allocation tier.
    pub marl_episodes: u64,
    /// Episodes for the RIS-control tier (and the centralized variant).
    pub ris_episodes: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub epsilon: EpsilonSchedule,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Minimum stored transitions before updates begin.
    pub learn_start: usize,
    /// Target-network sync period, counted in updates.
    pub target_sync_period: usize,
    pub agent_hidden: Vec<usize>,
    pub bs_hidden: Vec<usize>,
    /// Update after every slot instead of once per episode.
    pub per_step_updates: bool,
    /// Minibatch updates per episode for the centralized controller, whose
    /// wide output head makes per-slot updates expensive.
    pub central_updates_per_episode: usize,
    /// Rewards are scaled by this factor before entering the replay memory,
    /// keeping Q-values near unity for rates measured in bits/s.
    pub reward_scale: f64,
    /// Largest enumerated action space for a single network head; beyond it
    /// the RIS tier switches to the factorized head.
    pub action_cap: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            marl_episodes: 1500,
            ris_episodes: 3000,
            gamma: 0.9,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            epsilon: EpsilonSchedule::default(),
            replay_capacity: 100_000,
            batch_size: 64,
            learn_start: 1000,
            target_sync_period: 100,
            agent_hidden: vec![500, 250, 125],
            bs_hidden: vec![500, 250, 125],
            per_step_updates: false,
            central_updates_per_episode: 1,
            reward_scale: 1e-7,
            action_cap: 100_000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::InvalidConfig(
                "replay capacity must hold at least one batch".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.reward_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate and reward_scale must be positive".into(),
            ));
        }
        if self.target_sync_period == 0 {
            return Err(Error::InvalidConfig(
                "target_sync_period must be positive".into(),
            ));
        }
        if self.central_updates_per_episode == 0 {
            return Err(Error::InvalidConfig(
                "central_updates_per_episode must be positive".into(),
            ));
        }
        if self.agent_hidden.is_empty() || self.bs_hidden.is_empty() {
            return Err(Error::InvalidConfig(
                "hidden layer lists must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// Length of a per-pair observation vector: per band the own-link gain, the
/// I-1 cross gains, the BS leak, the cellular interferer gain and the
/// measured interference power, plus the two fingerprint features.
pub fn d2d_observation_len(num_pairs: usize, num_bands: usize) -> usize {
    num_bands * (num_pairs + 3) + 2
}

/// Feature vector observed by agent `i`: composite channel magnitudes (dB,
/// normalized) and per-band interference power, plus the training
/// fingerprint `(episode_fraction, epsilon)`.
///
/// The interference term follows the SINR bookkeeping with one adjustment:
/// the co-band cellular contribution is counted on every band, since a
/// receiver measuring band `k` hears that user regardless of which band the
/// pair currently occupies.
pub fn build_d2d_observation(
    agent: usize,
    gains: &LinkGains,
    alloc: &AllocationState,
    episode_fraction: f64,
    epsilon: f64,
    cfg: &ScenarioConfig,
) -> Vec<f64> {
    let (num_pairs, num_bands) = (cfg.num_d2d_pairs, cfg.num_cellular);
    let mut features = Vec::with_capacity(d2d_observation_len(num_pairs, num_bands));
    for k in 0..num_bands {
        features.push(norm_db(power_gain_db(gains.d2d[agent][agent][k])));
        for l in 0..num_pairs {
            if l != agent {
                features.push(norm_db(power_gain_db(gains.d2d[l][agent][k])));
            }
        }
        features.push(norm_db(power_gain_db(gains.tx_bs[agent][k])));
        features.push(norm_db(power_gain_db(gains.cell_rx[k][agent])));

        let mut interference = alloc.cellular_power_w() * gains.cell_rx[k][agent];
        for l in 0..num_pairs {
            if l != agent && alloc.reuses(k, l) {
                interference += alloc.d2d_power_w(l) * gains.d2d[l][agent][k];
            }
        }
        features.push(norm_db(watts_to_dbm(interference)));
    }
    features.push(episode_fraction);
    features.push(epsilon);
    features
}

/// Length of the BS-side state vector.
pub fn ris_state_len(cfg: &ScenarioConfig) -> usize {
    2 * (2 * cfg.num_d2d_pairs + cfg.num_cellular + 2)
        + 2 * cfg.num_d2d_pairs
        + cfg.num_ris_elements
}

/// BS-side state: normalized coordinates of every entity, the per-pair
/// assigned band and power level, and the per-element phase levels.
pub fn build_ris_state(
    topology: &Topology,
    alloc: &AllocationState,
    ris: &RisConfig,
    cfg: &ScenarioConfig,
) -> Vec<f64> {
    let side = topology.area_side;
    let mut state = Vec::with_capacity(ris_state_len(cfg));
    let push_point = |state: &mut Vec<f64>, p: [f64; 2]| {
        state.push(p[0] / side);
        state.push(p[1] / side);
    };
    for &p in &topology.d2d_tx {
        push_point(&mut state, p);
    }
    for &p in &topology.d2d_rx {
        push_point(&mut state, p);
    }
    for &p in &topology.cellular {
        push_point(&mut state, p);
    }
    push_point(&mut state, topology.ris_grid[ris.position_index()]);
    push_point(&mut state, topology.bs);
    for i in 0..cfg.num_d2d_pairs {
        state.push(match alloc.assigned_rb(i) {
            Some(k) => (k + 1) as f64 / cfg.num_cellular as f64,
            None => 0.0,
        });
    }
    for i in 0..cfg.num_d2d_pairs {
        state.push(alloc.power_level(i) as f64 / (cfg.num_power_levels - 1) as f64);
    }
    for n in 0..cfg.num_ris_elements {
        state.push(ris.phase_levels()[n] as f64 / ris.phase_step_divisor() as f64);
    }
    state
}

/// Number of actions available to one allocation agent.
pub fn d2d_action_count(cfg: &ScenarioConfig) -> usize {
    cfg.num_cellular * cfg.num_power_levels as usize
}

/// Decode a flat allocation action into `(sub_band, power_level)`.
pub fn decode_d2d_action(
    index: usize,
    num_bands: usize,
    num_power_levels: u32,
) -> Result<(usize, u32)> {
    let limit = num_bands * num_power_levels as usize;
    if index >= limit {
        return Err(Error::IndexOutOfRange {
            index: index as u64,
            limit: limit as u64,
        });
    }
    let rb = index / num_power_levels as usize;
    let level = (index % num_power_levels as usize) as u32;
    Ok((rb, level))
}

pub fn encode_d2d_action(rb: usize, level: u32, num_power_levels: u32) -> usize {
    rb * num_power_levels as usize + level as usize
}

/// BS action: per-element phase step in {-1, 0, +1} units of delta, plus the
/// grid cell the RIS occupies next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RisAction {
    pub deltas: Vec<i8>,
    pub position: usize,
}

/// `3^N * O`, rejecting overflow.
pub fn ris_action_count(num_elements: usize, num_cells: usize) -> Result<u64> {
    let mut count: u64 = 1;
    for _ in 0..num_elements {
        count = count
            .checked_mul(3)
            .ok_or_else(|| Error::InvalidParameter("3^N overflows u64".into()))?;
    }
    count
        .checked_mul(num_cells as u64)
        .ok_or_else(|| Error::InvalidParameter("3^N * O overflows u64".into()))
}

/// Decode a flat RIS action: the quotient by `3^N` picks the grid cell and
/// the base-3 digits of the remainder give the per-element steps
/// (digit 0/1/2 maps to -delta/0/+delta, least-significant digit first).
pub fn decode_ris_action(index: u64, num_elements: usize, num_cells: usize) -> Result<RisAction> {
    let pow3 = ris_action_count(num_elements, 1)?;
    let limit = pow3 * num_cells as u64;
    if index >= limit {
        return Err(Error::IndexOutOfRange { index, limit });
    }
    let position = (index / pow3) as usize;
    let mut rem = index % pow3;
    let mut deltas = Vec::with_capacity(num_elements);
    for _ in 0..num_elements {
        deltas.push((rem % 3) as i8 - 1);
        rem /= 3;
    }
    Ok(RisAction { deltas, position })
}

pub fn encode_ris_action(action: &RisAction) -> u64 {
    let mut digits: u64 = 0;
    for &d in action.deltas.iter().rev() {
        digits = digits * 3 + (d + 1) as u64;
    }
    let pow3 = 3u64.pow(action.deltas.len() as u32);
    action.position as u64 * pow3 + digits
}

/// Apply a BS action: each phase level moves by one step or stays, clamped
/// so the phase remains in `(0, pi]`; the position is replaced outright.
pub fn apply_ris_action(ris: &RisConfig, action: &RisAction) -> RisConfig {
    let mut next = ris.clone();
    for (n, &d) in action.deltas.iter().enumerate() {
        next.shift_level(n, d as i32);
    }
    next.set_position_index(action.position);
    next
}

/// Uniformly random RIS action.
pub fn random_ris_action<R: Rng + ?Sized>(
    num_elements: usize,
    num_cells: usize,
    rng: &mut R,
) -> RisAction {
    RisAction {
        deltas: (0..num_elements)
            .map(|_| rng.random_range(0..3u8) as i8 - 1)
            .collect(),
        position: rng.random_range(0..num_cells),
    }
}

/// One DQN/DDQN learner: evaluation and target networks, replay memory, and
/// RMSProp state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub eval_net: Mlp,
    pub target_net: Mlp,
    pub memory: ReplayMemory,
    opt: RmsProp,
    updates: usize,
    double: bool,
    /// `(targets, rewards)` of the most recent minibatch, for diagnostics.
    pub last_batch: Option<(Vec<f64>, Vec<f64>)>,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        train: &TrainingConfig,
        double: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let eval_net = Mlp::new(widths, rng)?;
        let target_net = eval_net.clone();
        let opt = RmsProp::new(&eval_net, train.rmsprop_decay, train.rmsprop_eps);
        Ok(Self {
            eval_net,
            target_net,
            memory: ReplayMemory::new(train.replay_capacity),
            opt,
            updates: 0,
            double,
            last_batch: None,
        })
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        crate::neural::select_action(&self.eval_net, state, epsilon, rng)
    }

    pub fn store(&mut self, t: Transition) {
        self.memory.push(t);
    }

    /// One minibatch gradient step; `None` while the memory is warming up.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        train: &TrainingConfig,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        if self.memory.len() < train.learn_start.max(train.batch_size) {
            return Ok(None);
        }
        let batch = self.memory.sample(train.batch_size, rng)?;
        let targets = if self.double {
            ddqn_target(&batch, &self.eval_net, &self.target_net, train.gamma)?
        } else {
            dqn_target(&batch, &self.target_net, train.gamma)?
        };
        let (states, actions, rewards) = batch_matrices(&batch);
        let (grads, loss) = self.eval_net.backward_batch(&states, &actions, &targets)?;
        self.opt.step(&mut self.eval_net, &grads, train.learning_rate);
        self.updates += 1;
        if self.updates % train.target_sync_period == 0 {
            sync_target(&self.eval_net, &mut self.target_net);
        }
        self.last_batch = Some((targets, rewards));
        Ok(Some(loss))
    }
}

/// One training-log row; the harness stamps scheme/seed/sweep context on top.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub episode: u64,
    pub slot: u64,
    pub sum_rate: f64,
    pub reward: f64,
    pub d2d_ok: bool,
    pub cellular_ok: bool,
    pub loss: Option<f64>,
    pub epsilon: f64,
}

/// Trained per-pair allocation policies.
#[derive(Debug, Clone)]
pub struct MarlModel {
    pub nets: Vec<Mlp>,
    /// Amplitude the policies were trained under (zero for the no-RIS variant).
    pub trained_amplitude: f64,
}

impl MarlModel {
    pub fn greedy_joint_action(
        &self,
        gains: &LinkGains,
        context: &AllocationState,
        cfg: &ScenarioConfig,
    ) -> Result<AllocationState> {
        let mut assignments = Vec::with_capacity(self.nets.len());
        let mut levels = Vec::with_capacity(self.nets.len());
        for (i, net) in self.nets.iter().enumerate() {
            let obs = build_d2d_observation(i, gains, context, 1.0, 0.0, cfg);
            let action = argmax(&net.forward(&obs)?);
            let (rb, level) = decode_d2d_action(action, cfg.num_cellular, cfg.num_power_levels)?;
            assignments.push(Some(rb));
            levels.push(level);
        }
        AllocationState::new(assignments, levels, cfg)
    }
}

/// Decentralized training of the allocation tier (one DDQN per pair).
///
/// Per episode the RIS is re-randomized and the large-scale state refreshed;
/// per slot every agent observes, acts epsilon-greedily, and stores the
/// shared-reward transition; learning steps run per episode (or per slot when
/// configured).
pub fn train_marl(
    scenario: &ScenarioConfig,
    train: &TrainingConfig,
    master_seed: u64,
) -> Result<(MarlModel, Vec<TrainRecord>)> {
    scenario.validate()?;
    train.validate()?;
    let num_pairs = scenario.num_d2d_pairs;
    let obs_len = d2d_observation_len(num_pairs, scenario.num_cellular);
    let num_actions = d2d_action_count(scenario);

    let mut widths = vec![obs_len];
    widths.extend_from_slice(&train.agent_hidden);
    widths.push(num_actions);

    let mut agents = Vec::with_capacity(num_pairs);
    for i in 0..num_pairs {
        let mut init_rng = substream(master_seed, &[component::WEIGHT_INIT, i as u64]);
        agents.push(Learner::new(&widths, train, true, &mut init_rng)?);
    }
    let mut explore: Vec<_> = (0..num_pairs)
        .map(|i| substream(master_seed, &[component::EXPLORATION, i as u64]))
        .collect();
    let mut replay: Vec<_> = (0..num_pairs)
        .map(|i| substream(master_seed, &[component::REPLAY, i as u64]))
        .collect();
    let mut ris_rng = substream(master_seed, &[component::RIS_INIT]);

    let mut env = Environment::new(scenario.clone(), child_seed(master_seed, &[component::TRAIN]))?;
    let mut alloc = AllocationState::all_off(scenario);
    let mut log = Vec::with_capacity((train.marl_episodes as usize) * scenario.slots_per_episode);

    for episode in 0..train.marl_episodes {
        let epsilon = train.epsilon.value(episode);
        let episode_fraction = if train.marl_episodes > 1 {
            episode as f64 / (train.marl_episodes - 1) as f64
        } else {
            0.0
        };
        let ris = RisConfig::random(
            scenario.num_ris_elements,
            scenario.phase_step_divisor,
            scenario.ris_amplitude,
            scenario.num_grid_cells,
            &mut ris_rng,
        )?;
        env.begin_episode(episode);

        for slot in 0..scenario.slots_per_episode as u64 {
            let gains = env.link_gains(&ris);
            let observations: Vec<Vec<f64>> = (0..num_pairs)
                .map(|i| build_d2d_observation(i, &gains, &alloc, episode_fraction, epsilon, scenario))
                .collect();
            let mut assignments = Vec::with_capacity(num_pairs);
            let mut levels = Vec::with_capacity(num_pairs);
            let mut actions = Vec::with_capacity(num_pairs);
            for i in 0..num_pairs {
                let a = agents[i].act(&observations[i], epsilon, &mut explore[i])?;
                let (rb, level) = decode_d2d_action(a, scenario.num_cellular, scenario.num_power_levels)?;
                assignments.push(Some(rb));
                levels.push(level);
                actions.push(a);
            }
            let next_alloc = AllocationState::new(assignments, levels, scenario)?;
            let outcome = evaluate_outcome(&gains, &next_alloc, scenario)?;
            let reward = marl_reward(&outcome);

            env.advance_small_scale();
            let next_gains = env.link_gains(&ris);
            let mut step_loss = None;
            for i in 0..num_pairs {
                let next_obs =
                    build_d2d_observation(i, &next_gains, &next_alloc, episode_fraction, epsilon, scenario);
                agents[i].store(Transition {
                    state: observations[i].clone(),
                    action: actions[i],
                    reward: reward * train.reward_scale,
                    next_state: next_obs,
                });
                if train.per_step_updates {
                    if let Some(loss) = agents[i].update(train, &mut replay[i])? {
                        step_loss = Some(step_loss.unwrap_or(0.0) + loss / num_pairs as f64);
                    }
                }
            }
            alloc = next_alloc;
            log.push(TrainRecord {
                episode,
                slot,
                sum_rate: outcome.sum_rate,
                reward,
                d2d_ok: outcome.d2d_ok,
                cellular_ok: outcome.cellular_ok,
                loss: step_loss,
                epsilon,
            });
        }

        if !train.per_step_updates {
            let mut episode_loss = None;
            for i in 0..num_pairs {
                if let Some(loss) = agents[i].update(train, &mut replay[i])? {
                    episode_loss = Some(episode_loss.unwrap_or(0.0) + loss / num_pairs as f64);
                }
            }
            if let (Some(loss), Some(last)) = (episode_loss, log.last_mut()) {
                last.loss = Some(loss);
            }
        }
    }

    Ok((
        MarlModel {
            nets: agents.into_iter().map(|a| a.eval_net).collect(),
            trained_amplitude: scenario.ris_amplitude,
        },
        log,
    ))
}

/// BS-side policy over the RIS action space: one enumerated output per
/// action when `3^N * O` fits the cap, otherwise per-element sub-heads plus
/// a position head (an extension for element counts whose enumerated head
/// would not fit in memory).
#[derive(Debug, Clone, PartialEq)]
pub enum RisHead {
    Enumerated,
    Factorized,
}

#[derive(Debug, Clone)]
pub struct RisPolicy {
    pub net: Mlp,
    pub head: RisHead,
    pub num_elements: usize,
    pub num_cells: usize,
}

impl RisPolicy {
    pub fn head_for(cfg: &ScenarioConfig, cap: u64) -> (RisHead, usize) {
        match ris_action_count(cfg.num_ris_elements, cfg.num_grid_cells) {
            Ok(count) if count <= cap => (RisHead::Enumerated, count as usize),
            _ => (
                RisHead::Factorized,
                3 * cfg.num_ris_elements + cfg.num_grid_cells,
            ),
        }
    }

    /// Greedy action under the current Q-values.
    pub fn greedy_action(&self, state: &[f64]) -> Result<RisAction> {
        let q = self.net.forward(state)?;
        Ok(self.greedy_from_q(&q))
    }

    fn greedy_from_q(&self, q: &[f64]) -> RisAction {
        match self.head {
            RisHead::Enumerated => {
                decode_ris_action(argmax(q) as u64, self.num_elements, self.num_cells)
                    .expect("argmax index within enumerated range")
            }
            RisHead::Factorized => {
                let deltas = (0..self.num_elements)
                    .map(|n| argmax(&q[3 * n..3 * n + 3]) as i8 - 1)
                    .collect();
                let position = argmax(&q[3 * self.num_elements..]);
                RisAction { deltas, position }
            }
        }
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<RisAction> {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            Ok(random_ris_action(self.num_elements, self.num_cells, rng))
        } else {
            self.greedy_action(state)
        }
    }

    /// Output indices selected by an action under the factorized head.
    fn factorized_indices(&self, action: &RisAction) -> Vec<usize> {
        let mut idx: Vec<usize> = action
            .deltas
            .iter()
            .enumerate()
            .map(|(n, &d)| 3 * n + (d + 1) as usize)
            .collect();
        idx.push(3 * self.num_elements + action.position);
        idx
    }
}

/// Trained BS model plus the codec parameters it was built for.
#[derive(Debug, Clone)]
pub struct RisModel {
    pub policy: RisPolicy,
    pub double: bool,
}

struct RisLearner {
    policy: RisPolicy,
    target_net: Mlp,
    memory: ReplayMemory,
    opt: RmsProp,
    updates: usize,
    double: bool,
    last_batch: Option<(Vec<f64>, Vec<f64>)>,
}

/// Transition with a structured action, for the factorized head.
struct RisTransition {
    state: Vec<f64>,
    action: RisAction,
    reward: f64,
    next_state: Vec<f64>,
}

impl RisLearner {
    fn new<R: Rng + ?Sized>(
        cfg: &ScenarioConfig,
        train: &TrainingConfig,
        double: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (head, outputs) = RisPolicy::head_for(cfg, train.action_cap);
        let mut widths = vec![ris_state_len(cfg)];
        widths.extend_from_slice(&train.bs_hidden);
        widths.push(outputs);
        let net = Mlp::new(&widths, rng)?;
        let target_net = net.clone();
        let opt = RmsProp::new(&net, train.rmsprop_decay, train.rmsprop_eps);
        Ok(Self {
            policy: RisPolicy {
                net,
                head,
                num_elements: cfg.num_ris_elements,
                num_cells: cfg.num_grid_cells,
            },
            target_net,
            memory: ReplayMemory::new(train.replay_capacity),
            opt,
            updates: 0,
            double,
            last_batch: None,
        })
    }

    fn store(&mut self, t: RisTransition) {
        match self.policy.head {
            RisHead::Enumerated => self.memory.push(Transition {
                state: t.state,
                action: encode_ris_action(&t.action) as usize,
                reward: t.reward,
                next_state: t.next_state,
            }),
            RisHead::Factorized => {
                // keep the flat encoding in the replay record; heads are
                // recovered at update time
                self.memory.push(Transition {
                    state: t.state,
                    action: encode_ris_action(&t.action) as usize,
                    reward: t.reward,
                    next_state: t.next_state,
                });
            }
        }
    }

    fn update<R: Rng + ?Sized>(
        &mut self,
        train: &TrainingConfig,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        if self.memory.len() < train.learn_start.max(train.batch_size) {
            return Ok(None);
        }
        let batch = self.memory.sample(train.batch_size, rng)?;
        let loss = match self.policy.head {
            RisHead::Enumerated => {
                let targets = if self.double {
                    ddqn_target(&batch, &self.policy.net, &self.target_net, train.gamma)?
                } else {
                    dqn_target(&batch, &self.target_net, train.gamma)?
                };
                let (states, actions, rewards) = batch_matrices(&batch);
                let (grads, loss) =
                    self.policy
                        .net
                        .backward_batch(&states, &actions, &targets)?;
                self.opt
                    .step(&mut self.policy.net, &grads, train.learning_rate);
                self.last_batch = Some((targets, rewards));
                loss
            }
            RisHead::Factorized => {
                // bootstrap value = mean over heads of the target net's
                // Q for the action the (eval or target) net would select
                let mut targets = Vec::with_capacity(batch.len());
                for t in &batch {
                    let selector_q = if self.double {
                        self.policy.net.forward(&t.next_state)?
                    } else {
                        self.target_net.forward(&t.next_state)?
                    };
                    let chosen = self.policy.greedy_from_q(&selector_q);
                    let idx = self.policy.factorized_indices(&chosen);
                    let target_q = self.target_net.forward(&t.next_state)?;
                    let value: f64 =
                        idx.iter().map(|&j| target_q[j]).sum::<f64>() / idx.len() as f64;
                    targets.push(t.reward + train.gamma * value);
                }
                let (states, _, rewards) = batch_matrices(&batch);
                let action_sets: Vec<Vec<usize>> = batch
                    .iter()
                    .map(|t| {
                        let action = decode_ris_action(
                            t.action as u64,
                            self.policy.num_elements,
                            self.policy.num_cells,
                        )
                        .expect("stored action within range");
                        self.policy.factorized_indices(&action)
                    })
                    .collect();
                let (grads, loss) =
                    self.policy
                        .net
                        .backward_batch_multi(&states, &action_sets, &targets)?;
                self.opt
                    .step(&mut self.policy.net, &grads, train.learning_rate);
                self.last_batch = Some((targets, rewards));
                loss
            }
        };
        self.updates += 1;
        if self.updates % train.target_sync_period == 0 {
            sync_target(&self.policy.net, &mut self.target_net);
        }
        Ok(Some(loss))
    }
}

/// Centralized training of the RIS tier against frozen allocation policies.
///
/// Per episode the frozen agents fix the allocation greedily (before the
/// large-scale refresh, as the control flow prescribes); per slot the BS
/// observes the position/allocation/phase state, steps the RIS, and receives
/// the QoS-aware reward. `double` selects the double-DQN target.
pub fn train_ris(
    scenario: &ScenarioConfig,
    train: &TrainingConfig,
    marl: &MarlModel,
    double: bool,
    master_seed: u64,
) -> Result<(RisModel, Vec<TrainRecord>)> {
    scenario.validate()?;
    train.validate()?;
    let mut init_rng = substream(master_seed, &[component::WEIGHT_INIT, 1000]);
    let mut learner = RisLearner::new(scenario, train, double, &mut init_rng)?;
    let mut explore = substream(master_seed, &[component::EXPLORATION, 1000]);
    let mut replay = substream(master_seed, &[component::REPLAY, 1000]);
    let mut ris_rng = substream(master_seed, &[component::RIS_INIT, 1000]);

    let mut env =
        Environment::new(scenario.clone(), child_seed(master_seed, &[component::TRAIN, 2]))?;
    let mut ris = RisConfig::random(
        scenario.num_ris_elements,
        scenario.phase_step_divisor,
        scenario.ris_amplitude,
        scenario.num_grid_cells,
        &mut ris_rng,
    )?;
    let mut alloc = AllocationState::all_off(scenario);
    let mut log = Vec::with_capacity((train.ris_episodes as usize) * scenario.slots_per_episode);

    for episode in 0..train.ris_episodes {
        let epsilon = train.epsilon.value(episode);
        let gains = env.link_gains(&ris);
        alloc = marl.greedy_joint_action(&gains, &alloc, scenario)?;
        env.begin_episode(episode);

        for slot in 0..scenario.slots_per_episode as u64 {
            let state = build_ris_state(env.topology(), &alloc, &ris, scenario);
            let action = learner.policy.act(&state, epsilon, &mut explore)?;
            ris = apply_ris_action(&ris, &action);
            let outcome = env.evaluate_slot(&ris, &alloc)?;
            let reward = ris_reward(&outcome);

            env.advance_small_scale();
            let next_state = build_ris_state(env.topology(), &alloc, &ris, scenario);
            learner.store(RisTransition {
                state,
                action,
                reward: reward * train.reward_scale,
                next_state,
            });
            let mut step_loss = None;
            if train.per_step_updates {
                step_loss = learner.update(train, &mut replay)?;
            }
            log.push(TrainRecord {
                episode,
                slot,
                sum_rate: outcome.sum_rate,
                reward,
                d2d_ok: outcome.d2d_ok,
                cellular_ok: outcome.cellular_ok,
                loss: step_loss,
                epsilon,
            });
        }

        if !train.per_step_updates {
            if let Some(loss) = learner.update(train, &mut replay)? {
                if let Some(last) = log.last_mut() {
                    last.loss = Some(loss);
                }
            }
        }
    }

    Ok((
        RisModel {
            policy: learner.policy,
            double,
        },
        log,
    ))
}

/// Diagnostics hook used by tests: most recent minibatch targets and rewards.
pub fn train_ris_with_diagnostics(
    scenario: &ScenarioConfig,
    train: &TrainingConfig,
    marl: &MarlModel,
    double: bool,
    master_seed: u64,
) -> Result<(RisModel, Vec<TrainRecord>, Option<(Vec<f64>, Vec<f64>)>)> {
    scenario.validate()?;
    train.validate()?;
    let mut init_rng = substream(master_seed, &[component::WEIGHT_INIT, 1000]);
    let mut learner = RisLearner::new(scenario, train, double, &mut init_rng)?;
    let mut explore = substream(master_seed, &[component::EXPLORATION, 1000]);
    let mut replay = substream(master_seed, &[component::REPLAY, 1000]);
    let mut ris_rng = substream(master_seed, &[component::RIS_INIT, 1000]);
    let mut env =
        Environment::new(scenario.clone(), child_seed(master_seed, &[component::TRAIN, 2]))?;
    let mut ris = RisConfig::random(
        scenario.num_ris_elements,
        scenario.phase_step_divisor,
        scenario.ris_amplitude,
        scenario.num_grid_cells,
        &mut ris_rng,
    )?;
    let mut alloc = AllocationState::all_off(scenario);
    let mut log = Vec::new();
    for episode in 0..train.ris_episodes {
        let epsilon = train.epsilon.value(episode);
        let gains = env.link_gains(&ris);
        alloc = marl.greedy_joint_action(&gains, &alloc, scenario)?;
        env.begin_episode(episode);
        for slot in 0..scenario.slots_per_episode as u64 {
            let state = build_ris_state(env.topology(), &alloc, &ris, scenario);
            let action = learner.policy.act(&state, epsilon, &mut explore)?;
            ris = apply_ris_action(&ris, &action);
            let outcome = env.evaluate_slot(&ris, &alloc)?;
            let reward = ris_reward(&outcome);
            env.advance_small_scale();
            let next_state = build_ris_state(env.topology(), &alloc, &ris, scenario);
            learner.store(RisTransition {
                state,
                action,
                reward: reward * train.reward_scale,
                next_state,
            });
            if train.per_step_updates {
                learner.update(train, &mut replay)?;
            }
            log.push(TrainRecord {
                episode,
                slot,
                sum_rate: outcome.sum_rate,
                reward,
                d2d_ok: outcome.d2d_ok,
                cellular_ok: outcome.cellular_ok,
                loss: None,
                epsilon,
            });
        }
        if !train.per_step_updates {
            learner.update(train, &mut replay)?;
        }
    }
    let diag = learner.last_batch.clone();
    Ok((
        RisModel {
            policy: learner.policy,
            double,
        },
        log,
        diag,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn desk_scenario() -> ScenarioConfig {
        ScenarioConfig {
            num_d2d_pairs: 2,
            num_cellular: 2,
            num_ris_elements: 4,
            num_grid_cells: 4,
            num_power_levels: 3,
            ..ScenarioConfig::default()
        }
    }

    fn quick_train() -> TrainingConfig {
        TrainingConfig {
            marl_episodes: 10,
            ris_episodes: 10,
            learn_start: 64,
            agent_hidden: vec![32, 16],
            bs_hidden: vec![32, 16],
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.05,
                decay_episodes: 8,
            },
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn observation_length_matches_layout() {
        // 4 pairs, 4 bands: 4 * (4 + 3) + 2 = 30
        assert_eq!(d2d_observation_len(4, 4), 30);
        let cfg = ScenarioConfig::default();
        let env = Environment::new(cfg.clone(), 5).unwrap();
        let ris = RisConfig::new(vec![1; 16], 4, 1.0, 0).unwrap();
        let gains = env.link_gains(&ris);
        let alloc = AllocationState::all_off(&cfg);
        let obs = build_d2d_observation(0, &gains, &alloc, 0.25, 0.7, &cfg);
        assert_eq!(obs.len(), 30);
        assert!(obs.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn observation_fingerprint_is_exact() {
        let cfg = desk_scenario();
        let env = Environment::new(cfg.clone(), 6).unwrap();
        let ris = RisConfig::new(vec![1; 4], 4, 1.0, 0).unwrap();
        let gains = env.link_gains(&ris);
        let alloc = AllocationState::all_off(&cfg);
        let obs = build_d2d_observation(1, &gains, &alloc, 0.125, 0.4375, &cfg);
        assert_eq!(obs[obs.len() - 2], 0.125);
        assert_eq!(obs[obs.len() - 1], 0.4375);
    }

    #[test]
    fn observations_differ_between_agents_and_repeat_exactly() {
        let cfg = desk_scenario();
        let env = Environment::new(cfg.clone(), 7).unwrap();
        let ris = RisConfig::new(vec![2; 4], 4, 1.0, 1).unwrap();
        let gains = env.link_gains(&ris);
        let alloc = AllocationState::new(vec![Some(0), Some(1)], vec![2, 2], &cfg).unwrap();
        let a0 = build_d2d_observation(0, &gains, &alloc, 0.5, 0.2, &cfg);
        let a1 = build_d2d_observation(1, &gains, &alloc, 0.5, 0.2, &cfg);
        assert_ne!(a0, a1);
        let again = build_d2d_observation(0, &gains, &alloc, 0.5, 0.2, &cfg);
        assert_eq!(a0, again);
    }

    #[test]
    fn ris_state_layout() {
        let cfg = desk_scenario();
        // 2(2*2 + 2 + 2) + 2*2 + 4 = 16 + 4 + 4 = 24
        assert_eq!(ris_state_len(&cfg), 24);
        let env = Environment::new(cfg.clone(), 8).unwrap();
        let ris = RisConfig::new(vec![4, 2, 1, 3], 4, 1.0, 2).unwrap();
        let alloc = AllocationState::new(vec![Some(1), None], vec![2, 0], &cfg).unwrap();
        let state = build_ris_state(env.topology(), &alloc, &ris, &cfg);
        assert_eq!(state.len(), 24);
        assert!(state.iter().all(|v| (0.0..=1.0).contains(v)));
        // phase features are level / divisor
        assert_relative_eq!(state[20], 1.0);
        assert_relative_eq!(state[21], 0.5);
        // band feature: assigned band 1 of 2 -> (1+1)/2, unassigned -> 0
        assert_relative_eq!(state[16], 1.0);
        assert_relative_eq!(state[17], 0.0);
    }

    #[test]
    fn d2d_action_codec_conventions() {
        assert_eq!(decode_d2d_action(0, 4, 9).unwrap(), (0, 0));
        assert_eq!(decode_d2d_action(9, 4, 9).unwrap(), (1, 0));
        assert!(decode_d2d_action(36, 4, 9).is_err());
        // exhaustive round trip over all 36 indices at A_p = 9, K = 4
        for index in 0..36 {
            let (rb, level) = decode_d2d_action(index, 4, 9).unwrap();
            assert_eq!(encode_d2d_action(rb, level, 9), index);
        }
    }

    #[test]
    fn ris_action_codec_conventions() {
        // index 0: position v_1, all deltas -delta
        let a = decode_ris_action(0, 3, 4).unwrap();
        assert_eq!(a.position, 0);
        assert_eq!(a.deltas, vec![-1, -1, -1]);
        // N = 2, O = 2: index 9 + 4 -> position v_2, deltas (0, 0)
        let b = decode_ris_action(9 + 4, 2, 2).unwrap();
        assert_eq!(b.position, 1);
        assert_eq!(b.deltas, vec![0, 0]);
        // exhaustive round trip at N = 3, O = 4
        let total = ris_action_count(3, 4).unwrap();
        assert_eq!(total, 108);
        for index in 0..total {
            let action = decode_ris_action(index, 3, 4).unwrap();
            assert_eq!(encode_ris_action(&action), index);
        }
        assert!(decode_ris_action(total, 3, 4).is_err());
    }

    #[test]
    fn ris_action_count_overflow_guard() {
        assert!(ris_action_count(50, 25).is_err());
        assert_eq!(ris_action_count(16, 25).unwrap(), 43_046_721 * 25);
    }

    #[test]
    fn apply_ris_action_clamps_boundaries() {
        let ris = RisConfig::new(vec![1, 4, 2], 4, 1.0, 0).unwrap();
        let down = apply_ris_action(
            &ris,
            &RisAction {
                deltas: vec![-1, 1, 0],
                position: 3,
            },
        );
        // level 1 stays at the lower bound, level 4 stays at pi
        assert_eq!(down.phase_levels(), &[1, 4, 2]);
        assert_eq!(down.position_index(), 3);

        let identity = apply_ris_action(
            &ris,
            &RisAction {
                deltas: vec![0, 0, 0],
                position: ris.position_index(),
            },
        );
        assert_eq!(identity, ris);
    }

    proptest! {
        #[test]
        fn ris_phases_stay_in_range(seed in 0u64..300) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut ris = RisConfig::random(5, 4, 1.0, 6, &mut rng).unwrap();
            for _ in 0..100 {
                let action = random_ris_action(5, 6, &mut rng);
                ris = apply_ris_action(&ris, &action);
                for n in 0..5 {
                    let theta = ris.phase(n);
                    prop_assert!(theta > 0.0 && theta <= std::f64::consts::PI + 1e-12);
                }
            }
        }

        #[test]
        fn joint_actions_always_legal(seed in 0u64..200) {
            let cfg = desk_scenario();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut assignments = Vec::new();
            let mut levels = Vec::new();
            for _ in 0..cfg.num_d2d_pairs {
                let a = rng.random_range(0..d2d_action_count(&cfg));
                let (rb, level) =
                    decode_d2d_action(a, cfg.num_cellular, cfg.num_power_levels).unwrap();
                assignments.push(Some(rb));
                levels.push(level);
            }
            // construction succeeds and every pair holds exactly one band
            let alloc = AllocationState::new(assignments, levels, &cfg).unwrap();
            for i in 0..cfg.num_d2d_pairs {
                let held = (0..cfg.num_cellular).filter(|&k| alloc.reuses(k, i)).count();
                prop_assert_eq!(held, 1);
            }
        }
    }

    #[test]
    fn train_marl_zero_episodes_leaves_networks_at_init() {
        let scenario = desk_scenario();
        let train = TrainingConfig {
            marl_episodes: 0,
            ..quick_train()
        };
        let (model, log) = train_marl(&scenario, &train, 42).unwrap();
        assert!(log.is_empty());

        let obs_len = d2d_observation_len(scenario.num_d2d_pairs, scenario.num_cellular);
        let mut widths = vec![obs_len];
        widths.extend_from_slice(&train.agent_hidden);
        widths.push(d2d_action_count(&scenario));
        for (i, net) in model.nets.iter().enumerate() {
            let mut init_rng = substream(42, &[component::WEIGHT_INIT, i as u64]);
            let fresh = Mlp::new(&widths, &mut init_rng).unwrap();
            assert_eq!(net, &fresh);
        }
    }

    #[test]
    fn train_marl_log_row_count() {
        let scenario = ScenarioConfig {
            slots_per_episode: 5,
            ..desk_scenario()
        };
        let train = TrainingConfig {
            marl_episodes: 7,
            ..quick_train()
        };
        let (_, log) = train_marl(&scenario, &train, 1).unwrap();
        assert_eq!(log.len(), 7 * 5);
    }

    #[test]
    fn train_marl_two_action_bandit_converges() {
        // single agent, single band, on/off power, static world without RIS:
        // the greedy policy must land on whichever action a brute-force
        // evaluation of both says is better
        let scenario = ScenarioConfig {
            num_d2d_pairs: 1,
            num_cellular: 1,
            num_power_levels: 2,
            ris_amplitude: 0.0,
            static_topology: true,
            slots_per_episode: 10,
            ..desk_scenario()
        };
        let train = TrainingConfig {
            marl_episodes: 200,
            per_step_updates: true,
            learn_start: 64,
            learning_rate: 2e-3,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.05,
                decay_episodes: 150,
            },
            ..quick_train()
        };
        let (model, _) = train_marl(&scenario, &train, 7).unwrap();

        // brute-force oracle: mean reward of each of the two actions
        let mut env = Environment::new(scenario.clone(), 999).unwrap();
        let ris = RisConfig::new(vec![1; 4], 4, 0.0, 0).unwrap();
        let mut means = [0.0f64; 2];
        let slots = 2000;
        for action in 0..2usize {
            let (rb, level) = decode_d2d_action(action, 1, 2).unwrap();
            let alloc =
                AllocationState::new(vec![Some(rb)], vec![level], &scenario).unwrap();
            for _ in 0..slots {
                let outcome = env.evaluate_slot(&ris, &alloc).unwrap();
                means[action] += marl_reward(&outcome) / slots as f64;
                env.advance_small_scale();
            }
        }
        let oracle_best = if means[1] > means[0] { 1 } else { 0 };

        // greedy action of the trained policy on a fresh observation
        let env2 = Environment::new(scenario.clone(), 999).unwrap();
        let gains = env2.link_gains(&ris);
        let context = AllocationState::all_off(&scenario);
        let greedy = model
            .greedy_joint_action(&gains, &context, &scenario)
            .unwrap();
        let chosen = encode_d2d_action(
            greedy.assigned_rb(0).unwrap(),
            greedy.power_level(0),
            scenario.num_power_levels,
        );
        assert_eq!(chosen, oracle_best, "oracle means {means:?}");
    }

    #[test]
    fn train_ris_freezes_marl_networks() {
        let scenario = desk_scenario();
        let train = quick_train();
        let (marl, _) = train_marl(&scenario, &train, 3).unwrap();
        let before: Vec<Mlp> = marl.nets.clone();
        let (_, _) = train_ris(&scenario, &train, &marl, true, 4).unwrap();
        for (a, b) in before.iter().zip(&marl.nets) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn train_ris_gamma_zero_targets_equal_rewards() {
        let scenario = desk_scenario();
        let train = TrainingConfig {
            gamma: 0.0,
            ris_episodes: 12,
            learn_start: 64,
            ..quick_train()
        };
        let (marl, _) = train_marl(&scenario, &train, 5).unwrap();
        let (_, _, diag) =
            train_ris_with_diagnostics(&scenario, &train, &marl, true, 6).unwrap();
        let (targets, rewards) = diag.expect("at least one update ran");
        assert_eq!(targets.len(), rewards.len());
        for (t, r) in targets.iter().zip(&rewards) {
            assert_relative_eq!(t, r, max_relative = 1e-12);
        }
    }

    #[test]
    fn ris_policy_greedy_matches_stuffed_network() {
        // epsilon = 0 with a network whose biases encode a known best action
        let cfg = desk_scenario();
        let train = quick_train();
        let count = ris_action_count(cfg.num_ris_elements, cfg.num_grid_cells).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut learner = RisLearner::new(&cfg, &train, true, &mut rng).unwrap();
        let best = 137u64 % count;
        // zero all weights, put a spike on the chosen output bias
        let widths = learner.policy.net.widths();
        learner.policy.net = {
            let mut net = Mlp::new(&widths, &mut rng).unwrap();
            let state_len = ris_state_len(&cfg);
            let q = vec![0.0; count as usize];
            // fit the bias directly: forward of zero weights is bias
            let _ = (state_len, q);
            net.zero_all();
            net.set_output_bias(best as usize, 5.0);
            net
        };
        let state = vec![0.3; ris_state_len(&cfg)];
        let action = learner.policy.act(&state, 0.0, &mut rng).unwrap();
        assert_eq!(encode_ris_action(&action), best);
    }

    #[test]
    fn factorized_head_selects_per_element_argmax() {
        let cfg = ScenarioConfig {
            num_ris_elements: 16,
            num_grid_cells: 4,
            ..desk_scenario()
        };
        let train = TrainingConfig {
            action_cap: 1000, // force the factorized head
            ..quick_train()
        };
        let (head, outputs) = RisPolicy::head_for(&cfg, train.action_cap);
        assert_eq!(head, RisHead::Factorized);
        assert_eq!(outputs, 3 * 16 + 4);

        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let learner = RisLearner::new(&cfg, &train, true, &mut rng).unwrap();
        let state = vec![0.5; ris_state_len(&cfg)];
        let q = learner.policy.net.forward(&state).unwrap();
        let action = learner.policy.greedy_action(&state).unwrap();
        for n in 0..16 {
            let head_q = &q[3 * n..3 * n + 3];
            assert_eq!(action.deltas[n], argmax(head_q) as i8 - 1);
        }
        assert_eq!(action.position, argmax(&q[48..]));
    }

    #[test]
    fn factorized_learner_improves_on_fixed_target() {
        // tiny smoke check that multi-head updates reduce loss
        let cfg = ScenarioConfig {
            num_ris_elements: 6,
            ..desk_scenario()
        };
        let train = TrainingConfig {
            action_cap: 10,
            gamma: 0.0,
            learn_start: 32,
            batch_size: 32,
            learning_rate: 3e-3,
            ..quick_train()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut learner = RisLearner::new(&cfg, &train, true, &mut rng).unwrap();
        let state = vec![0.2; ris_state_len(&cfg)];
        for _ in 0..64 {
            let action = random_ris_action(6, cfg.num_grid_cells, &mut rng);
            learner.store(RisTransition {
                state: state.clone(),
                action,
                reward: 1.0,
                next_state: state.clone(),
            });
        }
        let mut first = None;
        let mut last = None;
        for _ in 0..300 {
            if let Some(loss) = learner.update(&train, &mut rng).unwrap() {
                first.get_or_insert(loss);
                last = Some(loss);
            }
        }
        assert!(last.unwrap() < 0.5 * first.unwrap());
    }
}
