//! Benchmark schemes: the exhaustive-search optimum, the random policy, the
//! no-RIS variant, the centralized single-network controller, and the plain
//! DQN variant of the RIS tier. The evaluation harness drives all of them
//! through one per-slot interface returning `(AllocationState, RisConfig)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    apply_ris_action, build_ris_state, d2d_action_count, decode_d2d_action, decode_ris_action,
    ris_action_count, ris_state_len, Learner, MarlModel, RisAction, RisModel, TrainRecord,
    TrainingConfig,
};
use crate::channel::RisConfig;
use crate::environment::{
    ris_reward, AllocationState, Environment, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::neural::{argmax, Mlp};
use crate::seeding::{child_seed, component, substream};

/// Identifier of an evaluation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    /// Per-slot optimum over all channel assignments and RIS implementations.
    #[serde(rename = "baseline1")]
    Baseline1Exhaustive,
    /// Centralized DDQN controlling allocation and RIS jointly.
    #[serde(rename = "c_ddqn")]
    CDdqn,
    /// Decentralized allocation agents plus the DDQN RIS controller.
    #[serde(rename = "d_ddqn")]
    DDdqn,
    /// Same structure with the plain DQN target at the BS.
    #[serde(rename = "d_dqn")]
    DDqn,
    /// Uniformly random allocation and RIS implementation per slot.
    #[serde(rename = "baseline2")]
    Baseline2Random,
    /// Allocation agents trained and evaluated with the RIS disabled.
    #[serde(rename = "no_ris")]
    NoRis,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::Baseline1Exhaustive,
        SchemeId::CDdqn,
        SchemeId::DDdqn,
        SchemeId::DDqn,
        SchemeId::Baseline2Random,
        SchemeId::NoRis,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeId::Baseline1Exhaustive => "baseline1",
            SchemeId::CDdqn => "c_ddqn",
            SchemeId::DDdqn => "d_ddqn",
            SchemeId::DDqn => "d_dqn",
            SchemeId::Baseline2Random => "baseline2",
            SchemeId::NoRis => "no_ris",
        }
    }
}

impl std::str::FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline1" | "exhaustive" => Ok(SchemeId::Baseline1Exhaustive),
            "c_ddqn" => Ok(SchemeId::CDdqn),
            "d_ddqn" => Ok(SchemeId::DDdqn),
            "d_dqn" => Ok(SchemeId::DDqn),
            "baseline2" | "random" => Ok(SchemeId::Baseline2Random),
            "no_ris" => Ok(SchemeId::NoRis),
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for SchemeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of the per-slot exhaustive search.
#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub alloc: AllocationState,
    pub ris: RisConfig,
    pub sum_rate: f64,
    /// False when no point of the search space satisfied both constraints;
    /// the returned maximizer is then the unconstrained best.
    pub feasible: bool,
}

/// Number of joint allocation candidates `(K * A_p)^I`, overflow-checked.
pub fn allocation_count(cfg: &ScenarioConfig) -> Result<u64> {
    let per_agent = d2d_action_count(cfg) as u64;
    let mut count: u64 = 1;
    for _ in 0..cfg.num_d2d_pairs {
        count = count
            .checked_mul(per_agent)
            .ok_or_else(|| Error::InvalidParameter("(K*A_p)^I overflows u64".into()))?;
    }
    Ok(count)
}

/// Number of RIS implementations `L^N * O` with `L` allowed phase levels.
pub fn ris_config_count(cfg: &ScenarioConfig) -> Result<u64> {
    let levels = cfg.phase_step_divisor as u64;
    let mut count: u64 = 1;
    for _ in 0..cfg.num_ris_elements {
        count = count
            .checked_mul(levels)
            .ok_or_else(|| Error::InvalidParameter("L^N overflows u64".into()))?;
    }
    count
        .checked_mul(cfg.num_grid_cells as u64)
        .ok_or_else(|| Error::InvalidParameter("L^N * O overflows u64".into()))
}

fn decode_alloc_index(mut index: u64, cfg: &ScenarioConfig) -> Result<AllocationState> {
    let per_agent = d2d_action_count(cfg) as u64;
    let mut assignments = Vec::with_capacity(cfg.num_d2d_pairs);
    let mut levels = Vec::with_capacity(cfg.num_d2d_pairs);
    for _ in 0..cfg.num_d2d_pairs {
        let action = (index % per_agent) as usize;
        index /= per_agent;
        let (rb, level) = decode_d2d_action(action, cfg.num_cellular, cfg.num_power_levels)?;
        assignments.push(Some(rb));
        levels.push(level);
    }
    AllocationState::new(assignments, levels, cfg)
}

fn decode_ris_config_index(mut index: u64, cfg: &ScenarioConfig) -> Result<RisConfig> {
    let levels = cfg.phase_step_divisor as u64;
    let mut phase_levels = Vec::with_capacity(cfg.num_ris_elements);
    for _ in 0..cfg.num_ris_elements {
        phase_levels.push((index % levels) as u32 + 1);
        index /= levels;
    }
    let position = index as usize;
    RisConfig::new(
        phase_levels,
        cfg.phase_step_divisor,
        cfg.ris_amplitude,
        position,
    )
}

/// Precomputed per-candidate allocation facts for the lean evaluator.
struct AllocFacts {
    /// `(pair, band, power_w)` for every transmitting pair.
    active: Vec<(usize, usize, f64)>,
    /// `reusers[k] = [(pair, power_w)]` in ascending pair order.
    reusers: Vec<Vec<(usize, f64)>>,
}

impl AllocFacts {
    fn new(alloc: &AllocationState, cfg: &ScenarioConfig) -> Self {
        let active = (0..cfg.num_d2d_pairs)
            .filter(|&i| alloc.is_active(i))
            .map(|i| (i, alloc.assigned_rb(i).unwrap(), alloc.d2d_power_w(i)))
            .collect();
        let reusers = (0..cfg.num_cellular)
            .map(|k| {
                (0..cfg.num_d2d_pairs)
                    .filter(|&i| alloc.reuses(k, i))
                    .map(|i| (i, alloc.d2d_power_w(i)))
                    .collect()
            })
            .collect();
        Self { active, reusers }
    }
}

/// Flat composite power gains reused across the enumeration.
struct GainScratch {
    d2d: Vec<f64>,     // [l * I * K + i * K + k]
    cell_rx: Vec<f64>, // [k * I + i]
    cell_bs: Vec<f64>, // [k]
    tx_bs: Vec<f64>,   // [i * K + k]
}

/// Sum rate and feasibility, mirroring `evaluate_outcome` operation for
/// operation (same accumulation order, hence identical floating-point
/// results) without allocating.
#[allow(clippy::too_many_arguments)]
fn lean_sum_rate(
    scratch: &GainScratch,
    facts: &AllocFacts,
    cellular_power_w: f64,
    num_pairs: usize,
    num_bands: usize,
    sigma2: f64,
    bandwidth: f64,
    min_d2d: f64,
    min_cell: f64,
) -> (f64, bool) {
    let mut cell_sum = 0.0;
    let mut cellular_ok = true;
    for k in 0..num_bands {
        let mut interference = 0.0;
        for &(i, power) in &facts.reusers[k] {
            interference += power * scratch.tx_bs[i * num_bands + k];
        }
        let sinr = cellular_power_w * scratch.cell_bs[k] / (interference + sigma2);
        cellular_ok &= sinr >= min_cell;
        cell_sum += bandwidth * (1.0 + sinr).log2();
    }
    let mut d2d_sum = 0.0;
    let mut d2d_ok = true;
    for &(i, k, power) in &facts.active {
        let mut interference = cellular_power_w * scratch.cell_rx[k * num_pairs + i];
        for &(l, other_power) in &facts.reusers[k] {
            if l != i {
                interference += other_power * scratch.d2d[(l * num_pairs + i) * num_bands + k];
            }
        }
        let sinr =
            power * scratch.d2d[(i * num_pairs + i) * num_bands + k] / (interference + sigma2);
        d2d_ok &= sinr >= min_d2d;
        d2d_sum += bandwidth * (1.0 + sinr).log2();
    }
    (cell_sum + d2d_sum, d2d_ok && cellular_ok)
}

/// Global maximizer of the sum rate over every channel assignment, power
/// level, phase configuration, and RIS position, subject to both QoS
/// constraints. Deterministic: ties break toward the lowest flat index; the
/// allocation index is the inner (fastest-moving) axis.
pub fn exhaustive_search(env: &Environment, cap: u64) -> Result<ExhaustiveResult> {
    let cfg = env.scenario();
    let alloc_count = allocation_count(cfg)?;
    let ris_count = ris_config_count(cfg)?;
    let total = alloc_count
        .checked_mul(ris_count)
        .ok_or_else(|| Error::InvalidParameter("search space overflows u64".into()))?;
    if total > cap {
        return Err(Error::CapExceeded { size: total, cap });
    }

    let candidates: Vec<AllocationState> = (0..alloc_count)
        .map(|a| decode_alloc_index(a, cfg))
        .collect::<Result<_>>()?;
    let facts: Vec<AllocFacts> = candidates.iter().map(|a| AllocFacts::new(a, cfg)).collect();
    let cellular_power_w = cfg.cellular_power_watts();
    let sigma2 = cfg.noise_watts();
    let bandwidth = cfg.bandwidth_hz;
    let min_d2d = crate::environment::db_to_linear(cfg.qos.gamma_min_d2d_db);
    let min_cell = crate::environment::db_to_linear(cfg.qos.gamma_min_cellular_db);
    let (num_pairs, num_bands, num_elems) = (
        cfg.num_d2d_pairs,
        cfg.num_cellular,
        cfg.num_ris_elements,
    );

    // one reflection factor per allowed level, exactly as RisConfig computes
    let levels = cfg.phase_step_divisor as usize;
    let factor_table: Vec<crate::channel::ComplexGain> = (1..=levels)
        .map(|l| {
            num_complex::Complex64::from_polar(
                cfg.ris_amplitude,
                l as f64 * std::f64::consts::PI / cfg.phase_step_divisor as f64,
            )
        })
        .collect();

    let mut scratch = GainScratch {
        d2d: vec![0.0; num_pairs * num_pairs * num_bands],
        cell_rx: vec![0.0; num_bands * num_pairs],
        cell_bs: vec![0.0; num_bands],
        tx_bs: vec![0.0; num_pairs * num_bands],
    };
    let mut digits = vec![0usize; num_elems];
    let mut factors = vec![crate::channel::ComplexGain::default(); num_elems];

    let mut best_feasible: Option<(f64, u64, u64)> = None;
    let mut best_any: Option<(f64, u64, u64)> = None;

    let pow_levels = ris_count / cfg.num_grid_cells as u64;
    for position in 0..cfg.num_grid_cells {
        let segments = env.slot_segments(position);
        for level_index in 0..pow_levels {
            let ris_index = position as u64 * pow_levels + level_index;
            // little-endian base-L digits of level_index
            let mut rem = level_index;
            for digit in digits.iter_mut() {
                *digit = (rem % levels as u64) as usize;
                rem /= levels as u64;
            }
            for (n, &d) in digits.iter().enumerate() {
                factors[n] = factor_table[d];
            }

            // fold segments with the factors, same order as SlotSegments::gains
            for l in 0..num_pairs {
                for i in 0..num_pairs {
                    for k in 0..num_bands {
                        let mut refl = crate::channel::ComplexGain::default();
                        for (n, f) in factors.iter().enumerate() {
                            refl += segments.seg_tx[l][n][k] * f * segments.seg_rx[i][n][k];
                        }
                        scratch.d2d[(l * num_pairs + i) * num_bands + k] =
                            (refl + segments.direct.d2d[l][i][k]).norm_sqr();
                    }
                }
            }
            for k in 0..num_bands {
                for i in 0..num_pairs {
                    let mut refl = crate::channel::ComplexGain::default();
                    for (n, f) in factors.iter().enumerate() {
                        refl += segments.seg_cell[k][n] * f * segments.seg_rx[i][n][k];
                    }
                    scratch.cell_rx[k * num_pairs + i] =
                        (refl + segments.direct.cell_rx[k][i]).norm_sqr();
                }
                let mut refl_bs = crate::channel::ComplexGain::default();
                for (n, f) in factors.iter().enumerate() {
                    refl_bs += segments.seg_cell[k][n] * f * segments.seg_bs[n][k];
                }
                scratch.cell_bs[k] = (refl_bs + segments.direct.cell_bs[k]).norm_sqr();
            }
            for i in 0..num_pairs {
                for k in 0..num_bands {
                    let mut refl = crate::channel::ComplexGain::default();
                    for (n, f) in factors.iter().enumerate() {
                        refl += segments.seg_tx[i][n][k] * f * segments.seg_bs[n][k];
                    }
                    scratch.tx_bs[i * num_bands + k] =
                        (refl + segments.direct.tx_bs[i][k]).norm_sqr();
                }
            }

            for (alloc_index, alloc_facts) in facts.iter().enumerate() {
                let (sum_rate, feasible) = lean_sum_rate(
                    &scratch,
                    alloc_facts,
                    cellular_power_w,
                    num_pairs,
                    num_bands,
                    sigma2,
                    bandwidth,
                    min_d2d,
                    min_cell,
                );
                let key = (sum_rate, ris_index, alloc_index as u64);
                if best_any.map_or(true, |(r, _, _)| key.0 > r) {
                    best_any = Some(key);
                }
                if feasible && best_feasible.map_or(true, |(r, _, _)| key.0 > r) {
                    best_feasible = Some(key);
                }
            }
        }
    }

    let (feasible, (sum_rate, ris_index, alloc_index)) = match (best_feasible, best_any) {
        (Some(best), _) => (true, best),
        (None, Some(best)) => (false, best),
        (None, None) => {
            return Err(Error::InvalidParameter("empty search space".into()));
        }
    };
    Ok(ExhaustiveResult {
        alloc: decode_alloc_index(alloc_index, cfg)?,
        ris: decode_ris_config_index(ris_index, cfg)?,
        sum_rate,
        feasible,
    })
}

/// Uniformly random legal allocation and RIS implementation.
pub fn random_policy<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<(AllocationState, RisConfig)> {
    let mut assignments = Vec::with_capacity(cfg.num_d2d_pairs);
    let mut levels = Vec::with_capacity(cfg.num_d2d_pairs);
    for _ in 0..cfg.num_d2d_pairs {
        let action = rng.random_range(0..d2d_action_count(cfg));
        let (rb, level) = decode_d2d_action(action, cfg.num_cellular, cfg.num_power_levels)?;
        assignments.push(Some(rb));
        levels.push(level);
    }
    let alloc = AllocationState::new(assignments, levels, cfg)?;
    let ris = RisConfig::random(
        cfg.num_ris_elements,
        cfg.phase_step_divisor,
        cfg.ris_amplitude,
        cfg.num_grid_cells,
        rng,
    )?;
    Ok((alloc, ris))
}

/// Centralized single-network controller over the joint action space
/// `(K * A_p)^I * 3^N * O`.
#[derive(Debug, Clone)]
pub struct CentralizedModel {
    pub net: Mlp,
}

/// `(K * A_p)^I * 3^N * O`, overflow-checked.
pub fn joint_action_count(cfg: &ScenarioConfig) -> Result<u64> {
    allocation_count(cfg)?
        .checked_mul(ris_action_count(cfg.num_ris_elements, cfg.num_grid_cells)?)
        .ok_or_else(|| Error::InvalidParameter("joint action space overflows u64".into()))
}

/// Split a joint action into the per-pair allocation and the RIS step.
pub fn decode_joint_action(
    index: u64,
    cfg: &ScenarioConfig,
) -> Result<(AllocationState, RisAction)> {
    let ris_count = ris_action_count(cfg.num_ris_elements, cfg.num_grid_cells)?;
    let limit = joint_action_count(cfg)?;
    if index >= limit {
        return Err(Error::IndexOutOfRange { index, limit });
    }
    let ris_part = index % ris_count;
    let alloc_part = index / ris_count;
    let alloc = decode_alloc_index(alloc_part, cfg)?;
    let ris_action = decode_ris_action(ris_part, cfg.num_ris_elements, cfg.num_grid_cells)?;
    Ok((alloc, ris_action))
}

pub fn encode_joint_action(
    alloc: &AllocationState,
    ris_action: &RisAction,
    cfg: &ScenarioConfig,
) -> u64 {
    let per_agent = d2d_action_count(cfg) as u64;
    let mut alloc_part: u64 = 0;
    for i in (0..cfg.num_d2d_pairs).rev() {
        let action = crate::agents::encode_d2d_action(
            alloc.assigned_rb(i).expect("joint actions always assign"),
            alloc.power_level(i),
            cfg.num_power_levels,
        ) as u64;
        alloc_part = alloc_part * per_agent + action;
    }
    let ris_count = ris_action_count(cfg.num_ris_elements, cfg.num_grid_cells)
        .expect("codec bounds checked at construction");
    alloc_part * ris_count + crate::agents::encode_ris_action(ris_action)
}

/// Train the centralized controller. Mirrors the RIS-tier loop, with the
/// joint action applied every slot: the allocation is replaced outright and
/// the RIS stepped by the action's deltas and position.
pub fn train_centralized(
    scenario: &ScenarioConfig,
    train: &TrainingConfig,
    master_seed: u64,
) -> Result<(CentralizedModel, Vec<TrainRecord>)> {
    scenario.validate()?;
    train.validate()?;
    let joint = joint_action_count(scenario)?;
    if joint > train.action_cap {
        return Err(Error::CapExceeded {
            size: joint,
            cap: train.action_cap,
        });
    }

    let mut widths = vec![ris_state_len(scenario)];
    widths.extend_from_slice(&train.bs_hidden);
    widths.push(joint as usize);
    let mut init_rng = substream(master_seed, &[component::WEIGHT_INIT, 2000]);
    let mut learner = Learner::new(&widths, train, true, &mut init_rng)?;
    let mut explore = substream(master_seed, &[component::EXPLORATION, 2000]);
    let mut replay = substream(master_seed, &[component::REPLAY, 2000]);
    let mut ris_rng = substream(master_seed, &[component::RIS_INIT, 2000]);

    let mut env =
        Environment::new(scenario.clone(), child_seed(master_seed, &[component::TRAIN, 3]))?;
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
        env.begin_episode(episode);
        for slot in 0..scenario.slots_per_episode as u64 {
            let state = build_ris_state(env.topology(), &alloc, &ris, scenario);
            let action_index = learner.act(&state, epsilon, &mut explore)? as u64;
            let (next_alloc, ris_action) = decode_joint_action(action_index, scenario)?;
            alloc = next_alloc;
            ris = apply_ris_action(&ris, &ris_action);
            let outcome = env.evaluate_slot(&ris, &alloc)?;
            let reward = ris_reward(&outcome);

            env.advance_small_scale();
            let next_state = build_ris_state(env.topology(), &alloc, &ris, scenario);
            learner.store(crate::neural::Transition {
                state,
                action: action_index as usize,
                reward: reward * train.reward_scale,
                next_state,
            });
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
        let mut episode_loss = None;
        for _ in 0..train.central_updates_per_episode {
            if let Some(loss) = learner.update(train, &mut replay)? {
                episode_loss = Some(loss);
            }
        }
        if let (Some(loss), Some(last)) = (episode_loss, log.last_mut()) {
            last.loss = Some(loss);
        }
    }

    Ok((
        CentralizedModel {
            net: learner.eval_net,
        },
        log,
    ))
}

/// Trained artifacts a scheme needs at evaluation time.
#[derive(Debug, Clone, Default)]
pub struct SchemeModels {
    pub marl: Option<MarlModel>,
    pub marl_no_ris: Option<MarlModel>,
    pub ris_ddqn: Option<RisModel>,
    pub ris_dqn: Option<RisModel>,
    pub centralized: Option<CentralizedModel>,
}

impl SchemeModels {
    fn ris_for(&self, scheme: SchemeId) -> Option<&RisModel> {
        match scheme {
            SchemeId::DDdqn => self.ris_ddqn.as_ref(),
            SchemeId::DDqn => self.ris_dqn.as_ref(),
            _ => None,
        }
    }
}

/// Per-episode evaluation state of one scheme; every scheme answers each
/// slot with `(AllocationState, RisConfig)`.
pub struct SchemeRunner<'a> {
    scheme: SchemeId,
    cfg: &'a ScenarioConfig,
    models: &'a SchemeModels,
    cap: u64,
    ris: RisConfig,
    alloc: AllocationState,
    /// Feasibility flag of the most recent exhaustive slot.
    pub last_exhaustive_feasible: bool,
}

impl<'a> SchemeRunner<'a> {
    pub fn new(
        scheme: SchemeId,
        cfg: &'a ScenarioConfig,
        models: &'a SchemeModels,
        cap: u64,
        init_rng: &mut impl Rng,
    ) -> Result<Self> {
        let amplitude = if scheme == SchemeId::NoRis {
            0.0
        } else {
            cfg.ris_amplitude
        };
        let ris = RisConfig::random(
            cfg.num_ris_elements,
            cfg.phase_step_divisor,
            amplitude,
            cfg.num_grid_cells,
            init_rng,
        )?;
        match scheme {
            SchemeId::DDdqn | SchemeId::DDqn => {
                if models.marl.is_none() || models.ris_for(scheme).is_none() {
                    return Err(Error::MissingData(format!(
                        "scheme {scheme} requires trained allocation and RIS models"
                    )));
                }
            }
            SchemeId::NoRis => {
                if models.marl_no_ris.is_none() {
                    return Err(Error::MissingData(
                        "no_ris requires allocation agents trained without the RIS".into(),
                    ));
                }
            }
            SchemeId::CDdqn => {
                if models.centralized.is_none() {
                    return Err(Error::MissingData(
                        "c_ddqn requires the trained centralized network".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(Self {
            scheme,
            cfg,
            models,
            cap,
            ris,
            alloc: AllocationState::all_off(cfg),
            last_exhaustive_feasible: true,
        })
    }

    /// Decide the slot's allocation and RIS implementation. The learned
    /// tiers act every slot, exactly as during interaction: the allocation
    /// agents react to the current observations (with the previous slot's
    /// allocation as interference context), then the BS steps the RIS.
    pub fn slot_action(
        &mut self,
        env: &Environment,
        rng: &mut impl Rng,
    ) -> Result<(AllocationState, RisConfig)> {
        match self.scheme {
            SchemeId::Baseline1Exhaustive => {
                let best = exhaustive_search(env, self.cap)?;
                self.last_exhaustive_feasible = best.feasible;
                Ok((best.alloc, best.ris))
            }
            SchemeId::Baseline2Random => {
                let (alloc, ris) = random_policy(self.cfg, rng)?;
                Ok((alloc, ris))
            }
            SchemeId::DDdqn | SchemeId::DDqn => {
                let marl = self.models.marl.as_ref().unwrap();
                let gains = env.link_gains(&self.ris);
                self.alloc = marl.greedy_joint_action(&gains, &self.alloc, self.cfg)?;
                let model = self.models.ris_for(self.scheme).unwrap();
                let state = build_ris_state(env.topology(), &self.alloc, &self.ris, self.cfg);
                let action = model.policy.greedy_action(&state)?;
                self.ris = apply_ris_action(&self.ris, &action);
                Ok((self.alloc.clone(), self.ris.clone()))
            }
            SchemeId::CDdqn => {
                let model = self.models.centralized.as_ref().unwrap();
                let state = build_ris_state(env.topology(), &self.alloc, &self.ris, self.cfg);
                let index = argmax(&model.net.forward(&state)?) as u64;
                let (alloc, ris_action) = decode_joint_action(index, self.cfg)?;
                self.alloc = alloc;
                self.ris = apply_ris_action(&self.ris, &ris_action);
                Ok((self.alloc.clone(), self.ris.clone()))
            }
            SchemeId::NoRis => {
                let marl = self.models.marl_no_ris.as_ref().unwrap();
                let gains = env.link_gains(&self.ris);
                self.alloc = marl.greedy_joint_action(&gains, &self.alloc, self.cfg)?;
                Ok((self.alloc.clone(), self.ris.clone()))
            }
        }
    }
}
