//! The underlay network world: scenario configuration, topology generation,
//! per-episode large-scale state, per-slot small-scale fading, slot
//! evaluation against the QoS constraints, and the two reward functions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    self, ComplexGain, FadingRealization, LinkGains, PathLossParams, RisConfig,
};
use crate::error::{Error, Result};
use crate::seeding::{component, substream};

/// Convert dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert a dB value to a linear ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Antenna heights in meters, per entity class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Heights {
    pub d2d: f64,
    pub cellular: f64,
    pub bs: f64,
    pub ris: f64,
}

impl Default for Heights {
    fn default() -> Self {
        Self {
            d2d: 1.0,
            cellular: 1.0,
            bs: 25.0,
            ris: 10.0,
        }
    }
}

/// Minimum SINR requirements at the D2D receivers and at the BS, in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QosThresholds {
    pub gamma_min_d2d_db: f64,
    pub gamma_min_cellular_db: f64,
}

impl Default for QosThresholds {
    fn default() -> Self {
        Self {
            gamma_min_d2d_db: -10.0,
            gamma_min_cellular_db: -13.0,
        }
    }
}

/// Placement policy for D2D transmitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyMode {
    /// Transmitters uniform over the whole area.
    Uniform,
    /// Transmitters clustered in a disc at three quarters of the diagonal,
    /// far from the BS and around one candidate RIS cell.
    CellEdge,
}

/// Scenario parameters. Defaults reproduce the reference simulation setup
/// (4 D2D pairs, 4 cellular users, 16 RIS elements over a 5x5 grid of a
/// 1000 m x 1000 m area, 9 power levels over [0, 24] dBm, -115 dBm noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Number of D2D pairs (I).
    pub num_d2d_pairs: usize,
    /// Number of cellular users and sub-bands (K).
    pub num_cellular: usize,
    /// Number of RIS elements (N).
    pub num_ris_elements: usize,
    /// Number of candidate grid cells for the RIS (O, a perfect square).
    pub num_grid_cells: usize,
    /// Number of discrete D2D power levels including "off" (A_p).
    pub num_power_levels: u32,
    /// Phase step divisor: delta = pi / divisor, levels run 1..=divisor.
    pub phase_step_divisor: u32,
    /// Common RIS amplitude attenuation A in [0, 1].
    pub ris_amplitude: f64,
    pub area_side_m: f64,
    /// Maximum transmitter-receiver separation when dropping a D2D pair.
    pub pairing_radius_m: f64,
    pub d2d_power_min_dbm: f64,
    pub d2d_power_max_dbm: f64,
    pub cellular_power_dbm: f64,
    pub noise_dbm: f64,
    pub bandwidth_hz: f64,
    /// Informational only: the path loss model is frequency independent.
    pub carrier_frequency_hz: f64,
    /// Informational: fast-fading update cadence represented by one slot.
    pub slot_duration_s: f64,
    pub qos: QosThresholds,
    pub heights: Heights,
    /// Large-scale model of the scattered (NLoS) direct links.
    pub path_loss: PathLossParams,
    /// Large-scale model of the elevated LoS segments to and from the RIS;
    /// the per-element aperture gain is folded into its constant.
    pub ris_path_loss: PathLossParams,
    /// Rician factor for RIS-segment links.
    pub rician_v: f64,
    pub slots_per_episode: usize,
    pub topology_mode: TopologyMode,
    /// Keep the episode-0 topology for the whole run (diagnostics/tests).
    pub static_topology: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_d2d_pairs: 4,
            num_cellular: 4,
            num_ris_elements: 16,
            num_grid_cells: 25,
            num_power_levels: 9,
            phase_step_divisor: 4,
            ris_amplitude: 1.0,
            area_side_m: 1000.0,
            pairing_radius_m: 50.0,
            d2d_power_min_dbm: 0.0,
            d2d_power_max_dbm: 24.0,
            cellular_power_dbm: 23.0,
            noise_dbm: -115.0,
            bandwidth_hz: 1e6,
            carrier_frequency_hz: 2e9,
            slot_duration_s: 1e-3,
            qos: QosThresholds::default(),
            heights: Heights::default(),
            path_loss: PathLossParams {
                h0: 1e-3,
                d0: 1.0,
                alpha: 3.0,
            },
            ris_path_loss: PathLossParams {
                h0: 0.06,
                d0: 1.0,
                alpha: 3.0,
            },
            rician_v: 3.0,
            slots_per_episode: 20,
            topology_mode: TopologyMode::Uniform,
            static_topology: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_d2d_pairs == 0 || self.num_cellular == 0 || self.num_ris_elements == 0 {
            return Err(Error::InvalidConfig(
                "I, K, and N must all be positive".into(),
            ));
        }
        let side = (self.num_grid_cells as f64).sqrt().round() as usize;
        if self.num_grid_cells == 0 || side * side != self.num_grid_cells {
            return Err(Error::InvalidConfig(format!(
                "num_grid_cells must be a positive perfect square, got {}",
                self.num_grid_cells
            )));
        }
        if self.num_power_levels < 2 {
            return Err(Error::InvalidConfig(
                "num_power_levels must be at least 2 (off plus one level)".into(),
            ));
        }
        if self.phase_step_divisor == 0 {
            return Err(Error::InvalidConfig(
                "phase_step_divisor must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ris_amplitude) {
            return Err(Error::InvalidConfig(format!(
                "ris_amplitude must lie in [0, 1], got {}",
                self.ris_amplitude
            )));
        }
        if !(self.area_side_m > 0.0) || !(self.pairing_radius_m > 0.0) {
            return Err(Error::InvalidConfig(
                "area_side_m and pairing_radius_m must be positive".into(),
            ));
        }
        if self.d2d_power_max_dbm < self.d2d_power_min_dbm {
            return Err(Error::InvalidConfig(
                "d2d power range is inverted".into(),
            ));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig("bandwidth_hz must be positive".into()));
        }
        if self.rician_v < 0.0 {
            return Err(Error::InvalidConfig(
                "rician_v must be non-negative".into(),
            ));
        }
        if self.slots_per_episode == 0 {
            return Err(Error::InvalidConfig(
                "slots_per_episode must be positive".into(),
            ));
        }
        PathLossParams::new(self.path_loss.h0, self.path_loss.d0, self.path_loss.alpha)?;
        PathLossParams::new(
            self.ris_path_loss.h0,
            self.ris_path_loss.d0,
            self.ris_path_loss.alpha,
        )?;
        Ok(())
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn cellular_power_watts(&self) -> f64 {
        dbm_to_watts(self.cellular_power_dbm)
    }

    /// Transmit power in watts for a discrete level; level 0 is off and
    /// levels 1..A_p-1 are uniform in dBm over the configured range.
    pub fn power_level_watts(&self, level: u32) -> f64 {
        match self.power_level_dbm(level) {
            Some(dbm) => dbm_to_watts(dbm),
            None => 0.0,
        }
    }

    pub fn power_level_dbm(&self, level: u32) -> Option<f64> {
        if level == 0 {
            return None;
        }
        if self.num_power_levels == 2 {
            return Some(self.d2d_power_max_dbm);
        }
        let span = self.d2d_power_max_dbm - self.d2d_power_min_dbm;
        let step = span / (self.num_power_levels - 2) as f64;
        Some(self.d2d_power_min_dbm + (level - 1) as f64 * step)
    }

    /// Centers of the O grid cells, row-major from the origin corner.
    pub fn grid_centers(&self) -> Vec<[f64; 2]> {
        let side = (self.num_grid_cells as f64).sqrt().round() as usize;
        let cell = self.area_side_m / side as f64;
        (0..self.num_grid_cells)
            .map(|o| {
                let col = o % side;
                let row = o / side;
                [(col as f64 + 0.5) * cell, (row as f64 + 0.5) * cell]
            })
            .collect()
    }
}

/// Positions of every entity, in meters inside the area square.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub d2d_tx: Vec<[f64; 2]>,
    pub d2d_rx: Vec<[f64; 2]>,
    pub cellular: Vec<[f64; 2]>,
    pub bs: [f64; 2],
    pub ris_grid: Vec<[f64; 2]>,
    pub heights: Heights,
    pub area_side: f64,
}

fn dist3(a: [f64; 2], ha: f64, b: [f64; 2], hb: f64) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = ha - hb;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Drop all entities for one episode. The BS sits at the area center;
/// cellular users and D2D transmitters are uniform (per the topology mode)
/// and each receiver is uniform in a disc around its transmitter.
pub fn generate_topology<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Topology {
    let side = config.area_side_m;
    let uniform_point = |rng: &mut R| -> [f64; 2] {
        [rng.random_range(0.0..side), rng.random_range(0.0..side)]
    };

    let disc_around = |rng: &mut R, center: [f64; 2], radius: f64| -> [f64; 2] {
        loop {
            let r = radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let p = [center[0] + r * phi.cos(), center[1] + r * phi.sin()];
            if p[0] >= 0.0 && p[0] <= side && p[1] >= 0.0 && p[1] <= side {
                return p;
            }
        }
    };

    let mut d2d_tx = Vec::with_capacity(config.num_d2d_pairs);
    let mut d2d_rx = Vec::with_capacity(config.num_d2d_pairs);
    for _ in 0..config.num_d2d_pairs {
        match config.topology_mode {
            TopologyMode::Uniform => {
                let tx = uniform_point(rng);
                let rx = disc_around(rng, tx, config.pairing_radius_m);
                d2d_tx.push(tx);
                d2d_rx.push(rx);
            }
            // receivers gather in a hotspot at three quarters of the
            // diagonal (around one candidate RIS cell); each transmitter
            // serves its receiver from the outer band of the pairing disc
            TopologyMode::CellEdge => {
                let hotspot = [0.75 * side, 0.75 * side];
                let rx = disc_around(rng, hotspot, 0.04 * side);
                let tx = loop {
                    let u: f64 = rng.random();
                    let r = config.pairing_radius_m * (0.36 + 0.64 * u).sqrt();
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    let p = [rx[0] + r * phi.cos(), rx[1] + r * phi.sin()];
                    if p[0] >= 0.0 && p[0] <= side && p[1] >= 0.0 && p[1] <= side {
                        break p;
                    }
                };
                d2d_tx.push(tx);
                d2d_rx.push(rx);
            }
        }
    }

    let cellular = (0..config.num_cellular).map(|_| uniform_point(rng)).collect();

    Topology {
        d2d_tx,
        d2d_rx,
        cellular,
        bs: [side / 2.0, side / 2.0],
        ris_grid: config.grid_centers(),
        heights: config.heights,
        area_side: side,
    }
}

/// Resource-reuse matrix and per-pair discrete power levels.
///
/// Each pair holds at most one sub-band, so the reuse matrix is stored as one
/// optional band index per pair. Power level 0 means the pair is off.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    assignments: Vec<Option<usize>>,
    power_levels: Vec<u32>,
    power_w: Vec<f64>,
    cellular_power_w: f64,
    num_bands: usize,
}

impl AllocationState {
    pub fn new(
        assignments: Vec<Option<usize>>,
        power_levels: Vec<u32>,
        config: &ScenarioConfig,
    ) -> Result<Self> {
        if assignments.len() != config.num_d2d_pairs || power_levels.len() != config.num_d2d_pairs
        {
            return Err(Error::DimensionMismatch(format!(
                "allocation for {} pairs, scenario has {}",
                assignments.len(),
                config.num_d2d_pairs
            )));
        }
        for rb in assignments.iter().flatten() {
            if *rb >= config.num_cellular {
                return Err(Error::IndexOutOfRange {
                    index: *rb as u64,
                    limit: config.num_cellular as u64,
                });
            }
        }
        for &level in &power_levels {
            if level >= config.num_power_levels {
                return Err(Error::IndexOutOfRange {
                    index: level as u64,
                    limit: config.num_power_levels as u64,
                });
            }
        }
        let power_w = power_levels
            .iter()
            .map(|&l| config.power_level_watts(l))
            .collect();
        Ok(Self {
            assignments,
            power_levels,
            power_w,
            cellular_power_w: config.cellular_power_watts(),
            num_bands: config.num_cellular,
        })
    }

    /// Everything unassigned and powered off.
    pub fn all_off(config: &ScenarioConfig) -> Self {
        Self::new(
            vec![None; config.num_d2d_pairs],
            vec![0; config.num_d2d_pairs],
            config,
        )
        .expect("all-off allocation is always valid")
    }

    /// Test constructor injecting transmit powers directly in watts.
    pub fn from_unit_powers(
        assignments: &[Option<usize>],
        powers_w: &[f64],
        cellular_power_w: f64,
        config: &ScenarioConfig,
    ) -> Self {
        Self {
            assignments: assignments.to_vec(),
            power_levels: powers_w.iter().map(|&p| u32::from(p > 0.0)).collect(),
            power_w: powers_w.to_vec(),
            cellular_power_w,
            num_bands: config.num_cellular,
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.assignments.len()
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    /// Resource-reuse coefficient: does pair `i` occupy sub-band `k`?
    pub fn reuses(&self, k: usize, i: usize) -> bool {
        self.assignments[i] == Some(k)
    }

    pub fn assigned_rb(&self, i: usize) -> Option<usize> {
        self.assignments[i]
    }

    pub fn power_level(&self, i: usize) -> u32 {
        self.power_levels[i]
    }

    pub fn d2d_power_w(&self, i: usize) -> f64 {
        self.power_w[i]
    }

    pub fn cellular_power_w(&self) -> f64 {
        self.cellular_power_w
    }

    /// A pair participates in the constraint check only when it holds a
    /// sub-band and transmits with nonzero power.
    pub fn is_active(&self, i: usize) -> bool {
        self.assignments[i].is_some() && self.power_w[i] > 0.0
    }
}

/// Everything computed for one time slot.
#[derive(Debug, Clone)]
pub struct SlotOutcome {
    /// Sum rate C in bits/s over all cellular users and active D2D pairs.
    pub sum_rate: f64,
    /// Per-pair rate; zero for idle pairs.
    pub d2d_rates: Vec<f64>,
    pub cellular_rates: Vec<f64>,
    /// Per-pair SINR on the assigned band; `None` for idle pairs.
    pub d2d_sinrs: Vec<Option<f64>>,
    pub cellular_sinrs: Vec<f64>,
    /// Every active D2D pair meets its minimum SINR (vacuously true if none).
    pub d2d_ok: bool,
    /// Every cellular user meets the BS minimum SINR.
    pub cellular_ok: bool,
}

impl SlotOutcome {
    pub fn feasible(&self) -> bool {
        self.d2d_ok && self.cellular_ok
    }

    pub fn d2d_rate_sum(&self) -> f64 {
        self.d2d_rates.iter().sum()
    }

    pub fn cellular_rate_sum(&self) -> f64 {
        self.cellular_rates.iter().sum()
    }
}

/// Shared reward for the resource-allocation agents: the sum rate when both
/// QoS constraints hold, otherwise zero.
pub fn marl_reward(outcome: &SlotOutcome) -> f64 {
    if outcome.feasible() {
        outcome.sum_rate
    } else {
        0.0
    }
}

/// Reward for the RIS controller: full sum rate on success; on failure the
/// sub-sum of whichever side still delivers, with the D2D branch taking
/// precedence when both constraints are violated.
pub fn ris_reward(outcome: &SlotOutcome) -> f64 {
    if outcome.feasible() {
        outcome.sum_rate
    } else if !outcome.d2d_ok {
        outcome.d2d_rate_sum()
    } else {
        outcome.cellular_rate_sum()
    }
}

/// Evaluate one slot from composite link gains.
pub fn evaluate_outcome(
    gains: &LinkGains,
    alloc: &AllocationState,
    config: &ScenarioConfig,
) -> Result<SlotOutcome> {
    let sigma2 = config.noise_watts();
    let bw = config.bandwidth_hz;
    let min_d2d = db_to_linear(config.qos.gamma_min_d2d_db);
    let min_cell = db_to_linear(config.qos.gamma_min_cellular_db);

    let mut cellular_sinrs = Vec::with_capacity(config.num_cellular);
    let mut cellular_rates = Vec::with_capacity(config.num_cellular);
    let mut cellular_ok = true;
    for k in 0..config.num_cellular {
        let sinr = channel::sinr_cellular(k, alloc, gains, sigma2)?;
        cellular_ok &= sinr >= min_cell;
        cellular_rates.push(channel::link_rate(sinr, bw)?);
        cellular_sinrs.push(sinr);
    }

    let mut d2d_sinrs = vec![None; config.num_d2d_pairs];
    let mut d2d_rates = vec![0.0; config.num_d2d_pairs];
    let mut d2d_ok = true;
    for i in 0..config.num_d2d_pairs {
        if !alloc.is_active(i) {
            continue;
        }
        let k = alloc.assigned_rb(i).unwrap();
        let sinr = channel::sinr_d2d(i, k, alloc, gains, sigma2)?;
        d2d_ok &= sinr >= min_d2d;
        d2d_rates[i] = channel::link_rate(sinr, bw)?;
        d2d_sinrs[i] = Some(sinr);
    }

    let sum_rate = cellular_rates.iter().sum::<f64>() + d2d_rates.iter().sum::<f64>();
    Ok(SlotOutcome {
        sum_rate,
        d2d_rates,
        cellular_rates,
        d2d_sinrs,
        cellular_sinrs,
        d2d_ok,
        cellular_ok,
    })
}

/// Direct-link composite coefficients for one slot.
#[derive(Debug, Clone)]
pub struct DirectLinks {
    pub d2d: Vec<Vec<Vec<ComplexGain>>>,
    pub cell_rx: Vec<Vec<ComplexGain>>,
    pub cell_bs: Vec<ComplexGain>,
    pub tx_bs: Vec<Vec<ComplexGain>>,
}

/// Per-element segment coefficients of every RIS-aided link for one slot and
/// one RIS position, plus the direct links.
#[derive(Debug, Clone)]
pub struct SlotSegments {
    pub direct: DirectLinks,
    /// `seg_tx[i][n][k]`: D2D tx `i` -> element `n`.
    pub seg_tx: Vec<Vec<Vec<ComplexGain>>>,
    /// `seg_rx[i][n][k]`: element `n` -> D2D rx `i`.
    pub seg_rx: Vec<Vec<Vec<ComplexGain>>>,
    /// `seg_cell[k][n]`: cellular user `k` -> element `n` (band `k`).
    pub seg_cell: Vec<Vec<ComplexGain>>,
    /// `seg_bs[n][k]`: element `n` -> BS.
    pub seg_bs: Vec<Vec<ComplexGain>>,
}

impl SlotSegments {
    /// Fold per-element reflection factors `A e^{j theta_n}` over every link.
    pub fn gains(&self, factors: &[ComplexGain]) -> LinkGains {
        let num_pairs = self.seg_tx.len();
        let num_bands = self.cellular_bands();
        let cascade = |tx: &[Vec<ComplexGain>], rx: &[Vec<ComplexGain>], k: usize| {
            let mut acc = ComplexGain::default();
            for (n, f) in factors.iter().enumerate() {
                acc += tx[n][k] * f * rx[n][k];
            }
            acc
        };
        let mut d2d = vec![vec![vec![0.0; num_bands]; num_pairs]; num_pairs];
        for l in 0..num_pairs {
            for i in 0..num_pairs {
                for k in 0..num_bands {
                    let refl = cascade(&self.seg_tx[l], &self.seg_rx[i], k);
                    d2d[l][i][k] =
                        channel::composite_channel(refl, self.direct.d2d[l][i][k]).norm_sqr();
                }
            }
        }
        let mut cell_rx = vec![vec![0.0; num_pairs]; num_bands];
        let mut cell_bs = vec![0.0; num_bands];
        for k in 0..num_bands {
            for i in 0..num_pairs {
                let mut refl = ComplexGain::default();
                for (n, f) in factors.iter().enumerate() {
                    refl += self.seg_cell[k][n] * f * self.seg_rx[i][n][k];
                }
                cell_rx[k][i] =
                    channel::composite_channel(refl, self.direct.cell_rx[k][i]).norm_sqr();
            }
            let mut refl_bs = ComplexGain::default();
            for (n, f) in factors.iter().enumerate() {
                refl_bs += self.seg_cell[k][n] * f * self.seg_bs[n][k];
            }
            cell_bs[k] = channel::composite_channel(refl_bs, self.direct.cell_bs[k]).norm_sqr();
        }
        let mut tx_bs = vec![vec![0.0; num_bands]; num_pairs];
        for i in 0..num_pairs {
            for k in 0..num_bands {
                let refl = cascade(&self.seg_tx[i], &self.seg_bs, k);
                tx_bs[i][k] = channel::composite_channel(refl, self.direct.tx_bs[i][k]).norm_sqr();
            }
        }
        LinkGains {
            d2d,
            cell_rx,
            cell_bs,
            tx_bs,
        }
    }

    fn cellular_bands(&self) -> usize {
        self.direct.cell_bs.len()
    }
}

/// Per-episode large-scale state: path losses for every link (for the RIS
/// segments, one loss per candidate grid cell) and the fixed LoS phases of
/// the Rician segments.
#[derive(Debug, Clone)]
struct LargeScale {
    loss_d2d: Vec<Vec<f64>>,
    loss_cell_rx: Vec<Vec<f64>>,
    loss_cell_bs: Vec<f64>,
    loss_tx_bs: Vec<f64>,
    loss_tx_ris: Vec<Vec<f64>>,
    loss_ris_rx: Vec<Vec<f64>>,
    loss_cell_ris: Vec<Vec<f64>>,
    loss_ris_bs: Vec<f64>,
    phi_tx_ris: Vec<Vec<f64>>,
    phi_ris_rx: Vec<Vec<f64>>,
    phi_cell_ris: Vec<f64>,
    phi_ris_bs: Vec<f64>,
}

// Link family tags for per-link fading substreams.
const LINK_D2D: u64 = 1;
const LINK_CELL_RX: u64 = 2;
const LINK_CELL_BS: u64 = 3;
const LINK_TX_BS: u64 = 4;
const LINK_TX_RIS: u64 = 5;
const LINK_RIS_RX: u64 = 6;
const LINK_CELL_RIS: u64 = 7;
const LINK_RIS_BS: u64 = 8;

fn link_tag(family: u64, a: usize, b: usize) -> u64 {
    family * 1_048_576 + (a as u64) * 1024 + b as u64
}

/// One simulated world instance with deterministic per-link random streams.
///
/// State evolves per episode (topology and large-scale refresh) and per slot
/// (small-scale refresh). Every draw is a pure function of the master seed,
/// the episode, the slot, and the link, so realizations stay matched across
/// configurations that only change unrelated dimensions.
#[derive(Debug, Clone)]
pub struct Environment {
    scenario: ScenarioConfig,
    master_seed: u64,
    episode: u64,
    slot: u64,
    topology: Topology,
    large: LargeScale,
    fading: FadingRealization,
}

impl Environment {
    pub fn new(scenario: ScenarioConfig, master_seed: u64) -> Result<Self> {
        scenario.validate()?;
        let mut topo_rng = substream(master_seed, &[component::TOPOLOGY, 0]);
        let topology = generate_topology(&scenario, &mut topo_rng);
        let large = Self::build_large_scale(&scenario, &topology, master_seed, 0)?;
        let fading = Self::draw_fading(&scenario, master_seed, 0, 0);
        Ok(Self {
            scenario,
            master_seed,
            episode: 0,
            slot: 0,
            topology,
            large,
            fading,
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn fading(&self) -> &FadingRealization {
        &self.fading
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// Direct-link large-scale loss, exposed for oracle checks.
    pub fn direct_loss_d2d(&self, tx: usize, rx: usize) -> f64 {
        self.large.loss_d2d[tx][rx]
    }

    /// Refresh topology (unless static), large-scale losses, LoS phases, and
    /// the slot-0 small-scale realization for a new episode.
    pub fn begin_episode(&mut self, episode: u64) {
        self.episode = episode;
        self.slot = 0;
        if !self.scenario.static_topology {
            let mut topo_rng = substream(self.master_seed, &[component::TOPOLOGY, episode]);
            self.topology = generate_topology(&self.scenario, &mut topo_rng);
        }
        self.large =
            Self::build_large_scale(&self.scenario, &self.topology, self.master_seed, episode)
                .expect("validated scenario cannot produce invalid losses");
        self.fading = Self::draw_fading(&self.scenario, self.master_seed, episode, 0);
    }

    /// Redraw every small-scale coefficient; large-scale state is untouched.
    pub fn advance_small_scale(&mut self) {
        self.slot += 1;
        self.fading = Self::draw_fading(&self.scenario, self.master_seed, self.episode, self.slot);
    }

    fn build_large_scale(
        cfg: &ScenarioConfig,
        topo: &Topology,
        master: u64,
        episode: u64,
    ) -> Result<LargeScale> {
        let pl = &cfg.path_loss;
        let pl_seg = &cfg.ris_path_loss;
        let h = &topo.heights;
        let (num_pairs, num_bands, num_elems, num_cells) = (
            cfg.num_d2d_pairs,
            cfg.num_cellular,
            cfg.num_ris_elements,
            cfg.num_grid_cells,
        );

        let loss = |d: f64| channel::path_loss(d, pl);
        let seg_loss = |d: f64| channel::path_loss(d, pl_seg);

        let mut loss_d2d = vec![vec![0.0; num_pairs]; num_pairs];
        for l in 0..num_pairs {
            for i in 0..num_pairs {
                loss_d2d[l][i] = loss(dist3(topo.d2d_tx[l], h.d2d, topo.d2d_rx[i], h.d2d))?;
            }
        }
        let mut loss_cell_rx = vec![vec![0.0; num_pairs]; num_bands];
        for k in 0..num_bands {
            for i in 0..num_pairs {
                loss_cell_rx[k][i] =
                    loss(dist3(topo.cellular[k], h.cellular, topo.d2d_rx[i], h.d2d))?;
            }
        }
        let mut loss_cell_bs = vec![0.0; num_bands];
        for k in 0..num_bands {
            loss_cell_bs[k] = loss(dist3(topo.cellular[k], h.cellular, topo.bs, h.bs))?;
        }
        let mut loss_tx_bs = vec![0.0; num_pairs];
        for i in 0..num_pairs {
            loss_tx_bs[i] = loss(dist3(topo.d2d_tx[i], h.d2d, topo.bs, h.bs))?;
        }

        let mut loss_tx_ris = vec![vec![0.0; num_cells]; num_pairs];
        let mut loss_ris_rx = vec![vec![0.0; num_cells]; num_pairs];
        let mut loss_cell_ris = vec![vec![0.0; num_cells]; num_bands];
        let mut loss_ris_bs = vec![0.0; num_cells];
        for (o, &cell) in topo.ris_grid.iter().enumerate() {
            for i in 0..num_pairs {
                loss_tx_ris[i][o] = seg_loss(dist3(topo.d2d_tx[i], h.d2d, cell, h.ris))?;
                loss_ris_rx[i][o] = seg_loss(dist3(cell, h.ris, topo.d2d_rx[i], h.d2d))?;
            }
            for k in 0..num_bands {
                loss_cell_ris[k][o] = seg_loss(dist3(topo.cellular[k], h.cellular, cell, h.ris))?;
            }
            loss_ris_bs[o] = seg_loss(dist3(cell, h.ris, topo.bs, h.bs))?;
        }

        // Fixed specular phases: one per link and sub-band, shared by every
        // element, redrawn with the large-scale state.
        let phases = |family: u64, a: usize| -> Vec<f64> {
            let mut rng = substream(master, &[component::LOS_PHASES, episode, link_tag(family, a, 0)]);
            (0..num_bands)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect()
        };
        let phi_tx_ris = (0..num_pairs).map(|i| phases(LINK_TX_RIS, i)).collect();
        let phi_ris_rx = (0..num_pairs).map(|i| phases(LINK_RIS_RX, i)).collect();
        let phi_cell_ris = (0..num_bands)
            .map(|k| {
                let mut rng =
                    substream(master, &[component::LOS_PHASES, episode, link_tag(LINK_CELL_RIS, k, 0)]);
                rng.random_range(0.0..std::f64::consts::TAU)
            })
            .collect();
        let phi_ris_bs = phases(LINK_RIS_BS, 0);

        Ok(LargeScale {
            loss_d2d,
            loss_cell_rx,
            loss_cell_bs,
            loss_tx_bs,
            loss_tx_ris,
            loss_ris_rx,
            loss_cell_ris,
            loss_ris_bs,
            phi_tx_ris,
            phi_ris_rx,
            phi_cell_ris,
            phi_ris_bs,
        })
    }

    fn draw_fading(cfg: &ScenarioConfig, master: u64, episode: u64, slot: u64) -> FadingRealization {
        let (num_pairs, num_bands, num_elems) = (
            cfg.num_d2d_pairs,
            cfg.num_cellular,
            cfg.num_ris_elements,
        );
        let stream = |family: u64, a: usize, b: usize| {
            substream(
                master,
                &[component::SMALL_SCALE, episode, slot, link_tag(family, a, b)],
            )
        };
        let draw_bands = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<ComplexGain> {
            (0..num_bands).map(|_| channel::sample_rayleigh(rng)).collect()
        };
        let draw_elems_bands = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<Vec<ComplexGain>> {
            (0..num_elems).map(|_| draw_bands(rng)).collect()
        };

        let direct_d2d = (0..num_pairs)
            .map(|l| {
                (0..num_pairs)
                    .map(|i| draw_bands(&mut stream(LINK_D2D, l, i)))
                    .collect()
            })
            .collect();
        let direct_cell_rx = (0..num_bands)
            .map(|k| {
                (0..num_pairs)
                    .map(|i| channel::sample_rayleigh(&mut stream(LINK_CELL_RX, k, i)))
                    .collect()
            })
            .collect();
        let direct_cell_bs = (0..num_bands)
            .map(|k| channel::sample_rayleigh(&mut stream(LINK_CELL_BS, k, 0)))
            .collect();
        let direct_tx_bs = (0..num_pairs)
            .map(|i| draw_bands(&mut stream(LINK_TX_BS, i, 0)))
            .collect();
        let nlos_tx_ris = (0..num_pairs)
            .map(|i| draw_elems_bands(&mut stream(LINK_TX_RIS, i, 0)))
            .collect();
        let nlos_ris_rx = (0..num_pairs)
            .map(|i| draw_elems_bands(&mut stream(LINK_RIS_RX, i, 0)))
            .collect();
        let nlos_cell_ris = (0..num_bands)
            .map(|k| {
                let mut rng = stream(LINK_CELL_RIS, k, 0);
                (0..num_elems)
                    .map(|_| channel::sample_rayleigh(&mut rng))
                    .collect()
            })
            .collect();
        let nlos_ris_bs = draw_elems_bands(&mut stream(LINK_RIS_BS, 0, 0));

        FadingRealization {
            direct_d2d,
            direct_cell_rx,
            direct_cell_bs,
            direct_tx_bs,
            nlos_tx_ris,
            nlos_ris_rx,
            nlos_cell_ris,
            nlos_ris_bs,
        }
    }

    /// Direct-only composite coefficients (the no-RIS degeneracy).
    fn direct_links(&self) -> DirectLinks {
        let cfg = &self.scenario;
        let fad = &self.fading;
        let ls = &self.large;
        let (num_pairs, num_bands) = (cfg.num_d2d_pairs, cfg.num_cellular);
        let direct = |loss: f64, f: ComplexGain| -> ComplexGain { loss.sqrt() * f };

        DirectLinks {
            d2d: (0..num_pairs)
                .map(|l| {
                    (0..num_pairs)
                        .map(|i| {
                            (0..num_bands)
                                .map(|k| direct(ls.loss_d2d[l][i], fad.direct_d2d[l][i][k]))
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            cell_rx: (0..num_bands)
                .map(|k| {
                    (0..num_pairs)
                        .map(|i| direct(ls.loss_cell_rx[k][i], fad.direct_cell_rx[k][i]))
                        .collect()
                })
                .collect(),
            cell_bs: (0..num_bands)
                .map(|k| direct(ls.loss_cell_bs[k], fad.direct_cell_bs[k]))
                .collect(),
            tx_bs: (0..num_pairs)
                .map(|i| {
                    (0..num_bands)
                        .map(|k| direct(ls.loss_tx_bs[i], fad.direct_tx_bs[i][k]))
                        .collect()
                })
                .collect(),
        }
    }

    /// Per-element Rician segment coefficients for the current slot with the
    /// RIS parked at grid cell `position`, together with the direct links.
    /// Folding these against per-element reflection factors reproduces
    /// [`Environment::link_gains`] exactly, which lets an enumerator sweep
    /// phase configurations without recomputing the segments.
    pub fn slot_segments(&self, position: usize) -> SlotSegments {
        let cfg = &self.scenario;
        let fad = &self.fading;
        let ls = &self.large;
        let (num_pairs, num_bands, num_elems) = (
            cfg.num_d2d_pairs,
            cfg.num_cellular,
            cfg.num_ris_elements,
        );
        let v = cfg.rician_v;
        let segment = |loss: f64, phi: f64, nlos: ComplexGain| -> ComplexGain {
            loss.sqrt() * channel::rician_mix(v, phi, nlos)
        };

        let mut seg_tx = vec![vec![vec![ComplexGain::default(); num_bands]; num_elems]; num_pairs];
        let mut seg_rx = vec![vec![vec![ComplexGain::default(); num_bands]; num_elems]; num_pairs];
        for i in 0..num_pairs {
            for n in 0..num_elems {
                for k in 0..num_bands {
                    seg_tx[i][n][k] = segment(
                        ls.loss_tx_ris[i][position],
                        ls.phi_tx_ris[i][k],
                        fad.nlos_tx_ris[i][n][k],
                    );
                    seg_rx[i][n][k] = segment(
                        ls.loss_ris_rx[i][position],
                        ls.phi_ris_rx[i][k],
                        fad.nlos_ris_rx[i][n][k],
                    );
                }
            }
        }
        let mut seg_cell = vec![vec![ComplexGain::default(); num_elems]; num_bands];
        for k in 0..num_bands {
            for n in 0..num_elems {
                seg_cell[k][n] = segment(
                    ls.loss_cell_ris[k][position],
                    ls.phi_cell_ris[k],
                    fad.nlos_cell_ris[k][n],
                );
            }
        }
        let mut seg_bs = vec![vec![ComplexGain::default(); num_bands]; num_elems];
        for n in 0..num_elems {
            for k in 0..num_bands {
                seg_bs[n][k] = segment(
                    ls.loss_ris_bs[position],
                    ls.phi_ris_bs[k],
                    fad.nlos_ris_bs[n][k],
                );
            }
        }

        SlotSegments {
            direct: self.direct_links(),
            seg_tx,
            seg_rx,
            seg_cell,
            seg_bs,
        }
    }

    /// Composite power gains for the current slot under `ris`.
    ///
    /// With zero amplitude the reflection path is skipped entirely, so the
    /// no-RIS degeneracy reproduces the direct-only channel bit-exactly.
    pub fn link_gains(&self, ris: &RisConfig) -> LinkGains {
        if ris.amplitude() == 0.0 {
            let direct = self.direct_links();
            return LinkGains {
                d2d: direct
                    .d2d
                    .iter()
                    .map(|per_rx| {
                        per_rx
                            .iter()
                            .map(|per_k| per_k.iter().map(|h| h.norm_sqr()).collect())
                            .collect()
                    })
                    .collect(),
                cell_rx: direct
                    .cell_rx
                    .iter()
                    .map(|per_i| per_i.iter().map(|h| h.norm_sqr()).collect())
                    .collect(),
                cell_bs: direct.cell_bs.iter().map(|h| h.norm_sqr()).collect(),
                tx_bs: direct
                    .tx_bs
                    .iter()
                    .map(|per_k| per_k.iter().map(|h| h.norm_sqr()).collect())
                    .collect(),
            };
        }
        self.slot_segments(ris.position_index())
            .gains(&ris.reflection_factors())
    }

    /// Evaluate the current slot under a RIS configuration and allocation.
    pub fn evaluate_slot(&self, ris: &RisConfig, alloc: &AllocationState) -> Result<SlotOutcome> {
        let gains = self.link_gains(ris);
        evaluate_outcome(&gains, alloc, &self.scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
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

    #[test]
    fn grid_centers_form_lattice() {
        let cfg = ScenarioConfig::default();
        let centers = cfg.grid_centers();
        assert_eq!(centers.len(), 25);
        for (o, c) in centers.iter().enumerate() {
            let col = o % 5;
            let row = o / 5;
            assert_relative_eq!(c[0], 100.0 + 200.0 * col as f64);
            assert_relative_eq!(c[1], 100.0 + 200.0 * row as f64);
        }
    }

    #[test]
    fn topology_deterministic_under_seed() {
        let cfg = desk_scenario();
        let a = generate_topology(&cfg, &mut ChaCha12Rng::seed_from_u64(3));
        let b = generate_topology(&cfg, &mut ChaCha12Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn topology_cellular_mean_position() {
        let cfg = ScenarioConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let topo = generate_topology(&cfg, &mut rng);
            sum += topo.cellular.iter().map(|p| p[0]).sum::<f64>() / topo.cellular.len() as f64;
        }
        assert_abs_diff_eq!(sum / n as f64, 500.0, epsilon = 5.0);
    }

    #[test]
    fn topology_respects_pairing_radius() {
        let cfg = ScenarioConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..200 {
            let topo = generate_topology(&cfg, &mut rng);
            for i in 0..cfg.num_d2d_pairs {
                let d = dist3(topo.d2d_tx[i], 0.0, topo.d2d_rx[i], 0.0);
                assert!(d <= cfg.pairing_radius_m + 1e-9);
            }
        }
    }

    #[test]
    fn power_level_mapping() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.power_level_watts(0), 0.0);
        assert_relative_eq!(cfg.power_level_dbm(1).unwrap(), 0.0);
        assert_relative_eq!(cfg.power_level_dbm(8).unwrap(), 24.0);
        // uniform spacing in dBm
        let step = cfg.power_level_dbm(2).unwrap() - cfg.power_level_dbm(1).unwrap();
        assert_relative_eq!(step, 24.0 / 7.0, max_relative = 1e-12);
    }

    #[test]
    fn advance_small_scale_changes_draws_only() {
        let cfg = desk_scenario();
        let mut env = Environment::new(cfg, 7).unwrap();
        let before = env.fading().direct_d2d[0][0][0];
        let loss_before = env.direct_loss_d2d(0, 0);
        env.advance_small_scale();
        let after = env.fading().direct_d2d[0][0][0];
        assert_ne!(before, after);
        assert_eq!(loss_before, env.direct_loss_d2d(0, 0));
    }

    #[test]
    fn fading_dimensions_match() {
        let cfg = desk_scenario();
        let env = Environment::new(cfg.clone(), 1).unwrap();
        assert!(env.fading().check_dims(
            cfg.num_d2d_pairs,
            cfg.num_cellular,
            cfg.num_ris_elements
        ));
    }

    #[test]
    fn direct_gain_is_unit_mean_exponential_scaled_by_loss() {
        let mut cfg = desk_scenario();
        cfg.static_topology = true;
        let mut env = Environment::new(cfg, 13).unwrap();
        let loss = env.direct_loss_d2d(0, 0);
        let mut samples = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let g = loss.sqrt() * env.fading().direct_d2d[0][0][0];
            samples.push(g.norm_sqr());
            env.advance_small_scale();
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            / (samples.len() - 1) as f64;
        assert_relative_eq!(mean, loss, max_relative = 0.02);
        assert_relative_eq!(var, loss * loss, max_relative = 0.05);
    }

    #[test]
    fn evaluate_slot_without_d2d_is_cellular_only() {
        let cfg = desk_scenario();
        let env = Environment::new(cfg.clone(), 2).unwrap();
        let ris = RisConfig::new(vec![1; 4], 4, cfg.ris_amplitude, 0).unwrap();
        let alloc = AllocationState::all_off(&cfg);
        let out = env.evaluate_slot(&ris, &alloc).unwrap();
        assert!(out.d2d_ok, "idle pairs are vacuously feasible");
        assert_relative_eq!(out.sum_rate, out.cellular_rate_sum(), max_relative = 1e-12);
        assert_eq!(out.d2d_rate_sum(), 0.0);
    }

    #[test]
    fn evaluate_outcome_matches_hand_computation() {
        // One pair, one cellular user, hand-set gains and powers.
        let mut cfg = ScenarioConfig {
            num_d2d_pairs: 1,
            num_cellular: 1,
            ..ScenarioConfig::default()
        };
        cfg.noise_dbm = 30.0; // 1 W noise
        let gains = LinkGains {
            d2d: vec![vec![vec![0.5]]],
            cell_rx: vec![vec![0.25]],
            cell_bs: vec![0.8],
            tx_bs: vec![vec![0.1]],
        };
        let alloc = AllocationState::from_unit_powers(&[Some(0)], &[2.0], 4.0, &cfg);
        let out = evaluate_outcome(&gains, &alloc, &cfg).unwrap();

        let gamma_d = 2.0 * 0.5 / (4.0 * 0.25 + 1.0);
        let gamma_u = 4.0 * 0.8 / (2.0 * 0.1 + 1.0);
        assert_relative_eq!(out.d2d_sinrs[0].unwrap(), gamma_d, max_relative = 1e-12);
        assert_relative_eq!(out.cellular_sinrs[0], gamma_u, max_relative = 1e-12);
        let expect =
            1e6 * ((1.0 + gamma_d).log2() + (1.0 + gamma_u).log2());
        assert_relative_eq!(out.sum_rate, expect, max_relative = 1e-12);
        assert!(out.feasible());
    }

    #[test]
    fn zero_amplitude_equals_direct_only() {
        let cfg = desk_scenario();
        let env = Environment::new(cfg.clone(), 21).unwrap();
        let ris_off = RisConfig::new(vec![3, 1, 4, 2], 4, 0.0, 2).unwrap();
        let gains = env.link_gains(&ris_off);
        // recompute directly from fading and losses
        for l in 0..cfg.num_d2d_pairs {
            for i in 0..cfg.num_d2d_pairs {
                for k in 0..cfg.num_cellular {
                    let expected = (env.direct_loss_d2d(l, i).sqrt()
                        * env.fading().direct_d2d[l][i][k])
                        .norm_sqr();
                    assert_eq!(gains.d2d[l][i][k], expected);
                }
            }
        }
        // and phase levels are irrelevant at zero amplitude
        let other = RisConfig::new(vec![1, 1, 1, 1], 4, 0.0, 0).unwrap();
        let gains2 = env.link_gains(&other);
        assert_eq!(gains.d2d, gains2.d2d);
        assert_eq!(gains.cell_bs, gains2.cell_bs);
    }

    #[test]
    fn reward_branches() {
        let base = SlotOutcome {
            sum_rate: 7.3,
            d2d_rates: vec![2.1],
            cellular_rates: vec![3.4, 1.8],
            d2d_sinrs: vec![Some(1.0)],
            cellular_sinrs: vec![1.0, 1.0],
            d2d_ok: true,
            cellular_ok: true,
        };
        assert_eq!(marl_reward(&base), 7.3);
        assert_eq!(ris_reward(&base), 7.3);

        let d2d_fail = SlotOutcome {
            d2d_ok: false,
            ..base.clone()
        };
        assert_eq!(marl_reward(&d2d_fail), 0.0);
        assert_relative_eq!(ris_reward(&d2d_fail), 2.1);

        let cell_fail = SlotOutcome {
            cellular_ok: false,
            ..base.clone()
        };
        assert_eq!(marl_reward(&cell_fail), 0.0);
        assert_relative_eq!(ris_reward(&cell_fail), 3.4 + 1.8);

        let both_fail = SlotOutcome {
            d2d_ok: false,
            cellular_ok: false,
            ..base
        };
        assert_relative_eq!(ris_reward(&both_fail), 2.1, max_relative = 1e-12);
    }

    #[test]
    fn rewards_never_exceed_sum_rate() {
        let cfg = desk_scenario();
        let mut env = Environment::new(cfg.clone(), 31).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for ep in 0..20u64 {
            env.begin_episode(ep);
            let ris =
                RisConfig::random(4, 4, cfg.ris_amplitude, cfg.num_grid_cells, &mut rng).unwrap();
            let alloc = AllocationState::new(
                vec![Some(rng.random_range(0..2)), Some(rng.random_range(0..2))],
                vec![rng.random_range(0..3), rng.random_range(0..3)],
                &cfg,
            )
            .unwrap();
            let out = env.evaluate_slot(&ris, &alloc).unwrap();
            assert!(marl_reward(&out) <= out.sum_rate + 1e-12);
            assert!(ris_reward(&out) <= out.sum_rate + 1e-12);
        }
    }

    #[test]
    fn evaluate_slot_is_pure() {
        let cfg = desk_scenario();
        let env = Environment::new(cfg.clone(), 41).unwrap();
        let ris = RisConfig::new(vec![2, 3, 1, 4], 4, 1.0, 1).unwrap();
        let alloc =
            AllocationState::new(vec![Some(0), Some(1)], vec![2, 1], &cfg).unwrap();
        let a = env.evaluate_slot(&ris, &alloc).unwrap();
        let b = env.evaluate_slot(&ris, &alloc).unwrap();
        assert_eq!(a.sum_rate.to_bits(), b.sum_rate.to_bits());
    }

    #[test]
    fn removing_interferer_never_hurts() {
        let cfg = desk_scenario();
        let mut env = Environment::new(cfg.clone(), 55).unwrap();
        let ris = RisConfig::new(vec![1; 4], 4, 1.0, 0).unwrap();
        for ep in 0..20u64 {
            env.begin_episode(ep);
            let both = AllocationState::new(vec![Some(0), Some(0)], vec![2, 2], &cfg).unwrap();
            let alone = AllocationState::new(vec![Some(0), None], vec![2, 0], &cfg).unwrap();
            let with_interferer = env.evaluate_slot(&ris, &both).unwrap();
            let without = env.evaluate_slot(&ris, &alone).unwrap();
            assert!(
                without.d2d_sinrs[0].unwrap() >= with_interferer.d2d_sinrs[0].unwrap() - 1e-15
            );
        }
    }

    #[test]
    fn idle_d2d_gives_interference_free_cellular() {
        let cfg = desk_scenario();
        let env = Environment::new(cfg.clone(), 61).unwrap();
        let ris = RisConfig::new(vec![1; 4], 4, 1.0, 0).unwrap();
        let gains = env.link_gains(&ris);
        let alloc = AllocationState::all_off(&cfg);
        let out = evaluate_outcome(&gains, &alloc, &cfg).unwrap();
        for k in 0..cfg.num_cellular {
            let free = alloc.cellular_power_w() * gains.cell_bs[k] / cfg.noise_watts();
            assert_relative_eq!(out.cellular_sinrs[k], free, max_relative = 1e-12);
        }
    }

    #[test]
    fn sum_rate_matches_scalar_reimplementation() {
        // independent re-implementation of the rate sum on random instances
        let cfg = desk_scenario();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let mut env = Environment::new(cfg.clone(), 88).unwrap();
        for trial in 0..100u64 {
            env.begin_episode(trial);
            let ris =
                RisConfig::random(4, 4, cfg.ris_amplitude, cfg.num_grid_cells, &mut rng).unwrap();
            let alloc = AllocationState::new(
                vec![
                    if rng.random::<f64>() < 0.2 { None } else { Some(rng.random_range(0..2)) },
                    if rng.random::<f64>() < 0.2 { None } else { Some(rng.random_range(0..2)) },
                ],
                vec![rng.random_range(0..3), rng.random_range(0..3)],
                &cfg,
            )
            .unwrap();
            let gains = env.link_gains(&ris);
            let out = evaluate_outcome(&gains, &alloc, &cfg).unwrap();

            let sigma2 = cfg.noise_watts();
            let mut expected = 0.0;
            for k in 0..cfg.num_cellular {
                let mut interf = 0.0;
                for i in 0..cfg.num_d2d_pairs {
                    if alloc.reuses(k, i) {
                        interf += alloc.d2d_power_w(i) * gains.tx_bs[i][k];
                    }
                }
                let gamma = alloc.cellular_power_w() * gains.cell_bs[k] / (interf + sigma2);
                expected += cfg.bandwidth_hz * (1.0 + gamma).log2();
                for i in 0..cfg.num_d2d_pairs {
                    if alloc.reuses(k, i) && alloc.d2d_power_w(i) > 0.0 {
                        let mut interf_i = alloc.cellular_power_w() * gains.cell_rx[k][i];
                        for l in 0..cfg.num_d2d_pairs {
                            if l != i && alloc.reuses(k, l) {
                                interf_i += alloc.d2d_power_w(l) * gains.d2d[l][i][k];
                            }
                        }
                        let gamma_i =
                            alloc.d2d_power_w(i) * gains.d2d[i][i][k] / (interf_i + sigma2);
                        expected += cfg.bandwidth_hz * (1.0 + gamma_i).log2();
                    }
                }
            }
            assert_relative_eq!(out.sum_rate, expected, max_relative = 1e-9);
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = ScenarioConfig::default();
        cfg.num_grid_cells = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.num_d2d_pairs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.ris_amplitude = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scenario_roundtrips_through_toml() {
        let cfg = desk_scenario();
        let text = toml::to_string(&cfg).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_takes_defaults() {
        let cfg: ScenarioConfig = toml::from_str("num_d2d_pairs = 2").unwrap();
        assert_eq!(cfg.num_d2d_pairs, 2);
        assert_eq!(cfg.num_cellular, 4);
        assert_relative_eq!(cfg.noise_dbm, -115.0);
    }
}
