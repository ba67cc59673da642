//! Physical-layer primitives: distance-based path loss, Rayleigh/Rician
//! small-scale fading, RIS-cascaded channel composition, SINR, and link rate.
//!
//! All functions are pure; stochastic samplers take an explicit random source
//! so parallel workers can own independent streams.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::environment::AllocationState;
use crate::error::{Error, Result};

/// Complex channel coefficient; `|h|^2` is the link power gain.
pub type ComplexGain = Complex64;

/// Parameters of the power-law path loss model `L(d) = h0 * (d/d0)^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathLossParams {
    /// Path-loss constant at the reference distance (linear power gain).
    pub h0: f64,
    /// Reference distance in meters.
    pub d0: f64,
    /// Path-loss exponent.
    pub alpha: f64,
}

impl PathLossParams {
    pub fn new(h0: f64, d0: f64, alpha: f64) -> Result<Self> {
        if !(h0 > 0.0) || !(d0 > 0.0) || !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "path loss parameters must be positive (h0={h0}, d0={d0}, alpha={alpha})"
            )));
        }
        Ok(Self { h0, d0, alpha })
    }
}

/// Large-scale power gain at distance `d` meters.
pub fn path_loss(d: f64, params: &PathLossParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "distance must be positive, got {d}"
        )));
    }
    Ok(params.h0 * (d / params.d0).powf(-params.alpha))
}

/// One circularly-symmetric complex Gaussian draw with unit mean power,
/// i.e. re and im are independent N(0, 1/2).
pub fn sample_rayleigh<R: Rng + ?Sized>(rng: &mut R) -> ComplexGain {
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let re = normal.sample(rng);
    let im = normal.sample(rng);
    Complex64::new(re, im)
}

/// Rician draw: `sqrt(v/(1+v)) * e^{j*los_phase} + sqrt(1/(1+v)) * f_nlos`
/// where `f_nlos` is a fresh Rayleigh draw. `v = 0` degenerates to Rayleigh;
/// large `v` approaches the deterministic unit-modulus LoS term.
pub fn sample_rician<R: Rng + ?Sized>(v: f64, los_phase: f64, rng: &mut R) -> Result<ComplexGain> {
    if v < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "Rician factor must be non-negative, got {v}"
        )));
    }
    let los = Complex64::from_polar(1.0, los_phase);
    let nlos = sample_rayleigh(rng);
    Ok((v / (1.0 + v)).sqrt() * los + (1.0 / (1.0 + v)).sqrt() * nlos)
}

/// Mix a pre-drawn NLoS coefficient with a LoS phase at Rician factor `v`.
/// Same algebra as [`sample_rician`] but with the randomness supplied by the
/// caller, so a stored small-scale realization can be re-composed.
pub fn rician_mix(v: f64, los_phase: f64, nlos: ComplexGain) -> ComplexGain {
    let los = Complex64::from_polar(1.0, los_phase);
    (v / (1.0 + v)).sqrt() * los + (1.0 / (1.0 + v)).sqrt() * nlos
}

/// Discrete RIS implementation: per-element phase levels, common amplitude,
/// and the occupied grid cell.
///
/// Level `l` encodes the phase `theta = l * pi / phase_step_divisor`; levels
/// run over `1..=phase_step_divisor` so every phase stays in `(0, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RisConfig {
    phase_levels: Vec<u32>,
    phase_step_divisor: u32,
    amplitude: f64,
    position_index: usize,
}

impl RisConfig {
    pub fn new(
        phase_levels: Vec<u32>,
        phase_step_divisor: u32,
        amplitude: f64,
        position_index: usize,
    ) -> Result<Self> {
        if phase_step_divisor == 0 {
            return Err(Error::InvalidParameter(
                "phase step divisor must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&amplitude) {
            return Err(Error::InvalidParameter(format!(
                "amplitude must lie in [0, 1], got {amplitude}"
            )));
        }
        for (n, &level) in phase_levels.iter().enumerate() {
            if level == 0 || level > phase_step_divisor {
                return Err(Error::InvalidParameter(format!(
                    "phase level {level} of element {n} outside 1..={phase_step_divisor}"
                )));
            }
        }
        Ok(Self {
            phase_levels,
            phase_step_divisor,
            amplitude,
            position_index,
        })
    }

    /// Uniformly random levels and grid cell.
    pub fn random<R: Rng + ?Sized>(
        num_elements: usize,
        phase_step_divisor: u32,
        amplitude: f64,
        num_cells: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let levels = (0..num_elements)
            .map(|_| rng.random_range(1..=phase_step_divisor))
            .collect();
        let position = rng.random_range(0..num_cells);
        Self::new(levels, phase_step_divisor, amplitude, position)
    }

    pub fn num_elements(&self) -> usize {
        self.phase_levels.len()
    }

    pub fn phase_levels(&self) -> &[u32] {
        &self.phase_levels
    }

    pub fn phase_step_divisor(&self) -> u32 {
        self.phase_step_divisor
    }

    /// Phase step `delta = pi / divisor`.
    pub fn phase_step(&self) -> f64 {
        std::f64::consts::PI / self.phase_step_divisor as f64
    }

    /// Phase of element `n` in radians, inside `(0, pi]`.
    pub fn phase(&self, n: usize) -> f64 {
        self.phase_levels[n] as f64 * self.phase_step()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn position_index(&self) -> usize {
        self.position_index
    }

    pub fn set_position_index(&mut self, index: usize) {
        self.position_index = index;
    }

    /// Move element `n` by `steps` levels, clamped to the valid range so the
    /// phase never leaves `(0, pi]`.
    pub fn shift_level(&mut self, n: usize, steps: i32) {
        let level = self.phase_levels[n] as i64 + steps as i64;
        self.phase_levels[n] = level.clamp(1, self.phase_step_divisor as i64) as u32;
    }

    /// Per-element reflection factor `A * e^{j*theta_n}`.
    pub fn reflection_factors(&self) -> Vec<ComplexGain> {
        (0..self.num_elements())
            .map(|n| Complex64::from_polar(self.amplitude, self.phase(n)))
            .collect()
    }

    /// Copy with the amplitude forced to zero (no-RIS degeneracy).
    pub fn with_zero_amplitude(&self) -> Self {
        Self {
            amplitude: 0.0,
            ..self.clone()
        }
    }
}

/// Reflection-path gain `sum_n h_t[n] * A * e^{j theta_n} * h_r[n]`.
pub fn cascaded_gain(
    h_t: &[ComplexGain],
    ris: &RisConfig,
    h_r: &[ComplexGain],
) -> Result<ComplexGain> {
    if h_t.len() != ris.num_elements() || h_r.len() != ris.num_elements() {
        return Err(Error::DimensionMismatch(format!(
            "cascaded_gain: {} tx segments, {} elements, {} rx segments",
            h_t.len(),
            ris.num_elements(),
            h_r.len()
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for n in 0..h_t.len() {
        acc += h_t[n] * Complex64::from_polar(ris.amplitude, ris.phase(n)) * h_r[n];
    }
    Ok(acc)
}

/// Reflected-plus-direct superposition.
pub fn composite_channel(reflected: ComplexGain, direct: ComplexGain) -> ComplexGain {
    reflected + direct
}

/// Small-scale realization for one time slot: complete coefficients for the
/// Rayleigh direct links and NLoS components for every RIS element segment.
///
/// Index conventions: `l`/`i` are D2D transmitter/receiver pair indices,
/// `k` is the sub-band (equivalently the cellular user bound to it), and
/// `n` is the RIS element.
#[derive(Debug, Clone)]
pub struct FadingRealization {
    /// `direct_d2d[l][i][k]`: D2D tx `l` to D2D rx `i` over sub-band `k`.
    pub direct_d2d: Vec<Vec<Vec<ComplexGain>>>,
    /// `direct_cell_rx[k][i]`: cellular user `k` to D2D rx `i` (on band `k`).
    pub direct_cell_rx: Vec<Vec<ComplexGain>>,
    /// `direct_cell_bs[k]`: cellular user `k` to the BS (on band `k`).
    pub direct_cell_bs: Vec<ComplexGain>,
    /// `direct_tx_bs[i][k]`: D2D tx `i` to the BS over sub-band `k`.
    pub direct_tx_bs: Vec<Vec<ComplexGain>>,
    /// `nlos_tx_ris[i][n][k]`: D2D tx `i` to RIS element `n` over band `k`.
    pub nlos_tx_ris: Vec<Vec<Vec<ComplexGain>>>,
    /// `nlos_ris_rx[i][n][k]`: RIS element `n` to D2D rx `i` over band `k`.
    pub nlos_ris_rx: Vec<Vec<Vec<ComplexGain>>>,
    /// `nlos_cell_ris[k][n]`: cellular user `k` to RIS element `n` (band `k`).
    pub nlos_cell_ris: Vec<Vec<ComplexGain>>,
    /// `nlos_ris_bs[n][k]`: RIS element `n` to the BS over sub-band `k`.
    pub nlos_ris_bs: Vec<Vec<ComplexGain>>,
}

impl FadingRealization {
    /// Check that all dimensions agree with `(I, K, N)`.
    pub fn check_dims(&self, num_pairs: usize, num_bands: usize, num_elements: usize) -> bool {
        self.direct_d2d.len() == num_pairs
            && self.direct_d2d.iter().all(|per_rx| {
                per_rx.len() == num_pairs && per_rx.iter().all(|per_k| per_k.len() == num_bands)
            })
            && self.direct_cell_rx.len() == num_bands
            && self.direct_cell_rx.iter().all(|v| v.len() == num_pairs)
            && self.direct_cell_bs.len() == num_bands
            && self.direct_tx_bs.len() == num_pairs
            && self.direct_tx_bs.iter().all(|v| v.len() == num_bands)
            && self.nlos_tx_ris.len() == num_pairs
            && self.nlos_ris_rx.len() == num_pairs
            && self
                .nlos_tx_ris
                .iter()
                .chain(self.nlos_ris_rx.iter())
                .all(|per_n| {
                    per_n.len() == num_elements
                        && per_n.iter().all(|per_k| per_k.len() == num_bands)
                })
            && self.nlos_cell_ris.len() == num_bands
            && self.nlos_cell_ris.iter().all(|v| v.len() == num_elements)
            && self.nlos_ris_bs.len() == num_elements
            && self.nlos_ris_bs.iter().all(|v| v.len() == num_bands)
    }
}

/// Composite power gains `|h|^2` for one slot under a fixed RIS configuration.
#[derive(Debug, Clone)]
pub struct LinkGains {
    /// `d2d[l][i][k] = |h^D_{l,i}[k]|^2` (diagonal `l == i` is the desired link).
    pub d2d: Vec<Vec<Vec<f64>>>,
    /// `cell_rx[k][i] = |h_{k,i}[k]|^2`.
    pub cell_rx: Vec<Vec<f64>>,
    /// `cell_bs[k] = |h^U_k[k]|^2`.
    pub cell_bs: Vec<f64>,
    /// `tx_bs[i][k] = |h^{BS}_i[k]|^2`.
    pub tx_bs: Vec<Vec<f64>>,
}

/// SINR at D2D receiver `i` on sub-band `k` (the pair's assigned band).
///
/// Interference collects the co-band cellular user plus every other D2D pair
/// reusing `k`, each weighted by its transmit power.
pub fn sinr_d2d(
    i: usize,
    k: usize,
    alloc: &AllocationState,
    gains: &LinkGains,
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise power must be positive, got {sigma2}"
        )));
    }
    debug_assert!(alloc.reuses(k, i), "sinr_d2d queried for an unassigned pair");
    let signal = alloc.d2d_power_w(i) * gains.d2d[i][i][k];
    let mut interference = alloc.cellular_power_w() * gains.cell_rx[k][i];
    for l in 0..alloc.num_pairs() {
        if l != i && alloc.reuses(k, l) {
            interference += alloc.d2d_power_w(l) * gains.d2d[l][i][k];
        }
    }
    Ok(signal / (interference + sigma2))
}

/// SINR at the BS for cellular user `k` on its own sub-band.
pub fn sinr_cellular(
    k: usize,
    alloc: &AllocationState,
    gains: &LinkGains,
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise power must be positive, got {sigma2}"
        )));
    }
    let signal = alloc.cellular_power_w() * gains.cell_bs[k];
    let mut interference = 0.0;
    for i in 0..alloc.num_pairs() {
        if alloc.reuses(k, i) {
            interference += alloc.d2d_power_w(i) * gains.tx_bs[i][k];
        }
    }
    Ok(signal / (interference + sigma2))
}

/// Shannon rate `B * log2(1 + sinr)` in bits per second.
pub fn link_rate(sinr: f64, bandwidth_hz: f64) -> Result<f64> {
    if sinr < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "SINR must be non-negative, got {sinr}"
        )));
    }
    Ok(bandwidth_hz * (1.0 + sinr).log2())
}
