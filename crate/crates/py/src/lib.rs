//! Python bindings for the RIS-assisted D2D underlay simulator: scenario
//! configuration, the slot-level environment, RIS and allocation state,
//! trained-policy loading, the discrete action codecs, exhaustive search,
//! and FLOPs accounting.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use ris_d2d::agents;
use ris_d2d::baselines;
use ris_d2d::channel;
use ris_d2d::environment::{
    self, AllocationState, Environment, ScenarioConfig, SlotOutcome,
};
use ris_d2d::harness;
use ris_d2d::neural::Mlp;

fn to_py_err(err: ris_d2d::Error) -> PyErr {
    match err {
        ris_d2d::Error::InvalidConfig(_) | ris_d2d::Error::InvalidParameter(_) => {
            PyValueError::new_err(err.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Scenario parameters (defaults follow the reference parameter table).
#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Full-scale reference scenario.
    #[staticmethod]
    fn table1() -> Self {
        Self {
            inner: ScenarioConfig::default(),
        }
    }

    /// Desk-scale scenario matching the bundled desk profile.
    #[staticmethod]
    fn desk() -> Self {
        Self {
            inner: harness::ExperimentConfig::desk().scenario,
        }
    }

    /// Parse a `[scenario]`-style TOML document (missing keys take defaults).
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: ScenarioConfig =
            toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn num_d2d_pairs(&self) -> usize {
        self.inner.num_d2d_pairs
    }

    #[getter]
    fn num_cellular(&self) -> usize {
        self.inner.num_cellular
    }

    #[getter]
    fn num_ris_elements(&self) -> usize {
        self.inner.num_ris_elements
    }

    #[getter]
    fn num_grid_cells(&self) -> usize {
        self.inner.num_grid_cells
    }

    #[getter]
    fn num_power_levels(&self) -> u32 {
        self.inner.num_power_levels
    }

    #[getter]
    fn noise_dbm(&self) -> f64 {
        self.inner.noise_dbm
    }

    fn observation_len(&self) -> usize {
        agents::d2d_observation_len(self.inner.num_d2d_pairs, self.inner.num_cellular)
    }

    fn ris_state_len(&self) -> usize {
        agents::ris_state_len(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(I={}, K={}, N={}, O={}, A_p={})",
            self.inner.num_d2d_pairs,
            self.inner.num_cellular,
            self.inner.num_ris_elements,
            self.inner.num_grid_cells,
            self.inner.num_power_levels
        )
    }
}

/// Discrete RIS implementation: per-element phase levels, amplitude, cell.
#[pyclass(name = "RisSurface", skip_from_py_object)]
#[derive(Clone)]
struct PyRisSurface {
    inner: channel::RisConfig,
}

#[pymethods]
impl PyRisSurface {
    #[new]
    fn new(
        phase_levels: Vec<u32>,
        phase_step_divisor: u32,
        amplitude: f64,
        position_index: usize,
    ) -> PyResult<Self> {
        channel::RisConfig::new(phase_levels, phase_step_divisor, amplitude, position_index)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    /// Uniformly random levels and position for a scenario.
    #[staticmethod]
    fn random(scenario: &PyScenario, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        channel::RisConfig::random(
            scenario.inner.num_ris_elements,
            scenario.inner.phase_step_divisor,
            scenario.inner.ris_amplitude,
            scenario.inner.num_grid_cells,
            &mut rng,
        )
        .map(|inner| Self { inner })
        .map_err(to_py_err)
    }

    #[getter]
    fn phase_levels(&self) -> Vec<u32> {
        self.inner.phase_levels().to_vec()
    }

    #[getter]
    fn phases(&self) -> Vec<f64> {
        (0..self.inner.num_elements())
            .map(|n| self.inner.phase(n))
            .collect()
    }

    #[getter]
    fn amplitude(&self) -> f64 {
        self.inner.amplitude()
    }

    #[getter]
    fn position_index(&self) -> usize {
        self.inner.position_index()
    }

    /// Copy with zero amplitude (no-RIS degeneracy).
    fn without_ris(&self) -> Self {
        Self {
            inner: self.inner.with_zero_amplitude(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "RisSurface(levels={:?}, A={}, cell={})",
            self.inner.phase_levels(),
            self.inner.amplitude(),
            self.inner.position_index()
        )
    }
}

/// Sub-band assignment and discrete power level per D2D pair.
#[pyclass(name = "Allocation", skip_from_py_object)]
#[derive(Clone)]
struct PyAllocation {
    inner: AllocationState,
}

#[pymethods]
impl PyAllocation {
    /// `assignments[i]` is the sub-band of pair `i` (or None); `levels[i]`
    /// the discrete power level, 0 meaning off.
    #[new]
    fn new(
        assignments: Vec<Option<usize>>,
        levels: Vec<u32>,
        scenario: &PyScenario,
    ) -> PyResult<Self> {
        AllocationState::new(assignments, levels, &scenario.inner)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn all_off(scenario: &PyScenario) -> Self {
        Self {
            inner: AllocationState::all_off(&scenario.inner),
        }
    }

    #[getter]
    fn assignments(&self) -> Vec<Option<usize>> {
        (0..self.inner.num_pairs())
            .map(|i| self.inner.assigned_rb(i))
            .collect()
    }

    #[getter]
    fn power_levels(&self) -> Vec<u32> {
        (0..self.inner.num_pairs())
            .map(|i| self.inner.power_level(i))
            .collect()
    }

    #[getter]
    fn powers_watts(&self) -> Vec<f64> {
        (0..self.inner.num_pairs())
            .map(|i| self.inner.d2d_power_w(i))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Allocation(rb={:?}, levels={:?})",
            self.assignments(),
            self.power_levels()
        )
    }
}

/// Everything computed for one evaluated slot.
#[pyclass(name = "Outcome", skip_from_py_object)]
#[derive(Clone)]
struct PyOutcome {
    inner: SlotOutcome,
}

#[pymethods]
impl PyOutcome {
    #[getter]
    fn sum_rate(&self) -> f64 {
        self.inner.sum_rate
    }

    #[getter]
    fn d2d_rates(&self) -> Vec<f64> {
        self.inner.d2d_rates.clone()
    }

    #[getter]
    fn cellular_rates(&self) -> Vec<f64> {
        self.inner.cellular_rates.clone()
    }

    #[getter]
    fn d2d_sinrs(&self) -> Vec<Option<f64>> {
        self.inner.d2d_sinrs.clone()
    }

    #[getter]
    fn cellular_sinrs(&self) -> Vec<f64> {
        self.inner.cellular_sinrs.clone()
    }

    #[getter]
    fn d2d_ok(&self) -> bool {
        self.inner.d2d_ok
    }

    #[getter]
    fn cellular_ok(&self) -> bool {
        self.inner.cellular_ok
    }

    #[getter]
    fn feasible(&self) -> bool {
        self.inner.feasible()
    }

    /// Shared allocation-tier reward (sum rate gated on both constraints).
    fn marl_reward(&self) -> f64 {
        environment::marl_reward(&self.inner)
    }

    /// RIS-tier reward with the partial-credit failure branches.
    fn ris_reward(&self) -> f64 {
        environment::ris_reward(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Outcome(sum_rate={:.4e}, d2d_ok={}, cellular_ok={})",
            self.inner.sum_rate, self.inner.d2d_ok, self.inner.cellular_ok
        )
    }
}

/// The underlay world: topology, per-episode large-scale state, per-slot
/// fading, and slot evaluation.
#[pyclass(name = "Simulator")]
struct PySimulator {
    inner: Environment,
}

#[pymethods]
impl PySimulator {
    #[new]
    fn new(scenario: &PyScenario, seed: u64) -> PyResult<Self> {
        Environment::new(scenario.inner.clone(), seed)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    /// Refresh topology, large-scale state, and slot-0 fading.
    fn begin_episode(&mut self, episode: u64) {
        self.inner.begin_episode(episode);
    }

    /// Redraw the small-scale fading for the next slot.
    fn advance_slot(&mut self) {
        self.inner.advance_small_scale();
    }

    /// Evaluate the current slot under a RIS implementation and allocation.
    fn evaluate(&self, ris: &PyRisSurface, alloc: &PyAllocation) -> PyResult<PyOutcome> {
        self.inner
            .evaluate_slot(&ris.inner, &alloc.inner)
            .map(|inner| PyOutcome { inner })
            .map_err(to_py_err)
    }

    /// Positions as `(d2d_tx, d2d_rx, cellular, bs, ris_grid)` tuples.
    fn topology(
        &self,
    ) -> (
        Vec<(f64, f64)>,
        Vec<(f64, f64)>,
        Vec<(f64, f64)>,
        (f64, f64),
        Vec<(f64, f64)>,
    ) {
        let t = self.inner.topology();
        let cvt = |p: &[f64; 2]| (p[0], p[1]);
        (
            t.d2d_tx.iter().map(cvt).collect(),
            t.d2d_rx.iter().map(cvt).collect(),
            t.cellular.iter().map(cvt).collect(),
            cvt(&t.bs),
            t.ris_grid.iter().map(cvt).collect(),
        )
    }

    /// Observation vector of one allocation agent under the current slot.
    #[pyo3(signature = (agent, ris, alloc, episode_fraction=1.0, epsilon=0.0))]
    fn observation(
        &self,
        agent: usize,
        ris: &PyRisSurface,
        alloc: &PyAllocation,
        episode_fraction: f64,
        epsilon: f64,
    ) -> Vec<f64> {
        let gains = self.inner.link_gains(&ris.inner);
        agents::build_d2d_observation(
            agent,
            &gains,
            &alloc.inner,
            episode_fraction,
            epsilon,
            self.inner.scenario(),
        )
    }

    /// BS-side state vector for the RIS controller.
    fn ris_state(&self, ris: &PyRisSurface, alloc: &PyAllocation) -> Vec<f64> {
        agents::build_ris_state(
            self.inner.topology(),
            &alloc.inner,
            &ris.inner,
            self.inner.scenario(),
        )
    }

    /// Per-slot optimum over all allocations and RIS implementations:
    /// returns `(sum_rate, feasible, allocation, ris)`.
    fn exhaustive_search(
        &self,
        cap: u64,
    ) -> PyResult<(f64, bool, PyAllocation, PyRisSurface)> {
        let best = baselines::exhaustive_search(&self.inner, cap).map_err(to_py_err)?;
        Ok((
            best.sum_rate,
            best.feasible,
            PyAllocation { inner: best.alloc },
            PyRisSurface { inner: best.ris },
        ))
    }
}

/// A saved Q-network checkpoint.
#[pyclass(name = "Policy")]
struct PyPolicy {
    inner: Mlp,
}

#[pymethods]
impl PyPolicy {
    /// Load a `.mlp` checkpoint written by the trainer.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Mlp::load(path).map(|inner| Self { inner }).map_err(to_py_err)
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths()
    }

    /// Q-values for a feature vector.
    fn forward(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&state).map_err(to_py_err)
    }

    /// Greedy action (lowest index on ties).
    fn greedy_action(&self, state: Vec<f64>) -> PyResult<usize> {
        Ok(ris_d2d::neural::argmax(&self.inner.forward(&state).map_err(to_py_err)?))
    }
}

/// Large-scale power gain `h0 * (d / d0)^(-alpha)`.
#[pyfunction]
fn path_loss(d: f64, h0: f64, d0: f64, alpha: f64) -> PyResult<f64> {
    let params = channel::PathLossParams::new(h0, d0, alpha).map_err(to_py_err)?;
    channel::path_loss(d, &params).map_err(to_py_err)
}

/// Decode a flat allocation-agent action into `(sub_band, power_level)`.
#[pyfunction]
fn decode_d2d_action(index: usize, num_bands: usize, num_power_levels: u32) -> PyResult<(usize, u32)> {
    agents::decode_d2d_action(index, num_bands, num_power_levels).map_err(to_py_err)
}

/// Decode a flat RIS action into `(deltas, position)` with deltas in
/// {-1, 0, +1} units of the phase step.
#[pyfunction]
fn decode_ris_action(index: u64, num_elements: usize, num_cells: usize) -> PyResult<(Vec<i8>, usize)> {
    let action = agents::decode_ris_action(index, num_elements, num_cells).map_err(to_py_err)?;
    Ok((action.deltas, action.position))
}

/// Forward-pass FLOPs: `(bs_total, per_agent, grand_total)` from widths that
/// include the input and output layers.
#[pyfunction]
fn flops(bs_widths: Vec<u64>, agent_widths: Vec<Vec<u64>>) -> (u64, Vec<u64>, u64) {
    let report = harness::flops_report(&bs_widths, &agent_widths);
    (report.bs, report.per_agent, report.total)
}

#[pymodule]
fn ris_d2d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRisSurface>()?;
    m.add_class::<PyAllocation>()?;
    m.add_class::<PyOutcome>()?;
    m.add_class::<PySimulator>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(path_loss, m)?)?;
    m.add_function(wrap_pyfunction!(decode_d2d_action, m)?)?;
    m.add_function(wrap_pyfunction!(decode_ris_action, m)?)?;
    m.add_function(wrap_pyfunction!(flops, m)?)?;
    Ok(())
}
