//! Experiment orchestration: configuration files, seeded training and
//! evaluation pipelines, metrics persistence, FLOPs accounting, and the
//! plot-data aggregation behind the benchmark figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{
    d2d_action_count, d2d_observation_len, ris_action_count, ris_state_len, train_marl, train_ris,
    MarlModel, RisHead, RisModel, RisPolicy, TrainRecord, TrainingConfig,
};
use crate::baselines::{train_centralized, CentralizedModel, SchemeId, SchemeModels, SchemeRunner};
use crate::environment::{marl_reward, Environment, ScenarioConfig};
use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::seeding::{child_seed, component, substream};

/// Sweep axis over which the experiment repeats with matched seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    /// Noise power sweep; policies are trained once at the base noise level
    /// and evaluated at every point (a robustness test).
    NoiseDbm(Vec<f64>),
    /// Cellular-user count sweep; retrains per point.
    NumCellular(Vec<usize>),
    /// RIS element count sweep; retrains per point.
    NumRisElements(Vec<usize>),
}

/// Scheme list, seeds, and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub schemes: Vec<SchemeId>,
    pub seeds: Vec<u64>,
    pub eval_episodes: u64,
    /// Cap on the exhaustive-search space per slot.
    pub exhaustive_cap: u64,
    pub sweep: Option<SweepAxis>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            schemes: SchemeId::ALL.to_vec(),
            seeds: vec![1],
            eval_episodes: 100,
            exhaustive_cap: 100_000_000,
            sweep: None,
        }
    }
}

/// Complete experiment description. The default reproduces the reference
/// parameter table; [`ExperimentConfig::desk`] is the scaled-down profile
/// where exhaustive search stays tractable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub training: TrainingConfig,
    pub experiment: ExperimentSettings,
}

impl ExperimentConfig {
    /// Full-scale profile straight from the reference parameter table.
    pub fn table1() -> Self {
        Self::default()
    }

    /// Desk-scale profile: small enough that the exhaustive baseline and all
    /// learned schemes run in minutes on a laptop.
    pub fn desk() -> Self {
        let scenario = ScenarioConfig {
            num_d2d_pairs: 2,
            num_cellular: 2,
            num_ris_elements: 4,
            num_grid_cells: 4,
            num_power_levels: 3,
            slots_per_episode: 20,
            ..ScenarioConfig::default()
        };
        let training = TrainingConfig {
            marl_episodes: 300,
            ris_episodes: 600,
            agent_hidden: vec![128, 64],
            bs_hidden: vec![128, 64],
            per_step_updates: true,
            learn_start: 500,
            learning_rate: 2e-3,
            target_sync_period: 200,
            epsilon: crate::neural::EpsilonSchedule {
                start: 1.0,
                end: 0.05,
                decay_episodes: 400,
            },
            ..TrainingConfig::default()
        };
        Self {
            scenario,
            training,
            experiment: ExperimentSettings::default(),
        }
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.as_ref().display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.training.validate()?;
        if self.experiment.schemes.is_empty() {
            return Err(Error::InvalidConfig("scheme list is empty".into()));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        if self.experiment.eval_episodes == 0 {
            return Err(Error::InvalidConfig("eval_episodes must be positive".into()));
        }
        if let Some(sweep) = &self.experiment.sweep {
            let empty = match sweep {
                SweepAxis::NoiseDbm(v) => v.is_empty(),
                SweepAxis::NumCellular(v) => v.is_empty(),
                SweepAxis::NumRisElements(v) => v.is_empty(),
            };
            if empty {
                return Err(Error::InvalidConfig("sweep value list is empty".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// One point of a sweep: the axis label, the value label used in file names,
/// and the fully resolved scenario.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub axis: &'static str,
    pub label: String,
    pub scenario: ScenarioConfig,
}

/// Expand the sweep axis into concrete scenarios (a single unlabeled point
/// when no sweep is configured).
pub fn sweep_points(config: &ExperimentConfig) -> Vec<SweepPoint> {
    let base = &config.scenario;
    match &config.experiment.sweep {
        None => vec![SweepPoint {
            axis: "",
            label: String::new(),
            scenario: base.clone(),
        }],
        Some(SweepAxis::NoiseDbm(values)) => values
            .iter()
            .map(|&v| SweepPoint {
                axis: "noise_dbm",
                label: format!("{v}"),
                scenario: ScenarioConfig {
                    noise_dbm: v,
                    ..base.clone()
                },
            })
            .collect(),
        Some(SweepAxis::NumCellular(values)) => values
            .iter()
            .map(|&v| SweepPoint {
                axis: "num_cellular",
                label: format!("{v}"),
                scenario: ScenarioConfig {
                    num_cellular: v,
                    ..base.clone()
                },
            })
            .collect(),
        Some(SweepAxis::NumRisElements(values)) => values
            .iter()
            .map(|&v| SweepPoint {
                axis: "num_ris_elements",
                label: format!("{v}"),
                scenario: ScenarioConfig {
                    num_ris_elements: v,
                    ..base.clone()
                },
            })
            .collect(),
    }
}

/// One metrics row. Training rows carry the loss of the update that ran on
/// that slot (or closed the episode); evaluation rows carry `epsilon = 0`
/// and the QoS-gated reward as the headline metric.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub scheme: SchemeId,
    pub seed: u64,
    pub episode: u64,
    pub slot: u64,
    pub sum_rate: f64,
    pub reward: f64,
    pub d2d_ok: bool,
    pub cellular_ok: bool,
    pub loss: Option<f64>,
    pub epsilon: f64,
}

pub const METRICS_HEADER: &str =
    "scheme,seed,episode,slot,sum_rate,reward,d2d_ok,cellular_ok,loss,epsilon";

impl MetricsRecord {
    pub fn from_train(record: &TrainRecord, scheme: SchemeId, seed: u64) -> Self {
        Self {
            scheme,
            seed,
            episode: record.episode,
            slot: record.slot,
            sum_rate: record.sum_rate,
            reward: record.reward,
            d2d_ok: record.d2d_ok,
            cellular_ok: record.cellular_ok,
            loss: record.loss,
            epsilon: record.epsilon,
        }
    }

    fn to_csv_row(&self) -> String {
        let loss = match self.loss {
            Some(l) => format!("{l}"),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scheme,
            self.seed,
            self.episode,
            self.slot,
            self.sum_rate,
            self.reward,
            u8::from(self.d2d_ok),
            u8::from(self.cellular_ok),
            loss,
            self.epsilon
        )
    }

    fn from_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::InvalidParameter(format!(
                "metrics row has {} fields, expected 10",
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidParameter(format!("bad float '{s}'")))
        };
        Ok(Self {
            scheme: fields[0].parse()?,
            seed: fields[1]
                .parse()
                .map_err(|_| Error::InvalidParameter("bad seed".into()))?,
            episode: fields[2]
                .parse()
                .map_err(|_| Error::InvalidParameter("bad episode".into()))?,
            slot: fields[3]
                .parse()
                .map_err(|_| Error::InvalidParameter("bad slot".into()))?,
            sum_rate: parse_f(fields[4])?,
            reward: parse_f(fields[5])?,
            d2d_ok: fields[6] == "1",
            cellular_ok: fields[7] == "1",
            loss: if fields[8].is_empty() {
                None
            } else {
                Some(parse_f(fields[8])?)
            },
            epsilon: parse_f(fields[9])?,
        })
    }
}

pub fn write_metrics<P: AsRef<Path>>(path: P, records: &[MetricsRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics<P: AsRef<Path>>(path: P) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(&path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == METRICS_HEADER => {}
        _ => {
            return Err(Error::InvalidParameter(format!(
                "{} is not a metrics file",
                path.as_ref().display()
            )))
        }
    }
    lines.map(MetricsRecord::from_csv_row).collect()
}

/// Evaluate a scheme for `episodes` greedy episodes (zero exploration).
///
/// The environment stream is derived from the seed only, so every scheme and
/// every sweep point sees the same topologies and fading, and the headline
/// reward column stays comparable across schemes slot by slot.
pub fn evaluate_scheme(
    scheme: SchemeId,
    scenario: &ScenarioConfig,
    models: &SchemeModels,
    seed: u64,
    episodes: u64,
    exhaustive_cap: u64,
) -> Result<Vec<MetricsRecord>> {
    let env_master = child_seed(seed, &[component::EVAL]);
    let mut env = Environment::new(scenario.clone(), env_master)?;
    let mut ris_init = substream(seed, &[component::EVAL, component::RIS_INIT]);
    let mut runner = SchemeRunner::new(scheme, scenario, models, exhaustive_cap, &mut ris_init)?;
    let mut action_rng = substream(seed, &[component::EVAL, component::POLICY, scheme as u64]);

    let mut records = Vec::with_capacity(episodes as usize * scenario.slots_per_episode);
    for episode in 0..episodes {
        env.begin_episode(episode);
        for slot in 0..scenario.slots_per_episode as u64 {
            let (alloc, ris) = runner.slot_action(&env, &mut action_rng)?;
            let outcome = env.evaluate_slot(&ris, &alloc)?;
            records.push(MetricsRecord {
                scheme,
                seed,
                episode,
                slot,
                sum_rate: outcome.sum_rate,
                reward: marl_reward(&outcome),
                d2d_ok: outcome.d2d_ok,
                cellular_ok: outcome.cellular_ok,
                loss: None,
                epsilon: 0.0,
            });
            env.advance_small_scale();
        }
    }
    Ok(records)
}

/// Which trained artifacts a scheme set needs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelNeeds {
    pub marl: bool,
    pub marl_no_ris: bool,
    pub ris_ddqn: bool,
    pub ris_dqn: bool,
    pub centralized: bool,
}

pub fn model_needs(schemes: &[SchemeId]) -> ModelNeeds {
    let mut needs = ModelNeeds::default();
    for scheme in schemes {
        match scheme {
            SchemeId::DDdqn => {
                needs.marl = true;
                needs.ris_ddqn = true;
            }
            SchemeId::DDqn => {
                needs.marl = true;
                needs.ris_dqn = true;
            }
            SchemeId::NoRis => needs.marl_no_ris = true,
            SchemeId::CDdqn => needs.centralized = true,
            SchemeId::Baseline1Exhaustive | SchemeId::Baseline2Random => {}
        }
    }
    needs
}

/// Model-seed tags: both RIS variants share one master so DDQN and DQN runs
/// differ only in the target rule.
const MODEL_MARL: u64 = 1;
const MODEL_MARL_NO_RIS: u64 = 2;
const MODEL_RIS: u64 = 3;
const MODEL_CENTRAL: u64 = 4;

/// Train every artifact the scheme set needs; returns the models and the
/// per-scheme training logs.
pub fn train_models(
    scenario: &ScenarioConfig,
    training: &TrainingConfig,
    schemes: &[SchemeId],
    seed: u64,
) -> Result<(SchemeModels, Vec<(SchemeId, Vec<TrainRecord>)>)> {
    let needs = model_needs(schemes);
    let mut models = SchemeModels::default();
    let mut logs = Vec::new();

    if needs.marl || needs.ris_ddqn || needs.ris_dqn {
        let (marl, _log) = train_marl(scenario, training, child_seed(seed, &[MODEL_MARL]))?;
        models.marl = Some(marl);
    }
    if needs.marl_no_ris {
        let mut no_ris = scenario.clone();
        no_ris.ris_amplitude = 0.0;
        let (marl, log) = train_marl(&no_ris, training, child_seed(seed, &[MODEL_MARL_NO_RIS]))?;
        models.marl_no_ris = Some(marl);
        logs.push((SchemeId::NoRis, log));
    }
    if needs.ris_ddqn {
        let (model, log) = train_ris(
            scenario,
            training,
            models.marl.as_ref().unwrap(),
            true,
            child_seed(seed, &[MODEL_RIS]),
        )?;
        models.ris_ddqn = Some(model);
        logs.push((SchemeId::DDdqn, log));
    }
    if needs.ris_dqn {
        let (model, log) = train_ris(
            scenario,
            training,
            models.marl.as_ref().unwrap(),
            false,
            child_seed(seed, &[MODEL_RIS]),
        )?;
        models.ris_dqn = Some(model);
        logs.push((SchemeId::DDqn, log));
    }
    if needs.centralized {
        let (model, log) =
            train_centralized(scenario, training, child_seed(seed, &[MODEL_CENTRAL]))?;
        models.centralized = Some(model);
        logs.push((SchemeId::CDdqn, log));
    }
    Ok((models, logs))
}

fn file_suffix(point: &SweepPoint) -> String {
    if point.label.is_empty() {
        String::new()
    } else {
        format!("_{}_{}", point.axis, point.label)
    }
}

/// Persist trained models under `dir/<scheme tag>_seed<seed><suffix>/`.
pub fn save_models(
    dir: &Path,
    models: &SchemeModels,
    scenario: &ScenarioConfig,
    seed: u64,
    suffix: &str,
) -> Result<()> {
    let save_marl = |marl: &MarlModel, name: &str| -> Result<()> {
        let sub = dir.join(format!("{name}_seed{seed}{suffix}"));
        std::fs::create_dir_all(&sub)?;
        for (i, net) in marl.nets.iter().enumerate() {
            net.save(sub.join(format!("agent_{i}.mlp")))?;
        }
        write_model_manifest(&sub, scenario, seed, name, None)?;
        Ok(())
    };
    if let Some(marl) = &models.marl {
        save_marl(marl, "marl")?;
    }
    if let Some(marl) = &models.marl_no_ris {
        save_marl(marl, "marl_no_ris")?;
    }
    let save_ris = |model: &RisModel, name: &str| -> Result<()> {
        let sub = dir.join(format!("{name}_seed{seed}{suffix}"));
        std::fs::create_dir_all(&sub)?;
        model.policy.net.save(sub.join("bs.mlp"))?;
        let head = match model.policy.head {
            RisHead::Enumerated => "enumerated",
            RisHead::Factorized => "factorized",
        };
        write_model_manifest(&sub, scenario, seed, name, Some(head))?;
        Ok(())
    };
    if let Some(model) = &models.ris_ddqn {
        save_ris(model, "ris_ddqn")?;
    }
    if let Some(model) = &models.ris_dqn {
        save_ris(model, "ris_dqn")?;
    }
    if let Some(model) = &models.centralized {
        let sub = dir.join(format!("central_seed{seed}{suffix}"));
        std::fs::create_dir_all(&sub)?;
        model.net.save(sub.join("bs.mlp"))?;
        write_model_manifest(&sub, scenario, seed, "central", Some("enumerated"))?;
    }
    Ok(())
}

fn write_model_manifest(
    dir: &Path,
    scenario: &ScenarioConfig,
    seed: u64,
    kind: &str,
    head: Option<&str>,
) -> Result<()> {
    let mut doc = String::new();
    let _ = writeln!(doc, "kind = \"{kind}\"");
    let _ = writeln!(doc, "seed = {seed}");
    let _ = writeln!(doc, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
    if let Some(head) = head {
        let _ = writeln!(doc, "head = \"{head}\"");
    }
    let _ = writeln!(
        doc,
        "allocation_codec = \"action = rb * A_p + level; level 0 is off\""
    );
    let _ = writeln!(
        doc,
        "ris_codec = \"index = position * 3^N + base3(deltas); digit 0/1/2 -> -delta/0/+delta\""
    );
    let _ = writeln!(doc);
    let _ = writeln!(doc, "[scenario]");
    doc.push_str(&toml::to_string(scenario).expect("scenario serializes"));
    std::fs::write(dir.join("manifest.toml"), doc)?;
    Ok(())
}

/// Load the artifacts a scheme set needs from `save_models` output.
pub fn load_models(
    dir: &Path,
    scenario: &ScenarioConfig,
    training: &TrainingConfig,
    schemes: &[SchemeId],
    seed: u64,
    suffix: &str,
) -> Result<SchemeModels> {
    let needs = model_needs(schemes);
    let mut models = SchemeModels::default();
    let load_marl = |name: &str, amplitude: f64| -> Result<MarlModel> {
        let sub = dir.join(format!("{name}_seed{seed}{suffix}"));
        let mut nets = Vec::with_capacity(scenario.num_d2d_pairs);
        for i in 0..scenario.num_d2d_pairs {
            let net = Mlp::load(sub.join(format!("agent_{i}.mlp")))?;
            let expect = d2d_observation_len(scenario.num_d2d_pairs, scenario.num_cellular);
            if net.input_len() != expect || net.output_len() != d2d_action_count(scenario) {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint {} does not match the scenario dimensions",
                    sub.display()
                )));
            }
            nets.push(net);
        }
        Ok(MarlModel {
            nets,
            trained_amplitude: amplitude,
        })
    };
    if needs.marl {
        models.marl = Some(load_marl("marl", scenario.ris_amplitude)?);
    }
    if needs.marl_no_ris {
        models.marl_no_ris = Some(load_marl("marl_no_ris", 0.0)?);
    }
    let load_ris = |name: &str, double: bool| -> Result<RisModel> {
        let sub = dir.join(format!("{name}_seed{seed}{suffix}"));
        let net = Mlp::load(sub.join("bs.mlp"))?;
        let (head, outputs) = RisPolicy::head_for(scenario, training.action_cap);
        if net.input_len() != ris_state_len(scenario) || net.output_len() != outputs {
            return Err(Error::InvalidConfig(format!(
                "checkpoint {} does not match the scenario dimensions",
                sub.display()
            )));
        }
        Ok(RisModel {
            policy: RisPolicy {
                net,
                head,
                num_elements: scenario.num_ris_elements,
                num_cells: scenario.num_grid_cells,
            },
            double,
        })
    };
    if needs.ris_ddqn {
        models.ris_ddqn = Some(load_ris("ris_ddqn", true)?);
    }
    if needs.ris_dqn {
        models.ris_dqn = Some(load_ris("ris_dqn", false)?);
    }
    if needs.centralized {
        let sub = dir.join(format!("central_seed{seed}{suffix}"));
        let net = Mlp::load(sub.join("bs.mlp"))?;
        models.centralized = Some(CentralizedModel { net });
    }
    Ok(models)
}

/// Run the full experiment: train what each scheme needs, evaluate every
/// scheme at every sweep point, and persist metrics, checkpoints, and a
/// manifest. Re-running with the same config and seeds rewrites every file
/// byte-identically.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let points = sweep_points(config);
    let metrics_dir = out_dir.join("metrics");
    let models_dir = out_dir.join("models");
    std::fs::create_dir_all(&metrics_dir)?;
    std::fs::create_dir_all(&models_dir)?;

    // noise sweeps evaluate frozen policies trained once at the base noise
    let train_once = matches!(config.experiment.sweep, Some(SweepAxis::NoiseDbm(_)));

    let results: Result<Vec<Vec<PathBuf>>> = config
        .experiment
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut written = Vec::new();
            let schemes = &config.experiment.schemes;

            let base_models = if train_once {
                let (models, logs) =
                    train_models(&config.scenario, &config.training, schemes, seed)?;
                save_models(&models_dir, &models, &config.scenario, seed, "")?;
                for (scheme, log) in &logs {
                    let records: Vec<MetricsRecord> = log
                        .iter()
                        .map(|r| MetricsRecord::from_train(r, *scheme, seed))
                        .collect();
                    let path = metrics_dir.join(format!("train_{scheme}_seed{seed}.csv"));
                    write_metrics(&path, &records)?;
                    written.push(path);
                }
                Some(models)
            } else {
                None
            };

            for point in &points {
                let suffix = file_suffix(point);
                let point_models;
                let models = match &base_models {
                    Some(models) => models,
                    None => {
                        let (models, logs) =
                            train_models(&point.scenario, &config.training, schemes, seed)?;
                        save_models(&models_dir, &models, &point.scenario, seed, &suffix)?;
                        for (scheme, log) in &logs {
                            let records: Vec<MetricsRecord> = log
                                .iter()
                                .map(|r| MetricsRecord::from_train(r, *scheme, seed))
                                .collect();
                            let path = metrics_dir
                                .join(format!("train_{scheme}_seed{seed}{suffix}.csv"));
                            write_metrics(&path, &records)?;
                            written.push(path);
                        }
                        point_models = models;
                        &point_models
                    }
                };

                for &scheme in schemes {
                    let records = evaluate_scheme(
                        scheme,
                        &point.scenario,
                        models,
                        seed,
                        config.experiment.eval_episodes,
                        config.experiment.exhaustive_cap,
                    )?;
                    let path =
                        metrics_dir.join(format!("eval_{scheme}_seed{seed}{suffix}.csv"));
                    write_metrics(&path, &records)?;
                    written.push(path);
                }
            }
            Ok(written)
        })
        .collect();

    let mut files: Vec<PathBuf> = results?.into_iter().flatten().collect();
    files.sort();

    write_run_manifest(out_dir, config, &files)?;
    Ok(files)
}

fn write_run_manifest(out_dir: &Path, config: &ExperimentConfig, files: &[PathBuf]) -> Result<()> {
    let mut doc = String::new();
    let _ = writeln!(doc, "config_hash = \"{}\"", config.hash());
    let _ = writeln!(doc, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let listed: Vec<String> = files
        .iter()
        .map(|p| {
            format!(
                "\"{}\"",
                p.strip_prefix(out_dir).unwrap_or(p).display()
            )
        })
        .collect();
    let _ = writeln!(doc, "files = [{}]", listed.join(", "));
    let _ = writeln!(doc);
    let _ = writeln!(doc, "[config]");
    doc.push_str(&toml::to_string(config).expect("config serializes"));
    std::fs::write(out_dir.join("manifest.toml"), doc)?;
    Ok(())
}

/// FLOPs of one fully-connected network: `2 * sum_i w_i * w_{i+1}` over the
/// widths including input and output.
pub fn layer_flops(widths: &[u64]) -> u64 {
    widths.windows(2).map(|p| 2 * p[0] * p[1]).sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    pub bs: u64,
    pub per_agent: Vec<u64>,
    pub total: u64,
}

/// Forward-pass cost of the BS network plus every allocation agent.
pub fn flops_report(bs_widths: &[u64], agent_widths: &[Vec<u64>]) -> FlopsReport {
    let bs = layer_flops(bs_widths);
    let per_agent: Vec<u64> = agent_widths.iter().map(|w| layer_flops(w)).collect();
    let total = bs + per_agent.iter().sum::<u64>();
    FlopsReport {
        bs,
        per_agent,
        total,
    }
}

/// Widths of every network in a configuration, input and output included.
/// The BS output counts the full enumerated action space `3^N * O` even when
/// training would use the factorized head, matching the complexity model.
pub fn network_widths(
    scenario: &ScenarioConfig,
    training: &TrainingConfig,
) -> Result<(Vec<u64>, Vec<Vec<u64>>)> {
    let mut bs = vec![ris_state_len(scenario) as u64];
    bs.extend(training.bs_hidden.iter().map(|&w| w as u64));
    bs.push(ris_action_count(
        scenario.num_ris_elements,
        scenario.num_grid_cells,
    )?);

    let mut agent = vec![d2d_observation_len(scenario.num_d2d_pairs, scenario.num_cellular) as u64];
    agent.extend(training.agent_hidden.iter().map(|&w| w as u64));
    agent.push(d2d_action_count(scenario) as u64);
    Ok((bs, vec![agent; scenario.num_d2d_pairs]))
}

/// Figures the plot-data exporter understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    /// Testing performance at a single operating point.
    Fig5,
    /// Sum rate versus noise power.
    Fig6,
    /// Sum rate versus the number of cellular users.
    Fig7,
    /// Sum rate versus the number of RIS elements.
    Fig8,
}

impl std::str::FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig5" => Ok(FigureId::Fig5),
            "fig6" => Ok(FigureId::Fig6),
            "fig7" => Ok(FigureId::Fig7),
            "fig8" => Ok(FigureId::Fig8),
            other => Err(Error::InvalidConfig(format!("unknown figure '{other}'"))),
        }
    }
}

impl FigureId {
    fn axis(&self) -> &'static str {
        match self {
            FigureId::Fig5 => "",
            FigureId::Fig6 => "noise_dbm",
            FigureId::Fig7 => "num_cellular",
            FigureId::Fig8 => "num_ris_elements",
        }
    }
}

/// Aggregated series: per sweep value and scheme the across-seed mean and
/// standard deviation of the per-seed mean QoS-gated sum rate.
#[derive(Debug, Clone)]
pub struct PlotTable {
    pub axis: String,
    pub x_values: Vec<String>,
    pub schemes: Vec<SchemeId>,
    /// `rows[x][scheme] = (mean, std)` aligned with `x_values`/`schemes`.
    pub rows: Vec<Vec<(f64, f64)>>,
}

impl PlotTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let axis = if self.axis.is_empty() { "point" } else { &self.axis };
        let mut header = vec![axis.to_string()];
        for scheme in &self.schemes {
            header.push(format!("{scheme}_mean"));
            header.push(format!("{scheme}_std"));
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for (x, row) in self.x_values.iter().zip(&self.rows) {
            let mut fields = vec![x.clone()];
            for (mean, std) in row {
                fields.push(format!("{mean}"));
                fields.push(format!("{std}"));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

fn eval_file_pattern(name: &str) -> Option<(SchemeId, u64, String)> {
    let stem = name.strip_prefix("eval_")?.strip_suffix(".csv")?;
    let (scheme_part, rest) = stem.split_once("_seed")?;
    let scheme: SchemeId = scheme_part.parse().ok()?;
    let (seed_part, label) = match rest.split_once('_') {
        Some((seed, label)) => (seed, label.to_string()),
        None => (rest, String::new()),
    };
    let seed: u64 = seed_part.parse().ok()?;
    Some((scheme, seed, label))
}

/// Aggregate evaluation metrics into a per-figure table.
///
/// The mean is recomputed from raw records: every emitted point traces back
/// to at least one metrics row by construction.
pub fn emit_plot_data(metrics_dir: &Path, figure: FigureId) -> Result<PlotTable> {
    let axis = figure.axis();
    // (x label) -> scheme -> seed -> (sum, count)
    let mut table: BTreeMap<String, BTreeMap<SchemeId, BTreeMap<u64, (f64, u64)>>> =
        BTreeMap::new();
    let mut seen_schemes: Vec<SchemeId> = Vec::new();

    let mut entries: Vec<PathBuf> = std::fs::read_dir(metrics_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some((scheme, seed, label)) = eval_file_pattern(name) else {
            continue;
        };
        let x = if axis.is_empty() {
            if !label.is_empty() {
                continue; // fig5 uses only the unswept operating point
            }
            "base".to_string()
        } else {
            match label.strip_prefix(&format!("{axis}_")) {
                Some(value) => value.to_string(),
                None => continue,
            }
        };
        let records = read_metrics(&path)?;
        let cell = table
            .entry(x)
            .or_default()
            .entry(scheme)
            .or_default()
            .entry(seed)
            .or_insert((0.0, 0));
        for r in &records {
            cell.0 += r.reward;
            cell.1 += 1;
        }
        if !seen_schemes.contains(&scheme) {
            seen_schemes.push(scheme);
        }
    }

    if table.is_empty() {
        return Err(Error::MissingData(format!(
            "no evaluation metrics for figure axis '{}' under {}",
            axis,
            metrics_dir.display()
        )));
    }
    // keep a stable scheme order
    let schemes: Vec<SchemeId> = SchemeId::ALL
        .into_iter()
        .filter(|s| seen_schemes.contains(s))
        .collect();

    // numeric sort on the x axis where possible
    let mut x_values: Vec<String> = table.keys().cloned().collect();
    x_values.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap(),
        _ => a.cmp(b),
    });

    let mut rows = Vec::with_capacity(x_values.len());
    for x in &x_values {
        let per_scheme = &table[x];
        let mut row = Vec::with_capacity(schemes.len());
        for scheme in &schemes {
            let seeds = per_scheme.get(scheme).ok_or_else(|| {
                Error::MissingData(format!("scheme {scheme} has no data at point {x}"))
            })?;
            let means: Vec<f64> = seeds
                .values()
                .map(|&(sum, count)| sum / count as f64)
                .collect();
            let mean = means.iter().sum::<f64>() / means.len() as f64;
            let std = if means.len() > 1 {
                (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>()
                    / (means.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            row.push((mean, std));
        }
        rows.push(row);
    }

    Ok(PlotTable {
        axis: axis.to_string(),
        x_values,
        schemes,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layer_flops_cases() {
        // single 2 -> 3 layer: 2 * (2*3) = 12
        assert_eq!(layer_flops(&[2, 3]), 12);
        // hand-expanded reference network: input 30, hidden 500/250/125, 36 outputs
        let w = [30u64, 500, 250, 125, 36];
        let hand = 2 * (30 * 500 + 500 * 250 + 250 * 125 + 125 * 36);
        assert_eq!(layer_flops(&w), hand);
        // doubling every width quadruples every product term
        let doubled: Vec<u64> = w.iter().map(|x| 2 * x).collect();
        assert_eq!(layer_flops(&doubled), 4 * layer_flops(&w));
    }

    #[test]
    fn flops_report_sums_networks() {
        let report = flops_report(&[4, 8, 2], &[vec![3, 6, 2], vec![3, 6, 2]]);
        assert_eq!(report.bs, 2 * (4 * 8 + 8 * 2));
        assert_eq!(report.per_agent, vec![2 * (3 * 6 + 6 * 2); 2]);
        assert_eq!(report.total, report.bs + 2 * report.per_agent[0]);
    }

    #[test]
    fn flops_matches_randomized_hand_expansion() {
        let mut state = 0x12345u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state % 400 + 1
        };
        for _ in 0..100 {
            let depth = (next() % 4 + 2) as usize;
            let widths: Vec<u64> = (0..depth).map(|_| next()).collect();
            let mut hand = 0u64;
            for i in 0..widths.len() - 1 {
                // [n_in + (n_in - 1) + 1] * n_out
                hand += (widths[i] + (widths[i] - 1) + 1) * widths[i + 1];
            }
            assert_eq!(layer_flops(&widths), hand);
        }
    }

    #[test]
    fn table1_widths() {
        let config = ExperimentConfig::table1();
        let (bs, agents) = network_widths(&config.scenario, &config.training).unwrap();
        assert_eq!(agents.len(), 4);
        assert_eq!(agents[0], vec![30, 500, 250, 125, 36]);
        assert_eq!(bs.last().copied().unwrap(), 43_046_721 * 25);
    }

    #[test]
    fn metrics_roundtrip() {
        let records = vec![
            MetricsRecord {
                scheme: SchemeId::DDdqn,
                seed: 3,
                episode: 7,
                slot: 2,
                sum_rate: 1.2345678901234e7,
                reward: 0.0,
                d2d_ok: false,
                cellular_ok: true,
                loss: Some(0.125),
                epsilon: 0.55,
            },
            MetricsRecord {
                scheme: SchemeId::Baseline2Random,
                seed: 3,
                episode: 7,
                slot: 3,
                sum_rate: 9.87e6,
                reward: 9.87e6,
                d2d_ok: true,
                cellular_ok: true,
                loss: None,
                epsilon: 0.0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&path, &records).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].sum_rate.to_bits(), records[0].sum_rate.to_bits());
        assert_eq!(back[0].loss, records[0].loss);
        assert_eq!(back[1].scheme, SchemeId::Baseline2Random);
        assert!(!back[0].d2d_ok && back[0].cellular_ok);
    }

    #[test]
    fn sweep_points_expand_scenarios() {
        let mut config = ExperimentConfig::desk();
        config.experiment.sweep = Some(SweepAxis::NoiseDbm(vec![-115.0, -105.0]));
        let points = sweep_points(&config);
        assert_eq!(points.len(), 2);
        assert_relative_eq!(points[1].scenario.noise_dbm, -105.0);
        assert_eq!(points[0].axis, "noise_dbm");

        config.experiment.sweep = Some(SweepAxis::NumRisElements(vec![2, 4, 6]));
        let points = sweep_points(&config);
        assert_eq!(points[2].scenario.num_ris_elements, 6);
    }

    #[test]
    fn config_roundtrip_and_hash_stability() {
        let config = ExperimentConfig::desk();
        let text = toml::to_string(&config).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(config.hash(), back.hash());
        let mut other = config.clone();
        other.scenario.noise_dbm = -95.0;
        assert_ne!(config.hash(), other.hash());
    }

    #[test]
    fn eval_filename_parser() {
        assert_eq!(
            eval_file_pattern("eval_d_ddqn_seed3.csv").unwrap(),
            (SchemeId::DDdqn, 3, String::new())
        );
        let (scheme, seed, label) =
            eval_file_pattern("eval_baseline1_seed12_noise_dbm_-105.csv").unwrap();
        assert_eq!(scheme, SchemeId::Baseline1Exhaustive);
        assert_eq!(seed, 12);
        assert_eq!(label, "noise_dbm_-105");
        assert!(eval_file_pattern("train_d_ddqn_seed3.csv").is_none());
    }

    #[test]
    fn plot_data_mean_matches_independent_pass() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = dir.path().join("metrics");
        std::fs::create_dir_all(&metrics).unwrap();
        let mk = |reward: f64, n: usize, seed: u64| -> Vec<MetricsRecord> {
            (0..n)
                .map(|i| MetricsRecord {
                    scheme: SchemeId::Baseline2Random,
                    seed,
                    episode: 0,
                    slot: i as u64,
                    sum_rate: reward,
                    reward: reward * (i + 1) as f64,
                    d2d_ok: true,
                    cellular_ok: true,
                    loss: None,
                    epsilon: 0.0,
                })
                .collect()
        };
        let a = mk(2.0, 4, 1);
        let b = mk(3.0, 4, 2);
        write_metrics(metrics.join("eval_baseline2_seed1.csv"), &a).unwrap();
        write_metrics(metrics.join("eval_baseline2_seed2.csv"), &b).unwrap();

        let table = emit_plot_data(&metrics, FigureId::Fig5).unwrap();
        assert_eq!(table.schemes, vec![SchemeId::Baseline2Random]);
        let independent = |records: &[MetricsRecord]| -> f64 {
            records.iter().map(|r| r.reward).sum::<f64>() / records.len() as f64
        };
        let mean_a = independent(&a);
        let mean_b = independent(&b);
        let expected_mean = (mean_a + mean_b) / 2.0;
        let expected_std = (((mean_a - expected_mean).powi(2) + (mean_b - expected_mean).powi(2))
            / 1.0)
            .sqrt();
        let (mean, std) = table.rows[0][0];
        assert_relative_eq!(mean, expected_mean, max_relative = 1e-12);
        assert_relative_eq!(std, expected_std, max_relative = 1e-12);
        let csv = table.to_csv();
        assert!(csv.starts_with("point,baseline2_mean,baseline2_std\n"));
    }

    #[test]
    fn plot_data_missing_scheme_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = dir.path().join("metrics");
        std::fs::create_dir_all(&metrics).unwrap();
        let rec = vec![MetricsRecord {
            scheme: SchemeId::NoRis,
            seed: 1,
            episode: 0,
            slot: 0,
            sum_rate: 1.0,
            reward: 1.0,
            d2d_ok: true,
            cellular_ok: true,
            loss: None,
            epsilon: 0.0,
        }];
        write_metrics(metrics.join("eval_no_ris_seed1_noise_dbm_-115.csv"), &rec).unwrap();
        let rec2: Vec<MetricsRecord> = rec
            .iter()
            .cloned()
            .map(|mut r| {
                r.scheme = SchemeId::Baseline2Random;
                r
            })
            .collect();
        write_metrics(
            metrics.join("eval_baseline2_seed1_noise_dbm_-105.csv"),
            &rec2,
        )
        .unwrap();
        // baseline2 exists at -105 but not at -115: flagged
        match emit_plot_data(&metrics, FigureId::Fig6) {
            Err(Error::MissingData(_)) => {}
            other => panic!("expected MissingData, got {other:?}"),
        }
    }
}
