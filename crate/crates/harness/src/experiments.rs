use std::collections::BTreeMap;

use bayesnav_core::control::{mixture_moments, COMMAND_DIM};
use bayesnav_core::dependability::{
    self, assess_risk, calibrate_band, run_monitors, BayesNet, Behavior, BehaviorTree, Blackboard, MonitorConfig,
    MonitorId, ThresholdBand,
};
use bayesnav_core::env::{
    self, build_scene_subsets, check_gate_pass, classify_scene, expert_policy, generate_track, render_observation,
    ControlSample, SceneClass, SceneSample, Track, UavState, VelocityCommand,
};
use bayesnav_core::metrics::{self, command_ece, density_summary, DensitySummary, EceAggregation};
use bayesnav_core::perception::latent_dispersion;
use bayesnav_core::seed;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io;
use crate::models::{ModelVariant, TrainedModels, VariantId};

/// Who produces the commands in an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pilot {
    Model(VariantId),
    Expert,
    /// Uniform commands within the limits.
    Random,
}

impl Pilot {
    pub fn label(&self) -> String {
        match self {
            Pilot::Model(v) => v.to_string(),
            Pilot::Expert => "expert".into(),
            Pilot::Random => "random".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Flyaway,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub gates_passed: u32,
    pub steps: usize,
    pub outcome: Outcome,
    pub error: Option<String>,
}

fn variant_of(config: &ExperimentConfig, id: VariantId) -> Result<ModelVariant> {
    let matrix = ModelVariant::matrix(config.ensemble_size, config.latent_samples)?;
    Ok(*matrix.iter().find(|v| v.id == id).expect("variant in matrix"))
}

/// Closed-loop flight. Observation noise and model sampling draw from
/// streams derived from `inference_seed`.
pub fn run_episode(
    config: &ExperimentConfig,
    models: Option<&TrainedModels>,
    pilot: Pilot,
    track: &Track,
    start: UavState,
    inference_seed: u64,
) -> EpisodeResult {
    let world = &config.world;
    let mut obs_rng = seed::rng(inference_seed, &[0x6f62]);
    let mut model_rng = seed::rng(inference_seed, &[0x6d64]);
    let variant = match pilot {
        Pilot::Model(id) => match variant_of(config, id) {
            Ok(v) => Some(v),
            Err(e) => {
                return EpisodeResult {
                    gates_passed: 0,
                    steps: 0,
                    outcome: Outcome::Aborted,
                    error: Some(e.to_string()),
                }
            }
        },
        _ => None,
    };
    let mut state = start;
    for t in 0..config.episode_steps {
        let cmd = match pilot {
            Pilot::Expert => expert_policy(&state, track, &world.expert, &world.limits),
            Pilot::Random => {
                let l = &world.limits;
                VelocityCommand::new(
                    model_rng.random_range(-l.linear..=l.linear),
                    model_rng.random_range(-l.linear..=l.linear),
                    model_rng.random_range(-l.linear..=l.linear),
                    model_rng.random_range(-l.yaw_rate..=l.yaw_rate),
                )
            }
            Pilot::Model(_) => {
                let obs = render_observation(&state, track, &world.sensor, &mut obs_rng);
                let step_cmd = models
                    .ok_or_else(|| crate::error::HarnessError::Config("models required".into()))
                    .and_then(|m| {
                        let (_, pred) = m.infer(variant.as_ref().expect("model pilot"), &obs, &mut model_rng)?;
                        crate::models::aggregate(&pred, config)
                    });
                match step_cmd {
                    Ok(c) => c,
                    Err(e) => {
                        return EpisodeResult {
                            gates_passed: state.gates_passed,
                            steps: t,
                            outcome: Outcome::Aborted,
                            error: Some(e.to_string()),
                        }
                    }
                }
            }
        };
        let (next, _) = env::step(&state, &cmd, world.dt, &world.limits);
        state = check_gate_pass(&state, &next, track);
        if world.is_flyaway(&state, track) {
            return EpisodeResult {
                gates_passed: state.gates_passed,
                steps: t + 1,
                outcome: Outcome::Flyaway,
                error: None,
            };
        }
    }
    EpisodeResult {
        gates_passed: state.gates_passed,
        steps: config.episode_steps,
        outcome: Outcome::Completed,
        error: None,
    }
}

/// One benchmark track: a (seed, noise level) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackInstance {
    pub index: usize,
    pub seed: u64,
    pub noise_level: String,
    pub sha256: String,
    #[serde(skip)]
    pub track: Option<Track>,
}

pub fn benchmark_tracks(config: &ExperimentConfig) -> Result<Vec<TrackInstance>> {
    let mut out = Vec::new();
    for (li, level) in config.noise_levels.iter().enumerate() {
        for &s in &config.seeds {
            let track = generate_track(seed::derive(s, &[0x7472, li as u64]), &config.world.track, &level.noise)?;
            out.push(TrackInstance {
                index: out.len(),
                seed: s,
                noise_level: level.name.clone(),
                sha256: io::hash_json(&track),
                track: Some(track),
            });
        }
    }
    Ok(out)
}

/// Jittered start pose for a trial; shared by every pilot.
pub fn trial_start(config: &ExperimentConfig, track: &Track, track_index: usize, trial: usize) -> UavState {
    let mut rng = seed::rng(config.training_seed, &[0x6a69, track_index as u64, trial as u64]);
    let mut s = config.world.start_state(track);
    let (a, b, c): (f64, f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    s.position[0] += config.jitter.position_std * a;
    s.position[1] += config.jitter.position_std * b;
    s.yaw = env::wrap_angle(s.yaw + config.jitter.yaw_std * c);
    s
}

pub fn trial_inference_seed(config: &ExperimentConfig, track_index: usize, trial: usize) -> u64 {
    seed::derive(config.training_seed, &[0x696e, track_index as u64, trial as u64])
}

/// Calibration of each variant on the held-out control samples.
pub fn evaluate_ece(
    config: &ExperimentConfig,
    models: &TrainedModels,
    holdout: &[ControlSample],
) -> Result<BTreeMap<VariantId, metrics::CommandCalibration>> {
    let mut out = BTreeMap::new();
    let targets: Vec<[f64; COMMAND_DIM]> = holdout.iter().map(|s| s.command.to_array()).collect();
    for variant in ModelVariant::matrix(config.ensemble_size, config.latent_samples)? {
        let mut rng = seed::rng(config.training_seed, &[0x6563, variant.id as u64]);
        let preds = holdout
            .iter()
            .map(|s| models.infer(&variant, &s.observation, &mut rng).map(|p| p.1))
            .collect::<Result<Vec<_>>>()?;
        out.insert(variant.id, command_ece(&preds, &targets, config.ece_levels, EceAggregation::Squared)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub noise_level: String,
    pub seed: u64,
    pub track: usize,
    pub trial: usize,
    pub gates_passed: u32,
    pub steps: usize,
    pub outcome: Outcome,
    /// Empty for the reference pilots.
    pub ece: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub noise_level: String,
    pub episodes: usize,
    pub mean_gates_passed: f64,
    pub ece: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub training_hash: String,
    pub training_seed: u64,
    pub track_seeds: Vec<u64>,
    pub tracks: Vec<TrackInstance>,
    pub trial_variation: String,
    pub ece_dimension_reduction: String,
    pub ece_levels: Vec<f64>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub ece: BTreeMap<VariantId, f64>,
    pub manifest: Manifest,
}

impl ResultsTable {
    pub fn mean_gates(&self, pilot: &str, level: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.variant == pilot && r.noise_level == level)
            .map(|r| r.mean_gates_passed)
    }

    /// Writes `results.csv`, `summary.csv` and `manifest.json`.
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        io::write_csv(&dir.join("results.csv"), &self.rows)?;
        io::write_csv(&dir.join("summary.csv"), &self.summary)?;
        io::write_json(&dir.join("manifest.json"), &self.manifest)
    }
}

pub fn run_benchmark(config: &ExperimentConfig, models: &TrainedModels, holdout: &[ControlSample]) -> Result<ResultsTable> {
    let tracks = benchmark_tracks(config)?;
    let calibration = evaluate_ece(config, models, holdout)?;
    let ece: BTreeMap<VariantId, f64> = calibration.iter().map(|(k, v)| (*k, v.ece)).collect();
    let mut pilots: Vec<Pilot> = VariantId::ALL.iter().map(|&v| Pilot::Model(v)).collect();
    pilots.extend([Pilot::Expert, Pilot::Random]);

    let mut rows = Vec::new();
    for pilot in &pilots {
        for inst in &tracks {
            let track = inst.track.as_ref().expect("generated track");
            for trial in 0..config.trials_per_track {
                let start = trial_start(config, track, inst.index, trial);
                let r = run_episode(config, Some(models), *pilot, track, start, trial_inference_seed(config, inst.index, trial));
                rows.push(ResultRow {
                    variant: pilot.label(),
                    noise_level: inst.noise_level.clone(),
                    seed: inst.seed,
                    track: inst.index,
                    trial,
                    gates_passed: r.gates_passed,
                    steps: r.steps,
                    outcome: r.outcome,
                    ece: match pilot {
                        Pilot::Model(v) => Some(ece[v]),
                        _ => None,
                    },
                    error: r.error,
                });
            }
        }
    }

    let mut summary = Vec::new();
    for pilot in &pilots {
        for level in &config.noise_levels {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.variant == pilot.label() && r.noise_level == level.name)
                .collect();
            summary.push(SummaryRow {
                variant: pilot.label(),
                noise_level: level.name.clone(),
                episodes: cell.len(),
                mean_gates_passed: cell.iter().map(|r| r.gates_passed as f64).sum::<f64>() / cell.len().max(1) as f64,
                ece: cell.first().and_then(|r| r.ece),
            });
        }
    }

    let dimension_reduction = calibration
        .values()
        .next()
        .map(|c| c.dimension_reduction.clone())
        .unwrap_or_default();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        training_hash: config.training_hash(),
        training_seed: config.training_seed,
        track_seeds: config.seeds.clone(),
        tracks,
        trial_variation: format!(
            "start pose jitter (position std {} m, yaw std {} rad); inference seeds fixed per (track, trial) and shared by all pilots",
            config.jitter.position_std, config.jitter.yaw_std
        ),
        ece_dimension_reduction: dimension_reduction,
        ece_levels: metrics::calibration_levels(config.ece_levels),
        config: config.clone(),
    };
    Ok(ResultsTable {
        rows,
        summary,
        ece,
        manifest,
    })
}

/// Gates the expert passes on a noiseless track in one episode.
pub fn expert_capacity(config: &ExperimentConfig) -> Result<u32> {
    let track = generate_track(0, &config.world.track, &env::NoiseLevel::NONE)?;
    let start = config.world.start_state(&track);
    Ok(run_episode(config, None, Pilot::Expert, &track, start, 0).gates_passed)
}

// ------------------------------------------------------------ scene report

/// Per-scene uncertainty statistics of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub class: SceneClass,
    /// `sqrt` of the mixture variance per command dimension.
    pub sigma: [f64; COMMAND_DIM],
    pub total_sigma: f64,
    pub latent_dispersion: f64,
    /// Modes among the lateral-velocity component means (1 for tiny sets).
    pub lateral_modes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummaryRow {
    pub variant: String,
    pub class: String,
    pub dimension: usize,
    #[serde(flatten)]
    pub summary: DensitySummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpRow {
    pub class: String,
    pub quantity: String,
    pub sample: usize,
    pub dimension: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub stats: BTreeMap<VariantId, Vec<SceneStats>>,
    pub sigma_summaries: Vec<SigmaSummaryRow>,
    /// M0 latent / mean / sigma samples for one scene per class.
    pub dumps: Vec<DumpRow>,
}

impl SceneReport {
    pub fn class_stats(&self, variant: VariantId, class: SceneClass) -> Vec<&SceneStats> {
        self.stats[&variant].iter().filter(|s| s.class == class).collect()
    }

    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        io::write_csv(&dir.join("scene_sigma_summary.csv"), &self.sigma_summaries)?;
        io::write_csv(&dir.join("scene_dumps.csv"), &self.dumps)?;
        #[derive(Serialize)]
        struct Flat<'a> {
            variant: String,
            scene: usize,
            #[serde(flatten)]
            stats: &'a SceneStats,
        }
        let flat: Vec<Flat> = self
            .stats
            .iter()
            .flat_map(|(v, s)| s.iter().enumerate().map(move |(i, st)| Flat { variant: v.to_string(), scene: i, stats: st }))
            .collect();
        io::write_json(&dir.join("scene_stats.json"), &flat)
    }
}

pub fn scene_subsets(config: &ExperimentConfig) -> Result<[Vec<SceneSample>; 3]> {
    Ok(build_scene_subsets(
        seed::derive(config.training_seed, &[0x7363]),
        config.scene_samples_per_class,
        &config.world,
    )?)
}

pub fn scene_stats(
    config: &ExperimentConfig,
    models: &TrainedModels,
    variant: &ModelVariant,
    scenes: &[SceneSample],
) -> Result<Vec<SceneStats>> {
    let mut rng = seed::rng(config.training_seed, &[0x7373, variant.id as u64]);
    scenes
        .iter()
        .map(|s| {
            let (latents, pred) = models.infer(variant, &s.observation, &mut rng)?;
            let (_, var) = mixture_moments(&pred)?;
            Ok(SceneStats {
                class: s.class,
                sigma: var.map(f64::sqrt),
                total_sigma: var.iter().sum::<f64>().sqrt(),
                latent_dispersion: if latents.len() >= 2 { latent_dispersion(&latents)? } else { 0.0 },
                lateral_modes: dependability::mode_count(&pred, 1)?,
            })
        })
        .collect()
}

pub fn run_scene_report(config: &ExperimentConfig, models: &TrainedModels) -> Result<SceneReport> {
    let subsets = scene_subsets(config)?;
    let scenes: Vec<SceneSample> = subsets.iter().flatten().cloned().collect();
    let matrix = ModelVariant::matrix(config.ensemble_size, config.latent_samples)?;
    let mut stats = BTreeMap::new();
    let mut sigma_summaries = Vec::new();
    for variant in &matrix {
        let st = scene_stats(config, models, variant, &scenes)?;
        for class in SceneClass::ALL {
            for d in 0..COMMAND_DIM {
                let values: Vec<f64> = st.iter().filter(|s| s.class == class).map(|s| s.sigma[d]).collect();
                sigma_summaries.push(SigmaSummaryRow {
                    variant: variant.id.to_string(),
                    class: class.name().into(),
                    dimension: d,
                    summary: density_summary(&values)?,
                });
            }
        }
        stats.insert(variant.id, st);
    }
    let mut dumps = Vec::new();
    let mut rng = seed::rng(config.training_seed, &[0x6475]);
    for (class, subset) in SceneClass::ALL.iter().zip(&subsets) {
        let Some(scene) = subset.first() else { continue };
        let (latents, pred) = models.infer(&matrix[0], &scene.observation, &mut rng)?;
        let mut push = |quantity: &str, sample: usize, dimension: usize, value: f64| {
            dumps.push(DumpRow {
                class: class.name().into(),
                quantity: quantity.into(),
                sample,
                dimension,
                value,
            })
        };
        for (i, z) in latents.samples.iter().enumerate() {
            z.iter().enumerate().for_each(|(d, &v)| push("z", i, d, v));
        }
        for (i, c) in pred.components.iter().enumerate() {
            for d in 0..COMMAND_DIM {
                push("mu", i, d, c.mean[d]);
                push("sigma", i, d, c.variance[d].sqrt());
            }
        }
    }
    Ok(SceneReport {
        stats,
        sigma_summaries,
        dumps,
    })
}

/// Monitor bands from M0's behavior on single-gate versus no-gate scenes.
pub fn calibrate_monitors(report_stats: &[SceneStats]) -> Result<MonitorConfig> {
    let pick = |class: SceneClass, f: fn(&SceneStats) -> f64| -> Vec<f64> {
        report_stats.iter().filter(|s| s.class == class).map(f).collect()
    };
    Ok(MonitorConfig {
        output_sigma: calibrate_band(
            &pick(SceneClass::SingleGate, |s| s.total_sigma),
            &pick(SceneClass::NoGate, |s| s.total_sigma),
        )?,
        latent_dispersion: calibrate_band(
            &pick(SceneClass::SingleGate, |s| s.latent_dispersion),
            &pick(SceneClass::NoGate, |s| s.latent_dispersion),
        )?,
        multimodality: ThresholdBand::new(1.0, 2.0)?,
        mode_dimension: 1,
    })
}

// ------------------------------------------------------------ guarded run

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardedStep {
    pub step: usize,
    pub scene: SceneClass,
    pub sigma_belief: f64,
    pub dispersion_belief: f64,
    pub multimodal_belief: f64,
    pub risk: f64,
    pub behavior: Behavior,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
    pub gates_passed: u32,
}

/// Track used for guarded runs: the first benchmark seed, noiseless.
pub fn guarded_track(config: &ExperimentConfig) -> Result<Track> {
    Ok(generate_track(
        seed::derive(config.seeds[0], &[0x6775]),
        &config.world.track,
        &env::NoiseLevel::NONE,
    )?)
}

/// M0 flight from the configured start, facing away from the track, with
/// risk-driven arbitration. `guard = false` flies the bare pipeline while
/// logging the same quantities.
pub fn run_guarded_episode(
    config: &ExperimentConfig,
    models: &TrainedModels,
    monitors: &MonitorConfig,
    guard: bool,
) -> Result<Vec<GuardedStep>> {
    let world = &config.world;
    let track = guarded_track(config)?;
    let g = &config.guarded;
    let yaw = g.start[1].atan2(g.start[0]);
    let mut state = UavState::new(g.start, yaw, track.next_gate_after(yaw));
    let variant = variant_of(config, VariantId::M0)?;
    let net = BayesNet::default_network();
    let tree = BehaviorTree::default_tree(g.risk_threshold, g.search_yaw_rate)?;
    let mut obs_rng = seed::rng(config.training_seed, &[0x676f]);
    let mut model_rng = seed::rng(config.training_seed, &[0x676d]);
    let mut log = Vec::with_capacity(g.steps);
    for t in 0..g.steps {
        let scene = classify_scene(&state, &track, &world.sensor);
        let obs = render_observation(&state, &track, &world.sensor, &mut obs_rng);
        let (latents, pred) = models.infer(&variant, &obs, &mut model_rng)?;
        let pipeline_command = crate::models::aggregate(&pred, config)?;
        let verdicts = run_monitors(&pred, &latents, monitors)?;
        let risk = assess_risk(&net, &verdicts, &config.risk)?;
        let belief = |id: MonitorId| verdicts.iter().find(|v| v.monitor == id).map_or(0.0, |v| v.belief);
        let (behavior, cmd) = if guard {
            let out = tree.tick(&Blackboard {
                risk: risk.risk,
                pipeline_command,
                scene: None,
            });
            (out.behavior, out.command)
        } else {
            (Behavior::PassThrough, pipeline_command)
        };
        let (next, _) = env::step(&state, &cmd, world.dt, &world.limits);
        state = check_gate_pass(&state, &next, &track);
        log.push(GuardedStep {
            step: t,
            scene,
            sigma_belief: belief(MonitorId::OutputSigma),
            dispersion_belief: belief(MonitorId::LatentDispersion),
            multimodal_belief: belief(MonitorId::Multimodality),
            risk: risk.risk,
            behavior,
            vx: cmd.vx,
            vy: cmd.vy,
            vz: cmd.vz,
            yaw_rate: cmd.yaw_rate,
            gates_passed: state.gates_passed,
        });
        if world.is_flyaway(&state, &track) {
            break;
        }
    }
    Ok(log)
}
