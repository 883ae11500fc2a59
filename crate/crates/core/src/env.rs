//! Synthetic gate-racing world.
//!
//! World frame is right-handed with `z` up; yaw is measured counterclockwise
//! from `+x`. A clockwise track is traversed with decreasing polar angle.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Range entries are divided by this before entering a network.
pub const RANGE_NORMALIZER: f64 = 20.0;
/// Values per gate slot: range, bearing, elevation, relative yaw, visibility.
pub const SLOT_WIDTH: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid noise range [{low}, {high})")]
    InvalidRange { low: f64, high: f64 },
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("dataset size {0} below minimum of 10")]
    DatasetTooSmall(usize),
    #[error("sampling budget of {0} attempts exceeded")]
    SamplingBudgetExceeded(usize),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Half-open uniform range `[low, high)`; `low == high` is a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub low: f64,
    pub high: f64,
}

impl UniformRange {
    pub const ZERO: UniformRange = UniformRange { low: 0.0, high: 0.0 };

    pub fn new(low: f64, high: f64) -> Result<Self> {
        let r = Self { low, high };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite()) || self.low > self.high {
            return Err(EnvError::InvalidRange {
                low: self.low,
                high: self.high,
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        if self.low == self.high {
            x == self.low
        } else {
            x >= self.low && x < self.high
        }
    }

    fn max_abs(&self) -> f64 {
        self.low.abs().max(self.high.abs())
    }

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..self.high)
        }
    }
}

/// Gate radius / gate height noise pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub grn: UniformRange,
    pub ghn: UniformRange,
}

impl NoiseLevel {
    pub const NONE: NoiseLevel = NoiseLevel {
        grn: UniformRange::ZERO,
        ghn: UniformRange::ZERO,
    };
    pub const LOW: NoiseLevel = NoiseLevel {
        grn: UniformRange { low: -1.0, high: 1.0 },
        ghn: UniformRange { low: 0.0, high: 2.0 },
    };
    pub const HIGH: NoiseLevel = NoiseLevel {
        grn: UniformRange { low: -1.5, high: 1.5 },
        ghn: UniformRange { low: 0.0, high: 3.0 },
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Clockwise,
    Counterclockwise,
}

impl Direction {
    /// `+1` for counterclockwise travel, `-1` for clockwise.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Clockwise => -1.0,
            Direction::Counterclockwise => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub center: [f64; 3],
    /// Direction of travel through the gate.
    pub yaw: f64,
    pub aperture_half_width: f64,
}

impl Gate {
    fn normal(&self) -> [f64; 3] {
        [self.yaw.cos(), self.yaw.sin(), 0.0]
    }

    fn lateral(&self) -> [f64; 3] {
        [-self.yaw.sin(), self.yaw.cos(), 0.0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub gates: Vec<Gate>,
    pub direction: Direction,
    pub base_radius: f64,
    pub base_height: f64,
}

impl Track {
    /// Polar angle of the `i`-th nominal gate position.
    pub fn gate_angle(&self, i: usize) -> f64 {
        self.direction.sign() * TAU * i as f64 / self.gates.len() as f64
    }

    /// Heading that follows the direction of travel at polar angle `theta`.
    pub fn tangent_yaw(&self, theta: f64) -> f64 {
        wrap_angle(theta + self.direction.sign() * FRAC_PI_2)
    }

    /// Index of the first gate ahead (in travel order) of polar angle `theta`.
    pub fn next_gate_after(&self, theta: f64) -> usize {
        let n = self.gates.len();
        let step = TAU / n as f64;
        let progress = (self.direction.sign() * theta).rem_euclid(TAU);
        ((progress / step).floor() as usize + 1) % n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSpec {
    pub n_gates: usize,
    pub radius: f64,
    pub height: f64,
    pub direction: Direction,
    pub aperture_half_width: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self {
            n_gates: 8,
            radius: 8.0,
            height: 2.0,
            direction: Direction::Clockwise,
            aperture_half_width: 0.75,
        }
    }
}

/// Circular track with per-gate radius and height noise. Deterministic per
/// `(seed, spec, noise)`.
pub fn generate_track(seed: u64, spec: &TrackSpec, noise: &NoiseLevel) -> Result<Track> {
    noise.grn.validate()?;
    noise.ghn.validate()?;
    if spec.n_gates == 0 {
        return Err(EnvError::InvalidTrack("need at least one gate".into()));
    }
    if !(spec.radius > noise.grn.max_abs()) {
        return Err(EnvError::InvalidTrack(format!(
            "radius {} must exceed radius noise magnitude {}",
            spec.radius,
            noise.grn.max_abs()
        )));
    }
    if !(spec.aperture_half_width > 0.0) {
        return Err(EnvError::InvalidTrack("aperture must be positive".into()));
    }
    let mut rng = seed::rng(seed, &[0x7472_6163_6b]);
    let mut track = Track {
        gates: Vec::with_capacity(spec.n_gates),
        direction: spec.direction,
        base_radius: spec.radius,
        base_height: spec.height,
    };
    for i in 0..spec.n_gates {
        let dr = noise.grn.sample(&mut rng);
        let dh = noise.ghn.sample(&mut rng);
        let theta = spec.direction.sign() * TAU * i as f64 / spec.n_gates as f64;
        let r = spec.radius + dr;
        track.gates.push(Gate {
            center: [r * theta.cos(), r * theta.sin(), spec.height + dh],
            yaw: track.tangent_yaw(theta),
            aperture_half_width: spec.aperture_half_width,
        });
    }
    Ok(track)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: [f64; 3],
    pub yaw: f64,
    pub next_gate_index: usize,
    pub gates_passed: u32,
}

impl UavState {
    pub fn new(position: [f64; 3], yaw: f64, next_gate_index: usize) -> Self {
        Self {
            position,
            yaw: wrap_angle(yaw),
            next_gate_index,
            gates_passed: 0,
        }
    }
}

/// Body-frame velocity command `[vx, vy, vz, yaw_rate]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand {
        vx: 0.0,
        vy: 0.0,
        vz: 0.0,
        yaw_rate: 0.0,
    };

    pub fn new(vx: f64, vy: f64, vz: f64, yaw_rate: f64) -> Self {
        Self { vx, vy, vz, yaw_rate }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.vx, self.vy, self.vz, self.yaw_rate]
    }

    /// Clamps each component; the flag reports whether anything changed.
    pub fn clamp(self, limits: &CommandLimits) -> (Self, bool) {
        let lin = |v: f64| v.clamp(-limits.linear, limits.linear);
        let c = Self::new(
            lin(self.vx),
            lin(self.vy),
            lin(self.vz),
            self.yaw_rate.clamp(-limits.yaw_rate, limits.yaw_rate),
        );
        (c, c != self)
    }

    pub fn within(&self, limits: &CommandLimits) -> bool {
        [self.vx, self.vy, self.vz].iter().all(|v| v.abs() <= limits.linear)
            && self.yaw_rate.abs() <= limits.yaw_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandLimits {
    pub linear: f64,
    pub yaw_rate: f64,
}

impl Default for CommandLimits {
    fn default() -> Self {
        Self {
            linear: 3.0,
            yaw_rate: 1.5,
        }
    }
}

/// First-order kinematics: the clamped body-frame velocity rotated by yaw and
/// Euler-integrated. Returns the new state and whether the command was
/// clamped.
pub fn step(state: &UavState, cmd: &VelocityCommand, dt: f64, limits: &CommandLimits) -> (UavState, bool) {
    let (cmd, clamped) = cmd.clamp(limits);
    let (s, c) = state.yaw.sin_cos();
    let mut next = *state;
    next.position[0] += (c * cmd.vx - s * cmd.vy) * dt;
    next.position[1] += (s * cmd.vx + c * cmd.vy) * dt;
    next.position[2] += cmd.vz * dt;
    next.yaw = wrap_angle(state.yaw + cmd.yaw_rate * dt);
    (next, clamped)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Full horizontal field of view, radians.
    pub fov: f64,
    pub max_range: f64,
    pub slots: usize,
    /// Noise std in normalized units (range noise is scaled by
    /// [`RANGE_NORMALIZER`]).
    pub noise_std: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov: FRAC_PI_2,
            max_range: 20.0,
            slots: 2,
            noise_std: 0.05,
        }
    }
}

impl SensorConfig {
    pub fn obs_dim(&self) -> usize {
        SLOT_WIDTH * self.slots
    }
}

/// Noiseless relative geometry of one gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateView {
    pub gate: usize,
    pub range: f64,
    pub bearing: f64,
    pub elevation: f64,
    pub relative_yaw: f64,
}

impl GateView {
    pub fn pose(&self) -> [f64; 4] {
        [self.range, self.bearing, self.elevation, self.relative_yaw]
    }
}

pub fn view_of(state: &UavState, track: &Track, gate: usize) -> GateView {
    let g = &track.gates[gate];
    let d = [
        g.center[0] - state.position[0],
        g.center[1] - state.position[1],
        g.center[2] - state.position[2],
    ];
    let (s, c) = state.yaw.sin_cos();
    let bx = c * d[0] + s * d[1];
    let by = -s * d[0] + c * d[1];
    let horizontal = bx.hypot(by);
    GateView {
        gate,
        range: (horizontal * horizontal + d[2] * d[2]).sqrt(),
        bearing: by.atan2(bx),
        elevation: d[2].atan2(horizontal),
        relative_yaw: wrap_angle(g.yaw - state.yaw),
    }
}

/// Gates inside the field of view and range, nearest first.
pub fn visible_gates(state: &UavState, track: &Track, sensor: &SensorConfig) -> Vec<GateView> {
    let mut views: Vec<GateView> = (0..track.gates.len())
        .map(|i| view_of(state, track, i))
        .filter(|v| v.bearing.abs() <= 0.5 * sensor.fov && v.range <= sensor.max_range)
        .collect();
    views.sort_by(|a, b| a.range.total_cmp(&b.range).then(a.gate.cmp(&b.gate)));
    views
}

/// Fixed-length sensor vector: per slot `(range [m], bearing, elevation,
/// relative yaw, visible)`, zero for empty slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    pub fn slots(&self) -> usize {
        self.features.len() / SLOT_WIDTH
    }

    pub fn visibility_flags(&self) -> impl Iterator<Item = f64> + '_ {
        self.features.chunks_exact(SLOT_WIDTH).map(|s| s[4])
    }

    /// Network input: the feature vector with range entries divided by
    /// [`RANGE_NORMALIZER`].
    pub fn network_input(&self) -> Vec<f64> {
        let mut x = self.features.clone();
        x.chunks_exact_mut(SLOT_WIDTH).for_each(|s| s[0] /= RANGE_NORMALIZER);
        x
    }
}

/// Renders the observation; Gaussian noise is added to the numeric entries of
/// populated slots only. Visibility flags are never perturbed.
pub fn render_observation<R: RngCore + ?Sized>(
    state: &UavState,
    track: &Track,
    sensor: &SensorConfig,
    rng: &mut R,
) -> Observation {
    let mut features = vec![0.0; sensor.obs_dim()];
    for (slot, view) in visible_gates(state, track, sensor).iter().take(sensor.slots).enumerate() {
        let f = &mut features[slot * SLOT_WIDTH..(slot + 1) * SLOT_WIDTH];
        f.copy_from_slice(&[view.range, view.bearing, view.elevation, view.relative_yaw, 1.0]);
        if sensor.noise_std > 0.0 {
            let scales = [RANGE_NORMALIZER, 1.0, 1.0, 1.0];
            for (v, s) in f.iter_mut().zip(scales) {
                let e: f64 = rng.sample(StandardNormal);
                *v += sensor.noise_std * s * e;
            }
        }
    }
    Observation { features }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneClass {
    SingleGate,
    NoGate,
    MultiGate,
}

impl SceneClass {
    pub const ALL: [SceneClass; 3] = [SceneClass::SingleGate, SceneClass::NoGate, SceneClass::MultiGate];

    pub fn from_visible_count(n: usize) -> Self {
        match n {
            0 => SceneClass::NoGate,
            1 => SceneClass::SingleGate,
            _ => SceneClass::MultiGate,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SceneClass::SingleGate => "single_gate",
            SceneClass::NoGate => "no_gate",
            SceneClass::MultiGate => "multi_gate",
        }
    }
}

/// Number of visibility flags a noiseless render would set, mapped to a class.
pub fn classify_scene(state: &UavState, track: &Track, sensor: &SensorConfig) -> SceneClass {
    let count = visible_gates(state, track, sensor).len().min(sensor.slots);
    SceneClass::from_visible_count(count)
}

/// Counts a pass when the segment `prev -> next` crosses the expected gate's
/// plane in the direction of travel within the aperture.
pub fn check_gate_pass(prev: &UavState, next: &UavState, track: &Track) -> UavState {
    let mut out = *next;
    let idx = prev.next_gate_index % track.gates.len();
    let gate = &track.gates[idx];
    let n = gate.normal();
    let rel = |p: &[f64; 3]| [p[0] - gate.center[0], p[1] - gate.center[1], p[2] - gate.center[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let s0 = dot(rel(&prev.position), n);
    let s1 = dot(rel(&next.position), n);
    if s0 < 0.0 && s1 >= 0.0 {
        let t = s0 / (s0 - s1);
        let hit: [f64; 3] =
            std::array::from_fn(|k| prev.position[k] + t * (next.position[k] - prev.position[k]));
        let r = rel(&hit);
        let lateral = dot(r, gate.lateral()).abs();
        let vertical = r[2].abs();
        if lateral <= gate.aperture_half_width && vertical <= gate.aperture_half_width {
            out.gates_passed = prev.gates_passed + 1;
            out.next_gate_index = (idx + 1) % track.gates.len();
            return out;
        }
    }
    out.gates_passed = prev.gates_passed;
    out.next_gate_index = prev.next_gate_index;
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertGains {
    pub yaw: f64,
    pub cruise_speed: f64,
    pub vertical: f64,
    /// Gain on the offset from the gate's center line, driving `vy`.
    pub lateral: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self {
            yaw: 2.0,
            cruise_speed: 1.5,
            vertical: 1.0,
            lateral: 1.0,
        }
    }
}

/// Proportional expert steering toward the next expected gate.
pub fn expert_policy(
    state: &UavState,
    track: &Track,
    gains: &ExpertGains,
    limits: &CommandLimits,
) -> VelocityCommand {
    let idx = state.next_gate_index % track.gates.len();
    let view = view_of(state, track, idx);
    let gate = &track.gates[idx];
    let dz = gate.center[2] - state.position[2];
    // Offset of the UAV from the gate's center line, in body-frame y.
    let rel = [state.position[0] - gate.center[0], state.position[1] - gate.center[1]];
    let lat = gate.lateral();
    let offset = rel[0] * lat[0] + rel[1] * lat[1];
    let desired = [-offset * lat[0], -offset * lat[1]];
    let body_y = -state.yaw.sin() * desired[0] + state.yaw.cos() * desired[1];
    let cmd = VelocityCommand::new(
        gains.cruise_speed * view.bearing.cos().max(0.0),
        gains.lateral * body_y,
        gains.vertical * dz,
        gains.yaw * view.bearing,
    );
    cmd.clamp(limits).0
}

/// Everything that defines the simulated world apart from per-track noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub track: TrackSpec,
    pub sensor: SensorConfig,
    pub limits: CommandLimits,
    pub expert: ExpertGains,
    pub dt: f64,
    pub max_steps: usize,
    /// Episodes abort once the UAV is farther than this many base radii from
    /// the track center.
    pub flyaway_factor: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            track: TrackSpec::default(),
            sensor: SensorConfig::default(),
            limits: CommandLimits::default(),
            expert: ExpertGains::default(),
            dt: 0.05,
            max_steps: 2000,
            flyaway_factor: 3.0,
        }
    }
}

impl WorldConfig {
    pub fn is_flyaway(&self, state: &UavState, track: &Track) -> bool {
        state.position[0].hypot(state.position[1]) > self.flyaway_factor * track.base_radius
    }

    /// Pose on the nominal circle halfway between the last gate and gate 0,
    /// heading along the track.
    pub fn start_state(&self, track: &Track) -> UavState {
        let theta = -track.direction.sign() * PI / track.gates.len() as f64;
        let r = track.base_radius;
        UavState::new(
            [r * theta.cos(), r * theta.sin(), track.base_height],
            track.tangent_yaw(theta),
            0,
        )
    }
}

/// Expert rollout from `start` until the step cap or a flyaway.
pub fn fly_expert(world: &WorldConfig, track: &Track, start: UavState, steps: usize) -> UavState {
    let mut state = start;
    for _ in 0..steps {
        let cmd = expert_policy(&state, track, &world.expert, &world.limits);
        let (next, _) = step(&state, &cmd, world.dt, &world.limits);
        state = check_gate_pass(&state, &next, track);
        if world.is_flyaway(&state, track) {
            break;
        }
    }
    state
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionSample {
    pub observation: Observation,
    /// Noiseless `(range, bearing, elevation, relative yaw)` of the nearest
    /// visible gate.
    pub pose: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub observation: Observation,
    pub command: VelocityCommand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub observation: Observation,
    pub class: SceneClass,
    pub state: UavState,
    pub track_seed: u64,
}

/// Splits off the first `floor(frac * n)` samples for training.
pub fn split<T: Clone>(data: &[T], train_fraction: f64) -> (Vec<T>, Vec<T>) {
    let n_train = (data.len() as f64 * train_fraction).floor() as usize;
    (data[..n_train].to_vec(), data[n_train..].to_vec())
}

pub const PERCEPTION_TRAIN_FRACTION: f64 = 0.8;
pub const CONTROL_TRAIN_FRACTION: f64 = 0.9;

/// Random pose around a track: near the circle, at flying height, with a
/// heading that is either roughly along the track or uniform.
fn random_pose<R: RngCore + ?Sized>(rng: &mut R, track: &Track) -> UavState {
    let theta = rng.random_range(-PI..PI);
    let r = track.base_radius + rng.random_range(-3.0..3.0);
    let z = track.base_height + rng.random_range(-1.0..3.0);
    let yaw = if rng.random_bool(0.5) {
        let e: f64 = rng.sample(StandardNormal);
        track.tangent_yaw(theta) + 0.6 * e
    } else {
        rng.random_range(-PI..PI)
    };
    UavState::new([r * theta.cos(), r * theta.sin(), z], yaw, track.next_gate_after(theta))
}

/// Pose inside the envelope covered by expert rollouts: near the nominal
/// circle and heading along the track, or lost with a uniform heading.
fn flight_pose<R: RngCore + ?Sized>(rng: &mut R, track: &Track, lost_probability: f64) -> UavState {
    let theta = rng.random_range(-PI..PI);
    let r = track.base_radius + rng.random_range(-1.0..1.0);
    let z = track.base_height + rng.random_range(0.0..1.0);
    let yaw = if rng.random_bool(lost_probability) {
        rng.random_range(-PI..PI)
    } else {
        let e: f64 = rng.sample(StandardNormal);
        track.tangent_yaw(theta) + 0.3 * e
    };
    UavState::new([r * theta.cos(), r * theta.sin(), z], yaw, track.next_gate_after(theta))
}

/// Tracks used by dataset generators: a fresh seed every `period` samples,
/// alternating between noiseless and the lower benchmark noise level.
struct TrackPool<'a> {
    world: &'a WorldConfig,
    seed: u64,
    period: usize,
    current: Option<(usize, Track, u64)>,
}

impl<'a> TrackPool<'a> {
    fn new(world: &'a WorldConfig, seed: u64, period: usize) -> Self {
        Self {
            world,
            seed,
            period,
            current: None,
        }
    }

    fn get(&mut self, i: usize) -> (&Track, u64) {
        let k = i / self.period;
        if self.current.as_ref().map(|c| c.0) != Some(k) {
            let track_seed = seed::derive(self.seed, &[k as u64]);
            let noise = if k % 2 == 0 { NoiseLevel::NONE } else { NoiseLevel::LOW };
            let track = generate_track(track_seed, &self.world.track, &noise)
                .expect("default track spec is valid");
            self.current = Some((k, track, track_seed));
        }
        let c = self.current.as_ref().unwrap();
        (&c.1, c.2)
    }
}

/// Perception dataset: noisy observations of single-gate scenes labelled with
/// the noiseless pose of the visible gate.
pub fn generate_perception_dataset(seed: u64, size: usize, world: &WorldConfig) -> Result<Vec<PerceptionSample>> {
    if size < 10 {
        return Err(EnvError::DatasetTooSmall(size));
    }
    let mut rng = seed::rng(seed, &[0x7065_7263]);
    let mut pool = TrackPool::new(world, seed, 64);
    let budget = size * 100;
    let mut out = Vec::with_capacity(size);
    let mut attempt = 0;
    while out.len() < size {
        if attempt >= budget {
            return Err(EnvError::SamplingBudgetExceeded(budget));
        }
        let (track, _) = pool.get(attempt);
        attempt += 1;
        let state = random_pose(&mut rng, track);
        let views = visible_gates(&state, track, &world.sensor);
        if views.len() != 1 {
            continue;
        }
        let observation = render_observation(&state, track, &world.sensor, &mut rng);
        out.push(PerceptionSample {
            observation,
            pose: views[0].pose(),
        });
    }
    Ok(out)
}

/// Tunables of the expert rollouts behind the control dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub episode_steps: usize,
    /// Probability that an episode starts with a uniformly random heading.
    pub lost_start_probability: f64,
    /// Std of the perturbation added to executed (not logged) commands.
    pub action_noise: f64,
    pub mild_noise: NoiseLevel,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            episode_steps: 100,
            lost_start_probability: 0.25,
            action_noise: 0.3,
            mild_noise: NoiseLevel {
                grn: UniformRange { low: -0.75, high: 0.75 },
                ghn: UniformRange { low: 0.0, high: 1.5 },
            },
        }
    }
}

/// Control dataset: expert rollouts on noiseless and mildly noisy tracks,
/// logging `(observation, expert command)`. Executed commands carry extra
/// noise so the data covers recoveries.
pub fn generate_control_dataset(
    seed: u64,
    size: usize,
    world: &WorldConfig,
    rollout: &RolloutConfig,
) -> Result<Vec<ControlSample>> {
    if size < 10 {
        return Err(EnvError::DatasetTooSmall(size));
    }
    let mut rng = seed::rng(seed, &[0x6374_726c]);
    let mut out = Vec::with_capacity(size);
    let mut episode = 0u64;
    while out.len() < size {
        let noise = if episode % 2 == 0 { NoiseLevel::NONE } else { rollout.mild_noise };
        let track = generate_track(seed::derive(seed, &[0x6570, episode]), &world.track, &noise)?;
        episode += 1;
        let mut state = flight_pose(&mut rng, &track, rollout.lost_start_probability);
        for _ in 0..rollout.episode_steps {
            if out.len() >= size {
                break;
            }
            let observation = render_observation(&state, &track, &world.sensor, &mut rng);
            let command = expert_policy(&state, &track, &world.expert, &world.limits);
            out.push(ControlSample { observation, command });
            let mut executed = command.to_array();
            for v in &mut executed {
                let e: f64 = rng.sample(StandardNormal);
                *v += rollout.action_noise * e;
            }
            let (next, _) = step(&state, &VelocityCommand::from_array(executed), world.dt, &world.limits);
            state = check_gate_pass(&state, &next, &track);
            if world.is_flyaway(&state, &track) {
                break;
            }
        }
    }
    Ok(out)
}

/// Rejection-samples poses until each scene class has `per_class` samples.
/// Classes come from the noiseless render; stored observations carry the
/// configured sensor noise.
pub fn build_scene_subsets(
    seed: u64,
    per_class: usize,
    world: &WorldConfig,
) -> Result<[Vec<SceneSample>; 3]> {
    let mut rng = seed::rng(seed, &[0x7363_656e]);
    let mut pool = TrackPool::new(world, seed::derive(seed, &[1]), 32);
    let mut sets: [Vec<SceneSample>; 3] = Default::default();
    let budget = 200 * per_class.max(1) * 3;
    let mut attempt = 0;
    while sets.iter().any(|s| s.len() < per_class) {
        if attempt >= budget {
            return Err(EnvError::SamplingBudgetExceeded(budget));
        }
        let (track, track_seed) = pool.get(attempt);
        attempt += 1;
        let state = flight_pose(&mut rng, track, 0.5);
        let class = classify_scene(&state, track, &world.sensor);
        let slot = class as usize;
        if sets[slot].len() >= per_class {
            continue;
        }
        let observation = render_observation(&state, track, &world.sensor, &mut rng);
        sets[slot].push(SceneSample {
            observation,
            class,
            state,
            track_seed,
        });
    }
    Ok(sets)
}
