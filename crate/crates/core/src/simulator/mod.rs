//! Kinematic closed-loop environment: a circular track of gates with random
//! offsets, velocity-command integration, traversal checks and rollouts.

pub mod study;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::scene::{cartesian_to_spherical, render, wrap_angle, CameraIntrinsics, RelativeGatePose, SceneParams};

pub use study::{evaluate_success, write_success_csv, write_success_svg, SuccessCurve, SuccessPoint};

pub type Vec3 = [f64; 3];

/// Body-frame velocity command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub vpsi: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand { vx: 0.0, vy: 0.0, vz: 0.0, vpsi: 0.0 };

    pub fn as_array(&self) -> [f64; 4] {
        [self.vx, self.vy, self.vz, self.vpsi]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { vx: a[0], vy: a[1], vz: a[2], vpsi: a[3] }
    }
}

/// Command limits: per-axis linear speed and yaw rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { v_max: 3.0, omega_max: 1.5 }
    }
}

impl Limits {
    pub fn clamp(&self, c: VelocityCommand) -> VelocityCommand {
        let v = |x: f64| x.clamp(-self.v_max, self.v_max);
        VelocityCommand { vx: v(c.vx), vy: v(c.vy), vz: v(c.vz), vpsi: c.vpsi.clamp(-self.omega_max, self.omega_max) }
    }

    pub fn within(&self, c: &VelocityCommand) -> bool {
        c.vx.abs() <= self.v_max && c.vy.abs() <= self.v_max && c.vz.abs() <= self.v_max && c.vpsi.abs() <= self.omega_max
    }

    /// Scales a command into `[−1, 1]⁴`, clamping first.
    pub fn normalize(&self, c: &VelocityCommand) -> [f64; 4] {
        let c = self.clamp(*c);
        [c.vx / self.v_max, c.vy / self.v_max, c.vz / self.v_max, c.vpsi / self.omega_max]
    }

    pub fn denormalize(&self, n: [f64; 4]) -> VelocityCommand {
        self.clamp(VelocityCommand {
            vx: n[0] * self.v_max,
            vy: n[1] * self.v_max,
            vz: n[2] * self.v_max,
            vpsi: n[3] * self.omega_max,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub position: Vec3,
    pub yaw: f64,
    pub time: f64,
    /// Smoothed command currently acting on the vehicle.
    pub velocity: VelocityCommand,
}

impl DroneState {
    pub fn at(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw: wrap_angle(yaw), time: 0.0, velocity: VelocityCommand::ZERO }
    }

    /// World-frame linear velocity.
    pub fn world_velocity(&self) -> Vec3 {
        body_to_world(self.yaw, [self.velocity.vx, self.velocity.vy, self.velocity.vz])
    }
}

pub fn body_to_world(yaw: f64, v: Vec3) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

pub fn world_to_body(yaw: f64, v: Vec3) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]]
}

/// Advances the state by `dt`. The acting velocity follows the command with
/// a first-order lag of time constant `tau` (instantaneous for `tau = 0`).
pub fn step(state: &DroneState, cmd: &VelocityCommand, dt: f64, tau: f64) -> Result<DroneState> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("time step must be positive, got {dt}")));
    }
    let alpha = if tau > 0.0 { 1.0 - (-dt / tau).exp() } else { 1.0 };
    let v = state.velocity.as_array();
    let c = cmd.as_array();
    let smoothed = VelocityCommand::from_array(std::array::from_fn(|k| v[k] + alpha * (c[k] - v[k])));
    let w = body_to_world(state.yaw, [smoothed.vx, smoothed.vy, smoothed.vz]);
    let p = state.position;
    Ok(DroneState {
        position: [p[0] + w[0] * dt, p[1] + w[1] * dt, p[2] + w[2] * dt],
        yaw: wrap_angle(state.yaw + smoothed.vpsi * dt),
        time: state.time + dt,
        velocity: smoothed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePlacement {
    pub nominal: Vec3,
    pub offset: Vec3,
    /// Direction the gate normal faces (direction of travel through it).
    pub yaw: f64,
    pub traversals: usize,
}

/// Lowest allowed gate center height.
pub const MIN_GATE_HEIGHT: f64 = 0.5;

impl GatePlacement {
    pub fn center(&self) -> Vec3 {
        let n = self.nominal;
        let o = self.offset;
        [n[0] + o[0], n[1] + o[1], (n[2] + o[2]).max(MIN_GATE_HEIGHT)]
    }

    pub fn normal(&self) -> Vec3 {
        [self.yaw.cos(), self.yaw.sin(), 0.0]
    }

    pub fn lateral(&self) -> Vec3 {
        [-self.yaw.sin(), self.yaw.cos(), 0.0]
    }

    /// Signed distance of `p` past the gate plane along the normal.
    pub fn depth(&self, p: Vec3) -> f64 {
        dot(sub(p, self.center()), self.normal())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    pub gates: Vec<GatePlacement>,
    pub amplitude: f64,
    pub altitude: f64,
    pub radius: f64,
}

pub const GATE_COUNT: usize = 8;
pub const TRACK_LENGTH: f64 = 50.0;
pub const TRACK_ALTITUDE: f64 = 2.0;

fn draw_offset(rng: &mut Rng, a: f64) -> Vec3 {
    [rng.uniform(-a, a), rng.uniform(-a, a), rng.uniform(-a, a)]
}

/// Eight gates evenly spaced counter-clockwise on a circle of circumference
/// 50 m, each facing along the circle's tangent, with offsets drawn uniformly
/// from `[−a, a]³`.
pub fn make_track(rng: &mut Rng, amplitude: f64) -> Result<TrackConfig> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::config(format!("offset amplitude must be non-negative, got {amplitude}")));
    }
    let radius = TRACK_LENGTH / (2.0 * std::f64::consts::PI);
    let gates = (0..GATE_COUNT)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / GATE_COUNT as f64;
            GatePlacement {
                nominal: [radius * a.cos(), radius * a.sin(), TRACK_ALTITUDE],
                offset: draw_offset(rng, amplitude),
                yaw: wrap_angle(a + std::f64::consts::FRAC_PI_2),
                traversals: 0,
            }
        })
        .collect();
    Ok(TrackConfig { gates, amplitude, altitude: TRACK_ALTITUDE, radius })
}

impl TrackConfig {
    /// Draws a fresh offset for gate `i`.
    pub fn resample_offset(&mut self, i: usize, rng: &mut Rng) {
        let a = self.amplitude;
        self.gates[i].offset = draw_offset(rng, a);
    }

    /// Start state: at the nominal position of the last gate, facing along
    /// the track toward gate 0.
    pub fn start_state(&self) -> DroneState {
        let last = &self.gates[self.gates.len() - 1];
        DroneState::at(last.nominal, last.yaw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    Traversed,
    Collided,
    None,
}

/// Gate aperture geometry used for traversal checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aperture {
    pub outer_half: f64,
    pub inner_half: f64,
}

impl Aperture {
    pub fn from_scene(scene: &SceneParams) -> Self {
        let outer_half = 0.5 * scene.gate_side;
        Self { outer_half, inner_half: outer_half - scene.bar_thickness }
    }
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Classifies the motion `prev → curr` against `gate`: a front-to-back
/// crossing of the gate plane inside the inner square is a traversal, on the
/// frame a collision; anything else is `None`.
pub fn check_traversal(prev: Vec3, curr: Vec3, gate: &GatePlacement, aperture: &Aperture) -> Crossing {
    let (d0, d1) = (gate.depth(prev), gate.depth(curr));
    if !(d0 < 0.0 && d1 >= 0.0) {
        return Crossing::None;
    }
    let t = -d0 / (d1 - d0);
    let hit: Vec3 = std::array::from_fn(|k| prev[k] + t * (curr[k] - prev[k]));
    let rel = sub(hit, gate.center());
    let extent = dot(rel, gate.lateral()).abs().max(rel[2].abs());
    if extent < aperture.inner_half {
        Crossing::Traversed
    } else if extent <= aperture.outer_half {
        Crossing::Collided
    } else {
        Crossing::None
    }
}

/// Pose of `gate` relative to the drone, as used for the onboard view.
pub fn relative_pose(state: &DroneState, gate: &GatePlacement) -> Result<RelativeGatePose> {
    let v = world_to_body(state.yaw, sub(gate.center(), state.position));
    cartesian_to_spherical(v, gate.yaw, state.yaw)
}

/// What a pilot sees at one control tick.
pub struct Observation<'a> {
    pub state: &'a DroneState,
    pub track: &'a TrackConfig,
    pub target: usize,
    /// Onboard view of the target gate, present when the pilot asked for it.
    pub image: Option<&'a Tensor>,
}

/// Anything that maps observations to velocity commands.
pub trait Pilot {
    fn needs_image(&self) -> bool;
    fn command(&mut self, obs: &Observation) -> Result<VelocityCommand>;
}

/// Pilot that never moves.
pub struct Hover;

impl Pilot for Hover {
    fn needs_image(&self) -> bool {
        false
    }

    fn command(&mut self, _: &Observation) -> Result<VelocityCommand> {
        Ok(VelocityCommand::ZERO)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub dt: f64,
    pub max_ticks: usize,
    pub tau: f64,
    pub target_traversals: usize,
    /// Distance past the target gate's plane that ends an episode.
    pub missed_overshoot: f64,
    pub limits: Limits,
    pub camera: CameraIntrinsics,
    pub scene: SceneParams,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            max_ticks: 4000,
            tau: 0.2,
            target_traversals: 3 * GATE_COUNT,
            missed_overshoot: 3.0,
            limits: Limits::default(),
            camera: CameraIntrinsics { width: 32, height: 32, hfov: std::f64::consts::FRAC_PI_2 },
            scene: SceneParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Collision,
    Timeout,
    MissedGate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// States after every tick, starting with the initial state.
    pub states: Vec<DroneState>,
    pub commands: Vec<VelocityCommand>,
    /// Target gate at each tick.
    pub targets: Vec<usize>,
    pub gates_traversed: usize,
    pub termination: Termination,
    pub score: f64,
    /// Gate index resampled at each traversal, in order.
    pub resampled: Vec<usize>,
}

impl EpisodeRecord {
    pub fn ticks(&self) -> usize {
        self.commands.len()
    }

    pub fn write_trace_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,x,y,z,yaw,vx,vy,vz,vpsi,target_gate")?;
        for (k, cmd) in self.commands.iter().enumerate() {
            let s = &self.states[k];
            let p = s.position;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.time, p[0], p[1], p[2], s.yaw, cmd.vx, cmd.vy, cmd.vz, cmd.vpsi, self.targets[k]
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Onboard view of `gate` from `state`; background only if the gate sits at
/// the camera center.
pub fn onboard_view(cfg: &RolloutConfig, scene: &SceneParams, state: &DroneState, gate: &GatePlacement) -> Tensor {
    match relative_pose(state, gate) {
        Ok(pose) => render(&cfg.camera, scene, &pose, 0.0, 0.0),
        Err(_) => {
            let far = RelativeGatePose { r: 1e6, theta: std::f64::consts::PI, phi: std::f64::consts::FRAC_PI_2, psi: 0.0 };
            render(&cfg.camera, scene, &far, 0.0, 0.0)
        }
    }
}

/// Flies `pilot` around `track` until completion, collision, a missed gate or
/// the tick budget. `rng` drives scene appearance and offset resampling.
/// `observe` sees every observation together with the issued command.
pub fn rollout<P: Pilot + ?Sized>(
    pilot: &mut P,
    track: &TrackConfig,
    cfg: &RolloutConfig,
    rng: &mut Rng,
    mut observe: impl FnMut(&Observation, &VelocityCommand),
) -> Result<EpisodeRecord> {
    if track.gates.is_empty() {
        return Err(Error::config("track has no gates"));
    }
    let mut track = track.clone();
    let scene = cfg.scene.jittered(rng);
    let aperture = Aperture::from_scene(&cfg.scene);
    let mut state = track.start_state();
    let mut target = 0usize;
    let mut record = EpisodeRecord {
        states: vec![state],
        commands: Vec::new(),
        targets: Vec::new(),
        gates_traversed: 0,
        termination: Termination::Timeout,
        score: 0.0,
        resampled: Vec::new(),
    };
    for _ in 0..cfg.max_ticks {
        let image = if pilot.needs_image() { Some(onboard_view(cfg, &scene, &state, &track.gates[target])) } else { None };
        let obs = Observation { state: &state, track: &track, target, image: image.as_ref() };
        let cmd = cfg.limits.clamp(pilot.command(&obs)?);
        observe(&obs, &cmd);
        let next = step(&state, &cmd, cfg.dt, cfg.tau)?;
        record.commands.push(cmd);
        record.targets.push(target);
        record.states.push(next);
        let crossing = check_traversal(state.position, next.position, &track.gates[target], &aperture);
        state = next;
        match crossing {
            Crossing::Traversed => {
                record.gates_traversed += 1;
                track.gates[target].traversals += 1;
                track.resample_offset(target, rng);
                record.resampled.push(target);
                target = (target + 1) % track.gates.len();
                if record.gates_traversed >= cfg.target_traversals {
                    record.termination = Termination::Completed;
                    break;
                }
            }
            Crossing::Collided => {
                record.termination = Termination::Collision;
                break;
            }
            Crossing::None => {
                if track.gates[target].depth(state.position) > cfg.missed_overshoot {
                    record.termination = Termination::MissedGate;
                    break;
                }
            }
        }
    }
    record.score = record.gates_traversed.min(cfg.target_traversals) as f64 / cfg.target_traversals as f64;
    Ok(record)
}
