//! The expert pilot: a minimum-jerk segment to the next gate, replanned at
//! every traversal, tracked by pure pursuit. Also records demonstration
//! datasets for behavior cloning.

pub mod demos;
pub mod pursuit;
pub mod quintic;

use crate::error::Result;
use crate::simulator::{DroneState, Observation, Pilot, TrackConfig, VelocityCommand};

pub use demos::{generate_demonstrations, load_demonstrations, read_demo_manifest, DemoConfig, DemoDataset, DemoManifest, DemoRecord};
pub use pursuit::{lookahead_point, pure_pursuit, PursuitConfig};
pub use quintic::{jerk_integral, plan_min_jerk, Boundary, QuinticSegment};

/// Plans the segment from `state` to the center of gate `target`, arriving
/// along the gate normal.
pub fn plan_to_gate(state: &DroneState, track: &TrackConfig, target: usize, cfg: &PursuitConfig) -> Result<QuinticSegment> {
    let gate = &track.gates[target];
    let c = gate.center();
    let n = gate.normal();
    let p = state.position;
    let distance = ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2)).sqrt();
    let start = Boundary { p, v: state.world_velocity(), a: [0.0; 3] };
    let goal = Boundary { p: c, v: [cfg.v_cross * n[0], cfg.v_cross * n[1], 0.0], a: [0.0; 3] };
    let mut seg = plan_min_jerk(&start, &goal, (distance / cfg.v_nominal).max(0.1))?;
    seg.start_time = state.time;
    Ok(seg)
}

/// Stateful expert: keeps its segment until the target gate changes.
pub struct Expert {
    pub cfg: PursuitConfig,
    segment: Option<(usize, QuinticSegment)>,
}

impl Expert {
    pub fn new(cfg: PursuitConfig) -> Self {
        Self { cfg, segment: None }
    }

    pub fn segment(&self) -> Option<&QuinticSegment> {
        self.segment.as_ref().map(|(_, s)| s)
    }
}

impl Pilot for Expert {
    fn needs_image(&self) -> bool {
        false
    }

    fn command(&mut self, obs: &Observation) -> Result<VelocityCommand> {
        if self.segment.as_ref().map(|(t, _)| *t) != Some(obs.target) {
            let seg = plan_to_gate(obs.state, obs.track, obs.target, &self.cfg)?;
            self.segment = Some((obs.target, seg));
        }
        let (_, seg) = self.segment.as_ref().expect("segment planned above");
        Ok(pure_pursuit(obs.state, seg, &self.cfg))
    }
}
