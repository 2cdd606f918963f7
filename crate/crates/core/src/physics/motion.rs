//! Piecewise-linear constant-speed agent motion.

use serde::{Deserialize, Serialize};

use super::geometry::{distance, lerp, Point};
use super::PhysicsError;
use crate::wire::Pose;

/// Waypoint path followed by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentTrack {
    pub agent_id: u32,
    pub waypoints: Vec<Point>,
    /// m/s.
    pub speed: f64,
    /// Wrap back to the first waypoint instead of stopping at the last.
    #[serde(rename = "loop", default)]
    pub looped: bool,
    /// Orient the agent along the current segment (yaw about +z) instead of
    /// keeping the identity orientation.
    #[serde(default)]
    pub yaw_aligned: bool,
}

impl AgentTrack {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let err = |why: String| PhysicsError::InvalidTrack {
            agent_id: self.agent_id,
            reason: why,
        };
        if self.waypoints.is_empty() {
            return Err(err("track has no waypoints".into()));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(err(format!("speed {} must be positive", self.speed)));
        }
        if self.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(err("non-finite waypoint".into()));
        }
        if let Some(k) = self.waypoints.windows(2).position(|w| w[0] == w[1]) {
            return Err(err(format!("waypoints {k} and {} coincide", k + 1)));
        }
        Ok(())
    }
}

/// Cumulative-length view of a track polyline. Loop tracks include the
/// closing segment back to the first waypoint.
#[derive(Debug, Clone)]
struct Polyline {
    points: Vec<Point>,
    /// `cum[k]` is the arc length at `points[k]`.
    cum: Vec<f64>,
}

impl Polyline {
    fn new(track: &AgentTrack) -> Self {
        let mut points = track.waypoints.clone();
        if track.looped && points.len() > 1 && points.first() != points.last() {
            points.push(points[0]);
        }
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            acc += distance(w[0], w[1]);
            cum.push(acc);
        }
        Polyline { points, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    /// Position and segment index at `arc`, which must lie in `[0, length]`.
    fn locate(&self, arc: f64) -> (Point, usize) {
        if self.points.len() == 1 {
            return (self.points[0], 0);
        }
        let last_seg = self.points.len() - 2;
        let seg = match self.cum.partition_point(|&c| c <= arc) {
            0 => 0,
            k => (k - 1).min(last_seg),
        };
        let len = self.cum[seg + 1] - self.cum[seg];
        let frac = ((arc - self.cum[seg]) / len).clamp(0.0, 1.0);
        (lerp(self.points[seg], self.points[seg + 1], frac), seg)
    }

    fn yaw_quaternion(&self, seg: usize) -> [f64; 4] {
        if self.points.len() < 2 {
            return Pose::IDENTITY_ORIENTATION;
        }
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        if dx == 0.0 && dy == 0.0 {
            return Pose::IDENTITY_ORIENTATION;
        }
        let half = dy.atan2(dx) / 2.0;
        [0.0, 0.0, half.sin(), half.cos()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub agent_id: u32,
    pub pose: Pose,
    /// Meters along the track from the first waypoint.
    pub arc_position: f64,
}

/// An agent moving along its track. Position is computed in closed form
/// from the total elapsed time, so repeated steps do not accumulate error.
#[derive(Debug, Clone)]
pub struct Agent {
    track: AgentTrack,
    path: Polyline,
    elapsed_ns: u64,
    state: AgentState,
}

impl Agent {
    pub fn new(track: AgentTrack) -> Result<Self, PhysicsError> {
        track.validate()?;
        let path = Polyline::new(&track);
        let mut agent = Agent {
            state: AgentState {
                agent_id: track.agent_id,
                pose: Pose::at(track.waypoints[0]),
                arc_position: 0.0,
            },
            track,
            path,
            elapsed_ns: 0,
        };
        agent.update_state();
        Ok(agent)
    }

    pub fn id(&self) -> u32 {
        self.track.agent_id
    }

    pub fn track(&self) -> &AgentTrack {
        &self.track
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn track_length(&self) -> f64 {
        self.path.length()
    }

    pub fn elapsed_ns(&self) -> u64 {
        self.elapsed_ns
    }

    pub fn advance(&mut self, dt_ns: u64) {
        self.elapsed_ns += dt_ns;
        self.update_state();
    }

    fn update_state(&mut self) {
        let travelled = self.track.speed * (self.elapsed_ns as f64 * 1e-9);
        let length = self.path.length();
        let arc = if length == 0.0 {
            0.0
        } else if self.track.looped {
            travelled % length
        } else {
            travelled.min(length)
        };
        let (position, seg) = self.path.locate(arc);
        let orientation = if self.track.yaw_aligned {
            self.path.yaw_quaternion(seg)
        } else {
            Pose::IDENTITY_ORIENTATION
        };
        self.state.arc_position = arc;
        self.state.pose = Pose {
            position,
            orientation,
        };
    }
}

/// Advances every agent by `dt_ns`.
pub fn step_agents(agents: &mut [Agent], dt_ns: u64) {
    for agent in agents {
        agent.advance(dt_ns);
    }
}
