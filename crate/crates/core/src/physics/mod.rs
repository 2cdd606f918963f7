//! Reference time-stepped world simulator and channel extraction.
//!
//! The world is a set of axis-aligned boxes with a penetration loss each.
//! Agents move along waypoint tracks. After every step the channel between
//! each pair of agents is reduced to a [`ChannelData`] snapshot, either as a
//! disk model (in range or not) or as LOS/NLOS with one hop per crossed box.

pub mod geometry;
mod motion;
mod socket;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use geometry::{segment_box_crossing, Aabb, Crossing, Point};
pub use motion::{step_agents, Agent, AgentState, AgentTrack};
pub use socket::{serve_physics, SocketPhysics};

use crate::sync::LinkError;
use crate::wire::{ChannelData, HopPoint, PathDetails, WireError};

#[derive(Debug, thiserror::Error)]
pub enum PhysicsError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid track for agent {agent_id}: {reason}")]
    InvalidTrack { agent_id: u32, reason: String },
    #[error("agent ids must be exactly 0..{count}, got {ids:?}")]
    AgentIds { count: usize, ids: Vec<u32> },
    #[error("physics simulator transport: {0}")]
    Transport(#[from] LinkError),
    #[error("physics simulator protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub min: Point,
    pub max: Point,
    /// dB lost per crossing.
    pub penetration_loss: f64,
}

impl Obstacle {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.min, self.max)
    }
}

/// Static environment. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldModel {
    pub bounds: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl WorldModel {
    pub fn empty(bounds: Aabb) -> Self {
        WorldModel {
            bounds,
            obstacles: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !self.bounds.is_valid() {
            return Err(PhysicsError::InvalidWorld(format!(
                "bounds {:?} are not a proper box",
                self.bounds
            )));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.aabb().is_valid() {
                return Err(PhysicsError::InvalidWorld(format!(
                    "obstacle {i}: min corner must be below max corner"
                )));
            }
            if !(o.penetration_loss.is_finite() && o.penetration_loss >= 0.0) {
                return Err(PhysicsError::InvalidWorld(format!(
                    "obstacle {i}: penetration loss {} must be >= 0",
                    o.penetration_loss
                )));
            }
            if !self.bounds.encloses(&o.aabb()) {
                return Err(PhysicsError::InvalidWorld(format!(
                    "obstacle {i} extends outside the world bounds"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelFidelity {
    /// Link iff the agents are within `radius` meters.
    Disk { radius: f64 },
    LosNlos,
}

impl ChannelFidelity {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        match *self {
            ChannelFidelity::Disk { radius } if !(radius.is_finite() && radius > 0.0) => Err(
                PhysicsError::InvalidWorld(format!("disk radius {radius} must be positive")),
            ),
            _ => Ok(()),
        }
    }
}

/// Channel snapshot for `agents`, which must be ordered by id `0..n`.
///
/// Pairs are emitted once each as `(i, j)` with `i < j`. Under LOS/NLOS an
/// obstructed pair gets one path whose hops are the entry points of the
/// crossed boxes in order along the segment from `i` to `j`.
pub fn extract_channel_data(
    world: &WorldModel,
    agents: &[AgentState],
    fidelity: ChannelFidelity,
) -> ChannelData {
    debug_assert!(agents.iter().enumerate().all(|(i, a)| a.agent_id as usize == i));
    let node_list = agents.iter().map(|a| a.pose).collect::<Vec<_>>();
    let mut path_details = Vec::with_capacity(agents.len() * agents.len().saturating_sub(1) / 2);
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            let p0 = node_list[i].position;
            let p1 = node_list[j].position;
            let ids = (i as u32, j as u32);
            let details = match fidelity {
                ChannelFidelity::Disk { radius } => PathDetails {
                    ids,
                    los: geometry::distance(p0, p1) <= radius,
                    num_hops: Vec::new(),
                    hop_points: Vec::new(),
                },
                ChannelFidelity::LosNlos => los_nlos_paths(world, ids, p0, p1),
            };
            path_details.push(details);
        }
    }
    ChannelData {
        node_list,
        path_details,
    }
}

fn los_nlos_paths(world: &WorldModel, ids: (u32, u32), p0: Point, p1: Point) -> PathDetails {
    let mut crossed: Vec<(f64, usize, Point)> = if p0 == p1 {
        Vec::new()
    } else {
        world
            .obstacles
            .iter()
            .enumerate()
            .filter_map(|(k, o)| segment_box_crossing(p0, p1, &o.aabb()).map(|c| (c.t_entry, k, c.entry)))
            .collect()
    };
    if crossed.is_empty() {
        return PathDetails {
            ids,
            los: true,
            num_hops: vec![0],
            hop_points: Vec::new(),
        };
    }
    crossed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let hop_points = crossed
        .iter()
        .map(|&(_, k, p)| HopPoint {
            x: p[0],
            y: p[1],
            z: p[2],
            loss_db: world.obstacles[k].penetration_loss,
        })
        .collect::<Vec<_>>();
    PathDetails {
        ids,
        los: false,
        num_hops: vec![hop_points.len() as u32],
        hop_points,
    }
}

/// What the physics coordinator needs from a world simulator.
pub trait PhysicsSimInterface {
    /// Advances simulated time by `dt_ns`.
    fn step(&mut self, dt_ns: u64) -> Result<(), PhysicsError>;
    /// Channel state at the current simulated time.
    fn channel_snapshot(&mut self, fidelity: ChannelFidelity) -> Result<ChannelData, PhysicsError>;
    fn agent_count(&self) -> usize;
}

/// In-process world simulator over [`WorldModel`] and [`AgentTrack`]s.
#[derive(Debug, Clone)]
pub struct ReferencePhysics {
    world: Arc<WorldModel>,
    agents: Vec<Agent>,
    time_ns: u64,
}

impl ReferencePhysics {
    pub fn new(world: Arc<WorldModel>, tracks: Vec<AgentTrack>) -> Result<Self, PhysicsError> {
        world.validate()?;
        let mut agents = tracks.into_iter().map(Agent::new).collect::<Result<Vec<_>, _>>()?;
        agents.sort_by_key(Agent::id);
        if agents.iter().enumerate().any(|(i, a)| a.id() as usize != i) {
            return Err(PhysicsError::AgentIds {
                count: agents.len(),
                ids: agents.iter().map(Agent::id).collect(),
            });
        }
        Ok(ReferencePhysics {
            world,
            agents,
            time_ns: 0,
        })
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn time_ns(&self) -> u64 {
        self.time_ns
    }

    pub fn states(&self) -> Vec<AgentState> {
        self.agents.iter().map(|a| a.state().clone()).collect()
    }
}

impl PhysicsSimInterface for ReferencePhysics {
    fn step(&mut self, dt_ns: u64) -> Result<(), PhysicsError> {
        step_agents(&mut self.agents, dt_ns);
        self.time_ns += dt_ns;
        Ok(())
    }

    fn channel_snapshot(&mut self, fidelity: ChannelFidelity) -> Result<ChannelData, PhysicsError> {
        Ok(extract_channel_data(&self.world, &self.states(), fidelity))
    }

    fn agent_count(&self) -> usize {
        self.agents.len()
    }
}
