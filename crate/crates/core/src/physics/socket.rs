//! Physics simulator behind a [`PeerLink`].
//!
//! The coordinator sends `PhysicsUpdate{BEGIN, time_val = target time}` as a
//! step request; the simulator steps up to that time and replies with
//! `PhysicsUpdate{END, time_val = target time}` carrying its channel
//! snapshot. A request for the current time is a pure snapshot query.

use super::{ChannelFidelity, PhysicsError, PhysicsSimInterface};
use crate::sync::{LinkError, PeerLink};
use crate::wire::{ChannelData, Message, MsgType, PhysicsUpdate};

pub struct SocketPhysics<L> {
    link: L,
    time_ns: u64,
    agents: usize,
    cached: Option<ChannelData>,
}

impl<L: PeerLink> SocketPhysics<L> {
    /// Connects over `link` and fetches the initial snapshot.
    pub fn new(link: L) -> Result<Self, PhysicsError> {
        let mut sim = SocketPhysics {
            link,
            time_ns: 0,
            agents: 0,
            cached: None,
        };
        sim.request(0)?;
        Ok(sim)
    }

    pub fn into_link(self) -> L {
        self.link
    }

    fn request(&mut self, target: u64) -> Result<(), PhysicsError> {
        self.link
            .send(&PhysicsUpdate::new(MsgType::Begin, target).into())?;
        let reply = match self.link.recv()? {
            Message::Physics(p) => p,
            other => {
                return Err(PhysicsError::Protocol(format!(
                    "expected PhysicsUpdate reply, got {}",
                    other.kind()
                )))
            }
        };
        if reply.msg_type != MsgType::End || reply.time_val != target {
            return Err(PhysicsError::Protocol(format!(
                "expected END({target}), got {:?}({})",
                reply.msg_type, reply.time_val
            )));
        }
        let cd = reply.channel()?.unwrap_or_default();
        self.agents = cd.node_list.len();
        self.cached = Some(cd);
        self.time_ns = target;
        Ok(())
    }
}

impl<L: PeerLink> PhysicsSimInterface for SocketPhysics<L> {
    fn step(&mut self, dt_ns: u64) -> Result<(), PhysicsError> {
        self.request(self.time_ns + dt_ns)
    }

    /// The remote simulator owns its fidelity; the argument is ignored.
    fn channel_snapshot(&mut self, _fidelity: ChannelFidelity) -> Result<ChannelData, PhysicsError> {
        if self.cached.is_none() {
            self.request(self.time_ns)?;
        }
        Ok(self.cached.clone().unwrap_or_default())
    }

    fn agent_count(&self) -> usize {
        self.agents
    }
}

/// Serves `sim` over `link` until the client closes it.
pub fn serve_physics<L: PeerLink, S: PhysicsSimInterface>(
    mut link: L,
    sim: &mut S,
    fidelity: ChannelFidelity,
) -> Result<(), PhysicsError> {
    let mut now = 0u64;
    loop {
        let req = match link.recv() {
            Ok(Message::Physics(p)) if p.msg_type == MsgType::Begin => p,
            Ok(other) => {
                return Err(PhysicsError::Protocol(format!(
                    "expected step request, got {} {:?}",
                    other.kind(),
                    other.msg_type()
                )))
            }
            Err(LinkError::Closed) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        if req.time_val < now {
            return Err(PhysicsError::Protocol(format!(
                "step request to {} is behind current time {now}",
                req.time_val
            )));
        }
        if req.time_val > now {
            sim.step(req.time_val - now)?;
            now = req.time_val;
        }
        let cd = sim.channel_snapshot(fidelity)?;
        link.send(&PhysicsUpdate::with_channel(MsgType::End, now, &cd)?.into())?;
    }
}
