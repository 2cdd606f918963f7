//! The physics coordinator: steps the world simulator exactly one window at
//! a time and ships its channel snapshot to the network side.
//!
//! The snapshot taken at the end of window `t` rides on `END(t)` and again
//! on `BEGIN(t + W)`; the network side applies it to window `t + W`. The
//! snapshot for window 0 is taken before the first step.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use crate::address_map::AddressMap;
use crate::physics::{
    AgentTrack, ChannelFidelity, PhysicsError, PhysicsSimInterface, ReferencePhysics,
    SocketPhysics, WorldModel,
};
use crate::sync::{DriverError, PeerLink, Role, SimDriver, SyncError, SyncPeer, TcpLink};
use crate::wire::{
    compress_channel_data, encode_channel_data, Message, MsgType, PhysicsUpdate,
};

#[derive(Debug, thiserror::Error)]
pub enum PhysCoordError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("physics coordinator aborted after {windows} windows: {source}")]
    Sync {
        windows: u64,
        #[source]
        source: SyncError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhysicsBackend {
    Reference,
    /// External simulator speaking step requests over TCP.
    Socket(SocketAddr),
}

impl PhysicsBackend {
    pub fn open(
        &self,
        world: Arc<WorldModel>,
        tracks: Vec<AgentTrack>,
        timeout: Option<Duration>,
    ) -> Result<Box<dyn PhysicsSimInterface + Send>, PhysicsError> {
        match self {
            PhysicsBackend::Reference => Ok(Box::new(ReferencePhysics::new(world, tracks)?)),
            PhysicsBackend::Socket(addr) => {
                let mut link = TcpLink::connect(addr).map_err(|e| PhysicsError::Transport(e.into()))?;
                link.set_read_timeout(timeout)
                    .map_err(|e| PhysicsError::Transport(e.into()))?;
                Ok(Box::new(SocketPhysics::new(link)?))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhysCoordConfig {
    pub window_ns: u64,
    pub duration_ns: u64,
    pub substeps_per_window: u32,
    pub fidelity: ChannelFidelity,
    pub backend: PhysicsBackend,
    pub agent_address_map: AddressMap,
}

impl PhysCoordConfig {
    pub fn windows(&self) -> Result<u64, PhysCoordError> {
        if self.window_ns == 0 {
            return Err(PhysCoordError::Config("window must be positive".into()));
        }
        if !self.duration_ns.is_multiple_of(self.window_ns) {
            return Err(PhysCoordError::Config(format!(
                "duration {} ns is not a multiple of the window {} ns",
                self.duration_ns, self.window_ns
            )));
        }
        Ok(self.duration_ns / self.window_ns)
    }
}

/// Equal substeps summing exactly to `window_ns`.
pub fn substep_schedule(window_ns: u64, substeps_per_window: u32) -> Result<Vec<u64>, PhysCoordError> {
    let n = u64::from(substeps_per_window);
    if n == 0 {
        return Err(PhysCoordError::Config("substeps_per_window must be at least 1".into()));
    }
    if !window_ns.is_multiple_of(n) {
        return Err(PhysCoordError::Config(format!(
            "window {window_ns} ns is not divisible into {n} substeps"
        )));
    }
    Ok(vec![window_ns / n; n as usize])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysRunSummary {
    pub windows: u64,
    pub agents: usize,
    pub sim_time_ns: u64,
    pub extractions: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub mean_window_wall: Duration,
    pub max_window_wall: Duration,
}

/// [`SimDriver`] for the physics side.
pub struct PhysicsDriver<'a, P: ?Sized> {
    sim: &'a mut P,
    fidelity: ChannelFidelity,
    substeps: Vec<u64>,
    window_ns: u64,
    last_channel: Option<Vec<u8>>,
    extractions: u64,
    sim_time_ns: u64,
}

impl<'a, P: PhysicsSimInterface + ?Sized> PhysicsDriver<'a, P> {
    pub fn new(
        sim: &'a mut P,
        fidelity: ChannelFidelity,
        window_ns: u64,
        substeps_per_window: u32,
    ) -> Result<Self, PhysCoordError> {
        Ok(PhysicsDriver {
            sim,
            fidelity,
            substeps: substep_schedule(window_ns, substeps_per_window)?,
            window_ns,
            last_channel: None,
            extractions: 0,
            sim_time_ns: 0,
        })
    }

    pub fn extractions(&self) -> u64 {
        self.extractions
    }

    pub fn sim_time_ns(&self) -> u64 {
        self.sim_time_ns
    }

    /// Compressed snapshot most recently sent.
    pub fn last_channel(&self) -> Option<&[u8]> {
        self.last_channel.as_deref()
    }

    fn extract(&mut self) -> Result<Vec<u8>, PhysicsError> {
        let cd = self.sim.channel_snapshot(self.fidelity)?;
        self.extractions += 1;
        let packed = compress_channel_data(&encode_channel_data(&cd)?);
        self.last_channel = Some(packed.clone());
        Ok(packed)
    }
}

impl<P: PhysicsSimInterface + ?Sized> SimDriver for PhysicsDriver<'_, P> {
    fn begin_message(&mut self, t: u64) -> Result<Message, DriverError> {
        let channel_data = match &self.last_channel {
            Some(c) => c.clone(),
            None => self.extract()?,
        };
        Ok(PhysicsUpdate {
            msg_type: MsgType::Begin,
            time_val: t,
            channel_data,
        }
        .into())
    }

    fn simulate(&mut self, t: u64, window: u64, _peer_begin: &Message) -> Result<Message, DriverError> {
        if window != self.window_ns {
            return Err(format!("window {window} ns differs from configured {} ns", self.window_ns).into());
        }
        if t != self.sim_time_ns {
            return Err(format!("physics time {} ns but window starts at {t} ns", self.sim_time_ns).into());
        }
        for &dt in &self.substeps {
            self.sim.step(dt)?;
        }
        self.sim_time_ns += window;
        let channel_data = self.extract()?;
        Ok(PhysicsUpdate {
            msg_type: MsgType::End,
            time_val: t,
            channel_data,
        }
        .into())
    }
}

/// Runs the physics side of the protocol for the configured duration.
pub fn run_physics_coordinator<P, L>(
    config: &PhysCoordConfig,
    sim: &mut P,
    link: &mut L,
) -> Result<PhysRunSummary, PhysCoordError>
where
    P: PhysicsSimInterface + ?Sized,
    L: PeerLink + ?Sized,
{
    config.fidelity.validate()?;
    let windows = config.windows()?;
    let agents = sim.agent_count();
    let mut driver = PhysicsDriver::new(sim, config.fidelity, config.window_ns, config.substeps_per_window)?;
    let mut peer = SyncPeer::new(Role::PhysicsSide, config.window_ns)
        .map_err(|e| PhysCoordError::Config(e.to_string()))?;
    let outcome = peer.run(link, &mut driver, windows, |_| {});
    if let Err(source) = outcome {
        peer.shutdown(link);
        return Err(PhysCoordError::Sync {
            windows: peer.stats().windows,
            source,
        });
    }
    let stats = peer.stats();
    log::debug!(
        "physics coordinator finished {} windows, mean window {:?}",
        stats.windows,
        stats.mean_window_wall()
    );
    Ok(PhysRunSummary {
        windows: stats.windows,
        agents,
        sim_time_ns: driver.sim_time_ns(),
        extractions: driver.extractions(),
        frames_sent: stats.frames_sent,
        frames_received: stats.frames_received,
        mean_window_wall: stats.mean_window_wall(),
        max_window_wall: stats.max_window_wall(),
    })
}
