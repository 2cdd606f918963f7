//! Sliding-window lockstep between the physics side and the network side.
//!
//! Both peers start at `t = 0` with the same window `W` and announce
//! `BEGIN(0)`. Each window then runs:
//!
//! 1. wait for the peer's `BEGIN(t)`;
//! 2. simulate the local side over `[t, t + W)`;
//! 3. send `END(t)` carrying the local payload;
//! 4. wait for the peer's `END(t)`;
//! 5. advance `t` by `W` and send `BEGIN(t)`.
//!
//! Neither peer can start window `t + W` before the other has reported the
//! end of window `t`, so both simulators share one clock.

mod link;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub use link::{InProcessLink, LinkError, PeerLink, TcpLink};

use crate::wire::{Message, MsgType};

/// Default synchronization window, 1 ms.
pub const DEFAULT_WINDOW_NS: u64 = 1_000_000;

pub type DriverError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum SyncError {
    #[error("desync on {msg_type:?}: expected time_val {expected}, got {got}")]
    Desync {
        msg_type: MsgType,
        expected: u64,
        got: u64,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("`{op}` not allowed in state {state:?}")]
    State { op: &'static str, state: PeerState },
    #[error("transport error: {0}")]
    Transport(#[from] LinkError),
    #[error("simulator driver failed: {0}")]
    Driver(DriverError),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Sends `PhysicsUpdate`, receives `NetworkUpdate`.
    PhysicsSide,
    /// Sends `NetworkUpdate`, receives `PhysicsUpdate`.
    NetworkSide,
}

impl Role {
    fn sends(self, msg: &Message) -> bool {
        matches!(
            (self, msg),
            (Role::PhysicsSide, Message::Physics(_)) | (Role::NetworkSide, Message::Network(_))
        )
    }

    fn receives(self, msg: &Message) -> bool {
        !self.sends(msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeerState {
    Init,
    AwaitPeerBegin,
    LocalSimulating,
    AwaitPeerEnd,
    Done,
}

/// The local simulator as seen by the synchronization protocol.
pub trait SimDriver {
    /// Body of the `BEGIN` announcing window `t`. Header fields are
    /// overwritten by the peer.
    fn begin_message(&mut self, t: u64) -> Result<Message, DriverError>;

    /// Advances the local simulator over `[t, t + window)` and returns the
    /// body of `END(t)`. `peer_begin` is the peer's `BEGIN(t)`.
    fn simulate(&mut self, t: u64, window: u64, peer_begin: &Message)
        -> Result<Message, DriverError>;
}

#[derive(Debug, Clone)]
pub struct WindowReport {
    pub window_start: u64,
    /// The peer's `END(window_start)`.
    pub peer_end: Message,
    pub wall: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct SyncStats {
    pub windows: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub window_wall: Vec<Duration>,
}

impl SyncStats {
    pub fn mean_window_wall(&self) -> Duration {
        if self.window_wall.is_empty() {
            return Duration::ZERO;
        }
        self.window_wall.iter().sum::<Duration>() / self.window_wall.len() as u32
    }

    pub fn max_window_wall(&self) -> Duration {
        self.window_wall.iter().copied().max().unwrap_or_default()
    }
}

/// Requests a graceful stop from another thread. The peer finishes the
/// window in progress before closing its link.
#[derive(Debug, Clone, Default)]
pub struct ShutdownHandle(Arc<AtomicBool>);

impl ShutdownHandle {
    pub fn request(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_requested(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
pub struct SyncPeer {
    role: Role,
    t: u64,
    window: u64,
    state: PeerState,
    stats: SyncStats,
    shutdown: ShutdownHandle,
}

impl SyncPeer {
    pub fn new(role: Role, window_ns: u64) -> Result<Self, SyncError> {
        if window_ns == 0 {
            return Err(SyncError::Config("window size must be positive".into()));
        }
        Ok(SyncPeer {
            role,
            t: 0,
            window: window_ns,
            state: PeerState::Init,
            stats: SyncStats::default(),
            shutdown: ShutdownHandle::default(),
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Start of the current window in ns.
    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn state(&self) -> PeerState {
        self.state
    }

    pub fn stats(&self) -> &SyncStats {
        &self.stats
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        self.shutdown.clone()
    }

    /// Sends `BEGIN(0)`.
    pub fn start<L, D>(&mut self, link: &mut L, driver: &mut D) -> Result<(), SyncError>
    where
        L: PeerLink + ?Sized,
        D: SimDriver + ?Sized,
    {
        if self.state != PeerState::Init {
            return Err(SyncError::State {
                op: "start",
                state: self.state,
            });
        }
        let begin = driver.begin_message(0).map_err(SyncError::Driver)?;
        self.send(link, begin, MsgType::Begin, 0)?;
        self.state = PeerState::AwaitPeerBegin;
        Ok(())
    }

    /// Runs one full window and returns the peer's `END` for it.
    pub fn run_window<L, D>(&mut self, link: &mut L, driver: &mut D) -> Result<WindowReport, SyncError>
    where
        L: PeerLink + ?Sized,
        D: SimDriver + ?Sized,
    {
        if self.state != PeerState::AwaitPeerBegin {
            return Err(SyncError::State {
                op: "run_window",
                state: self.state,
            });
        }
        let started = Instant::now();
        let t = self.t;
        let next = t
            .checked_add(self.window)
            .ok_or_else(|| SyncError::Config("simulation time overflows u64".into()))?;

        let peer_begin = self.recv_expect(link, MsgType::Begin, t)?;

        self.state = PeerState::LocalSimulating;
        let end = driver
            .simulate(t, self.window, &peer_begin)
            .map_err(SyncError::Driver)?;
        self.send(link, end, MsgType::End, t)?;

        self.state = PeerState::AwaitPeerEnd;
        let peer_end = self.recv_expect(link, MsgType::End, t)?;

        self.t = next;
        let begin = driver.begin_message(next).map_err(SyncError::Driver)?;
        self.send(link, begin, MsgType::Begin, next)?;
        self.state = PeerState::AwaitPeerBegin;

        let wall = started.elapsed();
        self.stats.windows += 1;
        self.stats.window_wall.push(wall);
        Ok(WindowReport {
            window_start: t,
            peer_end,
            wall,
        })
    }

    /// Closes the link. Idempotent.
    pub fn shutdown<L: PeerLink + ?Sized>(&mut self, link: &mut L) {
        if self.state != PeerState::Done {
            link.close();
            self.state = PeerState::Done;
        }
    }

    /// Starts if needed, runs up to `windows` windows (fewer if a shutdown
    /// is requested) and shuts down. `on_window` sees every report.
    pub fn run<L, D>(
        &mut self,
        link: &mut L,
        driver: &mut D,
        windows: u64,
        mut on_window: impl FnMut(&WindowReport),
    ) -> Result<(), SyncError>
    where
        L: PeerLink + ?Sized,
        D: SimDriver + ?Sized,
    {
        if self.state == PeerState::Init {
            self.start(link, driver)?;
        }
        let target = self.stats.windows + windows;
        while self.state == PeerState::AwaitPeerBegin
            && self.stats.windows < target
            && !self.shutdown.is_requested()
        {
            let report = self.run_window(link, driver)?;
            on_window(&report);
        }
        self.shutdown(link);
        Ok(())
    }

    fn send<L: PeerLink + ?Sized>(
        &mut self,
        link: &mut L,
        mut msg: Message,
        msg_type: MsgType,
        t: u64,
    ) -> Result<(), SyncError> {
        if !self.role.sends(&msg) {
            return Err(SyncError::Protocol(format!(
                "{:?} peer cannot send a {}",
                self.role,
                msg.kind()
            )));
        }
        msg.set_header(msg_type, t);
        link.send(&msg)?;
        self.stats.frames_sent += 1;
        Ok(())
    }

    fn recv_expect<L: PeerLink + ?Sized>(
        &mut self,
        link: &mut L,
        msg_type: MsgType,
        t: u64,
    ) -> Result<Message, SyncError> {
        let msg = link.recv()?;
        self.stats.frames_received += 1;
        if !self.role.receives(&msg) {
            return Err(SyncError::Protocol(format!(
                "{:?} peer received its own message kind {}",
                self.role,
                msg.kind()
            )));
        }
        if msg.msg_type() != msg_type {
            return Err(SyncError::Protocol(format!(
                "expected {msg_type:?}({t}), received {:?}({})",
                msg.msg_type(),
                msg.time_val()
            )));
        }
        if msg.time_val() != t {
            return Err(SyncError::Desync {
                msg_type,
                expected: t,
                got: msg.time_val(),
            });
        }
        Ok(msg)
    }
}
