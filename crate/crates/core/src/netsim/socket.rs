//! Network simulator behind a [`PeerLink`].
//!
//! The client forwards each channel snapshot as a `PhysicsUpdate` (no
//! reply) and each manifest as a `NetworkUpdate{BEGIN}`; the server
//! answers every manifest with the window's `NetworkUpdate{END}`. The
//! window length is not on the wire, so both ends are configured with it.

use super::{NetSimError, NetSimInterface};
use crate::sync::{LinkError, PeerLink};
use crate::wire::{ChannelData, Message, MsgType, NetworkUpdate, PhysicsUpdate};

pub struct SocketNetSim<L> {
    link: L,
    window_ns: u64,
    next_window: u64,
}

impl<L: PeerLink> SocketNetSim<L> {
    pub fn new(link: L, window_ns: u64) -> Self {
        SocketNetSim {
            link,
            window_ns,
            next_window: 0,
        }
    }

    pub fn into_link(self) -> L {
        self.link
    }
}

impl<L: PeerLink> NetSimInterface for SocketNetSim<L> {
    fn apply_channel(&mut self, cd: &ChannelData) -> Result<(), NetSimError> {
        let msg = PhysicsUpdate::with_channel(MsgType::Begin, self.next_window, cd)?;
        self.link.send(&msg.into())?;
        Ok(())
    }

    fn advance(&mut self, window_start: u64, window: u64, manifest: &NetworkUpdate) -> Result<NetworkUpdate, NetSimError> {
        if window != self.window_ns {
            return Err(NetSimError::Protocol(format!(
                "remote simulator runs {} ns windows, asked for {window} ns",
                self.window_ns
            )));
        }
        if manifest.msg_type != MsgType::Begin || manifest.time_val != window_start {
            return Err(NetSimError::MalformedManifest(format!(
                "expected BEGIN({window_start}), got {:?}({})",
                manifest.msg_type, manifest.time_val
            )));
        }
        self.link.send(&manifest.clone().into())?;
        let reply = match self.link.recv()? {
            Message::Network(n) => n,
            other => {
                return Err(NetSimError::Protocol(format!(
                    "expected NetworkUpdate reply, got {}",
                    other.kind()
                )))
            }
        };
        if reply.msg_type != MsgType::End || reply.time_val != window_start {
            return Err(NetSimError::Protocol(format!(
                "expected END({window_start}), got {:?}({})",
                reply.msg_type, reply.time_val
            )));
        }
        self.next_window = window_start + window;
        Ok(reply)
    }
}

/// Serves `sim` over `link` with a fixed window until the client closes it.
pub fn serve_netsim<L: PeerLink, S: NetSimInterface + ?Sized>(
    mut link: L,
    sim: &mut S,
    window_ns: u64,
) -> Result<(), NetSimError> {
    loop {
        match link.recv() {
            Ok(Message::Physics(p)) => {
                let cd = p.channel()?.unwrap_or_default();
                sim.apply_channel(&cd)?;
            }
            Ok(Message::Network(m)) if m.msg_type == MsgType::Begin => {
                let reply = sim.advance(m.time_val, window_ns, &m)?;
                link.send(&reply.into())?;
            }
            Ok(Message::Network(m)) => {
                return Err(NetSimError::Protocol(format!(
                    "unexpected NetworkUpdate END({})",
                    m.time_val
                )))
            }
            Err(LinkError::Closed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
}
