//! Reference network simulator and the interface network simulators
//! implement toward the network coordinator.
//!
//! All nodes share one medium that carries a single transmission at a
//! time. Waiting packets are served oldest first (enqueue time, then
//! pkt_id); a packet whose link is down is passed over and keeps waiting.
//! Link state is sampled when a transmission starts and holds until it
//! ends, even across a window boundary.

mod radio;
mod socket;

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

pub use radio::{LinkState, McsEntry, RadioParams, DEFAULT_MCS_TABLE, MAX_BER, MIN_BER};
pub use socket::{serve_netsim, SocketNetSim};

use crate::address_map::AddressMap;
use crate::physics::geometry::distance;
use crate::sync::LinkError;
use crate::wire::{ChannelData, MsgType, NetworkUpdate, WireError};

#[derive(Debug, thiserror::Error)]
pub enum NetSimError {
    #[error("invalid radio parameters: {0}")]
    InvalidParams(String),
    #[error("malformed channel data: {0}")]
    MalformedChannel(#[from] WireError),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("network simulator transport: {0}")]
    Transport(#[from] LinkError),
    #[error("network simulator protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MediumEventKind {
    TxStart,
    TxEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MediumEvent {
    pub time: u64,
    pub kind: MediumEventKind,
    pub pkt_id: u64,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
}

/// What the network coordinator needs from a network simulator.
pub trait NetSimInterface {
    fn apply_channel(&mut self, cd: &ChannelData) -> Result<(), NetSimError>;

    /// Advances over `[window_start, window_start + window)` with the
    /// packets listed in `manifest` (a `BEGIN` stamped `window_start`) and
    /// returns the `END` carrying this window's clearances.
    fn advance(
        &mut self,
        window_start: u64,
        window: u64,
        manifest: &NetworkUpdate,
    ) -> Result<NetworkUpdate, NetSimError>;
}

impl<T: NetSimInterface + ?Sized> NetSimInterface for Box<T> {
    fn apply_channel(&mut self, cd: &ChannelData) -> Result<(), NetSimError> {
        (**self).apply_channel(cd)
    }

    fn advance(&mut self, window_start: u64, window: u64, manifest: &NetworkUpdate) -> Result<NetworkUpdate, NetSimError> {
        (**self).advance(window_start, window, manifest)
    }
}

#[derive(Debug, Clone)]
struct Packet {
    id: u64,
    len: u32,
    src: Ipv4Addr,
    dst: Ipv4Addr,
    src_node: u32,
    dst_node: Option<u32>,
}

#[derive(Debug, Clone)]
struct InFlight {
    packet: Packet,
    end: u64,
    ber: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetSimCounters {
    pub enqueued: u64,
    pub dropped: u64,
    pub cleared: u64,
}

#[derive(Debug, Clone)]
pub struct ReferenceNetSim {
    params: RadioParams,
    addresses: AddressMap,
    /// Keyed by `(min, max)` agent id.
    links: HashMap<(u32, u32), LinkState>,
    /// Waiting packets by `(enqueue time, pkt_id)`.
    waiting: BTreeMap<(u64, u64), Packet>,
    waiting_per_node: HashMap<u32, usize>,
    in_flight: Option<InFlight>,
    medium_free_at: u64,
    /// End of the last advanced window.
    clock: u64,
    counters: NetSimCounters,
    dropped_ids: Vec<u64>,
    event_log: Option<Vec<MediumEvent>>,
}

impl ReferenceNetSim {
    pub fn new(params: RadioParams, addresses: AddressMap) -> Result<Self, NetSimError> {
        params.validate()?;
        Ok(ReferenceNetSim {
            params,
            addresses,
            links: HashMap::new(),
            waiting: BTreeMap::new(),
            waiting_per_node: HashMap::new(),
            in_flight: None,
            medium_free_at: 0,
            clock: 0,
            counters: NetSimCounters::default(),
            dropped_ids: Vec::new(),
            event_log: None,
        })
    }

    /// Starts recording every TX_START/TX_END.
    pub fn with_event_log(mut self) -> Self {
        self.event_log = Some(Vec::new());
        self
    }

    pub fn take_events(&mut self) -> Vec<MediumEvent> {
        self.event_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn params(&self) -> &RadioParams {
        &self.params
    }

    pub fn counters(&self) -> &NetSimCounters {
        &self.counters
    }

    pub fn dropped_ids(&self) -> &[u64] {
        &self.dropped_ids
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn in_flight_id(&self) -> Option<u64> {
        self.in_flight.as_ref().map(|f| f.packet.id)
    }

    /// Current state of the link between two agents; `None` if the last
    /// snapshot did not describe the pair.
    pub fn link_state(&self, a: u32, b: u32) -> Option<&LinkState> {
        self.links.get(&(a.min(b), a.max(b)))
    }

    /// Link state between two addresses as the medium would see it.
    pub fn link_between(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Option<LinkState> {
        let a = self.addresses.agent(src)?;
        let b = self.addresses.agent(dst)?;
        Some(self.current_link(a, Some(b)))
    }

    /// Applies a channel snapshot, replacing every link state.
    pub fn apply_channel_update(&mut self, cd: &ChannelData) -> Result<(), NetSimError> {
        cd.validate()?;
        let mut links = HashMap::with_capacity(cd.path_details.len());
        for details in &cd.path_details {
            let (a, b) = details.ids;
            let key = (a.min(b), a.max(b));
            let d = distance(cd.node_list[a as usize].position, cd.node_list[b as usize].position);
            let state = if details.los {
                self.params.link_state(key, d, 0.0)
            } else {
                match details.path(0) {
                    Some(hops) => {
                        let walls: f64 = hops.iter().map(|h| h.loss_db).sum();
                        self.params.link_state(key, d, walls)
                    }
                    // NLOS with no path at all: out of range.
                    None => LinkState::down(key, d),
                }
            };
            links.insert(key, state);
        }
        self.links = links;
        Ok(())
    }

    fn current_link(&self, src: u32, dst: Option<u32>) -> LinkState {
        match dst {
            Some(dst) if dst != src => self
                .links
                .get(&(src.min(dst), src.max(dst)))
                .copied()
                .unwrap_or_else(|| LinkState::down((src.min(dst), src.max(dst)), f64::NAN)),
            _ => LinkState::down((src, src), f64::NAN),
        }
    }

    fn log(&mut self, time: u64, kind: MediumEventKind, p: &Packet) {
        if let Some(log) = &mut self.event_log {
            log.push(MediumEvent {
                time,
                kind,
                pkt_id: p.id,
                src: p.src,
                dst: p.dst,
            });
        }
    }

    fn enqueue(&mut self, window_start: u64, manifest: &NetworkUpdate) -> Result<(), NetSimError> {
        // Resolve everything first so a bad manifest leaves no trace.
        let mut packets = Vec::with_capacity(manifest.manifest_len());
        for k in 0..manifest.manifest_len() {
            let (id, len, src, dst) = (
                manifest.pkt_id[k],
                manifest.pkt_lengths[k],
                manifest.src_ip[k],
                manifest.dst_ip[k],
            );
            let src_node = self.addresses.agent(src).ok_or_else(|| {
                NetSimError::MalformedManifest(format!("pkt {id}: source {src} is not a simulated node"))
            })?;
            if len == 0 {
                return Err(NetSimError::MalformedManifest(format!("pkt {id}: zero length")));
            }
            if self.waiting.keys().any(|&(_, w)| w == id) || self.in_flight_id() == Some(id) {
                return Err(NetSimError::MalformedManifest(format!("pkt {id} submitted twice")));
            }
            packets.push(Packet {
                id,
                len,
                src,
                dst,
                src_node,
                dst_node: self.addresses.agent(dst),
            });
        }
        for p in packets {
            let waiting = self.waiting_per_node.entry(p.src_node).or_default();
            if *waiting >= self.params.queue_capacity {
                self.counters.dropped += 1;
                self.dropped_ids.push(p.id);
                continue;
            }
            *waiting += 1;
            self.counters.enqueued += 1;
            self.waiting.insert((window_start, p.id), p);
        }
        Ok(())
    }

    fn clear(&mut self, out: &mut NetworkUpdate, flight: InFlight) {
        self.log(flight.end, MediumEventKind::TxEnd, &flight.packet);
        self.counters.cleared += 1;
        out.push_clearance(flight.packet.id, flight.packet.src, flight.packet.dst, flight.ber);
    }

    /// Runs the medium over one window.
    pub fn advance_window(
        &mut self,
        window_start: u64,
        window: u64,
        manifest: &NetworkUpdate,
    ) -> Result<NetworkUpdate, NetSimError> {
        if manifest.msg_type != MsgType::Begin || manifest.time_val != window_start {
            return Err(NetSimError::MalformedManifest(format!(
                "expected BEGIN({window_start}), got {:?}({})",
                manifest.msg_type, manifest.time_val
            )));
        }
        manifest.validate()?;
        if window_start < self.clock {
            return Err(NetSimError::MalformedManifest(format!(
                "window {window_start} starts before the end of the previous window {}",
                self.clock
            )));
        }
        let mut out = NetworkUpdate::new(MsgType::End, window_start);
        if window == 0 {
            if manifest.manifest_len() > 0 {
                return Err(NetSimError::MalformedManifest(
                    "packets submitted to an empty window".into(),
                ));
            }
            return Ok(out);
        }
        let window_end = window_start
            .checked_add(window)
            .ok_or_else(|| NetSimError::MalformedManifest("window end overflows".into()))?;
        self.enqueue(window_start, manifest)?;

        if let Some(flight) = self.in_flight.take() {
            if flight.end <= window_end {
                self.clear(&mut out, flight);
            } else {
                self.in_flight = Some(flight);
            }
        }
        while self.in_flight.is_none() {
            let now = self.medium_free_at.max(window_start);
            if now >= window_end {
                break;
            }
            let next = self.waiting.iter().find_map(|(key, p)| {
                let link = self.current_link(p.src_node, p.dst_node);
                link.phy_rate_bps.map(|rate| (*key, rate, link.ber))
            });
            let Some((key, rate, ber)) = next else { break };
            let packet = self.waiting.remove(&key).expect("key just found");
            if let Some(n) = self.waiting_per_node.get_mut(&packet.src_node) {
                *n -= 1;
            }
            let end = now + self.params.service_time_ns(packet.len, rate);
            self.log(now, MediumEventKind::TxStart, &packet);
            self.medium_free_at = end;
            let flight = InFlight { packet, end, ber };
            if end <= window_end {
                self.clear(&mut out, flight);
            } else {
                self.in_flight = Some(flight);
            }
        }
        self.clock = window_end;
        Ok(out)
    }
}

impl NetSimInterface for ReferenceNetSim {
    fn apply_channel(&mut self, cd: &ChannelData) -> Result<(), NetSimError> {
        self.apply_channel_update(cd)
    }

    fn advance(&mut self, window_start: u64, window: u64, manifest: &NetworkUpdate) -> Result<NetworkUpdate, NetSimError> {
        self.advance_window(window_start, window, manifest)
    }
}
