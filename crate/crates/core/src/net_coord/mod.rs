//! The network coordinator: captures application packets, submits them to
//! the network simulator one window at a time and releases what it clears.
//!
//! Per window `t`:
//! 1. apply the channel carried by the physics `BEGIN(t)`;
//! 2. submit everything captured before `t` as the manifest;
//! 3. advance the network simulator over `[t, t + W)`;
//! 4. corrupt cleared packets with their BER and deliver them;
//! 5. expire packets held too long;
//! 6. let the application run at `t + W`, then capture what it sent.
//!
//! A packet sent at `t + W` is therefore first simulated in window
//! `t + W` and reaches its destination no earlier than `t + 2W`.

mod ber;
mod capture;
mod tun;

use std::collections::{BTreeMap, HashSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ber::{apply_ber, bit_errors};
pub use capture::{
    CaptureBackend, CaptureError, CapturedPacket, Endpoint, InProcessBackend, Ingress, MAX_PAYLOAD_LEN,
};
#[cfg(feature = "tun")]
pub use tun::TunBackend;
pub use tun::{parse_ipv4_header, Ipv4Header};

use crate::address_map::AddressMap;
use crate::netsim::{NetSimError, NetSimInterface};
use crate::sync::{DriverError, PeerLink, Role, SimDriver, SyncError, SyncPeer};
use crate::wire::{Message, MsgType, NetworkUpdate};

pub const DEFAULT_EXPIRY_WINDOWS: u64 = 30_000;

#[derive(Debug, thiserror::Error)]
pub enum NetCoordError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    NetSim(#[from] NetSimError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("network coordinator aborted after {windows} windows: {source}")]
    Sync {
        windows: u64,
        #[source]
        source: SyncError,
    },
}

#[derive(Debug, Clone)]
pub struct NetCoordConfig {
    pub window_ns: u64,
    pub duration_ns: u64,
    pub agent_address_map: AddressMap,
    pub expiry_windows: u64,
    pub seed: u64,
}

impl NetCoordConfig {
    pub fn windows(&self) -> Result<u64, NetCoordError> {
        if self.window_ns == 0 {
            return Err(NetCoordError::Config("window must be positive".into()));
        }
        if !self.duration_ns.is_multiple_of(self.window_ns) {
            return Err(NetCoordError::Config(format!(
                "duration {} ns is not a multiple of the window {} ns",
                self.duration_ns, self.window_ns
            )));
        }
        Ok(self.duration_ns / self.window_ns)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetCounters {
    pub captured: u64,
    pub captured_bytes: u64,
    /// Sends to unconfigured addresses or with unusable payloads.
    pub rejected: u64,
    pub released: u64,
    pub released_bytes: u64,
    pub expired: u64,
    /// Clearances for packets that had already expired.
    pub late_clearances: u64,
    /// Released packets with at least one flipped bit.
    pub corrupted: u64,
    pub flipped_bits: u64,
}

/// Capture and release window of one delivered packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRecord {
    pub pkt_id: u64,
    pub captured_at: u64,
    /// End of the window in which the packet was cleared.
    pub released_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetRunSummary {
    pub windows: u64,
    pub counters: NetCounters,
    pub latency: Vec<LatencyRecord>,
    /// CRC-32 over (pkt_id, payload) of every released packet in order.
    pub released_digest: u32,
    pub still_held: usize,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub mean_window_wall: Duration,
    pub max_window_wall: Duration,
}

/// Packet bookkeeping independent of transport and simulator.
pub struct NetworkCoordinator {
    addresses: AddressMap,
    window_ns: u64,
    expiry_windows: u64,
    next_pkt_id: u64,
    pending: Vec<CapturedPacket>,
    held: BTreeMap<u64, CapturedPacket>,
    expired: HashSet<u64>,
    rng: ChaCha8Rng,
    counters: NetCounters,
    latency: Vec<LatencyRecord>,
    digest: crc32fast::Hasher,
}

impl NetworkCoordinator {
    pub fn new(addresses: AddressMap, window_ns: u64, expiry_windows: u64, seed: u64) -> Self {
        NetworkCoordinator {
            addresses,
            window_ns,
            expiry_windows,
            next_pkt_id: 0,
            pending: Vec::new(),
            held: BTreeMap::new(),
            expired: HashSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            counters: NetCounters::default(),
            latency: Vec::new(),
            digest: crc32fast::Hasher::new(),
        }
    }

    pub fn counters(&self) -> &NetCounters {
        &self.counters
    }

    pub fn latency(&self) -> &[LatencyRecord] {
        &self.latency
    }

    pub fn held(&self) -> impl Iterator<Item = &CapturedPacket> {
        self.held.values()
    }

    pub fn pending(&self) -> &[CapturedPacket] {
        &self.pending
    }

    pub fn released_digest(&self) -> u32 {
        self.digest.clone().finalize()
    }

    /// Takes everything the backend has, stamped with `window_start`.
    pub fn capture<B: CaptureBackend + ?Sized>(
        &mut self,
        backend: &mut B,
        window_start: u64,
    ) -> Result<usize, NetCoordError> {
        let mut n = 0;
        for ingress in backend.poll_ingress()? {
            if self.capture_one(ingress, window_start).is_some() {
                n += 1;
            }
        }
        Ok(n)
    }

    /// Admits one packet; `None` if it was rejected.
    pub fn capture_one(&mut self, ingress: Ingress, window_start: u64) -> Option<u64> {
        let usable = self.addresses.contains_address(ingress.src)
            && self.addresses.contains_address(ingress.dst)
            && ingress.src != ingress.dst
            && (1..=MAX_PAYLOAD_LEN).contains(&ingress.payload.len());
        if !usable {
            log::debug!(
                "rejecting {} bytes {} -> {}",
                ingress.payload.len(),
                ingress.src,
                ingress.dst
            );
            self.counters.rejected += 1;
            return None;
        }
        let pkt_id = self.next_pkt_id;
        self.next_pkt_id += 1;
        self.counters.captured += 1;
        self.counters.captured_bytes += ingress.payload.len() as u64;
        self.pending.push(CapturedPacket {
            pkt_id,
            payload: ingress.payload,
            src: ingress.src,
            dst: ingress.dst,
            captured_at: window_start,
        });
        Some(pkt_id)
    }

    /// `BEGIN(t)` listing every packet captured since the last manifest.
    /// The packets move from pending to held.
    pub fn build_manifest(&mut self, t: u64) -> NetworkUpdate {
        let mut m = NetworkUpdate::new(MsgType::Begin, t);
        for p in self.pending.drain(..) {
            m.push_packet(p.pkt_id, p.payload.len() as u32, p.src, p.dst);
            self.held.insert(p.pkt_id, p);
        }
        m
    }

    /// Delivers every cleared packet after applying its BER. `now` is the
    /// release time recorded in the latency ledger.
    pub fn release<B: CaptureBackend + ?Sized>(
        &mut self,
        clearances: &NetworkUpdate,
        backend: &mut B,
        now: u64,
    ) -> Result<usize, NetCoordError> {
        if clearances.msg_type != MsgType::End {
            return Err(NetCoordError::Protocol(format!(
                "clearances must be an END, got {:?}",
                clearances.msg_type
            )));
        }
        clearances
            .validate()
            .map_err(|e| NetCoordError::Protocol(e.to_string()))?;
        let mut seen = HashSet::with_capacity(clearances.clearance_len());
        for (k, id) in clearances.clear_pkt_id.iter().enumerate() {
            if !seen.insert(*id) {
                return Err(NetCoordError::Protocol(format!("pkt {id} cleared twice in one window")));
            }
            let known = self.held.get(id).map(|p| (p.src, p.dst));
            match known {
                Some((src, dst)) if (src, dst) != (clearances.clear_src_ip[k], clearances.clear_dst_ip[k]) => {
                    return Err(NetCoordError::Protocol(format!(
                        "pkt {id} cleared as {} -> {} but captured as {src} -> {dst}",
                        clearances.clear_src_ip[k], clearances.clear_dst_ip[k]
                    )))
                }
                Some(_) => {}
                None if self.expired.contains(id) => {}
                None => {
                    return Err(NetCoordError::Protocol(format!(
                        "network simulator cleared pkt {id}, which is not held"
                    )))
                }
            }
        }
        let mut released = 0;
        for (k, id) in clearances.clear_pkt_id.iter().enumerate() {
            let Some(p) = self.held.remove(id) else {
                self.expired.remove(id);
                self.counters.late_clearances += 1;
                continue;
            };
            let out = apply_ber(&p.payload, clearances.ber[k], &mut self.rng);
            let flips = bit_errors(&p.payload, &out);
            if flips > 0 {
                self.counters.corrupted += 1;
                self.counters.flipped_bits += flips;
            }
            self.digest.update(&p.pkt_id.to_le_bytes());
            self.digest.update(&out);
            self.counters.released += 1;
            self.counters.released_bytes += out.len() as u64;
            self.latency.push(LatencyRecord {
                pkt_id: p.pkt_id,
                captured_at: p.captured_at,
                released_at: now,
            });
            backend.deliver(p.src, p.dst, out)?;
            released += 1;
        }
        Ok(released)
    }

    /// Discards held packets captured `expiry_windows` or more windows
    /// before `t`.
    pub fn expire(&mut self, t: u64) -> usize {
        let horizon = self.expiry_windows.saturating_mul(self.window_ns);
        let stale: Vec<u64> = self
            .held
            .values()
            .filter(|p| t.saturating_sub(p.captured_at) >= horizon)
            .map(|p| p.pkt_id)
            .collect();
        for id in &stale {
            self.held.remove(id);
            self.expired.insert(*id);
        }
        self.counters.expired += stale.len() as u64;
        stale.len()
    }
}

/// Traffic generator living behind the capture backend.
pub trait Application {
    /// Called once per window after releases, at simulated time `now_ns`.
    fn on_window_end(&mut self, now_ns: u64);
}

impl Application for () {
    fn on_window_end(&mut self, _now_ns: u64) {}
}

impl<A: Application + ?Sized> Application for &mut A {
    fn on_window_end(&mut self, now_ns: u64) {
        (**self).on_window_end(now_ns)
    }
}

/// [`SimDriver`] for the network side.
pub struct NetworkDriver<'a, N: ?Sized, B: ?Sized, A: ?Sized> {
    pub coordinator: &'a mut NetworkCoordinator,
    pub netsim: &'a mut N,
    pub backend: &'a mut B,
    pub app: &'a mut A,
}

impl<N, B, A> SimDriver for NetworkDriver<'_, N, B, A>
where
    N: NetSimInterface + ?Sized,
    B: CaptureBackend + ?Sized,
    A: Application + ?Sized,
{
    fn begin_message(&mut self, t: u64) -> Result<Message, DriverError> {
        Ok(NetworkUpdate::new(MsgType::Begin, t).into())
    }

    fn simulate(&mut self, t: u64, window: u64, peer_begin: &Message) -> Result<Message, DriverError> {
        let Message::Physics(begin) = peer_begin else {
            return Err(format!("expected PhysicsUpdate BEGIN, got {}", peer_begin.kind()).into());
        };
        if let Some(cd) = begin.channel()? {
            self.netsim.apply_channel(&cd)?;
        }
        let manifest = self.coordinator.build_manifest(t);
        let clearances = self.netsim.advance(t, window, &manifest)?;
        if clearances.msg_type != MsgType::End || clearances.time_val != t {
            return Err(format!(
                "network simulator answered window {t} with {:?}({})",
                clearances.msg_type, clearances.time_val
            )
            .into());
        }
        let end_time = t + window;
        self.coordinator.release(&clearances, self.backend, end_time)?;
        self.coordinator.expire(end_time);
        self.app.on_window_end(end_time);
        self.coordinator.capture(self.backend, t)?;
        // The END reports both what was submitted and what was cleared.
        let mut end = clearances;
        end.pkt_id = manifest.pkt_id;
        end.pkt_lengths = manifest.pkt_lengths;
        end.src_ip = manifest.src_ip;
        end.dst_ip = manifest.dst_ip;
        Ok(end.into())
    }
}

/// Runs the network side of the protocol for the configured duration.
pub fn run_network_coordinator<L, N, B, A>(
    config: &NetCoordConfig,
    link: &mut L,
    netsim: &mut N,
    backend: &mut B,
    app: &mut A,
) -> Result<NetRunSummary, NetCoordError>
where
    L: PeerLink + ?Sized,
    N: NetSimInterface + ?Sized,
    B: CaptureBackend + ?Sized,
    A: Application + ?Sized,
{
    let windows = config.windows()?;
    let missing: Vec<Ipv4Addr> = config
        .agent_address_map
        .addresses()
        .filter(|a| !backend.addresses().contains(a))
        .collect();
    if !missing.is_empty() {
        return Err(NetCoordError::Config(format!(
            "capture backend has no endpoint for {missing:?}"
        )));
    }
    let mut coordinator = NetworkCoordinator::new(
        config.agent_address_map.clone(),
        config.window_ns,
        config.expiry_windows,
        config.seed,
    );
    let mut peer = SyncPeer::new(Role::NetworkSide, config.window_ns)
        .map_err(|e| NetCoordError::Config(e.to_string()))?;
    let outcome = {
        let mut driver = NetworkDriver {
            coordinator: &mut coordinator,
            netsim,
            backend,
            app,
        };
        peer.run(link, &mut driver, windows, |_| {})
    };
    if let Err(source) = outcome {
        peer.shutdown(link);
        return Err(NetCoordError::Sync {
            windows: peer.stats().windows,
            source,
        });
    }
    let stats = peer.stats();
    Ok(NetRunSummary {
        windows: stats.windows,
        counters: coordinator.counters.clone(),
        released_digest: coordinator.released_digest(),
        still_held: coordinator.held.len() + coordinator.pending.len(),
        latency: std::mem::take(&mut coordinator.latency),
        frames_sent: stats.frames_sent,
        frames_received: stats.frames_received,
        mean_window_wall: stats.mean_window_wall(),
        max_window_wall: stats.max_window_wall(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address_map::AgentAddress;

    fn addr(k: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 0, k + 1)
    }

    fn coordinator(expiry: u64) -> (NetworkCoordinator, InProcessBackend) {
        let map = AddressMap::new((0..2).map(|k| AgentAddress {
            agent_id: u32::from(k),
            address: addr(k),
        }))
        .unwrap();
        let backend = InProcessBackend::new(map.addresses());
        (NetworkCoordinator::new(map, 1_000, expiry, 1), backend)
    }

    fn clear(t: u64, ids: &[u64], ber: f64) -> NetworkUpdate {
        let mut m = NetworkUpdate::new(MsgType::End, t);
        for &id in ids {
            m.push_clearance(id, addr(0), addr(1), ber);
        }
        m
    }

    #[test]
    fn ids_start_at_zero_in_send_order() {
        let (mut c, mut b) = coordinator(10);
        let ep = b.endpoint(addr(0)).unwrap();
        ep.send(addr(1), vec![1; 100]);
        ep.send(addr(1), vec![2; 200]);
        ep.send(addr(1), vec![3; 300]);
        c.capture(&mut b, 0).unwrap();
        let m = c.build_manifest(1_000);
        assert_eq!(m.pkt_id, vec![0, 1, 2]);
        assert_eq!(m.pkt_lengths, vec![100, 200, 300]);
        assert_eq!(c.build_manifest(2_000).manifest_len(), 0);
    }

    #[test]
    fn rejects_unconfigured_destination() {
        let (mut c, mut b) = coordinator(10);
        let ep = b.endpoint(addr(0)).unwrap();
        ep.send(Ipv4Addr::new(192, 168, 0, 1), vec![1]);
        ep.send(addr(1), vec![]);
        ep.send(addr(0), vec![1]);
        assert_eq!(c.capture(&mut b, 0).unwrap(), 0);
        assert_eq!(c.counters().rejected, 3);
    }

    #[test]
    fn release_subset() {
        let (mut c, mut b) = coordinator(10);
        let ep = b.endpoint(addr(0)).unwrap();
        let rx = b.endpoint(addr(1)).unwrap();
        for k in 0..3u8 {
            ep.send(addr(1), vec![k; 8]);
        }
        c.capture(&mut b, 0).unwrap();
        c.build_manifest(1_000);
        assert_eq!(c.release(&clear(1_000, &[0, 2], 0.0), &mut b, 2_000).unwrap(), 2);
        assert_eq!(rx.recv(), Some((addr(0), vec![0; 8])));
        assert_eq!(rx.recv(), Some((addr(0), vec![2; 8])));
        assert_eq!(c.held().map(|p| p.pkt_id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn unknown_clearance_is_protocol_error() {
        let (mut c, mut b) = coordinator(10);
        assert!(matches!(
            c.release(&clear(0, &[5], 0.0), &mut b, 1_000),
            Err(NetCoordError::Protocol(_))
        ));
    }

    #[test]
    fn expiry_and_late_clearance() {
        let (mut c, mut b) = coordinator(3);
        b.endpoint(addr(0)).unwrap().send(addr(1), vec![0; 4]);
        c.capture(&mut b, 0).unwrap();
        c.build_manifest(1_000);
        assert_eq!(c.expire(2_000), 0);
        assert_eq!(c.expire(3_000), 1);
        assert_eq!(c.counters().expired, 1);
        assert_eq!(c.release(&clear(3_000, &[0], 0.0), &mut b, 4_000).unwrap(), 0);
        assert_eq!(c.counters().late_clearances, 1);
        assert!(c.release(&clear(4_000, &[0], 0.0), &mut b, 5_000).is_err());
    }

    #[test]
    fn corruption_counted() {
        let (mut c, mut b) = coordinator(10);
        b.endpoint(addr(0)).unwrap().send(addr(1), vec![0; 4]);
        c.capture(&mut b, 0).unwrap();
        c.build_manifest(1_000);
        c.release(&clear(1_000, &[0], 1.0), &mut b, 2_000).unwrap();
        assert_eq!(b.endpoint(addr(1)).unwrap().recv().unwrap().1, vec![0xff; 4]);
        assert_eq!(c.counters().corrupted, 1);
        assert_eq!(c.counters().flipped_bits, 32);
    }
}
