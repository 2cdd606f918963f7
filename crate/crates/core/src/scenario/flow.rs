//! Greedy sliding-window reliable flows over the capture endpoints.
//!
//! Data: `[0][seq u64][payload][crc32]`. ACK: `[1][next expected seq u64][crc32]`.
//! Integers are little-endian; the CRC covers every byte before it. The
//! receiver buffers out-of-order packets, delivers in sequence and answers
//! every intact data packet with a cumulative ACK. The sender retransmits
//! on timeout and on the third duplicate ACK; until everything sent before
//! that loss is acknowledged, each partial ACK resends the next hole.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;

use crate::net_coord::{Application, Endpoint, InProcessBackend};

use super::config::FlowConfig;

const KIND_DATA: u8 = 0;
const KIND_ACK: u8 = 1;
/// Bytes a data packet adds around its payload.
pub const HEADER_LEN: usize = 1 + 8 + 4;
const ACK_LEN: usize = 1 + 8 + 4;
const DUP_ACK_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Packet {
    Data { seq: u64 },
    Ack { next_expected: u64 },
}

fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    body
}

pub fn encode_data(seq: u64, payload: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(payload.len() + HEADER_LEN);
    b.push(KIND_DATA);
    b.extend_from_slice(&seq.to_le_bytes());
    b.extend_from_slice(payload);
    seal(b)
}

pub fn encode_ack(next_expected: u64) -> Vec<u8> {
    let mut b = Vec::with_capacity(ACK_LEN);
    b.push(KIND_ACK);
    b.extend_from_slice(&next_expected.to_le_bytes());
    seal(b)
}

/// `None` if the CRC fails or the framing is wrong.
fn decode(bytes: &[u8]) -> Option<Packet> {
    if bytes.len() < ACK_LEN {
        return None;
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body).to_le_bytes() != crc {
        return None;
    }
    let n = u64::from_le_bytes(body[1..9].try_into().ok()?);
    match body[0] {
        KIND_DATA => Some(Packet::Data { seq: n }),
        KIND_ACK if bytes.len() == ACK_LEN => Some(Packet::Ack { next_expected: n }),
        _ => None,
    }
}

/// Payload content for `seq`; fixed so runs are reproducible.
pub fn payload_for(seq: u64, len: usize) -> Vec<u8> {
    let mut x = seq.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x as u8
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub flow: usize,
    pub seq: u64,
    pub first_sent_ns: u64,
    pub delivered_ns: u64,
    pub bytes: u64,
}

impl DeliveryRecord {
    pub fn delay_ns(&self) -> u64 {
        self.delivered_ns - self.first_sent_ns
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct FlowCounters {
    pub data_sent: u64,
    pub retransmissions: u64,
    pub timeouts: u64,
    pub fast_retransmits: u64,
    /// Payload bytes put on the wire, retransmissions included.
    pub payload_bytes_sent: u64,
    pub acks_sent: u64,
    pub acks_received: u64,
    pub corrupted_data: u64,
    pub corrupted_acks: u64,
    pub duplicate_data: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
}

#[derive(Debug, Clone)]
struct Outstanding {
    first_sent: u64,
    last_sent: u64,
}

/// Sender and receiver state of one flow.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub config: FlowConfig,
    next_seq: u64,
    /// Lowest unacknowledged seq.
    base: u64,
    unacked: BTreeMap<u64, Outstanding>,
    dup_acks: u32,
    /// Set while recovering from a loss: the `next_seq` at detection.
    recover: Option<u64>,
    /// Receiver: next in-order seq and buffered seqs above it.
    expected: u64,
    buffered: BTreeSet<u64>,
    first_sent: HashMap<u64, u64>,
    pub counters: FlowCounters,
}

impl FlowState {
    pub fn new(config: FlowConfig) -> Self {
        FlowState {
            config,
            next_seq: 0,
            base: 0,
            unacked: BTreeMap::new(),
            dup_acks: 0,
            recover: None,
            expected: 0,
            buffered: BTreeSet::new(),
            first_sent: HashMap::new(),
            counters: FlowCounters::default(),
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn unacked(&self) -> usize {
        self.unacked.len()
    }

    fn transmit(&mut self, tx: &Endpoint, seq: u64) {
        let payload = payload_for(seq, self.config.payload_size);
        tx.send(self.config.dst, encode_data(seq, &payload));
        self.counters.data_sent += 1;
        self.counters.payload_bytes_sent += payload.len() as u64;
    }

    fn on_data(&mut self, rx: &Endpoint, flow: usize, seq: u64, now: u64, ledger: &mut Vec<DeliveryRecord>) {
        if seq < self.expected || !self.buffered.insert(seq) {
            self.counters.duplicate_data += 1;
        }
        while self.buffered.remove(&self.expected) {
            let seq = self.expected;
            let first_sent = self.first_sent.get(&seq).copied().unwrap_or(now);
            let bytes = self.config.payload_size as u64;
            ledger.push(DeliveryRecord {
                flow,
                seq,
                first_sent_ns: first_sent,
                delivered_ns: now,
                bytes,
            });
            self.counters.delivered += 1;
            self.counters.delivered_bytes += bytes;
            self.expected += 1;
        }
        rx.send(self.config.src, encode_ack(self.expected));
        self.counters.acks_sent += 1;
    }

    fn on_ack(&mut self, tx: &Endpoint, next_expected: u64, now: u64) {
        self.counters.acks_received += 1;
        if next_expected > self.base {
            let still: BTreeMap<u64, Outstanding> = self.unacked.split_off(&next_expected);
            for seq in self.unacked.keys() {
                self.first_sent.remove(seq);
            }
            self.unacked = still;
            self.base = next_expected;
            self.dup_acks = 0;
            match self.recover {
                Some(r) if next_expected < r => self.retransmit(tx, self.base, now),
                _ => self.recover = None,
            }
        } else if next_expected == self.base && !self.unacked.is_empty() {
            self.dup_acks += 1;
            if self.dup_acks == DUP_ACK_THRESHOLD && self.recover.is_none() {
                self.counters.fast_retransmits += 1;
                self.recover = Some(self.next_seq);
                self.retransmit(tx, self.base, now);
            }
        }
    }

    fn retransmit(&mut self, tx: &Endpoint, seq: u64, now: u64) {
        if let Some(o) = self.unacked.get_mut(&seq) {
            o.last_sent = now;
            self.counters.retransmissions += 1;
            self.transmit(tx, seq);
        }
    }

    fn on_tick(&mut self, tx: &Endpoint, now: u64) {
        let rto = self.config.retransmit_timeout_ns;
        let due: Vec<u64> = self
            .unacked
            .iter()
            .filter(|(_, o)| now.saturating_sub(o.last_sent) >= rto)
            .map(|(s, _)| *s)
            .collect();
        if !due.is_empty() {
            self.recover = Some(self.next_seq);
        }
        for seq in due {
            self.counters.timeouts += 1;
            self.retransmit(tx, seq, now);
        }
        while self.unacked.len() < self.config.arq_window {
            let seq = self.next_seq;
            self.next_seq += 1;
            self.unacked.insert(
                seq,
                Outstanding {
                    first_sent: now,
                    last_sent: now,
                },
            );
            self.first_sent.insert(seq, now);
            self.transmit(tx, seq);
        }
        debug_assert!(self.unacked.values().all(|o| o.first_sent <= o.last_sent));
    }
}

/// Every flow of a scenario as one [`Application`].
pub struct FlowSet {
    flows: Vec<FlowState>,
    endpoints: BTreeMap<Ipv4Addr, Endpoint>,
    ledger: Vec<DeliveryRecord>,
    unattributed_corrupt: u64,
}

impl FlowSet {
    pub fn new(configs: &[FlowConfig], backend: &InProcessBackend) -> Option<Self> {
        let mut endpoints = BTreeMap::new();
        for f in configs {
            for a in [f.src, f.dst] {
                endpoints.insert(a, backend.endpoint(a)?);
            }
        }
        Some(FlowSet {
            flows: configs.iter().cloned().map(FlowState::new).collect(),
            endpoints,
            ledger: Vec::new(),
            unattributed_corrupt: 0,
        })
    }

    pub fn flows(&self) -> &[FlowState] {
        &self.flows
    }

    pub fn ledger(&self) -> &[DeliveryRecord] {
        &self.ledger
    }

    /// Corrupted packets whose sender runs no flow toward the receiver.
    pub fn unattributed_corrupt(&self) -> u64 {
        self.unattributed_corrupt
    }

    pub fn into_parts(self) -> (Vec<FlowState>, Vec<DeliveryRecord>) {
        (self.flows, self.ledger)
    }

    fn find(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Option<usize> {
        self.flows.iter().position(|f| f.config.src == src && f.config.dst == dst)
    }
}

impl Application for FlowSet {
    fn on_window_end(&mut self, now_ns: u64) {
        for (&addr, ep) in &self.endpoints {
            while let Some((from, bytes)) = ep.recv() {
                let as_receiver = self.find(from, addr);
                let as_sender = self.find(addr, from);
                match decode(&bytes) {
                    Some(Packet::Data { seq }) => match as_receiver {
                        Some(k) => self.flows[k].on_data(ep, k, seq, now_ns, &mut self.ledger),
                        None => self.unattributed_corrupt += 1,
                    },
                    Some(Packet::Ack { next_expected }) => match as_sender {
                        Some(k) => {
                            let tx = &self.endpoints[&addr];
                            self.flows[k].on_ack(tx, next_expected, now_ns);
                        }
                        None => self.unattributed_corrupt += 1,
                    },
                    None => match (as_receiver, as_sender, bytes.len()) {
                        (_, Some(k), ACK_LEN) => self.flows[k].counters.corrupted_acks += 1,
                        (Some(k), _, _) => self.flows[k].counters.corrupted_data += 1,
                        (None, Some(k), _) => self.flows[k].counters.corrupted_acks += 1,
                        (None, None, _) => self.unattributed_corrupt += 1,
                    },
                }
            }
        }
        for flow in &mut self.flows {
            let tx = &self.endpoints[&flow.config.src];
            flow.on_tick(tx, now_ns);
        }
    }
}
