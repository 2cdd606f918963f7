//! Capture backends: where application packets enter the co-simulation
//! and where released packets leave it.

use std::collections::{HashMap, VecDeque};
use std::net::Ipv4Addr;
use std::sync::{Arc, Mutex, MutexGuard};

/// Largest payload accepted from an application (IPv4 total length).
pub const MAX_PAYLOAD_LEN: usize = 65_535;

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("no endpoint for {0}")]
    UnknownAddress(Ipv4Addr),
    #[error("capture device: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed packet: {0}")]
    Malformed(String),
}

/// A packet held by the network coordinator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedPacket {
    pub pkt_id: u64,
    pub payload: Vec<u8>,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    /// Start of the window in which the packet was captured.
    pub captured_at: u64,
}

/// A packet as an application handed it over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingress {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub payload: Vec<u8>,
}

pub trait CaptureBackend {
    /// Addresses this backend has endpoints for.
    fn addresses(&self) -> Vec<Ipv4Addr>;
    /// Everything sent since the last poll, in send order.
    fn poll_ingress(&mut self) -> Result<Vec<Ingress>, CaptureError>;
    /// Hands a released packet to the application at `dst`.
    fn deliver(&mut self, src: Ipv4Addr, dst: Ipv4Addr, payload: Vec<u8>) -> Result<(), CaptureError>;
}

impl<B: CaptureBackend + ?Sized> CaptureBackend for &mut B {
    fn addresses(&self) -> Vec<Ipv4Addr> {
        (**self).addresses()
    }

    fn poll_ingress(&mut self) -> Result<Vec<Ingress>, CaptureError> {
        (**self).poll_ingress()
    }

    fn deliver(&mut self, src: Ipv4Addr, dst: Ipv4Addr, payload: Vec<u8>) -> Result<(), CaptureError> {
        (**self).deliver(src, dst, payload)
    }
}

#[derive(Debug, Default)]
struct Shared {
    ingress: VecDeque<Ingress>,
    inboxes: HashMap<Ipv4Addr, VecDeque<(Ipv4Addr, Vec<u8>)>>,
}

/// Virtual endpoints living in this process, one per address.
#[derive(Debug, Clone)]
pub struct InProcessBackend {
    addresses: Vec<Ipv4Addr>,
    shared: Arc<Mutex<Shared>>,
}

fn lock(shared: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    // The queues stay consistent even if a holder panicked mid-push.
    shared.lock().unwrap_or_else(|e| e.into_inner())
}

impl InProcessBackend {
    pub fn new(addresses: impl IntoIterator<Item = Ipv4Addr>) -> Self {
        let addresses: Vec<Ipv4Addr> = addresses.into_iter().collect();
        let shared = Shared {
            ingress: VecDeque::new(),
            inboxes: addresses.iter().map(|&a| (a, VecDeque::new())).collect(),
        };
        InProcessBackend {
            addresses,
            shared: Arc::new(Mutex::new(shared)),
        }
    }

    pub fn endpoint(&self, address: Ipv4Addr) -> Option<Endpoint> {
        self.addresses.contains(&address).then(|| Endpoint {
            address,
            shared: Arc::clone(&self.shared),
        })
    }
}

impl CaptureBackend for InProcessBackend {
    fn addresses(&self) -> Vec<Ipv4Addr> {
        self.addresses.clone()
    }

    fn poll_ingress(&mut self) -> Result<Vec<Ingress>, CaptureError> {
        Ok(lock(&self.shared).ingress.drain(..).collect())
    }

    fn deliver(&mut self, src: Ipv4Addr, dst: Ipv4Addr, payload: Vec<u8>) -> Result<(), CaptureError> {
        lock(&self.shared)
            .inboxes
            .get_mut(&dst)
            .ok_or(CaptureError::UnknownAddress(dst))?
            .push_back((src, payload));
        Ok(())
    }
}

/// An application's handle on its address.
#[derive(Debug, Clone)]
pub struct Endpoint {
    address: Ipv4Addr,
    shared: Arc<Mutex<Shared>>,
}

impl Endpoint {
    pub fn address(&self) -> Ipv4Addr {
        self.address
    }

    /// Queues `payload` for capture. Destination checks happen at capture.
    pub fn send(&self, dst: Ipv4Addr, payload: Vec<u8>) {
        lock(&self.shared).ingress.push_back(Ingress {
            src: self.address,
            dst,
            payload,
        });
    }

    /// Next delivered packet and its source, if any.
    pub fn recv(&self) -> Option<(Ipv4Addr, Vec<u8>)> {
        lock(&self.shared).inboxes.get_mut(&self.address)?.pop_front()
    }

    pub fn pending(&self) -> usize {
        lock(&self.shared)
            .inboxes
            .get(&self.address)
            .map_or(0, VecDeque::len)
    }
}
