//! TUN capture: one point-to-point interface per configured address,
//! carrying raw IPv4 packets.
//!
//! The device backend needs the `tun` feature and CAP_NET_ADMIN. The
//! interfaces are created but not addressed or routed; do that with the
//! usual `ip addr`/`ip route` commands before starting a run.

use std::net::Ipv4Addr;

use super::capture::CaptureError;

/// Addresses and total length from an IPv4 header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub total_len: u16,
    pub header_len: u8,
}

pub fn parse_ipv4_header(packet: &[u8]) -> Result<Ipv4Header, CaptureError> {
    let bad = |why: String| Err(CaptureError::Malformed(why));
    if packet.len() < 20 {
        return bad(format!("{} bytes is shorter than an IPv4 header", packet.len()));
    }
    let version = packet[0] >> 4;
    if version != 4 {
        return bad(format!("IP version {version}"));
    }
    let header_len = (packet[0] & 0x0f) * 4;
    if header_len < 20 || usize::from(header_len) > packet.len() {
        return bad(format!("header length {header_len}"));
    }
    let total_len = u16::from_be_bytes([packet[2], packet[3]]);
    if usize::from(total_len) < usize::from(header_len) || usize::from(total_len) > packet.len() {
        return bad(format!("total length {total_len} for a {}-byte packet", packet.len()));
    }
    let addr = |at: usize| Ipv4Addr::new(packet[at], packet[at + 1], packet[at + 2], packet[at + 3]);
    Ok(Ipv4Header {
        src: addr(12),
        dst: addr(16),
        total_len,
        header_len,
    })
}

#[cfg(feature = "tun")]
pub use device::TunBackend;

#[cfg(feature = "tun")]
mod device {
    use std::io::ErrorKind;
    use std::net::Ipv4Addr;

    use tun_tap::{Iface, Mode};

    use super::parse_ipv4_header;
    use crate::net_coord::capture::{CaptureBackend, CaptureError, Ingress};

    pub struct TunBackend {
        ifaces: Vec<(Ipv4Addr, Iface)>,
        buf: Vec<u8>,
        malformed: u64,
    }

    impl TunBackend {
        /// Opens interfaces `{prefix}0`, `{prefix}1`, ... in address order.
        pub fn open(addresses: &[Ipv4Addr], prefix: &str) -> Result<Self, CaptureError> {
            let mut ifaces = Vec::with_capacity(addresses.len());
            for (k, &addr) in addresses.iter().enumerate() {
                let iface = Iface::without_packet_info(&format!("{prefix}{k}"), Mode::Tun)?;
                iface.set_non_blocking()?;
                log::info!("opened {} for {addr}", iface.name());
                ifaces.push((addr, iface));
            }
            Ok(TunBackend {
                ifaces,
                buf: vec![0; 65_535],
                malformed: 0,
            })
        }

        /// Frames read from a device that were not IPv4.
        pub fn malformed(&self) -> u64 {
            self.malformed
        }
    }

    impl CaptureBackend for TunBackend {
        fn addresses(&self) -> Vec<Ipv4Addr> {
            self.ifaces.iter().map(|(a, _)| *a).collect()
        }

        fn poll_ingress(&mut self) -> Result<Vec<Ingress>, CaptureError> {
            let mut out = Vec::new();
            for (_, iface) in &self.ifaces {
                loop {
                    let n = match iface.recv(&mut self.buf) {
                        Ok(n) => n,
                        Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                        Err(e) => return Err(e.into()),
                    };
                    let packet = &self.buf[..n];
                    match parse_ipv4_header(packet) {
                        Ok(h) => out.push(Ingress {
                            src: h.src,
                            dst: h.dst,
                            payload: packet[..usize::from(h.total_len)].to_vec(),
                        }),
                        Err(e) => {
                            log::debug!("dropping frame from {}: {e}", iface.name());
                            self.malformed += 1;
                        }
                    }
                }
            }
            Ok(out)
        }

        fn deliver(&mut self, _src: Ipv4Addr, dst: Ipv4Addr, payload: Vec<u8>) -> Result<(), CaptureError> {
            let (_, iface) = self
                .ifaces
                .iter()
                .find(|(a, _)| *a == dst)
                .ok_or(CaptureError::UnknownAddress(dst))?;
            iface.send(&payload)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(src: [u8; 4], dst: [u8; 4], total: u16) -> Vec<u8> {
        let mut p = vec![0u8; usize::from(total)];
        p[0] = 0x45;
        p[2..4].copy_from_slice(&total.to_be_bytes());
        p[9] = 17;
        p[12..16].copy_from_slice(&src);
        p[16..20].copy_from_slice(&dst);
        p
    }

    #[test]
    fn parses_addresses() {
        let h = parse_ipv4_header(&header([10, 0, 0, 1], [10, 0, 0, 2], 28)).unwrap();
        assert_eq!(h.src, Ipv4Addr::new(10, 0, 0, 1));
        assert_eq!(h.dst, Ipv4Addr::new(10, 0, 0, 2));
        assert_eq!((h.total_len, h.header_len), (28, 20));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_ipv4_header(&[0x45; 10]).is_err());
        let mut p = header([1, 1, 1, 1], [2, 2, 2, 2], 20);
        p[0] = 0x65;
        assert!(parse_ipv4_header(&p).is_err());
        let mut p = header([1, 1, 1, 1], [2, 2, 2, 2], 20);
        p[3] = 40;
        assert!(parse_ipv4_header(&p).is_err());
        let mut p = header([1, 1, 1, 1], [2, 2, 2, 2], 20);
        p[0] = 0x44;
        assert!(parse_ipv4_header(&p).is_err());
    }
}
