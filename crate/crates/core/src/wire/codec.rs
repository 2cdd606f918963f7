use std::net::Ipv4Addr;

use super::{
    ChannelData, HopPoint, Message, MsgType, NetworkUpdate, PathDetails, PhysicsUpdate, Pose,
    WireError,
};

pub const MAGIC: &[u8; 4] = b"RNS1";
pub const TAG_PHYSICS_UPDATE: u8 = 0x00;
pub const TAG_NETWORK_UPDATE: u8 = 0x01;
/// Magic, tag and payload length.
pub const FRAME_HEADER_LEN: usize = 9;
pub const MAX_FRAME_PAYLOAD: usize = 16 * 1024 * 1024;

/// Result of [`decode_frame`] on a possibly incomplete buffer.
#[derive(Debug, PartialEq)]
pub enum Decoded<'a> {
    /// A whole frame was decoded; the slice holds the bytes after it.
    Frame(Message, &'a [u8]),
    /// The buffer holds a valid frame prefix; at least this many more bytes
    /// are required.
    NeedMore(usize),
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, WireError> {
    msg.validate()?;
    let mut w = Writer::default();
    let tag = match msg {
        Message::Physics(m) => {
            write_physics(&mut w, m);
            TAG_PHYSICS_UPDATE
        }
        Message::Network(m) => {
            write_network(&mut w, m);
            TAG_NETWORK_UPDATE
        }
    };
    let payload = w.buf;
    if payload.len() > MAX_FRAME_PAYLOAD {
        return Err(WireError::FrameTooLarge {
            len: payload.len(),
            cap: MAX_FRAME_PAYLOAD,
        });
    }
    let mut frame = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    frame.extend_from_slice(MAGIC);
    frame.push(tag);
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Decoded<'_>, WireError> {
    let magic_avail = bytes.len().min(MAGIC.len());
    if bytes[..magic_avail] != MAGIC[..magic_avail] {
        let mut got = [0u8; 4];
        got[..magic_avail].copy_from_slice(&bytes[..magic_avail]);
        return Err(WireError::BadMagic(got));
    }
    if let Some(&tag) = bytes.get(4) {
        if tag != TAG_PHYSICS_UPDATE && tag != TAG_NETWORK_UPDATE {
            return Err(WireError::UnknownTag(tag));
        }
    }
    if bytes.len() < FRAME_HEADER_LEN {
        return Ok(Decoded::NeedMore(FRAME_HEADER_LEN - bytes.len()));
    }
    let len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    if len > MAX_FRAME_PAYLOAD {
        return Err(WireError::FrameTooLarge {
            len,
            cap: MAX_FRAME_PAYLOAD,
        });
    }
    let total = FRAME_HEADER_LEN + len;
    if bytes.len() < total {
        return Ok(Decoded::NeedMore(total - bytes.len()));
    }
    let mut r = Reader::new(&bytes[FRAME_HEADER_LEN..total]);
    let msg = match bytes[4] {
        TAG_PHYSICS_UPDATE => Message::Physics(read_physics(&mut r)?),
        _ => Message::Network(read_network(&mut r)?),
    };
    r.finish("payload")?;
    msg.validate()?;
    Ok(Decoded::Frame(msg, &bytes[total..]))
}

pub fn encode_channel_data(cd: &ChannelData) -> Result<Vec<u8>, WireError> {
    cd.validate()?;
    let mut w = Writer::default();
    w.u32(cd.node_list.len() as u32);
    for pose in &cd.node_list {
        for v in pose.position.iter().chain(pose.orientation.iter()) {
            w.f64(*v);
        }
    }
    w.u32(cd.path_details.len() as u32);
    for d in &cd.path_details {
        w.u32(d.ids.0);
        w.u32(d.ids.1);
        w.u8(u8::from(d.los));
        w.u32(d.num_hops.len() as u32);
        for &n in &d.num_hops {
            w.u32(n);
        }
        w.u32(d.hop_points.len() as u32);
        for h in &d.hop_points {
            w.f64(h.x);
            w.f64(h.y);
            w.f64(h.z);
            w.f64(h.loss_db);
        }
    }
    Ok(w.buf)
}

pub fn decode_channel_data(bytes: &[u8]) -> Result<ChannelData, WireError> {
    let mut r = Reader::new(bytes);
    let agents = r.count("node_list", 56)?;
    let mut node_list = Vec::with_capacity(agents);
    for _ in 0..agents {
        let mut v = [0.0; 7];
        for slot in &mut v {
            *slot = r.f64("node_list")?;
        }
        node_list.push(Pose {
            position: [v[0], v[1], v[2]],
            orientation: [v[3], v[4], v[5], v[6]],
        });
    }
    let paths = r.count("path_details", 17)?;
    let mut path_details = Vec::with_capacity(paths);
    for _ in 0..paths {
        let ids = (r.u32("path_details.ids")?, r.u32("path_details.ids")?);
        let los = match r.u8("path_details.los")? {
            0 => false,
            1 => true,
            other => {
                return Err(WireError::malformed(
                    "path_details.los",
                    format!("boolean byte {other}"),
                ))
            }
        };
        let n_paths = r.count("path_details.num_hops", 4)?;
        let num_hops = (0..n_paths)
            .map(|_| r.u32("path_details.num_hops"))
            .collect::<Result<Vec<_>, _>>()?;
        let n_hops = r.count("path_details.hop_points", 32)?;
        let mut hop_points = Vec::with_capacity(n_hops);
        for _ in 0..n_hops {
            hop_points.push(HopPoint {
                x: r.f64("path_details.hop_points")?,
                y: r.f64("path_details.hop_points")?,
                z: r.f64("path_details.hop_points")?,
                loss_db: r.f64("path_details.hop_points")?,
            });
        }
        path_details.push(PathDetails {
            ids,
            los,
            num_hops,
            hop_points,
        });
    }
    r.finish("channel_data")?;
    let cd = ChannelData {
        node_list,
        path_details,
    };
    cd.validate()?;
    Ok(cd)
}

/// Accumulates stream bytes and yields whole messages.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Pops the next complete message, `Ok(None)` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<Message>, WireError> {
        if self.buf.is_empty() {
            return Ok(None);
        }
        let (msg, consumed) = match decode_frame(&self.buf)? {
            Decoded::NeedMore(_) => return Ok(None),
            Decoded::Frame(msg, rest) => {
                let consumed = self.buf.len() - rest.len();
                (msg, consumed)
            }
        };
        self.buf.drain(..consumed);
        Ok(Some(msg))
    }
}

fn write_physics(w: &mut Writer, m: &PhysicsUpdate) {
    w.u8(m.msg_type.to_byte());
    w.u64(m.time_val);
    w.u32(m.channel_data.len() as u32);
    w.buf.extend_from_slice(&m.channel_data);
}

fn read_physics(r: &mut Reader<'_>) -> Result<PhysicsUpdate, WireError> {
    let msg_type = r.msg_type()?;
    let time_val = r.u64("time_val")?;
    let len = r.count("channel_data", 1)?;
    let channel_data = r.take("channel_data", len)?.to_vec();
    Ok(PhysicsUpdate {
        msg_type,
        time_val,
        channel_data,
    })
}

fn write_network(w: &mut Writer, m: &NetworkUpdate) {
    w.u8(m.msg_type.to_byte());
    w.u64(m.time_val);
    w.list(&m.pkt_id, |w, v| w.u64(*v));
    w.list(&m.pkt_lengths, |w, v| w.u32(*v));
    w.list(&m.src_ip, |w, v| w.ip(*v));
    w.list(&m.dst_ip, |w, v| w.ip(*v));
    w.list(&m.clear_pkt_id, |w, v| w.u64(*v));
    w.list(&m.clear_src_ip, |w, v| w.ip(*v));
    w.list(&m.clear_dst_ip, |w, v| w.ip(*v));
    w.list(&m.ber, |w, v| w.f64(*v));
}

fn read_network(r: &mut Reader<'_>) -> Result<NetworkUpdate, WireError> {
    Ok(NetworkUpdate {
        msg_type: r.msg_type()?,
        time_val: r.u64("time_val")?,
        pkt_id: r.list("pkt_id", 8, |r| r.u64("pkt_id"))?,
        pkt_lengths: r.list("pkt_lengths", 4, |r| r.u32("pkt_lengths"))?,
        src_ip: r.list("src_ip", 4, |r| r.ip("src_ip"))?,
        dst_ip: r.list("dst_ip", 4, |r| r.ip("dst_ip"))?,
        clear_pkt_id: r.list("clear_pkt_id", 8, |r| r.u64("clear_pkt_id"))?,
        clear_src_ip: r.list("clear_src_ip", 4, |r| r.ip("clear_src_ip"))?,
        clear_dst_ip: r.list("clear_dst_ip", 4, |r| r.ip("clear_dst_ip"))?,
        ber: r.list("ber", 8, |r| r.f64("ber"))?,
    })
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn ip(&mut self, v: Ipv4Addr) {
        self.buf.extend_from_slice(&v.octets());
    }
    fn list<T>(&mut self, items: &[T], mut each: impl FnMut(&mut Self, &T)) {
        self.u32(items.len() as u32);
        for item in items {
            each(self, item);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, field: &'static str, n: usize) -> Result<&'a [u8], WireError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                WireError::malformed(
                    field,
                    format!(
                        "needs {n} bytes at offset {}, only {} left",
                        self.pos,
                        self.bytes.len() - self.pos
                    ),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], WireError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(field, N)?);
        Ok(out)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8, WireError> {
        Ok(self.take(field, 1)?[0])
    }
    fn u32(&mut self, field: &'static str) -> Result<u32, WireError> {
        self.array(field).map(u32::from_le_bytes)
    }
    fn u64(&mut self, field: &'static str) -> Result<u64, WireError> {
        self.array(field).map(u64::from_le_bytes)
    }
    fn f64(&mut self, field: &'static str) -> Result<f64, WireError> {
        self.array(field).map(f64::from_le_bytes)
    }
    fn ip(&mut self, field: &'static str) -> Result<Ipv4Addr, WireError> {
        self.array::<4>(field).map(Ipv4Addr::from)
    }

    fn msg_type(&mut self) -> Result<MsgType, WireError> {
        let b = self.u8("msg_type")?;
        MsgType::from_byte(b)
            .ok_or_else(|| WireError::malformed("msg_type", format!("unknown value 0x{b:02x}")))
    }

    /// Reads a list count and rejects counts that cannot fit in the
    /// remaining bytes given the minimum element size.
    fn count(&mut self, field: &'static str, min_elem: usize) -> Result<usize, WireError> {
        let n = self.u32(field)? as usize;
        let remaining = self.bytes.len() - self.pos;
        if n.saturating_mul(min_elem) > remaining {
            return Err(WireError::malformed(
                field,
                format!("count {n} exceeds the {remaining} remaining bytes"),
            ));
        }
        Ok(n)
    }

    fn list<T>(
        &mut self,
        field: &'static str,
        elem: usize,
        mut each: impl FnMut(&mut Self) -> Result<T, WireError>,
    ) -> Result<Vec<T>, WireError> {
        let n = self.count(field, elem)?;
        (0..n).map(|_| each(self)).collect()
    }

    fn finish(&self, field: &'static str) -> Result<(), WireError> {
        if self.pos != self.bytes.len() {
            return Err(WireError::malformed(
                field,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
