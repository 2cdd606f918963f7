//! Protocol messages exchanged between the coordinators and the external
//! simulators, together with their binary encoding.
//!
//! Every message travels inside a frame:
//!
//! ```text
//! "RNS1" | tag (u8) | payload length (u32 LE) | payload
//! ```
//!
//! Tag `0x00` is a [`PhysicsUpdate`], tag `0x01` a [`NetworkUpdate`]. Inside
//! payloads integers are little-endian fixed width, floats are IEEE-754
//! doubles, lists carry a `u32` count prefix, and IPv4 addresses are four
//! bytes in network order.

mod codec;
mod compress;

use std::net::Ipv4Addr;

pub use codec::{
    decode_channel_data, decode_frame, encode_channel_data, encode_frame, Decoded, FrameDecoder,
    FRAME_HEADER_LEN, MAGIC, MAX_FRAME_PAYLOAD, TAG_NETWORK_UPDATE, TAG_PHYSICS_UPDATE,
};
pub use compress::{compress_channel_data, decompress_channel_data, MAX_DECOMPRESSED_LEN};

/// Tolerance on the quaternion norm of a [`Pose`].
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("declared payload length {len} exceeds the {cap} byte cap")]
    FrameTooLarge { len: usize, cap: usize },
    #[error("malformed field `{field}`: {reason}")]
    Malformed { field: &'static str, reason: String },
    #[error("invariant violated on `{field}`: {reason}")]
    Invariant { field: &'static str, reason: String },
    #[error("channel data decompression failed: {0}")]
    Decompress(String),
    #[error("decompressed channel data exceeds the {cap} byte cap")]
    DecompressedTooLarge { cap: usize },
}

impl WireError {
    pub(crate) fn invariant(field: &'static str, reason: impl Into<String>) -> Self {
        WireError::Invariant {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn malformed(field: &'static str, reason: impl Into<String>) -> Self {
        WireError::Malformed {
            field,
            reason: reason.into(),
        }
    }
}

/// Position in meters plus an `(x, y, z, w)` orientation quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    pub const IDENTITY_ORIENTATION: [f64; 4] = [0.0, 0.0, 0.0, 1.0];

    pub fn at(position: [f64; 3]) -> Self {
        Pose {
            position,
            orientation: Self::IDENTITY_ORIENTATION,
        }
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if !self
            .position
            .iter()
            .chain(self.orientation.iter())
            .all(|v| v.is_finite())
        {
            return Err(WireError::invariant("node_list", "non-finite pose component"));
        }
        let norm = self.orientation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(WireError::invariant(
                "node_list",
                format!("quaternion norm {norm} is not 1"),
            ));
        }
        Ok(())
    }
}

/// One interaction point along a signal path: a location in meters and the
/// transition loss in dB incurred there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub loss_db: f64,
}

/// Signal paths between one pair of agents.
///
/// `num_hops[k]` is the hop count of path `k`; `hop_points` holds the hops
/// of all paths back to back. A line-of-sight direct path is a path with
/// zero hops.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDetails {
    pub ids: (u32, u32),
    pub los: bool,
    pub num_hops: Vec<u32>,
    pub hop_points: Vec<HopPoint>,
}

impl PathDetails {
    /// Hop points belonging to path `index`, if that path exists.
    pub fn path(&self, index: usize) -> Option<&[HopPoint]> {
        let start: usize = self.num_hops.iter().take(index).map(|&n| n as usize).sum();
        let len = *self.num_hops.get(index)? as usize;
        self.hop_points.get(start..start + len)
    }

    pub fn validate(&self, node_count: usize) -> Result<(), WireError> {
        let (a, b) = self.ids;
        if a == b {
            return Err(WireError::invariant(
                "path_details.ids",
                format!("self pair ({a}, {b})"),
            ));
        }
        if a as usize >= node_count || b as usize >= node_count {
            return Err(WireError::invariant(
                "path_details.ids",
                format!("pair ({a}, {b}) outside node_list of {node_count}"),
            ));
        }
        let hops: u64 = self.num_hops.iter().map(|&n| u64::from(n)).sum();
        if hops != self.hop_points.len() as u64 {
            return Err(WireError::invariant(
                "path_details.num_hops",
                format!(
                    "sum(num_hops) = {hops} but {} hop points",
                    self.hop_points.len()
                ),
            ));
        }
        for hop in &self.hop_points {
            if ![hop.x, hop.y, hop.z, hop.loss_db].iter().all(|v| v.is_finite()) {
                return Err(WireError::invariant(
                    "path_details.hop_points",
                    "non-finite hop component",
                ));
            }
            if hop.loss_db < 0.0 {
                return Err(WireError::invariant(
                    "path_details.hop_points",
                    format!("negative loss {} dB", hop.loss_db),
                ));
            }
        }
        Ok(())
    }
}

/// Geometric channel snapshot: agent poses indexed by agent id plus the
/// signal paths between agent pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelData {
    pub node_list: Vec<Pose>,
    pub path_details: Vec<PathDetails>,
}

impl ChannelData {
    pub fn validate(&self) -> Result<(), WireError> {
        for pose in &self.node_list {
            pose.validate()?;
        }
        let mut seen = std::collections::HashSet::with_capacity(self.path_details.len());
        for details in &self.path_details {
            details.validate(self.node_list.len())?;
            let (a, b) = details.ids;
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(WireError::invariant(
                    "path_details",
                    format!("duplicate entry for pair ({a}, {b})"),
                ));
            }
        }
        Ok(())
    }

    /// The entry for the unordered pair `{a, b}`.
    pub fn pair(&self, a: u32, b: u32) -> Option<&PathDetails> {
        self.path_details
            .iter()
            .find(|d| d.ids == (a, b) || d.ids == (b, a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Begin,
    End,
}

impl MsgType {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            MsgType::Begin => 0x00,
            MsgType::End => 0x01,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(MsgType::Begin),
            0x01 => Some(MsgType::End),
            _ => None,
        }
    }
}

/// Sent by the physics side. `channel_data` holds a DEFLATE-compressed
/// encoded [`ChannelData`], or nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsUpdate {
    pub msg_type: MsgType,
    pub time_val: u64,
    pub channel_data: Vec<u8>,
}

impl PhysicsUpdate {
    pub fn new(msg_type: MsgType, time_val: u64) -> Self {
        PhysicsUpdate {
            msg_type,
            time_val,
            channel_data: Vec::new(),
        }
    }

    pub fn with_channel(msg_type: MsgType, time_val: u64, channel: &ChannelData) -> Result<Self, WireError> {
        channel.validate()?;
        Ok(PhysicsUpdate {
            msg_type,
            time_val,
            channel_data: compress_channel_data(&encode_channel_data(channel)?),
        })
    }

    /// Decompresses and decodes `channel_data`; `None` when it is empty.
    pub fn channel(&self) -> Result<Option<ChannelData>, WireError> {
        if self.channel_data.is_empty() {
            return Ok(None);
        }
        let raw = decompress_channel_data(&self.channel_data)?;
        decode_channel_data(&raw).map(Some)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        self.channel().map(|_| ())
    }
}

/// Sent by the network side, and used as the manifest/clearance exchange
/// with network simulators.
///
/// The `pkt_*`/`src_ip`/`dst_ip` lists form the capture manifest, the
/// `clear_*`/`ber` lists the clearance manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkUpdate {
    pub msg_type: MsgType,
    pub time_val: u64,
    pub pkt_id: Vec<u64>,
    pub pkt_lengths: Vec<u32>,
    pub src_ip: Vec<Ipv4Addr>,
    pub dst_ip: Vec<Ipv4Addr>,
    pub clear_pkt_id: Vec<u64>,
    pub clear_src_ip: Vec<Ipv4Addr>,
    pub clear_dst_ip: Vec<Ipv4Addr>,
    pub ber: Vec<f64>,
}

impl NetworkUpdate {
    pub fn new(msg_type: MsgType, time_val: u64) -> Self {
        NetworkUpdate {
            msg_type,
            time_val,
            pkt_id: Vec::new(),
            pkt_lengths: Vec::new(),
            src_ip: Vec::new(),
            dst_ip: Vec::new(),
            clear_pkt_id: Vec::new(),
            clear_src_ip: Vec::new(),
            clear_dst_ip: Vec::new(),
            ber: Vec::new(),
        }
    }

    pub fn push_packet(&mut self, id: u64, len: u32, src: Ipv4Addr, dst: Ipv4Addr) {
        self.pkt_id.push(id);
        self.pkt_lengths.push(len);
        self.src_ip.push(src);
        self.dst_ip.push(dst);
    }

    pub fn push_clearance(&mut self, id: u64, src: Ipv4Addr, dst: Ipv4Addr, ber: f64) {
        self.clear_pkt_id.push(id);
        self.clear_src_ip.push(src);
        self.clear_dst_ip.push(dst);
        self.ber.push(ber);
    }

    pub fn manifest_len(&self) -> usize {
        self.pkt_id.len()
    }

    pub fn clearance_len(&self) -> usize {
        self.clear_pkt_id.len()
    }

    pub fn validate(&self) -> Result<(), WireError> {
        let n = self.pkt_id.len();
        if self.pkt_lengths.len() != n || self.src_ip.len() != n || self.dst_ip.len() != n {
            return Err(WireError::invariant(
                "pkt_id",
                format!(
                    "manifest lists differ in length ({n}, {}, {}, {})",
                    self.pkt_lengths.len(),
                    self.src_ip.len(),
                    self.dst_ip.len()
                ),
            ));
        }
        let c = self.clear_pkt_id.len();
        if self.clear_src_ip.len() != c || self.clear_dst_ip.len() != c || self.ber.len() != c {
            return Err(WireError::invariant(
                "clear_pkt_id",
                format!(
                    "clearance lists differ in length ({c}, {}, {}, {})",
                    self.clear_src_ip.len(),
                    self.clear_dst_ip.len(),
                    self.ber.len()
                ),
            ));
        }
        if let Some(b) = self.ber.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(WireError::invariant("ber", format!("{b} outside [0, 1]")));
        }
        let mut ids = std::collections::HashSet::with_capacity(n);
        if let Some(dup) = self.pkt_id.iter().find(|id| !ids.insert(**id)) {
            return Err(WireError::invariant("pkt_id", format!("duplicate id {dup}")));
        }
        Ok(())
    }
}

/// Either protocol message.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Physics(PhysicsUpdate),
    Network(NetworkUpdate),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Physics(m) => m.msg_type,
            Message::Network(m) => m.msg_type,
        }
    }

    pub fn time_val(&self) -> u64 {
        match self {
            Message::Physics(m) => m.time_val,
            Message::Network(m) => m.time_val,
        }
    }

    pub fn set_header(&mut self, msg_type: MsgType, time_val: u64) {
        match self {
            Message::Physics(m) => {
                m.msg_type = msg_type;
                m.time_val = time_val;
            }
            Message::Network(m) => {
                m.msg_type = msg_type;
                m.time_val = time_val;
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Physics(_) => "PhysicsUpdate",
            Message::Network(_) => "NetworkUpdate",
        }
    }

    pub fn validate(&self) -> Result<(), WireError> {
        match self {
            Message::Physics(m) => m.validate(),
            Message::Network(m) => m.validate(),
        }
    }
}

impl From<PhysicsUpdate> for Message {
    fn from(m: PhysicsUpdate) -> Self {
        Message::Physics(m)
    }
}

impl From<NetworkUpdate> for Message {
    fn from(m: NetworkUpdate) -> Self {
        Message::Network(m)
    }
}
