//! Generators and oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use cosim_core::address_map::{AddressMap, AgentAddress};
use cosim_core::physics::{Aabb, AgentTrack, Obstacle, Point, WorldModel};
use cosim_core::wire::{ChannelData, HopPoint, MsgType, NetworkUpdate, PathDetails, PhysicsUpdate, Pose};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn addr(agent: u32) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 0, agent as u8 + 1)
}

pub fn address_map(agents: u32) -> AddressMap {
    AddressMap::new((0..agents).map(|agent_id| AgentAddress {
        agent_id,
        address: addr(agent_id),
    }))
    .unwrap()
}

pub fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let position = [
        rng.random_range(-1e4..1e4),
        rng.random_range(-1e4..1e4),
        rng.random_range(-100.0..100.0),
    ];
    if rng.random_bool(0.2) {
        return Pose::at(position);
    }
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    Pose {
        position,
        orientation: q.map(|v| v / n),
    }
}

/// Valid channel data with up to `max_agents` agents and `max_hops` hops per
/// path.
pub fn random_channel<R: Rng>(rng: &mut R, max_agents: usize, max_hops: u32) -> ChannelData {
    let n = rng.random_range(0..=max_agents);
    let node_list: Vec<Pose> = (0..n).map(|_| random_pose(rng)).collect();
    let mut pairs: Vec<(u32, u32)> = (0..n as u32)
        .flat_map(|i| (i + 1..n as u32).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(rng);
    pairs.truncate(rng.random_range(0..=pairs.len()));
    let path_details = pairs
        .into_iter()
        .map(|(i, j)| {
            let ids = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
            let paths = rng.random_range(0..=3);
            let num_hops: Vec<u32> = (0..paths).map(|_| rng.random_range(0..=max_hops)).collect();
            let hops: u32 = num_hops.iter().sum();
            PathDetails {
                ids,
                los: rng.random_bool(0.5),
                num_hops,
                hop_points: (0..hops)
                    .map(|_| HopPoint {
                        x: rng.random_range(-1e3..1e3),
                        y: rng.random_range(-1e3..1e3),
                        z: rng.random_range(-1e3..1e3),
                        loss_db: rng.random_range(0.0..60.0),
                    })
                    .collect(),
            }
        })
        .collect();
    ChannelData { node_list, path_details }
}

fn random_type<R: Rng>(rng: &mut R) -> MsgType {
    if rng.random_bool(0.5) {
        MsgType::Begin
    } else {
        MsgType::End
    }
}

fn random_ip<R: Rng>(rng: &mut R) -> Ipv4Addr {
    Ipv4Addr::from(rng.next_u32())
}

pub fn random_physics_update<R: Rng>(rng: &mut R) -> PhysicsUpdate {
    let t = rng.next_u64();
    if rng.random_bool(0.15) {
        return PhysicsUpdate::new(random_type(rng), t);
    }
    PhysicsUpdate::with_channel(random_type(rng), t, &random_channel(rng, 16, 8)).unwrap()
}

pub fn random_network_update<R: Rng>(rng: &mut R) -> NetworkUpdate {
    let mut m = NetworkUpdate::new(random_type(rng), rng.next_u64());
    let mut ids = BTreeSet::new();
    for _ in 0..rng.random_range(0..40) {
        let id = rng.next_u64();
        if ids.insert(id) {
            m.push_packet(id, rng.next_u32(), random_ip(rng), random_ip(rng));
        }
    }
    let mut cleared = BTreeSet::new();
    for _ in 0..rng.random_range(0..40) {
        let id = rng.next_u64();
        if cleared.insert(id) {
            let ber = match rng.random_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random_range(0.0..=1.0),
            };
            m.push_clearance(id, random_ip(rng), random_ip(rng), ber);
        }
    }
    m
}

/// Box with each side between `min_side` and `max_side` meters, inside
/// `bounds`.
pub fn random_box<R: Rng>(rng: &mut R, bounds: &Aabb, min_side: f64, max_side: f64) -> Aabb {
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for a in 0..3 {
        let span = bounds.max[a] - bounds.min[a];
        let side = rng.random_range(min_side..max_side).min(span * 0.9);
        let lo = rng.random_range(bounds.min[a]..bounds.max[a] - side);
        min[a] = lo;
        max[a] = lo + side;
    }
    Aabb::new(min, max)
}

pub fn random_point<R: Rng>(rng: &mut R, bounds: &Aabb) -> Point {
    std::array::from_fn(|a| rng.random_range(bounds.min[a]..bounds.max[a]))
}

pub fn random_world<R: Rng>(rng: &mut R, max_boxes: usize) -> WorldModel {
    let bounds = Aabb::new([0.0, 0.0, 0.0], [200.0, 200.0, 40.0]);
    let obstacles = (0..rng.random_range(0..=max_boxes))
        .map(|_| {
            let b = random_box(rng, &bounds, 2.0, 60.0);
            Obstacle {
                min: b.min,
                max: b.max,
                penetration_loss: rng.random_range(0.0..30.0),
            }
        })
        .collect();
    WorldModel { bounds, obstacles }
}

/// Indices of the boxes that contain at least one of `samples` evenly
/// spaced points of the segment, endpoints included.
pub fn sampled_hits(p0: Point, p1: Point, boxes: &[Aabb], samples: usize) -> Vec<usize> {
    let mut hit = vec![false; boxes.len()];
    for k in 0..samples {
        let t = k as f64 / (samples - 1) as f64;
        let p: Point = std::array::from_fn(|a| p0[a] + t * (p1[a] - p0[a]));
        for (i, b) in boxes.iter().enumerate() {
            if !hit[i] && b.contains_strictly(p) {
                hit[i] = true;
            }
        }
    }
    (0..boxes.len()).filter(|&i| hit[i]).collect()
}

pub fn static_track(agent_id: u32, at: Point) -> AgentTrack {
    AgentTrack {
        agent_id,
        waypoints: vec![at],
        speed: 1.0,
        looped: false,
        yaw_aligned: false,
    }
}

/// Open world big enough for the given points.
pub fn open_world() -> WorldModel {
    WorldModel::empty(Aabb::new([-1000.0, -1000.0, -10.0], [1000.0, 1000.0, 50.0]))
}

/// Error class a malformed frame must be rejected with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reject {
    BadMagic,
    UnknownTag,
    TooLarge,
    NeedMore,
    Malformed,
    Invariant,
    Decompress,
}

pub fn classify(bytes: &[u8]) -> Option<Reject> {
    use cosim_core::wire::{decode_frame, Decoded, WireError};
    match decode_frame(bytes) {
        Ok(Decoded::Frame(..)) => None,
        Ok(Decoded::NeedMore(_)) => Some(Reject::NeedMore),
        Err(WireError::BadMagic(_)) => Some(Reject::BadMagic),
        Err(WireError::UnknownTag(_)) => Some(Reject::UnknownTag),
        Err(WireError::FrameTooLarge { .. }) => Some(Reject::TooLarge),
        Err(WireError::Malformed { .. }) => Some(Reject::Malformed),
        Err(WireError::Invariant { .. }) => Some(Reject::Invariant),
        Err(WireError::Decompress(_) | WireError::DecompressedTooLarge { .. }) => Some(Reject::Decompress),
    }
}

fn frame(tag: u8, payload: &[u8]) -> Vec<u8> {
    let mut f = b"RNS1".to_vec();
    f.push(tag);
    f.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    f.extend_from_slice(payload);
    f
}

fn u32s(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Network payload with the given list counts and raw list bodies.
fn network_payload(lists: [&[u8]; 8]) -> Vec<u8> {
    let mut p = vec![0x00];
    p.extend_from_slice(&7u64.to_le_bytes());
    for l in lists {
        p.extend_from_slice(l);
    }
    p
}

/// Hand-built bad frames and the class each must be rejected with.
pub fn malformed_corpus() -> Vec<(&'static str, Vec<u8>, Reject)> {
    use cosim_core::wire::{compress_channel_data, encode_frame, Message};
    let good = encode_frame(&Message::Network(NetworkUpdate::new(MsgType::Begin, 7))).unwrap();
    let empty = u32s(&[0]);
    let mut corpus = Vec::new();

    let mut bad = good.clone();
    bad[3] = b'2';
    corpus.push(("magic RNS2", bad, Reject::BadMagic));
    corpus.push(("magic garbage", b"GET / HTTP/1.1\r\n".to_vec(), Reject::BadMagic));
    let mut bad = good.clone();
    bad[4] = 0x02;
    corpus.push(("tag 0x02", bad, Reject::UnknownTag));
    let mut bad = good.clone();
    bad[4] = 0xff;
    corpus.push(("tag 0xff", bad, Reject::UnknownTag));

    let mut over = b"RNS1\x01".to_vec();
    over.extend_from_slice(&(16 * 1024 * 1024 + 1u32).to_le_bytes());
    corpus.push(("length 16 MiB + 1", over, Reject::TooLarge));
    let mut over = b"RNS1\x00".to_vec();
    over.extend_from_slice(&u32::MAX.to_le_bytes());
    corpus.push(("length u32::MAX", over, Reject::TooLarge));

    let mut trunc = frame(0x00, &[0u8; 100]);
    trunc.truncate(9 + 50);
    corpus.push(("length 100, 50 present", trunc, Reject::NeedMore));
    corpus.push(("header only", good[..9].to_vec(), Reject::NeedMore));
    corpus.push(("magic prefix", b"RN".to_vec(), Reject::NeedMore));

    let mut p = vec![0x02];
    p.extend_from_slice(&[0u8; 12]);
    corpus.push(("msg_type 0x02", frame(0x00, &p), Reject::Malformed));
    let mut p = vec![0x00];
    p.extend_from_slice(&[0u8; 8]);
    p.extend_from_slice(&u32s(&[10]));
    p.extend_from_slice(&[1, 2, 3]);
    corpus.push(("channel_data longer than payload", frame(0x00, &p), Reject::Malformed));
    let mut p = good[9..].to_vec();
    p.push(0);
    corpus.push(("trailing payload byte", frame(0x01, &p), Reject::Malformed));
    let mut p = vec![0x00];
    p.extend_from_slice(&[0u8; 8]);
    p.extend_from_slice(&u32s(&[u32::MAX]));
    corpus.push(("list count past payload", frame(0x01, &p), Reject::Malformed));

    let one_id = [u32s(&[1]), 5u64.to_le_bytes().to_vec()].concat();
    let p = network_payload([&one_id, &empty, &empty, &empty, &empty, &empty, &empty, &empty]);
    corpus.push(("manifest lists of unequal length", frame(0x01, &p), Reject::Invariant));
    let two_ids = [u32s(&[2]), 5u64.to_le_bytes().to_vec(), 5u64.to_le_bytes().to_vec()].concat();
    let two_lens = u32s(&[2, 10, 10]);
    let two_ips = [u32s(&[2]), vec![10, 0, 0, 1, 10, 0, 0, 2]].concat();
    let p = network_payload([&two_ids, &two_lens, &two_ips, &two_ips, &empty, &empty, &empty, &empty]);
    corpus.push(("duplicate pkt_id", frame(0x01, &p), Reject::Invariant));
    let ber = [u32s(&[1]), 1.5f64.to_le_bytes().to_vec()].concat();
    let ip = [u32s(&[1]), vec![10, 0, 0, 1]].concat();
    let p = network_payload([&empty, &empty, &empty, &empty, &one_id, &ip, &ip, &ber]);
    corpus.push(("ber 1.5", frame(0x01, &p), Reject::Invariant));
    let nan = [u32s(&[1]), f64::NAN.to_le_bytes().to_vec()].concat();
    let p = network_payload([&empty, &empty, &empty, &empty, &one_id, &ip, &ip, &nan]);
    corpus.push(("ber NaN", frame(0x01, &p), Reject::Invariant));

    let physics = |channel: &[u8]| {
        let mut p = vec![0x01];
        p.extend_from_slice(&3u64.to_le_bytes());
        p.extend_from_slice(&u32s(&[channel.len() as u32]));
        p.extend_from_slice(channel);
        frame(0x00, &p)
    };
    corpus.push(("channel_data not DEFLATE", physics(&[0xff; 16]), Reject::Decompress));
    // One agent with a quaternion of norm 2.
    let mut cd = u32s(&[1]);
    for v in [0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0] {
        cd.extend_from_slice(&v.to_le_bytes());
    }
    cd.extend_from_slice(&u32s(&[0]));
    corpus.push(("quaternion norm 2", physics(&compress_channel_data(&cd)), Reject::Invariant));
    // Two agents and one path with a single hop.
    let mut cd = u32s(&[2]);
    for _ in 0..2 {
        for v in [0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0] {
            cd.extend_from_slice(&v.to_le_bytes());
        }
    }
    cd.extend_from_slice(&u32s(&[1, 0, 1]));
    cd.push(0);
    let mut short = cd.clone();
    short.extend_from_slice(&u32s(&[1, 1, 0]));
    corpus.push(("num_hops without hop points", physics(&compress_channel_data(&short)), Reject::Invariant));
    let mut cut = cd.clone();
    cut.extend_from_slice(&u32s(&[1, 1, 1]));
    corpus.push(("hop point missing", physics(&compress_channel_data(&cut)), Reject::Malformed));
    cd.extend_from_slice(&u32s(&[1, 1, 1]));
    for v in [1.0f64, 2.0, 3.0, -1.0] {
        cd.extend_from_slice(&v.to_le_bytes());
    }
    corpus.push(("negative hop loss", physics(&compress_channel_data(&cd)), Reject::Invariant));
    // A path from an agent to itself.
    let mut cd = u32s(&[2]);
    for _ in 0..2 {
        for v in [0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0] {
            cd.extend_from_slice(&v.to_le_bytes());
        }
    }
    cd.extend_from_slice(&u32s(&[1, 1, 1]));
    cd.push(1);
    cd.extend_from_slice(&u32s(&[0, 0]));
    corpus.push(("self pair", physics(&compress_channel_data(&cd)), Reject::Invariant));
    corpus
}

pub mod jitter {
    use std::sync::{Arc, Mutex};
    use std::time::{Duration, Instant};

    use cosim_core::sync::{DriverError, InProcessLink, PeerLink, Role, SimDriver, SyncError, SyncPeer};
    use cosim_core::wire::{Message, MsgType, NetworkUpdate, PhysicsUpdate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sleeps a uniform random time up to `max` in every window.
    pub struct JitterDriver {
        role: Role,
        rng: ChaCha8Rng,
        max: Duration,
        pub simulated: Vec<u64>,
    }

    impl JitterDriver {
        pub fn new(role: Role, seed: u64, max: Duration) -> Self {
            JitterDriver {
                role,
                rng: ChaCha8Rng::seed_from_u64(seed),
                max,
                simulated: Vec::new(),
            }
        }

        fn body(&self, msg_type: MsgType, t: u64) -> Message {
            match self.role {
                Role::PhysicsSide => PhysicsUpdate::new(msg_type, t).into(),
                Role::NetworkSide => NetworkUpdate::new(msg_type, t).into(),
            }
        }
    }

    impl SimDriver for JitterDriver {
        fn begin_message(&mut self, t: u64) -> Result<Message, DriverError> {
            Ok(self.body(MsgType::Begin, t))
        }

        fn simulate(&mut self, t: u64, _window: u64, peer_begin: &Message) -> Result<Message, DriverError> {
            assert_eq!(peer_begin.time_val(), t);
            self.simulated.push(t);
            if !self.max.is_zero() {
                let ns = self.rng.random_range(0..=self.max.as_nanos() as u64);
                std::thread::sleep(Duration::from_nanos(ns));
            }
            Ok(self.body(MsgType::End, t))
        }
    }

    #[derive(Debug)]
    pub struct SideOutcome {
        pub result: Result<(), String>,
        pub final_t: u64,
        pub windows: u64,
        pub frames_sent: u64,
        pub frames_received: u64,
        pub simulated: Vec<u64>,
        /// `t` after every completed window.
        pub ledger: Vec<u64>,
    }

    #[derive(Debug)]
    pub struct Outcome {
        pub physics: SideOutcome,
        pub network: SideOutcome,
        pub elapsed: Duration,
    }

    impl Outcome {
        pub fn desyncs(&self) -> usize {
            [&self.physics, &self.network]
                .iter()
                .filter(|s| matches!(&s.result, Err(e) if e.contains("desync")))
                .count()
        }
    }

    fn side<L: PeerLink>(role: Role, window: u64, windows: u64, seed: u64, max: Duration, mut link: L) -> (SideOutcome, L) {
        let mut peer = SyncPeer::new(role, window).unwrap();
        let mut driver = JitterDriver::new(role, seed, max);
        let ledger = Arc::new(Mutex::new(Vec::new()));
        let sink = ledger.clone();
        let result = peer
            .run(&mut link, &mut driver, windows, move |r| sink.lock().unwrap().push(r.window_start + window))
            .map_err(|e: SyncError| e.to_string());
        let out = SideOutcome {
            result,
            final_t: peer.time(),
            windows: peer.stats().windows,
            frames_sent: peer.stats().frames_sent,
            frames_received: peer.stats().frames_received,
            simulated: driver.simulated,
            ledger: Arc::try_unwrap(ledger).unwrap().into_inner().unwrap(),
        };
        (out, link)
    }

    /// Two peers over an in-process link, each sleeping up to `max` per
    /// window.
    pub fn run(windows: u64, window: u64, max: Duration, seed: u64) -> Outcome {
        run_over(InProcessLink::pair(), windows, window, max, seed)
    }

    pub fn run_over<L: PeerLink + Send>(links: (L, L), windows: u64, window: u64, max: Duration, seed: u64) -> Outcome {
        let (a, b) = links;
        let started = Instant::now();
        let (physics, network) = std::thread::scope(|s| {
            let net = s.spawn(move || side(Role::NetworkSide, window, windows, seed ^ 0xa5a5, max, b));
            let (phys, _a) = side(Role::PhysicsSide, window, windows, seed, max, a);
            let (net, _b) = net.join().unwrap();
            (phys, net)
        });
        Outcome {
            physics,
            network,
            elapsed: started.elapsed(),
        }
    }
}

pub mod geometry_oracle {
    use cosim_core::physics::{
        extract_channel_data, geometry::distance, segment_box_crossing, AgentState, ChannelFidelity, WorldModel,
    };
    use cosim_core::wire::{decode_channel_data, encode_channel_data, ChannelData, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{random_point, random_world, sampled_hits};

    pub const SAMPLES: usize = 10_000;

    #[derive(Debug, Default)]
    pub struct Report {
        pub worlds: usize,
        pub pairs: usize,
        pub los_mismatches: Vec<String>,
        pub hop_mismatches: Vec<String>,
        pub conservation_failures: Vec<String>,
        /// Crossings shorter than the sample spacing, which the sampler
        /// cannot resolve. Counted, not treated as mismatches.
        pub below_resolution: usize,
    }

    fn states(points: &[[f64; 3]]) -> Vec<AgentState> {
        points
            .iter()
            .enumerate()
            .map(|(i, &p)| AgentState {
                agent_id: i as u32,
                pose: Pose::at(p),
                arc_position: 0.0,
            })
            .collect()
    }

    /// Sum of `num_hops` equals the hop points carried, before and after
    /// a trip through the encoder.
    pub fn conserves_hops(cd: &ChannelData) -> bool {
        let ok = |cd: &ChannelData| {
            cd.path_details
                .iter()
                .all(|p| p.num_hops.iter().map(|&n| n as usize).sum::<usize>() == p.hop_points.len())
        };
        ok(cd)
            && encode_channel_data(cd)
                .ok()
                .and_then(|b| decode_channel_data(&b).ok())
                .is_some_and(|back| ok(&back) && &back == cd)
    }

    /// Random worlds with up to 10 boxes and 2 to 8 static agents. Every
    /// pair is checked against dense point sampling of its segment.
    pub fn check(seed: u64, worlds: usize) -> Report {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = Report::default();
        for w in 0..worlds {
            let world: WorldModel = random_world(&mut rng, 10);
            let n = rng.random_range(2..=8);
            let points: Vec<[f64; 3]> = (0..n).map(|_| random_point(&mut rng, &world.bounds)).collect();
            let cd = extract_channel_data(&world, &states(&points), ChannelFidelity::LosNlos);
            if !conserves_hops(&cd) {
                report.conservation_failures.push(format!("world {w}"));
            }
            let boxes: Vec<_> = world.obstacles.iter().map(|o| o.aabb()).collect();
            for p in &cd.path_details {
                let (i, j) = (p.ids.0 as usize, p.ids.1 as usize);
                let hits = sampled_hits(points[i], points[j], &boxes, SAMPLES);
                report.pairs += 1;
                if p.los != hits.is_empty() {
                    report
                        .los_mismatches
                        .push(format!("world {w} pair {i}-{j}: los {} vs sampled hits {hits:?}", p.los));
                } else {
                    let (a, b) = (points[i], points[j]);
                    let spacing = distance(a, b) / (SAMPLES - 1) as f64;
                    let exact: Vec<(usize, f64)> = boxes
                        .iter()
                        .enumerate()
                        .filter_map(|(k, bx)| {
                            segment_box_crossing(a, b, bx).map(|c| (k, (c.t_exit - c.t_entry) * distance(a, b)))
                        })
                        .collect();
                    let missed = exact.iter().filter(|(k, _)| !hits.contains(k));
                    let unresolved = missed.clone().filter(|&&(_, len)| len < spacing).count();
                    let explained = exact.len() == p.hop_points.len()
                        && hits.iter().all(|k| exact.iter().any(|(e, _)| e == k))
                        && missed.count() == unresolved;
                    if !explained {
                        report.hop_mismatches.push(format!(
                            "world {w} pair {i}-{j}: {} hops vs sampled hits {hits:?}",
                            p.hop_points.len()
                        ));
                    }
                    report.below_resolution += unresolved;
                }
            }
            report.worlds += 1;
        }
        report
    }
}

/// Both ends of a loopback TCP connection.
pub fn tcp_pair() -> (cosim_core::sync::TcpLink, cosim_core::sync::TcpLink) {
    use cosim_core::sync::TcpLink;
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let client = std::thread::spawn(move || TcpLink::connect(addr).unwrap());
    let (stream, _) = listener.accept().unwrap();
    (client.join().unwrap(), TcpLink::new(stream).unwrap())
}

/// Channel for agents at `points` where the pair `(i, j)` sits behind
/// `walls(i, j)` dB, split over that many hop points of one path.
pub fn walled_channel(points: &[Point], walls: impl Fn(usize, usize) -> Vec<f64>) -> ChannelData {
    let mut path_details = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let hop_points: Vec<HopPoint> = walls(i, j)
                .into_iter()
                .map(|l| HopPoint {
                    x: points[i][0],
                    y: points[i][1],
                    z: points[i][2],
                    loss_db: l,
                })
                .collect();
            path_details.push(PathDetails {
                ids: (i as u32, j as u32),
                los: hop_points.is_empty(),
                num_hops: vec![hop_points.len() as u32],
                hop_points,
            });
        }
    }
    ChannelData {
        node_list: points.iter().map(|&p| Pose::at(p)).collect(),
        path_details,
    }
}

pub mod cosim {
    use std::sync::Arc;

    use cosim_core::address_map::AddressMap;
    use cosim_core::net_coord::{
        run_network_coordinator, Application, CaptureBackend, NetCoordConfig, NetCoordError, NetRunSummary,
    };
    use cosim_core::netsim::{NetSimError, NetSimInterface};
    use cosim_core::phys_coord::{
        run_physics_coordinator, PhysCoordConfig, PhysCoordError, PhysRunSummary, PhysicsBackend,
    };
    use cosim_core::physics::{AgentTrack, ChannelFidelity, PhysicsSimInterface, ReferencePhysics, WorldModel};
    use cosim_core::sync::InProcessLink;
    use cosim_core::wire::{ChannelData, NetworkUpdate};

    pub struct Setup {
        pub window_ns: u64,
        pub duration_ns: u64,
        pub fidelity: ChannelFidelity,
        pub addresses: AddressMap,
        pub expiry_windows: u64,
        pub seed: u64,
    }

    impl Setup {
        pub fn new(agents: u32, window_ns: u64, duration_ns: u64) -> Self {
            Setup {
                window_ns,
                duration_ns,
                fidelity: ChannelFidelity::LosNlos,
                addresses: super::address_map(agents),
                expiry_windows: 30_000,
                seed: 1,
            }
        }

        pub fn physics_config(&self) -> PhysCoordConfig {
            PhysCoordConfig {
                window_ns: self.window_ns,
                duration_ns: self.duration_ns,
                substeps_per_window: 1,
                fidelity: self.fidelity,
                backend: PhysicsBackend::Reference,
                agent_address_map: self.addresses.clone(),
            }
        }

        pub fn network_config(&self) -> NetCoordConfig {
            NetCoordConfig {
                window_ns: self.window_ns,
                duration_ns: self.duration_ns,
                agent_address_map: self.addresses.clone(),
                expiry_windows: self.expiry_windows,
                seed: self.seed,
            }
        }
    }

    pub type Outcome = (Result<PhysRunSummary, PhysCoordError>, Result<NetRunSummary, NetCoordError>);

    /// Both coordinators over an in-process link; physics on a second
    /// thread.
    pub fn run_with<P, N, B, A>(setup: &Setup, physics: &mut P, netsim: &mut N, backend: &mut B, app: &mut A) -> Outcome
    where
        P: PhysicsSimInterface + Send + ?Sized,
        N: NetSimInterface + ?Sized,
        B: CaptureBackend + ?Sized,
        A: Application + ?Sized,
    {
        let (mut a, mut b) = InProcessLink::pair();
        let pcfg = setup.physics_config();
        let ncfg = setup.network_config();
        // Both links outlive both sides, so neither sees its peer vanish
        // before the trailing BEGIN.
        let a = &mut a;
        std::thread::scope(|s| {
            let phys = s.spawn(move || run_physics_coordinator(&pcfg, physics, a));
            let net = run_network_coordinator(&ncfg, &mut b, netsim, backend, app);
            (phys.join().unwrap(), net)
        })
    }

    pub fn run<N, B, A>(
        setup: &Setup,
        world: WorldModel,
        tracks: Vec<AgentTrack>,
        netsim: &mut N,
        backend: &mut B,
        app: &mut A,
    ) -> (PhysRunSummary, NetRunSummary)
    where
        N: NetSimInterface + ?Sized,
        B: CaptureBackend + ?Sized,
        A: Application + ?Sized,
    {
        let mut physics = ReferencePhysics::new(Arc::new(world), tracks).unwrap();
        let (p, n) = run_with(setup, &mut physics, netsim, backend, app);
        (p.unwrap(), n.unwrap())
    }

    /// Wraps a simulator and records everything crossing its interface.
    /// With `force_ber` set, every clearance carries that BER instead.
    pub struct Recorder<N> {
        pub inner: N,
        pub channels: Vec<ChannelData>,
        pub manifests: Vec<NetworkUpdate>,
        pub clearances: Vec<NetworkUpdate>,
        pub force_ber: Option<f64>,
    }

    impl<N> Recorder<N> {
        pub fn new(inner: N) -> Self {
            Recorder {
                inner,
                channels: Vec::new(),
                manifests: Vec::new(),
                clearances: Vec::new(),
                force_ber: None,
            }
        }
    }

    impl<N: NetSimInterface> NetSimInterface for Recorder<N> {
        fn apply_channel(&mut self, cd: &ChannelData) -> Result<(), NetSimError> {
            self.channels.push(cd.clone());
            self.inner.apply_channel(cd)
        }

        fn advance(&mut self, t: u64, w: u64, manifest: &NetworkUpdate) -> Result<NetworkUpdate, NetSimError> {
            self.manifests.push(manifest.clone());
            let mut out = self.inner.advance(t, w, manifest)?;
            if let Some(ber) = self.force_ber {
                out.ber.iter_mut().for_each(|b| *b = ber);
            }
            self.clearances.push(out.clone());
            Ok(out)
        }
    }
}

pub mod scenarios {
    use cosim_core::address_map::AgentAddress;
    use cosim_core::netsim::RadioParams;
    use cosim_core::physics::{Aabb, ChannelFidelity, Obstacle, WorldModel};
    use cosim_core::scenario::{FlowConfig, MetricsConfig, ScenarioConfig};

    use super::{addr, static_track};

    /// Two static agents `d` meters apart with `walls` thin boxes of
    /// `wall_db` each across the line between them, and one greedy flow
    /// from agent 0 to agent 1.
    pub fn static_pair(d: f64, walls: usize, wall_db: f64, duration_ns: u64, payload: usize) -> ScenarioConfig {
        let y = 50.0;
        let z = 2.0;
        let obstacles = (0..walls)
            .map(|k| {
                let x = 10.0 + d * (k as f64 + 1.0) / (walls as f64 + 1.0);
                Obstacle {
                    min: [x - 0.1, y - 5.0, 0.0],
                    max: [x + 0.1, y + 5.0, 10.0],
                    penetration_loss: wall_db,
                }
            })
            .collect();
        let mut flow = FlowConfig::new(addr(0), addr(1));
        flow.payload_size = payload;
        ScenarioConfig {
            window_ns: 1_000_000,
            duration_ns,
            seed: 7,
            substeps_per_window: 1,
            expiry_windows: 30_000,
            fidelity: ChannelFidelity::LosNlos,
            world: WorldModel {
                bounds: Aabb::new([0.0, 0.0, 0.0], [d + 20.0, 100.0, 20.0]),
                obstacles,
            },
            tracks: vec![static_track(0, [10.0, y, z]), static_track(1, [10.0 + d, y, z])],
            agents: (0..2)
                .map(|k| AgentAddress {
                    agent_id: k,
                    address: addr(k),
                })
                .collect(),
            radio: RadioParams::default(),
            flows: vec![flow],
            metrics: MetricsConfig::default(),
        }
    }

    /// Mean goodput over the whole run, bit/s.
    pub fn goodput_bps(bytes: u64, duration_ns: u64) -> f64 {
        bytes as f64 * 8.0 / (duration_ns as f64 * 1e-9)
    }
}
