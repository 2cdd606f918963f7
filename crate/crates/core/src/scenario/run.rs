//! End-to-end runs: both coordinators on two threads over an in-process
//! link, reference simulators, in-process capture and the configured flows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::json;

use crate::net_coord::{
    run_network_coordinator, InProcessBackend, NetCoordConfig, NetCoordError, NetRunSummary,
};
use crate::netsim::{NetSimError, NetSimInterface, ReferenceNetSim};
use crate::phys_coord::{run_physics_coordinator, PhysCoordConfig, PhysCoordError, PhysRunSummary, PhysicsBackend};
use crate::physics::{PhysicsError, ReferencePhysics};
use crate::sync::{InProcessLink, LinkError, SyncError};
use crate::wire::{ChannelData, NetworkUpdate};

use super::config::{ConfigError, ScenarioConfig};
use super::flow::{DeliveryRecord, FlowCounters, FlowSet};
use super::metrics::{assess, collect_metrics, ChannelSample, HistBin, MetricsSeries, Phenomenology};
use super::plot;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Physics(#[from] PhysCoordError),
    #[error(transparent)]
    Network(#[from] NetCoordError),
    #[error("{0} thread panicked")]
    Panic(&'static str),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    NetSim(#[from] NetSimError),
}

impl ScenarioError {
    /// True for failures of the lockstep run itself, as opposed to a bad
    /// scenario.
    pub fn is_runtime(&self) -> bool {
        !matches!(self, ScenarioError::Config(_) | ScenarioError::Setup(_))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub plots: bool,
}

/// Reference network simulator that also records, per window, the
/// channel between the first flow's endpoints.
pub struct TracingNetSim {
    inner: ReferenceNetSim,
    pair: Option<(u32, u32)>,
    current: ChannelSample,
    trace: Vec<ChannelSample>,
}

impl TracingNetSim {
    pub fn new(inner: ReferenceNetSim, pair: Option<(u32, u32)>) -> Self {
        TracingNetSim {
            inner,
            pair,
            current: ChannelSample {
                los: false,
                distance_m: f64::NAN,
                walls: 0,
                snr_db: f64::NEG_INFINITY,
                phy_rate_bps: None,
            },
            trace: Vec::new(),
        }
    }

    pub fn inner(&self) -> &ReferenceNetSim {
        &self.inner
    }

    /// One entry per advanced window.
    pub fn trace(&self) -> &[ChannelSample] {
        &self.trace
    }
}

impl NetSimInterface for TracingNetSim {
    fn apply_channel(&mut self, cd: &ChannelData) -> Result<(), NetSimError> {
        self.inner.apply_channel_update(cd)?;
        if let Some((a, b)) = self.pair {
            if let (Some(details), Some(link)) = (cd.pair(a, b), self.inner.link_state(a, b)) {
                self.current = ChannelSample {
                    los: details.los,
                    distance_m: link.distance_m,
                    walls: details.num_hops.first().copied().unwrap_or(0),
                    snr_db: link.snr_db,
                    phy_rate_bps: link.phy_rate_bps,
                };
            }
        }
        Ok(())
    }

    fn advance(&mut self, window_start: u64, window: u64, manifest: &NetworkUpdate) -> Result<NetworkUpdate, NetSimError> {
        self.trace.push(self.current);
        self.inner.advance_window(window_start, window, manifest)
    }
}

/// CSV and JSON outputs, kept in memory so runs can be compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub rate_csv: String,
    pub delay_csv: String,
    pub rate_hist_csv: String,
    pub delay_hist_csv: String,
    pub scatter_csv: String,
    pub summary_json: String,
}

impl Artifacts {
    pub fn csv_files(&self) -> [(&'static str, &str); 5] {
        [
            ("rate.csv", &self.rate_csv),
            ("delay.csv", &self.delay_csv),
            ("rate_hist.csv", &self.rate_hist_csv),
            ("delay_hist.csv", &self.delay_hist_csv),
            ("scatter.csv", &self.scatter_csv),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub metrics: MetricsSeries,
    /// Channel state at the start of each metrics sample.
    pub channel: Vec<ChannelSample>,
    pub phenomenology: Phenomenology,
    pub physics: PhysRunSummary,
    pub network: NetRunSummary,
    pub flows: Vec<FlowCounters>,
    pub ledger: Vec<DeliveryRecord>,
    pub artifacts: Artifacts,
    pub wall: Duration,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn hist_csv(bins: &[HistBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,mass,density,kde\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{},{},{}", num(b.lo), num(b.hi), num(b.mass), num(b.density), num(b.kde));
    }
    s
}

pub const COLUMNS: [(&str, &str); 5] = [
    (
        "rate.csv",
        "time_s: sample start; rate_bps: goodput in the sample; rate_smoothed_bps: centered moving average; \
         los: 1 if the first flow's endpoints see each other; distance_m; walls: boxes crossed",
    ),
    (
        "delay.csv",
        "time_s: sample start; delay_s: mean first-send to delivery delay of packets delivered in the sample \
         (blank if none); delay_smoothed_s: centered moving average",
    ),
    (
        "rate_hist.csv",
        "histogram of rate_smoothed_bps: bin_lo, bin_hi, mass (sums to 1), density (mass/width), kde at bin center",
    ),
    (
        "delay_hist.csv",
        "histogram of per-packet delay in seconds: bin_lo, bin_hi, mass, density, kde",
    ),
    (
        "scatter.csv",
        "samples with a defined smoothed delay: time_s, rate_bps, rate_smoothed_bps, delay_smoothed_s",
    ),
];

fn build_csvs(m: &MetricsSeries, channel: &[ChannelSample]) -> [String; 5] {
    let mut rate = String::from("time_s,rate_bps,rate_smoothed_bps,los,distance_m,walls\n");
    let mut delay = String::from("time_s,delay_s,delay_smoothed_s\n");
    let mut scatter = String::from("time_s,rate_bps,rate_smoothed_bps,delay_smoothed_s\n");
    for k in 0..m.rate_bps.len() {
        let t = m.sample_time_s(k);
        let c = channel.get(k);
        let _ = writeln!(
            rate,
            "{t},{},{},{},{},{}",
            num(m.rate_bps[k]),
            num(m.rate_smoothed_bps[k]),
            c.map_or(String::new(), |c| u8::from(c.los).to_string()),
            c.map_or(String::new(), |c| num(c.distance_m)),
            c.map_or(String::new(), |c| c.walls.to_string()),
        );
        let _ = writeln!(delay, "{t},{},{}", num(m.delay_s[k]), num(m.delay_smoothed_s[k]));
        if m.delay_smoothed_s[k].is_finite() {
            let _ = writeln!(
                scatter,
                "{t},{},{},{}",
                num(m.rate_bps[k]),
                num(m.rate_smoothed_bps[k]),
                num(m.delay_smoothed_s[k])
            );
        }
    }
    [rate, delay, hist_csv(&m.rate_hist), hist_csv(&m.delay_hist), scatter]
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), ScenarioError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| ScenarioError::Io { path, source })
}

fn is_transport(e: &SyncError) -> bool {
    matches!(e, SyncError::Transport(LinkError::Closed))
}

/// Picks the error that explains the failure: a peer hanging up is
/// usually the echo of the other side's real error.
fn root_cause(
    phys: Result<PhysRunSummary, ScenarioError>,
    net: Result<NetRunSummary, ScenarioError>,
) -> Result<(PhysRunSummary, NetRunSummary), ScenarioError> {
    match (phys, net) {
        (Ok(p), Ok(n)) => Ok((p, n)),
        (Err(e), Ok(_)) | (Ok(_), Err(e)) => Err(e),
        (Err(pe), Err(ne)) => {
            let phys_echo = matches!(&pe, ScenarioError::Physics(PhysCoordError::Sync { source, .. }) if is_transport(source));
            Err(if phys_echo { ne } else { pe })
        }
    }
}

pub fn run_scenario(config: &ScenarioConfig, options: &RunOptions) -> Result<ScenarioOutcome, ScenarioError> {
    let started = Instant::now();
    config.validate()?;
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let result = execute(config, options, started);
    if let (Err(e), Some(dir)) = (&result, &options.out_dir) {
        let partial = json!({
            "status": "aborted",
            "error": e.to_string(),
            "seed": config.seed,
            "config": config,
        });
        let text = serde_json::to_string_pretty(&partial).unwrap_or_default();
        write_file(dir, "run_summary.json", &text)?;
    }
    result
}

fn execute(config: &ScenarioConfig, options: &RunOptions, started: Instant) -> Result<ScenarioOutcome, ScenarioError> {
    let map = config.address_map()?;
    let world = Arc::new(config.world.clone());
    let mut physics = ReferencePhysics::new(world, config.tracks.clone()).map_err(SetupError::from)?;
    let netsim = ReferenceNetSim::new(config.radio.clone(), map.clone()).map_err(SetupError::from)?;
    let pair = config
        .flows
        .first()
        .and_then(|f| Some((map.agent(f.src)?, map.agent(f.dst)?)));
    let mut netsim = TracingNetSim::new(netsim, pair);
    let mut backend = InProcessBackend::new(map.addresses());
    let mut flows = FlowSet::new(&config.flows, &backend).expect("flow addresses validated");

    let phys_config = PhysCoordConfig {
        window_ns: config.window_ns,
        duration_ns: config.duration_ns,
        substeps_per_window: config.substeps_per_window,
        fidelity: config.fidelity,
        backend: PhysicsBackend::Reference,
        agent_address_map: map.clone(),
    };
    let net_config = NetCoordConfig {
        window_ns: config.window_ns,
        duration_ns: config.duration_ns,
        agent_address_map: map,
        expiry_windows: config.expiry_windows,
        seed: config.seed,
    };
    let (mut phys_link, mut net_link) = InProcessLink::pair();
    let (phys, net) = std::thread::scope(|s| {
        let handle = s.spawn(|| run_physics_coordinator(&phys_config, &mut physics, &mut phys_link));
        let net = run_network_coordinator(&net_config, &mut net_link, &mut netsim, &mut backend, &mut flows)
            .map_err(ScenarioError::from);
        let phys = match handle.join() {
            Ok(r) => r.map_err(ScenarioError::from),
            Err(_) => Err(ScenarioError::Panic("physics coordinator")),
        };
        (phys, net)
    });
    let (physics_summary, network_summary) = root_cause(phys, net)?;

    let metrics = collect_metrics(flows.ledger(), &config.metrics, config.duration_ns);
    let per_sample = (config.metrics.sample_period_ns / config.window_ns) as usize;
    let channel: Vec<ChannelSample> = netsim.trace().iter().step_by(per_sample).copied().collect();
    let phenomenology = assess(&metrics, &channel);
    let [rate_csv, delay_csv, rate_hist_csv, delay_hist_csv, scatter_csv] = build_csvs(&metrics, &channel);
    let unattributed = flows.unattributed_corrupt();
    let (flow_states, ledger) = flows.into_parts();
    let flow_counters: Vec<FlowCounters> = flow_states.into_iter().map(|f| f.counters).collect();
    let wall = started.elapsed();

    let n = &network_summary.counters;
    let sim = netsim.inner().counters();
    let summary = json!({
        "status": "completed",
        "seed": config.seed,
        "windows": network_summary.windows,
        "wall_time_s": wall.as_secs_f64(),
        "physics": {
            "windows": physics_summary.windows,
            "agents": physics_summary.agents,
            "extractions": physics_summary.extractions,
            "frames_sent": physics_summary.frames_sent,
            "frames_received": physics_summary.frames_received,
            "mean_window_wall_s": physics_summary.mean_window_wall.as_secs_f64(),
        },
        "network": {
            "windows": network_summary.windows,
            "frames_sent": network_summary.frames_sent,
            "frames_received": network_summary.frames_received,
            "captured": n.captured,
            "captured_bytes": n.captured_bytes,
            "rejected": n.rejected,
            "released": n.released,
            "released_bytes": n.released_bytes,
            "expired": n.expired,
            "late_clearances": n.late_clearances,
            "corrupted_packets": n.corrupted,
            "flipped_bits": n.flipped_bits,
            "still_held": network_summary.still_held,
            "released_digest": format!("{:08x}", network_summary.released_digest),
        },
        "netsim": {
            "enqueued": sim.enqueued,
            "dropped": sim.dropped,
            "cleared": sim.cleared,
        },
        "flows": flow_counters,
        "unattributed_corrupt": unattributed,
        "delivered_packets": ledger.len(),
        "phenomenology": phenomenology,
        "columns": COLUMNS.iter().map(|(f, d)| (f.to_string(), json!(d))).collect::<serde_json::Map<_, _>>(),
        "config": config,
    });
    let artifacts = Artifacts {
        rate_csv,
        delay_csv,
        rate_hist_csv,
        delay_hist_csv,
        scatter_csv,
        summary_json: serde_json::to_string_pretty(&summary).expect("summary serializes"),
    };

    if let Some(dir) = &options.out_dir {
        for (name, text) in artifacts.csv_files() {
            write_file(dir, name, text)?;
        }
        write_file(dir, "run_summary.json", &artifacts.summary_json)?;
        if options.plots {
            for (name, svg) in plot::render_all(&metrics) {
                write_file(dir, name, &svg)?;
            }
        }
    }

    Ok(ScenarioOutcome {
        metrics,
        channel,
        phenomenology,
        physics: physics_summary,
        network: network_summary,
        flows: flow_counters,
        ledger,
        artifacts,
        wall,
    })
}
