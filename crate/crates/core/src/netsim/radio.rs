//! Link budget, rate selection and bit error model.

use serde::{Deserialize, Serialize};

use super::NetSimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McsEntry {
    pub snr_threshold_db: f64,
    pub phy_rate_bps: u64,
}

const fn mcs(snr_threshold_db: f64, phy_rate_bps: u64) -> McsEntry {
    McsEntry {
        snr_threshold_db,
        phy_rate_bps,
    }
}

pub const DEFAULT_MCS_TABLE: [McsEntry; 8] = [
    mcs(5.0, 6_500_000),
    mcs(8.0, 13_000_000),
    mcs(11.0, 19_500_000),
    mcs(14.0, 26_000_000),
    mcs(17.0, 39_000_000),
    mcs(20.0, 52_000_000),
    mcs(23.0, 58_500_000),
    mcs(26.0, 65_000_000),
];

pub const MIN_BER: f64 = 1e-9;
pub const MAX_BER: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub noise_floor_dbm: f64,
    /// Path loss at the reference distance, dB.
    pub pl0_db: f64,
    pub ref_distance_m: f64,
    pub path_loss_exponent: f64,
    pub per_packet_overhead_ns: u64,
    /// Ascending by threshold and rate.
    pub mcs_table: Vec<McsEntry>,
    /// BER when the SNR sits exactly on the selected threshold.
    pub ber_at_threshold: f64,
    /// dB of SNR margin per tenfold BER reduction.
    pub ber_decade_per_db: f64,
    /// Waiting packets per source node.
    pub queue_capacity: usize,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            tx_power_dbm: 20.0,
            noise_floor_dbm: -90.0,
            pl0_db: 40.0,
            ref_distance_m: 1.0,
            path_loss_exponent: 2.4,
            per_packet_overhead_ns: 200_000,
            mcs_table: DEFAULT_MCS_TABLE.to_vec(),
            ber_at_threshold: 1e-2,
            ber_decade_per_db: 3.0,
            queue_capacity: 100,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), NetSimError> {
        let bad = |why: String| Err(NetSimError::InvalidParams(why));
        let finite = [
            ("tx_power_dbm", self.tx_power_dbm),
            ("noise_floor_dbm", self.noise_floor_dbm),
            ("pl0_db", self.pl0_db),
            ("path_loss_exponent", self.path_loss_exponent),
        ];
        if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{name} = {v} is not finite"));
        }
        if !(self.ref_distance_m.is_finite() && self.ref_distance_m > 0.0) {
            return bad(format!("ref_distance_m = {} must be positive", self.ref_distance_m));
        }
        if self.path_loss_exponent < 0.0 {
            return bad(format!("path_loss_exponent = {} is negative", self.path_loss_exponent));
        }
        if self.mcs_table.is_empty() {
            return bad("mcs_table is empty".into());
        }
        if let Some(e) = self.mcs_table.iter().find(|e| e.phy_rate_bps == 0 || !e.snr_threshold_db.is_finite()) {
            return bad(format!("mcs entry {e:?} needs a finite threshold and a positive rate"));
        }
        for w in self.mcs_table.windows(2) {
            if w[1].snr_threshold_db <= w[0].snr_threshold_db {
                return bad("mcs_table thresholds must be strictly increasing".into());
            }
            if w[1].phy_rate_bps <= w[0].phy_rate_bps {
                return bad("mcs_table rates must be strictly increasing".into());
            }
        }
        if !(self.ber_at_threshold > 0.0 && self.ber_at_threshold <= MAX_BER) {
            return bad(format!("ber_at_threshold = {} outside (0, 0.5]", self.ber_at_threshold));
        }
        if !(self.ber_decade_per_db.is_finite() && self.ber_decade_per_db > 0.0) {
            return bad(format!("ber_decade_per_db = {} must be positive", self.ber_decade_per_db));
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be at least 1".into());
        }
        Ok(())
    }

    /// Log-distance path loss plus wall loss. Distances inside the
    /// reference distance are clamped to it.
    pub fn path_loss_db(&self, distance_m: f64, wall_loss_db: f64) -> f64 {
        let d = distance_m.max(self.ref_distance_m);
        self.pl0_db + 10.0 * self.path_loss_exponent * (d / self.ref_distance_m).log10() + wall_loss_db
    }

    pub fn snr_db(&self, path_loss_db: f64) -> f64 {
        self.tx_power_dbm - path_loss_db - self.noise_floor_dbm
    }

    /// Fastest entry whose threshold the SNR meets.
    pub fn select_mcs(&self, snr_db: f64) -> Option<&McsEntry> {
        self.mcs_table.iter().rev().find(|e| e.snr_threshold_db <= snr_db)
    }

    pub fn ber(&self, snr_db: f64, mcs: Option<&McsEntry>) -> f64 {
        match mcs {
            None => MAX_BER,
            Some(m) => {
                let margin = snr_db - m.snr_threshold_db;
                (self.ber_at_threshold * 10f64.powf(-margin / self.ber_decade_per_db)).clamp(MIN_BER, MAX_BER)
            }
        }
    }

    /// Link state for a pair at `distance_m` behind `wall_loss_db` of walls.
    pub fn link_state(&self, pair: (u32, u32), distance_m: f64, wall_loss_db: f64) -> LinkState {
        let path_loss_db = self.path_loss_db(distance_m, wall_loss_db);
        let snr_db = self.snr_db(path_loss_db);
        let selected = self.select_mcs(snr_db);
        LinkState {
            pair,
            distance_m,
            wall_loss_db,
            path_loss_db,
            snr_db,
            phy_rate_bps: selected.map(|m| m.phy_rate_bps),
            ber: self.ber(snr_db, selected),
        }
    }

    /// Airtime of a `len`-byte packet at `rate_bps`, rounded up to whole ns.
    pub fn service_time_ns(&self, len: u32, rate_bps: u64) -> u64 {
        let bits_ns = 8u128 * u128::from(len) * 1_000_000_000;
        let rate = u128::from(rate_bps);
        self.per_packet_overhead_ns + bits_ns.div_ceil(rate) as u64
    }
}

/// Radio state of one agent pair. `phy_rate_bps == None` means the link
/// is down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub pair: (u32, u32),
    pub distance_m: f64,
    pub wall_loss_db: f64,
    pub path_loss_db: f64,
    pub snr_db: f64,
    pub phy_rate_bps: Option<u64>,
    pub ber: f64,
}

impl LinkState {
    /// A pair with no usable path regardless of geometry.
    pub fn down(pair: (u32, u32), distance_m: f64) -> Self {
        LinkState {
            pair,
            distance_m,
            wall_loss_db: 0.0,
            path_loss_db: f64::INFINITY,
            snr_db: f64::NEG_INFINITY,
            phy_rate_bps: None,
            ber: MAX_BER,
        }
    }

    pub fn is_up(&self) -> bool {
        self.phy_rate_bps.is_some()
    }
}
