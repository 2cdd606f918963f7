//! Lockstep co-simulation of a robot world simulator and a packet-level
//! network simulator.

pub mod address_map;
pub mod net_coord;
pub mod netsim;
pub mod phys_coord;
pub mod physics;
pub mod scenario;
pub mod sync;
pub mod wire;
