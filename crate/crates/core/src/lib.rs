//! Service-based multi-access edge computing control plane with a
//! deterministic edge simulator.
//!
//! The crate is layered bottom-up: [`bus`] carries SBM/1 messages between
//! endpoints, [`nf`] implements the network functions, [`mano`] owns
//! templates, instances and the resource pool, [`workloads`] implements the
//! two application classes, and [`sim`] drives everything in virtual time.

pub mod bus;
pub mod mano;
pub mod nf;
pub mod sim;
pub mod time;
pub mod workloads;

pub use time::SimTime;
