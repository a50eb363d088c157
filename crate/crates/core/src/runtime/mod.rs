//! Networked execution: one daemon per physical node exchanging
//! activations over TCP.

mod chaos;
mod coordinator;
mod daemon;
mod heartbeat;
pub mod wire;

pub use chaos::{ChaosAction, ChaosEvent, ChaosPlan};
pub use coordinator::{
    compare_with_simulator, run_pipeline, Equivalence, InstanceRecord, Launcher, ProcessLauncher, RuntimeOptions,
    ThreadLauncher, Transcript,
};
pub use daemon::{compute_round, serve_node, NodePlan, StopHandle, Timeouts, COORDINATOR_ID};
pub use heartbeat::{HeartbeatMonitor, PeerState, PeerStatus};
pub use wire::{MsgType, WireError, WireMessage};
