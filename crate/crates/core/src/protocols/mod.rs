//! Block propagation protocols, transaction gossip and PPB synchronization.

pub mod messages;
pub mod node;

pub use messages::{SizeTable, TrafficClass, WireMessage};
pub use node::{
    Action, ChainStore, CostModel, Node, NodeConfig, NodeEvent, NodeId, ProtocolKind, TimerKind,
    TraceNote,
};
