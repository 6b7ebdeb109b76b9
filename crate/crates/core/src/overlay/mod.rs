//! Structured ring overlay: links, greedy routing, passive reflection,
//! ConnectToMe, hole punching and tunnels.

mod node;
mod punch;
mod table;
mod wire;

pub use node::{OverlayConfig, OverlayEvent, OverlayNode, OverlayStats, Transmit};
pub use punch::{AttemptKind, PunchAttempt, PunchState};
pub use table::{closeness, greedy_next_hop, k_nearest, Link, LinkClass, LinkPath, LinkTable, NextHop};
pub use wire::{
    ConnectToMe, CtmKind, DeliveryMode, Message, PayloadProtocol, RoutedPacket, DEFAULT_TTL, NEIGHBOR_FORWARDABLE,
};
