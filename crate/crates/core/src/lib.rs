//! Five-player text-chat Werewolf: rules engine, canonical logs, viewpoint
//! masking and augmentation, a pluggable win-probability oracle, the
//! oracle-driven agent, a multi-session game server and an evaluation
//! harness.

pub mod agent;
pub mod augment;
pub mod engine;
pub mod eval;
pub mod logfmt;
pub mod oracle;
pub mod replay;
pub mod server;
pub mod sim;

pub use engine::{Event, EventKind, GameConfig, GameState, Phase, PlayerId, Role, Side};
pub use logfmt::{GameRecord, ViewpointLog};
