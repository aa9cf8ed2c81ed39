//! Newline-delimited JSON messages exchanged with seats.
//!
//! Every message is one object `{"type", "session", "player", "payload"}`;
//! `payload` depends on `type`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{PlayerId, Role, Side};
use crate::sim::PolicySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(flatten)]
    pub body: WireBody,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub session: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player: Option<PlayerId>,
}

impl WireMessage {
    pub fn new(body: WireBody) -> Self {
        WireMessage { body, session: String::new(), player: None }
    }

    pub fn to(session: &str, player: PlayerId, body: WireBody) -> Self {
        WireMessage { body, session: session.to_string(), player: Some(player) }
    }

    pub fn error(reason: impl Into<String>) -> Self {
        Self::new(WireBody::Error { reason: reason.into() })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NightKind {
    Divine,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePayload {
    pub phase: String,
    pub day: u8,
    pub alive: Vec<PlayerId>,
    pub you: PlayerId,
    pub your_role: Role,
    /// The recipient's viewpoint lines, header excluded.
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatToken {
    pub player: PlayerId,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum WireBody {
    Join { token: String },
    State(StatePayload),
    Talk { text: String },
    Over {},
    Vote { target: PlayerId },
    NightAction { kind: NightKind, target: PlayerId },
    GameEnd { winner: Side },
    Error { reason: String },
    /// Opens a session; answered with `created`.
    Create {
        seats: Vec<SeatKind>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Created { tokens: Vec<SeatToken> },
}

/// Who occupies a seat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SeatKind {
    Human,
    Bot(PolicySpec),
}

impl fmt::Display for SeatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeatKind::Human => f.write_str("human"),
            SeatKind::Bot(p) => p.fmt(f),
        }
    }
}

impl FromStr for SeatKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "human" {
            Ok(SeatKind::Human)
        } else {
            s.parse().map(SeatKind::Bot)
        }
    }
}

impl TryFrom<String> for SeatKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<SeatKind> for String {
    fn from(k: SeatKind) -> String {
        k.to_string()
    }
}
