//! The effect log: one canonical JSON line per simulation-visible outcome.
//!
//! Lines look like `{"tick":5400,"kind":"round_started",...}`. The SHA-256 of the
//! concatenated lines (each terminated by `\n`) is the session digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::verse::{VerseJudgment, WinEffect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    AlreadyHasLotus,
    NoLotus,
    NoToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplashPhase {
    Leap,
    Land,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    RoundStarted {
        round: usize,
        mode: String,
        duration_ms: u64,
        threshold: u32,
    },
    VerseJudged {
        user_id: String,
        verse: String,
        result: VerseJudgment,
        combo: u32,
        count: u32,
    },
    RoundWon {
        round: usize,
        effect: WinEffect,
        count: u32,
    },
    RoundLost {
        round: usize,
        count: u32,
    },
    PetalFieldUnlocked,
    Chat {
        user_id: String,
        name: String,
        text: String,
    },
    Rejected {
        user_id: String,
        command: String,
        reason: RejectReason,
    },
    LotusSpawned {
        user_id: String,
        name: String,
        entity: u64,
        x: f64,
        y: f64,
    },
    LotusDashed {
        user_id: String,
        entity: u64,
        dx: f64,
        dy: f64,
        until_ms: u64,
    },
    LotusDespawned {
        user_id: String,
        entity: u64,
    },
    Ripple {
        entity: u64,
        x: f64,
        y: f64,
    },
    FishSpawned {
        user_id: String,
        entity: u64,
        x: f64,
        y: f64,
        look: u32,
    },
    Splash {
        entity: u64,
        phase: SplashPhase,
        x: f64,
        y: f64,
    },
    FishDone {
        entity: u64,
    },
    FireworkLaunched {
        #[serde(skip_serializing_if = "Option::is_none", default)]
        user_id: Option<String>,
        tipper: String,
        entity: u64,
        x: f64,
        y: f64,
        apex_x: f64,
        apex_y: f64,
    },
    FireworkExploded {
        entity: u64,
        particles: u32,
    },
    FireworkDespawned {
        entity: u64,
    },
    TokenGranted {
        user_id: String,
        texture: u32,
        amount_cny: String,
    },
    UmbrellaSpawned {
        user_id: String,
        entity: u64,
        texture: u32,
        story: String,
        x: f64,
        y: f64,
    },
    UmbrellaDespawned {
        entity: u64,
    },
    SessionEnd {
        ticks: u64,
    },
}

impl Effect {
    /// The user an effect is addressed to, if any.
    pub fn user_id(&self) -> Option<&str> {
        match self {
            Effect::VerseJudged { user_id, .. }
            | Effect::Chat { user_id, .. }
            | Effect::Rejected { user_id, .. }
            | Effect::LotusSpawned { user_id, .. }
            | Effect::LotusDashed { user_id, .. }
            | Effect::LotusDespawned { user_id, .. }
            | Effect::FishSpawned { user_id, .. }
            | Effect::TokenGranted { user_id, .. }
            | Effect::UmbrellaSpawned { user_id, .. } => Some(user_id),
            Effect::FireworkLaunched { user_id, .. } => user_id.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub tick: u64,
    #[serde(flatten)]
    pub effect: Effect,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub late: bool,
}

impl EffectRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("effect records serialize")
    }
}

/// Rounds a coordinate to a thousandth of a pixel for the log.
pub(crate) fn r3(v: f64) -> f64 {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Append-only effect log.
#[derive(Debug, Clone, Default)]
pub struct EffectLog {
    lines: Vec<String>,
    hasher: Sha256,
}

impl EffectLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &EffectRecord) {
        let line = record.to_line();
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Hex SHA-256 over the log text.
    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.lines.iter().map(|l| l.len() + 1).sum());
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

/// Digest of an effect-log text, as produced by [`EffectLog::to_text`].
pub fn digest_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout() {
        let rec = EffectRecord {
            tick: 12,
            effect: Effect::Rejected {
                user_id: "u1".into(),
                command: "release_lotus".into(),
                reason: RejectReason::AlreadyHasLotus,
            },
            late: false,
        };
        assert_eq!(
            rec.to_line(),
            r#"{"tick":12,"kind":"rejected","user_id":"u1","command":"release_lotus","reason":"already_has_lotus"}"#
        );
        let late = EffectRecord { late: true, ..rec };
        assert!(late.to_line().ends_with(r#","late":true}"#));
        let back: EffectRecord = serde_json::from_str(&late.to_line()).unwrap();
        assert_eq!(back, late);
    }

    #[test]
    fn digest_matches_text() {
        let mut log = EffectLog::new();
        log.push(&EffectRecord { tick: 0, effect: Effect::PetalFieldUnlocked, late: false });
        log.push(&EffectRecord { tick: 3, effect: Effect::SessionEnd { ticks: 3 }, late: false });
        assert_eq!(log.digest(), digest_text(&log.to_text()));
        assert_eq!(EffectLog::new().digest(), digest_text(""));
    }

    #[test]
    fn rounding() {
        assert_eq!(r3(1.23456), 1.235);
        assert_eq!(r3(-0.0001), 0.0);
    }
}
