//! Wire format of room events and the chat command grammar.
//!
//! Events travel as UTF-8, newline-delimited JSON objects:
//!
//! ```text
//! {"kind":"chat","user_id":"u1","display_name":"Ann","ts_ms":0,"text":"feed fish"}
//! {"kind":"gift","user_id":"u2","display_name":"Bo","ts_ms":500,"amount_cny":"9.99"}
//! ```
//!
//! The same format is used on the ingest socket and in replay log files.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// A non-negative amount of CNY held as integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cny(u64);

impl Cny {
    /// The smallest gift that grants an umbrella token.
    pub const UMBRELLA_TIER: Cny = Cny(1000);
    pub const ZERO: Cny = Cny(0);

    pub const fn from_cents(cents: u64) -> Self {
        Cny(cents)
    }

    pub const fn cents(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Cny {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AmountError {
    #[error("amount is negative")]
    Negative,
    #[error("amount is not a decimal with at most two fraction digits")]
    Invalid,
}

impl FromStr for Cny {
    type Err = AmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix('-') {
            // "-0" and "-0.00" are still negative input.
            return if rest.parse::<Cny>().is_ok() {
                Err(AmountError::Negative)
            } else {
                Err(AmountError::Invalid)
            };
        }
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        let digits = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
        if whole.is_empty() || !digits(whole) || !digits(frac) || frac.len() > 2 {
            return Err(AmountError::Invalid);
        }
        if s.ends_with('.') {
            return Err(AmountError::Invalid);
        }
        let whole: u64 = whole.parse().map_err(|_| AmountError::Invalid)?;
        let frac_cents: u64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<u64>().unwrap() * 10,
            _ => frac.parse::<u64>().unwrap(),
        };
        whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(frac_cents))
            .map(Cny)
            .ok_or(AmountError::Invalid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventPayload {
    Chat { text: String },
    Gift { amount: Cny },
}

/// A timestamped chat or gift action by a named user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoomEvent {
    pub user_id: String,
    pub display_name: String,
    /// Milliseconds since session start.
    pub ts_ms: u64,
    pub payload: EventPayload,
}

impl RoomEvent {
    pub fn chat(user_id: &str, display_name: &str, ts_ms: u64, text: &str) -> Self {
        Self {
            user_id: user_id.to_owned(),
            display_name: display_name.to_owned(),
            ts_ms,
            payload: EventPayload::Chat { text: text.to_owned() },
        }
    }

    pub fn gift(user_id: &str, display_name: &str, ts_ms: u64, amount: Cny) -> Self {
        Self {
            user_id: user_id.to_owned(),
            display_name: display_name.to_owned(),
            ts_ms,
            payload: EventPayload::Gift { amount },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("bad timestamp")]
    BadTimestamp,
    #[error("negative gift amount")]
    NegativeAmount,
}

#[derive(Serialize)]
struct WireEvent<'a> {
    kind: &'static str,
    user_id: &'a str,
    display_name: &'a str,
    ts_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    amount_cny: Option<String>,
}

/// Serializes an event as one wire-format line (without the trailing newline).
pub fn encode_event(event: &RoomEvent) -> String {
    let (kind, text, amount_cny) = match &event.payload {
        EventPayload::Chat { text } => ("chat", Some(text.as_str()), None),
        EventPayload::Gift { amount } => ("gift", None, Some(amount.to_string())),
    };
    serde_json::to_string(&WireEvent {
        kind,
        user_id: &event.user_id,
        display_name: &event.display_name,
        ts_ms: event.ts_ms,
        text,
        amount_cny,
    })
    .expect("wire event serializes")
}

/// Decodes one wire-format line. Unknown fields are ignored.
pub fn decode_event(line: &[u8]) -> Result<RoomEvent, DecodeError> {
    let obj = decode_object(line)?;
    decode_fields(&obj)
}

pub(crate) fn decode_object(line: &[u8]) -> Result<Map<String, Value>, DecodeError> {
    let text = std::str::from_utf8(line).map_err(|_| DecodeError::Malformed("not UTF-8".into()))?;
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(DecodeError::Malformed("not a JSON object".into())),
        Err(e) => Err(DecodeError::Malformed(e.to_string())),
    }
}

pub(crate) fn decode_fields(obj: &Map<String, Value>) -> Result<RoomEvent, DecodeError> {
    let kind = match obj.get("kind") {
        Some(Value::String(k)) if k == "chat" || k == "gift" => k.as_str(),
        Some(_) => return Err(DecodeError::Malformed("unknown kind".into())),
        None => return Err(DecodeError::MissingField("kind")),
    };
    let ts_ms = match obj.get("ts_ms") {
        Some(Value::Number(n)) => n.as_u64().ok_or(DecodeError::BadTimestamp)?,
        Some(_) => return Err(DecodeError::BadTimestamp),
        None => return Err(DecodeError::MissingField("ts_ms")),
    };
    let string_field = |name: &'static str| match obj.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(DecodeError::Malformed(format!("`{name}` must be a string"))),
        None => Err(DecodeError::MissingField(name)),
    };
    let user_id = string_field("user_id")?;
    let display_name = string_field("display_name")?;
    let payload = if kind == "chat" {
        if obj.contains_key("amount_cny") {
            return Err(DecodeError::Malformed("chat event carries amount_cny".into()));
        }
        EventPayload::Chat { text: string_field("text")? }
    } else {
        if obj.contains_key("text") {
            return Err(DecodeError::Malformed("gift event carries text".into()));
        }
        let amount = string_field("amount_cny")?;
        let amount = amount.parse::<Cny>().map_err(|e| match e {
            AmountError::Negative => DecodeError::NegativeAmount,
            AmountError::Invalid => DecodeError::Malformed(format!("bad amount `{amount}`")),
        })?;
        EventPayload::Gift { amount }
    };
    Ok(RoomEvent { user_id, display_name, ts_ms, payload })
}

/// Orders events by `(ts_ms, arrival index)`; the input order is the arrival order.
pub fn sequence_events(events: Vec<RoomEvent>) -> Vec<RoomEvent> {
    let mut indexed: Vec<(usize, RoomEvent)> = events.into_iter().enumerate().collect();
    indexed.sort_by_key(|(i, e)| (e.ts_ms, *i));
    indexed.into_iter().map(|(_, e)| e).collect()
}

/// The parsed intent of one chat line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "command", content = "text", rename_all = "snake_case")]
pub enum Command {
    ReleaseLotus,
    DashLotus,
    FeedFish,
    Story(String),
    Plain(String),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ReleaseLotus => "release_lotus",
            Command::DashLotus => "dash_lotus",
            Command::FeedFish => "feed_fish",
            Command::Story(_) => "story",
            Command::Plain(_) => "plain",
        }
    }
}

/// Trigger phrases per command. Phrases are compared against the whole comment after
/// trimming and lowercasing, so they are stored lowercased.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandTable {
    pub release_lotus: Vec<String>,
    pub dash_lotus: Vec<String>,
    pub feed_fish: Vec<String>,
    pub story_hashtag: String,
}

impl Default for CommandTable {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            release_lotus: owned(&["release my lotus", "放莲灯"]),
            dash_lotus: owned(&["dash my lotus", "莲灯冲刺"]),
            feed_fish: owned(&["feed fish", "喂鱼"]),
            story_hashtag: "#MyStory".to_owned(),
        }
    }
}

impl CommandTable {
    /// Only the English phrases.
    pub fn english() -> Self {
        let owned = |s: &str| vec![s.to_owned()];
        Self {
            release_lotus: owned("release my lotus"),
            dash_lotus: owned("dash my lotus"),
            feed_fish: owned("feed fish"),
            story_hashtag: "#MyStory".to_owned(),
        }
    }

    /// Rows for an on-screen instructions panel: (trigger, what it does).
    pub fn instructions(&self) -> Vec<(String, &'static str)> {
        let mut rows = Vec::new();
        for p in &self.release_lotus {
            rows.push((p.clone(), "release your lotus on the lake"));
        }
        for p in &self.dash_lotus {
            rows.push((p.clone(), "make your lotus dash"));
        }
        for p in &self.feed_fish {
            rows.push((p.clone(), "drop fish food on the lake"));
        }
        rows.push((
            format!("{} <your story>", self.story_hashtag),
            "attach a story to your umbrella (after a 10 CNY gift)",
        ));
        rows
    }

    pub fn parse(&self, text: &str) -> Command {
        let key = text.trim().to_lowercase();
        let hit = |phrases: &[String]| phrases.iter().any(|p| p.trim().to_lowercase() == key);
        if hit(&self.release_lotus) {
            return Command::ReleaseLotus;
        }
        if hit(&self.dash_lotus) {
            return Command::DashLotus;
        }
        if hit(&self.feed_fish) {
            return Command::FeedFish;
        }
        if let Some(story) = strip_hashtag(text, &self.story_hashtag) {
            if !story.is_empty() {
                return Command::Story(story);
            }
        }
        Command::Plain(text.to_owned())
    }
}

/// Removes every case-insensitive occurrence of `tag` and trims the remainder.
/// Returns `None` when the tag does not occur.
fn strip_hashtag(text: &str, tag: &str) -> Option<String> {
    if tag.is_empty() {
        return None;
    }
    let tag_chars: Vec<char> = tag.chars().flat_map(char::to_lowercase).collect();
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut found = false;
    let mut i = 0;
    while i < chars.len() {
        if let Some(len) = match_ci(&chars[i..], &tag_chars) {
            found = true;
            i += len;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    found.then(|| out.trim().to_owned())
}

/// Length in chars of the prefix of `hay` that case-insensitively equals `needle`.
fn match_ci(hay: &[char], needle: &[char]) -> Option<usize> {
    let mut lowered = Vec::with_capacity(needle.len());
    for (consumed, c) in hay.iter().enumerate() {
        lowered.extend(c.to_lowercase());
        if lowered.len() >= needle.len() {
            return (lowered == needle).then_some(consumed + 1);
        }
        if lowered[..] != needle[..lowered.len()] {
            return None;
        }
    }
    None
}

/// Parses a chat line with the default trigger table.
pub fn parse_command(text: &str) -> Command {
    CommandTable::default().parse(text)
}
