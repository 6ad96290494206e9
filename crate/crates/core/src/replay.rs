//! Offline replay of recorded event logs, and effect-trace comparison.
//!
//! An event log is wire-format NDJSON. Lines written by the live server also carry
//! `"seq_tick": N`, the tick the sequencer actually applied the event in; replay
//! honours it so late events land exactly where they did live. Lines without it are
//! applied at the tick their timestamp falls in.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::compositor::{build_render_list, encode_frame, rasterize, synthetic_background, Frame};
use crate::protocol::{decode_fields, decode_object, encode_event, DecodeError, RoomEvent};
use crate::scene::SceneConfig;
use crate::session::{tick_for_ms, PlanError, Session, SessionPlan};
use crate::sim::SimCounters;
use crate::verse::{RoundOutcome, VerseCorpus};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub event: RoomEvent,
    pub seq_tick: Option<u64>,
}

impl LogEntry {
    pub fn new(event: RoomEvent) -> Self {
        Self { event, seq_tick: None }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {error}")]
    Decode { line: usize, error: DecodeError },
    #[error("line {line}: seq_tick must be a non-negative integer")]
    BadSeqTick { line: usize },
    #[error("line {line}: seq_tick {seq_tick} precedes the event's own tick {own}")]
    SeqTickTooEarly { line: usize, seq_tick: u64, own: u64 },
    #[error("plan: {0}")]
    Plan(#[from] PlanError),
    #[error("frame: {0}")]
    Frame(String),
}

/// One wire-format line, plus `seq_tick` when known.
pub fn encode_log_entry(entry: &LogEntry) -> String {
    let mut line = encode_event(&entry.event);
    if let Some(t) = entry.seq_tick {
        line.pop();
        line.push_str(&format!(",\"seq_tick\":{t}}}"));
    }
    line
}

/// Parses an event log. Blank lines are skipped; errors carry 1-based line numbers.
pub fn read_event_log(text: &str) -> Result<Vec<LogEntry>, ReplayError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj = decode_object(raw.as_bytes()).map_err(|error| ReplayError::Decode { line, error })?;
        let event = decode_fields(&obj).map_err(|error| ReplayError::Decode { line, error })?;
        let seq_tick = match obj.get("seq_tick") {
            None => None,
            Some(Value::Number(n)) => Some(n.as_u64().ok_or(ReplayError::BadSeqTick { line })?),
            Some(_) => return Err(ReplayError::BadSeqTick { line }),
        };
        out.push(LogEntry { event, seq_tick });
    }
    Ok(out)
}

pub fn read_event_log_file(path: &Path) -> Result<Vec<LogEntry>, ReplayError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReplayError::Io { path: path.display().to_string(), source })?;
    read_event_log(&text)
}

/// An event scheduled for a tick, with its late flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scheduled {
    pub tick: u64,
    pub event: RoomEvent,
    pub late: bool,
}

/// Assigns every entry its application tick and orders the result the way the live
/// sequencer would have applied it.
pub fn schedule(entries: &[LogEntry], tick_hz: u32) -> Result<Vec<Scheduled>, ReplayError> {
    let mut out = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let own = tick_for_ms(e.event.ts_ms, tick_hz);
        let tick = match e.seq_tick {
            Some(t) if t < own => return Err(ReplayError::SeqTickTooEarly { line: i + 1, seq_tick: t, own }),
            Some(t) => t,
            None => own,
        };
        out.push(Scheduled { tick, event: e.event.clone(), late: tick > own });
    }
    out.sort_by_key(|s| (s.tick, s.event.ts_ms));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayCounters {
    pub events: u64,
    pub late_events: u64,
    pub ignored_events: u64,
    pub commands: BTreeMap<&'static str, u64>,
    pub judgments: BTreeMap<&'static str, u64>,
    pub rejections: u64,
    pub fireworks: u64,
    pub tokens_granted: u64,
    pub tokens_consumed: u64,
    pub lotuses_spawned: u64,
    pub lotuses_despawned: u64,
    pub fish: u64,
    pub umbrellas: u64,
    pub ripples: u64,
}

impl ReplayCounters {
    fn from_sim(c: &SimCounters, ignored: u64) -> Self {
        Self {
            events: c.events,
            late_events: c.late_events,
            ignored_events: ignored,
            commands: BTreeMap::from([
                ("release_lotus", c.cmd_release_lotus),
                ("dash_lotus", c.cmd_dash_lotus),
                ("feed_fish", c.cmd_feed_fish),
                ("story", c.cmd_story),
                ("plain", c.cmd_plain),
            ]),
            judgments: BTreeMap::from([
                ("accepted", c.judged_accepted),
                ("duplicate", c.judged_duplicate),
                ("not_in_corpus", c.judged_not_in_corpus),
                ("keyword_miss", c.judged_keyword_miss),
                ("theme_miss", c.judged_theme_miss),
            ]),
            rejections: c.rejections,
            fireworks: c.fireworks,
            tokens_granted: c.tokens_granted,
            tokens_consumed: c.tokens_consumed,
            lotuses_spawned: c.lotuses_spawned,
            lotuses_despawned: c.lotuses_despawned,
            fish: c.fish,
            umbrellas: c.umbrellas,
            ripples: c.ripples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub digest: String,
    pub state_digest: String,
    pub seed: u64,
    pub ticks: u64,
    pub effect_lines: usize,
    pub counters: ReplayCounters,
    pub rounds: Vec<RoundOutcome>,
    /// Excluded from equality checks in practice; everything else is deterministic.
    pub wall_time_ms: u64,
    pub frames_written: u64,
}

impl ReplayReport {
    pub fn from_session(session: &Session, wall_time_ms: u64) -> Self {
        let sim = session.sim();
        let mut rounds = sim.verse.finished.clone();
        if let Some(r) = &sim.verse.current {
            rounds.push(r.outcome);
        }
        Self {
            digest: session.digest(),
            state_digest: sim.digest(),
            seed: sim.seed(),
            ticks: session.tick(),
            effect_lines: session.log().len(),
            counters: ReplayCounters::from_sim(&sim.counters, session.ignored_events()),
            rounds,
            wall_time_ms,
            frames_written: 0,
        }
    }
}

/// Receives the session after every `every`-th tick (and after the last one).
pub trait FrameSink {
    fn every(&self) -> u64;
    fn frame(&mut self, session: &Session) -> Result<(), ReplayError>;
}

/// Writes `NNNNNN.png` files (named by tick) over the synthetic background.
pub struct PngDir {
    dir: PathBuf,
    every: u64,
    background: Frame,
    pub written: u64,
}

impl PngDir {
    pub fn new(dir: &Path, every: u64, cfg: &SceneConfig) -> Result<Self, ReplayError> {
        std::fs::create_dir_all(dir).map_err(|source| ReplayError::Io { path: dir.display().to_string(), source })?;
        Ok(Self { dir: dir.to_owned(), every: every.max(1), background: synthetic_background(cfg), written: 0 })
    }

    pub fn with_background(mut self, background: Frame) -> Self {
        self.background = background;
        self
    }
}

impl FrameSink for PngDir {
    fn every(&self) -> u64 {
        self.every
    }

    fn frame(&mut self, session: &Session) -> Result<(), ReplayError> {
        let sim = session.sim();
        let list = build_render_list(sim, &sim.cfg);
        let frame = rasterize(&list, &sim.cfg, &self.background).map_err(|e| ReplayError::Frame(e.to_string()))?;
        let path = self.dir.join(format!("{:06}.png", session.tick()));
        std::fs::write(&path, encode_frame(&frame))
            .map_err(|source| ReplayError::Io { path: path.display().to_string(), source })?;
        self.written += 1;
        Ok(())
    }
}

/// Replays `entries` through a fresh session on a virtual clock and runs it to the end
/// of the plan. `seed` overrides the plan's seed.
pub fn replay(
    entries: &[LogEntry],
    scene: Arc<SceneConfig>,
    corpus: Arc<VerseCorpus>,
    plan: SessionPlan,
    seed: u64,
    mut frames: Option<&mut dyn FrameSink>,
) -> Result<(ReplayReport, Session), ReplayError> {
    let started = Stopwatch::start();
    let hz = scene.tuning.tick_hz;
    let mut session = Session::new(plan.with_seed(seed), scene, corpus)?;
    let scheduled = schedule(entries, hz)?;
    let mut next = 0;
    let mut written = 0;
    while !session.is_finished() {
        let k = session.tick();
        let end = next + scheduled[next..].iter().take_while(|s| s.tick == k).count();
        session.run_tick(scheduled[next..end].iter().map(|s| (&s.event, s.late)));
        next = end;
        if let Some(sink) = frames.as_deref_mut() {
            if session.tick() % sink.every() == 0 || session.is_finished() {
                sink.frame(&session)?;
                written += 1;
            }
        }
    }
    // Anything scheduled past the last tick is counted, not applied.
    if next < scheduled.len() {
        session.run_tick(scheduled[next..].iter().map(|s| (&s.event, s.late)));
    }
    let mut report = ReplayReport::from_session(&session, started.elapsed_ms());
    report.frames_written = written;
    Ok((report, session))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum TraceDiff {
    Equal,
    Diverged {
        /// 1-based line number of the first difference.
        line: usize,
        /// `None` when that side ended first.
        left: Option<String>,
        right: Option<String>,
        /// Up to three identical lines preceding the divergence.
        context: Vec<String>,
    },
}

pub fn diff_traces(a: &str, b: &str) -> TraceDiff {
    let la: Vec<&str> = a.lines().collect();
    let lb: Vec<&str> = b.lines().collect();
    let n = la.len().max(lb.len());
    for i in 0..n {
        let (x, y) = (la.get(i), lb.get(i));
        if x != y {
            return TraceDiff::Diverged {
                line: i + 1,
                left: x.map(|s| s.to_string()),
                right: y.map(|s| s.to_string()),
                context: la[i.saturating_sub(3)..i].iter().map(|s| s.to_string()).collect(),
            };
        }
    }
    TraceDiff::Equal
}

/// Wall clock for the report. Browsers have no `Instant`, so wasm reports zero.
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    at: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            at: std::time::Instant::now(),
        }
    }

    fn elapsed_ms(&self) -> u64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.at.elapsed().as_millis() as u64;
        #[cfg(target_arch = "wasm32")]
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Cny;

    #[test]
    fn seq_tick_round_trip() {
        let e = LogEntry { event: RoomEvent::chat("u", "U", 40, "hi"), seq_tick: Some(3) };
        let line = encode_log_entry(&e);
        assert!(line.ends_with(r#""text":"hi","seq_tick":3}"#), "{line}");
        assert_eq!(read_event_log(&line).unwrap(), [e.clone()]);
        // Plain decoding ignores the extra field.
        assert_eq!(crate::protocol::decode_event(line.as_bytes()).unwrap(), e.event);
        let plain = LogEntry::new(e.event);
        assert_eq!(encode_log_entry(&plain), encode_event(&plain.event));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let good = encode_event(&RoomEvent::gift("u", "U", 1, Cny::from_cents(5)));
        let text = format!("{good}\n\n{good}\nnot json\n");
        match read_event_log(&text) {
            Err(ReplayError::Decode { line: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
        let text = format!("{}\n", good.replace('}', ",\"seq_tick\":-1}"));
        assert!(matches!(read_event_log(&text), Err(ReplayError::BadSeqTick { line: 1 })));
    }

    #[test]
    fn schedule_flags_late_events() {
        // 120 ms is tick 3; the 50 ms event arrived too late for tick 1 and went in at 3.
        let on_time = LogEntry::new(RoomEvent::chat("a", "A", 120, "x"));
        let late = LogEntry { event: RoomEvent::chat("b", "B", 50, "y"), seq_tick: Some(3) };
        let first = LogEntry::new(RoomEvent::chat("c", "C", 10, "z"));
        let s = schedule(&[on_time, late, first], 30).unwrap();
        let got: Vec<_> = s.iter().map(|s| (s.tick, s.late, s.event.user_id.as_str())).collect();
        assert_eq!(got, [(0, false, "c"), (3, true, "b"), (3, false, "a")]);
        let early = LogEntry { event: RoomEvent::chat("b", "B", 500, "y"), seq_tick: Some(3) };
        assert!(matches!(schedule(&[early], 30), Err(ReplayError::SeqTickTooEarly { .. })));
    }

    #[test]
    fn diff_cases() {
        assert_eq!(diff_traces("a\nb\n", "a\nb\n"), TraceDiff::Equal);
        match diff_traces("a\nb\nc\n", "a\nb\n") {
            TraceDiff::Diverged { line, left, right, context } => {
                assert_eq!(line, 3);
                assert_eq!(left.as_deref(), Some("c"));
                assert_eq!(right, None);
                assert_eq!(context, ["a", "b"]);
            }
            TraceDiff::Equal => panic!(),
        }
    }
}
