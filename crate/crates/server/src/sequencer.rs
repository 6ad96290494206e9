//! The sequencer: the one place live events enter the session.
//!
//! Events wait in a queue ordered by `(ts_ms, arrival)` until the tick their timestamp
//! falls in. An event whose tick has already run is applied at the next tick and
//! flagged late. Every applied event is appended to the recording together with the
//! tick it was applied in, so a replay reproduces the live session exactly.

use std::collections::BTreeMap;
use std::io::Write;

use arsls_core::effects::EffectRecord;
use arsls_core::protocol::RoomEvent;
use arsls_core::replay::{encode_log_entry, LogEntry};
use arsls_core::session::Session;

pub struct Sequencer {
    session: Session,
    pending: BTreeMap<(u64, u64), RoomEvent>,
    next_arrival: u64,
    recorder: Option<Box<dyn Write + Send>>,
}

/// What one tick did.
#[derive(Debug, Clone, Default)]
pub struct TickOutput {
    /// The tick that ran.
    pub tick: u64,
    pub applied: Vec<LogEntry>,
    pub records: Vec<EffectRecord>,
    pub finished: bool,
}

impl Sequencer {
    pub fn new(session: Session) -> Self {
        Self { session, pending: BTreeMap::new(), next_arrival: 0, recorder: None }
    }

    pub fn with_recorder(mut self, out: Box<dyn Write + Send>) -> Self {
        self.recorder = Some(out);
        self
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Queues an event; the returned arrival index breaks timestamp ties.
    pub fn submit(&mut self, event: RoomEvent) -> u64 {
        let arrival = self.next_arrival;
        self.next_arrival += 1;
        self.pending.insert((event.ts_ms, arrival), event);
        arrival
    }

    /// Runs the next tick with every queued event that is due.
    pub fn step(&mut self) -> std::io::Result<TickOutput> {
        let k = self.session.tick();
        let mut due = Vec::new();
        while let Some(entry) = self.pending.first_entry() {
            if self.session.tick_of(entry.key().0) > k {
                break;
            }
            due.push(entry.remove());
        }
        let batch: Vec<(RoomEvent, bool)> = due
            .into_iter()
            .map(|e| {
                let late = self.session.tick_of(e.ts_ms) < k;
                (e, late)
            })
            .collect();
        let applied: Vec<LogEntry> = batch.iter().map(|(e, _)| LogEntry { event: e.clone(), seq_tick: Some(k) }).collect();
        if let Some(out) = self.recorder.as_mut() {
            for entry in &applied {
                writeln!(out, "{}", encode_log_entry(entry))?;
            }
            if !applied.is_empty() {
                out.flush()?;
            }
        }
        let records = self.session.run_tick(batch.iter().map(|(e, late)| (e, *late)));
        let finished = self.session.is_finished();
        if finished {
            if let Some(out) = self.recorder.as_mut() {
                out.flush()?;
            }
        }
        Ok(TickOutput { tick: k, applied, records, finished })
    }

    /// Steps until the session ends.
    pub fn run_to_end(&mut self) -> std::io::Result<()> {
        while !self.session.is_finished() {
            self.step()?;
        }
        Ok(())
    }
}
