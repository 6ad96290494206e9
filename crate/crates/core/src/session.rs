//! A session: the simulation driven by a plan of verse rounds over a fixed tick
//! schedule. Both the live server and the offline replay run sessions through this
//! type, which is what makes their effect logs comparable.
//!
//! Each tick `k` runs in three phases:
//! 1. scheduled rounds due at `now(k)` start (after the running round's countdown);
//! 2. events assigned to tick `k` are applied in order;
//! 3. the world advances by one step to tick `k + 1`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::{Effect, EffectLog, EffectRecord};
use crate::protocol::{CommandTable, RoomEvent};
use crate::scene::SceneConfig;
use crate::sim::SimState;
use crate::verse::{RoundMode, RoundSpec, VerseCorpus, VerseError, WinEffect};

pub const DEFAULT_SESSION_MS: u64 = 1_200_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedRound {
    pub at_ms: u64,
    pub spec: RoundSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    #[serde(default = "default_total")]
    pub total_duration_ms: u64,
    #[serde(default)]
    pub rounds: Vec<PlannedRound>,
    #[serde(default)]
    pub seed: u64,
}

fn default_total() -> u64 {
    DEFAULT_SESSION_MS
}

impl Default for SessionPlan {
    /// Twenty minutes with a keyword round at minute three and a theme round at
    /// minute eleven.
    fn default() -> Self {
        Self {
            total_duration_ms: DEFAULT_SESSION_MS,
            rounds: vec![
                PlannedRound {
                    at_ms: 180_000,
                    spec: RoundSpec::new(RoundMode::keyword("flower", &["花", "flower"]), WinEffect::PetalField),
                },
                PlannedRound {
                    at_ms: 660_000,
                    spec: RoundSpec::new(
                        RoundMode::Theme("hangzhou-jiangnan".into()),
                        WinEffect::FireworkVolley,
                    ),
                },
            ],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan is not valid JSON: {0}")]
    Parse(String),
    #[error("total_duration_ms must be positive")]
    EmptySession,
    #[error("round {0} ends after the session does")]
    RoundOutsideSession(usize),
    #[error("round {0} overlaps the previous round")]
    Overlap(usize),
    #[error("round {0}: {1}")]
    BadRound(usize, VerseError),
}

impl SessionPlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.total_duration_ms == 0 {
            return Err(PlanError::EmptySession);
        }
        let mut prev_end = 0;
        for (i, r) in self.rounds.iter().enumerate() {
            r.spec.validate().map_err(|e| PlanError::BadRound(i, e))?;
            if i > 0 && r.at_ms < prev_end {
                return Err(PlanError::Overlap(i));
            }
            let end = r.at_ms + r.spec.duration_ms;
            if end > self.total_duration_ms {
                return Err(PlanError::RoundOutsideSession(i));
            }
            prev_end = end;
        }
        Ok(())
    }
}

pub fn load_plan(document: &[u8]) -> Result<SessionPlan, PlanError> {
    let plan: SessionPlan = serde_json::from_slice(document).map_err(|e| PlanError::Parse(e.to_string()))?;
    plan.validate()?;
    Ok(plan)
}

/// Tick an event with timestamp `ts_ms` belongs to: the last tick at or before it.
pub fn tick_for_ms(ts_ms: u64, tick_hz: u32) -> u64 {
    ts_ms * u64::from(tick_hz) / 1000
}

#[derive(Debug, Clone)]
pub struct Session {
    sim: SimState,
    plan: SessionPlan,
    table: CommandTable,
    next_round: usize,
    total_ticks: u64,
    log: EffectLog,
    ignored_events: u64,
    finished: bool,
}

impl Session {
    pub fn new(plan: SessionPlan, cfg: Arc<SceneConfig>, corpus: Arc<VerseCorpus>) -> Result<Self, PlanError> {
        plan.validate()?;
        let hz = u64::from(cfg.tuning.tick_hz);
        let total_ticks = (plan.total_duration_ms * hz).div_ceil(1000);
        let sim = SimState::new(cfg, corpus, plan.seed);
        Ok(Self {
            sim,
            plan,
            table: CommandTable::default(),
            next_round: 0,
            total_ticks,
            log: EffectLog::new(),
            ignored_events: 0,
            finished: false,
        })
    }

    pub fn with_commands(mut self, table: CommandTable) -> Self {
        self.table = table;
        self
    }

    pub fn sim(&self) -> &SimState {
        &self.sim
    }

    pub fn plan(&self) -> &SessionPlan {
        &self.plan
    }

    pub fn tick(&self) -> u64 {
        self.sim.tick
    }

    pub fn now_ms(&self) -> u64 {
        self.sim.now_ms()
    }

    pub fn total_ticks(&self) -> u64 {
        self.total_ticks
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn log(&self) -> &EffectLog {
        &self.log
    }

    pub fn digest(&self) -> String {
        self.log.digest()
    }

    pub fn ignored_events(&self) -> u64 {
        self.ignored_events
    }

    pub fn tick_of(&self, ts_ms: u64) -> u64 {
        tick_for_ms(ts_ms, self.sim.tick_hz())
    }

    /// Runs one full tick with the events assigned to it. Each event carries its late
    /// flag. Returns the effect records this tick produced.
    pub fn run_tick<'a>(&mut self, events: impl IntoIterator<Item = (&'a RoomEvent, bool)>) -> Vec<EffectRecord> {
        if self.finished {
            self.ignored_events += events.into_iter().count() as u64;
            return Vec::new();
        }
        self.start_due_rounds();
        for (event, late) in events {
            self.sim.apply_event(event, &self.table, late);
        }
        self.sim.tick();
        if self.sim.tick >= self.total_ticks {
            self.finished = true;
            let ticks = self.sim.tick;
            self.sim.emit(Effect::SessionEnd { ticks });
        }
        let records = self.sim.drain_effects();
        for r in &records {
            self.log.push(r);
        }
        records
    }

    fn start_due_rounds(&mut self) {
        self.sim.tick_round();
        let now = self.sim.now_ms();
        while let Some(planned) = self.plan.rounds.get(self.next_round) {
            if planned.at_ms > now {
                break;
            }
            let spec = planned.spec.clone();
            let index = self.next_round;
            self.next_round += 1;
            self.sim.round_index = index;
            // Plans are validated not to overlap and the running round's deadline was
            // just checked, so a start never collides with a live round.
            if self.sim.verse.start_round(spec.clone(), now).is_ok() {
                self.sim.emit(Effect::RoundStarted {
                    round: index,
                    mode: spec.mode.label().to_owned(),
                    duration_ms: spec.duration_ms,
                    threshold: spec.threshold,
                });
            }
        }
    }

    /// Runs empty ticks until `tick` is reached or the session ends.
    pub fn advance_to(&mut self, tick: u64) {
        while self.sim.tick < tick && !self.finished {
            self.run_tick(std::iter::empty());
        }
    }

    /// Runs every remaining tick without events.
    pub fn finish(&mut self) {
        self.advance_to(u64::MAX);
    }
}
