//! Fixed-timestep simulation of the AR entities.
//!
//! Everything here is a pure function of the seed, the scene, the ordered event stream
//! and the tick schedule. Random draws go through labeled streams (see [`crate::rng`]).

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::effects::{r3, Effect, EffectRecord, RejectReason, SplashPhase};
use crate::geom::{Point, Polygon};
use crate::protocol::{Cny, Command, EventPayload, RoomEvent};
use crate::rng::Streams;
use crate::scene::{depth_of, SceneConfig};
use crate::verse::{VerseCorpus, VerseGame, VerseJudgment, WinEffect};

/// Fireworks in a win volley.
pub const VOLLEY_SIZE: u32 = 8;
/// The volley is launched over this window.
pub const VOLLEY_SPAN_MS: u64 = 3000;
pub const VOLLEY_TIPPER: &str = "everyone";
/// Vertical bob of a drifting lotus, applied when drawing.
pub const LOTUS_BOB_PX: f64 = 2.0;
pub const LOTUS_BOB_PERIOD_MS: f64 = 3000.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lotus {
    pub id: u64,
    pub owner_id: String,
    pub owner_name: String,
    pub pos: Point,
    /// Velocity in px/s.
    pub vel: Point,
    pub dash_until_ms: Option<u64>,
    pub next_ripple_at_ms: u64,
    pub born_ms: u64,
}

impl Lotus {
    /// Drawing offset of the gentle bob; never affects the simulated position.
    pub fn bob(&self, now_ms: u64) -> f64 {
        let phase = (self.id % 16) as f64 / 16.0 * TAU;
        LOTUS_BOB_PX * (TAU * (now_ms - self.born_ms) as f64 / LOTUS_BOB_PERIOD_MS + phase).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fish {
    pub id: u64,
    pub owner_id: String,
    pub food_pos: Point,
    pub started_at_ms: u64,
    pub look_id: u32,
}

impl Fish {
    /// Position along the jump arc at `elapsed_ms` into a jump of `duration_ms`.
    /// The fish leaps from the left of the food, peaks directly above it at half the
    /// duration and lands to the right.
    pub fn arc(&self, elapsed_ms: f64, duration_ms: f64, span_px: f64, height_px: f64) -> Point {
        let u = (elapsed_ms / duration_ms).clamp(0.0, 1.0);
        Point::new(
            self.food_pos.x + span_px * (u - 0.5),
            self.food_pos.y - 4.0 * height_px * u * (1.0 - u),
        )
    }

    pub fn leap_point(&self, span_px: f64) -> Point {
        Point::new(self.food_pos.x - span_px / 2.0, self.food_pos.y)
    }

    pub fn land_point(&self, span_px: f64) -> Point {
        Point::new(self.food_pos.x + span_px / 2.0, self.food_pos.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Particle {
    /// Direction in radians.
    pub angle: f64,
    pub speed_px_s: f64,
    pub color: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum FireworkPhase {
    Ascending,
    Exploding { since_ms: u64, particles: Vec<Particle> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Firework {
    pub id: u64,
    pub user_id: Option<String>,
    pub tipper_name: String,
    pub spawn: Point,
    pub apex: Point,
    pub launched_ms: u64,
    pub phase: FireworkPhase,
}

/// Gravity on spark particles, px/s².
pub const SPARK_GRAVITY: f64 = 60.0;

impl Firework {
    pub fn rocket_pos(&self, now_ms: u64, flight_ms: u64) -> Point {
        let u = ((now_ms - self.launched_ms) as f64 / flight_ms as f64).clamp(0.0, 1.0);
        // Decelerating ascent.
        self.spawn.lerp(self.apex, 1.0 - (1.0 - u) * (1.0 - u))
    }

    pub fn spark_pos(&self, p: &Particle, since_ms: u64, now_ms: u64) -> Point {
        let t = (now_ms - since_ms) as f64 / 1000.0;
        Point::new(
            self.apex.x + p.angle.cos() * p.speed_px_s * t,
            self.apex.y + p.angle.sin() * p.speed_px_s * t + 0.5 * SPARK_GRAVITY * t * t,
        )
    }

    pub fn depth(&self) -> f64 {
        depth_of(self.spawn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingLaunch {
    pub at_ms: u64,
    pub tipper_name: String,
    pub user_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Umbrella {
    pub id: u64,
    pub owner_id: String,
    pub owner_name: String,
    pub texture_id: u32,
    pub story: String,
    pub pos: Point,
    /// Velocity in px/s; `vel.y < 0` while ascending.
    pub vel: Point,
    pub spawn_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UmbrellaToken {
    pub owner_id: String,
    pub granted_at_ms: u64,
    pub texture_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ripple {
    pub center: Point,
    pub born_at_ms: u64,
    pub source: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PetalField {
    pub active: bool,
    pub since_ms: u64,
}

/// Exact counts of what a session did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct SimCounters {
    pub events: u64,
    pub chats: u64,
    pub gifts: u64,
    pub late_events: u64,
    pub cmd_release_lotus: u64,
    pub cmd_dash_lotus: u64,
    pub cmd_feed_fish: u64,
    pub cmd_story: u64,
    pub cmd_plain: u64,
    pub judged_accepted: u64,
    pub judged_duplicate: u64,
    pub judged_not_in_corpus: u64,
    pub judged_keyword_miss: u64,
    pub judged_theme_miss: u64,
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

impl SimCounters {
    fn count_command(&mut self, cmd: &Command) {
        match cmd {
            Command::ReleaseLotus => self.cmd_release_lotus += 1,
            Command::DashLotus => self.cmd_dash_lotus += 1,
            Command::FeedFish => self.cmd_feed_fish += 1,
            Command::Story(_) => self.cmd_story += 1,
            Command::Plain(_) => self.cmd_plain += 1,
        }
    }

    fn count_judgment(&mut self, j: VerseJudgment) {
        match j {
            VerseJudgment::Accepted => self.judged_accepted += 1,
            VerseJudgment::Duplicate => self.judged_duplicate += 1,
            VerseJudgment::NotInCorpus => self.judged_not_in_corpus += 1,
            VerseJudgment::KeywordMiss => self.judged_keyword_miss += 1,
            VerseJudgment::ThemeMiss => self.judged_theme_miss += 1,
            VerseJudgment::NoActiveRound => {}
        }
    }
}

/// Complete simulation state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub cfg: Arc<SceneConfig>,
    pub corpus: Arc<VerseCorpus>,
    pub tick: u64,
    rng: Streams,
    next_id: u64,
    pub lotuses: Vec<Lotus>,
    pub fishes: Vec<Fish>,
    pub fireworks: Vec<Firework>,
    pub pending_launches: Vec<PendingLaunch>,
    pub umbrellas: Vec<Umbrella>,
    pub ripples: Vec<Ripple>,
    pub tokens: Vec<UmbrellaToken>,
    pub petal_field: PetalField,
    pub verse: VerseGame,
    /// Index of the current round within the session plan.
    pub round_index: usize,
    pub counters: SimCounters,
    pending: Vec<EffectRecord>,
    late: bool,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    tick: u64,
    next_id: u64,
    lotuses: &'a [Lotus],
    fishes: &'a [Fish],
    fireworks: &'a [Firework],
    pending_launches: &'a [PendingLaunch],
    umbrellas: &'a [Umbrella],
    ripples: &'a [Ripple],
    tokens: &'a [UmbrellaToken],
    petal_field: PetalField,
    verse: &'a VerseGame,
    counters: &'a SimCounters,
}

impl SimState {
    pub fn new(cfg: Arc<SceneConfig>, corpus: Arc<VerseCorpus>, seed: u64) -> Self {
        Self {
            cfg,
            corpus,
            tick: 0,
            rng: Streams::new(seed),
            next_id: 1,
            lotuses: Vec::new(),
            fishes: Vec::new(),
            fireworks: Vec::new(),
            pending_launches: Vec::new(),
            umbrellas: Vec::new(),
            ripples: Vec::new(),
            tokens: Vec::new(),
            petal_field: PetalField::default(),
            verse: VerseGame::default(),
            round_index: 0,
            counters: SimCounters::default(),
            pending: Vec::new(),
            late: false,
        }
    }

    pub fn seed(&self) -> u64 {
        self.rng.seed()
    }

    pub fn tick_hz(&self) -> u32 {
        self.cfg.tuning.tick_hz
    }

    /// Simulation time at `tick`, in whole milliseconds.
    pub fn tick_to_ms(&self, tick: u64) -> u64 {
        tick * 1000 / u64::from(self.tick_hz())
    }

    pub fn now_ms(&self) -> u64 {
        self.tick_to_ms(self.tick)
    }

    fn dt_s(&self) -> f64 {
        1.0 / f64::from(self.tick_hz())
    }

    /// Takes the effect records produced since the last call.
    pub fn drain_effects(&mut self) -> Vec<EffectRecord> {
        std::mem::take(&mut self.pending)
    }

    pub fn emit(&mut self, effect: Effect) {
        self.pending.push(EffectRecord { tick: self.tick, effect, late: self.late });
    }

    fn alloc_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Hex SHA-256 over a canonical JSON snapshot of the live state.
    pub fn digest(&self) -> String {
        let snap = Snapshot {
            tick: self.tick,
            next_id: self.next_id,
            lotuses: &self.lotuses,
            fishes: &self.fishes,
            fireworks: &self.fireworks,
            pending_launches: &self.pending_launches,
            umbrellas: &self.umbrellas,
            ripples: &self.ripples,
            tokens: &self.tokens,
            petal_field: self.petal_field,
            verse: &self.verse,
            counters: &self.counters,
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&snap).expect("snapshot serializes")))
    }

    /// Applies one room event at the current tick. `late` marks events whose timestamp
    /// precedes the tick they are applied in.
    pub fn apply_event(&mut self, event: &RoomEvent, table: &crate::protocol::CommandTable, late: bool) {
        self.late = late;
        self.counters.events += 1;
        if late {
            self.counters.late_events += 1;
        }
        match &event.payload {
            EventPayload::Chat { text } => {
                self.counters.chats += 1;
                let cmd = table.parse(text);
                self.apply_command(&event.user_id, &event.display_name, cmd);
            }
            EventPayload::Gift { amount } => {
                self.counters.gifts += 1;
                self.apply_gift(&event.user_id, &event.display_name, *amount);
            }
        }
        self.late = false;
    }

    pub fn apply_command(&mut self, user_id: &str, name: &str, cmd: Command) {
        self.counters.count_command(&cmd);
        match cmd {
            Command::ReleaseLotus => self.release_lotus(user_id, name),
            Command::DashLotus => self.dash_lotus(user_id),
            Command::FeedFish => self.feed_fish(user_id),
            Command::Story(text) => self.attach_story(user_id, name, text),
            Command::Plain(text) => self.plain_chat(user_id, name, text),
        }
    }

    fn reject(&mut self, user_id: &str, command: &str, reason: RejectReason) {
        self.counters.rejections += 1;
        self.emit(Effect::Rejected { user_id: user_id.into(), command: command.into(), reason });
    }

    fn release_lotus(&mut self, user_id: &str, name: &str) {
        if self.lotuses.iter().any(|l| l.owner_id == user_id) {
            return self.reject(user_id, "release_lotus", RejectReason::AlreadyHasLotus);
        }
        let cfg = Arc::clone(&self.cfg);
        let pos = sample_in(&cfg.lotus_spawn, self.rng.stream("lotus.spawn"));
        let now = self.now_ms();
        let id = self.alloc_id();
        self.lotuses.push(Lotus {
            id,
            owner_id: user_id.into(),
            owner_name: name.into(),
            pos,
            vel: Point::new(cfg.tuning.lotus_drift_px_s, 0.0),
            dash_until_ms: None,
            next_ripple_at_ms: now + cfg.tuning.ripple_period_ms,
            born_ms: now,
        });
        self.counters.lotuses_spawned += 1;
        self.emit(Effect::LotusSpawned {
            user_id: user_id.into(),
            name: name.into(),
            entity: id,
            x: r3(pos.x),
            y: r3(pos.y),
        });
    }

    fn dash_lotus(&mut self, user_id: &str) {
        let Some(idx) = self.lotuses.iter().position(|l| l.owner_id == user_id) else {
            return self.reject(user_id, "dash_lotus", RejectReason::NoLotus);
        };
        let angle = self.rng.stream("lotus.dash").random_range(0.0..TAU);
        let t = &self.cfg.tuning;
        let speed = t.lotus_drift_px_s * t.lotus_dash_multiplier;
        let until = self.now_ms() + t.dash_duration_ms;
        let (dx, dy) = (angle.cos(), angle.sin());
        let lotus = &mut self.lotuses[idx];
        lotus.vel = Point::new(dx * speed, dy * speed);
        lotus.dash_until_ms = Some(until);
        let entity = lotus.id;
        self.emit(Effect::LotusDashed {
            user_id: user_id.into(),
            entity,
            dx: r3(dx),
            dy: r3(dy),
            until_ms: until,
        });
    }

    fn feed_fish(&mut self, user_id: &str) {
        let cfg = Arc::clone(&self.cfg);
        let food = sample_in(&cfg.water, self.rng.stream("fish.food"));
        let look = self.rng.stream("fish.look").random_range(0..cfg.tuning.fish_looks);
        let id = self.alloc_id();
        let fish = Fish {
            id,
            owner_id: user_id.into(),
            food_pos: food,
            started_at_ms: self.now_ms(),
            look_id: look,
        };
        let leap = fish.leap_point(cfg.tuning.fish_jump_span_px);
        self.fishes.push(fish);
        self.counters.fish += 1;
        self.emit(Effect::FishSpawned { user_id: user_id.into(), entity: id, x: r3(food.x), y: r3(food.y), look });
        self.splash(id, SplashPhase::Leap, leap);
    }

    fn splash(&mut self, entity: u64, phase: SplashPhase, at: Point) {
        self.emit(Effect::Splash { entity, phase, x: r3(at.x), y: r3(at.y) });
        if self.cfg.point_in_water(at) {
            self.add_ripple(entity, at);
        }
    }

    fn add_ripple(&mut self, source: u64, center: Point) {
        debug_assert!(self.cfg.point_in_water(center));
        self.ripples.push(Ripple { center, born_at_ms: self.now_ms(), source });
        self.counters.ripples += 1;
        self.emit(Effect::Ripple { entity: source, x: r3(center.x), y: r3(center.y) });
    }

    fn attach_story(&mut self, user_id: &str, name: &str, story: String) {
        let Some(idx) = self.tokens.iter().position(|t| t.owner_id == user_id) else {
            return self.reject(user_id, "story", RejectReason::NoToken);
        };
        let token = self.tokens.remove(idx);
        self.counters.tokens_consumed += 1;
        let cfg = Arc::clone(&self.cfg);
        let r = cfg.tuning.umbrella_radius_px;
        let b = cfg.water.bounds();
        let (lo, hi) = (b.min.x.max(r), b.max.x.min(cfg.width() - r));
        let x = if lo < hi { self.rng.stream("umbrella.spawn").random_range(lo..hi) } else { cfg.width() / 2.0 };
        let pos = Point::new(x, cfg.height() - r);
        let id = self.alloc_id();
        self.umbrellas.push(Umbrella {
            id,
            owner_id: user_id.into(),
            owner_name: name.into(),
            texture_id: token.texture_id,
            story: story.clone(),
            pos,
            vel: Point::new(0.0, -cfg.tuning.umbrella_ascent_px_s),
            spawn_depth: depth_of(pos),
        });
        self.counters.umbrellas += 1;
        self.emit(Effect::UmbrellaSpawned {
            user_id: user_id.into(),
            entity: id,
            texture: token.texture_id,
            story,
            x: r3(pos.x),
            y: r3(pos.y),
        });
    }

    fn plain_chat(&mut self, user_id: &str, name: &str, text: String) {
        // Close an expired round first so the loss is logged before this chat.
        self.tick_round();
        if self.verse.running().is_none() {
            self.emit(Effect::Chat { user_id: user_id.into(), name: name.into(), text });
            return;
        }
        let now = self.now_ms();
        let corpus = Arc::clone(&self.corpus);
        let sub = self.verse.submit(&corpus, &text, now);
        self.counters.count_judgment(sub.judgment);
        let round = self.verse.current.as_ref().expect("running round");
        let (combo, count) = (round.combo, round.accepted.len() as u32);
        self.emit(Effect::VerseJudged {
            user_id: user_id.into(),
            verse: sub.normalized,
            result: sub.judgment,
            combo,
            count,
        });
        if let Some(effect) = sub.won {
            self.emit(Effect::RoundWon { round: self.round_index, effect, count });
            self.win_effect(effect);
        }
    }

    pub fn apply_gift(&mut self, user_id: &str, name: &str, amount: Cny) {
        if amount.is_zero() {
            return;
        }
        if amount >= Cny::UMBRELLA_TIER {
            let n = self.cfg.tuning.umbrella_textures;
            let texture = self.rng.stream("umbrella.texture").random_range(0..n);
            self.tokens.push(UmbrellaToken {
                owner_id: user_id.into(),
                granted_at_ms: self.now_ms(),
                texture_id: texture,
            });
            self.counters.tokens_granted += 1;
            self.emit(Effect::TokenGranted {
                user_id: user_id.into(),
                texture,
                amount_cny: amount.to_string(),
            });
        } else {
            self.launch_firework(Some(user_id.to_owned()), name.to_owned());
        }
    }

    fn launch_firework(&mut self, user_id: Option<String>, tipper: String) {
        let cfg = Arc::clone(&self.cfg);
        let h = cfg.height();
        let rng = self.rng.stream("firework.spawn");
        let spawn = cfg.firework_spawn.at(rng.random_range(0.0..=1.0));
        let apex = Point::new(
            spawn.x + rng.random_range(-40.0..40.0),
            (spawn.y - rng.random_range(0.15..0.3) * h).max(0.05 * h),
        );
        let id = self.alloc_id();
        self.fireworks.push(Firework {
            id,
            user_id: user_id.clone(),
            tipper_name: tipper.clone(),
            spawn,
            apex,
            launched_ms: self.now_ms(),
            phase: FireworkPhase::Ascending,
        });
        self.counters.fireworks += 1;
        self.emit(Effect::FireworkLaunched {
            user_id,
            tipper,
            entity: id,
            x: r3(spawn.x),
            y: r3(spawn.y),
            apex_x: r3(apex.x),
            apex_y: r3(apex.y),
        });
    }

    /// Unlocks the reward of a won verse round.
    pub fn win_effect(&mut self, effect: WinEffect) {
        match effect {
            WinEffect::PetalField => {
                if !self.petal_field.active {
                    self.petal_field = PetalField { active: true, since_ms: self.now_ms() };
                }
                self.emit(Effect::PetalFieldUnlocked);
            }
            WinEffect::FireworkVolley => {
                let now = self.now_ms();
                for i in 0..u64::from(VOLLEY_SIZE) {
                    self.pending_launches.push(PendingLaunch {
                        at_ms: now + i * VOLLEY_SPAN_MS / u64::from(VOLLEY_SIZE),
                        tipper_name: VOLLEY_TIPPER.into(),
                        user_id: None,
                    });
                }
                self.launch_due();
            }
        }
    }

    fn launch_due(&mut self) {
        let now = self.now_ms();
        while let Some(i) = self.pending_launches.iter().position(|p| p.at_ms <= now) {
            let p = self.pending_launches.remove(i);
            self.launch_firework(p.user_id, p.tipper_name);
        }
    }

    /// Advances the simulation by one fixed step.
    pub fn tick(&mut self) {
        let dt = self.dt_s();
        self.tick += 1;
        let now = self.now_ms();
        let cfg = Arc::clone(&self.cfg);
        let t = &cfg.tuning;

        // Lotuses.
        let mut ripples = Vec::new();
        let mut gone = Vec::new();
        for lotus in &mut self.lotuses {
            let moved = lotus.vel.x != 0.0 || lotus.vel.y != 0.0;
            lotus.pos.x += lotus.vel.x * dt;
            lotus.pos.y += lotus.vel.y * dt;
            if lotus.dash_until_ms.is_some_and(|until| now >= until) {
                lotus.dash_until_ms = None;
                lotus.vel = Point::new(t.lotus_drift_px_s, 0.0);
            }
            let r = t.lotus_radius_px;
            let p = lotus.pos;
            if p.x - r > cfg.width() || p.x + r < 0.0 || p.y - r > cfg.height() || p.y + r < 0.0 {
                gone.push((lotus.owner_id.clone(), lotus.id));
                continue;
            }
            if moved && now >= lotus.next_ripple_at_ms && cfg.point_in_water(p) {
                ripples.push((lotus.id, p));
                lotus.next_ripple_at_ms = now + t.ripple_period_ms;
            }
        }
        for (source, center) in ripples {
            self.add_ripple(source, center);
        }
        for (owner, id) in gone {
            self.lotuses.retain(|l| l.id != id);
            self.counters.lotuses_despawned += 1;
            self.emit(Effect::LotusDespawned { user_id: owner, entity: id });
        }

        // Ripples expire silently.
        self.ripples.retain(|r| now - r.born_at_ms < t.ripple_lifetime_ms);

        // Fish land and leave once the jump is over.
        let span = t.fish_jump_span_px;
        let landed: Vec<(u64, Point)> = self
            .fishes
            .iter()
            .filter(|f| now - f.started_at_ms >= t.fish_jump_duration_ms)
            .map(|f| (f.id, f.land_point(span)))
            .collect();
        for (id, at) in landed {
            self.splash(id, SplashPhase::Land, at);
            self.fishes.retain(|f| f.id != id);
            self.emit(Effect::FishDone { entity: id });
        }

        // Fireworks: ascend, burst, fade.
        self.launch_due();
        let mut exploded = Vec::new();
        let mut finished = Vec::new();
        for i in 0..self.fireworks.len() {
            let fw = &self.fireworks[i];
            match &fw.phase {
                FireworkPhase::Ascending if now - fw.launched_ms >= t.firework_flight_ms => exploded.push(i),
                FireworkPhase::Exploding { since_ms, .. } if now - since_ms >= t.firework_burst_ms => {
                    finished.push(fw.id)
                }
                _ => {}
            }
        }
        for i in exploded {
            let rng = self.rng.stream("firework.burst");
            let n: u32 = rng.random_range(24..=40);
            let particles = (0..n)
                .map(|_| Particle {
                    angle: rng.random_range(0.0..TAU),
                    speed_px_s: rng.random_range(40.0..120.0),
                    color: rng.random_range(0..6),
                })
                .collect();
            let fw = &mut self.fireworks[i];
            fw.phase = FireworkPhase::Exploding { since_ms: now, particles };
            let entity = fw.id;
            self.emit(Effect::FireworkExploded { entity, particles: n });
        }
        for id in finished {
            self.fireworks.retain(|f| f.id != id);
            self.emit(Effect::FireworkDespawned { entity: id });
        }

        // Umbrellas rise until they clear the top edge.
        let mut risen = Vec::new();
        for u in &mut self.umbrellas {
            u.pos.x += u.vel.x * dt;
            u.pos.y += u.vel.y * dt;
            if u.pos.y + t.umbrella_radius_px < 0.0 {
                risen.push(u.id);
            }
        }
        for id in risen {
            self.umbrellas.retain(|u| u.id != id);
            self.emit(Effect::UmbrellaDespawned { entity: id });
        }

        self.tick_round();
    }

    /// Runs the verse countdown; logs the loss when the deadline passes.
    pub fn tick_round(&mut self) {
        let now = self.now_ms();
        let Some(round) = self.verse.current.as_mut() else { return };
        if round.tick(now) {
            let count = round.accepted.len() as u32;
            self.emit(Effect::RoundLost { round: self.round_index, count });
        }
    }

    /// Entity ids of all live entities that can be drawn.
    pub fn entity_count(&self) -> usize {
        self.lotuses.len() + self.fishes.len() + self.fireworks.len() + self.umbrellas.len() + self.ripples.len()
    }
}

/// Uniform point inside a polygon by rejection sampling over its bounds.
pub fn sample_in<R: Rng>(poly: &Polygon, rng: &mut R) -> Point {
    let b = poly.bounds();
    for _ in 0..10_000 {
        let p = Point::new(
            if b.width() > 0.0 { rng.random_range(b.min.x..=b.max.x) } else { b.min.x },
            if b.height() > 0.0 { rng.random_range(b.min.y..=b.max.y) } else { b.min.y },
        );
        if poly.contains(p) {
            return p;
        }
    }
    poly.centroid()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::CommandTable;

    fn sim() -> SimState {
        SimState::new(Arc::new(SceneConfig::demo()), Arc::new(VerseCorpus::default()), 42)
    }

    /// Large open lake so nothing leaves the screen during long tests.
    fn wide_sim() -> SimState {
        let mut cfg = SceneConfig::demo();
        cfg.screen = crate::scene::Screen { width_px: 4000, height_px: 4000 };
        cfg.water = Polygon::rect(0.0, 100.0, 4000.0, 4000.0);
        cfg.lotus_spawn = Polygon::rect(1800.0, 1800.0, 2200.0, 2200.0);
        cfg.validate().unwrap();
        SimState::new(Arc::new(cfg), Arc::new(VerseCorpus::default()), 42)
    }

    fn kinds(recs: &[EffectRecord]) -> Vec<String> {
        recs.iter()
            .map(|r| serde_json::to_value(r).unwrap()["kind"].as_str().unwrap().to_owned())
            .collect()
    }

    #[test]
    fn one_lotus_per_user() {
        let mut s = sim();
        s.apply_command("u1", "Ann", Command::ReleaseLotus);
        s.apply_command("u1", "Ann", Command::ReleaseLotus);
        let recs = s.drain_effects();
        assert_eq!(kinds(&recs), ["lotus_spawned", "rejected"]);
        assert!(matches!(recs[1].effect, Effect::Rejected { reason: RejectReason::AlreadyHasLotus, .. }));
        assert_eq!(s.lotuses.len(), 1);
        assert!(s.cfg.lotus_spawn.contains(s.lotuses[0].pos));
    }

    #[test]
    fn lotus_leaving_screen_frees_the_slot() {
        let mut s = sim();
        s.apply_command("u1", "Ann", Command::ReleaseLotus);
        let w = s.cfg.width();
        s.lotuses[0].pos.x = w - 1.0;
        // 0.4 px per tick at 12 px/s and 30 Hz; radius 24.
        let needed = ((1.0 + s.cfg.tuning.lotus_radius_px) / 0.4f64).ceil() as u64;
        assert_eq!(needed, 63);
        for _ in 0..needed - 1 {
            s.tick();
        }
        assert_eq!(s.lotuses.len(), 1);
        s.tick();
        assert!(s.lotuses.is_empty());
        s.drain_effects();
        s.apply_command("u1", "Ann", Command::ReleaseLotus);
        assert_eq!(kinds(&s.drain_effects()), ["lotus_spawned"]);
    }

    #[test]
    fn stepped_drift_matches_closed_form() {
        let mut s = wide_sim();
        s.apply_command("u1", "Ann", Command::ReleaseLotus);
        let x0 = s.lotuses[0].pos.x;
        let v = s.cfg.tuning.lotus_drift_px_s;
        for _ in 0..1800 {
            s.tick();
            let t = s.tick as f64 / 30.0;
            let closed = x0 + v * t;
            assert!((s.lotuses[0].pos.x - closed).abs() < 1e-6);
        }
    }

    #[test]
    fn dash_is_time_limited() {
        let mut s = wide_sim();
        s.apply_command("u2", "Bo", Command::DashLotus);
        assert!(matches!(s.drain_effects()[0].effect, Effect::Rejected { reason: RejectReason::NoLotus, .. }));
        s.apply_command("u2", "Bo", Command::ReleaseLotus);
        s.apply_command("u2", "Bo", Command::DashLotus);
        let speed = (s.lotuses[0].vel.x.powi(2) + s.lotuses[0].vel.y.powi(2)).sqrt();
        assert!((speed - 72.0).abs() < 1e-9);
        for _ in 0..45 {
            s.tick();
        }
        assert_eq!(s.lotuses[0].dash_until_ms, None);
        assert_eq!(s.lotuses[0].vel, Point::new(12.0, 0.0));
    }

    #[test]
    fn ripples_follow_a_drifting_lotus() {
        let mut s = sim();
        s.apply_command("u1", "Ann", Command::ReleaseLotus);
        for _ in 0..90 {
            s.tick();
        }
        // 3 s at one ripple every 800 ms.
        assert_eq!(s.counters.ripples, 3);
        assert!(s.ripples.iter().all(|r| s.cfg.point_in_water(r.center)));
        // Ripples live 1200 ms, so at most two are alive at once here.
        assert!(s.ripples.len() <= 2);
    }

    #[test]
    fn story_requires_token() {
        let mut s = sim();
        s.apply_command("u2", "Bo", Command::Story("hello".into()));
        assert!(matches!(s.drain_effects()[0].effect, Effect::Rejected { reason: RejectReason::NoToken, .. }));
        s.apply_gift("u2", "Bo", Cny::from_cents(1000));
        s.apply_command("u2", "Bo", Command::Story("hello".into()));
        s.apply_command("u2", "Bo", Command::Story("again".into()));
        let recs = s.drain_effects();
        assert_eq!(kinds(&recs), ["token_granted", "umbrella_spawned", "rejected"]);
        assert_eq!(s.umbrellas[0].story, "hello");
        assert!(s.umbrellas[0].vel.y < 0.0);
        assert_eq!((s.counters.tokens_granted, s.counters.tokens_consumed), (1, 1));
    }

    #[test]
    fn umbrella_rises_off_the_top() {
        let mut s = sim();
        s.apply_gift("u", "U", Cny::from_cents(5200));
        s.apply_command("u", "U", Command::Story("s".into()));
        // 360 px screen at 30 px/s takes about 12 s plus the radius.
        for _ in 0..30 * 14 {
            s.tick();
        }
        assert!(s.umbrellas.is_empty());
        assert!(kinds(&s.drain_effects()).contains(&"umbrella_despawned".to_owned()));
    }

    #[test]
    fn gift_tiers() {
        let mut s = sim();
        s.apply_gift("a", "A", Cny::from_cents(999));
        assert_eq!(kinds(&s.drain_effects()), ["firework_launched"]);
        s.apply_gift("b", "B", Cny::from_cents(1000));
        assert_eq!(kinds(&s.drain_effects()), ["token_granted"]);
        s.apply_gift("c", "C", Cny::ZERO);
        assert!(s.drain_effects().is_empty());
        assert_eq!(s.fireworks[0].tipper_name, "A");
        let seg = s.cfg.firework_spawn;
        let on_segment = crate::geom::on_segment(seg.a, seg.b, s.fireworks[0].spawn);
        assert!(on_segment);
    }

    #[test]
    fn firework_lifecycle() {
        let mut s = sim();
        s.apply_gift("a", "A", Cny::from_cents(500));
        for _ in 0..42 {
            s.tick();
        }
        assert!(matches!(s.fireworks[0].phase, FireworkPhase::Exploding { .. }));
        for _ in 0..36 {
            s.tick();
        }
        assert!(s.fireworks.is_empty());
        let k = kinds(&s.drain_effects());
        assert_eq!(k, ["firework_launched", "firework_exploded", "firework_despawned"]);
    }

    #[test]
    fn fish_jump_arc() {
        let mut s = sim();
        s.apply_command("u", "U", Command::FeedFish);
        let f = s.fishes[0].clone();
        assert!(s.cfg.point_in_water(f.food_pos));
        let (d, span, h) = (1000.0, 80.0, 60.0);
        let apex = f.arc(d / 2.0, d, span, h);
        assert_eq!(apex, Point::new(f.food_pos.x, f.food_pos.y - h));
        for k in 0..=100 {
            let p = f.arc(d * k as f64 / 100.0, d, span, h);
            assert!(p.y >= apex.y);
        }
        assert_eq!(f.arc(0.0, d, span, h), f.leap_point(span));
        assert_eq!(f.arc(d, d, span, h), f.land_point(span));
        for _ in 0..29 {
            s.tick();
        }
        assert_eq!(s.fishes.len(), 1);
        s.tick();
        assert!(s.fishes.is_empty());
        let k = kinds(&s.drain_effects());
        assert_eq!(k.iter().filter(|k| *k == "splash").count(), 2);
        assert_eq!(k.last().unwrap(), "fish_done");
    }

    #[test]
    fn empty_tick_only_advances_time() {
        let mut a = sim();
        let before = (a.lotuses.clone(), a.ripples.clone(), a.counters.clone());
        a.tick();
        assert_eq!(a.tick, 1);
        assert_eq!((a.lotuses.clone(), a.ripples.clone(), a.counters.clone()), before);
        assert!(a.drain_effects().is_empty());
    }

    #[test]
    fn win_effects() {
        let mut s = sim();
        s.win_effect(WinEffect::PetalField);
        for _ in 0..1000 {
            s.tick();
            assert!(s.petal_field.active);
        }
        s.drain_effects();
        s.win_effect(WinEffect::FireworkVolley);
        for _ in 0..100 {
            s.tick();
        }
        let recs = s.drain_effects();
        let launches: Vec<u64> = recs
            .iter()
            .filter(|r| matches!(&r.effect, Effect::FireworkLaunched { tipper, .. } if tipper == VOLLEY_TIPPER))
            .map(|r| r.tick)
            .collect();
        assert_eq!(launches.len(), VOLLEY_SIZE as usize);
        let span_ticks = launches.last().unwrap() - launches[0];
        assert!(span_ticks <= 90, "{launches:?}");
        assert!(launches.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn late_events_are_flagged() {
        let mut s = sim();
        let ev = RoomEvent::chat("u", "U", 0, "feed fish");
        s.apply_event(&ev, &CommandTable::default(), true);
        let recs = s.drain_effects();
        assert!(recs.iter().all(|r| r.late));
        assert_eq!(s.counters.late_events, 1);
    }

    #[test]
    fn same_seed_same_state() {
        let run = |seed| {
            let mut s = SimState::new(Arc::new(SceneConfig::demo()), Arc::new(VerseCorpus::default()), seed);
            let t = CommandTable::default();
            for (i, text) in ["release my lotus", "feed fish", "dash my lotus"].iter().enumerate() {
                s.apply_event(&RoomEvent::chat("u", "U", i as u64, text), &t, false);
                s.tick();
            }
            s.apply_gift("g", "G", Cny::from_cents(300));
            for _ in 0..100 {
                s.tick();
            }
            s.digest()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
