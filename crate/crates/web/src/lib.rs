//! Browser bindings: a single room simulated in the page, driven by the page's own
//! chat box and gift buttons and drawn into a canvas.

use std::sync::Arc;

use arsls_core::compositor::{build_render_list, rasterize, synthetic_background, Frame};
use arsls_core::effects::EffectRecord;
use arsls_core::protocol::{parse_command, Cny, RoomEvent};
use arsls_core::scene::SceneConfig;
use arsls_core::session::{PlannedRound, Session, SessionPlan};
use arsls_core::verse::{bundled_corpus, RoundMode, RoundSpec, WinEffect};
use wasm_bindgen::prelude::*;

/// Parses one chat line the way the room would, as JSON
/// (`{"command":"story","text":"..."}`).
#[wasm_bindgen]
pub fn parse_chat(text: &str) -> String {
    serde_json::to_string(&parse_command(text)).unwrap()
}

/// The demo plan: a flower round opens five seconds in, a nostalgia round follows.
pub fn demo_plan(seed: u64) -> SessionPlan {
    SessionPlan {
        total_duration_ms: 1_200_000,
        rounds: vec![
            PlannedRound {
                at_ms: 5_000,
                spec: RoundSpec { threshold: 5, ..RoundSpec::new(RoundMode::keyword("花", &["花", "flower"]), WinEffect::PetalField) },
            },
            PlannedRound {
                at_ms: 600_000,
                spec: RoundSpec { threshold: 5, ..RoundSpec::new(RoundMode::Theme("nostalgia".into()), WinEffect::FireworkVolley) },
            },
        ],
        seed,
    }
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
    background: Frame,
    pending: Vec<RoomEvent>,
    recent: Vec<EffectRecord>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Demo {
        let scene = Arc::new(SceneConfig::demo());
        let background = synthetic_background(&scene);
        let session = Session::new(demo_plan(seed), scene, Arc::new(bundled_corpus())).expect("demo plan is valid");
        Demo { session, background, pending: Vec::new(), recent: Vec::new() }
    }

    /// Queues a chat line for the next tick.
    pub fn chat(&mut self, user_id: &str, display_name: &str, text: &str) {
        let ev = RoomEvent::chat(user_id, display_name, self.session.now_ms(), text);
        self.pending.push(ev);
    }

    /// Queues a gift such as `"9.99"` or `"52"`. Returns false if the amount does not parse.
    pub fn gift(&mut self, user_id: &str, display_name: &str, amount: &str) -> bool {
        match amount.parse::<Cny>() {
            Ok(cny) => {
                let ev = RoomEvent::gift(user_id, display_name, self.session.now_ms(), cny);
                self.pending.push(ev);
                true
            }
            Err(_) => false,
        }
    }

    /// Advances `ticks` ticks. Queued events land on the first of them.
    pub fn step(&mut self, ticks: u32) {
        for _ in 0..ticks {
            let events = std::mem::take(&mut self.pending);
            let records = self.session.run_tick(events.iter().map(|e| (e, false)));
            self.recent.extend(records);
        }
    }

    /// Effects produced since the last call, as a JSON array.
    pub fn take_effects(&mut self) -> String {
        let recent = std::mem::take(&mut self.recent);
        serde_json::to_string(&recent).unwrap()
    }

    /// RGBA bytes of the current frame, row-major, `width() * height() * 4` long.
    pub fn render(&self) -> Vec<u8> {
        let sim = self.session.sim();
        let list = build_render_list(sim, &sim.cfg);
        rasterize(&list, &sim.cfg, &self.background).expect("background matches the screen").pixels
    }

    /// The frame's draw list as JSON.
    pub fn render_list(&self) -> String {
        let sim = self.session.sim();
        serde_json::to_string(&build_render_list(sim, &sim.cfg)).unwrap()
    }

    /// The verse board, or `null` between rounds.
    pub fn board(&self) -> String {
        let sim = self.session.sim();
        serde_json::to_string(&sim.verse.board_view(sim.now_ms())).unwrap()
    }

    pub fn width(&self) -> u32 {
        self.session.sim().cfg.screen.width_px
    }

    pub fn height(&self) -> u32 {
        self.session.sim().cfg.screen.height_px
    }

    pub fn tick(&self) -> u64 {
        self.session.tick()
    }

    pub fn finished(&self) -> bool {
        self.session.is_finished()
    }

    /// Digest of the effect log so far; two pages fed the same input agree on it.
    pub fn digest(&self) -> String {
        self.session.digest()
    }
}
