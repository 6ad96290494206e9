use std::sync::Arc;

use arsls_core::compositor::decode_png;
use arsls_core::effects::EffectRecord;
use arsls_core::protocol::{Cny, RoomEvent};
use arsls_core::replay::{diff_traces, encode_log_entry, read_event_log, replay, LogEntry, PngDir, TraceDiff};
use arsls_core::scene::SceneConfig;
use arsls_core::session::{PlannedRound, SessionPlan};
use arsls_core::synth::{generate, TrafficSpec};
use arsls_core::verse::{bundled_corpus, RoundMode, RoundSpec, VerseCorpus, WinEffect};

fn scene() -> Arc<SceneConfig> {
    Arc::new(SceneConfig::demo())
}

fn corpus() -> Arc<VerseCorpus> {
    Arc::new(bundled_corpus())
}

fn entries(events: Vec<RoomEvent>) -> Vec<LogEntry> {
    events.into_iter().map(LogEntry::new).collect()
}

fn short_plan(total_ms: u64) -> SessionPlan {
    SessionPlan {
        total_duration_ms: total_ms,
        rounds: vec![PlannedRound {
            at_ms: 0,
            spec: RoundSpec { duration_ms: total_ms, ..RoundSpec::new(RoundMode::keyword("flower", &["花", "flower"]), WinEffect::PetalField) },
        }],
        seed: 0,
    }
}

#[test]
fn same_inputs_same_digest() {
    let log = entries(generate(&TrafficSpec { duration_ms: 120_000, events: 300, ..Default::default() }, &corpus()));
    let plan = short_plan(120_000);
    let (a, _) = replay(&log, scene(), corpus(), plan.clone(), 42, None).unwrap();
    let (b, _) = replay(&log, scene(), corpus(), plan, 42, None).unwrap();
    assert_eq!(a.digest, b.digest);
    assert_eq!(a.state_digest, b.state_digest);
    assert_eq!(a.counters, b.counters);
    assert_eq!(a.counters.events, 300);
}

#[test]
fn empty_log_is_just_the_schedule() {
    let (report, session) = replay(&[], scene(), corpus(), SessionPlan::default(), 7, None).unwrap();
    assert_eq!(report.ticks, 36_000);
    assert_eq!(report.counters.events, 0);
    assert_eq!(report.counters.fireworks, 0);
    assert!(report.counters.commands.values().all(|&v| v == 0));
    // Two rounds started and lost, then the end marker.
    let kinds: Vec<String> = session
        .log()
        .lines()
        .iter()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(kinds, ["round_started", "round_lost", "round_started", "round_lost", "session_end"]);
    // The seed never matters when nothing random happens.
    let (other, _) = replay(&[], scene(), corpus(), SessionPlan::default(), 8, None).unwrap();
    assert_eq!(report.digest, other.digest);
}

#[test]
fn hand_built_twelve_event_log() {
    let ev = vec![
        RoomEvent::chat("a", "Ann", 100, "release my lotus"),
        RoomEvent::chat("b", "Bo", 200, "release my lotus"),
        RoomEvent::chat("a", "Ann", 300, "release my lotus"),
        RoomEvent::chat("c", "Cy", 400, "dash my lotus"),
        RoomEvent::chat("a", "Ann", 500, "dash my lotus"),
        RoomEvent::chat("c", "Cy", 600, "feed fish"),
        RoomEvent::gift("d", "Di", 700, "9.99".parse().unwrap()),
        RoomEvent::gift("e", "Ed", 800, "10.00".parse().unwrap()),
        RoomEvent::chat("e", "Ed", 900, "#MyStory hello lake"),
        RoomEvent::chat("f", "Fa", 1000, "感时花溅泪"),
        RoomEvent::chat("g", "Gu", 1100, "花落知多少"),
        RoomEvent::chat("h", "Hu", 1200, "感时花溅泪"),
    ];
    let text: String = ev.iter().map(|e| encode_log_entry(&LogEntry::new(e.clone())) + "\n").collect();
    let log = read_event_log(&text).unwrap();
    let (r, session) = replay(&log, scene(), corpus(), short_plan(10_000), 42, None).unwrap();
    let c = &r.counters;
    assert_eq!(c.events, 12);
    assert_eq!(c.fireworks, 1);
    assert_eq!((c.tokens_granted, c.tokens_consumed), (1, 1));
    assert_eq!(c.lotuses_spawned, 2);
    assert_eq!(c.fish, 1);
    assert_eq!(c.umbrellas, 1);
    assert_eq!(c.rejections, 2);
    assert_eq!(c.judgments["accepted"], 2);
    assert_eq!(c.judgments["duplicate"], 1);
    assert_eq!(
        (c.commands["release_lotus"], c.commands["dash_lotus"], c.commands["feed_fish"], c.commands["story"], c.commands["plain"]),
        (3, 2, 1, 1, 3)
    );
    let judged: Vec<EffectRecord> = session
        .log()
        .lines()
        .iter()
        .map(|l| serde_json::from_str::<EffectRecord>(l).unwrap())
        .filter(|r| matches!(r.effect, arsls_core::effects::Effect::VerseJudged { .. }))
        .collect();
    let combos: Vec<u32> = judged
        .iter()
        .map(|r| match r.effect {
            arsls_core::effects::Effect::VerseJudged { combo, .. } => combo,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(combos, [1, 2, 0]);
    assert_eq!(judged[0].tick, 30);
}

#[test]
fn seeds_diverge_at_the_first_random_draw() {
    let log = entries(vec![
        RoomEvent::chat("x", "X", 50, "hello"),
        RoomEvent::chat("a", "A", 1000, "release my lotus"),
        RoomEvent::chat("b", "B", 2000, "feed fish"),
    ]);
    let plan = SessionPlan { total_duration_ms: 5_000, rounds: vec![], seed: 0 };
    let (_, s42) = replay(&log, scene(), corpus(), plan.clone(), 42, None).unwrap();
    let (_, s43) = replay(&log, scene(), corpus(), plan, 43, None).unwrap();
    match diff_traces(&s42.log().to_text(), &s43.log().to_text()) {
        TraceDiff::Diverged { line, left, right, context } => {
            assert_eq!(line, 2);
            assert!(left.unwrap().contains("\"lotus_spawned\""));
            assert!(right.unwrap().contains("\"lotus_spawned\""));
            assert_eq!(context.len(), 1);
            assert!(context[0].contains("\"chat\""));
        }
        TraceDiff::Equal => panic!("different seeds gave identical traces"),
    }
    let text = s42.log().to_text();
    let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    match diff_traces(&text, &truncated) {
        TraceDiff::Diverged { line, right, .. } => {
            assert_eq!(line, 4);
            assert_eq!(right, None);
        }
        TraceDiff::Equal => panic!(),
    }
}

#[test]
fn twenty_minute_log_replays_quickly() {
    let log = entries(generate(&TrafficSpec::default(), &corpus()));
    assert!(log.len() >= 2000);
    let (r, _) = replay(&log, scene(), corpus(), SessionPlan::default(), 42, None).unwrap();
    assert_eq!(r.ticks, 36_000);
    assert_eq!(r.counters.events + r.counters.ignored_events, log.len() as u64);
    assert!(r.wall_time_ms < 5_000, "took {} ms", r.wall_time_ms);
}

#[test]
fn frame_dump_names_frames_by_tick() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scene();
    let log = entries(vec![RoomEvent::chat("a", "A", 0, "release my lotus"), RoomEvent::gift("b", "B", 10, Cny::from_cents(300))]);
    let mut sink = PngDir::new(dir.path(), 30, &cfg).unwrap();
    let plan = SessionPlan { total_duration_ms: 2_000, rounds: vec![], seed: 0 };
    let (r, _) = replay(&log, cfg.clone(), corpus(), plan, 1, Some(&mut sink)).unwrap();
    assert_eq!(r.frames_written, 2);
    let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["000030.png", "000060.png"]);
    let frame = decode_png(&std::fs::read(dir.path().join("000030.png")).unwrap()).unwrap();
    assert_eq!((frame.width, frame.height), (cfg.screen.width_px, cfg.screen.height_px));
}
