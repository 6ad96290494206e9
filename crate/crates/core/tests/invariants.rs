use std::sync::Arc;

use arsls_core::effects::Effect;
use arsls_core::geom::{Point, Polygon};
use arsls_core::protocol::{Command, CommandTable, RoomEvent};
use arsls_core::scene::{point_in_water, SceneConfig};
use arsls_core::sim::{Fish, SimState};
use arsls_core::verse::{bundled_corpus, VerseCorpus};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn sim(seed: u64) -> SimState {
    SimState::new(Arc::new(SceneConfig::demo()), Arc::new(VerseCorpus::default()), seed)
}

/// Sutherland–Hodgman clip of `poly` against an axis-aligned box, then shoelace area.
fn clipped_area(poly: &[Point], x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    type Inside = fn(Point, f64) -> bool;
    type Cross = fn(Point, Point, f64) -> Point;
    let lerp_x: Cross = |a, b, x| Point::new(x, a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x));
    let lerp_y: Cross = |a, b, y| Point::new(a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y), y);
    let planes: [(Inside, Cross, f64); 4] = [
        (|p, v| p.x >= v, lerp_x, x0),
        (|p, v| p.x <= v, lerp_x, x1),
        (|p, v| p.y >= v, lerp_y, y0),
        (|p, v| p.y <= v, lerp_y, y1),
    ];
    let mut pts = poly.to_vec();
    for (inside, cross, v) in planes {
        let mut out = Vec::new();
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            match (inside(a, v), inside(b, v)) {
                (true, true) => out.push(b),
                (true, false) => out.push(cross(a, b, v)),
                (false, true) => {
                    out.push(cross(a, b, v));
                    out.push(b);
                }
                (false, false) => {}
            }
        }
        pts = out;
        if pts.is_empty() {
            return 0.0;
        }
    }
    let mut twice = 0.0;
    for i in 0..pts.len() {
        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
        twice += a.x * b.y - b.x * a.y;
    }
    twice.abs() / 2.0
}

#[test]
fn clip_oracle_sanity() {
    let sq = Polygon::rect(0.0, 0.0, 10.0, 10.0);
    assert!((clipped_area(&sq.vertices, 5.0, 5.0, 20.0, 20.0) - 25.0).abs() < 1e-9);
    assert_eq!(clipped_area(&sq.vertices, 20.0, 20.0, 30.0, 30.0), 0.0);
}

#[test]
fn fish_food_is_uniform_over_the_water() {
    const N: usize = 10_000;
    let mut s = sim(2024);
    let water = s.cfg.water.clone();
    let b = water.bounds();
    let (cw, ch) = (b.width() / 4.0, b.height() / 4.0);
    let mut observed = [0f64; 16];
    for i in 0..N {
        s.apply_command(&format!("u{i}"), "n", Command::FeedFish);
        for rec in s.drain_effects() {
            if let Effect::FishSpawned { x, y, .. } = rec.effect {
                let p = Point::new(x, y);
                assert!(point_in_water(&s.cfg, p));
                let cx = (((x - b.min.x) / cw) as usize).min(3);
                let cy = (((y - b.min.y) / ch) as usize).min(3);
                observed[cy * 4 + cx] += 1.0;
            }
        }
        s.fishes.clear();
    }
    let total: f64 = clipped_area(&water.vertices, b.min.x, b.min.y, b.max.x, b.max.y);
    let mut chi2 = 0.0;
    let mut cells = 0;
    for cy in 0..4 {
        for cx in 0..4 {
            let x0 = b.min.x + cx as f64 * cw;
            let y0 = b.min.y + cy as f64 * ch;
            let expected = N as f64 * clipped_area(&water.vertices, x0, y0, x0 + cw, y0 + ch) / total;
            if expected < 1e-9 {
                assert_eq!(observed[cy * 4 + cx], 0.0);
                continue;
            }
            cells += 1;
            chi2 += (observed[cy * 4 + cx] - expected).powi(2) / expected;
        }
    }
    let p = 1.0 - ChiSquared::new(f64::from(cells - 1)).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2:.2} over {cells} cells, p = {p:.4}");
}

#[test]
fn fish_apex_is_at_half_time() {
    let f = Fish { id: 0, owner_id: "u".into(), food_pos: Point::new(300.0, 300.0), started_at_ms: 0, look_id: 0 };
    let (dur, span, h) = (1000.0, 80.0, 60.0);
    let samples: Vec<(f64, Point)> = (0..=1000).map(|ms| (ms as f64, f.arc(ms as f64, dur, span, h))).collect();
    let (t_top, top) = samples.iter().min_by(|a, b| a.1.y.total_cmp(&b.1.y)).unwrap();
    assert_eq!(*t_top, 500.0);
    assert!((top.y - (300.0 - h)).abs() < 1e-9);
    for ms in 0..=500 {
        let a = f.arc(500.0 - ms as f64, dur, span, h);
        let b = f.arc(500.0 + ms as f64, dur, span, h);
        assert!((a.y - b.y).abs() < 1e-9);
    }
}

#[test]
fn bundled_corpus_is_usable() {
    let c = bundled_corpus();
    assert!(c.len() >= 50);
    for theme in ["flower", "hangzhou-jiangnan", "nostalgia"] {
        assert!(c.entries().iter().filter(|e| e.themes.contains(theme)).count() >= 10, "{theme}");
    }
}

fn arb_script() -> impl Strategy<Value = Vec<(u8, u8, u16)>> {
    // (user, action, gap in ticks)
    prop::collection::vec((0u8..6, 0u8..5, 0u16..40), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ripples_stay_in_water(seed in any::<u64>(), script in arb_script()) {
        let mut s = sim(seed);
        let table = CommandTable::default();
        let actions = ["release my lotus", "dash my lotus", "feed fish", "release my lotus", "feed fish"];
        let mut ts = 0;
        for (user, action, gap) in script {
            let ev = RoomEvent::chat(&format!("u{user}"), "n", ts, actions[action as usize]);
            s.apply_event(&ev, &table, false);
            for _ in 0..gap {
                s.tick();
                for r in &s.ripples {
                    prop_assert!(point_in_water(&s.cfg, r.center), "{:?}", r.center);
                }
            }
            ts = s.now_ms();
            for rec in s.drain_effects() {
                if let Effect::Ripple { x, y, .. } = rec.effect {
                    prop_assert!(point_in_water(&s.cfg, Point::new(x, y)));
                }
            }
        }
    }
}
