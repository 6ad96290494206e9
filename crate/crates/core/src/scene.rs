//! Static model of the fixed-camera scene: screen, water surface, occluders and
//! spawn regions.
//!
//! Depth is a 2.5-D scalar. Because the camera looks down over the lake, a point lower
//! on screen is nearer; `depth_of(p) = -p.y` and larger depth means farther away.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::{Point, Polygon, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Screen {
    pub width_px: u32,
    pub height_px: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occluder {
    pub polygon: Polygon,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PetalLifetime {
    /// Once unlocked, the petal field stays until the session ends.
    #[default]
    Lasting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConstants {
    pub lotus_drift_px_s: f64,
    pub lotus_dash_multiplier: f64,
    pub dash_duration_ms: u64,
    pub ripple_period_ms: u64,
    pub ripple_lifetime_ms: u64,
    pub fish_jump_duration_ms: u64,
    pub umbrella_ascent_px_s: f64,
    pub firework_flight_ms: u64,
    pub firework_burst_ms: u64,
    pub petal_field_lifetime: PetalLifetime,
    pub tick_hz: u32,
    pub lotus_radius_px: f64,
    pub fish_radius_px: f64,
    pub fish_jump_height_px: f64,
    pub fish_jump_span_px: f64,
    pub umbrella_radius_px: f64,
    pub fish_looks: u32,
    pub umbrella_textures: u32,
}

impl Default for TuningConstants {
    fn default() -> Self {
        Self {
            lotus_drift_px_s: 12.0,
            lotus_dash_multiplier: 6.0,
            dash_duration_ms: 1500,
            ripple_period_ms: 800,
            ripple_lifetime_ms: 1200,
            fish_jump_duration_ms: 1000,
            umbrella_ascent_px_s: 30.0,
            firework_flight_ms: 1400,
            firework_burst_ms: 1200,
            petal_field_lifetime: PetalLifetime::Lasting,
            tick_hz: 30,
            lotus_radius_px: 24.0,
            fish_radius_px: 14.0,
            fish_jump_height_px: 60.0,
            fish_jump_span_px: 80.0,
            umbrella_radius_px: 32.0,
            fish_looks: 4,
            umbrella_textures: 6,
        }
    }
}

impl TuningConstants {
    fn validate(&self) -> Result<(), SceneError> {
        let reals = [
            ("lotus_drift_px_s", self.lotus_drift_px_s),
            ("lotus_dash_multiplier", self.lotus_dash_multiplier),
            ("umbrella_ascent_px_s", self.umbrella_ascent_px_s),
            ("lotus_radius_px", self.lotus_radius_px),
            ("fish_radius_px", self.fish_radius_px),
            ("fish_jump_height_px", self.fish_jump_height_px),
            ("fish_jump_span_px", self.fish_jump_span_px),
            ("umbrella_radius_px", self.umbrella_radius_px),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(SceneError::new(format!("tuning.{name}"), "must be positive and finite"));
            }
        }
        let ints = [
            ("dash_duration_ms", self.dash_duration_ms),
            ("ripple_period_ms", self.ripple_period_ms),
            ("ripple_lifetime_ms", self.ripple_lifetime_ms),
            ("fish_jump_duration_ms", self.fish_jump_duration_ms),
            ("firework_flight_ms", self.firework_flight_ms),
            ("firework_burst_ms", self.firework_burst_ms),
            ("tick_hz", u64::from(self.tick_hz)),
            ("fish_looks", u64::from(self.fish_looks)),
            ("umbrella_textures", u64::from(self.umbrella_textures)),
        ];
        for (name, v) in ints {
            if v == 0 {
                return Err(SceneError::new(format!("tuning.{name}"), "must be positive"));
            }
        }
        if self.tick_hz > 1000 {
            return Err(SceneError::new("tuning.tick_hz", "must not exceed 1000"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub screen: Screen,
    pub background_ref: String,
    pub water: Polygon,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    /// The far-end line fireworks launch from.
    pub firework_spawn: Segment,
    /// Region inside the water where new lotuses appear.
    pub lotus_spawn: Polygon,
    #[serde(default)]
    pub tuning: TuningConstants,
}

/// A validation failure, with the path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneError {
    pub path: String,
    pub reason: String,
}

impl SceneError {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { path: path.into(), reason: reason.into() }
    }
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

impl std::error::Error for SceneError {}

fn check_polygon(path: &str, poly: &Polygon) -> Result<(), SceneError> {
    if poly.len() < 3 {
        return Err(SceneError::new(path, "needs at least 3 vertices"));
    }
    if let Some(i) = poly.vertices.iter().position(|v| !v.is_finite()) {
        return Err(SceneError::new(format!("{path}[{i}]"), "non-finite coordinate"));
    }
    Ok(())
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.screen.width_px == 0 || self.screen.height_px == 0 {
            return Err(SceneError::new("screen", "dimensions must be positive"));
        }
        check_polygon("water", &self.water)?;
        if !self.water.is_simple() {
            return Err(SceneError::new("water", "not simple"));
        }
        for (i, occ) in self.occluders.iter().enumerate() {
            check_polygon(&format!("occluders[{i}].polygon"), &occ.polygon)?;
            if !occ.depth.is_finite() {
                return Err(SceneError::new(format!("occluders[{i}].depth"), "must be finite"));
            }
        }
        if !self.firework_spawn.a.is_finite() || !self.firework_spawn.b.is_finite() {
            return Err(SceneError::new("firework_spawn", "non-finite coordinate"));
        }
        check_polygon("lotus_spawn", &self.lotus_spawn)?;
        if let Some(p) = self.lotus_spawn_samples().find(|p| !self.point_in_water(*p)) {
            return Err(SceneError::new(
                "lotus_spawn",
                format!("not contained in water (point [{}, {}])", p.x, p.y),
            ));
        }
        self.tuning.validate()
    }

    /// Vertices plus a grid of interior points of the lotus spawn region.
    fn lotus_spawn_samples(&self) -> impl Iterator<Item = Point> + '_ {
        const N: usize = 16;
        let b = self.lotus_spawn.bounds();
        let grid = (0..=N).flat_map(move |i| {
            (0..=N).map(move |j| {
                Point::new(
                    b.min.x + b.width() * i as f64 / N as f64,
                    b.min.y + b.height() * j as f64 / N as f64,
                )
            })
        });
        self.lotus_spawn
            .vertices
            .iter()
            .copied()
            .chain(grid.filter(|p| self.lotus_spawn.contains(*p)))
    }

    pub fn point_in_water(&self, p: Point) -> bool {
        self.water.contains(p)
    }

    pub fn width(&self) -> f64 {
        f64::from(self.screen.width_px)
    }

    pub fn height(&self) -> f64 {
        f64::from(self.screen.height_px)
    }

    /// Tick length in milliseconds (fractional at 30 Hz).
    pub fn tick_ms(&self) -> f64 {
        1000.0 / f64::from(self.tuning.tick_hz)
    }

    /// A small, valid scene used by tests, examples and the browser demo.
    pub fn demo() -> Self {
        SceneConfig {
            screen: Screen { width_px: 640, height_px: 360 },
            background_ref: "background.png".into(),
            water: Polygon::new(vec![
                Point::new(0.0, 180.0),
                Point::new(640.0, 170.0),
                Point::new(640.0, 360.0),
                Point::new(0.0, 360.0),
            ]),
            occluders: vec![
                // Near-shore willow on the left edge.
                Occluder {
                    polygon: Polygon::new(vec![
                        Point::new(0.0, 120.0),
                        Point::new(90.0, 150.0),
                        Point::new(120.0, 360.0),
                        Point::new(0.0, 360.0),
                    ]),
                    depth: -330.0,
                },
                // Causeway bridge crossing the middle distance.
                Occluder {
                    polygon: Polygon::new(vec![
                        Point::new(260.0, 196.0),
                        Point::new(520.0, 190.0),
                        Point::new(520.0, 206.0),
                        Point::new(260.0, 212.0),
                    ]),
                    depth: -205.0,
                },
            ],
            firework_spawn: Segment { a: Point::new(160.0, 150.0), b: Point::new(600.0, 140.0) },
            lotus_spawn: Polygon::rect(140.0, 250.0, 300.0, 330.0),
            tuning: TuningConstants::default(),
        }
    }
}

/// Parses and validates a scene-config JSON document.
pub fn load_scene(document: &[u8]) -> Result<SceneConfig, SceneError> {
    let cfg: SceneConfig = serde_json::from_slice(document).map_err(|e| {
        let msg = e.to_string();
        let path = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("missing field") || msg.starts_with("unknown field"))
            .unwrap_or("document")
            .to_owned();
        SceneError::new(path, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn point_in_water(cfg: &SceneConfig, p: Point) -> bool {
    cfg.point_in_water(p)
}

/// Scene depth of a screen point. Larger values are farther from the camera.
pub fn depth_of(p: Point) -> f64 {
    -p.y
}
