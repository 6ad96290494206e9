//! Composition: simulation snapshot → depth-sorted render list → RGBA frame.
//!
//! The render list is what viewer clients draw over the live background. The
//! rasterizer is a headless reference renderer using solid placeholder shapes; it
//! implements transparent occluders by refusing to paint scene pixels that lie inside
//! a nearer occluder polygon, so the real background shows through.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;
use crate::scene::{depth_of, SceneConfig};
use crate::sim::{FireworkPhase, SimState};
use crate::verse::BoardView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpriteId {
    Background,
    Lotus,
    Fish(u32),
    FishFood,
    Ripple,
    Rocket,
    Burst,
    Spark(u32),
    Umbrella(u32),
    Petal,
    Board,
}

impl fmt::Display for SpriteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpriteId::Background => f.write_str("background"),
            SpriteId::Lotus => f.write_str("lotus"),
            SpriteId::Fish(v) => write!(f, "fish.{v}"),
            SpriteId::FishFood => f.write_str("fish_food"),
            SpriteId::Ripple => f.write_str("ripple"),
            SpriteId::Rocket => f.write_str("rocket"),
            SpriteId::Burst => f.write_str("burst"),
            SpriteId::Spark(v) => write!(f, "spark.{v}"),
            SpriteId::Umbrella(v) => write!(f, "umbrella.{v}"),
            SpriteId::Petal => f.write_str("petal"),
            SpriteId::Board => f.write_str("board"),
        }
    }
}

impl FromStr for SpriteId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, variant) = match s.split_once('.') {
            Some((b, v)) => (b, Some(v.parse::<u32>().map_err(|_| format!("bad sprite `{s}`"))?)),
            None => (s, None),
        };
        Ok(match (base, variant) {
            ("background", None) => SpriteId::Background,
            ("lotus", None) => SpriteId::Lotus,
            ("fish", Some(v)) => SpriteId::Fish(v),
            ("fish_food", None) => SpriteId::FishFood,
            ("ripple", None) => SpriteId::Ripple,
            ("rocket", None) => SpriteId::Rocket,
            ("burst", None) => SpriteId::Burst,
            ("spark", Some(v)) => SpriteId::Spark(v),
            ("umbrella", Some(v)) => SpriteId::Umbrella(v),
            ("petal", None) => SpriteId::Petal,
            ("board", None) => SpriteId::Board,
            _ => return Err(format!("unknown sprite `{s}`")),
        })
    }
}

impl Serialize for SpriteId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpriteId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Draw layers, back to front. Scene commands are depth-sorted within their layer and
/// are the only ones occluders can hide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Background,
    Scene,
    Overlay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawCommand {
    pub sprite_id: SpriteId,
    pub layer: Layer,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entity_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub owner_id: Option<String>,
    pub pos: Point,
    pub scale: f64,
    /// Position in the final draw order.
    pub z_order: u32,
    /// Scene depth (larger is farther); zero outside the scene layer.
    pub depth: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    pub opacity: f64,
}

impl DrawCommand {
    fn scene(sprite_id: SpriteId, entity_id: u64, pos: Point, depth: f64) -> Self {
        Self {
            sprite_id,
            layer: Layer::Scene,
            entity_id: Some(entity_id),
            owner_id: None,
            pos,
            scale: 1.0,
            z_order: 0,
            depth,
            label: None,
            opacity: 1.0,
        }
    }

    fn overlay(sprite_id: SpriteId, pos: Point) -> Self {
        Self {
            layer: Layer::Overlay,
            entity_id: None,
            depth: 0.0,
            ..Self::scene(sprite_id, 0, pos, 0.0)
        }
    }

    fn owned(mut self, owner: &str) -> Self {
        self.owner_id = Some(owner.to_owned());
        self
    }

    fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderList {
    pub tick: u64,
    pub commands: Vec<DrawCommand>,
}

/// Where the verse board sits: top-left corner and size.
pub const BOARD_ORIGIN: Point = Point::new(12.0, 12.0);
pub const BOARD_SIZE: (f64, f64) = (200.0, 200.0);
pub const PETAL_COUNT: u32 = 48;

/// Back-to-front ordering: layer, then decreasing depth, then entity id.
fn draw_order(a: &DrawCommand, b: &DrawCommand) -> Ordering {
    a.layer
        .cmp(&b.layer)
        .then_with(|| b.depth.total_cmp(&a.depth))
        .then_with(|| a.entity_id.cmp(&b.entity_id))
}

pub fn build_render_list(state: &SimState, cfg: &SceneConfig) -> RenderList {
    let now = state.now_ms();
    let t = &cfg.tuning;
    let mut cmds = vec![DrawCommand {
        layer: Layer::Background,
        ..DrawCommand::overlay(SpriteId::Background, Point::new(0.0, 0.0))
    }];

    for r in &state.ripples {
        let age = (now - r.born_at_ms) as f64 / t.ripple_lifetime_ms as f64;
        let mut c = DrawCommand::scene(SpriteId::Ripple, r.source, r.center, depth_of(r.center));
        c.scale = 1.0 + 9.0 * age;
        c.opacity = (1.0 - age).clamp(0.0, 1.0);
        cmds.push(c);
    }
    for l in &state.lotuses {
        let pos = Point::new(l.pos.x, l.pos.y + l.bob(now));
        cmds.push(
            DrawCommand::scene(SpriteId::Lotus, l.id, pos, depth_of(l.pos))
                .owned(&l.owner_id)
                .labeled(l.owner_name.clone()),
        );
    }
    for f in &state.fishes {
        let elapsed = (now - f.started_at_ms) as f64;
        let duration = t.fish_jump_duration_ms as f64;
        let depth = depth_of(f.food_pos);
        if elapsed < duration / 2.0 {
            cmds.push(DrawCommand::scene(SpriteId::FishFood, f.id, f.food_pos, depth).owned(&f.owner_id));
        }
        let pos = f.arc(elapsed, duration, t.fish_jump_span_px, t.fish_jump_height_px);
        cmds.push(DrawCommand::scene(SpriteId::Fish(f.look_id), f.id, pos, depth).owned(&f.owner_id));
    }
    for fw in &state.fireworks {
        let owner = fw.user_id.as_deref().unwrap_or("");
        match &fw.phase {
            FireworkPhase::Ascending => {
                let pos = fw.rocket_pos(now, t.firework_flight_ms);
                cmds.push(
                    DrawCommand::scene(SpriteId::Rocket, fw.id, pos, fw.depth())
                        .owned(owner)
                        .labeled(fw.tipper_name.clone()),
                );
            }
            FireworkPhase::Exploding { since_ms, particles } => {
                let fade = 1.0 - (now - since_ms) as f64 / t.firework_burst_ms as f64;
                let mut burst = DrawCommand::scene(SpriteId::Burst, fw.id, fw.apex, fw.depth())
                    .owned(owner)
                    .labeled(fw.tipper_name.clone());
                burst.opacity = fade.clamp(0.0, 1.0);
                cmds.push(burst);
                for p in particles {
                    let mut c = DrawCommand::scene(
                        SpriteId::Spark(p.color),
                        fw.id,
                        fw.spark_pos(p, *since_ms, now),
                        fw.depth(),
                    );
                    c.opacity = fade.clamp(0.0, 1.0);
                    cmds.push(c);
                }
            }
        }
    }
    for u in &state.umbrellas {
        cmds.push(
            DrawCommand::scene(SpriteId::Umbrella(u.texture_id), u.id, u.pos, u.spawn_depth)
                .owned(&u.owner_id)
                .labeled(format!("{}: {}", u.owner_name, u.story)),
        );
    }
    if state.petal_field.active {
        let (w, h) = (cfg.width(), cfg.height());
        let t_s = now as f64 / 1000.0;
        for i in 0..PETAL_COUNT {
            let fi = f64::from(i);
            let x = (fi * 137.508 + t_s * (14.0 + 3.0 * f64::from(i % 5))).rem_euclid(w);
            let y = (fi * 53.3 + t_s * (9.0 + 2.0 * f64::from(i % 7))).rem_euclid(h);
            let mut c = DrawCommand::overlay(SpriteId::Petal, Point::new(x, y));
            c.opacity = 0.85;
            cmds.push(c);
        }
    }
    if let Some(board) = state.verse.board_view(now) {
        cmds.push(DrawCommand::overlay(SpriteId::Board, BOARD_ORIGIN).labeled(board_label(&board)));
    }

    cmds.sort_by(draw_order);
    for (i, c) in cmds.iter_mut().enumerate() {
        c.z_order = i as u32;
    }
    RenderList { tick: state.tick, commands: cmds }
}

fn board_label(b: &BoardView) -> String {
    format!(
        "{} | {}/{} | combo {} | {}s",
        b.keyword_or_theme,
        b.progress.0,
        b.progress.1,
        b.combo,
        b.countdown_ms.div_ceil(1000)
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    /// Row-major RGBA8.
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, fill: [u8; 4]) -> Self {
        let pixels = fill.repeat((width as usize) * (height as usize));
        Self { width, height, pixels }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = ((y * self.width + x) * 4) as usize;
        self.pixels[i..i + 4].try_into().unwrap()
    }

    fn blend(&mut self, x: u32, y: u32, rgb: [u8; 3], alpha: f64) {
        let i = ((y * self.width + x) * 4) as usize;
        let a = alpha.clamp(0.0, 1.0);
        for c in 0..3 {
            let dst = f64::from(self.pixels[i + c]);
            self.pixels[i + c] = (dst + (f64::from(rgb[c]) - dst) * a).round() as u8;
        }
        self.pixels[i + 3] = 255;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompositeError {
    #[error("background is {got:?} but the screen is {want:?}")]
    DimMismatch { got: (u32, u32), want: (u32, u32) },
    #[error("png: {0}")]
    Png(String),
}

/// Solid placeholder shape for each sprite.
enum Shape {
    Disc(f64),
    Ring(f64, f64),
    Rect(f64, f64),
}

fn shape_of(sprite: SpriteId, scale: f64, cfg: &SceneConfig) -> Shape {
    let t = &cfg.tuning;
    match sprite {
        SpriteId::Background => Shape::Rect(0.0, 0.0),
        SpriteId::Lotus => Shape::Disc(t.lotus_radius_px * scale),
        SpriteId::Fish(_) => Shape::Disc(t.fish_radius_px * scale),
        SpriteId::FishFood => Shape::Disc(3.0 * scale),
        SpriteId::Ripple => Shape::Ring(4.0 * scale, 1.5),
        SpriteId::Rocket => Shape::Disc(3.0 * scale),
        SpriteId::Burst => Shape::Disc(6.0 * scale),
        SpriteId::Spark(_) => Shape::Disc(2.0 * scale),
        SpriteId::Umbrella(_) => Shape::Disc(t.umbrella_radius_px * scale),
        SpriteId::Petal => Shape::Disc(3.0 * scale),
        SpriteId::Board => Shape::Rect(BOARD_SIZE.0, BOARD_SIZE.1),
    }
}

const PALETTE: [[u8; 3]; 6] = [
    [235, 64, 52],
    [245, 190, 40],
    [80, 200, 90],
    [70, 140, 240],
    [200, 90, 220],
    [250, 250, 250],
];

fn color_of(sprite: SpriteId) -> [u8; 3] {
    match sprite {
        SpriteId::Background => [0, 0, 0],
        SpriteId::Lotus => [244, 143, 177],
        SpriteId::Fish(v) => [[240, 110, 30], [250, 200, 60], [230, 230, 220], [200, 40, 40]][v as usize % 4],
        SpriteId::FishFood => [150, 110, 60],
        SpriteId::Ripple => [220, 240, 255],
        SpriteId::Rocket => [255, 220, 150],
        SpriteId::Burst => [255, 255, 220],
        SpriteId::Spark(v) => PALETTE[v as usize % PALETTE.len()],
        SpriteId::Umbrella(v) => [[180, 40, 40], [200, 120, 40], [60, 110, 170], [40, 140, 110], [150, 60, 150], [210, 180, 90]]
            [v as usize % 6],
        SpriteId::Petal => [255, 182, 193],
        SpriteId::Board => [24, 24, 32],
    }
}

const LABEL_BG: [u8; 3] = [250, 250, 245];
const LABEL_GLYPH: [u8; 3] = [40, 40, 40];
const GLYPH_W: f64 = 6.0;
const LABEL_H: f64 = 12.0;
const LABEL_MAX_CHARS: usize = 32;

/// Paints a list in order. `mask` holds, per pixel, the depth of the nearest occluder
/// covering it (infinity where none); scene pixels farther than that are skipped.
struct Painter<'a> {
    frame: &'a mut Frame,
    mask: Vec<f64>,
}

impl Painter<'_> {
    fn fill(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, depth: Option<f64>, mut covers: impl FnMut(f64, f64) -> bool, rgb: [u8; 3], alpha: f64) {
        let w = self.frame.width as i64;
        let h = self.frame.height as i64;
        let xs = (x0.floor() as i64).max(0);
        let xe = (x1.ceil() as i64).min(w - 1);
        let ys = (y0.floor() as i64).max(0);
        let ye = (y1.ceil() as i64).min(h - 1);
        for y in ys..=ye {
            for x in xs..=xe {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                if !covers(cx, cy) {
                    continue;
                }
                if let Some(d) = depth {
                    if d > self.mask[(y * w + x) as usize] {
                        continue;
                    }
                }
                self.frame.blend(x as u32, y as u32, rgb, alpha);
            }
        }
    }

    fn draw(&mut self, cmd: &DrawCommand, cfg: &SceneConfig) {
        let depth = (cmd.layer == Layer::Scene).then_some(cmd.depth);
        let Point { x, y } = cmd.pos;
        let rgb = color_of(cmd.sprite_id);
        let top = match shape_of(cmd.sprite_id, cmd.scale, cfg) {
            Shape::Disc(r) => {
                self.fill(x - r, y - r, x + r, y + r, depth, |px, py| (px - x).powi(2) + (py - y).powi(2) <= r * r, rgb, cmd.opacity);
                y - r
            }
            Shape::Ring(r, width) => {
                let (inner, outer) = ((r - width).max(0.0), r + width);
                self.fill(
                    x - outer,
                    y - outer,
                    x + outer,
                    y + outer,
                    depth,
                    |px, py| {
                        let d2 = (px - x).powi(2) + (py - y).powi(2);
                        d2 >= inner * inner && d2 <= outer * outer
                    },
                    rgb,
                    cmd.opacity,
                );
                y - outer
            }
            Shape::Rect(w, h) => {
                if w > 0.0 && h > 0.0 {
                    self.fill(x, y, x + w, y + h, depth, |px, py| px >= x && px < x + w && py >= y && py < y + h, rgb, 0.8 * cmd.opacity);
                }
                y
            }
        };
        if let Some(label) = &cmd.label {
            let board = cmd.sprite_id == SpriteId::Board;
            let (lx, ly) = if board { (x + 6.0, y + 6.0) } else { (x, top - 4.0 - LABEL_H) };
            self.draw_label(label, lx, ly, !board, depth);
        }
    }

    /// Opaque label box with one block per visible character.
    fn draw_label(&mut self, text: &str, x: f64, y: f64, centered: bool, depth: Option<f64>) {
        let chars: Vec<char> = text.chars().take(LABEL_MAX_CHARS).collect();
        let width = chars.len() as f64 * GLYPH_W + 4.0;
        let x0 = if centered { x - width / 2.0 } else { x };
        let inside = |x0: f64, y0: f64, x1: f64, y1: f64| move |px: f64, py: f64| px >= x0 && px < x1 && py >= y0 && py < y1;
        self.fill(x0, y, x0 + width, y + LABEL_H, depth, inside(x0, y, x0 + width, y + LABEL_H), LABEL_BG, 1.0);
        for (i, c) in chars.iter().enumerate() {
            if c.is_whitespace() {
                continue;
            }
            let gx = x0 + 2.0 + i as f64 * GLYPH_W + 1.0;
            // Glyph height varies with the code point so different text looks different.
            let gh = 4.0 + f64::from(*c as u32 % 5);
            let gy = y + LABEL_H - 2.0 - gh;
            self.fill(gx, gy, gx + 4.0, gy + gh, depth, inside(gx, gy, gx + 4.0, gy + gh), LABEL_GLYPH, 1.0);
        }
    }
}

/// Per-pixel depth of the nearest occluder (sampled at pixel centres).
pub fn occluder_mask(cfg: &SceneConfig) -> Vec<f64> {
    let (w, h) = (cfg.screen.width_px as usize, cfg.screen.height_px as usize);
    let mut mask = vec![f64::INFINITY; w * h];
    for occ in &cfg.occluders {
        let b = occ.polygon.bounds();
        let xs = (b.min.x.floor().max(0.0)) as usize;
        let ys = (b.min.y.floor().max(0.0)) as usize;
        let xe = (b.max.x.ceil().max(0.0) as usize).min(w);
        let ye = (b.max.y.ceil().max(0.0) as usize).min(h);
        for y in ys..ye {
            for x in xs..xe {
                let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                if occ.polygon.contains(p) {
                    let m = &mut mask[y * w + x];
                    *m = m.min(occ.depth);
                }
            }
        }
    }
    mask
}

pub fn rasterize(list: &RenderList, cfg: &SceneConfig, background: &Frame) -> Result<Frame, CompositeError> {
    let want = (cfg.screen.width_px, cfg.screen.height_px);
    let got = (background.width, background.height);
    if got != want || background.pixels.len() != (want.0 as usize) * (want.1 as usize) * 4 {
        return Err(CompositeError::DimMismatch { got, want });
    }
    let mut frame = background.clone();
    let mut painter = Painter { frame: &mut frame, mask: occluder_mask(cfg) };
    for cmd in &list.commands {
        if cmd.layer != Layer::Background {
            painter.draw(cmd, cfg);
        }
    }
    Ok(frame)
}

/// Lossless PNG; identical frames give identical bytes.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width, frame.height);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Default);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(&frame.pixels).expect("in-memory PNG data");
    }
    out
}

/// Decodes a PNG into RGBA8, expanding grayscale, palette and RGB images.
pub fn decode_png(bytes: &[u8]) -> Result<Frame, CompositeError> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| CompositeError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| CompositeError::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let pixels = match info.color_type {
        png::ColorType::Rgba => buf,
        png::ColorType::Rgb => buf.chunks_exact(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|c| [c[0], c[0], c[0], c[1]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g, 255]).collect(),
        png::ColorType::Indexed => return Err(CompositeError::Png("unexpanded palette".into())),
    };
    Ok(Frame { width: info.width, height: info.height, pixels })
}

/// A plain stand-in for the camera image: sky gradient, lake, darker occluder shapes.
pub fn synthetic_background(cfg: &SceneConfig) -> Frame {
    let (w, h) = (cfg.screen.width_px, cfg.screen.height_px);
    let mut frame = Frame::new(w, h, [0, 0, 0, 255]);
    for y in 0..h {
        let t = f64::from(y) / f64::from(h.max(1));
        for x in 0..w {
            let p = Point::new(f64::from(x) + 0.5, f64::from(y) + 0.5);
            let rgb = if cfg.occluders.iter().any(|o| o.polygon.contains(p)) {
                [62, 92, 70]
            } else if cfg.point_in_water(p) {
                [(40.0 + 30.0 * t) as u8, (90.0 + 40.0 * t) as u8, (120.0 + 30.0 * t) as u8]
            } else {
                [(150.0 + 60.0 * t) as u8, (185.0 + 40.0 * t) as u8, (225.0 + 20.0 * t) as u8]
            };
            let i = ((y * w + x) * 4) as usize;
            frame.pixels[i..i + 3].copy_from_slice(&rgb);
        }
    }
    frame
}
