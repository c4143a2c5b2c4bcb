//! Flat-colour sprite rendering of scene states.

use super::{Brightness, Emotion, Kind, Pose, SceneState, Scenery};

/// Canvas side in pixels.
pub const SIZE: usize = 64;
/// Cell side in pixels.
pub const CELL: usize = 8;
/// Cells per canvas side.
pub const GRID: usize = SIZE / CELL;

pub type Image = image::RgbImage;

const SPRITE: usize = 7;

// '#' body, 'e' face pixels (coloured by emotion), '.' transparent.
const CAT: [&str; SPRITE] = [
    "#.....#",
    "##...##",
    "#e###e#",
    "#######",
    ".#####.",
    ".#...#.",
    ".#...#.",
];
const MOUSE: [&str; SPRITE] = [
    ".......",
    ".......",
    "##.##..",
    "#####..",
    "#e###..",
    ".####..",
    "..#.###",
];
const DOG: [&str; SPRITE] = [
    "##...##",
    "#######",
    "#e###e#",
    "#######",
    ".#####.",
    ".#####.",
    ".#...#.",
];
const BALL: [&str; SPRITE] = [
    ".......",
    ".......",
    "..###..",
    ".#####.",
    ".#####.",
    "..###..",
    ".......",
];
const CHEESE: [&str; SPRITE] = [
    ".......",
    ".......",
    "......#",
    "....###",
    "..#####",
    "#######",
    "#######",
];
const LAMP: [&str; SPRITE] = [
    ".#####.",
    "#######",
    "...#...",
    "...#...",
    "...#...",
    "..###..",
    ".#####.",
];
const DOOR: [&str; SPRITE] = [
    "#######",
    "#.....#",
    "#.....#",
    "#....##",
    "#.....#",
    "#.....#",
    "#######",
];

fn mask(kind: Kind) -> &'static [&'static str; SPRITE] {
    match kind {
        Kind::Cat => &CAT,
        Kind::Mouse => &MOUSE,
        Kind::Dog => &DOG,
        Kind::Ball => &BALL,
        Kind::Cheese => &CHEESE,
        Kind::Lamp => &LAMP,
        Kind::Door => &DOOR,
    }
}

pub fn body_color(kind: Kind) -> [u8; 3] {
    match kind {
        Kind::Cat => [235, 135, 35],
        Kind::Mouse => [150, 150, 165],
        Kind::Dog => [120, 75, 30],
        Kind::Ball => [225, 30, 60],
        Kind::Cheese => [250, 215, 40],
        Kind::Lamp => [40, 205, 200],
        Kind::Door => [30, 125, 50],
    }
}

/// Face pixel colour per emotion, indexed by `Emotion::index`.
pub const EMOTION_COLORS: [[u8; 3]; 5] = [
    [0, 0, 0],
    [255, 240, 0],
    [255, 255, 255],
    [220, 0, 0],
    [150, 0, 210],
];

fn scenery_base(s: Scenery) -> [f64; 3] {
    match s {
        Scenery::Day => [135.0, 200.0, 235.0],
        Scenery::Night => [40.0, 45.0, 120.0],
        Scenery::Rain => [110.0, 115.0, 95.0],
        Scenery::Snow => [240.0, 235.0, 250.0],
        Scenery::Clear => [180.0, 230.0, 150.0],
    }
}

/// Uniform background colour of a scene.
pub fn background_color(scenery: Scenery, brightness: Brightness) -> [u8; 3] {
    let f = 0.4 + 0.6 * brightness.value();
    scenery_base(scenery).map(|c| (c * f).round() as u8)
}

/// Pixels of one sprite as (row, col, colour) offsets inside its cell.
///
/// The cell's top-left pixel is never covered, so it always shows the
/// background.
pub fn sprite_pixels(kind: Kind, pose: Pose, emotion: Emotion) -> Vec<(usize, usize, [u8; 3])> {
    let body = body_color(kind);
    let face = EMOTION_COLORS[emotion.index()];
    let mut out = Vec::new();
    for (mr, line) in mask(kind).iter().enumerate() {
        for (mc, ch) in line.bytes().enumerate() {
            let color = match ch {
                b'#' => body,
                b'e' => face,
                _ => continue,
            };
            let (r, c) = match pose {
                Pose::Idle => (1 + mr, 1 + mc),
                Pose::Jump => (mr, 1 + mc),
                Pose::Run => (1 + mr, if mr < 3 { mc } else { 1 + mc }),
                Pose::Fall => (SPRITE - mr, 1 + mc),
            };
            out.push((r, c, color));
        }
    }
    out
}

/// Deterministic render of a state; absent entities are not drawn.
pub fn render(state: &SceneState) -> Image {
    let bg = background_color(state.scenery, state.brightness);
    let mut img = Image::from_pixel(SIZE as u32, SIZE as u32, image::Rgb(bg));
    for e in state.present() {
        let (y0, x0) = (e.position.row as usize * CELL, e.position.col as usize * CELL);
        for (r, c, color) in sprite_pixels(e.kind, e.pose, e.emotion) {
            img.put_pixel((x0 + c) as u32, (y0 + r) as u32, image::Rgb(color));
        }
    }
    img
}
