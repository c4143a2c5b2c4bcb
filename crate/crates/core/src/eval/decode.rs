//! Template matching of images back to scene states.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::microworld::{
    background_color, sprite_pixels, Brightness, Emotion, Entity, Image, Kind, Pose, SceneState,
    Scenery, CELL, GRID, SIZE,
};

/// A decoded state with matching confidences in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedState {
    pub state: SceneState,
    pub background_confidence: f64,
    /// Row-major, one per grid cell.
    pub cell_confidence: Vec<f64>,
}

impl DecodedState {
    pub fn mean_confidence(&self) -> f64 {
        let n = self.cell_confidence.len() as f64 + 1.0;
        (self.background_confidence + self.cell_confidence.iter().sum::<f64>()) / n
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Sprite {
    kind: Kind,
    pose: Pose,
    emotion: Emotion,
}

fn sprites() -> &'static [(Sprite, Vec<(usize, usize, [u8; 3])>)] {
    static CELLS: OnceLock<Vec<(Sprite, Vec<(usize, usize, [u8; 3])>)>> = OnceLock::new();
    CELLS.get_or_init(|| {
        let mut out = Vec::new();
        for &kind in Kind::ALL {
            for &pose in kind.poses() {
                for &emotion in kind.emotions() {
                    out.push((Sprite { kind, pose, emotion }, sprite_pixels(kind, pose, emotion)));
                }
            }
        }
        out
    })
}

fn sq(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter().zip(&b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

// 1 - best/second, so an exact match of the best template scores 1.
fn margin(best: f64, second: f64) -> f64 {
    if second <= 0.0 {
        0.0
    } else {
        (1.0 - best / second).clamp(0.0, 1.0)
    }
}

fn cell_pixels(img: &Image, row: usize, col: usize) -> [[u8; 3]; CELL * CELL] {
    let mut out = [[0u8; 3]; CELL * CELL];
    for r in 0..CELL {
        for c in 0..CELL {
            out[r * CELL + c] = img.get_pixel((col * CELL + c) as u32, (row * CELL + r) as u32).0;
        }
    }
    out
}

/// Squared error of each candidate (empty first, then every sprite) in
/// one cell.
fn cell_costs(px: &[[u8; 3]; CELL * CELL], bg: [u8; 3]) -> Vec<f64> {
    let empty: Vec<f64> = px.iter().map(|&p| sq(p, bg)).collect();
    let base: f64 = empty.iter().sum();
    let mut out = vec![base];
    for (_, pixels) in sprites() {
        let mut cost = base;
        for &(r, c, color) in pixels {
            let i = r * CELL + c;
            cost += sq(px[i], color) - empty[i];
        }
        out.push(cost);
    }
    out
}

/// Nearest-template decoding: background from the uncovered cell corners,
/// then the best sprite or empty cell per grid cell, each kind used at most
/// once. Clean renders decode exactly.
pub fn decode_state(img: &Image) -> DecodedState {
    assert_eq!((img.width() as usize, img.height() as usize), (SIZE, SIZE), "canvas size");
    let corners: Vec<[u8; 3]> = (0..GRID)
        .flat_map(|r| (0..GRID).map(move |c| (r, c)))
        .map(|(r, c)| img.get_pixel((c * CELL) as u32, (r * CELL) as u32).0)
        .collect();
    let mut bgs: Vec<(f64, Scenery, Brightness)> = Scenery::ALL
        .iter()
        .flat_map(|&s| Brightness::all().map(move |b| (s, b)))
        .map(|(s, b)| {
            let color = background_color(s, b);
            (corners.iter().map(|&p| sq(p, color)).sum(), s, b)
        })
        .collect();
    bgs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (bg_cost, scenery, brightness) = bgs[0];
    let background_confidence = margin(bg_cost, bgs[1].0);
    let bg = background_color(scenery, brightness);

    let costs: Vec<Vec<f64>> = (0..GRID * GRID)
        .map(|i| cell_costs(&cell_pixels(img, i / GRID, i % GRID), bg))
        .collect();
    // Cells are claimed in order of how much their best sprite beats empty.
    let gain = |c: &[f64]| c[0] - c[1..].iter().copied().fold(f64::INFINITY, f64::min);
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| gain(&costs[b]).total_cmp(&gain(&costs[a])).then(a.cmp(&b)));
    let mut used = BTreeSet::new();
    let mut state = SceneState::empty(scenery, brightness);
    let mut cell_confidence = vec![0.0; costs.len()];
    for i in order {
        let c = &costs[i];
        let mut ranked: Vec<(f64, Option<Sprite>)> = std::iter::once((c[0], None))
            .chain(sprites().iter().zip(&c[1..]).map(|((s, _), &v)| (v, Some(*s))))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let pick = ranked
            .iter()
            .position(|(_, s)| s.is_none_or(|s| !used.contains(&s.kind)))
            .unwrap();
        let second = ranked.iter().enumerate().find(|&(j, _)| j != pick).map_or(0.0, |(_, r)| r.0);
        cell_confidence[i] = margin(ranked[pick].0, second);
        if let Some(s) = ranked[pick].1 {
            used.insert(s.kind);
            let mut e = Entity::new(s.kind, (i / GRID) as u8, (i % GRID) as u8);
            e.pose = s.pose;
            e.emotion = s.emotion;
            state.entities.push(e);
        }
    }
    DecodedState {
        state: state.canonical(),
        background_confidence,
        cell_confidence,
    }
}

/// Whether `decoded` agrees with `answer` on every field the rule changed
/// between `init` and `answer`. Unchanged fields are not inspected.
pub fn state_matches(decoded: &SceneState, init: &SceneState, answer: &SceneState) -> bool {
    if init.scenery != answer.scenery && decoded.scenery != answer.scenery {
        return false;
    }
    if init.brightness != answer.brightness && decoded.brightness != answer.brightness {
        return false;
    }
    for &kind in Kind::ALL {
        let (i, a, d) = (init.get(kind), answer.get(kind), decoded.get(kind));
        match (i, a) {
            (None, None) => {}
            (Some(_), None) | (None, Some(_)) => {
                if d.is_some() != a.is_some() {
                    return false;
                }
                if let (Some(a), Some(d), None) = (a, d, i) {
                    if (a.position, a.pose, a.emotion) != (d.position, d.pose, d.emotion) {
                        return false;
                    }
                }
            }
            (Some(i), Some(a)) => {
                let changed = i.position != a.position || i.pose != a.pose || i.emotion != a.emotion;
                if !changed {
                    continue;
                }
                let Some(d) = d else { return false };
                if (i.position != a.position && d.position != a.position)
                    || (i.pose != a.pose && d.pose != a.pose)
                    || (i.emotion != a.emotion && d.emotion != a.emotion)
                {
                    return false;
                }
            }
        }
    }
    true
}

/// Fraction of images whose decoded state matches the rule outcome.
pub fn state_match_rate(images: &[Image], inits: &[SceneState], answers: &[SceneState]) -> f64 {
    assert!(images.len() == inits.len() && inits.len() == answers.len(), "aligned inputs");
    if images.is_empty() {
        return 0.0;
    }
    let hits = images
        .iter()
        .zip(inits.iter().zip(answers))
        .filter(|(img, (i, a))| state_matches(&decode_state(img).state, i, a))
        .count();
    hits as f64 / images.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::{random_state, render};
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn decodes_clean_renders() {
        let mut rng = substream(11, "decode.test");
        for _ in 0..200 {
            let s = random_state(&mut rng);
            let d = decode_state(&render(&s));
            assert!(d.state.same_scene(&s), "{s:?} vs {:?}", d.state);
            assert_eq!(d.mean_confidence(), 1.0);
        }
    }

    #[test]
    fn empty_and_noise() {
        let s = SceneState::empty(Scenery::Rain, Brightness::from_level(2));
        assert_eq!(decode_state(&render(&s)).state.count(), 0);
        let mut rng = substream(3, "decode.noise");
        let noise = Image::from_fn(64, 64, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
        assert!(decode_state(&noise).mean_confidence() < 0.5);
    }

    #[test]
    fn mutated_fields_only() {
        let mut init = SceneState::empty(Scenery::Day, Brightness::from_level(4));
        init.entities.push(Entity::new(Kind::Cat, 7, 1));
        init.entities.push(Entity::new(Kind::Ball, 6, 5));
        let mut answer = init.clone();
        answer.entities[0].emotion = Emotion::Scared;
        let mut decoded = answer.clone();
        decoded.entities[1].position.col = 2;
        assert!(state_matches(&decoded, &init, &answer));
        assert!(!state_matches(&init, &init, &answer));
        let mut gone = answer.clone();
        gone.entities[0].present = false;
        assert!(!state_matches(&gone, &init, &answer));
        assert_eq!(state_match_rate(&[render(&answer), render(&init)], &[init.clone(), init.clone()], &[answer.clone(), answer]), 0.5);
    }
}
