//! Random scenes and conditions.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{
    check_applicable, rule_table, Brightness, Category, Cell, Condition, Emotion, Entity, Kind,
    Pose, Rule, SceneState, Scenery, SubjectRef, GRID, QUESTION_PREFIXES, QUESTION_SUFFIXES,
};
use crate::rng::substream;

fn random_brightness<R: Rng + ?Sized>(scenery: Scenery, rng: &mut R) -> Brightness {
    let levels: &[u8] = match scenery {
        Scenery::Night => &[1, 2],
        Scenery::Rain | Scenery::Snow => &[2, 3],
        Scenery::Day | Scenery::Clear => &[3, 4],
    };
    Brightness::from_level(*levels.choose(rng).unwrap())
}

fn random_cell<R: Rng + ?Sized>(state: &SceneState, kind: Kind, rng: &mut R) -> Option<Cell> {
    let ground = GRID as u8 - 1;
    let rows: Vec<u8> = match kind {
        Kind::Lamp | Kind::Door => vec![ground],
        Kind::Ball => (3..=ground).collect(),
        _ => (4..=ground).chain([ground, ground]).collect(),
    };
    for _ in 0..64 {
        let cell = Cell::new(*rows.choose(rng).unwrap(), rng.random_range(0..GRID as u8));
        if state.is_free(cell) {
            return Some(cell);
        }
    }
    None
}

fn random_entity<R: Rng + ?Sized>(state: &SceneState, kind: Kind, rng: &mut R) -> Option<Entity> {
    let cell = random_cell(state, kind, rng)?;
    let mut e = Entity::new(kind, cell.row, cell.col);
    if kind.is_character() {
        if rng.random_bool(0.4) {
            e.pose = *Pose::ALL.choose(rng).unwrap();
        }
        if rng.random_bool(0.5) {
            e.emotion = *Emotion::ALL.choose(rng).unwrap();
        }
    } else if rng.random_bool(0.1) {
        e.pose = *kind.poses().choose(rng).unwrap();
    }
    Some(e)
}

/// A valid random state with one to four entities.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R) -> SceneState {
    let scenery = *Scenery::ALL.choose(rng).unwrap();
    let mut state = SceneState::empty(scenery, random_brightness(scenery, rng));
    let n = rng.random_range(1..=4);
    for &kind in Kind::ALL.choose_multiple(rng, n) {
        if let Some(e) = random_entity(&state, kind, rng) {
            state.entities.push(e);
        }
    }
    state
}

fn ensure_present<R: Rng + ?Sized>(state: &mut SceneState, kind: Kind, rng: &mut R) {
    if state.get(kind).is_none() {
        state.entities.retain(|e| e.kind != kind);
        if let Some(e) = random_entity(state, kind, rng) {
            state.entities.push(e);
        }
    }
}

fn attempt<R: Rng + ?Sized>(rule: &Rule, rng: &mut R) -> (SceneState, Condition) {
    let mut state = random_state(rng);
    if let Some(&s) = rule.scenery.choose(rng) {
        state.scenery = s;
        state.brightness = random_brightness(s, rng);
    }
    let subject = if let Some(k) = rule.adds {
        state.entities.retain(|e| e.kind != k);
        SubjectRef::New(k)
    } else if let Some(&k) = rule.subject.choose(rng) {
        ensure_present(&mut state, k, rng);
        SubjectRef::Entity(k)
    } else {
        SubjectRef::Scene
    };
    let mut cond = Condition::new(rule.id.clone(), subject);
    let others: Vec<Kind> = rule
        .actor
        .iter()
        .copied()
        .filter(|&a| subject != SubjectRef::Entity(a) && subject != SubjectRef::New(a))
        .collect();
    if let Some(&a) = others.choose(rng) {
        ensure_present(&mut state, a, rng);
        cond = cond.with("actor", a.name());
    }
    for &k in &rule.present {
        ensure_present(&mut state, k, rng);
    }
    cond = cond
        .with("template", rng.random_range(0..rule.question.len()).to_string())
        .with("prefix", rng.random_range(0..QUESTION_PREFIXES.len()).to_string())
        .with("suffix", rng.random_range(0..QUESTION_SUFFIXES.len()).to_string());
    (state, cond)
}

/// A scene and a well-posed condition from a rule of `category`.
/// Deterministic in `(seed, category)`.
pub fn sample_scene(seed: u64, category: Category) -> (SceneState, Condition) {
    let mut rng = substream(seed, &format!("microworld.scene.{}", category.name()));
    let rules: Vec<&Rule> = rule_table().for_category(category).collect();
    for _ in 0..10_000 {
        let rule = *rules.choose(&mut rng).unwrap();
        let (state, cond) = attempt(rule, &mut rng);
        if state.validate().is_ok() && check_applicable(&state, &cond).is_ok() {
            return (state, cond);
        }
    }
    unreachable!("rule table has an unsatisfiable {category} rule set")
}
