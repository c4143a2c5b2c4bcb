//! The rule engine: applies a condition to a scene and emits its causal chain.

use std::collections::BTreeMap;

use super::rules::{Direction, Placement};
use super::{
    rule_table, Category, Cell, Condition, Effect, Entity, Kind, MicroworldError, Rule,
    SceneState, SubjectRef, Target, GRID,
};
use crate::chain::{validate, CausalChain, ChainEdge, ChainNode, NodeId, Visibility};

/// Longest chain a sampled condition may produce.
pub const MAX_CHAIN_NODES: usize = 4;

struct Roles {
    subject: Option<Kind>,
    actor: Option<Kind>,
}

fn resolve(rule: &Rule, state: &SceneState, cond: &Condition) -> Result<Roles, MicroworldError> {
    let not_found = |what: String| Err(MicroworldError::SubjectNotFound(what));
    let subject = match (cond.subject, rule.adds, rule.subject.is_empty()) {
        (SubjectRef::New(k), Some(adds), _) if k == adds => {
            if state.get(k).is_some() {
                return Err(MicroworldError::NotApplicable {
                    rule: rule.id.clone(),
                    reason: format!("{k} is already in the scene"),
                });
            }
            Some(k)
        }
        (SubjectRef::Entity(k), None, false) => {
            if state.get(k).is_none() {
                return not_found(k.to_string());
            }
            Some(k)
        }
        (SubjectRef::Scene, None, true) => None,
        (s, _, _) => return not_found(format!("{s:?} for rule `{}`", rule.id)),
    };
    let actor = if rule.needs_actor() {
        let a = cond
            .actor()
            .ok_or_else(|| MicroworldError::SubjectNotFound("actor parameter".into()))?;
        if state.get(a).is_none() || Some(a) == subject {
            return not_found(format!("actor {a}"));
        }
        Some(a)
    } else {
        None
    };
    Ok(Roles { subject, actor })
}

fn placement(state: &SceneState, near: Placement, actor: Option<Kind>) -> Option<Cell> {
    let g = GRID as i32;
    let free = |r: i32, c: i32| {
        (0..g).contains(&r) && (0..g).contains(&c) && state.is_free(Cell::new(r as u8, c as u8))
    };
    match (near, actor.and_then(|a| state.get(a))) {
        (Placement::Actor, Some(a)) => {
            let (r, c) = (a.position.row as i32, a.position.col as i32);
            [(0, -1), (0, 1), (-1, 0), (0, -2), (0, 2), (-1, -1), (-1, 1)]
                .into_iter()
                .map(|(dr, dc)| (r + dr, c + dc))
                .find(|&(r, c)| free(r, c))
        }
        _ => (0..g)
            .rev()
            .flat_map(|r| (0..g).map(move |c| (r, c)))
            .find(|&(r, c)| free(r, c)),
    }
    .map(|(r, c)| Cell::new(r as u8, c as u8))
}

fn destination(cell: Cell, to: Direction) -> Option<Cell> {
    let (r, c) = (cell.row as i32, cell.col as i32);
    let (r, c) = match to {
        Direction::Ground => (GRID as i32 - 1, c),
        Direction::Up => (r - 1, c),
        Direction::Left => (r, c - 1),
        Direction::Right => (r, c + 1),
    };
    let g = GRID as i32;
    ((0..g).contains(&r) && (0..g).contains(&c) && (r, c) != (cell.row as i32, cell.col as i32))
        .then(|| Cell::new(r as u8, c as u8))
}

fn targets(target: Target, roles: &Roles, before: &SceneState) -> Vec<Kind> {
    match target {
        Target::Subject => roles.subject.into_iter().collect(),
        Target::Actor => roles.actor.into_iter().collect(),
        Target::Kind(k) => vec![k],
        Target::Characters => before
            .present()
            .filter(|e| e.kind.is_character())
            .map(|e| e.kind)
            .collect(),
        Target::OutdoorCharacters => before
            .present()
            .filter(|e| e.kind.is_character() && e.position.is_outdoor())
            .map(|e| e.kind)
            .collect(),
    }
}

fn fill(text: &str, roles: &Roles, each: Option<Kind>) -> String {
    let mut s = text.to_string();
    if let Some(k) = roles.subject {
        s = s.replace("{subject}", k.name());
    }
    if let Some(k) = roles.actor {
        s = s.replace("{actor}", k.name());
    }
    if let Some(k) = each {
        s = s.replace("{each}", k.name());
    }
    s
}

/// Applies `cond` to `state`. With `strict`, any effect that would leave its
/// target unchanged is reported as `NotApplicable`.
fn run(
    state: &SceneState,
    cond: &Condition,
    strict: bool,
) -> Result<(SceneState, CausalChain, &'static Rule), MicroworldError> {
    let rule = rule_table()
        .get(&cond.rule_id)
        .ok_or_else(|| MicroworldError::UnknownRule(cond.rule_id.clone()))?;
    let roles = resolve(rule, state, cond)?;
    let fail = |reason: String| MicroworldError::NotApplicable {
        rule: rule.id.clone(),
        reason,
    };
    if strict {
        if !rule.scenery.is_empty() && !rule.scenery.contains(&state.scenery) {
            return Err(fail(format!("scenery is {}", state.scenery)));
        }
        if let Some(k) = rule.present.iter().find(|k| state.get(**k).is_none()) {
            return Err(fail(format!("needs a {k}")));
        }
        if let Some(s) = roles.subject {
            if rule.adds.is_none() && !rule.subject.contains(&s) {
                return Err(fail(format!("{s} cannot be the subject")));
            }
        }
        if let Some(a) = roles.actor {
            if !rule.actor.contains(&a) {
                return Err(fail(format!("{a} cannot be the actor")));
            }
        }
    }

    let mut out = state.clone();
    let mut mutated: BTreeMap<&'static str, Vec<Kind>> = BTreeMap::new();
    for effect in &rule.effects {
        match effect {
            Effect::Scenery { value, brightness } => {
                if strict && out.scenery == *value && out.brightness == *brightness {
                    return Err(fail("scenery already set".into()));
                }
                out.scenery = *value;
                out.brightness = *brightness;
            }
            Effect::Emotion { target, value } => {
                let mut changed = Vec::new();
                for k in targets(*target, &roles, state) {
                    match out.get_mut(k) {
                        Some(e) if e.kind.is_character() => {
                            if e.emotion != *value {
                                e.emotion = *value;
                                changed.push(k);
                            } else if strict && !target.is_group() {
                                return Err(fail(format!("{k} is already {value}")));
                            }
                        }
                        _ if strict => return Err(fail(format!("no character {k}"))),
                        _ => {}
                    }
                }
                record(&mut mutated, *target, changed);
            }
            Effect::Pose { target, value } => {
                for k in targets(*target, &roles, state) {
                    match out.get_mut(k) {
                        Some(e) if e.kind.poses().contains(value) => {
                            if strict && e.pose == *value {
                                return Err(fail(format!("{k} is already {value}")));
                            }
                            e.pose = *value;
                        }
                        _ if strict => return Err(fail(format!("{k} cannot {value}"))),
                        _ => {}
                    }
                }
            }
            Effect::Remove { target } => {
                for k in targets(*target, &roles, state) {
                    if let Some(e) = out.get_mut(k) {
                        e.present = false;
                    }
                }
            }
            Effect::Add => {
                let k = roles.subject.expect("add rules resolve a subject");
                let near = rule.near.unwrap_or(Placement::Any);
                match placement(&out, near, roles.actor) {
                    Some(cell) => {
                        let fresh = Entity::new(k, cell.row, cell.col);
                        match out.entities.iter_mut().find(|e| e.kind == k) {
                            Some(slot) => *slot = fresh,
                            None => out.entities.push(fresh),
                        }
                    }
                    None => return Err(fail(format!("no free cell for {k}"))),
                }
            }
            Effect::Move { target, to } => {
                for k in targets(*target, &roles, state) {
                    let Some(pos) = out.get(k).map(|e| e.position) else { continue };
                    match destination(pos, *to).filter(|c| out.is_free(*c)) {
                        Some(cell) => out.get_mut(k).unwrap().position = cell,
                        None if strict => return Err(fail(format!("{k} cannot move {to:?}"))),
                        None => {}
                    }
                }
            }
        }
    }

    let chain = build_chain(rule, &roles, &mutated);
    Ok((out, chain, rule))
}

fn record(mutated: &mut BTreeMap<&'static str, Vec<Kind>>, target: Target, changed: Vec<Kind>) {
    let key = match target {
        Target::OutdoorCharacters => "outdoor_characters",
        Target::Characters => "characters",
        _ => return,
    };
    mutated.entry(key).or_default().extend(changed);
}

fn build_chain(rule: &Rule, roles: &Roles, mutated: &BTreeMap<&'static str, Vec<Kind>>) -> CausalChain {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut ids: BTreeMap<&str, NodeId> = BTreeMap::new();
    let vis = |v: bool| if v { Visibility::Visible } else { Visibility::Invisible };
    for spec in &rule.nodes {
        match spec.each {
            None => {
                let id = nodes.len() as NodeId;
                ids.insert(spec.key.as_str(), id);
                nodes.push(ChainNode {
                    id,
                    entity: fill(&spec.entity, roles, None),
                    variation: fill(&spec.variation, roles, None),
                    visibility: vis(spec.visible),
                });
            }
            Some(group) => {
                let key = match group {
                    Target::OutdoorCharacters => "outdoor_characters",
                    _ => "characters",
                };
                let src = ids[spec.from.as_deref().unwrap()];
                let mut kinds = mutated.get(key).cloned().unwrap_or_default();
                kinds.sort();
                kinds.dedup();
                for k in kinds {
                    let id = nodes.len() as NodeId;
                    nodes.push(ChainNode {
                        id,
                        entity: fill(&spec.entity, roles, Some(k)),
                        variation: fill(&spec.variation, roles, Some(k)),
                        visibility: vis(spec.visible),
                    });
                    edges.push(ChainEdge {
                        src,
                        dst: id,
                        kind: spec.kind.clone().unwrap(),
                    });
                }
            }
        }
    }
    for (s, d, k) in &rule.edges {
        edges.push(ChainEdge {
            src: ids[s.as_str()],
            dst: ids[d.as_str()],
            kind: k.clone(),
        });
    }
    CausalChain { nodes, edges, root: 0 }
}

/// Run the rule engine: the outcome state and the chain the rule fired.
pub fn apply_condition(
    state: &SceneState,
    cond: &Condition,
) -> Result<(SceneState, CausalChain), MicroworldError> {
    run(state, cond, false).map(|(s, c, _)| (s, c))
}

/// Whether the mutation actually performed fits the category definition.
pub fn category_faithful(category: Category, init: &SceneState, answer: &SceneState) -> bool {
    let (a, b) = (init.canonical(), answer.canonical());
    let scenery_same = a.scenery == b.scenery && a.brightness == b.brightness;
    let by_kind = |s: &SceneState| -> BTreeMap<Kind, Entity> {
        s.entities.iter().map(|e| (e.kind, *e)).collect()
    };
    let (ka, kb) = (by_kind(&a), by_kind(&b));
    let common = || ka.iter().filter_map(|(k, e)| kb.get(k).map(|f| (e, f)));
    let emotion_changed = common().any(|(e, f)| e.emotion != f.emotion);
    let body_changed = common().any(|(e, f)| e.pose != f.pose || e.position != f.position);
    match category {
        Category::SceneryVariation => !scenery_same && ka.len() == kb.len() && !body_changed,
        Category::MoreEntities => scenery_same && kb.len() > ka.len(),
        Category::FewerEntities => scenery_same && kb.len() < ka.len(),
        Category::EntitiesVariation => {
            scenery_same && ka.len() == kb.len() && body_changed && !emotion_changed
        }
        Category::EmotionVariation => scenery_same && ka.len() == kb.len() && emotion_changed,
    }
}

/// Checks that `cond` is a well-posed sample on `state`: preconditions
/// hold, every effect changes its target, the outcome matches the rule's
/// category and the chain is valid and at most [`MAX_CHAIN_NODES`] long.
pub fn check_applicable(state: &SceneState, cond: &Condition) -> Result<(), MicroworldError> {
    let (out, chain, rule) = run(state, cond, true)?;
    let fail = |reason: &str| {
        Err(MicroworldError::NotApplicable {
            rule: rule.id.clone(),
            reason: reason.to_string(),
        })
    };
    if out.same_scene(state) {
        return fail("nothing changes");
    }
    if let Some(c) = rule.category {
        if !category_faithful(c, state, &out) {
            return fail("outcome does not fit the category");
        }
    }
    if chain.len() > MAX_CHAIN_NODES {
        return fail("chain too long");
    }
    if !validate(&chain).is_empty() {
        return fail("invalid chain");
    }
    out.validate()
}
