use std::collections::BTreeSet;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::Deserialize;

use super::{Brightness, Category, Emotion, Kind, MicroworldError, Pose, Scenery};
use crate::chain::EdgeKind;

const RULES_TOML: &str = include_str!("../../data/rules.toml");

/// Who an effect or a fan-out node applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum Target {
    Subject,
    Actor,
    /// Every present character standing in the outdoor half.
    OutdoorCharacters,
    /// Every present character.
    Characters,
    Kind(Kind),
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "subject" => Target::Subject,
            "actor" => Target::Actor,
            "outdoor_characters" => Target::OutdoorCharacters,
            "characters" => Target::Characters,
            other => Target::Kind(other.parse()?),
        })
    }
}

impl TryFrom<String> for Target {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl Target {
    pub fn is_group(self) -> bool {
        matches!(self, Target::OutdoorCharacters | Target::Characters)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ground,
    Up,
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Actor,
    Any,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Effect {
    Scenery {
        value: Scenery,
        brightness: Brightness,
    },
    Emotion {
        target: Target,
        value: Emotion,
    },
    Pose {
        target: Target,
        value: Pose,
    },
    Remove {
        target: Target,
    },
    Add,
    Move {
        target: Target,
        to: Direction,
    },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct NodeSpec {
    pub key: String,
    pub entity: String,
    pub variation: String,
    pub visible: bool,
    /// Fan out into one node per mutated member of this group.
    pub each: Option<Target>,
    pub from: Option<String>,
    pub kind: Option<EdgeKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Subject,
    Actor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub id: String,
    pub category: Option<Category>,
    pub sampled: bool,
    pub subject: Vec<Kind>,
    pub actor: Vec<Kind>,
    pub adds: Option<Kind>,
    pub near: Option<Placement>,
    pub scenery: Vec<Scenery>,
    pub present: Vec<Kind>,
    pub effects: Vec<Effect>,
    pub question: Vec<String>,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(String, String, EdgeKind)>,
}

impl Rule {
    pub fn needs_actor(&self) -> bool {
        !self.actor.is_empty()
    }

    pub fn kinds_for(&self, role: Role) -> &[Kind] {
        match role {
            Role::Subject => &self.subject,
            Role::Actor => &self.actor,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: String,
    category: Option<Category>,
    #[serde(default = "default_true")]
    sampled: bool,
    #[serde(default)]
    subject: Vec<Kind>,
    #[serde(default)]
    actor: Vec<Kind>,
    adds: Option<Kind>,
    near: Option<Placement>,
    #[serde(default)]
    scenery: Vec<Scenery>,
    #[serde(default)]
    present: Vec<Kind>,
    effects: Vec<Effect>,
    question: Vec<String>,
    nodes: Vec<NodeSpec>,
    edges: Vec<(String, String, EdgeKind)>,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    version: u32,
    rule: Vec<RawRule>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleTable {
    pub version: u32,
    pub rules: Vec<Rule>,
}

impl RuleTable {
    pub fn parse(text: &str) -> Result<Self, MicroworldError> {
        let raw: RawTable =
            toml::from_str(text).map_err(|e| MicroworldError::RuleTable(e.to_string()))?;
        let rules: Vec<Rule> = raw
            .rule
            .into_iter()
            .map(|r| Rule {
                id: r.id,
                category: r.category,
                sampled: r.sampled,
                subject: r.subject,
                actor: r.actor,
                adds: r.adds,
                near: r.near,
                scenery: r.scenery,
                present: r.present,
                effects: r.effects,
                question: r.question,
                nodes: r.nodes,
                edges: r.edges,
            })
            .collect();
        let table = RuleTable {
            version: raw.version,
            rules,
        };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<(), MicroworldError> {
        let err = |id: &str, m: &str| Err(MicroworldError::RuleTable(format!("rule `{id}`: {m}")));
        let mut ids = BTreeSet::new();
        for r in &self.rules {
            if !ids.insert(r.id.as_str()) {
                return err(&r.id, "duplicate id");
            }
            if r.sampled && r.category.is_none() {
                return err(&r.id, "sampled rules need a category");
            }
            if r.adds.is_some() && !r.subject.is_empty() {
                return err(&r.id, "an add rule cannot also name subjects");
            }
            if r.near == Some(Placement::Actor) && r.actor.is_empty() {
                return err(&r.id, "placement near the actor without actor kinds");
            }
            if (r.adds.is_some()) != r.effects.iter().any(|e| matches!(e, Effect::Add)) {
                return err(&r.id, "`adds` and the add effect must go together");
            }
            for e in &r.effects {
                let t = match e {
                    Effect::Emotion { target, .. }
                    | Effect::Pose { target, .. }
                    | Effect::Remove { target }
                    | Effect::Move { target, .. } => Some(*target),
                    _ => None,
                };
                match t {
                    Some(Target::Subject) if r.subject.is_empty() && r.adds.is_none() => {
                        return err(&r.id, "effect targets the subject but none is declared")
                    }
                    Some(Target::Actor) if r.actor.is_empty() => {
                        return err(&r.id, "effect targets the actor but none is declared")
                    }
                    _ => {}
                }
            }
            if r.question.is_empty() {
                return err(&r.id, "no question templates");
            }
            for q in &r.question {
                check_placeholders(q, r).map_err(|m| MicroworldError::RuleTable(format!("rule `{}`: {m}", r.id)))?;
            }
            let mut keys = BTreeSet::new();
            for n in &r.nodes {
                if !keys.insert(n.key.as_str()) {
                    return err(&r.id, "duplicate node key");
                }
                check_placeholders(&n.entity, r)
                    .and(check_placeholders(&n.variation, r))
                    .map_err(|m| MicroworldError::RuleTable(format!("rule `{}`: {m}", r.id)))?;
                if n.each.is_some() != n.from.is_some() || n.each.is_some() != n.kind.is_some() {
                    return err(&r.id, "fan-out nodes need `each`, `from` and `kind`");
                }
            }
            if r.nodes.first().is_none_or(|n| n.each.is_some()) {
                return err(&r.id, "the first node is the condition and cannot fan out");
            }
            for n in &r.nodes {
                if let Some(from) = &n.from {
                    if !keys.contains(from.as_str()) {
                        return err(&r.id, "fan-out source is not a node");
                    }
                }
            }
            for (s, d, _) in &r.edges {
                if !keys.contains(s.as_str()) || !keys.contains(d.as_str()) {
                    return err(&r.id, "edge endpoint is not a node");
                }
            }
        }
        for c in Category::ALL {
            if !self.rules.iter().any(|r| r.sampled && r.category == Some(c)) {
                return Err(MicroworldError::RuleTable(format!("no rule for {c}")));
            }
        }
        if self.identity().is_none() {
            return Err(MicroworldError::RuleTable("missing identity rule".into()));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// The rule with no effects, which is never sampled.
    pub fn identity(&self) -> Option<&Rule> {
        self.rules.iter().find(|r| !r.sampled && r.effects.is_empty())
    }

    pub fn for_category(&self, category: Category) -> impl Iterator<Item = &Rule> {
        self.rules
            .iter()
            .filter(move |r| r.sampled && r.category == Some(category))
    }
}

fn check_placeholders(text: &str, rule: &Rule) -> Result<(), String> {
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| format!("unclosed placeholder in `{text}`"))?;
        let name = &rest[start + 1..start + end];
        let ok = match name {
            "subject" => !rule.subject.is_empty(),
            "actor" => !rule.actor.is_empty(),
            "each" => true,
            _ => false,
        };
        if !ok {
            return Err(format!("placeholder `{{{name}}}` not available in `{text}`"));
        }
        rest = &rest[start + end + 1..];
    }
    Ok(())
}

/// The built-in rule table.
pub fn rule_table() -> &'static RuleTable {
    static TABLE: OnceLock<RuleTable> = OnceLock::new();
    TABLE.get_or_init(|| RuleTable::parse(RULES_TOML).expect("built-in rule table is valid"))
}
