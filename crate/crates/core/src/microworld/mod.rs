//! Procedural causal microworld: scene states, the rule engine, sprite
//! rendering, question templates and dataset generation.

mod dataset;
mod engine;
mod question;
mod render;
mod rules;
mod sample;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dataset::{
    default_mix, make_dataset, make_records, sample_record, DatasetConfig, DatasetSummary,
    SampleRecord, MANIFEST_VERSION,
};
pub use engine::{apply_condition, category_faithful, check_applicable, MAX_CHAIN_NODES};
pub use question::{phrase_question, QUESTION_PREFIXES, QUESTION_SUFFIXES};
pub(crate) use question::lower_first;
pub use render::{
    background_color, body_color, render, sprite_pixels, Image, CELL, EMOTION_COLORS, GRID, SIZE,
};
pub use rules::{rule_table, Direction, Effect, NodeSpec, Placement, Role, Rule, RuleTable, Target};
pub use sample::{random_state, sample_scene};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MicroworldError {
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("subject {0} not found in scene")]
    SubjectNotFound(String),
    #[error("rule `{rule}` not applicable: {reason}")]
    NotApplicable { rule: String, reason: String },
    #[error("invalid scene: {0}")]
    InvalidState(String),
    #[error("rule table: {0}")]
    RuleTable(String),
}

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$var => $text),+ }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$var),)+
                    _ => Err(format!("unknown {} `{s}`", stringify!($name).to_lowercase())),
                }
            }
        }
    };
}

named_enum!(Kind {
    Cat => "cat",
    Mouse => "mouse",
    Dog => "dog",
    Ball => "ball",
    Cheese => "cheese",
    Lamp => "lamp",
    Door => "door",
});

named_enum!(Pose {
    Idle => "idle",
    Jump => "jump",
    Run => "run",
    Fall => "fall",
});

named_enum!(Emotion {
    Neutral => "neutral",
    Happy => "happy",
    Scared => "scared",
    Angry => "angry",
    Pained => "pained",
});

named_enum!(Scenery {
    Day => "day",
    Night => "night",
    Rain => "rain",
    Snow => "snow",
    Clear => "clear",
});

impl Kind {
    pub fn is_character(self) -> bool {
        matches!(self, Kind::Cat | Kind::Mouse | Kind::Dog)
    }

    /// Poses a sprite of this kind can take.
    pub fn poses(self) -> &'static [Pose] {
        match self {
            Kind::Cat | Kind::Mouse | Kind::Dog => Pose::ALL,
            Kind::Lamp => &[Pose::Idle, Pose::Fall],
            _ => &[Pose::Idle],
        }
    }

    pub fn emotions(self) -> &'static [Emotion] {
        if self.is_character() {
            Emotion::ALL
        } else {
            &[Emotion::Neutral]
        }
    }
}

/// Number of brightness levels; level `k` has brightness `k / LEVELS`.
pub const BRIGHTNESS_LEVELS: u8 = 4;

/// Quantized scene brightness in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Brightness(u8);

impl Brightness {
    pub fn from_level(level: u8) -> Self {
        assert!((1..=BRIGHTNESS_LEVELS).contains(&level), "brightness level {level}");
        Brightness(level)
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / BRIGHTNESS_LEVELS as f64
    }

    pub fn all() -> impl Iterator<Item = Brightness> {
        (1..=BRIGHTNESS_LEVELS).map(Brightness)
    }
}

impl TryFrom<f64> for Brightness {
    type Error = String;
    fn try_from(v: f64) -> Result<Self, String> {
        let level = v * BRIGHTNESS_LEVELS as f64;
        let rounded = level.round();
        if (level - rounded).abs() > 1e-9 || !(1.0..=BRIGHTNESS_LEVELS as f64).contains(&rounded) {
            return Err(format!("brightness {v} is not one of the quantized levels"));
        }
        Ok(Brightness(rounded as u8))
    }
}

impl From<Brightness> for f64 {
    fn from(b: Brightness) -> f64 {
        b.value()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub fn new(row: u8, col: u8) -> Self {
        Cell { row, col }
    }

    pub fn is_outdoor(self) -> bool {
        self.col as usize >= GRID / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub kind: Kind,
    pub position: Cell,
    pub pose: Pose,
    pub emotion: Emotion,
    pub present: bool,
}

impl Entity {
    pub fn new(kind: Kind, row: u8, col: u8) -> Self {
        Entity {
            kind,
            position: Cell::new(row, col),
            pose: Pose::Idle,
            emotion: Emotion::Neutral,
            present: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneState {
    pub scenery: Scenery,
    pub brightness: Brightness,
    pub entities: Vec<Entity>,
    pub canvas_size: u32,
}

impl SceneState {
    pub fn empty(scenery: Scenery, brightness: Brightness) -> Self {
        SceneState {
            scenery,
            brightness,
            entities: Vec::new(),
            canvas_size: SIZE as u32,
        }
    }

    pub fn present(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.present)
    }

    pub fn count(&self) -> usize {
        self.present().count()
    }

    pub fn get(&self, kind: Kind) -> Option<&Entity> {
        self.entities.iter().find(|e| e.present && e.kind == kind)
    }

    pub fn get_mut(&mut self, kind: Kind) -> Option<&mut Entity> {
        self.entities.iter_mut().find(|e| e.present && e.kind == kind)
    }

    pub fn occupant(&self, cell: Cell) -> Option<&Entity> {
        self.present().find(|e| e.position == cell)
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        (cell.row as usize) < GRID && (cell.col as usize) < GRID && self.occupant(cell).is_none()
    }

    /// Present entities only, ordered row-major by position.
    pub fn canonical(&self) -> SceneState {
        let mut entities: Vec<Entity> = self.present().copied().collect();
        entities.sort_by_key(|e| (e.position, e.kind));
        SceneState {
            entities,
            ..self.clone()
        }
    }

    /// Equality of what is visible: absent entities and ordering are ignored.
    pub fn same_scene(&self, other: &SceneState) -> bool {
        self.canonical() == other.canonical()
    }

    pub fn validate(&self) -> Result<(), MicroworldError> {
        let bad = |m: String| Err(MicroworldError::InvalidState(m));
        if self.canvas_size as usize != SIZE {
            return bad(format!("canvas size {} (expected {SIZE})", self.canvas_size));
        }
        let mut seen_cells = BTreeMap::new();
        let mut seen_kinds = BTreeMap::new();
        for e in &self.entities {
            if seen_kinds.insert(e.kind, ()).is_some() {
                return bad(format!("more than one {}", e.kind));
            }
            if !e.kind.poses().contains(&e.pose) || !e.kind.emotions().contains(&e.emotion) {
                return bad(format!("{} cannot be {} and {}", e.kind, e.pose, e.emotion));
            }
            if !e.present {
                continue;
            }
            if e.position.row as usize >= GRID || e.position.col as usize >= GRID {
                return bad(format!("{} outside the canvas", e.kind));
            }
            if let Some(k) = seen_cells.insert(e.position, e.kind) {
                return bad(format!("{} and {} share a cell", k, e.kind));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    SceneryVariation,
    MoreEntities,
    FewerEntities,
    EntitiesVariation,
    EmotionVariation,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::SceneryVariation,
        Category::MoreEntities,
        Category::FewerEntities,
        Category::EntitiesVariation,
        Category::EmotionVariation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::SceneryVariation => "SceneryVariation",
            Category::MoreEntities => "MoreEntities",
            Category::FewerEntities => "FewerEntities",
            Category::EntitiesVariation => "EntitiesVariation",
            Category::EmotionVariation => "EmotionVariation",
        }
    }

    /// Column abbreviation used in report tables.
    pub fn short(self) -> &'static str {
        match self {
            Category::SceneryVariation => "SV",
            Category::MoreEntities => "ME",
            Category::FewerEntities => "FE",
            Category::EntitiesVariation => "EV",
            Category::EmotionVariation => "EMV",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s || c.short() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

/// What a condition is about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "kind")]
pub enum SubjectRef {
    /// The scene as a whole (weather, time of day, the room).
    Scene,
    /// An entity already in the scene.
    Entity(Kind),
    /// An entity the rule adds.
    New(Kind),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub rule_id: String,
    pub subject: SubjectRef,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
}

impl Condition {
    pub fn new(rule_id: impl Into<String>, subject: SubjectRef) -> Self {
        Condition {
            rule_id: rule_id.into(),
            subject,
            parameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    pub fn actor(&self) -> Option<Kind> {
        self.parameters.get("actor").and_then(|s| s.parse().ok())
    }
}
