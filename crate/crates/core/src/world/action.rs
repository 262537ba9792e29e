use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::lexicon::Category;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Forward,
    TurnLeft,
    TurnRight,
    PanLeft,
    PanRight,
    Pickup,
    Place,
    Slice,
    Open,
    Close,
    ToggleOn,
    ToggleOff,
    Stop,
}

pub const NUM_ACTION_KINDS: usize = 13;

impl ActionKind {
    pub const ALL: [ActionKind; NUM_ACTION_KINDS] = [
        ActionKind::Forward,
        ActionKind::TurnLeft,
        ActionKind::TurnRight,
        ActionKind::PanLeft,
        ActionKind::PanRight,
        ActionKind::Pickup,
        ActionKind::Place,
        ActionKind::Slice,
        ActionKind::Open,
        ActionKind::Close,
        ActionKind::ToggleOn,
        ActionKind::ToggleOff,
        ActionKind::Stop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionKind> {
        ActionKind::ALL.get(i).copied()
    }

    pub fn is_navigation(self) -> bool {
        matches!(
            self,
            ActionKind::Forward
                | ActionKind::TurnLeft
                | ActionKind::TurnRight
                | ActionKind::PanLeft
                | ActionKind::PanRight
        )
    }

    /// Membership in the interaction action set.
    pub fn is_interaction(self) -> bool {
        !self.is_navigation() && self != ActionKind::Stop
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Forward => "Forward",
            ActionKind::TurnLeft => "TurnLeft",
            ActionKind::TurnRight => "TurnRight",
            ActionKind::PanLeft => "PanLeft",
            ActionKind::PanRight => "PanRight",
            ActionKind::Pickup => "Pickup",
            ActionKind::Place => "Place",
            ActionKind::Slice => "Slice",
            ActionKind::Open => "Open",
            ActionKind::Close => "Close",
            ActionKind::ToggleOn => "ToggleOn",
            ActionKind::ToggleOff => "ToggleOff",
            ActionKind::Stop => "Stop",
        }
    }

    pub fn parse(s: &str) -> Option<ActionKind> {
        ActionKind::ALL.iter().copied().find(|k| k.name() == s)
    }
}

/// A physical action. Interaction kinds always carry an object category;
/// navigation kinds and `Stop` never do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    kind: ActionKind,
    object: Option<Category>,
}

impl Action {
    pub const STOP: Action = Action {
        kind: ActionKind::Stop,
        object: None,
    };

    pub fn new(kind: ActionKind, object: Option<Category>) -> Option<Action> {
        if kind.is_interaction() == object.is_some() {
            Some(Action { kind, object })
        } else {
            None
        }
    }

    /// # Panics
    /// If `kind` is an interaction.
    pub fn nav(kind: ActionKind) -> Action {
        Action::new(kind, None).expect("navigation action takes no object")
    }

    /// # Panics
    /// If `kind` is not an interaction.
    pub fn interact(kind: ActionKind, object: Category) -> Action {
        Action::new(kind, Some(object)).expect("interaction action needs an object")
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn object(&self) -> Option<Category> {
        self.object
    }

    pub fn is_interaction(&self) -> bool {
        self.kind.is_interaction()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.object {
            Some(c) => write!(f, "{}:{}", self.kind.name(), c.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid action encoding {0:?}")]
pub struct ParseActionError(pub String);

impl FromStr for Action {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseActionError(s.into());
        let (kind, object) = match s.split_once(':') {
            Some((k, o)) => (k, Some(Category::parse(o).ok_or_else(err)?)),
            None => (s, None),
        };
        let kind = ActionKind::parse(kind).ok_or_else(err)?;
        Action::new(kind, object).ok_or_else(err)
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
