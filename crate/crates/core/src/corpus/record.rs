use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annotation label. The integer codes are the on-disk representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Sarcastic = 0,
    NonSarcastic = 1,
    Ambiguous = 2,
}

impl Label {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Sarcastic),
            1 => Some(Label::NonSarcastic),
            2 => Some(Label::Ambiguous),
            _ => None,
        }
    }

    pub fn is_binary(self) -> bool {
        self != Label::Ambiguous
    }

    /// The other binary class.
    pub fn flipped(self) -> Result<Label> {
        match self {
            Label::Sarcastic => Ok(Label::NonSarcastic),
            Label::NonSarcastic => Ok(Label::Sarcastic),
            Label::Ambiguous => Err(Error::data("cannot flip an ambiguous label")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.code()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        Label::from_code(v).ok_or_else(|| format!("unknown label code {v}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Lifestyle,
    Politics,
    Entertainment,
    Relationships,
    PublicIncidents,
}

impl Topic {
    pub const ALL: [Topic; 5] = [
        Topic::Lifestyle,
        Topic::Politics,
        Topic::Entertainment,
        Topic::Relationships,
        Topic::PublicIncidents,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Topic::Lifestyle => "lifestyle",
            Topic::Politics => "politics",
            Topic::Entertainment => "entertainment",
            Topic::Relationships => "relationships",
            Topic::PublicIncidents => "public_incidents",
        }
    }

    pub fn parse(s: &str) -> Option<Topic> {
        Topic::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hierarchy {
    TopLevel,
    Nested,
}

impl Hierarchy {
    pub const ALL: [Hierarchy; 2] = [Hierarchy::TopLevel, Hierarchy::Nested];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Hierarchy::TopLevel => "top_level",
            Hierarchy::Nested => "nested",
        }
    }

    pub fn parse(s: &str) -> Option<Hierarchy> {
        Hierarchy::ALL.into_iter().find(|h| h.name() == s)
    }
}

/// The five historical-behavior aggregates of the comment's author.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserBehavior {
    pub comment_count: u64,
    pub topic_distribution: [f64; 5],
    pub sarcasm_rate: f64,
    /// Comments per day.
    pub comment_frequency: f64,
    pub reply_ratio: f64,
}

/// Where a record came from, when it was not collected directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gan,
    Augmented,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorSource {
    Real,
    Generated,
}

/// One labeled comment. Field order matches the dataset line format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub topic: Topic,
    pub hierarchy: Hierarchy,
    pub context: Option<String>,
    pub behavior: Option<UserBehavior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_source: Option<BehaviorSource>,
}

impl CommentRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label, topic: Topic, hierarchy: Hierarchy) -> Self {
        CommentRecord {
            id: id.into(),
            text: text.into(),
            label,
            topic,
            hierarchy,
            context: None,
            behavior: None,
            provenance: None,
            behavior_source: None,
        }
    }

    pub fn with_behavior(mut self, behavior: UserBehavior) -> Self {
        self.behavior = Some(behavior);
        self
    }
}
