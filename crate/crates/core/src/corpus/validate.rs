use serde_json::{Map, Value};

use crate::corpus::{
    BehaviorSource, CommentRecord, Hierarchy, Label, Provenance, Topic, UserBehavior,
};
use crate::error::Violations;

/// Which stage a dataset file belongs to. Ambiguous labels are only legal
/// while annotating.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Annotation,
    Training,
}

pub const SIMPLEX_TOL: f64 = 1e-6;

const KNOWN_FIELDS: [&str; 9] = [
    "id",
    "text",
    "label",
    "topic",
    "hierarchy",
    "context",
    "behavior",
    "provenance",
    "behavior_source",
];

const BEHAVIOR_FIELDS: [&str; 5] = [
    "comment_count",
    "topic_distribution",
    "sarcasm_rate",
    "comment_frequency",
    "reply_ratio",
];

/// Checks one raw dataset object and converts it into a record.
///
/// All violations are collected rather than stopping at the first one.
pub fn validate_record(raw: &Value, kind: FileKind) -> Result<CommentRecord, Violations> {
    let mut v = Violations::default();
    let Some(obj) = raw.as_object() else {
        v.push("<record>", "record is not an object");
        return Err(v);
    };
    for key in obj.keys() {
        if !KNOWN_FIELDS.contains(&key.as_str()) {
            v.push(key, "unknown field");
        }
    }

    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(_) => {
            v.push("id", "must be a non-empty string");
            None
        }
        None => {
            v.push("id", "missing required field");
            None
        }
    };

    let text = match obj.get("text") {
        None | Some(Value::Null) => {
            v.push("text", "missing required field");
            None
        }
        Some(Value::String(s)) if s.trim().is_empty() => {
            v.push("text", "text is empty");
            None
        }
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            v.push("text", "must be a string");
            None
        }
    };

    let label = match obj.get("label") {
        None | Some(Value::Null) => {
            v.push("label", "missing required field");
            None
        }
        Some(val) => match val.as_u64().and_then(|c| u8::try_from(c).ok()).and_then(Label::from_code) {
            Some(Label::Ambiguous) if kind == FileKind::Training => {
                v.push("label", "ambiguous label in training data");
                None
            }
            Some(l) => Some(l),
            None => {
                v.push("label", "label must be 0, 1 or 2");
                None
            }
        },
    };

    let topic = match obj.get("topic") {
        None | Some(Value::Null) => {
            v.push("topic", "missing required field");
            None
        }
        Some(val) => match val.as_str().and_then(Topic::parse) {
            Some(t) => Some(t),
            None => {
                v.push("topic", "unknown topic");
                None
            }
        },
    };

    let hierarchy = match obj.get("hierarchy") {
        None | Some(Value::Null) => {
            v.push("hierarchy", "missing required field");
            None
        }
        Some(val) => match val.as_str().and_then(Hierarchy::parse) {
            Some(h) => Some(h),
            None => {
                v.push("hierarchy", "unknown hierarchy");
                None
            }
        },
    };

    let context = match obj.get("context") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            v.push("context", "must be a string or null");
            None
        }
    };

    let behavior = match obj.get("behavior") {
        None | Some(Value::Null) => None,
        Some(Value::Object(b)) => validate_behavior(b, &mut v),
        Some(_) => {
            v.push("behavior", "must be an object or null");
            None
        }
    };

    let provenance = match obj.get("provenance") {
        None | Some(Value::Null) => None,
        Some(val) => match serde_json::from_value::<Provenance>(val.clone()) {
            Ok(p) => Some(p),
            Err(_) => {
                v.push("provenance", "unknown provenance");
                None
            }
        },
    };

    let behavior_source = match obj.get("behavior_source") {
        None | Some(Value::Null) => None,
        Some(val) => match serde_json::from_value::<BehaviorSource>(val.clone()) {
            Ok(p) => Some(p),
            Err(_) => {
                v.push("behavior_source", "unknown behavior source");
                None
            }
        },
    };

    if !v.is_empty() {
        return Err(v);
    }
    Ok(CommentRecord {
        id: id.expect("checked"),
        text: text.expect("checked"),
        label: label.expect("checked"),
        topic: topic.expect("checked"),
        hierarchy: hierarchy.expect("checked"),
        context,
        behavior,
        provenance,
        behavior_source,
    })
}

fn unit_interval(b: &Map<String, Value>, key: &str, v: &mut Violations) -> Option<f64> {
    let x = non_negative(b, key, v)?;
    if x > 1.0 {
        v.push(&format!("behavior.{key}"), "must lie in [0, 1]");
        return None;
    }
    Some(x)
}

fn non_negative(b: &Map<String, Value>, key: &str, v: &mut Violations) -> Option<f64> {
    let field = format!("behavior.{key}");
    match b.get(key).and_then(Value::as_f64) {
        None => {
            v.push(&field, "missing required field");
            None
        }
        Some(x) if !x.is_finite() || x < 0.0 => {
            v.push(&field, "must be a finite non-negative number");
            None
        }
        Some(x) => Some(x),
    }
}

fn validate_behavior(b: &Map<String, Value>, v: &mut Violations) -> Option<UserBehavior> {
    let before = v.0.len();
    for key in b.keys() {
        if !BEHAVIOR_FIELDS.contains(&key.as_str()) {
            v.push(&format!("behavior.{key}"), "unknown field");
        }
    }
    let comment_count = match b.get("comment_count") {
        None => {
            v.push("behavior.comment_count", "missing required field");
            None
        }
        Some(val) => match val.as_u64() {
            Some(c) => Some(c),
            None => {
                v.push("behavior.comment_count", "must be a non-negative integer");
                None
            }
        },
    };
    let topic_distribution = match b.get("topic_distribution").and_then(Value::as_array) {
        None => {
            v.push("behavior.topic_distribution", "missing required field");
            None
        }
        Some(arr) => {
            let xs: Vec<Option<f64>> = arr.iter().map(Value::as_f64).collect();
            if xs.len() != 5 || xs.iter().any(|x| x.is_none_or(|x| !x.is_finite() || x < 0.0)) {
                v.push(
                    "behavior.topic_distribution",
                    "must hold 5 non-negative numbers",
                );
                None
            } else {
                let mut out = [0.0; 5];
                for (o, x) in out.iter_mut().zip(xs) {
                    *o = x.expect("checked");
                }
                if (out.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
                    v.push("behavior.topic_distribution", "distribution not normalized");
                    None
                } else {
                    Some(out)
                }
            }
        }
    };
    let sarcasm_rate = unit_interval(b, "sarcasm_rate", v);
    let comment_frequency = non_negative(b, "comment_frequency", v);
    let reply_ratio = unit_interval(b, "reply_ratio", v);
    if v.0.len() != before {
        return None;
    }
    Some(UserBehavior {
        comment_count: comment_count?,
        topic_distribution: topic_distribution?,
        sarcasm_rate: sarcasm_rate?,
        comment_frequency: comment_frequency?,
        reply_ratio: reply_ratio?,
    })
}

/// Re-validates an in-memory record (used before writing and after synthesis).
pub fn check_record(r: &CommentRecord, kind: FileKind) -> Result<(), Violations> {
    let raw = serde_json::to_value(r).expect("records always serialize");
    validate_record(&raw, kind).map(|_| ())
}
