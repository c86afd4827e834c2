//! Typed views of labeler and refiner replies.
//!
//! Parsing is lenient about transport noise (tags, fences, small JSON slips,
//! label-name spelling) and strict about shape: a reply that is not a JSON
//! object of the expected form is a [`ReplyError::Schema`]. Problems with
//! single entries never fail the reply; they are recorded as warnings and the
//! entry falls back to its default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::sanitize::{parse_json_lenient, sanitize};
use crate::prompting::{CoveredLabel, LabelerMode, NONE_TYPE};
use crate::taxonomy::LabelType;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplyError {
    #[error("reply has no payload")]
    NoPayload,
    #[error("reply does not match the schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplyWarning {
    /// An expected hunk or label id has no entry; the default was used.
    MissingEntry { id: u32 },
    /// An entry for an id that was not in the request; dropped.
    UnexpectedEntry { key: String },
    /// A label name outside the taxonomy; dropped.
    UnknownLabel { id: u32, name: String },
    /// An entry with the wrong shape; treated as missing.
    BadEntry { id: u32, reason: String },
    /// Attribute list cut down to a multiple of three.
    TruncatedAttributes { id: u32, from: usize, to: usize },
    /// Unparseable parent id; treated as 0.
    BadParent { id: u32, value: String },
}

impl fmt::Display for ReplyWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplyWarning::MissingEntry { id } => write!(f, "no entry for {id}; using defaults"),
            ReplyWarning::UnexpectedEntry { key } => write!(f, "dropped entry {key:?} that was not requested"),
            ReplyWarning::UnknownLabel { id, name } => write!(f, "entry {id}: dropped unknown label {name:?}"),
            ReplyWarning::BadEntry { id, reason } => write!(f, "entry {id} ignored: {reason}"),
            ReplyWarning::TruncatedAttributes { id, from, to } => {
                write!(f, "entry {id}: truncated {from} attributes to {to}")
            }
            ReplyWarning::BadParent { id, value } => write!(f, "entry {id}: unparseable parent {value:?}, using 0"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkEntry {
    pub reasoning: String,
    pub labels: BTreeSet<LabelType>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelerReply {
    /// One entry per expected hunk, keyed by global index.
    pub entries: BTreeMap<u32, HunkEntry>,
    pub warnings: Vec<ReplyWarning>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerEntry {
    pub reasoning: String,
    /// `None` is the `NONE` pseudo-type.
    pub updated_type: Option<LabelType>,
    pub attributes: Vec<String>,
    pub parent_id: u32,
}

impl RefinerEntry {
    fn keep(label: &CoveredLabel) -> Self {
        RefinerEntry {
            reasoning: String::new(),
            updated_type: label.label,
            attributes: Vec::new(),
            parent_id: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerReply {
    /// One entry per expected label id.
    pub entries: BTreeMap<u32, RefinerEntry>,
    pub warnings: Vec<ReplyWarning>,
}

fn payload(raw: &str) -> Result<Map<String, Value>, ReplyError> {
    let text = sanitize(raw).ok_or(ReplyError::NoPayload)?;
    match parse_json_lenient(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(other) => Err(ReplyError::Schema(format!("expected a JSON object, got {}", kind_of(&other)))),
        Err(e) => Err(ReplyError::Schema(format!("invalid JSON: {e}"))),
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Integer id from a key such as `"3"`, `"hunk 3"` or `"#3"`.
fn parse_id(key: &str) -> Option<u32> {
    let key = key.trim();
    if let Ok(n) = key.parse() {
        return Some(n);
    }
    let digits: String = key
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let rest_has_digits = key
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .skip_while(|c| c.is_ascii_digit())
        .any(|c| c.is_ascii_digit());
    if digits.is_empty() || rest_has_digits {
        None
    } else {
        digits.parse().ok()
    }
}

fn value_id(v: &Value) -> Option<u32> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) if s.trim().is_empty() => Some(0),
        Value::String(s) => parse_id(s),
        Value::Null => Some(0),
        _ => None,
    }
}

fn string_value(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// A list given either as a JSON array or as a string like `"[a, b]"`.
fn list_items(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::Array(items) => Some(items.iter().filter_map(string_value).collect()),
        Value::Null => Some(Vec::new()),
        Value::String(s) => {
            if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(s) {
                return Some(items.iter().filter_map(string_value).collect());
            }
            let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
            Some(
                inner
                    .split(',')
                    .map(|p| p.trim().trim_matches(|c| c == '"' || c == '\'').trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect(),
            )
        }
        _ => None,
    }
}

fn reasoning_of(obj: &Map<String, Value>) -> String {
    obj.get("reasoning").and_then(string_value).unwrap_or_default()
}

fn hunk_entry(id: u32, obj: &Map<String, Value>, warnings: &mut Vec<ReplyWarning>) -> Option<HunkEntry> {
    let Some(names) = obj.get("label_names").and_then(list_items) else {
        warnings.push(ReplyWarning::BadEntry {
            id,
            reason: "missing or malformed label_names".into(),
        });
        return None;
    };
    let mut labels = BTreeSet::new();
    for name in names {
        match name.parse::<LabelType>() {
            Ok(t) => {
                labels.insert(t);
            }
            Err(_) => warnings.push(ReplyWarning::UnknownLabel { id, name }),
        }
    }
    Some(HunkEntry {
        reasoning: reasoning_of(obj),
        labels,
    })
}

fn is_id_keyed(obj: &Map<String, Value>) -> bool {
    !obj.is_empty() && obj.keys().all(|k| parse_id(k).is_some())
}

/// The id-keyed object under a lone wrapper key that is not spelled
/// `response_dict` (e.g. a typo).
fn misnamed_dict(obj: &Map<String, Value>) -> Option<&Map<String, Value>> {
    if obj.len() != 1 {
        return None;
    }
    match obj.values().next() {
        Some(Value::Object(d)) if is_id_keyed(d) => Some(d),
        _ => None,
    }
}

/// Parse a labeler reply for the hunks in `expected` (global indices).
///
/// Per-hunk replies are a single `{reasoning, label_names}` object; stream
/// replies wrap one such object per hunk in `response_dict`. Every expected
/// hunk gets an entry: absent or malformed ones become empty with a warning.
pub fn parse_labeler_reply(raw: &str, mode: LabelerMode, expected: &[u32]) -> Result<LabelerReply, ReplyError> {
    let obj = payload(raw)?;
    let mut warnings = Vec::new();
    let mut found: BTreeMap<u32, HunkEntry> = BTreeMap::new();
    let expected_set: BTreeSet<u32> = expected.iter().copied().collect();

    let single = obj.contains_key("label_names") && !obj.contains_key("response_dict");
    if single {
        if mode != LabelerMode::Hunk && expected.len() != 1 {
            return Err(ReplyError::Schema("stream reply without response_dict".into()));
        }
        let Some(&id) = expected.first() else {
            return Err(ReplyError::Schema("reply for a request without hunks".into()));
        };
        if let Some(entry) = hunk_entry(id, &obj, &mut warnings) {
            found.insert(id, entry);
        }
    } else {
        let dict = match obj.get("response_dict") {
            Some(Value::Object(d)) => d,
            Some(other) => {
                return Err(ReplyError::Schema(format!("response_dict is {}", kind_of(other))))
            }
            None if is_id_keyed(&obj) => &obj,
            None if misnamed_dict(&obj).is_some() => misnamed_dict(&obj).unwrap(),
            None => {
                let what = if mode == LabelerMode::Hunk { "label_names" } else { "response_dict" };
                return Err(ReplyError::Schema(format!("missing {what}")));
            }
        };
        for (key, value) in dict {
            let id = match parse_id(key) {
                Some(id) if expected_set.contains(&id) => id,
                _ => {
                    warnings.push(ReplyWarning::UnexpectedEntry { key: key.clone() });
                    continue;
                }
            };
            let Value::Object(entry_obj) = value else {
                warnings.push(ReplyWarning::BadEntry {
                    id,
                    reason: format!("entry is {}", kind_of(value)),
                });
                continue;
            };
            if let Some(entry) = hunk_entry(id, entry_obj, &mut warnings) {
                match found.get_mut(&id) {
                    // Same hunk under two spellings of its key: union the labels.
                    Some(existing) => existing.labels.extend(entry.labels),
                    None => {
                        found.insert(id, entry);
                    }
                }
            }
        }
    }

    for &id in expected {
        if let std::collections::btree_map::Entry::Vacant(slot) = found.entry(id) {
            warnings.push(ReplyWarning::MissingEntry { id });
            slot.insert(HunkEntry::default());
        }
    }
    Ok(LabelerReply {
        entries: found,
        warnings,
    })
}

fn refiner_entry(
    label: &CoveredLabel,
    obj: &Map<String, Value>,
    warnings: &mut Vec<ReplyWarning>,
) -> Option<RefinerEntry> {
    let id = label.id;
    let updated_type = match obj.get("updated_type") {
        None | Some(Value::Null) => label.label,
        Some(v) => match string_value(v) {
            Some(s) if s.trim().eq_ignore_ascii_case(NONE_TYPE) || s.trim().is_empty() => None,
            Some(s) => match s.parse::<LabelType>() {
                Ok(t) => Some(t),
                Err(_) => {
                    warnings.push(ReplyWarning::UnknownLabel { id, name: s });
                    label.label
                }
            },
            None => {
                warnings.push(ReplyWarning::BadEntry {
                    id,
                    reason: format!("updated_type is {}", kind_of(v)),
                });
                return None;
            }
        },
    };

    let mut attributes = match obj.get("attributes") {
        None => Vec::new(),
        Some(v) => match list_items(v) {
            Some(items) => items,
            None => {
                warnings.push(ReplyWarning::BadEntry {
                    id,
                    reason: format!("attributes is {}", kind_of(v)),
                });
                return None;
            }
        },
    };
    if updated_type.is_some_and(LabelType::needs_attributes) && !attributes.len().is_multiple_of(3) {
        if attributes.len() < 3 {
            warnings.push(ReplyWarning::BadEntry {
                id,
                reason: format!("{} attributes, expected a multiple of 3", attributes.len()),
            });
            return None;
        }
        let to = attributes.len() / 3 * 3;
        warnings.push(ReplyWarning::TruncatedAttributes {
            id,
            from: attributes.len(),
            to,
        });
        attributes.truncate(to);
    }

    let parent_id = match obj.get("parent_id") {
        None => 0,
        Some(v) => match value_id(v) {
            Some(p) => p,
            None => {
                warnings.push(ReplyWarning::BadParent { id, value: v.to_string() });
                0
            }
        },
    };

    Some(RefinerEntry {
        reasoning: reasoning_of(obj),
        updated_type,
        attributes,
        parent_id,
    })
}

/// Parse a refiner reply for the labels listed in `expected`.
///
/// Missing or malformed entries keep the label's current type with no
/// attributes and parent 0.
pub fn parse_refiner_reply(raw: &str, expected: &[CoveredLabel]) -> Result<RefinerReply, ReplyError> {
    let obj = payload(raw)?;
    let dict = match obj.get("response_dict") {
        Some(Value::Object(d)) => d,
        Some(other) => return Err(ReplyError::Schema(format!("response_dict is {}", kind_of(other)))),
        None if is_id_keyed(&obj) => &obj,
        None => match misnamed_dict(&obj) {
            Some(d) => d,
            None => return Err(ReplyError::Schema("missing response_dict".into())),
        },
    };
    let by_id: BTreeMap<u32, &CoveredLabel> = expected.iter().map(|l| (l.id, l)).collect();
    let mut warnings = Vec::new();
    let mut entries = BTreeMap::new();

    for (key, value) in dict {
        let Some(label) = parse_id(key).and_then(|id| by_id.get(&id)) else {
            warnings.push(ReplyWarning::UnexpectedEntry { key: key.clone() });
            continue;
        };
        let Value::Object(entry_obj) = value else {
            warnings.push(ReplyWarning::BadEntry {
                id: label.id,
                reason: format!("entry is {}", kind_of(value)),
            });
            continue;
        };
        if let Some(entry) = refiner_entry(label, entry_obj, &mut warnings) {
            entries.insert(label.id, entry);
        }
    }

    for label in expected {
        if let std::collections::btree_map::Entry::Vacant(slot) = entries.entry(label.id) {
            warnings.push(ReplyWarning::MissingEntry { id: label.id });
            slot.insert(RefinerEntry::keep(label));
        }
    }
    Ok(RefinerReply { entries, warnings })
}
