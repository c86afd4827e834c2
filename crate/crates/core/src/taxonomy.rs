//! The label-type set, labeling instances and their structural rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Ids are `1000 * hunk_index + ordinal`; at most this many labels per hunk.
pub const MAX_LABELS_PER_HUNK: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("ordinal {0} exceeds the per-hunk label capacity")]
    OrdinalOverflow(u32),
    #[error("hunk index must be at least 1")]
    ZeroHunk,
    #[error("unknown hunk {0}")]
    UnknownHunk(u32),
    #[error("unknown label type {0:?}")]
    UnknownLabel(String),
    #[error("unknown rename kind {0:?}")]
    UnknownRenameKind(String),
}

/// One of the twelve change categories, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelType {
    Documentation,
    Testing,
    OutputHandling,
    Retype,
    CodeMove,
    StyleChange,
    Logging,
    Rename,
    ErrorHandling,
    LogicChange,
    InternalInterfaceChange,
    ExternalInterfaceChange,
}

impl LabelType {
    pub const ALL: [LabelType; 12] = [
        LabelType::Documentation,
        LabelType::Testing,
        LabelType::OutputHandling,
        LabelType::Retype,
        LabelType::CodeMove,
        LabelType::StyleChange,
        LabelType::Logging,
        LabelType::Rename,
        LabelType::ErrorHandling,
        LabelType::LogicChange,
        LabelType::InternalInterfaceChange,
        LabelType::ExternalInterfaceChange,
    ];

    /// Uppercase form, as used in refiner streams and JSON files.
    pub fn name(self) -> &'static str {
        match self {
            LabelType::Documentation => "DOCUMENTATION",
            LabelType::Testing => "TESTING",
            LabelType::OutputHandling => "OUTPUT_HANDLING",
            LabelType::Retype => "RETYPE",
            LabelType::CodeMove => "CODE_MOVE",
            LabelType::StyleChange => "STYLE_CHANGE",
            LabelType::Logging => "LOGGING",
            LabelType::Rename => "RENAME",
            LabelType::ErrorHandling => "ERROR_HANDLING",
            LabelType::LogicChange => "LOGIC_CHANGE",
            LabelType::InternalInterfaceChange => "INTERNAL_INTERFACE_CHANGE",
            LabelType::ExternalInterfaceChange => "EXTERNAL_INTERFACE_CHANGE",
        }
    }

    /// Lowercase snake_case form, as listed in labeler prompts and replies.
    pub fn prompt_name(self) -> &'static str {
        match self {
            LabelType::Documentation => "documentation",
            LabelType::Testing => "testing",
            LabelType::OutputHandling => "output_handling",
            LabelType::Retype => "retype",
            LabelType::CodeMove => "code_move",
            LabelType::StyleChange => "style_change",
            LabelType::Logging => "logging",
            LabelType::Rename => "rename",
            LabelType::ErrorHandling => "error_handling",
            LabelType::LogicChange => "logic_change",
            LabelType::InternalInterfaceChange => "internal_interface_change",
            LabelType::ExternalInterfaceChange => "external_interface_change",
        }
    }

    /// Definition text shown to the model.
    pub fn description(self) -> &'static str {
        match self {
            LabelType::Documentation => "adding new or changing existing comments or descriptions. Also include explicit edits of .txt, .md or similar files.",
            LabelType::Testing => "changes to testing code.",
            LabelType::OutputHandling => "changes to code that handles stdout, stderr, writes to output files, print statements, etc.",
            LabelType::Retype => "changing the type of a variable or attribute. examples: changed int to bool, as a consequence conditions are different, changed int to long, return type of a method returns base class rather than inherited class.",
            LabelType::CodeMove => "moving code from one location to another, this label should be added at the diff hunk where the code was removed and where it was added. examples: replacing a chunk of code with a function that runs the same code. Moving code from one file to another.",
            LabelType::StyleChange => "changes that modify the appearance of the code or the writing style but not the abstract syntax tree (AST). examples: move { from same line to line below, change comment style from // to /* */, split long lines, aligning and indentation (when the indentation does not matter), and other cosmetic changes.",
            LabelType::Logging => "everything related to logging, initializing the logger, summarizing the log, writing to the log, etc.",
            LabelType::Rename => "only changes to the name of a variable, method, attribute, class, parameter or package.",
            LabelType::ErrorHandling => "changes that affect when an error or warning is raised or what happens when they are raised. examples: changes in the try-catch block logic, changes in exception types.",
            LabelType::LogicChange => "any change that modifies the application execution, for example modifies the control flow or results in different application behavior. If you suspect that a diff hunk might be renaming, retyping, or code_move but you lack context to decide, label it as logic_change.",
            LabelType::InternalInterfaceChange => "The interface of a class or a package are all the publicly accessible elements. Interface changes are changes to the declarations of said elements. The word internal refers to elements that are internal to the application but not internal to a certain file or class. examples: changing methods between being Public or Private, modifying public method declarations or public attributes.",
            LabelType::ExternalInterfaceChange => "changes to the interface itself or user interfaces, the program's external API, command line interface, etc. examples: adding or modifying CLI arguments.",
        }
    }

    /// Instances of this type may link to a parent instance.
    pub fn needs_parent(self) -> bool {
        matches!(self, LabelType::Rename | LabelType::CodeMove)
    }

    /// Instances of this type carry attribute triples.
    pub fn needs_attributes(self) -> bool {
        matches!(self, LabelType::Rename | LabelType::Retype)
    }

    /// Instances of this type are sent to the refiner.
    pub fn refiner_eligible(self) -> bool {
        matches!(
            self,
            LabelType::Rename | LabelType::Retype | LabelType::CodeMove | LabelType::LogicChange
        )
    }

    fn declaration_rank(self) -> usize {
        LabelType::ALL.iter().position(|t| *t == self).unwrap()
    }
}

impl fmt::Display for LabelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Label names observed in model replies that differ from the canonical ones.
const ALIASES: &[(&str, LabelType)] = &[
    ("renaming", LabelType::Rename),
    ("retyping", LabelType::Retype),
    ("move", LabelType::CodeMove),
    ("docs", LabelType::Documentation),
    ("logic", LabelType::LogicChange),
    ("log", LabelType::Logging),
    ("test", LabelType::Testing),
    ("tests", LabelType::Testing),
];

fn normalize_label_text(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c| c == '"' || c == '\'' || c == '`')
        .trim()
        .to_ascii_lowercase()
        .replace([' ', '-'], "_")
}

impl FromStr for LabelType {
    type Err = TaxonomyError;

    /// Case-insensitive; accepts `code_move`, `CODE_MOVE`, `Code move` and the alias table.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_label_text(s);
        LabelType::ALL
            .iter()
            .copied()
            .find(|t| t.prompt_name() == norm)
            .or_else(|| {
                ALIASES
                    .iter()
                    .find(|(alias, _)| *alias == norm)
                    .map(|(_, t)| *t)
            })
            .ok_or_else(|| TaxonomyError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for LabelType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for LabelType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Kind of renamed entity; first element of a rename attribute triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RenameKind {
    Var,
    Class,
    Package,
    Method,
    Attribute,
    Parameter,
}

impl FromStr for RenameKind {
    type Err = TaxonomyError;

    /// Case-sensitive: only the uppercase spellings are accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VAR" => Ok(RenameKind::Var),
            "CLASS" => Ok(RenameKind::Class),
            "PACKAGE" => Ok(RenameKind::Package),
            "METHOD" => Ok(RenameKind::Method),
            "ATTRIBUTE" => Ok(RenameKind::Attribute),
            "PARAMETER" => Ok(RenameKind::Parameter),
            other => Err(TaxonomyError::UnknownRenameKind(other.to_string())),
        }
    }
}

/// `1000 * hunk_index + ordinal`.
pub fn instance_id_for(hunk_index: u32, ordinal: u32) -> Result<u32, TaxonomyError> {
    if hunk_index == 0 {
        return Err(TaxonomyError::ZeroHunk);
    }
    if ordinal >= MAX_LABELS_PER_HUNK {
        return Err(TaxonomyError::OrdinalOverflow(ordinal));
    }
    Ok(MAX_LABELS_PER_HUNK * hunk_index + ordinal)
}

/// One label attached to one hunk: `(id, hunk, type, parent, attributes)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelingInstance {
    pub id: u32,
    pub hunk_index: u32,
    pub label_type: LabelType,
    /// 0 means no parent.
    #[serde(default)]
    pub parent_id: u32,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl LabelingInstance {
    pub fn new(id: u32, hunk_index: u32, label_type: LabelType) -> Self {
        LabelingInstance {
            id,
            hunk_index,
            label_type,
            parent_id: 0,
            attributes: Vec::new(),
        }
    }

    pub fn with_parent(mut self, parent_id: u32) -> Self {
        self.parent_id = parent_id;
        self
    }

    pub fn with_attributes<I, S>(mut self, attrs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.attributes = attrs.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelingSet {
    pub instances: Vec<LabelingInstance>,
    pub hunk_count: usize,
}

impl LabelingSet {
    pub fn new(hunk_count: usize) -> Self {
        LabelingSet {
            instances: Vec::new(),
            hunk_count,
        }
    }

    pub fn from_instances(hunk_count: usize, mut instances: Vec<LabelingInstance>) -> Self {
        instances.sort_by_key(|i| i.id);
        LabelingSet {
            instances,
            hunk_count,
        }
    }

    pub fn get(&self, id: u32) -> Option<&LabelingInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn sort(&mut self) {
        self.instances.sort_by_key(|i| i.id);
    }

    pub fn by_id(&self) -> HashMap<u32, &LabelingInstance> {
        self.instances.iter().map(|i| (i.id, i)).collect()
    }

    pub fn on_hunk(&self, hunk_index: u32) -> impl Iterator<Item = &LabelingInstance> {
        self.instances.iter().filter(move |i| i.hunk_index == hunk_index)
    }

    /// `T(h)` for every hunk `1..=hunk_count`, in hunk order.
    pub fn per_hunk_types(&self) -> Vec<BTreeSet<LabelType>> {
        let mut out = vec![BTreeSet::new(); self.hunk_count];
        for inst in &self.instances {
            if let Some(slot) = (inst.hunk_index as usize)
                .checked_sub(1)
                .and_then(|i| out.get_mut(i))
            {
                slot.insert(inst.label_type);
            }
        }
        out
    }

    /// Next unused ordinal on a hunk.
    pub fn next_ordinal(&self, hunk_index: u32) -> u32 {
        self.on_hunk(hunk_index)
            .filter(|i| i.id / MAX_LABELS_PER_HUNK == hunk_index)
            .map(|i| i.id % MAX_LABELS_PER_HUNK + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&self.instances)
    }

    pub fn from_json(text: &str, hunk_count: usize) -> serde_json::Result<Self> {
        let instances: Vec<LabelingInstance> = serde_json::from_str(text)?;
        Ok(LabelingSet::from_instances(hunk_count, instances))
    }
}

/// Build a labeling set from per-hunk type sets with default parent and
/// attributes; ordinals follow declaration order within each hunk.
pub fn set_from_types(types: &BTreeMap<u32, BTreeSet<LabelType>>, hunk_count: usize) -> Result<LabelingSet, TaxonomyError> {
    let mut instances = Vec::new();
    for (&hunk, labels) in types {
        let mut ordered: Vec<LabelType> = labels.iter().copied().collect();
        ordered.sort_by_key(|t| t.declaration_rank());
        for (ordinal, t) in ordered.into_iter().enumerate() {
            instances.push(LabelingInstance::new(instance_id_for(hunk, ordinal as u32)?, hunk, t));
        }
    }
    Ok(LabelingSet::from_instances(hunk_count, instances))
}

/// `T(h)`: the label types attached to one hunk. Empty means unlabeled.
pub fn labels_for_hunk(set: &LabelingSet, hunk_index: u32) -> Result<BTreeSet<LabelType>, TaxonomyError> {
    if hunk_index == 0 || hunk_index as usize > set.hunk_count {
        return Err(TaxonomyError::UnknownHunk(hunk_index));
    }
    Ok(set.on_hunk(hunk_index).map(|i| i.label_type).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    ZeroId { hunk_index: u32 },
    DuplicateId { id: u32 },
    HunkOutOfRange { id: u32, hunk_index: u32 },
    SelfParent { id: u32 },
    DanglingParent { id: u32, parent_id: u32 },
    WrongTypeParent { id: u32, parent_id: u32, expected: LabelType, found: LabelType },
    UnexpectedParent { id: u32, label_type: LabelType },
    UnexpectedAttributes { id: u32, label_type: LabelType },
    BadAttributeArity { id: u32, len: usize },
    UnknownRenameKind { id: u32, kind: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroId { hunk_index } => write!(f, "instance on hunk {hunk_index} has id 0"),
            Violation::DuplicateId { id } => write!(f, "id {id} is used more than once"),
            Violation::HunkOutOfRange { id, hunk_index } => {
                write!(f, "instance {id} refers to unknown hunk {hunk_index}")
            }
            Violation::SelfParent { id } => write!(f, "instance {id} is its own parent"),
            Violation::DanglingParent { id, parent_id } => {
                write!(f, "instance {id} has missing parent {parent_id}")
            }
            Violation::WrongTypeParent { id, parent_id, expected, found } => write!(
                f,
                "instance {id} of type {expected} points to parent {parent_id} of type {found}"
            ),
            Violation::UnexpectedParent { id, label_type } => {
                write!(f, "instance {id} of type {label_type} cannot have a parent")
            }
            Violation::UnexpectedAttributes { id, label_type } => {
                write!(f, "instance {id} of type {label_type} cannot have attributes")
            }
            Violation::BadAttributeArity { id, len } => {
                write!(f, "instance {id} has {len} attributes, expected 0 or 3")
            }
            Violation::UnknownRenameKind { id, kind } => {
                write!(f, "instance {id} has unknown rename kind {kind:?}")
            }
        }
    }
}

/// Every structural rule broken by `set`. Empty means valid.
pub fn validate(set: &LabelingSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for inst in &set.instances {
        *counts.entry(inst.id).or_default() += 1;
    }
    let mut dup: Vec<u32> = counts.iter().filter(|(_, c)| **c > 1).map(|(id, _)| *id).collect();
    dup.sort_unstable();
    out.extend(dup.into_iter().map(|id| Violation::DuplicateId { id }));

    let by_id = set.by_id();
    for inst in &set.instances {
        let id = inst.id;
        if id == 0 {
            out.push(Violation::ZeroId { hunk_index: inst.hunk_index });
        }
        if inst.hunk_index == 0 || inst.hunk_index as usize > set.hunk_count {
            out.push(Violation::HunkOutOfRange { id, hunk_index: inst.hunk_index });
        }

        if inst.parent_id != 0 {
            if !inst.label_type.needs_parent() {
                out.push(Violation::UnexpectedParent { id, label_type: inst.label_type });
            } else if inst.parent_id == id {
                out.push(Violation::SelfParent { id });
            } else {
                match by_id.get(&inst.parent_id) {
                    None => out.push(Violation::DanglingParent { id, parent_id: inst.parent_id }),
                    Some(parent) if parent.label_type != inst.label_type => {
                        out.push(Violation::WrongTypeParent {
                            id,
                            parent_id: inst.parent_id,
                            expected: inst.label_type,
                            found: parent.label_type,
                        })
                    }
                    Some(_) => {}
                }
            }
        }

        if !inst.attributes.is_empty() {
            if !inst.label_type.needs_attributes() {
                out.push(Violation::UnexpectedAttributes { id, label_type: inst.label_type });
            } else if inst.attributes.len() != 3 {
                out.push(Violation::BadAttributeArity { id, len: inst.attributes.len() });
            } else if inst.label_type == LabelType::Rename {
                let kind = inst.attributes[0].trim();
                if kind.parse::<RenameKind>().is_err() {
                    out.push(Violation::UnknownRenameKind { id, kind: kind.to_string() });
                }
            }
        }
    }
    out
}
