//! Rendering of labeler and refiner prompts and their diff-hunk input streams.

mod templates;

pub use templates::{label_types_block, PromptTemplates};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffHunk, PatchBundle};
use crate::taxonomy::LabelType;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("nothing to render: {0}")]
    EmptyInput(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("template error: {0}")]
    Template(String),
}

/// How many hunks go into one labeler request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelerMode {
    Hunk,
    File,
    Patch,
}

impl LabelerMode {
    pub const ALL: [LabelerMode; 3] = [LabelerMode::Hunk, LabelerMode::File, LabelerMode::Patch];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelerMode::Hunk => "hunk",
            LabelerMode::File => "file",
            LabelerMode::Patch => "patch",
        }
    }

    pub fn prompt_kind(self) -> PromptKind {
        match self {
            LabelerMode::Hunk => PromptKind::LabelerHunk,
            LabelerMode::File => PromptKind::LabelerFile,
            LabelerMode::Patch => PromptKind::LabelerPatch,
        }
    }
}

impl fmt::Display for LabelerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hunk" | "per-hunk" => Ok(LabelerMode::Hunk),
            "file" | "per-file" => Ok(LabelerMode::File),
            "patch" | "per-patch" => Ok(LabelerMode::Patch),
            other => Err(format!("unknown mode {other:?}, expected hunk, file or patch")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptKind {
    LabelerHunk,
    LabelerFile,
    LabelerPatch,
    Refiner,
}

impl PromptKind {
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            PromptKind::LabelerHunk => &[
                "label_types",
                "specific_instructions",
                "examples",
                "hunk_format_instructions",
                "json_format_request",
                "input_stream",
            ],
            PromptKind::LabelerFile | PromptKind::LabelerPatch => &[
                "label_types",
                "specific_instructions",
                "examples",
                "stream_format_instructions",
                "json_format_request",
                "input_stream",
            ],
            PromptKind::Refiner => &[
                "label_types",
                "parent_and_attributes_instructions",
                "refiner_stream_format_instructions",
                "json_format_request",
                "input_stream",
            ],
        }
    }

    pub fn is_labeler(self) -> bool {
        !matches!(self, PromptKind::Refiner)
    }
}

/// A label listed in a refiner stream. `label == None` is the `NONE`
/// pseudo-label standing in for an unlabeled hunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoveredLabel {
    pub id: u32,
    pub hunk_index: u32,
    pub label: Option<LabelType>,
}

impl CoveredLabel {
    pub fn type_name(&self) -> &'static str {
        self.label.map(LabelType::name).unwrap_or(NONE_TYPE)
    }
}

/// Stream spelling of the pseudo-label carried by unlabeled hunks.
pub const NONE_TYPE: &str = "NONE";

/// One refiner-stream entry: a hunk and the labels it is asked about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerHunk {
    pub hunk_index: u32,
    pub labels: Vec<CoveredLabel>,
}

/// Rendered prompt plus the hunks and labels its stream covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub kind: PromptKind,
    /// Stable name for this request, e.g. `labeler-hunk-3` or `refiner`.
    pub key: String,
    pub text: String,
    pub covered_hunks: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covered_labels: Vec<CoveredLabel>,
}

fn fenced(out: &mut String, lines: &[&str]) {
    out.push_str("```\n");
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("```");
}

fn body_lines(hunk: &DiffHunk) -> String {
    let body = hunk.render_text();
    body.strip_suffix('\n').unwrap_or(&body).to_string()
}

/// Context before, hunk body and context after, as one fenced block.
fn wrapped_hunk(out: &mut String, hunk: &DiffHunk) {
    let body = body_lines(hunk);
    let mut lines: Vec<&str> = hunk.context_before.iter().map(String::as_str).collect();
    lines.extend(body.split('\n'));
    lines.extend(hunk.context_after.iter().map(String::as_str));
    fenced(out, &lines);
}

/// Per-hunk stream: the hunk with captioned context above and below.
pub fn hunk_stream(file_path: &str, hunk: &DiffHunk) -> String {
    let mut out = String::new();
    out.push_str(&format!("In file {file_path}:\n"));
    out.push_str("Code above the diff hunk:\n");
    let before: Vec<&str> = hunk.context_before.iter().map(String::as_str).collect();
    fenced(&mut out, &before);
    out.push_str("\nDiff hunk content:\n");
    out.push_str(&format!("Header {}:\n", hunk.header.raw));
    let body = body_lines(hunk);
    fenced(&mut out, &body.split('\n').collect::<Vec<_>>());
    out.push_str("\nCode below the diff hunk:");
    for line in &hunk.context_after {
        out.push('\n');
        out.push_str(line);
    }
    out
}

/// Per-file stream: every hunk of one file, numbered by global index.
pub fn file_stream(file_path: &str, hunks: &[&DiffHunk]) -> String {
    let mut out = format!("In file {file_path}:");
    for hunk in hunks {
        out.push_str(&format!("\nDiff hunk number {}:\n", hunk.global_index));
        wrapped_hunk(&mut out, hunk);
    }
    out
}

/// Groups consecutive entries by file path, keeping stream order.
fn group_by_file<'a, T>(entries: &'a [(&'a str, T)]) -> Vec<(&'a str, Vec<&'a T>)> {
    let mut groups: Vec<(&str, Vec<&T>)> = Vec::new();
    for (path, item) in entries {
        match groups.last_mut() {
            Some((p, items)) if p == path => items.push(item),
            _ => groups.push((path, vec![item])),
        }
    }
    groups
}

/// Render a labeler prompt over `entries` (file path, hunk) in stream order.
pub fn render_labeler_prompt(
    templates: &PromptTemplates,
    mode: LabelerMode,
    entries: &[(&str, &DiffHunk)],
) -> Result<PromptRequest, PromptError> {
    if entries.is_empty() {
        return Err(PromptError::EmptyInput(format!("{mode} mode prompt without hunks")));
    }
    let groups = group_by_file(entries);
    let (stream, key) = match mode {
        LabelerMode::Hunk => {
            if entries.len() != 1 {
                return Err(PromptError::InvalidInput(format!(
                    "hunk mode takes exactly one hunk, got {}",
                    entries.len()
                )));
            }
            let (path, hunk) = entries[0];
            (hunk_stream(path, hunk), format!("labeler-hunk-{}", hunk.global_index))
        }
        LabelerMode::File => {
            if groups.len() != 1 {
                return Err(PromptError::InvalidInput(format!(
                    "file mode takes hunks of one file, got {} files",
                    groups.len()
                )));
            }
            let (path, hunks) = &groups[0];
            let hunks: Vec<&DiffHunk> = hunks.iter().map(|h| **h).collect();
            (file_stream(path, &hunks), format!("labeler-file-{path}"))
        }
        LabelerMode::Patch => {
            let blocks: Vec<String> = groups
                .iter()
                .map(|(path, hunks)| {
                    let hunks: Vec<&DiffHunk> = hunks.iter().map(|h| **h).collect();
                    file_stream(path, &hunks)
                })
                .collect();
            (blocks.join("\n"), "labeler-patch".to_string())
        }
    };
    let kind = mode.prompt_kind();
    Ok(PromptRequest {
        kind,
        key,
        text: templates.render(kind, &stream)?,
        covered_hunks: entries.iter().map(|(_, h)| h.global_index).collect(),
        covered_labels: Vec::new(),
    })
}

/// All labeler requests for a bundle: one per hunk, per file, or a single one.
pub fn labeler_requests(
    templates: &PromptTemplates,
    mode: LabelerMode,
    bundle: &PatchBundle,
) -> Result<Vec<PromptRequest>, PromptError> {
    match mode {
        LabelerMode::Hunk => bundle
            .hunks_with_files()
            .map(|(f, h)| render_labeler_prompt(templates, mode, &[(f.path(), h)]))
            .collect(),
        LabelerMode::File => bundle
            .files
            .iter()
            .map(|f| {
                let entries: Vec<(&str, &DiffHunk)> = f.hunks.iter().map(|h| (f.path(), h)).collect();
                render_labeler_prompt(templates, mode, &entries)
            })
            .collect(),
        LabelerMode::Patch => {
            let entries: Vec<(&str, &DiffHunk)> = bundle.hunks_with_files().map(|(f, h)| (f.path(), h)).collect();
            Ok(vec![render_labeler_prompt(templates, mode, &entries)?])
        }
    }
}

/// Refiner stream over the filtered hunks, grouped under their files.
pub fn refiner_stream(bundle: &PatchBundle, entries: &[RefinerHunk]) -> Result<String, PromptError> {
    let mut resolved: Vec<(&str, (&DiffHunk, &RefinerHunk))> = Vec::new();
    for entry in entries {
        let (file, hunk) = bundle.hunk(entry.hunk_index).ok_or_else(|| {
            PromptError::InvalidInput(format!("refiner entry for unknown hunk {}", entry.hunk_index))
        })?;
        resolved.push((file.path(), (hunk, entry)));
    }
    let mut blocks = Vec::new();
    for (path, items) in group_by_file(&resolved) {
        let mut out = format!("In file {path}:");
        for (hunk, entry) in items {
            out.push_str(&format!(
                "\nDiff hunk number {} in scope {}:\nLabeled as:\n",
                hunk.global_index, hunk.header.scope
            ));
            for label in &entry.labels {
                out.push_str(&format!("Type: {}, ID: {}\n", label.type_name(), label.id));
            }
            wrapped_hunk(&mut out, hunk);
        }
        blocks.push(out);
    }
    Ok(blocks.join("\n"))
}

/// Render the single refiner prompt for a patch.
pub fn render_refiner_prompt(
    templates: &PromptTemplates,
    bundle: &PatchBundle,
    entries: &[RefinerHunk],
) -> Result<PromptRequest, PromptError> {
    let labels: Vec<CoveredLabel> = entries.iter().flat_map(|e| e.labels.iter().copied()).collect();
    if labels.is_empty() {
        return Err(PromptError::EmptyInput("no labels to refine".into()));
    }
    let mut seen = BTreeSet::new();
    for entry in entries {
        if !seen.insert(entry.hunk_index) {
            return Err(PromptError::InvalidInput(format!(
                "hunk {} listed twice in refiner stream",
                entry.hunk_index
            )));
        }
        if let Some(bad) = entry
            .labels
            .iter()
            .find(|l| l.label.is_some_and(|t| !t.refiner_eligible()))
        {
            return Err(PromptError::InvalidInput(format!(
                "label {} of type {} is not refiner-eligible",
                bad.id,
                bad.type_name()
            )));
        }
    }
    let stream = refiner_stream(bundle, entries)?;
    Ok(PromptRequest {
        kind: PromptKind::Refiner,
        key: "refiner".to_string(),
        text: templates.render(PromptKind::Refiner, &stream)?,
        covered_hunks: entries.iter().map(|e| e.hunk_index).collect(),
        covered_labels: labels,
    })
}

/// Fallback token count: `ceil(bytes / 4)`.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}
