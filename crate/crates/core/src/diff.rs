//! Unified-diff parsing into files and hunks, plus local context extraction.
//!
//! A [`PatchBundle`] is the parsed form of one patch: an ordered list of
//! [`FileDiff`]s, each holding its [`DiffHunk`]s. Hunks carry a 1-based
//! `global_index` that is consecutive across the whole patch in stream order;
//! every other component refers to hunks by that index.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of non-empty context lines gathered on each side of a hunk.
pub const DEFAULT_CONTEXT_WIDTH: usize = 5;

pub const DEV_NULL: &str = "/dev/null";

const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

static HUNK_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(?: ?(.*))?$").unwrap()
});

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("malformed diff at line {line}: {reason}")]
    MalformedDiff { line: usize, reason: String },
    #[error("failed to read file contents from {path}: {reason}")]
    Io { path: String, reason: String },
}

fn malformed(line: usize, reason: impl Into<String>) -> DiffError {
    DiffError::MalformedDiff {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Context,
    Added,
    Removed,
}

impl LineKind {
    pub fn marker(self) -> char {
        match self {
            LineKind::Context => ' ',
            LineKind::Added => '+',
            LineKind::Removed => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub kind: LineKind,
    /// Line text without the marker and without the trailing `\n`.
    /// Carriage returns, tabs and trailing whitespace are kept verbatim.
    pub text: String,
    /// Followed by a `\ No newline at end of file` marker.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_newline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkHeader {
    pub old_start: u32,
    pub old_len: u32,
    pub new_start: u32,
    pub new_len: u32,
    /// Trailing function/scope text of the `@@` line, possibly empty.
    pub scope: String,
    /// The `@@` line exactly as it appeared in the input.
    pub raw: String,
}

impl HunkHeader {
    pub fn parse(line: &str) -> Option<HunkHeader> {
        let caps = HUNK_HEADER.captures(line)?;
        let num = |i: usize, default: u32| -> Option<u32> {
            match caps.get(i) {
                Some(m) => m.as_str().parse().ok(),
                None => Some(default),
            }
        };
        let header = HunkHeader {
            old_start: num(1, 0)?,
            old_len: num(2, 1)?,
            new_start: num(3, 0)?,
            new_len: num(4, 1)?,
            scope: caps
                .get(5)
                .map(|m| m.as_str().to_string())
                .unwrap_or_default(),
            raw: line.to_string(),
        };
        if header.old_len == 0 && header.new_len == 0 {
            return None;
        }
        Some(header)
    }
}

impl fmt::Display for HunkHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    pub global_index: u32,
    pub header: HunkHeader,
    pub lines: Vec<DiffLine>,
    #[serde(default)]
    pub context_before: Vec<String>,
    #[serde(default)]
    pub context_after: Vec<String>,
}

impl DiffHunk {
    pub fn added(&self) -> impl Iterator<Item = &DiffLine> {
        self.lines.iter().filter(|l| l.kind == LineKind::Added)
    }

    pub fn removed(&self) -> impl Iterator<Item = &DiffLine> {
        self.lines.iter().filter(|l| l.kind == LineKind::Removed)
    }

    /// Hunk body with `+`/`-`/space markers, one line per entry, each
    /// terminated by `\n`. Inverse of the body parser.
    pub fn render_text(&self) -> String {
        render_hunk_text(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub old_path: String,
    pub new_path: String,
    pub hunks: Vec<DiffHunk>,
}

impl FileDiff {
    /// The path used to identify the file: the new path, or the old one for deletions.
    pub fn path(&self) -> &str {
        if self.new_path == DEV_NULL {
            &self.old_path
        } else {
            &self.new_path
        }
    }

    pub fn is_created(&self) -> bool {
        self.old_path == DEV_NULL
    }

    pub fn is_deleted(&self) -> bool {
        self.new_path == DEV_NULL
    }
}

/// Old and new full text of one file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileContents {
    pub old_text: Option<String>,
    pub new_text: Option<String>,
}

pub type ContentsMap = BTreeMap<String, FileContents>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchBundle {
    pub files: Vec<FileDiff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_meta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_contents: Option<ContentsMap>,
}

impl PatchBundle {
    pub fn hunk_count(&self) -> usize {
        self.files.iter().map(|f| f.hunks.len()).sum()
    }

    pub fn hunks(&self) -> impl Iterator<Item = &DiffHunk> {
        self.files.iter().flat_map(|f| f.hunks.iter())
    }

    /// Hunks paired with the file they belong to, in stream order.
    pub fn hunks_with_files(&self) -> impl Iterator<Item = (&FileDiff, &DiffHunk)> {
        self.files
            .iter()
            .flat_map(|f| f.hunks.iter().map(move |h| (f, h)))
    }

    pub fn hunk(&self, global_index: u32) -> Option<(&FileDiff, &DiffHunk)> {
        self.hunks_with_files()
            .find(|(_, h)| h.global_index == global_index)
    }

    pub fn file(&self, path: &str) -> Option<&FileDiff> {
        self.files.iter().find(|f| f.path() == path)
    }

    pub fn with_source_meta(mut self, meta: impl Into<String>) -> Self {
        self.source_meta = Some(meta.into());
        self
    }

    /// Recompute `context_before`/`context_after` of every hunk at `width`.
    pub fn attach_context(&mut self, width: usize) {
        let computed: Vec<Vec<(Vec<String>, Vec<String>)>> = self
            .files
            .iter()
            .map(|f| {
                f.hunks
                    .iter()
                    .map(|h| extract_context_in(f, h, self.file_contents.as_ref(), width))
                    .collect()
            })
            .collect();
        for (file, contexts) in self.files.iter_mut().zip(computed) {
            for (hunk, (before, after)) in file.hunks.iter_mut().zip(contexts) {
                hunk.context_before = before;
                hunk.context_after = after;
            }
        }
    }
}

/// Parse with the default context width.
pub fn parse_patch(diff_text: &str, file_contents: Option<ContentsMap>) -> Result<PatchBundle, DiffError> {
    parse_patch_with_width(diff_text, file_contents, DEFAULT_CONTEXT_WIDTH)
}

pub fn parse_patch_with_width(
    diff_text: &str,
    file_contents: Option<ContentsMap>,
    width: usize,
) -> Result<PatchBundle, DiffError> {
    let files = Parser::new(diff_text).parse()?;
    let mut bundle = PatchBundle {
        files,
        source_meta: None,
        file_contents,
    };
    bundle.attach_context(width);
    Ok(bundle)
}

fn strip_prefix_path(raw: &str) -> String {
    // `--- a/path\t2020-01-01 ...`: drop an optional timestamp.
    let path = raw.split('\t').next().unwrap_or(raw).trim_end_matches('\r');
    if path == DEV_NULL {
        return path.to_string();
    }
    path.strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path)
        .to_string()
}

struct Parser<'a> {
    lines: Vec<&'a str>,
    pos: usize,
    next_index: u32,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines: Vec<&str> = text.split('\n').collect();
        // A trailing newline yields one empty tail element.
        if lines.last() == Some(&"") {
            lines.pop();
        }
        Parser {
            lines,
            pos: 0,
            next_index: 1,
        }
    }

    fn line_no(&self) -> usize {
        self.pos + 1
    }

    fn parse(mut self) -> Result<Vec<FileDiff>, DiffError> {
        let mut files: Vec<FileDiff> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut saw_file_header = false;

        while self.pos < self.lines.len() {
            let line = self.lines[self.pos];
            if line.starts_with("--- ")
                && self
                    .lines
                    .get(self.pos + 1)
                    .is_some_and(|next| next.starts_with("+++ "))
            {
                saw_file_header = true;
                let header_line = self.line_no();
                let old_path = strip_prefix_path(&line[4..]);
                let new_path = strip_prefix_path(&self.lines[self.pos + 1][4..]);
                self.pos += 2;
                let hunks = self.parse_hunks()?;
                if hunks.is_empty() {
                    return Err(malformed(header_line, "file header without any hunk"));
                }
                let file = FileDiff {
                    old_path,
                    new_path,
                    hunks,
                };
                if !seen.insert(file.path().to_string()) {
                    return Err(malformed(
                        header_line,
                        format!("duplicate file path {}", file.path()),
                    ));
                }
                files.push(file);
            } else if line.starts_with("@@") {
                return Err(malformed(self.line_no(), "hunk header outside of a file section"));
            } else {
                // `diff --git`, `index`, mode, rename and binary lines, or preamble text.
                self.pos += 1;
            }
        }

        if !saw_file_header {
            return Err(malformed(self.line_no().min(self.lines.len().max(1)), "no file headers found"));
        }
        Ok(files)
    }

    fn parse_hunks(&mut self) -> Result<Vec<DiffHunk>, DiffError> {
        let mut hunks: Vec<DiffHunk> = Vec::new();
        while self.pos < self.lines.len() && self.lines[self.pos].starts_with("@@") {
            let header_line = self.line_no();
            let header = HunkHeader::parse(self.lines[self.pos].trim_end_matches('\r'))
                .ok_or_else(|| malformed(header_line, "unparseable hunk header"))?;
            self.pos += 1;
            let lines = self.parse_body(&header, header_line)?;
            if let Some(prev) = hunks.last() {
                let prev_end = prev.header.new_start + prev.header.new_len;
                if header.new_start < prev_end {
                    return Err(malformed(
                        header_line,
                        "hunks overlap or are out of order in new-file coordinates",
                    ));
                }
            }
            hunks.push(DiffHunk {
                global_index: self.next_index,
                header,
                lines,
                context_before: Vec::new(),
                context_after: Vec::new(),
            });
            self.next_index += 1;
        }
        Ok(hunks)
    }

    fn parse_body(&mut self, header: &HunkHeader, header_line: usize) -> Result<Vec<DiffLine>, DiffError> {
        let mut old_left = header.old_len;
        let mut new_left = header.new_len;
        let mut body: Vec<DiffLine> = Vec::new();

        while old_left > 0 || new_left > 0 {
            let Some(&line) = self.lines.get(self.pos) else {
                return Err(malformed(
                    self.line_no(),
                    format!("hunk starting at line {header_line} ends early: {old_left} old and {new_left} new lines missing"),
                ));
            };
            if line.starts_with(NO_NEWLINE_MARKER) {
                match body.last_mut() {
                    Some(last) => last.no_newline = true,
                    None => return Err(malformed(self.line_no(), "no-newline marker before any line")),
                }
                self.pos += 1;
                continue;
            }
            let (kind, text) = match line.chars().next() {
                Some(' ') => (LineKind::Context, &line[1..]),
                Some('+') => (LineKind::Added, &line[1..]),
                Some('-') => (LineKind::Removed, &line[1..]),
                None => (LineKind::Context, ""),
                Some(_) => {
                    return Err(malformed(
                        self.line_no(),
                        format!("hunk starting at line {header_line} has {old_left} old and {new_left} new lines missing"),
                    ))
                }
            };
            match kind {
                LineKind::Context if old_left > 0 && new_left > 0 => {
                    old_left -= 1;
                    new_left -= 1;
                }
                LineKind::Added if new_left > 0 => new_left -= 1,
                LineKind::Removed if old_left > 0 => old_left -= 1,
                _ => {
                    return Err(malformed(
                        self.line_no(),
                        "line count does not match the hunk header",
                    ))
                }
            }
            body.push(DiffLine {
                kind,
                text: text.to_string(),
                no_newline: false,
            });
            self.pos += 1;
        }

        // Trailing marker for the last line.
        if self
            .lines
            .get(self.pos)
            .is_some_and(|l| l.starts_with(NO_NEWLINE_MARKER))
        {
            if let Some(last) = body.last_mut() {
                last.no_newline = true;
            }
            self.pos += 1;
        }

        // Anything that looks like a body line right after a complete hunk is surplus.
        if let Some(&next) = self.lines.get(self.pos) {
            // `-- ` opens the signature trailer of `git format-patch` output.
            let signature = next == "-- " || next == "--";
            let surplus = matches!(next.chars().next(), Some('+') | Some('-') | Some(' '))
                && !signature
                && !(next.starts_with("--- ")
                    && self
                        .lines
                        .get(self.pos + 1)
                        .is_some_and(|n| n.starts_with("+++ ")));
            if surplus {
                return Err(malformed(
                    self.line_no(),
                    format!("hunk starting at line {header_line} has more lines than its header declares"),
                ));
            }
        }
        Ok(body)
    }
}

/// Render a hunk body exactly as it was parsed.
pub fn render_hunk_text(hunk: &DiffHunk) -> String {
    let mut out = String::new();
    for line in &hunk.lines {
        out.push(line.kind.marker());
        out.push_str(&line.text);
        out.push('\n');
        if line.no_newline {
            out.push_str(NO_NEWLINE_MARKER);
            out.push('\n');
        }
    }
    out
}

/// Up to `width` non-empty lines immediately before and after `hunk`.
///
/// Uses the full new-file text from the bundle when available (old-file text
/// for deleted files); otherwise falls back to the hunk's own leading and
/// trailing context lines.
pub fn extract_context(hunk: &DiffHunk, bundle: &PatchBundle, width: usize) -> (Vec<String>, Vec<String>) {
    let file = bundle
        .files
        .iter()
        .find(|f| f.hunks.iter().any(|h| h.global_index == hunk.global_index));
    match file {
        Some(file) => extract_context_in(file, hunk, bundle.file_contents.as_ref(), width),
        None => fallback_context(hunk, width),
    }
}

fn extract_context_in(
    file: &FileDiff,
    hunk: &DiffHunk,
    contents: Option<&ContentsMap>,
    width: usize,
) -> (Vec<String>, Vec<String>) {
    if width == 0 {
        return (Vec::new(), Vec::new());
    }
    let entry = contents.and_then(|m| m.get(file.path()));
    let new_text = entry.and_then(|c| c.new_text.as_deref());
    let old_text = entry.and_then(|c| c.old_text.as_deref());

    match (new_text, old_text) {
        (Some(text), _) if !file.is_deleted() => {
            context_from_text(text, hunk.header.new_start, hunk.header.new_len, width)
        }
        (_, Some(text)) if file.is_deleted() => {
            context_from_text(text, hunk.header.old_start, hunk.header.old_len, width)
        }
        _ => fallback_context(hunk, width),
    }
}

/// `start`/`len` are 1-based unified-diff range values. For an empty range
/// `start` names the line after which the change sits.
fn context_from_text(text: &str, start: u32, len: u32, width: usize) -> (Vec<String>, Vec<String>) {
    let lines: Vec<&str> = text.lines().collect();
    let (before_end, after_start) = if len == 0 {
        (start as usize, start as usize)
    } else {
        let first = start.saturating_sub(1) as usize;
        (first, first + len as usize)
    };
    let before_end = before_end.min(lines.len());
    let after_start = after_start.min(lines.len());

    let mut before: Vec<String> = lines[..before_end]
        .iter()
        .rev()
        .filter(|l| !l.trim().is_empty())
        .take(width)
        .map(|l| l.to_string())
        .collect();
    before.reverse();
    let after = lines[after_start..]
        .iter()
        .filter(|l| !l.trim().is_empty())
        .take(width)
        .map(|l| l.to_string())
        .collect();
    (before, after)
}

fn fallback_context(hunk: &DiffHunk, width: usize) -> (Vec<String>, Vec<String>) {
    let leading: Vec<&DiffLine> = hunk
        .lines
        .iter()
        .take_while(|l| l.kind == LineKind::Context)
        .collect();
    // A hunk made only of context lines has nothing after its changes.
    if leading.len() == hunk.lines.len() {
        return (Vec::new(), Vec::new());
    }
    let mut trailing: Vec<&DiffLine> = hunk
        .lines
        .iter()
        .rev()
        .take_while(|l| l.kind == LineKind::Context)
        .collect();
    trailing.reverse();

    let mut before: Vec<String> = leading
        .iter()
        .rev()
        .filter(|l| !l.text.trim().is_empty())
        .take(width)
        .map(|l| l.text.clone())
        .collect();
    before.reverse();
    let after = trailing
        .iter()
        .filter(|l| !l.text.trim().is_empty())
        .take(width)
        .map(|l| l.text.clone())
        .collect();
    (before, after)
}

/// Load `old/<path>` and `new/<path>` from a sidecar directory for every file in the diff.
pub fn load_contents_dir(dir: &Path, files: &[FileDiff]) -> Result<ContentsMap, DiffError> {
    let mut map = ContentsMap::new();
    for file in files {
        let read = |side: &str, path: &str| -> Result<Option<String>, DiffError> {
            if path == DEV_NULL {
                return Ok(None);
            }
            let full = dir.join(side).join(path);
            if !full.exists() {
                return Ok(None);
            }
            fs::read_to_string(&full).map(Some).map_err(|e| DiffError::Io {
                path: full.display().to_string(),
                reason: e.to_string(),
            })
        };
        let contents = FileContents {
            old_text: read("old", &file.old_path)?,
            new_text: read("new", &file.new_path)?,
        };
        if contents.old_text.is_some() || contents.new_text.is_some() {
            map.insert(file.path().to_string(), contents);
        }
    }
    Ok(map)
}

/// Parse `diff_text` and, when `files_dir` is given, attach file contents from it.
pub fn parse_patch_with_dir(
    diff_text: &str,
    files_dir: Option<&Path>,
    width: usize,
) -> Result<PatchBundle, DiffError> {
    let mut bundle = parse_patch_with_width(diff_text, None, width)?;
    if let Some(dir) = files_dir {
        bundle.file_contents = Some(load_contents_dir(dir, &bundle.files)?);
        bundle.attach_context(width);
    }
    Ok(bundle)
}
