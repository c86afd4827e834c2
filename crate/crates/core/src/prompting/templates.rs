use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use super::{PromptError, PromptKind};
use crate::taxonomy::LabelType;

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

/// Skeletons and placeholder texts used to build every prompt.
///
/// The built-in copies are compiled from `templates/*.txt`; [`PromptTemplates::load_dir`]
/// overrides any of them with same-named files from a directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub labeler_hunk: String,
    pub labeler_stream: String,
    pub refiner: String,
    pub specific_instructions: String,
    pub examples: String,
    pub hunk_format_instructions: String,
    pub stream_format_instructions: String,
    pub json_format_request: String,
    pub parent_and_attributes_instructions: String,
    pub refiner_stream_format_instructions: String,
}

fn resource(text: &str) -> String {
    text.strip_suffix('\n').unwrap_or(text).to_string()
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        PromptTemplates {
            labeler_hunk: resource(include_str!("../../templates/labeler_hunk.txt")),
            labeler_stream: resource(include_str!("../../templates/labeler_stream.txt")),
            refiner: resource(include_str!("../../templates/refiner.txt")),
            specific_instructions: resource(include_str!("../../templates/specific_instructions.txt")),
            examples: resource(include_str!("../../templates/examples.txt")),
            hunk_format_instructions: resource(include_str!("../../templates/hunk_format_instructions.txt")),
            stream_format_instructions: resource(include_str!("../../templates/stream_format_instructions.txt")),
            json_format_request: resource(include_str!("../../templates/json_format_request.txt")),
            parent_and_attributes_instructions: resource(include_str!(
                "../../templates/parent_and_attributes_instructions.txt"
            )),
            refiner_stream_format_instructions: resource(include_str!(
                "../../templates/refiner_stream_format_instructions.txt"
            )),
        }
    }

    /// Built-in templates with every `<name>.txt` found in `dir` substituted.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::builtin();
        let slots: [(&str, &mut String); 10] = [
            ("labeler_hunk", &mut t.labeler_hunk),
            ("labeler_stream", &mut t.labeler_stream),
            ("refiner", &mut t.refiner),
            ("specific_instructions", &mut t.specific_instructions),
            ("examples", &mut t.examples),
            ("hunk_format_instructions", &mut t.hunk_format_instructions),
            ("stream_format_instructions", &mut t.stream_format_instructions),
            ("json_format_request", &mut t.json_format_request),
            ("parent_and_attributes_instructions", &mut t.parent_and_attributes_instructions),
            ("refiner_stream_format_instructions", &mut t.refiner_stream_format_instructions),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| PromptError::Template(format!(
                    "cannot read {}: {e}",
                    path.display()
                )))?;
                *slot = resource(&text);
            }
        }
        t.check()?;
        Ok(t)
    }

    /// Append a user-supplied example after the built-in ones.
    pub fn add_example(&mut self, example: &str) {
        self.examples.push_str("\n\n");
        self.examples.push_str(example.trim_end_matches('\n'));
    }

    /// Verify that every skeleton uses exactly its expected placeholders.
    pub fn check(&self) -> Result<(), PromptError> {
        for kind in [PromptKind::LabelerHunk, PromptKind::LabelerFile, PromptKind::Refiner] {
            let found = placeholders_in(self.skeleton(kind));
            let expected: BTreeSet<String> = kind.placeholders().iter().map(|s| s.to_string()).collect();
            if found != expected {
                return Err(PromptError::Template(format!(
                    "{kind:?} skeleton has placeholders {found:?}, expected {expected:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn skeleton(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::LabelerHunk => &self.labeler_hunk,
            PromptKind::LabelerFile | PromptKind::LabelerPatch => &self.labeler_stream,
            PromptKind::Refiner => &self.refiner,
        }
    }

    fn fixed_value(&self, name: &str) -> Option<String> {
        Some(match name {
            "label_types" => label_types_block(),
            "specific_instructions" => self.specific_instructions.clone(),
            "examples" => self.examples.clone(),
            "hunk_format_instructions" => self.hunk_format_instructions.clone(),
            "stream_format_instructions" => self.stream_format_instructions.clone(),
            "json_format_request" => self.json_format_request.clone(),
            "parent_and_attributes_instructions" => self.parent_and_attributes_instructions.clone(),
            "refiner_stream_format_instructions" => self.refiner_stream_format_instructions.clone(),
            _ => return None,
        })
    }

    /// Fill the skeleton for `kind`. Values are inserted verbatim; braces
    /// inside them are never treated as placeholders.
    pub fn render(&self, kind: PromptKind, input_stream: &str) -> Result<String, PromptError> {
        let skeleton = self.skeleton(kind);
        let allowed = kind.placeholders();
        let mut out = String::with_capacity(skeleton.len() + input_stream.len() + 8192);
        let mut last = 0;
        for caps in PLACEHOLDER.captures_iter(skeleton) {
            let whole = caps.get(0).unwrap();
            let name = &caps[1];
            if !allowed.contains(&name) {
                return Err(PromptError::Template(format!("unexpected placeholder {{{name}}} in {kind:?} skeleton")));
            }
            out.push_str(&skeleton[last..whole.start()]);
            if name == "input_stream" {
                out.push_str(input_stream);
            } else {
                let value = self
                    .fixed_value(name)
                    .ok_or_else(|| PromptError::Template(format!("no value for {{{name}}}")))?;
                out.push_str(&value);
            }
            last = whole.end();
        }
        out.push_str(&skeleton[last..]);
        Ok(out)
    }
}

fn placeholders_in(skeleton: &str) -> BTreeSet<String> {
    PLACEHOLDER
        .captures_iter(skeleton)
        .map(|c| c[1].to_string())
        .collect()
}

/// `label_name: <name>, description: <text>` for each type, one per line.
pub fn label_types_block() -> String {
    LabelType::ALL
        .iter()
        .map(|t| format!("label_name: {}, description: {}", t.prompt_name(), t.description()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_are_consistent() {
        PromptTemplates::builtin().check().unwrap();
    }

    #[test]
    fn braces_inside_values_survive() {
        let t = PromptTemplates::builtin();
        let text = t.render(PromptKind::LabelerHunk, "{not_a_placeholder}").unwrap();
        assert!(text.ends_with("{not_a_placeholder}"));
        assert!(text.contains("\"reasoning\": \"<reasoning1>\""));
        assert!(!text.contains("{label_types}"));
    }

    #[test]
    fn skeleton_with_wrong_placeholder_is_rejected() {
        let mut t = PromptTemplates::builtin();
        t.refiner.push_str("\n{stream_format_instructions}");
        assert!(t.check().is_err());
        assert!(t.render(PromptKind::Refiner, "").is_err());
    }

    #[test]
    fn load_dir_overrides_single_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("examples.txt"), "custom example\n").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.examples, "custom example");
        assert_eq!(t.refiner, PromptTemplates::builtin().refiner);
    }

    #[test]
    fn added_examples_follow_builtin_one() {
        let mut t = PromptTemplates::builtin();
        t.add_example("In file Foo.java:\n...\n");
        assert!(t.examples.starts_with("In file code.py:"));
        assert!(t.examples.ends_with("\n\nIn file Foo.java:\n..."));
    }

    #[test]
    fn label_block_has_twelve_lines() {
        let block = label_types_block();
        assert_eq!(block.lines().count(), 12);
        assert!(block.starts_with("label_name: documentation, description: adding new or changing existing comments"));
    }
}
