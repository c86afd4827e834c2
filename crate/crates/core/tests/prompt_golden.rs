//! Rendered prompts for a fixed two-file patch, compared byte for byte with
//! the files under `tests/golden/`. Set `HUNKMARK_BLESS=1` to rewrite them.

use std::fs;
use std::path::{Path, PathBuf};

use hunkmark::diff::parse_patch_with_dir;
use hunkmark::prompting::{labeler_requests, PromptRequest};
use hunkmark::refiner::refiner_request;
use hunkmark::taxonomy::{LabelType, LabelingInstance, LabelingSet};
use hunkmark::{LabelerMode, PromptTemplates};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn bundle() -> hunkmark::PatchBundle {
    let dir = golden_dir();
    let text = fs::read_to_string(dir.join("fixture.diff")).unwrap();
    parse_patch_with_dir(&text, Some(&dir.join("files")), 5).unwrap()
}

fn check(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("HUNKMARK_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    if expected != actual {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .map_or_else(|| "length".to_string(), |n| format!("line {}", n + 1));
        panic!("{name} differs from golden at {line}");
    }
}

fn requests(mode: LabelerMode) -> Vec<PromptRequest> {
    labeler_requests(&PromptTemplates::builtin(), mode, &bundle()).unwrap()
}

fn refiner_set() -> LabelingSet {
    LabelingSet::from_instances(
        3,
        vec![
            LabelingInstance::new(1000, 1, LabelType::Retype),
            LabelingInstance::new(2000, 2, LabelType::Rename),
            LabelingInstance::new(2001, 2, LabelType::Retype),
            LabelingInstance::new(3000, 3, LabelType::Rename),
        ],
    )
}

#[test]
fn per_hunk_prompt() {
    let reqs = requests(LabelerMode::Hunk);
    assert_eq!(reqs.len(), 3);
    check("labeler_hunk.txt", &reqs[1].text);
}

#[test]
fn per_file_prompt() {
    let reqs = requests(LabelerMode::File);
    assert_eq!(reqs.len(), 2);
    check("labeler_file.txt", &reqs[0].text);
}

#[test]
fn per_patch_prompt() {
    let reqs = requests(LabelerMode::Patch);
    assert_eq!(reqs.len(), 1);
    check("labeler_patch.txt", &reqs[0].text);
}

#[test]
fn refiner_prompt() {
    let req = refiner_request(&bundle(), &refiner_set(), &PromptTemplates::builtin())
        .unwrap()
        .expect("eligible labels present");
    assert_eq!(req.covered_hunks, vec![1, 2, 3]);
    check("refiner.txt", &req.text);
}

fn read(name: &str) -> String {
    fs::read_to_string(golden_dir().join(name)).unwrap()
}

fn contains_all(text: &str, needles: &[&str], what: &Path) {
    for n in needles {
        assert!(text.contains(n), "{} lacks {n:?}", what.display());
    }
}

// Spot checks on the goldens themselves, so a careless re-bless cannot
// silently drop fixed instruction text.
#[test]
fn goldens_carry_the_fixed_instructions() {
    let fence_rule = "Do not start the JSON with ```json or end with ```";
    for name in ["labeler_hunk.txt", "labeler_file.txt", "labeler_patch.txt", "refiner.txt"] {
        let text = read(name);
        for ph in [
            "{input_stream}",
            "{label_types}",
            "{specific_instructions}",
            "{examples}",
            "{json_format_request}",
            "{stream_format_instructions}",
            "{hunk_format_instructions}",
            "{parent_and_attributes_instructions}",
            "{refiner_stream_format_instructions}",
        ] {
            assert!(!text.contains(ph), "{name}: {ph} left in");
        }
        contains_all(
            &text,
            &[
                fence_rule,
                "instead use <json> at the beginning and </json> at the end of the JSON.",
                "label_name: rename, description:",
            ],
            Path::new(name),
        );
    }
    contains_all(
        &read("refiner.txt"),
        &[
            "For the following labels you should provide attributes and a parent field with the following meaning:",
            "[\"VAR\", \"my_var\", \"your_var\", \"CLASS\", \"MyClass\", \"YourClass\"]",
            "The parent_id must have the same label type as the one pointing to it.",
            "Type: RENAME, ID: 2000",
            "Type: RETYPE, ID: 2001",
        ],
        Path::new("refiner.txt"),
    );
    contains_all(
        &read("labeler_hunk.txt"),
        &["Code above the diff hunk:", "Code below the diff hunk:", "In file src/Account.java:"],
        Path::new("labeler_hunk.txt"),
    );
    let patch = read("labeler_patch.txt");
    assert!(patch.contains("In file src/Account.java:") && patch.contains("In file src/Report.java:"));
}
