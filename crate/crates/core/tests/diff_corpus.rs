use std::fs;
use std::path::PathBuf;

use hunkmark::diff::render_hunk_text;
use hunkmark::parse_patch;

fn corpus() -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/diff_corpus");
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "diff"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

/// Cut hunk bodies straight out of the text using only the `@@` counts.
fn bodies_by_hand(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        i += 1;
        if !line.starts_with("@@ -") {
            continue;
        }
        let ranges: Vec<&str> = line.split(' ').skip(1).take(2).collect();
        let len = |r: &str| -> usize {
            match r[1..].split_once(',') {
                Some((_, n)) => n.parse().unwrap(),
                None => 1,
            }
        };
        let (mut old, mut new) = (len(ranges[0]), len(ranges[1]));
        let mut body = String::new();
        while old > 0 || new > 0 || lines.get(i).is_some_and(|l| l.starts_with('\\')) {
            let l = lines[i];
            match l.as_bytes()[0] {
                b' ' => {
                    old -= 1;
                    new -= 1;
                }
                b'-' => old -= 1,
                b'+' => new -= 1,
                b'\\' => {}
                other => panic!("unexpected marker {:?}", other as char),
            }
            body.push_str(l);
            i += 1;
        }
        out.push(body);
    }
    out
}

#[test]
fn corpus_is_large_enough() {
    assert!(corpus().len() >= 50);
}

#[test]
fn render_reproduces_every_hunk_body() {
    let mut hunks = 0;
    for (name, text) in corpus() {
        let bundle = parse_patch(&text, None).unwrap_or_else(|e| panic!("{name}: {e}"));
        let rendered: Vec<String> = bundle.hunks().map(render_hunk_text).collect();
        let expected = bodies_by_hand(&text);
        assert_eq!(rendered.len(), expected.len(), "{name}");
        for (k, (r, e)) in rendered.iter().zip(&expected).enumerate() {
            assert_eq!(r, e, "{name} hunk {}", k + 1);
        }
        hunks += rendered.len();
    }
    assert!(hunks >= 100, "{hunks}");
}

#[test]
fn global_indices_are_consecutive() {
    for (name, text) in corpus() {
        let bundle = parse_patch(&text, None).unwrap();
        let idx: Vec<u32> = bundle.hunks().map(|h| h.global_index).collect();
        let want: Vec<u32> = (1..=idx.len() as u32).collect();
        assert_eq!(idx, want, "{name}");
    }
}

#[test]
fn header_counts_match_body() {
    for (name, text) in corpus() {
        for hunk in parse_patch(&text, None).unwrap().hunks() {
            let ctx = hunk.lines.len() - hunk.added().count() - hunk.removed().count();
            assert_eq!(hunk.header.old_len as usize, ctx + hunk.removed().count(), "{name}");
            assert_eq!(hunk.header.new_len as usize, ctx + hunk.added().count(), "{name}");
        }
    }
}
