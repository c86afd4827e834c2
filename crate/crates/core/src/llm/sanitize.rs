use serde_json::Value;

const OPEN_TAG: &str = "<json>";
const CLOSE_TAG: &str = "</json>";

fn sanitize_step(raw: &str) -> String {
    if let Some(start) = raw.find(OPEN_TAG) {
        let rest = &raw[start + OPEN_TAG.len()..];
        let inner = match rest.rfind(CLOSE_TAG) {
            Some(end) => &rest[..end],
            None => rest,
        };
        return inner.trim().to_string();
    }
    let trimmed = raw.trim();
    if let Some(after) = trimmed.strip_prefix("```") {
        // Drop the info string (`json`, `JSON`, ...) on the opening fence line.
        let body = match after.find('\n') {
            Some(nl) => &after[nl + 1..],
            None => after.trim_start_matches(|c: char| c.is_ascii_alphabetic()),
        };
        let body = body.trim_end();
        let body = body.strip_suffix("```").unwrap_or(body);
        return body.trim().to_string();
    }
    trimmed.to_string()
}

/// Extract the JSON payload of a model reply: the text between `<json>` and
/// `</json>` if present, else the inside of a Markdown code fence, else the
/// trimmed input. Applied until nothing changes, so it is idempotent.
pub fn sanitize(raw: &str) -> Option<String> {
    let mut current = raw.to_string();
    loop {
        let next = sanitize_step(&current);
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        None
    } else {
        Some(current)
    }
}

/// Fix the slips models commonly make when imitating the schema examples:
/// trailing commas, bare integer keys, a doubled opening quote on a key, and
/// raw newlines or tabs inside strings. A reply cut off mid-way (output token
/// limit) is closed: the open string, a dangling key and open brackets.
pub fn repair_json(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 16);
    let mut in_string = false;
    let mut escaped = false;
    let mut closers: Vec<char> = Vec::new();
    let mut i = 0;

    let next_significant = |from: usize| -> Option<(usize, char)> {
        chars[from..]
            .iter()
            .enumerate()
            .find(|(_, c)| !c.is_whitespace())
            .map(|(k, c)| (from + k, *c))
    };
    let prev_significant = |out: &str| out.chars().rev().find(|c| !c.is_whitespace());

    while i < chars.len() {
        let c = chars[i];
        if in_string {
            if escaped {
                escaped = false;
                out.push(c);
            } else {
                match c {
                    '\\' => {
                        escaped = true;
                        out.push(c);
                    }
                    '"' => {
                        in_string = false;
                        out.push(c);
                    }
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    '\t' => out.push_str("\\t"),
                    _ => out.push(c),
                }
            }
            i += 1;
            continue;
        }

        match c {
            '"' => {
                // `""reasoning":` -> `"reasoning":`
                if chars.get(i + 1) == Some(&'"')
                    && chars.get(i + 2).is_some_and(|n| n.is_alphabetic() || *n == '_')
                    && matches!(prev_significant(&out), Some('{') | Some(','))
                {
                    i += 1;
                }
                in_string = true;
                out.push('"');
            }
            ',' => {
                if !matches!(next_significant(i + 1), Some((_, '}')) | Some((_, ']')) | None) {
                    out.push(',');
                }
            }
            '{' | '[' => {
                closers.push(if c == '{' { '}' } else { ']' });
                out.push(c);
            }
            '}' | ']' => {
                if closers.last() == Some(&c) {
                    closers.pop();
                }
                out.push(c);
            }
            d if d.is_ascii_digit() && matches!(prev_significant(&out), Some('{') | Some(',')) => {
                // A bare number in key position.
                let mut end = i;
                while end < chars.len() && chars[end].is_ascii_digit() {
                    end += 1;
                }
                if matches!(next_significant(end), Some((_, ':'))) {
                    out.push('"');
                    out.extend(&chars[i..end]);
                    out.push('"');
                } else {
                    out.extend(&chars[i..end]);
                }
                i = end;
                continue;
            }
            _ => out.push(c),
        }
        i += 1;
    }
    if !closers.is_empty() || in_string {
        close_truncated(&mut out, in_string, escaped, &closers);
    }
    out
}

fn close_truncated(out: &mut String, in_string: bool, escaped: bool, closers: &[char]) {
    if in_string {
        if escaped {
            out.pop();
        }
        out.push('"');
    }
    let trimmed = out.trim_end().len();
    out.truncate(trimmed);
    if out.ends_with(',') {
        out.pop();
    }
    if out.ends_with(':') {
        out.push_str(" null");
    } else if closers.last() == Some(&'}') && out.ends_with('"') && string_is_key(out) {
        out.push_str(": null");
    }
    out.extend(closers.iter().rev());
}

/// Whether the string literal ending `out` sits in key position.
fn string_is_key(out: &str) -> bool {
    let body = &out[..out.len() - 1];
    let bytes = body.as_bytes();
    let mut k = bytes.len();
    // Walk back to the opening quote, skipping escaped quotes.
    while k > 0 {
        k -= 1;
        if bytes[k] == b'"' {
            let slashes = bytes[..k].iter().rev().take_while(|b| **b == b'\\').count();
            if slashes % 2 == 0 {
                break;
            }
        }
    }
    matches!(body[..k].trim_end().chars().last(), Some('{') | Some(','))
}

/// Parse JSON, retrying with [`repair_json`] and then with the outermost
/// `{...}` span if the plain parse fails.
pub fn parse_json_lenient(text: &str) -> Result<Value, serde_json::Error> {
    let first = match serde_json::from_str::<Value>(text) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    if let Ok(v) = serde_json::from_str::<Value>(&repair_json(text)) {
        return Ok(v);
    }
    if let (Some(start), Some(end)) = (text.find('{'), text.rfind('}')) {
        if start < end {
            let span = &text[start..=end];
            if let Ok(v) = serde_json::from_str::<Value>(span) {
                return Ok(v);
            }
            if let Ok(v) = serde_json::from_str::<Value>(&repair_json(span)) {
                return Ok(v);
            }
        }
    }
    Err(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn json_tags() {
        assert_eq!(sanitize("<json>{\"a\":1}</json>").unwrap(), "{\"a\":1}");
        assert_eq!(sanitize("Sure!\n<json>\n{}\n</json>\nbye").unwrap(), "{}");
        assert_eq!(sanitize("<json>{\"a\":1}").unwrap(), "{\"a\":1}");
    }

    #[test]
    fn truncated_replies_are_closed() {
        let v = parse_json_lenient(r#"{"response_dict": {"1": {"reasoning": "cut her"#).unwrap();
        assert_eq!(v["response_dict"]["1"]["reasoning"], "cut her");
        let v = parse_json_lenient(r#"{"a": [1, 2,"#).unwrap();
        assert_eq!(v["a"], serde_json::json!([1, 2]));
        let v = parse_json_lenient(r#"{"a": 1, "b":"#).unwrap();
        assert!(v["b"].is_null());
        let v = parse_json_lenient(r#"{"a": 1, "b"#).unwrap();
        assert!(v["b"].is_null());
        let v = parse_json_lenient(r#"{"a": "x\"#).unwrap();
        assert_eq!(v["a"], "x");
    }

    #[test]
    fn code_fences() {
        assert_eq!(sanitize("```json\n{}\n```").unwrap(), "{}");
        assert_eq!(sanitize("```\n{\"x\": 2}\n```\n").unwrap(), "{\"x\": 2}");
        assert_eq!(sanitize("```json {}```").unwrap(), "{}");
    }

    #[test]
    fn plain_text_is_trimmed() {
        assert_eq!(sanitize("   {} ").unwrap(), "{}");
        assert_eq!(sanitize("   "), None);
        assert_eq!(sanitize("<json></json>"), None);
    }

    #[test]
    fn tags_inside_fences() {
        assert_eq!(sanitize("```json\n<json>{}</json>\n```").unwrap(), "{}");
    }

    #[test]
    fn repairs_reference_example_slips() {
        let text = "{\n \"response_dict\": {\n  \"1002\": {\n  \"\"reasoning\": \"fits this \n change\",\n  \"parent_id\": \"0\"\n  },\n  9002: {\"attributes\": [\"x\", \"int\", \"long\",],},\n }\n}";
        assert!(serde_json::from_str::<Value>(text).is_err());
        let v = parse_json_lenient(text).unwrap();
        assert_eq!(v["response_dict"]["9002"]["attributes"][2], "long");
        assert_eq!(v["response_dict"]["1002"]["reasoning"], "fits this \n change");
    }

    #[test]
    fn repair_leaves_string_contents_alone() {
        let text = r#"{"a": "x, }", "b": "{1: 2}"}"#;
        assert_eq!(repair_json(text), text);
    }

    #[test]
    fn outer_braces_are_found() {
        let v = parse_json_lenient("Here you go: {\"label_names\": []} hope it helps").unwrap();
        assert!(v["label_names"].as_array().unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn sanitize_is_idempotent(s in ".{0,80}", wrap in 0..4u8) {
            let raw = match wrap {
                0 => s.clone(),
                1 => format!("<json>{s}</json>"),
                2 => format!("```json\n{s}\n```"),
                _ => format!("  ```<json>{s}```  "),
            };
            if let Some(once) = sanitize(&raw) {
                prop_assert_eq!(sanitize(&once), Some(once.clone()));
            }
        }

        #[test]
        fn repair_never_panics(s in "[{}\\[\\]\":,0-9a-z \n]{0,60}") {
            let _ = parse_json_lenient(&s);
        }
    }
}
