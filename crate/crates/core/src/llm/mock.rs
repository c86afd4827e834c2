//! Offline backends: scripted replies, an answer key, fault injection and
//! request recording.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Backend, BackendError, Completion, TokenUsage};
use crate::prompting::{CoveredLabel, PromptKind, PromptRequest};
use crate::taxonomy::{LabelType, LabelingInstance, LabelingSet};

/// On-disk form of a [`ScriptedBackend`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptFile {
    /// Replies keyed by request key (`labeler-hunk-3`, `labeler-file-src/a.rs`, `refiner`, ...).
    pub replies: BTreeMap<String, String>,
    /// Replies handed out in order to requests whose key has no entry.
    pub sequence: Vec<String>,
    /// Reply for anything else.
    pub fallback: Option<String>,
    pub usage: Option<TokenUsage>,
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("invalid script {}: {e}", path.display())))
    }
}

/// Replies from a fixed script.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: HashMap<String, String>,
    sequence: Mutex<VecDeque<String>>,
    fallback: Option<String>,
    usage: Option<TokenUsage>,
}

impl ScriptedBackend {
    /// Same reply to every request.
    pub fn fixed(reply: impl Into<String>) -> Self {
        ScriptedBackend {
            fallback: Some(reply.into()),
            ..Default::default()
        }
    }

    pub fn keyed<I, K, V>(replies: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        ScriptedBackend {
            replies: replies.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            ..Default::default()
        }
    }

    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            sequence: Mutex::new(replies.into_iter().map(Into::into).collect()),
            ..Default::default()
        }
    }

    pub fn from_script(script: ScriptFile) -> Self {
        ScriptedBackend {
            replies: script.replies.into_iter().collect(),
            sequence: Mutex::new(script.sequence.into()),
            fallback: script.fallback,
            usage: script.usage,
        }
    }

    pub fn with_reply(mut self, key: impl Into<String>, reply: impl Into<String>) -> Self {
        self.replies.insert(key.into(), reply.into());
        self
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    pub fn with_usage(mut self, usage: TokenUsage) -> Self {
        self.usage = Some(usage);
        self
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, prompt: &PromptRequest) -> Result<Completion, BackendError> {
        let text = if let Some(r) = self.replies.get(&prompt.key) {
            r.clone()
        } else if let Some(r) = self.sequence.lock().unwrap().pop_front() {
            r
        } else if let Some(r) = &self.fallback {
            r.clone()
        } else {
            return Err(BackendError::Config(format!("no scripted reply for {}", prompt.key)));
        };
        Ok(Completion { text, usage: self.usage })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Answers every request from a ground-truth labeling, in the reply format
/// the prompts ask for. Useful for exercising the full pipeline offline.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    truth: LabelingSet,
}

impl OracleBackend {
    pub fn new(truth: LabelingSet) -> Self {
        OracleBackend { truth }
    }

    fn types_on(&self, hunk: u32) -> BTreeSet<LabelType> {
        self.truth.on_hunk(hunk).map(|i| i.label_type).collect()
    }

    fn labeler_reply(&self, prompt: &PromptRequest) -> String {
        let entry = |hunk: u32| {
            let names: Vec<&str> = self.types_on(hunk).into_iter().map(LabelType::prompt_name).collect();
            json!({"reasoning": "answer key", "label_names": names})
        };
        let value = if prompt.kind == PromptKind::LabelerHunk && prompt.covered_hunks.len() == 1 {
            entry(prompt.covered_hunks[0])
        } else {
            let dict: Map<String, Value> = prompt
                .covered_hunks
                .iter()
                .map(|&h| (h.to_string(), entry(h)))
                .collect();
            json!({ "response_dict": dict })
        };
        format!("<json>{value}</json>")
    }

    /// Truth type a covered label stands for on its hunk.
    fn target_type(&self, label: &CoveredLabel, siblings: &[CoveredLabel]) -> Option<LabelType> {
        let on_hunk = self.types_on(label.hunk_index);
        if let Some(t) = label.label {
            if on_hunk.contains(&t) {
                return Some(t);
            }
            if t != LabelType::LogicChange {
                return Some(t);
            }
        }
        // LOGIC_CHANGE or NONE that the truth does not back: take the first
        // eligible truth type not already claimed by a sibling label.
        let claimed: BTreeSet<LabelType> = siblings
            .iter()
            .filter(|s| s.id != label.id && s.hunk_index == label.hunk_index)
            .filter_map(|s| s.label)
            .collect();
        on_hunk
            .into_iter()
            .find(|t| t.refiner_eligible() && !claimed.contains(t))
            .or(label.label)
    }

    fn refiner_reply(&self, prompt: &PromptRequest) -> String {
        let labels = &prompt.covered_labels;
        let targets: Vec<(CoveredLabel, Option<LabelType>)> =
            labels.iter().map(|l| (*l, self.target_type(l, labels))).collect();
        // Requested id standing for (hunk, type), for translating truth parents.
        let proxy: HashMap<(u32, LabelType), u32> = targets
            .iter()
            .filter_map(|(l, t)| t.map(|t| ((l.hunk_index, t), l.id)))
            .collect();
        let truth_by_id = self.truth.by_id();

        let mut dict = Map::new();
        for (label, target) in &targets {
            let (updated, attributes, parent) = match target {
                None => ("NONE".to_string(), Vec::new(), 0),
                Some(t) => {
                    let matching: Vec<&LabelingInstance> =
                        self.truth.on_hunk(label.hunk_index).filter(|i| i.label_type == *t).collect();
                    let attributes: Vec<String> = matching.iter().flat_map(|i| i.attributes.clone()).collect();
                    let parent = matching
                        .iter()
                        .find(|i| i.parent_id != 0)
                        .and_then(|i| truth_by_id.get(&i.parent_id))
                        .and_then(|p| proxy.get(&(p.hunk_index, p.label_type)).copied())
                        .unwrap_or(0);
                    (t.name().to_string(), attributes, parent)
                }
            };
            dict.insert(
                label.id.to_string(),
                json!({
                    "reasoning": "answer key",
                    "updated_type": updated,
                    "attributes": attributes,
                    "parent_id": parent.to_string(),
                }),
            );
        }
        format!("<json>{}</json>", json!({ "response_dict": dict }))
    }
}

impl Backend for OracleBackend {
    fn complete(&self, prompt: &PromptRequest) -> Result<Completion, BackendError> {
        let text = if prompt.kind.is_labeler() {
            self.labeler_reply(prompt)
        } else {
            self.refiner_reply(prompt)
        };
        Ok(Completion::text(text))
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    Transport,
    Timeout,
    Status(u16),
    /// Succeed, but with this text instead of the inner backend's reply.
    Reply(String),
}

impl Fault {
    fn apply(&self) -> Result<Completion, BackendError> {
        match self {
            Fault::Transport => Err(BackendError::Transport("injected connection reset".into())),
            Fault::Timeout => Err(BackendError::Timeout("injected timeout".into())),
            Fault::Status(code) => Err(BackendError::from_status(*code, "injected")),
            Fault::Reply(text) => Ok(Completion::text(text.clone())),
        }
    }
}

/// Wraps a backend and injects faults: first the queued ones, one per call,
/// then on every call whose key has a standing fault.
#[derive(Debug)]
pub struct FailingBackend<B> {
    inner: B,
    queue: Mutex<VecDeque<Fault>>,
    by_key: HashMap<String, Fault>,
    calls: AtomicUsize,
}

impl<B: Backend> FailingBackend<B> {
    pub fn new(inner: B, faults: Vec<Fault>) -> Self {
        FailingBackend {
            inner,
            queue: Mutex::new(faults.into()),
            by_key: HashMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Fail every request with `key` the same way.
    pub fn with_key_fault(mut self, key: impl Into<String>, fault: Fault) -> Self {
        self.by_key.insert(key.into(), fault);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for FailingBackend<B> {
    fn complete(&self, prompt: &PromptRequest) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(fault) = self.by_key.get(&prompt.key) {
            return fault.apply();
        }
        let queued = self.queue.lock().unwrap().pop_front();
        match queued {
            Some(fault) => fault.apply(),
            None => self.inner.complete(prompt),
        }
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// Wraps a backend and keeps every request it sees.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    seen: Mutex<Vec<PromptRequest>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<PromptRequest> {
        self.seen.lock().unwrap().clone()
    }

    /// Keys of the recorded requests, sorted (arrival order depends on scheduling).
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.seen.lock().unwrap().iter().map(|r| r.key.clone()).collect();
        keys.sort();
        keys
    }

    pub fn count(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, prompt: &PromptRequest) -> Result<Completion, BackendError> {
        self.seen.lock().unwrap().push(prompt.clone());
        self.inner.complete(prompt)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}
