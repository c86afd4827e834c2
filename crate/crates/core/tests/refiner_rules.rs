use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use hunkmark::llm::{RetryPolicy, ScriptedBackend};
use hunkmark::taxonomy::{validate, LabelType, LabelingInstance, LabelingSet};
use hunkmark::{parse_patch, run_refiner, LlmClient, PatchBundle, PromptTemplates};

const PATCH: &str = "\
--- a/src/Shop.java
+++ b/src/Shop.java
@@ -3,3 +3,3 @@ class Shop {
     int a;
-    int count;
+    long total;
     int b;
@@ -20,3 +20,3 @@ class Shop {
     void f() {
-        count++;
+        total++;
     }
--- a/src/Main.java
+++ b/src/Main.java
@@ -7,3 +7,3 @@ class Main {
     void run(Shop shop) {
-        shop.count = 0;
+        shop.total = 0;
     }
";

fn bundle() -> PatchBundle {
    parse_patch(PATCH, None).unwrap()
}

fn start_set() -> LabelingSet {
    LabelingSet::from_instances(
        3,
        vec![
            LabelingInstance::new(1000, 1, LabelType::Rename),
            LabelingInstance::new(1001, 1, LabelType::Retype),
            LabelingInstance::new(2000, 2, LabelType::Rename),
            LabelingInstance::new(2001, 2, LabelType::CodeMove),
            LabelingInstance::new(3000, 3, LabelType::LogicChange),
            LabelingInstance::new(3001, 3, LabelType::Rename),
        ],
    )
}

fn refine(set: &LabelingSet, reply: &serde_json::Value) -> (LabelingSet, hunkmark::refiner::RefinementReport) {
    let text = format!("<json>{reply}</json>");
    let client = LlmClient::new(Arc::new(ScriptedBackend::fixed(text)), RetryPolicy::no_delay(0));
    run_refiner(&bundle(), set, &client, &PromptTemplates::builtin()).unwrap()
}

fn entry(t: &str, attrs: &[String], parent: u32) -> serde_json::Value {
    json!({"reasoning": "r", "updated_type": t, "attributes": attrs, "parent_id": parent.to_string()})
}

#[test]
fn two_renames_in_one_label_become_two_instances() {
    let attrs: Vec<String> = ["VAR", "my_var", "your_var", "CLASS", "MyClass", "YourClass"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let reply = json!({"response_dict": {"1000": entry("RENAME", &attrs, 0)}});
    let (out, report) = refine(&start_set(), &reply);
    let renames: Vec<&LabelingInstance> = out
        .on_hunk(1)
        .filter(|i| i.label_type == LabelType::Rename)
        .collect();
    assert_eq!(renames.len(), 2);
    assert_eq!(renames[0].id, 1000);
    assert_eq!(renames[0].attributes, attrs[..3]);
    assert_eq!(renames[1].attributes, attrs[3..]);
    assert_eq!(report.splits.len(), 1);
    assert!(validate(&out).is_empty());
}

fn kind() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("VAR"),
        Just("ATTRIBUTE"),
        Just("METHOD"),
        Just("CLASS"),
        Just("PARAMETER"),
        Just("PACKAGE")
    ]
    .prop_map(str::to_string)
}

fn triple(rename: bool) -> impl Strategy<Value = Vec<String>> {
    let first = if rename { kind().boxed() } else { "[a-z][a-zA-Z0-9_.]{0,10}".boxed() };
    (first, "[a-zA-Z_][a-zA-Z0-9_]{0,10}", "[a-zA-Z_][a-zA-Z0-9_<>]{0,10}").prop_map(|(a, b, c)| vec![a, b, c])
}

proptest! {
    #[test]
    fn split_conserves_attributes(
        rename in proptest::bool::ANY,
        rename_triples in proptest::collection::vec(triple(true), 1..=3),
        retype_triples in proptest::collection::vec(triple(false), 1..=3),
    ) {
        let (id, t, list): (u32, LabelType, Vec<String>) = if rename {
            (1000, LabelType::Rename, rename_triples.concat())
        } else {
            (1001, LabelType::Retype, retype_triples.concat())
        };
        let k = list.len() / 3;
        let reply = json!({"response_dict": {id.to_string(): entry(t.name(), &list, 0)}});
        let (out, report) = refine(&start_set(), &reply);

        let mut produced: Vec<&LabelingInstance> =
            out.on_hunk(1).filter(|i| i.label_type == t).collect();
        produced.sort_by_key(|i| i.id);
        prop_assert_eq!(produced.len(), k);
        prop_assert_eq!(produced[0].id, id);
        let concat: Vec<String> = produced.iter().flat_map(|i| i.attributes.clone()).collect();
        prop_assert_eq!(concat, list);
        prop_assert_eq!(report.splits.len(), usize::from(k > 1));
        prop_assert!(validate(&out).is_empty());
        // Nothing else on the patch changed.
        prop_assert_eq!(out.instances.len(), start_set().instances.len() + k - 1);
    }

    #[test]
    fn bad_parents_are_repaired_and_reported(
        parents in proptest::collection::vec(
            prop_oneof![Just(0u32), Just(1000), Just(1001), Just(2000), Just(2001), Just(3000), Just(3001),
                        Just(4242), Just(1002), 1u32..10_000],
            6),
        updates in proptest::collection::vec(
            prop_oneof![Just(None), Just(Some(LabelType::Rename)), Just(Some(LabelType::CodeMove)),
                        Just(Some(LabelType::Retype)), Just(Some(LabelType::LogicChange))],
            6),
    ) {
        let set = start_set();
        let mut dict = serde_json::Map::new();
        let mut asked: HashMap<u32, u32> = HashMap::new();
        for ((inst, parent), update) in set.instances.iter().zip(&parents).zip(&updates) {
            let t = update.unwrap_or(inst.label_type);
            let attrs: Vec<String> = match t {
                LabelType::Rename => vec!["VAR".into(), "a".into(), "b".into()],
                LabelType::Retype => vec!["a".into(), "int".into(), "long".into()],
                _ => vec![],
            };
            dict.insert(inst.id.to_string(), entry(t.name(), &attrs, *parent));
            asked.insert(inst.id, *parent);
        }
        let (out, report) = refine(&set, &json!({"response_dict": dict}));
        prop_assert!(validate(&out).is_empty(), "{:?}", validate(&out));

        let types: BTreeMap<u32, LabelType> = out.instances.iter().map(|i| (i.id, i.label_type)).collect();
        let repaired: HashMap<u32, u32> = report.repaired_parents.iter().map(|r| (r.id, r.parent_id)).collect();
        for inst in &out.instances {
            let wanted = asked[&inst.id];
            if !inst.label_type.needs_parent() || wanted == 0 {
                prop_assert_eq!(inst.parent_id, 0);
                prop_assert!(!repaired.contains_key(&inst.id));
                continue;
            }
            let ok = wanted != inst.id && types.get(&wanted) == Some(&inst.label_type);
            if ok {
                prop_assert_eq!(inst.parent_id, wanted);
                prop_assert!(!repaired.contains_key(&inst.id));
            } else {
                prop_assert_eq!(inst.parent_id, 0);
                prop_assert_eq!(repaired.get(&inst.id), Some(&wanted));
                let needle = format!("label {}: parent {wanted}", inst.id);
                prop_assert!(report.warnings.iter().any(|w| w.contains(&needle)), "{:?}", report.warnings);
            }
        }
    }
}
