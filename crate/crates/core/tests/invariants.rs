use std::collections::HashMap;
use std::path::Path;

use difforacle::llm::{fingerprint, Cassette};
use difforacle::metrics::{accuracy, success_rate, RunTable};
use difforacle::taxonomy::{categorize, output_equal, Output, Verdict};
use difforacle::testgen::Technique;
use proptest::prelude::*;
use serde_json::{json, Value};

fn value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        (-5i64..5).prop_map(|i| json!(i)),
        (-5i64..5).prop_map(|i| json!(i as f64 / 4.0)),
        "[a-c]{0,2}".prop_map(Value::String),
    ];
    leaf.prop_recursive(2, 8, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(Value::Array),
            prop::collection::vec(inner, 0..3).prop_map(|v| json!({"__t": "tuple", "v": v})),
        ]
    })
}

fn output() -> impl Strategy<Value = Output> {
    prop_oneof![
        4 => value().prop_map(Output::Value),
        1 => prop_oneof![Just("ValueError"), Just("KeyError")].prop_map(|k| Output::Exception(k.into())),
        1 => Just(Output::Timeout),
        1 => Just(Output::Illegal),
    ]
}

fn verdict() -> impl Strategy<Value = Option<Verdict>> {
    prop_oneof![
        Just(None),
        Just(Some(Verdict::FtIA)),
        Just(Some(Verdict::FtIa)),
        Just(Some(Verdict::Ftia)),
        Just(Some(Verdict::Pt)),
        Just(Some(Verdict::It)),
    ]
}

proptest! {
    #[test]
    fn output_equality_is_reflexive_and_symmetric(a in output(), b in output()) {
        let comparable = matches!(a, Output::Value(_) | Output::Exception(_));
        prop_assert_eq!(output_equal(&a, &a), comparable);
        prop_assert_eq!(output_equal(&a, &b), output_equal(&b, &a));
    }

    #[test]
    fn verdicts_follow_pass_fail_pattern(buggy in output(), truth in output(), expected in output()) {
        prop_assume!(matches!(expected, Output::Value(_) | Output::Exception(_)));
        match categorize(true, &buggy, &truth, &expected) {
            Err(_) => prop_assert_eq!(truth, Output::Timeout),
            Ok(c) => {
                let asserts_truth = output_equal(&expected, &truth);
                match c.verdict {
                    Verdict::FtIA => prop_assert!(asserts_truth && !output_equal(&buggy, &truth)),
                    Verdict::Ftia => prop_assert!(!asserts_truth && output_equal(&buggy, &truth)),
                    Verdict::FtIa => prop_assert!(!asserts_truth && !output_equal(&expected, &buggy)),
                    Verdict::Pt => prop_assert!(asserts_truth || c.masking),
                    Verdict::It => prop_assert_eq!(truth, Output::Illegal),
                }
            }
        }
    }

    #[test]
    fn rates_are_bounded(rows in prop::collection::vec(prop::collection::vec(verdict(), 4), 1..6)) {
        let mut t = RunTable::new(4);
        for (i, r) in rows.into_iter().enumerate() {
            t.insert(format!("s{i}"), Technique::DiffPrompt, r);
        }
        let subjects = t.subjects();
        let s = success_rate(&t, Technique::DiffPrompt, &subjects).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        if let Ok(a) = accuracy(&t, Technique::DiffPrompt, &subjects) {
            prop_assert!((0.0..=1.0).contains(&a) && a >= s);
        }
    }
}

fn cassettes(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            cassettes(&p, out);
        } else if p.extension().is_some_and(|x| x == "jsonl") {
            out.push(p);
        }
    }
}

#[test]
fn committed_fingerprints_identify_requests() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cassettes");
    let mut files = Vec::new();
    cassettes(&root, &mut files);
    assert!(files.len() > 10);
    let mut seen: HashMap<String, String> = HashMap::new();
    for f in files {
        for e in Cassette::load(&f).unwrap().entries() {
            assert_eq!(e.fp, fingerprint(&e.request), "{}", f.display());
            let canonical = serde_json::to_string(&e.request).unwrap();
            let prior = seen.entry(e.fp.clone()).or_insert_with(|| canonical.clone());
            assert_eq!(*prior, canonical, "two requests share fingerprint {}", e.fp);
        }
    }
}
