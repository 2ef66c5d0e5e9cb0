//! Case and corpus files: byte-stable round trips and total validation.

use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use saba::core::case::{Difficulty, Gold, Suspect};
use saba::core::state::{ItemId, NarrativeUnit, Task, TaskDimension};
use saba::core::CaseSpec;
use saba::dataset::{
    case_to_string, load_case, load_corpus, load_manifest, manifest_to_string, save_case,
    DatasetError,
};
use serde_json::{json, Value};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

#[test]
fn fixture_files_round_trip_byte_identical() {
    let qa = corpus().parent().unwrap().join("qa");
    let dirs = [corpus().join("cases"), qa.join("cases")];
    for entry in dirs.iter().flat_map(|d| fs::read_dir(d).unwrap()) {
        let path = entry.unwrap().path();
        let original = fs::read_to_string(&path).unwrap();
        let case = load_case(&path).unwrap();
        assert_eq!(case_to_string(&case), original, "{}", path.display());
    }
    for manifest_file in [corpus().join("corpus.json"), qa.join("corpus.json")] {
        let manifest = load_manifest(&manifest_file).unwrap();
        assert_eq!(
            manifest_to_string(&manifest),
            fs::read_to_string(&manifest_file).unwrap()
        );
    }
}

fn text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.'\"é-]{1,40}".prop_filter("not blank", |s| !s.trim().is_empty())
}

fn any_case() -> impl Strategy<Value = CaseSpec> {
    (
        "[a-z][a-z0-9-]{0,12}",
        prop::sample::select(Difficulty::ALL.to_vec()),
        prop::collection::vec(text(), 1..6),
        text(),
        text(),
        prop::collection::vec(text(), 0..3),
        prop::collection::vec(text(), 1..3),
    )
        .prop_map(
            |(case_id, difficulty, units, instruction, name, aliases, props)| CaseSpec {
                case_id,
                difficulty,
                narrative: units
                    .into_iter()
                    .enumerate()
                    .map(|(i, text)| NarrativeUnit {
                        id: ItemId::new(format!("u{i}")),
                        text,
                        ordinal: i,
                    })
                    .collect(),
                task: Task {
                    dimensions: vec![
                        TaskDimension::Suspect,
                        TaskDimension::Motive,
                        TaskDimension::ModusOperandi,
                    ],
                    instruction,
                },
                gold: Gold::Detective {
                    suspect: Suspect { name, aliases },
                    motive: props.clone(),
                    modus: props.clone(),
                    critical_clues: props,
                },
            },
        )
}

proptest! {
    #[test]
    fn saved_cases_reload_identically(case in any_case()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("case.json");
        save_case(&path, &case).unwrap();
        let back = load_case(&path).unwrap();
        prop_assert_eq!(&back, &case);
        prop_assert_eq!(case_to_string(&back), fs::read_to_string(&path).unwrap());
    }

    /// Any single-field corruption is either accepted as a valid case or
    /// rejected with a typed error; loading never panics.
    #[test]
    fn validation_is_total(
        pointer in prop::sample::select(vec![
            "/case_id", "/difficulty", "/narrative", "/narrative/0", "/narrative/0/id", "/narrative/0/ordinal",
            "/narrative/1/text", "/task", "/task/dimensions", "/task/dimensions/0", "/gold", "/gold/mode",
            "/gold/suspect", "/gold/suspect/name", "/gold/motive", "/schema_version",
        ]),
        replacement in prop_oneof![
            Just(Value::Null),
            Just(json!("")),
            Just(json!(-1)),
            Just(json!(3)),
            Just(json!([])),
            Just(json!({})),
            Just(json!("u0")),
            Just(json!(["Answer"])),
            Just(json!("qa")),
        ],
    ) {
        let original: Value = serde_json::from_str(&fs::read_to_string(corpus().join("cases/manor.json")).unwrap()).unwrap();
        let mut v = original.clone();
        if let Some(slot) = v.pointer_mut(pointer) {
            *slot = replacement;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("case.json");
        fs::write(&path, v.to_string()).unwrap();
        match load_case(&path) {
            Ok(case) => prop_assert!(case.validate().is_ok()),
            Err(DatasetError::Invalid { field, .. }) => prop_assert!(!field.is_empty()),
            Err(other) => prop_assert!(false, "unexpected error kind: {other}"),
        }
    }
}

#[test]
fn corpus_rejects_duplicates_and_bad_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::create_dir_all(root.join("cases")).unwrap();
    let manor = fs::read_to_string(corpus().join("cases/manor.json")).unwrap();
    fs::write(root.join("cases/a.json"), &manor).unwrap();
    fs::write(root.join("cases/b.json"), &manor).unwrap();
    let manifest = |cases: Value, counts: Value| {
        json!({"schema_version": 1, "name": "t", "mode": "dp", "cases": cases, "counts": counts})
            .to_string()
    };
    fs::write(
        root.join("corpus.json"),
        manifest(
            json!(["cases/a.json", "cases/b.json"]),
            json!({"Medium": 2}),
        ),
    )
    .unwrap();
    assert!(matches!(
        load_corpus(root),
        Err(DatasetError::Duplicate { .. })
    ));

    fs::write(
        root.join("corpus.json"),
        manifest(json!(["cases/a.json"]), json!({"Medium": 2})),
    )
    .unwrap();
    let err = load_corpus(root).unwrap_err();
    assert!(err.to_string().contains("counts.Medium"), "{err}");

    fs::write(
        root.join("corpus.json"),
        manifest(json!(["cases/missing.json"]), json!({})),
    )
    .unwrap();
    let err = load_corpus(root).unwrap_err();
    assert!(err.to_string().contains("cases[0]"), "{err}");

    fs::write(
        root.join("corpus.json"),
        manifest(json!(["cases/a.json"]), json!({"Medium": 1})),
    )
    .unwrap();
    assert_eq!(load_corpus(root).unwrap().cases.len(), 1);
}

#[test]
fn full_size_detective_corpus_tallies_by_difficulty() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::create_dir_all(root.join("cases")).unwrap();
    let template = load_case(&corpus().join("cases/manor.json")).unwrap();
    let plan = [
        (Difficulty::Easy, 5),
        (Difficulty::Medium, 15),
        (Difficulty::Complex, 11),
    ];
    let mut files = Vec::new();
    for (difficulty, n) in plan {
        for i in 0..n {
            let mut case = template.clone();
            case.case_id = format!("{difficulty:?}-{i}").to_lowercase();
            case.difficulty = difficulty;
            let rel = format!("cases/{}.json", case.case_id);
            save_case(&root.join(&rel), &case).unwrap();
            files.push(rel);
        }
    }
    let manifest = json!({
        "schema_version": 1, "name": "dp", "mode": "dp", "cases": files,
        "counts": {"Easy": 5, "Medium": 15, "Complex": 11},
    });
    fs::write(root.join("corpus.json"), manifest.to_string()).unwrap();
    let loaded = load_corpus(root).unwrap();
    assert_eq!(loaded.cases.len(), 31);
    let tally: Vec<_> = loaded.tally().into_iter().collect();
    assert_eq!(
        tally,
        [
            (Difficulty::Easy, 5),
            (Difficulty::Medium, 15),
            (Difficulty::Complex, 11)
        ]
    );
    // order-stable
    let ids: Vec<_> = loaded.cases.iter().map(|c| c.case_id.clone()).collect();
    assert_eq!(ids[0], "easy-0");
    assert_eq!(ids[30], "complex-10");
}
