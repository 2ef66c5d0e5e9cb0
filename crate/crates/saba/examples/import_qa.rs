//! Converts HotpotQA, StrategyQA or plain `{input, target}` records into a
//! corpus directory that `saba validate` accepts.
//!
//! ```text
//! cargo run -p saba --example import_qa -- records.jsonl out/hotpot hotpot-dev [qa|choice_accuracy]
//! ```
//!
//! The input may be a JSON array or one JSON record per line.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use saba::core::case::Difficulty;
use saba::dataset::{
    adapt_qa, load_corpus, save_case, save_manifest, CorpusManifest, CorpusMode, MANIFEST_FILE,
    MANIFEST_SCHEMA_VERSION,
};
use serde_json::Value;

fn file_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn records(text: &str) -> Result<Vec<Value>, String> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| e.to_string());
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

fn import(input: &Path, out: &Path, name: &str, mode: CorpusMode) -> Result<usize, String> {
    let text = std::fs::read_to_string(input).map_err(|e| format!("{}: {e}", input.display()))?;
    let mut cases = Vec::new();
    for (i, record) in records(&text)?.iter().enumerate() {
        let case =
            adapt_qa(record, &format!("{name}-{i}")).map_err(|e| format!("record {i}: {e}"))?;
        let rel = format!("cases/{}.json", file_stem(&case.case_id));
        save_case(&out.join(&rel), &case).map_err(|e| e.to_string())?;
        cases.push(rel);
    }
    let manifest = CorpusManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        name: name.to_string(),
        mode,
        counts: BTreeMap::from([(Difficulty::NA, cases.len())]),
        cases,
    };
    save_manifest(&out.join(MANIFEST_FILE), &manifest).map_err(|e| e.to_string())?;
    // catches duplicate ids and anything the adapter let through
    Ok(load_corpus(out).map_err(|e| e.to_string())?.cases.len())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if !(3..=4).contains(&args.len()) {
        eprintln!(
            "usage: import_qa <records.json|jsonl> <out-dir> <corpus-name> [qa|choice_accuracy]"
        );
        return ExitCode::from(2);
    }
    let mode = match args.get(3).map(String::as_str) {
        None | Some("qa") => CorpusMode::Qa,
        Some("choice_accuracy") => CorpusMode::ChoiceAccuracy,
        Some(other) => {
            eprintln!("unknown mode {other:?}");
            return ExitCode::from(2);
        }
    };
    match import(Path::new(&args[0]), Path::new(&args[1]), &args[2], mode) {
        Ok(n) => {
            println!("wrote {n} case(s) to {}", args[1]);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
