use alloc::format;
use alloc::string::String;

use serde::de::DeserializeOwned;

/// Parses a JSON object out of a model reply, tolerating code fences and
/// surrounding prose.
pub(crate) fn from_reply<T: DeserializeOwned>(raw: &str) -> Result<T, String> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Ok(v);
    }
    let start = trimmed.find('{');
    let end = trimmed.rfind('}');
    match (start, end) {
        (Some(s), Some(e)) if s < e => {
            serde_json::from_str(&trimmed[s..=e]).map_err(|err| format!("invalid JSON: {err}"))
        }
        _ => Err(String::from("reply contains no JSON object")),
    }
}
