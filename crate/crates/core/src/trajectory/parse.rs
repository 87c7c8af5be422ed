use serde_json::{Map, Value};

use super::{Analysis, EvidenceItem, RelevanceJudgment, SelfReasoningTrajectory, TrajectoryError};

/// Return the first top-level balanced `{...}` block in `raw` that is a valid
/// JSON object. String literals inside the block are honored when matching
/// braces, so `"}"` inside a reason does not terminate the object.
pub fn extract_object(raw: &str) -> Result<&str, TrajectoryError> {
    let bytes = raw.as_bytes();
    let mut search_from = 0;
    let mut saw_balanced = false;
    while let Some(rel) = raw[search_from..].find('{') {
        let start = search_from + rel;
        match matching_close(bytes, start) {
            Some(end) => {
                saw_balanced = true;
                let block = &raw[start..=end];
                if matches!(serde_json::from_str::<Value>(block), Ok(Value::Object(_))) {
                    return Ok(block);
                }
                search_from = end + 1;
            }
            None => {
                return Err(TrajectoryError::MalformedTrajectory(format!(
                    "unbalanced object starting at byte {start}"
                )))
            }
        }
    }
    Err(TrajectoryError::MalformedTrajectory(if saw_balanced {
        "no balanced block parses as a JSON object".into()
    } else {
        "no object found in generation".into()
    }))
}

fn matching_close(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

const MANDATORY: [&str; 5] = ["relevant", "relevant_reason", "evidence", "analysis", "answer"];

/// Parse a generation into a trajectory. Surrounding prose is ignored.
pub fn parse_trajectory(raw: &str) -> Result<SelfReasoningTrajectory, TrajectoryError> {
    let block = extract_object(raw)?;
    let value: Value = serde_json::from_str(block)
        .map_err(|e| TrajectoryError::MalformedTrajectory(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| TrajectoryError::MalformedTrajectory("block is not an object".into()))?;

    for field in MANDATORY {
        if !obj.contains_key(field) {
            return Err(TrajectoryError::MissingField(field.into()));
        }
    }

    let relevant = obj["relevant"]
        .as_bool()
        .ok_or_else(|| type_error("relevant", "a boolean"))?;
    let relevant_reason = string_field(obj, "relevant_reason", "relevant_reason")?;
    let evidence = obj["evidence"]
        .as_array()
        .ok_or_else(|| type_error("evidence", "a list"))?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_evidence(i, v))
        .collect::<Result<Vec<_>, _>>()?;
    let analysis = string_field(obj, "analysis", "analysis")?;
    let answer = string_field(obj, "answer", "answer")?;

    SelfReasoningTrajectory::new(
        RelevanceJudgment { relevant, relevant_reason },
        evidence,
        Analysis { analysis, answer },
    )
}

fn parse_evidence(i: usize, v: &Value) -> Result<EvidenceItem, TrajectoryError> {
    let path = |f: &str| format!("evidence[{i}].{f}");
    let obj = v
        .as_object()
        .ok_or_else(|| type_error(&format!("evidence[{i}]"), "an object"))?;
    for f in ["cite_content", "reason_for_cite", "doc_index"] {
        if !obj.contains_key(f) {
            return Err(TrajectoryError::MissingField(path(f)));
        }
    }
    let doc_index = obj["doc_index"]
        .as_u64()
        .filter(|&n| n >= 1)
        .ok_or_else(|| type_error(&path("doc_index"), "a positive integer"))?;
    Ok(EvidenceItem {
        cite_content: string_field(obj, "cite_content", &path("cite_content"))?,
        reason_for_cite: string_field(obj, "reason_for_cite", &path("reason_for_cite"))?,
        doc_index: usize::try_from(doc_index)
            .map_err(|_| type_error(&path("doc_index"), "an in-range index"))?,
    })
}

fn string_field(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, TrajectoryError> {
    obj[key]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| type_error(path, "a string"))
}

fn type_error(path: &str, expected: &str) -> TrajectoryError {
    TrajectoryError::SchemaViolation(format!("`{path}` must be {expected}"))
}
