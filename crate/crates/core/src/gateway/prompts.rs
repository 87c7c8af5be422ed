//! Prompt templates. Every builder is a pure function of its inputs and
//! enumerates documents in the order given (retrieval or presentation order).

use crate::datagen::Polarity;
use crate::trajectory::{Document, FactLabel, Question, TaskKind};

pub const NO_DOCUMENTS: &str = "[no documents retrieved]";

const SCHEMA: &str = r#"{"relevant": true or false, "relevant_reason": "...", "evidence": [{"cite_content": "...", "reason_for_cite": "...", "doc_index": 1}], "analysis": "...", "answer": "..."}"#;

/// Appended to the user prompt when a generation could not be parsed.
pub const FORMAT_REMINDER: &str = "Reminder: your previous reply could not be parsed. Reply with exactly one JSON object containing the fields relevant, relevant_reason, evidence, analysis and answer, in that order, and nothing that breaks the JSON syntax.";

const INFERENCE_SYSTEM: &str = "\
You answer questions with the help of retrieved documents. Reason in three steps before you answer.
Step 1 (relevance): judge whether the documents are relevant to the question. Set \"relevant\" to true or false and explain your judgment in \"relevant_reason\". If none of the documents is relevant, set \"relevant\" to false, leave \"evidence\" empty and answer from your own knowledge.
Step 2 (evidence): choose the documents that help answer the question. For each one, copy a key sentence verbatim into \"cite_content\", explain in \"reason_for_cite\" why it supports the answer, and give its bracketed number as \"doc_index\".
Step 3 (analysis): combine the relevance judgment and the evidence into a concise \"analysis\", citing documents with bracketed numbers such as [1] or [1][2], then give a short \"answer\".";

fn task_instruction(kind: TaskKind) -> String {
    match kind {
        TaskKind::ShortQa => "The \"answer\" field is a short phrase, such as a name, date or number.".into(),
        TaskKind::LongQa => "The \"analysis\" field is a complete long-form answer. End every sentence of it with the bracketed numbers of the documents that support it. The \"answer\" field summarizes it in a short phrase.".into(),
        TaskKind::FactVerification => format!(
            "The question is a claim to verify. The \"answer\" field must be exactly one of: {}. Use NotEnoughInfo when the documents are irrelevant to the claim.",
            label_list()
        ),
    }
}

fn label_list() -> String {
    let [s, r, n] = FactLabel::ALL.map(FactLabel::as_str);
    format!("{s}, {r}, or {n}")
}

fn document_blocks(docs: &[Document]) -> String {
    if docs.is_empty() {
        return NO_DOCUMENTS.to_owned();
    }
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let title = d.title.trim();
            if title.is_empty() {
                format!("[{}] {}", i + 1, d.body)
            } else {
                format!("[{}] {}: {}", i + 1, title, d.body)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn question_label(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::FactVerification => "Claim",
        _ => "Question",
    }
}

/// `(system_prompt, user_prompt)` for self-reasoning inference.
pub fn build_inference_prompt(q: &Question, docs: &[Document]) -> (String, String) {
    let system = format!(
        "{INFERENCE_SYSTEM}\n{}\nReply with a single JSON object with exactly these fields in this order:\n{SCHEMA}",
        task_instruction(q.task_kind)
    );
    let user = format!(
        "Documents:\n{}\n\n{}: {}",
        document_blocks(docs),
        question_label(q.task_kind),
        q.text
    );
    (system, user)
}

pub const GOLD_OPEN: &str = "<gold>";
pub const GOLD_CLOSE: &str = "</gold>";

/// Marks the user prompt of a negative (mismatched-documents) datagen sample.
pub const NEGATIVE_MARKER: &str = "The documents below were retrieved for a different question.";

const DATAGEN_SYSTEM: &str = "\
You write training examples of step-by-step reasoning over retrieved documents. Produce the reasoning a careful reader would follow for the given question and documents, in three steps.
Step 1 (relevance): label whether the documents are relevant to the question in \"relevant\" and give the reason in \"relevant_reason\".
Step 2 (evidence): for each useful document, copy the key sentence verbatim into \"cite_content\", explain in \"reason_for_cite\" why it helps, and set \"doc_index\" to its bracketed number.
Step 3 (analysis): write a concise \"analysis\" built on the previous steps, citing documents with bracketed numbers such as [1], and finish with a short \"answer\".
The reference answer appears between <gold> and </gold>. Your answer must agree with it; never mention that a reference was provided.";

fn gold_section(kind: TaskKind, gold: &[Vec<String>]) -> String {
    let body = match kind {
        TaskKind::FactVerification => gold
            .first()
            .and_then(|s| s.first())
            .cloned()
            .unwrap_or_default(),
        _ => gold
            .iter()
            .enumerate()
            .map(|(i, aliases)| format!("aspect {}: {}", i + 1, aliases.join(" | ")))
            .collect::<Vec<_>>()
            .join("\n"),
    };
    format!("{GOLD_OPEN}\n{body}\n{GOLD_CLOSE}")
}

/// `(system_prompt, user_prompt)` asking a teacher model for a trajectory
/// that agrees with `gold`.
pub fn build_datagen_prompt(
    q: &Question,
    docs: &[Document],
    gold: &[Vec<String>],
    polarity: Polarity,
) -> (String, String) {
    let mut system = format!("{DATAGEN_SYSTEM}\n{}", task_instruction(q.task_kind));
    if polarity == Polarity::Negative {
        system.push_str(
            "\nFor this example the documents are irrelevant: set \"relevant\" to false, label the irrelevant fields, leave \"evidence\" as an empty list, explain in \"relevant_reason\" why the given documents cannot answer the question, and answer from general knowledge.",
        );
    }
    system.push_str(&format!("\nReply with a single JSON object with exactly these fields in this order:\n{SCHEMA}"));

    let mut user = String::new();
    if polarity == Polarity::Negative {
        user.push_str(NEGATIVE_MARKER);
        user.push_str(" Explain why they cannot answer the question.\n\n");
    }
    user.push_str(&format!(
        "Documents:\n{}\n\n{}: {}\n\nReference answer:\n{}",
        document_blocks(docs),
        question_label(q.task_kind),
        q.text,
        gold_section(q.task_kind, gold)
    ));
    (system, user)
}
