//! Data model, validation, and serialization for multi-party dialogue corpora.
//!
//! A dialogue context is an ordered list of speaker-attributed turns with
//! reply-to links, plus a target slot naming who speaks next and which turn
//! they reply to. Turn indices are 1-based everywhere, including on disk.

mod prompt;

pub use prompt::{
    bracketed_conversation, plain_conversation, render_prompt, render_response_prompt,
    render_rewrite_prompt, PromptExtras, PromptTemplate,
};
pub(crate) use prompt::speaker_lines;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("expected {expected} rewritten texts for {expected} turns, got {got}")]
    RewriteCount { expected: usize, got: usize },
    #[error("rewritten text for turn {index} is empty")]
    EmptyRewrite { index: usize },
    #[error("unknown prompt template id {0:?}")]
    UnknownTemplate(String),
    #[error("template {0:?} requires a rewritten-prefix extra")]
    MissingExtras(&'static str),
    #[error("rewrite prefix has {got} texts but the context only has {turns} turns")]
    PrefixTooLong { got: usize, turns: usize },
}

/// One utterance in a multi-party dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    /// 1-based position within the context.
    pub index: usize,
    pub speaker: String,
    /// Index of the earlier turn this one replies to. Absent only for turn 1.
    pub reply_to: Option<usize>,
    pub text: String,
}

/// A dialogue history plus the slot for the next response: who speaks next
/// (`target_speaker`) and which turn they address (`target_reply_to`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContextRecord", into = "ContextRecord")]
pub struct DialogueContext {
    pub turns: Vec<Turn>,
    pub target_speaker: String,
    pub target_reply_to: usize,
    pub gold_response: Option<String>,
}

impl DialogueContext {
    /// Number of turns `t`.
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Speaker of the turn that `turn` replies to, if any.
    pub fn addressee_speaker(&self, turn: usize) -> Option<&str> {
        let reply_to = self.turns.get(turn.checked_sub(1)?)?.reply_to?;
        self.turns.get(reply_to - 1).map(|t| t.speaker.as_str())
    }

    /// Returns a context with identical structure but replaced utterance
    /// texts. Speakers, reply links, target fields, and the gold response
    /// are carried over unchanged.
    pub fn with_rewritten_texts(&self, texts: &[String]) -> Result<DialogueContext, CorpusError> {
        if texts.len() != self.turns.len() {
            return Err(CorpusError::RewriteCount {
                expected: self.turns.len(),
                got: texts.len(),
            });
        }
        for (turn, text) in self.turns.iter().zip(texts) {
            if text.trim().is_empty() {
                return Err(CorpusError::EmptyRewrite { index: turn.index });
            }
        }
        let mut rewritten = self.clone();
        for (turn, text) in rewritten.turns.iter_mut().zip(texts) {
            turn.text = text.clone();
        }
        Ok(rewritten)
    }

    /// Checks every type invariant and reports each violation found.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.turns.is_empty() {
            report.push("context has no turns");
            return report;
        }
        for (pos, turn) in self.turns.iter().enumerate() {
            let expected = pos + 1;
            if turn.index != expected {
                report.push(format!(
                    "turn at position {pos} has index {} (expected {expected})",
                    turn.index
                ));
            }
            if turn.text.trim().is_empty() {
                report.push(format!("turn {} has empty text", expected));
            }
            if expected == 1 {
                if turn.reply_to.is_some() {
                    report.push("turn 1 must not have reply_to");
                }
            } else {
                match turn.reply_to {
                    None => report.push(format!("turn {expected} is missing reply_to")),
                    Some(r) if r == 0 || r >= expected => report.push(format!(
                        "turn {expected} reply_to {r} must precede the turn"
                    )),
                    Some(_) => {}
                }
            }
        }
        let t = self.turns.len();
        if self.target_reply_to == 0 || self.target_reply_to > t {
            report.push(format!(
                "target_reply_to {} is out of range [1, {t}]",
                self.target_reply_to
            ));
        }
        if self.target_speaker.trim().is_empty() {
            report.push("target_speaker is empty");
        }
        report
    }
}

/// Violated invariants collected by [`DialogueContext::validate`].
/// Empty iff the context is valid.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, violation: impl Into<String>) {
        self.violations.push(violation.into());
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "ok")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub contexts: Vec<DialogueContext>,
}

impl Dataset {
    pub fn new(split: Split, contexts: Vec<DialogueContext>) -> Self {
        Dataset { split, contexts }
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

/// One skipped line from a non-strict [`load_jsonl`] run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineViolation {
    pub line: usize,
    pub message: String,
}

/// Outcome of loading a JSONL corpus file: the parsed dataset plus any
/// lines skipped for schema violations (empty in strict mode, which fails
/// on the first violation instead).
#[derive(Debug)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    pub skipped: Vec<LineViolation>,
}

/// Loads a dialogue corpus from a JSONL file, one context per line.
///
/// With `strict` set, any schema violation aborts the whole load; otherwise
/// offending lines are reported in [`LoadOutcome::skipped`] and the rest of
/// the file is kept.
pub fn load_jsonl(path: &Path, split: Split, strict: bool) -> Result<LoadOutcome, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut contexts = Vec::new();
    let mut skipped = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DialogueContext>(&line) {
            Ok(context) => contexts.push(context),
            Err(err) => {
                if strict {
                    return Err(CorpusError::Schema {
                        path: path.display().to_string(),
                        line: lineno,
                        message: err.to_string(),
                    });
                }
                skipped.push(LineViolation {
                    line: lineno,
                    message: err.to_string(),
                });
            }
        }
    }
    Ok(LoadOutcome {
        dataset: Dataset::new(split, contexts),
        skipped,
    })
}

/// Writes a dataset as JSONL, one context per line, in the same record
/// schema that [`load_jsonl`] reads.
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let mut file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for context in &dataset.contexts {
        let line = serde_json::to_string(context).expect("context serialization cannot fail");
        writeln!(file, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

// Wire schema: turn indices are positional in the file, so the records
// carry no explicit index field.

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TurnRecord {
    speaker: String,
    reply_to: Option<usize>,
    text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContextRecord {
    turns: Vec<TurnRecord>,
    target_speaker: String,
    target_reply_to: usize,
    gold_response: Option<String>,
}

impl TryFrom<ContextRecord> for DialogueContext {
    type Error = String;

    fn try_from(record: ContextRecord) -> Result<Self, Self::Error> {
        if record.turns.is_empty() {
            return Err("context must have at least one turn".into());
        }
        let mut turns = Vec::with_capacity(record.turns.len());
        for (pos, turn) in record.turns.into_iter().enumerate() {
            let index = pos + 1;
            if turn.text.trim().is_empty() {
                return Err(format!("turn {index}: text must be non-empty"));
            }
            match (index, turn.reply_to) {
                (1, Some(_)) => return Err("turn 1: reply_to must be absent".into()),
                (1, None) => {}
                (_, None) => return Err(format!("turn {index}: reply_to is required")),
                (_, Some(r)) if r == 0 || r >= index => {
                    return Err(format!("turn {index}: reply_to must precede turn"));
                }
                (_, Some(_)) => {}
            }
            turns.push(Turn {
                index,
                speaker: turn.speaker,
                reply_to: turn.reply_to,
                text: turn.text,
            });
        }
        let t = turns.len();
        if record.target_reply_to == 0 || record.target_reply_to > t {
            return Err(format!(
                "target_reply_to {} is out of range [1, {t}]",
                record.target_reply_to
            ));
        }
        Ok(DialogueContext {
            turns,
            target_speaker: record.target_speaker,
            target_reply_to: record.target_reply_to,
            gold_response: record.gold_response,
        })
    }
}

impl From<DialogueContext> for ContextRecord {
    fn from(context: DialogueContext) -> Self {
        ContextRecord {
            turns: context
                .turns
                .into_iter()
                .map(|turn| TurnRecord {
                    speaker: turn.speaker,
                    reply_to: turn.reply_to,
                    text: turn.text,
                })
                .collect(),
            target_speaker: context.target_speaker,
            target_reply_to: context.target_reply_to,
            gold_response: context.gold_response,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    pub(crate) fn context(turns: &[(&str, Option<usize>, &str)]) -> DialogueContext {
        DialogueContext {
            turns: turns
                .iter()
                .enumerate()
                .map(|(pos, (speaker, reply_to, text))| Turn {
                    index: pos + 1,
                    speaker: speaker.to_string(),
                    reply_to: *reply_to,
                    text: text.to_string(),
                })
                .collect(),
            target_speaker: "s0".into(),
            target_reply_to: turns.len(),
            gold_response: Some("gold".into()),
        }
    }

    fn write_jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    const WELL_FORMED: &str = r#"{"turns":[{"speaker":"a","reply_to":null,"text":"hi"},{"speaker":"b","reply_to":1,"text":"hey"},{"speaker":"c","reply_to":1,"text":"yo"}],"target_speaker":"a","target_reply_to":2,"gold_response":"sure"}"#;

    #[test]
    fn load_well_formed_line() {
        let file = write_jsonl(&[WELL_FORMED]);
        let outcome = load_jsonl(file.path(), Split::Train, true).unwrap();
        assert_eq!(outcome.dataset.len(), 1);
        assert_eq!(outcome.dataset.contexts[0].len(), 3);
        assert!(outcome.skipped.is_empty());
    }

    #[test]
    fn load_rejects_self_reply() {
        let bad = r#"{"turns":[{"speaker":"a","reply_to":null,"text":"hi"},{"speaker":"b","reply_to":2,"text":"hey"}],"target_speaker":"a","target_reply_to":1,"gold_response":null}"#;
        let file = write_jsonl(&[bad]);
        let err = load_jsonl(file.path(), Split::Train, true).unwrap_err();
        assert!(err.to_string().contains("reply_to must precede turn"), "{err}");

        // Non-strict mode keeps the good lines and reports the bad one.
        let file = write_jsonl(&[WELL_FORMED, bad]);
        let outcome = load_jsonl(file.path(), Split::Train, false).unwrap();
        assert_eq!(outcome.dataset.len(), 1);
        assert_eq!(outcome.skipped.len(), 1);
        assert_eq!(outcome.skipped[0].line, 2);
    }

    #[test]
    fn load_empty_file() {
        let file = write_jsonl(&[]);
        let outcome = load_jsonl(file.path(), Split::Test, true).unwrap();
        assert!(outcome.dataset.is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let file = write_jsonl(&[WELL_FORMED]);
        let outcome = load_jsonl(file.path(), Split::Valid, true).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_jsonl(&outcome.dataset, out.path()).unwrap();
        let reloaded = load_jsonl(out.path(), Split::Valid, true).unwrap();
        assert_eq!(reloaded.dataset, outcome.dataset);
    }

    #[test]
    fn validate_valid_two_turn_context() {
        let ctx = context(&[("a", None, "hi"), ("b", Some(1), "hey")]);
        assert!(ctx.validate().is_empty());
    }

    #[test]
    fn validate_flags_out_of_range_target() {
        let mut ctx = context(&[
            ("a", None, "hi"),
            ("b", Some(1), "hey"),
            ("c", Some(2), "yo"),
        ]);
        ctx.target_reply_to = 5;
        let report = ctx.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("target_reply_to"));
    }

    #[test]
    fn validate_flags_reply_on_first_turn() {
        let mut ctx = context(&[("a", None, "hi")]);
        ctx.turns[0].reply_to = Some(0);
        let report = ctx.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("turn 1"));
    }

    #[test]
    fn rewrite_preserves_structure() {
        let ctx = context(&[("a", None, "one"), ("b", Some(1), "two")]);
        let rewritten = ctx
            .with_rewritten_texts(&["A".to_string(), "B".to_string()])
            .unwrap();
        assert_eq!(rewritten.turns[0].text, "A");
        assert_eq!(rewritten.turns[1].text, "B");
        assert_eq!(rewritten.turns[0].speaker, ctx.turns[0].speaker);
        assert_eq!(rewritten.turns[1].reply_to, ctx.turns[1].reply_to);
        assert_eq!(rewritten.target_speaker, ctx.target_speaker);
        assert_eq!(rewritten.target_reply_to, ctx.target_reply_to);
        assert_eq!(rewritten.gold_response, ctx.gold_response);
    }

    #[test]
    fn rewrite_identity() {
        let ctx = context(&[("a", None, "one"), ("b", Some(1), "two")]);
        let texts: Vec<String> = ctx.turns.iter().map(|t| t.text.clone()).collect();
        assert_eq!(ctx.with_rewritten_texts(&texts).unwrap(), ctx);
    }

    #[test]
    fn rewrite_length_mismatch() {
        let ctx = context(&[("a", None, "one"), ("b", Some(1), "two")]);
        let err = ctx.with_rewritten_texts(&["only".to_string()]).unwrap_err();
        assert!(matches!(err, CorpusError::RewriteCount { expected: 2, got: 1 }));
    }

    #[test]
    fn rewrite_rejects_empty_text() {
        let ctx = context(&[("a", None, "one")]);
        let err = ctx.with_rewritten_texts(&["  ".to_string()]).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyRewrite { index: 1 }));
    }

    #[test]
    fn addressee_speaker_follows_reply_link() {
        let ctx = context(&[("a", None, "one"), ("b", Some(1), "two")]);
        assert_eq!(ctx.addressee_speaker(2), Some("a"));
        assert_eq!(ctx.addressee_speaker(1), None);
    }
}
