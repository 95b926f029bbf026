//! Prompt rendering for the two generation roles.
//!
//! Two templates exist: one asks for a rewrite of the last shown utterance,
//! one asks for the next response given the full reply structure. Both
//! serialize the conversation with anonymized `Speaker k` labels assigned by
//! first appearance; the response template additionally prefixes each line
//! with its reply-to turn index in square brackets.

use std::collections::HashMap;

use super::{CorpusError, DialogueContext};

/// Identifies one of the engine's prompt templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTemplate {
    /// Rewrite the last utterance of the shown conversation.
    RewriteUtterance,
    /// Generate the next response for the target slot.
    GenerateResponse,
}

impl PromptTemplate {
    pub fn parse(id: &str) -> Result<Self, CorpusError> {
        match id {
            "rewrite_utterance" => Ok(PromptTemplate::RewriteUtterance),
            "generate_response" => Ok(PromptTemplate::GenerateResponse),
            other => Err(CorpusError::UnknownTemplate(other.to_string())),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            PromptTemplate::RewriteUtterance => "rewrite_utterance",
            PromptTemplate::GenerateResponse => "generate_response",
        }
    }
}

/// Template-specific values for [`render_prompt`].
#[derive(Debug, Clone, Copy)]
pub enum PromptExtras<'a> {
    None,
    /// Already-rewritten utterances for turns `1..=prefix.len()`; the next
    /// turn is shown with its original text as the rewrite target.
    RewritePrefix(&'a [String]),
}

const REWRITE_HEADER: &str = "You will be provided with a conversation among multiple people. The last utterance in the conversation may be expressed in a less formal way, or there may be co-references or omissions. Please rewrite the last utterance, such as performing coreference resolution and ellipsis resolution, to make its expression more formal and complete without introducing redundant information. Only output the rewritten last utterance without additional content.

Here are some examples.

Example 1:

Conversation:

Speaker 1: oh my god my internet is soooo slooooowwww

Rewritten Utterance:

My internet is so slow.

Example 2:

Conversation:

Speaker 1: I think it is because of permissions.

Speaker 2: Why are you using an RPM package in Ubuntu?

Speaker 2: You should use sudo to execute commands with superuser privileges.

Speaker 2: Additionally, Ubuntu uses Debian (deb) packages, not Red Hat Package Manager (rpm) packages.

Speaker 3: just put it in front of any command that you want to run as root .

Rewritten Utterance:

Just put \"sudo\" in front of any command that you wish to execute with root privileges.

Example 3:

Conversation:

Speaker 1: is ubuntu 7.01 is compatilable with windows vista ? ? ? ?

Speaker 2: compatible in what way ? you can have both 7.10 and vista on same system

Speaker 3: do you mean : can the grub bool loader boot windows vista ?

Speaker 4: the only compatibility issue is with it 's hardware

Rewritten Utterance:

The only compatibility issue between Ubuntu 7.10 and Windows Vista pertains to the hardware requirements of the system.

Please rewrite the last utterance of the following conversation. The rewritten utterances need to be as concise as possible, retaining important content, and not exceeding 20 words per utterance after rewriting.

Conversation:

";

const REWRITE_FOOTER: &str = "

Rewritten Utterance:
";

const RESPONSE_HEADER: &str = "You will be provided with a conversation among multiple people. The number of the utterance being replied to in the current round of dialogue is provided at the beginning of each round, and this number is placed in square brackets.

Here are some examples.

Example 1:

Conversation:

[1] Speaker 1: what is the best desktop search for ubuntu ? i just found beagle

[1] Speaker 2: best is subjective , but tracker was included by default in gutsy , so i suppose you could say that ubuntu developers think tracker is the best

[2] Speaker 3: so stop the whining and use masm

[1] Speaker 4: find -name 'keyword ' for the win

[1] Speaker 2: tracker ? it 's a desktop search applications .

[3] Speaker 2: then how , pray tell , will i be using it ?

[3] Speaker 2:

Response:

is there some magical linux port of masm that i have n't heard of ?

Example 2:

Conversation:

[1] Speaker 1: how can i conveniently open an iso ? like without mounting it from cli

[1] Speaker 2: open it with archive manager

[2] Speaker 1: does that work ? what archive manager= ?

[3] Speaker 3: you can open it with the archive manager ( its name is \"file-roller\" , the app that opens FILEPATH files ) then it 'll be mounted as an archive , but you 'll have to extract the data from it . it 's not as convenient as mounting

[3] Speaker 3: thus , install gmountiso if you want to graphically manage your mounting points EMOJI

[3] Speaker 2:

Response:

i just opened an iso with the built in archive manager

Please generate the final response based on the context and structure of the conversation. You only need to generate the response, do not output any extra content.

Conversation:

";

const RESPONSE_FOOTER: &str = "

Response:
";

/// Maps distinct speaker labels to `Speaker 1`, `Speaker 2`, ... by first
/// appearance (turns first, then the target speaker).
struct SpeakerNumbering {
    by_label: HashMap<String, usize>,
}

impl SpeakerNumbering {
    fn new(context: &DialogueContext) -> Self {
        let mut by_label = HashMap::new();
        for turn in &context.turns {
            let next = by_label.len() + 1;
            by_label.entry(turn.speaker.clone()).or_insert(next);
        }
        let next = by_label.len() + 1;
        by_label
            .entry(context.target_speaker.clone())
            .or_insert(next);
        SpeakerNumbering { by_label }
    }

    fn label(&self, speaker: &str) -> String {
        format!("Speaker {}", self.by_label[speaker])
    }
}

/// Serializes the conversation as the response template shows it: one
/// `[reply_to] Speaker k: text` line per turn. Turn 1 carries its own index
/// in the brackets since it opens the dialogue.
pub fn bracketed_conversation(context: &DialogueContext) -> String {
    let numbering = SpeakerNumbering::new(context);
    context
        .turns
        .iter()
        .map(|turn| {
            format!(
                "[{}] {}: {}",
                turn.reply_to.unwrap_or(turn.index),
                numbering.label(&turn.speaker),
                turn.text
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// One `Speaker k: text` line per turn, without reply brackets.
pub(crate) fn speaker_lines(context: &DialogueContext) -> Vec<String> {
    let numbering = SpeakerNumbering::new(context);
    context
        .turns
        .iter()
        .map(|turn| format!("{}: {}", numbering.label(&turn.speaker), turn.text))
        .collect()
}

/// Serializes the conversation as the rewrite template shows it: plain
/// `Speaker k: text` lines without reply brackets.
pub fn plain_conversation(context: &DialogueContext) -> String {
    speaker_lines(context).join("\n\n")
}

/// Renders the rewrite prompt for the turn after `prefix`: the conversation
/// block shows the already-rewritten texts for turns `1..=prefix.len()`
/// followed by the original text of the turn being rewritten. Later turns
/// are not shown.
pub fn render_rewrite_prompt(
    context: &DialogueContext,
    prefix: &[String],
) -> Result<String, CorpusError> {
    let target = prefix.len() + 1;
    if target > context.turns.len() {
        return Err(CorpusError::PrefixTooLong {
            got: prefix.len(),
            turns: context.turns.len(),
        });
    }
    let numbering = SpeakerNumbering::new(context);
    let mut lines = Vec::with_capacity(target);
    for turn in &context.turns[..target] {
        let text = prefix
            .get(turn.index - 1)
            .map(String::as_str)
            .unwrap_or(turn.text.as_str());
        lines.push(format!("{}: {}", numbering.label(&turn.speaker), text));
    }
    Ok(format!(
        "{REWRITE_HEADER}{}{REWRITE_FOOTER}",
        lines.join("\n\n")
    ))
}

/// Renders the response prompt: the bracketed conversation followed by an
/// empty response slot carrying the target reply index and speaker.
pub fn render_response_prompt(context: &DialogueContext) -> String {
    let numbering = SpeakerNumbering::new(context);
    let slot = format!(
        "[{}] {}: ",
        context.target_reply_to,
        numbering.label(&context.target_speaker)
    );
    format!(
        "{RESPONSE_HEADER}{}\n\n{slot}{RESPONSE_FOOTER}",
        bracketed_conversation(context)
    )
}

/// Dispatches to the template named by `template`.
pub fn render_prompt(
    context: &DialogueContext,
    template: PromptTemplate,
    extras: PromptExtras<'_>,
) -> Result<String, CorpusError> {
    match (template, extras) {
        (PromptTemplate::RewriteUtterance, PromptExtras::RewritePrefix(prefix)) => {
            render_rewrite_prompt(context, prefix)
        }
        (PromptTemplate::RewriteUtterance, PromptExtras::None) => {
            Err(CorpusError::MissingExtras("rewrite_utterance"))
        }
        (PromptTemplate::GenerateResponse, _) => Ok(render_response_prompt(context)),
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::context;
    use super::*;

    #[test]
    fn response_prompt_brackets_every_turn_and_ends_at_slot() {
        let ctx = context(&[("alice", None, "what is up"), ("bob", Some(1), "not much")]);
        let prompt = render_response_prompt(&ctx);
        assert!(prompt.contains("[1] Speaker 1: what is up"));
        assert!(prompt.contains("[1] Speaker 2: not much"));
        // Target slot line: replies to turn 2, spoken by a new third speaker.
        assert!(prompt.contains("[2] Speaker 3: \n"));
        assert!(prompt.trim_end().ends_with("Response:"));
    }

    #[test]
    fn rewrite_prompt_with_empty_prefix_shows_one_line() {
        let ctx = context(&[("alice", None, "first line here")]);
        let prompt = render_rewrite_prompt(&ctx, &[]).unwrap();
        let block = prompt
            .split("Conversation:\n\n")
            .last()
            .unwrap()
            .split("\n\nRewritten Utterance:")
            .next()
            .unwrap();
        assert_eq!(block, "Speaker 1: first line here");
    }

    #[test]
    fn rewrite_prompt_uses_prefix_then_original() {
        let ctx = context(&[("a", None, "orig one"), ("b", Some(1), "orig two")]);
        let prompt = render_rewrite_prompt(&ctx, &["clean one".to_string()]).unwrap();
        assert!(prompt.contains("Speaker 1: clean one"));
        assert!(prompt.contains("Speaker 2: orig two"));
        assert!(!prompt.contains("orig one"));
    }

    #[test]
    fn rewrite_prompt_hides_later_turns() {
        let ctx = context(&[
            ("a", None, "orig one"),
            ("b", Some(1), "orig two"),
            ("c", Some(2), "orig three"),
        ]);
        let prompt = render_rewrite_prompt(&ctx, &[]).unwrap();
        assert!(prompt.contains("orig one"));
        assert!(!prompt.contains("orig two"));
        assert!(!prompt.contains("orig three"));
    }

    #[test]
    fn unknown_template_id_is_rejected() {
        let err = PromptTemplate::parse("judge").unwrap_err();
        assert!(matches!(err, CorpusError::UnknownTemplate(_)));
    }

    #[test]
    fn missing_extras_is_rejected() {
        let ctx = context(&[("a", None, "hi")]);
        let err = render_prompt(&ctx, PromptTemplate::RewriteUtterance, PromptExtras::None)
            .unwrap_err();
        assert!(matches!(err, CorpusError::MissingExtras(_)));
    }

    #[test]
    fn rendering_is_deterministic() {
        let ctx = context(&[("a", None, "hi"), ("b", Some(1), "hey")]);
        assert_eq!(render_response_prompt(&ctx), render_response_prompt(&ctx));
        assert_eq!(
            render_rewrite_prompt(&ctx, &[]).unwrap(),
            render_rewrite_prompt(&ctx, &[]).unwrap()
        );
    }

    #[test]
    fn speaker_numbering_by_first_appearance() {
        let mut ctx = context(&[("zed", None, "one"), ("amy", Some(1), "two")]);
        ctx.target_speaker = "zed".into();
        ctx.target_reply_to = 2;
        let prompt = render_response_prompt(&ctx);
        assert!(prompt.contains("[1] Speaker 1: one"));
        assert!(prompt.contains("[1] Speaker 2: two"));
        assert!(prompt.contains("[2] Speaker 1: \n"));
    }
}
