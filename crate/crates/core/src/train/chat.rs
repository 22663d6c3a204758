use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{Tokenizer, Vocabulary, ASSISTANT, BOS_ID, EOS_ID, SYSTEM, USER};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExample {
    #[serde(default)]
    pub system: String,
    pub user: String,
    pub assistant: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedChat {
    pub ids: Vec<u32>,
    /// `targets[i]` is set when `ids[i]` is a loss target: everything after
    /// `<|assistant|>` through the closing `<|end_of_text|>`.
    pub targets: Vec<bool>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderOptions {
    /// Accept an empty assistant turn; only `<|end_of_text|>` is then a target.
    pub allow_empty_assistant: bool,
}

fn chat_id(vocab: &Vocabulary, name: &str) -> Result<u32> {
    vocab
        .special_id(name)
        .ok_or_else(|| Error::MissingChatSpecial(name.to_string()))
}

/// Lays out pre-encoded turns as
/// `<|begin_of_text|> <|system|> S <|user|> U <|assistant|> A <|end_of_text|>`.
pub fn render_chat_ids(
    system: &[u32],
    user: &[u32],
    assistant: &[u32],
    vocab: &Vocabulary,
    opts: RenderOptions,
) -> Result<RenderedChat> {
    let (sys, usr, asst) = (
        chat_id(vocab, SYSTEM)?,
        chat_id(vocab, USER)?,
        chat_id(vocab, ASSISTANT)?,
    );
    if assistant.is_empty() && !opts.allow_empty_assistant {
        return Err(Error::EmptyAssistant);
    }
    let mut ids = vec![BOS_ID, sys];
    ids.extend_from_slice(system);
    ids.push(usr);
    ids.extend_from_slice(user);
    ids.push(asst);
    let prompt = ids.len();
    ids.extend_from_slice(assistant);
    ids.push(EOS_ID);
    let targets = (0..ids.len()).map(|i| i >= prompt).collect();
    Ok(RenderedChat { ids, targets })
}

pub fn render_chat(
    example: &ChatExample,
    tokenizer: &Tokenizer,
    opts: RenderOptions,
) -> Result<RenderedChat> {
    render_chat_ids(
        &tokenizer.encode(&example.system),
        &tokenizer.encode(&example.user),
        &tokenizer.encode(&example.assistant),
        tokenizer.vocab(),
        opts,
    )
}
