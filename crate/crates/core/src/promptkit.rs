//! Zero-shot prompt construction for contextual sentiment scoring.
//!
//! The template text lives in `templates/` and is versioned by file name so
//! that a scoring run can record exactly which wording it used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::CleanedMessage;

pub const TEMPLATE_VERSION: &str = "sentiment_v1";
const SYSTEM_TEMPLATE: &str = include_str!("../templates/sentiment_v1.system.txt");
const USER_TEMPLATE: &str = include_str!("../templates/sentiment_v1.user.txt");

pub const SENTIMENT_LABELS: [&str; 5] = ["1(neg)", "2", "3", "4", "5(pos)"];
pub const ADVANTAGE_LABELS: [&str; 2] = ["Advantage", "Disadvantage"];
pub const DEFAULT_MODEL_ID: &str = "gpt-4";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyContext {
    pub display_name: String,
    pub ticker_symbol: String,
}

impl CompanyContext {
    pub fn new(display_name: impl Into<String>, ticker_symbol: impl Into<String>) -> Result<Self> {
        let ctx = CompanyContext {
            display_name: display_name.into(),
            ticker_symbol: ticker_symbol.into(),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if self.display_name.trim().is_empty() || self.ticker_symbol.trim().is_empty() {
            return Err(Error::Config("company name and ticker must be non-empty".into()));
        }
        if self.ticker_symbol != self.ticker_symbol.to_uppercase() {
            return Err(Error::Config(format!(
                "ticker `{}` must be uppercase",
                self.ticker_symbol
            )));
        }
        Ok(())
    }

    /// Short column suffix: the first three characters of the display name (`Apple` → `App`).
    pub fn column_key(&self) -> String {
        self.display_name.chars().take(3).collect()
    }

    pub fn relation_labels(&self) -> [String; 3] {
        [
            format!("Mostly {}", self.display_name),
            "Mostly competitor".to_string(),
            "Unrelated".to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub message_id: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub model_id: String,
}

impl PromptBundle {
    /// The message text between the triple-backtick fences.
    pub fn fenced_message(&self) -> Option<&str> {
        let start = self.user_text.find("```")? + 3;
        let end = self.user_text.rfind("```")?;
        (end >= start).then(|| &self.user_text[start..end])
    }
}

/// Python-style list literal, as the template's f-string rendered it.
fn py_list<S: AsRef<str>>(items: &[S]) -> String {
    let inner: Vec<String> = items.iter().map(|s| format!("'{}'", s.as_ref())).collect();
    format!("[{}]", inner.join(", "))
}

pub fn build_prompt(message: &CleanedMessage, ctx: &CompanyContext) -> Result<PromptBundle> {
    build_prompt_for(&message.id, &message.body, ctx, DEFAULT_MODEL_ID)
}

pub fn build_prompt_for(
    message_id: &str,
    body: &str,
    ctx: &CompanyContext,
    model_id: &str,
) -> Result<PromptBundle> {
    if body.trim().is_empty() {
        return Err(Error::Precondition(format!(
            "message `{message_id}` has an empty body"
        )));
    }
    let system_text = SYSTEM_TEMPLATE
        .trim_end()
        .replace("{name}", &ctx.display_name)
        .replace("{ticker}", &ctx.ticker_symbol);
    // the message goes in last so braces inside it are never treated as placeholders
    let scaffold = USER_TEMPLATE
        .trim_end()
        .replace("{sentiment}", &py_list(&SENTIMENT_LABELS))
        .replace("{advantage}", &py_list(&ADVANTAGE_LABELS))
        .replace("{relation}", &py_list(&ctx.relation_labels()));
    let user_text = scaffold.replacen("{message}", body, 1);
    Ok(PromptBundle {
        message_id: message_id.to_string(),
        system_text,
        user_text,
        temperature: 0.0,
        model_id: model_id.to_string(),
    })
}

/// Rough token count, one token per four characters of prompt text.
pub fn prompt_token_estimate(bundle: &PromptBundle) -> u64 {
    let chars = bundle.system_text.chars().count() + bundle.user_text.chars().count();
    chars.div_ceil(4) as u64
}
