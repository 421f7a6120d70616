//! Message cleaning for the two scoring paths.
//!
//! The LLM profile strips links and image markup and lowercases. The BERT
//! profile applies the same rules, then removes `#`/`$`/`@`-led tokens,
//! anything outside Basic Latin, digits and punctuation, leaving only
//! `[a-z ]` with single spaces.
//!
//! Duplicates are detected against the full message history (including
//! messages outside the study window), keyed per ticker on the LLM-cleaned
//! body. The first occurrence by `(timestamp, id)` is kept.

use std::collections::HashMap;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ingest::RawMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    RemoveImageMarkup,
    RemoveUrls,
    Lowercase,
    CollapseWhitespace,
    RemoveHashtags,
    RemoveCashtags,
    RemoveMentions,
    RemoveNonAscii,
    RemoveDigits,
    RemoveSpecialChars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    LlmProfile,
    BertProfile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleaningProfile {
    pub name: ProfileName,
    pub rules: Vec<Rule>,
}

impl CleaningProfile {
    pub fn llm() -> Self {
        CleaningProfile {
            name: ProfileName::LlmProfile,
            rules: vec![
                Rule::RemoveImageMarkup,
                Rule::RemoveUrls,
                Rule::Lowercase,
                Rule::CollapseWhitespace,
            ],
        }
    }

    pub fn bert() -> Self {
        let mut rules = Self::llm().rules;
        rules.extend([
            Rule::RemoveHashtags,
            Rule::RemoveCashtags,
            Rule::RemoveMentions,
            Rule::RemoveNonAscii,
            Rule::RemoveDigits,
            Rule::RemoveSpecialChars,
            Rule::CollapseWhitespace,
        ]);
        CleaningProfile {
            name: ProfileName::BertProfile,
            rules,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedMessage {
    pub id: String,
    pub timestamp_utc: DateTime<Utc>,
    pub ticker: String,
    pub body: String,
    pub profile: ProfileName,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CleanOutcome {
    Kept(CleanedMessage),
    /// An identical LLM-cleaned body was seen earlier; `first_id` is the kept copy.
    Duplicate { first_id: String },
    EmptyAfterClean,
}

impl CleanOutcome {
    pub fn kept(self) -> Option<CleanedMessage> {
        match self {
            CleanOutcome::Kept(m) => Some(m),
            _ => None,
        }
    }
}

static IMAGE_MARKUP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)!\[[^\]]*\]\([^)]*\)|<img\b[^>]*>").unwrap());
static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:[a-z][a-z0-9+.-]*://|www\.)\S*").unwrap());
static WHITESPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

fn led_tokens(lead: char) -> Regex {
    Regex::new(&format!(r"{}\S*", regex::escape(&lead.to_string()))).unwrap()
}

static HASHTAG: LazyLock<Regex> = LazyLock::new(|| led_tokens('#'));
static CASHTAG: LazyLock<Regex> = LazyLock::new(|| led_tokens('$'));
static MENTION: LazyLock<Regex> = LazyLock::new(|| led_tokens('@'));

fn replace_all(re: &Regex, text: &str, with: &str) -> String {
    re.replace_all(text, with).into_owned()
}

fn apply_rule(rule: Rule, text: &str) -> String {
    match rule {
        Rule::RemoveImageMarkup => replace_all(&IMAGE_MARKUP, text, " "),
        Rule::RemoveUrls => replace_all(&URL, text, " "),
        Rule::Lowercase => text.to_lowercase(),
        Rule::CollapseWhitespace => WHITESPACE.replace_all(text, " ").trim().to_string(),
        Rule::RemoveHashtags => replace_all(&HASHTAG, text, " "),
        Rule::RemoveCashtags => replace_all(&CASHTAG, text, " "),
        Rule::RemoveMentions => replace_all(&MENTION, text, " "),
        Rule::RemoveNonAscii => text
            .chars()
            .map(|c| if c.is_ascii() { c } else { ' ' })
            .collect(),
        Rule::RemoveDigits => text
            .chars()
            .map(|c| if c.is_ascii_digit() { ' ' } else { c })
            .collect(),
        Rule::RemoveSpecialChars => text
            .chars()
            .map(|c| if c.is_ascii_lowercase() || c == ' ' { c } else { ' ' })
            .collect(),
    }
}

/// Run a profile's rules over `body`, returning the cleaned text and the rules that changed it.
pub fn apply_profile(profile: &CleaningProfile, body: &str) -> (String, Vec<Rule>) {
    let mut text = body.to_string();
    let mut hits = Vec::new();
    for &rule in &profile.rules {
        let mut next = apply_rule(rule, &text);
        // markup and link removal can expose new matches in what remains
        if matches!(rule, Rule::RemoveImageMarkup | Rule::RemoveUrls) {
            loop {
                let again = apply_rule(rule, &next);
                if again == next {
                    break;
                }
                next = again;
            }
        }
        if next != text {
            if !hits.contains(&rule) {
                hits.push(rule);
            }
            text = next;
        }
    }
    (text, hits)
}

pub fn llm_body(body: &str) -> String {
    apply_profile(&CleaningProfile::llm(), body).0
}

pub fn bert_body(body: &str) -> String {
    apply_profile(&CleaningProfile::bert(), body).0
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Occurrence {
    timestamp_utc: DateTime<Utc>,
    id: String,
}

/// First occurrence of every (ticker, LLM-cleaned body) in a message history.
#[derive(Debug, Clone, Default)]
pub struct DedupRegistry {
    first: HashMap<(String, String), Occurrence>,
}

impl DedupRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from a full history. Input order does not matter; ties on the
    /// timestamp are broken by id.
    pub fn build<'a>(history: impl IntoIterator<Item = &'a RawMessage>) -> Self {
        let mut reg = Self::new();
        for msg in history {
            reg.register(msg);
        }
        reg
    }

    pub fn register(&mut self, msg: &RawMessage) {
        let key = (msg.ticker.clone(), llm_body(&msg.body));
        let occ = Occurrence {
            timestamp_utc: msg.timestamp_utc,
            id: msg.id.clone(),
        };
        self.first
            .entry(key)
            .and_modify(|cur| {
                if occ < *cur {
                    *cur = occ.clone();
                }
            })
            .or_insert(occ);
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// Id of the kept copy if `msg` duplicates an earlier message.
    fn earlier_copy(&self, msg: &RawMessage, llm_cleaned: &str) -> Option<&str> {
        let occ = self
            .first
            .get(&(msg.ticker.clone(), llm_cleaned.to_string()))?;
        let this = (msg.timestamp_utc, msg.id.as_str());
        ((occ.timestamp_utc, occ.id.as_str()) < this).then_some(occ.id.as_str())
    }

    pub fn is_duplicate(&self, msg: &RawMessage) -> bool {
        self.earlier_copy(msg, &llm_body(&msg.body)).is_some()
    }
}

/// Per-message audit line for the cleaning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub id: String,
    pub profile: ProfileName,
    pub rule_hits: Vec<Rule>,
    pub dropped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

fn clean_with(
    profile: &CleaningProfile,
    msg: &RawMessage,
    seen: &DedupRegistry,
) -> (CleanOutcome, AuditEntry) {
    let llm = llm_body(&msg.body);
    let mut audit = AuditEntry {
        id: msg.id.clone(),
        profile: profile.name,
        rule_hits: Vec::new(),
        dropped: true,
        reason: None,
    };
    if let Some(first) = seen.earlier_copy(msg, &llm) {
        audit.reason = Some(format!("duplicate of {first}"));
        return (
            CleanOutcome::Duplicate {
                first_id: first.to_string(),
            },
            audit,
        );
    }
    let (body, hits) = apply_profile(profile, &msg.body);
    audit.rule_hits = hits;
    if body.is_empty() {
        audit.reason = Some("empty after cleaning".into());
        return (CleanOutcome::EmptyAfterClean, audit);
    }
    audit.dropped = false;
    (
        CleanOutcome::Kept(CleanedMessage {
            id: msg.id.clone(),
            timestamp_utc: msg.timestamp_utc,
            ticker: msg.ticker.clone(),
            body,
            profile: profile.name,
        }),
        audit,
    )
}

pub fn clean_llm(msg: &RawMessage, seen: &DedupRegistry) -> CleanOutcome {
    clean_with(&CleaningProfile::llm(), msg, seen).0
}

pub fn clean_bert(msg: &RawMessage, seen: &DedupRegistry) -> CleanOutcome {
    clean_with(&CleaningProfile::bert(), msg, seen).0
}

/// Clean a corpus under one profile, returning the kept messages and an audit line per input.
pub fn clean_corpus(
    profile: &CleaningProfile,
    msgs: &[RawMessage],
    seen: &DedupRegistry,
) -> (Vec<CleanedMessage>, Vec<AuditEntry>) {
    let mut kept = Vec::new();
    let mut audit = Vec::with_capacity(msgs.len());
    for msg in msgs {
        let (outcome, entry) = clean_with(profile, msg, seen);
        if let CleanOutcome::Kept(m) = outcome {
            kept.push(m);
        }
        audit.push(entry);
    }
    (kept, audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    const BOX1: &str =
        "$AAPL OK, bought $162.50 calls, my shares sitting fine from forever ago...LONG";

    fn msg(id: &str, ts: DateTime<Utc>, body: &str) -> RawMessage {
        RawMessage {
            id: id.into(),
            timestamp_utc: ts,
            ticker: "AAPL".into(),
            body: body.into(),
        }
    }

    fn at(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    fn kept_body(o: CleanOutcome) -> String {
        match o {
            CleanOutcome::Kept(m) => m.body,
            other => panic!("expected kept message, got {other:?}"),
        }
    }

    #[test]
    fn llm_profile_matches_box1() {
        let m = msg("1", at(2017, 10, 18), BOX1);
        assert_eq!(
            kept_body(clean_llm(&m, &DedupRegistry::new())),
            "$aapl ok, bought $162.50 calls, my shares sitting fine from forever ago...long"
        );
    }

    #[test]
    fn bert_profile_matches_box1() {
        let m = msg("1", at(2017, 10, 18), BOX1);
        assert_eq!(
            kept_body(clean_bert(&m, &DedupRegistry::new())),
            "ok bought calls my shares sitting fine from forever ago long"
        );
    }

    #[test]
    fn lowercase_only() {
        let m = msg("1", at(2017, 1, 3), "HELLO");
        assert_eq!(kept_body(clean_llm(&m, &DedupRegistry::new())), "hello");
    }

    #[test]
    fn urls_and_images_removed() {
        let m = msg(
            "1",
            at(2017, 1, 3),
            "Look https://t.co/AbC and WWW.Example.com/x ![chart](http://img.io/a.png) <img src=\"a.png\"> done",
        );
        assert_eq!(kept_body(clean_llm(&m, &DedupRegistry::new())), "look and done");
    }

    #[test]
    fn bert_all_tokens_removed_is_empty() {
        let m = msg("1", at(2017, 1, 3), "#apple @user $tsla 2017");
        assert_eq!(clean_bert(&m, &DedupRegistry::new()), CleanOutcome::EmptyAfterClean);
        assert!(matches!(clean_llm(&m, &DedupRegistry::new()), CleanOutcome::Kept(_)));
    }

    #[test]
    fn bert_no_rule_fires() {
        let m = msg("1", at(2017, 1, 3), "great product");
        let (body, hits) = apply_profile(&CleaningProfile::bert(), &m.body);
        assert_eq!(body, "great product");
        assert!(hits.is_empty());
    }

    #[test]
    fn bert_strips_emoticons_and_percentages() {
        assert_eq!(bert_body("Up 5% today 🚀🚀 on 10/18!"), "up today on");
    }

    #[test]
    fn identical_bodies_second_is_duplicate() {
        let a = msg("a", at(2017, 3, 1), "Buy now!");
        let b = msg("b", at(2017, 3, 2), "Buy now!");
        let reg = DedupRegistry::build([&a, &b]);
        assert!(matches!(clean_llm(&a, &reg), CleanOutcome::Kept(_)));
        assert_eq!(
            clean_llm(&b, &reg),
            CleanOutcome::Duplicate { first_id: "a".into() }
        );
        assert_eq!(
            clean_bert(&b, &reg),
            CleanOutcome::Duplicate { first_id: "a".into() }
        );
    }

    #[test]
    fn three_copies_flag_second_and_third() {
        let msgs: Vec<_> = (0..3)
            .map(|i| msg(&format!("m{i}"), at(2017, 1, 3 + i), "free signals http://spam.biz"))
            .collect();
        let reg = DedupRegistry::build(&msgs);
        let flags: Vec<bool> = msgs.iter().map(|m| reg.is_duplicate(m)).collect();
        assert_eq!(flags, vec![false, true, true]);
    }

    #[test]
    fn history_before_study_window_flags_later_copy() {
        let old = msg("old", at(2010, 6, 28), "Join our trading room");
        let new = msg("new", at(2017, 5, 2), "JOIN our trading room");
        // registry sees history in any order
        let reg = DedupRegistry::build([&new, &old]);
        assert!(!reg.is_duplicate(&old));
        assert!(reg.is_duplicate(&new));
    }

    #[test]
    fn empty_history_empty_registry() {
        let reg = DedupRegistry::build(std::iter::empty::<&RawMessage>());
        assert!(reg.is_empty());
    }

    #[test]
    fn timestamp_ties_broken_by_id() {
        let t = at(2017, 1, 3);
        let b = msg("b", t, "same");
        let a = msg("a", t, "same");
        let reg = DedupRegistry::build([&b, &a]);
        assert!(!reg.is_duplicate(&a));
        assert!(reg.is_duplicate(&b));
    }

    #[test]
    fn dedup_is_per_ticker() {
        let a = msg("a", at(2017, 1, 3), "to the moon");
        let mut b = msg("b", at(2017, 1, 4), "to the moon");
        b.ticker = "TSLA".into();
        let reg = DedupRegistry::build([&a, &b]);
        assert!(!reg.is_duplicate(&b));
    }

    #[test]
    fn llm_rules_are_subset_of_bert_rules() {
        let bert = CleaningProfile::bert().rules;
        assert!(CleaningProfile::llm().rules.iter().all(|r| bert.contains(r)));
        assert!(bert.len() > CleaningProfile::llm().rules.len());
    }

    fn body_strategy() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            "[A-Za-z]{1,8}",
            "[0-9]{1,4}(\\.[0-9]{1,2})?%?",
            Just("$AAPL".to_string()),
            Just("#tech".to_string()),
            Just("@trader".to_string()),
            Just("https://t.co/x1".to_string()),
            Just("www.site.com".to_string()),
            Just("![img](http://a.b/c.png)".to_string()),
            Just("...".to_string()),
            Just("🚀".to_string()),
            Just("é".to_string()),
            "[!-/:-@\\[-`{-~]{1,3}",
        ];
        proptest::collection::vec((piece, prop_oneof![Just(" "), Just(""), Just("  "), Just("\n")]), 1..12)
            .prop_map(|parts| parts.into_iter().map(|(p, s)| p + s).collect())
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent(body in body_strategy()) {
            let once = llm_body(&body);
            prop_assert_eq!(llm_body(&once), once.clone());
            let once = bert_body(&body);
            prop_assert_eq!(bert_body(&once), once);
        }

        #[test]
        fn bert_output_is_lowercase_letters_and_single_spaces(body in body_strategy()) {
            let out = bert_body(&body);
            prop_assert!(out.chars().all(|c| c.is_ascii_lowercase() || c == ' '));
            prop_assert!(!out.contains("  "));
            prop_assert_eq!(out.trim(), out.as_str());
        }

        #[test]
        fn llm_output_has_no_urls_or_uppercase(body in body_strategy()) {
            let out = llm_body(&body);
            prop_assert!(!URL.is_match(&out));
            prop_assert_eq!(out.to_lowercase(), out);
        }
    }
}
