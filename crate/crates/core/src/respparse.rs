//! Parsing of bracketed provider output into probability records.
//!
//! The expected layout is
//!
//! ```text
//! [Sentiment: '1(neg)': 0.1, '2': 0.1, '3': 0.1, '4': 0.2, '5(pos)': 0.5,
//!  Advantage: 'Advantage': 0.7, 'Disadvantage': 0.3,
//!  Relation: 'Mostly Apple': 0.9, 'Mostly competitor': 0.05, 'Unrelated': 0.05]
//! ```
//!
//! Labels match case-insensitively with or without quotes. Each block must
//! sum to within [`SUM_TOLERANCE`] of one and is then renormalized. Every
//! input maps to exactly one status: parsed, NA, or unparseable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::RawResponse;

/// Allowed deviation of a block's sum from 1 before it is rejected.
pub const SUM_TOLERANCE: f64 = 0.03;
const EQUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Parsed,
    Na,
    Unparseable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Parsed => "parsed",
            Status::Na => "na",
            Status::Unparseable => "unparseable",
        }
    }
}

/// Parsed provider output. Probability blocks are present only for `Parsed`
/// records; the external five-class path fills `sentiment` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RecordRow", try_from = "RecordRow")]
pub struct SentimentRecord {
    pub message_id: String,
    pub status: Status,
    pub sentiment: Option<[f64; 5]>,
    pub advantage: Option<[f64; 2]>,
    pub relation: Option<[f64; 3]>,
}

impl SentimentRecord {
    pub fn na(message_id: impl Into<String>) -> Self {
        Self::without_probs(message_id, Status::Na)
    }

    pub fn unparseable(message_id: impl Into<String>) -> Self {
        Self::without_probs(message_id, Status::Unparseable)
    }

    fn without_probs(message_id: impl Into<String>, status: Status) -> Self {
        SentimentRecord {
            message_id: message_id.into(),
            status,
            sentiment: None,
            advantage: None,
            relation: None,
        }
    }

    /// A sentiment-only record, as produced by an external five-class classifier.
    pub fn sentiment_only(message_id: impl Into<String>, probs: [f64; 5]) -> Self {
        SentimentRecord {
            message_id: message_id.into(),
            status: Status::Parsed,
            sentiment: Some(probs),
            advantage: None,
            relation: None,
        }
    }

    /// Probability of the "Advantage" label, when present.
    pub fn p_advantage(&self) -> Option<f64> {
        self.advantage.map(|a| a[0])
    }
}

/// Flat JSONL row: id, status and the nine probabilities.
#[derive(Serialize, Deserialize)]
struct RecordRow {
    message_id: String,
    status: Status,
    p_sent_1: Option<f64>,
    p_sent_2: Option<f64>,
    p_sent_3: Option<f64>,
    p_sent_4: Option<f64>,
    p_sent_5: Option<f64>,
    p_advantage: Option<f64>,
    p_disadvantage: Option<f64>,
    p_rel_company: Option<f64>,
    p_rel_competitor: Option<f64>,
    p_rel_unrelated: Option<f64>,
}

impl From<SentimentRecord> for RecordRow {
    fn from(r: SentimentRecord) -> Self {
        let s = |i: usize| r.sentiment.map(|p| p[i]);
        let a = |i: usize| r.advantage.map(|p| p[i]);
        let l = |i: usize| r.relation.map(|p| p[i]);
        RecordRow {
            p_sent_1: s(0),
            p_sent_2: s(1),
            p_sent_3: s(2),
            p_sent_4: s(3),
            p_sent_5: s(4),
            p_advantage: a(0),
            p_disadvantage: a(1),
            p_rel_company: l(0),
            p_rel_competitor: l(1),
            p_rel_unrelated: l(2),
            message_id: r.message_id,
            status: r.status,
        }
    }
}

fn all_or_none<const N: usize>(vals: [Option<f64>; N], what: &str) -> Result<Option<[f64; N]>, String> {
    if vals.iter().all(Option::is_none) {
        return Ok(None);
    }
    let mut out = [0.0; N];
    for (o, v) in out.iter_mut().zip(vals) {
        *o = v.ok_or_else(|| format!("{what} block is incomplete"))?;
    }
    Ok(Some(out))
}

impl TryFrom<RecordRow> for SentimentRecord {
    type Error = String;

    fn try_from(r: RecordRow) -> Result<Self, String> {
        let rec = SentimentRecord {
            sentiment: all_or_none([r.p_sent_1, r.p_sent_2, r.p_sent_3, r.p_sent_4, r.p_sent_5], "sentiment")?,
            advantage: all_or_none([r.p_advantage, r.p_disadvantage], "advantage")?,
            relation: all_or_none([r.p_rel_company, r.p_rel_competitor, r.p_rel_unrelated], "relation")?,
            message_id: r.message_id,
            status: r.status,
        };
        let has_probs = rec.sentiment.is_some() || rec.advantage.is_some() || rec.relation.is_some();
        match rec.status {
            Status::Parsed if rec.sentiment.is_none() => {
                Err("parsed record without sentiment probabilities".into())
            }
            Status::Na | Status::Unparseable if has_probs => {
                Err(format!("{} record carries probabilities", rec.status.as_str()))
            }
            _ => Ok(rec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Sentiment,
    Advantage,
    Relation,
}

impl Block {
    fn from_header(h: &str) -> Option<Block> {
        match normalize_label(h).as_str() {
            "sentiment" | "sentiments" => Some(Block::Sentiment),
            "advantage" | "advantages" => Some(Block::Advantage),
            "relation" | "relations" => Some(Block::Relation),
            _ => None,
        }
    }

    fn slot(self, label: &str) -> Option<usize> {
        let l = normalize_label(label);
        match self {
            Block::Sentiment => sentiment_slot(&l),
            Block::Advantage => match l.as_str() {
                "advantage" => Some(0),
                "disadvantage" => Some(1),
                _ => None,
            },
            Block::Relation => match l.as_str() {
                "mostly competitor" | "mostly competitors" => Some(1),
                "unrelated" => Some(2),
                _ if l.starts_with("mostly ") => Some(0),
                _ => None,
            },
        }
    }

    fn width(self) -> usize {
        match self {
            Block::Sentiment => 5,
            Block::Advantage => 2,
            Block::Relation => 3,
        }
    }
}

fn sentiment_slot(l: &str) -> Option<usize> {
    match l.replace(' ', "").as_str() {
        "1" | "1(neg)" | "1(negative)" => Some(0),
        "2" => Some(1),
        "3" => Some(2),
        "4" => Some(3),
        "5" | "5(pos)" | "5(positive)" => Some(4),
        _ => None,
    }
}

fn normalize_label(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| matches!(c, '\'' | '"' | '`' | '{' | '}') || c.is_whitespace())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn parse_prob(s: &str) -> Option<f64> {
    let v: f64 = s
        .trim()
        .trim_matches(|c: char| matches!(c, '\'' | '"' | '{' | '}') || c.is_whitespace())
        .parse()
        .ok()?;
    (v.is_finite() && (0.0..=1.0).contains(&v)).then_some(v)
}

/// Check the block sums to one within tolerance and rescale it if needed.
fn normalize<const N: usize>(mut probs: [f64; N]) -> Option<[f64; N]> {
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return None;
    }
    if (sum - 1.0).abs() > EQUAL_TOLERANCE {
        probs.iter_mut().for_each(|p| *p /= sum);
    }
    Some(probs)
}

fn fill<const N: usize>(pairs: &[(String, f64)], block: Block) -> Option<[f64; N]> {
    let mut out = [f64::NAN; N];
    for (label, v) in pairs {
        let slot = block.slot(label)?;
        if !out[slot].is_nan() {
            return None;
        }
        out[slot] = *v;
    }
    if out.iter().any(|p| p.is_nan()) {
        return None;
    }
    normalize(out)
}

/// Parse a bare `'label': prob, ...` list of five sentiment probabilities.
///
/// This is the shape of a sentiment-only answer and of the five-class
/// scores printed for an external classifier.
pub fn parse_sentiment_block(text: &str) -> Option<[f64; 5]> {
    let body = text.trim().trim_start_matches('[').trim_end_matches(']');
    let mut pairs = Vec::new();
    for item in body.split(',') {
        let (label, value) = item.rsplit_once(':')?;
        pairs.push((label.to_string(), parse_prob(value)?));
    }
    fill::<5>(&pairs, Block::Sentiment)
}

fn is_na(text: &str) -> bool {
    let t = text
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`') || c.is_whitespace());
    t == "NA" || t == "NA."
}

fn parse_triple(text: &str) -> Option<([f64; 5], [f64; 2], [f64; 3])> {
    let open = text.find('[')?;
    let close = text.rfind(']')?;
    if close <= open {
        return None;
    }
    let body = &text[open + 1..close];

    let mut blocks: Vec<(Block, Vec<(String, f64)>)> = Vec::new();
    for item in body.split(',') {
        let parts: Vec<&str> = item.split(':').collect();
        let (header, label, value) = match parts.as_slice() {
            [h, l, v] => (Some(*h), *l, *v),
            [l, v] => (None, *l, *v),
            _ => return None,
        };
        if let Some(h) = header {
            let block = Block::from_header(h)?;
            if blocks.iter().any(|(b, _)| *b == block) {
                return None;
            }
            blocks.push((block, Vec::new()));
        }
        let (_, pairs) = blocks.last_mut()?;
        pairs.push((label.to_string(), parse_prob(value)?));
    }

    let pairs_for = |b: Block| {
        blocks
            .iter()
            .find(|(k, _)| *k == b)
            .map(|(_, p)| p.as_slice())
            .filter(|p| p.len() == b.width())
    };
    Some((
        fill::<5>(pairs_for(Block::Sentiment)?, Block::Sentiment)?,
        fill::<2>(pairs_for(Block::Advantage)?, Block::Advantage)?,
        fill::<3>(pairs_for(Block::Relation)?, Block::Relation)?,
    ))
}

pub fn parse_text(message_id: &str, text: &str) -> SentimentRecord {
    if is_na(text) {
        return SentimentRecord::na(message_id);
    }
    match parse_triple(text) {
        Some((sentiment, advantage, relation)) => SentimentRecord {
            message_id: message_id.to_string(),
            status: Status::Parsed,
            sentiment: Some(sentiment),
            advantage: Some(advantage),
            relation: Some(relation),
        },
        None => SentimentRecord::unparseable(message_id),
    }
}

/// Failed requests (no text) are recorded as unparseable.
pub fn parse_response(resp: &RawResponse) -> SentimentRecord {
    match &resp.text {
        Some(text) => parse_text(&resp.message_id, text),
        None => SentimentRecord::unparseable(&resp.message_id),
    }
}

/// Render a full record back into the bracketed layout.
pub fn format_canonical(rec: &SentimentRecord, company: &str) -> Option<String> {
    let (s, a, r) = (rec.sentiment?, rec.advantage?, rec.relation?);
    Some(format!(
        "[Sentiment: '1(neg)': {}, '2': {}, '3': {}, '4': {}, '5(pos)': {}, \
Advantage: 'Advantage': {}, 'Disadvantage': {}, \
Relation: 'Mostly {company}': {}, 'Mostly competitor': {}, 'Unrelated': {}]",
        s[0], s[1], s[2], s[3], s[4], a[0], a[1], r[0], r[1], r[2]
    ))
}

fn not_scorable(rec: &SentimentRecord) -> Error {
    Error::NotScorable(rec.status.as_str())
}

/// Sentiment class 1..=5 by argmax; ties go to the lower class.
pub fn classify_sentiment(rec: &SentimentRecord) -> Result<u8> {
    let probs = match (rec.status, rec.sentiment) {
        (Status::Parsed, Some(p)) => p,
        _ => return Err(not_scorable(rec)),
    };
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(best as u8 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageClass {
    Advantage,
    Disadvantage,
    Equal,
}

pub fn classify_advantage(rec: &SentimentRecord) -> Result<AdvantageClass> {
    let p = match (rec.status, rec.p_advantage()) {
        (Status::Parsed, Some(p)) => p,
        _ => return Err(not_scorable(rec)),
    };
    Ok(if (p - 0.5).abs() <= EQUAL_TOLERANCE {
        AdvantageClass::Equal
    } else if p > 0.5 {
        AdvantageClass::Advantage
    } else {
        AdvantageClass::Disadvantage
    })
}
