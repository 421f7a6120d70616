//! Synthetic corpora with known daily features.
//!
//! Message bodies are drawn until the mock provider's canned answer for the
//! cleaned body has the sentiment class and advantage direction wanted for
//! that day, so the generator knows the features the pipeline will compute.
//! Labels are then drawn from a logistic model of those features (or
//! independently of them), and prices are built to reproduce the labels.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::featurize::{session_close_utc, DailyFeatures};
use crate::ingest::{self, Format, PriceBar, RawMessage};
use crate::pipeline::{Paths, PipelineConfig};
use crate::promptkit::CompanyContext;
use crate::scorer::{self, ExternalSentimentRow, MockProvider, ProviderConfig, DEFAULT_NA_FRACTION};
use crate::textprep::llm_body;

/// NYSE full-day closures in 2017.
pub const NYSE_HOLIDAYS_2017: [&str; 9] = [
    "2017-01-02",
    "2017-01-16",
    "2017-02-20",
    "2017-04-14",
    "2017-05-29",
    "2017-07-04",
    "2017-09-04",
    "2017-11-23",
    "2017-12-25",
];

/// The 2017 trading days preceded by the last 2016 session, which only
/// anchors the first label and the first message window.
pub fn nyse_2017_bars() -> Vec<NaiveDate> {
    let holidays: Vec<NaiveDate> = NYSE_HOLIDAYS_2017.iter().map(|d| d.parse().unwrap()).collect();
    let start = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
    let mut days = vec![NaiveDate::from_ymd_opt(2016, 12, 30).unwrap()];
    days.extend(
        start
            .iter_days()
            .take_while(|d| d.year() == 2017)
            .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
            .filter(|d| !holidays.contains(d)),
    );
    days
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Signal {
    /// `P(up) = logistic(beta_s * s̄ + beta_ad * (a - d))`.
    Planted { beta_s: f64, beta_ad: f64 },
    /// Fair coin labels, independent of every feature.
    Null,
}

impl Signal {
    pub fn standard() -> Self {
        Signal::Planted {
            beta_s: 0.8,
            beta_ad: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    /// Seed the mock provider will be run with.
    pub mock_seed: u64,
    pub na_fraction: f64,
    pub companies: Vec<CompanyContext>,
    pub messages_per_day: usize,
    pub signal: Signal,
    /// Share of messages that carry a link (removed by cleaning).
    pub url_share: f64,
    /// Share of messages re-posted verbatim later in the same window.
    pub repost_share: f64,
}

impl SynthParams {
    pub fn new(seed: u64) -> Self {
        SynthParams {
            seed,
            mock_seed: seed,
            na_fraction: DEFAULT_NA_FRACTION,
            companies: vec![
                CompanyContext::new("Apple", "AAPL").unwrap(),
                CompanyContext::new("Tesla", "TSLA").unwrap(),
            ],
            messages_per_day: 50,
            signal: Signal::standard(),
            url_share: 0.1,
            repost_share: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub messages: Vec<RawMessage>,
    pub prices: Vec<PriceBar>,
    pub bert: Vec<ExternalSentimentRow>,
    /// Features the pipeline should recover from the GPT path, per company in config order.
    pub truth: Vec<DailyFeatures>,
}

const WORDS: [&[&str]; 5] = [
    &["crash", "dump", "overvalued", "puts", "terrible", "recall", "selloff"],
    &["weak", "miss", "downgrade", "lower", "worried", "delay"],
    &["flat", "watching", "hold", "sideways", "earnings", "volume", "today"],
    &["buying", "upgrade", "solid", "beat", "higher", "demand"],
    &["moon", "calls", "breakout", "rocket", "record", "love", "rally"],
];

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn nonce<R: Rng>(rng: &mut R) -> String {
    (0..8).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Lean {
    Advantage,
    Disadvantage,
    Equal,
}

/// Draw a raw body whose cleaned form the mock answers with "NA" when
/// `want` is `None`, and otherwise with the given sentiment class and
/// advantage direction. Returns the body and the advantage probability.
fn draw_body<R: Rng>(
    rng: &mut R,
    mock: &MockProvider,
    ticker: &str,
    want: Option<(u8, Lean)>,
    with_url: bool,
) -> (String, Option<f64>) {
    let class = want.map_or(rng.random_range(1..=5), |w| w.0);
    let words = WORDS[class as usize - 1];
    loop {
        let mut body = format!(
            "${ticker} {} {} {}",
            words[rng.random_range(0..words.len())],
            words[rng.random_range(0..words.len())],
            nonce(rng)
        );
        if with_url {
            body.push_str(&format!(" https://t.co/{}", nonce(rng)));
        }
        match (mock.canned_for(&llm_body(&body)), want) {
            (None, None) => return (body, None),
            (Some(c), Some((class, lean))) => {
                let p = c.advantage[0];
                let got = if p > 0.5 {
                    Lean::Advantage
                } else if p < 0.5 {
                    Lean::Disadvantage
                } else {
                    Lean::Equal
                };
                if c.sentiment_class() == class && got == lean {
                    return (body, Some(p));
                }
            }
            _ => {}
        }
    }
}

pub fn generate(params: &SynthParams) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mock = MockProvider::new(params.mock_seed, params.na_fraction);
    let bars = nyse_2017_bars();
    let closes: Vec<_> = bars.iter().map(|&d| session_close_utc(d).expect("resolvable")).collect();

    let mut messages = Vec::new();
    let mut bert = Vec::new();
    let mut truth = Vec::new();
    let mut prices = Vec::new();
    let mut next_id = 0u64;

    for ctx in &params.companies {
        let ticker = &ctx.ticker_symbol;
        let mut close = 100.0;
        prices.push(PriceBar {
            company: ticker.clone(),
            date: bars[0],
            adjusted_close: close,
        });
        for t in 1..bars.len() {
            let mood = normal(&mut rng);
            let span = (closes[t] - closes[t - 1]).num_seconds();
            let n = params.messages_per_day * 4 / 5 + rng.random_range(0..=params.messages_per_day * 2 / 5);
            let mut day = DailyFeatures::empty(ticker, bars[t]);
            let mut class_sum = 0u32;
            let mut window: Vec<RawMessage> = Vec::with_capacity(n);
            for _ in 0..n {
                let class = (3.0 + 1.2 * mood + normal(&mut rng)).round().clamp(1.0, 5.0) as u8;
                let lean = if rng.random_bool(0.2) {
                    Lean::Equal
                } else if rng.random_bool(logistic(2.0 * mood)) {
                    Lean::Advantage
                } else {
                    Lean::Disadvantage
                };
                let with_url = rng.random_bool(params.url_share);
                let want = (!rng.random_bool(params.na_fraction)).then_some((class, lean));
                let (body, answer) = draw_body(&mut rng, &mock, ticker, want, with_url);
                // strictly inside the window, leaving room for a later re-post
                let offset = rng.random_range(1..span - 60);
                let ts = closes[t - 1] + Duration::seconds(offset);
                let id = format!("s{next_id:07}");
                next_id += 1;

                let target = class as usize - 1;
                let mut probs = [0.0; 5];
                let hit = if rng.random_bool(0.7) { target } else { rng.random_range(0..5) };
                for (i, p) in probs.iter_mut().enumerate() {
                    *p = if i == hit { 0.6 } else { 0.1 } + 0.05 * rng.random::<f64>();
                }
                let sum: f64 = probs.iter().sum();
                bert.push(ExternalSentimentRow {
                    message_id: id.clone(),
                    probs: probs.map(|p| p / sum),
                });

                if let Some(p_adv) = answer {
                    day.msg_count += 1;
                    class_sum += u32::from(class);
                    if p_adv > 0.5 {
                        day.adv_count += 1;
                    } else if p_adv < 0.5 {
                        day.dis_count += 1;
                    }
                }
                if rng.random_bool(params.repost_share) {
                    let later = ts + Duration::seconds(rng.random_range(1..=60));
                    window.push(RawMessage {
                        id: format!("s{next_id:07}"),
                        timestamp_utc: later,
                        ticker: ticker.clone(),
                        body: body.clone(),
                    });
                    next_id += 1;
                }
                window.push(RawMessage {
                    id,
                    timestamp_utc: ts,
                    ticker: ticker.clone(),
                    body,
                });
            }
            if day.msg_count > 0 {
                day.avg_sentiment = class_sum as f64 / day.msg_count as f64 - 3.0;
                day.avg_advantage = (day.adv_count as f64 - day.dis_count as f64) / day.msg_count as f64;
            }
            let p_up = match params.signal {
                Signal::Planted { beta_s, beta_ad } => logistic(
                    beta_s * day.avg_sentiment + beta_ad * (day.adv_count as f64 - day.dis_count as f64),
                ),
                Signal::Null => 0.5,
            };
            let step = 0.002 + 0.02 * rng.random::<f64>();
            close *= if rng.random_bool(p_up) { 1.0 + step } else { 1.0 - step };
            prices.push(PriceBar {
                company: ticker.clone(),
                date: bars[t],
                adjusted_close: close,
            });
            truth.push(day);
            messages.extend(window);
        }
    }
    ingest::sort_messages(&mut messages);
    SynthCorpus {
        messages,
        prices,
        bert,
        truth,
    }
}

/// Write the corpus and a matching config into `dir`; returns the config path.
pub fn write_fixture(dir: &std::path::Path, params: &SynthParams, corpus: &SynthCorpus) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    ingest::write_messages(&dir.join("messages.jsonl"), &corpus.messages, Format::Jsonl)?;
    ingest::write_prices(&dir.join("prices.csv"), &corpus.prices, Format::Csv)?;
    scorer::write_external_sentiments(&dir.join("bert.csv"), &corpus.bert)?;
    let cfg = PipelineConfig {
        seed: params.mock_seed,
        year: 2017,
        split_plans: (4..=9).collect(),
        companies: params.companies.clone(),
        paths: Paths {
            messages: "messages.jsonl".into(),
            prices: "prices.csv".into(),
            bert_sentiments: Some("bert.csv".into()),
            output_dir: "out".into(),
        },
        provider: ProviderConfig {
            na_fraction: params.na_fraction,
            ..ProviderConfig::mock()
        },
    };
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| crate::Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calendar_2017() {
        let bars = nyse_2017_bars();
        assert_eq!(bars.len(), 252);
        assert_eq!(bars[1], NaiveDate::from_ymd_opt(2017, 1, 3).unwrap());
        assert_eq!(*bars.last().unwrap(), NaiveDate::from_ymd_opt(2017, 12, 29).unwrap());
    }

    #[test]
    fn small_corpus_is_deterministic_and_consistent() {
        let mut params = SynthParams::new(11);
        params.messages_per_day = 5;
        let a = generate(&params);
        let b = generate(&params);
        assert_eq!(a.messages, b.messages);
        assert_eq!(a.prices, b.prices);
        assert_eq!(a.truth.len(), 2 * 251);
        assert_eq!(a.prices.len(), 2 * 252);
        for f in &a.truth {
            assert!(f.adv_count + f.dis_count <= f.msg_count);
        }
    }
}
