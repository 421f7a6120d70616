//! Daily feature aggregation and the stacked design matrix.
//!
//! A message belongs to trading day `t` when its instant lies in
//! `(16:00 ET of the previous trading day, 16:00 ET of t]`. Weekend and
//! holiday messages therefore roll into the next trading day. The first
//! trading day in a calendar only opens the first window; it never receives
//! messages itself, matching the label series, which starts one bar later.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use chrono_tz::America::New_York;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, MovementLabel};
use crate::promptkit::CompanyContext;
use crate::respparse::{classify_advantage, classify_sentiment, AdvantageClass, SentimentRecord, Status};

/// Close of the US equity session in exchange-local time.
pub const SESSION_CLOSE_HOUR: u32 = 16;

/// 16:00 New York time on `date`, as a UTC instant.
pub fn session_close_utc(date: NaiveDate) -> Result<DateTime<Utc>> {
    let local = date
        .and_hms_opt(SESSION_CLOSE_HOUR, 0, 0)
        .expect("valid wall-clock time");
    New_York
        .from_local_datetime(&local)
        .single()
        .map(|t| t.with_timezone(&Utc))
        .ok_or_else(|| Error::Config(format!("cannot resolve 16:00 America/New_York on {date}")))
}

/// Trading days with their precomputed session closes.
#[derive(Debug, Clone)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
    closes: Vec<DateTime<Utc>>,
}

impl TradingCalendar {
    pub fn new(days: &[NaiveDate]) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Precondition("trading calendar is empty".into()));
        }
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition("trading days must be strictly increasing".into()));
        }
        let closes = days.iter().map(|&d| session_close_utc(d)).collect::<Result<_>>()?;
        Ok(TradingCalendar {
            days: days.to_vec(),
            closes,
        })
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    /// Trading day whose window contains `ts`, or `None` when out of range.
    pub fn assign(&self, ts: DateTime<Utc>) -> Option<NaiveDate> {
        let i = self.closes.partition_point(|close| *close < ts);
        (i > 0 && i < self.days.len()).then(|| self.days[i])
    }
}

pub fn window_assign(msg_ts: DateTime<Utc>, trading_days: &[NaiveDate]) -> Result<Option<NaiveDate>> {
    Ok(TradingCalendar::new(trading_days)?.assign(msg_ts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyFeatures {
    pub company: String,
    pub date: NaiveDate,
    pub avg_sentiment: f64,
    pub adv_count: u32,
    pub dis_count: u32,
    pub msg_count: u32,
    pub avg_advantage: f64,
}

impl DailyFeatures {
    pub fn empty(company: &str, date: NaiveDate) -> Self {
        DailyFeatures {
            company: company.to_string(),
            date,
            avg_sentiment: 0.0,
            adv_count: 0,
            dis_count: 0,
            msg_count: 0,
            avg_advantage: 0.0,
        }
    }

    pub fn equal_count(&self) -> u32 {
        self.msg_count - self.adv_count - self.dis_count
    }
}

/// Aggregate one window's parsed records. An empty window gives the neutral
/// day: zero average sentiment and zero counts.
pub fn aggregate_day(company: &str, date: NaiveDate, records: &[&SentimentRecord]) -> Result<DailyFeatures> {
    let mut out = DailyFeatures::empty(company, date);
    if records.is_empty() {
        return Ok(out);
    }
    let mut class_sum = 0u32;
    for rec in records {
        if rec.status != Status::Parsed {
            return Err(Error::Precondition(format!(
                "record `{}` is {} and cannot be aggregated",
                rec.message_id,
                rec.status.as_str()
            )));
        }
        class_sum += u32::from(classify_sentiment(rec)?);
        if rec.advantage.is_some() {
            match classify_advantage(rec)? {
                AdvantageClass::Advantage => out.adv_count += 1,
                AdvantageClass::Disadvantage => out.dis_count += 1,
                AdvantageClass::Equal => {}
            }
        }
    }
    let n = records.len() as u32;
    out.msg_count = n;
    out.avg_sentiment = class_sum as f64 / n as f64 - 3.0;
    out.avg_advantage = (out.adv_count as f64 - out.dis_count as f64) / n as f64;
    Ok(out)
}

/// Daily features for every trading day after the first, from timestamped
/// records. Records that are not parsed or fall outside the calendar are ignored.
pub fn daily_features(
    company: &str,
    calendar: &TradingCalendar,
    scored: &[(DateTime<Utc>, &SentimentRecord)],
) -> Result<Vec<DailyFeatures>> {
    let mut by_day: HashMap<NaiveDate, Vec<&SentimentRecord>> = HashMap::new();
    for (ts, rec) in scored {
        if rec.status != Status::Parsed {
            continue;
        }
        if let Some(day) = calendar.assign(*ts) {
            by_day.entry(day).or_default().push(rec);
        }
    }
    calendar.days()[1..]
        .iter()
        .map(|&d| aggregate_day(company, d, by_day.get(&d).map_or(&[][..], Vec::as_slice)))
        .collect()
}

pub fn write_features_csv(path: &Path, features: &[DailyFeatures]) -> Result<()> {
    ingest::write_csv(path, features)
}

pub fn read_features_csv(path: &Path) -> Result<Vec<DailyFeatures>> {
    ingest::read_csv_records(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorSet {
    Bert,
    Gpt,
}

impl RegressorSet {
    /// Feature prefixes in column order.
    fn kinds(self) -> &'static [&'static str] {
        match self {
            RegressorSet::Bert => &["s"],
            RegressorSet::Gpt => &["s", "a", "d"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegressorSet::Bert => "bert",
            RegressorSet::Gpt => "gpt",
        }
    }
}

fn feature_value(f: &DailyFeatures, kind: &str) -> f64 {
    match kind {
        "s" => f.avg_sentiment,
        "a" => f.adv_count as f64,
        "d" => f.dis_count as f64,
        _ => unreachable!("unknown regressor kind {kind}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub company: String,
    pub date: NaiveDate,
}

/// Regressors (with a leading intercept column) and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<String>,
    pub x: DMatrix<f64>,
    pub labels: Vec<u8>,
    /// Company and trading day per row; empty for designs built from raw data.
    pub rows: Vec<RowKey>,
}

impl DesignMatrix {
    /// A design without row keys. `rows` are regressor rows, intercept included if wanted.
    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let k = columns.len();
        if rows.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::Shape(format!("row of width {} for {k} columns", bad.len())));
        }
        let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        Ok(DesignMatrix {
            columns,
            x,
            labels,
            rows: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.x.column(j).iter().copied().collect())
    }

    /// Keep the rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> DesignMatrix {
        DesignMatrix {
            columns: self.columns.clone(),
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            rows: if self.rows.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.rows[i].clone()).collect()
            },
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(ingest::create(path)?);
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut header = vec!["company".to_string(), "date".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("up".into());
        w.write_record(&header).map_err(io)?;
        for i in 0..self.n_rows() {
            let (company, date) = self
                .rows
                .get(i)
                .map(|k| (k.company.clone(), k.date.to_string()))
                .unwrap_or_default();
            let mut rec = vec![company, date];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One company's aligned inputs for stacking.
#[derive(Debug, Clone)]
pub struct CompanyBlock<'a> {
    pub company: &'a CompanyContext,
    pub features: &'a [DailyFeatures],
    pub labels: &'a [MovementLabel],
}

fn check_alignment(block: &CompanyBlock) -> Result<()> {
    let fd: Vec<NaiveDate> = block.features.iter().map(|f| f.date).collect();
    let ld: Vec<NaiveDate> = block.labels.iter().map(|l| l.date).collect();
    if fd == ld {
        return Ok(());
    }
    let only_f: Vec<String> = fd.iter().filter(|d| !ld.contains(d)).map(|d| d.to_string()).collect();
    let only_l: Vec<String> = ld.iter().filter(|d| !fd.contains(d)).map(|d| d.to_string()).collect();
    Err(Error::Alignment(format!(
        "{}: feature dates without labels [{}]; label dates without features [{}]",
        block.company.display_name,
        only_f.join(", "),
        only_l.join(", ")
    )))
}

/// Stack per-company regressors into one pooled design.
///
/// Columns are `intercept` followed by one column per (feature, company) in
/// the order the companies are given: `s_App, s_Tes` for the BERT set and
/// `s_App, s_Tes, a_App, a_Tes, d_App, d_Tes` for the GPT set. Row blocks run
/// in the reverse order, so the first company's columns are zero over the
/// leading block. Every company column is zero outside its own block.
pub fn stack(blocks: &[CompanyBlock], set: RegressorSet) -> Result<DesignMatrix> {
    if blocks.is_empty() {
        return Err(Error::Precondition("no companies to stack".into()));
    }
    for b in blocks {
        check_alignment(b)?;
    }
    let kinds = set.kinds();
    let mut columns = vec!["intercept".to_string()];
    for kind in kinds {
        for b in blocks {
            columns.push(format!("{kind}_{}", b.company.column_key()));
        }
    }
    let n: usize = blocks.iter().map(|b| b.labels.len()).sum();
    let mut x = DMatrix::zeros(n, columns.len());
    let mut labels = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut r = 0;
    for (c, b) in blocks.iter().enumerate().rev() {
        for (f, l) in b.features.iter().zip(b.labels) {
            x[(r, 0)] = 1.0;
            for (k, kind) in kinds.iter().enumerate() {
                x[(r, 1 + k * blocks.len() + c)] = feature_value(f, kind);
            }
            labels.push(l.up);
            rows.push(RowKey {
                company: b.company.ticker_symbol.clone(),
                date: l.date,
            });
            r += 1;
        }
    }
    Ok(DesignMatrix {
        columns,
        x,
        labels,
        rows,
    })
}
