//! Price and message loaders plus up/down label derivation.
//!
//! Prices are `company,date,adjusted_close` rows (CSV with header, or JSONL
//! objects with the same keys). Messages are `id,timestamp_utc,ticker,body`
//! records; timestamps are ISO-8601 with an explicit offset, or the
//! `YYYY-MM-DD HH:MM:SS UTC` form used by the source corpus.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guess from the file extension; anything that is not `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!("unknown file format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub company: String,
    pub date: NaiveDate,
    pub adjusted_close: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovementLabel {
    pub date: NaiveDate,
    pub up: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMessage {
    pub id: String,
    #[serde(deserialize_with = "de_timestamp")]
    pub timestamp_utc: DateTime<Utc>,
    pub ticker: String,
    pub body: String,
}

/// Accepts RFC 3339 (`2017-10-18T13:51:24Z`, `...+00:00`) and `2017-10-18 13:51:24 UTC`.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    if let Ok(t) = DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%:z") {
        return Some(t.with_timezone(&Utc));
    }
    let naive = s
        .strip_suffix(" UTC")
        .or_else(|| s.strip_suffix('Z'))?;
    NaiveDateTime::parse_from_str(naive.trim(), "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(naive.trim(), "%Y-%m-%dT%H:%M:%S"))
        .ok()
        .map(|n| n.and_utc())
}

fn de_timestamp<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DateTime<Utc>, D::Error> {
    let s = String::deserialize(d)?;
    parse_timestamp(&s)
        .ok_or_else(|| serde::de::Error::custom(format!("unrecognized timestamp `{s}`")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Read newline-delimited JSON, skipping blank lines. Row numbers are 1-based line numbers.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Read a headed CSV. Row numbers count data rows from 1.
fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, i + 1, e))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn load_prices(path: &Path, format: Format) -> Result<Vec<PriceBar>> {
    let rows: Vec<(usize, PriceBar)> = match format {
        Format::Csv => read_csv(path)?,
        Format::Jsonl => read_jsonl(path)?,
    };
    for (row, bar) in &rows {
        if !(bar.adjusted_close.is_finite() && bar.adjusted_close > 0.0) {
            return Err(Error::parse(
                path,
                *row,
                format!("adjusted_close must be positive, got {}", bar.adjusted_close),
            ));
        }
        if bar.company.is_empty() {
            return Err(Error::parse(path, *row, "empty company"));
        }
    }
    let mut bars: Vec<PriceBar> = rows.into_iter().map(|(_, b)| b).collect();
    bars.sort_by(|a, b| (&a.company, a.date).cmp(&(&b.company, b.date)));
    if let Some(w) = bars
        .windows(2)
        .find(|w| w[0].company == w[1].company && w[0].date == w[1].date)
    {
        return Err(Error::Integrity(format!(
            "duplicate price bar for ({}, {})",
            w[0].company, w[0].date
        )));
    }
    Ok(bars)
}

pub fn write_prices(path: &Path, bars: &[PriceBar], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(path, bars),
        Format::Jsonl => write_jsonl(path, bars),
    }
}

/// Split a sorted bar list into per-company series, keyed by company.
pub fn prices_by_company(bars: &[PriceBar]) -> BTreeMap<String, Vec<PriceBar>> {
    let mut map: BTreeMap<String, Vec<PriceBar>> = BTreeMap::new();
    for bar in bars {
        map.entry(bar.company.clone()).or_default().push(bar.clone());
    }
    map
}

/// Up/down labels: `up = 1` iff the close strictly exceeds the previous bar's close.
pub fn derive_labels(prices: &[PriceBar]) -> Result<Vec<MovementLabel>> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 price bars to derive labels, got {}",
            prices.len()
        )));
    }
    Ok(prices
        .windows(2)
        .map(|w| MovementLabel {
            date: w[1].date,
            up: u8::from(w[1].adjusted_close > w[0].adjusted_close),
        })
        .collect())
}

#[derive(Deserialize)]
struct MessageRow {
    id: Option<String>,
    timestamp_utc: Option<String>,
    ticker: Option<String>,
    body: Option<String>,
}

pub fn load_messages(path: &Path, format: Format) -> Result<Vec<RawMessage>> {
    let rows: Vec<(usize, MessageRow)> = match format {
        Format::Csv => read_csv(path)?,
        Format::Jsonl => read_jsonl(path)?,
    };
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (row, r) in rows {
        let id = r
            .id
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(path, row, "missing id"))?;
        let ts = r
            .timestamp_utc
            .ok_or_else(|| Error::parse(path, row, "missing timestamp"))?;
        let timestamp_utc = parse_timestamp(&ts)
            .ok_or_else(|| Error::parse(path, row, format!("unrecognized timestamp `{ts}`")))?;
        let body = r
            .body
            .filter(|b| !b.trim().is_empty())
            .ok_or_else(|| Error::parse(path, row, "missing body"))?;
        let ticker = r.ticker.unwrap_or_default();
        if !seen.insert(id.clone()) {
            return Err(Error::Integrity(format!("duplicate message id `{id}`")));
        }
        out.push(RawMessage {
            id,
            timestamp_utc,
            ticker,
            body,
        });
    }
    sort_messages(&mut out);
    Ok(out)
}

/// Chronological order; equal instants fall back to id order.
pub fn sort_messages(msgs: &mut [RawMessage]) {
    msgs.sort_by(|a, b| (a.timestamp_utc, &a.id).cmp(&(b.timestamp_utc, &b.id)));
}

pub fn write_messages(path: &Path, msgs: &[RawMessage], format: Format) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        id: &'a str,
        timestamp_utc: String,
        ticker: &'a str,
        body: &'a str,
    }
    let rows: Vec<Row> = msgs
        .iter()
        .map(|m| Row {
            id: &m.id,
            timestamp_utc: m.timestamp_utc.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            ticker: &m.ticker,
            body: &m.body,
        })
        .collect();
    match format {
        Format::Csv => write_csv(path, &rows),
        Format::Jsonl => write_jsonl(path, &rows),
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        let line = serde_json::to_string(row).expect("serializable record");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub(crate) fn read_csv_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    Ok(read_csv(path)?.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn bar(company: &str, date: &str, close: f64) -> PriceBar {
        PriceBar {
            company: company.into(),
            date: date.parse().unwrap(),
            adjusted_close: close,
        }
    }

    fn series(closes: &[f64]) -> Vec<PriceBar> {
        let start: NaiveDate = "2017-01-02".parse().unwrap();
        closes
            .iter()
            .enumerate()
            .map(|(i, &c)| PriceBar {
                company: "App".into(),
                date: start + chrono::Days::new(i as u64),
                adjusted_close: c,
            })
            .collect()
    }

    fn temp_file(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_price_row() {
        let f = temp_file("company,date,adjusted_close\nApp,2017-01-03,27.25\n", ".csv");
        let bars = load_prices(f.path(), Format::Csv).unwrap();
        assert_eq!(bars, vec![bar("App", "2017-01-03", 27.25)]);
    }

    #[test]
    fn duplicate_price_row_is_integrity_error() {
        let f = temp_file(
            "company,date,adjusted_close\nApp,2017-01-03,27.25\nApp,2017-01-03,27.30\n",
            ".csv",
        );
        assert!(matches!(load_prices(f.path(), Format::Csv), Err(Error::Integrity(_))));
    }

    #[test]
    fn malformed_price_row_names_row() {
        let f = temp_file(
            "company,date,adjusted_close\nApp,2017-01-03,27.25\nApp,2017-01-04,abc\n",
            ".csv",
        );
        match load_prices(f.path(), Format::Csv) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_close_rejected() {
        let f = temp_file("{\"company\":\"App\",\"date\":\"2017-01-03\",\"adjusted_close\":0}\n", ".jsonl");
        assert!(matches!(load_prices(f.path(), Format::Jsonl), Err(Error::Parse { .. })));
    }

    #[test]
    fn jsonl_prices_sorted_by_company_then_date() {
        let f = temp_file(
            concat!(
                "{\"company\":\"Tes\",\"date\":\"2017-01-04\",\"adjusted_close\":2}\n",
                "{\"company\":\"App\",\"date\":\"2017-01-04\",\"adjusted_close\":3}\n",
                "\n",
                "{\"company\":\"App\",\"date\":\"2017-01-03\",\"adjusted_close\":1}\n",
            ),
            ".jsonl",
        );
        let bars = load_prices(f.path(), Format::Jsonl).unwrap();
        let keys: Vec<_> = bars.iter().map(|b| (b.company.as_str(), b.date.to_string())).collect();
        assert_eq!(
            keys,
            vec![
                ("App", "2017-01-03".to_string()),
                ("App", "2017-01-04".to_string()),
                ("Tes", "2017-01-04".to_string())
            ]
        );
    }

    #[test]
    fn labels_strict_increase() {
        let l = derive_labels(&series(&[1.0, 2.0])).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].up, 1);
    }

    #[test]
    fn labels_flat_day_is_down() {
        assert_eq!(derive_labels(&series(&[2.0, 2.0])).unwrap()[0].up, 0);
    }

    #[test]
    fn labels_hand_evaluated() {
        let ups: Vec<u8> = derive_labels(&series(&[3.0, 2.5, 2.6, 2.6]))
            .unwrap()
            .iter()
            .map(|l| l.up)
            .collect();
        assert_eq!(ups, vec![0, 1, 0]);
    }

    #[test]
    fn labels_need_two_bars() {
        assert!(matches!(derive_labels(&series(&[1.0])), Err(Error::InsufficientData(_))));
        assert!(matches!(derive_labels(&[]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn message_timestamp_forms() {
        let want = Utc.with_ymd_and_hms(2017, 10, 18, 13, 51, 24).unwrap();
        for s in [
            "2017-10-18 13:51:24 UTC",
            "2017-10-18T13:51:24Z",
            "2017-10-18T09:51:24-04:00",
            "2017-10-18 13:51:24+00:00",
        ] {
            assert_eq!(parse_timestamp(s), Some(want), "{s}");
        }
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn messages_sorted_and_box_timestamp_kept() {
        let f = temp_file(
            concat!(
                "{\"id\":\"b\",\"timestamp_utc\":\"2017-10-18 13:51:24 UTC\",\"ticker\":\"AAPL\",\"body\":\"later\"}\n",
                "{\"id\":\"a\",\"timestamp_utc\":\"2017-10-17T10:00:00Z\",\"ticker\":\"AAPL\",\"body\":\"earlier\"}\n",
            ),
            ".jsonl",
        );
        let msgs = load_messages(f.path(), Format::Jsonl).unwrap();
        assert_eq!(msgs[0].id, "a");
        assert_eq!(
            msgs[1].timestamp_utc,
            Utc.with_ymd_and_hms(2017, 10, 18, 13, 51, 24).unwrap()
        );
    }

    #[test]
    fn empty_message_file() {
        let f = temp_file("", ".jsonl");
        assert!(load_messages(f.path(), Format::Jsonl).unwrap().is_empty());
    }

    #[test]
    fn message_errors() {
        let missing_ts = temp_file("{\"id\":\"a\",\"ticker\":\"AAPL\",\"body\":\"x\"}\n", ".jsonl");
        assert!(matches!(load_messages(missing_ts.path(), Format::Jsonl), Err(Error::Parse { .. })));
        let missing_body = temp_file(
            "{\"id\":\"a\",\"timestamp_utc\":\"2017-01-01T00:00:00Z\",\"ticker\":\"AAPL\"}\n",
            ".jsonl",
        );
        assert!(matches!(load_messages(missing_body.path(), Format::Jsonl), Err(Error::Parse { .. })));
        let dup = temp_file(
            concat!(
                "{\"id\":\"a\",\"timestamp_utc\":\"2017-01-01T00:00:00Z\",\"ticker\":\"AAPL\",\"body\":\"x\"}\n",
                "{\"id\":\"a\",\"timestamp_utc\":\"2017-01-02T00:00:00Z\",\"ticker\":\"AAPL\",\"body\":\"y\"}\n",
            ),
            ".jsonl",
        );
        assert!(matches!(load_messages(dup.path(), Format::Jsonl), Err(Error::Integrity(_))));
    }

    #[test]
    fn csv_messages() {
        let f = temp_file(
            "id,timestamp_utc,ticker,body\n1,2017-10-18 13:51:24 UTC,AAPL,\"hello, world\"\n",
            ".csv",
        );
        let msgs = load_messages(f.path(), Format::Csv).unwrap();
        assert_eq!(msgs[0].body, "hello, world");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_prices(Path::new("/nonexistent/prices.csv"), Format::Csv),
            Err(Error::Io { .. })
        ));
    }
}
