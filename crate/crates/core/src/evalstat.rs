//! Month-anchored train/test evaluation and McNemar comparisons.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::featurize::{DailyFeatures, DesignMatrix};
use crate::glm;
use crate::ingest;

/// Below this many discordant pairs the exact binomial test is used.
pub const EXACT_THRESHOLD: u32 = 25;
pub const MIN_MONTHS: u32 = 3;

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];

pub fn month_name(m: u32) -> &'static str {
    MONTHS[(m - 1) as usize]
}

/// Train from January through `test_start - 1`, test from `test_start` through December.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub year: i32,
    pub train_start: u32,
    pub train_end: u32,
    pub test_start: u32,
    pub test_end: u32,
}

impl SplitPlan {
    pub fn new(year: i32, test_start: u32) -> Result<Self> {
        let plan = SplitPlan {
            year,
            train_start: 1,
            train_end: test_start.wrapping_sub(1),
            test_start,
            test_end: 12,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let months_ok = [self.train_start, self.train_end, self.test_start, self.test_end]
            .iter()
            .all(|m| (1..=12).contains(m));
        if !months_ok {
            return Err(Error::Plan(format!("month out of range in {self:?}")));
        }
        if self.train_start > self.train_end || self.test_start > self.test_end {
            return Err(Error::Plan(format!("empty period in {self:?}")));
        }
        if self.test_start != self.train_end + 1 {
            return Err(Error::Plan("train and test periods must be contiguous".into()));
        }
        let train = self.train_end - self.train_start + 1;
        let test = self.test_end - self.test_start + 1;
        if train < MIN_MONTHS || test < MIN_MONTHS {
            return Err(Error::Plan(format!(
                "test starting in {} leaves {train} training and {test} test months; at least {MIN_MONTHS} each are required",
                month_name(self.test_start)
            )));
        }
        Ok(())
    }

    pub fn begin_test(&self) -> &'static str {
        month_name(self.test_start)
    }

    fn contains(&self, d: chrono::NaiveDate, from: u32, to: u32) -> bool {
        d.year() == self.year && (from..=to).contains(&d.month())
    }

    pub fn is_train(&self, d: chrono::NaiveDate) -> bool {
        self.contains(d, self.train_start, self.train_end)
    }

    pub fn is_test(&self, d: chrono::NaiveDate) -> bool {
        self.contains(d, self.test_start, self.test_end)
    }
}

/// The six plans with test periods beginning April through September.
pub fn canonical_plans(year: i32) -> Vec<SplitPlan> {
    (4..=9).map(|m| SplitPlan::new(year, m).expect("canonical plan")).collect()
}

/// Buy-and-hold: always predict up.
pub fn naive_predict(test_rows: &DesignMatrix) -> Vec<u8> {
    vec![1; test_rows.n_rows()]
}

pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty prediction set".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarPath {
    NoDiscordance,
    ExactBinomial,
    ChiSquare,
}

/// Paired correctness table: `both`, `a_only`, `b_only`, `neither` correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub both: u32,
    pub a_only: u32,
    pub b_only: u32,
    pub neither: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub table: Contingency,
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub path: McNemarPath,
}

/// Two-sided exact binomial p-value for `k = min(b, c)` of `n = b + c` at one half.
fn exact_binomial_two_sided(b: u32, c: u32) -> f64 {
    let n = u64::from(b + c);
    let k = u64::from(b.min(c));
    let mut coef: u128 = 1;
    let mut tail: u128 = 0;
    for i in 0..=k {
        if i > 0 {
            coef = coef * u128::from(n - i + 1) / u128::from(i);
        }
        tail += coef;
    }
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf(stat: f64) -> f64 {
    erfc((stat / 2.0).sqrt())
}

pub fn mcnemar_counts(b: u32, c: u32) -> (Option<f64>, f64, McNemarPath) {
    let n = b + c;
    if n == 0 {
        (None, 1.0, McNemarPath::NoDiscordance)
    } else if n < EXACT_THRESHOLD {
        (None, exact_binomial_two_sided(b, c), McNemarPath::ExactBinomial)
    } else {
        let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
        let stat = diff * diff / n as f64;
        (Some(stat), chi2_1_sf(stat).min(1.0), McNemarPath::ChiSquare)
    }
}

pub fn mcnemar(pred_a: &[u8], pred_b: &[u8], truth: &[u8]) -> Result<McNemar> {
    if pred_a.len() != truth.len() || pred_b.len() != truth.len() {
        return Err(Error::Shape("McNemar inputs differ in length".into()));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("McNemar test on zero observations".into()));
    }
    let mut table = Contingency {
        both: 0,
        a_only: 0,
        b_only: 0,
        neither: 0,
    };
    for ((a, b), t) in pred_a.iter().zip(pred_b).zip(truth) {
        match (a == t, b == t) {
            (true, true) => table.both += 1,
            (true, false) => table.a_only += 1,
            (false, true) => table.b_only += 1,
            (false, false) => table.neither += 1,
        }
    }
    let (statistic, p_value, path) = mcnemar_counts(table.a_only, table.b_only);
    Ok(McNemar {
        table,
        statistic,
        p_value,
        path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: SplitPlan,
    pub acc_naive: f64,
    pub acc_bert: f64,
    pub acc_gpt: f64,
    pub p_bert_vs_naive: f64,
    pub p_gpt_vs_naive: f64,
    pub n_test: usize,
    pub bert_vs_naive: McNemar,
    pub gpt_vs_naive: McNemar,
    pub bert_fit: glm::FitResult,
    pub gpt_fit: glm::FitResult,
}

fn rows_where(design: &DesignMatrix, pred: impl Fn(chrono::NaiveDate) -> bool) -> Vec<usize> {
    design
        .rows
        .iter()
        .enumerate()
        .filter(|(_, k)| pred(k.date))
        .map(|(i, _)| i)
        .collect()
}

pub fn evaluate_plan(bert: &DesignMatrix, gpt: &DesignMatrix, plan: &SplitPlan) -> Result<EvalReport> {
    plan.validate()?;
    let train = rows_where(bert, |d| plan.is_train(d));
    let test = rows_where(bert, |d| plan.is_test(d));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Plan(format!(
            "plan beginning {} has {} training and {} test rows",
            plan.begin_test(),
            train.len(),
            test.len()
        )));
    }
    let truth: Vec<u8> = test.iter().map(|&i| bert.labels[i]).collect();
    let naive = naive_predict(&bert.select_rows(&test));

    let mut fitted = Vec::with_capacity(2);
    for design in [bert, gpt] {
        let fit = glm::fit(&design.select_rows(&train))?;
        let pred = fit.predict(&design.select_rows(&test))?;
        fitted.push((fit, pred));
    }
    let (gpt_fit, gpt_pred) = fitted.pop().expect("two fits");
    let (bert_fit, bert_pred) = fitted.pop().expect("two fits");

    let bert_vs_naive = mcnemar(&bert_pred, &naive, &truth)?;
    let gpt_vs_naive = mcnemar(&gpt_pred, &naive, &truth)?;
    Ok(EvalReport {
        split: *plan,
        acc_naive: accuracy(&naive, &truth)?,
        acc_bert: accuracy(&bert_pred, &truth)?,
        acc_gpt: accuracy(&gpt_pred, &truth)?,
        p_bert_vs_naive: bert_vs_naive.p_value,
        p_gpt_vs_naive: gpt_vs_naive.p_value,
        n_test: test.len(),
        bert_vs_naive,
        gpt_vs_naive,
        bert_fit,
        gpt_fit,
    })
}

/// Evaluate every plan on the two stacked designs, which must share rows.
pub fn run_splits(bert: &DesignMatrix, gpt: &DesignMatrix, plans: &[SplitPlan]) -> Result<Vec<EvalReport>> {
    if bert.rows != gpt.rows || bert.labels != gpt.labels {
        return Err(Error::Alignment("bert and gpt designs cover different rows".into()));
    }
    if bert.rows.is_empty() && bert.n_rows() > 0 {
        return Err(Error::Precondition("design rows carry no dates".into()));
    }
    plans.iter().map(|p| evaluate_plan(bert, gpt, p)).collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn sci(p: f64) -> String {
    format!("{p:.2e}")
}

pub const RESULTS_HEADER: &str = "begin_test,acc_naive,acc_bert,p_bert_naive,acc_gpt,p_gpt_naive,n_test";

pub fn results_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.split.begin_test(),
            pct(r.acc_naive),
            pct(r.acc_bert),
            sci(r.p_bert_vs_naive),
            pct(r.acc_gpt),
            sci(r.p_gpt_vs_naive),
            r.n_test
        );
    }
    out
}

pub fn results_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<11} {:>8} {:>8} {:>10} {:>8} {:>10} {:>7}",
        "Begin test", "Naive", "BERT", "p-value", "GPT", "p-value", "n_test"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<11} {:>7}% {:>7}% {:>10} {:>7}% {:>10} {:>7}",
            r.split.begin_test(),
            pct(r.acc_naive),
            pct(r.acc_bert),
            sci(r.p_bert_vs_naive),
            pct(r.acc_gpt),
            sci(r.p_gpt_vs_naive),
            r.n_test
        );
    }
    out
}

/// Gaussian kernel density on an evenly spaced grid, Silverman bandwidth.
pub fn kde(values: &[f64], lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
    let n = values.len();
    let grid = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64);
    if n == 0 {
        return grid.map(|x| (x, 0.0)).collect();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    let sd = var.sqrt();
    let h = if sd > 0.0 {
        1.06 * sd * (n as f64).powf(-0.2)
    } else {
        0.1
    };
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.map(|x| {
        let d: f64 = values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
        (x, d * norm)
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvantageSummary {
    pub company: String,
    pub advantage: u32,
    pub disadvantage: u32,
    pub equal: u32,
}

pub fn advantage_summary(features: &[DailyFeatures]) -> Vec<AdvantageSummary> {
    let mut out: Vec<AdvantageSummary> = Vec::new();
    for f in features {
        let idx = match out.iter().position(|s| s.company == f.company) {
            Some(i) => i,
            None => {
                out.push(AdvantageSummary {
                    company: f.company.clone(),
                    advantage: 0,
                    disadvantage: 0,
                    equal: 0,
                });
                out.len() - 1
            }
        };
        out[idx].advantage += f.adv_count;
        out[idx].disadvantage += f.dis_count;
        out[idx].equal += f.equal_count();
    }
    out
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub files: Vec<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

const KDE_POINTS: usize = 101;

/// Write the results table, the per-company density and scatter data and
/// the advantage summary into `dir`. Only days with messages enter the
/// density and scatter data.
pub fn emit_report(dir: &Path, reports: &[EvalReport], eda: &[DailyFeatures]) -> Result<ReportBundle> {
    if reports.is_empty() {
        return Err(Error::Precondition("no reports to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bundle = ReportBundle::default();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write_text(&p, &text)?;
        bundle.files.push(p);
        Ok(())
    };

    put("results.csv", results_csv(reports))?;
    put("results.txt", results_text(reports))?;
    let json = serde_json::to_string_pretty(reports).map_err(|e| Error::io(dir, e.into()))?;
    put("reports.json", json + "\n")?;

    let active: Vec<&DailyFeatures> = eda.iter().filter(|f| f.msg_count > 0).collect();
    let mut companies: Vec<&str> = Vec::new();
    for f in eda {
        if !companies.contains(&f.company.as_str()) {
            companies.push(&f.company);
        }
    }
    type Measure = (&'static str, fn(&DailyFeatures) -> f64, f64, f64);
    let measures: [Measure; 2] = [
        ("avg_sentiment", |f| f.avg_sentiment, -2.0, 2.0),
        ("avg_advantage", |f| f.avg_advantage, -1.0, 1.0),
    ];
    for company in &companies {
        for (measure, get, lo, hi) in &measures {
            let vals: Vec<f64> = active.iter().filter(|f| f.company == *company).map(|f| get(f)).collect();
            let mut text = String::from("x,density\n");
            for (x, d) in kde(&vals, *lo, *hi, KDE_POINTS) {
                let _ = writeln!(text, "{x:.4},{d:.6}");
            }
            put(&format!("density_{measure}_{company}.csv"), text)?;
        }
    }

    let mut scatter = String::from("company,date,avg_sentiment,avg_advantage\n");
    for f in &active {
        let _ = writeln!(scatter, "{},{},{},{}", f.company, f.date, f.avg_sentiment, f.avg_advantage);
    }
    put("scatter.csv", scatter)?;

    let summary_path = dir.join("advantage_summary.csv");
    ingest::write_csv(&summary_path, &advantage_summary(eda))?;
    bundle.files.push(summary_path);
    Ok(bundle)
}
