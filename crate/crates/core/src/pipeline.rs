//! Stage orchestration: clean, score, featurize, fit, evaluate, report.
//!
//! Every stage reads its inputs from disk and writes its outputs into the
//! configured output directory. A manifest records, per stage, a digest of
//! the inputs and of each output; a stage whose inputs and outputs still
//! match is skipped unless `force` is set. When a stage fails, its entry
//! and those of all later stages are marked stale.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::error::{Error, Result};
use crate::evalstat::{self, EvalReport, SplitPlan};
use crate::featurize::{self, CompanyBlock, DailyFeatures, DesignMatrix, RegressorSet, TradingCalendar};
use crate::glm;
use crate::ingest::{self, Format, MovementLabel};
use crate::promptkit::{build_prompt_for, CompanyContext, PromptBundle};
use crate::respparse::{parse_response, SentimentRecord, Status};
use crate::scorer::{self, CostLedger, ProviderConfig, ProviderKind};
use crate::textprep::{clean_corpus, CleanedMessage, CleaningProfile, DedupRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub messages: PathBuf,
    pub prices: PathBuf,
    /// Five-class probabilities for BERT-cleaned messages. When absent the
    /// BERT set reuses the sentiment block of the chat-model records.
    #[serde(default)]
    pub bert_sentiments: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn default_plans() -> Vec<u32> {
    (4..=9).collect()
}

fn default_year() -> i32 {
    2017
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for the mock provider; overrides `provider.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_year")]
    pub year: i32,
    /// First test month of each split plan.
    #[serde(default = "default_plans")]
    pub split_plans: Vec<u32>,
    pub companies: Vec<CompanyContext>,
    pub paths: Paths,
    #[serde(default)]
    pub provider: ProviderConfig,
}

impl PipelineConfig {
    /// Parse a TOML config. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.paths.messages);
        resolve(&mut cfg.paths.prices);
        resolve(&mut cfg.paths.output_dir);
        if let Some(p) = cfg.paths.bert_sentiments.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.provider.cache_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.provider.external_path.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.companies.is_empty() {
            return Err(Error::Config("at least one company is required".into()));
        }
        let mut tickers = HashSet::new();
        let mut keys = HashSet::new();
        for c in &self.companies {
            c.validate()?;
            if !tickers.insert(&c.ticker_symbol) {
                return Err(Error::Config(format!("ticker {} listed twice", c.ticker_symbol)));
            }
            if !keys.insert(c.column_key()) {
                return Err(Error::Config(format!(
                    "companies share the column key `{}`",
                    c.column_key()
                )));
            }
        }
        if self.split_plans.is_empty() {
            return Err(Error::Config("split_plans is empty".into()));
        }
        for &m in &self.split_plans {
            SplitPlan::new(self.year, m)?;
        }
        self.provider.validate()
    }

    pub fn plans(&self) -> Result<Vec<SplitPlan>> {
        self.split_plans.iter().map(|&m| SplitPlan::new(self.year, m)).collect()
    }

    fn provider(&self) -> ProviderConfig {
        ProviderConfig {
            seed: self.seed,
            ..self.provider.clone()
        }
    }

    fn company(&self, ticker: &str) -> Option<&CompanyContext> {
        self.companies.iter().find(|c| c.ticker_symbol == ticker)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Clean,
    Score,
    Featurize,
    Fit,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Clean,
        Stage::Score,
        Stage::Featurize,
        Stage::Fit,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Clean => "clean",
            Stage::Score => "score",
            Stage::Featurize => "featurize",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

/// Output file names, relative to the output directory.
pub mod files {
    pub const CLEANED_LLM: &str = "cleaned_llm.jsonl";
    pub const CLEANED_BERT: &str = "cleaned_bert.jsonl";
    pub const CLEAN_AUDIT: &str = "clean_audit.jsonl";
    pub const RECORDS_GPT: &str = "records_gpt.jsonl";
    pub const RECORDS_BERT: &str = "records_bert.jsonl";
    pub const COST_LEDGER: &str = "cost_ledger.json";
    pub const FEATURES_GPT: &str = "features_gpt.csv";
    pub const FEATURES_BERT: &str = "features_bert.csv";
    pub const LABELS: &str = "labels.csv";
    pub const DESIGN_GPT: &str = "design_gpt.csv";
    pub const DESIGN_BERT: &str = "design_bert.csv";
    pub const FIT_GPT: &str = "fit_gpt.json";
    pub const FIT_BERT: &str = "fit_bert.json";
    pub const EVALUATION: &str = "evaluation.json";
    pub const REPORT_DIR: &str = "report";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub input_digest: String,
    /// Output path (relative to the output directory) to content digest.
    pub outputs: BTreeMap<String, String>,
    pub stale: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<Stage, ManifestEntry>,
}

impl Manifest {
    fn load(path: &Path) -> Self {
        std::fs::read_to_string(path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Accumulates a stage's input digest.
struct InputDigest(Sha256);

impl InputDigest {
    fn new(stage: Stage) -> Self {
        let mut h = Sha256::new();
        h.update(stage.as_str().as_bytes());
        InputDigest(h)
    }

    fn value<T: Serialize>(mut self, v: &T) -> Self {
        let json = serde_json::to_vec(v).expect("digestable value");
        self.0.update((json.len() as u64).to_le_bytes());
        self.0.update(&json);
        self
    }

    fn file(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(&bytes);
        Ok(self)
    }

    fn finish(self) -> String {
        hex(&self.0.finalize())
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub outputs: Vec<PathBuf>,
    pub ledger: Option<CostLedger>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub force: bool,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    company: String,
    date: chrono::NaiveDate,
    up: u8,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Pipeline { config, force: false }
    }

    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.paths.output_dir.join(name)
    }

    fn manifest_path(&self) -> PathBuf {
        self.out(files::MANIFEST)
    }

    fn up_to_date(&self, manifest: &Manifest, stage: Stage, digest: &str) -> bool {
        let Some(entry) = manifest.stages.get(&stage) else {
            return false;
        };
        !entry.stale
            && entry.input_digest == digest
            && entry
                .outputs
                .iter()
                .all(|(rel, d)| file_digest(&self.out(rel)).is_ok_and(|cur| &cur == d))
    }

    /// Run `body` unless the manifest shows the stage is current.
    fn stage<F>(&self, stage: Stage, digest: Result<String>, body: F) -> Result<StageOutcome>
    where
        F: FnOnce() -> Result<(Vec<PathBuf>, Option<CostLedger>)>,
    {
        let dir = &self.config.paths.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest::load(&self.manifest_path());
        let result = digest.and_then(|digest| {
            if !self.force && self.up_to_date(&manifest, stage, &digest) {
                info!(stage = stage.as_str(), "up to date; skipping");
                let outputs = manifest.stages[&stage].outputs.keys().map(|r| self.out(r)).collect();
                return Ok((digest, true, outputs, None));
            }
            info!(stage = stage.as_str(), "running");
            let (outputs, ledger) = body()?;
            Ok((digest, false, outputs, ledger))
        });
        match result {
            Ok((digest, skipped, outputs, ledger)) => {
                if !skipped {
                    let mut entry = ManifestEntry {
                        input_digest: digest,
                        outputs: BTreeMap::new(),
                        stale: false,
                    };
                    for p in &outputs {
                        let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned();
                        entry.outputs.insert(rel, file_digest(p)?);
                    }
                    manifest.stages.insert(stage, entry);
                    manifest.save(&self.manifest_path())?;
                }
                Ok(StageOutcome {
                    stage,
                    skipped,
                    outputs,
                    ledger,
                })
            }
            Err(e) => {
                for s in Stage::ALL.iter().filter(|s| **s >= stage) {
                    manifest.stages.entry(*s).or_default().stale = true;
                }
                manifest.save(&self.manifest_path())?;
                Err(e)
            }
        }
    }

    pub fn clean(&self) -> Result<StageOutcome> {
        let msgs_path = &self.config.paths.messages;
        let digest = InputDigest::new(Stage::Clean).file(msgs_path).map(InputDigest::finish);
        self.stage(Stage::Clean, digest, || {
            let msgs = ingest::load_messages(msgs_path, Format::from_path(msgs_path))?;
            let seen = DedupRegistry::build(&msgs);
            let (llm, mut audit) = clean_corpus(&CleaningProfile::llm(), &msgs, &seen);
            let (bert, bert_audit) = clean_corpus(&CleaningProfile::bert(), &msgs, &seen);
            audit.extend(bert_audit);
            let dropped = audit.iter().filter(|a| a.dropped).count();
            info!(messages = msgs.len(), llm = llm.len(), bert = bert.len(), dropped, "cleaned");
            let outs = [files::CLEANED_LLM, files::CLEANED_BERT, files::CLEAN_AUDIT].map(|f| self.out(f));
            ingest::write_jsonl(&outs[0], &llm)?;
            ingest::write_jsonl(&outs[1], &bert)?;
            ingest::write_jsonl(&outs[2], &audit)?;
            Ok((outs.to_vec(), None))
        })
    }

    fn read_cleaned(&self, name: &str) -> Result<Vec<CleanedMessage>> {
        ingest::read_jsonl_records(&self.out(name))
    }

    pub fn score(&self) -> Result<StageOutcome> {
        let provider = self.config.provider();
        let digest = (|| {
            let mut d = InputDigest::new(Stage::Score)
                .value(&provider)
                .value(&self.config.companies)
                .value(&self.config.paths.bert_sentiments.is_some())
                .file(&self.out(files::CLEANED_LLM))?
                .file(&self.out(files::CLEANED_BERT))?;
            for p in [&self.config.paths.bert_sentiments, &provider.external_path].into_iter().flatten() {
                d = d.file(p)?;
            }
            if provider.kind == ProviderKind::Replay {
                d = d.file(provider.cache_path.as_ref().expect("validated"))?;
            }
            Ok(d.finish())
        })();
        self.stage(Stage::Score, digest, || {
            let llm = self.read_cleaned(files::CLEANED_LLM)?;
            let in_scope: Vec<&CleanedMessage> = llm.iter().filter(|m| self.config.company(&m.ticker).is_some()).collect();
            if in_scope.len() < llm.len() {
                warn!(skipped = llm.len() - in_scope.len(), "messages for tickers not in the config are not scored");
            }

            let (gpt, ledger) = if provider.kind == ProviderKind::ExternalFile {
                let rows = scorer::load_external_sentiments(provider.external_path.as_ref().expect("validated"))?;
                (external_records(&rows, &in_scope), None)
            } else {
                let bundles: Vec<PromptBundle> = in_scope
                    .iter()
                    .map(|m| {
                        let ctx = self.config.company(&m.ticker).expect("filtered");
                        build_prompt_for(&m.id, &m.body, ctx, &provider.model_id)
                    })
                    .collect::<Result<_>>()?;
                let out = scorer::score_batch(&bundles, &provider)?;
                let records: Vec<SentimentRecord> = out.responses.iter().map(parse_response).collect();
                (records, Some(out.ledger))
            };
            let na = gpt.iter().filter(|r| r.status == Status::Na).count();
            let bad = gpt.iter().filter(|r| r.status == Status::Unparseable).count();
            info!(records = gpt.len(), na, unparseable = bad, "scored");

            let bert = match &self.config.paths.bert_sentiments {
                Some(path) => {
                    let cleaned = self.read_cleaned(files::CLEANED_BERT)?;
                    let scoped: Vec<&CleanedMessage> =
                        cleaned.iter().filter(|m| self.config.company(&m.ticker).is_some()).collect();
                    external_records(&scorer::load_external_sentiments(path)?, &scoped)
                }
                None => gpt
                    .iter()
                    .map(|r| match (r.status, r.sentiment) {
                        (Status::Parsed, Some(s)) => SentimentRecord::sentiment_only(r.message_id.clone(), s),
                        _ => SentimentRecord {
                            message_id: r.message_id.clone(),
                            status: r.status,
                            sentiment: None,
                            advantage: None,
                            relation: None,
                        },
                    })
                    .collect(),
            };

            let mut outs = vec![self.out(files::RECORDS_GPT), self.out(files::RECORDS_BERT)];
            ingest::write_jsonl(&outs[0], &gpt)?;
            ingest::write_jsonl(&outs[1], &bert)?;
            if let Some(l) = &ledger {
                let p = self.out(files::COST_LEDGER);
                let json = serde_json::json!({
                    "requests": l.requests,
                    "total_usd": l.total_usd(),
                });
                std::fs::write(&p, format!("{json:#}\n")).map_err(|e| Error::io(&p, e))?;
                outs.push(p);
            }
            Ok((outs, ledger))
        })
    }

    pub fn featurize(&self) -> Result<StageOutcome> {
        let digest = (|| {
            Ok(InputDigest::new(Stage::Featurize)
                .value(&self.config.companies)
                .file(&self.config.paths.prices)?
                .file(&self.out(files::CLEANED_LLM))?
                .file(&self.out(files::CLEANED_BERT))?
                .file(&self.out(files::RECORDS_GPT))?
                .file(&self.out(files::RECORDS_BERT))?
                .finish())
        })();
        self.stage(Stage::Featurize, digest, || {
            let prices = ingest::load_prices(&self.config.paths.prices, Format::from_path(&self.config.paths.prices))?;
            let by_company = ingest::prices_by_company(&prices);
            let llm = self.read_cleaned(files::CLEANED_LLM)?;
            let bert = self.read_cleaned(files::CLEANED_BERT)?;
            let gpt_recs: Vec<SentimentRecord> = ingest::read_jsonl_records(&self.out(files::RECORDS_GPT))?;
            let bert_recs: Vec<SentimentRecord> = ingest::read_jsonl_records(&self.out(files::RECORDS_BERT))?;
            // the BERT set falls back to chat-model records, which are keyed by LLM-cleaned ids
            let bert_msgs = if self.config.paths.bert_sentiments.is_some() { &bert } else { &llm };

            let mut feats_gpt = Vec::new();
            let mut feats_bert = Vec::new();
            let mut labels = Vec::new();
            for ctx in &self.config.companies {
                let bars = by_company.get(&ctx.ticker_symbol).ok_or_else(|| {
                    Error::InsufficientData(format!("no prices for {}", ctx.ticker_symbol))
                })?;
                let days: Vec<_> = bars.iter().map(|b| b.date).collect();
                let calendar = TradingCalendar::new(&days)?;
                let lab = ingest::derive_labels(bars)?;
                feats_gpt.extend(company_features(ctx, &calendar, &llm, &gpt_recs)?);
                feats_bert.extend(company_features(ctx, &calendar, bert_msgs, &bert_recs)?);
                labels.extend(lab.into_iter().map(|l| LabelRow {
                    company: ctx.ticker_symbol.clone(),
                    date: l.date,
                    up: l.up,
                }));
            }

            let outs = [
                files::FEATURES_GPT,
                files::FEATURES_BERT,
                files::LABELS,
                files::DESIGN_GPT,
                files::DESIGN_BERT,
            ]
            .map(|f| self.out(f));
            featurize::write_features_csv(&outs[0], &feats_gpt)?;
            featurize::write_features_csv(&outs[1], &feats_bert)?;
            ingest::write_csv(&outs[2], &labels)?;
            let (gpt, bert) = self.designs_from(&feats_gpt, &feats_bert, &labels)?;
            gpt.write_csv(&outs[3])?;
            bert.write_csv(&outs[4])?;
            Ok((outs.to_vec(), None))
        })
    }

    fn designs_from(
        &self,
        feats_gpt: &[DailyFeatures],
        feats_bert: &[DailyFeatures],
        labels: &[LabelRow],
    ) -> Result<(DesignMatrix, DesignMatrix)> {
        let pick = |f: &[DailyFeatures], t: &str| -> Vec<DailyFeatures> {
            f.iter().filter(|x| x.company == t).cloned().collect()
        };
        let mut per: Vec<(Vec<DailyFeatures>, Vec<DailyFeatures>, Vec<MovementLabel>)> = Vec::new();
        for ctx in &self.config.companies {
            let t = &ctx.ticker_symbol;
            let lab = labels
                .iter()
                .filter(|l| &l.company == t)
                .map(|l| MovementLabel { date: l.date, up: l.up })
                .collect();
            per.push((pick(feats_gpt, t), pick(feats_bert, t), lab));
        }
        let blocks = |bert: bool| -> Vec<CompanyBlock> {
            self.config
                .companies
                .iter()
                .zip(&per)
                .map(|(company, (g, b, l))| CompanyBlock {
                    company,
                    features: if bert { b } else { g },
                    labels: l,
                })
                .collect()
        };
        Ok((
            featurize::stack(&blocks(false), RegressorSet::Gpt)?,
            featurize::stack(&blocks(true), RegressorSet::Bert)?,
        ))
    }

    /// Stacked GPT and BERT designs rebuilt from the featurize outputs.
    pub fn load_designs(&self) -> Result<(DesignMatrix, DesignMatrix)> {
        let fg = featurize::read_features_csv(&self.out(files::FEATURES_GPT))?;
        let fb = featurize::read_features_csv(&self.out(files::FEATURES_BERT))?;
        let labels: Vec<LabelRow> = ingest::read_csv_records(&self.out(files::LABELS))?;
        self.designs_from(&fg, &fb, &labels)
    }

    fn company_digest(&self, stage: Stage) -> InputDigest {
        InputDigest::new(stage).value(&self.config.companies)
    }

    fn design_inputs(&self, d: InputDigest) -> Result<InputDigest> {
        d.file(&self.out(files::FEATURES_GPT))?
            .file(&self.out(files::FEATURES_BERT))?
            .file(&self.out(files::LABELS))
    }

    pub fn fit(&self) -> Result<StageOutcome> {
        let digest = self.design_inputs(self.company_digest(Stage::Fit)).map(InputDigest::finish);
        self.stage(Stage::Fit, digest, || {
            let (gpt, bert) = self.load_designs()?;
            let outs = [files::FIT_GPT, files::FIT_BERT].map(|f| self.out(f));
            for (design, path) in [(&gpt, &outs[0]), (&bert, &outs[1])] {
                let fit = glm::fit(design)?;
                write_json(path, &fit)?;
            }
            Ok((outs.to_vec(), None))
        })
    }

    pub fn evaluate(&self) -> Result<StageOutcome> {
        let digest = self
            .design_inputs(
                self.company_digest(Stage::Evaluate)
                    .value(&self.config.year)
                    .value(&self.config.split_plans),
            )
            .map(InputDigest::finish);
        self.stage(Stage::Evaluate, digest, || {
            let (gpt, bert) = self.load_designs()?;
            let reports = evalstat::run_splits(&bert, &gpt, &self.config.plans()?)?;
            let path = self.out(files::EVALUATION);
            write_json(&path, &reports)?;
            Ok((vec![path], None))
        })
    }

    pub fn report(&self) -> Result<StageOutcome> {
        let digest = (|| {
            Ok(InputDigest::new(Stage::Report)
                .file(&self.out(files::EVALUATION))?
                .file(&self.out(files::FEATURES_GPT))?
                .finish())
        })();
        self.stage(Stage::Report, digest, || {
            let reports: Vec<EvalReport> = read_json(&self.out(files::EVALUATION))?;
            let eda = featurize::read_features_csv(&self.out(files::FEATURES_GPT))?;
            let bundle = evalstat::emit_report(&self.out(files::REPORT_DIR), &reports, &eda)?;
            Ok((bundle.files, None))
        })
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        match stage {
            Stage::Clean => self.clean(),
            Stage::Score => self.score(),
            Stage::Featurize => self.featurize(),
            Stage::Fit => self.fit(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
        }
    }

    pub fn run(&self) -> Result<Vec<StageOutcome>> {
        Stage::ALL.iter().map(|&s| self.run_stage(s)).collect()
    }
}

/// Sentiment-only records for the rows whose id is among `messages`.
fn external_records(rows: &[scorer::ExternalSentimentRow], messages: &[&CleanedMessage]) -> Vec<SentimentRecord> {
    let known: HashSet<&str> = messages.iter().map(|m| m.id.as_str()).collect();
    let unknown: HashSet<&str> = scorer::unresolved_ids(rows, &known).into_iter().collect();
    let rows: Vec<_> = rows.iter().filter(|r| !unknown.contains(r.message_id.as_str())).cloned().collect();
    scorer::external_to_records(&rows)
}

fn company_features(
    ctx: &CompanyContext,
    calendar: &TradingCalendar,
    messages: &[CleanedMessage],
    records: &[SentimentRecord],
) -> Result<Vec<DailyFeatures>> {
    let ts: HashMap<&str, DateTime<Utc>> = messages
        .iter()
        .filter(|m| m.ticker == ctx.ticker_symbol)
        .map(|m| (m.id.as_str(), m.timestamp_utc))
        .collect();
    let scored: Vec<(DateTime<Utc>, &SentimentRecord)> = records
        .iter()
        .filter_map(|r| ts.get(r.message_id.as_str()).map(|t| (*t, r)))
        .collect();
    featurize::daily_features(&ctx.ticker_symbol, calendar, &scored)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e))
}
