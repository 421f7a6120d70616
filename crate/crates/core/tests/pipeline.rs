use std::path::Path;

use twitsent::featurize::{read_features_csv, DailyFeatures};
use twitsent::ingest::{self, Format, RawMessage};
use twitsent::pipeline::{files, Manifest, Pipeline, PipelineConfig, Stage};
use twitsent::respparse::{SentimentRecord, Status};
use twitsent::synth::{self, SynthCorpus, SynthParams};
use twitsent::textprep::CleanedMessage;

fn small(seed: u64) -> SynthParams {
    let mut p = SynthParams::new(seed);
    p.messages_per_day = 12;
    p
}

fn fixture(dir: &Path, params: &SynthParams) -> (SynthCorpus, Pipeline) {
    let corpus = synth::generate(params);
    let cfg = synth::write_fixture(dir, params, &corpus).unwrap();
    (corpus, Pipeline::new(PipelineConfig::load(&cfg).unwrap()))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn manifest(p: &Pipeline) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(p.out(files::MANIFEST)).unwrap()).unwrap()
}

#[test]
fn recovers_generated_features_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, p) = fixture(dir.path(), &small(5));
    p.run().unwrap();
    let got = read_features_csv(&p.out(files::FEATURES_GPT)).unwrap();
    assert_eq!(got.len(), corpus.truth.len());
    for (g, t) in got.iter().zip(&corpus.truth) {
        assert_eq!(g, t);
    }
}

#[test]
fn reposts_and_links_are_handled_by_cleaning() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, p) = fixture(dir.path(), &small(6));
    p.clean().unwrap();
    let llm: Vec<CleanedMessage> = read_jsonl(&p.out(files::CLEANED_LLM));
    assert!(llm.len() < corpus.messages.len(), "reposts should be dropped");
    assert!(llm.iter().all(|m| !m.body.contains("https://")));
    let bodies: std::collections::HashSet<(&str, &str)> =
        llm.iter().map(|m| (m.ticker.as_str(), m.body.as_str())).collect();
    assert_eq!(bodies.len(), llm.len());
}

#[test]
fn na_share_is_near_configured_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let (_, p) = fixture(dir.path(), &small(7));
    p.clean().unwrap();
    p.score().unwrap();
    let recs: Vec<SentimentRecord> = read_jsonl(&p.out(files::RECORDS_GPT));
    let na = recs.iter().filter(|r| r.status == Status::Na).count() as f64 / recs.len() as f64;
    assert!((na - 0.175).abs() < 0.02, "NA share {na}");
    assert!(recs.iter().all(|r| r.status != Status::Unparseable));
}

#[test]
fn unchanged_stages_are_skipped_and_force_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let (_, p) = fixture(dir.path(), &small(8));
    assert!(p.run().unwrap().iter().all(|o| !o.skipped));
    let table = std::fs::read(p.out("report/results.csv")).unwrap();
    assert!(p.run().unwrap().iter().all(|o| o.skipped));

    let forced = Pipeline::new(p.config.clone()).with_force(true);
    assert!(forced.run().unwrap().iter().all(|o| !o.skipped));
    assert_eq!(std::fs::read(p.out("report/results.csv")).unwrap(), table);

    // an edited output invalidates its stage only
    std::fs::write(p.out(files::FIT_GPT), "{}").unwrap();
    let again = p.run().unwrap();
    let reran: Vec<Stage> = again.iter().filter(|o| !o.skipped).map(|o| o.stage).collect();
    assert_eq!(reran, vec![Stage::Fit]);
}

#[test]
fn changed_input_reruns_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, p) = fixture(dir.path(), &small(9));
    p.run().unwrap();
    let mut msgs = corpus.messages.clone();
    msgs.truncate(msgs.len() - 50);
    ingest::write_messages(&p.config.paths.messages, &msgs, Format::Jsonl).unwrap();
    let outcomes = p.run().unwrap();
    assert!(!outcomes[0].skipped);
    assert!(!outcomes[1].skipped);
}

#[test]
fn failure_marks_stage_and_successors_stale() {
    let dir = tempfile::tempdir().unwrap();
    let (_, p) = fixture(dir.path(), &small(10));
    p.run().unwrap();
    std::fs::write(&p.config.paths.prices, "company,date,adjusted_close\nAAPL,2017-01-03,-1\n").unwrap();
    let err = p.run().unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let m = manifest(&p);
    assert!(!m.stages[&Stage::Clean].stale);
    assert!(!m.stages[&Stage::Score].stale);
    for s in [Stage::Featurize, Stage::Fit, Stage::Evaluate, Stage::Report] {
        assert!(m.stages[&s].stale, "{s:?}");
    }
}

#[test]
fn bert_set_falls_back_to_chat_sentiment() {
    let dir = tempfile::tempdir().unwrap();
    let (_, p) = fixture(dir.path(), &small(12));
    let mut cfg = p.config.clone();
    cfg.paths.bert_sentiments = None;
    let p = Pipeline::new(cfg);
    p.run().unwrap();
    let gpt: Vec<DailyFeatures> = read_features_csv(&p.out(files::FEATURES_GPT)).unwrap();
    let bert: Vec<DailyFeatures> = read_features_csv(&p.out(files::FEATURES_BERT)).unwrap();
    for (g, b) in gpt.iter().zip(&bert) {
        assert_eq!((g.avg_sentiment, g.msg_count), (b.avg_sentiment, b.msg_count));
        assert_eq!((b.adv_count, b.dis_count), (0, 0));
    }
}

#[test]
fn duplicate_only_corpus_keeps_first_occurrences() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, p) = fixture(dir.path(), &small(13));
    let first: RawMessage = corpus.messages[0].clone();
    let copies: Vec<RawMessage> = (0..5)
        .map(|i| RawMessage {
            id: format!("dup{i}"),
            timestamp_utc: first.timestamp_utc + chrono::Duration::minutes(i),
            ..first.clone()
        })
        .collect();
    ingest::write_messages(&p.config.paths.messages, &copies, Format::Jsonl).unwrap();
    p.clean().unwrap();
    let llm: Vec<CleanedMessage> = read_jsonl(&p.out(files::CLEANED_LLM));
    let bert: Vec<CleanedMessage> = read_jsonl(&p.out(files::CLEANED_BERT));
    assert_eq!(llm.len(), 1);
    assert_eq!(llm[0].id, "dup0");
    assert_eq!(bert.len(), 1);
}

#[test]
fn report_files_per_company_and_measure() {
    let dir = tempfile::tempdir().unwrap();
    let (_, p) = fixture(dir.path(), &small(14));
    p.run().unwrap();
    let report = p.out(files::REPORT_DIR);
    for measure in ["avg_sentiment", "avg_advantage"] {
        for t in ["AAPL", "TSLA"] {
            assert!(report.join(format!("density_{measure}_{t}.csv")).exists());
        }
    }
    let csv = std::fs::read_to_string(report.join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "begin_test,acc_naive,acc_bert,p_bert_naive,acc_gpt,p_gpt_naive,n_test");
    assert_eq!(lines.len(), 7);
    let n_test: Vec<&str> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(n_test, ["378", "340", "296", "252", "212", "166"]);
    let summary = std::fs::read_to_string(report.join("advantage_summary.csv")).unwrap();
    assert!(summary.starts_with("company,advantage,disadvantage,equal\nAAPL,"));
}
