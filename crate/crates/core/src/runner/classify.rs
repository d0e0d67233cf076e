use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::manifest::{render_anomalies, render_predictions, AnomalyRecord, ArticleRecord, ChunkRecord};
use super::{write_atomic, RunConfig, RunManifest, RunStatus, RunnerError};
use crate::corpus::{load_articles_from, split, Article, CorpusError, SplitAssignment};
use crate::exec::Execution;
use crate::gateway::{
    BackendKind, CompletionBackend, CompletionRequest, CompletionResponse, EndpointKind, FixtureStore, Gateway,
    LiveBackend, MockBackend, ReplayBackend, RetryPolicy, RunLog, FINETUNE_SEPARATOR,
};
use crate::parsing::{aggregate_chunks, parse_for, strip_stop_marker, ParseOptions, ParsedCompletion};
use crate::prompting::{
    build_instruction, check_instruction_size, estimate_tokens, framing_tokens, join_prompt, plan_chunks,
    PromptPattern, TokenBudget,
};
use crate::techniques::cards;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const ANOMALIES_FILE: &str = "anomalies.tsv";
pub const SPLIT_FILE: &str = "split.txt";

pub fn build_backend(cfg: &RunConfig) -> Result<Box<dyn CompletionBackend>, RunnerError> {
    Ok(match cfg.backend {
        BackendKind::Live => Box::new(LiveBackend::from_env(cfg.base_url.as_deref(), RetryPolicy::default())?),
        BackendKind::Replay => {
            let dir = cfg
                .fixtures
                .as_deref()
                .ok_or_else(|| RunnerError::Config("--fixtures is required for the replay backend".into()))?;
            if !dir.is_dir() {
                return Err(RunnerError::Config(format!("fixture directory {} does not exist", dir.display())));
            }
            Box::new(ReplayBackend::new(FixtureStore::new(dir)))
        }
        BackendKind::Mock => {
            let rules = cfg
                .mock_rules
                .as_deref()
                .ok_or_else(|| RunnerError::Config("--mock-rules is required for the mock backend".into()))?;
            Box::new(MockBackend::from_jsonl(rules)?)
        }
    })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Successful responses already in the run log, by request hash.
fn resumable(path: &Path) -> Result<HashMap<String, CompletionResponse>, RunnerError> {
    if !path.exists() {
        return Ok(HashMap::new());
    }
    let mut done = HashMap::new();
    for entry in RunLog::read_entries(path)? {
        if let Some(resp) = entry.response() {
            done.insert(entry.request_hash, resp);
        }
    }
    Ok(done)
}

struct Job<'a> {
    cfg: &'a RunConfig,
    instruction: &'a str,
    suffix: &'a str,
    budget: &'a TokenBudget,
    gateway: &'a Gateway,
    done: &'a HashMap<String, CompletionResponse>,
}

impl Job<'_> {
    fn run(&self, article: &Article) -> ArticleRecord {
        let mut record = ArticleRecord {
            article_id: article.id.clone(),
            chunks: Vec::new(),
            labels: Default::default(),
            rationales: Default::default(),
            anomalies: Vec::new(),
            error: None,
        };
        let plan = match plan_chunks(article, self.budget) {
            Ok(p) => p,
            Err(e) => {
                record.error = Some(e.to_string());
                return record;
            }
        };
        let mut parsed: Vec<ParsedCompletion> = Vec::with_capacity(plan.chunks.len());
        for chunk in &plan.chunks {
            let input = format!("{}{}", join_prompt(self.instruction, &chunk.text), self.suffix);
            let req = CompletionRequest::deterministic(self.cfg.model.clone(), input, self.cfg.completion_reserve);
            let result = match self.done.get(&req.request_hash) {
                Some(r) => Ok(r.clone()),
                None => self.gateway.complete(&req),
            };
            let mut chunk_record = ChunkRecord {
                index: chunk.index,
                start: chunk.start,
                end: chunk.end,
                token_estimate: chunk.token_estimate,
                request_hash: req.request_hash.clone(),
                finish_reason: None,
                error: None,
            };
            match result {
                Ok(resp) => {
                    chunk_record.finish_reason = Some(resp.finish_reason);
                    let text = match self.cfg.model.endpoint_kind {
                        EndpointKind::Completion => strip_stop_marker(&resp.text),
                        EndpointKind::Chat => resp.text.as_str(),
                    };
                    let p = parse_for(self.cfg.pattern, text, resp.finish_reason, ParseOptions::default());
                    record.anomalies.extend(p.anomalies.iter().map(|a| AnomalyRecord {
                        chunk: chunk.index,
                        kind: a.kind,
                        detail: a.detail.clone(),
                    }));
                    parsed.push(p);
                }
                Err(e) => {
                    log::warn!("article {} chunk {}: {e}", article.id, chunk.index);
                    chunk_record.error = Some(e.to_string());
                    if record.error.is_none() {
                        record.error = Some(format!("chunk {}: {e}", chunk.index));
                    }
                }
            }
            record.chunks.push(chunk_record);
        }
        if record.error.is_none() {
            match aggregate_chunks(&parsed) {
                Ok(agg) => {
                    record.labels = agg.labels;
                    record.rationales = agg.rationales;
                }
                Err(e) => record.error = Some(e.to_string()),
            }
        } else {
            record.labels.clear();
        }
        record
    }
}

/// Classify every article of the chosen split and persist the run under
/// `cfg.out`. Re-running into the same directory resumes: requests with a
/// successful run-log entry are not re-issued.
pub fn cmd_classify(cfg: &RunConfig) -> Result<RunManifest, RunnerError> {
    let assignment = match &cfg.split_manifest {
        Some(p) => Some(SplitAssignment::read(p)?),
        None => None,
    };
    classify_with_split(cfg, assignment)
}

pub(crate) fn classify_with_split(
    cfg: &RunConfig,
    assignment: Option<SplitAssignment>,
) -> Result<RunManifest, RunnerError> {
    fs::create_dir_all(&cfg.out).map_err(|e| RunnerError::io(&cfg.out, e))?;
    let manifest_path = cfg.out.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let previous = RunManifest::read(&manifest_path)?;
        if previous.config != *cfg {
            return Err(RunnerError::Config(format!(
                "{} holds a run with a different configuration; choose another --out",
                cfg.out.display()
            )));
        }
    }

    let articles = load_articles_from(&cfg.corpus)?;
    let assignment = match assignment {
        Some(a) => a,
        None => split(&articles, cfg.validation_fraction, cfg.seed)?,
    };
    let split_name = cfg.split_name.unwrap_or(assignment.evaluation_split());
    let ids = assignment.ids(split_name).to_vec();
    if ids.is_empty() {
        return Err(RunnerError::Config(format!("split {} is empty", split_name.as_str())));
    }
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let selected: Vec<Article> = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|a| (*a).clone())
                .ok_or_else(|| CorpusError::UnknownArticle(id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let instruction = build_instruction(cfg.pattern, cards())?;
    let instruction_tokens = estimate_tokens(&instruction);
    if cfg.pattern == PromptPattern::Base {
        check_instruction_size(instruction_tokens);
    }
    let suffix = match cfg.model.endpoint_kind {
        EndpointKind::Completion => FINETUNE_SEPARATOR,
        EndpointKind::Chat => "",
    };
    let overhead = instruction_tokens + framing_tokens(&instruction) + estimate_tokens(suffix);
    let budget = TokenBudget::new(cfg.model.max_tokens, cfg.completion_reserve, overhead)?;

    let runlog_path = cfg.out.join(RUNLOG_FILE);
    let done = resumable(&runlog_path)?;
    if !done.is_empty() {
        log::info!("resuming: {} completed request(s) in {}", done.len(), runlog_path.display());
    }
    let mut gateway = Gateway::new(build_backend(cfg)?)
        .with_log(RunLog::open(&runlog_path)?)
        .with_concurrency(cfg.concurrency);
    if let Some(dir) = &cfg.record {
        gateway = gateway.with_recorder(FixtureStore::create(dir)?, cfg.overwrite_fixtures);
    }

    write_atomic(&cfg.out.join(SPLIT_FILE), assignment.to_manifest().as_bytes())?;
    let mut manifest = RunManifest {
        version: super::manifest::MANIFEST_VERSION,
        status: RunStatus::Incomplete,
        config: cfg.clone(),
        split: assignment,
        split_name,
        article_ids: ids,
        instruction_tokens,
        chunk_budget: budget.chunk_budget(),
        articles: Vec::new(),
        failed: 0,
        started_at: now(),
        finished_at: None,
    };
    manifest.write(&manifest_path)?;

    let job = Job {
        cfg,
        instruction: &instruction,
        suffix,
        budget: &budget,
        gateway: &gateway,
        done: &done,
    };
    manifest.articles = Execution::Parallel.map_bounded(&selected, cfg.concurrency, |a| job.run(a));
    manifest.failed = manifest.articles.iter().filter(|a| !a.succeeded()).count();
    let total = manifest.articles.len();
    let over = manifest.failed as f64 / total as f64 > cfg.failure_threshold;
    manifest.status = if over { RunStatus::Failed } else { RunStatus::Complete };
    manifest.finished_at = Some(now());

    write_atomic(&cfg.out.join(PREDICTIONS_FILE), render_predictions(&manifest.articles).as_bytes())?;
    write_atomic(&cfg.out.join(ANOMALIES_FILE), render_anomalies(&manifest.articles).as_bytes())?;
    manifest.write(&manifest_path)?;
    log::info!(
        "classified {} article(s), {} failed, {} anomaly finding(s)",
        total,
        manifest.failed,
        manifest.articles.iter().map(|a| a.anomalies.len()).sum::<usize>()
    );
    if over {
        return Err(RunnerError::FailureThreshold {
            failed: manifest.failed,
            total,
            threshold: cfg.failure_threshold,
        });
    }
    Ok(manifest)
}
