use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use reasongraph::calibration::{render_table, write_metrics_csv, MetricsReport};
use reasongraph::chain::{parse_dataset, write_dataset, QuestionRecord};
use reasongraph::equivalence::{JudgeCache, JudgeMatcher, StepMatcher};
use reasongraph::estimators::Estimator;
use reasongraph::gateway::{Gateway, GatewayError};
use reasongraph::pipeline::{evaluate_dataset, prepare, score_dataset, MatchStrategy, QuestionScores};
use reasongraph::routing::{read_fixtures, routing_table, Intervention, RoutingTable};

use crate::config::RunConfig;
use crate::UsageError;

const TOOL: &str = "reasongraph";
const VERSION: &str = env!("CARGO_PKG_VERSION");
const GIT_REVISION: Option<&str> = option_env!("REASONGRAPH_GIT_REV");

/// Common header of every JSON artifact.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    git_revision: Option<&'static str>,
    seed: u64,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn artifact_json<T: Serialize>(config: &RunConfig, body: T) -> anyhow::Result<String> {
    let artifact = Artifact {
        tool: TOOL,
        version: VERSION,
        git_revision: GIT_REVISION,
        seed: config.params.seed,
        config,
        body,
    };
    let mut text = serde_json::to_string_pretty(&artifact)?;
    text.push('\n');
    Ok(text)
}

fn write_artifact<T: Serialize>(path: &Path, config: &RunConfig, body: T) -> anyhow::Result<()> {
    let text = artifact_json(config, body)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out_dir(config: &RunConfig) -> anyhow::Result<&Path> {
    let dir = config.out_dir()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn load_dataset(config: &RunConfig) -> anyhow::Result<Vec<QuestionRecord>> {
    let path = config.dataset()?;
    parse_dataset(open(path)?).with_context(|| format!("reading dataset {}", path.display()))
}

#[derive(Debug, Deserialize)]
struct QuestionLine {
    question_id: String,
    question: String,
    #[serde(default)]
    gold_answer: Option<String>,
}

#[derive(Serialize)]
struct SampleMeta<'a> {
    questions: Vec<SampleOutcome>,
    dataset: &'a Path,
}

#[derive(Serialize)]
struct SampleOutcome {
    question_id: String,
    requested: usize,
    parsed: usize,
    dropped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn sample(config: &RunConfig) -> anyhow::Result<()> {
    let questions_path = config
        .questions
        .as_deref()
        .ok_or_else(|| UsageError::new("no questions file given (--questions or `questions` in the config)"))?;
    if config.samples_per_question == 0 {
        bail!(UsageError::new("samples per question must be at least 1"));
    }
    let mut questions = Vec::new();
    for (i, line) in open(questions_path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionLine = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", questions_path.display(), i + 1))?;
        questions.push(q);
    }
    let out_dir = create_out_dir(config)?;
    let gateway = Gateway::from_config(config.gateway.clone())?;
    let n = config.samples_per_question;

    let results: Vec<Result<QuestionRecord, GatewayError>> = questions
        .par_iter()
        .map(|q| {
            let sampled = gateway.sample_chains(&q.question, n)?;
            Ok(sampled.into_record(q.question_id.clone(), q.question.clone(), q.gold_answer.clone())?)
        })
        .collect();

    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    let mut first_error = None;
    for (q, result) in questions.iter().zip(results) {
        match result {
            Ok(record) => {
                outcomes.push(SampleOutcome {
                    question_id: q.question_id.clone(),
                    requested: n,
                    parsed: record.n(),
                    dropped: n - record.n(),
                    error: None,
                });
                records.push(record);
            }
            Err(e) => {
                log::error!("question {}: {e}", q.question_id);
                outcomes.push(SampleOutcome {
                    question_id: q.question_id.clone(),
                    requested: n,
                    parsed: 0,
                    dropped: n,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert((q.question_id.clone(), e));
            }
        }
    }
    let dataset_path = out_dir.join("dataset.jsonl");
    let file = File::create(&dataset_path).with_context(|| format!("writing {}", dataset_path.display()))?;
    write_dataset(BufWriter::new(file), &records)?;
    write_artifact(
        &out_dir.join("sample.json"),
        config,
        SampleMeta { questions: outcomes, dataset: &dataset_path },
    )?;
    println!("sampled {} of {} questions into {}", records.len(), questions.len(), dataset_path.display());
    if let Some((qid, e)) = first_error {
        return Err(anyhow::Error::new(e).context(format!("sampling question {qid}")));
    }
    Ok(())
}

/// Builds the step matcher for the configured strategy; the judge needs a
/// gateway and optionally a verdict cache, which the caller keeps alive.
struct MatcherHost {
    gateway: Option<Gateway>,
    cache: Option<JudgeCache>,
}

impl MatcherHost {
    fn new(config: &RunConfig) -> anyhow::Result<Self> {
        if config.match_strategy != MatchStrategy::Judge {
            return Ok(Self { gateway: None, cache: None });
        }
        let gateway = Gateway::from_config(config.gateway.clone())?;
        let cache = match &config.judge_cache {
            Some(path) => Some(JudgeCache::open(path).with_context(|| format!("opening judge cache {}", path.display()))?),
            None => None,
        };
        Ok(Self { gateway: Some(gateway), cache })
    }

    fn matcher(&self, strategy: MatchStrategy) -> Box<dyn StepMatcher + '_> {
        match &self.gateway {
            Some(g) => Box::new(JudgeMatcher::new(g, self.cache.as_ref())),
            None => strategy.offline_matcher().expect("offline strategy"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ScoresBody {
    questions: Vec<QuestionScores>,
}

#[derive(Deserialize)]
struct ScoresFile {
    config: RunConfig,
    questions: Vec<QuestionScores>,
}

pub fn score(config: &RunConfig) -> anyhow::Result<()> {
    if config.estimators.is_empty() {
        bail!(UsageError::new("no estimators selected"));
    }
    config.params.validate().map_err(|e| UsageError::new(e.to_string()))?;
    let dataset = load_dataset(config)?;
    let out_dir = create_out_dir(config)?;
    let host = MatcherHost::new(config)?;
    let matcher = host.matcher(config.match_strategy);
    let scores = score_dataset(&dataset, matcher.as_ref(), &config.estimators, &config.params)?;
    let failures: usize = scores.iter().map(|s| s.failures.len()).sum();
    let reports: usize = scores.iter().map(|s| s.reports.len()).sum();
    let path = out_dir.join("scores.json");
    write_artifact(&path, config, ScoresBody { questions: scores })?;
    println!(
        "{reports} reports for {} questions ({failures} estimator failures) written to {}",
        dataset.len(),
        path.display()
    );
    Ok(())
}

fn load_scores(config: &RunConfig, explicit: Option<&Path>) -> anyhow::Result<(PathBuf, ScoresFile)> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => config.out_dir()?.join("scores.json"),
    };
    let file: ScoresFile = serde_json::from_reader(open(&path)?)
        .with_context(|| format!("reading scores {}", path.display()))?;
    Ok((path, file))
}

#[derive(Serialize)]
struct MetricsBody<'a> {
    scores: &'a Path,
    metrics: &'a [MetricsReport],
}

pub fn evaluate(config: &RunConfig, scores: Option<&Path>, table: bool) -> anyhow::Result<()> {
    let dataset = load_dataset(config)?;
    if dataset.is_empty() {
        bail!("dataset {} has no questions", config.dataset()?.display());
    }
    let (scores_path, file) = load_scores(config, scores)?;
    let out_dir = create_out_dir(config)?;
    let estimators: Vec<Estimator> = file
        .config
        .estimators
        .iter()
        .copied()
        .filter(|e| file.questions.iter().any(|q| q.report(*e).is_some()))
        .collect();
    if estimators.is_empty() {
        bail!("no estimator reports in {}", scores_path.display());
    }
    let metrics = evaluate_dataset(&dataset, &file.questions, &estimators, config.bins)
        .context("evaluating calibration")?;
    for m in &metrics {
        if m.auroc.is_none() {
            eprintln!("warning: AUROC undefined for {}: every designated answer is right, or every one wrong", m.estimator);
        }
    }
    write_artifact(
        &out_dir.join("metrics.json"),
        config,
        MetricsBody { scores: &scores_path, metrics: &metrics },
    )?;
    let csv_path = out_dir.join("metrics.csv");
    let file = File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    write_metrics_csv(&metrics, BufWriter::new(file))?;
    if table {
        print!("{}", render_table(&metrics));
    } else {
        println!("metrics for {} estimators written to {}", metrics.len(), out_dir.display());
    }
    Ok(())
}

pub struct RouteRequest {
    pub scores: Option<PathBuf>,
    pub fixtures: PathBuf,
    pub estimator: Estimator,
    pub ks: Vec<f64>,
    pub intervention: Intervention,
}

#[derive(Serialize)]
struct RouteBody<'a> {
    scores: &'a Path,
    fixtures: &'a Path,
    estimator: Estimator,
    routing: &'a RoutingTable,
}

pub fn route(config: &RunConfig, request: &RouteRequest) -> anyhow::Result<()> {
    let (scores_path, file) = load_scores(config, request.scores.as_deref())?;
    let confidences: BTreeMap<String, f64> = file
        .questions
        .iter()
        .filter_map(|q| {
            let (_, c) = q.report(request.estimator)?.designated()?;
            Some((q.question_id.clone(), c))
        })
        .collect();
    if confidences.is_empty() {
        bail!("no {} reports in {}", request.estimator, scores_path.display());
    }
    let fixtures = read_fixtures(open(&request.fixtures)?)
        .with_context(|| format!("reading fixtures {}", request.fixtures.display()))?;
    let table = routing_table(request.intervention, &request.ks, &fixtures, &confidences).map_err(|e| match e {
        reasongraph::routing::RoutingError::K(_) => anyhow::Error::new(UsageError::new(e.to_string())),
        other => other.into(),
    })?;
    let out_dir = create_out_dir(config)?;
    write_artifact(
        &out_dir.join("routing.json"),
        config,
        RouteBody {
            scores: &scores_path,
            fixtures: &request.fixtures,
            estimator: request.estimator,
            routing: &table,
        },
    )?;
    print!("{}", table.render());
    Ok(())
}

#[derive(Serialize)]
struct DumpBody<'a, G: Serialize> {
    graph: G,
    removed_pairs: &'a [reasongraph::equivalence::EquivalencePair],
}

pub fn dump_graph(config: &RunConfig, question_id: &str, merged: bool, out: Option<&Path>) -> anyhow::Result<()> {
    let dataset = load_dataset(config)?;
    let record = dataset
        .iter()
        .find(|r| r.question_id() == question_id)
        .with_context(|| format!("question {question_id} not in the dataset"))?;
    let host = MatcherHost::new(config)?;
    let prepared = prepare(record, host.matcher(config.match_strategy).as_ref())?;
    let removed = &prepared.removal.removed;
    let text = if merged {
        artifact_json(config, DumpBody { graph: prepared.merged.dump(), removed_pairs: removed })?
    } else {
        artifact_json(config, DumpBody { graph: prepared.graph.dump(), removed_pairs: removed })?
    };
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => Ok(std::io::stdout().lock().write_all(text.as_bytes())?),
    }
}
