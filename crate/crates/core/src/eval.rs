//! Prompt, complete, parse and score: annotation generation, multi-trial
//! evaluation and noise sweeps.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{extract_answer, parse_chain, remap_citations, render_chain, ChainError};
use crate::corpus::QaInstance;
use crate::llmio::{CompletionRequest, LlmClient, LlmError, DEFAULT_MAX_OUTPUT_TOKENS};
use crate::metrics::{aggregate, performance_range, score_prediction, MetricError, MetricReport, ScoredPrediction};
use crate::prompting::{build_prompt, DemoRecord, Demonstration, PromptError, PromptMode, TokenCounter};
use crate::seed;
use crate::taskgen::{apply_noise_with_map, NoiseSpec, TaskError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("instance {id}: {source}")]
    Completion {
        id: String,
        #[source]
        source: LlmError,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("no seeds given")]
    NoSeeds,
}

impl EvalError {
    pub fn is_transport(&self) -> bool {
        matches!(self, Self::Completion { source, .. } if source.is_transport())
    }
}

pub const DEFAULT_SHOTS: usize = 5;
pub const DEFAULT_BUDGET: usize = 16_384;
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Label used to group runs in reports.
    pub dataset: String,
    pub model_name: String,
    pub mode: PromptMode,
    pub shots: usize,
    pub budget: usize,
    pub seeds: Vec<u64>,
    /// Percentage of distractors kept in test and demonstration contexts.
    pub noise_ratio: u32,
    pub max_output_tokens: u32,
}

impl EvalConfig {
    pub fn new(model_name: &str, mode: PromptMode) -> Self {
        Self {
            dataset: String::new(),
            model_name: model_name.to_string(),
            mode,
            shots: DEFAULT_SHOTS,
            budget: DEFAULT_BUDGET,
            seeds: DEFAULT_SEEDS.to_vec(),
            noise_ratio: 100,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

/// Result of one evaluation: the aggregated report plus the settings that
/// produced it. Contains no timestamps, so replays are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub dataset: String,
    pub model: String,
    pub mode: PromptMode,
    pub noise_ratio: u32,
    pub shots: usize,
    pub seeds: Vec<u64>,
    pub instances: usize,
    /// Responses that did not follow the mode's format; they are scored on
    /// their extracted answer with no citations.
    pub parse_failures: usize,
    pub mean_context_documents: f64,
    pub mean_demos_kept: f64,
    pub report: MetricReport,
}

/// Samples `shots` demonstrations for one trial, converted to `mode`.
pub fn sample_demos(
    pool: &[DemoRecord],
    mode: PromptMode,
    shots: usize,
    trial_seed: u64,
) -> Result<Vec<Demonstration>, PromptError> {
    let mut rng = seed::derived_rng(trial_seed, &["demos"]);
    index::sample(&mut rng, pool.len(), shots.min(pool.len()))
        .into_iter()
        .map(|i| pool[i].to_demonstration(mode))
        .collect()
}

fn noisy_demo(demo: &Demonstration, mode: PromptMode, spec: &NoiseSpec) -> Result<Demonstration, EvalError> {
    let (instance, map) = apply_noise_with_map(&demo.instance, spec);
    let chain = parse_chain(&demo.target_text, mode)?;
    let target_text = render_chain(&remap_citations(&chain, &map)?, mode)?;
    Ok(Demonstration { instance, target_text })
}

struct Prepared {
    instance: QaInstance,
    request: CompletionRequest,
    demos_kept: usize,
}

fn prepare_trial(
    test: &[QaInstance],
    pool: &[DemoRecord],
    config: &EvalConfig,
    trial_seed: u64,
    counter: &dyn TokenCounter,
) -> Result<Vec<Prepared>, EvalError> {
    let spec = NoiseSpec::new(config.noise_ratio, trial_seed)?;
    let demos = sample_demos(pool, config.mode, config.shots, trial_seed)?
        .iter()
        .map(|d| noisy_demo(d, config.mode, &spec))
        .collect::<Result<Vec<_>, _>>()?;
    test.iter()
        .map(|inst| {
            let (instance, _) = apply_noise_with_map(inst, &spec);
            let bundle = build_prompt(&instance, config.mode, &demos, config.budget, counter)?;
            let mut request = CompletionRequest::from_bundle(&config.model_name, &bundle);
            request.max_output_tokens = config.max_output_tokens;
            Ok(Prepared {
                instance,
                request,
                demos_kept: bundle.demos_kept,
            })
        })
        .collect()
}

/// Parses a response in `mode` and scores it against the instance's
/// references and supporting documents.
pub fn score_response(instance: &QaInstance, response: &str, mode: PromptMode) -> Result<(ScoredPrediction, bool), EvalError> {
    let attributed = matches!(mode, PromptMode::Coc | PromptMode::Coq);
    let (answer, citations, parsed) = match parse_chain(response, mode) {
        Ok(chain) => (chain.answer.clone(), chain.citations().collect::<Vec<u32>>(), true),
        Err(_) => (extract_answer(response), Vec::new(), false),
    };
    let scored = score_prediction(
        &instance.id,
        &answer,
        &instance.references(),
        attributed.then_some(citations.as_slice()),
        &instance.supporting_ids(),
    )?;
    Ok((scored, parsed))
}

/// Runs one trial per seed and aggregates. Each trial samples its own
/// demonstrations and its own noisy, shuffled contexts.
pub fn evaluate(
    test: &[QaInstance],
    pool: &[DemoRecord],
    client: &LlmClient,
    config: &EvalConfig,
    counter: &dyn TokenCounter,
) -> Result<EvalRun, EvalError> {
    if config.seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    let mut trials = Vec::with_capacity(config.seeds.len());
    let mut parse_failures = 0;
    let mut context_docs = 0usize;
    let mut demos_kept = 0usize;
    for &trial_seed in &config.seeds {
        let prepared = prepare_trial(test, pool, config, trial_seed, counter)?;
        let requests: Vec<CompletionRequest> = prepared.iter().map(|p| p.request.clone()).collect();
        let responses = client.complete_many(&requests);
        let mut scored = Vec::with_capacity(prepared.len());
        for (p, response) in prepared.iter().zip(responses) {
            let text = response.map_err(|source| EvalError::Completion {
                id: p.instance.id.clone(),
                source,
            })?;
            let (prediction, parsed) = score_response(&p.instance, &text, config.mode)?;
            parse_failures += usize::from(!parsed);
            context_docs += p.instance.documents.len();
            demos_kept += p.demos_kept;
            scored.push(prediction);
        }
        trials.push(scored);
    }
    let calls = (test.len() * config.seeds.len()).max(1) as f64;
    Ok(EvalRun {
        dataset: config.dataset.clone(),
        model: config.model_name.clone(),
        mode: config.mode,
        noise_ratio: config.noise_ratio,
        shots: config.shots,
        seeds: config.seeds.clone(),
        instances: test.len(),
        parse_failures,
        mean_context_documents: context_docs as f64 / calls,
        mean_demos_kept: demos_kept as f64 / calls,
        report: aggregate(&trials)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub model: String,
    pub mode: PromptMode,
    pub points: Vec<EvalRun>,
    /// max - min of mean EM across ratios.
    pub performance_range: Option<f64>,
}

pub fn sweep_noise(
    test: &[QaInstance],
    pool: &[DemoRecord],
    client: &LlmClient,
    config: &EvalConfig,
    ratios: &[u32],
    counter: &dyn TokenCounter,
) -> Result<SweepReport, EvalError> {
    let points = ratios
        .iter()
        .map(|&ratio| {
            NoiseSpec::new(ratio, 0)?;
            let cfg = EvalConfig {
                noise_ratio: ratio,
                ..config.clone()
            };
            evaluate(test, pool, client, &cfg, counter)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ems: Vec<f64> = points.iter().map(|p| p.report.mean_em).collect();
    Ok(SweepReport {
        dataset: config.dataset.clone(),
        model: config.model_name.clone(),
        mode: config.mode,
        performance_range: performance_range(&ems),
        points,
    })
}

/// A raw model annotation awaiting curation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub id: String,
    pub response: String,
}

/// Few-shot CoQ prompting over `corpus` to collect raw annotations.
pub fn generate(
    corpus: &[QaInstance],
    pool: &[DemoRecord],
    client: &LlmClient,
    config: &EvalConfig,
    counter: &dyn TokenCounter,
) -> Result<Vec<RawAnnotation>, EvalError> {
    let trial_seed = *config.seeds.first().ok_or(EvalError::NoSeeds)?;
    let cfg = EvalConfig {
        mode: PromptMode::Coq,
        noise_ratio: 100,
        ..config.clone()
    };
    let demos = sample_demos(pool, PromptMode::Coq, cfg.shots, trial_seed)?;
    let requests = corpus
        .iter()
        .map(|inst| {
            let bundle = build_prompt(inst, PromptMode::Coq, &demos, cfg.budget, counter)?;
            let mut request = CompletionRequest::from_bundle(&cfg.model_name, &bundle);
            request.max_output_tokens = cfg.max_output_tokens;
            Ok(request)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    corpus
        .iter()
        .zip(client.complete_many(&requests))
        .map(|(inst, r)| {
            Ok(RawAnnotation {
                id: inst.id.clone(),
                response: r.map_err(|source| EvalError::Completion {
                    id: inst.id.clone(),
                    source,
                })?,
            })
        })
        .collect()
}

/// Mean EM per ratio, the data behind a noise curve.
pub fn sweep_series(report: &SweepReport) -> BTreeMap<u32, f64> {
    report.points.iter().map(|p| (p.noise_ratio, p.report.mean_em)).collect()
}
