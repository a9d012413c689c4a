use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use kgqa_core::agent::build_experience_pool;
use kgqa_core::config::{LlmConfig, RunConfig};
use kgqa_core::cost::{format_usd, gpu_hours, Pricing, PricingKind, PricingTable, UsageStats};
use kgqa_core::eval::{
    load_qald, run_benchmark, AnswerScorer, BenchmarkOptions, FullAgentRunner, SimpleAgentRunner, Split,
};
use kgqa_core::pool::ExperiencePool;
use serde_json::Value;

/// The dataset profile to use: the requested one, or the only one configured.
pub fn pick_profile<'a>(config: &'a RunConfig, requested: Option<&'a str>) -> anyhow::Result<&'a str> {
    if let Some(name) = requested {
        config.dataset(name)?;
        return Ok(name);
    }
    let names: Vec<&String> = config.datasets.keys().collect();
    match names.as_slice() {
        [only] => Ok(only.as_str()),
        [] => bail!("no dataset profiles configured"),
        _ => bail!(
            "several dataset profiles configured ({}); pick one with --profile",
            names.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn load_pool(config: &RunConfig, profile: &str, explicit: Option<&Path>) -> anyhow::Result<Option<ExperiencePool>> {
    match explicit {
        Some(path) => {
            let pool = ExperiencePool::load(path).with_context(|| format!("cannot load pool {}", path.display()))?;
            Ok(Some(pool))
        }
        None => Ok(config.pool(profile)?),
    }
}

pub fn model_label(config: &RunConfig) -> String {
    match &config.llm {
        LlmConfig::Openai { model, .. } => model.clone(),
        LlmConfig::Scripted { .. } => "scripted".into(),
    }
}

pub async fn build_pool(
    config: &RunConfig,
    train: &Path,
    language: &str,
    pool_path: &Path,
    profile: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<()> {
    let dataset = load_qald(train, Split::Train).with_context(|| format!("cannot load {}", train.display()))?;
    let profile = pick_profile(config, profile)?;
    let scorer = AnswerScorer::new(config.triplestore(profile)?);
    let agent = config.agent()?;

    if !dataset.questions.iter().any(|q| q.text(language).is_some()) {
        writeln!(err, "warning: no training questions in language '{language}'; the pool will be empty")?;
    }
    let (pool, summary) = build_experience_pool(&agent, &dataset.questions, language, &scorer).await?;
    for failure in &summary.failures {
        writeln!(err, "warning: {failure}")?;
    }
    if !summary.skipped.is_empty() {
        writeln!(err, "skipped {} question(s) without '{language}' text", summary.skipped.len())?;
    }
    pool.save(pool_path).with_context(|| format!("cannot write {}", pool_path.display()))?;
    writeln!(out, "{} records ({} successful)", pool.len(), pool.successful_count())?;
    Ok(())
}

pub async fn answer(
    config: &RunConfig,
    question: &str,
    language: &str,
    pool: Option<&Path>,
    profile: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<()> {
    let profile = pick_profile(config, profile)?;
    let pool = load_pool(config, profile, pool)?;
    let store = config.triplestore(profile)?;
    let agent = config.agent()?;

    let record = agent.run_full(question, language, pool.as_ref(), store.as_ref()).await;
    for line in &record.diagnostics {
        writeln!(err, "warning: {line}")?;
    }
    if record.final_query.is_empty() {
        writeln!(err, "no query produced")?;
    }
    writeln!(out, "{}", record.final_query)?;
    Ok(())
}

pub struct BenchArgs<'a> {
    pub dataset: &'a Path,
    pub split: Split,
    pub language: &'a str,
    pub mt: bool,
    pub report: &'a Path,
    pub profile: Option<&'a str>,
    pub pool: Option<&'a Path>,
    pub simple: bool,
}

pub async fn bench(config: &RunConfig, args: &BenchArgs<'_>, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let dataset =
        load_qald(args.dataset, args.split).with_context(|| format!("cannot load {}", args.dataset.display()))?;
    let profile = pick_profile(config, args.profile)?;
    let store = config.triplestore(profile)?;
    let pool = if args.simple { None } else { load_pool(config, profile, args.pool)? };
    let agent = config.agent()?;
    let translator = if args.mt {
        Some(config.translator().context("--mt needs a translator in the configuration")?)
    } else {
        None
    };
    let options = BenchmarkOptions {
        language: args.language.to_string(),
        model: model_label(config),
        parallelism: config.parallelism,
        translator,
    };
    let scorer = AnswerScorer::new(store.clone());

    let report = if args.simple {
        run_benchmark(&dataset, &SimpleAgentRunner(&agent), &scorer, &options).await
    } else {
        let runner = FullAgentRunner {
            agent: &agent,
            pool: pool.as_ref(),
            store: store.as_ref(),
        };
        run_benchmark(&dataset, &runner, &scorer, &options).await
    };

    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(args.report, json + "\n").with_context(|| format!("cannot write {}", args.report.display()))?;

    let s = &report.summary;
    writeln!(out, "evaluated {} question(s), skipped {}", s.evaluated, s.skipped)?;
    match report.macro_scores() {
        Some(m) => writeln!(out, "macro precision {:.4} recall {:.4} F1 {:.4}", m.precision, m.recall, m.f1)?,
        None => writeln!(err, "warning: no questions in language '{}'", args.language)?,
    }
    if let Some(calls) = s.mean_calls {
        writeln!(out, "mean LLM calls per question {calls:.2}")?;
    }
    Ok(())
}

/// Reads usage from a benchmark report (`summary.usage`) or a bare object.
pub fn read_usage(path: &Path) -> anyhow::Result<UsageStats> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let usage = match value.get("summary") {
        Some(summary) => match summary.get("usage") {
            None | Some(Value::Null) => bail!("empty usage"),
            Some(u) => u.clone(),
        },
        None => value,
    };
    serde_json::from_value(usage).with_context(|| format!("{} has no usable usage statistics", path.display()))
}

pub fn cost(
    usage: &Path,
    pricing: &Path,
    model: Option<&str>,
    kind: Option<PricingKind>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<()> {
    let usage = read_usage(usage)?;
    let table = PricingTable::load(pricing)?;
    let entry = table.select(model)?;
    if let Some(kind) = kind {
        if entry.kind() != kind {
            bail!("pricing kind mismatch: '{}' is {:?}-based, {:?} was requested", entry.model(), entry.kind(), kind);
        }
    }
    let per_100 = entry.cost_per_100(&usage)?;
    if usage.estimated {
        writeln!(err, "warning: token counts are estimates")?;
    }
    writeln!(out, "{} / 100 questions", format_usd(per_100))?;
    if let Pricing::Gpu { pricing, .. } = entry {
        let hours = gpu_hours(&UsageStats { n_q: 100, ..usage }, pricing.tokens_per_second)?;
        writeln!(out, "{hours:.2} GPU hours / 100 questions")?;
    }
    Ok(())
}
