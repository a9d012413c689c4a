use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use kgqa_core::agent::PromptPolicy;
use kgqa_core::config::RunConfig;
use kgqa_core::cost::PricingKind;
use kgqa_core::eval::Split;

use crate::commands;

#[derive(Debug, Parser)]
#[command(name = "kgqa", version, about = "Multilingual question answering over knowledge graphs with an LLM agent")]
pub struct Cli {
    /// Run configuration (JSON). Needed by every command except `cost`.
    #[arg(short, long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Token,
    Gpu,
}

impl From<KindArg> for PricingKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Token => PricingKind::Token,
            KindArg::Gpu => PricingKind::Gpu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Native,
    EnglishOnly,
    MtToEnglish,
}

impl From<PolicyArg> for PromptPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Native => PromptPolicy::Native,
            PolicyArg::EnglishOnly => PromptPolicy::EnglishOnly,
            PolicyArg::MtToEnglish => PromptPolicy::MtToEnglish,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the simple agent over a training split and store every attempt.
    BuildPool {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Dataset profile whose triplestore scores the attempts.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Answer one question; only the SPARQL query goes to stdout.
    Answer {
        #[arg(long)]
        question: String,
        #[arg(long)]
        lang: String,
        /// Experience pool; defaults to the profile's pool.
        #[arg(long, value_name = "FILE")]
        pool: Option<PathBuf>,
        #[arg(long)]
        profile: Option<String>,
    },
    /// Evaluate on a QALD file and write a JSON report.
    Bench {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        lang: String,
        /// Translate questions to English first.
        #[arg(long)]
        mt: bool,
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long, value_name = "FILE")]
        pool: Option<PathBuf>,
        /// Use the plan-and-act agent without pool or feedback.
        #[arg(long)]
        simple: bool,
    },
    /// Price a run per 100 questions.
    Cost {
        /// A benchmark report or a bare usage object.
        #[arg(long, value_name = "FILE")]
        usage: PathBuf,
        #[arg(long, value_name = "FILE")]
        pricing: PathBuf,
        /// Entry to use when the pricing file lists several models.
        #[arg(long)]
        model: Option<String>,
        /// Expected pricing scheme; a different one is an error.
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
    /// Serve GET /?question=..&dataset=.. answers over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8000")]
        bind: SocketAddr,
        #[arg(long, value_enum, default_value = "english-only")]
        prompt_policy: PolicyArg,
    },
}

impl Command {
    pub fn needs_config(&self) -> bool {
        !matches!(self, Command::Cost { .. })
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli.config.as_ref().context("this command needs --config")?;
    RunConfig::load(path).with_context(|| format!("cannot load configuration {}", path.display()))
}

/// Runs a parsed command line. Errors are infrastructure or input failures;
/// agent failures only show up as diagnostics.
pub async fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match &cli.command {
        Command::BuildPool {
            train,
            lang,
            out: pool_path,
            profile,
        } => {
            let config = load_config(&cli)?;
            commands::build_pool(&config, train, lang, pool_path, profile.as_deref(), out, err).await
        }
        Command::Answer {
            question,
            lang,
            pool,
            profile,
        } => {
            let config = load_config(&cli)?;
            commands::answer(&config, question, lang, pool.as_deref(), profile.as_deref(), out, err).await
        }
        Command::Bench {
            dataset,
            split,
            lang,
            mt,
            report,
            profile,
            pool,
            simple,
        } => {
            let config = load_config(&cli)?;
            let options = commands::BenchArgs {
                dataset,
                split: (*split).into(),
                language: lang,
                mt: *mt,
                report,
                profile: profile.as_deref(),
                pool: pool.as_deref(),
                simple: *simple,
            };
            commands::bench(&config, &options, out, err).await
        }
        Command::Cost {
            usage,
            pricing,
            model,
            kind,
        } => commands::cost(usage, pricing, model.as_deref(), kind.map(Into::into), out, err),
        Command::Serve { bind, prompt_policy } => {
            let config = load_config(&cli)?;
            let state = crate::service::ServiceState::from_config(&config, (*prompt_policy).into())?;
            let listener = tokio::net::TcpListener::bind(bind)
                .await
                .with_context(|| format!("cannot bind {bind}"))?;
            writeln!(err, "listening on http://{}", listener.local_addr()?)?;
            axum::serve(listener, crate::service::router(state))
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
            Ok(())
        }
    }
}
