use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use carevoice_core::language::LanguageTag;
use carevoice_core::providers::{ProviderConfig, ProviderMode};
use carevoice_core::session::SessionPolicy;
use carevoice_core::store::{SessionFilter, Store};
use carevoice_gateway::commands::{self, BenchArgs, BenchSource, CommandResult, ImportDoc, RunArgs};
use carevoice_gateway::{AppState, GatewayConfig, PolicyOverrides};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "carevoice", version, about = "Voice questionnaire engine: server, session runner and benchmarks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Store directory (created if missing).
    #[arg(long, env = "CAREVOICE_DATA_ROOT", default_value = "carevoice-data", global = true)]
    data_root: PathBuf,
    /// Provider backend: mock or remote.
    #[arg(long, env = "CAREVOICE_PROVIDERS", default_value = "mock", global = true)]
    providers: ProviderMode,
    /// Base URL of the remote provider service.
    #[arg(long, env = "CAREVOICE_PROVIDER_URL", global = true)]
    provider_url: Option<String>,
    /// JSON map from exact text to emotion scores (mock mode).
    #[arg(long, env = "CAREVOICE_FIXTURES", global = true)]
    fixtures: Option<PathBuf>,
    /// Directory of `<source>-<target>.tsv` translation lexicons (mock mode).
    #[arg(long, env = "CAREVOICE_LEXICON_DIR", global = true)]
    lexicon_dir: Option<PathBuf>,
    /// `token<TAB>emotion<TAB>weight` file (mock mode).
    #[arg(long, env = "CAREVOICE_EMOTION_LEXICON", global = true)]
    emotion_lexicon: Option<PathBuf>,
    #[arg(long, env = "CAREVOICE_MAX_REPEATS", global = true)]
    max_repeats: Option<u32>,
    #[arg(long, env = "CAREVOICE_CHUNK_SECONDS", global = true)]
    chunk_seconds: Option<f64>,
    #[arg(long, env = "CAREVOICE_MAX_CHUNKS", global = true)]
    max_chunks: Option<u32>,
    /// RMS below which a chunk counts as silence.
    #[arg(long, env = "CAREVOICE_SILENCE_THRESHOLD", global = true)]
    silence_threshold: Option<f64>,
    #[arg(long, env = "CAREVOICE_NOISE_GATE", global = true)]
    noise_gate: Option<bool>,
    /// Language the emotion analyzer reads.
    #[arg(long, env = "CAREVOICE_EMOTION_LANGUAGE", global = true)]
    emotion_language: Option<LanguageTag>,
    #[arg(long, env = "CAREVOICE_SPEECH_RATE", global = true)]
    speech_rate: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the REST service.
    Serve {
        #[arg(long, env = "CAREVOICE_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Run one session from WAV files or synthesized replies.
    Run {
        #[arg(long, short)]
        questionnaire: String,
        #[arg(long, default_value = "cli")]
        device_id: String,
        /// Welcome-turn recording; repeat for retakes.
        #[arg(long)]
        welcome: Vec<PathBuf>,
        /// `N=path.wav` for question N (1-based); repeat N for retakes.
        #[arg(long, value_parser = parse_answer)]
        answer: Vec<(usize, PathBuf)>,
        /// Reply text synthesized per question, cycled over the questions.
        #[arg(long)]
        reply: Vec<String>,
        /// Language of the synthesized replies.
        #[arg(long)]
        reply_language: Option<LanguageTag>,
    },
    /// Extract the questions of a text document and save a questionnaire.
    ImportDoc {
        path: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        title: Option<String>,
        /// Specialist language.
        #[arg(long, default_value = "en")]
        language: LanguageTag,
        #[arg(long, default_value = "Hello, please say a few words.")]
        welcome: String,
        /// Print the questionnaire without saving it.
        #[arg(long)]
        dry_run: bool,
        /// Render prompt audio for these languages (comma separated).
        #[arg(long, value_delimiter = ',')]
        prerender: Vec<LanguageTag>,
    },
    /// Time every pipeline stage per question over repeated sessions.
    Bench {
        #[arg(long, short, conflicts_with = "document", required_unless_present = "document")]
        questionnaire: Option<String>,
        /// Text document to extract questions from instead.
        #[arg(long)]
        document: Option<PathBuf>,
        /// Language of the scripted replies.
        #[arg(long, default_value = "fr")]
        language: LanguageTag,
        /// Reply text, cycled over the questions.
        #[arg(long)]
        answer: Vec<String>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Show a session's results, a WAV file, or the session list.
    Inspect {
        #[arg(long, conflicts_with = "wav")]
        session: Option<String>,
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long)]
        questionnaire_id: Option<String>,
        #[arg(long)]
        device_id: Option<String>,
    },
}

fn parse_answer(s: &str) -> Result<(usize, PathBuf), String> {
    let (n, path) = s.split_once('=').ok_or("expected N=path.wav")?;
    let n: usize = n.trim().parse().map_err(|_| format!("{n:?} is not a question number"))?;
    if n == 0 {
        return Err("question numbers start at 1".into());
    }
    Ok((n, PathBuf::from(path)))
}

impl Global {
    fn config(&self) -> Result<GatewayConfig, carevoice_gateway::ConfigError> {
        let overrides = PolicyOverrides {
            max_repeats: self.max_repeats,
            chunk_seconds: self.chunk_seconds,
            max_chunks: self.max_chunks,
            silence_threshold: self.silence_threshold,
            noise_gate: self.noise_gate,
            emotion_language: self.emotion_language.clone(),
            speech_rate: self.speech_rate,
        };
        Ok(GatewayConfig {
            data_root: self.data_root.clone(),
            providers: ProviderConfig {
                mode: self.providers,
                remote_base_url: self.provider_url.clone(),
                fixtures: self.fixtures.clone(),
                lexicon_dir: self.lexicon_dir.clone(),
                emotion_lexicon: self.emotion_lexicon.clone(),
            },
            policy: overrides.apply(SessionPolicy::default())?,
            ..GatewayConfig::default()
        })
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn execute(cli: Cli) -> CommandResult<()> {
    let mut config = cli.global.config()?;
    match cli.command {
        Command::Serve { listen } => {
            config.listen = listen;
            let (store, providers) = config.open()?;
            let swept = store.sweep_staging()?;
            if swept > 0 {
                tracing::warn!(swept, "removed staging directories from interrupted saves");
            }
            let state = AppState::new(store, providers, config.policy);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(config.listen).await?;
                tracing::info!(address = %listener.local_addr()?, root = %config.data_root.display(), "listening");
                carevoice_gateway::api::serve(listener, state).await
            })?;
        }
        Command::Run {
            questionnaire,
            device_id,
            welcome,
            answer,
            reply,
            reply_language,
        } => {
            let (store, providers) = config.open()?;
            let args = RunArgs {
                questionnaire_id: questionnaire,
                device_id,
                welcome,
                answers: answer,
                replies: reply,
                reply_language,
            };
            print_json(&commands::run(&store, &providers, &config.policy, &args)?);
        }
        Command::ImportDoc {
            path,
            id,
            title,
            language,
            welcome,
            dry_run,
            prerender,
        } => {
            let (store, providers) = config.open()?;
            let args = ImportDoc {
                path,
                id,
                title,
                specialist_language: language,
                welcome_text: welcome,
                dry_run,
                prerender,
            };
            print_json(&commands::import_doc(&store, &providers, &config.policy, &args)?);
        }
        Command::Bench {
            questionnaire,
            document,
            language,
            answer,
            repetitions,
            csv,
        } => {
            let (_, providers) = config.open()?;
            let source = match (questionnaire, document) {
                (Some(id), _) => BenchSource::Stored(id),
                (None, Some(path)) => BenchSource::Document(path),
                (None, None) => unreachable!("clap requires one source"),
            };
            let args = BenchArgs {
                source,
                language,
                answers: answer,
                repetitions,
            };
            let report = commands::bench(&config.data_root, &providers, &config.policy, &args)?;
            print!("{}", report.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
        }
        Command::Inspect {
            session,
            wav,
            questionnaire_id,
            device_id,
        } => {
            if let Some(path) = wav {
                print_json(&commands::inspect_wav(&path)?);
                return Ok(());
            }
            let store = Store::open(&config.data_root)?;
            match session {
                Some(id) => print_json(&commands::inspect_session(&store, &id)?),
                None => {
                    let filter = SessionFilter {
                        questionnaire_id,
                        device_id,
                        ..Default::default()
                    };
                    print_json(&commands::list_sessions(&store, &filter)?);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CAREVOICE_LOG").unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
