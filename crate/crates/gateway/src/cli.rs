//! Command-line interface. Each subcommand writes its result to `out` so the
//! handlers can be exercised without spawning a process.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use overlapchat::analytics::{build_report_with, DeleteUnit, ReportOptions, DEFAULT_BIN_MS};
use overlapchat::corpus::{build_corpus, read_dialogues, read_instructions, read_samples, run_eval, Average, SampleBuilder};
use overlapchat::policy::{Policy, PolicyKind};
use overlapchat::sim::{parse_trace, replay, simulate, SimOptions};
use overlapchat::{ConversationLog, SessionConfig};

use crate::config::{GatewayConfig, Overrides};
use crate::hub::Hub;

#[derive(Debug, Parser)]
#[command(name = "overlapchat", version, about = "Chat server whose bot may speak while the user is still typing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the session server.
    Serve(ServeArgs),
    /// Rebuild transcript and metrics from a session log.
    Replay {
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a trace through a session on a virtual clock.
    Simulate(SimulateArgs),
    /// Compute the metrics table of a session log.
    Metrics(MetricsArgs),
    /// Build tagged training samples.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Score model outputs against gold samples.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub backend_url: Option<String>,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// TOML file with session settings (the same keys as `[session]` in the server config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rule")]
    pub policy: PolicyArg,
    /// Virtual delay before each policy reply.
    #[arg(long, default_value_t = 0)]
    pub latency_ms: u64,
    /// Write the session log here.
    #[arg(long)]
    pub log_out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BIN_MS)]
    pub bin_ms: u64,
    #[arg(long, value_enum, default_value = "event")]
    pub delete_unit: DeleteUnitArg,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    Build {
        /// Normalized dialogue-act JSONL, one utterance per line.
        #[arg(long)]
        dialogues: Option<PathBuf>,
        /// Instructions, one per line (plain text or `{"instruction": ...}`).
        #[arg(long)]
        instructions: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    Run {
        /// Gold samples as written by `corpus build`.
        #[arg(long)]
        gold: PathBuf,
        /// Model outputs, one per line, aligned with the gold samples.
        #[arg(long)]
        pred: PathBuf,
        /// Weight per-class scores by support instead of the plain mean.
        #[arg(long)]
        weighted: bool,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Rule,
    Model,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Rule => PolicyKind::Rule,
            PolicyArg::Model => PolicyKind::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DeleteUnitArg {
    Event,
    Character,
}

impl From<DeleteUnitArg> for DeleteUnit {
    fn from(u: DeleteUnitArg) -> Self {
        match u {
            DeleteUnitArg::Event => DeleteUnit::Event,
            DeleteUnitArg::Character => DeleteUnit::Character,
        }
    }
}

pub type CliResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

fn read(path: &Path) -> Result<String, Box<dyn std::error::Error + Send + Sync>> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load_log(path: &Path) -> Result<ConversationLog, Box<dyn std::error::Error + Send + Sync>> {
    let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(ConversationLog::from_reader(std::io::BufReader::new(file))?)
}

/// Reads model outputs: plain lines, JSON strings, or objects with an `output` field.
pub fn read_outputs(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| match serde_json::from_str::<serde_json::Value>(line) {
            Ok(serde_json::Value::String(s)) => s,
            Ok(serde_json::Value::Object(map)) => match map.get("output") {
                Some(serde_json::Value::String(s)) => s.clone(),
                _ => line.to_string(),
            },
            _ => line.to_string(),
        })
        .collect()
}

pub async fn run(cli: Cli, out: &mut impl Write) -> CliResult {
    match cli.command {
        Command::Serve(args) => serve(args).await,
        Command::Replay { log, json } => {
            let log = load_log(&log)?;
            let (transcript, report) = replay(&log);
            if json {
                let value = serde_json::json!({"transcript": transcript, "metrics": report});
                writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
            } else {
                write!(out, "{transcript}\n{}", report.to_table())?;
            }
            Ok(())
        }
        Command::Simulate(args) => {
            let trace = parse_trace(&read(&args.trace)?)?;
            let config = match &args.config {
                Some(path) => toml::from_str::<SessionConfig>(&read(path)?)?,
                None => SessionConfig::default(),
            };
            config.validate()?;
            let options = SimOptions {
                policy_latency_ms: args.latency_ms,
                ..SimOptions::default()
            };
            let outcome = simulate(&trace, config, Policy::stub(args.policy.into()), options).await;
            if let Some(path) = &args.log_out {
                std::fs::write(path, outcome.log.to_jsonl())?;
            }
            if args.json {
                let value = serde_json::json!({"transcript": outcome.transcript, "metrics": outcome.report});
                writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
            } else {
                write!(out, "{}\n{}", outcome.transcript, outcome.report.to_table())?;
            }
            Ok(())
        }
        Command::Metrics(args) => {
            let log = load_log(&args.log)?;
            let options = ReportOptions {
                bin_ms: args.bin_ms,
                delete_unit: args.delete_unit.into(),
            };
            let report = build_report_with(&log, options);
            if args.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                write!(out, "{}", report.to_table())?;
                for warning in &report.warnings {
                    writeln!(out, "warning: {warning}")?;
                }
            }
            Ok(())
        }
        Command::Corpus(CorpusCommand::Build {
            dialogues,
            instructions,
            seed,
            out: path,
        }) => {
            if dialogues.is_none() && instructions.is_none() {
                return Err("give --dialogues, --instructions or both".into());
            }
            let dialogues = match &dialogues {
                Some(p) => read_dialogues(&read(p)?)?,
                None => Vec::new(),
            };
            let instructions = match &instructions {
                Some(p) => read_instructions(&read(p)?)?,
                None => Vec::new(),
            };
            let mut builder = SampleBuilder::default();
            let build = build_corpus(&mut builder, &dialogues, &instructions, seed);
            let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            for sample in &build.samples {
                writeln!(file, "{}", sample.to_line())?;
            }
            file.flush()?;
            writeln!(out, "wrote {} samples to {}", build.samples.len(), path.display())?;
            for skipped in &build.skipped {
                writeln!(out, "skipped {skipped}")?;
            }
            if build.unknown_labels > 0 {
                writeln!(out, "{} utterances had unknown act labels", build.unknown_labels)?;
            }
            Ok(())
        }
        Command::Eval(EvalCommand::Run {
            gold,
            pred,
            weighted,
            json,
        }) => {
            let samples = read_samples(&read(&gold)?)?;
            let outputs = read_outputs(&read(&pred)?);
            let average = if weighted { Average::Weighted } else { Average::Macro };
            let report = run_eval(&samples, &outputs, average)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                let t = &report.timing;
                writeln!(out, "samples {} (overlap {}, malformed outputs {})", report.samples, report.overlap_samples, report.malformed_outputs)?;
                writeln!(out, "timing  acc {:.4}  p {:.4}  r {:.4}  f1 {:.4}", t.accuracy, t.precision, t.recall, t.f1)?;
                match &report.acts {
                    Some(a) => writeln!(out, "acts    acc {:.4}  p {:.4}  r {:.4}  f1 {:.4}", a.accuracy, a.precision, a.recall, a.f1)?,
                    None => writeln!(out, "acts    -")?,
                }
                let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                writeln!(out, "bleu    {}", num(report.bleu))?;
                writeln!(out, "rouge-l {}", num(report.rouge_l))?;
            }
            Ok(())
        }
    }
}

async fn serve(args: ServeArgs) -> CliResult {
    let overrides = Overrides {
        listen: args.listen,
        backend_url: args.backend_url,
        log_dir: args.log_dir,
        policy: args.policy.map(Into::into),
    };
    let config = GatewayConfig::load(args.config.as_deref(), |k| std::env::var(k).ok(), &overrides)?;
    config.validate()?;
    let hub = Arc::new(Hub::new(
        config.session.clone(),
        config.policy(),
        config.log_dir.clone(),
        config.max_sessions,
    ));
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, backend = ?config.backend.kind, "listening");
    crate::server::serve(listener, hub, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
