use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tokio::sync::mpsc;

use hyrouter::capture::{self, export_ndjson, Direction};
use hyrouter::cleanse::{self, DelimiterSpec};
use hyrouter::mock::{self, MockDataset};
use hyrouter::proxy::{Proxy, ProxyConfig, ProxyEvent};
use hyrouter::replay::{self, ReplayOptions, ReplayScript, Substitution};
use hyrouter::sniff::{sniff_credentials, SniffRuleSet};

#[derive(Parser)]
#[command(name = "hyrouter", version, about = "Capture proxy, replay and XML extraction for plaintext TCP protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relay clients to an upstream server, recording each session.
    Proxy(ProxyArgs),
    /// List plaintext credentials found in a capture.
    Sniff {
        #[arg(long)]
        capture: PathBuf,
        /// Sniff rules file (defaults: 4 packets, separators 20 0a 1f, marker "AUTH ").
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        show_secrets: bool,
    },
    /// Convert one direction of a capture to XML (or stripped raw bytes).
    Extract {
        #[arg(long)]
        capture: PathBuf,
        /// Delimiter spec file.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "s2c", value_parser = parse_direction)]
        direction: Direction,
        /// Write the bytes left after removing delimiters instead of XML.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a capture as NDJSON, one packet per line.
    Export {
        #[arg(long)]
        capture: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build or edit replay scripts.
    #[command(subcommand)]
    Script(ScriptCommand),
    /// Drive a server with a replay script and record the session.
    Replay(ReplayArgs),
    /// Run the HDP/0 mock server.
    MockServe {
        #[arg(long)]
        listen: String,
        /// JSON dataset; the built-in fixture is used when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run a command script against a server and print the transcript.
    MockClient {
        #[arg(long)]
        server: String,
        /// One command per line; a newline is appended to each.
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
}

#[derive(Args)]
struct ProxyArgs {
    #[arg(long)]
    listen: String,
    #[arg(long)]
    upstream: String,
    #[arg(long)]
    capture_dir: PathBuf,
    #[arg(long)]
    sniff_rules: Option<PathBuf>,
    /// Include sniffed secrets in the session summaries.
    #[arg(long)]
    show_secrets: bool,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    max_sessions: u64,
    /// Seconds without traffic before a session is closed.
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    idle_timeout: u64,
}

#[derive(Subcommand)]
enum ScriptCommand {
    /// Create a script from the client packets of a capture.
    Build {
        #[arg(long)]
        capture: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mark a byte range of one step as a named placeholder.
    Mark {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        step: usize,
        /// Byte range START:END (end exclusive).
        #[arg(long, value_parser = parse_range)]
        range: (usize, usize),
        #[arg(long)]
        name: String,
        /// Where to write the result; the script is updated in place by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    script: PathBuf,
    #[arg(long)]
    server: String,
    /// Placeholder binding NAME=HEX.
    #[arg(long = "bind")]
    bind: Vec<String>,
    /// Placeholder binding NAME=STRING.
    #[arg(long = "bind-str")]
    bind_str: Vec<String>,
    #[arg(long)]
    capture_out: Option<PathBuf>,
    /// Reply terminator byte in hex; repeatable. Defaults to 04 and 0a.
    #[arg(long = "terminator", value_parser = parse_hex_byte)]
    terminators: Vec<u8>,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    Direction::from_label(s).ok_or_else(|| format!("expected c2s or s2c, got `{s}`"))
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a = a.parse().map_err(|_| format!("invalid start `{a}`"))?;
    let b = b.parse().map_err(|_| format!("invalid end `{b}`"))?;
    Ok((a, b))
}

fn parse_hex_byte(s: &str) -> Result<u8, String> {
    let b = hex::decode(s).map_err(|e| e.to_string())?;
    match b[..] {
        [byte] => Ok(byte),
        _ => Err("expected exactly one byte".into()),
    }
}

/// Operational failure: reported on stderr, exit code 1.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, data: &[u8]) -> CmdResult {
    std::fs::write(path, data).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_capture(path: &Path) -> Result<capture::Session, Failure> {
    capture::decode_capture(&read_file(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, data: &[u8]) -> CmdResult {
    match out {
        Some(p) => write_file(p, data),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(data)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn load_sniff_rules(path: Option<&Path>) -> Result<SniffRuleSet, Failure> {
    match path {
        Some(p) => SniffRuleSet::parse(&read_text(p)?).map_err(|e| Failure(format!("{}: {e}", p.display()))),
        None => Ok(SniffRuleSet::default()),
    }
}

#[derive(Serialize)]
struct HitLine<'a> {
    session_id: String,
    seq: u64,
    username: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    secret: Option<&'a str>,
}

fn cmd_sniff(capture: &Path, rules: Option<&Path>, show_secrets: bool) -> CmdResult {
    let session = load_capture(capture)?;
    let rules = load_sniff_rules(rules)?;
    let mut out = String::new();
    for hit in sniff_credentials(&session, &rules) {
        let line = HitLine {
            session_id: hit.session_id.to_hex(),
            seq: hit.packet_seq,
            username: &hit.username,
            secret: show_secrets.then_some(hit.secret.as_str()),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    emit(None, out.as_bytes())
}

fn cmd_extract(capture: &Path, spec: &Path, direction: Direction, raw: bool, out: Option<&Path>) -> CmdResult {
    let session = load_capture(capture)?;
    let spec = DelimiterSpec::parse(&read_text(spec)?).map_err(|e| Failure(format!("{}: {e}", spec.display())))?;
    let data = capture::concat_raw(&session, direction);
    let bytes = if raw {
        cleanse::strip_delimiters(&data.bytes, &spec)
    } else {
        cleanse::extract_xml(&data.bytes, &spec).into_bytes()
    };
    emit(out, &bytes)
}

fn cmd_script(cmd: ScriptCommand) -> CmdResult {
    match cmd {
        ScriptCommand::Build { capture, out } => {
            let script = replay::build_script(&load_capture(&capture)?)?;
            write_file(&out, script.to_text().as_bytes())
        }
        ScriptCommand::Mark {
            script,
            step,
            range: (start, end),
            name,
            out,
        } => {
            let parsed = ReplayScript::parse(&read_text(&script)?)
                .map_err(|e| Failure(format!("{}: {e}", script.display())))?;
            let marked = replay::mark_placeholder(&parsed, step, start, end, &name)?;
            write_file(out.as_deref().unwrap_or(&script), marked.to_text().as_bytes())
        }
    }
}

#[derive(Serialize)]
struct ReplayLine {
    session_id: String,
    c2s_bytes: usize,
    s2c_bytes: usize,
    timed_out_steps: Vec<usize>,
    server_closed_at: Option<usize>,
}

async fn cmd_replay(args: ReplayArgs) -> CmdResult {
    let script = ReplayScript::parse(&read_text(&args.script)?)
        .map_err(|e| Failure(format!("{}: {e}", args.script.display())))?;
    let mut bindings = Vec::new();
    for b in &args.bind {
        bindings.push(Substitution::parse_hex(b)?);
    }
    for b in &args.bind_str {
        bindings.push(Substitution::parse_str(b)?);
    }
    let mut options = ReplayOptions::default();
    if !args.terminators.is_empty() {
        options.terminators = args.terminators.clone();
    }
    let outcome = replay::run_replay(&script, &bindings, &args.server, &options).await?;
    if let Some(path) = &args.capture_out {
        write_file(path, &capture::encode_capture(&outcome.session)?)?;
    }
    let line = ReplayLine {
        session_id: outcome.session.session_id.to_hex(),
        c2s_bytes: capture::concat_raw(&outcome.session, Direction::ClientToServer).len(),
        s2c_bytes: capture::concat_raw(&outcome.session, Direction::ServerToClient).len(),
        timed_out_steps: outcome.timed_out_steps.clone(),
        server_closed_at: outcome.server_closed_at,
    };
    emit(None, format!("{}\n", serde_json::to_string(&line)?).as_bytes())?;
    if !outcome.is_complete() {
        return Err(Failure(format!(
            "reply timeout on step(s) {:?}",
            outcome.timed_out_steps
        )));
    }
    Ok(())
}

async fn cmd_proxy(args: ProxyArgs) -> CmdResult {
    let mut config = ProxyConfig::new(args.listen, args.upstream, args.capture_dir);
    config.sniff_rules = load_sniff_rules(args.sniff_rules.as_deref())?;
    config.max_sessions = args.max_sessions as usize;
    config.idle_timeout = Duration::from_secs(args.idle_timeout);
    let proxy = Proxy::bind(config).await?;
    eprintln!("proxy listening on {}", proxy.local_addr()?);

    let (tx, mut rx) = mpsc::unbounded_channel::<ProxyEvent>();
    let printer = tokio::spawn(async move {
        while let Some(event) = rx.recv().await {
            match event {
                Ok(summary) => {
                    eprintln!("session {} saved to {}", summary.session_id, summary.capture_path.display());
                    println!("{}", summary.to_ndjson(args.show_secrets));
                }
                Err(e) => eprintln!("session failed: {e}"),
            }
        }
    });
    proxy
        .run(tx, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    let _ = printer.await;
    Ok(())
}

async fn cmd_mock_serve(listen: &str, dataset: Option<&Path>) -> CmdResult {
    let dataset = match dataset {
        Some(p) => MockDataset::from_json(&read_text(p)?).map_err(|e| Failure(format!("{}: {e}", p.display())))?,
        None => MockDataset::fixture(),
    };
    dataset.validate()?;
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| Failure(format!("cannot listen on {listen}: {e}")))?;
    eprintln!("mock server listening on {}", listener.local_addr()?);
    mock::serve_mock(listener, std::sync::Arc::new(dataset), async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

#[derive(Serialize)]
struct ExchangeLine {
    sent_hex: String,
    received_hex: String,
}

async fn cmd_mock_client(server: &str, script: &Path, timeout_ms: u64) -> CmdResult {
    let commands = mock::parse_client_script(&read_text(script)?);
    let transcript = mock::scripted_client(server, &commands, Duration::from_millis(timeout_ms)).await?;
    let mut out = String::new();
    for ex in transcript {
        let line = ExchangeLine {
            sent_hex: hex::encode(&ex.sent),
            received_hex: hex::encode(&ex.received),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    emit(None, out.as_bytes())
}

async fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Proxy(args) => cmd_proxy(args).await,
        Command::Sniff {
            capture,
            rules,
            show_secrets,
        } => cmd_sniff(&capture, rules.as_deref(), show_secrets),
        Command::Extract {
            capture,
            spec,
            direction,
            raw,
            out,
        } => cmd_extract(&capture, &spec, direction, raw, out.as_deref()),
        Command::Export { capture, out } => {
            let session = load_capture(&capture)?;
            emit(out.as_deref(), export_ndjson(&session).as_bytes())
        }
        Command::Script(cmd) => cmd_script(cmd),
        Command::Replay(args) => cmd_replay(args).await,
        Command::MockServe { listen, dataset } => cmd_mock_serve(&listen, dataset.as_deref()).await,
        Command::MockClient {
            server,
            script,
            timeout_ms,
        } => cmd_mock_client(&server, &script, timeout_ms).await,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
