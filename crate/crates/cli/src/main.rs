//! `rlp`: terminal chat, degeneracy search, session replay and the service.
//!
//! Exit codes: 0 success, 1 negative result (no witnesses, replay drift),
//! 2 error.

mod chat;
mod config;
mod degeneracy;
mod replay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::Config;

#[derive(Parser)]
#[command(name = "rlp", version, about = "Persona chat with an explicit cognitive cycle")]
struct Cli {
    /// Config file (default: $RLP_CONFIG, then ./rlp.toml).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chat with a persona; one turn per input line.
    Chat(chat::ChatArgs),
    /// List degenerate pairs of a strategy table.
    Degeneracy(degeneracy::DegeneracyArgs),
    /// Re-run a recorded session against its recorded completions.
    Replay(replay::ReplayArgs),
    /// List recorded sessions.
    Sessions {
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
    /// List and check the personas in a directory.
    Personas {
        #[arg(long)]
        personas_dir: Option<PathBuf>,
    },
    /// Run the HTTP/WebSocket service.
    Serve {
        /// Address to bind (default 127.0.0.1:7878).
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        personas_dir: Option<PathBuf>,
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let config = Config::discover(cli.config.as_deref())?;
    match cli.command {
        Command::Chat(args) => chat::run(args, &config),
        Command::Degeneracy(args) => degeneracy::run(args),
        Command::Replay(args) => replay::run(args, &config),
        Command::Sessions { sessions_dir } => {
            let store = rlp_core::store::SessionStore::new(config.sessions_dir(sessions_dir))?;
            for s in store.list_sessions()? {
                let mode = s.mode.map(|m| format!("{m:?}").to_lowercase()).unwrap_or_default();
                let started = s.started.map(|t| t.to_rfc3339()).unwrap_or_default();
                match &s.error {
                    Some(e) => println!("{}\tunreadable: {e}", s.id),
                    None => println!(
                        "{}\t{}\t{}\t{} turns\t{}",
                        s.id,
                        s.persona.as_deref().unwrap_or("?"),
                        mode,
                        s.turns,
                        started
                    ),
                }
            }
            Ok(0)
        }
        Command::Personas { personas_dir } => {
            let dir = config.personas_dir(personas_dir);
            for (path, p) in rlp_core::persona::discover_personas(&dir)? {
                println!("{}\t{}\t{}", p.name, p.display(), path.display());
            }
            Ok(0)
        }
        Command::Serve { bind, backend, personas_dir, sessions_dir } => {
            let mut service = rlp_service::ServiceConfig {
                personas_dir: config.personas_dir(personas_dir),
                sessions_dir: config.sessions_dir(sessions_dir),
                backend: config.backend(backend.as_deref())?,
                ..Default::default()
            };
            if let Some(b) = bind.or(config.service.bind) {
                service.bind = b;
            }
            if let Some(n) = config.service.buffer {
                service.buffer = n;
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(rlp_service::run(service))?;
            Ok(0)
        }
    }
}
