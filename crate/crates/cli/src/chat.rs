use std::io::{BufRead, IsTerminal, Write};
use std::path::PathBuf;

use clap::Args;
use rlp_core::backends::BackendHandle;
use rlp_core::cognition::{CognitiveFrame, ConversationState, Mode};
use rlp_core::persona::resolve_persona;
use rlp_core::session::{Session, SessionError, SessionUpdate};
use rlp_core::store::SessionStore;

use crate::config::Config;

#[derive(Args)]
pub struct ChatArgs {
    /// Persona name (looked up in the personas directory) or file path.
    #[arg(long, required_unless_present = "session")]
    persona: Option<String>,
    #[arg(long, default_value = "rlp")]
    mode: Mode,
    /// `scripted:<fixture.toml>` or `http` (default: the config file's backend).
    #[arg(long)]
    backend: Option<String>,
    /// Show each turn's feeling, thought, analysis and plan after the message.
    #[arg(long)]
    show_internal: bool,
    /// Write the session log to the sessions directory.
    #[arg(long)]
    record: bool,
    /// Resume a recorded session; new turns are appended to its log.
    #[arg(long, conflicts_with_all = ["persona", "record"])]
    session: Option<String>,
    #[arg(long)]
    personas_dir: Option<PathBuf>,
    #[arg(long)]
    sessions_dir: Option<PathBuf>,
}

struct Style {
    color: bool,
}

impl Style {
    fn paint(&self, code: &str, text: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }
}

pub fn run(args: ChatArgs, config: &Config) -> anyhow::Result<u8> {
    let backend = config.backend(args.backend.as_deref())?.build()?;
    let store = || SessionStore::new(config.sessions_dir(args.sessions_dir.clone()));

    let mut session: Session<BackendHandle> = match &args.session {
        Some(id) => {
            let store = store()?;
            let loaded = store.load_session(id)?;
            for w in &loaded.warnings {
                eprintln!("warning: {w}");
            }
            let log = store.open(id)?;
            eprintln!("resuming session {id} at turn {}", loaded.state.next_turn());
            Session::resume(loaded, backend, Some(log))
        }
        None => {
            let name = args.persona.as_deref().expect("clap requires --persona");
            let persona = resolve_persona(name, config.personas_dir(args.personas_dir.clone()))?;
            let state = ConversationState::with_options(
                persona,
                args.mode,
                config.window.unwrap_or_default(),
                config.template.clone().unwrap_or_default(),
            )?;
            let id = SessionStore::new_session_id();
            let log = if args.record {
                let store = store()?;
                let log = store.create(&id)?;
                eprintln!("recording session {id} to {}", log.path().display());
                Some(log)
            } else {
                None
            };
            Session::start(id, state, backend, log)?
        }
    };

    let interactive = std::io::stdin().is_terminal();
    let stdout = std::io::stdout();
    let style = Style { color: stdout.is_terminal() && std::env::var_os("NO_COLOR").is_none() };
    let speaker = session.state().persona.display().to_string();
    let mut out = stdout.lock();

    let mut lines = std::io::stdin().lock().lines();
    loop {
        if interactive {
            write!(out, "{} ", style.paint("1", "you>"))?;
            out.flush()?;
        }
        let Some(line) = lines.next() else { break };
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if matches!(text, "/quit" | "/exit") {
            break;
        }

        // tokens stream only to a terminal; piped output gets whole messages
        let mut streamed = false;
        let result = session.send_with(text, &mut |update| match update {
            SessionUpdate::Token { text, .. } if style.color => {
                if !streamed {
                    let _ = write!(out, "{}: ", style.paint("1;36", &speaker));
                    streamed = true;
                }
                let _ = write!(out, "{text}");
                let _ = out.flush();
            }
            SessionUpdate::AttemptFailed { error, .. } if streamed => {
                let _ = writeln!(out, "\n{}", style.paint("2", &format!("(reply unreadable: {error}; retrying)")));
                streamed = false;
            }
            _ => {}
        });
        match result {
            Ok(outcome) => {
                if streamed {
                    writeln!(out)?;
                } else {
                    writeln!(out, "{}: {}", style.paint("1;36", &speaker), outcome.outgoing.trim_end())?;
                }
                if args.show_internal {
                    render_internal(&mut out, &outcome.frame, &style)?;
                }
            }
            Err(SessionError::Step(failure)) => {
                if streamed {
                    writeln!(out)?;
                }
                writeln!(out, "{}", style.paint("31", &format!("[error] {failure}")))?;
            }
            Err(SessionError::Store(e)) => return Err(e.into()),
        }
        out.flush()?;
    }
    Ok(0)
}

/// The frame's internal fields, after the message they accompany.
fn render_internal(out: &mut impl Write, frame: &CognitiveFrame, style: &Style) -> std::io::Result<()> {
    let fields = [
        ("feeling", &frame.feeling),
        ("thought", &frame.thought),
        ("analysis", &frame.analysis),
        ("plan", &frame.plan),
    ];
    for (label, value) in fields.into_iter().filter(|(_, v)| !v.is_empty()) {
        let mut lines = value.lines();
        let first = lines.next().unwrap_or_default();
        writeln!(out, "  {}", style.paint("2", &format!("| {label:<8} {first}")))?;
        for rest in lines {
            writeln!(out, "  {}", style.paint("2", &format!("| {:<8} {rest}", "")))?;
        }
    }
    Ok(())
}
