use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rlp_core::backends::load_fixture;
use rlp_core::prompt::PromptTemplate;
use rlp_core::replay::{replay, ReplayOptions, ReplayVerdict};
use rlp_core::store::SessionStore;

use crate::config::Config;

#[derive(Args)]
pub struct ReplayArgs {
    /// Session id.
    #[arg(long)]
    session: String,
    /// Fail at the first prompt whose digest differs from the recording.
    #[arg(long)]
    verify_digests: bool,
    /// Serve completions from this fixture instead of the recorded ones.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Render prompts with this template (TOML) instead of the recorded one.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    sessions_dir: Option<PathBuf>,
}

pub fn run(args: ReplayArgs, config: &Config) -> anyhow::Result<u8> {
    let store = SessionStore::new(config.sessions_dir(args.sessions_dir))?;
    let loaded = store.load_session(&args.session)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let fixture = match &args.fixture {
        Some(p) => Some(load_fixture(p)?),
        None => None,
    };
    let template = match &args.template {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(toml::from_str::<PromptTemplate>(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let options = ReplayOptions { verify_digests: args.verify_digests, template, fixture };
    let report = replay(&loaded, &options)?;
    match report.verdict {
        ReplayVerdict::Identical => {
            println!("replayed {} turns: frame ledger identical", report.turns_replayed);
            Ok(0)
        }
        ReplayVerdict::Drift { turn, detail } => {
            println!("drift at turn {turn}: {detail}");
            Ok(1)
        }
    }
}
