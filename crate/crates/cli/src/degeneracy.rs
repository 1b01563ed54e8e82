use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use rlp_core::model::{StrategyTable, TargetStates, WitnessMode};

#[derive(Args)]
pub struct DegeneracyArgs {
    /// Strategy table in TOML.
    #[arg(long)]
    model_file: PathBuf,
    /// Require both states and beliefs to differ (the default).
    #[arg(long, conflicts_with = "loose")]
    strict: bool,
    /// Accept any two distinct (state, belief) pairs.
    #[arg(long)]
    loose: bool,
    /// Print CSV rows instead of a report.
    #[arg(long)]
    csv: bool,
    /// Target self-state; with --target-listener, overrides the file's search target.
    #[arg(long, requires = "target_listener")]
    target_self: Option<String>,
    #[arg(long, requires = "target_self")]
    target_listener: Option<String>,
}

pub fn run(args: DegeneracyArgs) -> anyhow::Result<u8> {
    let (table, search) = StrategyTable::load(&args.model_file)?;
    let mode = if args.loose { WitnessMode::Loose } else { WitnessMode::Strict };
    let targets: Vec<TargetStates> = match (args.target_self, args.target_listener, search) {
        (Some(s), Some(b), _) => vec![TargetStates::new(s, b)],
        (_, _, Some(t)) => vec![t],
        _ => table.targets().to_vec(),
    };

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut csv = args.csv.then(|| csv::Writer::from_writer(Vec::new()));
    if let Some(w) = &mut csv {
        w.write_record([
            "target_self",
            "target_listener",
            "state_1",
            "belief_1",
            "state_2",
            "belief_2",
            "utterance",
        ])?;
    }
    let mut found = 0;
    for t in &targets {
        let witnesses = table.find_degenerate_pairs(t, mode)?;
        found += witnesses.len();
        match &mut csv {
            Some(w) => {
                for x in &witnesses {
                    w.write_record([
                        &t.target_self,
                        &t.target_listener,
                        &x.first.0,
                        &x.first.1,
                        &x.second.0,
                        &x.second.1,
                        &x.utterance,
                    ])?;
                }
            }
            None => {
                writeln!(
                    out,
                    "target ({}, {}): {} {} witness{}",
                    t.target_self,
                    t.target_listener,
                    witnesses.len(),
                    if mode == WitnessMode::Strict { "strict" } else { "loose" },
                    if witnesses.len() == 1 { "" } else { "es" }
                )?;
                for x in &witnesses {
                    writeln!(
                        out,
                        "  ({}, {}) and ({}, {}) both say {}",
                        x.first.0, x.first.1, x.second.0, x.second.1, x.utterance
                    )?;
                }
            }
        }
    }
    if let Some(w) = csv {
        out.write_all(&w.into_inner()?)?;
    }
    Ok(if found > 0 { 0 } else { 1 })
}
