use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ipqgr::harness::synthetic::{self, SyntheticConfig, TokenSpec};
use ipqgr::harness::{load_state, save_state, Dataset, Experiment, ExperimentConfig, StepOutput, Variant};
use ipqgr::metrics::format_run;
use ipqgr::{Error, Result};

#[derive(Parser)]
#[command(name = "ipqgr", version, about = "Continual indexing for generative retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian-mixture benchmark and a matching config.json.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        docs: usize,
        /// Emit token sequences (docs.tok) of this many tokens at most.
        #[arg(long)]
        tokens: Option<usize>,
    },
    /// Build the session-0 index and decoder and save the engine state.
    BuildBase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        state: PathBuf,
        #[command(flatten)]
        logs: Logs,
    },
    /// Index the next session into an existing engine state.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        state: PathBuf,
        #[command(flatten)]
        logs: Logs,
    },
    /// Score test queries against a saved state; writes a report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        state: PathBuf,
        /// Ranked results as `query<TAB>doc<TAB>rank<TAB>score`.
        #[arg(long)]
        run_out: Option<PathBuf>,
    },
    /// Run every session and write the report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Save the final engine state here.
        #[arg(long)]
        state: Option<PathBuf>,
        #[command(flatten)]
        logs: Logs,
        /// Per-session wall-clock seconds as JSON.
        #[arg(long)]
        timings: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Logs {
    /// Append centroid update decisions (TSV).
    #[arg(long)]
    decision_log: Option<PathBuf>,
    /// Append memory-bank entries (TSV).
    #[arg(long)]
    bank_log: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, Dataset)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.variant {
            cfg = cfg.with_variant(v);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok((cfg, Dataset::load(&self.data)?))
    }
}

impl Logs {
    fn write(&self, out: &StepOutput) -> Result<()> {
        if let Some(p) = &self.decision_log {
            let mut w = append(p)?;
            for d in &out.log {
                writeln!(w, "{}", d.to_tsv())?;
            }
            w.flush()?;
        }
        if let Some(p) = &self.bank_log {
            let mut w = append(p)?;
            w.write_all(out.bank.to_tsv().as_bytes())?;
            w.flush()?;
        }
        Ok(())
    }
}

fn append(p: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        fs::OpenOptions::new().create(true).append(true).open(p)?,
    ))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic {
            out,
            seed,
            docs,
            tokens,
        } => {
            let scfg = SyntheticConfig {
                num_docs: docs,
                seed,
                tokens: tokens.map(|max_len| TokenSpec {
                    min_len: (max_len / 2).max(2),
                    max_len: max_len.max(2),
                    token_std: 0.2,
                }),
                ..SyntheticConfig::default()
            };
            let ds = synthetic::generate(&scfg)?;
            ds.save(&out)?;
            let cfg = ExperimentConfig {
                seed,
                ..ExperimentConfig::desk()
            };
            fs::write(out.join("config.json"), cfg.to_json() + "\n")?;
            eprintln!("wrote {} documents to {}", ds.num_docs(), out.display());
        }
        Command::BuildBase { common, state, logs } => {
            let (cfg, data) = common.load()?;
            let exp = Experiment::new(cfg, &data)?;
            let (st, out) = exp.initial_state()?;
            logs.write(&out)?;
            save_state(&st, &state)?;
            emit(common.out.as_deref(), &exp.report(&st)?.to_json())?;
        }
        Command::Ingest { common, state, logs } => {
            let (cfg, data) = common.load()?;
            let exp = Experiment::new(cfg, &data)?;
            let mut st = load_state(&state)?;
            let out = exp.step(&mut st)?;
            logs.write(&out)?;
            save_state(&st, &state)?;
            emit(common.out.as_deref(), &exp.report(&st)?.to_json())?;
        }
        Command::Evaluate { common, state, run_out } => {
            let (cfg, data) = common.load()?;
            let exp = Experiment::new(cfg, &data)?;
            let st = load_state(&state)?;
            if st.config_digest != exp.config().digest() {
                return Err(Error::InvalidState(
                    "engine state was produced with a different configuration".into(),
                ));
            }
            if let Some(p) = run_out {
                let (run, scores) = exp.retrieve(&st)?;
                fs::write(p, format_run(&run, Some(&scores)))?;
            }
            emit(common.out.as_deref(), &exp.report(&st)?.to_json())?;
        }
        Command::Run {
            common,
            state,
            logs,
            timings,
        } => {
            let (cfg, data) = common.load()?;
            let exp = Experiment::new(cfg, &data)?;
            let start = Instant::now();
            let mut secs = Vec::with_capacity(exp.num_sessions());
            let (mut st, out) = exp.initial_state()?;
            secs.push(start.elapsed().as_secs_f64());
            logs.write(&out)?;
            while (st.session as usize) + 1 < exp.num_sessions() {
                let t = Instant::now();
                let out = exp.step(&mut st)?;
                secs.push(t.elapsed().as_secs_f64());
                logs.write(&out)?;
            }
            if let Some(p) = state {
                save_state(&st, &p)?;
            }
            if let Some(p) = timings {
                let doc = serde_json::json!({
                    "session_seconds": secs,
                    "total_seconds": start.elapsed().as_secs_f64(),
                });
                fs::write(p, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
            }
            emit(common.out.as_deref(), &exp.report(&st)?.to_json())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = e.category();
            eprintln!("ipqgr: {e} [{category}]");
            ExitCode::from(code as u8)
        }
    }
}
