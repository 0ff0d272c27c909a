use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use personarank::eval::{Ablation, SegmentAxis};

#[derive(Debug, Clone, Parser)]
#[command(name = "personarank", version, about = "Persona-indexed reranking: offline pipeline, evaluation and service")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "PERSONARANK_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the run seed, the training seed and the benchmark seed.
    #[arg(long, global = true, env = "PERSONARANK_SEED")]
    pub seed: Option<u64>,
    /// Artifact directory (overrides paths.out_dir).
    #[arg(long, global = true, env = "PERSONARANK_OUT_DIR")]
    pub output: Option<PathBuf>,
    /// Corpus directory (overrides paths.data_dir).
    #[arg(long, global = true, env = "PERSONARANK_DATA_DIR")]
    pub data: Option<PathBuf>,
    /// Use the deterministic keyword-rule provider instead of [provider].
    #[arg(long, global = true)]
    pub mock_llm: bool,
    /// Keep records already written by an earlier run of the stage.
    #[arg(long, global = true)]
    pub resume: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Offline reasoning stages.
    Pipeline {
        #[command(subcommand)]
        stage: Stage,
    },
    /// Fit the projection head on the alignment records.
    Train,
    /// Build or inspect the persona index.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Leave-one-out evaluation and ablations.
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
    /// Rerank latency benchmark.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Run the HTTP reranking service.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Write a synthetic keyword corpus and candidate lists to the data directory.
    Synth {
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 2000)]
        reviews: usize,
        /// Negatives per candidate list.
        #[arg(long, default_value_t = 19)]
        negatives: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Stage {
    Summarize,
    Aspects,
    Personas,
    Profiles,
    Align,
    /// Every stage in order.
    All,
}

#[derive(Debug, Clone, Subcommand)]
pub enum IndexAction {
    Build {
        /// Build with the identity head when no trained head exists.
        #[arg(long)]
        identity_head: bool,
    },
    Inspect {
        /// Index file (defaults to the configured one).
        #[arg(long)]
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum EvalAction {
    Run(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// full, summary-only, persona-cap=K or random.
    #[arg(long, value_parser = parse_mode)]
    pub ablation: Option<EvalMode>,
    /// Cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Segment axes to report (repeatable).
    #[arg(long, value_parser = parse_axis)]
    pub segment: Vec<SegmentAxis>,
    /// Candidate lists (defaults to <data>/candidates.jsonl).
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Report path (defaults to <output>/report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Ablation(Ablation),
    Random,
}

pub fn parse_mode(s: &str) -> Result<EvalMode, String> {
    let norm = s.trim().to_ascii_lowercase().replace('_', "-");
    match norm.as_str() {
        "full" => return Ok(EvalMode::Ablation(Ablation::Full)),
        "summary-only" => return Ok(EvalMode::Ablation(Ablation::SummaryOnly)),
        "random" => return Ok(EvalMode::Random),
        _ => {}
    }
    let k = norm
        .strip_prefix("persona-cap")
        .map(|rest| rest.trim_start_matches(['=', ':', '-']))
        .ok_or_else(|| format!("unknown mode {s:?}; expected full, summary-only, persona-cap=K or random"))?;
    match k.parse::<usize>() {
        Ok(k) if k > 0 => Ok(EvalMode::Ablation(Ablation::PersonaCap(k))),
        _ => Err(format!("persona cap needs a positive K, got {s:?}")),
    }
}

pub fn parse_axis(s: &str) -> Result<SegmentAxis, String> {
    match s {
        "user" => Ok(SegmentAxis::User),
        "item" => Ok(SegmentAxis::Item),
        _ => Err(format!("unknown segment axis {s:?}; expected user or item")),
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum BenchAction {
    Latency {
        /// Candidate-list sizes for the scaling series, comma separated.
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<usize>>,
        /// User batch sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        users: Option<Vec<usize>>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn modes_parse() {
        assert_eq!(parse_mode("summary-only"), Ok(EvalMode::Ablation(Ablation::SummaryOnly)));
        assert_eq!(parse_mode("summary_only"), Ok(EvalMode::Ablation(Ablation::SummaryOnly)));
        assert_eq!(parse_mode("persona-cap=3"), Ok(EvalMode::Ablation(Ablation::PersonaCap(3))));
        assert_eq!(parse_mode("persona_cap_7"), Ok(EvalMode::Ablation(Ablation::PersonaCap(7))));
        assert!(parse_mode("persona-cap=0").is_err());
        assert!(parse_mode("best").is_err());
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = Cli::try_parse_from(["personarank", "pipeline", "personas", "--mock-llm", "--seed", "7"]).unwrap();
        assert!(cli.mock_llm);
        assert_eq!(cli.seed, Some(7));
        assert!(matches!(cli.command, Command::Pipeline { stage: Stage::Personas }));
    }
}
