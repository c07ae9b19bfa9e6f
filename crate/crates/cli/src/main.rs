mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anchormt::corpus::Lang;
use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "anchormt", version, about = "Dictionary-anchored unsupervised translation pipeline")]
pub struct Cli {
    /// JSON object of dotted config keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable and applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; wins over config and --set.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; wins over config and --set.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn parse_lang(s: &str) -> Result<Lang, String> {
    Lang::parse(s).ok_or_else(|| format!("unknown language {s:?}, expected src or tgt"))
}

/// Corpora and dictionary shared by the training commands. Dictionary files are
/// always source → target.
#[derive(Args, Debug)]
pub struct TrainData {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    codes: PathBuf,
    /// Parallel validation sources, line-aligned with --valid-tgt.
    #[arg(long, requires = "valid_tgt")]
    valid_src: Option<PathBuf>,
    #[arg(long, requires = "valid_src")]
    valid_tgt: Option<PathBuf>,
    /// Pivot language of the view: the non-pivot side is anchored into it.
    #[arg(long, default_value = "tgt", value_parser = parse_lang)]
    pivot: Lang,
    /// Ignore the dictionary entirely (un-anchored ablation).
    #[arg(long)]
    no_anchor: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cipher language pair.
    SynthGen {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Learn joint BPE merges over both corpora.
    LearnBpe {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Dictionary whose words are counted once each, so they stay segmentable.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        codes: PathBuf,
        /// Also write the vocabulary as TSV.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Segment a corpus into subword units.
    ApplyBpe {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Entry count and token coverage of a dictionary on a corpus.
    DictStats {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Language of the corpus; a target corpus is checked against the inverted dictionary.
        #[arg(long, default_value = "src", value_parser = parse_lang)]
        lang: Lang,
    },
    /// Replace dictionary words of a corpus with their translations.
    Anchor {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "src", value_parser = parse_lang)]
        lang: Lang,
    },
    /// Masked-prediction pretraining on anchored (or raw) monolingual corpora.
    PretrainAcp {
        #[command(flatten)]
        data: TrainData,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Anchored training of one view.
    TrainAt {
        #[command(flatten)]
        data: TrainData,
        #[arg(long)]
        model_out: PathBuf,
        /// Pretrained checkpoint; encoder-only checkpoints initialize the encoder and embeddings.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Per-round losses as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train both views and combine them.
    TrainBiview {
        #[command(flatten)]
        data: TrainData,
        /// Source → target model.
        #[arg(long)]
        model_out: PathBuf,
        /// Target → source model.
        #[arg(long)]
        reverse_model_out: PathBuf,
        #[arg(long)]
        init_target_view: Option<PathBuf>,
        #[arg(long)]
        init_source_view: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Greedy translation of a corpus.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "src", value_parser = parse_lang)]
        lang: Lang,
        #[arg(long, required_unless_present = "no_anchor")]
        dict: Option<PathBuf>,
        /// Feed the input without anchoring.
        #[arg(long)]
        no_anchor: bool,
    },
    /// Word-by-word dictionary translation.
    BaselineWbw {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "src", value_parser = parse_lang)]
        lang: Lang,
    },
    /// Supervised orthogonal mapping of source embeddings onto target embeddings.
    BaselineSwet {
        #[arg(long)]
        dict: PathBuf,
        /// Source corpus for skip-gram training; ignored with --src-emb.
        #[arg(long, required_unless_present = "src_emb")]
        src_corpus: Option<PathBuf>,
        #[arg(long, required_unless_present = "tgt_emb")]
        tgt_corpus: Option<PathBuf>,
        /// Pretrained source embeddings in word2vec text format.
        #[arg(long)]
        src_emb: Option<PathBuf>,
        #[arg(long)]
        tgt_emb: Option<PathBuf>,
        /// Mapped source embeddings, word2vec text.
        #[arg(long)]
        mapped_out: PathBuf,
        /// Normalized target embeddings, word2vec text.
        #[arg(long)]
        tgt_out: PathBuf,
        /// Report retrieval precision on these held-out pairs.
        #[arg(long)]
        test_dict: Option<PathBuf>,
        /// Write a fresh translation model whose embedding table holds the aligned vectors.
        #[arg(long, requires = "codes")]
        init_model_out: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
    },
    /// Corpus BLEU against one or more reference files.
    EvalBleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref", required = true)]
        refs: Vec<PathBuf>,
    },
    /// Retrieval precision at k of dictionary pairs in two embedding spaces.
    EvalBli {
        #[arg(long)]
        dict: PathBuf,
        /// word2vec source space; with --model the model's embedding table is used instead.
        #[arg(long, required_unless_present = "model", requires = "tgt_emb")]
        src_emb: Option<PathBuf>,
        #[arg(long)]
        tgt_emb: Option<PathBuf>,
        #[arg(long, requires = "codes", conflicts_with = "src_emb")]
        model: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
        /// Extra target candidates (every token of this file) beyond the dictionary's targets.
        #[arg(long)]
        tgt_words: Option<PathBuf>,
    },
    /// Per-layer encoder cosine similarity of parallel sentences.
    EvalCosine {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Anchor the source side first, as the model sees it when translating.
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// Export embedding-table rows of words as TSV.
    ExportEmb {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        /// Every token of this file is exported as a source word.
        #[arg(long)]
        src_words: Option<PathBuf>,
        #[arg(long)]
        tgt_words: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthGen { .. } => "synth-gen",
            Command::LearnBpe { .. } => "learn-bpe",
            Command::ApplyBpe { .. } => "apply-bpe",
            Command::DictStats { .. } => "dict-stats",
            Command::Anchor { .. } => "anchor",
            Command::PretrainAcp { .. } => "pretrain-acp",
            Command::TrainAt { .. } => "train-at",
            Command::TrainBiview { .. } => "train-biview",
            Command::Translate { .. } => "translate",
            Command::BaselineWbw { .. } => "baseline-wbw",
            Command::BaselineSwet { .. } => "baseline-swet",
            Command::EvalBleu { .. } => "eval-bleu",
            Command::EvalBli { .. } => "eval-bli",
            Command::EvalCosine { .. } => "eval-cosine",
            Command::ExportEmb { .. } => "export-emb",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(anchormt::Error),
}

impl From<anchormt::Error> for CliError {
    fn from(e: anchormt::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(anchormt::Error::Config(_)) => 1,
            CliError::Core(anchormt::Error::Io { .. } | anchormt::Error::Data(_)) => 2,
            CliError::Core(anchormt::Error::Numeric(_)) => 3,
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(j) = cli.jobs {
        overrides.push(format!("jobs={j}"));
    }
    Ok(ExperimentConfig::resolve(cli.config.as_deref(), &overrides)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    let flat = cfg.to_flat();
    log::info!("{} config {}", cli.command.name(), serde_json::to_string(&flat).expect("config serializes"));
    if cfg.jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let result = commands::dispatch(&cli.command, &cfg)?;
    let doc = serde_json::json!({
        "command": cli.command.name(),
        "config": flat,
        "result": result,
    });
    let text = serde_json::to_string_pretty(&doc).expect("result serializes");
    match &cli.out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|source| {
            CliError::Core(anchormt::Error::Io {
                path: p.clone(),
                source,
            })
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
