use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vlloc::harness::{self, EvalConfig, EvalOutput, Protocol, ReportFormat};
use vlloc::{ingest, read_store, ScanSet, ScoreConfig};

/// Vision-language localization: evaluate text-to-view rankings over mapped scans.
#[derive(Parser, Debug)]
#[command(name = "vlloc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank views with precomputed text and image embeddings and score them
    Eval(EvalArgs),
    /// Score a baseline ranker under the same protocol
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Split a timestamped narration into per-view sample lines
    Align {
        /// Narration JSON document
        #[arg(long)]
        narration: PathBuf,
        /// Override the document's scan id
        #[arg(long)]
        scan_id: Option<String>,
        #[arg(long, default_value_t = 1)]
        min_words: usize,
        /// Output JSONL (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BaselineKind {
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ProtocolArg {
    /// Every view of the sample's scan
    Full,
    /// Target plus k-1 random distractors from the same scan
    #[value(alias = "k")]
    K20,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Sample JSONL (text, scan_id, view_id, optional id/source)
    #[arg(long)]
    samples: PathBuf,
    /// Directory of scan JSON documents
    #[arg(long)]
    scans: PathBuf,
    /// Text embedding store keyed by sample id
    #[arg(long)]
    text_emb: Option<PathBuf>,
    /// Image embedding store keyed by view id
    #[arg(long)]
    image_emb: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    protocol: ProtocolArg,
    /// Candidates per sample for the k-candidate protocol
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// "Close" threshold in meters of graph distance
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    /// L2-normalize embeddings before the dot product (default)
    #[arg(long, overrides_with = "no_normalize")]
    normalize: bool,
    /// Use raw dot products
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Report output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sample JSONL output path
    #[arg(long)]
    per_sample: Option<PathBuf>,
    /// Include each sample's ranked candidate probabilities in --per-sample
    #[arg(long)]
    with_probs: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Worker threads (defaults to all cores)
    #[arg(long)]
    workers: Option<usize>,
}

impl EvalArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            protocol: match self.protocol {
                ProtocolArg::Full => Protocol::FullScan,
                ProtocolArg::K20 => Protocol::KCandidate,
            },
            k: self.k,
            seed: self.seed,
            threshold_m: self.threshold,
            score: ScoreConfig {
                normalize: self.normalize || !self.no_normalize,
                temperature: self.temperature,
            },
            workers: self.workers,
            keep_distributions: self.with_probs,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn load_inputs(args: &EvalArgs) -> Result<(Vec<vlloc::AlignedPair>, ScanSet)> {
    let samples = ingest::load_samples(open(&args.samples)?)
        .with_context(|| format!("loading samples from {}", args.samples.display()))?;
    let scans = ScanSet::load_dir(&args.scans)
        .with_context(|| format!("loading scans from {}", args.scans.display()))?;
    ingest::validate_pairs(&samples, &scans).context("validating samples against scans")?;
    Ok((samples, scans))
}

fn load_store(path: Option<&PathBuf>, flag: &str) -> Result<vlloc::EmbeddingStore> {
    let path = path.with_context(|| format!("{flag} is required"))?;
    read_store(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn write_outputs(args: &EvalArgs, output: &EvalOutput) -> Result<()> {
    let format = match args.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    match &args.out {
        Some(path) => {
            harness::emit_report(&output.report, create(path)?, format)?;
        }
        None => {
            harness::emit_report(&output.report, io::stdout().lock(), format)?;
        }
    }
    if let Some(path) = &args.per_sample {
        harness::emit_per_sample(&output.samples, create(path)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval(args) => {
            let text = load_store(args.text_emb.as_ref(), "--text-emb")?;
            let image = load_store(args.image_emb.as_ref(), "--image-emb")?;
            let (samples, scans) = load_inputs(&args)?;
            let output = harness::run_eval(&samples, &scans, &text, &image, &args.config())?;
            write_outputs(&args, &output)
        }
        Command::Baseline {
            kind: BaselineKind::Random,
            args,
        } => {
            let (samples, scans) = load_inputs(&args)?;
            let output = harness::random_baseline(&samples, &scans, &args.config())?;
            write_outputs(&args, &output)
        }
        Command::Align {
            narration,
            scan_id,
            min_words,
            out,
        } => {
            let mut doc = ingest::load_narration(open(&narration)?)
                .with_context(|| format!("reading {}", narration.display()))?;
            if let Some(id) = scan_id {
                doc.scan_id = id;
            }
            let pairs = ingest::align_narration(&doc, min_words)?;
            let mut sink: Box<dyn Write> = match out {
                Some(path) => Box::new(create(&path)?),
                None => Box::new(io::stdout().lock()),
            };
            for p in &pairs {
                serde_json_line(&mut sink, p)?;
            }
            sink.flush()?;
            Ok(())
        }
    }
}

fn serde_json_line(sink: &mut dyn Write, pair: &vlloc::AlignedPair) -> Result<()> {
    writeln!(sink, "{}", serde_json::to_string(pair)?)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
