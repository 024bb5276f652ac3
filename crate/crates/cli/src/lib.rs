//! Command-line front end for the `ocrbench` toolkit.
//!
//! Every subcommand is a plain function taking parsed arguments and an output
//! sink, so the binary and the tests share one code path. Exit codes: 0 on
//! success, 1 for data errors, 2 for usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use ocrbench::reporting::{self, EvalReport, Format};
use ocrbench::text::{NormalizationPolicy, SegmentUnit};

mod evaluate;
mod latency;
mod run;
mod synth;
mod tile;

pub use evaluate::{cmd_evaluate, cmd_extract_eval};
pub use latency::cmd_latency;
pub use run::{cmd_run, TRANSCRIBE_PROMPT};
pub use synth::cmd_synth;
pub use tile::cmd_tile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub(crate) fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ocrbench", version, about = "Multilingual OCR evaluation and deployment benchmarking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query a backend for every manifest entry and write predictions.
    Run(RunArgs),
    /// Score transcription and free-form predictions (ANLS, %Match).
    Evaluate(EvaluateArgs),
    /// Score structured extraction predictions (EM, PM, Mean Score).
    ExtractEval(ExtractEvalArgs),
    /// Project decoding latency from token profiles, or summarize measured traces.
    Latency(LatencyArgs),
    /// Plan a tiling layout, optionally writing crops for an image.
    Tile(TileArgs),
    /// Print the extraction prompt for a document type.
    Prompt(PromptArgs),
    /// Summarize a manifest.
    Stats(StatsArgs),
    /// Generate a seeded synthetic fixture (manifest, images, predictions).
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnitArg {
    Word,
    Char,
    Grapheme,
}

impl From<UnitArg> for SegmentUnit {
    fn from(u: UnitArg) -> Self {
        match u {
            UnitArg::Word => SegmentUnit::Word,
            UnitArg::Char => SegmentUnit::Codepoint,
            UnitArg::Grapheme => SegmentUnit::Grapheme,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Md,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Md => Format::Markdown,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Backend spec (JSON).
    #[arg(long)]
    pub backend: PathBuf,
    /// Model label for the predictions; defaults to the backend name.
    #[arg(long)]
    pub model: Option<String>,
    /// Prediction cache directory.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Requests in flight; 1 runs sequentially.
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
    /// Predictions output (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Mock backend time to first token, seconds.
    #[arg(long)]
    pub ttft: Option<f64>,
    /// Mock backend inter-token delay, seconds.
    #[arg(long)]
    pub inter_token: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predictions files (JSONL); repeat or comma-separate.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub predictions: Vec<PathBuf>,
    /// Restrict to these model labels.
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [UnitArg::Word, UnitArg::Char])]
    pub unit: Vec<UnitArg>,
    /// Case folding; defaults to off for ANLS and on for %Match.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub case_fold: Option<bool>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FormatArg::Md])]
    pub format: Vec<FormatArg>,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractEvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub predictions: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<String>,
    /// Case folding for field comparison; off by default.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub case_fold: Option<bool>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FormatArg::Md])]
    pub format: Vec<FormatArg>,
}

#[derive(Debug, Clone, Args)]
pub struct LatencyArgs {
    /// Token profile (TSV); defaults to the bundled profile.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 0.125)]
    pub ttft: f64,
    #[arg(long, default_value_t = 0.004)]
    pub inter_token: f64,
    #[arg(long, default_value_t = 200.0)]
    pub words: f64,
    /// Summarize measured traces from these predictions instead of projecting.
    #[arg(long, value_delimiter = ',')]
    pub predictions: Vec<PathBuf>,
    /// Manifest supplying languages for measured traces.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Language group `Name=lang,lang`; repeatable. Defaults to English / Hindi / Others.
    #[arg(long)]
    pub group: Vec<String>,
    #[arg(long, value_enum, default_value_t = FormatArg::Md)]
    pub format: FormatArg,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TileArgs {
    #[arg(long, required_unless_present = "image", requires = "height")]
    pub width: Option<u32>,
    #[arg(long, required_unless_present = "image", requires = "width")]
    pub height: Option<u32>,
    /// Page image; crops are written to `--out`.
    #[arg(long, conflicts_with_all = ["width", "height"], requires = "out")]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 336)]
    pub tile_side: u32,
    #[arg(long, default_value_t = 9)]
    pub max_tiles: u32,
    /// Quarter turns clockwise applied before planning.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub rotate: i32,
    /// Omit the global thumbnail view.
    #[arg(long)]
    pub no_global: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PromptArgs {
    pub doc_type: String,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Entries per task.
    #[arg(long, default_value_t = 12)]
    pub count: usize,
}

/// Parse `args` (including the program name) and run, returning the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match command {
        Command::Run(a) => cmd_run(&a, out, err),
        Command::Evaluate(a) => cmd_evaluate(&a, out, err),
        Command::ExtractEval(a) => cmd_extract_eval(&a, out, err),
        Command::Latency(a) => cmd_latency(&a, out),
        Command::Tile(a) => cmd_tile(&a, out),
        Command::Prompt(a) => cmd_prompt(&a, out),
        Command::Stats(a) => cmd_stats(&a, out, err),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

/// Writes the bundled prompt asset byte for byte, trailing newline included.
pub fn cmd_prompt(args: &PromptArgs, out: &mut dyn Write) -> CliResult {
    let prompt = ocrbench::schemas::build_prompt(&args.doc_type).map_err(|e| CliError::Usage(e.to_string()))?;
    out.write_all(prompt.as_bytes()).map_err(data)?;
    out.write_all(b"\n").map_err(data)?;
    Ok(())
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let report = ocrbench::load_manifest(&args.manifest).map_err(data)?;
    warn_load(&report, err);
    let s = ocrbench::datasets::stats(&report.manifest);
    let rejected: Vec<_> = report
        .rejected
        .iter()
        .map(|r| serde_json::json!({"line": r.line, "reason": r.reason}))
        .collect();
    let doc = serde_json::json!({
        "total": s.total,
        "by_language": s.by_language,
        "by_task": s.by_task,
        "by_doc_type": s.by_doc_type,
        "rejected": rejected,
        "missing_images": report.missing_images.len(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(data)?).map_err(data)?;
    Ok(())
}

pub(crate) fn warn_load(report: &ocrbench::datasets::LoadReport, err: &mut dyn Write) {
    for r in &report.rejected {
        let _ = writeln!(err, "warning: manifest line {} rejected: {}", r.line, r.reason);
    }
    if !report.missing_images.is_empty() {
        let _ = writeln!(
            err,
            "warning: {} image file(s) missing, first: {}",
            report.missing_images.len(),
            report.missing_images[0].path.display()
        );
    }
}

pub(crate) fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(ocrbench::backends::sha256_hex(&bytes))
}

pub(crate) fn policy_for(case_fold: Option<bool>, base: NormalizationPolicy) -> NormalizationPolicy {
    match case_fold {
        Some(c) => base.with_case_fold(c),
        None => base,
    }
}

/// Provenance shared by every report from one evaluation.
pub(crate) fn provenance(manifest: &Path, predictions: &[PathBuf]) -> CliResult<BTreeMap<String, String>> {
    let mut p = BTreeMap::new();
    p.insert("manifest_sha256".to_string(), file_digest(manifest)?);
    let digests = predictions.iter().map(|f| file_digest(f)).collect::<CliResult<Vec<_>>>()?;
    p.insert("predictions_sha256".to_string(), digests.join(", "));
    Ok(p)
}

/// Write `report` as `<stem>.<ext>` for each format plus `<stem>.summary.jsonl`.
pub(crate) fn write_report(
    report: &EvalReport,
    dir: &Path,
    stem: &str,
    formats: &[FormatArg],
    out: &mut dyn Write,
) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let mut formats: Vec<Format> = formats.iter().map(|&f| f.into()).collect();
    formats.dedup();
    for f in formats {
        let path = dir.join(format!("{stem}.{}", f.extension()));
        write_file(&path, reporting::render(report, f).as_bytes())?;
        written.push(path);
    }
    let path = dir.join(format!("{stem}.summary.jsonl"));
    write_file(&path, reporting::summary_jsonl(report).as_bytes())?;
    written.push(path);
    for p in &written {
        writeln!(out, "wrote {}", p.display()).map_err(data)?;
    }
    Ok(written)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
