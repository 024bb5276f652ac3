//! Decoding-latency model: `latency(T) = ttft + T * inter_token`.
//!
//! Token counts come from per-language token-to-word ratios rather than a
//! tokenizer, and are kept as reals because the ratios are corpus averages.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LatencyError {
    #[error("trace {index} has {count} tokens; at least 2 are needed to estimate inter-token latency")]
    TooFewTokens { index: usize, count: u64 },
    #[error("no timing traces")]
    NoTraces,
    #[error("language {0:?} is not mapped to any group")]
    UnmappedLanguage(String),
    #[error("profile line {line}: {message}")]
    Profile { line: usize, message: String },
    #[error("invalid latency parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Published,
    Measured,
}

impl fmt::Display for ProfileSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileSource::Published => "published",
            ProfileSource::Measured => "measured",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProfile {
    pub language: String,
    pub tokens_per_word: f64,
    pub source: ProfileSource,
}

/// Tokens-per-word ratios for the ten evaluated languages, in table order.
pub const BUNDLED_PROFILE: &str = include_str!("../assets/token_profile.tsv");

/// Parse a profile file: `language<TAB>tokens_per_word` rows. Lines starting
/// with `#` are comments; a `# source: <name>` comment sets the source tag.
pub fn parse_profiles(text: &str) -> Result<Vec<TokenProfile>, LatencyError> {
    let mut source = ProfileSource::Measured;
    let mut out: Vec<TokenProfile> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(tag) = comment.trim().strip_prefix("source:") {
                source = match tag.trim() {
                    "published" => ProfileSource::Published,
                    "measured" => ProfileSource::Measured,
                    other => {
                        return Err(LatencyError::Profile {
                            line: line_no,
                            message: format!("unknown source {other:?}"),
                        })
                    }
                };
            }
            continue;
        }
        let mut cols = line.split_whitespace();
        let (Some(language), Some(ratio), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(LatencyError::Profile {
                line: line_no,
                message: "expected two columns".into(),
            });
        };
        let tokens_per_word: f64 = ratio.parse().map_err(|_| LatencyError::Profile {
            line: line_no,
            message: format!("bad ratio {ratio:?}"),
        })?;
        if !(tokens_per_word > 0.0 && tokens_per_word.is_finite()) {
            return Err(LatencyError::Profile {
                line: line_no,
                message: "tokens_per_word must be positive".into(),
            });
        }
        if out.iter().any(|p| p.language == language) {
            return Err(LatencyError::Profile {
                line: line_no,
                message: format!("duplicate language {language}"),
            });
        }
        out.push(TokenProfile {
            language: language.to_string(),
            tokens_per_word,
            source,
        });
    }
    Ok(out)
}

pub fn bundled_profiles() -> Vec<TokenProfile> {
    parse_profiles(BUNDLED_PROFILE).expect("bundled profile parses")
}

pub fn load_profiles(path: &Path) -> Result<Vec<TokenProfile>, LatencyError> {
    let text = std::fs::read_to_string(path).map_err(|source| LatencyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_profiles(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    /// Seconds.
    pub ttft: f64,
    /// Seconds per token.
    pub inter_token: f64,
}

impl LatencyParams {
    pub fn new(ttft: f64, inter_token: f64) -> Result<Self, LatencyError> {
        if !(ttft >= 0.0 && ttft.is_finite()) {
            return Err(LatencyError::InvalidParams(format!("ttft {ttft} must be >= 0")));
        }
        if !(inter_token > 0.0 && inter_token.is_finite()) {
            return Err(LatencyError::InvalidParams(format!("inter-token {inter_token} must be > 0")));
        }
        Ok(Self { ttft, inter_token })
    }
}

impl Default for LatencyParams {
    /// ~125 ms to first token, ~4 ms per token.
    fn default() -> Self {
        Self {
            ttft: 0.125,
            inter_token: 0.004,
        }
    }
}

/// Timestamps in seconds relative to a shared epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingTrace {
    pub request_at: f64,
    pub first_token_at: f64,
    pub last_token_at: f64,
    pub token_count: u64,
}

impl TimingTrace {
    pub fn ttft(&self) -> f64 {
        self.first_token_at - self.request_at
    }

    pub fn end_to_end(&self) -> f64 {
        self.last_token_at - self.request_at
    }

    /// Trace a server with the given parameters would produce for `tokens` tokens.
    pub fn synthesize(request_at: f64, params: LatencyParams, tokens: u64) -> Self {
        let first = request_at + params.ttft;
        Self {
            request_at,
            first_token_at: first,
            last_token_at: first + tokens.saturating_sub(1) as f64 * params.inter_token,
            token_count: tokens.max(1),
        }
    }
}

pub fn project_tokens(words: f64, profile: &TokenProfile) -> f64 {
    words * profile.tokens_per_word
}

pub fn project_latency(tokens: f64, params: &LatencyParams) -> f64 {
    params.ttft + tokens * params.inter_token
}

/// Mean TTFT and mean per-trace inter-token gap.
pub fn estimate_params(traces: &[TimingTrace]) -> Result<LatencyParams, LatencyError> {
    if traces.is_empty() {
        return Err(LatencyError::NoTraces);
    }
    let mut ttft = 0.0;
    let mut gap = 0.0;
    for (index, t) in traces.iter().enumerate() {
        if t.token_count < 2 {
            return Err(LatencyError::TooFewTokens {
                index,
                count: t.token_count,
            });
        }
        ttft += t.ttft();
        gap += (t.last_token_at - t.first_token_at) / (t.token_count - 1) as f64;
    }
    let n = traces.len() as f64;
    Ok(LatencyParams {
        ttft: ttft / n,
        inter_token: gap / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub group: String,
    pub mean_seconds: f64,
    pub n: usize,
}

/// Ordered mapping from language tags to report groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LanguageGrouping {
    groups: Vec<(String, Vec<String>)>,
}

impl LanguageGrouping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn group(mut self, name: impl Into<String>, languages: &[&str]) -> Self {
        self.push(name.into(), languages.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn push(&mut self, name: String, languages: Vec<String>) {
        match self.groups.iter_mut().find(|(g, _)| *g == name) {
            Some((_, langs)) => langs.extend(languages),
            None => self.groups.push((name, languages)),
        }
    }

    /// Parse `Name=lang,lang` specs.
    pub fn parse_spec(spec: &str) -> Option<(String, Vec<String>)> {
        let (name, langs) = spec.split_once('=')?;
        let langs: Vec<String> = langs.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if name.trim().is_empty() || langs.is_empty() {
            return None;
        }
        Some((name.trim().to_string(), langs))
    }

    /// English, Hindi, and everything else among the evaluated Indic languages.
    pub fn english_hindi_others() -> Self {
        Self::new()
            .group("English", &["en"])
            .group("Hindi", &["hi"])
            .group("Others", &["bn", "kn", "ml", "mr", "or", "pa", "ta", "te", "gu", "as", "ur"])
    }

    pub fn group_of(&self, language: &str) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, langs)| langs.iter().any(|l| l == language))
            .map(|(g, _)| g.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|(g, _)| g.as_str())
    }
}

/// Unweighted mean end-to-end latency per group, in grouping order. Groups
/// without records are omitted.
pub fn summarize_latency(
    records: &[(String, f64)],
    grouping: &LanguageGrouping,
) -> Result<Vec<LatencySummary>, LatencyError> {
    let mut acc: HashMap<&str, (f64, usize)> = HashMap::new();
    for (language, seconds) in records {
        let g = grouping
            .group_of(language)
            .ok_or_else(|| LatencyError::UnmappedLanguage(language.clone()))?;
        let e = acc.entry(g).or_default();
        e.0 += seconds;
        e.1 += 1;
    }
    Ok(grouping
        .names()
        .filter_map(|g| {
            acc.get(g).map(|&(sum, n)| LatencySummary {
                group: g.to_string(),
                mean_seconds: sum / n as f64,
                n,
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionRow {
    pub language: String,
    pub tokens_per_word: f64,
    pub tokens: f64,
    pub latency_seconds: f64,
}

pub fn projection_table(profiles: &[TokenProfile], words: f64, params: &LatencyParams) -> Vec<ProjectionRow> {
    profiles
        .iter()
        .map(|p| {
            let tokens = project_tokens(words, p);
            ProjectionRow {
                language: p.language.clone(),
                tokens_per_word: p.tokens_per_word,
                tokens,
                latency_seconds: project_latency(tokens, params),
            }
        })
        .collect()
}
