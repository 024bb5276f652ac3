//! Unicode normalization and segmentation of OCR text.
//!
//! Every metric in the crate compares token sequences produced here, so the
//! normalization policy is an explicit value that travels into reports.

use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TextError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnicodeForm {
    /// NFC.
    #[default]
    Composed,
    /// NFD.
    Decomposed,
}

/// How raw text is canonicalized before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    pub unicode_form: UnicodeForm,
    pub case_fold: bool,
    pub collapse_whitespace: bool,
    pub strip: bool,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self {
            unicode_form: UnicodeForm::Composed,
            case_fold: false,
            collapse_whitespace: true,
            strip: true,
        }
    }
}

impl NormalizationPolicy {
    /// Default policy used for free-form substring matching: case-insensitive.
    pub fn free_form() -> Self {
        Self {
            case_fold: true,
            ..Self::default()
        }
    }

    pub fn with_case_fold(mut self, case_fold: bool) -> Self {
        self.case_fold = case_fold;
        self
    }

    /// Apply the policy to a string.
    pub fn apply(&self, raw: &str) -> String {
        let mut s = self.unicode(raw);
        if self.case_fold {
            // Lowercasing can emit decomposed sequences (e.g. U+0130), so
            // re-normalize afterwards.
            s = self.unicode(&s.to_lowercase());
        }
        match (self.collapse_whitespace, self.strip) {
            (true, true) => s.split_whitespace().collect::<Vec<_>>().join(" "),
            (true, false) => collapse_runs(&s),
            (false, true) => s.trim().to_string(),
            (false, false) => s,
        }
    }

    fn unicode(&self, s: &str) -> String {
        match self.unicode_form {
            UnicodeForm::Composed => s.nfc().collect(),
            UnicodeForm::Decomposed => s.nfd().collect(),
        }
    }
}

impl fmt::Display for NormalizationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let form = match self.unicode_form {
            UnicodeForm::Composed => "nfc",
            UnicodeForm::Decomposed => "nfd",
        };
        write!(
            f,
            "form={form} case_fold={} collapse_whitespace={} strip={}",
            self.case_fold, self.collapse_whitespace, self.strip
        )
    }
}

fn collapse_runs(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = false;
    for c in s.chars() {
        if c.is_whitespace() {
            if !in_ws {
                out.push(' ');
            }
            in_ws = true;
        } else {
            out.push(c);
            in_ws = false;
        }
    }
    out
}

/// A piece of OCR output or ground truth together with its normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub raw: String,
    pub normalized: String,
    pub language: String,
}

impl Transcript {
    pub fn new(raw: impl Into<String>, language: impl Into<String>, policy: &NormalizationPolicy) -> Self {
        let raw = raw.into();
        let normalized = policy.apply(&raw);
        Self {
            raw,
            normalized,
            language: language.into(),
        }
    }

    pub fn segment(&self, unit: SegmentUnit) -> Vec<&str> {
        segment(self, unit)
    }
}

/// Normalize `raw` under `policy`. The language tag is left empty; use
/// [`Transcript::new`] when it is known.
pub fn normalize(raw: &str, policy: &NormalizationPolicy) -> Transcript {
    Transcript::new(raw, "", policy)
}

/// Like [`normalize`], but decodes bytes first.
pub fn normalize_bytes(raw: &[u8], policy: &NormalizationPolicy) -> Result<Transcript, TextError> {
    let s = std::str::from_utf8(raw).map_err(|e| TextError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(normalize(s, policy))
}

/// Comparison unit for edit-distance metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentUnit {
    Word,
    Codepoint,
    Grapheme,
}

impl SegmentUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentUnit::Word => "word",
            SegmentUnit::Codepoint => "codepoint",
            SegmentUnit::Grapheme => "grapheme",
        }
    }
}

impl fmt::Display for SegmentUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Split the normalized text of `t` into tokens of the given unit.
///
/// Words split on any Unicode whitespace (newlines included) and never yield
/// empty tokens. Graphemes follow the extended grapheme cluster rules.
pub fn segment(t: &Transcript, unit: SegmentUnit) -> Vec<&str> {
    segment_str(&t.normalized, unit)
}

pub fn segment_str(s: &str, unit: SegmentUnit) -> Vec<&str> {
    match unit {
        SegmentUnit::Word => s.split_whitespace().collect(),
        SegmentUnit::Codepoint => s
            .char_indices()
            .map(|(i, c)| &s[i..i + c.len_utf8()])
            .collect(),
        SegmentUnit::Grapheme => s.graphemes(true).collect(),
    }
}
