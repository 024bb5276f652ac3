//! Edit-distance OCR metrics and field-level extraction scores.

use serde::{Deserialize, Serialize};

use crate::schemas::FieldRecord;
use crate::text::{segment_str, NormalizationPolicy, SegmentUnit, Transcript};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no samples")]
    NoSamples,
    #[error("no documents")]
    NoDocuments,
    #[error("document type mismatch: prediction {pred}, reference {reference}")]
    DocTypeMismatch { pred: String, reference: String },
    #[error("no ground-truth fields")]
    NoFields,
}

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    // Keep the shorter sequence in the row.
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, x) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// `edit_distance / max(len)`, with two empty sequences at distance 0.
pub fn normalized_distance<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

/// Normalized distance between two already-normalized strings at `unit`.
pub fn normalized_distance_str(a: &str, b: &str, unit: SegmentUnit) -> f64 {
    normalized_distance(&segment_str(a, unit), &segment_str(b, unit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnlsScore {
    /// Mean normalized distance in [0, 1].
    pub value: f64,
    /// `value * 100`, the reporting scale. Lower is better.
    pub scaled: f64,
    pub unit: SegmentUnit,
    pub n_pairs: usize,
}

impl AnlsScore {
    pub fn from_mean(value: f64, unit: SegmentUnit, n_pairs: usize) -> Self {
        Self {
            value,
            scaled: value * 100.0,
            unit,
            n_pairs,
        }
    }
}

/// Unweighted mean normalized edit distance over (prediction, reference) pairs.
pub fn anls(pairs: &[(Transcript, Transcript)], unit: SegmentUnit) -> Result<AnlsScore, MetricsError> {
    anls_iter(pairs.iter().map(|(p, r)| (p.normalized.as_str(), r.normalized.as_str())), unit)
}

/// [`anls`] over normalized string pairs.
pub fn anls_iter<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    unit: SegmentUnit,
) -> Result<AnlsScore, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pred, reference) in pairs {
        sum += normalized_distance_str(pred, reference, unit);
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoSamples);
    }
    Ok(AnlsScore::from_mean(sum / n as f64, unit, n))
}

pub fn exact_match(pred: &str, reference: &str, policy: &NormalizationPolicy) -> bool {
    policy.apply(pred) == policy.apply(reference)
}

/// Soft field similarity: one minus the code-point normalized distance of the
/// normalized strings.
pub fn percentage_match_field(pred: &str, reference: &str, policy: &NormalizationPolicy) -> f64 {
    1.0 - normalized_distance_str(&policy.apply(pred), &policy.apply(reference), SegmentUnit::Codepoint)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldScore {
    pub field: String,
    pub em: bool,
    pub pm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionScore {
    pub per_field: Vec<FieldScore>,
    /// Percent.
    pub doc_em: f64,
    /// Percent.
    pub doc_pm: f64,
    /// `(doc_em + doc_pm) / 2`.
    pub mean: f64,
    pub spurious_fields: usize,
}

impl ExtractionScore {
    fn from_fields(per_field: Vec<FieldScore>, spurious_fields: usize) -> Self {
        let n = per_field.len();
        let (doc_em, doc_pm) = if n == 0 {
            (0.0, 0.0)
        } else {
            let em = per_field.iter().filter(|f| f.em).count() as f64 / n as f64;
            let pm = per_field.iter().map(|f| f.pm).sum::<f64>() / n as f64;
            (100.0 * em, 100.0 * pm)
        };
        Self {
            per_field,
            doc_em,
            doc_pm,
            mean: (doc_em + doc_pm) / 2.0,
            spurious_fields,
        }
    }
}

/// Score every reference field; missing predictions score zero and extra
/// predicted fields are only counted.
pub fn score_extraction(
    pred: &FieldRecord,
    reference: &FieldRecord,
    policy: &NormalizationPolicy,
) -> Result<ExtractionScore, MetricsError> {
    if pred.doc_type != reference.doc_type {
        let name = |d: Option<crate::schemas::DocType>| d.map_or("none".to_string(), |d| d.to_string());
        return Err(MetricsError::DocTypeMismatch {
            pred: name(pred.doc_type),
            reference: name(reference.doc_type),
        });
    }
    let per_field = reference
        .values
        .iter()
        .map(|(field, ref_value)| match pred.values.get(field) {
            Some(p) => FieldScore {
                field: field.clone(),
                em: exact_match(p, ref_value, policy),
                pm: percentage_match_field(p, ref_value, policy),
            },
            None => FieldScore {
                field: field.clone(),
                em: false,
                pm: 0.0,
            },
        })
        .collect();
    let spurious = pred.values.keys().filter(|k| !reference.values.contains_key(*k)).count();
    Ok(ExtractionScore::from_fields(per_field, spurious))
}

/// Macro average over documents. `per_field` of the result is empty and
/// `spurious_fields` is the total.
pub fn aggregate_dataset(doc_scores: &[ExtractionScore]) -> Result<ExtractionScore, MetricsError> {
    if doc_scores.is_empty() {
        return Err(MetricsError::NoDocuments);
    }
    let n = doc_scores.len() as f64;
    let doc_em = doc_scores.iter().map(|s| s.doc_em).sum::<f64>() / n;
    let doc_pm = doc_scores.iter().map(|s| s.doc_pm).sum::<f64>() / n;
    let mean = doc_scores.iter().map(|s| s.mean).sum::<f64>() / n;
    Ok(ExtractionScore {
        per_field: Vec::new(),
        doc_em,
        doc_pm,
        mean,
        spurious_fields: doc_scores.iter().map(|s| s.spurious_fields).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeFormMatchScore {
    pub matched: usize,
    pub total: usize,
    pub percent: f64,
}

impl FreeFormMatchScore {
    pub fn new(matched: usize, total: usize) -> Self {
        let percent = if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64 * 100.0
        };
        Self { matched, total, percent }
    }

    /// Pool counts across documents.
    pub fn merge(self, other: Self) -> Self {
        Self::new(self.matched + other.matched, self.total + other.total)
    }
}

/// Macro average over documents: `percent` is the mean of per-document
/// percentages while `matched` and `total` are summed.
pub fn aggregate_match(doc_scores: &[FreeFormMatchScore]) -> Result<FreeFormMatchScore, MetricsError> {
    if doc_scores.is_empty() {
        return Err(MetricsError::NoDocuments);
    }
    let pooled = doc_scores.iter().fold(FreeFormMatchScore::new(0, 0), |a, &b| a.merge(b));
    Ok(FreeFormMatchScore {
        percent: doc_scores.iter().map(|s| s.percent).sum::<f64>() / doc_scores.len() as f64,
        ..pooled
    })
}

/// Count ground-truth values that occur verbatim, after normalization, in the
/// OCR text.
pub fn free_form_match(
    gt_fields: &FieldRecord,
    ocr_text: &Transcript,
    policy: &NormalizationPolicy,
) -> Result<FreeFormMatchScore, MetricsError> {
    if gt_fields.values.is_empty() {
        return Err(MetricsError::NoFields);
    }
    let haystack = policy.apply(&ocr_text.raw);
    let matched = gt_fields
        .values
        .values()
        .filter(|v| haystack.contains(&policy.apply(v)))
        .count();
    Ok(FreeFormMatchScore::new(matched, gt_fields.values.len()))
}
