//! Multilingual OCR evaluation and deployment benchmarking.
//!
//! Metrics (ANLS at word, code-point or grapheme level, exact and percentage
//! match for key-value extraction, free-form substring match), the nine
//! document schemas and their prompts, a tiling planner, a decoding-latency
//! model, pluggable backends with a prediction cache, and report rendering.

pub mod backends;
pub mod datasets;
pub mod latency;
pub mod metrics;
pub mod reporting;
pub mod schemas;
pub mod text;
pub mod tiler;

pub use datasets::{load_manifest, Manifest, ManifestEntry, Task};
pub use metrics::{AnlsScore, ExtractionScore, FieldScore, FreeFormMatchScore};
pub use schemas::{DocType, FieldRecord, SchemaRegistry};
pub use text::{normalize, segment, NormalizationPolicy, SegmentUnit, Transcript};
