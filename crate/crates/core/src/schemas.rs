//! Document schemas for structured key-value extraction, their prompts, and
//! parsing of model outputs into [`FieldRecord`]s.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

pub const REGISTRY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("unknown document type {0:?}; valid types: {list}", list = DocType::names().join(", "))]
    UnknownDocType(String),
    #[error("no key-value object found in model output")]
    NoObject { raw: String },
    #[error("registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("registry line {line}: {message}")]
    Registry { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocType {
    Aadhaar,
    CancelledCheque,
    CarFitness,
    CarPermit,
    DrivingLicence,
    Insurance,
    Pan,
    Puc,
    Rc,
}

impl DocType {
    pub const ALL: [DocType; 9] = [
        DocType::Aadhaar,
        DocType::CancelledCheque,
        DocType::CarFitness,
        DocType::CarPermit,
        DocType::DrivingLicence,
        DocType::Insurance,
        DocType::Pan,
        DocType::Puc,
        DocType::Rc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DocType::Aadhaar => "aadhaar",
            DocType::CancelledCheque => "cancelled_cheque",
            DocType::CarFitness => "car_fitness",
            DocType::CarPermit => "car_permit",
            DocType::DrivingLicence => "driving_licence",
            DocType::Insurance => "insurance",
            DocType::Pan => "pan",
            DocType::Puc => "puc",
            DocType::Rc => "rc",
        }
    }

    /// Row label used in extraction reports.
    pub fn display_name(&self) -> &'static str {
        match self {
            DocType::Aadhaar => "Aadhaar",
            DocType::CancelledCheque => "Cancelled Cheque",
            DocType::CarFitness => "Car Fitness",
            DocType::CarPermit => "Car Permit",
            DocType::DrivingLicence => "Driving Licence",
            DocType::Insurance => "Insurance",
            DocType::Pan => "PAN",
            DocType::Puc => "PUC",
            DocType::Rc => "RC",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|d| d.as_str()).collect()
    }

    fn bundled_prompt(&self) -> &'static str {
        match self {
            DocType::Aadhaar => include_str!("../assets/prompts/aadhaar.txt"),
            DocType::CancelledCheque => include_str!("../assets/prompts/cancelled_cheque.txt"),
            DocType::CarFitness => include_str!("../assets/prompts/car_fitness.txt"),
            DocType::CarPermit => include_str!("../assets/prompts/car_permit.txt"),
            DocType::DrivingLicence => include_str!("../assets/prompts/driving_licence.txt"),
            DocType::Insurance => include_str!("../assets/prompts/insurance.txt"),
            DocType::Pan => include_str!("../assets/prompts/pan.txt"),
            DocType::Puc => include_str!("../assets/prompts/puc.txt"),
            DocType::Rc => include_str!("../assets/prompts/rc.txt"),
        }
    }
}

impl fmt::Display for DocType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocType {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocType::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| SchemaError::UnknownDocType(s.to_string()))
    }
}

/// Field list and prompt for one document type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSchema {
    pub doc_type: DocType,
    /// Field names exactly as they appear in the prompt, trailing spaces included.
    pub fields: Vec<String>,
    /// Full prompt text, including its final newline.
    #[serde(rename = "prompt")]
    pub prompt_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_instructions: Option<String>,
}

const CLOSING_PREFIX: &str = "Ensure that each key represents";

impl DocumentSchema {
    /// Build a schema by reading the field list out of a prompt. Field lines
    /// are a quoted name, optionally preceded by a `- ` bullet.
    pub fn from_prompt(doc_type: DocType, prompt: &str) -> Self {
        let mut fields = Vec::new();
        let mut extra = None;
        for line in prompt.lines() {
            let body = line.strip_prefix("- ").unwrap_or(line);
            if body.len() >= 2 && body.starts_with('"') && body.ends_with('"') {
                fields.push(body[1..body.len() - 1].to_string());
            } else if !fields.is_empty() {
                if let Some(pos) = line.find(CLOSING_PREFIX) {
                    let before = line[..pos].trim();
                    if !before.is_empty() {
                        extra = Some(before.to_string());
                    }
                }
            }
        }
        Self {
            doc_type,
            fields,
            prompt_template: prompt.to_string(),
            extra_instructions: extra,
        }
    }

    /// Field names as used for keys in parsed output (trimmed).
    pub fn field_keys(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.trim())
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.field_keys().any(|k| k == key)
    }

    /// The prompt as sent to a model: the template without its final newline.
    pub fn prompt(&self) -> &str {
        self.prompt_template.strip_suffix('\n').unwrap_or(&self.prompt_template)
    }
}

/// Immutable set of the nine document schemas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaRegistry {
    schemas: Vec<DocumentSchema>,
}

#[derive(Serialize, Deserialize)]
struct RegistryLine {
    format_version: u32,
    #[serde(flatten)]
    schema: DocumentSchema,
}

impl SchemaRegistry {
    pub fn bundled() -> Self {
        Self {
            schemas: DocType::ALL
                .iter()
                .map(|&d| DocumentSchema::from_prompt(d, d.bundled_prompt()))
                .collect(),
        }
    }

    /// Parse a registry file: one JSON document per line, one per doc type.
    /// Doc types missing from the file fall back to the bundled schema.
    pub fn from_jsonl(text: &str) -> Result<Self, SchemaError> {
        let mut reg = Self::bundled();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RegistryLine = serde_json::from_str(line).map_err(|e| SchemaError::Registry {
                line: lineno,
                message: e.to_string(),
            })?;
            if parsed.format_version != REGISTRY_FORMAT_VERSION {
                return Err(SchemaError::Registry {
                    line: lineno,
                    message: format!("unsupported format_version {}", parsed.format_version),
                });
            }
            let schema = parsed.schema;
            if !seen.insert(schema.doc_type) {
                return Err(SchemaError::Registry {
                    line: lineno,
                    message: format!("duplicate doc_type {}", schema.doc_type),
                });
            }
            for f in &schema.fields {
                if !schema.prompt_template.contains(&format!("\"{f}\"")) {
                    return Err(SchemaError::Registry {
                        line: lineno,
                        message: format!("field {f:?} does not appear in the prompt"),
                    });
                }
            }
            let slot = reg.schemas.iter_mut().find(|s| s.doc_type == schema.doc_type).unwrap();
            *slot = schema;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.schemas {
            let line = RegistryLine {
                format_version: REGISTRY_FORMAT_VERSION,
                schema: s.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("schema serializes"));
            out.push('\n');
        }
        out
    }

    pub fn get(&self, doc_type: DocType) -> &DocumentSchema {
        self.schemas
            .iter()
            .find(|s| s.doc_type == doc_type)
            .expect("registry holds every doc type")
    }

    pub fn iter(&self) -> impl Iterator<Item = &DocumentSchema> {
        self.schemas.iter()
    }

    pub fn build_prompt(&self, doc_type: DocType) -> &str {
        self.get(doc_type).prompt()
    }

    pub fn parse_output(&self, raw: &str, doc_type: DocType) -> Result<ParsedOutput, SchemaError> {
        parse_with_schema(raw, self.get(doc_type))
    }

    pub fn validate_record(&self, rec: &FieldRecord, expected: Option<DocType>) -> Vec<Violation> {
        let mut out = Vec::new();
        match (rec.doc_type, expected) {
            (Some(found), Some(expected)) if found != expected => {
                out.push(Violation::DocTypeMismatch {
                    expected: expected.to_string(),
                    found: found.to_string(),
                });
            }
            (None, Some(expected)) => out.push(Violation::DocTypeMismatch {
                expected: expected.to_string(),
                found: "none".into(),
            }),
            _ => {}
        }
        let schema = rec.doc_type.map(|d| self.get(d));
        for (k, v) in &rec.values {
            if let Some(schema) = schema {
                if !schema.has_key(k) {
                    out.push(Violation::SpuriousField(k.clone()));
                }
            }
            if v.trim().is_empty() {
                out.push(Violation::EmptyValue(k.clone()));
            }
        }
        out
    }

    /// Serialize a record as the JSON object the prompts request, keys in
    /// schema order.
    pub fn to_wire(&self, rec: &FieldRecord) -> String {
        let mut map = serde_json::Map::new();
        if let Some(d) = rec.doc_type {
            for key in self.get(d).field_keys() {
                if let Some(v) = rec.values.get(key) {
                    map.insert(key.to_string(), serde_json::Value::String(v.clone()));
                }
            }
        }
        for (k, v) in &rec.values {
            if !map.contains_key(k) {
                map.insert(k.clone(), serde_json::Value::String(v.clone()));
            }
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("map serializes")
    }
}

impl Default for SchemaRegistry {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Bundled-schema prompt for `doc_type`.
pub fn build_prompt(doc_type: &str) -> Result<String, SchemaError> {
    let d: DocType = doc_type.parse()?;
    Ok(SchemaRegistry::bundled().build_prompt(d).to_string())
}

/// Parse model output against the bundled schema for `doc_type`.
pub fn parse_output(raw: &str, doc_type: DocType) -> Result<ParsedOutput, SchemaError> {
    SchemaRegistry::bundled().parse_output(raw, doc_type)
}

/// Ground-truth or predicted field values for one document.
///
/// `doc_type` is `None` for annotations outside the nine schemas, such as
/// receipt fields used for free-form substring matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub doc_type: Option<DocType>,
    pub values: IndexMap<String, String>,
    #[serde(default = "one")]
    pub pages: u32,
}

fn one() -> u32 {
    1
}

impl FieldRecord {
    pub fn new(doc_type: Option<DocType>) -> Self {
        Self {
            doc_type,
            values: IndexMap::new(),
            pages: 1,
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.values.insert(key.into(), value.into());
        self
    }

    pub fn from_values(doc_type: Option<DocType>, values: IndexMap<String, String>) -> Self {
        Self {
            doc_type,
            values,
            pages: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum Violation {
    FencedOutput,
    SurroundingText,
    SpuriousField(String),
    DuplicateKey(String),
    EmptyValue(String),
    NullValue(String),
    NonStringValue(String),
    DocTypeMismatch { expected: String, found: String },
}

impl Violation {
    /// Short category label used for counting.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::FencedOutput => "fenced output",
            Violation::SurroundingText => "surrounding text",
            Violation::SpuriousField(_) => "spurious field",
            Violation::DuplicateKey(_) => "duplicate key",
            Violation::EmptyValue(_) => "empty value",
            Violation::NullValue(_) => "null value",
            Violation::NonStringValue(_) => "non-string value",
            Violation::DocTypeMismatch { .. } => "doc type mismatch",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FencedOutput | Violation::SurroundingText => f.write_str(self.kind()),
            Violation::SpuriousField(k)
            | Violation::DuplicateKey(k)
            | Violation::EmptyValue(k)
            | Violation::NullValue(k)
            | Violation::NonStringValue(k) => write!(f, "{}: {k:?}", self.kind()),
            Violation::DocTypeMismatch { expected, found } => {
                write!(f, "{}: expected {expected}, found {found}", self.kind())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOutput {
    pub record: FieldRecord,
    pub violations: Vec<Violation>,
}

/// A JSON object read as an ordered list of pairs so duplicate keys survive.
struct PairList(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for PairList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = PairList;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<PairList, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    pairs.push((k, v));
                }
                Ok(PairList(pairs))
            }
        }
        d.deserialize_map(V)
    }
}

fn find_object(raw: &str) -> Option<(usize, usize, PairList)> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<PairList>();
        if let Some(Ok(pairs)) = stream.next() {
            return Some((start, start + stream.byte_offset(), pairs));
        }
    }
    None
}

fn is_fence_residue(s: &str) -> bool {
    s.split("```")
        .all(|part| matches!(part.trim(), "" | "json" | "JSON"))
}

fn parse_with_schema(raw: &str, schema: &DocumentSchema) -> Result<ParsedOutput, SchemaError> {
    let (start, end, pairs) = find_object(raw).ok_or_else(|| SchemaError::NoObject { raw: raw.to_string() })?;
    let mut violations = Vec::new();
    let (before, after) = (&raw[..start], &raw[end..]);
    if before.contains("```") || after.contains("```") {
        violations.push(Violation::FencedOutput);
    }
    if !is_fence_residue(before) || !is_fence_residue(after) {
        violations.push(Violation::SurroundingText);
    }

    let mut record = FieldRecord::new(Some(schema.doc_type));
    for (key, value) in pairs.0 {
        let key = key.trim().to_string();
        if !schema.has_key(&key) {
            violations.push(Violation::SpuriousField(key));
            continue;
        }
        if record.values.contains_key(&key) {
            violations.push(Violation::DuplicateKey(key));
            continue;
        }
        let text = match value {
            serde_json::Value::String(s) => s,
            serde_json::Value::Null => {
                violations.push(Violation::NullValue(key));
                continue;
            }
            other => {
                violations.push(Violation::NonStringValue(key.clone()));
                other.to_string()
            }
        };
        record.values.insert(key, text);
    }
    Ok(ParsedOutput { record, violations })
}
