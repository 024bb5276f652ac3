use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;

use indexmap::IndexMap;

use ocrbench::backends::{read_predictions, PredictionRecord};
use ocrbench::datasets::{Manifest, Task};
use ocrbench::metrics::{aggregate_dataset, aggregate_match, anls, free_form_match, score_extraction, AnlsScore, ExtractionScore, FreeFormMatchScore};
use ocrbench::reporting::{build_extraction_report, build_match_report, build_ocr_report, build_spurious_report, ExtractionMetric};
use ocrbench::schemas::{DocType, FieldRecord, SchemaRegistry, Violation};
use ocrbench::text::{NormalizationPolicy, SegmentUnit, Transcript};

use crate::{data, policy_for, provenance, warn_load, write_report, CliError, CliResult, EvaluateArgs, ExtractEvalArgs};

/// Predictions from one or more files, keyed by model then sample id.
struct PredictionSet {
    models: Vec<String>,
    by_model: HashMap<String, HashMap<String, PredictionRecord>>,
}

impl PredictionSet {
    fn load(files: &[PathBuf], manifest: &Manifest, only: &[String]) -> CliResult<Self> {
        let mut set = PredictionSet {
            models: Vec::new(),
            by_model: HashMap::new(),
        };
        for file in files {
            for rec in read_predictions(file).map_err(CliError::Data)? {
                if !only.is_empty() && !only.contains(&rec.model) {
                    continue;
                }
                if manifest.get(&rec.sample_id).is_none() {
                    return Err(CliError::Data(format!(
                        "{}: sample {} is not in the manifest",
                        file.display(),
                        rec.sample_id
                    )));
                }
                if !set.models.contains(&rec.model) {
                    set.models.push(rec.model.clone());
                }
                let m = set.by_model.entry(rec.model.clone()).or_default();
                if m.contains_key(&rec.sample_id) {
                    return Err(CliError::Data(format!(
                        "{}: duplicate prediction for {} / {}",
                        file.display(),
                        rec.model,
                        rec.sample_id
                    )));
                }
                m.insert(rec.sample_id.clone(), rec);
            }
        }
        if set.models.is_empty() {
            return Err(CliError::Data("no predictions to evaluate".into()));
        }
        Ok(set)
    }

    /// Output text for a sample; errors and gaps count as empty output.
    fn output<'a>(&'a self, model: &str, sample_id: &str, missing: &mut usize) -> &'a str {
        match self.by_model.get(model).and_then(|m| m.get(sample_id)) {
            Some(r) if !r.is_error() => &r.output_text,
            _ => {
                *missing += 1;
                ""
            }
        }
    }
}

fn warn_missing(err: &mut dyn Write, model: &str, missing: usize) {
    if missing > 0 {
        let _ = writeln!(err, "warning: {model}: {missing} sample(s) without usable output scored as empty");
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let loaded = ocrbench::load_manifest(&args.manifest).map_err(data)?;
    warn_load(&loaded, err);
    let manifest = &loaded.manifest;
    let preds = PredictionSet::load(&args.predictions, manifest, &args.model)?;
    let mut units: Vec<SegmentUnit> = args.unit.iter().map(|&u| u.into()).collect();
    units.dedup();
    let anls_policy = policy_for(args.case_fold, NormalizationPolicy::default());
    let match_policy = policy_for(args.case_fold, NormalizationPolicy::free_form());
    let base = provenance(&args.manifest, &args.predictions)?;

    let transcribe: Vec<_> = manifest.entries.iter().filter(|e| e.task == Task::Transcribe).collect();
    let freeform: Vec<_> = manifest.entries.iter().filter(|e| e.task == Task::FreeformMatch).collect();
    if transcribe.is_empty() && freeform.is_empty() {
        return Err(CliError::Data("manifest has no transcribe or freeform_match entries".into()));
    }
    let mut languages: Vec<&str> = Vec::new();
    for e in transcribe.iter().chain(&freeform) {
        if !languages.contains(&e.language.as_str()) {
            languages.push(&e.language);
        }
    }

    if !transcribe.is_empty() {
        let mut scores: IndexMap<(String, String), Vec<AnlsScore>> = IndexMap::new();
        for model in &preds.models {
            let mut missing = 0;
            for lang in &languages {
                let pairs: Vec<(Transcript, Transcript)> = transcribe
                    .iter()
                    .filter(|e| e.language == *lang)
                    .map(|e| {
                        let out = preds.output(model, &e.sample_id, &mut missing);
                        (
                            Transcript::new(out, lang.to_string(), &anls_policy),
                            Transcript::new(e.text_truth().unwrap_or_default(), lang.to_string(), &anls_policy),
                        )
                    })
                    .collect();
                if pairs.is_empty() {
                    continue;
                }
                let s = units.iter().map(|&u| anls(&pairs, u)).collect::<Result<Vec<_>, _>>().map_err(data)?;
                scores.insert((model.clone(), lang.to_string()), s);
            }
            warn_missing(err, model, missing);
        }
        let mut prov = base.clone();
        prov.insert("policy".into(), anls_policy.to_string());
        prov.insert("units".into(), units.iter().map(|u| u.as_str()).collect::<Vec<_>>().join(","));
        let report = build_ocr_report(&scores).with_provenance(&prov);
        write_report(&report, &args.out, "ocr", &args.format, out)?;
    }

    if !freeform.is_empty() {
        let mut scores: IndexMap<(String, String), FreeFormMatchScore> = IndexMap::new();
        for model in &preds.models {
            let mut missing = 0;
            for lang in &languages {
                let mut docs = Vec::new();
                for e in freeform.iter().filter(|e| e.language == *lang) {
                    let gt = e.field_truth().expect("freeform entries carry fields");
                    let text = Transcript::new(preds.output(model, &e.sample_id, &mut missing), lang.to_string(), &match_policy);
                    docs.push(free_form_match(&gt, &text, &match_policy).map_err(data)?);
                }
                if !docs.is_empty() {
                    scores.insert((model.clone(), lang.to_string()), aggregate_match(&docs).map_err(data)?);
                }
            }
            warn_missing(err, model, missing);
        }
        let mut prov = base;
        prov.insert("policy".into(), match_policy.to_string());
        let counts: Vec<String> = scores
            .iter()
            .map(|((m, l), s)| format!("{m}/{l}={}/{}", s.matched, s.total))
            .collect();
        prov.insert("matched".into(), counts.join(" "));
        let report = build_match_report(&scores).with_provenance(&prov);
        write_report(&report, &args.out, "match", &args.format, out)?;
    }
    Ok(())
}

pub fn cmd_extract_eval(args: &ExtractEvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let loaded = ocrbench::load_manifest(&args.manifest).map_err(data)?;
    warn_load(&loaded, err);
    let manifest = &loaded.manifest;
    let preds = PredictionSet::load(&args.predictions, manifest, &args.model)?;
    let policy = policy_for(args.case_fold, NormalizationPolicy::default());
    let registry = SchemaRegistry::bundled();

    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| e.task == Task::Extract)
        .filter_map(|e| Some((e, e.doc_type?, e.field_truth()?)))
        .collect();
    if entries.is_empty() {
        return Err(CliError::Data("manifest has no extract entries".into()));
    }

    let mut scores: IndexMap<(String, DocType), ExtractionScore> = IndexMap::new();
    let mut prov = provenance(&args.manifest, &args.predictions)?;
    prov.insert("policy".into(), policy.to_string());
    for model in &preds.models {
        let mut missing = 0;
        let mut per_doc: IndexMap<DocType, Vec<ExtractionScore>> = IndexMap::new();
        let mut violations: BTreeMap<&'static str, usize> = BTreeMap::new();
        let mut unparsed = 0;
        for (entry, doc_type, truth) in &entries {
            let raw = preds.output(model, &entry.sample_id, &mut missing);
            let mut dropped = 0;
            let pred = match registry.parse_output(raw, *doc_type) {
                Ok(p) => {
                    for v in &p.violations {
                        *violations.entry(v.kind()).or_default() += 1;
                        dropped += usize::from(matches!(v, Violation::SpuriousField(_)));
                    }
                    p.record
                }
                Err(_) => {
                    unparsed += 1;
                    FieldRecord::new(Some(*doc_type))
                }
            };
            // Non-schema keys are dropped at parse time; count them here.
            let mut s = score_extraction(&pred, truth, &policy).map_err(data)?;
            s.spurious_fields += dropped;
            per_doc.entry(*doc_type).or_default().push(s);
        }
        for (d, docs) in per_doc {
            scores.insert((model.clone(), d), aggregate_dataset(&docs).map_err(data)?);
        }
        warn_missing(err, model, missing);
        let mut summary: Vec<String> = violations.iter().map(|(k, n)| format!("{}={n}", k.replace(' ', "_"))).collect();
        summary.push(format!("unparsed={unparsed}"));
        prov.insert(format!("violations[{model}]"), summary.join(" "));
    }

    for (metric, stem) in [
        (ExtractionMetric::ExactMatch, "extraction_em"),
        (ExtractionMetric::PercentageMatch, "extraction_pm"),
        (ExtractionMetric::MeanScore, "extraction_mean"),
    ] {
        let report = build_extraction_report(&scores, metric).with_provenance(&prov);
        write_report(&report, &args.out, stem, &args.format, out)?;
    }
    let report = build_spurious_report(&scores).with_provenance(&prov);
    write_report(&report, &args.out, "extraction_spurious", &args.format, out)?;
    Ok(())
}
