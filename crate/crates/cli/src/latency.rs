use std::collections::BTreeMap;
use std::io::Write;

use ocrbench::backends::read_predictions;
use ocrbench::latency::{
    bundled_profiles, estimate_params, load_profiles, projection_table, summarize_latency, LanguageGrouping,
    LatencyParams, TimingTrace,
};
use ocrbench::reporting::{render, Column, Direction, EvalReport};

use crate::{data, file_digest, CliError, CliResult, LatencyArgs};

/// (language, seconds) per record, plus stream traces.
type ModelTiming = (Vec<(String, f64)>, Vec<TimingTrace>);

fn fmt_secs(v: f64) -> String {
    format!("{v:.6}").trim_end_matches('0').trim_end_matches('.').to_string()
}

fn emit(args: &LatencyArgs, report: &EvalReport, out: &mut dyn Write) -> CliResult {
    let text = render(report, args.format.into());
    match &args.out {
        Some(path) => {
            crate::write_file(path, text.as_bytes())?;
            writeln!(out, "wrote {}", path.display()).map_err(data)
        }
        None => out.write_all(text.as_bytes()).map_err(data),
    }
}

/// Projection table from a token profile, or per-model group means of
/// measured end-to-end latency when `--predictions` is given.
pub fn cmd_latency(args: &LatencyArgs, out: &mut dyn Write) -> CliResult {
    if args.predictions.is_empty() {
        project(args, out)
    } else {
        measured(args, out)
    }
}

fn project(args: &LatencyArgs, out: &mut dyn Write) -> CliResult {
    let params = LatencyParams::new(args.ttft, args.inter_token).map_err(|e| CliError::Usage(e.to_string()))?;
    if !(args.words >= 0.0 && args.words.is_finite()) {
        return Err(CliError::Usage("--words must be a non-negative number".into()));
    }
    let (profiles, source) = match &args.profile {
        Some(p) => (load_profiles(p).map_err(data)?, format!("sha256 {}", file_digest(p)?)),
        None => (bundled_profiles(), "bundled".to_string()),
    };
    let cols = vec![
        Column {
            key: "tokens_per_word".into(),
            label: "Tokens/word".into(),
            direction: Direction::Neutral,
        },
        Column {
            key: "tokens".into(),
            label: format!("Tokens ({} words)", fmt_secs(args.words)),
            direction: Direction::Neutral,
        },
        Column {
            key: "latency".into(),
            label: format!("Latency ({} words, s)", fmt_secs(args.words)),
            direction: Direction::Neutral,
        },
    ];
    let mut report = EvalReport::new("Token efficiency and projected decoding latency", cols);
    report.row_header = "Language".into();
    report.decimals = 3;
    for row in projection_table(&profiles, args.words, &params) {
        report.push_row(row.language, vec![Some(row.tokens_per_word), Some(row.tokens), Some(row.latency_seconds)]);
    }
    let mut prov = BTreeMap::new();
    prov.insert("profile".to_string(), source);
    prov.insert("ttft_seconds".to_string(), fmt_secs(params.ttft));
    prov.insert("inter_token_seconds".to_string(), fmt_secs(params.inter_token));
    prov.insert("words".to_string(), fmt_secs(args.words));
    emit(args, &report.with_provenance(&prov), out)
}

fn measured(args: &LatencyArgs, out: &mut dyn Write) -> CliResult {
    let manifest_path = args
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Usage("--predictions requires --manifest for languages".into()))?;
    let manifest = ocrbench::load_manifest(manifest_path).map_err(data)?.manifest;
    let grouping = if args.group.is_empty() {
        LanguageGrouping::english_hindi_others()
    } else {
        let mut g = LanguageGrouping::new();
        for spec in &args.group {
            let (name, langs) = LanguageGrouping::parse_spec(spec)
                .ok_or_else(|| CliError::Usage(format!("bad --group {spec:?}; expected Name=lang,lang")))?;
            g.push(name, langs);
        }
        g
    };

    let mut models: Vec<String> = Vec::new();
    let mut by_model: BTreeMap<String, ModelTiming> = BTreeMap::new();
    for file in &args.predictions {
        for rec in read_predictions(file).map_err(CliError::Data)? {
            if rec.is_error() {
                continue;
            }
            let entry = manifest
                .get(&rec.sample_id)
                .ok_or_else(|| CliError::Data(format!("sample {} is not in the manifest", rec.sample_id)))?;
            let Some(seconds) = rec.end_to_end() else { continue };
            if !models.contains(&rec.model) {
                models.push(rec.model.clone());
            }
            let slot = by_model.entry(rec.model.clone()).or_default();
            slot.0.push((entry.language.clone(), seconds));
            slot.1.extend(rec.trace);
        }
    }
    if models.is_empty() {
        return Err(CliError::Data("no timing-bearing predictions".into()));
    }

    let groups: Vec<String> = grouping.names().map(str::to_string).collect();
    let cols = groups
        .iter()
        .map(|g| Column {
            key: g.clone(),
            label: format!("{g} (s)"),
            direction: Direction::LowerIsBetter,
        })
        .collect();
    let mut report = EvalReport::new("Measured end-to-end latency (mean seconds per document)", cols);
    report.decimals = 3;
    let mut prov = BTreeMap::new();
    let digests = args.predictions.iter().map(|p| file_digest(p)).collect::<CliResult<Vec<_>>>()?;
    prov.insert("predictions_sha256".to_string(), digests.join(", "));
    prov.insert("manifest_sha256".to_string(), file_digest(manifest_path)?);
    for model in &models {
        let (records, traces) = &by_model[model];
        let summary = summarize_latency(records, &grouping).map_err(data)?;
        let values = groups
            .iter()
            .map(|g| summary.iter().find(|s| &s.group == g).map(|s| s.mean_seconds))
            .collect();
        report.push_row(model.clone(), values);
        let counts: Vec<String> = summary.iter().map(|s| format!("{}={}", s.group, s.n)).collect();
        prov.insert(format!("n[{model}]"), counts.join(" "));
        // Single-event traces carry no inter-token gap.
        let usable: Vec<_> = traces.iter().copied().filter(|t| t.token_count >= 2).collect();
        if let Ok(p) = estimate_params(&usable) {
            prov.insert(
                format!("fitted[{model}]"),
                format!("ttft={} inter_token={}", fmt_secs(p.ttft), fmt_secs(p.inter_token)),
            );
        }
    }
    report.compute_marks();
    emit(args, &report.with_provenance(&prov), out)
}
