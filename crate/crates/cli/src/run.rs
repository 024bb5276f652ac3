use std::collections::HashMap;
use std::io::Write;

use ocrbench::backends::{
    run_batch, write_predictions, Backend, BackendSpec, HttpBackend, MockBackend, MockTiming, PredictionCache,
    Request, RunMode,
};
use ocrbench::datasets::{Manifest, ManifestEntry, Task};
use ocrbench::latency::LatencyParams;
use ocrbench::schemas::SchemaRegistry;

use crate::{data, warn_load, CliError, CliResult, RunArgs};

/// Prompt sent for transcription and free-form entries.
pub const TRANSCRIBE_PROMPT: &str =
    "Transcribe all text in this document image exactly as written, in reading order. Output only the text.";

fn prompt_for(entry: &ManifestEntry, registry: &SchemaRegistry) -> String {
    match (entry.task, entry.doc_type) {
        (Task::Extract, Some(d)) => registry.build_prompt(d).to_string(),
        _ => TRANSCRIBE_PROMPT.to_string(),
    }
}

/// What a perfect backend would answer for `entry`.
fn ground_truth_answer(entry: &ManifestEntry, registry: &SchemaRegistry) -> String {
    match entry.task {
        Task::Transcribe => entry.text_truth().unwrap_or_default().to_string(),
        Task::Extract => entry.field_truth().map(|r| registry.to_wire(&r)).unwrap_or_default(),
        Task::FreeformMatch => entry
            .field_truth()
            .map(|r| r.values.values().cloned().collect::<Vec<_>>().join("\n"))
            .unwrap_or_default(),
    }
}

fn mock_backend(spec: &BackendSpec, args: &RunArgs, manifest: &Manifest, registry: &SchemaRegistry) -> CliResult<MockBackend> {
    let base = match spec.endpoint.as_str() {
        "mock://ground-truth" => {
            let responses: HashMap<String, String> = manifest
                .entries
                .iter()
                .map(|e| (e.sample_id.clone(), ground_truth_answer(e, registry)))
                .collect();
            MockBackend::new(spec.name.clone(), responses)
        }
        "mock://down" => MockBackend::down(spec.name.clone()),
        other => return Err(CliError::Usage(format!("unknown mock endpoint {other}"))),
    };
    let defaults = LatencyParams::default();
    let params = LatencyParams::new(
        args.ttft.unwrap_or(defaults.ttft),
        args.inter_token.unwrap_or(defaults.inter_token),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(base
        .with_timing(params, MockTiming::Virtual)
        .with_max_concurrency(spec.max_concurrency))
}

/// Exit status is success only when every record carries output.
pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    if args.concurrency == 0 {
        return Err(CliError::Usage("--concurrency must be at least 1".into()));
    }
    let loaded = ocrbench::load_manifest(&args.manifest).map_err(data)?;
    warn_load(&loaded, err);
    let manifest = &loaded.manifest;
    let mut spec = BackendSpec::load(&args.backend).map_err(data)?;
    if let Some(m) = &args.model {
        spec.name = m.clone();
    }
    let registry = SchemaRegistry::bundled();
    let backend: Box<dyn Backend> = if spec.is_mock() {
        Box::new(mock_backend(&spec, args, manifest, &registry)?)
    } else {
        Box::new(HttpBackend::new(spec.clone()).map_err(data)?)
    };

    let requests: Vec<Request> = manifest
        .entries
        .iter()
        .map(|e| Request {
            sample_id: e.sample_id.clone(),
            images: e.images.iter().map(|p| manifest.resolve(p)).collect(),
            prompt: prompt_for(e, &registry),
        })
        .collect();
    let cache = args
        .cache
        .as_ref()
        .map(PredictionCache::open)
        .transpose()
        .map_err(data)?;
    let mode = if args.concurrency == 1 {
        RunMode::Sequential
    } else {
        RunMode::Parallel(args.concurrency)
    };
    let (mut records, stats) = run_batch(backend.as_ref(), &requests, cache.as_ref(), mode).map_err(data)?;

    for (rec, entry) in records.iter_mut().zip(&manifest.entries) {
        if rec.is_error() {
            continue;
        }
        if let (Task::Extract, Some(d)) = (entry.task, entry.doc_type) {
            rec.parsed_fields = registry.parse_output(&rec.output_text, d).ok().map(|p| p.record);
        }
    }
    write_predictions(&args.out, &records).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    writeln!(
        out,
        "{}: {} records ({} cached, {} requested, {} errors, {}) -> {}",
        backend.name(),
        records.len(),
        stats.cache_hits,
        stats.requests,
        stats.errors,
        mode.label(),
        args.out.display()
    )
    .map_err(data)?;
    for rec in records.iter().filter(|r| r.is_error()) {
        let _ = writeln!(err, "{}: {}", rec.sample_id, rec.error.as_deref().unwrap_or_default());
    }
    if stats.errors > 0 {
        return Err(CliError::Data(format!("{} request(s) failed", stats.errors)));
    }
    Ok(())
}
