use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ocrbench::backends::read_predictions;
use ocrbench::text::{normalize, segment_str, NormalizationPolicy, SegmentUnit};

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Out {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = ocrbench_cli::main_with(std::iter::once("ocrbench").chain(args.iter().copied()), &mut out, &mut err);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const MANIFEST: &str = r#"{"sample_id":"a","images":["a.png"],"language":"hi","task":"transcribe","ground_truth":"नमस्ते दुनिया"}
{"sample_id":"b","images":["b.png"],"language":"en","task":"transcribe","ground_truth":"Hello   world"}
{"sample_id":"c","images":["c1.png","c2.png"],"language":"en","task":"extract","doc_type":"pan","ground_truth":{"Person Name":"RAVI KUMAR","DOB":"01/02/1990","Pan Number":"ABCDE1234F"}}
"#;

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.jsonl"), MANIFEST).unwrap();
    for img in ["a.png", "b.png", "c1.png", "c2.png"] {
        std::fs::write(dir.path().join(img), b"png").unwrap();
    }
    backend(dir.path(), "gt.json", "mock", "mock://ground-truth", 2);
    backend(dir.path(), "down.json", "mock", "mock://down", 1);
    dir
}

fn backend(dir: &Path, file: &str, name: &str, endpoint: &str, max_concurrency: usize) -> PathBuf {
    let path = dir.join(file);
    let spec = serde_json::json!({
        "name": name,
        "endpoint": endpoint,
        "request_style": "chat_image",
        "max_concurrency": max_concurrency,
    });
    std::fs::write(&path, spec.to_string()).unwrap();
    path
}

#[test]
fn prompt_is_byte_exact() {
    let o = cli(&["prompt", "pan"]);
    assert_eq!(o.code, 0);
    let asset = include_str!("../../core/assets/prompts/pan.txt");
    assert_eq!(o.stdout, asset);
    assert!(cli(&["prompt", "aadhaar"]).stdout.contains("Aadhar Number"));
}

#[test]
fn unknown_doc_type_lists_all_types() {
    let o = cli(&["prompt", "passport"]);
    assert_eq!(o.code, 2);
    for t in ocrbench::schemas::DocType::names() {
        assert!(o.stderr.contains(t), "{t} missing from {}", o.stderr);
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(&[]).code, 2);
    assert_eq!(cli(&["evaluate"]).code, 2);
    assert_eq!(cli(&["evaluate", "--manifest", "m", "--predictions", "p", "--out", "o", "--unit", "line"]).code, 2);
    assert_eq!(cli(&["tile", "--width", "100"]).code, 2);
    assert_eq!(cli(&["latency", "--ttft", "-1"]).code, 2);
    assert_eq!(cli(&["--help"]).code, 0);
}

#[test]
fn run_mock_writes_one_record_per_entry() {
    let dir = fixture();
    let d = dir.path();
    let preds = d.join("preds.jsonl");
    let o = cli(&["run", "--manifest", p(&d.join("manifest.jsonl")), "--backend", p(&d.join("gt.json")), "--out", p(&preds)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let recs = read_predictions(&preds).unwrap();
    assert_eq!(recs.iter().map(|r| r.sample_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    assert_eq!(recs[0].output_text, "नमस्ते दुनिया");
    let parsed = recs[2].parsed_fields.as_ref().expect("extract output is parsed");
    assert_eq!(parsed.values["Pan Number"], "ABCDE1234F");
    let t = recs[0].trace.unwrap();
    assert!((t.ttft() - 0.125).abs() < 1e-12);
}

#[test]
fn run_uses_model_label_and_mock_timing_flags() {
    let dir = fixture();
    let d = dir.path();
    let preds = d.join("preds.jsonl");
    let o = cli(&[
        "run", "--manifest", p(&d.join("manifest.jsonl")), "--backend", p(&d.join("gt.json")), "--out", p(&preds),
        "--model", "labelled", "--ttft", "0.5", "--inter-token", "0.02", "--concurrency", "4",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("parallel(4)"));
    let recs = read_predictions(&preds).unwrap();
    assert!(recs.iter().all(|r| r.model == "labelled"));
    let t = recs[1].trace.unwrap();
    assert_eq!(t.token_count, 2);
    assert!((t.end_to_end() - 0.52).abs() < 1e-12);
}

#[test]
fn warm_cache_survives_backend_outage() {
    let dir = fixture();
    let d = dir.path();
    let manifest = d.join("manifest.jsonl");
    let cache = d.join("cache");
    let first = d.join("first.jsonl");
    let second = d.join("second.jsonl");
    assert_eq!(cli(&["run", "--manifest", p(&manifest), "--backend", p(&d.join("gt.json")), "--cache", p(&cache), "--out", p(&first)]).code, 0);
    let o = cli(&["run", "--manifest", p(&manifest), "--backend", p(&d.join("down.json")), "--cache", p(&cache), "--out", p(&second)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("3 cached"));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn cold_cache_outage_fails_but_writes_error_records() {
    let dir = fixture();
    let d = dir.path();
    let preds = d.join("preds.jsonl");
    let o = cli(&[
        "run", "--manifest", p(&d.join("manifest.jsonl")), "--backend", p(&d.join("down.json")),
        "--cache", p(&d.join("cache")), "--out", p(&preds),
    ]);
    assert_eq!(o.code, 1);
    let recs = read_predictions(&preds).unwrap();
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|r| r.is_error() && r.output_text.is_empty()));
}

fn summary_values(path: &Path) -> HashMap<(String, String), f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (
                (v["row"].as_str().unwrap().to_string(), v["column"].as_str().unwrap().to_string()),
                v["value"].as_f64().unwrap(),
            )
        })
        .collect()
}

#[test]
fn ground_truth_predictions_score_zero_anls_and_full_extraction() {
    let dir = fixture();
    let d = dir.path();
    let manifest = d.join("manifest.jsonl");
    let preds = d.join("preds.jsonl");
    cli(&["run", "--manifest", p(&manifest), "--backend", p(&d.join("gt.json")), "--out", p(&preds)]);
    let rep = d.join("rep");
    let o = cli(&["evaluate", "--manifest", p(&manifest), "--predictions", p(&preds), "--unit", "word,char,grapheme", "--out", p(&rep)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let vals = summary_values(&rep.join("ocr.summary.jsonl"));
    assert_eq!(vals.len(), 6);
    assert!(vals.values().all(|&v| v == 0.0));

    let o = cli(&["extract-eval", "--manifest", p(&manifest), "--predictions", p(&preds), "--out", p(&rep)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let mean = summary_values(&rep.join("extraction_mean.summary.jsonl"));
    assert_eq!(mean[&("mock".to_string(), "pan".to_string())], 100.0);
    assert_eq!(mean[&("mock".to_string(), "grand_total".to_string())], 100.0);
}

#[test]
fn sroie_fixture_reports_one_of_four() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gt = serde_json::json!({
        "sample_id": "sroie-0", "images": ["x.png"], "language": "en", "task": "freeform_match",
        "ground_truth": {
            "company": "OJC MARKETING \nSDN BHD",
            "date": "15/01/2019",
            "address": "NO 2 & 4, JALAN BAYU\n 4, BANDAR SERI ALAM, 81750 \n MASAI, JOHOR",
            "total": "193.00"
        }
    });
    std::fs::write(d.join("m.jsonl"), format!("{gt}\n")).unwrap();
    let pred = serde_json::json!({
        "sample_id": "sroie-0", "model": "ocr",
        "output_text": "tan chay yee\n*** COPY ***\nOJC Marketing SDN BHD\nROC NO: 538358-H\n..."
    });
    std::fs::write(d.join("p.jsonl"), format!("{pred}\n")).unwrap();
    let rep = d.join("rep");
    let o = cli(&["evaluate", "--manifest", p(&d.join("m.jsonl")), "--predictions", p(&d.join("p.jsonl")), "--out", p(&rep)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let md = std::fs::read_to_string(rep.join("match.md")).unwrap();
    assert!(md.contains("| ocr | **25.00** |"), "{md}");
    assert!(md.contains("ocr/en=1/4"));
    assert!(o.stderr.contains("missing"), "image absence is warned about");

    let strict = d.join("strict");
    cli(&["evaluate", "--manifest", p(&d.join("m.jsonl")), "--predictions", p(&d.join("p.jsonl")), "--case-fold", "false", "--out", p(&strict)]);
    assert!(std::fs::read_to_string(strict.join("match.md")).unwrap().contains("| ocr | **0.00** |"));
}

#[test]
fn predictions_outside_manifest_are_data_errors() {
    let dir = fixture();
    let d = dir.path();
    std::fs::write(d.join("p.jsonl"), r#"{"sample_id":"zzz","model":"m","output_text":"x"}"#).unwrap();
    let o = cli(&["evaluate", "--manifest", p(&d.join("manifest.jsonl")), "--predictions", p(&d.join("p.jsonl")), "--out", p(&d.join("r"))]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("zzz"));
}

/// Full-matrix Wagner-Fischer, kept separate from the library kernel.
fn wf(a: &[&str], b: &[&str]) -> usize {
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in m[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = m[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            m[i][j] = sub.min(m[i - 1][j] + 1).min(m[i][j - 1] + 1);
        }
    }
    m[a.len()][b.len()]
}

#[test]
fn randomized_fixture_matches_independent_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cli(&["synth", "--seed", "11", "--count", "20", "--out", p(d)]).code, 0);
    let rep = d.join("rep");
    let o = cli(&[
        "evaluate", "--manifest", p(&d.join("manifest.jsonl")), "--predictions", p(&d.join("predictions.jsonl")),
        "--unit", "word,char,grapheme", "--out", p(&rep),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let got = summary_values(&rep.join("ocr.summary.jsonl"));

    let manifest = ocrbench::load_manifest(&d.join("manifest.jsonl")).unwrap().manifest;
    let preds = read_predictions(&d.join("predictions.jsonl")).unwrap();
    let policy = NormalizationPolicy::default();
    let mut sums: HashMap<(String, String), (f64, usize)> = HashMap::new();
    for rec in &preds {
        let e = manifest.get(&rec.sample_id).unwrap();
        let Some(truth) = e.text_truth() else { continue };
        let pn = normalize(&rec.output_text, &policy).normalized;
        let rn = normalize(truth, &policy).normalized;
        for (unit, key) in [(SegmentUnit::Word, "word"), (SegmentUnit::Codepoint, "codepoint"), (SegmentUnit::Grapheme, "grapheme")] {
            let (a, b) = (segment_str(&pn, unit), segment_str(&rn, unit));
            let longest = a.len().max(b.len());
            let nd = if longest == 0 { 0.0 } else { wf(&a, &b) as f64 / longest as f64 };
            let slot = sums.entry((rec.model.clone(), format!("{}/{key}", e.language))).or_default();
            slot.0 += nd;
            slot.1 += 1;
        }
    }
    assert_eq!(got.len(), sums.len());
    for (k, (sum, n)) in sums {
        let expect = 100.0 * sum / n as f64;
        assert!((got[&k] - expect).abs() < 1e-9, "{k:?}: {} vs {expect}", got[&k]);
    }
}

#[test]
fn evaluation_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cli(&["synth", "--seed", "3", "--out", p(d)]);
    let (m, pr) = (d.join("manifest.jsonl"), d.join("predictions.jsonl"));
    let run = |out: &Path| {
        let args = ["--manifest", p(&m), "--predictions", p(&pr), "--format", "md,csv", "--out", p(out)];
        assert_eq!(cli(&[&["evaluate"][..], &args].concat()).code, 0);
        assert_eq!(cli(&[&["extract-eval"][..], &args].concat()).code, 0);
    };
    run(&d.join("r1"));
    run(&d.join("r2"));
    let mut names: Vec<_> = std::fs::read_dir(d.join("r1")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 18);
    for n in names {
        assert_eq!(std::fs::read(d.join("r1").join(&n)).unwrap(), std::fs::read(d.join("r2").join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (sub, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        assert_eq!(cli(&["synth", "--seed", seed, "--out", p(&d.join(sub))]).code, 0);
    }
    let read = |s: &str| std::fs::read(d.join(s).join("predictions.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let stats = cli(&["stats", "--manifest", p(&d.join("a/manifest.jsonl"))]);
    let v: serde_json::Value = serde_json::from_str(&stats.stdout).unwrap();
    assert_eq!(v["total"], 36);
    assert_eq!(v["missing_images"], 0);
    assert_eq!(v["by_task"]["extract"], 12);
}

#[test]
fn extraction_spurious_fields_are_counted() {
    let dir = fixture();
    let d = dir.path();
    let out = r#"```json
{"Person Name": "RAVI KUMAR", "DOB": "01/02/1990", "Pan Number": "ABCDE1234F", "Father Name": "X"}
```"#;
    let rec = serde_json::json!({"sample_id": "c", "model": "m", "output_text": out});
    std::fs::write(d.join("p.jsonl"), format!("{rec}\n")).unwrap();
    let rep = d.join("rep");
    let o = cli(&["extract-eval", "--manifest", p(&d.join("manifest.jsonl")), "--predictions", p(&d.join("p.jsonl")), "--format", "csv", "--out", p(&rep)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let sp = summary_values(&rep.join("extraction_spurious.summary.jsonl"));
    assert_eq!(sp[&("m".to_string(), "pan".to_string())], 1.0);
    let em = summary_values(&rep.join("extraction_em.summary.jsonl"));
    assert_eq!(em[&("m".to_string(), "pan".to_string())], 100.0);
    let csv = std::fs::read_to_string(rep.join("extraction_em.csv")).unwrap();
    assert!(csv.starts_with("Doc Type,m,m mark\n"), "{csv}");
}

#[test]
fn latency_zero_words_is_ttft() {
    let o = cli(&["latency", "--words", "0", "--ttft", "0.2", "--format", "csv"]);
    assert_eq!(o.code, 0);
    let rows: Vec<&str> = o.stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[5], "0.200", "{r}");
    }
}

#[test]
fn latency_measured_recovers_synthetic_params() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cli(&["synth", "--seed", "9", "--out", p(d)]);
    let o = cli(&["latency", "--predictions", p(&d.join("predictions.jsonl")), "--manifest", p(&d.join("manifest.jsonl"))]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("fitted[alpha]: ttft=0.125 inter_token=0.004"), "{}", o.stdout);
    assert!(o.stdout.contains("fitted[beta]: ttft=0.3 inter_token=0.01"));
    let o = cli(&["latency", "--predictions", p(&d.join("predictions.jsonl")), "--manifest", p(&d.join("manifest.jsonl")), "--group", "Indic=hi,ta,te,bn"]);
    assert_eq!(o.code, 1, "English is unmapped");
}

#[test]
fn tile_geometry_and_crops() {
    let o = cli(&["tile", "--width", "1024", "--height", "1024", "--tile-side", "336", "--max-tiles", "9"]);
    assert!(o.stdout.contains("grid 3x3"));
    assert_eq!(o.stdout.lines().filter(|l| l.starts_with("crop ")).count(), 9);

    let o = cli(&["tile", "--width", "400", "--height", "1600", "--max-tiles", "4", "--rotate", "1", "--no-global"]);
    assert!(o.stdout.contains("page 1600x400") && o.stdout.contains("grid 1x4") && o.stdout.contains("tiles 4\n"), "{}", o.stdout);

    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("page.png");
    image::GrayImage::from_pixel(200, 100, image::Luma([255u8])).save(&img).unwrap();
    let out = dir.path().join("crops");
    let o = cli(&["tile", "--image", p(&img), "--tile-side", "50", "--max-tiles", "2", "--out", p(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let mut names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["0_0.png", "0_1.png", "global.png"]);
    assert_eq!(image::image_dimensions(out.join("0_1.png")).unwrap(), (50, 50));
}
