//! Seeded synthetic fixtures: a manifest covering all three tasks, tiny page
//! images, and predictions from two simulated models with different noise
//! levels.

use std::io::Write;
use std::path::PathBuf;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ocrbench::backends::{write_predictions, PredictionRecord};
use ocrbench::datasets::{GroundTruth, Manifest, ManifestEntry, Task};
use ocrbench::latency::{LatencyParams, TimingTrace};
use ocrbench::schemas::{DocType, FieldRecord, SchemaRegistry};
use ocrbench::text::{segment_str, SegmentUnit};

use crate::{data, write_file, CliResult, SynthArgs};

const WORDS: &[(&str, &[&str])] = &[
    ("hi", &["नमस्ते", "भारत", "किताब", "पानी", "विद्यालय", "सड़क", "क्षेत्र", "हिन्दी"]),
    ("ta", &["வணக்கம்", "தமிழ்", "புத்தகம்", "நீர்", "பள்ளி", "வீடு"]),
    ("te", &["తెలుగు", "పుస్తకం", "నీరు", "బడి", "ఇల్లు", "రహదారి"]),
    ("bn", &["বাংলা", "বই", "জল", "বিদ্যালয়", "বাড়ি", "রাস্তা"]),
    ("en", &["invoice", "total", "date", "amount", "receipt", "market", "Road", "No."]),
];

const FREEFORM_KEYS: &[&str] = &["company", "date", "address", "total"];

/// (label, noise probability, ttft, inter-token)
const MODELS: &[(&str, f64, f64, f64)] = &[("alpha", 0.05, 0.125, 0.004), ("beta", 0.25, 0.3, 0.01)];

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.random_range(0..xs.len())]
}

fn sentence(rng: &mut ChaCha8Rng, bank: &[&str]) -> String {
    let n = rng.random_range(3..=10);
    (0..n).map(|_| *pick(rng, bank)).collect::<Vec<_>>().join(" ")
}

fn field_value(rng: &mut ChaCha8Rng) -> String {
    const ALNUM: &[u8] = b"ABCDEFGHJKLMNPRSTUVWXYZ0123456789";
    let n = rng.random_range(5..=12);
    let mut s: String = (0..n).map(|_| *pick(rng, ALNUM) as char).collect();
    if n > 8 && rng.random_bool(0.5) {
        s.insert(n / 2, ' ');
    }
    s
}

/// Grapheme-level deletions, substitutions, and duplications, each with
/// probability `p / 3`.
fn perturb(rng: &mut ChaCha8Rng, s: &str, p: f64) -> String {
    let graphemes = segment_str(s, SegmentUnit::Grapheme);
    if graphemes.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    for g in &graphemes {
        let r: f64 = rng.random();
        if r < p / 3.0 {
            continue;
        } else if r < 2.0 * p / 3.0 {
            out.push_str(pick(rng, &graphemes));
        } else if r < p {
            out.push_str(g);
            out.push_str(g);
        } else {
            out.push_str(g);
        }
    }
    out
}

fn write_png(path: &PathBuf, rng: &mut ChaCha8Rng) -> CliResult {
    let shade: u8 = rng.random_range(200..=255);
    let img = image::GrayImage::from_pixel(24, 32, image::Luma([shade]));
    img.save(path).map_err(data)
}

fn trace(words: usize, ttft: f64, tau: f64) -> TimingTrace {
    let params = LatencyParams::new(ttft, tau).expect("constant params are valid");
    TimingTrace::synthesize(0.0, params, words.max(1) as u64)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> CliResult {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let images = args.out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| crate::CliError::Data(format!("{}: {e}", images.display())))?;
    let registry = SchemaRegistry::bundled();

    let mut entries = Vec::new();
    for i in 0..args.count {
        let (lang, bank) = WORDS[i % WORDS.len()];
        entries.push(ManifestEntry {
            sample_id: format!("t{i:03}"),
            images: vec![PathBuf::from(format!("images/t{i:03}.png"))],
            language: lang.to_string(),
            task: Task::Transcribe,
            doc_type: None,
            ground_truth: GroundTruth::Text(sentence(&mut rng, bank)),
        });
    }
    for i in 0..args.count {
        let d = DocType::ALL[i % DocType::ALL.len()];
        let fields: IndexMap<String, String> = registry
            .get(d)
            .field_keys()
            .map(|k| (k.to_string(), field_value(&mut rng)))
            .collect();
        let pages = if d == DocType::Aadhaar { 2 } else { 1 };
        entries.push(ManifestEntry {
            sample_id: format!("x{i:03}"),
            images: (0..pages).map(|p| PathBuf::from(format!("images/x{i:03}_{p}.png"))).collect(),
            language: "en".into(),
            task: Task::Extract,
            doc_type: Some(d),
            ground_truth: GroundTruth::Fields(fields),
        });
    }
    for i in 0..args.count {
        let fields: IndexMap<String, String> =
            FREEFORM_KEYS.iter().map(|k| (k.to_string(), field_value(&mut rng))).collect();
        entries.push(ManifestEntry {
            sample_id: format!("f{i:03}"),
            images: vec![PathBuf::from(format!("images/f{i:03}.png"))],
            language: "en".into(),
            task: Task::FreeformMatch,
            doc_type: None,
            ground_truth: GroundTruth::Fields(fields),
        });
    }
    for e in &entries {
        for img in &e.images {
            write_png(&args.out.join(img), &mut rng)?;
        }
    }
    let manifest = Manifest {
        entries,
        root: args.out.clone(),
    };
    let manifest_path = args.out.join("manifest.jsonl");
    write_file(&manifest_path, manifest.to_jsonl().as_bytes())?;

    let mut records = Vec::new();
    for &(model, p, ttft, tau) in MODELS {
        for e in &manifest.entries {
            let text = match (&e.ground_truth, e.task) {
                (GroundTruth::Text(t), _) => perturb(&mut rng, t, p),
                (GroundTruth::Fields(f), Task::Extract) => {
                    let mut rec = FieldRecord::new(e.doc_type);
                    for (k, v) in f {
                        if rng.random_bool(p / 2.0) {
                            continue;
                        }
                        let v = if rng.random_bool(p) { perturb(&mut rng, v, 0.5) } else { v.clone() };
                        rec.values.insert(k.clone(), v);
                    }
                    if rng.random_bool(p / 2.0) {
                        rec.values.insert("Remarks".into(), field_value(&mut rng));
                    }
                    let wire = registry.to_wire(&rec);
                    if rng.random_bool(p) {
                        format!("```json\n{wire}\n```")
                    } else {
                        wire
                    }
                }
                (GroundTruth::Fields(f), _) => {
                    let filler = WORDS[WORDS.len() - 1].1;
                    let mut parts: Vec<String> = f.values().map(|v| perturb(&mut rng, v, p)).collect();
                    parts.push(sentence(&mut rng, filler));
                    let k = rng.random_range(0..parts.len());
                    parts.rotate_left(k);
                    parts.join("\n")
                }
            };
            let t = trace(text.split_whitespace().count(), ttft, tau);
            records.push(PredictionRecord {
                sample_id: e.sample_id.clone(),
                model: model.to_string(),
                output_text: text,
                parsed_fields: None,
                trace: Some(t),
                elapsed_seconds: Some(t.end_to_end()),
                error: None,
            });
        }
    }
    let preds_path = args.out.join("predictions.jsonl");
    write_predictions(&preds_path, &records).map_err(data)?;
    writeln!(out, "wrote {}", manifest_path.display()).map_err(data)?;
    writeln!(out, "wrote {}", preds_path.display()).map_err(data)?;
    Ok(())
}
