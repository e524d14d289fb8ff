//! Regenerates the synthetic record fixtures under `tests/fixtures/synthetic`.
//!
//! Four models of increasing cost share a per-sample hardness and a
//! per-sample noise term, so their mistakes are correlated the way a real
//! model family's are, and confidence rises with the margin of correctness.
//! Three datasets: `synth-val` (tuning), `synth-relabel` (same samples with
//! 3% of labels reassessed) and `synth-shifted` (fresh, harder samples).
//!
//! ```text
//! cargo run -p cascade-opt --example gen_fixtures
//! ```

use std::fs;
use std::path::Path;

use cascade_core::{ModelProfile, PredictionRecord};
use cascade_opt::formats::{
    write_profile, write_record_file, DatasetManifest, DatasetRole, Manifest, ManifestEntry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

const CLASSES: u32 = 100;

struct Model {
    name: &'static str,
    gmacs: f64,
    params_m: f64,
    res: u32,
    skill: f64,
}

const MODELS: [Model; 4] = [
    Model {
        name: "synth-s0",
        gmacs: 0.39,
        params_m: 5.3,
        res: 224,
        skill: 0.38,
    },
    Model {
        name: "synth-s2",
        gmacs: 1.09,
        params_m: 9.1,
        res: 288,
        skill: 0.50,
    },
    Model {
        name: "synth-s4",
        gmacs: 4.39,
        params_m: 19.3,
        res: 380,
        skill: 0.62,
    },
    Model {
        name: "synth-s7",
        gmacs: 37.8,
        params_m: 66.3,
        res: 600,
        skill: 0.68,
    },
];

struct Sample {
    id: String,
    label: u32,
    hardness: f64,
    shared: f64,
}

fn samples(rng: &mut ChaCha8Rng, prefix: &str, n: usize, beta_a: f64, beta_b: f64) -> Vec<Sample> {
    let hard = Beta::new(beta_a, beta_b).unwrap();
    let noise = Normal::new(0.0, 0.12).unwrap();
    (0..n)
        .map(|i| Sample {
            id: format!("{prefix}_{i:05}"),
            label: rng.random_range(0..CLASSES),
            hardness: hard.sample(rng),
            shared: noise.sample(rng),
        })
        .collect()
}

fn predict(rng: &mut ChaCha8Rng, m: &Model, s: &Sample, true_label: u32) -> PredictionRecord {
    let own = Normal::new(0.0, 0.06).unwrap().sample(rng);
    let margin = m.skill - s.hardness + s.shared + own;
    let correct = margin > 0.0;
    let jitter = Normal::new(0.0, 0.35).unwrap().sample(rng);
    let conf = 1.0 / (1.0 + (-(7.0 * margin + 0.8 + jitter)).exp());
    let conf = (conf * 1e6).round() / 1e6;
    let label = if correct {
        s.label
    } else {
        (s.label + rng.random_range(1..CLASSES)) % CLASSES
    };
    PredictionRecord::new(&s.id, label, conf.clamp(0.0, 1.0), true_label).unwrap()
}

fn write_dataset(
    root: &Path,
    dir: &str,
    name: &str,
    role: DatasetRole,
    samples: &[Sample],
    labels: &[u32],
    rng: &mut ChaCha8Rng,
) -> DatasetManifest {
    fs::create_dir_all(root.join(dir)).unwrap();
    let mut entries = Vec::new();
    for m in &MODELS {
        let records: Vec<_> = samples
            .iter()
            .zip(labels)
            .map(|(s, &t)| predict(rng, m, s, t))
            .collect();
        let rel = format!("{dir}/{}.csv", m.name);
        write_record_file(&root.join(&rel), &records).unwrap();
        entries.push(ManifestEntry {
            profile: format!("profiles/{}.json", m.name).into(),
            records: rel.into(),
        });
    }
    DatasetManifest {
        name: name.into(),
        role: Some(role),
        models: entries,
    }
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic");
    fs::create_dir_all(root.join("profiles")).unwrap();
    for m in &MODELS {
        let p = ModelProfile::new(m.name, m.gmacs, m.params_m, m.res).unwrap();
        write_profile(&root.join(format!("profiles/{}.json", m.name)), &p).unwrap();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20240917);
    let val = samples(&mut rng, "val", 4000, 2.0, 5.0);
    let labels: Vec<u32> = val.iter().map(|s| s.label).collect();
    // Reassessed labels: same samples, a few ground truths changed.
    let relabeled: Vec<u32> = labels
        .iter()
        .map(|&l| {
            if rng.random_bool(0.03) {
                (l + 1) % CLASSES
            } else {
                l
            }
        })
        .collect();
    let shifted = samples(&mut rng, "shift", 2000, 2.4, 4.6);
    let shifted_labels: Vec<u32> = shifted.iter().map(|s| s.label).collect();

    // Same RNG state for val and relabel: identical predictions, only the
    // ground truth differs.
    let datasets = vec![
        write_dataset(
            &root,
            "val",
            "synth-val",
            DatasetRole::Tuning,
            &val,
            &labels,
            &mut rng.clone(),
        ),
        write_dataset(
            &root,
            "relabel",
            "synth-relabel",
            DatasetRole::Target,
            &val,
            &relabeled,
            &mut rng.clone(),
        ),
        write_dataset(
            &root,
            "shifted",
            "synth-shifted",
            DatasetRole::Target,
            &shifted,
            &shifted_labels,
            &mut rng,
        ),
    ];
    let manifest =
        serde_json::to_string_pretty(&serde_json::json!({ "datasets": datasets })).unwrap();
    fs::write(root.join("manifest.json"), manifest + "\n").unwrap();
    // Round-trip through the loader so a broken fixture fails here.
    let m = Manifest::load(&root.join("manifest.json")).unwrap();
    for d in &m.datasets {
        let a = m.load_aligned(d).unwrap();
        println!("{}: {} rows, {} models", d.name, a.len(), a.models().len());
    }
}
