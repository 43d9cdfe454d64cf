//! Seeded synthetic corpora with known ground truth.
//!
//! Descriptions mix words from a class-specific vocabulary with generic
//! store-listing filler. Sensitive-API usage follows a per-class core set;
//! injected malicious apps carry a class's description but extra APIs.

use std::collections::{BTreeMap, BTreeSet};

use appcat_apk::{ApkFeatures, FEATURES_FORMAT_VERSION, ICON_DIM};
use appcat_core::dataset::{AppRecord, Manifest};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const THEMES: [(&str, [&str; 12]); 10] = [
    ("weather", ["forecast", "rain", "temperature", "humidity", "storm", "radar", "sunny", "wind", "celsius", "cloud", "snow", "thunder"]),
    ("fitness", ["workout", "muscle", "cardio", "calories", "training", "gym", "squat", "running", "stretch", "protein", "burn", "exercise"]),
    ("finance", ["budget", "expense", "banking", "savings", "invoice", "stocks", "wallet", "payment", "currency", "loan", "taxes", "investing"]),
    ("music", ["playlist", "songs", "guitar", "melody", "album", "lyrics", "radio", "singer", "rhythm", "piano", "concert", "audio"]),
    ("cooking", ["recipe", "kitchen", "baking", "dinner", "ingredients", "chef", "pasta", "dessert", "oven", "spices", "vegetarian", "meal"]),
    ("travel", ["flight", "hotel", "booking", "airport", "passport", "luggage", "destination", "vacation", "itinerary", "tourist", "beach", "journey"]),
    ("chess", ["chess", "checkmate", "opening", "knight", "bishop", "tournament", "grandmaster", "rook", "pawn", "gambit", "endgame", "rating"]),
    ("photo", ["camera", "filter", "selfie", "collage", "portrait", "lens", "exposure", "gallery", "crop", "brightness", "snapshot", "editing"]),
    ("language", ["vocabulary", "grammar", "spanish", "french", "pronunciation", "lesson", "fluent", "translation", "alphabet", "dictionary", "verbs", "quiz"]),
    ("medical", ["symptoms", "doctor", "medicine", "pharmacy", "clinic", "dosage", "pills", "allergy", "diagnosis", "nurse", "prescription", "hospital"]),
];

const FILLER: [&str; 20] = [
    "simple", "free", "easy", "fast", "daily", "best", "friends", "share", "design", "beautiful", "offline",
    "premium", "widget", "notifications", "powerful", "intuitive", "modern", "features", "update", "support",
];

pub const MAX_CLASSES: usize = THEMES.len();

pub fn class_name(c: usize) -> &'static str {
    THEMES[c].0
}

fn description(rng: &mut ChaCha8Rng, class: usize) -> String {
    let vocab = &THEMES[class].1;
    let mut words: Vec<&str> = vocab.choose_multiple(rng, 8).copied().collect();
    words.extend(FILLER.choose_multiple(rng, 7).copied());
    words.shuffle(rng);
    let mut s = words.join(" ");
    s.push('.');
    s
}

fn record(id: String, class: Option<usize>, desc: String, malicious: bool) -> AppRecord {
    AppRecord {
        app_id: id,
        class_label: class.map(|c| class_name(c).to_string()),
        gplay_category_id: String::new(),
        description: desc,
        apk_path: None,
        sha256: None,
        is_malicious: malicious,
    }
}

/// `classes x per_class` benign apps in class order. Panics if `classes`
/// exceeds [`MAX_CLASSES`].
pub fn synth_corpus(classes: usize, per_class: usize, seed: u64) -> Manifest {
    assert!(classes <= MAX_CLASSES, "at most {MAX_CLASSES} synthetic classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for i in 0..per_class {
            let desc = description(&mut rng, c);
            records.push(record(format!("synth.{}.app{i:03}", class_name(c)), Some(c), desc, false));
        }
    }
    Manifest::from_records(records).expect("synthetic ids are unique")
}

/// Benign corpus, injected malware and sensitive-API counts for all of them.
pub struct SynthDetection {
    pub benign: Manifest,
    pub malware: Manifest,
    /// Class whose description each malicious app borrowed.
    pub malware_class: BTreeMap<String, String>,
    pub apis: BTreeMap<String, BTreeMap<String, u32>>,
    pub signatures: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct DetectionShape {
    pub classes: usize,
    pub per_class: usize,
    pub malware_per_class: usize,
    /// Size of each class's core API set.
    pub core_apis: usize,
    /// APIs from other classes' core sets added to each malicious app.
    pub injected_apis: usize,
    /// Chance a benign app drops a core API / adds an unrelated one.
    pub drop_rate: f64,
    pub noise_rate: f64,
}

impl Default for DetectionShape {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 20,
            malware_per_class: 2,
            core_apis: 4,
            injected_apis: 2,
            drop_rate: 0.03,
            noise_rate: 0.003,
        }
    }
}

pub fn synth_detection(shape: &DetectionShape, signatures: &[String], seed: u64) -> SynthDetection {
    assert!(signatures.len() > shape.core_apis + shape.injected_apis, "too few API signatures");
    let benign = synth_corpus(shape.classes, shape.per_class, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let cores: Vec<Vec<usize>> = (0..shape.classes)
        .map(|_| {
            let mut idx: Vec<usize> = (0..signatures.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(shape.core_apis);
            idx.sort_unstable();
            idx
        })
        .collect();
    let counts = |on: &[usize]| -> BTreeMap<String, u32> { on.iter().map(|&i| (signatures[i].clone(), 1)).collect() };

    let mut apis = BTreeMap::new();
    for (n, r) in benign.records().iter().enumerate() {
        let core = &cores[n / shape.per_class];
        let mut on: Vec<usize> = core.iter().copied().filter(|_| !rng.gen_bool(shape.drop_rate)).collect();
        for i in 0..signatures.len() {
            if !core.contains(&i) && rng.gen_bool(shape.noise_rate) {
                on.push(i);
            }
        }
        apis.insert(r.app_id.clone(), counts(&on));
    }

    let mut records = Vec::new();
    let mut malware_class = BTreeMap::new();
    for (c, core) in cores.iter().enumerate() {
        for i in 0..shape.malware_per_class {
            let id = format!("synth.malware.{}.app{i:03}", class_name(c));
            // APIs that are ordinary in some other class but foreign to this one.
            let mut outside: Vec<usize> = cores
                .iter()
                .flatten()
                .copied()
                .filter(|k| !core.contains(k))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            outside.shuffle(&mut rng);
            let mut on = core.clone();
            on.extend(outside.into_iter().take(shape.injected_apis));
            apis.insert(id.clone(), counts(&on));
            malware_class.insert(id.clone(), class_name(c).to_string());
            let desc = description(&mut rng, c);
            records.push(record(id, None, desc, true));
        }
    }
    SynthDetection {
        benign,
        malware: Manifest::from_records(records).expect("synthetic ids are unique"),
        malware_class,
        apis,
        signatures: signatures.to_vec(),
    }
}

/// Minimal feature file carrying only name and sensitive-API counts.
pub fn api_only_features(app_id: &str, apis: &BTreeMap<String, u32>) -> ApkFeatures {
    ApkFeatures {
        format_version: FEATURES_FORMAT_VERSION,
        app_name: app_id.rsplit('.').next().unwrap_or(app_id).to_string(),
        package: Some(app_id.to_string()),
        permissions: Default::default(),
        restricted_apis: apis.clone(),
        strings: Default::default(),
        icon_descriptor: vec![0.0; ICON_DIM],
        libraries: Default::default(),
        diagnostics: Vec::new(),
    }
}
