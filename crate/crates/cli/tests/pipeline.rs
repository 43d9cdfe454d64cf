use std::path::{Path, PathBuf};
use std::process::Command;

use appcat::commands::*;
use appcat::synth::{synth_corpus, DetectionShape};
use appcat::{CliError, EmbedderChoice, FeatureGroup, RunConfig};
use appcat_core::dataset::{AppRecord, Manifest};
use appcat_core::metrics::Partition;
use proptest::prelude::*;

fn fixture_apk(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../apk/tests/fixtures/{name}.apk"))
}

fn apk_record(id: &str, class: &str, apk: PathBuf) -> AppRecord {
    AppRecord {
        app_id: id.into(),
        class_label: Some(class.into()),
        gplay_category_id: String::new(),
        description: format!("{class} app"),
        apk_path: Some(apk),
        sha256: None,
        is_malicious: false,
    }
}

fn fixture_manifest(dir: &Path, corrupt: Option<&str>) -> PathBuf {
    let mut records = Vec::new();
    for (name, class) in [("tinycalc", "tools"), ("locator", "maps"), ("pool", "games")] {
        let apk = if corrupt == Some(name) {
            let p = dir.join(format!("{name}-broken.apk"));
            std::fs::write(&p, b"this is not a zip archive").unwrap();
            p
        } else {
            fixture_apk(name)
        };
        records.push(apk_record(&format!("com.example.{name}"), class, apk));
    }
    let path = dir.join("manifest.jsonl");
    Manifest::from_records(records).unwrap().save(&path).unwrap();
    path
}

fn config(manifest: &Path, out: &Path) -> RunConfig {
    RunConfig {
        manifest: Some(manifest.to_path_buf()),
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn tree_bytes(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

#[test]
fn extract_writes_one_file_per_app_and_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture_manifest(tmp.path(), None);
    let cfg = config(&manifest, &tmp.path().join("out"));
    let first = cmd_extract(&cfg).unwrap();
    assert_eq!(first.written.len(), 3);
    assert!(first.failures.is_empty());
    let before: Vec<Vec<u8>> = first.written.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let second = cmd_extract(&cfg).unwrap();
    let after: Vec<Vec<u8>> = second.written.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn corrupt_apk_is_logged_and_the_batch_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture_manifest(tmp.path(), Some("locator"));
    let cfg = config(&manifest, &tmp.path().join("out"));
    let out = cmd_extract(&cfg).unwrap();
    assert_eq!(out.written.len(), 2);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].0, "com.example.locator");
    assert_eq!(std::fs::read_dir(cfg.features_dir()).unwrap().count(), 2);
}

#[test]
fn extraction_with_no_success_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.apk");
    std::fs::write(&bad, b"nope").unwrap();
    let path = tmp.path().join("m.jsonl");
    Manifest::from_records(vec![apk_record("x", "c", bad)]).unwrap().save(&path).unwrap();
    let e = cmd_extract(&config(&path, &tmp.path().join("out"))).unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn apk_feature_groups_cluster_extracted_fixtures() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture_manifest(tmp.path(), None);
    let mut cfg = config(&manifest, &tmp.path().join("out"));
    cmd_extract(&cfg).unwrap();
    cfg.features = vec![
        FeatureGroup::Name,
        FeatureGroup::Permissions,
        FeatureGroup::Apis,
        FeatureGroup::Strings,
        FeatureGroup::Icon,
        FeatureGroup::Libraries,
    ];
    cfg.k = 3;
    let report = cmd_categorize(&cfg).unwrap();
    // Three apps in three clusters reproduce three singleton classes.
    assert_eq!(report.ari[0].ari, 1.0);
    assert!(report.ari[0].configuration.contains("name+permissions+apis+strings+icon+libraries"));
    // The pool fixture has a resource-reference label.
    assert!(report.warnings.iter().any(|w| w.contains("com.example.pool")), "{:?}", report.warnings);
    let p = Partition::load_csv(&cfg.output_dir.join(PARTITION_FILE)).unwrap();
    assert_eq!(p.len(), 3);
}

#[test]
fn missing_description_names_the_app() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = synth_corpus(2, 3, 0).records().to_vec();
    m[4].description.clear();
    let path = tmp.path().join("m.jsonl");
    Manifest::from_records(m.clone()).unwrap().save(&path).unwrap();
    let mut cfg = config(&path, &tmp.path().join("out"));
    cfg.k = 2;
    let e = cmd_categorize(&cfg).unwrap_err();
    assert!(matches!(e, CliError::Data(_)));
    assert!(e.to_string().contains(&m[4].app_id), "{e}");
    assert!(!report_path(&cfg, "categorize").exists());
}

#[test]
fn self_evaluation_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.jsonl");
    synth_corpus(3, 5, 2).save(&path).unwrap();
    let mut cfg = config(&path, &tmp.path().join("out"));
    cfg.k = 3;
    cmd_categorize(&cfg).unwrap();
    let partition = cfg.output_dir.join(PARTITION_FILE);
    let r = cmd_evaluate(&cfg, Some(&partition), Some(&partition)).unwrap();
    assert_eq!(r.ari[0].ari, 1.0);
    let rows = cmd_report(&cfg, &[report_path(&cfg, "categorize"), report_path(&cfg, "evaluate")]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(cfg.output_dir.join("ari_summary.csv").exists());
}

/// synth -> split -> categorize -> assign -> detect into `out`.
fn full_run(root: &Path, out: &str, seed: u64, malware: bool) -> RunConfig {
    let data_cfg = RunConfig {
        output_dir: root.join("data"),
        seed,
        ..RunConfig::default()
    };
    let (benign, mal) = cmd_synth(&data_cfg, &DetectionShape::default()).unwrap();
    let cfg = RunConfig {
        manifest: Some(benign),
        malware_manifest: malware.then_some(mal),
        features_dir: Some(data_cfg.features_dir()),
        output_dir: root.join(out),
        k: 10,
        seed,
        ..RunConfig::default()
    };
    cmd_split(&cfg).unwrap();
    cmd_categorize(&cfg).unwrap();
    cmd_assign(&cfg).unwrap();
    cmd_detect(&cfg).unwrap();
    cfg
}

const OUTPUTS: [&str; 9] = [
    "split.json",
    "partition.csv",
    "kmeans.json",
    "vectorizer.json",
    "categorize_report.json",
    "assignments.csv",
    "ocsvm_models.json",
    "scores.csv",
    "detect_report.json",
];

#[test]
fn full_pipeline_is_byte_identical_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let a = full_run(tmp.path(), "a", 11, true);
    let b = full_run(tmp.path(), "b", 11, true);
    assert_eq!(tree_bytes(&a.output_dir, &OUTPUTS), tree_bytes(&b.output_dir, &OUTPUTS));
    let report = appcat::RunReport::load(&report_path(&a, "detect")).unwrap();
    let d = report.detection.unwrap();
    let c = d.counts;
    assert_eq!((c.tp + c.fn_) as usize, report.counts["test_malicious"]);
    assert_eq!((c.tn + c.fp) as usize, report.counts["test_benign"]);
    let expected_f1 = c.tp as f64 / (c.tp as f64 + 0.5 * (c.fp + c.fn_) as f64);
    assert_eq!(d.f1, expected_f1);
}

#[test]
fn detect_stage_reruns_from_persisted_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = full_run(tmp.path(), "a", 5, true);
    let before = std::fs::read(report_path(&cfg, "detect")).unwrap();
    std::fs::remove_file(cfg.output_dir.join("ocsvm_models.json")).unwrap();
    cmd_detect(&cfg).unwrap();
    assert_eq!(before, std::fs::read(report_path(&cfg, "detect")).unwrap());
}

#[test]
fn all_benign_test_set_reports_zero_f1_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = full_run(tmp.path(), "a", 3, false);
    let r = appcat::RunReport::load(&report_path(&cfg, "detect")).unwrap();
    let d = r.detection.unwrap();
    assert_eq!(d.counts.tp + d.counts.fn_, 0);
    assert_eq!(d.tpr, None);
    assert!(d.fpr.is_some());
    if d.counts.fp == 0 {
        assert_eq!(d.fpr, Some(0.0));
    }
    assert_eq!(d.f1, 0.0);
    assert!(r.warnings.iter().any(|w| w.contains("no malicious apps")));
}

#[test]
fn tfidf_descriptions_are_supported() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.jsonl");
    synth_corpus(4, 10, 8).save(&path).unwrap();
    let mut cfg = config(&path, &tmp.path().join("out"));
    cfg.k = 4;
    cfg.embedder = EmbedderChoice::Tfidf;
    let r = cmd_categorize(&cfg).unwrap();
    assert!(r.ari[0].ari > 0.9, "{}", r.ari[0].ari);
}

#[test]
fn remote_embedder_without_credential_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.jsonl");
    synth_corpus(2, 3, 0).save(&path).unwrap();
    let mut cfg = config(&path, &tmp.path().join("out"));
    cfg.embedder = EmbedderChoice::Remote;
    cfg.remote.credential_env = "APPCAT_TEST_UNSET_CREDENTIAL".into();
    let e = cmd_categorize(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("APPCAT_TEST_UNSET_CREDENTIAL"));
}

// ------------------------------------------------------------------ binary

fn appcat(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_appcat")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes_and_config_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let out = appcat(&["categorize", "--manifest", &s(&root.join("missing.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));

    let manifest = root.join("m.jsonl");
    let mut records = synth_corpus(3, 4, 1).records().to_vec();
    records[0].description = String::new();
    Manifest::from_records(records).unwrap().save(&manifest).unwrap();
    let out = appcat(&["categorize", "--manifest", &s(&manifest), "-o", &s(&root.join("o1")), "--k", "3"]);
    assert_eq!(out.status.code(), Some(3));

    synth_corpus(3, 4, 1).save(&manifest).unwrap();
    let cfg_file = root.join("run.toml");
    std::fs::write(
        &cfg_file,
        format!("manifest = {:?}\noutput_dir = {:?}\nk = 40\nseed = 9\n", s(&manifest), s(&root.join("o2"))),
    )
    .unwrap();
    // k = 40 from the file exceeds the 12 apps; the flag overrides it.
    let out = appcat(&["categorize", "--config", &s(&cfg_file)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = appcat(&["categorize", "--config", &s(&cfg_file), "--k", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = appcat::RunReport::load(&root.join("o2/categorize_report.json")).unwrap();
    assert_eq!(report.config["k"], 3);
    assert_eq!(report.config["seed"], 9);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ARI"));

    std::fs::write(&cfg_file, "clusters = 3\n").unwrap();
    assert_eq!(appcat(&["categorize", "--config", &s(&cfg_file)]).status.code(), Some(2));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    /// Categorization is a pure function of manifest, config and seed.
    #[test]
    fn categorize_is_deterministic(seed in 0u64..1000, k in 2usize..6) {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.jsonl");
        synth_corpus(5, 6, seed).save(&path).unwrap();
        let files = ["partition.csv", "kmeans.json", "categorize_report.json"];
        let mut outs = Vec::new();
        for run in ["a", "b"] {
            let mut cfg = config(&path, &tmp.path().join(run));
            cfg.k = k;
            cfg.seed = seed;
            cmd_categorize(&cfg).unwrap();
            outs.push(tree_bytes(&cfg.output_dir, &files));
        }
        prop_assert_eq!(&outs[0], &outs[1]);
        let p = Partition::from_csv(std::str::from_utf8(&outs[0][0]).unwrap()).unwrap();
        prop_assert_eq!(p.len(), 30);
        prop_assert!(p.clusters().len() <= k);
    }
}
