mod common;

use std::path::Path;

use curatekit::bench::{BenchConfig, SyntheticTask};
use curatekit::index::IndexKind;
use curatekit::ood::GmmConfig;
use curatekit::pipeline::{
    exit_code, run_pipeline, BenchMode, BenchStage, EvalStage, FuseStage, IndexStage, ModelDir,
    OodStage, PipelineSpec, SelectStage, Stage, EXIT_STAGE, EXIT_VALIDATION, MANIFEST_FILE,
};
use curatekit::pool::{write_labels, write_pool, LabeledPool, VectorPool};
use curatekit::Error;

fn write_fixture_pool(path: &Path, n: usize, dim: usize, seed: u64) {
    let rows = common::gaussian_rows(n, dim, seed);
    let pool = VectorPool::new(dim, rows.into_iter().flatten().collect()).unwrap();
    write_pool(&pool, path).unwrap();
}

fn spec_dirs() -> (tempfile::TempDir, PipelineSpec) {
    let dir = tempfile::tempdir().unwrap();
    let spec = PipelineSpec {
        seed: 7,
        artifact_dir: dir.path().join("artifacts"),
        stages: Vec::new(),
        base_dir: dir.path().to_path_buf(),
    };
    (dir, spec)
}

#[test]
fn empty_stage_list_succeeds_with_empty_manifest() {
    let (dir, spec) = spec_dirs();
    let manifest = run_pipeline(&spec).unwrap();
    assert!(manifest.entries.is_empty());
    assert_eq!(manifest.seed, 7);
    assert!(dir.path().join("artifacts").join(MANIFEST_FILE).exists());
}

#[test]
fn missing_input_fails_validation_before_any_stage_runs() {
    let (dir, mut spec) = spec_dirs();
    spec.stages = vec![Stage::Index(IndexStage {
        input: "nonexistent.bin".into(),
        config: Default::default(),
        out: "idx.bin".into(),
    })];
    let err = run_pipeline(&spec).unwrap_err();
    assert!(matches!(err, Error::Pipeline(_)), "unexpected error {err}");
    assert_eq!(exit_code(&err), EXIT_VALIDATION);
    assert!(!dir.path().join("artifacts").exists(), "artifact dir created despite validation error");
}

#[test]
fn duplicate_output_names_are_rejected() {
    let (dir, mut spec) = spec_dirs();
    write_fixture_pool(&dir.path().join("pool.bin"), 200, 8, 1);
    let index = |out: &str| {
        Stage::Index(IndexStage {
            input: "pool.bin".into(),
            config: Default::default(),
            out: out.into(),
        })
    };
    spec.stages = vec![index("idx.bin"), index("idx.bin")];
    let err = spec.validate().unwrap_err();
    assert!(err.to_string().contains("duplicate output"), "unexpected error {err}");
}

#[test]
fn stage_failure_names_the_stage_and_maps_to_exit_two() {
    let (dir, mut spec) = spec_dirs();
    // A 3-dimensional pool cannot host a 16-subspace PQ index: the build
    // itself fails after validation passes.
    write_fixture_pool(&dir.path().join("pool.bin"), 200, 3, 1);
    spec.stages = vec![Stage::Index(IndexStage {
        input: "pool.bin".into(),
        config: curatekit::index::IndexConfig {
            kind: IndexKind::IvfPq,
            ..Default::default()
        },
        out: "idx.bin".into(),
    })];
    let err = run_pipeline(&spec).unwrap_err();
    assert!(err.to_string().contains("stage 1 (index) failed"), "unexpected error {err}");
    assert_eq!(exit_code(&err), EXIT_STAGE);
}

fn chain_spec(dir: &Path) -> PipelineSpec {
    // Fixtures: a vector pool, labels over its first ids, a labeled-vector
    // pool for the GMM, per-model VOC dirs, and a ground-truth VOC dir.
    write_fixture_pool(&dir.join("pool.bin"), 600, 8, 1);
    write_fixture_pool(&dir.join("train.bin"), 300, 8, 2);
    write_fixture_pool(&dir.join("candidates.bin"), 100, 8, 3);
    let labeled =
        LabeledPool::new((0..20).collect(), (0..20).map(|i| (i % 2) as u32).collect()).unwrap();
    write_labels(&labeled, &dir.join("labels.csv")).unwrap();
    let models = common::voc_model_dirs(dir, &["m0", "m1", "m2"], 6, 10);
    common::voc_model_dirs(dir, &["gt"], 6, 11);

    PipelineSpec {
        seed: 42,
        artifact_dir: dir.join("artifacts"),
        base_dir: dir.to_path_buf(),
        stages: vec![
            Stage::Index(IndexStage {
                input: "pool.bin".into(),
                config: Default::default(),
                out: "idx.bin".into(),
            }),
            Stage::Select(SelectStage {
                index: "idx.bin".into(),
                labels: "labels.csv".into(),
                config: curatekit::al::AlConfig { batch_size: 10, ..Default::default() },
                out: "batch.csv".into(),
            }),
            Stage::Ood(OodStage {
                train: "train.bin".into(),
                candidates: "candidates.bin".into(),
                config: GmmConfig { k: 2, ..Default::default() },
                tau: None,
                model_out: Some("gmm.bin".into()),
                out: "scores.csv".into(),
            }),
            Stage::Fuse(FuseStage {
                models: models
                    .iter()
                    .map(|(name, d)| ModelDir { name: name.clone(), dir: d.clone() })
                    .collect(),
                config: Default::default(),
                parallel: true,
                out: "fused".into(),
            }),
            Stage::Eval(EvalStage {
                pred: "fused".into(),
                gt: "gt".into(),
                variant: Some("standard".into()),
                out: "report.csv".into(),
            }),
        ],
    }
}

#[test]
fn five_stage_chain_reruns_with_identical_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let spec = chain_spec(dir.path());
    let first = run_pipeline(&spec).unwrap();
    assert_eq!(first.entries.len(), 5);
    let names: Vec<&str> = first.entries.iter().map(|e| e.stage.as_str()).collect();
    assert_eq!(names, ["index", "select", "ood", "fuse", "eval"]);
    for entry in &first.entries {
        assert!(!entry.outputs.is_empty());
        for artifact in &entry.outputs {
            assert!(artifact.checksum.is_some(), "{} has no checksum", artifact.path);
            assert!(
                spec.artifact_dir.join(&artifact.path).exists(),
                "{} listed but missing",
                artifact.path
            );
        }
    }
    // The fuse stage records every file it wrote (6 images + audit CSV).
    let fuse = &first.entries[3];
    assert_eq!(fuse.outputs.len(), 7);

    // Same artifact dir, rerun in place.
    let second = run_pipeline(&spec).unwrap();
    assert_eq!(first, second);

    // Fresh artifact dir: checksums must still agree file-for-file.
    let mut relocated = chain_spec_reusing_fixtures(&spec, dir.path().join("artifacts2"));
    relocated.seed = spec.seed;
    let third = run_pipeline(&relocated).unwrap();
    for (a, b) in first.entries.iter().zip(&third.entries) {
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.outputs, b.outputs);
    }
}

fn chain_spec_reusing_fixtures(spec: &PipelineSpec, artifact_dir: std::path::PathBuf) -> PipelineSpec {
    let mut out = spec.clone();
    out.artifact_dir = artifact_dir;
    out
}

#[test]
fn bench_stage_outputs_carry_no_checksum() {
    let (dir, mut spec) = spec_dirs();
    spec.stages = vec![Stage::Bench(BenchStage {
        mode: BenchMode::Curves,
        config: BenchConfig {
            scales: vec![1_000],
            dims: vec![8],
            strategies: vec![curatekit::al::AlStrategy::Random],
            label_budget: 50,
            round_size: 50,
            seeds: vec![1, 2],
            candidate_pool_size: 500,
            neighborhood_size: 200,
            force_index: Some(IndexKind::Flat),
            task: SyntheticTask { separation: 3.0, ..Default::default() },
            ..Default::default()
        },
        out: "curves.csv".into(),
    })];
    let manifest = run_pipeline(&spec).unwrap();
    assert_eq!(manifest.entries.len(), 1);
    assert_eq!(manifest.entries[0].outputs[0].checksum, None);
    assert!(dir.path().join("artifacts/curves.csv").exists());
}
