//! Declarative pipeline runner: an ordered stage list executed against an
//! artifact directory, with a manifest recording inputs, config hashes, and
//! output checksums for every stage.
//!
//! Stage inputs may be absolute paths, paths relative to the spec file, or
//! names of outputs declared by earlier stages (resolved in the artifact
//! directory). Validation runs before any stage executes; a spec referencing
//! an unresolvable input fails without side effects.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::al::{select_batch, train_probe, AlConfig};
use crate::bench::{
    run_al_loop, run_scaling_bench, write_curves_csv, write_scaling_csv, BenchConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, write_report_csv};
use crate::fusion::{fuse_directory, NmsConfig};
use crate::index::{build_index, AnnIndex, IndexConfig};
use crate::ood::{auto_tau, filter_batch, fit_gmm, save_gmm, GmmConfig};
use crate::pool::{read_labels, read_pool};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Process exit codes per failure class.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_STAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    /// Global seed threaded into every seeded stage config.
    #[serde(default)]
    pub seed: u64,
    pub artifact_dir: PathBuf,
    #[serde(default)]
    pub stages: Vec<Stage>,
    /// Directory relative inputs are resolved against (set from the spec
    /// file's location by `load_spec`; defaults to the working directory).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Index(IndexStage),
    Select(SelectStage),
    Ood(OodStage),
    Fuse(FuseStage),
    Eval(EvalStage),
    Bench(BenchStage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStage {
    /// Binary vector pool file.
    pub input: PathBuf,
    #[serde(default)]
    pub config: IndexConfig,
    /// Index file written to the artifact directory.
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectStage {
    /// Serialized index file.
    pub index: PathBuf,
    /// CSV label file (id,label).
    pub labels: PathBuf,
    #[serde(default)]
    pub config: AlConfig,
    /// Selection CSV (id,score) written to the artifact directory.
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodStage {
    /// Pool of in-distribution (labeled) vectors the GMM is fit on.
    pub train: PathBuf,
    /// Pool of candidate vectors to score and filter.
    pub candidates: PathBuf,
    #[serde(default)]
    pub config: GmmConfig,
    /// Fixed acceptance threshold; omitted means the auto quantile.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Optional serialized model output.
    #[serde(default)]
    pub model_out: Option<String>,
    /// Scores CSV (id,typicality,accepted) written to the artifact directory.
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseStage {
    /// Named per-model annotation directories.
    pub models: Vec<ModelDir>,
    #[serde(default)]
    pub config: NmsConfig,
    #[serde(default = "default_true")]
    pub parallel: bool,
    /// Output directory (fused XMLs + audit CSV) under the artifact directory.
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDir {
    pub name: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStage {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Label for the report row (defaults to the prediction dir name).
    #[serde(default)]
    pub variant: Option<String>,
    /// Report CSV written to the artifact directory.
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStage {
    pub mode: BenchMode,
    #[serde(default)]
    pub config: BenchConfig,
    /// CSV written to the artifact directory. Contains wall-clock columns, so
    /// its manifest entry carries no checksum.
    pub out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Scaling,
    Curves,
}

fn default_true() -> bool {
    true
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Index(_) => "index",
            Stage::Select(_) => "select",
            Stage::Ood(_) => "ood",
            Stage::Fuse(_) => "fuse",
            Stage::Eval(_) => "eval",
            Stage::Bench(_) => "bench",
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Stage::Index(s) => vec![&s.input],
            Stage::Select(s) => vec![&s.index, &s.labels],
            Stage::Ood(s) => vec![&s.train, &s.candidates],
            Stage::Fuse(s) => s.models.iter().map(|m| m.dir.as_path()).collect(),
            Stage::Eval(s) => vec![&s.pred, &s.gt],
            Stage::Bench(_) => Vec::new(),
        }
    }

    fn outputs(&self) -> Vec<&str> {
        match self {
            Stage::Index(s) => vec![&s.out],
            Stage::Select(s) => vec![&s.out],
            Stage::Ood(s) => {
                let mut outs = vec![s.out.as_str()];
                if let Some(m) = &s.model_out {
                    outs.push(m);
                }
                outs
            }
            Stage::Fuse(s) => vec![&s.out],
            Stage::Eval(s) => vec![&s.out],
            Stage::Bench(s) => vec![&s.out],
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the artifact directory.
    pub path: String,
    /// CRC-64 of the file contents; absent for timing artifacts, which are
    /// excluded from the determinism contract.
    pub checksum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: Vec<String>,
    /// CRC-64 of the stage's canonical JSON config.
    pub config_hash: String,
    pub outputs: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub seed: u64,
    pub entries: Vec<StageRecord>,
}

const CRC64: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);

pub fn checksum_file(path: &Path) -> Result<String> {
    let mut digest = CRC64.digest();
    let mut file = File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        digest.update(&buf[..n]);
    }
    Ok(format!("{:016x}", digest.finalize()))
}

fn checksum_bytes(bytes: &[u8]) -> String {
    format!("{:016x}", CRC64.checksum(bytes))
}

// ---------------------------------------------------------------------------
// Spec loading and validation

pub fn load_spec(path: &Path) -> Result<PipelineSpec> {
    let text = std::fs::read_to_string(path)?;
    let mut spec: PipelineSpec = serde_json::from_str(&text)?;
    spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(spec)
}

impl PipelineSpec {
    /// Checks every stage before anything runs: inputs must exist on disk or
    /// be outputs of an earlier stage; output names must be relative, unique,
    /// and non-empty.
    pub fn validate(&self) -> Result<()> {
        let mut produced: BTreeSet<&str> = BTreeSet::new();
        let mut seen_outputs: BTreeSet<&str> = BTreeSet::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let ctx = |msg: String| {
                Error::Pipeline(format!("stage {} ({}): {msg}", i + 1, stage.name()))
            };
            for input in stage.inputs() {
                if self.resolve_input(input, &produced).is_none() {
                    return Err(ctx(format!(
                        "input {} not found on disk and not produced by an earlier stage",
                        input.display()
                    )));
                }
            }
            for out in stage.outputs() {
                if out.is_empty() {
                    return Err(ctx("empty output name".into()));
                }
                if Path::new(out).is_absolute() {
                    return Err(ctx(format!(
                        "output {out} must be relative to the artifact directory"
                    )));
                }
                if !seen_outputs.insert(out) {
                    return Err(ctx(format!("duplicate output name {out}")));
                }
                produced.insert(out);
            }
            match stage {
                Stage::Fuse(s) if s.models.is_empty() => {
                    return Err(ctx("no model directories".into()));
                }
                Stage::Bench(s) => {
                    s.config.validate().map_err(|e| ctx(e.to_string()))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Resolution order: prior-stage output in the artifact dir, then an
    /// absolute path, then a path relative to the spec file.
    fn resolve_input(&self, input: &Path, produced: &BTreeSet<&str>) -> Option<PathBuf> {
        if let Some(name) = input.to_str() {
            if produced.contains(name) {
                return Some(self.artifact_dir.join(name));
            }
        }
        if input.is_absolute() {
            return input.exists().then(|| input.to_path_buf());
        }
        let relative = self.base_dir.join(input);
        relative.exists().then_some(relative)
    }
}

// ---------------------------------------------------------------------------
// Execution

/// Runs all stages in order, writing `manifest.json` into the artifact
/// directory. Fails fast on validation; a failing stage halts the run with
/// the stage named in the error.
pub fn run_pipeline(spec: &PipelineSpec) -> Result<PipelineManifest> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.artifact_dir)?;
    let mut manifest = PipelineManifest { seed: spec.seed, entries: Vec::new() };
    let mut produced: BTreeSet<&str> = BTreeSet::new();
    for (i, stage) in spec.stages.iter().enumerate() {
        let record = run_stage(spec, stage, &produced).map_err(|e| {
            Error::Pipeline(format!("stage {} ({}) failed: {e}", i + 1, stage.name()))
        })?;
        manifest.entries.push(record);
        for out in stage.outputs() {
            produced.insert(out);
        }
        // Persist after every stage so a later failure leaves a truthful
        // partial manifest behind.
        write_manifest(&manifest, &spec.artifact_dir)?;
    }
    write_manifest(&manifest, &spec.artifact_dir)?;
    Ok(manifest)
}

fn write_manifest(manifest: &PipelineManifest, dir: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(checksum_bytes(serde_json::to_string(config)?.as_bytes()))
}

fn run_stage(
    spec: &PipelineSpec,
    stage: &Stage,
    produced: &BTreeSet<&str>,
) -> Result<StageRecord> {
    let resolve = |p: &Path| -> Result<PathBuf> {
        spec.resolve_input(p, produced)
            .ok_or_else(|| Error::Pipeline(format!("input {} vanished mid-run", p.display())))
    };
    let inputs: Vec<String> = stage
        .inputs()
        .iter()
        .map(|p| resolve(p).map(|r| r.display().to_string()))
        .collect::<Result<_>>()?;

    let mut outputs = Vec::new();
    let mut record_file = |name: &str, timing: bool| -> Result<()> {
        let path = spec.artifact_dir.join(name);
        let checksum = if timing { None } else { Some(checksum_file(&path)?) };
        outputs.push(ArtifactRecord { path: name.to_string(), checksum });
        Ok(())
    };

    let hash;
    match stage {
        Stage::Index(s) => {
            hash = config_hash(&s.config)?;
            let pool = read_pool(&resolve(&s.input)?)?;
            let index = build_index(&pool, s.config.clone())?;
            index.save(&spec.artifact_dir.join(&s.out))?;
            record_file(&s.out, false)?;
        }
        Stage::Select(s) => {
            let mut config = s.config.clone();
            config.rng_seed = spec.seed;
            hash = config_hash(&config)?;
            let index = AnnIndex::load(&resolve(&s.index)?)?;
            let labeled = read_labels(&resolve(&s.labels)?)?;
            let model = if config.strategy.needs_probe() {
                let vectors = index.reconstruct_batch(labeled.ids())?;
                Some(train_probe(&labeled, &vectors)?)
            } else {
                None
            };
            let outcome = select_batch(&index, &labeled, model.as_ref(), &config)?;
            let mut writer = csv::Writer::from_path(spec.artifact_dir.join(&s.out))?;
            writer.write_record(["id", "score"])?;
            for (id, score) in outcome.ids.iter().zip(&outcome.scores) {
                writer.write_record([id.to_string(), score.to_string()])?;
            }
            writer.flush().map_err(Error::Io)?;
            record_file(&s.out, false)?;
        }
        Stage::Ood(s) => {
            let mut config = s.config.clone();
            config.seed = spec.seed;
            hash = config_hash(&config)?;
            let train = read_pool(&resolve(&s.train)?)?;
            let candidates = read_pool(&resolve(&s.candidates)?)?;
            let model = fit_gmm(&train.as_matrix(), &config)?;
            let tau = match s.tau {
                Some(t) => t,
                None => auto_tau(&model, &train.as_matrix())?,
            };
            let ids: Vec<u64> = candidates.ids().collect();
            let outcome = filter_batch(&model, &ids, &candidates.as_matrix(), tau)?;
            let accepted: BTreeSet<u64> = outcome.accepted.iter().copied().collect();
            let mut writer = csv::Writer::from_path(spec.artifact_dir.join(&s.out))?;
            writer.write_record(["id", "typicality", "accepted"])?;
            for (id, score) in ids.iter().zip(&outcome.scores) {
                writer.write_record([
                    id.to_string(),
                    score.to_string(),
                    accepted.contains(id).to_string(),
                ])?;
            }
            writer.flush().map_err(Error::Io)?;
            record_file(&s.out, false)?;
            if let Some(model_out) = &s.model_out {
                save_gmm(&model, &spec.artifact_dir.join(model_out))?;
                record_file(model_out, false)?;
            }
        }
        Stage::Fuse(s) => {
            let mut config = s.config.clone();
            if config.ensemble.is_empty() {
                config.ensemble = s.models.iter().map(|m| m.name.clone()).collect();
            }
            hash = config_hash(&config)?;
            let models: Vec<(String, PathBuf)> = s
                .models
                .iter()
                .map(|m| Ok((m.name.clone(), resolve(&m.dir)?)))
                .collect::<Result<_>>()?;
            let out_dir = spec.artifact_dir.join(&s.out);
            fuse_directory(&models, &out_dir, &config, s.parallel)?;
            // A fuse stage's output is a directory: record each file in it.
            let mut names: Vec<String> = std::fs::read_dir(&out_dir)?
                .map(|e| Ok(e?.file_name().to_string_lossy().into_owned()))
                .collect::<Result<_>>()?;
            names.sort();
            for name in names {
                record_file(&format!("{}/{name}", s.out), false)?;
            }
        }
        Stage::Eval(s) => {
            hash = config_hash(&(&s.pred, &s.gt, &s.variant))?;
            let pred = resolve(&s.pred)?;
            let report = evaluate_dataset(&pred, &resolve(&s.gt)?)?;
            let variant = s.variant.clone().unwrap_or_else(|| {
                pred.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
            });
            write_report_csv(&[(variant, report)], &spec.artifact_dir.join(&s.out))?;
            record_file(&s.out, false)?;
        }
        Stage::Bench(s) => {
            hash = config_hash(&s.config)?;
            let path = spec.artifact_dir.join(&s.out);
            match s.mode {
                BenchMode::Scaling => write_scaling_csv(&run_scaling_bench(&s.config)?, &path)?,
                BenchMode::Curves => write_curves_csv(&run_al_loop(&s.config)?, &path)?,
            }
            record_file(&s.out, true)?;
        }
    }
    Ok(StageRecord { stage: stage.name().to_string(), inputs, config_hash: hash, outputs })
}

/// Maps an error to the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::InvalidConfig(_) => EXIT_VALIDATION,
        Error::Pipeline(msg) if msg.contains("failed:") => EXIT_STAGE,
        Error::Pipeline(_) => EXIT_VALIDATION,
        _ => EXIT_STAGE,
    }
}
