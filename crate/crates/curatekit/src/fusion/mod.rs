//! Multi-model consensus annotation fusion.
//!
//! Per image: parse each model's VOC proposals, group same-class proposals
//! into support clusters at `tau_iou`, score each cluster by the fraction of
//! ensemble models that contributed, then finalize with a configurable NMS
//! variant. Every image is a stateless task, so a corpus fuses in parallel
//! with output identical to a serial run.

mod voc;

pub use voc::{parse_voc, write_voc, ImageMeta, VocAnnotation, VocObject};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.xmin < self.xmax && self.ymin < self.ymax) {
            return Err(Error::Annotation(format!(
                "degenerate box ({}, {}, {}, {})",
                self.xmin, self.ymin, self.xmax, self.ymax
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

/// |a ∩ b| / |a ∪ b|; disjoint boxes score 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let iy = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// One detector proposal p = (b, c, s) tagged with its source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub label: String,
    pub score: f64,
    pub model_id: String,
}

impl Proposal {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Annotation(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

/// A support cluster C: label-pure proposals agreeing at `tau_iou`, scored by
/// the share of distinct ensemble models among its members.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusCluster {
    pub members: Vec<Proposal>,
    /// Unweighted per-coordinate mean of the member boxes.
    pub fused_box: BBox,
    /// (distinct contributing models) / (ensemble size), in (0, 1].
    pub consensus_score: f64,
    pub label: String,
    /// Mean member confidence; secondary NMS sort key.
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsVariant {
    Standard,
    Soft,
    DIou,
    Weighted,
    Adaptive,
    Cluster,
}

impl std::fmt::Display for NmsVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NmsVariant::Standard => "standard",
            NmsVariant::Soft => "soft",
            NmsVariant::DIou => "diou",
            NmsVariant::Weighted => "weighted",
            NmsVariant::Adaptive => "adaptive",
            NmsVariant::Cluster => "cluster",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for NmsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(NmsVariant::Standard),
            "soft" => Ok(NmsVariant::Soft),
            "diou" => Ok(NmsVariant::DIou),
            "weighted" => Ok(NmsVariant::Weighted),
            "adaptive" => Ok(NmsVariant::Adaptive),
            "cluster" => Ok(NmsVariant::Cluster),
            other => Err(Error::InvalidConfig(format!("unknown NMS variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsConfig {
    pub variant: NmsVariant,
    /// Support-matching IoU threshold τ_iou.
    pub tau_iou: f64,
    /// Suppression IoU threshold τ_nms.
    pub tau_nms: f64,
    /// Soft-NMS Gaussian width.
    pub sigma: f64,
    /// Minimum score that survives Soft-NMS decay.
    pub score_floor: f64,
    /// Declared ensemble; proposals from other model ids are rejected.
    pub ensemble: Vec<String>,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            variant: NmsVariant::Standard,
            tau_iou: 0.5,
            tau_nms: 0.5,
            sigma: 0.5,
            score_floor: 0.001,
            ensemble: Vec::new(),
        }
    }
}

impl NmsConfig {
    pub fn ensemble_size(&self) -> usize {
        self.ensemble.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_iou", self.tau_iou),
            ("tau_nms", self.tau_nms),
            ("score_floor", self.score_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidConfig(format!("sigma {} must be positive", self.sigma)));
        }
        if self.ensemble.is_empty() {
            return Err(Error::InvalidConfig("ensemble must declare at least one model".into()));
        }
        Ok(())
    }
}

/// Anchor ordering: confidence desc, then model_id asc, then area desc, then
/// coordinates asc. Fully deterministic.
fn anchor_order(a: &Proposal, b: &Proposal) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.model_id.cmp(&b.model_id))
        .then_with(|| b.bbox.area().total_cmp(&a.bbox.area()))
        .then_with(|| a.bbox.coords().iter().map(|c| c.to_bits()).cmp(b.bbox.coords().iter().map(|c| c.to_bits())))
}

/// Groups one image's proposals into consensus clusters.
///
/// Per class, in anchor order, each unconsumed proposal claims the single
/// best-matching unconsumed proposal (IoU ≥ τ_iou with the anchor) from every
/// other model; claimed proposals are consumed, so the clusters partition the
/// input. A proposal with no support forms a singleton cluster.
pub fn build_clusters(proposals: &[Proposal], config: &NmsConfig) -> Result<Vec<ConsensusCluster>> {
    config.validate()?;
    for p in proposals {
        p.validate()?;
        if !config.ensemble.contains(&p.model_id) {
            return Err(Error::Annotation(format!(
                "model id {:?} is not in the declared ensemble",
                p.model_id
            )));
        }
    }
    let n = config.ensemble_size() as f64;

    let labels: BTreeSet<&str> = proposals.iter().map(|p| p.label.as_str()).collect();
    let mut clusters = Vec::new();
    for label in labels {
        let mut idxs: Vec<usize> = (0..proposals.len())
            .filter(|&i| proposals[i].label == label)
            .collect();
        idxs.sort_by(|&a, &b| anchor_order(&proposals[a], &proposals[b]));
        let mut consumed = vec![false; idxs.len()];
        for a in 0..idxs.len() {
            if consumed[a] {
                continue;
            }
            consumed[a] = true;
            let anchor = &proposals[idxs[a]];
            let mut members = vec![anchor.clone()];
            for model in &config.ensemble {
                if *model == anchor.model_id {
                    continue;
                }
                // Best supporter = highest IoU with the anchor; ties by the
                // same deterministic anchor ordering.
                let mut best: Option<(f64, usize)> = None;
                for (slot, &i) in idxs.iter().enumerate() {
                    if consumed[slot] || proposals[i].model_id != *model {
                        continue;
                    }
                    let ov = iou(&anchor.bbox, &proposals[i].bbox);
                    if ov < config.tau_iou {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bov, bslot)) => {
                            ov > bov
                                || (ov == bov
                                    && anchor_order(&proposals[i], &proposals[idxs[bslot]])
                                        .is_lt())
                        }
                    };
                    if better {
                        best = Some((ov, slot));
                    }
                }
                if let Some((_, slot)) = best {
                    consumed[slot] = true;
                    members.push(proposals[idxs[slot]].clone());
                }
            }

            let m = members.len() as f64;
            let fused_box = BBox {
                xmin: members.iter().map(|p| p.bbox.xmin).sum::<f64>() / m,
                ymin: members.iter().map(|p| p.bbox.ymin).sum::<f64>() / m,
                xmax: members.iter().map(|p| p.bbox.xmax).sum::<f64>() / m,
                ymax: members.iter().map(|p| p.bbox.ymax).sum::<f64>() / m,
            };
            let distinct: BTreeSet<&str> = members.iter().map(|p| p.model_id.as_str()).collect();
            let mean_confidence = members.iter().map(|p| p.score).sum::<f64>() / m;
            clusters.push(ConsensusCluster {
                consensus_score: distinct.len() as f64 / n,
                fused_box,
                label: label.to_string(),
                mean_confidence,
                members,
            });
        }
    }
    clusters.sort_by(cluster_order);
    Ok(clusters)
}

/// NMS ranking: consensus desc, then mean confidence desc, then area desc,
/// then coordinates asc.
fn cluster_order(a: &ConsensusCluster, b: &ConsensusCluster) -> std::cmp::Ordering {
    b.consensus_score
        .total_cmp(&a.consensus_score)
        .then_with(|| b.mean_confidence.total_cmp(&a.mean_confidence))
        .then_with(|| b.fused_box.area().total_cmp(&a.fused_box.area()))
        .then_with(|| {
            a.fused_box
                .coords()
                .iter()
                .map(|c| c.to_bits())
                .cmp(b.fused_box.coords().iter().map(|c| c.to_bits()))
        })
}

/// A finalized detection after NMS.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDetection {
    pub bbox: BBox,
    pub label: String,
    /// Consensus score, possibly decayed (Soft) by the NMS stage.
    pub score: f64,
}

fn diou_penalty(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let rho_sq = (ax - bx).powi(2) + (ay - by).powi(2);
    let ex = a.xmax.max(b.xmax) - a.xmin.min(b.xmin);
    let ey = a.ymax.max(b.ymax) - a.ymin.min(b.ymin);
    let c_sq = ex * ex + ey * ey;
    if c_sq <= 0.0 {
        0.0
    } else {
        rho_sq / c_sq
    }
}

/// Finalizes consensus clusters with the configured NMS variant.
///
/// Suppression runs per class; the output is sorted by final score
/// descending (coordinates break ties).
pub fn apply_nms(clusters: &[ConsensusCluster], config: &NmsConfig) -> Result<Vec<FusedDetection>> {
    config.validate()?;
    let mut ranked: Vec<&ConsensusCluster> = clusters.iter().collect();
    ranked.sort_by(|a, b| cluster_order(a, b));

    let labels: BTreeSet<&str> = ranked.iter().map(|c| c.label.as_str()).collect();
    let mut out = Vec::new();
    for label in labels {
        let group: Vec<&ConsensusCluster> =
            ranked.iter().copied().filter(|c| c.label == label).collect();
        nms_class(&group, config, &mut out);
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| {
                a.bbox
                    .coords()
                    .iter()
                    .map(|c| c.to_bits())
                    .cmp(b.bbox.coords().iter().map(|c| c.to_bits()))
            })
    });
    Ok(out)
}

fn nms_class(group: &[&ConsensusCluster], config: &NmsConfig, out: &mut Vec<FusedDetection>) {
    let emit = |bbox: BBox, score: f64, out: &mut Vec<FusedDetection>| {
        out.push(FusedDetection { bbox, label: group[0].label.clone(), score });
    };
    match config.variant {
        NmsVariant::Standard => {
            let mut kept: Vec<&BBox> = Vec::new();
            for c in group {
                if kept.iter().all(|k| iou(k, &c.fused_box) <= config.tau_nms) {
                    kept.push(&c.fused_box);
                    emit(c.fused_box, c.consensus_score, out);
                }
            }
        }
        NmsVariant::DIou => {
            let mut kept: Vec<&BBox> = Vec::new();
            for c in group {
                let keep = kept.iter().all(|k| {
                    iou(k, &c.fused_box) - diou_penalty(k, &c.fused_box) <= config.tau_nms
                });
                if keep {
                    kept.push(&c.fused_box);
                    emit(c.fused_box, c.consensus_score, out);
                }
            }
        }
        NmsVariant::Soft => {
            // Classic Soft-NMS: repeatedly promote the current best and decay
            // the rest by a Gaussian in their IoU with it.
            let mut rest: Vec<(BBox, f64)> =
                group.iter().map(|c| (c.fused_box, c.consensus_score)).collect();
            while !rest.is_empty() {
                let best = rest
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                    .map(|(i, _)| i)
                    .unwrap();
                let (bbox, score) = rest.remove(best);
                if score < config.score_floor {
                    break;
                }
                emit(bbox, score, out);
                for (other, s) in &mut rest {
                    let ov = iou(&bbox, other);
                    *s *= (-ov * ov / config.sigma).exp();
                }
            }
        }
        NmsVariant::Weighted => {
            // Standard suppression decisions, but each keeper's box becomes
            // the score-weighted mean of itself and the boxes it suppressed.
            let mut kept: Vec<(BBox, f64, f64, BBox)> = Vec::new(); // (accum box*w, score, total w, decision box)
            for c in group {
                let mut owner: Option<usize> = None;
                for (i, (_, _, _, kbox)) in kept.iter().enumerate() {
                    if iou(kbox, &c.fused_box) > config.tau_nms {
                        owner = Some(i);
                        break;
                    }
                }
                match owner {
                    None => {
                        let w = c.consensus_score.max(f64::MIN_POSITIVE);
                        let b = c.fused_box;
                        let acc = BBox {
                            xmin: b.xmin * w,
                            ymin: b.ymin * w,
                            xmax: b.xmax * w,
                            ymax: b.ymax * w,
                        };
                        kept.push((acc, c.consensus_score, w, b));
                    }
                    Some(i) => {
                        let w = c.consensus_score.max(f64::MIN_POSITIVE);
                        let (acc, _, total, _) = &mut kept[i];
                        acc.xmin += c.fused_box.xmin * w;
                        acc.ymin += c.fused_box.ymin * w;
                        acc.xmax += c.fused_box.xmax * w;
                        acc.ymax += c.fused_box.ymax * w;
                        *total += w;
                    }
                }
            }
            for (acc, score, w, _) in kept {
                emit(
                    BBox {
                        xmin: acc.xmin / w,
                        ymin: acc.ymin / w,
                        xmax: acc.xmax / w,
                        ymax: acc.ymax / w,
                    },
                    score,
                    out,
                );
            }
        }
        NmsVariant::Adaptive => {
            // Per-keeper threshold = max(tau_nms, its own crowd density),
            // density = max IoU with any other candidate of the class.
            let density: Vec<f64> = group
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    group
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, o)| iou(&c.fused_box, &o.fused_box))
                        .fold(0.0f64, f64::max)
                })
                .collect();
            let mut kept: Vec<(usize, &BBox)> = Vec::new();
            for (i, c) in group.iter().enumerate() {
                let keep = kept.iter().all(|&(k, kbox)| {
                    iou(kbox, &c.fused_box) <= config.tau_nms.max(density[k])
                });
                if keep {
                    kept.push((i, &c.fused_box));
                    emit(c.fused_box, c.consensus_score, out);
                }
            }
        }
        NmsVariant::Cluster => {
            // Matrix-form suppression iterated to a fixpoint: a box dies when
            // a currently-alive higher-ranked box overlaps it beyond tau_nms.
            let n = group.len();
            let mut ov = vec![0.0f64; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    ov[i * n + j] = iou(&group[i].fused_box, &group[j].fused_box);
                }
            }
            let mut alive = vec![true; n];
            loop {
                let next: Vec<bool> = (0..n)
                    .map(|j| {
                        !(0..j).any(|i| alive[i] && ov[i * n + j] > config.tau_nms)
                    })
                    .collect();
                if next == alive {
                    break;
                }
                alive = next;
            }
            for (i, c) in group.iter().enumerate() {
                if alive[i] {
                    emit(c.fused_box, c.consensus_score, out);
                }
            }
        }
    }
}

/// One image's fusion result plus its audit row.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedImage {
    pub annotation: VocAnnotation,
    pub cluster_count: usize,
    pub mean_consensus: f64,
}

/// Fuses one image from its per-model annotation files.
pub fn fuse_image(per_model_files: &[(String, PathBuf)], config: &NmsConfig) -> Result<FusedImage> {
    if per_model_files.is_empty() {
        return Err(Error::Annotation("fuse_image needs at least one model file".into()));
    }
    let mut proposals = Vec::new();
    let mut meta = ImageMeta::default();
    for (model_id, path) in per_model_files {
        let ann = parse_voc(path)?;
        if meta.filename.is_empty() {
            meta = ann.meta.clone();
        }
        for obj in ann.objects {
            proposals.push(Proposal {
                bbox: obj.bbox,
                label: obj.label,
                score: obj.score,
                model_id: model_id.clone(),
            });
        }
    }
    let clusters = build_clusters(&proposals, config)?;
    let detections = apply_nms(&clusters, config)?;
    let mean_consensus = if clusters.is_empty() {
        0.0
    } else {
        clusters.iter().map(|c| c.consensus_score).sum::<f64>() / clusters.len() as f64
    };
    let objects = detections
        .into_iter()
        .map(|d| VocObject { label: d.label, score: d.score, bbox: d.bbox })
        .collect();
    Ok(FusedImage {
        annotation: VocAnnotation { meta, objects },
        cluster_count: clusters.len(),
        mean_consensus,
    })
}

/// Audit row written per fused image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionAudit {
    pub image: String,
    pub clusters: usize,
    pub mean_consensus: f64,
    pub variant: String,
}

/// Fuses a corpus laid out as one directory of VOC XML files per model
/// (filename = image id). Writes one fused XML per image into `out_dir` plus
/// `fusion_audit.csv`. `parallel` toggles rayon; output is identical either
/// way because images are independent.
pub fn fuse_directory(
    models: &[(String, PathBuf)],
    out_dir: &Path,
    config: &NmsConfig,
    parallel: bool,
) -> Result<Vec<FusionAudit>> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::Annotation("no model directories given".into()));
    }
    let mut images: BTreeSet<String> = BTreeSet::new();
    for (_, dir) in models {
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".xml") {
                images.insert(name);
            }
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let fuse_one = |image: &String| -> Result<FusionAudit> {
        let files: Vec<(String, PathBuf)> = models
            .iter()
            .filter_map(|(id, dir)| {
                let path = dir.join(image);
                path.exists().then(|| (id.clone(), path))
            })
            .collect();
        let fused = fuse_image(&files, config)?;
        write_voc(&fused.annotation, &out_dir.join(image))?;
        Ok(FusionAudit {
            image: image.clone(),
            clusters: fused.cluster_count,
            mean_consensus: fused.mean_consensus,
            variant: config.variant.to_string(),
        })
    };

    let images: Vec<String> = images.into_iter().collect();
    let audits: Vec<FusionAudit> = if parallel {
        images.par_iter().map(fuse_one).collect::<Result<_>>()?
    } else {
        images.iter().map(fuse_one).collect::<Result<_>>()?
    };

    let mut writer = csv::Writer::from_path(out_dir.join("fusion_audit.csv"))?;
    for audit in &audits {
        writer.serialize(audit)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(audits)
}
