//! Annotation-quality evaluation of fused predictions against ground truth.
//!
//! Produces one aggregate report per run: precision/recall/F1 at IoU 0.5,
//! all-point interpolated mAP at 0.5, 0.75, and averaged over 0.50:0.05:0.95,
//! plus corpus-shape statistics (box-size mix, class imbalance, per-image
//! counts, vocabulary coverage).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{iou, parse_voc, BBox, VocObject};

/// One matched (pred index, gt index, IoU) triple plus the leftovers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Greedy one-to-one matching for one image and class.
///
/// Predictions in descending score each claim the unclaimed ground-truth box
/// with the highest IoU at or above `iou_thresh`. Ties break toward the lower
/// index, so the result is deterministic.
pub fn match_detections(preds: &[(BBox, f64)], gts: &[BBox], iou_thresh: f64) -> Matching {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].1.total_cmp(&preds[a].1).then(a.cmp(&b)));
    let mut claimed = vec![false; gts.len()];
    let mut out = Matching::default();
    for p in order {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let ov = iou(&preds[p].0, gt);
            if ov < iou_thresh {
                continue;
            }
            let better = match best {
                None => true,
                Some((bov, _)) => ov > bov,
            };
            if better {
                best = Some((ov, g));
            }
        }
        match best {
            Some((ov, g)) => {
                claimed[g] = true;
                out.pairs.push((p, g, ov));
            }
            None => out.unmatched_preds.push(p),
        }
    }
    out.unmatched_gts = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    out.unmatched_preds.sort_unstable();
    out
}

/// All-point interpolated average precision for one class.
///
/// `preds` and `gts` carry an image key so matching stays per-image while the
/// precision-recall ranking is global across images. Returns 0 when the class
/// has no ground truth (callers exclude such classes from mAP).
pub fn average_precision(
    preds: &[(usize, BBox, f64)],
    gts: &[(usize, BBox)],
    iou_thresh: f64,
) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let images: BTreeSet<usize> =
        preds.iter().map(|p| p.0).chain(gts.iter().map(|g| g.0)).collect();
    // (score, original pred slot, is_tp)
    let mut flags: Vec<(f64, usize, bool)> = Vec::with_capacity(preds.len());
    for img in images {
        let img_preds: Vec<(usize, (BBox, f64))> = preds
            .iter()
            .enumerate()
            .filter(|(_, p)| p.0 == img)
            .map(|(slot, p)| (slot, (p.1, p.2)))
            .collect();
        let img_gts: Vec<BBox> =
            gts.iter().filter(|g| g.0 == img).map(|g| g.1).collect();
        let local: Vec<(BBox, f64)> = img_preds.iter().map(|(_, p)| *p).collect();
        let matching = match_detections(&local, &img_gts, iou_thresh);
        let mut is_tp = vec![false; local.len()];
        for &(p, _, _) in &matching.pairs {
            is_tp[p] = true;
        }
        for (i, &(slot, (_, score))) in img_preds.iter().enumerate() {
            flags.push((score, slot, is_tp[i]));
        }
    }
    flags.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ap_from_flags(&flags, gts.len())
}

/// Area under the precision-recall curve with all-point interpolation:
/// precision at each recall level is the maximum precision at any equal or
/// higher recall.
fn ap_from_flags(flags: &[(f64, usize, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(flags.len());
    for (rank, &(_, _, hit)) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    // Monotone precision envelope from the right.
    let mut best = 0.0f64;
    for p in points.iter_mut().rev() {
        best = best.max(p.1);
        p.1 = best;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(recall, precision) in &points {
        if recall > prev_recall {
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }
    ap
}

/// One image's predictions and ground truth, already parsed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImagePair {
    pub name: String,
    pub preds: Vec<VocObject>,
    pub gts: Vec<VocObject>,
    pub width: u32,
    pub height: u32,
}

/// Aggregate quality report; one value per metric column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map50: f64,
    pub map75: f64,
    pub map5095: f64,
    /// Mean over all predictions of the IoU achieved in the 0.5 matching;
    /// unmatched predictions count as 0.
    pub avg_iou: f64,
    /// Fraction of GT boxes touched (IoU > 0) by at least one prediction.
    pub overlap_ratio: f64,
    /// GT box share with area < 1% of the image.
    pub pct_small: f64,
    /// GT box share with area in [1%, 5%].
    pub pct_medium: f64,
    /// GT box share with area > 5% of the image.
    pub pct_large: f64,
    /// Max / min ground-truth class frequency.
    pub imbalance_ratio: f64,
    pub avg_gt_per_img: f64,
    pub avg_pred_per_img: f64,
    pub avg_correct_per_img: f64,
    /// % of GT instances whose class occurs anywhere in the predictions.
    pub coverage_gt_pct: f64,
    /// Predicted classes absent from the GT taxonomy.
    pub discovered_new_classes: usize,
}

const MAP_THRESHOLDS: [f64; 10] =
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Computes the full report over parsed image pairs. Deterministic and
/// independent of the order of `images`.
pub fn evaluate_pairs(images: &[ImagePair]) -> Result<EvaluationReport> {
    let mut images: Vec<&ImagePair> = images.iter().collect();
    images.sort_by(|a, b| a.name.cmp(&b.name));

    let gt_classes: BTreeSet<&str> = images
        .iter()
        .flat_map(|im| im.gts.iter().map(|g| g.label.as_str()))
        .collect();
    let pred_classes: BTreeSet<&str> = images
        .iter()
        .flat_map(|im| im.preds.iter().map(|p| p.label.as_str()))
        .collect();

    // Matching at IoU 0.5, per image per class.
    let mut tp = 0usize;
    let mut n_preds = 0usize;
    let mut n_gts = 0usize;
    let mut iou_sum = 0.0f64;
    for im in &images {
        n_preds += im.preds.len();
        n_gts += im.gts.len();
        let classes: BTreeSet<&str> = im
            .preds
            .iter()
            .map(|p| p.label.as_str())
            .chain(im.gts.iter().map(|g| g.label.as_str()))
            .collect();
        for class in classes {
            let preds: Vec<(BBox, f64)> = im
                .preds
                .iter()
                .filter(|p| p.label == class)
                .map(|p| (p.bbox, p.score))
                .collect();
            let gts: Vec<BBox> =
                im.gts.iter().filter(|g| g.label == class).map(|g| g.bbox).collect();
            let m = match_detections(&preds, &gts, 0.5);
            tp += m.pairs.len();
            iou_sum += m.pairs.iter().map(|&(_, _, ov)| ov).sum::<f64>();
        }
    }
    let precision = if n_preds == 0 { 0.0 } else { tp as f64 / n_preds as f64 };
    let recall = if n_gts == 0 { 0.0 } else { tp as f64 / n_gts as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    // mAP per threshold: average AP over classes that appear in the GT.
    let mut map_at = [0.0f64; 10];
    if !gt_classes.is_empty() {
        for class in &gt_classes {
            let mut preds: Vec<(usize, BBox, f64)> = Vec::new();
            let mut gts: Vec<(usize, BBox)> = Vec::new();
            for (img_idx, im) in images.iter().enumerate() {
                for p in im.preds.iter().filter(|p| p.label == *class) {
                    preds.push((img_idx, p.bbox, p.score));
                }
                for g in im.gts.iter().filter(|g| g.label == *class) {
                    gts.push((img_idx, g.bbox));
                }
            }
            for (slot, &thresh) in MAP_THRESHOLDS.iter().enumerate() {
                map_at[slot] += average_precision(&preds, &gts, thresh);
            }
        }
        for v in &mut map_at {
            *v /= gt_classes.len() as f64;
        }
    }

    // GT coverage by any prediction, and box-size mix.
    let mut overlapped = 0usize;
    let mut small = 0usize;
    let mut medium = 0usize;
    let mut large = 0usize;
    for im in &images {
        let image_area = im.width as f64 * im.height as f64;
        for g in &im.gts {
            if im.preds.iter().any(|p| iou(&p.bbox, &g.bbox) > 0.0) {
                overlapped += 1;
            }
            let frac = if image_area > 0.0 { g.bbox.area() / image_area } else { 0.0 };
            if frac < 0.01 {
                small += 1;
            } else if frac <= 0.05 {
                medium += 1;
            } else {
                large += 1;
            }
        }
    }

    let mut class_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for im in &images {
        for g in &im.gts {
            *class_counts.entry(g.label.as_str()).or_default() += 1;
        }
    }
    let imbalance_ratio = match (
        class_counts.values().max(),
        class_counts.values().min(),
    ) {
        (Some(&max), Some(&min)) if min > 0 => max as f64 / min as f64,
        _ => 0.0,
    };

    let covered_gt = images
        .iter()
        .flat_map(|im| im.gts.iter())
        .filter(|g| pred_classes.contains(g.label.as_str()))
        .count();

    let n_images = images.len().max(1) as f64;
    let pct = |count: usize| {
        if n_gts == 0 {
            0.0
        } else {
            100.0 * count as f64 / n_gts as f64
        }
    };
    Ok(EvaluationReport {
        precision,
        recall,
        f1,
        map50: map_at[0],
        map75: map_at[5],
        map5095: map_at.iter().sum::<f64>() / 10.0,
        avg_iou: if n_preds == 0 { 0.0 } else { iou_sum / n_preds as f64 },
        overlap_ratio: if n_gts == 0 { 0.0 } else { overlapped as f64 / n_gts as f64 },
        pct_small: pct(small),
        pct_medium: pct(medium),
        pct_large: pct(large),
        imbalance_ratio,
        avg_gt_per_img: n_gts as f64 / n_images,
        avg_pred_per_img: n_preds as f64 / n_images,
        avg_correct_per_img: tp as f64 / n_images,
        coverage_gt_pct: pct(covered_gt),
        discovered_new_classes: pred_classes.difference(&gt_classes).count(),
    })
}

/// Loads VOC XML directories and evaluates predictions against ground truth.
///
/// Every predicted image must have a ground-truth file; GT images without a
/// prediction file count as all-missed.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<EvaluationReport> {
    let list = |dir: &Path| -> Result<BTreeSet<String>> {
        let mut names = BTreeSet::new();
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.ends_with(".xml") {
                names.insert(name);
            }
        }
        Ok(names)
    };
    let pred_names = list(pred_dir)?;
    let gt_names = list(gt_dir)?;
    if let Some(missing) = pred_names.difference(&gt_names).next() {
        return Err(Error::Evaluation(format!(
            "prediction {missing} has no ground-truth file"
        )));
    }
    let mut pairs = Vec::new();
    for name in &gt_names {
        let gt = parse_voc(&gt_dir.join(name))?;
        let preds = if pred_names.contains(name) {
            parse_voc(&pred_dir.join(name))?.objects
        } else {
            Vec::new()
        };
        pairs.push(ImagePair {
            name: name.clone(),
            preds,
            gts: gt.objects,
            width: gt.meta.width,
            height: gt.meta.height,
        });
    }
    evaluate_pairs(&pairs)
}

/// Writes reports as CSV, one row per labeled variant, with one column per
/// metric.
pub fn write_report_csv(rows: &[(String, EvaluationReport)], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "variant",
        "precision",
        "recall",
        "f1",
        "map50",
        "map75",
        "map5095",
        "avg_iou",
        "overlap_ratio",
        "pct_small",
        "pct_medium",
        "pct_large",
        "imbalance_ratio",
        "avg_gt_per_img",
        "avg_pred_per_img",
        "avg_correct_per_img",
        "coverage_gt_pct",
        "discovered_new_classes",
    ])?;
    for (variant, r) in rows {
        writer.write_record([
            variant.clone(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.map50.to_string(),
            r.map75.to_string(),
            r.map5095.to_string(),
            r.avg_iou.to_string(),
            r.overlap_ratio.to_string(),
            r.pct_small.to_string(),
            r.pct_medium.to_string(),
            r.pct_large.to_string(),
            r.imbalance_ratio.to_string(),
            r.avg_gt_per_img.to_string(),
            r.avg_pred_per_img.to_string(),
            r.avg_correct_per_img.to_string(),
            r.coverage_gt_pct.to_string(),
            r.discovered_new_classes.to_string(),
        ])?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}
