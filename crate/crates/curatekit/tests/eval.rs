mod common;

use curatekit::eval::{
    average_precision, evaluate_dataset, evaluate_pairs, match_detections, write_report_csv,
    ImagePair,
};
use curatekit::fusion::{write_voc, BBox, ImageMeta, VocAnnotation, VocObject};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn bx(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> BBox {
    BBox { xmin, ymin, xmax, ymax }
}

fn obj(label: &str, score: f64, bbox: BBox) -> VocObject {
    VocObject { label: label.into(), score, bbox }
}

#[test]
fn exact_pred_matches_single_gt() {
    let gt = bx(0.0, 0.0, 10.0, 10.0);
    let m = match_detections(&[(gt, 0.9)], &[gt], 0.5);
    assert_eq!(m.pairs, vec![(0, 0, 1.0)]);
    assert!(m.unmatched_preds.is_empty());
    assert!(m.unmatched_gts.is_empty());
}

#[test]
fn two_preds_on_one_gt_keeps_the_higher_score() {
    let gt = bx(0.0, 0.0, 10.0, 10.0);
    let m = match_detections(&[(gt, 0.7), (gt, 0.9)], &[gt], 0.5);
    assert_eq!(m.pairs, vec![(1, 0, 1.0)]);
    assert_eq!(m.unmatched_preds, vec![0]);
    assert!(m.unmatched_gts.is_empty());
}

#[test]
fn counts_always_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n_preds = rng.gen_range(0..15);
        let n_gts = rng.gen_range(0..15);
        let rand_box = |rng: &mut ChaCha8Rng| {
            let x = rng.gen_range(0.0..50.0);
            let y = rng.gen_range(0.0..50.0);
            bx(x, y, x + rng.gen_range(2.0..30.0), y + rng.gen_range(2.0..30.0))
        };
        let preds: Vec<(BBox, f64)> =
            (0..n_preds).map(|_| (rand_box(&mut rng), rng.gen())).collect();
        let gts: Vec<BBox> = (0..n_gts).map(|_| rand_box(&mut rng)).collect();
        let m = match_detections(&preds, &gts, 0.5);
        assert_eq!(m.pairs.len() + m.unmatched_preds.len(), n_preds);
        assert_eq!(m.pairs.len() + m.unmatched_gts.len(), n_gts);
        // One-to-one on both sides.
        let mut ps: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        let mut gs: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        ps.sort_unstable();
        gs.sort_unstable();
        ps.dedup();
        gs.dedup();
        assert_eq!(ps.len(), m.pairs.len());
        assert_eq!(gs.len(), m.pairs.len());
    }
}

/// Kuhn's augmenting-path maximum bipartite matching, as the optimal
/// assignment oracle.
fn max_matching(edges: &[Vec<usize>], n_gts: usize) -> usize {
    fn try_assign(
        p: usize,
        edges: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &g in &edges[p] {
            if !seen[g] {
                seen[g] = true;
                if owner[g].is_none()
                    || try_assign(owner[g].unwrap(), edges, seen, owner)
                {
                    owner[g] = Some(p);
                    return true;
                }
            }
        }
        false
    }
    let mut owner: Vec<Option<usize>> = vec![None; n_gts];
    let mut count = 0;
    for p in 0..edges.len() {
        let mut seen = vec![false; n_gts];
        if try_assign(p, edges, &mut seen, &mut owner) {
            count += 1;
        }
    }
    count
}

#[test]
fn greedy_tp_count_is_optimal_in_the_non_ambiguous_regime() {
    // Boxes live on a disjoint grid, so every pairwise IoU is exactly 1 or 0
    // and greedy matching must find as many pairs as the Hungarian-style
    // optimum.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cell = |c: usize| {
        let x = (c % 10) as f64 * 10.0;
        let y = (c / 10) as f64 * 10.0;
        bx(x, y, x + 10.0, y + 10.0)
    };
    for _ in 0..100 {
        let mut gt_cells: Vec<usize> = (0..100).collect();
        gt_cells.shuffle(&mut rng);
        gt_cells.truncate(rng.gen_range(1..20));
        let gts: Vec<BBox> = gt_cells.iter().map(|&c| cell(c)).collect();
        let preds: Vec<(BBox, f64)> = (0..rng.gen_range(1..25))
            .map(|_| (cell(rng.gen_range(0..100)), rng.gen()))
            .collect();
        let m = match_detections(&preds, &gts, 0.5);

        let edges: Vec<Vec<usize>> = preds
            .iter()
            .map(|(p, _)| {
                gts.iter()
                    .enumerate()
                    .filter(|(_, g)| curatekit::fusion::iou(p, g) >= 0.5)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        assert_eq!(m.pairs.len(), max_matching(&edges, gts.len()));
    }
}

#[test]
fn ap_hand_computed_rankings() {
    let gt = bx(0.0, 0.0, 10.0, 10.0);
    let far = bx(50.0, 50.0, 60.0, 60.0);
    // Single matching prediction: AP = 1.
    assert_eq!(average_precision(&[(0, gt, 0.9)], &[(0, gt)], 0.5), 1.0);
    // FP ranked above TP: precision is 1/2 when recall reaches 1 -> AP = 0.5.
    let ap = average_precision(&[(0, far, 0.9), (0, gt, 0.8)], &[(0, gt)], 0.5);
    assert!((ap - 0.5).abs() < 1e-12);
    // TP ranked above FP: the FP never lowers the envelope -> AP = 1.
    let ap = average_precision(&[(0, gt, 0.9), (0, far, 0.8)], &[(0, gt)], 0.5);
    assert_eq!(ap, 1.0);
}

fn perfect_corpus() -> Vec<ImagePair> {
    let mk = |name: &str, objs: Vec<VocObject>| ImagePair {
        name: name.into(),
        preds: objs.clone(),
        gts: objs,
        width: 100,
        height: 100,
    };
    vec![
        mk("a.xml", vec![obj("cat", 0.9, bx(0.0, 0.0, 10.0, 10.0))]),
        mk(
            "b.xml",
            vec![
                obj("dog", 0.8, bx(10.0, 10.0, 40.0, 40.0)),
                obj("cat", 0.7, bx(60.0, 60.0, 80.0, 80.0)),
            ],
        ),
    ]
}

#[test]
fn perfect_predictor_scores_one_everywhere() {
    let report = evaluate_pairs(&perfect_corpus()).unwrap();
    assert_eq!(report.precision, 1.0);
    assert_eq!(report.recall, 1.0);
    assert_eq!(report.f1, 1.0);
    assert_eq!(report.map50, 1.0);
    assert_eq!(report.map75, 1.0);
    assert_eq!(report.map5095, 1.0);
    assert_eq!(report.avg_iou, 1.0);
    assert_eq!(report.avg_correct_per_img, report.avg_gt_per_img);
    assert_eq!(report.coverage_gt_pct, 100.0);
    assert_eq!(report.discovered_new_classes, 0);
}

#[test]
fn empty_predictions_use_zero_conventions() {
    let mut corpus = perfect_corpus();
    for im in &mut corpus {
        im.preds.clear();
    }
    let report = evaluate_pairs(&corpus).unwrap();
    assert_eq!(report.precision, 0.0);
    assert_eq!(report.recall, 0.0);
    assert_eq!(report.f1, 0.0);
    assert_eq!(report.map50, 0.0);
    assert_eq!(report.avg_pred_per_img, 0.0);
}

fn audited_corpus() -> Vec<ImagePair> {
    vec![
        ImagePair {
            name: "a.xml".into(),
            preds: vec![
                obj("cat", 0.9, bx(0.0, 0.0, 10.0, 10.0)),
                obj("cat", 0.8, bx(20.0, 20.0, 30.0, 30.0)),
            ],
            gts: vec![
                obj("cat", 1.0, bx(0.0, 0.0, 10.0, 10.0)),
                obj("cat", 1.0, bx(50.0, 50.0, 90.0, 90.0)),
            ],
            width: 100,
            height: 100,
        },
        ImagePair {
            name: "b.xml".into(),
            preds: vec![
                obj("dog", 0.7, bx(10.0, 10.0, 40.0, 34.0)),
                obj("bird", 0.6, bx(0.0, 0.0, 5.0, 5.0)),
            ],
            gts: vec![obj("dog", 1.0, bx(10.0, 10.0, 40.0, 40.0))],
            width: 100,
            height: 100,
        },
        ImagePair {
            name: "c.xml".into(),
            preds: vec![obj("cat", 0.5, bx(0.0, 0.0, 30.0, 30.0))],
            gts: vec![
                obj("cat", 1.0, bx(0.0, 0.0, 30.0, 30.0)),
                obj("dog", 1.0, bx(60.0, 60.0, 68.0, 68.0)),
            ],
            width: 100,
            height: 100,
        },
    ]
}

#[test]
fn hand_audited_three_image_corpus() {
    // Tallies (worked by hand): 5 preds, 5 GT, 3 TP with IoUs {1.0, 0.8, 1.0}.
    // cat AP@0.5 ranking (0.9 TP, 0.8 FP, 0.5 TP over 3 GT) = 5/9; dog = 1/2.
    // The dog TP (IoU 0.8) flips to FP for thresholds 0.85..0.95.
    let report = evaluate_pairs(&audited_corpus()).unwrap();
    let eps = 1e-12;
    assert!((report.precision - 0.6).abs() < eps);
    assert!((report.recall - 0.6).abs() < eps);
    assert!((report.f1 - 0.6).abs() < eps);
    assert!((report.avg_iou - 0.56).abs() < eps);
    assert!((report.overlap_ratio - 0.6).abs() < eps);
    assert!((report.pct_small - 20.0).abs() < eps);
    assert!((report.pct_medium - 20.0).abs() < eps);
    assert!((report.pct_large - 60.0).abs() < eps);
    assert!((report.imbalance_ratio - 1.5).abs() < eps);
    assert!((report.avg_gt_per_img - 5.0 / 3.0).abs() < eps);
    assert!((report.avg_pred_per_img - 5.0 / 3.0).abs() < eps);
    assert!((report.avg_correct_per_img - 1.0).abs() < eps);
    assert!((report.coverage_gt_pct - 100.0).abs() < eps);
    assert_eq!(report.discovered_new_classes, 1);
    let map50_expect = (5.0 / 9.0 + 0.5) / 2.0;
    assert!((report.map50 - map50_expect).abs() < eps, "map50 {}", report.map50);
    assert!((report.map75 - map50_expect).abs() < eps);
    let map5095_expect = (7.0 * map50_expect + 3.0 * (5.0 / 9.0 / 2.0)) / 10.0;
    assert!(
        (report.map5095 - map5095_expect).abs() < eps,
        "map5095 {} expect {map5095_expect}",
        report.map5095
    );
    assert!(report.map5095 <= report.map50);
}

#[test]
fn report_is_order_invariant() {
    let mut corpus = audited_corpus();
    let forward = evaluate_pairs(&corpus).unwrap();
    corpus.reverse();
    assert_eq!(evaluate_pairs(&corpus).unwrap(), forward);
}

#[test]
fn dataset_evaluation_reads_voc_directories() {
    let dir = tempfile::tempdir().unwrap();
    let pred_dir = dir.path().join("pred");
    let gt_dir = dir.path().join("gt");
    std::fs::create_dir_all(&pred_dir).unwrap();
    std::fs::create_dir_all(&gt_dir).unwrap();
    for im in audited_corpus() {
        let meta = ImageMeta {
            filename: im.name.replace(".xml", ".jpg"),
            width: im.width,
            height: im.height,
            depth: 3,
        };
        write_voc(
            &VocAnnotation { meta: meta.clone(), objects: im.preds.clone() },
            &pred_dir.join(&im.name),
        )
        .unwrap();
        write_voc(
            &VocAnnotation { meta, objects: im.gts.clone() },
            &gt_dir.join(&im.name),
        )
        .unwrap();
    }
    let from_dirs = evaluate_dataset(&pred_dir, &gt_dir).unwrap();
    let in_memory = evaluate_pairs(&audited_corpus()).unwrap();
    assert_eq!(from_dirs, in_memory);

    // A prediction without ground truth is an error.
    write_voc(
        &VocAnnotation {
            meta: ImageMeta { filename: "x.jpg".into(), width: 10, height: 10, depth: 3 },
            objects: vec![],
        },
        &pred_dir.join("orphan.xml"),
    )
    .unwrap();
    assert!(evaluate_dataset(&pred_dir, &gt_dir).is_err());
}

#[test]
fn report_csv_round_trips_all_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    let report = evaluate_pairs(&audited_corpus()).unwrap();
    write_report_csv(
        &[("standard".to_string(), report.clone()), ("soft".to_string(), report.clone())],
        &path,
    )
    .unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(headers.len(), 18);
    assert_eq!(&headers[0], "variant");
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "standard");
    let precision: f64 = rows[0][1].parse().unwrap();
    assert_eq!(precision, report.precision);
}

#[test]
fn map_is_monotone_in_threshold_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let images: Vec<ImagePair> = (0..5)
            .map(|i| {
                let rand_obj = |rng: &mut ChaCha8Rng, score: f64| {
                    let x = rng.gen_range(0.0..60.0);
                    let y = rng.gen_range(0.0..60.0);
                    obj(
                        ["cat", "dog"][rng.gen_range(0..2)],
                        score,
                        bx(x, y, x + rng.gen_range(5.0..40.0), y + rng.gen_range(5.0..40.0)),
                    )
                };
                let gts: Vec<VocObject> =
                    (0..rng.gen_range(1..6)).map(|_| rand_obj(&mut rng, 1.0)).collect();
                let mut preds: Vec<VocObject> = Vec::new();
                for g in &gts {
                    if rng.gen_bool(0.7) {
                        let mut p = g.clone();
                        p.score = rng.gen_range(0.2..1.0);
                        p.bbox.xmax += rng.gen_range(0.0..6.0);
                        preds.push(p);
                    }
                }
                for _ in 0..rng.gen_range(0..3) {
                    let s = rng.gen_range(0.1..0.9);
                    preds.push(rand_obj(&mut rng, s));
                }
                ImagePair {
                    name: format!("im{i}.xml"),
                    preds,
                    gts,
                    width: 100,
                    height: 100,
                }
            })
            .collect();
        let report = evaluate_pairs(&images).unwrap();
        assert!(report.map5095 <= report.map50 + 1e-12);
        assert!(report.map75 <= report.map50 + 1e-12);
        let total = report.pct_small + report.pct_medium + report.pct_large;
        assert!((total - 100.0).abs() < 0.1);
        if report.precision + report.recall > 0.0 {
            let h = 2.0 * report.precision * report.recall
                / (report.precision + report.recall);
            assert!((report.f1 - h).abs() < 1e-9);
        }
    }
}
