//! Scores a small in-memory prediction set against ground truth and prints
//! the aggregate report columns.

use curatekit::eval::{evaluate_pairs, ImagePair};
use curatekit::fusion::{BBox, VocObject};

fn obj(label: &str, score: f64, xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> VocObject {
    VocObject { label: label.into(), score, bbox: BBox { xmin, ymin, xmax, ymax } }
}

fn main() -> curatekit::Result<()> {
    let images = vec![
        ImagePair {
            name: "scene_a".into(),
            preds: vec![
                obj("cat", 0.9, 10.0, 10.0, 50.0, 50.0),  // good match
                obj("cat", 0.6, 200.0, 200.0, 240.0, 240.0), // false positive
            ],
            gts: vec![
                obj("cat", 1.0, 12.0, 11.0, 52.0, 49.0),
                obj("dog", 1.0, 100.0, 100.0, 160.0, 160.0), // missed entirely
            ],
            width: 300,
            height: 300,
        },
        ImagePair {
            name: "scene_b".into(),
            preds: vec![obj("dog", 0.8, 20.0, 30.0, 80.0, 90.0)],
            gts: vec![obj("dog", 1.0, 22.0, 31.0, 82.0, 88.0)],
            width: 300,
            height: 300,
        },
    ];
    let report = evaluate_pairs(&images)?;
    println!("precision      {:.3}", report.precision);
    println!("recall         {:.3}", report.recall);
    println!("f1             {:.3}", report.f1);
    println!("mAP@0.5        {:.3}", report.map50);
    println!("mAP@0.75       {:.3}", report.map75);
    println!("mAP@0.5:0.95   {:.3}", report.map5095);
    println!("avg IoU        {:.3}", report.avg_iou);
    println!("overlap ratio  {:.3}", report.overlap_ratio);
    Ok(())
}
