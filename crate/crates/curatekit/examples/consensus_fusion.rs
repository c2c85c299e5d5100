//! Clusters overlapping proposals from three detector models, fuses each
//! cluster into one consensus box, and compares Standard vs Soft NMS output.

use curatekit::fusion::{apply_nms, build_clusters, BBox, NmsConfig, NmsVariant, Proposal};

fn bx(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> BBox {
    BBox { xmin, ymin, xmax, ymax }
}

fn main() -> curatekit::Result<()> {
    // Three models report the same cat with jittered boxes; one model also
    // hallucinates a dog.
    let proposals = vec![
        Proposal { bbox: bx(10.0, 10.0, 50.0, 50.0), label: "cat".into(), score: 0.9, model_id: "detic".into() },
        Proposal { bbox: bx(12.0, 11.0, 52.0, 49.0), label: "cat".into(), score: 0.8, model_id: "gdino".into() },
        Proposal { bbox: bx(9.0, 12.0, 49.0, 51.0), label: "cat".into(), score: 0.7, model_id: "owlvit".into() },
        Proposal { bbox: bx(60.0, 60.0, 90.0, 95.0), label: "dog".into(), score: 0.6, model_id: "gdino".into() },
        // A second, partially overlapping cat seen by one model only.
        Proposal { bbox: bx(30.0, 30.0, 70.0, 70.0), label: "cat".into(), score: 0.5, model_id: "detic".into() },
    ];
    let config = NmsConfig {
        ensemble: vec!["detic".into(), "gdino".into(), "owlvit".into()],
        ..NmsConfig::default()
    };

    let clusters = build_clusters(&proposals, &config)?;
    for c in &clusters {
        println!(
            "{}: {} supporter(s), consensus {:.2}, fused box ({:.1},{:.1})-({:.1},{:.1})",
            c.label,
            c.members.len(),
            c.consensus_score,
            c.fused_box.xmin,
            c.fused_box.ymin,
            c.fused_box.xmax,
            c.fused_box.ymax,
        );
    }

    for variant in [NmsVariant::Standard, NmsVariant::Soft] {
        let out = apply_nms(&clusters, &NmsConfig { variant, ..config.clone() })?;
        let summary: Vec<String> =
            out.iter().map(|d| format!("{} {:.3}", d.label, d.score)).collect();
        println!("{variant}: {} detection(s) [{}]", out.len(), summary.join(", "));
    }
    Ok(())
}
