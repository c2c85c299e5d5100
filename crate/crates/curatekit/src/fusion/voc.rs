//! PASCAL VOC XML interchange.
//!
//! Parsing accepts any well-formed annotation file; writing is hand-rolled so
//! identical input always produces byte-identical output, which lets fused
//! artifacts be checksummed.

use std::io::Write;
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::fusion::BBox;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageMeta {
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
}

/// One `<object>` element: class label, confidence, box.
#[derive(Debug, Clone, PartialEq)]
pub struct VocObject {
    pub label: String,
    /// Read from the `<confidence>` element; 1.0 when absent.
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VocAnnotation {
    pub meta: ImageMeta,
    pub objects: Vec<VocObject>,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Annotation(format!("{}: {}", path.display(), reason.into()))
}

/// Parses one VOC XML file.
pub fn parse_voc(path: &Path) -> Result<VocAnnotation> {
    let text = std::fs::read_to_string(path)?;
    let mut reader = Reader::from_str(&text);
    reader.trim_text(true);

    let mut ann = VocAnnotation::default();
    // Element path within the document, e.g. ["annotation", "object", "bndbox"].
    let mut stack: Vec<String> = Vec::new();
    let mut current: Option<(Option<String>, Option<f64>, [Option<f64>; 4])> = None;
    loop {
        match reader.read_event().map_err(|e| bad(path, e.to_string()))? {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if name == "object" && stack.last().map(String::as_str) == Some("annotation") {
                    current = Some((None, None, [None; 4]));
                }
                stack.push(name);
            }
            Event::End(_) => {
                if stack.pop().as_deref() == Some("object") {
                    let (label, score, coords) =
                        current.take().ok_or_else(|| bad(path, "unbalanced object element"))?;
                    let label = label.ok_or_else(|| bad(path, "object missing name"))?;
                    let [xmin, ymin, xmax, ymax] = coords;
                    let bbox = BBox {
                        xmin: xmin.ok_or_else(|| bad(path, "object missing xmin"))?,
                        ymin: ymin.ok_or_else(|| bad(path, "object missing ymin"))?,
                        xmax: xmax.ok_or_else(|| bad(path, "object missing xmax"))?,
                        ymax: ymax.ok_or_else(|| bad(path, "object missing ymax"))?,
                    };
                    bbox.validate().map_err(|e| bad(path, e.to_string()))?;
                    let score = score.unwrap_or(1.0);
                    if !(0.0..=1.0).contains(&score) {
                        return Err(bad(path, format!("confidence {score} outside [0, 1]")));
                    }
                    ann.objects.push(VocObject { label, score, bbox });
                }
            }
            Event::Text(t) => {
                let value = t.unescape().map_err(|e| bad(path, e.to_string()))?.into_owned();
                let path_tail: Vec<&str> =
                    stack.iter().rev().take(3).map(String::as_str).collect();
                let parse_num = |v: &str| -> Result<f64> {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| bad(path, format!("non-numeric value {v:?}")))
                };
                match (path_tail.first().copied(), path_tail.get(1).copied(), &mut current) {
                    (Some("filename"), Some("annotation"), _) => ann.meta.filename = value,
                    (Some("width"), Some("size"), _) => {
                        ann.meta.width = parse_num(&value)? as u32
                    }
                    (Some("height"), Some("size"), _) => {
                        ann.meta.height = parse_num(&value)? as u32
                    }
                    (Some("depth"), Some("size"), _) => {
                        ann.meta.depth = parse_num(&value)? as u32
                    }
                    (Some("name"), Some("object"), Some((label, _, _))) => *label = Some(value),
                    (Some("confidence"), Some("object"), Some((_, score, _))) => {
                        *score = Some(parse_num(&value)?)
                    }
                    (Some(tag @ ("xmin" | "ymin" | "xmax" | "ymax")), Some("bndbox"), Some((_, _, c))) => {
                        let slot = match tag {
                            "xmin" => 0,
                            "ymin" => 1,
                            "xmax" => 2,
                            _ => 3,
                        };
                        c[slot] = Some(parse_num(&value)?);
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(bad(path, "unbalanced XML"));
    }
    Ok(ann)
}

/// Formats a coordinate without trailing noise: integers print bare, other
/// values use the shortest round-trippable f64 form.
fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes a VOC XML file; byte-stable for identical input.
pub fn write_voc(ann: &VocAnnotation, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "<annotation>").unwrap();
    writeln!(out, "  <filename>{}</filename>", escape(&ann.meta.filename)).unwrap();
    writeln!(out, "  <size>").unwrap();
    writeln!(out, "    <width>{}</width>", ann.meta.width).unwrap();
    writeln!(out, "    <height>{}</height>", ann.meta.height).unwrap();
    writeln!(out, "    <depth>{}</depth>", ann.meta.depth).unwrap();
    writeln!(out, "  </size>").unwrap();
    for obj in &ann.objects {
        writeln!(out, "  <object>").unwrap();
        writeln!(out, "    <name>{}</name>", escape(&obj.label)).unwrap();
        writeln!(out, "    <confidence>{}</confidence>", obj.score).unwrap();
        writeln!(out, "    <bndbox>").unwrap();
        writeln!(out, "      <xmin>{}</xmin>", fmt_num(obj.bbox.xmin)).unwrap();
        writeln!(out, "      <ymin>{}</ymin>", fmt_num(obj.bbox.ymin)).unwrap();
        writeln!(out, "      <xmax>{}</xmax>", fmt_num(obj.bbox.xmax)).unwrap();
        writeln!(out, "      <ymax>{}</ymax>", fmt_num(obj.bbox.ymax)).unwrap();
        writeln!(out, "    </bndbox>").unwrap();
        writeln!(out, "  </object>").unwrap();
    }
    writeln!(out, "</annotation>").unwrap();
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VocAnnotation {
        VocAnnotation {
            meta: ImageMeta { filename: "img1.jpg".into(), width: 640, height: 480, depth: 3 },
            objects: vec![
                VocObject {
                    label: "cat".into(),
                    score: 0.75,
                    bbox: BBox { xmin: 10.0, ymin: 20.0, xmax: 110.5, ymax: 220.0 },
                },
                VocObject {
                    label: "dog".into(),
                    score: 1.0,
                    bbox: BBox { xmin: 0.0, ymin: 0.0, xmax: 50.0, ymax: 60.0 },
                },
            ],
        }
    }

    #[test]
    fn round_trip_preserves_objects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.xml");
        let ann = sample();
        write_voc(&ann, &path).unwrap();
        assert_eq!(parse_voc(&path).unwrap(), ann);
    }

    #[test]
    fn writer_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.xml");
        let b = dir.path().join("b.xml");
        write_voc(&sample(), &a).unwrap();
        write_voc(&sample(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn empty_annotation_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.xml");
        let ann = VocAnnotation {
            meta: ImageMeta { filename: "none.jpg".into(), width: 10, height: 10, depth: 3 },
            objects: vec![],
        };
        write_voc(&ann, &path).unwrap();
        assert_eq!(parse_voc(&path).unwrap(), ann);
    }

    #[test]
    fn missing_confidence_defaults_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xml");
        std::fs::write(
            &path,
            "<annotation><filename>x.jpg</filename>\
             <size><width>100</width><height>100</height><depth>3</depth></size>\
             <object><name>cat</name>\
             <bndbox><xmin>1</xmin><ymin>2</ymin><xmax>3</xmax><ymax>4</ymax></bndbox>\
             </object></annotation>",
        )
        .unwrap();
        let ann = parse_voc(&path).unwrap();
        assert_eq!(ann.objects.len(), 1);
        assert_eq!(ann.objects[0].score, 1.0);
    }

    #[test]
    fn inverted_box_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xml");
        std::fs::write(
            &path,
            "<annotation><object><name>cat</name>\
             <bndbox><xmin>10</xmin><ymin>2</ymin><xmax>3</xmax><ymax>4</ymax></bndbox>\
             </object></annotation>",
        )
        .unwrap();
        assert!(parse_voc(&path).is_err());
    }

    #[test]
    fn malformed_xml_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xml");
        std::fs::write(&path, "<annotation><object>").unwrap();
        assert!(parse_voc(&path).is_err());
    }
}
