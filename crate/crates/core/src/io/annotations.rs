//! Ground-truth and prediction box files.
//!
//! Two CSV layouts are accepted for ground truth:
//!
//! * corner pairs: `case_id,min_x,min_y,min_z,max_x,max_y,max_z,class_id,confidence`
//! * centre + diameter: `case_id,coord_x,coord_y,coord_z,diameter_mm,class_id`
//!   (LUNA-style `seriesuid,coordX,coordY,coordZ,diameter_mm` is also read,
//!   with class 1), converted to a cube of edge `diameter_mm`.
//!
//! Model outputs use the corner layout without `case_id`, or a JSON array of
//! objects with the same keys.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{AnnotationKind, AnnotationSet, Box3, CtVolume};

use super::load_labels;

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| Error::Annotation(format!("line {line}: malformed value {raw:?}")))
}

/// Parses a ground-truth detection CSV into `(case_id, box)` rows.
pub fn parse_detection_csv<R: Read>(reader: R) -> Result<Vec<(String, Box3)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let case = column(&headers, &["case_id", "seriesuid"]);
    let corner: Option<Vec<usize>> = ["min_x", "min_y", "min_z", "max_x", "max_y", "max_z"]
        .iter()
        .map(|n| column(&headers, &[n]))
        .collect();
    let center: Option<Vec<usize>> = [["coord_x", "coordx"], ["coord_y", "coordy"], ["coord_z", "coordz"], ["diameter_mm", "diameter"]]
        .iter()
        .map(|n| column(&headers, n))
        .collect();
    let class = column(&headers, &["class_id"]);
    let conf = column(&headers, &["confidence"]);
    if corner.is_none() && center.is_none() {
        return Err(Error::Annotation(format!("unrecognised box CSV header {:?}", headers)));
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let case_id = match case {
            Some(c) => rec.get(c).unwrap_or("").to_string(),
            None => String::new(),
        };
        let class_id = match class {
            Some(c) => field::<u32>(&rec, c, line)?,
            None => 1,
        };
        let b = if let Some(cols) = &corner {
            let v: Vec<f64> = cols.iter().map(|&c| field(&rec, c, line)).collect::<Result<_>>()?;
            let confidence = match conf {
                Some(c) => field::<f64>(&rec, c, line)?,
                None => 1.0,
            };
            Box3::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], class_id, confidence)
        } else {
            let cols = center.as_ref().unwrap();
            let v: Vec<f64> = cols.iter().map(|&c| field(&rec, c, line)).collect::<Result<_>>()?;
            Box3::from_center([v[0], v[1], v[2]], v[3], class_id)
        }
        .map_err(|e| Error::Annotation(format!("line {line}: {e}")))?;
        out.push((case_id, b));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Loads all annotations in `path`. Segmentation label maps are checked for
/// congruence with `grid` when one is supplied.
pub fn load_annotations(path: impl AsRef<Path>, kind: AnnotationKind, grid: Option<&CtVolume>) -> Result<AnnotationSet> {
    load_filtered(path.as_ref(), kind, grid, None)
}

/// Like [`load_annotations`], keeping only rows for `case_id` when the
/// detection file carries a case column.
pub fn load_case_annotations(
    path: impl AsRef<Path>,
    kind: AnnotationKind,
    grid: Option<&CtVolume>,
    case_id: &str,
) -> Result<AnnotationSet> {
    load_filtered(path.as_ref(), kind, grid, Some(case_id))
}

fn load_filtered(path: &Path, kind: AnnotationKind, grid: Option<&CtVolume>, case_id: Option<&str>) -> Result<AnnotationSet> {
    match kind {
        AnnotationKind::Segmentation => {
            let labels = load_labels(path)?;
            if let Some(g) = grid {
                if !labels.congruent_with(g) {
                    return Err(Error::Annotation(format!(
                        "label map grid {:?} does not match volume grid {:?}",
                        labels.dims(),
                        g.dims()
                    )));
                }
            }
            Ok(AnnotationSet::Segmentation(labels))
        }
        AnnotationKind::Detection => {
            let rows = parse_detection_csv(open(path)?)?;
            let boxes = rows
                .into_iter()
                .filter(|(c, _)| case_id.is_none_or(|id| c.is_empty() || c == id))
                .map(|(_, b)| b)
                .collect();
            Ok(AnnotationSet::Detection(boxes))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxRecord {
    min_x: f64,
    min_y: f64,
    min_z: f64,
    max_x: f64,
    max_y: f64,
    max_z: f64,
    class_id: u32,
    confidence: f64,
}

impl From<&Box3> for BoxRecord {
    fn from(b: &Box3) -> Self {
        BoxRecord {
            min_x: b.min[0],
            min_y: b.min[1],
            min_z: b.min[2],
            max_x: b.max[0],
            max_y: b.max[1],
            max_z: b.max[2],
            class_id: b.class_id,
            confidence: b.confidence,
        }
    }
}

impl BoxRecord {
    fn to_box(&self) -> Result<Box3> {
        Box3::new(
            [self.min_x, self.min_y, self.min_z],
            [self.max_x, self.max_y, self.max_z],
            self.class_id,
            self.confidence,
        )
    }
}

/// Reads a model's box output: CSV with a corner header, or a JSON array.
pub fn read_box_csv(path: impl AsRef<Path>) -> Result<Vec<Box3>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('[') {
        let recs: Vec<BoxRecord> = serde_json::from_str(&text)?;
        return recs.iter().map(BoxRecord::to_box).collect();
    }
    Ok(parse_detection_csv(text.as_bytes())?.into_iter().map(|(_, b)| b).collect())
}

/// Writes boxes in the model-output CSV layout.
pub fn write_box_csv(path: impl AsRef<Path>, boxes: &[Box3]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for b in boxes {
        w.serialize(BoxRecord::from(b))?;
    }
    if boxes.is_empty() {
        w.write_record(["min_x", "min_y", "min_z", "max_x", "max_y", "max_z", "class_id", "confidence"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes ground-truth rows in the corner layout with a `case_id` column.
pub fn write_detection_csv(path: impl AsRef<Path>, rows: &[(String, Box3)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "min_x", "min_y", "min_z", "max_x", "max_y", "max_z", "class_id", "confidence"])?;
    for (case, b) in rows {
        let mut rec = vec![case.clone()];
        rec.extend(b.min.iter().chain(b.max.iter()).map(|v| v.to_string()));
        rec.push(b.class_id.to_string());
        rec.push(b.confidence.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Groups parsed rows by case.
pub fn group_by_case(rows: Vec<(String, Box3)>) -> HashMap<String, Vec<Box3>> {
    let mut m: HashMap<String, Vec<Box3>> = HashMap::new();
    for (c, b) in rows {
        m.entry(c).or_default().push(b);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_record() {
        let csv = "case_id,min_x,min_y,min_z,max_x,max_y,max_z,class_id,confidence\nc1,0,0,0,10,10,10,1,1\n";
        let rows = parse_detection_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, "c1");
        assert_eq!(rows[0].1.max, [10.0; 3]);
        assert_eq!(rows[0].1.class_id, 1);
    }

    #[test]
    fn centre_diameter_record_becomes_corners() {
        let csv = "case_id,coord_x,coord_y,coord_z,diameter_mm,class_id\nc1,-50.5,20.25,-100,8.5,2\n";
        let (_, b) = parse_detection_csv(csv.as_bytes()).unwrap().remove(0);
        assert_eq!(b.min, [-50.5 - 4.25, 20.25 - 4.25, -100.0 - 4.25]);
        assert_eq!(b.max, [-50.5 + 4.25, 20.25 + 4.25, -100.0 + 4.25]);
        assert_eq!(b.class_id, 2);
        assert_eq!(b.confidence, 1.0);

        let luna = "seriesuid,coordX,coordY,coordZ,diameter_mm\n1.3.6,10,20,30,4\n";
        let (case, b) = parse_detection_csv(luna.as_bytes()).unwrap().remove(0);
        assert_eq!(case, "1.3.6");
        assert_eq!(b.min, [8.0, 18.0, 28.0]);
    }

    #[test]
    fn malformed_and_negative_records_fail() {
        let bad = "case_id,min_x,min_y,min_z,max_x,max_y,max_z,class_id,confidence\nc,0,0,x,1,1,1,1,1\n";
        assert!(parse_detection_csv(bad.as_bytes()).is_err());
        let neg = "case_id,min_x,min_y,min_z,max_x,max_y,max_z,class_id,confidence\nc,0,0,5,1,1,1,1,1\n";
        assert!(parse_detection_csv(neg.as_bytes()).unwrap_err().to_string().contains("not positive"));
    }

    #[test]
    fn case_filter_and_box_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.csv");
        let rows = vec![
            ("a".to_string(), Box3::new([0.0; 3], [1.0; 3], 1, 1.0).unwrap()),
            ("b".to_string(), Box3::new([0.0; 3], [2.0; 3], 1, 1.0).unwrap()),
        ];
        write_detection_csv(&p, &rows).unwrap();
        let a = load_case_annotations(&p, AnnotationKind::Detection, None, "b").unwrap();
        assert_eq!(a, AnnotationSet::Detection(vec![rows[1].1]));
        assert_eq!(load_annotations(&p, AnnotationKind::Detection, None).unwrap().kind(), AnnotationKind::Detection);

        let q = dir.path().join("pred.csv");
        let boxes = vec![Box3::new([0.5, 1.0, 2.0], [3.0, 4.0, 5.5], 3, 0.25).unwrap()];
        write_box_csv(&q, &boxes).unwrap();
        assert_eq!(read_box_csv(&q).unwrap(), boxes);
        write_box_csv(&q, &[]).unwrap();
        assert!(read_box_csv(&q).unwrap().is_empty());

        let j = dir.path().join("pred.json");
        std::fs::write(&j, r#"[{"min_x":0,"min_y":0,"min_z":0,"max_x":1,"max_y":2,"max_z":3,"class_id":1,"confidence":0.5}]"#).unwrap();
        assert_eq!(read_box_csv(&j).unwrap()[0].max, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn mismatched_label_grid_is_rejected() {
        use crate::volume::LabelVolume;
        use ndarray::Array3;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.nii");
        let lv = LabelVolume::new(Array3::zeros((2, 8, 8)), [1.0; 3], [0.0; 3]).unwrap();
        crate::io::save_labels(&lv, &p).unwrap();
        let vol = CtVolume::new(Array3::zeros((3, 8, 8)), [1.0; 3], [0.0; 3]).unwrap();
        assert!(load_annotations(&p, AnnotationKind::Segmentation, Some(&vol)).is_err());
        let vol = CtVolume::new(Array3::zeros((2, 8, 8)), [1.0; 3], [0.0; 3]).unwrap();
        assert!(load_annotations(&p, AnnotationKind::Segmentation, Some(&vol)).is_ok());
    }
}
