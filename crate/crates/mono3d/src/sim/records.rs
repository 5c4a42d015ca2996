//! Line-oriented JSON record files.
//!
//! The first line is a header identifying the payload kind and the
//! generation parameters; every following line holds one record tagged
//! with its image index:
//!
//! ```text
//! {"kind":"detections","seed":7,"n_parts":36,"n_models":4}
//! {"image":0,"data":{...}}
//! {"image":0,"data":{...}}
//! {"image":1,"data":{...}}
//! ```
//!
//! The schema is strict: unknown fields anywhere are a parse error, so a
//! file written by a newer incompatible revision fails loudly instead of
//! being silently misread. Values survive a write/read cycle bitwise
//! (shortest-round-trip float formatting).

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Payload type of a record file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// Per-image detection records (2D stages output).
    Detections,
    /// Per-image ground-truth vehicles.
    GroundTruth,
    /// Per-image recovered 3D results.
    Results,
    /// Per-image weak 3D box annotations (annotator input).
    WeakBoxes,
}

impl std::fmt::Display for RecordKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RecordKind::Detections => "detections",
            RecordKind::GroundTruth => "ground_truth",
            RecordKind::Results => "results",
            RecordKind::WeakBoxes => "weak_boxes",
        };
        f.write_str(s)
    }
}

/// First line of every record file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordsHeader {
    pub kind: RecordKind,
    /// Seed the content was generated from (0 when not applicable).
    pub seed: u64,
    pub n_parts: usize,
    pub n_models: usize,
}

/// One data line: the record plus the image it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line<T> {
    image: usize,
    data: T,
}

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("record file I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("record file line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("record file is empty (missing header line)")]
    Empty,
    #[error("record file holds {found} records, expected {expected}")]
    WrongKind { expected: RecordKind, found: RecordKind },
}

/// A parsed record file: header plus `(image, record)` pairs in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordsFile<T> {
    pub header: RecordsHeader,
    pub items: Vec<(usize, T)>,
}

impl<T> RecordsFile<T> {
    /// Buckets records by image index into a dense per-image list of
    /// length `max(image) + 1` (or empty). Images without records come
    /// back as empty vectors, preserving alignment with other files.
    pub fn group_by_image(self) -> Vec<Vec<T>> {
        let n = self.items.iter().map(|(i, _)| i + 1).max().unwrap_or(0);
        let mut out: Vec<Vec<T>> = (0..n).map(|_| Vec::new()).collect();
        for (image, item) in self.items {
            out[image].push(item);
        }
        out
    }
}

/// Serializes a header and records to the line-oriented format.
pub fn records_to_string<T: Serialize>(header: &RecordsHeader, items: &[(usize, T)]) -> String {
    let mut out = serde_json::to_string(header).expect("header serialization cannot fail");
    out.push('\n');
    for (image, data) in items {
        let line = Line { image: *image, data };
        out.push_str(&serde_json::to_string(&line).expect("record serialization cannot fail"));
        out.push('\n');
    }
    out
}

/// Parses the line-oriented format. `expected` guards against feeding,
/// say, a ground-truth file to the inference step.
pub fn records_from_str<T: DeserializeOwned>(
    text: &str,
    expected: RecordKind,
) -> Result<RecordsFile<T>, RecordsError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or(RecordsError::Empty)?;
    let header: RecordsHeader = serde_json::from_str(header_line)
        .map_err(|source| RecordsError::Parse { line: 1, source })?;
    if header.kind != expected {
        return Err(RecordsError::WrongKind { expected, found: header.kind });
    }
    let mut items = Vec::new();
    for (idx, line) in lines {
        let parsed: Line<T> = serde_json::from_str(line)
            .map_err(|source| RecordsError::Parse { line: idx + 1, source })?;
        items.push((parsed.image, parsed.data));
    }
    Ok(RecordsFile { header, items })
}

/// Writes records to a file (trailing newline included).
pub fn write_records<T: Serialize, P: AsRef<Path>>(
    path: P,
    header: &RecordsHeader,
    items: &[(usize, T)],
) -> Result<(), RecordsError> {
    Ok(fs::write(path, records_to_string(header, items))?)
}

/// Reads a record file, checking the header kind.
pub fn read_records<T: DeserializeOwned, P: AsRef<Path>>(
    path: P,
    expected: RecordKind,
) -> Result<RecordsFile<T>, RecordsError> {
    records_from_str(&fs::read_to_string(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::TemplateSimilarity;
    use crate::geom::Box2D;
    use crate::infer::DetectionRecord;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn header(kind: RecordKind) -> RecordsHeader {
        RecordsHeader { kind, seed: 7, n_parts: 3, n_models: 2 }
    }

    fn random_record(rng: &mut ChaCha8Rng) -> DetectionRecord {
        DetectionRecord {
            box2d: Box2D::new(
                rng.gen_range(-500.0..500.0),
                rng.gen_range(-200.0..200.0),
                rng.gen_range(1.0..300.0),
                rng.gen_range(1.0..150.0),
            ),
            score: rng.gen_range(0.0..1.0),
            parts2d: (0..3).map(|_| [rng.gen_range(-1e3..1e3), rng.gen::<f64>()]).collect(),
            vis_scores: (0..3)
                .map(|_| [rng.gen::<f64>(), rng.gen(), rng.gen(), rng.gen()])
                .collect(),
            template_sim: TemplateSimilarity {
                log_ratios: (0..2)
                    .map(|_| [rng.gen_range(-1.0..1.0), rng.gen(), rng.gen()])
                    .collect(),
            },
        }
    }

    #[test]
    fn empty_file_round_trips() {
        let h = header(RecordKind::Detections);
        let s = records_to_string::<DetectionRecord>(&h, &[]);
        let parsed: RecordsFile<DetectionRecord> =
            records_from_str(&s, RecordKind::Detections).unwrap();
        assert_eq!(parsed.header, h);
        assert!(parsed.items.is_empty());
    }

    #[test]
    fn hundred_random_records_round_trip_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let items: Vec<(usize, DetectionRecord)> =
            (0..100).map(|i| (i % 7, random_record(&mut rng))).collect();
        let h = header(RecordKind::Detections);
        let text = records_to_string(&h, &items);
        let parsed: RecordsFile<DetectionRecord> =
            records_from_str(&text, RecordKind::Detections).unwrap();
        assert_eq!(parsed.items, items);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let h = header(RecordKind::Detections);
        let mut text = records_to_string::<DetectionRecord>(&h, &[]);
        text.push_str("{\"image\":0,\"data\":{\"nope\":1}}\n");
        let err = records_from_str::<DetectionRecord>(&text, RecordKind::Detections).unwrap_err();
        match err {
            RecordsError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_in_data_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items = vec![(0usize, random_record(&mut rng))];
        let text = records_to_string(&header(RecordKind::Detections), &items);
        let spiked = text.replacen("\"score\"", "\"extra\":0,\"score\"", 1);
        assert!(matches!(
            records_from_str::<DetectionRecord>(&spiked, RecordKind::Detections),
            Err(RecordsError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn kind_mismatch_is_detected() {
        let text = records_to_string::<DetectionRecord>(&header(RecordKind::GroundTruth), &[]);
        let err = records_from_str::<DetectionRecord>(&text, RecordKind::Detections).unwrap_err();
        assert!(matches!(
            err,
            RecordsError::WrongKind { expected: RecordKind::Detections, found: RecordKind::GroundTruth }
        ));
    }

    #[test]
    fn empty_text_is_a_dedicated_error() {
        assert!(matches!(
            records_from_str::<DetectionRecord>("", RecordKind::Detections),
            Err(RecordsError::Empty)
        ));
        assert!(matches!(
            records_from_str::<DetectionRecord>("\n  \n", RecordKind::Detections),
            Err(RecordsError::Empty)
        ));
    }

    #[test]
    fn grouping_fills_image_gaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let items =
            vec![(2usize, random_record(&mut rng)), (0, random_record(&mut rng)), (2, random_record(&mut rng))];
        let file = RecordsFile { header: header(RecordKind::Detections), items: items.clone() };
        let grouped = file.group_by_image();
        assert_eq!(grouped.len(), 3);
        assert_eq!(grouped[0].len(), 1);
        assert_eq!(grouped[1].len(), 0);
        assert_eq!(grouped[2].len(), 2);
        assert_eq!(grouped[2][0], items[0].1);
    }

    #[test]
    fn file_round_trip_via_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let items: Vec<(usize, DetectionRecord)> =
            (0..5).map(|i| (i, random_record(&mut rng))).collect();
        let h = header(RecordKind::Detections);
        write_records(&path, &h, &items).unwrap();
        let back: RecordsFile<DetectionRecord> =
            read_records(&path, RecordKind::Detections).unwrap();
        assert_eq!(back.header, h);
        assert_eq!(back.items, items);
    }
}
