//! File formats: detection JSONL streams and the binary FSTK feature
//! stack container.
//!
//! FSTK layout: magic `FSTK`, three u32 LE (n, t, c), n·t little-endian
//! f32 center pairs (x, y; frame-major), then n·t·c little-endian f32
//! feature values.

use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::FeatureStack;
use crate::geometry::{BBox, Point2};
use crate::refiner::Detection;

const FSTK_MAGIC: &[u8; 4] = b"FSTK";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("bad FSTK magic")]
    BadMagic,
    #[error("invalid feature stack: {0}")]
    BadStack(String),
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

/// One JSONL detection line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame: usize,
    pub bbox: [f64; 4],
    pub class_id: u32,
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_detection(video_id: &str, d: &Detection) -> Self {
        DetectionRecord {
            video_id: video_id.to_string(),
            frame: d.frame,
            bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
            class_id: d.class_id,
            score: d.score,
        }
    }

    pub fn to_detection(&self) -> Detection {
        Detection {
            frame: self.frame,
            bbox: BBox::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3]),
            class_id: self.class_id,
            score: self.score,
        }
    }
}

pub fn read_detections<R: BufRead>(reader: R) -> Result<Vec<DetectionRecord>, IoError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|source| IoError::Json {
            line: idx + 1,
            source,
        })?;
        if !(0.0..=1.0).contains(&rec.score) {
            return Err(IoError::BadRecord {
                line: idx + 1,
                reason: format!("score {} outside [0, 1]", rec.score),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_detections<W: Write>(
    mut writer: W,
    records: &[DetectionRecord],
) -> Result<(), IoError> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec).map_err(|source| IoError::Json {
            line: 0,
            source,
        })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_feature_stack<W: Write>(
    mut writer: W,
    stack: &FeatureStack<f64>,
) -> Result<(), IoError> {
    writer.write_all(FSTK_MAGIC)?;
    writer.write_u32::<LittleEndian>(stack.n as u32)?;
    writer.write_u32::<LittleEndian>(stack.t as u32)?;
    writer.write_u32::<LittleEndian>(stack.c as u32)?;
    for p in &stack.centers {
        writer.write_f32::<LittleEndian>(p.x as f32)?;
        writer.write_f32::<LittleEndian>(p.y as f32)?;
    }
    for &v in &stack.values {
        writer.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

pub fn read_feature_stack<R: Read>(mut reader: R) -> Result<FeatureStack<f64>, IoError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != FSTK_MAGIC {
        return Err(IoError::BadMagic);
    }
    let n = reader.read_u32::<LittleEndian>()? as usize;
    let t = reader.read_u32::<LittleEndian>()? as usize;
    let c = reader.read_u32::<LittleEndian>()? as usize;
    let mut centers = Vec::with_capacity(n * t);
    for _ in 0..n * t {
        let x = reader.read_f32::<LittleEndian>()? as f64;
        let y = reader.read_f32::<LittleEndian>()? as f64;
        centers.push(Point2::new(x, y));
    }
    let mut values = Vec::with_capacity(n * t * c);
    for _ in 0..n * t * c {
        values.push(reader.read_f32::<LittleEndian>()? as f64);
    }
    FeatureStack::new(n, t, c, values, centers).map_err(|e| IoError::BadStack(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jsonl_round_trip() {
        let recs = vec![
            DetectionRecord {
                video_id: "v1".into(),
                frame: 0,
                bbox: [1.0, 2.0, 3.0, 4.0],
                class_id: 2,
                score: 0.95,
            },
            DetectionRecord {
                video_id: "v2".into(),
                frame: 7,
                bbox: [0.5, 0.5, 10.0, 10.0],
                class_id: 9,
                score: 0.5,
            },
        ];
        let mut buf = Vec::new();
        write_detections(&mut buf, &recs).unwrap();
        let back = read_detections(buf.as_slice()).unwrap();
        assert_eq!(recs, back);
    }

    #[test]
    fn jsonl_rejects_unknown_keys() {
        let line = br#"{"video_id":"v","frame":0,"bbox":[0,0,1,1],"class_id":1,"score":0.5,"extra":1}"#;
        assert!(read_detections(&line[..]).is_err());
    }

    #[test]
    fn jsonl_rejects_bad_score() {
        let line = br#"{"video_id":"v","frame":0,"bbox":[0,0,1,1],"class_id":1,"score":1.5}"#;
        assert!(read_detections(&line[..]).is_err());
    }

    #[test]
    fn fstk_header_layout() {
        let stack = FeatureStack::new(
            1,
            2,
            1,
            vec![1.0, 2.0],
            vec![Point2::new(3.0, 4.0), Point2::new(5.0, 6.0)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_feature_stack(&mut buf, &stack).unwrap();
        assert_eq!(&buf[0..4], b"FSTK");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &3.0f32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 2 * 8 + 2 * 4);
    }

    #[test]
    fn fstk_rejects_bad_magic() {
        let buf = b"NOPE\x01\x00\x00\x00";
        assert!(matches!(
            read_feature_stack(&buf[..]),
            Err(IoError::BadMagic)
        ));
    }

    proptest! {
        #[test]
        fn fstk_round_trip(
            n in 1usize..5,
            t in 2usize..6,
            c in 1usize..8,
            seed in 0u64..1000,
        ) {
            use rand::rngs::StdRng;
            use rand::{Rng, SeedableRng};
            let mut rng = StdRng::seed_from_u64(seed);
            // f32-representable values survive the round trip exactly
            let values: Vec<f64> = (0..n * t * c)
                .map(|_| rng.gen_range(-100i32..100) as f64 * 0.5)
                .collect();
            let centers: Vec<Point2<f64>> = (0..n * t)
                .map(|_| Point2::new(rng.gen_range(0i32..1920) as f64, rng.gen_range(0i32..1080) as f64))
                .collect();
            let stack = FeatureStack::new(n, t, c, values, centers).unwrap();
            let mut buf = Vec::new();
            write_feature_stack(&mut buf, &stack).unwrap();
            let back = read_feature_stack(buf.as_slice()).unwrap();
            prop_assert_eq!(stack, back);
        }
    }
}
