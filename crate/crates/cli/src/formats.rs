//! Text formats: bounding-box tables, landmark tables and manifests.
//!
//! * Boxes: CSV with header `cx,cy,w,h,theta_deg`, one row per image.
//! * Landmarks: a first line `# M=<m> keys=<k0>;<k1>;<k2>;<k3>` followed by
//!   one CSV row of `2M` numbers `x1,y1,...,xM,yM` per shape.
//! * Manifest: CSV with header `image,boxes,box_row,landmarks,landmark_row`
//!   tying an image to a row of a box file and, optionally, a row of a
//!   landmark file. Paths are relative to the manifest.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use myoseg_core::{BoundingBox, LandmarkSet, Point};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BoxRow {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta_deg: f64,
}

const BOX_HEADER: [&str; 5] = ["cx", "cy", "w", "h", "theta_deg"];

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn parse_boxes(text: &str, path: &Path) -> Result<Vec<BoundingBox>, CliError> {
    let bad = |d: String| CliError::format("box file", path, d);
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(BOX_HEADER) {
        return Err(bad(format!("header must be {}", BOX_HEADER.join(","))));
    }
    rdr.deserialize::<BoxRow>()
        .enumerate()
        .map(|(i, row)| {
            let r = row.map_err(|e| bad(e.to_string()))?;
            BoundingBox::new(r.cx, r.cy, r.w, r.h, r.theta_deg).map_err(|e| bad(format!("row {i}: {e}")))
        })
        .collect()
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>, CliError> {
    parse_boxes(&read_text(path)?, path)
}

pub fn format_boxes(boxes: &[BoundingBox]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for b in boxes {
        w.serialize(BoxRow {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            theta_deg: b.theta,
        })
        .expect("in-memory CSV");
    }
    let mut text = String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV");
    if boxes.is_empty() {
        text = format!("{}\n", BOX_HEADER.join(","));
    }
    text
}

pub fn write_boxes(path: &Path, boxes: &[BoundingBox]) -> Result<(), CliError> {
    write_text(path, &format_boxes(boxes))
}

/// Landmark count and key-landmark indices of a landmark file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LandmarkHeader {
    pub m: usize,
    pub keys: [usize; 4],
}

impl LandmarkHeader {
    fn parse(line: &str) -> Option<Self> {
        let rest = line.trim().strip_prefix('#')?;
        let (mut m, mut keys): (Option<usize>, Option<[usize; 4]>) = (None, None);
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("M=") {
                m = v.parse().ok();
            } else if let Some(v) = field.strip_prefix("keys=") {
                let k: Vec<usize> = v.split(';').map(|s| s.parse().ok()).collect::<Option<_>>()?;
                keys = k.try_into().ok();
            }
        }
        let (m, keys) = (m?, keys?);
        keys.iter().all(|&k| k < m).then_some(Self { m, keys })
    }

    fn line(&self) -> String {
        let k = self.keys.map(|k| k.to_string()).join(";");
        format!("# M={} keys={k}", self.m)
    }
}

pub fn parse_landmarks(text: &str, path: &Path) -> Result<(LandmarkHeader, Vec<LandmarkSet>), CliError> {
    let bad = |d: String| CliError::format("landmark file", path, d);
    let first = text.lines().next().unwrap_or("");
    let header =
        LandmarkHeader::parse(first).ok_or_else(|| bad("first line must be `# M=<m> keys=<a>;<b>;<c>;<d>`".into()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut shapes = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 2 * header.m {
            return Err(bad(format!(
                "row {i} has {} values, expected {}",
                rec.len(),
                2 * header.m
            )));
        }
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("row {i}: {e}")))?;
        let pts = v.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        shapes.push(LandmarkSet::new(pts).map_err(|e| bad(format!("row {i}: {e}")))?);
    }
    Ok((header, shapes))
}

pub fn read_landmarks(path: &Path) -> Result<(LandmarkHeader, Vec<LandmarkSet>), CliError> {
    parse_landmarks(&read_text(path)?, path)
}

pub fn format_landmarks(keys: [usize; 4], shapes: &[LandmarkSet]) -> String {
    let m = shapes.first().map_or(0, |s| s.len());
    let mut out = LandmarkHeader { m, keys }.line();
    out.push('\n');
    for s in shapes {
        let row: Vec<String> = s
            .points()
            .iter()
            .flat_map(|p| [p.x.to_string(), p.y.to_string()])
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_landmarks(path: &Path, keys: [usize; 4], shapes: &[LandmarkSet]) -> Result<(), CliError> {
    write_text(path, &format_landmarks(keys, shapes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub boxes: String,
    pub box_row: usize,
    #[serde(default)]
    pub landmarks: Option<String>,
    #[serde(default)]
    pub landmark_row: Option<usize>,
}

/// One resolved manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub image: PathBuf,
    pub bbox: BoundingBox,
    pub landmarks: Option<LandmarkSet>,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV");
    }
    let text = String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV");
    write_text(path, &text)
}

pub fn read_manifest_rows(path: &Path) -> Result<Vec<ManifestRow>, CliError> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    rdr.deserialize()
        .collect::<Result<Vec<ManifestRow>, _>>()
        .map_err(|e| CliError::format("manifest", path, e.to_string()))
}

/// Reads a manifest and resolves its box and landmark rows. Returns the
/// entries and the key indices of the landmark file, if any.
pub fn read_manifest(path: &Path) -> Result<(Vec<Entry>, Option<[usize; 4]>), CliError> {
    let rows = read_manifest_rows(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut boxes: HashMap<PathBuf, Vec<BoundingBox>> = HashMap::new();
    let mut shapes: HashMap<PathBuf, (LandmarkHeader, Vec<LandmarkSet>)> = HashMap::new();
    let mut keys = None;
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let bad = |d: String| CliError::format("manifest", path, format!("row {i}: {d}"));
        let bpath = dir.join(&r.boxes);
        if !boxes.contains_key(&bpath) {
            boxes.insert(bpath.clone(), read_boxes(&bpath)?);
        }
        let bbox = *boxes[&bpath]
            .get(r.box_row)
            .ok_or_else(|| bad(format!("box row {} out of range", r.box_row)))?;
        let landmarks = match (&r.landmarks, r.landmark_row) {
            (Some(file), Some(row)) if !file.is_empty() => {
                let lpath = dir.join(file);
                if !shapes.contains_key(&lpath) {
                    shapes.insert(lpath.clone(), read_landmarks(&lpath)?);
                }
                let (header, set) = &shapes[&lpath];
                match keys {
                    None => keys = Some(header.keys),
                    Some(k) if k != header.keys => return Err(bad("landmark files disagree on key indices".into())),
                    _ => {}
                }
                Some(
                    set.get(row)
                        .cloned()
                        .ok_or_else(|| bad(format!("landmark row {row} out of range")))?,
                )
            }
            _ => None,
        };
        out.push(Entry {
            image: dir.join(&r.image),
            bbox,
            landmarks,
        });
    }
    Ok((out, keys))
}
