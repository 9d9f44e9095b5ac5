//! Ground-truth construction and the JSON-lines dataset format.
//!
//! A record carries the tight box of the target mask and the centers of its
//! two largest inscribed circles, all computed after the mask has been
//! stretched to the 840×840 frame.
//!
//! Dataset lines hold the keys `id, query_text, query_features, bbox, p1, p2,
//! mask_rle, src_w, src_h`. Masks are run-length strings: space-separated
//! run lengths over the row-major pixels, alternating background and
//! foreground and starting with a (possibly empty) background run.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{inscribed_circle_centers, BBox, BinaryMask, GeometryError, Point};
use crate::rewards::GroundTruth;
use crate::synth::{
    self, generate_scene, make_query, Constraints, ObjectSummary, Query, Scene, Selector, SynthError,
    SynthId, CANVAS,
};
use crate::synth::{Color, Shape};

pub const FRAME: usize = CANVAS;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bad mask encoding: {0}")]
    Rle(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_rle(m: &BinaryMask) -> String {
    let mut runs = Vec::new();
    let mut current = false;
    let mut run = 0usize;
    for i in 0..m.len() {
        let v = m.get_index(i);
        if v != current {
            runs.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    runs.push(run);
    runs.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn decode_rle(s: &str, width: usize, height: usize) -> Result<BinaryMask, DataError> {
    let mut m = BinaryMask::new(width, height);
    let total = width * height;
    let mut pos = 0usize;
    let mut fg = false;
    for tok in s.split_ascii_whitespace() {
        let n: usize = tok
            .parse()
            .map_err(|_| DataError::Rle(format!("non-numeric run {tok:?}")))?;
        if pos + n > total {
            return Err(DataError::Rle(format!("runs exceed {width}x{height}")));
        }
        if fg {
            for i in pos..pos + n {
                m.set(i % width, i / width, true);
            }
        }
        pos += n;
        fg = !fg;
    }
    if pos != total {
        return Err(DataError::Rle(format!(
            "runs cover {pos} of {total} pixels"
        )));
    }
    Ok(m)
}

/// Tight box over foreground pixel indices.
pub fn mask_to_bbox(m: &BinaryMask) -> Result<BBox, GeometryError> {
    let (x1, y1, x2, y2) = m.bounds().ok_or(GeometryError::EmptyMask)?;
    Ok(BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64))
}

/// Maps a source-resolution coordinate into the frame (independent axes).
pub fn rescale_point(p: Point, src: (usize, usize)) -> Point {
    Point::new(
        p.x * FRAME as f64 / src.0 as f64,
        p.y * FRAME as f64 / src.1 as f64,
    )
}

/// Nearest-neighbour stretch to the 840×840 frame.
pub fn rescale_mask(m: &BinaryMask) -> BinaryMask {
    if m.width() == FRAME && m.height() == FRAME {
        return m.clone();
    }
    let (w, h) = (m.width(), m.height());
    let xs: Vec<usize> = (0..FRAME)
        .map(|x| (((x as f64 + 0.5) * w as f64 / FRAME as f64) as usize).min(w - 1))
        .collect();
    let ys: Vec<usize> = (0..FRAME)
        .map(|y| (((y as f64 + 0.5) * h as f64 / FRAME as f64) as usize).min(h - 1))
        .collect();
    BinaryMask::from_fn(FRAME, FRAME, |x, y| m.get(xs[x], ys[y]))
}

/// Inscribed-circle centers computed on the tight crop of the mask.
///
/// Outside the crop everything is background, so the crop's own border
/// frame gives the same distances as the full image.
pub fn mask_points(m: &BinaryMask) -> Result<(Point, Point), GeometryError> {
    let (x1, y1, x2, y2) = m.bounds().ok_or(GeometryError::EmptyMask)?;
    let crop = m.crop(x1, y1, x2 - x1 + 1, y2 - y1 + 1);
    let (p1, p2) = inscribed_circle_centers(&crop)?;
    let shift = |p: Point| Point::new(p.x + x1 as f64, p.y + y1 as f64);
    Ok((shift(p1), shift(p2)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub id: String,
    pub query_text: String,
    pub query_features: Vec<f64>,
    pub bbox: BBox,
    pub p1: Point,
    pub p2: Point,
    /// Target mask in the 840×840 frame.
    pub mask: BinaryMask,
    pub src: (usize, usize),
}

impl GroundTruthRecord {
    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            bbox: self.bbox,
            p1: self.p1,
            p2: self.p2,
        }
    }
}

/// Builds a record from a mask at source resolution.
pub fn make_record(
    id: impl Into<String>,
    mask: &BinaryMask,
    query_text: impl Into<String>,
    query_features: Vec<f64>,
) -> Result<GroundTruthRecord, DataError> {
    if mask.is_empty() {
        return Err(GeometryError::EmptyMask.into());
    }
    let src = (mask.width(), mask.height());
    let framed = rescale_mask(mask);
    let bbox = mask_to_bbox(&framed)?;
    let (p1, p2) = mask_points(&framed)?;
    Ok(GroundTruthRecord {
        id: id.into(),
        query_text: query_text.into(),
        query_features,
        bbox,
        p1,
        p2,
        mask: framed,
        src,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    query_text: String,
    query_features: Vec<f64>,
    bbox: [f64; 4],
    p1: [f64; 2],
    p2: [f64; 2],
    mask_rle: String,
    src_w: usize,
    src_h: usize,
}

pub fn record_to_line(r: &GroundTruthRecord) -> String {
    let line = RecordLine {
        id: r.id.clone(),
        query_text: r.query_text.clone(),
        query_features: r.query_features.clone(),
        bbox: r.bbox.to_array(),
        p1: r.p1.to_array(),
        p2: r.p2.to_array(),
        mask_rle: encode_rle(&r.mask),
        src_w: r.src.0,
        src_h: r.src.1,
    };
    serde_json::to_string(&line).expect("record serialization")
}

pub fn record_from_line(s: &str, line_no: usize) -> Result<GroundTruthRecord, DataError> {
    let perr = |message: String| DataError::Parse {
        line: line_no,
        message,
    };
    let l: RecordLine = serde_json::from_str(s).map_err(|e| perr(e.to_string()))?;
    let mask = decode_rle(&l.mask_rle, FRAME, FRAME).map_err(|e| perr(e.to_string()))?;
    Ok(GroundTruthRecord {
        id: l.id,
        query_text: l.query_text,
        query_features: l.query_features,
        bbox: BBox::from_array(l.bbox),
        p1: Point::new(l.p1[0], l.p1[1]),
        p2: Point::new(l.p2[0], l.p2[1]),
        mask,
        src: (l.src_w, l.src_h),
    })
}

pub fn write_dataset_to<W: Write>(mut w: W, records: &[GroundTruthRecord]) -> io::Result<()> {
    for r in records {
        writeln!(w, "{}", record_to_line(r))?;
    }
    w.flush()
}

pub fn write_dataset(path: &Path, records: &[GroundTruthRecord]) -> Result<(), DataError> {
    write_dataset_to(BufWriter::new(File::create(path)?), records)?;
    Ok(())
}

/// Reads records, skipping blank lines. Errors carry 1-based line numbers.
pub fn read_dataset_from<R: BufRead>(r: R) -> Result<Vec<GroundTruthRecord>, DataError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(record_from_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<GroundTruthRecord>, DataError> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

/// External annotation line accepted by the import adapter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalAnnotation {
    #[serde(default)]
    pub id: Option<String>,
    pub width: usize,
    pub height: usize,
    pub mask_rle: String,
    pub text: String,
}

/// Best-effort attribute features from free text: the first colour, shape
/// and selector words found.
pub fn features_from_text(text: &str) -> Vec<f64> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
        .collect();
    let has = |w: &str| words.contains(&w);
    Constraints {
        color: Color::ALL.into_iter().find(|c| has(c.name())),
        shape: Shape::ALL.into_iter().find(|s| has(s.name())),
        selector: Selector::ALL.into_iter().find(|s| has(s.word())),
    }
    .features()
}

pub fn import_annotations<R: BufRead>(r: R) -> Result<Vec<GroundTruthRecord>, DataError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| DataError::Parse {
            line: i + 1,
            message,
        };
        let a: ExternalAnnotation = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        if a.width == 0 || a.height == 0 {
            return Err(perr("zero image dimension".into()));
        }
        let mask = decode_rle(&a.mask_rle, a.width, a.height).map_err(|e| perr(e.to_string()))?;
        let id = a.id.clone().unwrap_or_else(|| format!("ext-{}", i + 1));
        let rec = make_record(id, &mask, a.text.clone(), features_from_text(&a.text))
            .map_err(|e| perr(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Object-count range and seed for synthetic datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_objects: 3,
            max_objects: 5,
        }
    }
}

/// A synthetic sample: scene, query and its record.
pub struct SynthSample {
    pub id: SynthId,
    pub scene: Scene,
    pub query: Query,
    pub record: GroundTruthRecord,
}

pub fn synth_sample(id: SynthId) -> Result<SynthSample, DataError> {
    let scene = generate_scene(id.scene_seed, id.n_objects)?;
    let query = make_query(&scene, id.query_seed)?;
    let record = make_record(
        id.to_string(),
        &scene.masks[query.target],
        query.text.clone(),
        query.features.clone(),
    )?;
    Ok(SynthSample {
        id,
        scene,
        query,
        record,
    })
}

/// Deterministic list of `n` valid sample ids; seeds that fail placement or
/// have no unique target are skipped.
pub fn synth_ids(n: usize, seed: u64, cfg: &SynthConfig) -> Vec<SynthId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let id = SynthId {
            scene_seed: rng.random(),
            n_objects: rng.random_range(cfg.min_objects..=cfg.max_objects),
            query_seed: rng.random::<u32>() as u64,
        };
        let Ok(layout) = synth::generate_layout(id.scene_seed, id.n_objects) else {
            continue;
        };
        let scene = synth::render(id.scene_seed, layout);
        if make_query(&scene, id.query_seed).is_ok() {
            out.push(id);
        }
    }
    out
}

pub fn synth_dataset(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<GroundTruthRecord>, DataError> {
    synth_ids(n, seed, cfg)
        .into_iter()
        .map(|id| synth_sample(id).map(|s| s.record))
        .collect()
}

/// What training and evaluation need from a record: its query, the scene
/// objects (when the record came from the synthetic generator) and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub id: String,
    pub query_features: Vec<f64>,
    pub objects: Vec<ObjectSummary>,
    pub truth: GroundTruth,
}

impl TaskSample {
    pub fn from_record(r: &GroundTruthRecord) -> Result<TaskSample, DataError> {
        let objects = match SynthId::parse(&r.id) {
            Some(id) => generate_scene(id.scene_seed, id.n_objects)?.summaries(),
            None => Vec::new(),
        };
        Ok(TaskSample {
            id: r.id.clone(),
            query_features: r.query_features.clone(),
            objects,
            truth: r.truth(),
        })
    }

    pub fn from_synth(s: &SynthSample) -> TaskSample {
        TaskSample {
            id: s.record.id.clone(),
            query_features: s.record.query_features.clone(),
            objects: s.scene.summaries(),
            truth: s.record.truth(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::point_in_bbox;
    use proptest::prelude::*;

    #[test]
    fn bbox_of_single_pixel_and_full_mask() {
        let m = BinaryMask::from_fn(8, 8, |x, y| x == 3 && y == 4);
        assert_eq!(mask_to_bbox(&m).unwrap(), BBox::new(3., 4., 3., 4.));
        let full = BinaryMask::from_fn(10, 10, |_, _| true);
        assert_eq!(mask_to_bbox(&full).unwrap(), BBox::new(0., 0., 9., 9.));
        assert_eq!(mask_to_bbox(&BinaryMask::new(3, 3)), Err(GeometryError::EmptyMask));
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_point(Point::new(100., 300.), (420, 840)), Point::new(200., 300.));
        assert_eq!(rescale_point(Point::new(0., 0.), (317, 509)), Point::new(0., 0.));
        assert_eq!(rescale_point(Point::new(317., 509.), (317, 509)), Point::new(840., 840.));
        let m = BinaryMask::from_fn(420, 840, |x, y| x == 100 && y == 300);
        let r = rescale_mask(&m);
        assert_eq!(r.bounds(), Some((200, 300, 201, 300)));
    }

    #[test]
    fn identity_rescale_matches_direct() {
        let s = synth_sample(synth_ids(1, 5, &SynthConfig::default())[0]).unwrap();
        let direct = mask_to_bbox(&s.scene.masks[s.query.target]).unwrap();
        assert_eq!(s.record.bbox, direct);
        let (p1, p2) = inscribed_circle_centers(&s.scene.masks[s.query.target]).unwrap();
        assert_eq!((s.record.p1, s.record.p2), (p1, p2));
    }

    #[test]
    fn record_invariants_over_synth_sweep() {
        let ids = synth_ids(100, 11, &SynthConfig { min_objects: 2, max_objects: 12 });
        for id in ids {
            let s = synth_sample(id).unwrap();
            let r = &s.record;
            assert!(point_in_bbox(&r.p1, &r.bbox) && point_in_bbox(&r.p2, &r.bbox));
            assert!(r.mask.get(r.p1.x as usize, r.p1.y as usize));
            assert!(r.mask.get(r.p2.x as usize, r.p2.y as usize));
            assert_eq!(r.mask.bounds().map(|(a, b, c, d)| BBox::new(a as f64, b as f64, c as f64, d as f64)), Some(r.bbox));
            assert!(r.mask.count() >= synth::MIN_TARGET_AREA);
        }
    }

    #[test]
    fn dataset_round_trip_and_stability() {
        let records = synth_dataset(10, 3, &SynthConfig::default()).unwrap();
        let mut first = Vec::new();
        write_dataset_to(&mut first, &records).unwrap();
        let back = read_dataset_from(first.as_slice()).unwrap();
        assert_eq!(back, records);
        let mut second = Vec::new();
        write_dataset_to(&mut second, &back).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn corrupt_and_empty_files() {
        let records = synth_dataset(2, 3, &SynthConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let second = text.lines().nth(1).unwrap();
        let truncated = format!("{}\n{}\n", text.lines().next().unwrap(), &second[..second.len() / 2]);
        match read_dataset_from(truncated.as_bytes()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(read_dataset_from("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn import_adapter() {
        let m = BinaryMask::from_fn(200, 100, |x, y| (50..120).contains(&x) && (20..60).contains(&y));
        let line = serde_json::to_string(&ExternalAnnotation {
            id: None,
            width: 200,
            height: 100,
            mask_rle: encode_rle(&m),
            text: "the red Circle on the left".into(),
        })
        .unwrap();
        let recs = import_annotations(format!("{line}\n").as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.src, (200, 100));
        assert_eq!(r.bbox, BBox::new(210., 168., 503., 503.));
        assert!(point_in_bbox(&r.p1, &r.bbox));
        let c = Constraints::from_features(&r.query_features).unwrap();
        assert_eq!(c.color, Some(Color::Red));
        assert_eq!(c.shape, Some(Shape::Circle));
        assert_eq!(c.selector, Some(Selector::Left));
    }

    #[test]
    fn rle_rejects_bad_lengths() {
        assert!(decode_rle("1 2", 2, 2).is_err());
        assert!(decode_rle("5", 2, 2).is_err());
        assert!(decode_rle("x", 2, 2).is_err());
        assert_eq!(decode_rle("4", 2, 2).unwrap(), BinaryMask::new(2, 2));
    }

    proptest! {
        #[test]
        fn rle_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let m = BinaryMask::from_fn(w, h, |x, y| (seed.rotate_left((x * 5 + y * 11) as u32 % 64) & 3) == 1);
            prop_assert_eq!(decode_rle(&encode_rle(&m), w, h).unwrap(), m);
        }
    }
}
