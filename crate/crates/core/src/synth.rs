//! Synthetic scenes of flat-colored shapes plus attribute-based referring
//! queries that single out exactly one object.

use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::mask_points;
use crate::geometry::{BBox, BinaryMask, Point, FRAME_SIZE};

pub const CANVAS: usize = 840;
pub const MAX_OBJECTS: usize = 12;
pub const MIN_OBJECTS: usize = 2;
pub const FEATURE_LEN: usize = 32;
/// Width of each one-hot block in the query feature vector.
const SLOT: usize = 8;
const NONE_INDEX: usize = SLOT - 1;
/// Smallest visible area a target may have.
pub const MIN_TARGET_AREA: usize = 200;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("object count {0} outside [2, 12]")]
    ObjectCount(usize),
    #[error("could not place {0} objects after bounded retries")]
    PlacementFailure(usize),
    #[error("no referring expression isolates a single object")]
    NoUniqueTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 170, 60],
            Color::Blue => [40, 80, 220],
            Color::Yellow => [235, 210, 40],
            Color::Purple => [140, 60, 180],
            Color::Orange => [240, 140, 30],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Picks one object out of a candidate set by size or position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Largest,
    Smallest,
    Left,
    Right,
    Top,
    Bottom,
}

impl Selector {
    pub const ALL: [Selector; 6] = [
        Selector::Largest,
        Selector::Smallest,
        Selector::Left,
        Selector::Right,
        Selector::Top,
        Selector::Bottom,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Selector::Largest => "largest",
            Selector::Smallest => "smallest",
            Selector::Left => "left",
            Selector::Right => "right",
            Selector::Top => "top",
            Selector::Bottom => "bottom",
        }
    }

    pub fn is_superlative(self) -> bool {
        matches!(self, Selector::Largest | Selector::Smallest)
    }

    /// Key whose maximum wins.
    fn key(self, o: &ObjectSummary) -> f64 {
        match self {
            Selector::Largest => o.size,
            Selector::Smallest => -o.size,
            Selector::Left => -o.center.x,
            Selector::Right => o.center.x,
            Selector::Top => -o.center.y,
            Selector::Bottom => o.center.y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    /// Diameter or side length in pixels.
    pub size: f64,
    pub center: Point,
    pub z: i32,
}

impl SceneObject {
    pub fn extent(&self) -> BBox {
        let h = self.size / 2.0;
        BBox::new(
            self.center.x - h,
            self.center.y - h,
            self.center.x + h,
            self.center.y + h,
        )
    }

    /// Hard-edged coverage test at the pixel center.
    pub fn covers(&self, x: usize, y: usize) -> bool {
        let px = x as f64 + 0.5 - self.center.x;
        let py = y as f64 + 0.5 - self.center.y;
        let h = self.size / 2.0;
        match self.shape {
            Shape::Circle => px * px + py * py <= h * h,
            Shape::Square => px.abs() <= h && py.abs() <= h,
            // apex up, base at the bottom edge
            Shape::Triangle => py >= -h && py <= h && px.abs() <= (py + h) / 2.0,
        }
    }
}

/// What the policy and the grounding lookup see of an object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub shape: Shape,
    pub color: Color,
    pub size: f64,
    pub center: Point,
    /// Tight box of the visible pixels.
    pub bbox: BBox,
    pub visible_area: usize,
    /// Two most interior visible points, as for ground truth.
    pub inner: [Point; 2],
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    /// Per-pixel color code: 0 background, `Color::index() + 1` otherwise.
    pub raster: Vec<u8>,
    /// Visible pixels of each object after z-order occlusion.
    pub masks: Vec<BinaryMask>,
}

impl Scene {
    pub fn summaries(&self) -> Vec<ObjectSummary> {
        self.objects
            .iter()
            .zip(&self.masks)
            .map(|(o, m)| {
                let bbox = m
                    .bounds()
                    .map(|(a, b, c, d)| BBox::new(a as f64, b as f64, c as f64, d as f64))
                    .unwrap_or(BBox::new(o.center.x, o.center.y, o.center.x, o.center.y));
                ObjectSummary {
                    shape: o.shape,
                    color: o.color,
                    size: o.size,
                    center: o.center,
                    bbox,
                    visible_area: m.count(),
                    inner: mask_points(m).map_or([o.center, o.center], |(a, b)| [a, b]),
                }
            })
            .collect()
    }

    /// RGB rendering, white background.
    pub fn to_rgb(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.raster.len() * 3);
        for &c in &self.raster {
            let rgb = match c {
                0 => [255, 255, 255],
                k => Color::ALL[k as usize - 1].rgb(),
            };
            out.extend_from_slice(&rgb);
        }
        out
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let enc = image::codecs::png::PngEncoder::new(&mut buf);
        image::ImageEncoder::write_image(
            enc,
            &self.to_rgb(),
            CANVAS as u32,
            CANVAS as u32,
            image::ExtendedColorType::Rgb8,
        )
        .expect("in-memory png encoding");
        buf
    }
}

fn overlap_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

const MIN_SIZE: f64 = 60.0;
const MAX_SIZE: f64 = 200.0;
/// Largest allowed overlap between two object extents, relative to the smaller one.
const MAX_OVERLAP: f64 = 0.1;
const PLACEMENT_TRIES: usize = 2000;

fn draw_object(rng: &mut ChaCha8Rng, z: i32, shape: Shape) -> SceneObject {
    let size = rng.random_range(MIN_SIZE..=MAX_SIZE).round();
    let h = size / 2.0;
    let cx = rng.random_range(h..=FRAME_SIZE - h).round();
    let cy = rng.random_range(h..=FRAME_SIZE - h).round();
    SceneObject {
        shape,
        color: *Color::ALL.choose(rng).unwrap(),
        size,
        center: Point::new(cx, cy),
        z,
    }
}

/// Places `n_objects` shapes deterministically from `seed`.
///
/// At least two objects share a shape kind so that shape alone never
/// identifies every object.
pub fn generate_layout(seed: u64, n_objects: usize) -> Result<Vec<SceneObject>, SynthError> {
    if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&n_objects) {
        return Err(SynthError::ObjectCount(n_objects));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = *Shape::ALL.choose(&mut rng).unwrap();
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    let mut tries = 0;
    while objects.len() < n_objects {
        tries += 1;
        if tries > PLACEMENT_TRIES {
            return Err(SynthError::PlacementFailure(n_objects));
        }
        let shape = if objects.len() < 2 {
            shared
        } else {
            *Shape::ALL.choose(&mut rng).unwrap()
        };
        let cand = draw_object(&mut rng, objects.len() as i32, shape);
        let e = cand.extent();
        let ok = objects.iter().all(|o| {
            let oe = o.extent();
            overlap_area(&e, &oe) <= MAX_OVERLAP * e.area().min(oe.area())
        });
        if ok {
            objects.push(cand);
        }
    }
    Ok(objects)
}

/// Paints objects in z order; later objects occlude earlier ones.
pub fn render(seed: u64, objects: Vec<SceneObject>) -> Scene {
    let mut owner = vec![u8::MAX; CANVAS * CANVAS];
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by_key(|&i| objects[i].z);
    for &i in &order {
        let e = objects[i].extent();
        let x0 = e.x1.floor().max(0.0) as usize;
        let y0 = e.y1.floor().max(0.0) as usize;
        let x1 = (e.x2.ceil() as usize).min(CANVAS);
        let y1 = (e.y2.ceil() as usize).min(CANVAS);
        for y in y0..y1 {
            for x in x0..x1 {
                if objects[i].covers(x, y) {
                    owner[y * CANVAS + x] = i as u8;
                }
            }
        }
    }
    let mut masks = vec![BinaryMask::new(CANVAS, CANVAS); objects.len()];
    let mut raster = vec![0u8; CANVAS * CANVAS];
    for (p, &o) in owner.iter().enumerate() {
        if o != u8::MAX {
            masks[o as usize].set(p % CANVAS, p / CANVAS, true);
            raster[p] = objects[o as usize].color.index() as u8 + 1;
        }
    }
    Scene {
        seed,
        objects,
        raster,
        masks,
    }
}

pub fn generate_scene(seed: u64, n_objects: usize) -> Result<Scene, SynthError> {
    Ok(render(seed, generate_layout(seed, n_objects)?))
}

/// Attribute constraints of a referring expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Constraints {
    pub color: Option<Color>,
    pub shape: Option<Shape>,
    pub selector: Option<Selector>,
}

impl Constraints {
    /// Indices of the objects the constraints describe. Without a selector
    /// that is every attribute match; with one, the unique extreme match
    /// (empty when the extreme is tied).
    pub fn evaluate(&self, objects: &[ObjectSummary]) -> Vec<usize> {
        let matches: Vec<usize> = objects
            .iter()
            .enumerate()
            .filter(|(_, o)| self.color.is_none_or(|c| c == o.color))
            .filter(|(_, o)| self.shape.is_none_or(|s| s == o.shape))
            .map(|(i, _)| i)
            .collect();
        let Some(sel) = self.selector else {
            return matches;
        };
        let best = matches
            .iter()
            .map(|&i| sel.key(&objects[i]))
            .fold(f64::NEG_INFINITY, f64::max);
        let top: Vec<usize> = matches
            .into_iter()
            .filter(|&i| sel.key(&objects[i]) == best)
            .collect();
        if top.len() == 1 {
            top
        } else {
            Vec::new()
        }
    }

    pub fn text(&self) -> String {
        let mut s = String::from("the");
        if let Some(sel) = self.selector.filter(|s| s.is_superlative()) {
            s.push(' ');
            s.push_str(sel.word());
        }
        if let Some(c) = self.color {
            s.push(' ');
            s.push_str(c.name());
        }
        s.push(' ');
        s.push_str(self.shape.map_or("object", Shape::name));
        match self.selector {
            Some(Selector::Left) => s.push_str(" on the left"),
            Some(Selector::Right) => s.push_str(" on the right"),
            Some(Selector::Top) => s.push_str(" at the top"),
            Some(Selector::Bottom) => s.push_str(" at the bottom"),
            _ => {}
        }
        s
    }

    /// Four one-hot blocks of eight: color, shape, superlative, relation.
    /// Index 7 of a block marks an absent constraint.
    pub fn features(&self) -> Vec<f64> {
        let mut f = vec![0.0; FEATURE_LEN];
        f[self.color.map_or(NONE_INDEX, Color::index)] = 1.0;
        f[SLOT + self.shape.map_or(NONE_INDEX, Shape::index)] = 1.0;
        let sup = match self.selector {
            Some(Selector::Largest) => 0,
            Some(Selector::Smallest) => 1,
            _ => NONE_INDEX,
        };
        let rel = match self.selector {
            Some(Selector::Left) => 0,
            Some(Selector::Right) => 1,
            Some(Selector::Top) => 2,
            Some(Selector::Bottom) => 3,
            _ => NONE_INDEX,
        };
        f[2 * SLOT + sup] = 1.0;
        f[3 * SLOT + rel] = 1.0;
        f
    }

    pub fn from_features(f: &[f64]) -> Option<Constraints> {
        if f.len() != FEATURE_LEN {
            return None;
        }
        let hot = |block: usize| (0..SLOT).find(|&i| f[block * SLOT + i] > 0.5);
        let color = hot(0).and_then(|i| Color::ALL.get(i).copied());
        let shape = hot(1).and_then(|i| Shape::ALL.get(i).copied());
        let selector = match (hot(2), hot(3)) {
            (Some(0), _) => Some(Selector::Largest),
            (Some(1), _) => Some(Selector::Smallest),
            (_, Some(r)) if r < 4 => Some([Selector::Left, Selector::Right, Selector::Top, Selector::Bottom][r]),
            _ => None,
        };
        Some(Constraints {
            color,
            shape,
            selector,
        })
    }

    pub fn count(&self) -> usize {
        self.color.is_some() as usize + self.selector.is_some() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub target: usize,
    pub features: Vec<f64>,
    pub constraints: Constraints,
}

/// Builds a referring expression for a randomly chosen object.
///
/// Colour and shape are always named; a size superlative or a position
/// relation is added when they do not suffice. Objects that cannot be
/// isolated are skipped.
pub fn make_query_for(objects: &[ObjectSummary], rng_seed: u64) -> Result<Query, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..objects.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    for target in order {
        let o = &objects[target];
        if o.visible_area < MIN_TARGET_AREA {
            continue;
        }
        let base = Constraints {
            color: Some(o.color),
            shape: Some(o.shape),
            selector: None,
        };
        let candidates: Vec<Constraints> = if base.evaluate(objects) == [target] {
            vec![base]
        } else {
            Selector::ALL
                .iter()
                .map(|&s| Constraints {
                    selector: Some(s),
                    ..base
                })
                .filter(|c| c.evaluate(objects) == [target])
                .collect()
        };
        if let Some(c) = candidates.choose(&mut rng) {
            return Ok(Query {
                text: c.text(),
                target,
                features: c.features(),
                constraints: *c,
            });
        }
    }
    Err(SynthError::NoUniqueTarget)
}

pub fn make_query(scene: &Scene, rng_seed: u64) -> Result<Query, SynthError> {
    make_query_for(&scene.summaries(), rng_seed)
}

/// Identity of a synthetic sample; encoded into record ids so scenes can be
/// regenerated from a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SynthId {
    pub scene_seed: u64,
    pub n_objects: usize,
    pub query_seed: u64,
}

impl fmt::Display for SynthId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "synth-{}-{}-{}", self.scene_seed, self.n_objects, self.query_seed)
    }
}

impl SynthId {
    pub fn parse(id: &str) -> Option<SynthId> {
        let mut parts = id.strip_prefix("synth-")?.split('-');
        let id = SynthId {
            scene_seed: parts.next()?.parse().ok()?,
            n_objects: parts.next()?.parse().ok()?,
            query_seed: parts.next()?.parse().ok()?,
        };
        parts.next().is_none().then_some(id)
    }
}
