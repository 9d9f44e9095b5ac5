//! Incremental view of a partially generated response against the scene.
//!
//! The policy has no pixels. What it "sees" is summarised here: where it is
//! in the response layout, which attributes its reasoning has named so far,
//! and the objects those attributes currently pick out. Once the answer is
//! open, the focus also suggests the value of the next coordinate.

use crate::geometry::{BBox, Point, FRAME_SIZE};
use crate::synth::{Color, Constraints, ObjectSummary, Selector, Shape, MAX_OBJECTS};

use super::vocab::{bin_center, TokenKind, Vocabulary, COORD_BINS};

const PHASES: usize = 5;
const COUNT_SLOTS: usize = 9;
const RBF_CENTERS: usize = 21;
const RBF_WIDTH: f64 = FRAME_SIZE / (RBF_CENTERS - 1) as f64;
/// Decay length (px) of the coordinate suggestion over bins.
const SUGGEST_SCALE: f64 = 20.0;
/// Coordinates in a complete answer: box corners then two points.
pub const ANSWER_COORDS: usize = 8;

const O_COUNT: usize = PHASES;
const O_ARRAY: usize = O_COUNT + COUNT_SLOTS;
const O_MENTION: usize = O_ARRAY + 1;
const O_FOCUS: usize = O_MENTION + 3;
const O_NEXT: usize = O_FOCUS + 8;
const O_LAYOUT: usize = O_NEXT + 1 + RBF_CENTERS;

const O_PENDING: usize = O_LAYOUT + Expect::COUNT;
/// Query attributes not yet named: color, shape, selector blocks and an
/// all-named flag.
const PENDING_DIM: usize = 6 + 3 + 6 + 1;

pub const GROUNDING_DIM: usize = O_PENDING + PENDING_DIM;

/// Token class the canonical response layout expects next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    ThinkOpen,
    Word,
    WordOrThinkClose,
    AnswerOpen,
    Coord,
    Exact(TokenKind),
    /// The response has left the canonical layout.
    Off,
}

const STRUCTURAL: [TokenKind; 10] = [
    TokenKind::BraceOpen,
    TokenKind::KeyBbox,
    TokenKind::BracketOpen,
    TokenKind::Comma,
    TokenKind::BracketClose,
    TokenKind::KeyPoints1,
    TokenKind::KeyPoints2,
    TokenKind::BraceClose,
    TokenKind::AnswerClose,
    TokenKind::Eos,
];

/// Canonical answer after the opening answer tag.
const ANSWER_LAYOUT: [Expect; 29] = {
    use TokenKind::*;
    const C: Expect = Expect::Coord;
    const fn t(k: TokenKind) -> Expect {
        Expect::Exact(k)
    }
    [
        t(BraceOpen),
        t(KeyBbox),
        t(BracketOpen),
        C,
        t(Comma),
        C,
        t(Comma),
        C,
        t(Comma),
        C,
        t(BracketClose),
        t(Comma),
        t(KeyPoints1),
        t(BracketOpen),
        C,
        t(Comma),
        C,
        t(BracketClose),
        t(Comma),
        t(KeyPoints2),
        t(BracketOpen),
        C,
        t(Comma),
        C,
        t(BracketClose),
        t(BraceClose),
        t(AnswerClose),
        t(Eos),
        Expect::Off,
    ]
};

impl Expect {
    pub const COUNT: usize = 5 + STRUCTURAL.len() + 1;

    pub fn index(self) -> usize {
        match self {
            Expect::ThinkOpen => 0,
            Expect::Word => 1,
            Expect::WordOrThinkClose => 2,
            Expect::AnswerOpen => 3,
            Expect::Coord => 4,
            Expect::Exact(k) => 5 + STRUCTURAL.iter().position(|s| *s == k).expect("structural token"),
            Expect::Off => Self::COUNT - 1,
        }
    }

    pub fn admits(self, k: TokenKind) -> bool {
        let word = matches!(
            k,
            TokenKind::Color(_) | TokenKind::Shape(_) | TokenKind::Selector(_) | TokenKind::Filler(_)
        );
        match self {
            Expect::ThinkOpen => k == TokenKind::ThinkOpen,
            Expect::Word => word,
            Expect::WordOrThinkClose => word || k == TokenKind::ThinkClose,
            Expect::AnswerOpen => k == TokenKind::AnswerOpen,
            Expect::Coord => matches!(k, TokenKind::Coord(_)),
            Expect::Exact(e) => e == k,
            Expect::Off => false,
        }
    }

    fn all() -> impl Iterator<Item = Expect> {
        [Expect::ThinkOpen, Expect::Word, Expect::WordOrThinkClose, Expect::AnswerOpen, Expect::Coord]
            .into_iter()
            .chain(STRUCTURAL.map(Expect::Exact))
    }
}

/// Direct feature-to-logit weights, `(token, feature, weight)`, that favour
/// the token classes the canonical layout expects.
pub fn layout_prior(bonus: f64) -> Vec<(usize, usize, f64)> {
    let v = Vocabulary::standard();
    let mut out = Vec::new();
    for e in Expect::all() {
        for id in 0..v.len() {
            if e.admits(v.kind(id)) {
                out.push((id, O_LAYOUT + e.index(), bonus));
            }
        }
    }
    out
}

fn selector_index(s: Selector) -> usize {
    Selector::ALL.iter().position(|x| *x == s).expect("listed selector")
}

/// Direct feature-to-logit weights that favour naming query attributes the
/// reasoning has not mentioned yet, then closing the reasoning block.
pub fn echo_prior(weight: f64) -> Vec<(usize, usize, f64)> {
    let v = Vocabulary::standard();
    let colors = Color::ALL.map(|c| (v.id(TokenKind::Color(c)), O_PENDING + c.index()));
    let shapes = Shape::ALL.map(|s| (v.id(TokenKind::Shape(s)), O_PENDING + 6 + s.index()));
    let selectors = Selector::ALL.map(|s| (v.id(TokenKind::Selector(s)), O_PENDING + 9 + selector_index(s)));
    let close = (v.id(TokenKind::ThinkClose), O_PENDING + PENDING_DIM - 1);
    colors
        .into_iter()
        .chain(shapes)
        .chain(selectors)
        .chain([close])
        .map(|(t, f)| (t, f, weight))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Start,
    Think,
    Between,
    Answer,
    Done,
}

#[derive(Debug, Clone, Copy)]
struct Focus {
    matches: usize,
    bbox: BBox,
    inner: [Point; 2],
}

#[derive(Debug, Clone)]
pub struct Grounding<'a> {
    vocab: &'static Vocabulary,
    objects: &'a [ObjectSummary],
    query: Constraints,
    phase: Phase,
    coords: usize,
    in_array: bool,
    mention: Constraints,
    focus: Option<Focus>,
    /// Position in the canonical layout: 0..3 cover the reasoning block,
    /// 3 + k the k-th answer element; `None` once the response deviated.
    layout: Option<usize>,
}

impl<'a> Grounding<'a> {
    pub fn new(objects: &'a [ObjectSummary], query: Constraints) -> Self {
        Self {
            vocab: Vocabulary::standard(),
            objects,
            query,
            phase: Phase::Start,
            coords: 0,
            in_array: false,
            mention: Constraints::default(),
            focus: None,
            layout: Some(0),
        }
    }

    pub fn expect(&self) -> Expect {
        match self.layout {
            None => Expect::Off,
            Some(0) => Expect::ThinkOpen,
            Some(1) => Expect::Word,
            Some(2) => Expect::WordOrThinkClose,
            Some(3) => Expect::AnswerOpen,
            Some(p) => ANSWER_LAYOUT[(p - 4).min(ANSWER_LAYOUT.len() - 1)],
        }
    }

    pub fn observe(&mut self, token: usize) {
        let kind = self.vocab.kind(token);
        self.layout = match (self.layout, self.expect().admits(kind)) {
            (Some(2), true) if kind != TokenKind::ThinkClose => Some(2),
            (Some(p), true) => Some(p + 1),
            _ => None,
        };
        match kind {
            TokenKind::ThinkOpen if self.phase == Phase::Start => self.phase = Phase::Think,
            TokenKind::ThinkClose if self.phase == Phase::Think => self.phase = Phase::Between,
            TokenKind::AnswerOpen if matches!(self.phase, Phase::Start | Phase::Think | Phase::Between) => {
                self.phase = Phase::Answer
            }
            TokenKind::AnswerClose if self.phase == Phase::Answer => self.phase = Phase::Done,
            TokenKind::BracketOpen => self.in_array = true,
            TokenKind::BracketClose => self.in_array = false,
            TokenKind::Coord(_) if self.phase == Phase::Answer => self.coords += 1,
            TokenKind::Color(c) if self.phase == Phase::Think => {
                self.mention.color = Some(c);
                self.refocus();
            }
            TokenKind::Shape(s) if self.phase == Phase::Think => {
                self.mention.shape = Some(s);
                self.refocus();
            }
            TokenKind::Selector(s) if self.phase == Phase::Think => {
                self.mention.selector = Some(s);
                self.refocus();
            }
            _ => {}
        }
    }

    /// Objects are only located once the reasoning has named both a color
    /// and a shape; a selector, when named, narrows further.
    fn refocus(&mut self) {
        if self.mention.color.is_none() || self.mention.shape.is_none() {
            self.focus = None;
            return;
        }
        let hits = self.mention.evaluate(self.objects);
        self.focus = match hits.as_slice() {
            [] => None,
            [one] => {
                let o = &self.objects[*one];
                Some(Focus {
                    matches: 1,
                    bbox: o.bbox,
                    inner: o.inner,
                })
            }
            many => {
                let b = many.iter().map(|&i| self.objects[i].bbox).reduce(|a, b| {
                    BBox::new(a.x1.min(b.x1), a.y1.min(b.y1), a.x2.max(b.x2), a.y2.max(b.y2))
                });
                b.map(|bbox| Focus {
                    matches: many.len(),
                    bbox,
                    inner: [bbox.center(); 2],
                })
            }
        };
    }

    /// Value the focus suggests for the next answer coordinate.
    pub fn next_target(&self) -> Option<f64> {
        if self.phase != Phase::Answer || self.coords >= ANSWER_COORDS {
            return None;
        }
        let f = self.focus?;
        Some(match self.coords {
            0 => f.bbox.x1,
            1 => f.bbox.y1,
            2 => f.bbox.x2,
            3 => f.bbox.y2,
            4 => f.inner[0].x,
            5 => f.inner[0].y,
            6 => f.inner[1].x,
            _ => f.inner[1].y,
        })
    }

    pub fn write_features(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), GROUNDING_DIM);
        out.fill(0.0);
        out[self.phase as usize] = 1.0;
        out[O_COUNT + self.coords.min(COUNT_SLOTS - 1)] = 1.0;
        out[O_ARRAY] = self.in_array as u8 as f64;
        out[O_MENTION] = self.mention.color.is_some() as u8 as f64;
        out[O_MENTION + 1] = self.mention.shape.is_some() as u8 as f64;
        out[O_MENTION + 2] = self.mention.selector.is_some() as u8 as f64;
        if let Some(f) = self.focus {
            let c = f.bbox.center();
            let vals = [
                1.0,
                f.matches as f64 / MAX_OBJECTS as f64,
                f.bbox.x1 / FRAME_SIZE,
                f.bbox.y1 / FRAME_SIZE,
                f.bbox.x2 / FRAME_SIZE,
                f.bbox.y2 / FRAME_SIZE,
                c.x / FRAME_SIZE,
                c.y / FRAME_SIZE,
            ];
            out[O_FOCUS..O_NEXT].copy_from_slice(&vals);
        }
        out[O_LAYOUT + self.expect().index()] = 1.0;
        let mut pending = false;
        if let Some(c) = self.query.color.filter(|c| self.mention.color != Some(*c)) {
            out[O_PENDING + c.index()] = 1.0;
            pending = true;
        }
        if let Some(sh) = self.query.shape.filter(|s| self.mention.shape != Some(*s)) {
            out[O_PENDING + 6 + sh.index()] = 1.0;
            pending = true;
        }
        if let Some(sel) = self.query.selector.filter(|s| self.mention.selector != Some(*s)) {
            out[O_PENDING + 9 + selector_index(sel)] = 1.0;
            pending = true;
        }
        out[O_PENDING + PENDING_DIM - 1] = (!pending) as u8 as f64;
        if let Some(v) = self.next_target() {
            out[O_NEXT] = v / FRAME_SIZE;
            for k in 0..RBF_CENTERS {
                let z = (v - k as f64 * RBF_WIDTH) / RBF_WIDTH;
                out[O_NEXT + 1 + k] = (-z * z).exp();
            }
        }
    }

    /// Per-token suggestion scores: a bump over coordinate bins around the
    /// next target, zero elsewhere.
    pub fn write_suggestion(&self, out: &mut [f64]) {
        out.fill(0.0);
        let Some(v) = self.next_target() else {
            return;
        };
        let first = self.vocab.id(TokenKind::Coord(0));
        for b in 0..COORD_BINS {
            out[first + b] = (-(bin_center(b) - v).abs() / SUGGEST_SCALE).exp();
        }
    }
}
