//! Token inventory of the segmentation policy.
//!
//! Responses are sequences of whole tokens: tags, JSON punctuation, answer
//! keys, 84 coordinate bins of 10 px (emitted as their bin centers), a small
//! reasoning lexicon and end-of-sequence.

use std::sync::OnceLock;

use crate::synth::{Color, Selector, Shape};

use super::PolicyError;

pub const COORD_BINS: usize = 84;
pub const BIN_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Eos,
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
    BraceOpen,
    BraceClose,
    KeyBbox,
    KeyPoints1,
    KeyPoints2,
    /// Non-canonical single `points` key; only the soft grammar accepts it.
    KeyPoints,
    BracketOpen,
    BracketClose,
    Comma,
    Coord(u8),
    Color(Color),
    Shape(Shape),
    Selector(Selector),
    Filler(u8),
}

const FILLERS: [&str; 4] = ["the", "object", "find", "is"];

#[derive(Debug, Clone)]
pub struct Vocabulary {
    kinds: Vec<TokenKind>,
    texts: Vec<String>,
}

pub fn bin_center(bin: usize) -> f64 {
    bin as f64 * BIN_WIDTH + BIN_WIDTH / 2.0
}

pub fn bin_of(value: f64) -> usize {
    ((value / BIN_WIDTH).floor().max(0.0) as usize).min(COORD_BINS - 1)
}

impl Vocabulary {
    fn build() -> Self {
        use TokenKind::*;
        let mut kinds = vec![
            Eos,
            ThinkOpen,
            ThinkClose,
            AnswerOpen,
            AnswerClose,
            BraceOpen,
            BraceClose,
            KeyBbox,
            KeyPoints1,
            KeyPoints2,
            KeyPoints,
            BracketOpen,
            BracketClose,
            Comma,
        ];
        kinds.extend((0..COORD_BINS as u8).map(Coord));
        kinds.extend(crate::synth::Color::ALL.map(TokenKind::Color));
        kinds.extend(crate::synth::Shape::ALL.map(TokenKind::Shape));
        kinds.extend(crate::synth::Selector::ALL.map(TokenKind::Selector));
        kinds.extend((0..FILLERS.len() as u8).map(Filler));
        let texts = kinds
            .iter()
            .map(|k| match *k {
                Eos => String::new(),
                ThinkOpen => "<think>".into(),
                ThinkClose => "</think>".into(),
                AnswerOpen => "<answer>".into(),
                AnswerClose => "</answer>".into(),
                BraceOpen => "{".into(),
                BraceClose => "}".into(),
                KeyBbox => "\"bbox\":".into(),
                KeyPoints1 => "\"points_1\":".into(),
                KeyPoints2 => "\"points_2\":".into(),
                KeyPoints => "\"points\":".into(),
                BracketOpen => "[".into(),
                BracketClose => "]".into(),
                Comma => ",".into(),
                Coord(b) => format!("{}", bin_center(b as usize)),
                TokenKind::Color(c) => format!(" {}", c.name()),
                TokenKind::Shape(s) => format!(" {}", s.name()),
                TokenKind::Selector(s) => format!(" {}", s.word()),
                Filler(i) => format!(" {}", FILLERS[i as usize]),
            })
            .collect();
        Self { kinds, texts }
    }

    /// The shared segmentation vocabulary.
    pub fn standard() -> &'static Vocabulary {
        static V: OnceLock<Vocabulary> = OnceLock::new();
        V.get_or_init(Vocabulary::build)
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, id: usize) -> TokenKind {
        self.kinds[id]
    }

    pub fn text(&self, id: usize) -> &str {
        &self.texts[id]
    }

    pub fn id(&self, kind: TokenKind) -> usize {
        self.kinds
            .iter()
            .position(|k| *k == kind)
            .expect("every kind is in the vocabulary")
    }

    pub fn eos(&self) -> usize {
        0
    }

    pub fn coord_id(&self, value: f64) -> usize {
        self.id(TokenKind::Coord(bin_of(value) as u8))
    }

    /// Concatenated token texts, stopping at end-of-sequence.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != self.eos())
            .map(|&i| self.texts[i].as_str())
            .collect()
    }

    /// Greedy longest-match tokenization.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, PolicyError> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let best = self
                .texts
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.is_empty() && rest.starts_with(t.as_str()))
                .max_by_key(|(_, t)| t.len())
                .ok_or_else(|| PolicyError::Untokenizable(rest.chars().take(16).collect()))?;
            out.push(best.0);
            rest = &rest[best.1.len()..];
        }
        Ok(out)
    }

    /// Bigram log-probabilities standing in for a pretrained model's loose
    /// grasp of the response layout. Row `len()` is the start state.
    ///
    /// The prior puts most mass on plausible successors but cannot count
    /// coordinates or keys, so fully valid responses are rare until trained.
    pub fn syntax_prior(&self) -> Vec<f64> {
        use TokenKind::*;
        let v = self.len();
        let mut table = vec![0.0; (v + 1) * v];
        let is_word = |k: TokenKind| matches!(k, TokenKind::Color(_) | TokenKind::Shape(_) | TokenKind::Selector(_) | Filler(_));
        let is_coord = |k: TokenKind| matches!(k, Coord(_));
        for row in 0..=v {
            let prev = if row == v { None } else { Some(self.kinds[row]) };
            // (predicate, probability mass) pairs; leftovers spread over the rest
            let rules: Vec<(Box<dyn Fn(TokenKind) -> bool>, f64)> = match prev {
                None => vec![(Box::new(|k| k == ThinkOpen), 0.8), (Box::new(is_word), 0.1)],
                Some(ThinkOpen) => vec![(Box::new(is_word), 0.75), (Box::new(|k| k == ThinkClose), 0.15)],
                Some(k) if is_word(k) => vec![(Box::new(is_word), 0.6), (Box::new(|k| k == ThinkClose), 0.3)],
                Some(ThinkClose) => vec![(Box::new(|k| k == AnswerOpen), 0.85), (Box::new(is_word), 0.05)],
                Some(AnswerOpen) => vec![(Box::new(|k| k == BraceOpen), 0.8), (Box::new(|k| k == KeyBbox), 0.1)],
                Some(BraceOpen) => vec![
                    (Box::new(|k| k == KeyBbox), 0.8),
                    (Box::new(|k| matches!(k, KeyPoints1 | KeyPoints)), 0.1),
                ],
                Some(KeyBbox | KeyPoints1 | KeyPoints2 | KeyPoints) => {
                    vec![(Box::new(|k| k == BracketOpen), 0.8), (Box::new(is_coord), 0.15)]
                }
                Some(BracketOpen) => vec![(Box::new(is_coord), 0.9)],
                Some(Coord(_)) => vec![(Box::new(|k| k == Comma), 0.6), (Box::new(|k| k == BracketClose), 0.3)],
                Some(Comma) => vec![
                    (Box::new(is_coord), 0.6),
                    (Box::new(|k| matches!(k, KeyPoints1 | KeyPoints2)), 0.24),
                    (Box::new(|k| k == KeyPoints), 0.06),
                ],
                Some(BracketClose) => vec![(Box::new(|k| k == Comma), 0.55), (Box::new(|k| k == BraceClose), 0.35)],
                Some(BraceClose) => vec![(Box::new(|k| k == AnswerClose), 0.85)],
                Some(AnswerClose) => vec![(Box::new(|k| k == Eos), 0.7)],
                Some(_) => vec![],
            };
            let mut assigned = vec![false; v];
            let mut probs = vec![0.0; v];
            let mut used = 0.0;
            for (pred, mass) in &rules {
                let members: Vec<usize> = (0..v).filter(|&i| !assigned[i] && pred(self.kinds[i])).collect();
                for &i in &members {
                    probs[i] = mass / members.len() as f64;
                    assigned[i] = true;
                }
                used += mass;
            }
            let rest: Vec<usize> = (0..v).filter(|&i| !assigned[i]).collect();
            for &i in &rest {
                probs[i] = (1.0 - used) / rest.len() as f64;
            }
            for (i, p) in probs.iter().enumerate() {
                table[row * v + i] = p.ln();
            }
        }
        table
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_ids_are_dense() {
        let v = Vocabulary::standard();
        assert_eq!(v.len(), 14 + COORD_BINS + 19);
        for i in 0..v.len() {
            assert_eq!(v.id(v.kind(i)), i);
        }
    }

    #[test]
    fn canonical_round_trip() {
        let v = Vocabulary::standard();
        let s = "<think> find the largest red circle</think><answer>{\"bbox\":[105,205,315,425],\"points_1\":[205,305],\"points_2\":[215,315]}</answer>";
        let ids = v.encode(s).unwrap();
        assert_eq!(v.decode(&ids), s);
        assert!(v.encode("<think>?").is_err());
    }

    #[test]
    fn bins() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(9.99), 0);
        assert_eq!(bin_of(840.0), 83);
        assert_eq!(bin_center(83), 835.0);
    }

    #[test]
    fn prior_rows_are_distributions() {
        let v = Vocabulary::standard();
        let t = v.syntax_prior();
        for row in 0..=v.len() {
            let s: f64 = t[row * v.len()..(row + 1) * v.len()].iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12, "row {row}: {s}");
        }
    }
}
