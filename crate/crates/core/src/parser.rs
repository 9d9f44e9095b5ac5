//! Response post-processing: validates the `<think>…</think><answer>…</answer>`
//! layout and pulls a [`SegPrompt`] out of the answer block.
//!
//! The canonical answer grammar is a single JSON object
//!
//! ```text
//! {"bbox":[x1,y1,x2,y2],"points_1":[x,y],"points_2":[x,y]}
//! ```
//!
//! with keys in any order, integer or decimal numerals, no exponents and no
//! extra keys. The soft grammar only asks for a `bbox` keyword followed by
//! four numbers and `points` keywords followed by two pairs.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Point, FRAME_SIZE};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub think: Option<String>,
    pub answer: Option<String>,
    pub structure_valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegPrompt {
    pub bbox: BBox,
    pub p1: Point,
    pub p2: Point,
}

impl SegPrompt {
    /// Canonical strict-grammar rendering.
    pub fn to_answer(&self) -> String {
        let b = self.bbox;
        format!(
            "{{\"bbox\":[{},{},{},{}],\"points_1\":[{},{}],\"points_2\":[{},{}]}}",
            b.x1, b.y1, b.x2, b.y2, self.p1.x, self.p1.y, self.p2.x, self.p2.y
        )
    }

    /// Full canonical response with the given reasoning text.
    pub fn to_response(&self, think: &str) -> String {
        format!("{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{}{ANSWER_CLOSE}", self.to_answer())
    }

    /// Clamps every coordinate into the frame and orders the box corners.
    pub fn clamped(&self) -> SegPrompt {
        let c = |v: f64| v.clamp(0.0, FRAME_SIZE);
        let b = self.bbox;
        SegPrompt {
            bbox: BBox::from_corners(c(b.x1), c(b.y1), c(b.x2), c(b.y2)),
            p1: Point::new(c(self.p1.x), c(self.p1.y)),
            p2: Point::new(c(self.p2.x), c(self.p2.y)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatViolation {
    NotJson,
    MissingKey,
    ExtraKey,
    ArityError,
    NonNumeric,
    CountMismatch,
    NoKeywords,
}

impl fmt::Display for FormatViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormatViolation::NotJson => "not_json",
            FormatViolation::MissingKey => "missing_key",
            FormatViolation::ExtraKey => "extra_key",
            FormatViolation::ArityError => "arity_error",
            FormatViolation::NonNumeric => "non_numeric",
            FormatViolation::CountMismatch => "count_mismatch",
            FormatViolation::NoKeywords => "no_keywords",
        };
        f.write_str(s)
    }
}

impl std::error::Error for FormatViolation {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FormatMode {
    Soft,
    #[default]
    Strict,
}

fn is_blank(s: &str) -> bool {
    s.chars().all(char::is_whitespace)
}

/// Splits a response into its reasoning and answer blocks.
///
/// Never fails. The blocks are filled whenever an opening tag has a matching
/// closing tag after it, even if the overall layout is invalid.
pub fn parse_response(text: &str) -> ParsedResponse {
    let block = |open: &str, close: &str| -> Option<(usize, usize)> {
        let start = text.find(open)? + open.len();
        let len = text[start..].find(close)?;
        Some((start, start + len))
    };
    let think_span = block(THINK_OPEN, THINK_CLOSE);
    let answer_span = block(ANSWER_OPEN, ANSWER_CLOSE);
    let think = think_span.map(|(a, b)| text[a..b].to_string());
    let answer = answer_span.map(|(a, b)| text[a..b].to_string());

    let once = |tag: &str| text.matches(tag).count() == 1;
    let structure_valid = match (think_span, answer_span) {
        (Some((ts, te)), Some((as_, ae))) => {
            [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE]
                .iter()
                .all(|t| once(t))
                && te < as_
                && is_blank(&text[..ts - THINK_OPEN.len()])
                && is_blank(&text[te + THINK_CLOSE.len()..as_ - ANSWER_OPEN.len()])
                && is_blank(&text[ae + ANSWER_CLOSE.len()..])
        }
        _ => false,
    };
    ParsedResponse {
        think,
        answer,
        structure_valid,
    }
}

/// Object entries in document order, duplicates preserved.
struct Entries(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
            fn visit_seq<A: de::SeqAccess<'de>>(self, _: A) -> Result<Entries, A::Error> {
                Err(de::Error::custom("not an object"))
            }
        }
        d.deserialize_any(V)
    }
}

fn exponent_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[0-9.][eE][+-]?[0-9]").unwrap())
}

fn numbers_of(value: &serde_json::Value, arity: usize) -> Result<Vec<f64>, FormatViolation> {
    let arr = value.as_array().ok_or(FormatViolation::NonNumeric)?;
    let nums = arr
        .iter()
        .map(|v| v.as_f64().ok_or(FormatViolation::NonNumeric))
        .collect::<Result<Vec<_>, _>>()?;
    if nums.len() != arity {
        return Err(FormatViolation::ArityError);
    }
    Ok(nums)
}

/// Strict grammar: exactly the canonical JSON object.
pub fn parse_answer_strict(answer: &str) -> Result<SegPrompt, FormatViolation> {
    let Entries(entries) =
        serde_json::from_str::<Entries>(answer.trim()).map_err(|_| FormatViolation::NotJson)?;
    const KEYS: [&str; 3] = ["bbox", "points_1", "points_2"];
    let lookup = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, v)| v);
    if KEYS.iter().any(|k| lookup(k).is_none()) {
        return Err(FormatViolation::MissingKey);
    }
    if entries.len() != KEYS.len() {
        return Err(FormatViolation::ExtraKey);
    }
    if exponent_re().is_match(answer) {
        return Err(FormatViolation::NonNumeric);
    }
    let b = numbers_of(lookup("bbox").unwrap(), 4)?;
    let p1 = numbers_of(lookup("points_1").unwrap(), 2)?;
    let p2 = numbers_of(lookup("points_2").unwrap(), 2)?;
    Ok(SegPrompt {
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
        p1: Point::new(p1[0], p1[1]),
        p2: Point::new(p2[0], p2[1]),
    })
}

fn key_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)[a-z_]*(bbox|points)[a-z0-9_]*").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?").unwrap())
}

fn numbers_in(segment: &str) -> Vec<f64> {
    number_re()
        .find_iter(segment)
        .filter(|m| {
            segment[..m.start()]
                .chars()
                .next_back()
                .is_none_or(|c| !(c.is_ascii_alphanumeric() || c == '_'))
        })
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .collect()
}

/// Soft grammar: keyword presence plus the right number of coordinates.
pub fn parse_answer_soft(answer: &str) -> Result<SegPrompt, FormatViolation> {
    let keys: Vec<_> = key_re().captures_iter(answer).collect();
    if keys.is_empty() {
        return Err(FormatViolation::NoKeywords);
    }
    let mut bbox_nums = Vec::new();
    // (ordinal suffix, numbers) per points key
    let mut point_groups: Vec<(u32, Vec<f64>)> = Vec::new();
    for (i, cap) in keys.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let end = keys
            .get(i + 1)
            .map_or(answer.len(), |c| c.get(0).unwrap().start());
        let nums = numbers_in(&answer[whole.end()..end]);
        if cap[1].eq_ignore_ascii_case("bbox") {
            bbox_nums.extend(nums);
        } else {
            let ordinal = whole
                .as_str()
                .rsplit(|c: char| !c.is_ascii_digit())
                .next()
                .and_then(|d| d.parse().ok())
                .unwrap_or(0);
            point_groups.push((ordinal, nums));
        }
    }
    point_groups.sort_by_key(|(o, _)| *o);
    let points_ok = point_groups.iter().all(|(_, n)| n.len() == 2 || n.len() == 4);
    let point_nums: Vec<f64> = point_groups.into_iter().flat_map(|(_, n)| n).collect();
    if bbox_nums.len() != 4 || point_nums.len() != 4 || !points_ok {
        return Err(FormatViolation::CountMismatch);
    }
    Ok(SegPrompt {
        bbox: BBox::new(bbox_nums[0], bbox_nums[1], bbox_nums[2], bbox_nums[3]),
        p1: Point::new(point_nums[0], point_nums[1]),
        p2: Point::new(point_nums[2], point_nums[3]),
    })
}

pub fn parse_answer(answer: &str, mode: FormatMode) -> Result<SegPrompt, FormatViolation> {
    match mode {
        FormatMode::Soft => parse_answer_soft(answer),
        FormatMode::Strict => parse_answer_strict(answer),
    }
}

/// The post-processing map from raw response text to a localization prompt.
///
/// A prompt is returned only for structurally valid responses whose answer
/// parses under `mode`; its coordinates are clamped into the frame.
pub fn extract_prompt(text: &str, mode: FormatMode) -> (ParsedResponse, Option<SegPrompt>) {
    let parsed = parse_response(text);
    let prompt = if parsed.structure_valid {
        parsed
            .answer
            .as_deref()
            .and_then(|a| parse_answer(a, mode).ok())
            .map(|p| p.clamped())
    } else {
        None
    };
    (parsed, prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CANON: &str = r#"{"bbox":[10,20,110,220],"points_1":[50,60],"points_2":[70,80]}"#;

    #[test]
    fn response_layouts() {
        let r = parse_response("<think>a</think><answer>b</answer>");
        assert!(r.structure_valid);
        assert_eq!(r.think.as_deref(), Some("a"));
        assert_eq!(r.answer.as_deref(), Some("b"));

        let r = parse_response("<answer>b</answer>");
        assert!(!r.structure_valid);
        assert_eq!(r.answer.as_deref(), Some("b"));

        assert!(!parse_response("<think>a</think><answer>b</answer>junk").structure_valid);
        assert!(parse_response("  <think>a</think>\n <answer>b</answer>\n").structure_valid);
        assert!(!parse_response("x<think>a</think><answer>b</answer>").structure_valid);
        assert!(!parse_response("<answer>b</answer><think>a</think>").structure_valid);
        assert!(!parse_response("<think>a</think>x<answer>b</answer>").structure_valid);
        assert!(!parse_response("<think><think>a</think><answer>b</answer>").structure_valid);
        assert!(!parse_response("<THINK>a</THINK><answer>b</answer>").structure_valid);
        assert!(!parse_response("").structure_valid);
    }

    #[test]
    fn strict_canonical() {
        let p = parse_answer_strict(CANON).unwrap();
        assert_eq!(p.bbox, BBox::new(10., 20., 110., 220.));
        assert_eq!(p.p1, Point::new(50., 60.));
        assert_eq!(p.p2, Point::new(70., 80.));
        let reordered = r#"{"points_2":[70,80],"bbox":[10,20,110,220],"points_1":[50,60]}"#;
        assert_eq!(parse_answer_strict(reordered).unwrap(), p);
    }

    #[test]
    fn strict_violations() {
        use FormatViolation::*;
        let cases = [
            (r#"{"bbox":[10,20,110,220],"points":[50,60]}"#, MissingKey),
            (r#"{"bbox":[10,20,110],"points_1":[50,60],"points_2":[70,80]}"#, ArityError),
            (r#"{"bbox":[10,20,110,220],"points_1":[50,60],"points_2":[70,80],"x":1}"#, ExtraKey),
            (r#"{"bbox":[10,20,110,220],"points_1":[50,60],"points_2":[70,80],"bbox":[1,2,3,4]}"#, ExtraKey),
            (r#"{"bbox":[10,"a",110,220],"points_1":[50,60],"points_2":[70,80]}"#, NonNumeric),
            (r#"{"bbox":[1e2,20,110,220],"points_1":[50,60],"points_2":[70,80]}"#, NonNumeric),
            (r#"{"bbox":5,"points_1":[50,60],"points_2":[70,80]}"#, NonNumeric),
            ("bbox: 1 2 3 4", NotJson),
            ("[1,2,3]", NotJson),
            (r#"{"bbox":[10,20,110,220],"points_1":[50,60],"points_2":[70,80]} x"#, NotJson),
        ];
        for (text, want) in cases {
            assert_eq!(parse_answer_strict(text), Err(want), "{text}");
        }
    }

    #[test]
    fn soft_examples() {
        let p = parse_answer_soft("bbox: (10, 20, 110, 220); points: (50,60) and (70,80)").unwrap();
        assert_eq!(p.bbox, BBox::new(10., 20., 110., 220.));
        assert_eq!(p.p2, Point::new(70., 80.));
        assert_eq!(parse_answer_soft("bbox: 10 20"), Err(FormatViolation::CountMismatch));
        assert_eq!(parse_answer_soft("the object is left"), Err(FormatViolation::NoKeywords));
        // keyword digits are not coordinates
        let p = parse_answer_soft(r#""bbox":5,15,25,35,"points_1":45,55,"points_2":65,75"#).unwrap();
        assert_eq!(p.p1, Point::new(45., 55.));
    }

    #[test]
    fn extraction_clamps_and_requires_structure() {
        let text = SegPrompt {
            bbox: BBox::new(10., 20., 900., 220.),
            p1: Point::new(50., 60.),
            p2: Point::new(-3., 80.),
        }
        .to_response("r");
        let (parsed, prompt) = extract_prompt(&text, FormatMode::Strict);
        assert!(parsed.structure_valid);
        let prompt = prompt.unwrap();
        assert_eq!(prompt.bbox.x2, 840.0);
        assert_eq!(prompt.p2.x, 0.0);

        let (parsed, prompt) = extract_prompt("<think>r</think><answer>{oops}</answer>", FormatMode::Strict);
        assert!(parsed.structure_valid);
        assert!(prompt.is_none());
        let (_, prompt) = extract_prompt(&format!("<answer>{CANON}</answer>"), FormatMode::Soft);
        assert!(prompt.is_none());
    }

    fn arb_prompt() -> impl Strategy<Value = SegPrompt> {
        let c = || (0u32..=8400).prop_map(|v| v as f64 / 10.0);
        (c(), c(), c(), c(), c(), c(), c(), c()).prop_map(|(a, b, cc, d, e, f, g, h)| SegPrompt {
            bbox: BBox::from_corners(a, b, cc, d),
            p1: Point::new(e, f),
            p2: Point::new(g, h),
        })
    }

    proptest! {
        #[test]
        fn strict_round_trip_and_subset(p in arb_prompt()) {
            let answer = p.to_answer();
            let strict = parse_answer_strict(&answer).unwrap();
            prop_assert_eq!(strict, p);
            prop_assert_eq!(parse_answer_soft(&answer).unwrap(), strict);
        }

        #[test]
        fn parse_response_is_total(s in ".{0,200}") {
            let r = parse_response(&s);
            if r.structure_valid {
                prop_assert!(r.think.is_some() && r.answer.is_some());
            }
        }

        #[test]
        fn tag_soup_never_panics(parts in proptest::collection::vec(
            prop_oneof![Just("<think>"), Just("</think>"), Just("<answer>"), Just("</answer>"), Just("x"), Just(" ")], 0..12)) {
            let s: String = parts.concat();
            let _ = extract_prompt(&s, FormatMode::Soft);
            let _ = extract_prompt(&s, FormatMode::Strict);
        }
    }
}
