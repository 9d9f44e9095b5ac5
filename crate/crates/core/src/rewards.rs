//! The five rule-based rewards and their composition.
//!
//! Two format rewards (reasoning layout, answer grammar) and three accuracy
//! rewards (box IoU, box L1, point L1). Accuracy rewards come in a
//! thresholded `hard` flavour and a continuous `soft` flavour.

use serde::{Deserialize, Serialize};

use crate::geometry::{bbox_iou, bbox_l1, point_in_bbox, point_l1, BBox, Point, FRAME_SIZE};
use crate::parser::{extract_prompt, parse_answer, FormatMode, ParsedResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMode {
    #[default]
    Hard,
    Soft,
}

/// Which box the predicted points must fall inside for the point reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointGate {
    #[default]
    PredictedBox,
    GroundTruthBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub format_mode: FormatMode,
    pub accuracy_mode: AccuracyMode,
    pub iou_threshold: f64,
    pub bbox_l1_threshold: f64,
    pub point_l1_threshold: f64,
    pub image_size: f64,
    pub point_gate: PointGate,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            format_mode: FormatMode::Strict,
            accuracy_mode: AccuracyMode::Hard,
            iou_threshold: 0.5,
            bbox_l1_threshold: 10.0,
            point_l1_threshold: 100.0,
            image_size: FRAME_SIZE,
            point_gate: PointGate::PredictedBox,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("iou_threshold", self.iou_threshold),
            ("bbox_l1_threshold", self.bbox_l1_threshold),
            ("point_l1_threshold", self.point_l1_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.image_size != FRAME_SIZE {
            return Err(format!("image_size must be {FRAME_SIZE}, got {}", self.image_size));
        }
        Ok(())
    }
}

/// Localization targets a response is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub p1: Point,
    pub p2: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardVector {
    pub thinking_format: f64,
    pub seg_format: f64,
    pub bbox_iou: f64,
    pub bbox_l1: f64,
    pub point_l1: f64,
    pub total: f64,
}

impl RewardVector {
    pub fn from_components(c: [f64; 5]) -> Self {
        Self {
            thinking_format: c[0],
            seg_format: c[1],
            bbox_iou: c[2],
            bbox_l1: c[3],
            point_l1: c[4],
            total: c.iter().sum(),
        }
    }

    pub fn components(&self) -> [f64; 5] {
        [
            self.thinking_format,
            self.seg_format,
            self.bbox_iou,
            self.bbox_l1,
            self.point_l1,
        ]
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn thinking_format_reward(r: &ParsedResponse) -> f64 {
    indicator(r.structure_valid && r.think.as_deref().is_some_and(|t| !t.trim().is_empty()))
}

pub fn seg_format_reward(answer: Option<&str>, mode: FormatMode) -> f64 {
    indicator(answer.is_some_and(|a| parse_answer(a, mode).is_ok()))
}

fn soft_distance(d: f64, image_size: f64) -> f64 {
    (1.0 - d / image_size).max(0.0)
}

pub fn bbox_iou_reward(pred: &BBox, gt: &BBox, mode: AccuracyMode, cfg: &RewardConfig) -> f64 {
    let iou = bbox_iou(pred, gt);
    match mode {
        AccuracyMode::Hard => indicator(iou > cfg.iou_threshold),
        AccuracyMode::Soft => iou,
    }
}

pub fn bbox_l1_reward(pred: &BBox, gt: &BBox, mode: AccuracyMode, cfg: &RewardConfig) -> f64 {
    let d = bbox_l1(pred, gt);
    match mode {
        AccuracyMode::Hard => indicator(d < cfg.bbox_l1_threshold),
        AccuracyMode::Soft => soft_distance(d, cfg.image_size),
    }
}

/// Smallest L1 distance over all four predicted/ground-truth point pairings.
pub fn min_point_distance(pred: [&Point; 2], gt: [&Point; 2]) -> f64 {
    pred.iter()
        .flat_map(|p| gt.iter().map(move |g| point_l1(p, g)))
        .fold(f64::INFINITY, f64::min)
}

pub fn point_l1_reward(
    pred: [&Point; 2],
    gate_box: &BBox,
    gt: [&Point; 2],
    mode: AccuracyMode,
    cfg: &RewardConfig,
) -> f64 {
    if !pred.iter().all(|p| point_in_bbox(p, gate_box)) {
        return 0.0;
    }
    let d = min_point_distance(pred, gt);
    match mode {
        AccuracyMode::Hard => indicator(d < cfg.point_l1_threshold),
        AccuracyMode::Soft => soft_distance(d, cfg.image_size),
    }
}

/// Scores one response. Accuracy terms are zero whenever no prompt could be
/// extracted, so totals stay comparable inside a rollout group.
pub fn score(response: &str, gt: &GroundTruth, cfg: &RewardConfig) -> RewardVector {
    let (parsed, prompt) = extract_prompt(response, cfg.format_mode);
    let thinking = thinking_format_reward(&parsed);
    let format = seg_format_reward(parsed.answer.as_deref(), cfg.format_mode);
    let Some(p) = prompt else {
        return RewardVector::from_components([thinking, format, 0.0, 0.0, 0.0]);
    };
    let mode = cfg.accuracy_mode;
    let gate = match cfg.point_gate {
        PointGate::PredictedBox => &p.bbox,
        PointGate::GroundTruthBox => &gt.bbox,
    };
    RewardVector::from_components([
        thinking,
        format,
        bbox_iou_reward(&p.bbox, &gt.bbox, mode, cfg),
        bbox_l1_reward(&p.bbox, &gt.bbox, mode, cfg),
        point_l1_reward([&p.p1, &p.p2], gate, [&gt.p1, &gt.p2], mode, cfg),
    ])
}
