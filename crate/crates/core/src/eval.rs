//! gIoU / cIoU benchmarking over a dataset for any prompt source.
//!
//! gIoU is the mean of per-image IoUs, cIoU the cumulative intersection over
//! the cumulative union.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::{DataError, GroundTruthRecord, TaskSample};
use crate::geometry::{BinaryMask, GeometryError};
use crate::parser::{extract_prompt, SegPrompt};
use crate::policy::{Policy, PolicyError, PolicyInput};
use crate::rewards::{score, RewardConfig, RewardVector};
use crate::segmenter::{SegBackend, SegmentError};
use crate::synth::{generate_scene, SynthId};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("pair {index}: {source}")]
    DimensionMismatch {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("record {id}: no synthetic scene can be rebuilt from this id")]
    NoScene { id: String },
    #[error("record {id}: {source}")]
    Segment {
        id: String,
        #[source]
        source: SegmentError,
    },
    #[error("record {id}: {source}")]
    Data {
        id: String,
        #[source]
        source: DataError,
    },
    #[error("record {id}: {source}")]
    Policy {
        id: String,
        #[source]
        source: PolicyError,
    },
    #[error("report: {0}")]
    Report(String),
}

fn counts(pairs: &[(BinaryMask, BinaryMask)]) -> Result<Vec<(u64, u64)>, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    pairs
        .iter()
        .enumerate()
        .map(|(index, (p, g))| {
            p.intersection_union(g)
                .map_err(|source| EvalError::DimensionMismatch { index, source })
        })
        .collect()
}

fn pair_iou(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean per-pair IoU of `(prediction, ground truth)` masks.
pub fn giou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64, EvalError> {
    let c = counts(pairs)?;
    Ok(c.iter().map(|&(i, u)| pair_iou(i, u)).sum::<f64>() / c.len() as f64)
}

/// Summed intersections over summed unions.
pub fn ciou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64, EvalError> {
    let c = counts(pairs)?;
    let (i, u) = c.iter().fold((0u64, 0u64), |(a, b), &(i, u)| (a + i, b + u));
    Ok(pair_iou(i, u))
}

/// Where responses come from.
pub enum PromptSource<'a> {
    /// Argmax decoding of a policy.
    Greedy(&'a Policy),
    /// Temperature sampling, seeded per record index.
    Sampled {
        policy: &'a Policy,
        temperature: f64,
        seed: u64,
    },
    /// Canonical responses built from each record's own targets.
    GroundTruth,
    /// Always the empty string.
    Empty,
}

impl PromptSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            PromptSource::Greedy(_) => "policy-greedy",
            PromptSource::Sampled { .. } => "policy-sampled",
            PromptSource::GroundTruth => "ground-truth",
            PromptSource::Empty => "empty",
        }
    }

    fn respond(&self, index: usize, record: &GroundTruthRecord) -> Result<String, EvalError> {
        let policy_err = |source| EvalError::Policy {
            id: record.id.clone(),
            source,
        };
        let input = || -> Result<PolicyInput, EvalError> {
            let sample = TaskSample::from_record(record).map_err(|source| EvalError::Data {
                id: record.id.clone(),
                source,
            })?;
            Ok(PolicyInput::for_sample(&sample))
        };
        Ok(match self {
            PromptSource::Greedy(p) => p.greedy(&input()?).map_err(policy_err)?.text,
            PromptSource::Sampled {
                policy,
                temperature,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
                policy.sample(&input()?, *temperature, &mut rng).map_err(policy_err)?.text
            }
            PromptSource::GroundTruth => SegPrompt {
                bbox: record.bbox,
                p1: record.p1,
                p2: record.p2,
            }
            .to_response(&format!(" {}", record.query_text)),
            PromptSource::Empty => String::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub iou: f64,
    pub intersection: u64,
    pub union: u64,
    pub rewards: RewardVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub rewards: RewardConfig,
    pub backend: SegBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub source: String,
    pub n: usize,
    pub giou: f64,
    pub ciou: f64,
    /// Means of thinking format, segmentation format, box IoU, box L1, point
    /// L1 and total reward.
    pub reward_means: [f64; 6],
    pub samples: Vec<SampleResult>,
    pub config: EvalConfig,
}

const SAMPLE_HEADER: [&str; 8] = [
    "id",
    "iou",
    "reward_think",
    "reward_format",
    "reward_iou",
    "reward_bbox_l1",
    "reward_point_l1",
    "reward_total",
];

/// Rebuilds the scene behind a synthetic record id.
fn scene_of(record: &GroundTruthRecord) -> Result<crate::synth::Scene, EvalError> {
    let id = SynthId::parse(&record.id).ok_or_else(|| EvalError::NoScene { id: record.id.clone() })?;
    generate_scene(id.scene_seed, id.n_objects).map_err(|e| EvalError::Data {
        id: record.id.clone(),
        source: e.into(),
    })
}

pub fn run_benchmark(
    dataset: &str,
    records: &[GroundTruthRecord],
    source: &PromptSource<'_>,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let mut samples = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let text = source.respond(index, record)?;
        let (_, prompt) = extract_prompt(&text, cfg.rewards.format_mode);
        let pred = match prompt {
            Some(p) => {
                let scene = scene_of(record)?;
                cfg.backend
                    .segment(&scene, &p.clamped())
                    .map_err(|source| EvalError::Segment {
                        id: record.id.clone(),
                        source,
                    })?
            }
            None => BinaryMask::new(record.mask.width(), record.mask.height()),
        };
        let (intersection, union) = pred
            .intersection_union(&record.mask)
            .map_err(|source| EvalError::DimensionMismatch { index, source })?;
        samples.push(SampleResult {
            id: record.id.clone(),
            iou: pair_iou(intersection, union),
            intersection,
            union,
            rewards: score(&text, &record.truth(), &cfg.rewards),
        });
    }
    Ok(EvalReport::from_samples(dataset, source.name(), samples, cfg.clone()))
}

impl EvalReport {
    pub fn from_samples(dataset: &str, source: &str, samples: Vec<SampleResult>, config: EvalConfig) -> Self {
        let n = samples.len();
        let giou = samples.iter().map(|s| s.iou).sum::<f64>() / n as f64;
        let (i, u) = samples
            .iter()
            .fold((0u64, 0u64), |(a, b), s| (a + s.intersection, b + s.union));
        let mut reward_means = [0.0; 6];
        for s in &samples {
            let c = s.rewards.components();
            for k in 0..5 {
                reward_means[k] += c[k];
            }
            reward_means[5] += s.rewards.total;
        }
        for m in &mut reward_means {
            *m /= n as f64;
        }
        Self {
            dataset: dataset.to_string(),
            source: source.to_string(),
            n,
            giou,
            ciou: pair_iou(i, u),
            reward_means,
            samples,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        serde_json::from_str(s).map_err(|e| EvalError::Report(e.to_string()))
    }

    /// One-row summary CSV.
    pub fn summary_csv(&self) -> String {
        let m = &self.reward_means;
        format!(
            "dataset,source,n,giou,ciou,reward_think,reward_format,reward_iou,reward_bbox_l1,reward_point_l1,reward_total\n\
             {},{},{},{},{},{},{},{},{},{},{}\n",
            self.dataset, self.source, self.n, self.giou, self.ciou, m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }

    /// Aligned text table of the headline numbers.
    pub fn table(&self) -> String {
        let rows = [
            ("dataset", self.dataset.clone()),
            ("source", self.source.clone()),
            ("samples", self.n.to_string()),
            ("gIoU", format!("{:.4}", self.giou)),
            ("cIoU", format!("{:.4}", self.ciou)),
            ("reward (total)", format!("{:.4}", self.reward_means[5])),
        ];
        let kw = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let vw = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<kw$}  {v:>vw$}");
        }
        out
    }

    pub fn write_samples_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(SAMPLE_HEADER)?;
        for s in &self.samples {
            let c = s.rewards.components();
            let mut row = vec![s.id.clone(), s.iou.to_string()];
            row.extend(c.iter().map(f64::to_string));
            row.push(s.rewards.total.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-sample rows read back from [`EvalReport::write_samples_csv`]:
/// id, IoU and the five reward components.
pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<(String, f64, RewardVector)>, EvalError> {
    let mut rd = csv::Reader::from_reader(r);
    let bad = |e: &dyn std::fmt::Display| EvalError::Report(e.to_string());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        if rec.len() != SAMPLE_HEADER.len() {
            return Err(EvalError::Report(format!("expected {} fields, got {}", SAMPLE_HEADER.len(), rec.len())));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(&e));
        let c = [num(2)?, num(3)?, num(4)?, num(5)?, num(6)?];
        out.push((rec[0].to_string(), num(1)?, RewardVector::from_components(c)));
    }
    Ok(out)
}
