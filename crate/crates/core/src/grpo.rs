//! Group relative policy optimisation.
//!
//! Each step draws a few inputs, samples a group of completions per input,
//! normalises rewards inside each group and takes one SGD step on the
//! clipped sequence-level surrogate with a KL penalty towards the frozen
//! initial policy.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::TaskSample;
use crate::policy::{Policy, PolicyError, PolicyInput, Rollout};
use crate::rewards::{score, RewardConfig, RewardVector};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step} (input {input})")]
    NonFiniteLoss { step: usize, input: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Completions sampled per input.
    pub group_size: usize,
    /// Inputs per step; the rollout budget is `group_size * batch_inputs`.
    pub batch_inputs: usize,
    /// Plain SGD step size. Billion-parameter models use around 1e-6; the
    /// toy policy needs a far larger step.
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub std_eps: f64,
    pub temperature: f64,
    /// Rescale the gradient to at most this L2 norm; 0 disables.
    pub max_grad_norm: f64,
    pub steps: usize,
    pub seed: u64,
    /// Evaluate every this many steps; 0 disables.
    pub eval_every: usize,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Copy the current policy into the reference every this many steps;
    /// 0 keeps the initial policy as reference throughout.
    pub ref_refresh_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            batch_inputs: 2,
            learning_rate: 0.02,
            weight_decay: 0.01,
            clip_eps: 0.2,
            kl_beta: 0.04,
            std_eps: 1e-4,
            temperature: 1.0,
            max_grad_norm: 0.0,
            steps: 2000,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            ref_refresh_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.batch_inputs == 0 {
            return bad("batch_inputs must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be finite and non-negative");
        }
        if !(self.std_eps > 0.0) {
            return bad("std_eps must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm must be non-negative");
        }
        Ok(())
    }
}

/// A set of prompts with a reward function.
pub trait Task {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn id(&self, i: usize) -> String;

    fn input(&self, i: usize) -> &PolicyInput;

    fn score(&self, i: usize, rollout: &Rollout) -> RewardVector;
}

/// Referring-segmentation prompts scored by the five rule-based rewards.
#[derive(Debug, Clone)]
pub struct SegTask {
    pub samples: Vec<TaskSample>,
    pub inputs: Vec<PolicyInput>,
    pub rewards: RewardConfig,
}

impl SegTask {
    pub fn new(samples: Vec<TaskSample>, rewards: RewardConfig) -> Self {
        let inputs = samples.iter().map(PolicyInput::for_sample).collect();
        Self {
            samples,
            inputs,
            rewards,
        }
    }
}

impl Task for SegTask {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn id(&self, i: usize) -> String {
        self.samples[i].id.clone()
    }

    fn input(&self, i: usize) -> &PolicyInput {
        &self.inputs[i]
    }

    fn score(&self, i: usize, rollout: &Rollout) -> RewardVector {
        score(&rollout.text, &self.samples[i].truth, &self.rewards)
    }
}

/// One context, a fixed correct token, reward 1 for choosing it. The reward
/// is reported in the box-IoU slot as the task's only accuracy term.
#[derive(Debug, Clone)]
pub struct BanditTask {
    pub correct: usize,
    input: PolicyInput,
}

impl BanditTask {
    pub fn new(correct: usize) -> Self {
        Self {
            correct,
            input: PolicyInput::plain(vec![1.0]),
        }
    }
}

impl Task for BanditTask {
    fn len(&self) -> usize {
        1
    }

    fn id(&self, _: usize) -> String {
        "bandit".into()
    }

    fn input(&self, _: usize) -> &PolicyInput {
        &self.input
    }

    fn score(&self, _: usize, rollout: &Rollout) -> RewardVector {
        let hit = rollout.tokens.first() == Some(&self.correct);
        RewardVector::from_components([0.0, 0.0, hit as u8 as f64, 0.0, 0.0])
    }
}

/// Group-normalised advantages with the population standard deviation.
pub fn compute_advantages(rewards: &[f64], std_eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    rewards.iter().map(|r| (r - mean) / (sd + std_eps)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub input: usize,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<RewardVector>,
    pub advantages: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub ref_log_probs: Vec<f64>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }
}

/// Loss terms of one group evaluated at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean of log pi - log pi_ref over the group's sequences.
    pub kl: f64,
}

/// Clipped surrogate plus KL penalty for one group, with its gradient.
pub fn grpo_objective(
    group: &RolloutGroup,
    input: &PolicyInput,
    policy: &Policy,
    clip_eps: f64,
    kl_beta: f64,
) -> Result<Objective, PolicyError> {
    let g = group.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    for i in 0..group.len() {
        let tokens = &group.rollouts[i].tokens;
        let new = policy.log_prob(input, tokens)?;
        let a = group.advantages[i];
        let ratio = (new - group.old_log_probs[i]).exp();
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
        surrogate += unclipped.min(clipped);
        kl += new - group.ref_log_probs[i];
        // d loss / d log pi(seq_i)
        let mut coef = kl_beta / g;
        if unclipped <= clipped {
            coef -= unclipped / g;
        }
        if coef != 0.0 {
            policy.accumulate_grad(input, tokens, coef, &mut grad)?;
        }
    }
    Ok(Objective {
        loss: -surrogate / g + kl_beta * kl / g,
        grad,
        kl: kl / g,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub reward_total: f64,
    pub reward_think: f64,
    pub reward_format: f64,
    pub reward_iou: f64,
    pub reward_bbox_l1: f64,
    pub reward_point_l1: f64,
    pub len_mean: f64,
    pub len_min: f64,
    pub kl: f64,
    pub loss: f64,
}

pub const LOG_HEADER: [&str; 11] = [
    "step",
    "reward_total",
    "reward_think",
    "reward_format",
    "reward_iou",
    "reward_bbox_l1",
    "reward_point_l1",
    "len_mean",
    "len_min",
    "kl",
    "loss",
];

/// The training log as CSV with the fixed header.
pub fn write_log<W: Write>(w: W, rows: &[LogRow]) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(LOG_HEADER)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log<R: std::io::Read>(r: R) -> csv::Result<Vec<LogRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Training state: current and reference policies plus the sampling stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub policy: Policy,
    pub reference: Policy,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, policy: Policy) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            reference: policy.clone(),
            policy,
            cfg,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Samples and scores one group for input `i` at the current parameters.
    pub fn sample_group<T: Task + ?Sized>(&mut self, task: &T, i: usize) -> Result<RolloutGroup, TrainError> {
        let input = task.input(i);
        let mut rollouts = Vec::with_capacity(self.cfg.group_size);
        for _ in 0..self.cfg.group_size {
            let mut rng = ChaCha8Rng::seed_from_u64(self.rng.random());
            rollouts.push(self.policy.sample(input, self.cfg.temperature, &mut rng)?);
        }
        let rewards: Vec<RewardVector> = rollouts.iter().map(|r| task.score(i, r)).collect();
        let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
        let ref_log_probs = rollouts
            .iter()
            .map(|r| self.reference.log_prob(input, &r.tokens))
            .collect::<Result<_, _>>()?;
        Ok(RolloutGroup {
            input: i,
            advantages: compute_advantages(&totals, self.cfg.std_eps),
            old_log_probs: rollouts.iter().map(|r| r.log_prob).collect(),
            ref_log_probs,
            rollouts,
            rewards,
        })
    }

    pub fn train_step<T: Task + ?Sized>(&mut self, task: &T) -> Result<LogRow, TrainError> {
        let b = self.cfg.batch_inputs.min(task.len());
        if b == 0 {
            return Err(TrainError::Config("empty task".into()));
        }
        let picks = sample_indices(&mut self.rng, task.len(), b).into_vec();
        let mut groups = Vec::with_capacity(b);
        for &i in &picks {
            groups.push(self.sample_group(task, i)?);
        }

        let mut grad = vec![0.0; self.policy.num_params()];
        let mut loss = 0.0;
        let mut kl = 0.0;
        for g in &groups {
            let obj = grpo_objective(g, task.input(g.input), &self.policy, self.cfg.clip_eps, self.cfg.kl_beta)?;
            if !obj.loss.is_finite() || obj.grad.iter().any(|x| !x.is_finite()) {
                log::error!("non-finite loss on input {} at step {}", task.id(g.input), self.step);
                return Err(TrainError::NonFiniteLoss {
                    step: self.step,
                    input: task.id(g.input),
                });
            }
            loss += obj.loss / b as f64;
            kl += obj.kl / b as f64;
            grad.iter_mut().zip(&obj.grad).for_each(|(a, x)| *a += x / b as f64);
        }
        self.apply(&mut grad);
        let row = summarize(self.step, &groups, kl, loss);
        self.step += 1;
        if self.cfg.ref_refresh_every > 0 && self.step % self.cfg.ref_refresh_every == 0 {
            self.reference = self.policy.clone();
        }
        Ok(row)
    }

    fn apply(&mut self, grad: &mut [f64]) {
        if self.cfg.max_grad_norm > 0.0 {
            let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > self.cfg.max_grad_norm {
                let k = self.cfg.max_grad_norm / norm;
                grad.iter_mut().for_each(|x| *x *= k);
            }
        }
        let (lr, wd) = (self.cfg.learning_rate, self.cfg.weight_decay);
        for (p, g) in self.policy.params.iter_mut().zip(grad.iter()) {
            *p -= lr * (g + wd * *p);
        }
    }
}

fn summarize(step: usize, groups: &[RolloutGroup], kl: f64, loss: f64) -> LogRow {
    let rewards: Vec<&RewardVector> = groups.iter().flat_map(|g| &g.rewards).collect();
    let lens: Vec<f64> = groups.iter().flat_map(|g| g.rollouts.iter().map(|r| r.len() as f64)).collect();
    let n = rewards.len() as f64;
    let mut c = [0.0; 5];
    for r in &rewards {
        for (a, x) in c.iter_mut().zip(r.components()) {
            *a += x / n;
        }
    }
    LogRow {
        step,
        reward_total: rewards.iter().map(|r| r.total).sum::<f64>() / n,
        reward_think: c[0],
        reward_format: c[1],
        reward_iou: c[2],
        reward_bbox_l1: c[3],
        reward_point_l1: c[4],
        len_mean: lens.iter().sum::<f64>() / n,
        len_min: lens.iter().copied().fold(f64::INFINITY, f64::min),
        kl,
        loss,
    }
}

/// Files written by [`train`] when given an output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn log(&self) -> PathBuf {
        self.dir.join("train_log.csv")
    }

    pub fn eval_log(&self) -> PathBuf {
        self.dir.join("eval_log.csv")
    }

    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_{step:06}.json"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub giou: f64,
    pub ciou: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub log: Vec<LogRow>,
    pub evals: Vec<EvalPoint>,
}

/// Runs `cfg.steps` steps from `init`. With `out`, the log is streamed to
/// disk and checkpoints are written; `evaluate` is called every
/// `cfg.eval_every` steps and after the last one.
pub fn train<T: Task + ?Sized>(
    cfg: &TrainConfig,
    task: &T,
    init: Policy,
    out: Option<&RunPaths>,
    mut evaluate: Option<&mut dyn FnMut(&Policy) -> Result<(f64, f64), TrainError>>,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(cfg.clone(), init)?;
    let mut log_file = match out {
        Some(p) => {
            fs::create_dir_all(&p.dir).map_err(io_err(&p.dir))?;
            let path = p.log();
            let file = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            w.write_record(LOG_HEADER).map_err(|e| csv_io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let mut log = Vec::with_capacity(cfg.steps);
    let mut evals = Vec::new();
    let mut run_eval = |step: usize, policy: &Policy, evals: &mut Vec<EvalPoint>| -> Result<(), TrainError> {
        if let Some(f) = evaluate.as_mut() {
            let (giou, ciou) = f(policy)?;
            log::info!("step {step}: gIoU {giou:.4} cIoU {ciou:.4}");
            evals.push(EvalPoint { step, giou, ciou });
        }
        Ok(())
    };
    for _ in 0..cfg.steps {
        let row = trainer.train_step(task)?;
        if row.step % 50 == 0 {
            log::info!(
                "step {}: reward {:.3} format {:.3} iou {:.3} len {:.1}",
                row.step,
                row.reward_total,
                row.reward_format,
                row.reward_iou,
                row.len_mean
            );
        }
        if let Some((w, path)) = log_file.as_mut() {
            w.serialize(&row).map_err(|e| csv_io(path, e))?;
            w.flush().map_err(io_err(path))?;
        }
        log.push(row);
        let done = trainer.steps_done();
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.steps {
            run_eval(done, &trainer.policy, &mut evals)?;
        }
        if let Some(p) = out {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                trainer.policy.save(&p.checkpoint(done))?;
            }
        }
    }
    run_eval(trainer.steps_done(), &trainer.policy, &mut evals)?;
    if let Some(p) = out {
        trainer.policy.save(&p.final_checkpoint())?;
        if !evals.is_empty() {
            let path = p.eval_log();
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
            for e in &evals {
                w.serialize(e).map_err(|e| csv_io(&path, e))?;
            }
            w.flush().map_err(io_err(&path))?;
        }
    }
    Ok(TrainOutcome {
        policy: trainer.policy,
        log,
        evals,
    })
}

fn csv_io(path: &Path, e: csv::Error) -> TrainError {
    TrainError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}
