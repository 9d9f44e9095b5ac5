//! Autoregressive token policy.
//!
//! A small Elman recurrent network. Each step sees the previous token's
//! embedding, a static context vector (query plus scene summary) and, for
//! grounded policies, the incremental features of [`Grounding`]. Logits add
//! a learned bigram table, a direct feature path and a scaled coordinate
//! suggestion to the recurrent readout.
//!
//! All parameters live in one flat vector so the optimiser and checkpoints
//! can treat them uniformly. Gradients are exact backpropagation through time.

pub mod grounding;
pub mod vocab;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::TaskSample;
use crate::synth::{Constraints, ObjectSummary, FEATURE_LEN, MAX_OBJECTS};

pub use grounding::{Grounding, GROUNDING_DIM};
pub use vocab::{TokenKind, Vocabulary};

/// Per-object slot width of the scene summary.
pub const OBJECT_SLOT: usize = 13;
pub const SEG_STATIC_DIM: usize = FEATURE_LEN + MAX_OBJECTS * OBJECT_SLOT;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot tokenize text starting at {0:?}")]
    Untokenizable(String),
    #[error("token {token} outside a vocabulary of {vocab}")]
    UnknownToken { token: usize, vocab: usize },
    #[error("expected {expected} static features, got {got}")]
    FeatureLength { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, spec needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("sequence of {got} tokens exceeds the limit of {max}")]
    TooLong { got: usize, max: usize },
    #[error("end token before the last position")]
    EosNotLast,
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub static_dim: usize,
    pub max_len: usize,
    /// Token that ends a sequence; without one every sequence runs to `max_len`.
    pub eos: Option<usize>,
    /// Whether the grounding features and coordinate suggestion are wired in.
    /// Requires the standard vocabulary.
    pub grounded: bool,
}

impl NetSpec {
    pub fn segmentation() -> Self {
        Self {
            vocab: Vocabulary::standard().len(),
            embed: 16,
            hidden: 64,
            static_dim: SEG_STATIC_DIM,
            max_len: 96,
            eos: Some(Vocabulary::standard().eos()),
            grounded: true,
        }
    }

    /// Single-token choice among `actions` with no context.
    pub fn bandit(actions: usize) -> Self {
        Self {
            vocab: actions,
            embed: 2,
            hidden: 2,
            static_dim: 1,
            max_len: 1,
            eos: None,
            grounded: false,
        }
    }

    pub fn dynamic_dim(&self) -> usize {
        if self.grounded {
            GROUNDING_DIM
        } else {
            0
        }
    }

    pub fn num_params(&self) -> usize {
        Layout::new(self).total
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    v: usize,
    e: usize,
    h: usize,
    s: usize,
    d: usize,
    emb: usize,
    w_e: usize,
    w_s: usize,
    w_d: usize,
    w_h: usize,
    b_h: usize,
    w_o: usize,
    b_o: usize,
    bigram: usize,
    w_do: usize,
    alpha: usize,
    total: usize,
}

impl Layout {
    fn new(spec: &NetSpec) -> Self {
        let (v, e, h, s, d) = (spec.vocab, spec.embed, spec.hidden, spec.static_dim, spec.dynamic_dim());
        let emb = 0;
        let w_e = emb + (v + 1) * e;
        let w_s = w_e + h * e;
        let w_d = w_s + h * s;
        let w_h = w_d + h * d;
        let b_h = w_h + h * h;
        let w_o = b_h + h;
        let b_o = w_o + v * h;
        let bigram = b_o + v;
        let w_do = bigram + (v + 1) * v;
        let alpha = w_do + v * d;
        Self {
            v,
            e,
            h,
            s,
            d,
            emb,
            w_e,
            w_s,
            w_d,
            w_h,
            b_h,
            w_o,
            b_o,
            bigram,
            w_do,
            alpha,
            total: alpha + 1,
        }
    }
}

/// Initialisation options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Half-width of the uniform weight distribution.
    pub scale: f64,
    /// Seed the bigram table with the vocabulary's syntax prior.
    pub syntax_prior: bool,
    /// Starting weight of the coordinate suggestion.
    pub suggestion_weight: f64,
    /// Logit bonus for the token classes the canonical layout expects next.
    pub layout_bonus: f64,
    /// Logit bonus for naming query attributes not yet mentioned.
    pub echo_weight: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            scale: 0.08,
            syntax_prior: true,
            suggestion_weight: 5.0,
            layout_bonus: 7.0,
            echo_weight: 2.0,
        }
    }
}

/// What the policy conditions on for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub features: Vec<f64>,
    /// Scene objects for the grounding features; ignored by ungrounded nets.
    pub objects: Vec<ObjectSummary>,
}

impl PolicyInput {
    pub fn plain(features: Vec<f64>) -> Self {
        Self {
            features,
            objects: Vec::new(),
        }
    }

    /// Query features followed by a fixed-width summary of up to
    /// [`MAX_OBJECTS`] objects.
    pub fn for_sample(sample: &TaskSample) -> Self {
        let mut f = vec![0.0; SEG_STATIC_DIM];
        let n = sample.query_features.len().min(FEATURE_LEN);
        f[..n].copy_from_slice(&sample.query_features[..n]);
        for (i, o) in sample.objects.iter().take(MAX_OBJECTS).enumerate() {
            let slot = &mut f[FEATURE_LEN + i * OBJECT_SLOT..FEATURE_LEN + (i + 1) * OBJECT_SLOT];
            slot[o.color.index()] = 1.0;
            slot[6 + o.shape.index()] = 1.0;
            slot[9] = o.size / 200.0;
            slot[10] = o.center.x / crate::geometry::FRAME_SIZE;
            slot[11] = o.center.y / crate::geometry::FRAME_SIZE;
            slot[12] = o.visible_area as f64 / (o.size * o.size).max(1.0);
        }
        Self {
            features: f,
            objects: sample.objects.clone(),
        }
    }
}

/// One sampled completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Sampled tokens, including the terminating end token if one was drawn.
    pub tokens: Vec<usize>,
    /// Per-token log-probabilities under the temperature-one policy.
    pub token_log_probs: Vec<f64>,
    /// Sequence log-probability, the sum of `token_log_probs`.
    pub log_prob: f64,
    pub text: String,
    pub truncated: bool,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Activations kept for backpropagation.
struct Trace {
    prev: Vec<usize>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    dynamic: Vec<f64>,
    /// d log p(y_t) / d alpha at each step.
    suggestion_grad: Vec<f64>,
    token_log_probs: Vec<f64>,
    log_prob: f64,
}

/// Per-step scratch buffers.
struct Scratch {
    dynamic: Vec<f64>,
    suggestion: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub spec: NetSpec,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    spec: NetSpec,
    params: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "segzero-policy-v1";

fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - z;
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_into(logits, &mut out);
    out.iter_mut().for_each(|x| *x = x.exp());
    out
}

fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yr;
        }
    }
}

fn outer_add(g: &mut [f64], rows: usize, cols: usize, y: &[f64], x: &[f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (o, a) in row.iter_mut().zip(x) {
            *o += yr * a;
        }
    }
}

impl Policy {
    pub fn zeros(spec: NetSpec) -> Self {
        let n = spec.num_params();
        Self {
            spec,
            params: vec![0.0; n],
        }
    }

    pub fn init(spec: NetSpec, seed: u64, cfg: &InitConfig) -> Self {
        let mut p = Self::zeros(spec);
        let l = p.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, w) in p.params.iter_mut().enumerate() {
            let is_bias = (l.b_h..l.b_h + l.h).contains(&i) || (l.b_o..l.bigram).contains(&i);
            if !is_bias && i < l.bigram {
                *w = rng.random_range(-cfg.scale..=cfg.scale);
            }
        }
        if cfg.syntax_prior && p.spec.grounded {
            let prior = Vocabulary::standard().syntax_prior();
            p.params[l.bigram..l.bigram + prior.len()].copy_from_slice(&prior);
        }
        if p.spec.grounded {
            p.params[l.alpha] = cfg.suggestion_weight;
            let prior = grounding::layout_prior(cfg.layout_bonus);
            for (token, feature, w) in prior.into_iter().chain(grounding::echo_prior(cfg.echo_weight)) {
                p.params[l.w_do + token * l.d + feature] += w;
            }
        }
        p
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self, PolicyError> {
        let expected = spec.num_params();
        if params.len() != expected {
            return Err(PolicyError::ParamLength {
                expected,
                got: params.len(),
            });
        }
        Ok(Self { spec, params })
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.spec)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, input: &PolicyInput) -> Result<(), PolicyError> {
        if input.features.len() != self.spec.static_dim {
            return Err(PolicyError::FeatureLength {
                expected: self.spec.static_dim,
                got: input.features.len(),
            });
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), PolicyError> {
        if tokens.len() > self.spec.max_len {
            return Err(PolicyError::TooLong {
                got: tokens.len(),
                max: self.spec.max_len,
            });
        }
        if let Some(eos) = self.spec.eos {
            if tokens.iter().rev().skip(1).any(|&t| t == eos) {
                return Err(PolicyError::EosNotLast);
            }
        }
        match tokens.iter().find(|&&t| t >= self.spec.vocab) {
            Some(&token) => Err(PolicyError::UnknownToken {
                token,
                vocab: self.spec.vocab,
            }),
            None => Ok(()),
        }
    }

    fn scratch(&self) -> Scratch {
        let l = self.layout();
        Scratch {
            dynamic: vec![0.0; l.d],
            suggestion: vec![0.0; if self.spec.grounded { l.v } else { 0 }],
            hidden: vec![0.0; l.h],
            logits: vec![0.0; l.v],
        }
    }

    /// Static context projected into the hidden pre-activation, bias included.
    fn static_projection(&self, l: &Layout, features: &[f64]) -> Vec<f64> {
        let mut out = self.params[l.b_h..l.b_h + l.h].to_vec();
        matvec_add(&self.params[l.w_s..l.w_s + l.h * l.s], l.h, l.s, features, &mut out);
        out
    }

    /// Advances one step. `s.dynamic` and `s.suggestion` must already hold
    /// this step's grounding; fills `s.hidden` and `s.logits`.
    fn step(&self, l: &Layout, sproj: &[f64], prev: usize, h_prev: &[f64], s: &mut Scratch) {
        let p = &self.params;
        s.hidden.copy_from_slice(sproj);
        let emb = &p[l.emb + prev * l.e..l.emb + (prev + 1) * l.e];
        matvec_add(&p[l.w_e..l.w_s], l.h, l.e, emb, &mut s.hidden);
        if l.d > 0 {
            matvec_add(&p[l.w_d..l.w_h], l.h, l.d, &s.dynamic, &mut s.hidden);
        }
        matvec_add(&p[l.w_h..l.b_h], l.h, l.h, h_prev, &mut s.hidden);
        s.hidden.iter_mut().for_each(|x| *x = x.tanh());

        s.logits.copy_from_slice(&p[l.b_o..l.bigram]);
        let row = &p[l.bigram + prev * l.v..l.bigram + (prev + 1) * l.v];
        s.logits.iter_mut().zip(row).for_each(|(o, b)| *o += b);
        matvec_add(&p[l.w_o..l.b_o], l.v, l.h, &s.hidden, &mut s.logits);
        if l.d > 0 {
            matvec_add(&p[l.w_do..l.alpha], l.v, l.d, &s.dynamic, &mut s.logits);
        }
        if self.spec.grounded {
            let a = p[l.alpha];
            s.logits.iter_mut().zip(&s.suggestion).for_each(|(o, c)| *o += a * c);
        }
    }

    fn run<F>(&self, input: &PolicyInput, mut choose: F) -> Result<Vec<usize>, PolicyError>
    where
        F: FnMut(usize, &Scratch) -> Option<usize>,
    {
        self.check_input(input)?;
        let l = self.layout();
        let sproj = self.static_projection(&l, &input.features);
        let mut s = self.scratch();
        let mut h_prev = vec![0.0; l.h];
        let mut grounding = self.spec.grounded.then(|| {
            let query = input
                .features
                .get(..FEATURE_LEN)
                .and_then(Constraints::from_features)
                .unwrap_or_default();
            Grounding::new(&input.objects, query)
        });
        let mut prev = l.v;
        let mut tokens = Vec::new();
        for t in 0..self.spec.max_len {
            if let Some(g) = &grounding {
                g.write_features(&mut s.dynamic);
                g.write_suggestion(&mut s.suggestion);
            }
            self.step(&l, &sproj, prev, &h_prev, &mut s);
            let Some(y) = choose(t, &s) else { break };
            tokens.push(y);
            if Some(y) == self.spec.eos {
                break;
            }
            if let Some(g) = &mut grounding {
                g.observe(y);
            }
            std::mem::swap(&mut h_prev, &mut s.hidden);
            prev = y;
        }
        Ok(tokens)
    }

    /// Draws one completion. Tokens are sampled from softmax(logits / T);
    /// the recorded log-probability is always the temperature-one policy's.
    pub fn sample<R: Rng>(&self, input: &PolicyInput, temperature: f64, rng: &mut R) -> Result<Rollout, PolicyError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(PolicyError::Temperature(temperature));
        }
        let mut logps = Vec::new();
        let mut lsm = vec![0.0; self.spec.vocab];
        let mut scaled = vec![0.0; self.spec.vocab];
        let tokens = self.run(input, |_, s| {
            scaled.iter_mut().zip(&s.logits).for_each(|(o, l)| *o = l / temperature);
            log_softmax_into(&scaled, &mut lsm);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = lsm.len() - 1;
            for (i, lp) in lsm.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            if temperature != 1.0 {
                log_softmax_into(&s.logits, &mut lsm);
            }
            logps.push(lsm[pick]);
            Some(pick)
        })?;
        Ok(self.rollout(tokens, logps))
    }

    fn rollout(&self, tokens: Vec<usize>, token_log_probs: Vec<f64>) -> Rollout {
        let truncated = self.spec.eos.is_some() && tokens.last() != self.spec.eos.as_ref();
        Rollout {
            log_prob: token_log_probs.iter().sum(),
            text: self.decode(&tokens),
            tokens,
            token_log_probs,
            truncated,
        }
    }

    /// Response text of a token sequence. Ungrounded policies have no
    /// lexicon and render token ids.
    pub fn decode(&self, tokens: &[usize]) -> String {
        if self.spec.grounded {
            Vocabulary::standard().decode(tokens)
        } else {
            tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
        }
    }

    /// Argmax decoding; ties go to the lowest token id.
    pub fn greedy(&self, input: &PolicyInput) -> Result<Rollout, PolicyError> {
        let mut logps = Vec::new();
        let mut lsm = vec![0.0; self.spec.vocab];
        let tokens = self.run(input, |_, s| {
            log_softmax_into(&s.logits, &mut lsm);
            let mut best = 0;
            for (i, v) in lsm.iter().enumerate() {
                if *v > lsm[best] {
                    best = i;
                }
            }
            logps.push(lsm[best]);
            Some(best)
        })?;
        Ok(self.rollout(tokens, logps))
    }

    fn trace(&self, input: &PolicyInput, tokens: &[usize]) -> Result<Trace, PolicyError> {
        self.check_tokens(tokens)?;
        let l = self.layout();
        let n = tokens.len();
        let mut tr = Trace {
            prev: Vec::with_capacity(n),
            hidden: Vec::with_capacity(n * l.h),
            probs: Vec::with_capacity(n * l.v),
            dynamic: Vec::with_capacity(n * l.d),
            suggestion_grad: Vec::with_capacity(n),
            token_log_probs: Vec::with_capacity(n),
            log_prob: 0.0,
        };
        let mut lsm = vec![0.0; l.v];
        let mut prev = l.v;
        self.run(input, |t, s| {
            let y = *tokens.get(t)?;
            log_softmax_into(&s.logits, &mut lsm);
            tr.log_prob += lsm[y];
            tr.token_log_probs.push(lsm[y]);
            tr.prev.push(prev);
            tr.hidden.extend_from_slice(&s.hidden);
            let start = tr.probs.len();
            tr.probs.extend(lsm.iter().map(|x| x.exp()));
            tr.dynamic.extend_from_slice(&s.dynamic);
            if self.spec.grounded {
                let expected: f64 = tr.probs[start..].iter().zip(&s.suggestion).map(|(p, c)| p * c).sum();
                tr.suggestion_grad.push(s.suggestion[y] - expected);
            }
            prev = y;
            Some(y)
        })?;
        Ok(tr)
    }

    /// Log-probability of `tokens` as a completion of `input`.
    pub fn log_prob(&self, input: &PolicyInput, tokens: &[usize]) -> Result<f64, PolicyError> {
        Ok(self.trace(input, tokens)?.log_prob)
    }

    /// Per-token log-probabilities of `tokens`.
    pub fn token_log_probs(&self, input: &PolicyInput, tokens: &[usize]) -> Result<Vec<f64>, PolicyError> {
        Ok(self.trace(input, tokens)?.token_log_probs)
    }

    /// Adds `coef * d log p(tokens) / d params` into `grad` and returns the
    /// log-probability.
    pub fn accumulate_grad(
        &self,
        input: &PolicyInput,
        tokens: &[usize],
        coef: f64,
        grad: &mut [f64],
    ) -> Result<f64, PolicyError> {
        let tr = self.trace(input, tokens)?;
        self.backward(&tr, input, tokens, coef, grad);
        Ok(tr.log_prob)
    }

    pub fn grad_log_prob(&self, input: &PolicyInput, tokens: &[usize]) -> Result<(f64, Vec<f64>), PolicyError> {
        let mut g = vec![0.0; self.params.len()];
        let lp = self.accumulate_grad(input, tokens, 1.0, &mut g)?;
        Ok((lp, g))
    }

    fn backward(&self, tr: &Trace, input: &PolicyInput, tokens: &[usize], coef: f64, g: &mut [f64]) {
        let l = self.layout();
        let p = &self.params;
        let (v, h, e, d) = (l.v, l.h, l.e, l.d);
        let mut dlogits = vec![0.0; v];
        let mut dh = vec![0.0; h];
        let mut dh_next = vec![0.0; h];
        let mut da = vec![0.0; h];
        let mut sum_da = vec![0.0; h];
        for t in (0..tr.prev.len()).rev() {
            let y = tokens[t];
            let prev = tr.prev[t];
            let ht = &tr.hidden[t * h..(t + 1) * h];
            let dt = &tr.dynamic[t * d..(t + 1) * d];
            for (k, o) in dlogits.iter_mut().enumerate() {
                *o = -coef * tr.probs[t * v + k];
            }
            dlogits[y] += coef;

            g[l.b_o..l.bigram].iter_mut().zip(&dlogits).for_each(|(a, b)| *a += b);
            g[l.bigram + prev * v..l.bigram + (prev + 1) * v]
                .iter_mut()
                .zip(&dlogits)
                .for_each(|(a, b)| *a += b);
            outer_add(&mut g[l.w_o..l.b_o], v, h, &dlogits, ht);
            if d > 0 {
                outer_add(&mut g[l.w_do..l.alpha], v, d, &dlogits, dt);
            }
            if self.spec.grounded {
                g[l.alpha] += coef * tr.suggestion_grad[t];
            }

            dh.copy_from_slice(&dh_next);
            matvec_t_add(&p[l.w_o..l.b_o], v, h, &dlogits, &mut dh);
            for k in 0..h {
                da[k] = dh[k] * (1.0 - ht[k] * ht[k]);
            }
            let emb = &p[l.emb + prev * e..l.emb + (prev + 1) * e];
            outer_add(&mut g[l.w_e..l.w_s], h, e, &da, emb);
            matvec_t_add(&p[l.w_e..l.w_s], h, e, &da, &mut g[l.emb + prev * e..l.emb + (prev + 1) * e]);
            if d > 0 {
                outer_add(&mut g[l.w_d..l.w_h], h, d, &da, dt);
            }
            if t > 0 {
                let hp = &tr.hidden[(t - 1) * h..t * h];
                outer_add(&mut g[l.w_h..l.b_h], h, h, &da, hp);
            }
            sum_da.iter_mut().zip(&da).for_each(|(a, b)| *a += b);
            dh_next.fill(0.0);
            matvec_t_add(&p[l.w_h..l.b_h], h, h, &da, &mut dh_next);
        }
        g[l.b_h..l.b_h + h].iter_mut().zip(&sum_da).for_each(|(a, b)| *a += b);
        outer_add(&mut g[l.w_s..l.w_s + h * l.s], h, l.s, &sum_da, &input.features);
    }

    /// Full next-token distribution after `prefix` (temperature one).
    pub fn next_token_probs(&self, input: &PolicyInput, prefix: &[usize]) -> Result<Vec<f64>, PolicyError> {
        self.check_tokens(prefix)?;
        if prefix.len() >= self.spec.max_len {
            return Err(PolicyError::TooLong {
                got: prefix.len() + 1,
                max: self.spec.max_len,
            });
        }
        let mut out = Vec::new();
        self.run(input, |t, s| {
            if t == prefix.len() {
                out = softmax(&s.logits);
                None
            } else {
                Some(prefix[t])
            }
        })?;
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            spec: self.spec.clone(),
            params: self.params.clone(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PolicyError> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(PolicyError::Checkpoint(format!("unknown format {:?}", c.format)));
        }
        Self::from_params(c.spec, c.params)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
