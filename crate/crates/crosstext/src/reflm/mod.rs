//! The trainable reference language model.
//!
//! A linear-softmax autoregressive model over a closed answer vocabulary
//! (the category tokens plus an end marker), conditioned on a hashed
//! bag-of-tokens featurization of the prompt and the previous answer token:
//!
//! ```text
//! logits(step j) = W · [ phi(prompt) ; onehot(previous token) ]
//! W = W0 + (alpha / r) · A · B^T        (only A and B train; W0 is frozen)
//! ```
//!
//! At step 0 the previous-token slot carries the end marker, which doubles
//! as the start-of-answer marker. The model is the smallest thing that makes
//! next-token training, per-token log-likelihoods, beam search, analytic
//! gradients, and token-level sensitivity all literal rather than simulated;
//! large models live behind the remote provider contract instead.
//!
//! All arithmetic is in f64 and accumulates in a fixed order, so equal seeds
//! give bitwise-equal parameters.

mod checkpoint;
mod mat;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use mat::Mat;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dataset::CategorySet;
use crate::error::{Error, Result};
use crate::provider::{Generation, LmProvider, LmScore};
use crate::token::{tokenize, END_TOKEN};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Model shape and initialization knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Hashed prompt-feature dimension.
    pub feat_dim: usize,
    /// Adapter rank r.
    pub rank: usize,
    /// Adapter scale alpha; the effective factor is alpha / r.
    pub alpha: f64,
    /// Seed of the token hash; recorded in checkpoints.
    pub hash_seed: u64,
    /// Seed for W0 and A initialization.
    pub init_seed: u64,
    /// W0 entries are uniform in [-w0_scale, w0_scale]. The default is 0:
    /// an untrained model is exactly uniform, so every untrained prediction
    /// is a deterministic tie-break rather than an artifact of the base
    /// initialization. Set it nonzero to emulate an opinionated frozen base.
    pub w0_scale: f64,
    /// A entries are uniform in [-a_scale, a_scale]; B starts at zero so the
    /// adapter is exactly inert until trained.
    pub a_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 1 << 16,
            rank: 8,
            alpha: 16.0,
            hash_seed: 0,
            init_seed: 0,
            w0_scale: 0.0,
            a_scale: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 {
            return Err(Error::Arg("feat_dim must be positive".into()));
        }
        if self.rank == 0 {
            return Err(Error::Arg("rank must be positive".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Arg("alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of the reference model. `w0` is frozen; only `a` and `b`
/// change during finetuning.
#[derive(Debug, Clone, PartialEq)]
pub struct RefLm {
    vocab: Vec<String>,
    token_ids: HashMap<String, usize>,
    feat_dim: usize,
    hash_seed: u64,
    rank: usize,
    alpha: f64,
    w0: Mat,
    a: Mat,
    b: Mat,
}

impl RefLm {
    /// Build a fresh model whose answer vocabulary is exactly the category
    /// tokens (first-appearance order) plus the end marker. Every category
    /// must round-trip through the tokenizer, i.e. its tokens joined by a
    /// single space must equal the lowercased trimmed name.
    pub fn new(cs: &CategorySet, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut vocab: Vec<String> = Vec::new();
        let mut token_ids: HashMap<String, usize> = HashMap::new();
        for (i, name) in cs.names().iter().enumerate() {
            let tokens = cs.answer_tokens(i);
            if tokens.join(" ") != name.trim().to_lowercase() {
                return Err(Error::Arg(format!(
                    "category '{name}' does not round-trip through the answer tokenizer"
                )));
            }
            for t in tokens {
                if !token_ids.contains_key(t) {
                    token_ids.insert(t.clone(), vocab.len());
                    vocab.push(t.clone());
                }
            }
        }
        token_ids.insert(END_TOKEN.to_string(), vocab.len());
        vocab.push(END_TOKEN.to_string());

        let vlen = vocab.len();
        let input_dim = cfg.feat_dim + vlen;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let w0 = Mat::from_fn(vlen, input_dim, |_, _| {
            rng.gen_range(-cfg.w0_scale..=cfg.w0_scale)
        });
        let a = Mat::from_fn(vlen, cfg.rank, |_, _| {
            rng.gen_range(-cfg.a_scale..=cfg.a_scale)
        });
        let b = Mat::zeros(input_dim, cfg.rank);
        Ok(RefLm {
            vocab,
            token_ids,
            feat_dim: cfg.feat_dim,
            hash_seed: cfg.hash_seed,
            rank: cfg.rank,
            alpha: cfg.alpha,
            w0,
            a,
            b,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        vocab: Vec<String>,
        feat_dim: usize,
        hash_seed: u64,
        rank: usize,
        alpha: f64,
        w0: Mat,
        a: Mat,
        b: Mat,
    ) -> Self {
        let token_ids = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        RefLm {
            vocab,
            token_ids,
            feat_dim,
            hash_seed,
            rank,
            alpha,
            w0,
            a,
            b,
        }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn input_dim(&self) -> usize {
        self.feat_dim + self.vocab.len()
    }

    pub fn end_id(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn w0(&self) -> &Mat {
        &self.w0
    }

    pub fn adapter_a(&self) -> &Mat {
        &self.a
    }

    pub fn adapter_b(&self) -> &Mat {
        &self.b
    }

    pub fn adapter_a_mut(&mut self) -> &mut Mat {
        &mut self.a
    }

    pub fn adapter_b_mut(&mut self) -> &mut Mat {
        &mut self.b
    }

    pub fn token_id(&self, token: &str) -> Result<usize> {
        self.token_ids
            .get(token)
            .copied()
            .ok_or_else(|| Error::Vocab(token.to_string()))
    }

    /// Hashed slot of a prompt token.
    pub fn hash_index(&self, token: &str) -> usize {
        (fnv1a64(self.hash_seed, token.as_bytes()) % self.feat_dim as u64) as usize
    }

    /// Sparse bag-of-tokens featurization: phi[h(token)] += 1 per
    /// occurrence, returned sorted by feature index.
    pub fn featurize(&self, prompt: &str) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(prompt) {
            *counts.entry(self.hash_index(&tok)).or_insert(0.0) += 1.0;
        }
        counts.into_iter().collect()
    }

    /// Effective weight of one (row, input) cell: W0 + (alpha/r) A B^T.
    pub fn effective_weight(&self, row: usize, input: usize) -> f64 {
        let scale = self.alpha / self.rank as f64;
        let a_row = self.a.row(row);
        let b_row = self.b.row(input);
        let mut adapters = 0.0;
        for l in 0..self.rank {
            adapters += a_row[l] * b_row[l];
        }
        self.w0.get(row, input) + scale * adapters
    }

    /// Logits over the answer vocabulary for one step.
    fn logits(&self, feat: &[(usize, f64)], prev: usize) -> Vec<f64> {
        let vlen = self.vocab.len();
        let scale = self.alpha / self.rank as f64;
        let prev_input = self.feat_dim + prev;

        // B^T x, accumulated in input order (sparse features then prev slot).
        let mut bt_x = vec![0.0; self.rank];
        for &(i, v) in feat {
            let row = self.b.row(i);
            for (l, acc) in bt_x.iter_mut().enumerate() {
                *acc += row[l] * v;
            }
        }
        let prev_row = self.b.row(prev_input);
        for (l, acc) in bt_x.iter_mut().enumerate() {
            *acc += prev_row[l];
        }

        let mut z = vec![0.0; vlen];
        for (k, zk) in z.iter_mut().enumerate() {
            let w0_row = self.w0.row(k);
            let mut acc = 0.0;
            for &(i, v) in feat {
                acc += w0_row[i] * v;
            }
            acc += w0_row[prev_input];
            let a_row = self.a.row(k);
            let mut adapters = 0.0;
            for l in 0..self.rank {
                adapters += a_row[l] * bt_x[l];
            }
            *zk = acc + scale * adapters;
        }
        z
    }

    /// Per-token log-likelihoods of an answer token sequence after the
    /// prompt.
    pub fn score_answer(&self, prompt: &str, answer_tokens: &[String]) -> Result<LmScore> {
        if answer_tokens.is_empty() {
            return Err(Error::Arg("empty answer".into()));
        }
        let ids: Vec<usize> = answer_tokens
            .iter()
            .map(|t| self.token_id(t))
            .collect::<Result<_>>()?;
        let feat = self.featurize(prompt);
        let mut logprobs = Vec::with_capacity(ids.len());
        let mut prev = self.end_id();
        for &id in &ids {
            let lp = log_softmax(&self.logits(&feat, prev));
            logprobs.push(lp[id]);
            prev = id;
        }
        LmScore::new(answer_tokens.to_vec(), logprobs)
    }

    /// Join answer token ids back into text.
    pub fn answer_text(&self, token_ids: &[usize]) -> String {
        token_ids
            .iter()
            .map(|&id| self.vocab[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Standard beam search over the answer vocabulary. Sequences terminate
    /// at the end marker and are ranked by total log probability; exact ties
    /// break by lexicographic token-id order (the end marker participates in
    /// the comparison). `beam_width` of 1 is greedy decoding.
    pub fn beam_generate(&self, prompt: &str, beam_width: usize, max_tokens: usize) -> BeamResult {
        assert!(beam_width >= 1, "beam width must be at least 1");
        let feat = self.featurize(prompt);
        let end = self.end_id();
        let mut beam = vec![Hypothesis {
            tokens: Vec::new(),
            total: 0.0,
            finished: false,
        }];
        for _ in 0..max_tokens {
            if beam.iter().all(|h| h.finished) {
                break;
            }
            let mut candidates: Vec<Hypothesis> = Vec::new();
            for h in &beam {
                if h.finished {
                    candidates.push(h.clone());
                    continue;
                }
                let prev = *h.tokens.last().unwrap_or(&end);
                let lp = log_softmax(&self.logits(&feat, prev));
                for (tok, lp_tok) in lp.iter().enumerate() {
                    let mut tokens = h.tokens.clone();
                    tokens.push(tok);
                    candidates.push(Hypothesis {
                        tokens,
                        total: h.total + lp_tok,
                        finished: tok == end,
                    });
                }
            }
            candidates.sort_by(|x, y| {
                y.total
                    .total_cmp(&x.total)
                    .then_with(|| x.tokens.cmp(&y.tokens))
            });
            candidates.truncate(beam_width);
            beam = candidates;
        }
        let best = beam.iter().find(|h| h.finished).unwrap_or(&beam[0]).clone();
        let truncated = !best.finished;
        let mut token_ids = best.tokens;
        if !truncated {
            token_ids.pop(); // drop the end marker
        }
        BeamResult {
            token_ids,
            total: best.total,
            truncated,
        }
    }

    /// Mean over the batch of the per-example negative log-likelihood
    /// (summed over answer tokens), with exact analytic gradients for the
    /// adapter factors. W0 receives no gradient.
    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, Grads)> {
        if batch.is_empty() {
            return Err(Error::Arg("empty batch".into()));
        }
        let vlen = self.vocab.len();
        let scale = self.alpha / self.rank as f64;
        let mut grad_a = Mat::zeros(vlen, self.rank);
        let mut grad_b = Mat::zeros(self.input_dim(), self.rank);
        let mut loss_sum = 0.0;
        for ex in batch {
            // B^T phi, shared across steps of this example.
            let mut bt_feat = vec![0.0; self.rank];
            for &(i, v) in &ex.feat {
                let row = self.b.row(i);
                for (l, acc) in bt_feat.iter_mut().enumerate() {
                    *acc += row[l] * v;
                }
            }
            let mut prev = self.end_id();
            for &target in &ex.answer {
                let prev_input = self.feat_dim + prev;
                let mut bt_x = bt_feat.clone();
                let prev_row = self.b.row(prev_input);
                for (l, acc) in bt_x.iter_mut().enumerate() {
                    *acc += prev_row[l];
                }
                let z = self.logits_with(&ex.feat, prev_input, &bt_x);
                let lp = log_softmax(&z);
                loss_sum -= lp[target];
                // g_z = softmax(z) - onehot(target)
                let mut g_z: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                g_z[target] -= 1.0;
                // dL/dA += scale * g_z (B^T x)^T
                for (k, gk) in g_z.iter().enumerate() {
                    let row = grad_a.row_mut(k);
                    for l in 0..self.rank {
                        row[l] += scale * gk * bt_x[l];
                    }
                }
                // dL/dB rows touched by x: scale * x_i (g_z^T A)
                let mut g_a_proj = vec![0.0; self.rank];
                for (k, gk) in g_z.iter().enumerate() {
                    let a_row = self.a.row(k);
                    for (l, acc) in g_a_proj.iter_mut().enumerate() {
                        *acc += gk * a_row[l];
                    }
                }
                for &(i, v) in &ex.feat {
                    let row = grad_b.row_mut(i);
                    for l in 0..self.rank {
                        row[l] += scale * v * g_a_proj[l];
                    }
                }
                let row = grad_b.row_mut(prev_input);
                for l in 0..self.rank {
                    row[l] += scale * g_a_proj[l];
                }
                prev = target;
            }
        }
        let inv_n = 1.0 / batch.len() as f64;
        for g in grad_a.data_mut() {
            *g *= inv_n;
        }
        for g in grad_b.data_mut() {
            *g *= inv_n;
        }
        Ok((
            loss_sum * inv_n,
            Grads {
                a: grad_a,
                b: grad_b,
            },
        ))
    }

    /// Sum of per-example negative log-likelihoods over a whole set, for
    /// objective-value checks and monitoring.
    pub fn total_nll(&self, examples: &[Example]) -> Result<f64> {
        let mut total = 0.0;
        for ex in examples {
            let feat = &ex.feat;
            let mut prev = self.end_id();
            for &target in &ex.answer {
                let lp = log_softmax(&self.logits(feat, prev));
                total -= lp[target];
                prev = target;
            }
        }
        Ok(total)
    }

    fn logits_with(&self, feat: &[(usize, f64)], prev_input: usize, bt_x: &[f64]) -> Vec<f64> {
        let vlen = self.vocab.len();
        let scale = self.alpha / self.rank as f64;
        let mut z = vec![0.0; vlen];
        for (k, zk) in z.iter_mut().enumerate() {
            let w0_row = self.w0.row(k);
            let mut acc = 0.0;
            for &(i, v) in feat {
                acc += w0_row[i] * v;
            }
            acc += w0_row[prev_input];
            let a_row = self.a.row(k);
            let mut adapters = 0.0;
            for l in 0..self.rank {
                adapters += a_row[l] * bt_x[l];
            }
            *zk = acc + scale * adapters;
        }
        z
    }

    /// Sensitivity of the per-example loss to each prompt word: the mean
    /// absolute gradient with respect to the hashed features of the word's
    /// tokens, in first-occurrence order, one entry per distinct word.
    pub fn token_sensitivity(
        &self,
        prompt: &str,
        answer_tokens: &[String],
    ) -> Result<Vec<(String, f64)>> {
        let ids: Vec<usize> = answer_tokens
            .iter()
            .map(|t| self.token_id(t))
            .collect::<Result<_>>()?;
        if ids.is_empty() {
            return Err(Error::Arg("empty answer".into()));
        }
        let feat = self.featurize(prompt);
        // Accumulated over steps: g_sum = sum_j (softmax_j - onehot(y_j)).
        let mut g_sum = vec![0.0; self.vocab.len()];
        let mut prev = self.end_id();
        for &target in &ids {
            let lp = log_softmax(&self.logits(&feat, prev));
            for (k, l) in lp.iter().enumerate() {
                g_sum[k] += l.exp();
            }
            g_sum[target] -= 1.0;
            prev = target;
        }
        // dL/dphi_i = sum_k g_sum[k] W[k][i]; the adapter part factors
        // through g_sum^T A.
        let scale = self.alpha / self.rank as f64;
        let mut g_a_proj = vec![0.0; self.rank];
        for (k, gk) in g_sum.iter().enumerate() {
            let a_row = self.a.row(k);
            for (l, acc) in g_a_proj.iter_mut().enumerate() {
                *acc += gk * a_row[l];
            }
        }
        let feature_grad = |input: usize| -> f64 {
            let mut w0_part = 0.0;
            for (k, gk) in g_sum.iter().enumerate() {
                w0_part += gk * self.w0.get(k, input);
            }
            let b_row = self.b.row(input);
            let mut adapter = 0.0;
            for l in 0..self.rank {
                adapter += g_a_proj[l] * b_row[l];
            }
            w0_part + scale * adapter
        };
        let mut out: Vec<(String, f64)> = Vec::new();
        let mut seen = HashSet::new();
        for chunk in prompt.split_whitespace() {
            let display: String = chunk
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if display.is_empty() {
                continue;
            }
            let tokens = tokenize(chunk);
            if tokens.is_empty() || !seen.insert(display.clone()) {
                continue;
            }
            let mut sum = 0.0;
            for t in &tokens {
                sum += feature_grad(self.hash_index(t)).abs();
            }
            out.push((display, sum / tokens.len() as f64));
        }
        Ok(out)
    }

    /// Digest of the parameters (not the optimizer state); used as the
    /// checkpoint identity.
    pub fn param_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.vocab {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(self.feat_dim.to_le_bytes());
        hasher.update(self.hash_seed.to_le_bytes());
        hasher.update(self.rank.to_le_bytes());
        hasher.update(self.alpha.to_le_bytes());
        for m in [&self.w0, &self.a, &self.b] {
            for v in m.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    total: f64,
    finished: bool,
}

/// Output of beam search: answer token ids (end marker stripped), the total
/// log probability of the emitted sequence, and whether the token budget ran
/// out first.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub token_ids: Vec<usize>,
    pub total: f64,
    pub truncated: bool,
}

/// One training example: featurized prompt and answer token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub feat: Vec<(usize, f64)>,
    pub answer: Vec<usize>,
}

impl Example {
    pub fn new(lm: &RefLm, prompt: &str, answer_tokens: &[String]) -> Result<Self> {
        let answer = answer_tokens
            .iter()
            .map(|t| lm.token_id(t))
            .collect::<Result<Vec<_>>>()?;
        if answer.is_empty() {
            return Err(Error::Arg("empty answer".into()));
        }
        Ok(Example {
            feat: lm.featurize(prompt),
            answer,
        })
    }
}

/// Adapter gradients.
#[derive(Debug, Clone)]
pub struct Grads {
    pub a: Mat,
    pub b: Mat,
}

impl Grads {
    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite()
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum_exp.ln();
    z.iter().map(|v| v - lse).collect()
}

/// Optimizer hyperparameters and schedule. Defaults follow the pipeline's
/// stock settings: learning rate 1e-3, betas (0.9, 0.999), epsilon 1e-8,
/// batch size 128.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay on the adapter factors.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Steps(usize),
    Epochs(usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            batch_size: 128,
            schedule: Schedule::Steps(100),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Arg("learning rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Arg(format!("{name} must be in (0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Arg("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Decoupled-weight-decay adaptive-moment state for A and B.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m_a: Mat,
    pub v_a: Mat,
    pub m_b: Mat,
    pub v_b: Mat,
}

impl OptimState {
    pub fn new(lm: &RefLm) -> Self {
        OptimState {
            step: 0,
            m_a: Mat::zeros(lm.vocab_len(), lm.rank),
            v_a: Mat::zeros(lm.vocab_len(), lm.rank),
            m_b: Mat::zeros(lm.input_dim(), lm.rank),
            v_b: Mat::zeros(lm.input_dim(), lm.rank),
        }
    }
}

/// One optimizer step on a batch. Returns the batch loss. A non-finite
/// gradient aborts before touching the parameters, so the model stays at its
/// last good state.
pub fn train_step(
    lm: &mut RefLm,
    state: &mut OptimState,
    batch: &[Example],
    cfg: &TrainConfig,
) -> Result<f64> {
    cfg.validate()?;
    let (loss, grads) = lm.loss_and_grad(batch)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerics("training gradients".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    adamw_update(
        lm.a.data_mut(),
        grads.a.data(),
        state.m_a.data_mut(),
        state.v_a.data_mut(),
        cfg,
        bc1,
        bc2,
    );
    adamw_update(
        lm.b.data_mut(),
        grads.b.data(),
        state.m_b.data_mut(),
        state.v_b.data_mut(),
        cfg,
        bc1,
        bc2,
    );
    Ok(loss)
}

fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate
            * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * params[i]);
    }
}

impl LmProvider for RefLm {
    fn identity(&self) -> String {
        format!("reflm:{}", self.param_digest())
    }

    fn score(&self, prompt: &str, completion: &str) -> Result<LmScore> {
        let tokens = tokenize(completion);
        if tokens.is_empty() {
            return Err(Error::Arg(format!(
                "completion '{completion}' has no answer tokens"
            )));
        }
        self.score_answer(prompt, &tokens)
    }

    fn generate(&self, prompt: &str, beam_width: usize, max_tokens: usize) -> Result<Generation> {
        if beam_width == 0 {
            return Err(Error::Arg("beam width must be at least 1".into()));
        }
        let result = self.beam_generate(prompt, beam_width, max_tokens);
        Ok(Generation {
            text: self.answer_text(&result.token_ids),
            truncated: result.truncated,
        })
    }
}

#[cfg(test)]
mod tests;
