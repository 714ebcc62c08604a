use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MaskedSequence, Model, ModelConfig};
use crate::corpus::AgreementInstance;
use crate::error::{Error, Result};
use crate::vocab::Vocab;

/// Optimisation schedule for masked-LM training (AdamW, linear warmup then
/// linear decay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Per-token masking probability.
    pub mask_prob: f64,
    /// Extra probability of masking the agreement target of a sentence.
    pub target_mask_prob: f64,
    pub weight_decay: f64,
    pub attention_dropout: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Fraction of the corpus held out for the dev perplexity.
    pub dev_fraction: f64,
    pub log_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            learning_rate: 2e-3,
            warmup_steps: 200,
            mask_prob: 0.15,
            target_mask_prob: 1.0,
            weight_decay: 0.1,
            attention_dropout: 0.1,
            grad_clip: 1.0,
            dev_fraction: 0.05,
            log_every: 250,
        }
    }
}

impl TrainSchedule {
    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !prob(self.mask_prob) || !prob(self.target_mask_prob) || !prob(self.dev_fraction) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.attention_dropout) {
            return Err(Error::Config("attention_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let rest = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
            let done = (step - self.warmup_steps) as f64;
            self.learning_rate * (1.0 - done / rest).max(0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub final_train_loss: f64,
    pub dev_loss: f64,
    pub dev_perplexity: f64,
    pub dev_masked_tokens: usize,
    /// `(step, mean train loss since the previous entry)`.
    pub loss_curve: Vec<(usize, f64)>,
}

/// A tokenized training sentence; `target` marks the agreement verb.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSequence {
    pub tokens: Vec<u32>,
    pub target: Option<usize>,
}

pub fn encode_corpus(corpus: &[AgreementInstance], vocab: &Vocab) -> Vec<TrainSequence> {
    corpus
        .iter()
        .map(|inst| TrainSequence {
            tokens: vocab.encode(&inst.tokens),
            target: Some(inst.target_index),
        })
        .collect()
}

fn mask_sequence(
    seq: &TrainSequence,
    mask_id: u32,
    mask_prob: f64,
    target_prob: f64,
    rng: &mut ChaCha8Rng,
) -> MaskedSequence {
    let mut chosen: Vec<usize> = (0..seq.tokens.len())
        .filter(|_| rng.random::<f64>() < mask_prob)
        .collect();
    if let Some(t) = seq.target {
        if rng.random::<f64>() < target_prob && !chosen.contains(&t) {
            chosen.push(t);
            chosen.sort_unstable();
        }
    }
    if chosen.is_empty() {
        chosen.push(rng.random_range(0..seq.tokens.len()));
    }
    let mut input = seq.tokens.clone();
    let targets = chosen
        .into_iter()
        .map(|p| {
            input[p] = mask_id;
            (p, seq.tokens[p])
        })
        .collect();
    MaskedSequence { input, targets }
}

/// Trains a masked LM on instances of an agreement corpus.
pub fn train_mlm(
    config: ModelConfig,
    corpus: &[AgreementInstance],
    vocab: &Vocab,
    schedule: &TrainSchedule,
) -> Result<(Model, TrainReport)> {
    if config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} != vocabulary size {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    if config.mask_token_id != vocab.mask_id() {
        return Err(Error::Config("mask_token_id does not match the vocabulary".into()));
    }
    train_on_sequences(config, &encode_corpus(corpus, vocab), schedule)
}

/// Trains on pre-tokenized sequences. Deterministic in `config.seed`.
pub fn train_on_sequences(
    config: ModelConfig,
    corpus: &[TrainSequence],
    schedule: &TrainSchedule,
) -> Result<(Model, TrainReport)> {
    schedule.validate()?;
    if corpus.is_empty() {
        return Err(Error::DegenerateData("training corpus is empty".into()));
    }
    if let Some(s) = corpus
        .iter()
        .find(|s| s.tokens.is_empty() || s.tokens.len() > config.max_seq_len)
    {
        return Err(Error::Input(format!(
            "sequence of length {} does not fit max_seq_len {}",
            s.tokens.len(),
            config.max_seq_len
        )));
    }
    let mut model = Model::new(config.clone())?;
    let mask_id = config.mask_token_id;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd50_0007);

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n_dev = if corpus.len() > 1 {
        ((corpus.len() as f64 * schedule.dev_fraction).round() as usize).min(corpus.len() - 1)
    } else {
        0
    };
    let (dev_idx, train_idx) = order.split_at(n_dev);
    let mut train_idx = train_idx.to_vec();

    let n_params = model.params.len();
    let decay: Vec<bool> = {
        let mut v = vec![false; n_params];
        for (i, e) in model.layout.entries.iter().enumerate() {
            if e.rows > 1 {
                v[model.layout.range(i)].fill(true);
            }
        }
        v
    };
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];

    let mut cursor = train_idx.len();
    let mut curve = Vec::new();
    let mut window = (0.0, 0usize);
    let mut last_loss = f64::NAN;
    for step in 0..schedule.steps {
        let mut batch = Vec::with_capacity(schedule.batch_size);
        while batch.len() < schedule.batch_size {
            if cursor == train_idx.len() {
                train_idx.shuffle(&mut rng);
                cursor = 0;
            }
            let seq = &corpus[train_idx[cursor]];
            cursor += 1;
            batch.push(mask_sequence(
                seq,
                mask_id,
                schedule.mask_prob,
                schedule.target_mask_prob,
                &mut rng,
            ));
        }
        let dropout = (schedule.attention_dropout > 0.0)
            .then_some((schedule.attention_dropout, &mut dropout_rng));
        let (loss, grad) = model.loss_and_grad(&batch, dropout, true);
        let mut grad = grad.expect("gradient requested");
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        if schedule.grad_clip > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > schedule.grad_clip {
                let s = schedule.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = schedule.lr_at(step);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for i in 0..n_params {
            m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
            m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
            let update = (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
            let p = &mut model.params[i];
            if decay[i] {
                *p -= lr * schedule.weight_decay * *p;
            }
            *p -= lr * update;
        }
        last_loss = loss;
        window.0 += loss;
        window.1 += 1;
        if schedule.log_every > 0 && ((step + 1) % schedule.log_every == 0 || step + 1 == schedule.steps) {
            let mean = window.0 / window.1 as f64;
            log::info!("step {:>6}  lr {lr:.2e}  train loss {mean:.4}", step + 1);
            curve.push((step + 1, mean));
            window = (0.0, 0);
        }
    }

    // Dev masks come from a fixed stream so perplexities are comparable.
    let mut dev_rng = ChaCha8Rng::seed_from_u64(0xdef_0001);
    let dev: Vec<MaskedSequence> = dev_idx
        .iter()
        .map(|&i| mask_sequence(&corpus[i], mask_id, schedule.mask_prob, 0.0, &mut dev_rng))
        .collect();
    let dev_masked_tokens = dev.iter().map(|s| s.targets.len()).sum::<usize>();
    let dev_loss = if dev.is_empty() {
        f64::NAN
    } else {
        let mut total = 0.0;
        for chunk in dev.chunks(64) {
            let n = chunk.iter().map(|s| s.targets.len()).sum::<usize>() as f64;
            total += model.mlm_loss(chunk) * n;
        }
        total / dev_masked_tokens as f64
    };
    let report = TrainReport {
        steps: schedule.steps,
        final_train_loss: last_loss,
        dev_loss,
        dev_perplexity: dev_loss.exp(),
        dev_masked_tokens,
        loss_curve: curve,
    };
    log::info!(
        "training done: dev masked-token perplexity {:.3} over {} tokens",
        report.dev_perplexity,
        dev_masked_tokens
    );
    Ok((model, report))
}
