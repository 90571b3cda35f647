//! Soft-label contrastive training: cosine distance between tower outputs,
//! the margin loss with real-valued labels, an adaptive-moment optimizer,
//! and the round-based loop that alternates training with hard-negative
//! mining.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ann::{EmbeddingIndex, IndexConfig, VectorStore};
use crate::encoder::{
    backward, forward, init_params, CharVocab, Embedding, EncoderConfig, EncoderModel,
    EncoderParams,
};
use crate::pairs::{
    generate_positive_pairs, mine_hard_negatives, sample_negative_pairs, PairSet, PairSource,
};
use crate::refset::ReferenceSet;
use crate::{Error, Result};

/// Cosine distance `1 − u·v / (‖u‖‖v‖)`, in `[0, 2]` up to rounding.
pub fn cosine_distance(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let norm_u = u.dot(u).sqrt();
    let norm_v = v.dot(v).sqrt();
    if norm_u == 0.0 || norm_v == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(1.0 - u.dot(v) / (norm_u * norm_v))
}

/// Contrastive loss with a soft label:
/// `½·y·δ² + ½·(1−y)·max(0, m−δ)²`. Non-negative everywhere.
pub fn contrastive_loss(delta: f64, y: f64, margin: f64) -> f64 {
    let clamped = (margin - delta).max(0.0);
    0.5 * y * delta * delta + 0.5 * (1.0 - y) * clamped * clamped
}

/// The distance minimizing the loss for label `y` in the unit-margin
/// regime: `1 − y`.
pub fn optimal_distance(y: f64) -> f64 {
    1.0 - y
}

/// Training loop hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_round: usize,
    /// Hard-negative iterations of the outer loop.
    pub rounds: usize,
    /// Neighbors fetched per name while mining; 0 disables mining.
    pub hard_negative_k: usize,
    /// Cap on same-entity cross-product pairs.
    pub positive_cap_per_entity: usize,
    /// Initial random negatives per positive pair.
    pub negative_ratio: f64,
    /// Index used for the mining lookups each round.
    pub mining_index: IndexConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 1.0,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs_per_round: 5,
            rounds: 3,
            hard_negative_k: 10,
            positive_cap_per_entity: 100,
            negative_ratio: 1.0,
            mining_index: IndexConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::InvalidArgument("margin must be > 0".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs_per_round == 0 || self.rounds == 0 {
            return Err(Error::InvalidArgument(
                "batch size, epochs and rounds must be ≥ 1".into(),
            ));
        }
        if self.positive_cap_per_entity == 0 {
            return Err(Error::InvalidArgument("positive cap must be ≥ 1".into()));
        }
        if self.negative_ratio < 0.0 {
            return Err(Error::InvalidArgument("negative ratio must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Adaptive moment estimation (decay 0.9/0.999, ε = 1e-8).
pub struct AdamState {
    first: EncoderParams,
    second: EncoderParams,
    step: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(template: &EncoderParams) -> Self {
        AdamState {
            first: template.zeros_like(),
            second: template.zeros_like(),
            step: 0,
        }
    }

    pub fn apply(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64) {
        self.step += 1;
        let correction1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let correction2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let mut p_chunks = params.flat_chunks_mut();
        let mut m_chunks = self.first.flat_chunks_mut();
        let mut v_chunks = self.second.flat_chunks_mut();
        let g_chunks = grads.flat_chunks();
        for (((p, m), v), g) in p_chunks
            .iter_mut()
            .zip(m_chunks.iter_mut())
            .zip(v_chunks.iter_mut())
            .zip(g_chunks)
        {
            for i in 0..p.len() {
                let grad = g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad * grad;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// One pass over the pair set in shuffled mini-batches; returns the mean
/// per-pair loss.
///
/// Per-pair gradients inside a batch run in parallel, but they always
/// reduce in batch order, so results do not depend on the thread count.
pub fn train_epoch(
    params: &mut EncoderParams,
    vocab: &CharVocab,
    config: &EncoderConfig,
    pairs: &PairSet,
    train: &TrainConfig,
    optimizer: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no training pairs".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(rng);

    let mut loss_sum = 0.0;
    for (batch_idx, batch) in order.chunks(train.batch_size).enumerate() {
        let results: Vec<_> = batch
            .par_iter()
            .map(|&i| backward(params, vocab, config.pooling, &pairs.pairs()[i], train.margin))
            .collect();

        let mut grad_mean = params.zeros_like();
        for (&pair_idx, result) in batch.iter().zip(results) {
            let out = result?;
            let pair = &pairs.pairs()[pair_idx];
            if !out.loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    batch: batch_idx,
                    name_a: pair.name_a.clone(),
                    name_b: pair.name_b.clone(),
                });
            }
            loss_sum += out.loss;
            grad_mean.accumulate(&out.grads);
        }
        grad_mean.scale(1.0 / batch.len() as f64);
        if !grad_mean.all_finite() {
            let pair = &pairs.pairs()[batch[0]];
            return Err(Error::NonFinite {
                what: "gradient",
                batch: batch_idx,
                name_a: pair.name_a.clone(),
                name_b: pair.name_b.clone(),
            });
        }
        optimizer.apply(params, &grad_mean, train.learning_rate);
    }
    Ok(loss_sum / pairs.len() as f64)
}

/// Per-epoch log entry.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub round: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    pub pair_count: usize,
    pub wall_ms: u128,
}

/// Mining outcome of one round.
#[derive(Debug, Clone)]
pub struct RoundStats {
    pub round: usize,
    pub mined_pairs: usize,
    pub mined_added: usize,
    /// Mean embedding distance of mined pairs at mining time.
    pub mined_mean_distance: Option<f64>,
    /// Mean embedding distance of an equal-size fresh random-negative
    /// sample, measured against the same embeddings.
    pub random_negative_mean_distance: Option<f64>,
    pub training_set_size: usize,
}

/// Everything observable about a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
    pub rounds: Vec<RoundStats>,
    pub initial_counts: Vec<(PairSource, usize)>,
}

impl TrainingReport {
    /// Line-oriented metrics log: `round,epoch,mean_loss,pair_count,wall_ms`.
    pub fn write_metrics<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "round,epoch,mean_loss,pair_count,wall_ms")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{:.6},{},{}",
                e.round, e.epoch, e.mean_loss, e.pair_count, e.wall_ms
            )?;
        }
        Ok(())
    }
}

/// Embeds every reference name in order into a vector store.
pub fn embed_all_names(
    params: &EncoderParams,
    vocab: &CharVocab,
    config: &EncoderConfig,
    reference: &ReferenceSet,
) -> Result<VectorStore> {
    let names: Vec<_> = reference.name_pairs().collect();
    let embeddings: Vec<Result<Embedding>> = names
        .par_iter()
        .map(|(_, name)| forward(params, vocab, config.pooling, name))
        .collect();
    let mut store = VectorStore::new(config.output_dim)?;
    for ((id, name), embedding) in names.into_iter().zip(embeddings) {
        let v = embedding?;
        store.insert(id.clone(), name, v.as_slice().expect("contiguous"))?;
    }
    Ok(store)
}

/// Full similarity-learning loop: seed the training set from the reference
/// plus caller-provided domain pairs, then alternate training with
/// hard-negative mining for the configured number of rounds. The training
/// set only ever grows.
pub fn train_similarity(
    reference: &ReferenceSet,
    domain_pairs: PairSet,
    train: &TrainConfig,
    encoder: &EncoderConfig,
) -> Result<(EncoderModel, TrainingReport)> {
    train.validate()?;
    encoder.validate()?;
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference set is empty".into()));
    }

    let vocab = CharVocab::build(reference, encoder.max_sequence_length)?;
    let mut params = init_params(encoder, &vocab, train.seed)?;

    // Initial training data: same-entity positives, random negatives, and
    // the caller's domain pairs.
    let mut dataset = generate_positive_pairs(
        reference,
        train.positive_cap_per_entity,
        train.seed.wrapping_add(0xA11CE),
    )?;
    let negative_count = (dataset.len() as f64 * train.negative_ratio).round() as usize;
    if negative_count > 0 && reference.len() >= 2 {
        dataset.merge(sample_negative_pairs(
            reference,
            negative_count,
            train.seed.wrapping_add(0xBEEF),
        )?);
    }
    dataset.merge(domain_pairs);
    if dataset.is_empty() {
        return Err(Error::EmptyInput(
            "no training pairs could be generated".into(),
        ));
    }

    let mut report = TrainingReport {
        initial_counts: PairSource::ALL
            .iter()
            .map(|&s| (s, dataset.count(s)))
            .collect(),
        ..TrainingReport::default()
    };

    let mut optimizer = AdamState::new(&params);
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(train.seed.wrapping_add(0x5EED));

    for round in 1..=train.rounds {
        for epoch in 1..=train.epochs_per_round {
            let started = Instant::now();
            let mean_loss = train_epoch(
                &mut params,
                &vocab,
                encoder,
                &dataset,
                train,
                &mut optimizer,
                &mut epoch_rng,
            )?;
            report.epochs.push(EpochStats {
                round,
                epoch,
                mean_loss,
                pair_count: dataset.len(),
                wall_ms: started.elapsed().as_millis(),
            });
        }

        let mut stats = RoundStats {
            round,
            mined_pairs: 0,
            mined_added: 0,
            mined_mean_distance: None,
            random_negative_mean_distance: None,
            training_set_size: dataset.len(),
        };
        if train.hard_negative_k > 0 {
            let store = embed_all_names(&params, &vocab, encoder, reference)?;
            let index = EmbeddingIndex::new(
                store,
                IndexConfig {
                    seed: train.seed.wrapping_add(round as u64),
                    ..train.mining_index
                },
            )?;
            let model = EncoderModel {
                config: encoder.clone(),
                vocab: vocab.clone(),
                params: params.clone(),
            };
            let mined = mine_hard_negatives(&model, reference, &index, train.hard_negative_k)?;
            stats.mined_pairs = mined.pairs.len();
            stats.mined_mean_distance = mined.mean_distance;
            stats.random_negative_mean_distance = random_negative_mean_distance(
                index.store(),
                mined.pairs.len(),
                train.seed.wrapping_add(0xD00D + round as u64),
            );
            stats.mined_added = dataset.merge(mined.pairs);
            stats.training_set_size = dataset.len();
        }
        report.rounds.push(stats);
    }

    Ok((
        EncoderModel {
            config: encoder.clone(),
            vocab,
            params,
        },
        report,
    ))
}

/// Mean embedding distance over `count` fresh random cross-entity row
/// pairs, the baseline mined negatives are compared against.
fn random_negative_mean_distance(store: &VectorStore, count: usize, seed: u64) -> Option<f64> {
    if count == 0 || store.len() < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut drawn = 0usize;
    let mut attempts = 0usize;
    while drawn < count && attempts < count * 50 + 1000 {
        attempts += 1;
        let a = rng.gen_range(0..store.len());
        let b = rng.gen_range(0..store.len());
        if a == b || store.row(a).entity_id == store.row(b).entity_id {
            continue;
        }
        let dot: f64 = store
            .vector(a)
            .iter()
            .zip(store.vector(b))
            .map(|(x, y)| x * y)
            .sum();
        total += (1.0 - dot).clamp(0.0, 2.0);
        drawn += 1;
    }
    (drawn > 0).then(|| total / drawn as f64)
}
