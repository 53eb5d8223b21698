use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::pairing::{candidate_space, positive_pairs, sample_negative_pairs, PairInputs};
use super::{CauseModel, EmotionModel, PairingModel};
use crate::corpus::{derive_cause_labels, Conversation, NUM_EMOTIONS};
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::evaluation::stage_metrics;
use crate::nn::{AdamWConfig, Checkpoint, OptimizerState, Params, TrainRng, WarmupSchedule};

/// A conversation together with its fused feature matrix (one row per utterance).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedConversation {
    pub conversation: Conversation,
    pub features: Array2<f64>,
}

impl EncodedConversation {
    fn emotion_labels(&self) -> Result<Vec<usize>> {
        self.conversation
            .gold_emotions()
            .map(|es| es.iter().map(|e| e.index()).collect())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "conversation {} has unlabeled utterances",
                    self.conversation.conversation_id
                ))
            })
    }

    fn cause_labels(&self) -> Result<Vec<bool>> {
        if self.conversation.gold_pairs.is_none() {
            return Err(Error::Validation(format!(
                "conversation {} has no gold pairs",
                self.conversation.conversation_id
            )));
        }
        Ok(derive_cause_labels(&self.conversation))
    }
}

/// Looks up fused features for every conversation; missing vectors are
/// reported all at once.
pub fn encode_dataset(
    conversations: &[Conversation],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EncodedConversation>> {
    let missing: Vec<(i64, usize)> = conversations
        .iter()
        .flat_map(|c| c.utterances.iter().map(move |u| (c.conversation_id, u.utterance_id)))
        .filter(|&(c, u)| {
            crate::embeddings::FUSION_ORDER
                .iter()
                .any(|&m| provider.lookup(c, u, m).is_none())
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    conversations
        .iter()
        .map(|c| {
            Ok(EncodedConversation {
                features: provider.conversation_matrix(c)?,
                conversation: c.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

/// One model, its data, and how to score it on held-out conversations.
pub trait StageTask {
    type Model: Params + Clone;
    type Batch;

    /// Optimizer steps per epoch; must not depend on the epoch.
    fn batches_per_epoch(&self) -> usize;

    fn batches(&self, rng: &mut TrainRng) -> Result<Vec<Self::Batch>>;

    fn step(&self, model: &Self::Model, batch: &Self::Batch, rng: &mut TrainRng) -> Result<(f64, Self::Model)>;

    /// Held-out weighted F1; higher is better.
    fn validate(&self, model: &Self::Model) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
    pub learning_rate: f64,
    pub improved: bool,
}

/// AdamW with warmup over a [`StageTask`], keeping the best-validation model.
///
/// Every epoch draws its shuffling, sampling and dropout from a generator
/// keyed by `(seed, epoch)`, so a resumed run continues exactly as an
/// uninterrupted one would.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<M> {
    pub model: M,
    pub best_model: M,
    pub best_val_f1: Option<f64>,
    pub optimizer: OptimizerState,
    pub schedule: WarmupSchedule,
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub steps_done: usize,
}

impl<M: Params + Clone> Trainer<M> {
    pub fn new(model: M, config: TrainConfig, batches_per_epoch: usize) -> Result<Self> {
        if config.epochs == 0 || batches_per_epoch == 0 {
            return Err(Error::Config("training needs at least one epoch and one batch".into()));
        }
        if !(config.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                config.learning_rate
            )));
        }
        let schedule = WarmupSchedule::with_warmup_fraction(
            config.epochs * batches_per_epoch,
            config.warmup_fraction,
            config.learning_rate,
        )?;
        Ok(Self {
            optimizer: OptimizerState::new(config.optimizer, &model),
            best_model: model.clone(),
            model,
            best_val_f1: None,
            schedule,
            config,
            epochs_done: 0,
            steps_done: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    fn epoch_rng(&self, epoch: usize) -> TrainRng {
        let mut rng = TrainRng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    pub fn run_epoch<T: StageTask<Model = M>>(&mut self, task: &T) -> Result<EpochLog> {
        let epoch = self.epochs_done;
        let mut rng = self.epoch_rng(epoch);
        let batches = task.batches(&mut rng)?;
        let mut total = 0.0;
        let mut lr = 0.0;
        for (i, batch) in batches.iter().enumerate() {
            let (loss, grads) = task.step(&self.model, batch, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: i });
            }
            lr = self.schedule.lr_at(self.steps_done.min(self.schedule.total_steps));
            self.optimizer.step(&mut self.model, &grads, lr)?;
            self.steps_done += 1;
            total += loss;
        }
        let val = task.validate(&self.model)?;
        let improved = self.best_val_f1.is_none_or(|best| val > best);
        if improved {
            self.best_val_f1 = Some(val);
            self.best_model = self.model.clone();
        }
        self.epochs_done += 1;
        Ok(EpochLog {
            epoch,
            steps: self.steps_done,
            train_loss: total / batches.len().max(1) as f64,
            val_weighted_f1: val,
            learning_rate: lr,
            improved,
        })
    }

    /// Runs the remaining epochs, reporting each as it finishes.
    pub fn fit<T: StageTask<Model = M>>(
        &mut self,
        task: &T,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while !self.finished() {
            let log = self.run_epoch(task)?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    /// Full training state: current and best parameters plus AdamW moments.
    pub fn to_checkpoint(&self, model_config: serde_json::Value) -> Checkpoint {
        let mut ckpt = Checkpoint::new(json!({
            "model": model_config,
            "trainer": {
                "config": self.config,
                "epochs_done": self.epochs_done,
                "steps_done": self.steps_done,
                "adam_step": self.optimizer.step,
                "best_val_f1": self.best_val_f1,
            },
        }));
        ckpt.add_params("model", &self.model);
        ckpt.add_params("best", &self.best_model);
        for (i, (m, v)) in self
            .optimizer
            .first_moment
            .iter()
            .zip(&self.optimizer.second_moment)
            .enumerate()
        {
            ckpt.add_raw(format!("adam.m.{i}"), m.clone());
            ckpt.add_raw(format!("adam.v.{i}"), v.clone());
        }
        ckpt
    }

    /// Rebuilds a trainer saved by [`Trainer::to_checkpoint`]; `template`
    /// supplies the parameter layout.
    pub fn from_checkpoint(ckpt: &Checkpoint, template: M, batches_per_epoch: usize) -> Result<Self> {
        let t = &ckpt.config["trainer"];
        let bad = |what: &str| Error::Checkpoint(format!("trainer state lacks `{what}`"));
        let config: TrainConfig =
            serde_json::from_value(t["config"].clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut trainer = Self::new(template, config, batches_per_epoch)?;
        ckpt.load_into("model", &mut trainer.model)?;
        ckpt.load_into("best", &mut trainer.best_model)?;
        trainer.epochs_done = t["epochs_done"].as_u64().ok_or_else(|| bad("epochs_done"))? as usize;
        trainer.steps_done = t["steps_done"].as_u64().ok_or_else(|| bad("steps_done"))? as usize;
        trainer.optimizer.step = t["adam_step"].as_u64().ok_or_else(|| bad("adam_step"))?;
        trainer.best_val_f1 = t["best_val_f1"].as_f64();
        for i in 0..trainer.optimizer.first_moment.len() {
            for (name, buf) in [
                (format!("adam.m.{i}"), &mut trainer.optimizer.first_moment[i]),
                (format!("adam.v.{i}"), &mut trainer.optimizer.second_moment[i]),
            ] {
                let tensor = ckpt.tensor(&name).ok_or_else(|| bad(&name))?;
                if tensor.data.len() != buf.len() {
                    return Err(Error::Checkpoint(format!("`{name}` has the wrong length")));
                }
                buf.copy_from_slice(&tensor.data);
            }
        }
        Ok(trainer)
    }
}

/// Feature rows and their labels for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<L> {
    pub features: Array2<f64>,
    pub labels: Vec<L>,
}

/// Either every utterance as an independent row (dense variants) or whole
/// conversations (sequence variants). `batch_size` counts rows in the first
/// case and conversations in the second.
struct UtteranceData<L> {
    conversations: Vec<LabeledBatch<L>>,
    contextual: bool,
    batch_size: usize,
}

impl<L: Clone> UtteranceData<L> {
    fn new(
        data: &[EncodedConversation],
        labels: impl Fn(&EncodedConversation) -> Result<Vec<L>>,
        contextual: bool,
        batch_size: usize,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Validation("no training conversations".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let conversations = data
            .iter()
            .map(|c| {
                Ok(LabeledBatch {
                    features: c.features.clone(),
                    labels: labels(c)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            conversations,
            contextual,
            batch_size,
        })
    }

    fn num_rows(&self) -> usize {
        self.conversations.iter().map(|c| c.labels.len()).sum()
    }

    fn batches_per_epoch(&self) -> usize {
        if self.contextual {
            self.conversations.len().div_ceil(self.batch_size)
        } else {
            self.num_rows().div_ceil(self.batch_size)
        }
    }

    /// One group per optimizer step; dense groups hold a single row batch.
    fn batches(&self, rng: &mut TrainRng) -> Vec<Vec<LabeledBatch<L>>> {
        if self.contextual {
            let mut order: Vec<usize> = (0..self.conversations.len()).collect();
            order.shuffle(rng);
            return order
                .chunks(self.batch_size)
                .map(|chunk| chunk.iter().map(|&i| self.conversations[i].clone()).collect())
                .collect();
        }
        let mut rows: Vec<(usize, usize)> = self
            .conversations
            .iter()
            .enumerate()
            .flat_map(|(c, b)| (0..b.labels.len()).map(move |t| (c, t)))
            .collect();
        rows.shuffle(rng);
        rows.chunks(self.batch_size)
            .map(|chunk| {
                let width = self.conversations[0].features.ncols();
                let mut features = Array2::zeros((chunk.len(), width));
                let mut labels = Vec::with_capacity(chunk.len());
                for (mut row, &(c, t)) in features.rows_mut().into_iter().zip(chunk) {
                    row.assign(&self.conversations[c].features.row(t));
                    labels.push(self.conversations[c].labels[t].clone());
                }
                vec![LabeledBatch { features, labels }]
            })
            .collect()
    }
}

/// Mean loss and gradient over the sequences of one step.
fn mean_step<M, L>(
    group: &[LabeledBatch<L>],
    mut step: impl FnMut(&LabeledBatch<L>) -> Result<(f64, M)>,
) -> Result<(f64, M)>
where
    M: Params,
{
    let (first, rest) = group
        .split_first()
        .ok_or_else(|| Error::Validation("empty training step".into()))?;
    let (mut loss, mut grad) = step(first)?;
    if rest.is_empty() {
        return Ok((loss, grad));
    }
    for b in rest {
        let (l, g) = step(b)?;
        loss += l;
        grad.add_assign(&g);
    }
    let n = group.len() as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// Emotion-stage training: weighted cross-entropy or CRF loss.
pub struct EmotionTask {
    data: UtteranceData<usize>,
    val: Vec<EncodedConversation>,
    class_weights: [f64; NUM_EMOTIONS],
}

impl EmotionTask {
    /// `val` may be empty, in which case the training set is scored.
    pub fn new(
        train: &[EncodedConversation],
        val: &[EncodedConversation],
        class_weights: [f64; NUM_EMOTIONS],
        contextual: bool,
        batch_size: usize,
    ) -> Result<Self> {
        Ok(Self {
            data: UtteranceData::new(train, EncodedConversation::emotion_labels, contextual, batch_size)?,
            val: if val.is_empty() { train.to_vec() } else { val.to_vec() },
            class_weights,
        })
    }
}

impl StageTask for EmotionTask {
    type Model = EmotionModel;
    type Batch = Vec<LabeledBatch<usize>>;

    fn batches_per_epoch(&self) -> usize {
        self.data.batches_per_epoch()
    }

    fn batches(&self, rng: &mut TrainRng) -> Result<Vec<Self::Batch>> {
        Ok(self.data.batches(rng))
    }

    fn step(&self, model: &EmotionModel, batch: &Self::Batch, rng: &mut TrainRng) -> Result<(f64, EmotionModel)> {
        mean_step(batch, |batch| {
            model.loss_and_gradients(batch.features.view(), &batch.labels, &self.class_weights, Some(rng))
        })
    }

    fn validate(&self, model: &EmotionModel) -> Result<f64> {
        emotion_weighted_f1(model, &self.val)
    }
}

/// Weighted F1 of emotion predictions over labeled conversations.
pub fn emotion_weighted_f1(model: &EmotionModel, data: &[EncodedConversation]) -> Result<f64> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for c in data {
        pred.extend(model.predict_indices(c.features.view())?);
        gold.extend(c.emotion_labels()?);
    }
    Ok(stage_metrics(&pred, &gold, NUM_EMOTIONS)?.weighted_f1)
}

/// Candidate-cause training with binary cross-entropy.
pub struct CauseTask {
    data: UtteranceData<bool>,
    val: Vec<EncodedConversation>,
}

impl CauseTask {
    pub fn new(
        train: &[EncodedConversation],
        val: &[EncodedConversation],
        contextual: bool,
        batch_size: usize,
    ) -> Result<Self> {
        Ok(Self {
            data: UtteranceData::new(train, EncodedConversation::cause_labels, contextual, batch_size)?,
            val: if val.is_empty() { train.to_vec() } else { val.to_vec() },
        })
    }
}

impl StageTask for CauseTask {
    type Model = CauseModel;
    type Batch = Vec<LabeledBatch<bool>>;

    fn batches_per_epoch(&self) -> usize {
        self.data.batches_per_epoch()
    }

    fn batches(&self, rng: &mut TrainRng) -> Result<Vec<Self::Batch>> {
        Ok(self.data.batches(rng))
    }

    fn step(&self, model: &CauseModel, batch: &Self::Batch, rng: &mut TrainRng) -> Result<(f64, CauseModel)> {
        mean_step(batch, |batch| {
            model.loss_and_gradients(batch.features.view(), &batch.labels, Some(rng))
        })
    }

    fn validate(&self, model: &CauseModel) -> Result<f64> {
        cause_weighted_f1(model, &self.val)
    }
}

pub fn cause_weighted_f1(model: &CauseModel, data: &[EncodedConversation]) -> Result<f64> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for c in data {
        pred.extend(model.predict(c.features.view())?.into_iter().map(usize::from));
        gold.extend(c.cause_labels()?.into_iter().map(usize::from));
    }
    Ok(stage_metrics(&pred, &gold, 2)?.weighted_f1)
}

/// Frozen stage representations of one conversation plus its gold pairs.
struct PairSource {
    conversation_id: i64,
    emotion_reps: Array2<f64>,
    cause_reps: Array2<f64>,
    positives: Vec<(usize, usize)>,
    space: Vec<(usize, usize)>,
}

impl PairSource {
    fn new(c: &EncodedConversation, emotion: &EmotionModel, cause: &CauseModel) -> Result<Self> {
        Ok(Self {
            conversation_id: c.conversation.conversation_id,
            emotion_reps: emotion.representations(c.features.view())?,
            cause_reps: cause.representations(c.features.view())?,
            positives: positive_pairs(&c.conversation),
            space: candidate_space(&c.conversation),
        })
    }

    fn num_examples(&self, ratio: usize) -> usize {
        self.positives.len() + (ratio * self.positives.len()).min(self.space.len())
    }

    /// `(emotion row, cause row, label)` with positives first.
    fn examples(&self, ratio: usize, rng: &mut TrainRng) -> Vec<(usize, usize, bool)> {
        let negatives = sample_negative_pairs(self.conversation_id, &self.positives, &self.space, ratio, rng);
        self.positives
            .iter()
            .map(|&(e, c)| (e - 1, c - 1, true))
            .chain(
                negatives
                    .iter()
                    .map(|n| (n.emotion_utterance_id - 1, n.cause_utterance_id - 1, false)),
            )
            .collect()
    }

    fn inputs(&self, rows: &[(usize, usize)]) -> PairInputs {
        PairInputs::gather(self.emotion_reps.view(), self.cause_reps.view(), rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub inputs: PairInputs,
    pub labels: Vec<bool>,
}

/// Pairing training over teacher-forced candidates: gold non-neutral
/// emotion utterances against every utterance, negatives resampled each epoch
/// at `ratio` per positive.
pub struct PairingTask {
    train: Vec<PairSource>,
    val: PairBatch,
    ratio: usize,
    batch_size: usize,
    threshold: f64,
}

impl PairingTask {
    /// Validation negatives are drawn once from `val_seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        train: &[EncodedConversation],
        val: &[EncodedConversation],
        emotion: &EmotionModel,
        cause: &CauseModel,
        ratio: usize,
        batch_size: usize,
        threshold: f64,
        val_seed: u64,
    ) -> Result<Self> {
        if ratio == 0 || batch_size == 0 {
            return Err(Error::Config("negative ratio and batch_size must be positive".into()));
        }
        let sources = train
            .iter()
            .map(|c| PairSource::new(c, emotion, cause))
            .collect::<Result<Vec<_>>>()?;
        if sources.iter().all(|s| s.positives.is_empty()) {
            return Err(Error::Validation("no gold pairs to train the pairing model on".into()));
        }
        let val_sources = if val.is_empty() {
            None
        } else {
            Some(
                val.iter()
                    .map(|c| PairSource::new(c, emotion, cause))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let mut rng = TrainRng::seed_from_u64(val_seed);
        let mut parts = Vec::new();
        let mut labels = Vec::new();
        for s in val_sources.as_deref().unwrap_or(&sources) {
            let ex = s.examples(ratio, &mut rng);
            let rows: Vec<(usize, usize)> = ex.iter().map(|&(e, c, _)| (e, c)).collect();
            parts.push(s.inputs(&rows));
            labels.extend(ex.iter().map(|x| x.2));
        }
        Ok(Self {
            train: sources,
            val: PairBatch {
                inputs: PairInputs::concat(&parts)?,
                labels,
            },
            ratio,
            batch_size,
            threshold,
        })
    }
}

impl StageTask for PairingTask {
    type Model = PairingModel;
    type Batch = PairBatch;

    fn batches_per_epoch(&self) -> usize {
        let n: usize = self.train.iter().map(|s| s.num_examples(self.ratio)).sum();
        n.div_ceil(self.batch_size)
    }

    fn batches(&self, rng: &mut TrainRng) -> Result<Vec<PairBatch>> {
        let mut all: Vec<(usize, usize, usize, bool)> = Vec::new();
        for (i, s) in self.train.iter().enumerate() {
            all.extend(s.examples(self.ratio, rng).into_iter().map(|(e, c, l)| (i, e, c, l)));
        }
        all.shuffle(rng);
        all.chunks(self.batch_size)
            .map(|chunk| {
                let parts: Vec<PairInputs> = chunk
                    .iter()
                    .map(|&(i, e, c, _)| self.train[i].inputs(&[(e, c)]))
                    .collect();
                Ok(PairBatch {
                    inputs: PairInputs::concat(&parts)?,
                    labels: chunk.iter().map(|x| x.3).collect(),
                })
            })
            .collect()
    }

    fn step(&self, model: &PairingModel, batch: &PairBatch, _rng: &mut TrainRng) -> Result<(f64, PairingModel)> {
        model.loss_and_gradients(&batch.inputs, &batch.labels)
    }

    fn validate(&self, model: &PairingModel) -> Result<f64> {
        let probs = model.probabilities(&self.val.inputs)?;
        let pred: Vec<usize> = probs.iter().map(|&p| usize::from(p > self.threshold)).collect();
        let gold: Vec<usize> = self.val.labels.iter().map(|&l| usize::from(l)).collect();
        Ok(stage_metrics(&pred, &gold, 2)?.weighted_f1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, Emotion, EmotionCausePair, SplitTag, Utterance};
    use crate::embeddings::{ModalityDims, PlantedRule, SyntheticProvider};
    use crate::pipeline::{CauseModelConfig, CauseVariant, EmotionModelConfig, EmotionVariant, PairingModelConfig};

    /// Five conversations where every non-neutral utterance causes itself
    /// and its predecessor.
    fn planted(n: usize) -> (Dataset, Vec<EncodedConversation>) {
        let emotions = [
            Emotion::Neutral,
            Emotion::Joy,
            Emotion::Anger,
            Emotion::Neutral,
            Emotion::Sadness,
        ];
        let conversations: Vec<Conversation> = (0..n)
            .map(|k| {
                let len = 4 + k % 3;
                let utts: Vec<Utterance> = (1..=len)
                    .map(|i| Utterance {
                        utterance_id: i,
                        speaker: "A".into(),
                        transcript: String::new(),
                        gold_emotion: Some(emotions[(i + k) % emotions.len()]),
                    })
                    .collect();
                let mut pairs = Vec::new();
                for u in &utts {
                    let e = u.gold_emotion.unwrap();
                    if !e.is_neutral() {
                        pairs.push(EmotionCausePair::new(u.utterance_id, e, u.utterance_id));
                        if u.utterance_id > 1 {
                            pairs.push(EmotionCausePair::new(u.utterance_id, e, u.utterance_id - 1));
                        }
                    }
                }
                Conversation {
                    conversation_id: k as i64,
                    utterances: utts,
                    gold_pairs: Some(pairs),
                }
            })
            .collect();
        let ds = Dataset::new(conversations, SplitTag::Train).unwrap();
        let provider =
            SyntheticProvider::new(1, ModalityDims::new(10, 3, 3), &ds, Some(PlantedRule::default())).unwrap();
        let enc = encode_dataset(&ds.conversations, &provider).unwrap();
        (ds, enc)
    }

    fn small_train(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: lr,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn emotion_loss_decreases_over_fifty_steps() {
        let (_, data) = planted(5);
        for variant in EmotionVariant::ALL {
            let mut cfg = EmotionModelConfig::new(variant, 16);
            cfg.encoder.hidden_size = 8;
            cfg.encoder.num_layers = 2;
            let model = EmotionModel::new(cfg, &mut TrainRng::seed_from_u64(0)).unwrap();
            let task = EmotionTask::new(&data, &[], [1.0; 7], variant.is_contextual(), 8).unwrap();
            let epochs = 50usize.div_ceil(task.batches_per_epoch());
            let mut trainer = Trainer::new(model, small_train(epochs, 1e-2), task.batches_per_epoch()).unwrap();
            let logs = trainer.fit(&task, |_| {}).unwrap();
            assert!(trainer.steps_done >= 50);
            let (first, last) = (logs[0].train_loss, logs.last().unwrap().train_loss);
            assert!(last < first, "{variant}: {first} -> {last}");
        }
    }

    #[test]
    fn planted_causes_are_learned() {
        let (_, data) = planted(30);
        let mut cfg = CauseModelConfig::new(CauseVariant::Dense, 16);
        cfg.encoder.embedding_dropout = 0.0;
        let model = CauseModel::new(cfg, &mut TrainRng::seed_from_u64(0)).unwrap();
        let task = CauseTask::new(&data, &[], false, 8).unwrap();
        let mut trainer = Trainer::new(model, small_train(60, 5e-2), task.batches_per_epoch()).unwrap();
        trainer.fit(&task, |_| {}).unwrap();
        let mut correct = 0;
        let mut total = 0;
        for c in &data {
            let pred = trainer.best_model.predict(c.features.view()).unwrap();
            let gold = derive_cause_labels(&c.conversation);
            correct += pred.iter().zip(&gold).filter(|(a, b)| a == b).count();
            total += gold.len();
        }
        assert!(correct as f64 / total as f64 >= 0.99, "{correct}/{total}");
    }

    #[test]
    fn planted_pairs_are_learned() {
        let (_, data) = planted(30);
        let (emotion, cause) = (
            EmotionModel::new(
                EmotionModelConfig::new(EmotionVariant::Dense, 16),
                &mut TrainRng::seed_from_u64(0),
            )
            .unwrap(),
            CauseModel::new(
                CauseModelConfig::new(CauseVariant::Dense, 16),
                &mut TrainRng::seed_from_u64(1),
            )
            .unwrap(),
        );
        let pairing = PairingModel::new(PairingModelConfig::new(16, 16), &mut TrainRng::seed_from_u64(2)).unwrap();
        let task = PairingTask::new(&data, &[], &emotion, &cause, 5, 16, 0.5, 9).unwrap();
        let mut trainer = Trainer::new(pairing, small_train(20, 3e-2), task.batches_per_epoch()).unwrap();
        trainer.fit(&task, |_| {}).unwrap();
        let probs = trainer.best_model.probabilities(&task.val.inputs).unwrap();
        let correct = probs
            .iter()
            .zip(&task.val.labels)
            .filter(|(&p, &l)| (p > 0.5) == l)
            .count();
        assert!(correct as f64 / probs.len() as f64 >= 0.99, "{correct}/{}", probs.len());
    }

    #[test]
    fn pairing_batches_match_declared_count() {
        let (_, data) = planted(6);
        let emotion = EmotionModel::new(
            EmotionModelConfig::new(EmotionVariant::Dense, 16),
            &mut TrainRng::seed_from_u64(0),
        )
        .unwrap();
        let cause = CauseModel::new(
            CauseModelConfig::new(CauseVariant::Dense, 16),
            &mut TrainRng::seed_from_u64(0),
        )
        .unwrap();
        let task = PairingTask::new(&data, &[], &emotion, &cause, 5, 4, 0.5, 0).unwrap();
        for seed in 0..3 {
            let batches = task.batches(&mut TrainRng::seed_from_u64(seed)).unwrap();
            assert_eq!(batches.len(), task.batches_per_epoch());
        }
    }

    #[test]
    fn resuming_reproduces_the_next_epoch() {
        let (_, data) = planted(4);
        let mut cfg = EmotionModelConfig::new(EmotionVariant::Bilstm, 16);
        cfg.encoder.hidden_size = 4;
        cfg.encoder.num_layers = 2;
        let model = EmotionModel::new(cfg, &mut TrainRng::seed_from_u64(0)).unwrap();
        let task = EmotionTask::new(&data, &[], [1.0; 7], true, 8).unwrap();
        let mut a = Trainer::new(model.clone(), small_train(3, 1e-2), task.batches_per_epoch()).unwrap();
        a.run_epoch(&task).unwrap();
        let saved = a.to_checkpoint(json!(cfg)).to_bytes();
        let next = a.run_epoch(&task).unwrap();

        let ckpt = Checkpoint::from_bytes(&saved).unwrap();
        let template = EmotionModel::zeros(cfg).unwrap();
        let mut b = Trainer::from_checkpoint(&ckpt, template, task.batches_per_epoch()).unwrap();
        let resumed = b.run_epoch(&task).unwrap();
        assert_eq!(next, resumed);
        assert_eq!(a, b);
    }

    #[test]
    fn sequence_steps_average_their_conversations() {
        let (_, data) = planted(5);
        let mut cfg = EmotionModelConfig::new(EmotionVariant::BilstmCrf, 16);
        cfg.encoder.hidden_size = 4;
        cfg.encoder.num_layers = 1;
        cfg.encoder.embedding_dropout = 0.0;
        cfg.encoder.inter_layer_dropout = 0.0;
        let model = EmotionModel::new(cfg, &mut TrainRng::seed_from_u64(0)).unwrap();
        let grouped = EmotionTask::new(&data, &[], [1.0; 7], true, 2).unwrap();
        let single = EmotionTask::new(&data, &[], [1.0; 7], true, 1).unwrap();
        assert_eq!(grouped.batches_per_epoch(), 3);
        assert_eq!(single.batches_per_epoch(), 5);

        let rng = &mut TrainRng::seed_from_u64(1);
        let groups = grouped.batches(rng).unwrap();
        assert_eq!(groups.iter().map(Vec::len).collect::<Vec<_>>(), [2, 2, 1]);
        let (loss, grad) = grouped.step(&model, &groups[0], rng).unwrap();
        let mut want_grad = model.zeros_like();
        let mut want_loss = 0.0;
        for b in &groups[0] {
            let (l, g) = single.step(&model, &vec![b.clone()], rng).unwrap();
            want_loss += l / 2.0;
            want_grad.add_assign(&g);
        }
        want_grad.scale(0.5);
        assert!((loss - want_loss).abs() < 1e-12);
        for (a, b) in grad.flatten().concat().iter().zip(want_grad.flatten().concat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let (_, data) = planted(2);
        let mut model = EmotionModel::new(
            EmotionModelConfig::new(EmotionVariant::Dense, 16),
            &mut TrainRng::seed_from_u64(0),
        )
        .unwrap();
        model.head.bias[0] = f64::NAN;
        let task = EmotionTask::new(&data, &[], [1.0; 7], false, 4).unwrap();
        let mut trainer = Trainer::new(model, small_train(1, 1e-2), task.batches_per_epoch()).unwrap();
        assert!(matches!(
            trainer.run_epoch(&task),
            Err(Error::NonFiniteLoss { epoch: 0, step: 0 })
        ));
    }

    #[test]
    fn unlabeled_training_data_is_rejected() {
        let (_, mut data) = planted(2);
        data[1].conversation.utterances[0].gold_emotion = None;
        assert!(EmotionTask::new(&data, &[], [1.0; 7], false, 4).is_err());
    }
}
