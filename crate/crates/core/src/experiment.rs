//! Experiment configuration and the file-backed steps behind each command:
//! prepare splits, train one stage, predict, evaluate.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{
    emotion_class_weights, emotion_class_weights_with_floor, split_train_val, Dataset, Emotion, SplitTag, NUM_EMOTIONS,
};
use crate::crf::CrfDecoding;
use crate::embeddings::{EmbeddingProvider, ModalityDims, PlantedRule, PrecomputedProvider, SyntheticProvider};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_datasets, EvaluationReport};
use crate::nn::{AdamWConfig, Checkpoint, TrainRng};
use crate::pipeline::{
    encode_dataset, CauseModel, CauseModelConfig, CauseTask, CauseVariant, EmotionModel, EmotionModelConfig,
    EmotionTask, EmotionVariant, EncoderConfig, EpochLog, PairingModel, PairingModelConfig, PairingTask, Pipeline,
    Stage, StageTask, TrainConfig, Trainer,
};
use crate::synthetic::{generate_corpus, SyntheticCorpusConfig};

/// Where conversations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    File { path: PathBuf },
    Synthetic(SyntheticCorpusConfig),
}

/// Where per-modality utterance vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSource {
    Files {
        text: PathBuf,
        audio: PathBuf,
        video: PathBuf,
    },
    Synthetic {
        /// Defaults to the experiment seed.
        #[serde(default)]
        seed: Option<u64>,
        dims: ModalityDims,
        #[serde(default)]
        planted: Option<PlantedRule>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Rows per step for dense variants and pair examples for pairing.
    pub batch_size: usize,
    /// Conversations per step for sequence variants.
    pub conversations_per_step: usize,
}

impl StageSettings {
    fn step_size(&self, contextual: bool) -> usize {
        if contextual {
            self.conversations_per_step
        } else {
            self.batch_size
        }
    }

    fn with_epochs(epochs: usize) -> Self {
        Self {
            epochs,
            learning_rate: 1e-3,
            batch_size: 64,
            conversations_per_step: 1,
        }
    }
}

impl Default for StageSettings {
    fn default() -> Self {
        Self::with_epochs(40)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub embeddings: EmbeddingSource,
    pub output_dir: PathBuf,
    pub val_fraction: f64,
    /// Minimum count substituted for absent emotions; absent emotions are an
    /// error when unset.
    pub class_weight_floor: Option<usize>,
    pub emotion_variant: EmotionVariant,
    pub cause_variant: CauseVariant,
    pub hidden_size: usize,
    pub emotion_layers: usize,
    pub cause_layers: usize,
    pub embedding_dropout: f64,
    pub inter_layer_dropout: f64,
    pub crf_decoding: CrfDecoding,
    pub max_distance: usize,
    pub distance_dim: usize,
    pub threshold: f64,
    pub negative_ratio: usize,
    pub warmup_fraction: f64,
    pub optimizer: AdamWConfig,
    pub emotion: StageSettings,
    pub cause: StageSettings,
    pub pairing: StageSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::Synthetic(SyntheticCorpusConfig::default()),
            embeddings: EmbeddingSource::Synthetic {
                seed: None,
                dims: ModalityDims::new(16, 8, 8),
                planted: Some(PlantedRule::default()),
            },
            output_dir: PathBuf::from("runs/default"),
            val_fraction: 0.1,
            class_weight_floor: None,
            emotion_variant: EmotionVariant::BilstmCrf,
            cause_variant: CauseVariant::Bilstm,
            hidden_size: 256,
            emotion_layers: 4,
            cause_layers: 3,
            embedding_dropout: 0.3,
            inter_layer_dropout: 0.3,
            crf_decoding: CrfDecoding::Viterbi,
            max_distance: 12,
            distance_dim: 32,
            threshold: 0.5,
            negative_ratio: 5,
            warmup_fraction: 0.1,
            optimizer: AdamWConfig::default(),
            emotion: StageSettings::with_epochs(60),
            cause: StageSettings::with_epochs(40),
            pairing: StageSettings::with_epochs(40),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Sets a dotted field, e.g. `emotion.epochs=5` or `data.kind="file"`.
    /// The value is parsed as JSON, falling back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut root;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = slot
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("`{}` is not an object", parts[..i].join("."))))?;
            if i + 1 < parts.len() && !obj.contains_key(*part) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            slot = obj.entry(part.to_string()).or_insert(Value::Null);
        }
        *slot = value;
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.negative_ratio == 0 {
            return Err(Error::Config("negative_ratio must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1), got {}",
                self.threshold
            )));
        }
        for (name, s) in [
            ("emotion", &self.emotion),
            ("cause", &self.cause),
            ("pairing", &self.pairing),
        ] {
            if s.epochs == 0 || s.batch_size == 0 || s.conversations_per_step == 0 || !(s.learning_rate > 0.0) {
                return Err(Error::Config(format!(
                    "{name}: epochs, batch_size, conversations_per_step and learning_rate must be positive"
                )));
            }
        }
        Ok(())
    }

    fn encoder(&self, input_dim: usize, layers: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden_size: self.hidden_size,
            num_layers: layers,
            embedding_dropout: self.embedding_dropout,
            inter_layer_dropout: self.inter_layer_dropout,
        }
    }

    pub fn emotion_model_config(&self, input_dim: usize) -> EmotionModelConfig {
        EmotionModelConfig {
            variant: self.emotion_variant,
            encoder: self.encoder(input_dim, self.emotion_layers),
            decoding: self.crf_decoding,
        }
    }

    pub fn cause_model_config(&self, input_dim: usize) -> CauseModelConfig {
        CauseModelConfig {
            variant: self.cause_variant,
            encoder: self.encoder(input_dim, self.cause_layers),
            threshold: self.threshold,
        }
    }

    pub fn pairing_model_config(&self, emotion_rep_dim: usize, cause_rep_dim: usize) -> PairingModelConfig {
        PairingModelConfig {
            emotion_rep_dim,
            cause_rep_dim,
            max_distance: self.max_distance,
            distance_dim: self.distance_dim,
            threshold: self.threshold,
        }
    }

    fn stage_settings(&self, stage: Stage) -> &StageSettings {
        match stage {
            Stage::Emotion => &self.emotion,
            Stage::Cause => &self.cause,
            Stage::Pairing => &self.pairing,
        }
    }

    pub fn train_config(&self, stage: Stage) -> TrainConfig {
        let s = self.stage_settings(stage);
        TrainConfig {
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            warmup_fraction: self.warmup_fraction,
            optimizer: self.optimizer,
            seed: derive_seed(self.seed, stage_tag(stage)),
        }
    }
}

fn stage_tag(stage: Stage) -> u64 {
    match stage {
        Stage::Emotion => 1,
        Stage::Cause => 2,
        Stage::Pairing => 3,
    }
}

/// Independent sub-seed for `tag` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrepareReport {
    pub train_conversations: usize,
    pub val_conversations: usize,
    pub train_utterances: usize,
    /// Emotion counts over the whole corpus.
    pub histogram: BTreeMap<&'static str, usize>,
    /// Weights computed from the training split.
    pub class_weights: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub variant: String,
    pub epochs_run: usize,
    pub best_val_weighted_f1: Option<f64>,
    pub checkpoint: PathBuf,
}

/// A configured experiment rooted at `config.output_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: ExperimentConfig,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn split_path(&self, tag: SplitTag) -> PathBuf {
        self.output_dir().join(match tag {
            SplitTag::Train => "train.json",
            SplitTag::Val => "val.json",
            SplitTag::Test => "test.json",
        })
    }

    /// Best-validation model of a stage.
    pub fn checkpoint_path(&self, stage: Stage) -> PathBuf {
        self.output_dir().join(format!("{stage}.ckpt"))
    }

    /// Full trainer state after the latest epoch, used by `--resume`.
    pub fn state_path(&self, stage: Stage) -> PathBuf {
        self.output_dir().join(format!("{stage}.state.ckpt"))
    }

    pub fn load_corpus(&self) -> Result<Dataset> {
        match &self.config.data {
            DataSource::File { path } => Dataset::load(path, SplitTag::Train),
            DataSource::Synthetic(cfg) => generate_corpus(cfg),
        }
    }

    /// Provider covering `dataset`. Synthetic providers are generated for
    /// exactly these conversations.
    pub fn provider(&self, dataset: &Dataset) -> Result<Box<dyn EmbeddingProvider>> {
        match &self.config.embeddings {
            EmbeddingSource::Files { text, audio, video } => {
                Ok(Box::new(PrecomputedProvider::load(text, audio, video)?))
            }
            EmbeddingSource::Synthetic { seed, dims, planted } => Ok(Box::new(SyntheticProvider::new(
                seed.unwrap_or(self.config.seed),
                *dims,
                dataset,
                *planted,
            )?)),
        }
    }

    fn class_weights(&self, train: &Dataset) -> Result<[f64; NUM_EMOTIONS]> {
        match self.config.class_weight_floor {
            Some(floor) => emotion_class_weights_with_floor(train, floor),
            None => emotion_class_weights(train),
        }
    }

    /// Writes `train.json`, `val.json` and `class_weights.json`.
    pub fn prepare(&self) -> Result<PrepareReport> {
        let corpus = self.load_corpus()?;
        if corpus.is_empty() {
            return Err(Error::Validation("dataset has no conversations".into()));
        }
        self.provider(&corpus)?.check_coverage(&corpus)?;
        let (train, val) = split_train_val(&corpus, self.config.val_fraction, self.config.seed)?;
        let weights = self.class_weights(&train)?;
        let hist = corpus.emotion_histogram();
        let report = PrepareReport {
            train_conversations: train.len(),
            val_conversations: val.len(),
            train_utterances: train.num_utterances(),
            histogram: Emotion::ALL.iter().map(|e| (e.as_str(), hist[e.index()])).collect(),
            class_weights: Emotion::ALL.iter().map(|e| (e.as_str(), weights[e.index()])).collect(),
        };
        fs::create_dir_all(self.output_dir()).map_err(|e| Error::io(self.output_dir(), e))?;
        train.save(self.split_path(SplitTag::Train))?;
        val.save(self.split_path(SplitTag::Val))?;
        let path = self.output_dir().join("class_weights.json");
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(report)
    }

    pub fn load_splits(&self) -> Result<(Dataset, Dataset)> {
        let load = |tag| {
            let path = self.split_path(tag);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "{} not found; run `prepare` first",
                    path.display()
                )));
            }
            Dataset::load(path, tag)
        };
        Ok((load(SplitTag::Train)?, load(SplitTag::Val)?))
    }

    /// Trains one stage, writing the best model and the resumable state after
    /// every epoch. With `resume`, continues from the saved state if present.
    pub fn train_stage(&self, stage: Stage, resume: bool, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<StageSummary> {
        self.train_stage_for(stage, resume, None, on_epoch)
    }

    /// As [`Experiment::train_stage`], returning after at most `stop_after`
    /// epochs; a later call with `resume` picks up where this one stopped.
    pub fn train_stage_for(
        &self,
        stage: Stage,
        resume: bool,
        stop_after: Option<usize>,
        on_epoch: &mut dyn FnMut(&EpochLog),
    ) -> Result<StageSummary> {
        let (train, val) = self.load_splits()?;
        let both = Dataset::new(
            train.conversations.iter().chain(&val.conversations).cloned().collect(),
            SplitTag::Train,
        )?;
        let provider = self.provider(&both)?;
        let train_enc = encode_dataset(&train.conversations, provider.as_ref())?;
        let val_enc = encode_dataset(&val.conversations, provider.as_ref())?;
        let input_dim = provider.dims().total();
        let settings = self.config.stage_settings(stage);
        let mut init_rng = TrainRng::seed_from_u64(derive_seed(self.config.seed, 100 + stage_tag(stage)));

        match stage {
            Stage::Emotion => {
                let cfg = self.config.emotion_model_config(input_dim);
                let task = EmotionTask::new(
                    &train_enc,
                    &val_enc,
                    self.class_weights(&train)?,
                    cfg.variant.is_contextual(),
                    settings.step_size(cfg.variant.is_contextual()),
                )?;
                let model = EmotionModel::new(cfg, &mut init_rng)?;
                let trainer = self.fit(stage, resume, stop_after, model, &task, &cfg, on_epoch, |m| {
                    m.to_checkpoint()
                })?;
                Ok(self.summary(stage, cfg.variant.as_str(), &trainer))
            }
            Stage::Cause => {
                let cfg = self.config.cause_model_config(input_dim);
                let task = CauseTask::new(
                    &train_enc,
                    &val_enc,
                    cfg.variant.is_contextual(),
                    settings.step_size(cfg.variant.is_contextual()),
                )?;
                let model = CauseModel::new(cfg, &mut init_rng)?;
                let trainer = self.fit(stage, resume, stop_after, model, &task, &cfg, on_epoch, |m| {
                    m.to_checkpoint()
                })?;
                Ok(self.summary(stage, cfg.variant.as_str(), &trainer))
            }
            Stage::Pairing => {
                let emotion = EmotionModel::from_checkpoint(&self.require(Stage::Emotion)?)?;
                let cause = CauseModel::from_checkpoint(&self.require(Stage::Cause)?)?;
                let cfg = self.config.pairing_model_config(emotion.rep_dim(), cause.rep_dim());
                let task = PairingTask::new(
                    &train_enc,
                    &val_enc,
                    &emotion,
                    &cause,
                    self.config.negative_ratio,
                    settings.batch_size,
                    self.config.threshold,
                    derive_seed(self.config.seed, 200),
                )?;
                let model = PairingModel::new(cfg, &mut init_rng)?;
                let trainer = self.fit(stage, resume, stop_after, model, &task, &cfg, on_epoch, |m| {
                    m.to_checkpoint()
                })?;
                Ok(self.summary(stage, "default", &trainer))
            }
        }
    }

    fn require(&self, stage: Stage) -> Result<Checkpoint> {
        let path = self.checkpoint_path(stage);
        if !path.exists() {
            return Err(Error::Config(format!(
                "{} not found; train the {stage} stage first",
                path.display()
            )));
        }
        Checkpoint::load(path)
    }

    #[allow(clippy::too_many_arguments)]
    fn fit<T, C>(
        &self,
        stage: Stage,
        resume: bool,
        stop_after: Option<usize>,
        model: T::Model,
        task: &T,
        model_config: &C,
        on_epoch: &mut dyn FnMut(&EpochLog),
        to_checkpoint: impl Fn(&T::Model) -> Checkpoint,
    ) -> Result<Trainer<T::Model>>
    where
        T: StageTask,
        C: Serialize + PartialEq + for<'de> Deserialize<'de>,
    {
        let train_config = self.config.train_config(stage);
        let state_path = self.state_path(stage);
        let mut trainer = if resume && state_path.exists() {
            let ckpt = Checkpoint::load(&state_path)?;
            let saved: C = serde_json::from_value(ckpt.config["model"].clone())
                .map_err(|e| Error::Checkpoint(format!("saved {stage} state: {e}")))?;
            if saved != *model_config {
                return Err(Error::Checkpoint(format!(
                    "saved {stage} state was trained with a different model config"
                )));
            }
            let t = Trainer::from_checkpoint(&ckpt, model, task.batches_per_epoch())?;
            if t.config != train_config {
                return Err(Error::Checkpoint(format!(
                    "saved {stage} state was trained with a different training config"
                )));
            }
            t
        } else {
            Trainer::new(model, train_config, task.batches_per_epoch())?
        };
        fs::create_dir_all(self.output_dir()).map_err(|e| Error::io(self.output_dir(), e))?;
        let model_json = serde_json::to_value(model_config).expect("config serializes");
        let mut ran = 0;
        while !trainer.finished() && stop_after.is_none_or(|n| ran < n) {
            ran += 1;
            let log = trainer.run_epoch(task)?;
            to_checkpoint(&trainer.best_model).save(self.checkpoint_path(stage))?;
            trainer.to_checkpoint(model_json.clone()).save(&state_path)?;
            on_epoch(&log);
        }
        if !self.checkpoint_path(stage).exists() {
            to_checkpoint(&trainer.best_model).save(self.checkpoint_path(stage))?;
        }
        Ok(trainer)
    }

    fn summary<M>(&self, stage: Stage, variant: &str, trainer: &Trainer<M>) -> StageSummary {
        StageSummary {
            stage,
            variant: variant.to_string(),
            epochs_run: trainer.epochs_done,
            best_val_weighted_f1: trainer.best_val_f1,
            checkpoint: self.checkpoint_path(stage),
        }
    }

    pub fn load_pipeline(&self) -> Result<Pipeline> {
        Pipeline::new(
            EmotionModel::from_checkpoint(&self.require(Stage::Emotion)?)?,
            CauseModel::from_checkpoint(&self.require(Stage::Cause)?)?,
            PairingModel::from_checkpoint(&self.require(Stage::Pairing)?)?,
        )
    }

    pub fn predict(&self, pipeline: &Pipeline, input: &Dataset) -> Result<Dataset> {
        if input.is_empty() {
            return Ok(input.clone());
        }
        let provider = self.provider(input)?;
        if provider.dims().total() != pipeline.input_dim() {
            return Err(Error::Shape(format!(
                "embeddings are {} wide, checkpoints expect {}",
                provider.dims().total(),
                pipeline.input_dim()
            )));
        }
        pipeline.predict_dataset(input, provider.as_ref())
    }

    /// Prepare, train all three stages, predict the validation split and
    /// score it.
    pub fn run_all(&self, on_epoch: &mut dyn FnMut(Stage, &EpochLog)) -> Result<EvaluationReport> {
        self.prepare()?;
        for stage in [Stage::Emotion, Stage::Cause, Stage::Pairing] {
            self.train_stage(stage, false, &mut |log| on_epoch(stage, log))?;
        }
        let (_, val) = self.load_splits()?;
        let predictions = self.predict(&self.load_pipeline()?, &val)?;
        evaluate_datasets(&val, &predictions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_published_setup() {
        let c = ExperimentConfig::default();
        assert_eq!((c.emotion.epochs, c.cause.epochs, c.pairing.epochs), (60, 40, 40));
        assert_eq!((c.emotion_layers, c.cause_layers), (4, 3));
        assert_eq!((c.embedding_dropout, c.inter_layer_dropout), (0.3, 0.3));
        assert_eq!((c.negative_ratio, c.val_fraction), (5, 0.1));
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&text).unwrap(), c);
        let partial = ExperimentConfig::from_json_str(r#"{"seed": 9, "emotion": {"epochs": 5}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.emotion.epochs, 5);
        assert_eq!(partial.emotion.batch_size, 64);
        assert!(ExperimentConfig::from_json_str(r#"{"seeed": 9}"#).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut c = ExperimentConfig::default();
        c.set("emotion.epochs=5").unwrap();
        c.set("emotion_variant=dense").unwrap();
        c.set("output_dir=/tmp/x").unwrap();
        c.set(r#"data={"kind":"file","path":"a.json"}"#).unwrap();
        assert_eq!(c.emotion.epochs, 5);
        assert_eq!(c.emotion_variant, EmotionVariant::Dense);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.data, DataSource::File { path: "a.json".into() });
        assert!(c.set("emotion.epochs=-1").is_err());
        assert!(c.set("nope.epochs=1").is_err());
        assert!(c.set("emotion_variant=crf").is_err());
        assert!(c.set("no_equals").is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let c = ExperimentConfig::default();
        let seeds: Vec<u64> = [Stage::Emotion, Stage::Cause, Stage::Pairing]
            .iter()
            .map(|&s| c.train_config(s).seed)
            .collect();
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
    }
}
