//! The three stage models, their training tasks, and end-to-end inference.

mod cause;
mod emotion;
mod encoder;
mod pairing;
mod predict;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Checkpoint;

pub use cause::{CauseModel, CauseModelConfig};
pub use emotion::{EmotionModel, EmotionModelConfig};
pub use encoder::{EncoderConfig, StageEncoder};
pub use pairing::{
    candidate_space, conversation_pair_examples, positive_pairs, sample_negative_pairs, PairExample, PairInputs,
    PairingModel, PairingModelConfig,
};
pub use predict::{ConversationPrediction, Pipeline};
pub use train::{
    cause_weighted_f1, emotion_weighted_f1, encode_dataset, CauseTask, EmotionTask, EncodedConversation, EpochLog,
    LabeledBatch, PairBatch, PairingTask, StageTask, TrainConfig, Trainer,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionVariant {
    Dense,
    Bilstm,
    BilstmCrf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseVariant {
    Dense,
    Bilstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Emotion,
    Cause,
    Pairing,
}

impl EmotionVariant {
    pub const ALL: [EmotionVariant; 3] = [EmotionVariant::Dense, EmotionVariant::Bilstm, EmotionVariant::BilstmCrf];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionVariant::Dense => "dense",
            EmotionVariant::Bilstm => "bilstm",
            EmotionVariant::BilstmCrf => "bilstm_crf",
        }
    }

    pub fn is_contextual(self) -> bool {
        self != EmotionVariant::Dense
    }
}

impl CauseVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            CauseVariant::Dense => "dense",
            CauseVariant::Bilstm => "bilstm",
        }
    }

    pub fn is_contextual(self) -> bool {
        self == CauseVariant::Bilstm
    }
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Emotion => "emotion",
            Stage::Cause => "cause",
            Stage::Pairing => "pairing",
        }
    }
}

macro_rules! string_enum {
    ($ty:ty, $what:literal, [$($v:expr),+]) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> std::result::Result<Self, Error> {
                let s = s.trim().to_ascii_lowercase().replace('-', "_");
                [$($v),+]
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| {
                        let known: Vec<&str> = [$($v),+].iter().map(|v| v.as_str()).collect();
                        Error::Config(format!("unknown {} `{s}`, expected one of {known:?}", $what))
                    })
            }
        }
    };
}

string_enum!(
    EmotionVariant,
    "emotion variant",
    [EmotionVariant::Dense, EmotionVariant::Bilstm, EmotionVariant::BilstmCrf]
);
string_enum!(
    CauseVariant,
    "cause variant",
    [CauseVariant::Dense, CauseVariant::Bilstm]
);
string_enum!(Stage, "stage", [Stage::Emotion, Stage::Cause, Stage::Pairing]);

pub(crate) fn checkpoint_header<C: Serialize>(stage: Stage, config: &C) -> serde_json::Value {
    serde_json::json!({ "stage": stage, "model": config })
}

/// Reads the model config of a stage checkpoint, rejecting other stages.
pub(crate) fn read_checkpoint_config<C: for<'de> Deserialize<'de>>(ckpt: &Checkpoint, stage: Stage) -> Result<C> {
    let found: Stage = serde_json::from_value(ckpt.config["stage"].clone())
        .map_err(|e| Error::Checkpoint(format!("missing or invalid stage tag: {e}")))?;
    if found != stage {
        return Err(Error::Checkpoint(format!(
            "expected a {stage} checkpoint, found {found}"
        )));
    }
    serde_json::from_value(ckpt.config["model"].clone())
        .map_err(|e| Error::Checkpoint(format!("invalid {stage} model config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in EmotionVariant::ALL {
            assert_eq!(v.to_string().parse::<EmotionVariant>().unwrap(), v);
        }
        assert_eq!(
            "BiLSTM-CRF".parse::<EmotionVariant>().unwrap(),
            EmotionVariant::BilstmCrf
        );
        assert_eq!("bilstm".parse::<CauseVariant>().unwrap(), CauseVariant::Bilstm);
        assert!("bilstm_crf".parse::<CauseVariant>().is_err());
        assert!("decoder".parse::<Stage>().is_err());
        assert_eq!(
            serde_json::to_string(&EmotionVariant::BilstmCrf).unwrap(),
            "\"bilstm_crf\""
        );
    }
}
