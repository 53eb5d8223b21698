use std::collections::BTreeSet;

use ndarray::ArrayView2;

use super::pairing::PairInputs;
use super::{CauseModel, EmotionModel, PairingModel};
use crate::corpus::{Conversation, Dataset, Emotion, EmotionCausePair};
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};

/// Stage outputs for one conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationPrediction {
    pub emotions: Vec<Emotion>,
    pub causes: Vec<bool>,
    /// Sorted by emotion id, then cause id.
    pub pairs: Vec<EmotionCausePair>,
}

/// The three trained stage models composed for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub emotion: EmotionModel,
    pub cause: CauseModel,
    pub pairing: PairingModel,
}

impl Pipeline {
    /// Fails when the models disagree on feature or representation widths.
    pub fn new(emotion: EmotionModel, cause: CauseModel, pairing: PairingModel) -> Result<Self> {
        if emotion.config.encoder.input_dim != cause.config.encoder.input_dim {
            return Err(Error::Shape(format!(
                "emotion model reads width {}, cause model reads {}",
                emotion.config.encoder.input_dim, cause.config.encoder.input_dim
            )));
        }
        let expected = (pairing.config.emotion_rep_dim, pairing.config.cause_rep_dim);
        if (emotion.rep_dim(), cause.rep_dim()) != expected {
            return Err(Error::Shape(format!(
                "stage representations are ({}, {}) wide, pairing model expects {expected:?}",
                emotion.rep_dim(),
                cause.rep_dim()
            )));
        }
        Ok(Self {
            emotion,
            cause,
            pairing,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.emotion.config.encoder.input_dim
    }

    /// Row `i` of `features` belongs to utterance id `i + 1`. A pair is kept
    /// when the emotion is non-neutral, the cause is a predicted candidate and
    /// the pairing probability is strictly above the threshold.
    pub fn predict_conversation(&self, features: ArrayView2<f64>) -> Result<ConversationPrediction> {
        let emotions = self.emotion.predict(features)?;
        let causes = self.cause.predict(features)?;
        let emotion_rows: Vec<usize> = (0..emotions.len()).filter(|&i| !emotions[i].is_neutral()).collect();
        let cause_rows: Vec<usize> = (0..causes.len()).filter(|&i| causes[i]).collect();
        let candidates: Vec<(usize, usize)> = emotion_rows
            .iter()
            .flat_map(|&e| cause_rows.iter().map(move |&c| (e, c)))
            .collect();
        if candidates.is_empty() {
            return Ok(ConversationPrediction {
                emotions,
                causes,
                pairs: Vec::new(),
            });
        }
        let e_reps = self.emotion.representations(features)?;
        let c_reps = self.cause.representations(features)?;
        let inputs = PairInputs::gather(e_reps.view(), c_reps.view(), &candidates);
        let probs = self.pairing.probabilities(&inputs)?;
        let pairs: BTreeSet<EmotionCausePair> = candidates
            .iter()
            .zip(probs.iter())
            .filter(|(_, &p)| p > self.pairing.config.threshold)
            .map(|(&(e, c), _)| EmotionCausePair::new(e + 1, emotions[e], c + 1))
            .collect();
        Ok(ConversationPrediction {
            emotions,
            causes,
            pairs: pairs.into_iter().collect(),
        })
    }

    pub fn predict_pairs(&self, features: ArrayView2<f64>) -> Result<Vec<EmotionCausePair>> {
        Ok(self.predict_conversation(features)?.pairs)
    }

    /// A copy of `dataset` whose emotions and pair lists are predictions.
    pub fn predict_dataset(&self, dataset: &Dataset, provider: &dyn EmbeddingProvider) -> Result<Dataset> {
        provider.check_coverage(dataset)?;
        let conversations = dataset
            .conversations
            .iter()
            .map(|conv| {
                let features = provider.conversation_matrix(conv)?;
                let pred = self.predict_conversation(features.view())?;
                Ok(with_predictions(conv, pred))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(conversations, dataset.split_tag)
    }
}

fn with_predictions(conv: &Conversation, pred: ConversationPrediction) -> Conversation {
    let mut out = conv.clone();
    for (u, e) in out.utterances.iter_mut().zip(pred.emotions) {
        u.gold_emotion = Some(e);
    }
    out.gold_pairs = Some(pred.pairs);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::TrainRng;
    use crate::pipeline::{CauseModelConfig, CauseVariant, EmotionModelConfig, EmotionVariant, PairingModelConfig};
    use ndarray::{array, Array2};
    use rand::SeedableRng;

    fn no_dropout_dense(input: usize) -> (EmotionModel, CauseModel) {
        let mut ec = EmotionModelConfig::new(EmotionVariant::Dense, input);
        ec.encoder.embedding_dropout = 0.0;
        let mut cc = CauseModelConfig::new(CauseVariant::Dense, input);
        cc.encoder.embedding_dropout = 0.0;
        (EmotionModel::zeros(ec).unwrap(), CauseModel::zeros(cc).unwrap())
    }

    /// Column 0 drives joy, column 1 the cause logit, column 2 the pair logit.
    fn handmade() -> Pipeline {
        let (mut e, mut c) = no_dropout_dense(3);
        e.head.bias[Emotion::Neutral.index()] = 0.5;
        e.head.weight[[0, Emotion::Joy.index()]] = 1.0;
        c.head.weight[[1, 0]] = 1.0;
        let mut pc = PairingModelConfig::new(3, 3);
        pc.distance_dim = 1;
        let mut p = PairingModel::zeros(pc).unwrap();
        p.head.weight[[3 + 2, 0]] = 1.0; // cause-side column 2
        Pipeline::new(e, c, p).unwrap()
    }

    #[test]
    fn nothing_emotional_means_no_pairs() {
        let x = array![[0.0, 1.0, 5.0], [0.0, 1.0, 5.0]];
        assert!(handmade().predict_pairs(x.view()).unwrap().is_empty());
    }

    #[test]
    fn no_candidate_causes_means_no_pairs() {
        let x = array![[1.0, -1.0, 5.0], [0.0, -1.0, 5.0]];
        let pred = handmade().predict_conversation(x.view()).unwrap();
        assert_eq!(pred.emotions[0], Emotion::Joy);
        assert!(pred.pairs.is_empty());
    }

    #[test]
    fn thresholding_keeps_confident_pairs() {
        // utterance 1 is joyful; utterances 2 and 3 are candidates with
        // pairing probabilities sigmoid(2.2) ~ 0.9 and sigmoid(-1.4) ~ 0.2
        let x = array![[1.0, -1.0, 0.0], [0.0, 1.0, 2.2], [0.0, 1.0, -1.4]];
        let pred = handmade().predict_conversation(x.view()).unwrap();
        assert_eq!(pred.causes, vec![false, true, true]);
        assert_eq!(pred.pairs, vec![EmotionCausePair::new(1, Emotion::Joy, 2)]);
    }

    #[test]
    fn incompatible_widths_are_rejected() {
        let (e, c) = no_dropout_dense(3);
        let p = PairingModel::zeros(PairingModelConfig::new(4, 3)).unwrap();
        assert!(Pipeline::new(e, c, p).is_err());
        let (e, _) = no_dropout_dense(3);
        let (_, c) = no_dropout_dense(4);
        let p = PairingModel::zeros(PairingModelConfig::new(3, 4)).unwrap();
        assert!(Pipeline::new(e, c, p).is_err());
    }

    #[test]
    fn emitted_pairs_respect_stage_outputs() {
        let mut rng = TrainRng::seed_from_u64(1);
        let mut ec = EmotionModelConfig::new(EmotionVariant::Bilstm, 6);
        ec.encoder.hidden_size = 4;
        ec.encoder.num_layers = 1;
        let mut cc = CauseModelConfig::new(CauseVariant::Dense, 6);
        cc.threshold = 0.2;
        let e = EmotionModel::new(ec, &mut rng).unwrap();
        let c = CauseModel::new(cc, &mut rng).unwrap();
        let mut pc = PairingModelConfig::new(8, 6);
        pc.threshold = 0.3;
        let p = PairingModel::new(pc, &mut rng).unwrap();
        let pipe = Pipeline::new(e, c, p).unwrap();
        use rand::Rng;
        let x = Array2::from_shape_fn((9, 6), |_| rng.random_range(-2.0..2.0));
        let pred = pipe.predict_conversation(x.view()).unwrap();
        for pair in &pred.pairs {
            assert!(!pair.emotion.is_neutral());
            assert_eq!(pred.emotions[pair.emotion_utterance_id - 1], pair.emotion);
            assert!(pred.causes[pair.cause_utterance_id - 1]);
        }
        assert_eq!(pred, pipe.predict_conversation(x.view()).unwrap());
    }
}
