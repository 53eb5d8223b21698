use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::cause::loss_and_logit_grad;
use super::{checkpoint_header, read_checkpoint_config, Stage};
use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::nn::params::{join, ParamView, Params};
use crate::nn::{sigmoid, Checkpoint, Dense};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingModelConfig {
    pub emotion_rep_dim: usize,
    pub cause_rep_dim: usize,
    /// Signed distances are clipped to `[-max_distance, max_distance]`.
    pub max_distance: usize,
    pub distance_dim: usize,
    pub threshold: f64,
}

impl PairingModelConfig {
    pub fn new(emotion_rep_dim: usize, cause_rep_dim: usize) -> Self {
        Self {
            emotion_rep_dim,
            cause_rep_dim,
            max_distance: 12,
            distance_dim: 32,
            threshold: 0.5,
        }
    }
}

/// Sigmoid classifier over `[emotion rep ‖ cause rep ‖ distance embedding]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingModel {
    pub config: PairingModelConfig,
    /// Row `d + max_distance` embeds the clipped signed distance `d`.
    pub distance_table: Array2<f64>,
    pub head: Dense,
}

/// A batch of candidate pairs: stacked `[emotion rep ‖ cause rep]` rows and
/// the signed distance `cause - emotion` of each.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInputs {
    pub reps: Array2<f64>,
    pub distances: Vec<i64>,
}

impl PairInputs {
    /// Pairs `(emotion_row, cause_row)` drawn from per-utterance
    /// representation matrices of one conversation.
    pub fn gather(emotion_reps: ArrayView2<f64>, cause_reps: ArrayView2<f64>, pairs: &[(usize, usize)]) -> Self {
        let e_rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let c_rows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let reps = ndarray::concatenate![
            Axis(1),
            emotion_reps.select(Axis(0), &e_rows),
            cause_reps.select(Axis(0), &c_rows)
        ];
        Self {
            reps,
            distances: pairs.iter().map(|&(e, c)| c as i64 - e as i64).collect(),
        }
    }

    /// Stacks several batches into one.
    pub fn concat(parts: &[PairInputs]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.reps.view()).collect();
        let reps = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            reps,
            distances: parts.iter().flat_map(|p| p.distances.iter().copied()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

impl PairingModel {
    pub fn new<R: Rng + ?Sized>(config: PairingModelConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        model.distance_table.mapv_inplace(|_| rng.sample(StandardNormal));
        model.head = Dense::init(model.input_dim(), 1, rng);
        Ok(model)
    }

    pub fn zeros(config: PairingModelConfig) -> Result<Self> {
        if config.emotion_rep_dim == 0 || config.cause_rep_dim == 0 || config.distance_dim == 0 {
            return Err(Error::Config(format!("pairing dims must be positive: {config:?}")));
        }
        let input = config.emotion_rep_dim + config.cause_rep_dim + config.distance_dim;
        Ok(Self {
            distance_table: Array2::zeros((2 * config.max_distance + 1, config.distance_dim)),
            head: Dense::zeros(input, 1),
            config,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.config.emotion_rep_dim + self.config.cause_rep_dim + self.config.distance_dim
    }

    pub fn distance_row(&self, distance: i64) -> usize {
        let d = self.config.max_distance as i64;
        (distance.clamp(-d, d) + d) as usize
    }

    pub fn pair_representation(
        &self,
        emotion_rep: ArrayView1<f64>,
        cause_rep: ArrayView1<f64>,
        distance: i64,
    ) -> Result<Array1<f64>> {
        self.check_widths(emotion_rep.len(), cause_rep.len())?;
        Ok(ndarray::concatenate![
            Axis(0),
            emotion_rep,
            cause_rep,
            self.distance_table.row(self.distance_row(distance))
        ])
    }

    fn check_widths(&self, e: usize, c: usize) -> Result<()> {
        if e != self.config.emotion_rep_dim || c != self.config.cause_rep_dim {
            return Err(Error::Shape(format!(
                "pair reps of widths ({e}, {c}), pairing model expects ({}, {})",
                self.config.emotion_rep_dim, self.config.cause_rep_dim
            )));
        }
        Ok(())
    }

    fn assemble(&self, inputs: &PairInputs) -> Result<Array2<f64>> {
        let rep_width = self.config.emotion_rep_dim + self.config.cause_rep_dim;
        if inputs.reps.ncols() != rep_width || inputs.reps.nrows() != inputs.distances.len() {
            return Err(Error::Shape(format!(
                "pair batch is {:?} with {} distances, expected width {rep_width}",
                inputs.reps.dim(),
                inputs.distances.len()
            )));
        }
        let rows: Vec<usize> = inputs.distances.iter().map(|&d| self.distance_row(d)).collect();
        Ok(ndarray::concatenate![
            Axis(1),
            inputs.reps,
            self.distance_table.select(Axis(0), &rows)
        ])
    }

    pub fn logits(&self, inputs: &PairInputs) -> Result<Array1<f64>> {
        Ok(self.head.forward(self.assemble(inputs)?.view())?.remove_axis(Axis(1)))
    }

    pub fn probabilities(&self, inputs: &PairInputs) -> Result<Array1<f64>> {
        Ok(self.logits(inputs)?.mapv(sigmoid))
    }

    /// Mean binary cross-entropy over the batch.
    pub fn loss(&self, inputs: &PairInputs, labels: &[bool]) -> Result<f64> {
        Ok(loss_and_logit_grad(&self.logits(inputs)?, labels)?.0)
    }

    pub fn loss_and_gradients(&self, inputs: &PairInputs, labels: &[bool]) -> Result<(f64, PairingModel)> {
        let x = self.assemble(inputs)?;
        let logits = self.head.forward(x.view())?.remove_axis(Axis(1));
        let (loss, d_logits) = loss_and_logit_grad(&logits, labels)?;
        let mut grads = self.zeros_like();
        let dx = self
            .head
            .backward(x.view(), d_logits.insert_axis(Axis(1)).view(), &mut grads.head);
        let offset = inputs.reps.ncols();
        for (i, &d) in inputs.distances.iter().enumerate() {
            let row = self.distance_row(d);
            let mut g = grads.distance_table.row_mut(row);
            g += &dx.slice(s![i, offset..]);
        }
        Ok((loss, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(checkpoint_header(Stage::Pairing, &self.config));
        ckpt.add_params("", self);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: PairingModelConfig = read_checkpoint_config(ckpt, Stage::Pairing)?;
        let mut model = Self::zeros(config)?;
        ckpt.load_into("", &mut model)?;
        Ok(model)
    }
}

impl Params for PairingModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.distance_table.visit(&join(prefix, "distance_table"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.distance_table.visit_mut(&join(prefix, "distance_table"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// One labeled training pair; ids are 1-based utterance ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairExample {
    pub conversation_id: i64,
    pub emotion_utterance_id: usize,
    pub cause_utterance_id: usize,
    pub label: bool,
}

/// Distinct gold `(emotion id, cause id)` pairs, sorted.
pub fn positive_pairs(conversation: &Conversation) -> Vec<(usize, usize)> {
    conversation
        .pairs()
        .iter()
        .map(|p| (p.emotion_utterance_id, p.cause_utterance_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Every `(emotion utterance, utterance)` pair of the conversation that is
/// not gold. The emotion slot holds gold non-neutral utterances only.
pub fn candidate_space(conversation: &Conversation) -> Vec<(usize, usize)> {
    let mut emotion_ids: BTreeSet<usize> = conversation
        .utterances
        .iter()
        .filter(|u| u.gold_emotion.is_some_and(|e| !e.is_neutral()))
        .map(|u| u.utterance_id)
        .collect();
    emotion_ids.extend(conversation.pairs().iter().map(|p| p.emotion_utterance_id));
    let gold: BTreeSet<(usize, usize)> = positive_pairs(conversation).into_iter().collect();
    emotion_ids
        .into_iter()
        .flat_map(|e| conversation.utterances.iter().map(move |u| (e, u.utterance_id)))
        .filter(|p| !gold.contains(p))
        .collect()
}

/// Draws `min(ratio * |positives|, |space|)` distinct negatives uniformly
/// from `space`, never returning a positive. Output is sorted by id.
pub fn sample_negative_pairs<R: Rng + ?Sized>(
    conversation_id: i64,
    positives: &[(usize, usize)],
    space: &[(usize, usize)],
    ratio: usize,
    rng: &mut R,
) -> Vec<PairExample> {
    let gold: BTreeSet<&(usize, usize)> = positives.iter().collect();
    let pool: Vec<(usize, usize)> = space
        .iter()
        .filter(|p| !gold.contains(p))
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let wanted = (ratio * gold.len()).min(pool.len());
    let mut picked = index::sample(rng, pool.len(), wanted).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| PairExample {
            conversation_id,
            emotion_utterance_id: pool[i].0,
            cause_utterance_id: pool[i].1,
            label: false,
        })
        .collect()
}

/// Gold positives followed by freshly sampled negatives.
pub fn conversation_pair_examples<R: Rng + ?Sized>(
    conversation: &Conversation,
    ratio: usize,
    rng: &mut R,
) -> Vec<PairExample> {
    let positives = positive_pairs(conversation);
    let negatives = sample_negative_pairs(
        conversation.conversation_id,
        &positives,
        &candidate_space(conversation),
        ratio,
        rng,
    );
    positives
        .iter()
        .map(|&(e, c)| PairExample {
            conversation_id: conversation.conversation_id,
            emotion_utterance_id: e,
            cause_utterance_id: c,
            label: true,
        })
        .chain(negatives)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Emotion, EmotionCausePair, Utterance};
    use crate::nn::{gradcheck, TrainRng};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;

    fn model(seed: u64) -> PairingModel {
        let mut c = PairingModelConfig::new(3, 4);
        c.max_distance = 2;
        c.distance_dim = 2;
        PairingModel::new(c, &mut TrainRng::seed_from_u64(seed)).unwrap()
    }

    fn random_inputs(n: usize, width: usize, seed: u64) -> PairInputs {
        let mut rng = TrainRng::seed_from_u64(seed);
        PairInputs {
            reps: Array2::from_shape_fn((n, width), |_| rng.sample(StandardNormal)),
            distances: (0..n).map(|_| rng.random_range(-4..=4)).collect(),
        }
    }

    #[test]
    fn distance_rows_and_width() {
        let m = model(0);
        assert_eq!(m.distance_row(0), 2);
        assert_eq!(m.distance_row(-2), 0);
        assert_eq!(m.distance_row(-9), 0);
        assert_eq!(m.distance_row(7), 4);
        let e = Array1::from(vec![1.0, 2.0, 3.0]);
        let c = Array1::from(vec![4.0, 5.0, 6.0, 7.0]);
        let r = m.pair_representation(e.view(), c.view(), 0).unwrap();
        assert_eq!(r.len(), 3 + 4 + 2);
        assert_eq!(r.slice(s![7..]), m.distance_table.row(2));
        let far = m.pair_representation(e.view(), c.view(), 40).unwrap();
        assert_eq!(far, m.pair_representation(e.view(), c.view(), 2).unwrap());
        assert!(m.pair_representation(c.view(), e.view(), 0).is_err());
    }

    #[test]
    fn table_rows_are_standard_normal() {
        let mut c = PairingModelConfig::new(2, 2);
        c.distance_dim = 400;
        let m = PairingModel::new(c, &mut TrainRng::seed_from_u64(3)).unwrap();
        let n = m.distance_table.len() as f64;
        let mean = m.distance_table.sum() / n;
        let var = m.distance_table.mapv(|x| (x - mean).powi(2)).sum() / n;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }

    #[test]
    fn zero_model_is_uninformative() {
        let m = PairingModel::zeros(PairingModelConfig::new(3, 4)).unwrap();
        let inputs = random_inputs(6, 7, 1);
        assert!(m.probabilities(&inputs).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn initial_loss_near_ln2_on_balanced_batch() {
        let m = PairingModel::new(PairingModelConfig::new(16, 16), &mut TrainRng::seed_from_u64(4)).unwrap();
        let inputs = random_inputs(2000, 32, 5);
        let labels: Vec<bool> = (0..2000).map(|i| i % 2 == 0).collect();
        let loss = m.loss(&inputs, &labels).unwrap();
        assert!((loss - 2f64.ln()).abs() < 0.1, "{loss}");
    }

    #[test]
    fn gradcheck_pairing_head() {
        let m = model(6);
        let inputs = random_inputs(8, 7, 7);
        let labels = [true, false, false, true, false, true, true, false];
        let (_, grads) = m.loss_and_gradients(&inputs, &labels).unwrap();
        let report = gradcheck(&m, &grads, 1e-5, |p: &PairingModel| p.loss(&inputs, &labels).unwrap());
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn gather_builds_distances() {
        let e = Array2::from_shape_fn((3, 2), |(i, j)| (10 * i + j) as f64);
        let c = Array2::from_shape_fn((3, 1), |(i, _)| -(i as f64));
        let p = PairInputs::gather(e.view(), c.view(), &[(2, 0), (0, 1)]);
        assert_eq!(p.distances, vec![-2, 1]);
        assert_eq!(p.reps.row(0).to_vec(), vec![20.0, 21.0, 0.0]);
        assert_eq!(p.reps.row(1).to_vec(), vec![0.0, 1.0, -1.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(8);
        assert_eq!(PairingModel::from_checkpoint(&m.to_checkpoint()).unwrap(), m);
    }

    fn space(n: usize) -> Vec<(usize, usize)> {
        (1..=n).map(|c| (1, c)).collect()
    }

    #[test]
    fn ratio_five_with_room() {
        let pos = [(1, 1), (2, 1)];
        let mut rng = TrainRng::seed_from_u64(0);
        let neg = sample_negative_pairs(9, &pos, &space(12)[1..], 5, &mut rng);
        assert_eq!(neg.len(), 10);
    }

    #[test]
    fn exhausted_space_is_taken_whole() {
        let pos = [(1, 1), (2, 1)];
        let sp = vec![(1, 2), (1, 3), (2, 2)];
        let neg = sample_negative_pairs(0, &pos, &sp, 5, &mut TrainRng::seed_from_u64(0));
        let got: Vec<_> = neg
            .iter()
            .map(|n| (n.emotion_utterance_id, n.cause_utterance_id))
            .collect();
        assert_eq!(got, sp);
    }

    #[test]
    fn same_seed_same_sample() {
        let pos = [(1, 1)];
        let a = sample_negative_pairs(0, &pos, &space(30), 5, &mut TrainRng::seed_from_u64(3));
        let b = sample_negative_pairs(0, &pos, &space(30), 5, &mut TrainRng::seed_from_u64(3));
        let c = sample_negative_pairs(0, &pos, &space(30), 5, &mut TrainRng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn conversation(emotions: &[Emotion], pairs: &[(usize, usize)]) -> Conversation {
        Conversation {
            conversation_id: 1,
            utterances: emotions
                .iter()
                .enumerate()
                .map(|(i, &e)| Utterance {
                    utterance_id: i + 1,
                    speaker: "A".into(),
                    transcript: String::new(),
                    gold_emotion: Some(e),
                })
                .collect(),
            gold_pairs: Some(
                pairs
                    .iter()
                    .map(|&(e, c)| EmotionCausePair::new(e, emotions[e - 1], c))
                    .collect(),
            ),
        }
    }

    #[test]
    fn candidate_space_uses_gold_emotion_slots() {
        use Emotion::*;
        let conv = conversation(&[Neutral, Joy, Neutral, Anger], &[(2, 1), (4, 4), (4, 2)]);
        let space = candidate_space(&conv);
        assert_eq!(space, vec![(2, 2), (2, 3), (2, 4), (4, 1), (4, 3)]);
        let ex = conversation_pair_examples(&conv, 5, &mut TrainRng::seed_from_u64(0));
        assert_eq!(ex.iter().filter(|e| e.label).count(), 3);
        assert_eq!(ex.iter().filter(|e| !e.label).count(), 5);
    }

    proptest! {
        #[test]
        fn negatives_are_fresh_and_distinct(
            n in 1usize..12,
            pos_mask in proptest::collection::vec(any::<bool>(), 12),
            ratio in 1usize..7,
            seed in any::<u64>(),
        ) {
            let all = space(n);
            let pos: Vec<_> = all.iter().zip(&pos_mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
            // space deliberately includes the positives
            let neg = sample_negative_pairs(0, &pos, &all, ratio, &mut TrainRng::seed_from_u64(seed));
            let keys: BTreeSet<_> = neg.iter().map(|x| (x.emotion_utterance_id, x.cause_utterance_id)).collect();
            prop_assert_eq!(keys.len(), neg.len());
            prop_assert!(keys.iter().all(|k| !pos.contains(k)));
            prop_assert_eq!(neg.len(), (ratio * pos.len()).min(n - pos.len()));
        }
    }
}
