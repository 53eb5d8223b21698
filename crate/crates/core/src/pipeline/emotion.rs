use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, EncoderPass, StageEncoder};
use super::{checkpoint_header, read_checkpoint_config, EmotionVariant, Stage};
use crate::corpus::{Emotion, NUM_EMOTIONS};
use crate::crf::{argmax, CrfDecoding, CrfParams};
use crate::error::{Error, Result};
use crate::nn::params::{join, ParamView, Params};
use crate::nn::{weighted_cross_entropy_grad, Checkpoint, Dense, TrainRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionModelConfig {
    pub variant: EmotionVariant,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub decoding: CrfDecoding,
}

impl EmotionModelConfig {
    /// Defaults: four BiLSTM layers of 256 units per direction, dropout 0.3.
    pub fn new(variant: EmotionVariant, input_dim: usize) -> Self {
        Self {
            variant,
            encoder: EncoderConfig::new(input_dim, 4),
            decoding: CrfDecoding::Viterbi,
        }
    }
}

/// Seven-way utterance emotion classifier.
///
/// `scores` are softmax logits for the dense and bilstm variants and CRF
/// emissions for bilstm_crf.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionModel {
    pub config: EmotionModelConfig,
    pub encoder: StageEncoder,
    pub head: Dense,
    pub crf: Option<CrfParams>,
}

struct EmotionPass {
    encoder: EncoderPass,
    scores: Array2<f64>,
}

impl EmotionModel {
    pub fn new<R: Rng + ?Sized>(config: EmotionModelConfig, rng: &mut R) -> Result<Self> {
        let contextual = config.variant.is_contextual();
        config.encoder.validate(contextual)?;
        let encoder = StageEncoder::init(&config.encoder, contextual, rng);
        let head = Dense::init(encoder.rep_dim(), NUM_EMOTIONS, rng);
        Ok(Self {
            crf: (config.variant == EmotionVariant::BilstmCrf).then(|| CrfParams::zeros(NUM_EMOTIONS)),
            config,
            encoder,
            head,
        })
    }

    /// Every parameter zero.
    pub fn zeros(config: EmotionModelConfig) -> Result<Self> {
        let contextual = config.variant.is_contextual();
        config.encoder.validate(contextual)?;
        let encoder = StageEncoder::zeros(&config.encoder, contextual);
        let head = Dense::zeros(encoder.rep_dim(), NUM_EMOTIONS);
        Ok(Self {
            crf: (config.variant == EmotionVariant::BilstmCrf).then(|| CrfParams::zeros(NUM_EMOTIONS)),
            config,
            encoder,
            head,
        })
    }

    pub fn variant(&self) -> EmotionVariant {
        self.config.variant
    }

    /// Width of the per-utterance representation handed to the pairing model.
    pub fn rep_dim(&self) -> usize {
        self.encoder.rep_dim()
    }

    fn run(&self, x: ArrayView2<f64>, rng: Option<&mut TrainRng>) -> Result<EmotionPass> {
        let encoder = self.encoder.forward(x, rng)?;
        let scores = self.head.forward(encoder.reps.view())?;
        Ok(EmotionPass { encoder, scores })
    }

    /// `T x 7` scores for one conversation, or for a batch of independent
    /// utterances with the dense variant. Dropout is active iff `rng` is given.
    pub fn forward(&self, x: ArrayView2<f64>, rng: Option<&mut TrainRng>) -> Result<Array2<f64>> {
        Ok(self.run(x, rng)?.scores)
    }

    /// Penultimate-layer outputs with dropout off.
    pub fn representations(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.encoder.forward(x, None)?.reps)
    }

    fn check_gold(&self, scores: ArrayView2<f64>, gold: &[usize]) -> Result<()> {
        if gold.len() != scores.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} utterances",
                gold.len(),
                scores.nrows()
            )));
        }
        if let Some(&y) = gold.iter().find(|&&y| y >= NUM_EMOTIONS) {
            return Err(Error::Shape(format!("emotion label {y} out of range")));
        }
        Ok(())
    }

    /// Mean weighted cross-entropy over rows, or the CRF negative
    /// log-likelihood of the whole sequence (class weights unused).
    pub fn loss(&self, scores: ArrayView2<f64>, gold: &[usize], class_weights: &[f64; NUM_EMOTIONS]) -> Result<f64> {
        Ok(self.loss_and_score_grad(scores, gold, class_weights)?.0)
    }

    fn loss_and_score_grad(
        &self,
        scores: ArrayView2<f64>,
        gold: &[usize],
        class_weights: &[f64; NUM_EMOTIONS],
    ) -> Result<(f64, Array2<f64>, Option<CrfParams>)> {
        self.check_gold(scores, gold)?;
        match &self.crf {
            Some(crf) => {
                let (nll, g) = crf.nll_with_gradients(scores, gold)?;
                Ok((nll, g.emissions, Some(g.params)))
            }
            None => {
                let w = ndarray::ArrayView1::from(&class_weights[..]);
                let n = gold.len() as f64;
                let mut d = Array2::zeros(scores.raw_dim());
                let mut total = 0.0;
                for ((row, &y), mut d_row) in scores.rows().into_iter().zip(gold).zip(d.rows_mut()) {
                    let (l, g) = weighted_cross_entropy_grad(row, y, w);
                    total += l;
                    d_row.assign(&(g / n));
                }
                Ok((total / n, d, None))
            }
        }
    }

    /// Loss and gradients for every parameter, shaped like `self`.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        gold: &[usize],
        class_weights: &[f64; NUM_EMOTIONS],
        rng: Option<&mut TrainRng>,
    ) -> Result<(f64, EmotionModel)> {
        let pass = self.run(x, rng)?;
        let (loss, d_scores, crf_grads) = self.loss_and_score_grad(pass.scores.view(), gold, class_weights)?;
        let mut grads = self.zeros_like();
        let d_reps = self
            .head
            .backward(pass.encoder.reps.view(), d_scores.view(), &mut grads.head);
        self.encoder.backward(&pass.encoder, d_reps.view(), &mut grads.encoder);
        grads.crf = crf_grads;
        Ok((loss, grads))
    }

    pub fn predict_indices(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let scores = self.forward(x, None)?;
        match &self.crf {
            Some(crf) => crf.decode(scores.view(), self.config.decoding),
            None => Ok(scores
                .axis_iter(Axis(0))
                .map(|row| argmax(row.iter().copied()))
                .collect()),
        }
    }

    /// Argmax per utterance, or CRF decoding for bilstm_crf. Dropout is off.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Emotion>> {
        Ok(self
            .predict_indices(x)?
            .into_iter()
            .map(|i| Emotion::from_index(i).expect("label index below 7"))
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(checkpoint_header(Stage::Emotion, &self.config));
        ckpt.add_params("", self);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: EmotionModelConfig = read_checkpoint_config(ckpt, Stage::Emotion)?;
        let mut model = Self::zeros(config)?;
        ckpt.load_into("", &mut model)?;
        Ok(model)
    }
}

impl Params for EmotionModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
        self.crf.visit(&join(prefix, "crf"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
        self.crf.visit_mut(&join(prefix, "crf"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cross_entropy, gradcheck};
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    fn small_config(variant: EmotionVariant, layers: usize) -> EmotionModelConfig {
        let mut c = EmotionModelConfig::new(variant, 5);
        c.encoder.hidden_size = 3;
        c.encoder.num_layers = layers;
        c
    }

    fn random_x(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = TrainRng::seed_from_u64(seed);
        Array2::from_shape_fn((t, d), |_| rng.sample(StandardNormal))
    }

    fn model(variant: EmotionVariant, seed: u64) -> EmotionModel {
        let mut m = EmotionModel::new(small_config(variant, 2), &mut TrainRng::seed_from_u64(seed)).unwrap();
        if let Some(crf) = m.crf.as_mut() {
            let mut rng = TrainRng::seed_from_u64(seed + 100);
            crf.transitions
                .mapv_inplace(|_| 0.5 * rng.sample::<f64, _>(StandardNormal));
            crf.start_scores
                .mapv_inplace(|_| 0.5 * rng.sample::<f64, _>(StandardNormal));
            crf.end_scores
                .mapv_inplace(|_| 0.5 * rng.sample::<f64, _>(StandardNormal));
        }
        m
    }

    const WEIGHTS: [f64; 7] = [1.5, 0.7, 2.0, 1.0, 0.3, 1.2, 0.9];

    #[test]
    fn gradcheck_every_variant() {
        let x = random_x(4, 5, 1);
        let gold = [0, 4, 3, 6];
        for variant in EmotionVariant::ALL {
            let m = model(variant, 2);
            let (_, grads) = m.loss_and_gradients(x.view(), &gold, &WEIGHTS, None).unwrap();
            let report = gradcheck(&m, &grads, 1e-5, |p: &EmotionModel| {
                p.loss(p.forward(x.view(), None).unwrap().view(), &gold, &WEIGHTS)
                    .unwrap()
            });
            assert!(report.max_rel_error < 1e-4, "{variant}: {report:?}");
        }
    }

    #[test]
    fn single_utterance_conversation() {
        let x = random_x(1, 5, 3);
        for variant in EmotionVariant::ALL {
            let m = model(variant, 4);
            assert_eq!(m.forward(x.view(), None).unwrap().dim(), (1, 7));
            assert_eq!(m.predict(x.view()).unwrap().len(), 1);
            m.loss_and_gradients(x.view(), &[2], &WEIGHTS, None).unwrap();
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let m = model(EmotionVariant::Bilstm, 0);
        assert!(matches!(
            m.forward(random_x(3, 4, 0).view(), None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dense_is_permutation_equivariant() {
        let m = model(EmotionVariant::Dense, 5);
        let x = random_x(6, 5, 6);
        let perm = [3, 0, 5, 1, 4, 2];
        let out = m.forward(x.view(), None).unwrap();
        let out_perm = m.forward(x.select(Axis(0), &perm).view(), None).unwrap();
        assert_eq!(out.select(Axis(0), &perm), out_perm);
    }

    #[test]
    fn bilstm_first_utterance_reaches_last() {
        for variant in [EmotionVariant::Bilstm, EmotionVariant::BilstmCrf] {
            for seed in 0..5 {
                let m = model(variant, seed);
                let x = random_x(5, 5, 10 + seed);
                let mut y = x.clone();
                y.row_mut(0).mapv_inplace(|v| v + 0.5);
                let a = m.forward(x.view(), None).unwrap();
                let b = m.forward(y.view(), None).unwrap();
                let diff = (&a.row(4) - &b.row(4)).mapv(f64::abs).sum();
                assert!(diff > 1e-9, "{variant} seed {seed}: {diff}");
            }
        }
    }

    #[test]
    fn unit_weights_give_mean_cross_entropy() {
        let m = model(EmotionVariant::Dense, 7);
        let x = random_x(3, 5, 8);
        let scores = m.forward(x.view(), None).unwrap();
        let gold = [1, 4, 6];
        let expected: f64 = gold
            .iter()
            .enumerate()
            .map(|(t, &y)| cross_entropy(scores.row(t), y))
            .sum::<f64>()
            / 3.0;
        let got = m.loss(scores.view(), &gold, &[1.0; 7]).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_crf_model_loss() {
        let m = EmotionModel::zeros(small_config(EmotionVariant::BilstmCrf, 2)).unwrap();
        let x = random_x(3, 5, 9);
        let scores = m.forward(x.view(), None).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
        let loss = m.loss(scores.view(), &[0, 4, 2], &WEIGHTS).unwrap();
        assert!((loss - 3.0 * 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn crf_forbidding_repeats() {
        let mut m = model(EmotionVariant::BilstmCrf, 11);
        let crf = m.crf.as_mut().unwrap();
        for k in 0..7 {
            crf.transitions[[k, k]] = -1e6;
        }
        for seed in 0..5 {
            let labels = m.predict_indices(random_x(7, 5, 20 + seed).view()).unwrap();
            assert!(labels.windows(2).all(|w| w[0] != w[1]), "{labels:?}");
        }
    }

    #[test]
    fn one_hot_logits_are_recovered() {
        // identity head over a 7-wide one-hot input
        let mut c = EmotionModelConfig::new(EmotionVariant::Dense, 7);
        c.encoder.embedding_dropout = 0.0;
        let mut m = EmotionModel::zeros(c).unwrap();
        m.head.weight = Array2::eye(7);
        let gold = [4, 0, 6, 3, 3];
        let mut x = Array2::zeros((5, 7));
        for (t, &y) in gold.iter().enumerate() {
            x[[t, y]] = 10.0;
        }
        assert_eq!(m.predict_indices(x.view()).unwrap(), gold);
    }

    #[test]
    fn prediction_ignores_dropout_and_repeats() {
        let m = model(EmotionVariant::Bilstm, 12);
        let x = random_x(6, 5, 13);
        let a = m.predict(x.view()).unwrap();
        assert_eq!(a, m.predict(x.view()).unwrap());
        let train = m.forward(x.view(), Some(&mut TrainRng::seed_from_u64(1))).unwrap();
        assert_ne!(train, m.forward(x.view(), None).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        for variant in EmotionVariant::ALL {
            let m = model(variant, 14);
            let bytes = m.to_checkpoint().to_bytes();
            let back = EmotionModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }
}
