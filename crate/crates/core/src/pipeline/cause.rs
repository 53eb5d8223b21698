use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, EncoderPass, StageEncoder};
use super::{checkpoint_header, read_checkpoint_config, CauseVariant, Stage};
use crate::error::{Error, Result};
use crate::nn::params::{join, ParamView, Params};
use crate::nn::{binary_cross_entropy_grad, sigmoid, Checkpoint, Dense, TrainRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauseModelConfig {
    pub variant: CauseVariant,
    pub encoder: EncoderConfig,
    /// An utterance is a candidate cause iff its probability is strictly above this.
    pub threshold: f64,
}

impl CauseModelConfig {
    /// Defaults: three BiLSTM layers of 256 units per direction, dropout 0.3.
    pub fn new(variant: CauseVariant, input_dim: usize) -> Self {
        Self {
            variant,
            encoder: EncoderConfig::new(input_dim, 3),
            threshold: 0.5,
        }
    }
}

/// Binary candidate-cause detector with a single-logit head.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseModel {
    pub config: CauseModelConfig,
    pub encoder: StageEncoder,
    pub head: Dense,
}

struct CausePass {
    encoder: EncoderPass,
    logits: Array1<f64>,
}

impl CauseModel {
    pub fn new<R: Rng + ?Sized>(config: CauseModelConfig, rng: &mut R) -> Result<Self> {
        let contextual = config.variant.is_contextual();
        config.encoder.validate(contextual)?;
        let encoder = StageEncoder::init(&config.encoder, contextual, rng);
        let head = Dense::init(encoder.rep_dim(), 1, rng);
        Ok(Self { config, encoder, head })
    }

    pub fn zeros(config: CauseModelConfig) -> Result<Self> {
        let contextual = config.variant.is_contextual();
        config.encoder.validate(contextual)?;
        let encoder = StageEncoder::zeros(&config.encoder, contextual);
        let head = Dense::zeros(encoder.rep_dim(), 1);
        Ok(Self { config, encoder, head })
    }

    pub fn variant(&self) -> CauseVariant {
        self.config.variant
    }

    pub fn rep_dim(&self) -> usize {
        self.encoder.rep_dim()
    }

    fn run(&self, x: ArrayView2<f64>, rng: Option<&mut TrainRng>) -> Result<CausePass> {
        let encoder = self.encoder.forward(x, rng)?;
        let logits = self.head.forward(encoder.reps.view())?.remove_axis(Axis(1));
        Ok(CausePass { encoder, logits })
    }

    /// One logit per row. Dropout is active iff `rng` is given.
    pub fn forward(&self, x: ArrayView2<f64>, rng: Option<&mut TrainRng>) -> Result<Array1<f64>> {
        Ok(self.run(x, rng)?.logits)
    }

    pub fn representations(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.encoder.forward(x, None)?.reps)
    }

    /// Mean binary cross-entropy.
    pub fn loss(&self, logits: &Array1<f64>, gold: &[bool]) -> Result<f64> {
        Ok(loss_and_logit_grad(logits, gold)?.0)
    }

    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        gold: &[bool],
        rng: Option<&mut TrainRng>,
    ) -> Result<(f64, CauseModel)> {
        let pass = self.run(x, rng)?;
        let (loss, d_logits) = loss_and_logit_grad(&pass.logits, gold)?;
        let mut grads = self.zeros_like();
        let d_reps = self.head.backward(
            pass.encoder.reps.view(),
            d_logits.insert_axis(Axis(1)).view(),
            &mut grads.head,
        );
        self.encoder.backward(&pass.encoder, d_reps.view(), &mut grads.encoder);
        Ok((loss, grads))
    }

    pub fn probabilities(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x, None)?.mapv(sigmoid))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        Ok(self
            .probabilities(x)?
            .iter()
            .map(|&p| p > self.config.threshold)
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(checkpoint_header(Stage::Cause, &self.config));
        ckpt.add_params("", self);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: CauseModelConfig = read_checkpoint_config(ckpt, Stage::Cause)?;
        let mut model = Self::zeros(config)?;
        ckpt.load_into("", &mut model)?;
        Ok(model)
    }
}

pub(crate) fn loss_and_logit_grad(logits: &Array1<f64>, gold: &[bool]) -> Result<(f64, Array1<f64>)> {
    if logits.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} logits",
            gold.len(),
            logits.len()
        )));
    }
    let n = gold.len() as f64;
    let mut total = 0.0;
    let d = logits
        .iter()
        .zip(gold)
        .map(|(&z, &t)| {
            let (l, g) = binary_cross_entropy_grad(z, t);
            total += l;
            g / n
        })
        .collect();
    Ok((total / n, d))
}

impl Params for CauseModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
