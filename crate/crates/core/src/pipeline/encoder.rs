use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{join, ParamView, Params};
use crate::nn::{sample_dropout_mask, BiLstm, BiLstmCache, TrainRng};

/// Shape of the utterance encoder shared by the emotion and cause models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub embedding_dropout: f64,
    pub inter_layer_dropout: f64,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, num_layers: usize) -> Self {
        Self {
            input_dim,
            hidden_size: 256,
            num_layers,
            embedding_dropout: 0.3,
            inter_layer_dropout: 0.3,
        }
    }

    pub(crate) fn validate(&self, contextual: bool) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        for (name, rate) in [
            ("embedding_dropout", self.embedding_dropout),
            ("inter_layer_dropout", self.inter_layer_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {rate}")));
            }
        }
        if contextual && (self.hidden_size == 0 || self.num_layers == 0) {
            return Err(Error::Config(
                "BiLSTM encoder needs hidden_size and num_layers >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Embedding dropout followed, for contextual variants, by a stacked BiLSTM.
/// Without the BiLSTM the representation is the fused input itself.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEncoder {
    pub input_dim: usize,
    pub embedding_dropout: f64,
    pub birnn: Option<BiLstm>,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderPass {
    birnn: Option<BiLstmCache>,
    pub reps: Array2<f64>,
}

impl StageEncoder {
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, contextual: bool, rng: &mut R) -> Self {
        Self {
            input_dim: config.input_dim,
            embedding_dropout: config.embedding_dropout,
            birnn: contextual.then(|| {
                BiLstm::init(
                    config.input_dim,
                    config.hidden_size,
                    config.num_layers,
                    config.inter_layer_dropout,
                    rng,
                )
            }),
        }
    }

    pub fn zeros(config: &EncoderConfig, contextual: bool) -> Self {
        Self {
            input_dim: config.input_dim,
            embedding_dropout: config.embedding_dropout,
            birnn: contextual.then(|| {
                BiLstm::zeros(
                    config.input_dim,
                    config.hidden_size,
                    config.num_layers,
                    config.inter_layer_dropout,
                )
            }),
        }
    }

    pub fn rep_dim(&self) -> usize {
        self.birnn.as_ref().map_or(self.input_dim, BiLstm::out_dim)
    }

    /// Dropout is sampled only when `rng` is given (training).
    pub(crate) fn forward(&self, x: ArrayView2<f64>, mut rng: Option<&mut TrainRng>) -> Result<EncoderPass> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "features have width {}, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Shape("empty feature sequence".into()));
        }
        let mut input = x.to_owned();
        if let Some(r) = rng.as_deref_mut() {
            if self.embedding_dropout > 0.0 {
                input *= &sample_dropout_mask(input.dim(), self.embedding_dropout, r);
            }
        }
        match &self.birnn {
            Some(birnn) => {
                let (reps, cache) = birnn.forward(input.view(), rng)?;
                Ok(EncoderPass {
                    birnn: Some(cache),
                    reps,
                })
            }
            None => Ok(EncoderPass {
                birnn: None,
                reps: input,
            }),
        }
    }

    /// Accumulates recurrent gradients; the input gradient is not needed.
    pub(crate) fn backward(&self, pass: &EncoderPass, d_reps: ArrayView2<f64>, grads: &mut StageEncoder) {
        if let (Some(birnn), Some(cache), Some(g)) = (&self.birnn, &pass.birnn, grads.birnn.as_mut()) {
            birnn.backward(cache, d_reps, g);
        }
    }
}

impl Params for StageEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.birnn.visit(&join(prefix, "birnn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.birnn.visit_mut(&join(prefix, "birnn"), f);
    }
}
