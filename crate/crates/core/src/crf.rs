//! Linear-chain CRF over per-step label scores.
//!
//! A labeling `y` of a `T`-step sequence scores
//! `start[y_0] + sum_t emit[t, y_t] + sum_t trans[y_t, y_{t+1}] + end[y_{T-1}]`.
//! Every quantity below is computed in log space.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::log_sum_exp;
use crate::nn::params::{join, ParamView, Params};

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `transitions[[i, j]]` scores label `i` followed by label `j`.
    pub transitions: Array2<f64>,
    pub start_scores: Array1<f64>,
    pub end_scores: Array1<f64>,
}

/// How the CRF head turns emissions into labels at inference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfDecoding {
    #[default]
    Viterbi,
    /// Per-step argmax of the posterior marginals.
    MarginalArgmax,
}

/// Forward/backward tables for one sequence.
#[derive(Debug, Clone)]
pub struct Lattice {
    /// `alpha[[t, k]]`: log-sum of all prefixes ending in `k` at `t`, emissions included.
    pub alpha: Array2<f64>,
    /// `beta[[t, k]]`: log-sum of all suffixes after `t` given label `k` at `t`, end scores included.
    pub beta: Array2<f64>,
    pub log_partition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    pub emissions: Array2<f64>,
    pub params: CrfParams,
}

impl CrfParams {
    /// Zero transitions and boundary scores.
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            transitions: Array2::zeros((num_labels, num_labels)),
            start_scores: Array1::zeros(num_labels),
            end_scores: Array1::zeros(num_labels),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start_scores.len()
    }

    fn check(&self, emissions: ArrayView2<f64>) -> Result<()> {
        let k = self.num_labels();
        if emissions.nrows() == 0 {
            return Err(Error::Shape("CRF needs at least one step".into()));
        }
        if emissions.ncols() != k || self.transitions.dim() != (k, k) || self.end_scores.len() != k {
            return Err(Error::Shape(format!(
                "CRF with {k} labels got emissions of width {}",
                emissions.ncols()
            )));
        }
        Ok(())
    }

    pub fn sequence_score(&self, emissions: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        self.check(emissions)?;
        let k = self.num_labels();
        if labels.len() != emissions.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} steps",
                labels.len(),
                emissions.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Shape(format!("label {bad} out of range for {k} labels")));
        }
        let mut score = self.start_scores[labels[0]] + self.end_scores[labels[labels.len() - 1]];
        for (t, &y) in labels.iter().enumerate() {
            score += emissions[[t, y]];
            if t > 0 {
                score += self.transitions[[labels[t - 1], y]];
            }
        }
        Ok(score)
    }

    pub fn lattice(&self, emissions: ArrayView2<f64>) -> Result<Lattice> {
        self.check(emissions)?;
        let (t_len, k) = emissions.dim();
        let mut alpha = Array2::zeros((t_len, k));
        for j in 0..k {
            alpha[[0, j]] = self.start_scores[j] + emissions[[0, j]];
        }
        for t in 1..t_len {
            for j in 0..k {
                let prev = alpha.row(t - 1);
                alpha[[t, j]] = log_sum_exp((0..k).map(|i| prev[i] + self.transitions[[i, j]])) + emissions[[t, j]];
            }
        }
        let mut beta = Array2::zeros((t_len, k));
        beta.row_mut(t_len - 1).assign(&self.end_scores);
        for t in (0..t_len - 1).rev() {
            for i in 0..k {
                let next = beta.row(t + 1);
                beta[[t, i]] = log_sum_exp((0..k).map(|j| self.transitions[[i, j]] + emissions[[t + 1, j]] + next[j]));
            }
        }
        let last = alpha.row(t_len - 1);
        let log_partition = log_sum_exp((0..k).map(|j| last[j] + self.end_scores[j]));
        Ok(Lattice {
            alpha,
            beta,
            log_partition,
        })
    }

    /// Log of the sum of `exp(score)` over every labeling.
    pub fn log_partition(&self, emissions: ArrayView2<f64>) -> Result<f64> {
        Ok(self.lattice(emissions)?.log_partition)
    }

    /// Negative log-likelihood of `gold`; never negative.
    pub fn nll(&self, emissions: ArrayView2<f64>, gold: &[usize]) -> Result<f64> {
        let score = self.sequence_score(emissions, gold)?;
        Ok((self.log_partition(emissions)? - score).max(0.0))
    }

    /// Posterior `P(y_t = k)` for every step.
    pub fn marginals(&self, emissions: ArrayView2<f64>) -> Result<Array2<f64>> {
        let lat = self.lattice(emissions)?;
        Ok((&lat.alpha + &lat.beta).mapv(|x| (x - lat.log_partition).exp()))
    }

    /// Highest-scoring labeling and its score. At every step ties go to the
    /// lower label index.
    pub fn viterbi(&self, emissions: ArrayView2<f64>) -> Result<(Vec<usize>, f64)> {
        self.check(emissions)?;
        let (t_len, k) = emissions.dim();
        let mut delta = Array2::zeros((t_len, k));
        let mut back = Array2::<usize>::zeros((t_len, k));
        for j in 0..k {
            delta[[0, j]] = self.start_scores[j] + emissions[[0, j]];
        }
        for t in 1..t_len {
            for j in 0..k {
                let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
                for i in 0..k {
                    let s = delta[[t - 1, i]] + self.transitions[[i, j]];
                    if s > best {
                        best = s;
                        best_i = i;
                    }
                }
                delta[[t, j]] = best + emissions[[t, j]];
                back[[t, j]] = best_i;
            }
        }
        let (mut last, mut best) = (0, f64::NEG_INFINITY);
        for j in 0..k {
            let s = delta[[t_len - 1, j]] + self.end_scores[j];
            if s > best {
                best = s;
                last = j;
            }
        }
        let mut path = vec![0; t_len];
        path[t_len - 1] = last;
        for t in (1..t_len).rev() {
            path[t - 1] = back[[t, path[t]]];
        }
        Ok((path, best))
    }

    /// Per-step argmax of the posterior marginals (lowest index on ties).
    pub fn marginal_decode(&self, emissions: ArrayView2<f64>) -> Result<Vec<usize>> {
        let m = self.marginals(emissions)?;
        Ok(m.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
    }

    pub fn decode(&self, emissions: ArrayView2<f64>, mode: CrfDecoding) -> Result<Vec<usize>> {
        match mode {
            CrfDecoding::Viterbi => Ok(self.viterbi(emissions)?.0),
            CrfDecoding::MarginalArgmax => self.marginal_decode(emissions),
        }
    }

    /// NLL together with its gradients: expected counts minus gold counts,
    /// for emissions, transitions and both boundary vectors.
    pub fn nll_with_gradients(&self, emissions: ArrayView2<f64>, gold: &[usize]) -> Result<(f64, CrfGradients)> {
        let score = self.sequence_score(emissions, gold)?;
        let lat = self.lattice(emissions)?;
        let (t_len, k) = emissions.dim();
        let z = lat.log_partition;

        let mut d_emit = (&lat.alpha + &lat.beta).mapv(|x| (x - z).exp());
        let mut grads = CrfParams::zeros(k);
        grads.start_scores.assign(&d_emit.row(0));
        grads.end_scores.assign(&d_emit.row(t_len - 1));
        for t in 0..t_len - 1 {
            for i in 0..k {
                for j in 0..k {
                    let log_edge =
                        lat.alpha[[t, i]] + self.transitions[[i, j]] + emissions[[t + 1, j]] + lat.beta[[t + 1, j]];
                    grads.transitions[[i, j]] += (log_edge - z).exp();
                }
            }
        }
        for (t, &y) in gold.iter().enumerate() {
            d_emit[[t, y]] -= 1.0;
            if t > 0 {
                grads.transitions[[gold[t - 1], y]] -= 1.0;
            }
        }
        grads.start_scores[gold[0]] -= 1.0;
        grads.end_scores[gold[t_len - 1]] -= 1.0;

        Ok((
            (z - score).max(0.0),
            CrfGradients {
                emissions: d_emit,
                params: grads,
            },
        ))
    }
}

pub(crate) fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

impl Params for CrfParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.transitions.visit(&join(prefix, "transitions"), f);
        self.start_scores.visit(&join(prefix, "start"), f);
        self.end_scores.visit(&join(prefix, "end"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.transitions.visit_mut(&join(prefix, "transitions"), f);
        self.start_scores.visit_mut(&join(prefix, "start"), f);
        self.end_scores.visit_mut(&join(prefix, "end"), f);
    }
}
