//! Stacked bidirectional LSTM with explicit backpropagation through time.
//!
//! Gate layout inside every `4H`-wide block is `[input, forget, cell, output]`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::dropout::sample_dropout_mask;
use super::loss::sigmoid;
use super::params::{join, ParamView, Params};
use super::TrainRng;
use crate::error::{Error, Result};

/// One direction of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// `in_dim x 4H`
    pub w_ih: Array2<f64>,
    /// `H x 4H`
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
struct DirectionCache {
    /// Post-activation gates per position, `T x 4H`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    hidden: Array2<f64>,
}

/// `n x n` orthogonal matrix from Gram-Schmidt on Gaussian draws.
fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let mut q = Array2::from_shape_fn((n, n), |_| rng.sample::<f64, _>(StandardNormal));
        let mut degenerate = false;
        for i in 0..n {
            for j in 0..i {
                let proj = q.row(i).dot(&q.row(j));
                let prev = q.row(j).to_owned();
                q.row_mut(i).scaled_add(-proj, &prev);
            }
            let norm = q.row(i).dot(&q.row(i)).sqrt();
            if norm < 1e-10 {
                degenerate = true;
                break;
            }
            q.row_mut(i).mapv_inplace(|x| x / norm);
        }
        if !degenerate {
            return q;
        }
    }
}

impl LstmDirection {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((in_dim, 4 * hidden)),
            w_hh: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    /// Uniform `±1/sqrt(in_dim)` input weights, orthogonal recurrent blocks,
    /// forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let w_ih = Array2::from_shape_fn((in_dim, 4 * hidden), |_| rng.random_range(-bound..=bound));
        let mut w_hh = Array2::zeros((hidden, 4 * hidden));
        for gate in 0..4 {
            w_hh.slice_mut(s![.., gate * hidden..(gate + 1) * hidden])
                .assign(&orthogonal(hidden, rng));
        }
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self { w_ih, w_hh, bias }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.nrows()
    }

    fn forward(&self, x: ArrayView2<f64>, reverse: bool) -> (Array2<f64>, DirectionCache) {
        let (t_len, h) = (x.nrows(), self.hidden());
        let xw = x.dot(&self.w_ih) + &self.bias;
        let mut gates = Array2::zeros((t_len, 4 * h));
        let mut cells = Array2::zeros((t_len, h));
        let mut tanh_cells = Array2::zeros((t_len, h));
        let mut hidden = Array2::zeros((t_len, h));
        let mut h_prev = Array1::<f64>::zeros(h);
        let mut c_prev = Array1::<f64>::zeros(h);
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let z = &xw.row(t) + &h_prev.dot(&self.w_hh);
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                let c = f * c_prev[k] + i * g;
                let tc = c.tanh();
                gates[[t, k]] = i;
                gates[[t, h + k]] = f;
                gates[[t, 2 * h + k]] = g;
                gates[[t, 3 * h + k]] = o;
                cells[[t, k]] = c;
                tanh_cells[[t, k]] = tc;
                hidden[[t, k]] = o * tc;
            }
            h_prev.assign(&hidden.row(t));
            c_prev.assign(&cells.row(t));
        }
        let cache = DirectionCache {
            gates,
            cells,
            tanh_cells,
            hidden: hidden.clone(),
        };
        (hidden, cache)
    }

    fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &DirectionCache,
        d_hidden: ArrayView2<f64>,
        reverse: bool,
        grads: &mut LstmDirection,
    ) -> Array2<f64> {
        let (t_len, h) = (x.nrows(), self.hidden());
        let pos = |step: usize| if reverse { t_len - 1 - step } else { step };
        let mut dz = Array2::<f64>::zeros((t_len, 4 * h));
        // hidden state that fed into each position's recurrence
        let mut h_prev = Array2::<f64>::zeros((t_len, h));
        let mut dh_next = Array1::<f64>::zeros(h);
        let mut dc_next = Array1::<f64>::zeros(h);
        for step in (0..t_len).rev() {
            let t = pos(step);
            let prev = (step > 0).then(|| pos(step - 1));
            if let Some(p) = prev {
                h_prev.row_mut(t).assign(&cache.hidden.row(p));
            }
            for k in 0..h {
                let i = cache.gates[[t, k]];
                let f = cache.gates[[t, h + k]];
                let g = cache.gates[[t, 2 * h + k]];
                let o = cache.gates[[t, 3 * h + k]];
                let tc = cache.tanh_cells[[t, k]];
                let c_prev = prev.map_or(0.0, |p| cache.cells[[p, k]]);
                let dh = d_hidden[[t, k]] + dh_next[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[[t, k]] = dc * g * i * (1.0 - i);
                dz[[t, h + k]] = dc * c_prev * f * (1.0 - f);
                dz[[t, 2 * h + k]] = dc * i * (1.0 - g * g);
                dz[[t, 3 * h + k]] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next = self.w_hh.dot(&dz.row(t));
        }
        grads.w_hh += &h_prev.t().dot(&dz);
        grads.w_ih += &x.t().dot(&dz);
        grads.bias += &dz.sum_axis(Axis(0));
        dz.dot(&self.w_ih.t())
    }
}

impl Params for LstmDirection {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.w_ih.visit(&join(prefix, "w_ih"), f);
        self.w_hh.visit(&join(prefix, "w_hh"), f);
        self.bias.visit(&join(prefix, "bias"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.w_ih.visit_mut(&join(prefix, "w_ih"), f);
        self.w_hh.visit_mut(&join(prefix, "w_hh"), f);
        self.bias.visit_mut(&join(prefix, "bias"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

impl Params for BiLstmLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        self.backward.visit_mut(&join(prefix, "bwd"), f);
    }
}

/// Stacked bidirectional LSTM. Each step's output is
/// `[forward hidden ‖ backward hidden]` of the top layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub layers: Vec<BiLstmLayer>,
    pub inter_layer_dropout: f64,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    forward: DirectionCache,
    backward: DirectionCache,
}

/// Intermediate values from [`BiLstm::forward`], consumed by [`BiLstm::backward`].
#[derive(Debug, Clone)]
pub struct BiLstmCache {
    layers: Vec<LayerCache>,
    /// Dropout mask applied to the input of layer `l + 1`.
    masks: Vec<Option<Array2<f64>>>,
}

impl BiLstm {
    pub fn zeros(in_dim: usize, hidden: usize, n_layers: usize, inter_layer_dropout: f64) -> Self {
        Self::build(in_dim, hidden, n_layers, inter_layer_dropout, |i, h| BiLstmLayer {
            forward: LstmDirection::zeros(i, h),
            backward: LstmDirection::zeros(i, h),
        })
    }

    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        inter_layer_dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self::build(in_dim, hidden, n_layers, inter_layer_dropout, |i, h| BiLstmLayer {
            forward: LstmDirection::init(i, h, rng),
            backward: LstmDirection::init(i, h, rng),
        })
    }

    fn build(
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        inter_layer_dropout: f64,
        mut make: impl FnMut(usize, usize) -> BiLstmLayer,
    ) -> Self {
        assert!(n_layers >= 1 && hidden >= 1, "BiLstm needs at least one layer and unit");
        let layers = (0..n_layers)
            .map(|l| make(if l == 0 { in_dim } else { 2 * hidden }, hidden))
            .collect();
        Self {
            layers,
            inter_layer_dropout,
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].forward.hidden()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].forward.w_ih.nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden()
    }

    /// Runs the stack over a `T x in_dim` sequence. Inter-layer dropout is
    /// sampled from `dropout_rng` when one is given (training), skipped otherwise.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        mut dropout_rng: Option<&mut TrainRng>,
    ) -> Result<(Array2<f64>, BiLstmCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "BiLstm expects width {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Shape("BiLstm needs at least one step".into()));
        }
        let mut input = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if l > 0 && self.inter_layer_dropout > 0.0 => {
                    Some(sample_dropout_mask(input.dim(), self.inter_layer_dropout, rng))
                }
                _ => None,
            };
            if let Some(m) = &mask {
                input *= m;
            }
            let (hf, cf) = layer.forward.forward(input.view(), false);
            let (hb, cb) = layer.backward.forward(input.view(), true);
            let out = concatenate![Axis(1), hf, hb];
            caches.push(LayerCache {
                input,
                forward: cf,
                backward: cb,
            });
            masks.push(mask);
            input = out;
        }
        Ok((input, BiLstmCache { layers: caches, masks }))
    }

    /// Accumulates gradients into `grads`, returns `dL/dx`.
    pub fn backward(&self, cache: &BiLstmCache, d_out: ArrayView2<f64>, grads: &mut BiLstm) -> Array2<f64> {
        let h = self.hidden();
        let mut d = d_out.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            let g = &mut grads.layers[l];
            let dx_f = layer.forward.backward(
                lc.input.view(),
                &lc.forward,
                d.slice(s![.., ..h]),
                false,
                &mut g.forward,
            );
            let dx_b = layer.backward.backward(
                lc.input.view(),
                &lc.backward,
                d.slice(s![.., h..]),
                true,
                &mut g.backward,
            );
            d = dx_f + dx_b;
            if let Some(m) = &cache.masks[l] {
                d *= m;
            }
        }
        d
    }
}

impl Params for BiLstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("l{l}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("l{l}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradcheck;
    use rand::SeedableRng;

    fn rng(seed: u64) -> TrainRng {
        TrainRng::seed_from_u64(seed)
    }

    fn random_input(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_fn((t, d), |_| r.sample(StandardNormal))
    }

    #[test]
    fn orthogonal_blocks() {
        let q = orthogonal(6, &mut rng(1));
        let eye = q.dot(&q.t());
        for ((i, j), v) in eye.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_uses_only_its_input() {
        let net = BiLstm::init(3, 4, 2, 0.0, &mut rng(2));
        let x = random_input(1, 3, 3);
        let (a, _) = net.forward(x.view(), None).unwrap();
        let (b, _) = net.forward(x.view(), None).unwrap();
        assert_eq!(a.dim(), (1, 8));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = BiLstm::zeros(3, 5, 3, 0.0);
        let (out, _) = net.forward(random_input(6, 3, 4).view(), None).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direction_symmetry() {
        let net = BiLstm::init(3, 4, 1, 0.0, &mut rng(5));
        let mut swapped = net.clone();
        let layer = &mut swapped.layers[0];
        std::mem::swap(&mut layer.forward, &mut layer.backward);
        let x = random_input(5, 3, 6);
        let rev = x.slice(s![..;-1, ..]).to_owned();
        let (a, _) = net.forward(x.view(), None).unwrap();
        let (b, _) = swapped.forward(rev.view(), None).unwrap();
        for t in 0..5 {
            for k in 0..4 {
                assert!((a[[t, k]] - b[[4 - t, 4 + k]]).abs() < 1e-14);
                assert!((a[[t, 4 + k]] - b[[4 - t, k]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn information_flows_both_ways() {
        let net = BiLstm::init(3, 4, 2, 0.0, &mut rng(7));
        let x = random_input(6, 3, 8);
        let (base, _) = net.forward(x.view(), None).unwrap();
        for (perturb, observe) in [(0usize, 5usize), (5, 0)] {
            let mut y = x.clone();
            y[[perturb, 1]] += 0.5;
            let (out, _) = net.forward(y.view(), None).unwrap();
            let diff: f64 = (&out.row(observe) - &base.row(observe)).mapv(f64::abs).sum();
            assert!(diff > 1e-6, "step {observe} ignored step {perturb}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = BiLstm::init(3, 4, 2, 0.0, &mut rng(9));
        let x = random_input(5, 3, 10);
        let probe = random_input(5, 8, 11);
        let loss = |n: &BiLstm| (n.forward(x.view(), None).unwrap().0 * &probe).sum();
        let (_, cache) = net.forward(x.view(), None).unwrap();
        let mut grads = net.zeros_like();
        let dx = net.backward(&cache, probe.view(), &mut grads);
        let report = gradcheck(&net, &grads, 1e-4, loss);
        assert!(report.max_rel_error < 1e-5, "{report:?}");

        let input_loss = |x: &Array2<f64>| (net.forward(x.view(), None).unwrap().0 * &probe).sum();
        let report = gradcheck(&x, &dx, 1e-4, input_loss);
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn dropout_only_when_training() {
        let net = BiLstm::init(3, 4, 3, 0.5, &mut rng(12));
        let x = random_input(4, 3, 13);
        let (eval_a, _) = net.forward(x.view(), None).unwrap();
        let (eval_b, _) = net.forward(x.view(), None).unwrap();
        assert_eq!(eval_a, eval_b);
        let (train, cache) = net.forward(x.view(), Some(&mut rng(14))).unwrap();
        assert_ne!(train, eval_a);
        assert!(cache.masks[0].is_none() && cache.masks[1].is_some());
    }
}
