//! Built-in verification behind `ecpe selfcheck`: CRF inference against
//! exhaustive enumeration, finite-difference checks of every trainable head,
//! and the hand-computed metric fixtures.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::corpus::{Emotion, EmotionCausePair};
use crate::crf::CrfParams;
use crate::error::Result;
use crate::evaluation::{pair_metrics, stage_metrics, ScoredPair};
use crate::nn::{gradcheck, gradcheck_with_floor, GradcheckReport, TrainRng};
use crate::pipeline::{
    CauseModel, CauseModelConfig, CauseVariant, EmotionModel, EmotionModelConfig, EmotionVariant, PairInputs,
    PairingModel, PairingModelConfig,
};

pub const CRF_TOLERANCE: f64 = 1e-8;
pub const CRF_GRAD_TOLERANCE: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Finite-difference step and denominator floor for the stacked BiLSTM
/// checks, where the smallest entries sit at the rounding level of the loss.
pub const RNN_EPSILON: f64 = 1e-4;
pub const RNN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run() -> SelfcheckReport {
    let checks: [(&'static str, fn() -> Result<(bool, String)>); 10] = [
        ("crf_exhaustive_oracle", crf_oracle),
        ("crf_gradients", crf_gradients),
        ("weighted_ce_head", weighted_ce_head),
        ("bce_head", bce_head),
        ("pairing_head", pairing_head),
        ("birnn_emotion_model", || birnn_emotion_model(EmotionVariant::Bilstm)),
        ("birnn_crf_emotion_model", || {
            birnn_emotion_model(EmotionVariant::BilstmCrf)
        }),
        ("stage_metric_fixture", stage_fixture),
        ("pair_metric_fixture", pair_fixture),
        ("gold_vs_gold", gold_vs_gold),
    ];
    let checks = checks
        .into_iter()
        .map(|(name, check)| {
            let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckResult { name, passed, detail }
        })
        .collect();
    SelfcheckReport { checks }
}

/// Every labeling of length `t` over `k` labels, in lexicographic order.
fn labelings(t: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..k.pow(t as u32)).map(move |mut n| {
        let mut y = vec![0; t];
        for slot in y.iter_mut().rev() {
            *slot = n % k;
            n /= k;
        }
        y
    })
}

/// Log-sum-exp of the scores of all `K^T` labelings.
pub fn brute_force_log_partition(params: &CrfParams, emissions: &Array2<f64>) -> Result<f64> {
    let (t, k) = emissions.dim();
    let scores = labelings(t, k)
        .map(|y| params.sequence_score(emissions.view(), &y))
        .collect::<Result<Vec<_>>>()?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln())
}

/// Best labeling by enumeration; the first maximum in lexicographic order wins.
pub fn brute_force_viterbi(params: &CrfParams, emissions: &Array2<f64>) -> Result<(Vec<usize>, f64)> {
    let (t, k) = emissions.dim();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for y in labelings(t, k) {
        let s = params.sequence_score(emissions.view(), &y)?;
        if s > best.1 {
            best = (y, s);
        }
    }
    Ok(best)
}

pub fn random_crf_instance<R: Rng + ?Sized>(t: usize, k: usize, rng: &mut R) -> (Array2<f64>, CrfParams) {
    let mut u = || rng.random_range(-2.0..2.0);
    let emissions = Array2::from_shape_fn((t, k), |_| u());
    let params = CrfParams {
        transitions: Array2::from_shape_fn((k, k), |_| u()),
        start_scores: Array1::from_shape_fn(k, |_| u()),
        end_scores: Array1::from_shape_fn(k, |_| u()),
    };
    (emissions, params)
}

fn crf_oracle() -> Result<(bool, String)> {
    let mut rng = TrainRng::seed_from_u64(20);
    let (mut z_err, mut score_err, mut label_mismatches) = (0.0f64, 0.0f64, 0);
    let instances = 250;
    for _ in 0..instances {
        let t = rng.random_range(1..=4);
        let k = rng.random_range(2..=3);
        let (e, p) = random_crf_instance(t, k, &mut rng);
        z_err = z_err.max((p.log_partition(e.view())? - brute_force_log_partition(&p, &e)?).abs());
        let (path, score) = p.viterbi(e.view())?;
        let (bf_path, bf_score) = brute_force_viterbi(&p, &e)?;
        score_err = score_err.max((score - bf_score).abs());
        label_mismatches += usize::from(path != bf_path);
    }
    Ok((
        z_err < CRF_TOLERANCE && score_err < CRF_TOLERANCE && label_mismatches == 0,
        format!(
            "{instances} instances: max |dlogZ| {z_err:.2e}, max |dscore| {score_err:.2e}, {label_mismatches} label mismatches"
        ),
    ))
}

fn summarize(reports: &[(&str, GradcheckReport)], tolerance: f64) -> (bool, String) {
    let passed = reports.iter().all(|(_, r)| r.max_rel_error < tolerance);
    let detail = reports
        .iter()
        .map(|(what, r)| {
            format!(
                "{what}: max rel error {:.2e} over {} entries",
                r.max_rel_error, r.checked
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    (passed, format!("{detail} (tolerance {tolerance:e})"))
}

fn crf_gradients() -> Result<(bool, String)> {
    let (e, p) = random_crf_instance(5, 4, &mut TrainRng::seed_from_u64(21));
    let gold = [1, 0, 3, 3, 2];
    let (_, g) = p.nll_with_gradients(e.view(), &gold)?;
    let params = gradcheck(&p, &g.params, 1e-5, |q: &CrfParams| q.nll(e.view(), &gold).unwrap());
    let emissions = gradcheck(&e, &g.emissions, 1e-5, |x: &Array2<f64>| {
        p.nll(x.view(), &gold).unwrap()
    });
    Ok(summarize(
        &[("params", params), ("emissions", emissions)],
        CRF_GRAD_TOLERANCE,
    ))
}

fn features(t: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = TrainRng::seed_from_u64(seed);
    Array2::from_shape_fn((t, d), |_| rng.sample(StandardNormal))
}

const CLASS_WEIGHTS: [f64; 7] = [2.0, 0.5, 1.5, 0.75, 0.3, 1.0, 3.0];

fn weighted_ce_head() -> Result<(bool, String)> {
    let m = EmotionModel::new(
        EmotionModelConfig::new(EmotionVariant::Dense, 6),
        &mut TrainRng::seed_from_u64(22),
    )?;
    let x = features(9, 6, 23);
    let gold = [0, 1, 2, 3, 4, 5, 6, 4, 4];
    let (_, g) = m.loss_and_gradients(x.view(), &gold, &CLASS_WEIGHTS, None)?;
    let r = gradcheck_with_floor(&m, &g, RNN_EPSILON, RNN_FLOOR, |p: &EmotionModel| {
        p.loss(p.forward(x.view(), None).unwrap().view(), &gold, &CLASS_WEIGHTS)
            .unwrap()
    });
    Ok(summarize(&[("dense head", r)], GRAD_TOLERANCE))
}

fn bce_head() -> Result<(bool, String)> {
    let m = CauseModel::new(
        CauseModelConfig::new(CauseVariant::Dense, 6),
        &mut TrainRng::seed_from_u64(24),
    )?;
    let x = features(7, 6, 25);
    let gold = [true, false, false, true, true, false, true];
    let (_, g) = m.loss_and_gradients(x.view(), &gold, None)?;
    let r = gradcheck(&m, &g, 1e-5, |p: &CauseModel| {
        p.loss(&p.forward(x.view(), None).unwrap(), &gold).unwrap()
    });
    Ok(summarize(&[("binary head", r)], GRAD_TOLERANCE))
}

fn pairing_head() -> Result<(bool, String)> {
    let mut cfg = PairingModelConfig::new(4, 3);
    cfg.max_distance = 3;
    cfg.distance_dim = 4;
    let m = PairingModel::new(cfg, &mut TrainRng::seed_from_u64(26))?;
    let mut rng = TrainRng::seed_from_u64(27);
    let inputs = PairInputs {
        reps: Array2::from_shape_fn((10, 7), |_| rng.sample(StandardNormal)),
        distances: (0..10).map(|_| rng.random_range(-5..=5)).collect(),
    };
    let labels = [true, false, false, true, false, true, true, false, false, false];
    let (_, g) = m.loss_and_gradients(&inputs, &labels)?;
    let r = gradcheck(&m, &g, 1e-5, |p: &PairingModel| p.loss(&inputs, &labels).unwrap());
    Ok(summarize(&[("pairing head with distance table", r)], GRAD_TOLERANCE))
}

/// Four stacked layers, six steps, eight units per direction.
fn birnn_emotion_model(variant: EmotionVariant) -> Result<(bool, String)> {
    let mut cfg = EmotionModelConfig::new(variant, 5);
    cfg.encoder.hidden_size = 8;
    cfg.encoder.num_layers = 4;
    let m = EmotionModel::new(cfg, &mut TrainRng::seed_from_u64(28))?;
    let x = features(6, 5, 29);
    let gold = [4, 0, 0, 6, 4, 2];
    let (_, g) = m.loss_and_gradients(x.view(), &gold, &CLASS_WEIGHTS, None)?;
    let r = gradcheck_with_floor(&m, &g, RNN_EPSILON, RNN_FLOOR, |p: &EmotionModel| {
        p.loss(p.forward(x.view(), None).unwrap().view(), &gold, &CLASS_WEIGHTS)
            .unwrap()
    });
    Ok(summarize(&[(variant.as_str(), r)], GRAD_TOLERANCE))
}

fn stage_fixture() -> Result<(bool, String)> {
    let m = stage_metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], 2)?;
    let want = 0.5 * (2.0 / 3.0) + 0.5 * 0.8;
    Ok((
        (m.weighted_f1 - want).abs() < 1e-12,
        format!("weighted F1 {:.6} (expected {want:.6})", m.weighted_f1),
    ))
}

fn scored(conversation_id: i64, emotion_utt: usize, emotion: Emotion, cause_utt: usize) -> ScoredPair {
    ScoredPair {
        conversation_id,
        pair: EmotionCausePair::new(emotion_utt, emotion, cause_utt),
    }
}

fn pair_fixture() -> Result<(bool, String)> {
    let gold = [
        scored(1, 3, Emotion::Joy, 2),
        scored(1, 3, Emotion::Joy, 3),
        scored(1, 5, Emotion::Anger, 5),
    ];
    let pred = [scored(1, 3, Emotion::Joy, 2), scored(1, 5, Emotion::Anger, 4)];
    let m = pair_metrics(&pred, &gold)?;
    Ok((
        (m.weighted_f1 - 4.0 / 9.0).abs() < 1e-12 && (m.macro_f1 - 1.0 / 3.0).abs() < 1e-12,
        format!(
            "weighted F1 {:.6} (expected 4/9), macro F1 {:.6} (expected 1/3)",
            m.weighted_f1, m.macro_f1
        ),
    ))
}

fn gold_vs_gold() -> Result<(bool, String)> {
    let labels = [4, 0, 3, 3, 6, 4, 1, 2, 5, 4];
    let s = stage_metrics(&labels, &labels, 7)?;
    let pairs = [
        scored(1, 2, Emotion::Fear, 1),
        scored(1, 2, Emotion::Fear, 2),
        scored(2, 4, Emotion::Sadness, 1),
        scored(3, 1, Emotion::Surprise, 1),
    ];
    let p = pair_metrics(&pairs, &pairs)?;
    let values = [
        s.weighted_precision,
        s.weighted_recall,
        s.weighted_f1,
        s.macro_f1,
        s.accuracy,
        p.weighted_precision,
        p.weighted_recall,
        p.weighted_f1,
        p.macro_f1,
    ];
    Ok((
        values.iter().all(|&v| v == 1.0),
        format!("stage and pair metrics: {values:?}"),
    ))
}
