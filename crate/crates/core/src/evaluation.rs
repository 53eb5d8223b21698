//! Stage-level weighted precision/recall/F1 and the pair-level weighted and
//! macro F1 used for final scoring.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::corpus::{derive_cause_labels, Dataset, Emotion, EmotionCausePair, NUM_EMOTIONS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold items of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMetrics {
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Unweighted mean F1 over classes with non-zero support.
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Multi-class precision/recall/F1 with support-weighted averages.
pub fn stage_metrics(predicted: &[usize], gold: &[usize], n_classes: usize) -> Result<StageMetrics> {
    if predicted.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    if let Some(&bad) = predicted.iter().chain(gold).find(|&&y| y >= n_classes) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut gold_count = vec![0usize; n_classes];
    for (&p, &g) in predicted.iter().zip(gold) {
        pred_count[p] += 1;
        gold_count[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let precision = ratio(tp[c], pred_count[c]);
            let recall = ratio(tp[c], gold_count[c]);
            ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: gold_count[c],
            }
        })
        .collect();
    let total = gold.len();
    let weighted = |field: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| m.support as f64 * field(m)).sum::<f64>() / total as f64
        }
    };
    let supported: Vec<f64> = per_class.iter().filter(|m| m.support > 0).map(|m| m.f1).collect();
    Ok(StageMetrics {
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        macro_f1: if supported.is_empty() {
            0.0
        } else {
            supported.iter().sum::<f64>() / supported.len() as f64
        },
        accuracy: ratio(tp.iter().sum(), total),
        per_class,
    })
}

/// An emotion-cause pair tagged with its conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScoredPair {
    pub conversation_id: i64,
    pub pair: EmotionCausePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmotionPairMetrics {
    pub emotion: &'static str,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_pairs: usize,
    pub predicted_pairs: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMetrics {
    /// One entry per non-neutral emotion, in index order.
    pub per_emotion: Vec<EmotionPairMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    /// Per-emotion F1 weighted by gold pair counts.
    pub weighted_f1: f64,
    /// Mean F1 over emotions present in gold or predictions.
    pub macro_f1: f64,
}

/// Exact-match pair scoring. Duplicates are collapsed before counting, so a
/// gold pair can be matched at most once.
pub fn pair_metrics(predicted: &[ScoredPair], gold: &[ScoredPair]) -> Result<PairMetrics> {
    for sp in predicted.iter().chain(gold) {
        if sp.pair.emotion.is_neutral() {
            return Err(Error::Validation(format!(
                "conversation {}: pair ({}, neutral, {}) cannot be scored",
                sp.conversation_id, sp.pair.emotion_utterance_id, sp.pair.cause_utterance_id
            )));
        }
    }
    let pred: BTreeSet<ScoredPair> = predicted.iter().copied().collect();
    let gold: BTreeSet<ScoredPair> = gold.iter().copied().collect();

    let mut counts = [(0usize, 0usize, 0usize); NUM_EMOTIONS];
    for p in &pred {
        counts[p.pair.emotion.index()].1 += 1;
        if gold.contains(p) {
            counts[p.pair.emotion.index()].2 += 1;
        }
    }
    for g in &gold {
        counts[g.pair.emotion.index()].0 += 1;
    }

    let per_emotion: Vec<EmotionPairMetrics> = Emotion::NON_NEUTRAL
        .iter()
        .map(|&e| {
            let (g, p, tp) = counts[e.index()];
            let precision = ratio(tp, p);
            let recall = ratio(tp, g);
            EmotionPairMetrics {
                emotion: e.as_str(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                gold_pairs: g,
                predicted_pairs: p,
                true_positives: tp,
            }
        })
        .collect();

    let total_gold = gold.len();
    let weighted = |field: fn(&EmotionPairMetrics) -> f64| {
        if total_gold == 0 {
            0.0
        } else {
            per_emotion.iter().map(|m| m.gold_pairs as f64 * field(m)).sum::<f64>() / total_gold as f64
        }
    };
    let present: Vec<f64> = per_emotion
        .iter()
        .filter(|m| m.gold_pairs > 0 || m.predicted_pairs > 0)
        .map(|m| m.f1)
        .collect();
    Ok(PairMetrics {
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        macro_f1: if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        },
        per_emotion,
    })
}

pub fn dataset_pairs(dataset: &Dataset) -> Vec<ScoredPair> {
    dataset
        .conversations
        .iter()
        .flat_map(|c| {
            c.pairs().iter().map(move |&pair| ScoredPair {
                conversation_id: c.conversation_id,
                pair,
            })
        })
        .collect()
}

/// Everything the scorer reports for a gold file against a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub conversations: usize,
    pub utterances: usize,
    /// Present when every utterance in both files carries an emotion.
    pub emotion: Option<StageMetrics>,
    /// Candidate-cause labels derived from each side's pair list.
    pub cause: StageMetrics,
    pub pairs: PairMetrics,
}

/// Scores `predicted` against `gold`. Both must hold the same conversations
/// with the same utterance counts.
pub fn evaluate_datasets(gold: &Dataset, predicted: &Dataset) -> Result<EvaluationReport> {
    let gold_ids: BTreeMap<i64, usize> = gold
        .conversations
        .iter()
        .map(|c| (c.conversation_id, c.len()))
        .collect();
    let pred_ids: BTreeMap<i64, usize> = predicted
        .conversations
        .iter()
        .map(|c| (c.conversation_id, c.len()))
        .collect();
    if gold_ids.keys().ne(pred_ids.keys()) {
        let only_gold: Vec<_> = gold_ids.keys().filter(|k| !pred_ids.contains_key(k)).collect();
        let only_pred: Vec<_> = pred_ids.keys().filter(|k| !gold_ids.contains_key(k)).collect();
        return Err(Error::Validation(format!(
            "conversation ids differ: only in gold {only_gold:?}, only in predictions {only_pred:?}"
        )));
    }
    if let Some((id, n)) = gold_ids.iter().find(|(id, n)| pred_ids[id] != **n) {
        return Err(Error::Validation(format!(
            "conversation {id}: gold has {n} utterances, predictions have {}",
            pred_ids[id]
        )));
    }

    let mut gold_emotions = Vec::new();
    let mut pred_emotions = Vec::new();
    let mut emotions_complete = true;
    let mut gold_causes = Vec::new();
    let mut pred_causes = Vec::new();
    for g in &gold.conversations {
        let p = predicted.get(g.conversation_id).expect("ids checked above");
        match (g.gold_emotions(), p.gold_emotions()) {
            (Some(ge), Some(pe)) => {
                gold_emotions.extend(ge.iter().map(|e| e.index()));
                pred_emotions.extend(pe.iter().map(|e| e.index()));
            }
            _ => emotions_complete = false,
        }
        gold_causes.extend(derive_cause_labels(g).into_iter().map(usize::from));
        pred_causes.extend(derive_cause_labels(p).into_iter().map(usize::from));
    }
    let emotion = if emotions_complete {
        Some(stage_metrics(&pred_emotions, &gold_emotions, NUM_EMOTIONS)?)
    } else {
        None
    };
    Ok(EvaluationReport {
        conversations: gold.len(),
        utterances: gold.num_utterances(),
        emotion,
        cause: stage_metrics(&pred_causes, &gold_causes, 2)?,
        pairs: pair_metrics(&dataset_pairs(predicted), &dataset_pairs(gold))?,
    })
}
