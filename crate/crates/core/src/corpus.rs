//! Conversation corpus: loading, validation, splitting and the per-stage
//! supervision signals derived from gold annotations.
//!
//! The on-disk format is a JSON list of conversations:
//!
//! ```json
//! [{"conversation_ID": 1,
//!   "conversation": [{"utterance_ID": 1, "text": "...", "speaker": "Ross", "emotion": "joy"}],
//!   "emotion-cause_pairs": [["1_joy", "1"]]}]
//! ```
//!
//! Prediction files use the same layout.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_EMOTIONS: usize = 7;

/// The seven utterance-level emotion labels. Discriminants follow
/// alphabetical order and are the class indices used everywhere else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emotion {
    Anger = 0,
    Disgust = 1,
    Fear = 2,
    Joy = 3,
    Neutral = 4,
    Sadness = 5,
    Surprise = 6,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_EMOTIONS] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Joy,
        Emotion::Neutral,
        Emotion::Sadness,
        Emotion::Surprise,
    ];

    /// Every label except `neutral`, in index order.
    pub const NON_NEUTRAL: [Emotion; 6] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Joy,
        Emotion::Sadness,
        Emotion::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Self::ALL.get(index).copied()
    }

    pub fn is_neutral(self) -> bool {
        self == Emotion::Neutral
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Joy => "joy",
            Emotion::Neutral => "neutral",
            Emotion::Sadness => "sadness",
            Emotion::Surprise => "surprise",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| Error::UnknownEmotion(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// 1-based position within the conversation.
    pub utterance_id: usize,
    pub speaker: String,
    pub transcript: String,
    pub gold_emotion: Option<Emotion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmotionCausePair {
    pub emotion_utterance_id: usize,
    pub emotion: Emotion,
    pub cause_utterance_id: usize,
}

impl EmotionCausePair {
    pub fn new(emotion_utterance_id: usize, emotion: Emotion, cause_utterance_id: usize) -> Self {
        Self {
            emotion_utterance_id,
            emotion,
            cause_utterance_id,
        }
    }

    /// Signed offset of the cause relative to the emotion utterance.
    pub fn distance(&self) -> i64 {
        self.cause_utterance_id as i64 - self.emotion_utterance_id as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub conversation_id: i64,
    pub utterances: Vec<Utterance>,
    pub gold_pairs: Option<Vec<EmotionCausePair>>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Gold emotions for every utterance, or `None` if any is unlabeled.
    pub fn gold_emotions(&self) -> Option<Vec<Emotion>> {
        self.utterances.iter().map(|u| u.gold_emotion).collect()
    }

    pub fn pairs(&self) -> &[EmotionCausePair] {
        self.gold_pairs.as_deref().unwrap_or(&[])
    }

    /// Checks the structural invariants of a single conversation.
    pub fn validate(&self) -> Result<()> {
        let cid = self.conversation_id;
        if self.utterances.is_empty() {
            return Err(Error::Load {
                conversation_id: cid,
                field: "conversation".into(),
                message: "utterance list is empty".into(),
            });
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.utterance_id != i + 1 {
                return Err(Error::Load {
                    conversation_id: cid,
                    field: format!("conversation[{i}].utterance_ID"),
                    message: format!("expected {}, found {}", i + 1, u.utterance_id),
                });
            }
        }
        let n = self.utterances.len();
        for p in self.pairs() {
            if p.emotion.is_neutral() {
                return Err(Error::Validation(format!(
                    "conversation {cid}: pair ({}, {}, {}) carries the neutral emotion",
                    p.emotion_utterance_id, p.emotion, p.cause_utterance_id
                )));
            }
            for id in [p.emotion_utterance_id, p.cause_utterance_id] {
                if id == 0 || id > n {
                    return Err(Error::Validation(format!(
                        "conversation {cid}: pair references utterance {id}, conversation has {n}"
                    )));
                }
            }
            let gold = self.utterances[p.emotion_utterance_id - 1].gold_emotion;
            if let Some(gold) = gold {
                if gold != p.emotion {
                    return Err(Error::Validation(format!(
                        "conversation {cid}: pair emotion {} disagrees with utterance {} labeled {}",
                        p.emotion, p.emotion_utterance_id, gold
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub conversations: Vec<Conversation>,
    pub split_tag: SplitTag,
}

// Wire format. Field names follow the released corpus files.
#[derive(Debug, Serialize, Deserialize)]
struct RawConversation {
    #[serde(rename = "conversation_ID")]
    conversation_id: i64,
    conversation: Vec<RawUtterance>,
    #[serde(rename = "emotion-cause_pairs", default, skip_serializing_if = "Option::is_none")]
    pairs: Option<Vec<(String, String)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawUtterance {
    #[serde(rename = "utterance_ID")]
    utterance_id: usize,
    text: String,
    speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion: Option<String>,
}

fn parse_pair(cid: i64, index: usize, raw: &(String, String)) -> Result<EmotionCausePair> {
    let field = format!("emotion-cause_pairs[{index}]");
    let load_err = |message: String| Error::Load {
        conversation_id: cid,
        field: field.clone(),
        message,
    };
    let (id, emo) = raw
        .0
        .split_once('_')
        .ok_or_else(|| load_err(format!("expected `<id>_<emotion>`, found `{}`", raw.0)))?;
    let emotion_utterance_id = id
        .trim()
        .parse::<usize>()
        .map_err(|_| load_err(format!("bad utterance id `{id}`")))?;
    let emotion = emo
        .parse::<Emotion>()
        .map_err(|_| load_err(format!("unknown emotion `{emo}`")))?;
    let cause_utterance_id = raw
        .1
        .trim()
        .parse::<usize>()
        .map_err(|_| load_err(format!("bad cause id `{}`", raw.1)))?;
    Ok(EmotionCausePair {
        emotion_utterance_id,
        emotion,
        cause_utterance_id,
    })
}

impl RawConversation {
    fn into_conversation(self) -> Result<Conversation> {
        let cid = self.conversation_id;
        let utterances = self
            .conversation
            .into_iter()
            .enumerate()
            .map(|(i, u)| {
                let gold_emotion = match u.emotion {
                    Some(e) => Some(e.parse::<Emotion>().map_err(|_| Error::Load {
                        conversation_id: cid,
                        field: format!("conversation[{i}].emotion"),
                        message: format!("unknown emotion `{e}`"),
                    })?),
                    None => None,
                };
                Ok(Utterance {
                    utterance_id: u.utterance_id,
                    speaker: u.speaker,
                    transcript: u.text,
                    gold_emotion,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gold_pairs = self
            .pairs
            .map(|ps| {
                ps.iter()
                    .enumerate()
                    .map(|(i, p)| parse_pair(cid, i, p))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let conv = Conversation {
            conversation_id: cid,
            utterances,
            gold_pairs,
        };
        conv.validate()?;
        Ok(conv)
    }

    fn from_conversation(conv: &Conversation) -> Self {
        RawConversation {
            conversation_id: conv.conversation_id,
            conversation: conv
                .utterances
                .iter()
                .map(|u| RawUtterance {
                    utterance_id: u.utterance_id,
                    text: u.transcript.clone(),
                    speaker: u.speaker.clone(),
                    emotion: u.gold_emotion.map(|e| e.as_str().to_string()),
                })
                .collect(),
            pairs: conv.gold_pairs.as_ref().map(|ps| {
                ps.iter()
                    .map(|p| {
                        (
                            format!("{}_{}", p.emotion_utterance_id, p.emotion),
                            p.cause_utterance_id.to_string(),
                        )
                    })
                    .collect()
            }),
        }
    }
}

impl Dataset {
    pub fn new(conversations: Vec<Conversation>, split_tag: SplitTag) -> Result<Self> {
        let ds = Dataset {
            conversations,
            split_tag,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.conversations {
            if !seen.insert(c.conversation_id) {
                return Err(Error::Validation(format!(
                    "duplicate conversation_ID {}",
                    c.conversation_id
                )));
            }
            c.validate()?;
        }
        Ok(())
    }

    pub fn from_json_str(json: &str, split_tag: SplitTag) -> Result<Self> {
        let raw: Vec<RawConversation> = serde_json::from_str(json).map_err(|source| Error::Json {
            path: "<string>".into(),
            source,
        })?;
        Self::from_raw(raw, split_tag)
    }

    fn from_raw(raw: Vec<RawConversation>, split_tag: SplitTag) -> Result<Self> {
        let conversations = raw
            .into_iter()
            .map(RawConversation::into_conversation)
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(conversations, split_tag)
    }

    pub fn load(path: impl AsRef<Path>, split_tag: SplitTag) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Vec<RawConversation> = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_raw(raw, split_tag)
    }

    pub fn to_json_string(&self) -> String {
        let raw: Vec<RawConversation> = self
            .conversations
            .iter()
            .map(RawConversation::from_conversation)
            .collect();
        // Serializing plain strings and integers cannot fail.
        serde_json::to_string_pretty(&raw).expect("dataset serialization")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json_string();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn num_utterances(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    pub fn get(&self, conversation_id: i64) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.conversation_id == conversation_id)
    }

    /// Number of labeled utterances per emotion, indexed by `Emotion::index`.
    pub fn emotion_histogram(&self) -> [usize; NUM_EMOTIONS] {
        let mut counts = [0usize; NUM_EMOTIONS];
        for u in self.conversations.iter().flat_map(|c| &c.utterances) {
            if let Some(e) = u.gold_emotion {
                counts[e.index()] += 1;
            }
        }
        counts
    }
}

/// Shuffles conversations with a seeded generator and cuts off
/// `round(val_fraction * N)` of them as the validation side.
pub fn split_train_val(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 conversations to split, found {n}"
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} leaves an empty side for {n} conversations"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let pick = |idx: &[usize], tag| Dataset {
        conversations: idx.iter().map(|&i| dataset.conversations[i].clone()).collect(),
        split_tag: tag,
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    Ok((pick(train_idx, SplitTag::Train), pick(val_idx, SplitTag::Val)))
}

/// Inverse-frequency class weights `T / (7 * count_c)`.
///
/// Fails when an emotion never occurs; use [`emotion_class_weights_with_floor`]
/// to substitute a minimum count instead.
pub fn emotion_class_weights(train: &Dataset) -> Result<[f64; NUM_EMOTIONS]> {
    let counts = train.emotion_histogram();
    if let Some(missing) = Emotion::ALL.iter().find(|e| counts[e.index()] == 0) {
        return Err(Error::Validation(format!(
            "emotion `{missing}` never occurs in the training data; \
             set a class-weight floor count (default 1) to weight it finitely"
        )));
    }
    Ok(weights_from_counts(&counts, 1))
}

/// Same as [`emotion_class_weights`] but counts below `floor` are raised to it.
pub fn emotion_class_weights_with_floor(train: &Dataset, floor: usize) -> Result<[f64; NUM_EMOTIONS]> {
    if floor == 0 {
        return Err(Error::Config("class-weight floor must be at least 1".into()));
    }
    let counts = train.emotion_histogram();
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Validation("training data has no labeled utterances".into()));
    }
    Ok(weights_from_counts(&counts, floor))
}

fn weights_from_counts(counts: &[usize; NUM_EMOTIONS], floor: usize) -> [f64; NUM_EMOTIONS] {
    let total: usize = counts.iter().sum();
    let mut w = [0.0; NUM_EMOTIONS];
    for (wi, &c) in w.iter_mut().zip(counts) {
        *wi = total as f64 / (NUM_EMOTIONS as f64 * c.max(floor) as f64);
    }
    w
}

/// Per-utterance candidate-cause labels: `true` iff the utterance is the
/// cause side of at least one gold pair.
pub fn derive_cause_labels(conversation: &Conversation) -> Vec<bool> {
    let causes: BTreeSet<usize> = conversation.pairs().iter().map(|p| p.cause_utterance_id).collect();
    (1..=conversation.len()).map(|id| causes.contains(&id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_json(pairs: &str, n: usize) -> String {
        let utts: Vec<String> = (1..=n)
            .map(|i| {
                let emo = if i == 3 { "joy" } else { "neutral" };
                format!(r#"{{"utterance_ID": {i}, "text": "u{i}", "speaker": "A", "emotion": "{emo}"}}"#)
            })
            .collect();
        format!(
            r#"[{{"conversation_ID": 7, "conversation": [{}], "emotion-cause_pairs": {pairs}}}]"#,
            utts.join(",")
        )
    }

    fn labeled(id: i64, emotions: &[Emotion], pairs: Vec<EmotionCausePair>) -> Conversation {
        Conversation {
            conversation_id: id,
            utterances: emotions
                .iter()
                .enumerate()
                .map(|(i, &e)| Utterance {
                    utterance_id: i + 1,
                    speaker: "S".into(),
                    transcript: String::new(),
                    gold_emotion: Some(e),
                })
                .collect(),
            gold_pairs: Some(pairs),
        }
    }

    #[test]
    fn emotion_indices_are_alphabetical() {
        let names: Vec<&str> = Emotion::ALL.iter().map(|e| e.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(Emotion::Neutral.index(), 4);
        assert_eq!("JOY".parse::<Emotion>().unwrap(), Emotion::Joy);
        assert!("boredom".parse::<Emotion>().is_err());
    }

    #[test]
    fn parses_pair_strings() {
        let ds = Dataset::from_json_str(&conv_json(r#"[["3_joy", "2"]]"#, 3), SplitTag::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(
            ds.conversations[0].pairs(),
            &[EmotionCausePair::new(3, Emotion::Joy, 2)]
        );
    }

    #[test]
    fn pair_case_insensitive() {
        let ds = Dataset::from_json_str(&conv_json(r#"[["3_Joy", "3"]]"#, 3), SplitTag::Train).unwrap();
        assert_eq!(ds.conversations[0].pairs()[0].emotion, Emotion::Joy);
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        let json = conv_json(r#"[["5_joy", "2"]]"#, 4);
        let err = Dataset::from_json_str(&json, SplitTag::Train).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_pair_emotion_names_field() {
        let json = conv_json(r#"[["3_bliss", "2"]]"#, 3);
        match Dataset::from_json_str(&json, SplitTag::Train).unwrap_err() {
            Error::Load {
                conversation_id, field, ..
            } => {
                assert_eq!(conversation_id, 7);
                assert_eq!(field, "emotion-cause_pairs[0]");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_consecutive_ids_rejected() {
        let json = r#"[{"conversation_ID": 1, "conversation": [
            {"utterance_ID": 1, "text": "a", "speaker": "A"},
            {"utterance_ID": 3, "text": "b", "speaker": "B"}]}]"#;
        let err = Dataset::from_json_str(json, SplitTag::Test).unwrap_err();
        assert!(err.to_string().contains("utterance_ID"), "{err}");
    }

    #[test]
    fn pair_emotion_must_match_utterance() {
        let json = conv_json(r#"[["2_joy", "2"]]"#, 3);
        assert!(Dataset::from_json_str(&json, SplitTag::Train).is_err());
    }

    #[test]
    fn duplicate_conversation_ids_rejected() {
        let c = labeled(1, &[Emotion::Neutral], vec![]);
        assert!(Dataset::new(vec![c.clone(), c], SplitTag::Train).is_err());
    }

    #[test]
    fn split_sizes() {
        let convs: Vec<_> = (0..10).map(|i| labeled(i, &[Emotion::Joy], vec![])).collect();
        let ds = Dataset::new(convs, SplitTag::Train).unwrap();
        let (tr, va) = split_train_val(&ds, 0.1, 3).unwrap();
        assert_eq!((tr.len(), va.len()), (9, 1));
        let (tr2, va2) = split_train_val(&ds, 0.1, 3).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        assert!(split_train_val(&ds, 0.01, 3).is_err());
        assert!(split_train_val(&ds, 0.99, 3).is_err());
    }

    #[test]
    fn split_of_full_corpus_size() {
        let convs: Vec<_> = (0..1344).map(|i| labeled(i, &[Emotion::Joy], vec![])).collect();
        let ds = Dataset::new(convs, SplitTag::Train).unwrap();
        let (tr, va) = split_train_val(&ds, 0.1, 0).unwrap();
        assert_eq!((tr.len(), va.len()), (1210, 134));
    }

    #[test]
    fn class_weights_uniform_and_skewed() {
        let all: Vec<Emotion> = Emotion::ALL.to_vec();
        let ds = Dataset::new(vec![labeled(1, &all, vec![])], SplitTag::Train).unwrap();
        assert_eq!(emotion_class_weights(&ds).unwrap(), [1.0; 7]);

        let mut skew: Vec<Emotion> = Emotion::NON_NEUTRAL.to_vec();
        skew.extend(std::iter::repeat_n(Emotion::Neutral, 7));
        let ds = Dataset::new(vec![labeled(1, &skew, vec![])], SplitTag::Train).unwrap();
        let w = emotion_class_weights(&ds).unwrap();
        assert!((w[Emotion::Neutral.index()] - 13.0 / 49.0).abs() < 1e-15);
        assert!((w[Emotion::Joy.index()] - 13.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn class_weights_zero_count() {
        let ds = Dataset::new(
            vec![labeled(1, &[Emotion::Joy, Emotion::Neutral], vec![])],
            SplitTag::Train,
        )
        .unwrap();
        let err = emotion_class_weights(&ds).unwrap_err();
        assert!(err.to_string().contains("floor"));
        let w = emotion_class_weights_with_floor(&ds, 1).unwrap();
        // T = 2, every count is 1 after flooring.
        for wi in w {
            assert!((wi - 2.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cause_labels() {
        let e = [Emotion::Neutral, Emotion::Neutral, Emotion::Joy, Emotion::Neutral];
        let c = labeled(
            1,
            &e,
            vec![
                EmotionCausePair::new(3, Emotion::Joy, 2),
                EmotionCausePair::new(3, Emotion::Joy, 3),
            ],
        );
        assert_eq!(derive_cause_labels(&c), vec![false, true, true, false]);
        assert_eq!(derive_cause_labels(&labeled(2, &e, vec![])), vec![false; 4]);

        let e2 = [Emotion::Neutral, Emotion::Joy, Emotion::Anger];
        let shared = labeled(
            3,
            &e2,
            vec![
                EmotionCausePair::new(2, Emotion::Joy, 1),
                EmotionCausePair::new(3, Emotion::Anger, 1),
            ],
        );
        assert_eq!(derive_cause_labels(&shared), vec![true, false, false]);
    }

    #[test]
    fn json_round_trip() {
        let ds = Dataset::from_json_str(&conv_json(r#"[["3_joy", "2"], ["3_joy", "3"]]"#, 4), SplitTag::Train).unwrap();
        let again = Dataset::from_json_str(&ds.to_json_string(), SplitTag::Train).unwrap();
        assert_eq!(ds, again);
    }
}
