//! Per-utterance modality embeddings and their fusion.
//!
//! Encoders themselves live outside this crate. Features arrive either from
//! precomputed text files (one per modality) or from a seeded synthetic
//! generator, both behind [`EmbeddingProvider`].

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{derive_cause_labels, Conversation, Dataset, NUM_EMOTIONS};
use crate::error::{Error, Result};

/// Fusion order. Checkpoints record this so feature layouts stay portable.
pub const FUSION_ORDER: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Video];

/// Frames sampled per clip before mean-pooling video features.
pub const VIDEO_FRAMES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Video,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }

    fn ordinal(self) -> u64 {
        match self {
            Modality::Text => 0,
            Modality::Audio => 1,
            Modality::Video => 2,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityDims {
    pub text: usize,
    pub audio: usize,
    pub video: usize,
}

impl ModalityDims {
    pub fn new(text: usize, audio: usize, video: usize) -> Self {
        Self { text, audio, video }
    }

    pub fn get(&self, modality: Modality) -> usize {
        match modality {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Video => self.video,
        }
    }

    /// Width of the fused vector.
    pub fn total(&self) -> usize {
        self.text + self.audio + self.video
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbedding {
    pub modality: Modality,
    pub vector: Vec<f64>,
}

impl ModalityEmbedding {
    pub fn new(modality: Modality, vector: Vec<f64>) -> Self {
        Self { modality, vector }
    }
}

/// Fused `text ‖ audio ‖ video` vector for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures(pub Vec<f64>);

impl UtteranceFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Component-wise mean of equally sized vectors.
pub fn mean_pool(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Shape("mean_pool over an empty list".into()))?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::Shape(format!(
                "mean_pool: expected dimension {dim}, found {}",
                v.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// `k` frame indices spread evenly over `n_total` frames:
/// `floor(i * (n_total - 1) / (k - 1))`. Short clips repeat indices.
pub fn equally_spaced_indices(n_total: usize, k: usize) -> Vec<usize> {
    if k == 0 || n_total == 0 {
        return Vec::new();
    }
    if k == 1 {
        return vec![0];
    }
    (0..k).map(|i| i * (n_total - 1) / (k - 1)).collect()
}

/// Concatenates the three modality vectors in `text ‖ audio ‖ video` order.
pub fn fuse(
    text: &ModalityEmbedding,
    audio: &ModalityEmbedding,
    video: &ModalityEmbedding,
) -> Result<UtteranceFeatures> {
    let inputs = [text, audio, video];
    for (emb, expected) in inputs.iter().zip(FUSION_ORDER) {
        if emb.modality != expected {
            return Err(Error::Shape(format!(
                "fuse expected a {expected} embedding in that slot, got {}",
                emb.modality
            )));
        }
    }
    let mut out = Vec::with_capacity(text.vector.len() + audio.vector.len() + video.vector.len());
    for emb in inputs {
        out.extend_from_slice(&emb.vector);
    }
    Ok(UtteranceFeatures(out))
}

pub trait EmbeddingProvider {
    fn name(&self) -> &str;

    fn dims(&self) -> ModalityDims;

    fn lookup(&self, conversation_id: i64, utterance_id: usize, modality: Modality) -> Option<&[f64]>;

    fn features(&self, conversation_id: i64, utterance_id: usize) -> Result<UtteranceFeatures> {
        let get = |m| {
            self.lookup(conversation_id, utterance_id, m)
                .map(|v| ModalityEmbedding::new(m, v.to_vec()))
                .ok_or(Error::MissingEmbeddings(vec![(conversation_id, utterance_id)]))
        };
        fuse(&get(Modality::Text)?, &get(Modality::Audio)?, &get(Modality::Video)?)
    }

    /// Fused features of every utterance, one row per utterance.
    fn conversation_matrix(&self, conversation: &Conversation) -> Result<Array2<f64>> {
        let dim = self.dims().total();
        let mut m = Array2::zeros((conversation.len(), dim));
        for (row, u) in m.rows_mut().into_iter().zip(&conversation.utterances) {
            let f = self.features(conversation.conversation_id, u.utterance_id)?;
            if f.dim() != dim {
                return Err(Error::Shape(format!(
                    "provider `{}` produced width {}, declared {dim}",
                    self.name(),
                    f.dim()
                )));
            }
            row.into_iter().zip(f.0).for_each(|(r, x)| *r = x);
        }
        Ok(m)
    }

    /// Lists every utterance of `dataset` lacking any modality vector.
    fn check_coverage(&self, dataset: &Dataset) -> Result<()> {
        let missing: Vec<(i64, usize)> = dataset
            .conversations
            .iter()
            .flat_map(|c| c.utterances.iter().map(move |u| (c.conversation_id, u.utterance_id)))
            .filter(|&(c, u)| FUSION_ORDER.iter().any(|&m| self.lookup(c, u, m).is_none()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingEmbeddings(missing))
        }
    }
}

/// Vectors for one modality keyed by `(conversation_id, utterance_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub modality: Modality,
    pub dim: usize,
    vectors: HashMap<(i64, usize), Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(modality: Modality, dim: usize) -> Self {
        Self {
            modality,
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, conversation_id: i64, utterance_id: usize, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "{} table has dimension {}, vector has {}",
                self.modality,
                self.dim,
                vector.len()
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite {} embedding for {conversation_id}/{utterance_id}",
                self.modality
            )));
        }
        if self.vectors.insert((conversation_id, utterance_id), vector).is_some() {
            return Err(Error::Validation(format!(
                "duplicate {} embedding for {conversation_id}/{utterance_id}",
                self.modality
            )));
        }
        Ok(())
    }

    pub fn get(&self, conversation_id: i64, utterance_id: usize) -> Option<&[f64]> {
        self.vectors.get(&(conversation_id, utterance_id)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Writes the table in the line format read by [`load_precomputed`],
    /// rows sorted by key.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut keys: Vec<_> = self.vectors.keys().copied().collect();
        keys.sort_unstable();
        let io = |e| Error::io(path, e);
        writeln!(w, "dim={} modality={}", self.dim, self.modality).map_err(io)?;
        for (c, u) in keys {
            write!(w, "{c} {u}").map_err(io)?;
            for x in &self.vectors[&(c, u)] {
                // `{:?}` prints the shortest string that parses back to the same f64.
                write!(w, " {x:?}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Reads a precomputed embedding file.
///
/// Format: a header `dim=<d> modality=<m>`, then one line per utterance:
/// `<conversation_id> <utterance_id> <d reals>`.
pub fn load_precomputed(path: impl AsRef<Path>, modality: Modality) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let err = |line: usize, message: String| Error::EmbeddingFile {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header = lines
        .next()
        .ok_or_else(|| err(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let mut dim = None;
    let mut declared = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("dim", v)) => dim = Some(v.parse::<usize>().map_err(|_| err(1, format!("bad dim `{v}`")))?),
            Some(("modality", v)) => declared = Some(v.parse::<Modality>().map_err(|e| err(1, e.to_string()))?),
            _ => return Err(err(1, format!("unexpected header token `{tok}`"))),
        }
    }
    let dim = dim.ok_or_else(|| err(1, "header lacks dim=".into()))?;
    let declared = declared.ok_or_else(|| err(1, "header lacks modality=".into()))?;
    if declared != modality {
        return Err(err(
            1,
            format!("file holds {declared} embeddings, {modality} requested"),
        ));
    }

    let mut table = EmbeddingTable::new(modality, dim);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let cid = toks
            .next()
            .and_then(|t| t.parse::<i64>().ok())
            .ok_or_else(|| err(lineno, "bad conversation id".into()))?;
        let uid = toks
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| err(lineno, "bad utterance id".into()))?;
        let vector = toks
            .map(|t| t.parse::<f64>().map_err(|_| err(lineno, format!("bad real `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if vector.len() != dim {
            return Err(err(lineno, format!("expected {dim} values, found {}", vector.len())));
        }
        table.insert(cid, uid, vector).map_err(|e| err(lineno, e.to_string()))?;
    }
    Ok(table)
}

/// Three precomputed tables behind the provider interface.
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    name: String,
    text: EmbeddingTable,
    audio: EmbeddingTable,
    video: EmbeddingTable,
}

impl PrecomputedProvider {
    pub fn new(
        name: impl Into<String>,
        text: EmbeddingTable,
        audio: EmbeddingTable,
        video: EmbeddingTable,
    ) -> Result<Self> {
        for (t, m) in [
            (&text, Modality::Text),
            (&audio, Modality::Audio),
            (&video, Modality::Video),
        ] {
            if t.modality != m {
                return Err(Error::Shape(format!("expected a {m} table, got {}", t.modality)));
            }
        }
        Ok(Self {
            name: name.into(),
            text,
            audio,
            video,
        })
    }

    pub fn load(text: impl AsRef<Path>, audio: impl AsRef<Path>, video: impl AsRef<Path>) -> Result<Self> {
        Self::new(
            "precomputed",
            load_precomputed(text, Modality::Text)?,
            load_precomputed(audio, Modality::Audio)?,
            load_precomputed(video, Modality::Video)?,
        )
    }

    pub fn table(&self, modality: Modality) -> &EmbeddingTable {
        match modality {
            Modality::Text => &self.text,
            Modality::Audio => &self.audio,
            Modality::Video => &self.video,
        }
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> ModalityDims {
        ModalityDims::new(self.text.dim, self.audio.dim, self.video.dim)
    }

    fn lookup(&self, conversation_id: i64, utterance_id: usize, modality: Modality) -> Option<&[f64]> {
        self.table(modality).get(conversation_id, utterance_id)
    }
}

/// Plants recoverable labels into the text block of synthetic features.
///
/// Coordinates `0..7` carry a one-hot of the gold emotion; with
/// `cause_flag`, coordinate 7 is 1 for gold cause utterances. Each planted
/// coordinate gets `N(0, sigma^2)` noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_true")]
    pub cause_flag: bool,
}

fn default_sigma() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl Default for PlantedRule {
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            cause_flag: true,
        }
    }
}

impl PlantedRule {
    pub fn width(&self) -> usize {
        NUM_EMOTIONS + usize::from(self.cause_flag)
    }
}

/// Seeded standard-normal features for every utterance of a dataset.
///
/// Each vector depends only on `(seed, conversation_id, utterance_id,
/// modality)`, so the same utterance gets the same features whichever split
/// it ends up in.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    inner: PrecomputedProvider,
}

fn mix_seed(seed: u64, conversation_id: i64, utterance_id: usize, modality: Modality) -> u64 {
    // splitmix64 finalizer over the folded key
    let mut z = seed
        ^ (conversation_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (utterance_id as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ modality.ordinal().wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SyntheticProvider {
    pub fn new(seed: u64, dims: ModalityDims, dataset: &Dataset, planted: Option<PlantedRule>) -> Result<Self> {
        if dims.text == 0 || dims.audio == 0 || dims.video == 0 {
            return Err(Error::Config(format!("synthetic dims must be positive, got {dims:?}")));
        }
        if let Some(rule) = planted {
            if dims.text < rule.width() {
                return Err(Error::Config(format!(
                    "planted rule needs text dim >= {}, got {}",
                    rule.width(),
                    dims.text
                )));
            }
            if !(rule.sigma >= 0.0 && rule.sigma.is_finite()) {
                return Err(Error::Config(format!("planted sigma must be >= 0, got {}", rule.sigma)));
            }
        }

        let mut tables = FUSION_ORDER.map(|m| EmbeddingTable::new(m, dims.get(m)));
        for conv in &dataset.conversations {
            let planted_rows = match planted {
                Some(rule) => {
                    let emotions = conv.gold_emotions().ok_or_else(|| {
                        Error::Validation(format!(
                            "planted rule needs gold emotions; conversation {} is unlabeled",
                            conv.conversation_id
                        ))
                    })?;
                    if rule.cause_flag && conv.gold_pairs.is_none() {
                        return Err(Error::Validation(format!(
                            "planted cause flag needs gold pairs; conversation {} has none",
                            conv.conversation_id
                        )));
                    }
                    Some((rule, emotions, derive_cause_labels(conv)))
                }
                None => None,
            };
            for (i, u) in conv.utterances.iter().enumerate() {
                for table in tables.iter_mut() {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(seed, conv.conversation_id, u.utterance_id, table.modality));
                    let mut v: Vec<f64> = (0..table.dim).map(|_| rng.sample(StandardNormal)).collect();
                    if let (Modality::Text, Some((rule, emotions, causes))) = (table.modality, &planted_rows) {
                        let mut noise = || rule.sigma * rng.sample::<f64, _>(StandardNormal);
                        for (k, x) in v.iter_mut().take(NUM_EMOTIONS).enumerate() {
                            *x = f64::from(u8::from(k == emotions[i].index())) + noise();
                        }
                        if rule.cause_flag {
                            v[NUM_EMOTIONS] = f64::from(u8::from(causes[i])) + noise();
                        }
                    }
                    table.insert(conv.conversation_id, u.utterance_id, v)?;
                }
            }
        }
        let [text, audio, video] = tables;
        Ok(Self {
            inner: PrecomputedProvider::new("synthetic", text, audio, video)?,
        })
    }

    pub fn table(&self, modality: Modality) -> &EmbeddingTable {
        self.inner.table(modality)
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dims(&self) -> ModalityDims {
        self.inner.dims()
    }

    fn lookup(&self, conversation_id: i64, utterance_id: usize, modality: Modality) -> Option<&[f64]> {
        self.inner.lookup(conversation_id, utterance_id, modality)
    }
}
