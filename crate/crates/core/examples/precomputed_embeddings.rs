//! Builds per-modality embedding files the way an external encoder would
//! (mean-pooled token vectors, 16 evenly spaced video frames), reads them
//! back through the provider interface and fuses them per utterance.
//!
//!     cargo run --example precomputed_embeddings

use ecpe::corpus::{Conversation, Dataset, Emotion, SplitTag, Utterance};
use ecpe::embeddings::{
    equally_spaced_indices, mean_pool, EmbeddingProvider, EmbeddingTable, Modality, PrecomputedProvider, VIDEO_FRAMES,
};
use ecpe::nn::TrainRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn toy_dataset() -> anyhow::Result<Dataset> {
    let lines = ["Hi.", "You ate my sandwich?", "It was labeled mine!"];
    let emotions = [Emotion::Neutral, Emotion::Surprise, Emotion::Anger];
    let conv = Conversation {
        conversation_id: 7,
        utterances: lines
            .iter()
            .zip(emotions)
            .enumerate()
            .map(|(i, (text, e))| Utterance {
                utterance_id: i + 1,
                speaker: ["Ross", "Joey"][i % 2].into(),
                transcript: text.to_string(),
                gold_emotion: Some(e),
            })
            .collect(),
        gold_pairs: Some(vec![]),
    };
    Ok(Dataset::new(vec![conv], SplitTag::Train)?)
}

fn random_vec(rng: &mut TrainRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn main() -> anyhow::Result<()> {
    let dataset = toy_dataset()?;
    let dir = tempfile::tempdir()?;
    let mut rng = TrainRng::seed_from_u64(1);
    let (d_text, d_audio, d_video) = (6, 3, 4);

    let mut text = EmbeddingTable::new(Modality::Text, d_text);
    let mut audio = EmbeddingTable::new(Modality::Audio, d_audio);
    let mut video = EmbeddingTable::new(Modality::Video, d_video);
    for conv in &dataset.conversations {
        for u in &conv.utterances {
            // One vector per token, averaged.
            let tokens: Vec<Vec<f64>> = u
                .transcript
                .split_whitespace()
                .map(|_| random_vec(&mut rng, d_text))
                .collect();
            text.insert(conv.conversation_id, u.utterance_id, mean_pool(&tokens)?)?;
            audio.insert(conv.conversation_id, u.utterance_id, random_vec(&mut rng, d_audio))?;

            // A clip of arbitrary length reduced to 16 frames, then averaged.
            let n_frames = rng.random_range(5..60);
            let frames: Vec<Vec<f64>> = (0..n_frames).map(|_| random_vec(&mut rng, d_video)).collect();
            let picked: Vec<Vec<f64>> = equally_spaced_indices(n_frames, VIDEO_FRAMES)
                .into_iter()
                .map(|i| frames[i].clone())
                .collect();
            video.insert(conv.conversation_id, u.utterance_id, mean_pool(&picked)?)?;
        }
    }
    let paths = ["text.emb", "audio.emb", "video.emb"].map(|f| dir.path().join(f));
    text.save(&paths[0])?;
    audio.save(&paths[1])?;
    video.save(&paths[2])?;
    println!("{}:", paths[0].display());
    for line in std::fs::read_to_string(&paths[0])?.lines() {
        println!("  {line}");
    }

    let provider = PrecomputedProvider::load(&paths[0], &paths[1], &paths[2])?;
    provider.check_coverage(&dataset)?;
    let conv = &dataset.conversations[0];
    let fused = provider.conversation_matrix(conv)?;
    println!(
        "fused features {:?} (text {d_text} | audio {d_audio} | video {d_video})",
        fused.dim()
    );
    for (u, row) in conv.utterances.iter().zip(fused.rows()) {
        println!("  {:>2} {:.2?}", u.utterance_id, row.to_vec());
    }

    // Coverage failures name every missing utterance.
    let mut longer = dataset.clone();
    let mut extra = longer.conversations[0].utterances[0].clone();
    extra.utterance_id = 4;
    longer.conversations[0].utterances.push(extra);
    println!(
        "with an unembedded utterance: {}",
        provider.check_coverage(&longer).unwrap_err()
    );
    Ok(())
}
