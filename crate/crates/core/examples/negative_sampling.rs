//! Training pairs for the pairing stage: gold pairs as positives and up to
//! five fresh negatives per positive, drawn from the teacher-forced candidate
//! space of one synthetic conversation.
//!
//!     cargo run --example negative_sampling -- --seed 3

use clap::Parser;
use ecpe::nn::TrainRng;
use ecpe::pipeline::{candidate_space, conversation_pair_examples, positive_pairs};
use ecpe::synthetic::{generate_corpus, SyntheticCorpusConfig};
use rand::SeedableRng;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    ratio: usize,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let corpus = generate_corpus(&SyntheticCorpusConfig {
        conversations: 1,
        seed: args.seed,
        ..Default::default()
    })?;
    let conv = &corpus.conversations[0];

    println!("conversation {} with {} utterances", conv.conversation_id, conv.len());
    for u in &conv.utterances {
        println!(
            "  {:>2} {:<8} {}",
            u.utterance_id,
            u.gold_emotion.unwrap().as_str(),
            u.transcript
        );
    }
    let positives = positive_pairs(conv);
    let space = candidate_space(conv);
    println!("{} gold pairs, {} negative candidates", positives.len(), space.len());

    let mut rng = TrainRng::seed_from_u64(args.seed);
    let examples = conversation_pair_examples(conv, args.ratio, &mut rng);
    let negatives = examples.iter().filter(|e| !e.label).count();
    println!(
        "sampled {} examples: {} positive, {negatives} negative (target {})",
        examples.len(),
        examples.len() - negatives,
        args.ratio * positives.len()
    );
    for e in &examples {
        println!(
            "  ({:>2}, {:>2})  distance {:>3}  {}",
            e.emotion_utterance_id,
            e.cause_utterance_id,
            e.cause_utterance_id as i64 - e.emotion_utterance_id as i64,
            if e.label { "positive" } else { "negative" }
        );
    }
    Ok(())
}
