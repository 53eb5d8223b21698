//! Loads a corpus (or generates a synthetic one), splits it 90/10 by
//! conversation, and reports the emotion histogram and the inverse-frequency
//! class weights of the training side.
//!
//!     cargo run --example corpus_split
//!     cargo run --example corpus_split -- --corpus data/train.json --seed 7

use std::path::PathBuf;

use clap::Parser;
use ecpe::corpus::{emotion_class_weights_with_floor, split_train_val, Dataset, Emotion, SplitTag};
use ecpe::synthetic::{generate_corpus, SyntheticCorpusConfig};

#[derive(Parser)]
struct Args {
    /// Corpus JSON; a synthetic corpus is generated when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Minimum count used for emotions absent from the training side.
    #[arg(long, default_value_t = 1)]
    floor: usize,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let corpus = match &args.corpus {
        Some(path) => Dataset::load(path, SplitTag::Train)?,
        None => generate_corpus(&SyntheticCorpusConfig {
            seed: args.seed,
            ..Default::default()
        })?,
    };
    let (train, val) = split_train_val(&corpus, args.val_fraction, args.seed)?;
    println!(
        "{} conversations / {} utterances -> train {} / {}, val {} / {}",
        corpus.len(),
        corpus.num_utterances(),
        train.len(),
        train.num_utterances(),
        val.len(),
        val.num_utterances()
    );

    let hist = corpus.emotion_histogram();
    let weights = emotion_class_weights_with_floor(&train, args.floor)?;
    let widest = *hist.iter().max().unwrap_or(&1);
    println!("{:<9} {:>6} {:>8}", "emotion", "count", "weight");
    for e in Emotion::ALL {
        let n = hist[e.index()];
        let bar = "#".repeat(40 * n / widest.max(1));
        println!("{:<9} {n:>6} {:>8.4}  {bar}", e.as_str(), weights[e.index()]);
    }

    let pairs: usize = corpus.conversations.iter().map(|c| c.pairs().len()).sum();
    println!("{pairs} emotion-cause pairs");
    Ok(())
}
