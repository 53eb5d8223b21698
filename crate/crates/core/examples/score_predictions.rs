//! Scores emotion-cause pairs. With `--gold` and `--predictions` it scores two
//! corpus files; without them it scores a small built-in fixture.
//!
//!     cargo run --example score_predictions
//!     cargo run --example score_predictions -- --gold val.json --predictions predictions.json

use std::path::PathBuf;

use clap::Parser;
use ecpe::corpus::{Conversation, Dataset, Emotion, EmotionCausePair, SplitTag, Utterance};
use ecpe::evaluation::{evaluate_datasets, EvaluationReport};

#[derive(Parser)]
struct Args {
    #[arg(long, requires = "predictions")]
    gold: Option<PathBuf>,
    #[arg(long, requires = "gold")]
    predictions: Option<PathBuf>,
}

fn conversation(emotions: &[Emotion], pairs: Vec<EmotionCausePair>) -> Conversation {
    Conversation {
        conversation_id: 1,
        utterances: emotions
            .iter()
            .enumerate()
            .map(|(i, &e)| Utterance {
                utterance_id: i + 1,
                speaker: if i % 2 == 0 { "Ross" } else { "Rachel" }.into(),
                transcript: format!("line {}", i + 1),
                gold_emotion: Some(e),
            })
            .collect(),
        gold_pairs: Some(pairs),
    }
}

/// Joy at utterance 3 caused by 2 and by itself, anger at 5 caused by itself.
/// The prediction finds one joy cause and points anger at the wrong utterance.
fn fixture() -> anyhow::Result<(Dataset, Dataset)> {
    use Emotion::*;
    let emotions = [Neutral, Neutral, Joy, Neutral, Anger];
    let gold = conversation(
        &emotions,
        vec![
            EmotionCausePair::new(3, Joy, 2),
            EmotionCausePair::new(3, Joy, 3),
            EmotionCausePair::new(5, Anger, 5),
        ],
    );
    let pred = conversation(
        &emotions,
        vec![EmotionCausePair::new(3, Joy, 2), EmotionCausePair::new(5, Anger, 4)],
    );
    Ok((
        Dataset::new(vec![gold], SplitTag::Test)?,
        Dataset::new(vec![pred], SplitTag::Test)?,
    ))
}

fn print_report(r: &EvaluationReport) {
    println!("{} conversations, {} utterances", r.conversations, r.utterances);
    if let Some(e) = &r.emotion {
        println!("emotion   weighted F1 {:.4}  accuracy {:.4}", e.weighted_f1, e.accuracy);
    }
    println!("cause     weighted F1 {:.4}", r.cause.weighted_f1);
    println!(
        "{:<10} {:>6} {:>6} {:>4} {:>7} {:>7} {:>7}",
        "emotion", "gold", "pred", "tp", "P", "R", "F1"
    );
    for m in &r.pairs.per_emotion {
        println!(
            "{:<10} {:>6} {:>6} {:>4} {:>7.4} {:>7.4} {:>7.4}",
            m.emotion, m.gold_pairs, m.predicted_pairs, m.true_positives, m.precision, m.recall, m.f1
        );
    }
    println!(
        "pairs     weighted P {:.4}  R {:.4}  F1 {:.4}  macro F1 {:.4}",
        r.pairs.weighted_precision, r.pairs.weighted_recall, r.pairs.weighted_f1, r.pairs.macro_f1
    );
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let (gold, pred) = match (args.gold, args.predictions) {
        (Some(g), Some(p)) => (Dataset::load(g, SplitTag::Test)?, Dataset::load(p, SplitTag::Test)?),
        _ => fixture()?,
    };
    print_report(&evaluate_datasets(&gold, &pred)?);
    Ok(())
}
