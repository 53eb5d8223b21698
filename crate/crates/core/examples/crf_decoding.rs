//! Linear-chain CRF inference on a small hand-built instance: Viterbi and
//! posterior-marginal decoding, the log-partition checked against brute-force
//! enumeration, and the NLL of a gold labeling.
//!
//!     cargo run --example crf_decoding

use ecpe::crf::{CrfDecoding, CrfParams};
use ecpe::selfcheck::{brute_force_log_partition, brute_force_viterbi};
use ndarray::array;

fn main() -> anyhow::Result<()> {
    // Three labels; repeating a label is heavily penalized.
    let mut crf = CrfParams::zeros(3);
    for k in 0..3 {
        crf.transitions[[k, k]] = -4.0;
    }
    crf.start_scores[0] = 0.5;

    // Per-step emissions favour label 1 twice in a row.
    let emissions = array![[0.2, 1.0, 0.1], [0.0, 2.0, 0.3], [0.4, 0.1, 1.5], [1.0, 0.9, 0.0]];

    let (path, score) = crf.viterbi(emissions.view())?;
    let marginal = crf.decode(emissions.view(), CrfDecoding::MarginalArgmax)?;
    println!("viterbi path     {path:?}  score {score:.4}");
    println!("marginal argmax  {marginal:?}");
    println!("per-step argmax  {:?}", [1, 1, 2, 0]);

    let (bf_path, bf_score) = brute_force_viterbi(&crf, &emissions)?;
    println!("enumerated best  {bf_path:?}  score {bf_score:.4}");

    let z = crf.log_partition(emissions.view())?;
    let bf_z = brute_force_log_partition(&crf, &emissions)?;
    println!(
        "log Z forward {z:.10}  enumerated {bf_z:.10}  |diff| {:.1e}",
        (z - bf_z).abs()
    );

    let marginals = crf.marginals(emissions.view())?;
    println!("posterior marginals:");
    for (t, row) in marginals.rows().into_iter().enumerate() {
        println!("  t={t}  {:.3?}", row.to_vec());
    }

    let gold = [1, 0, 2, 0];
    println!("nll of {gold:?}: {:.4}", crf.nll(emissions.view(), &gold)?);
    Ok(())
}
