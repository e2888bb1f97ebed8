//! Selector arithmetic on a hand-made example: Monte-Carlo likelihoods,
//! posterior, threshold activation and the selector loss.
//!
//! `cargo run --example selector_posterior`

use mgtraj::selector::{mc_log_likelihood, posterior, sample_generator_indices, selector_loss, SelectorPriors};

fn main() -> mgtraj::Result<()> {
    // Observed future (two steps, flattened) and three samples per generator.
    let y = [1.0, 0.0, 2.0, 0.1];
    let samples = [
        vec![vec![1.1, 0.0, 2.1, 0.0], vec![0.9, 0.1, 1.9, 0.2], vec![1.0, -0.1, 2.0, 0.0]],
        vec![vec![0.0, 1.0, 0.0, 2.0], vec![0.1, 1.0, 0.0, 2.1], vec![-0.1, 0.9, 0.1, 1.9]],
        vec![vec![0.7, 0.7, 1.4, 1.4], vec![0.6, 0.8, 1.3, 1.5], vec![0.8, 0.6, 1.5, 1.3]],
    ];
    let sigma = 0.5;
    let ll: Vec<f64> = samples.iter().map(|s| mc_log_likelihood(&y, s, sigma)).collect();
    let post = posterior(&ll)?;
    println!("log-likelihoods {:.3?}", ll);
    println!("posterior       {:.4?}", post.posterior);

    let logits = [2.0, 1.5, -3.0];
    let priors = SelectorPriors::from_logits(&logits, 0.03);
    println!("priors          {:.4?}", priors.priors);
    println!("active          {:?}", priors.active());
    println!("renormalized    {:.4?}", priors.renormalized);
    println!("selector loss   {:.4}", selector_loss(&post, &logits));

    let draws = sample_generator_indices(&priors, 1000, 7);
    let counts: Vec<usize> = (0..logits.len()).map(|g| draws.iter().filter(|&&d| d == g).count()).collect();
    println!("1000 draws      {counts:?}");

    let dead = posterior(&[f64::NEG_INFINITY; 3]);
    println!("all-zero likelihoods: {}", dead.unwrap_err());
    Ok(())
}
