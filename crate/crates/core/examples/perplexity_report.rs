//! Brain score against perplexity over the bundled model table.
//!
//! cargo run --example perplexity_report [table.csv]

use brainfit::reporting::{bundled_model_table, load_model_table, monotonicity_report, GroupKey};

fn main() -> brainfit::Result<()> {
    let records = match std::env::args().nth(1) {
        Some(path) => load_model_table(path)?,
        None => bundled_model_table(),
    };
    let report = monotonicity_report(&records, &[GroupKey::ModelClass, GroupKey::NLayers])?;
    println!("{} models", report.n_records);
    println!(
        "lowest perplexity:   {} ({}, score {})",
        report.best_perplexity.label, report.best_perplexity.perplexity, report.best_perplexity.brain_score
    );
    println!(
        "highest brain score: {} ({}, score {})",
        report.best_brain_score.label, report.best_brain_score.perplexity, report.best_brain_score.brain_score
    );
    match report.global_rho {
        Some(rho) => println!("Spearman rho, all models: {rho:.4}"),
        None => println!("Spearman rho undefined"),
    }
    for (key, groups) in &report.group_rho {
        for (group, rho) in groups {
            let shown = rho.map_or("-".to_string(), |r| format!("{r:+.4}"));
            println!("  {key:?} {group}: {shown}");
        }
    }
    println!("lower perplexity but lower score:");
    print!("{}", report.counterexamples_csv());
    Ok(())
}
