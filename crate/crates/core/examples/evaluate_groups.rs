//! Runs the sampled ranking protocol on two hand-written scorers, a
//! popularity ranker and a cluster oracle, and prints head/tail tables.

use grasp::dataset::{partition_head_tail, split_leave_one_out, Phase};
use grasp::embedstore::{synth_corpus, SynthConfig};
use grasp::eval::{evaluate, group_report, report_table};

fn main() -> grasp::Result<()> {
    let corpus = synth_corpus(&SynthConfig::default())?;
    let ds = &corpus.dataset;
    let split = split_leave_one_out(ds);
    let labels = partition_head_tail(ds, 0.2)?;
    println!(
        "head thresholds: users >= {} interactions, items >= {}",
        labels.user_threshold, labels.item_threshold
    );

    let freq = ds.item_frequency();
    let popularity = |_u: usize, _inputs: &[usize], items: &[usize]| -> grasp::Result<Vec<f64>> {
        Ok(items.iter().map(|&i| freq[i] as f64).collect())
    };
    let home = &corpus.user_cluster;
    let clusters = &corpus.item_cluster;
    let oracle = |u: usize, _inputs: &[usize], items: &[usize]| -> grasp::Result<Vec<f64>> {
        Ok(items.iter().map(|&i| (clusters[i] == home[u]) as u8 as f64).collect())
    };

    let pop = evaluate(&popularity, ds, &split, Phase::Test, 100, 42)?;
    let orc = evaluate(&oracle, ds, &split, Phase::Test, 100, 42)?;
    for (name, e) in [("popularity", pop), ("cluster oracle", orc)] {
        let mut reports = vec![e.report.clone()];
        reports.extend(group_report(&e.records, &labels)?);
        println!("\n{name}\n{}", report_table(&reports));
    }
    Ok(())
}
