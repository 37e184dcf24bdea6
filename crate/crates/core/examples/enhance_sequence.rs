//! Shows the per-branch gates for one user's history and the shape of the
//! enhanced rows under each ablation.

use grasp::embedstore::{synth_corpus, SemanticStore, SynthConfig};
use grasp::hae::{enhance_item, enhance_sequence, Ablation, Enhancer, HaeParams};
use grasp::rng::stream;

fn main() -> grasp::Result<()> {
    let corpus = synth_corpus(&SynthConfig::default())?;
    let users = SemanticStore::build(corpus.users.clone(), 10)?;
    let items = SemanticStore::build(corpus.items.clone(), 10)?;
    let user = 0;
    let history: Vec<usize> = corpus.dataset.sequence(user).iter().copied().take(8).collect();
    println!("user {user}, home cluster {}", corpus.user_cluster[user]);
    println!("item  cluster  |self branch|  |similar|  |global|");
    let full = Enhancer::new(&users, &items, Ablation::default())?;
    for &item in &history {
        let b = enhance_item(&full.bundle(user, item))?;
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        println!(
            "{item:>4}  {:>7}  {:>13.4}  {:>9.4}  {:>8.4}",
            corpus.item_cluster[item],
            norm(&b.self_branch),
            norm(&b.similar_branch),
            norm(&b.global_branch)
        );
    }

    let mut rng = stream(1, &[]);
    let params = HaeParams::init(items.dim(), 128, 64, &mut rng);
    for (name, ablation) in [
        ("full", Ablation::default()),
        (
            "no_similar",
            Ablation {
                no_similar: true,
                ..Ablation::default()
            },
        ),
        (
            "softmax",
            Ablation {
                softmax: true,
                ..Ablation::default()
            },
        ),
    ] {
        let enhancer = Enhancer::new(&users, &items, ablation)?;
        let rows = enhance_sequence(&enhancer, user, &history, &params)?;
        println!(
            "{name:<10} enhanced rows {:?}, first row mean {:+.4}",
            rows.dim(),
            rows.row(0).mean().unwrap()
        );
    }
    Ok(())
}
