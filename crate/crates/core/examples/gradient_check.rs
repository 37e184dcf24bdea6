//! Compares analytic and finite-difference gradients for both backbones and
//! the fusion MLP at a few sizes.

use grasp::backbone::{Backbone, BackboneConfig};
use grasp::gradcheck::check;
use grasp::hae::HaeParams;
use grasp::nn::uniform_mat;
use grasp::rng::stream;

fn main() -> grasp::Result<()> {
    let mut rng = stream(3, &[]);
    println!("{:<28} {:>8} {:>14} {:>14}", "module", "entries", "relative", "max abs");
    for cfg in [
        BackboneConfig::gru4rec(4),
        BackboneConfig {
            n_layers: 2,
            ..BackboneConfig::gru4rec(6)
        },
        BackboneConfig::sasrec(4),
        BackboneConfig {
            n_heads: 2,
            ..BackboneConfig::sasrec(8)
        },
    ] {
        let mut bb = Backbone::init(cfg, &mut rng)?;
        let x = uniform_mat(&mut rng, 3, cfg.h, 1);
        let w = uniform_mat(&mut rng, 3, cfg.h, 1);
        let (_, cache) = bb.forward(&x, None)?;
        let (analytic, _) = bb.backward(&cache, &w);
        let r = check(&mut bb, &analytic, 1e-5, |m| {
            (&m.encode(&x).unwrap().per_position * &w).sum()
        });
        let name = format!(
            "{} h={} layers={} heads={}",
            cfg.kind.as_str(),
            cfg.h,
            cfg.n_layers,
            cfg.n_heads
        );
        println!(
            "{name:<28} {:>8} {:>14.3e} {:>14.3e}",
            r.entries, r.relative_error, r.max_abs_error
        );
    }
    let mut p = HaeParams::init(4, 8, 4, &mut rng);
    let x = uniform_mat(&mut rng, 5, 16, 1);
    let w = uniform_mat(&mut rng, 5, 4, 1);
    let (_, cache) = p.forward(&x);
    let analytic = p.backward(&cache, &w);
    let r = check(&mut p, &analytic, 1e-5, |q| (&q.forward(&x).0 * &w).sum());
    println!(
        "{:<28} {:>8} {:>14.3e} {:>14.3e}",
        "fusion mlp d=4 hidden=8", r.entries, r.relative_error, r.max_abs_error
    );
    Ok(())
}
