//! The whole comparison in one program: every method on the four-group toy
//! across three seeds, reported per method with balanced-test worst-group
//! accuracy and averages under both evaluation distributions.
//!
//! Equivalent to `groupmix reproduce-toy --out DIR` minus the file outputs.
//!
//! ```bash
//! cargo run --release --example full_toy_comparison
//! ```

use groupmix::config::toy_experiment;
use groupmix::data::Split;
use groupmix::eval::evaluate;
use groupmix::train::train;

fn main() -> groupmix::Result<()> {
    let experiment = toy_experiment(vec![0, 1, 2]);
    println!(
        "{:<10} {:>14} {:>14} {:>14}",
        "method", "worst(balanced)", "avg(balanced)", "avg(source)"
    );
    for block in &experiment.methods {
        let mut worst = 0.0;
        let mut avg = 0.0;
        let mut source_avg = 0.0;
        for &seed in &experiment.seeds {
            let cfg = block.resolve(experiment.dataset.annotation(), seed);
            let dataset = experiment.dataset.with_annotation(cfg.annotation_level);
            let train_ds = dataset.generate(Split::Train, seed)?;
            let val_ds = dataset.generate(Split::Validation, seed)?;
            let test_ds = experiment.dataset.generate(Split::Test, seed)?;
            let source_ds = experiment.dataset.generate_source_dist_test(seed)?;
            let (model, _) = train(&cfg, &train_ds, &val_ds)?;
            let balanced = evaluate(&model, &test_ds)?;
            let source = evaluate(&model, &source_ds)?;
            worst += balanced.worst_group_accuracy;
            avg += balanced.average_accuracy;
            source_avg += source.average_accuracy;
        }
        let n = experiment.seeds.len() as f64;
        println!(
            "{:<10} {:>14.3} {:>14.3} {:>14.3}",
            block.method.as_str(),
            worst / n,
            avg / n,
            source_avg / n
        );
    }
    Ok(())
}
