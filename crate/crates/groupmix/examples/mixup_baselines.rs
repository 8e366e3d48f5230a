//! Compare the two MixUp baselines against cross-partition interpolation:
//! unconditional mixing (soft labels, any pair) fails on worst-group
//! accuracy, class-conditional random-group mixing recovers most of it, and
//! partition-targeted mixing completes the picture.
//!
//! ```bash
//! cargo run --release --example mixup_baselines
//! ```

use groupmix::config::toy_specs;
use groupmix::data::{gen_gaussian_groups, AnnotationLevel, Split};
use groupmix::eval::evaluate;
use groupmix::train::{train, Method, TrainConfig};

fn main() -> groupmix::Result<()> {
    let specs = toy_specs(0.25, 0.05);
    let seed = 0;
    let test_ds =
        gen_gaussian_groups(&specs, 2000, Split::Test, AnnotationLevel::FineGrained, seed)?;

    println!("{:<14} {:>8} {:>8}", "method", "avg", "worst");
    for (method, annotation) in [
        (Method::Mixup, AnnotationLevel::None),
        (Method::Cmixup, AnnotationLevel::FineGrained),
        (Method::Jm1, AnnotationLevel::Coarse),
    ] {
        let train_ds = gen_gaussian_groups(&specs, 2000, Split::Train, annotation, seed)?;
        let val_ds = gen_gaussian_groups(&specs, 200, Split::Validation, annotation, seed)?;
        let mut cfg = TrainConfig::new(method, annotation).with_seed(seed);
        cfg.batch_size = 64;
        cfg.weight_decay = 0.03;
        let (model, _) = train(&cfg, &train_ds, &val_ds)?;
        let report = evaluate(&model, &test_ds)?;
        println!(
            "{:<14} {:>8.3} {:>8.3}",
            method.as_str(),
            report.average_accuracy,
            report.worst_group_accuracy
        );
    }
    Ok(())
}
