//! Train the plain ERM baseline on the skewed toy and show how its average
//! accuracy hides a large worst-group failure once the test set balances
//! the groups.
//!
//! ```bash
//! cargo run --release --example train_erm_baseline
//! ```

use groupmix::config::toy_specs;
use groupmix::data::{gen_gaussian_groups, AnnotationLevel, Split};
use groupmix::eval::evaluate;
use groupmix::train::{train_erm, Method, TrainConfig};

fn main() -> groupmix::Result<()> {
    let specs = toy_specs(0.25, 0.05);
    let seed = 1;
    let train_ds = gen_gaussian_groups(&specs, 2000, Split::Train, AnnotationLevel::None, seed)?;
    let val_ds = gen_gaussian_groups(&specs, 200, Split::Validation, AnnotationLevel::None, seed)?;
    let test_ds = gen_gaussian_groups(&specs, 2000, Split::Test, AnnotationLevel::FineGrained, seed)?;

    let mut cfg = TrainConfig::new(Method::Erm, AnnotationLevel::None).with_seed(seed);
    cfg.batch_size = 64;
    cfg.weight_decay = 0.03;
    let (model, history) = train_erm(&cfg, &train_ds, &val_ds)?;
    println!(
        "trained {} epochs, selected epoch {} by validation average accuracy",
        history.epochs.len(),
        history.selected_epoch
    );

    let report = evaluate(&model, &test_ds)?;
    println!("balanced test:");
    for (g, a) in &report.per_group_accuracy {
        println!("  group {g}: {a:.3}");
    }
    println!(
        "  average {:.3}, worst-group {:.3} (gap {:.1} points)",
        report.average_accuracy,
        report.worst_group_accuracy,
        100.0 * (report.average_accuracy - report.worst_group_accuracy)
    );
    Ok(())
}
