//! Fine-grained group methods: exponentiated-gradient reweighting alone
//! versus the worst-group interpolation variant, with their group-weight
//! trajectories.
//!
//! ```bash
//! cargo run --release --example group_reweighting
//! ```

use groupmix::config::toy_specs;
use groupmix::data::{gen_gaussian_groups, AnnotationLevel, Split};
use groupmix::eval::evaluate;
use groupmix::train::{train_groupdro, train_groupjm1, Method, TrainConfig};

fn main() -> groupmix::Result<()> {
    let specs = toy_specs(0.25, 0.05);
    let seed = 0;
    let annotation = AnnotationLevel::FineGrained;
    let train_ds = gen_gaussian_groups(&specs, 2000, Split::Train, annotation, seed)?;
    let val_ds = gen_gaussian_groups(&specs, 200, Split::Validation, annotation, seed)?;
    let test_ds = gen_gaussian_groups(&specs, 2000, Split::Test, annotation, seed)?;

    let mut cfg = TrainConfig::new(Method::Groupdro, annotation).with_seed(seed);
    cfg.batch_size = 64;
    cfg.weight_decay = 0.03;
    cfg.eta_q = 0.1;
    let (dro_model, dro_hist) = train_groupdro(&cfg, &train_ds, &val_ds)?;

    let mut cfg2 = cfg.clone();
    cfg2.method = Method::Groupjm1;
    let (gjm1_model, gjm1_hist) = train_groupjm1(&cfg2, &train_ds, &val_ds)?;

    let groups = train_ds.groups();
    println!("group-weight trajectory (every 10th epoch):");
    println!("  epoch   reweighting-only                interpolation-variant");
    for e in (0..dro_hist.epochs.len()).step_by(10) {
        let qa = dro_hist.epochs[e].q.as_ref().unwrap();
        let qb = gjm1_hist.epochs[e].q.as_ref().unwrap();
        let fmt = |q: &[f64]| {
            groups
                .iter()
                .zip(q)
                .map(|(g, v)| format!("{g}={v:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("  {:>5}   {:<30}  {}", e + 1, fmt(qa), fmt(qb));
    }

    let dro = evaluate(&dro_model, &test_ds)?;
    let gjm1 = evaluate(&gjm1_model, &test_ds)?;
    println!(
        "reweighting-only:     avg {:.3}, worst {:.3}",
        dro.average_accuracy, dro.worst_group_accuracy
    );
    println!(
        "interpolation variant: avg {:.3}, worst {:.3}",
        gjm1.average_accuracy, gjm1.worst_group_accuracy
    );
    Ok(())
}
