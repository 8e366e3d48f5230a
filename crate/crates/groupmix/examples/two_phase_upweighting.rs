//! The two-phase upweighting pipeline: identify the error set with an early
//! ERM run, inspect how well it recovers the true minority partition, then
//! retrain with the buffer upweighted.
//!
//! ```bash
//! cargo run --release --example two_phase_upweighting
//! ```

use groupmix::data::{
    gen_spurious_features, oracle_partition, AnnotationLevel, Split, SpuriousConfig,
};
use groupmix::eval::evaluate;
use groupmix::identify::identification_quality;
use groupmix::train::{obtain_buffer, train_erm, train_jtt_with_buffer, Method, TrainConfig};

fn main() -> groupmix::Result<()> {
    let ds_cfg = SpuriousConfig::new(2, 2, 0.95);
    let seed = 0;
    let annotation = AnnotationLevel::ValidationOnly;
    let train_ds = gen_spurious_features(&ds_cfg, 2000, Split::Train, annotation, seed)?;
    let val_ds = gen_spurious_features(&ds_cfg, 400, Split::Validation, annotation, seed)?;
    let test_ds =
        gen_spurious_features(&ds_cfg, 2000, Split::Test, AnnotationLevel::FineGrained, seed)?;

    let mut cfg = TrainConfig::new(Method::Jtt, annotation).with_seed(seed);
    cfg.epochs = 20;
    cfg.id_epochs = 20;
    cfg.probe_epochs = Some(10);
    cfg.batch_size = 64;
    cfg.weight_decay = 0.03;

    // Phase I: pick the identification epoch by probing phase II on each
    // candidate and keeping the best validation worst-group accuracy.
    let (buffer, _) = obtain_buffer(&cfg, &train_ds, &val_ds)?;
    let mask = oracle_partition(&train_ds)?;
    let quality = identification_quality(&buffer, &mask);
    println!(
        "identified buffer: epoch T = {:?}, {} samples, precision {:.3}, recall {:.3}",
        buffer.epoch_t,
        buffer.len(),
        quality.precision,
        quality.recall
    );

    // Phase II: fresh model with the buffer upweighted.
    let (model, _) = train_jtt_with_buffer(&cfg, &train_ds, &val_ds, &buffer)?;
    let report = evaluate(&model, &test_ds)?;

    // ERM reference under the same budget.
    let mut erm_cfg = cfg.clone();
    erm_cfg.method = Method::Erm;
    let (erm_model, _) = train_erm(&erm_cfg, &train_ds, &val_ds)?;
    let erm = evaluate(&erm_model, &test_ds)?;

    println!(
        "upweighted (lambda = {}): avg {:.3}, worst {:.3}",
        cfg.lambda_up, report.average_accuracy, report.worst_group_accuracy
    );
    println!(
        "erm reference:            avg {:.3}, worst {:.3}",
        erm.average_accuracy, erm.worst_group_accuracy
    );
    Ok(())
}
