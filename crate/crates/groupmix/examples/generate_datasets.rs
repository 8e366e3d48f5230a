//! Generate the two dataset families, show their group structure, and
//! round-trip one split through the text format.
//!
//! ```bash
//! cargo run --release --example generate_datasets
//! ```

use groupmix::config::toy_specs;
use groupmix::data::{
    gen_gaussian_groups, gen_spurious_features, oracle_partition, AnnotationLevel, Dataset, Split,
    SpuriousConfig,
};

fn group_table(ds: &Dataset) {
    let view = ds.privileged();
    let groups = ds.groups();
    let mut counts = vec![0usize; groups.len()];
    for i in 0..ds.len() {
        counts[ds.group_index(view.group_of(i))] += 1;
    }
    for (g, n) in groups.iter().zip(&counts) {
        println!("    group {g}: {n} samples");
    }
}

fn main() -> groupmix::Result<()> {
    let specs = toy_specs(0.25, 0.05);
    for split in [Split::Train, Split::Validation, Split::Test] {
        let n = match split {
            Split::Train => 2000,
            Split::Validation => 200,
            Split::Test => 2000,
        };
        let ds = gen_gaussian_groups(&specs, n, split, AnnotationLevel::FineGrained, 0)?;
        println!("gaussian toy, {} split ({} samples):", split.as_str(), ds.len());
        group_table(&ds);
    }

    let cfg = SpuriousConfig::new(2, 2, 0.95);
    let train = gen_spurious_features(&cfg, 2000, Split::Train, AnnotationLevel::FineGrained, 0)?;
    let minority = oracle_partition(&train)?.iter().filter(|&&m| m).count();
    println!(
        "spurious features, train split: {} samples, {minority} minority ({}%)",
        train.len(),
        100 * minority / train.len()
    );

    // Round-trip through the text format.
    let dir = std::env::temp_dir().join("groupmix_datasets");
    std::fs::create_dir_all(&dir).map_err(|e| groupmix::Error::io(&dir, e))?;
    let path = dir.join("toy_train.txt");
    let ds = gen_gaussian_groups(&specs, 400, Split::Train, AnnotationLevel::Coarse, 1)?;
    ds.save(&path)?;
    let loaded = Dataset::load(&path)?;
    println!(
        "saved and reloaded {}: {} samples, annotation {}, split {}",
        path.display(),
        loaded.len(),
        loaded.annotation_level().as_str(),
        loaded.split().as_str()
    );
    Ok(())
}
