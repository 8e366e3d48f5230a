//! Export decision-boundary grids for the baseline and the interpolation
//! method on the 2D toy, plus the dataset itself, for plotting.
//!
//! ```bash
//! cargo run --release --example decision_boundaries
//! ```

use groupmix::config::toy_specs;
use groupmix::data::{gen_gaussian_groups, AnnotationLevel, Split};
use groupmix::eval::{export_boundary, Bounds};
use groupmix::train::{train, Method, TrainConfig};

fn main() -> groupmix::Result<()> {
    let specs = toy_specs(0.25, 0.05);
    let seed = 0;
    let out = std::env::temp_dir().join("groupmix_boundaries");
    std::fs::create_dir_all(&out).map_err(|e| groupmix::Error::io(&out, e))?;

    let bounds = Bounds {
        x_min: -0.75,
        x_max: 1.75,
        y_min: -0.75,
        y_max: 1.75,
    };
    for (method, annotation) in [
        (Method::Erm, AnnotationLevel::None),
        (Method::Jm1, AnnotationLevel::Coarse),
    ] {
        let train_ds = gen_gaussian_groups(&specs, 2000, Split::Train, annotation, seed)?;
        let val_ds = gen_gaussian_groups(&specs, 200, Split::Validation, annotation, seed)?;
        let mut cfg = TrainConfig::new(method, annotation).with_seed(seed);
        cfg.batch_size = 64;
        cfg.weight_decay = 0.03;
        let (model, _) = train(&cfg, &train_ds, &val_ds)?;
        let grid = export_boundary(&model, bounds, 120, 120)?;
        let path = out.join(format!("boundary_{}.csv", method.as_str()));
        grid.save(&path)?;

        // A quick text rendering of the boundary (rows top to bottom).
        println!("{} boundary over [{}, {}]^2:", method.as_str(), bounds.x_min, bounds.x_max);
        let coarse = export_boundary(&model, bounds, 40, 16)?;
        for row in (0..16).rev() {
            let line: String = (0..40)
                .map(|col| {
                    let (_, _, class) = coarse.points[row * 40 + col];
                    if class == 0 {
                        '.'
                    } else {
                        '#'
                    }
                })
                .collect();
            println!("  {line}");
        }
        println!("  wrote {}", path.display());
    }

    let test_ds = gen_gaussian_groups(&specs, 2000, Split::Test, AnnotationLevel::FineGrained, seed)?;
    let data_path = out.join("toy_test.txt");
    test_ds.save(&data_path)?;
    println!("wrote {}", data_path.display());
    Ok(())
}
