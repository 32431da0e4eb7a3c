//! Simulates a small train/test bundle and writes it to a temp directory.

use cdlab::channel::{build_dataset, DatasetBundle, DatasetCounts, ScenarioConfig};

fn main() -> cdlab::Result<()> {
    let scenario = ScenarioConfig::default();
    let counts = DatasetCounts {
        train: 64,
        test_mobile: 16,
        test_quasi_static: 16,
        ..DatasetCounts::default()
    };
    let bundle = build_dataset(&scenario, &counts, 1)?;
    let dir = std::env::temp_dir().join("cdlab-example-data");
    bundle.save(&dir)?;

    let back = DatasetBundle::load(&dir)?;
    assert_eq!(back.train.to_bytes(), bundle.train.to_bytes());
    let h = &back.test_mobile.sequences[0].slots()[0];
    println!(
        "{} train / {} mobile / {} quasi-static sequences of {}x{} channels in {}",
        back.train.len(),
        back.test_mobile.len(),
        back.test_quasi_static.len(),
        h.n_t(),
        h.n_c(),
        dir.display()
    );
    println!("first test channel power {:.3}", h.norm_sqr());
    Ok(())
}
