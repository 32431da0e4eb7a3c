//! Trains a small RCDNet for a few hundred steps and prints the loss curve.

use cdlab::channel::{build_dataset, DatasetCounts, ScenarioConfig};
use cdlab::nn::{ModelSpec, Variant};
use cdlab::train::{train, TrainConfig};

fn main() -> cdlab::Result<()> {
    let counts = DatasetCounts {
        train: 256,
        test_mobile: 8,
        test_quasi_static: 8,
        ..DatasetCounts::default()
    };
    let data = build_dataset(&ScenarioConfig::default(), &counts, 2)?;
    let spec = ModelSpec {
        width: 32,
        ff_width: 64,
        k1: 2,
        k2: 2,
        ..ModelSpec::new(Variant::RcdNet)
    };
    let cfg = TrainConfig {
        steps: 300,
        warmup: 50,
        schedule_width: spec.width,
        ..TrainConfig::default()
    };
    let state = train(spec, &data.train, &cfg)?;
    for row in state.trace.iter().step_by(50) {
        println!("step {:>4}  lr {:.2e}  loss {:.4}", row.step, row.lr, row.loss);
    }
    let path = std::env::temp_dir().join("cdlab-example-rcdnet.ckpt");
    state.network.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
