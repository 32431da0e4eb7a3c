//! Pilot-size sweep with briefly trained models, printed as plot data.

use cdlab::channel::{build_dataset, DatasetCounts, ScenarioConfig};
use cdlab::eval::{sweep_pilot_size, sweep_plot_data};
use cdlab::nn::{Model, ModelSpec, Variant};
use cdlab::train::{train, TrainConfig};

fn main() -> cdlab::Result<()> {
    let counts = DatasetCounts {
        train: 128,
        test_mobile: 16,
        test_quasi_static: 16,
        ..DatasetCounts::default()
    };
    let data = build_dataset(&ScenarioConfig::default(), &counts, 4)?;
    let base = ModelSpec {
        width: 32,
        ff_width: 64,
        k1: 1,
        k2: 1,
        k3: 1,
        ..ModelSpec::new(Variant::RcdNet)
    };
    let cfg = TrainConfig {
        steps: 60,
        warmup: 20,
        schedule_width: base.width,
        ..TrainConfig::default()
    };
    let provider = |spec: &ModelSpec| train(spec.clone(), &data.train, &cfg).map(|s| Model::Net(s.network));
    let specs = [base.clone(), base.with_variant(Variant::Estimation)];
    let reports = sweep_pilot_size(&provider, &specs, &data, &[(1, 1), (2, 2), (4, 4)], 4)?;
    print!("{}", sweep_plot_data(&reports));
    Ok(())
}
