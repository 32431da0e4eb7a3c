//! Scores the true-channel stub and an untrained network on both test sets.

use cdlab::channel::{build_dataset, DatasetCounts, Mobility, ScenarioConfig};
use cdlab::eval::{error_cdf, evaluate, InputNoise, Labels};
use cdlab::nn::{Model, ModelSpec, Network, Variant};

fn main() -> cdlab::Result<()> {
    let counts = DatasetCounts {
        train: 8,
        test_mobile: 32,
        test_quasi_static: 32,
        ..DatasetCounts::default()
    };
    let data = build_dataset(&ScenarioConfig::default(), &counts, 3)?;
    let spec = ModelSpec::new(Variant::AcdNet);
    let models = [
        Model::TrueChannel {
            past: spec.past,
            pattern: spec.pattern()?,
        },
        Model::Net(Network::init(spec, 0)?),
    ];
    for model in &models {
        for set in [Mobility::Mobile, Mobility::QuasiStatic] {
            let r = evaluate(model, data.test_set(set), &InputNoise::none(), &Labels::new("example", "clean", 3))?;
            let cdf = error_cdf(&r.per_sample);
            let worst = cdf.last().map(|p| p.0).unwrap_or(0.0);
            println!(
                "{:<13} {:<13} NMSE {:>8.2} dB  rho {:.3}  worst sample {worst:.3e}",
                r.model, r.test_set, r.nmse_db, r.rho
            );
        }
    }
    Ok(())
}
