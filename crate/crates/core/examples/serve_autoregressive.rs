//! Serves a trajectory slot by slot, feeding the model's own outputs back
//! as its past window.

use cdlab::channel::{Mobility, ScenarioConfig};
use cdlab::eval::{median, serve_trajectory, serving_truth, InputNoise, ServeMode};
use cdlab::nn::{Model, ModelSpec, Network, Variant};

fn main() -> cdlab::Result<()> {
    let truth = serving_truth(&ScenarioConfig::default(), Mobility::Mobile, 120, 5)?;
    let spec = ModelSpec::new(Variant::RcdNet);
    let models = [
        Model::TrueChannel {
            past: spec.past,
            pattern: spec.pattern()?,
        },
        Model::Net(Network::init(spec.clone(), 0)?),
    ];
    for model in &models {
        for mode in [ServeMode::IdealPast, ServeMode::Autoregressive] {
            let log = serve_trajectory(model, &truth, spec.past, mode, &InputNoise::none())?;
            let v = log.nmse();
            println!(
                "{:<13} {:<15} {} slots, median NMSE first 20 {:.3e}, last 20 {:.3e}",
                log.model,
                mode.name(),
                v.len(),
                median(&v[..20]).unwrap_or(0.0),
                median(&v[v.len() - 20..]).unwrap_or(0.0)
            );
        }
    }
    Ok(())
}
