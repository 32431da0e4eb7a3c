//! Scalar-op counts of one forward pass per variant and past length.

use cdlab::nn::{ModelSpec, Network, Variant};

fn main() -> cdlab::Result<()> {
    println!("{:>4} {:>12} {:>12} {:>12} {:>12}", "n", "rcdnet", "acdnet", "estimation", "prediction");
    for past in [1, 2, 4, 8, 16] {
        let mut row = format!("{past:>4}");
        for v in Variant::ALL {
            let net = Network::init(ModelSpec { past, ..ModelSpec::new(v) }, 0)?;
            row.push_str(&format!(" {:>12}", net.cost()?));
        }
        println!("{row}");
    }
    Ok(())
}
