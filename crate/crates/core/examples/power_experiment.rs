//! Detection rate of planted spheres by radius and by true cluster size.
//!
//! cargo run --release --example power_experiment [config.toml]

use pbj::sim::{power_experiment, PowerSimConfig};

fn main() -> pbj::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => PowerSimConfig::from_file(path)?,
        None => {
            let mut c = PowerSimConfig::desk_default(40, 3);
            c.base.dims = [16, 16, 16];
            c.base.n_sims = 20;
            c.base.n_boot = 100;
            c.base.cft = vec![0.01];
            c.base.arms.truncate(1);
            c.radii = vec![2, 3, 4];
            c
        }
    };
    let report = power_experiment(&cfg)?;
    print!("{}", report.to_table());
    Ok(())
}
