//! Family-wise error rate of each method on smooth null data.
//!
//! cargo run --release --example null_fwer_experiment [config.toml]
//!
//! Without an argument a quick 40-simulation run on a 16³ grid is used; pass
//! `configs/null_exchangeable.toml` for the full experiment.

use pbj::sim::{fwer_experiment_with_progress, NullSimConfig};

fn main() -> pbj::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => NullSimConfig::from_file(path)?,
        None => {
            let mut c = NullSimConfig::desk_default(30, 7);
            c.dims = [16, 16, 16];
            c.n_sims = 40;
            c.n_boot = 100;
            c.cft = vec![0.01];
            c
        }
    };
    let step = (cfg.n_sims / 4).max(1);
    let report = fwer_experiment_with_progress(&cfg, &|done| {
        if done % step == 0 {
            eprintln!("{done}/{} simulations", cfg.n_sims);
        }
    })?;
    print!("{}", report.to_table());
    Ok(())
}
