//! How many diagonal coefficients survive per layer across a sweep of
//! convection speeds, written as CSV tables.
//!
//! ```text
//! cargo run --release --example rank_report -- [phase1 epochs] > ranks.csv
//! ```

use hyper_lr_pinn::diffcore::Rng;
use hyper_lr_pinn::eval::{diag_heatmap, rank_report, write_heatmap_csv, write_rank_report_csv};
use hyper_lr_pinn::models::{init_model, Arch, ModelKind};
use hyper_lr_pinn::pde::{Family, ProblemSpec};
use hyper_lr_pinn::sampling::{param_grid, sample_collocation, GridRole};
use hyper_lr_pinn::train::{phase1_train, TrainConfig};
use std::io::stdout;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(200);
    let cfg = TrainConfig {
        phase1_epochs: epochs,
        ..TrainConfig::default()
    };
    let train = param_grid(Family::Convection, 1.0, 20.0, 1.0, GridRole::Phase1Train)?;
    let tasks = train
        .iter()
        .map(|mu| sample_collocation(&ProblemSpec::preset("convection", mu)?, 0))
        .collect::<Result<Vec<_>, _>>()?;
    let mut model = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut Rng::new(0))?;
    phase1_train(&mut model, &tasks, &cfg)?;

    let targets = param_grid(Family::Convection, 1.0, 20.0, 0.5, GridRole::Phase2Targets)?;
    write_rank_report_csv(stdout(), &rank_report(&model, &targets)?)?;
    println!();
    // Coefficients of the middle layer, sorted per row.
    write_heatmap_csv(stdout(), &targets, &diag_heatmap(&model, &targets, 1)?)?;
    Ok(())
}
