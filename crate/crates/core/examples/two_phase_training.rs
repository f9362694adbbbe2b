//! Phase 1 over a grid of convection speeds, then a per-target phase 2 that
//! trains only the diagonal coefficients and the input/output layers.
//!
//! ```text
//! cargo run --release --example two_phase_training -- [phase1 epochs] [phase2 epochs]
//! ```

use hyper_lr_pinn::diffcore::Rng;
use hyper_lr_pinn::eval::evaluate;
use hyper_lr_pinn::models::{init_model, Arch, ModelKind};
use hyper_lr_pinn::pde::{Family, ProblemSpec};
use hyper_lr_pinn::sampling::{param_grid, sample_collocation, CollocationSet, GridRole};
use hyper_lr_pinn::train::{phase1_train_observed, phase2_train, Control, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let p1 = args.next().transpose()?.unwrap_or(400);
    let p2 = args.next().transpose()?.unwrap_or(200);
    let cfg = TrainConfig {
        phase1_epochs: p1,
        phase2_epochs: p2,
        ..TrainConfig::default()
    };

    let grid = param_grid(Family::Convection, 1.0, 5.0, 1.0, GridRole::Phase1Train)?;
    let tasks: Vec<CollocationSet> = grid
        .iter()
        .map(|mu| sample_collocation(&ProblemSpec::preset("convection", mu)?, cfg.seed))
        .collect::<Result<_, _>>()?;

    let mut model = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut Rng::new(cfg.seed))?;
    let mut log = |epoch: usize, m: &hyper_lr_pinn::models::Model| {
        if epoch.is_multiple_of(100) {
            let err = evaluate(m, &tasks[2])?;
            println!("phase 1 epoch {epoch:>5}: beta 3 rel err {:.4}, ranks {:?}", err.rel_err, m.active_ranks(&[3.0])?);
        }
        Ok(Control::Continue)
    };
    let history = phase1_train_observed(&mut model, &tasks, &cfg, &mut log)?;
    println!("phase 1 final mean loss {:.3e}", history.last_total().unwrap_or(f64::NAN));

    for beta in [1.5, 3.5, 5.0] {
        let target = sample_collocation(&ProblemSpec::preset("convection", &[beta])?, cfg.seed)?;
        let mut adapted = model.phase2_convert(&[beta])?;
        let before = evaluate(&adapted, &target)?;
        phase2_train(&mut adapted, &target, &cfg)?;
        let after = evaluate(&adapted, &target)?;
        println!(
            "beta {beta}: {} trainable scalars, rel err {:.4} -> {:.4}",
            adapted.count_params(),
            before.rel_err,
            after.rel_err
        );
    }
    Ok(())
}
