//! Parameter ledgers of every model kind, and a short head-to-head of the
//! baselines on a single convection problem.
//!
//! ```text
//! cargo run --release --example baselines -- [epochs]
//! ```

use hyper_lr_pinn::diffcore::Rng;
use hyper_lr_pinn::eval::evaluate;
use hyper_lr_pinn::models::{init_model, Arch, ModelKind};
use hyper_lr_pinn::pde::ProblemSpec;
use hyper_lr_pinn::sampling::sample_collocation;
use hyper_lr_pinn::train::{train_baseline, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(300);
    let mut rng = Rng::new(0);

    let ledger = [
        ("vanilla PINN", ModelKind::VanillaPinn, Arch::vanilla()),
        ("PINN-P", ModelKind::PinnP, Arch::pinn_p(1)),
        ("naive LR-PINN r=50", ModelKind::NaiveLrPinn, Arch::naive(50)),
        ("naive LR-PINN r=10", ModelKind::NaiveLrPinn, Arch::naive(10)),
        ("Hyper-LR-PINN phase 1", ModelKind::HyperLrPinn, Arch::hyper(1)),
    ];
    for (label, kind, arch) in ledger {
        let m = init_model(kind, arch, &mut rng)?;
        println!("{label:<22} {:>7} trainable of {:>7}", m.count_params(), m.store.total_count());
    }
    let hyper = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut rng)?;
    println!("{:<22} {:>7} trainable", "Hyper-LR-PINN phase 2", hyper.phase2_convert(&[1.0])?.count_params());

    let set = sample_collocation(&ProblemSpec::preset("convection", &[5.0])?, 0)?;
    let cfg = TrainConfig {
        baseline_epochs: epochs,
        ..TrainConfig::default()
    };
    println!("\nconvection beta 5, {epochs} epochs:");
    for (label, kind, arch) in [
        ("vanilla PINN", ModelKind::VanillaPinn, Arch::vanilla()),
        ("naive LR-PINN r=10", ModelKind::NaiveLrPinn, Arch::naive(10)),
    ] {
        let mut m = init_model(kind, arch, &mut Rng::new(0))?;
        train_baseline(&mut m, std::slice::from_ref(&set), &cfg)?;
        let e = evaluate(&m, &set)?;
        println!("{label:<22} abs {:.4} rel {:.4} max {:.4}", e.abs_err, e.rel_err, e.max_err);
    }
    Ok(())
}
