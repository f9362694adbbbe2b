//! Datasets and checkpoints in the binary container format, including the
//! phase-2 trainable flags and the stored generator state.
//!
//! ```text
//! cargo run --release --example checkpoint_io
//! ```

use hyper_lr_pinn::cli::{load_dataset, save_dataset, Checkpoint};
use hyper_lr_pinn::diffcore::Rng;
use hyper_lr_pinn::models::{init_model, Arch, ModelKind};
use hyper_lr_pinn::pde::ProblemSpec;
use hyper_lr_pinn::sampling::sample_collocation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("hlrp-checkpoint-example");
    std::fs::create_dir_all(&dir)?;

    let set = sample_collocation(&ProblemSpec::preset("helmholtz", &[2.5])?, 1)?;
    let data_path = dir.join("helmholtz_2.5.hlrp");
    save_dataset(&set, &data_path)?;
    let back = load_dataset(&data_path)?;
    println!(
        "dataset {}: {} bytes, identical after reload: {}",
        data_path.display(),
        std::fs::metadata(&data_path)?.len(),
        back == set
    );

    let mut rng = Rng::new(9);
    let model = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut rng)?;
    let ck = Checkpoint {
        preset: "helmholtz".into(),
        model: model.phase2_convert(&[2.5])?,
        epoch: 0,
        rng,
        mu_target: Some(vec![2.5]),
    };
    let ck_path = dir.join("checkpoint.hlrp");
    ck.save(&ck_path)?;
    let loaded = Checkpoint::load(&ck_path)?;
    println!(
        "checkpoint {}: {} tensors, {} trainable scalars, rng state {:?}",
        ck_path.display(),
        loaded.model.store.len(),
        loaded.model.count_params(),
        loaded.rng.state()
    );
    println!("model identical after reload: {}", loaded.model == ck.model);
    Ok(())
}
