//! Input derivatives through forward jets and parameter gradients through
//! the reverse tape, each compared against finite differences.
//!
//! ```text
//! cargo run --release --example jets_and_gradients
//! ```

use hyper_lr_pinn::diffcore::{Channel, ChannelSet, Matrix, Rng};
use hyper_lr_pinn::models::{init_model, Arch, ModelKind};
use hyper_lr_pinn::pde::ProblemSpec;
use hyper_lr_pinn::sampling::sample_collocation;
use hyper_lr_pinn::train::{pinn_loss, pinn_loss_grad, TaskBatch, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ProblemSpec::preset("conv-diff", &[3.0, 0.5, 0.0])?;
    let mu = spec.mu();
    let mut rng = Rng::new(5);
    let model = init_model(ModelKind::HyperLrPinn, Arch::hyper(mu.len()), &mut rng)?;

    let coords = Matrix::from_vec(2, 3, vec![0.5, 2.0, 4.0, 0.1, 0.5, 0.9])?;
    let chans = ChannelSet::new(&[Channel::Dx, Channel::Dt, Channel::Dxx])?;
    let jet = model.predict_jet(&mu, &coords, &spec.coordinate_seeds(), chans)?;

    let h = 1e-4;
    let shifted = |axis: usize, d: f64| -> Vec<f64> {
        let mut c = coords.clone();
        for j in 0..c.cols() {
            c.set(axis, j, c.get(axis, j) + d);
        }
        model.predict(&mu, &c).unwrap()
    };
    let (xp, xm, tp, tm) = (shifted(0, h), shifted(0, -h), shifted(1, h), shifted(1, -h));
    let u = jet.value();
    println!("{:>5} {:>5} {:>12} {:>12} {:>12} {:>12} {:>12}", "x", "t", "u", "u_x", "fd", "u_xx", "fd");
    for j in 0..coords.cols() {
        let fd_x = (xp[j] - xm[j]) / (2.0 * h);
        let fd_xx = (xp[j] - 2.0 * u[j] + xm[j]) / (h * h);
        println!(
            "{:>5} {:>5} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            coords.get(0, j),
            coords.get(1, j),
            u[j],
            jet.channel(Channel::Dx).unwrap()[j],
            fd_x,
            jet.channel(Channel::Dxx).unwrap()[j],
            fd_xx
        );
        let fd_t = (tp[j] - tm[j]) / (2.0 * h);
        println!("{:>31} u_t {:>12.4e} fd {:>12.4e}", "", jet.channel(Channel::Dt).unwrap()[j], fd_t);
    }

    let set = sample_collocation(&spec, 5)?;
    let batch = TaskBatch::new(&set)?;
    let cfg = TrainConfig::default();
    let (loss, grads) = pinn_loss_grad(&model, &batch, &cfg)?;
    println!("\nloss {loss:?}");
    for name in ["hidden.0.u", "hyper.head.1.b", "output.w"] {
        let g = grads[name].as_slice()[0];
        let mut m = model.clone();
        let p0 = m.store.get(name)?.as_slice()[0];
        let mut at = |v: f64| {
            m.store.get_mut(name).unwrap().as_mut_slice()[0] = v;
            pinn_loss(&m, &batch, &cfg).unwrap().total
        };
        let fd = (at(p0 + h) - at(p0 - h)) / (2.0 * h);
        println!("d loss / d {name}[0]: tape {g:.8e}, finite difference {fd:.8e}");
    }
    Ok(())
}
