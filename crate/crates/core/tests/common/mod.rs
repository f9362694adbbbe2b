#![allow(dead_code)]

use hyper_lr_pinn::diffcore::{Channel, ChannelSet, Matrix, Rng};
use hyper_lr_pinn::models::{init_model, Activation, Arch, Model, ModelKind};
use hyper_lr_pinn::pde::ProblemSpec;
use hyper_lr_pinn::reference::{reference_field, Grid};
use hyper_lr_pinn::sampling::{sample_collocation_with, CollocationSet, PointCounts};
use hyper_lr_pinn::train::{pinn_loss, pinn_loss_grad, TaskBatch, TrainConfig};

pub const PRESETS: [&str; 7] = ["convection", "diffusion", "reaction", "conv-diff", "reac-diff", "cdr", "helmholtz"];

/// Relative error with an absolute floor in the denominator.
///
/// Central differences on the orthogonality penalty carry a truncation error
/// of roughly 4 V h^2 (about 1e-8 at h = 1e-4) from its cubic terms, so a
/// pure relative error is meaningless for gradients near zero.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

pub fn small_set(spec: &ProblemSpec, seed: u64) -> CollocationSet {
    let counts = PointCounts {
        initial: 10,
        boundary: 6,
        interior: 16,
        test: 20,
    };
    let field = reference_field(spec, &Grid::standard(spec)).unwrap();
    sample_collocation_with(spec, seed, counts, &field).unwrap()
}

pub fn random_spec(rng: &mut Rng) -> ProblemSpec {
    let preset = PRESETS[rng.below(PRESETS.len())];
    let mu = match preset {
        "helmholtz" => vec![rng.uniform_range(1.0, 3.0)],
        "convection" => vec![rng.uniform_range(0.0, 5.0)],
        "diffusion" => vec![rng.uniform_range(0.0, 2.0)],
        "reaction" => vec![rng.uniform_range(0.0, 3.0)],
        _ => vec![rng.uniform_range(0.0, 3.0), rng.uniform_range(0.0, 1.0), rng.uniform_range(0.0, 2.0)],
    };
    ProblemSpec::preset(preset, &mu).unwrap()
}

fn between(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Head pre-activations of a hypernetwork at `mu`.
fn head_inputs(m: &Model, mu: &[f64]) -> Vec<f64> {
    let mut e = Matrix::column(mu);
    for k in 0..m.arch.embed_layers {
        e = m.dense_layer(&format!("hyper.emb.{k}"), Activation::Tanh).unwrap().forward(&e).unwrap();
    }
    (0..m.arch.hidden)
        .flat_map(|l| {
            m.dense_layer(&format!("hyper.head.{l}"), Activation::Identity)
                .unwrap()
                .forward(&e)
                .unwrap()
                .into_vec()
        })
        .collect()
}

fn jitter(m: &mut Model, name: &str, scale: f64, rng: &mut Rng) {
    if let Ok(t) = m.store.get_mut(name) {
        t.as_mut_slice().iter_mut().for_each(|v| *v += scale * rng.normal());
    }
}

/// A random small model of any kind and phase for `spec`, with generic
/// (non-initial) parameter values. Hypernetwork heads are redrawn until no
/// pre-activation sits within 1e-2 of the ReLU kink, where central
/// differences are undefined.
pub fn random_model(spec: &ProblemSpec, rng: &mut Rng) -> Model {
    let mu = spec.mu();
    let width = between(rng, 3, 7);
    let arch = Arch {
        width,
        hidden: between(rng, 1, 3),
        rank: between(rng, 1, width),
        embed_layers: between(rng, 1, 2),
        embed_width: between(rng, 2, 5),
        ..Arch::hyper(mu.len())
    };
    let kinds = [
        ModelKind::HyperLrPinn,
        ModelKind::HyperLrPinn,
        ModelKind::VanillaPinn,
        ModelKind::PinnP,
        ModelKind::NaiveLrPinn,
    ];
    let kind = kinds[rng.below(kinds.len())];
    let arch = match kind {
        ModelKind::HyperLrPinn => arch,
        ModelKind::VanillaPinn => Arch { width, hidden: arch.hidden, ..Arch::vanilla() },
        ModelKind::PinnP => Arch { width, hidden: arch.hidden, ..Arch::pinn_p(mu.len()) },
        ModelKind::NaiveLrPinn => Arch { width, hidden: arch.hidden, ..Arch::naive(arch.rank) },
    };
    let mut m = init_model(kind, arch, rng).unwrap();
    for l in 0..arch.hidden {
        jitter(&mut m, &format!("hidden.{l}.b"), 0.2, rng);
        jitter(&mut m, &format!("hidden.{l}.s"), 0.3, rng);
        for part in ["u", "v"] {
            if let Ok(t) = m.store.get_mut(&format!("hidden.{l}.{part}")) {
                t.as_mut_slice().iter_mut().for_each(|v| *v *= 1.0 + 0.05 * rng.normal());
            }
        }
    }
    jitter(&mut m, "input.b", 0.2, rng);
    jitter(&mut m, "output.b", 0.2, rng);
    if kind == ModelKind::HyperLrPinn {
        let fresh = m.clone();
        loop {
            m = fresh.clone();
            for l in 0..arch.hidden {
                jitter(&mut m, &format!("hyper.head.{l}.w"), 0.4, rng);
                jitter(&mut m, &format!("hyper.head.{l}.b"), 0.1, rng);
            }
            if head_inputs(&m, &mu).iter().all(|z| z.abs() > 1e-2) {
                break;
            }
        }
        if rng.below(3) == 0 {
            m = m.phase2_convert(&mu).unwrap();
        }
    }
    m
}

/// Worst relative error between analytic gradients and Richardson-extrapolated
/// central differences over every trainable scalar.
pub fn param_grad_error(model: &Model, batch: &TaskBatch, cfg: &TrainConfig) -> f64 {
    let (_, grads) = pinn_loss_grad(model, batch, cfg).unwrap();
    let trainable: usize = model.count_params();
    assert_eq!(grads.values().map(Matrix::len).sum::<usize>(), trainable);
    let mut worst = 0.0f64;
    let mut m = model.clone();
    for (name, g) in &grads {
        for k in 0..g.len() {
            let p0 = model.store.get(name).unwrap().as_slice()[k];
            let h = 1e-4 * p0.abs().max(1.0);
            let mut eval = |d: f64| {
                m.store.get_mut(name).unwrap().as_mut_slice()[k] = p0 + d;
                pinn_loss(&m, batch, cfg).unwrap().total
            };
            let coarse = (eval(h) - eval(-h)) / (2.0 * h);
            let fine = (eval(h / 2.0) - eval(-h / 2.0)) / h;
            let fd = (4.0 * fine - coarse) / 3.0;
            m.store.get_mut(name).unwrap().as_mut_slice()[k] = p0;
            worst = worst.max(rel(g.as_slice()[k], fd));
        }
    }
    worst
}

/// Worst relative error between the jet's derivative channels and central
/// differences of the plain forward pass, at every point of `coords`.
pub fn jet_error(model: &Model, spec: &ProblemSpec, coords: &Matrix) -> f64 {
    let mu = spec.mu();
    let seeds = spec.coordinate_seeds();
    let (first, second) = match seeds {
        [Some(Channel::Dx), Some(Channel::Dt)] => ([Channel::Dx, Channel::Dt], [Some(Channel::Dxx), None]),
        _ => ([Channel::Dx, Channel::Dy], [Some(Channel::Dxx), Some(Channel::Dyy)]),
    };
    let mut chans = vec![first[0], first[1]];
    chans.extend(second.iter().flatten());
    let set = ChannelSet::new(&chans).unwrap();
    let jet = model.predict_jet(&mu, coords, &seeds, set).unwrap();
    let f = |c: &Matrix| model.predict(&mu, c).unwrap();
    let base = f(coords);
    let mut worst = 0.0f64;
    for axis in 0..2 {
        let shifted = |d: f64| {
            let mut c = coords.clone();
            for j in 0..c.cols() {
                c.set(axis, j, c.get(axis, j) + d);
            }
            f(&c)
        };
        // Richardson-extrapolated central differences, O(h^4) truncation.
        let h = 2e-3;
        let (p1, q1, p2, q2) = (shifted(h), shifted(-h), shifted(h / 2.0), shifted(-h / 2.0));
        let d1 = jet.channel(first[axis]).unwrap();
        for j in 0..coords.cols() {
            let coarse = (p1[j] - q1[j]) / (2.0 * h);
            let fine = (p2[j] - q2[j]) / h;
            worst = worst.max(rel(d1[j], (4.0 * fine - coarse) / 3.0));
        }
        if let Some(c2) = second[axis] {
            let d2 = jet.channel(c2).unwrap();
            for j in 0..coords.cols() {
                let coarse = (p1[j] - 2.0 * base[j] + q1[j]) / (h * h);
                let fine = (p2[j] - 2.0 * base[j] + q2[j]) / (h * h / 4.0);
                worst = worst.max(rel(d2[j], (4.0 * fine - coarse) / 3.0));
            }
        }
    }
    worst
}
