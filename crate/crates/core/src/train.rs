//! PINN loss assembly and training loops: the two-phase Hyper-LR-PINN
//! procedure, single-model baselines, and the epochs-to-threshold probe.

use crate::diffcore::{adam_step, param_grad, AdamState, ChannelSet, Grads, Jet, LossOutput, Matrix, ParamStore, Rng, Tape};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::models::{Model, ModelKind, Phase};
use crate::pde::{
    boundary_residual_from_values, cdr_residual, cdr_residual_adjoint, helmholtz_residual, helmholtz_residual_adjoint,
    BoundaryPoints, Params, ProblemSpec,
};
use crate::sampling::CollocationSet;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub residual: f64,
    pub ic: f64,
    pub bc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            residual: 1.0,
            ic: 1.0,
            bc: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub baseline_epochs: usize,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub lr_baseline: f64,
    pub weights: LossWeights,
    pub ortho_w1: f64,
    pub ortho_w2: f64,
    /// Visit phase-1 tasks in a fresh random order each epoch.
    pub shuffle_tasks: bool,
    pub seed: u64,
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_epochs: 10_000,
            phase2_epochs: 2_000,
            baseline_epochs: 2_000,
            lr_phase1: 1e-3,
            lr_phase2: 2.5e-4,
            lr_baseline: 1e-3,
            weights: LossWeights::default(),
            ortho_w1: 1.0,
            ortho_w2: 1.0,
            shuffle_tasks: false,
            seed: 0,
            divergence_limit: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_phase1, self.lr_phase2, self.lr_baseline];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        let w = self.weights;
        if [w.residual, w.ic, w.bc, self.ortho_w1, self.ortho_w2]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.divergence_limit > 0.0) {
            return Err(Error::Config("divergence limit must be positive".into()));
        }
        Ok(())
    }
}

/// Unweighted loss components and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub residual_mse: f64,
    pub ic_mse: f64,
    pub bc_mse: f64,
    pub ortho: f64,
    pub total: f64,
}

/// A collocation set laid out as network inputs.
#[derive(Clone, Debug)]
pub struct TaskBatch {
    pub spec: ProblemSpec,
    pub mu: Vec<f64>,
    interior: Jet,
    interior_coords: Matrix,
    /// Value-only inputs: initial points first, then boundary points.
    data: Jet,
    ic_u: Vec<f64>,
    boundary: BoundaryPoints,
}

impl TaskBatch {
    pub fn new(set: &CollocationSet) -> Result<Self> {
        let spec = set.spec;
        let channels = ChannelSet::new(&spec.residual_channels())?;
        let interior = Jet::seed(&set.interior, &spec.coordinate_seeds(), channels)?;
        let bc = set.boundary.eval_coords();
        let n_ic = set.initial_x.len();
        let data_coords = Matrix::from_fn(2, n_ic + bc.cols(), |i, j| {
            if j < n_ic {
                if i == 0 {
                    set.initial_x[j]
                } else {
                    0.0
                }
            } else {
                bc.get(i, j - n_ic)
            }
        });
        Ok(Self {
            spec,
            mu: spec.mu(),
            interior,
            interior_coords: set.interior.clone(),
            data: Jet::constant(data_coords),
            ic_u: set.initial_u.clone(),
            boundary: set.boundary.clone(),
        })
    }

    fn inputs(&self) -> Vec<Jet> {
        vec![self.interior.clone(), self.data.clone()]
    }

    /// Loss components from the two output jets plus their adjoints.
    fn assemble(&self, outs: &[&Jet], weights: &LossWeights) -> Result<(LossBreakdown, LossOutput)> {
        let (res_jet, data_jet) = (outs[0], outs[1]);
        let (r, residual_adj) = match self.spec.params {
            Params::Cdr(p) => {
                let r = cdr_residual(res_jet, &p)?;
                let g = scaled(&r, 2.0 * weights.residual);
                (r, cdr_residual_adjoint(res_jet, &p, &g)?)
            }
            Params::Helmholtz(p) => {
                let r = helmholtz_residual(res_jet, &p, &self.interior_coords)?;
                let g = scaled(&r, 2.0 * weights.residual);
                (r, helmholtz_residual_adjoint(res_jet, &p, &g)?)
            }
        };
        let u = data_jet.value();
        let n_ic = self.ic_u.len();
        let ic_diff: Vec<f64> = u[..n_ic].iter().zip(&self.ic_u).map(|(a, b)| a - b).collect();
        let bc_res = boundary_residual_from_values(&self.boundary, &u[n_ic..])?;

        let mut data_adj = vec![0.0; u.len()];
        for (j, d) in ic_diff.iter().enumerate() {
            data_adj[j] = 2.0 * weights.ic * d / n_ic as f64;
        }
        let nb = bc_res.len() as f64;
        match &self.boundary {
            BoundaryPoints::Periodic { t } => {
                let n = t.len();
                for (j, d) in bc_res.iter().enumerate() {
                    let g = 2.0 * weights.bc * d / nb;
                    data_adj[n_ic + j] += g;
                    data_adj[n_ic + n + j] -= g;
                }
            }
            BoundaryPoints::Dirichlet { .. } => {
                for (j, d) in bc_res.iter().enumerate() {
                    data_adj[n_ic + j] += 2.0 * weights.bc * d / nb;
                }
            }
        }

        let b = LossBreakdown {
            residual_mse: mean_sq(&r),
            ic_mse: mean_sq(&ic_diff),
            bc_mse: mean_sq(&bc_res),
            ortho: 0.0,
            total: 0.0,
        };
        let out = LossOutput {
            terms: vec![
                ("residual".into(), weights.residual * b.residual_mse),
                ("ic".into(), weights.ic * b.ic_mse),
                ("bc".into(), weights.bc * b.bc_mse),
            ],
            adjoints: vec![residual_adj, Jet::constant(Matrix::from_vec(1, u.len(), data_adj)?)],
        };
        Ok((b, out))
    }
}

fn scaled(r: &[f64], factor: f64) -> Vec<f64> {
    let n = r.len() as f64;
    r.iter().map(|v| factor * v / n).collect()
}

fn mean_sq(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    }
}

/// Loss components of `model` on one task without gradients.
pub fn pinn_loss(model: &Model, batch: &TaskBatch, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let outs = model.record(&model.store, &mut tape, &batch.mu, batch.inputs())?;
    let jets: Vec<&Jet> = outs.iter().map(|id| tape.value(*id)).collect();
    let (mut b, out) = batch.assemble(&jets, &cfg.weights)?;
    for (name, v) in &out.terms {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss term {name}")));
        }
    }
    b.ortho = model.ortho(cfg.ortho_w1, cfg.ortho_w2)?.0;
    b.total = out.total() + b.ortho;
    Ok(b)
}

/// Loss components and gradients for every trainable tensor of `model`.
pub fn pinn_loss_grad(model: &Model, batch: &TaskBatch, cfg: &TrainConfig) -> Result<(LossBreakdown, Grads)> {
    let mut breakdown = LossBreakdown::default();
    let (data_total, mut grads) = param_grad(
        &model.store,
        |tape, store| model.record(store, tape, &batch.mu, batch.inputs()),
        |outs| {
            let (b, out) = batch.assemble(outs, &cfg.weights)?;
            breakdown = b;
            Ok(out)
        },
    )?;
    let (ortho, ortho_grads) = model.ortho(cfg.ortho_w1, cfg.ortho_w2)?;
    if !ortho.is_finite() {
        return Err(Error::Numeric("loss term ortho".into()));
    }
    for (name, g) in ortho_grads {
        match grads.get_mut(&name) {
            Some(acc) => acc.axpy(1.0, &g)?,
            None => {
                grads.insert(name, g);
            }
        }
    }
    complete_grads(&model.store, &mut grads)?;
    breakdown.ortho = ortho;
    breakdown.total = data_total + ortho;
    Ok((breakdown, grads))
}

/// Zero gradients for trainable tensors the graph never reached.
fn complete_grads(store: &ParamStore, grads: &mut Grads) -> Result<()> {
    for name in store.trainable_names() {
        if !grads.contains_key(&name) {
            let (r, c) = store.get(&name)?.shape();
            grads.insert(name, Matrix::zeros(r, c));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub task: usize,
    pub residual: f64,
    pub ic: f64,
    pub bc: f64,
    pub ortho: f64,
    pub total: f64,
}

/// Per-step loss records (one per task per epoch).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    /// Mean total loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += r.total;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn last_total(&self) -> Option<f64> {
        self.rows.last().map(|r| r.total)
    }

    /// CSV with columns `epoch,task,residual,ic,bc,ortho,total`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Observer verdict after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Called with the number of completed epochs (starting at 0, before any
/// update) and the current model.
pub type Observer<'a> = dyn FnMut(usize, &Model) -> Result<Control> + 'a;

fn run(
    model: &mut Model,
    batches: &[TaskBatch],
    epochs: usize,
    lr: f64,
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<History> {
    cfg.validate()?;
    let mut adam = AdamState::new(lr);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let shuffler = Rng::new(cfg.seed).fork(0x5348_5546);
    if observer(0, model)? == Control::Stop {
        return Ok(history);
    }
    for epoch in 0..epochs {
        if cfg.shuffle_tasks {
            shuffler.fork(epoch as u64).shuffle(&mut order);
        }
        for &task in &order {
            let diverged = |detail: String| Error::Divergence { epoch, task, detail };
            let (b, grads) = pinn_loss_grad(model, &batches[task], cfg).map_err(|e| match e {
                Error::Numeric(what) => diverged(what),
                other => other,
            })?;
            if !b.total.is_finite() || b.total > cfg.divergence_limit {
                return Err(diverged(format!("total loss {:e} {:?}", b.total, b)));
            }
            adam_step(&mut model.store, &grads, &mut adam)?;
            history.rows.push(HistoryRow {
                epoch,
                task,
                residual: b.residual_mse,
                ic: b.ic_mse,
                bc: b.bc_mse,
                ortho: b.ortho,
                total: b.total,
            });
        }
        if observer(epoch + 1, model)? == Control::Stop {
            break;
        }
    }
    Ok(history)
}

fn batches(sets: &[CollocationSet]) -> Result<Vec<TaskBatch>> {
    sets.iter().map(TaskBatch::new).collect()
}

fn no_observer(_: usize, _: &Model) -> Result<Control> {
    Ok(Control::Continue)
}

/// Phase 1: one Adam step per task per epoch on the basis, biases,
/// input/output layers and hypernetwork.
pub fn phase1_train(model: &mut Model, tasks: &[CollocationSet], cfg: &TrainConfig) -> Result<History> {
    phase1_train_observed(model, tasks, cfg, &mut no_observer)
}

pub fn phase1_train_observed(
    model: &mut Model,
    tasks: &[CollocationSet],
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<History> {
    if model.kind != ModelKind::HyperLrPinn || model.phase != Phase::One {
        return Err(Error::Argument("phase 1 trains a phase-1 Hyper-LR-PINN".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Argument("phase 1 needs at least one task".into()));
    }
    let b = batches(tasks)?;
    run(model, &b, cfg.phase1_epochs, cfg.lr_phase1, cfg, observer)
}

/// Phase 1 followed by conversion at `mu_target`.
pub fn phase2_convert(model: &Model, mu_target: &[f64]) -> Result<Model> {
    model.phase2_convert(mu_target)
}

/// Phase 2: fine-tunes the coefficients and input/output layers on one task.
pub fn phase2_train(model: &mut Model, task: &CollocationSet, cfg: &TrainConfig) -> Result<History> {
    phase2_train_observed(model, task, cfg, cfg.phase2_epochs, &mut no_observer)
}

pub fn phase2_train_observed(
    model: &mut Model,
    task: &CollocationSet,
    cfg: &TrainConfig,
    epochs: usize,
    observer: &mut Observer<'_>,
) -> Result<History> {
    if model.kind != ModelKind::HyperLrPinn || model.phase != Phase::Two {
        return Err(Error::Argument("phase 2 trains a converted Hyper-LR-PINN".into()));
    }
    let b = batches(std::slice::from_ref(task))?;
    run(model, &b, epochs, cfg.lr_phase2, cfg, observer)
}

/// Baseline training. Vanilla and naive low-rank PINNs take exactly one
/// task; PINN-P takes any number and steps once per task per epoch.
pub fn train_baseline(model: &mut Model, tasks: &[CollocationSet], cfg: &TrainConfig) -> Result<History> {
    train_baseline_observed(model, tasks, cfg, cfg.baseline_epochs, &mut no_observer)
}

pub fn train_baseline_observed(
    model: &mut Model,
    tasks: &[CollocationSet],
    cfg: &TrainConfig,
    epochs: usize,
    observer: &mut Observer<'_>,
) -> Result<History> {
    match model.kind {
        ModelKind::HyperLrPinn => return Err(Error::Argument("use the phase trainers for Hyper-LR-PINN".into())),
        ModelKind::PinnP if tasks.is_empty() => return Err(Error::Argument("PINN-P needs at least one task".into())),
        ModelKind::VanillaPinn | ModelKind::NaiveLrPinn if tasks.len() != 1 => {
            return Err(Error::Argument(format!("{} trains on exactly one task", model.kind.name())))
        }
        _ => {}
    }
    let b = batches(tasks)?;
    run(model, &b, epochs, cfg.lr_baseline, cfg, observer)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeOutcome {
    Reached(usize),
    Exhausted(usize),
}

impl ProbeOutcome {
    pub fn epochs(self) -> Option<usize> {
        match self {
            ProbeOutcome::Reached(k) => Some(k),
            ProbeOutcome::Exhausted(_) => None,
        }
    }
}

/// First index at which `errors` drops below `threshold`.
pub fn first_crossing(errors: &[f64], threshold: f64) -> Option<usize> {
    errors.iter().position(|e| *e < threshold)
}

/// Trains `model` on `task` (phase 2 for converted hyper models, the
/// baseline loop otherwise) until the test mean absolute error falls below
/// `threshold`, checking before the first update and after every epoch.
pub fn epochs_to_threshold(
    model: &mut Model,
    task: &CollocationSet,
    cfg: &TrainConfig,
    budget: usize,
    threshold: f64,
) -> Result<ProbeOutcome> {
    let mut reached = None;
    let mut observer = |epoch: usize, m: &Model| -> Result<Control> {
        if evaluate(m, task)?.abs_err < threshold {
            reached = Some(epoch);
            return Ok(Control::Stop);
        }
        Ok(Control::Continue)
    };
    match (model.kind, model.phase) {
        (ModelKind::HyperLrPinn, Phase::Two) => {
            phase2_train_observed(model, task, cfg, budget, &mut observer)?;
        }
        (ModelKind::HyperLrPinn, _) => {
            return Err(Error::Argument("probe a hyper model after phase-2 conversion".into()))
        }
        _ => {
            train_baseline_observed(model, std::slice::from_ref(task), cfg, budget, &mut observer)?;
        }
    }
    Ok(reached.map_or(ProbeOutcome::Exhausted(budget), ProbeOutcome::Reached))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, Arch};
    use crate::pde::InitialCondition;
    use crate::reference::{reference_field, Grid};
    use crate::sampling::{sample_collocation_with, PointCounts};

    fn small_set(spec: &ProblemSpec, seed: u64) -> CollocationSet {
        let counts = PointCounts {
            initial: 12,
            boundary: 6,
            interior: 20,
            test: 40,
        };
        let field = reference_field(spec, &Grid::standard(spec)).unwrap();
        sample_collocation_with(spec, seed, counts, &field).unwrap()
    }

    fn tiny_arch(mu_dim: usize) -> Arch {
        Arch {
            width: 6,
            hidden: 2,
            rank: 4,
            embed_layers: 2,
            embed_width: 5,
            ..Arch::hyper(mu_dim)
        }
    }

    fn randomize_heads(m: &mut Model, rng: &mut Rng) {
        for l in 0..m.arch.hidden {
            let (r, e) = m.store.get(&format!("hyper.head.{l}.w")).unwrap().shape();
            *m.store.get_mut(&format!("hyper.head.{l}.w")).unwrap() = Matrix::from_fn(r, e, |_, _| 0.4 * rng.normal());
            let (n, _) = m.store.get(&format!("hidden.{l}.b")).unwrap().shape();
            *m.store.get_mut(&format!("hidden.{l}.b")).unwrap() = Matrix::from_fn(n, 1, |_, _| 0.2 * rng.normal());
            // Slightly non-orthonormal bases give the penalty a gradient.
            let u = m.store.get_mut(&format!("hidden.{l}.u")).unwrap();
            u.as_mut_slice().iter_mut().for_each(|v| *v *= 1.0 + 0.05 * rng.normal());
        }
    }

    fn fd_check(model: &Model, batch: &TaskBatch, cfg: &TrainConfig) -> f64 {
        let (_, grads) = pinn_loss_grad(model, batch, cfg).unwrap();
        let mut worst = 0.0f64;
        for (name, g) in &grads {
            for k in 0..g.len() {
                let p0 = model.store.get(name).unwrap().as_slice()[k];
                let h = 1e-4 * p0.abs().max(1.0);
                let eval = |d: f64| {
                    let mut m = model.clone();
                    m.store.get_mut(name).unwrap().as_mut_slice()[k] = p0 + d;
                    pinn_loss(&m, batch, cfg).unwrap().total
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = g.as_slice()[k];
                // The penalty's cubic term leaves ~1e-8 absolute error in
                // the difference quotient, hence the 1e-2 floor.
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-2));
            }
        }
        worst
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let cfg = TrainConfig::default();
        for (preset, mu) in [("cdr", vec![2.0, 0.3, 1.5]), ("helmholtz", vec![1.5])] {
            let spec = ProblemSpec::preset(preset, &mu).unwrap();
            let set = small_set(&spec, 1);
            let mut m = init_model(crate::models::ModelKind::HyperLrPinn, tiny_arch(mu.len()), &mut rng).unwrap();
            randomize_heads(&mut m, &mut rng);
            let batch = TaskBatch::new(&set).unwrap();
            let worst = fd_check(&m, &batch, &cfg);
            assert!(worst <= 1e-5, "{preset}: {worst}");
        }
    }

    #[test]
    fn breakdown_sums_and_closed_forms() {
        let spec = ProblemSpec::preset("reaction", &[3.0]).unwrap();
        let set = small_set(&spec, 2);
        let mut m = init_model(ModelKind::VanillaPinn, Arch { width: 5, ..Arch::vanilla() }, &mut Rng::new(1)).unwrap();
        *m.store.get_mut("output.w").unwrap() = Matrix::zeros(1, 5);
        let batch = TaskBatch::new(&set).unwrap();
        let b = pinn_loss(&m, &batch, &TrainConfig::default()).unwrap();
        let want_ic = set.initial_u.iter().map(|v| v * v).sum::<f64>() / set.initial_u.len() as f64;
        assert!((b.ic_mse - want_ic).abs() < 1e-15);
        assert_eq!((b.residual_mse, b.bc_mse, b.ortho), (0.0, 0.0, 0.0));
        assert!((b.total - (b.residual_mse + b.ic_mse + b.bc_mse + b.ortho)).abs() < 1e-15);
    }

    #[test]
    fn exact_solution_stub_has_zero_loss() {
        // A one-neuron-wide stand-in: u = 1 solves reaction with u0 = 1.
        let mut spec = ProblemSpec::preset("reaction", &[2.0]).unwrap();
        spec.ic = Some(InitialCondition::Gaussian { sigma: 1e6 });
        let set = small_set(&spec, 4);
        let mut m = init_model(ModelKind::VanillaPinn, Arch { width: 3, ..Arch::vanilla() }, &mut Rng::new(1)).unwrap();
        *m.store.get_mut("output.w").unwrap() = Matrix::zeros(1, 3);
        *m.store.get_mut("output.b").unwrap() = Matrix::column(&[1.0]);
        let b = pinn_loss(&m, &TaskBatch::new(&set).unwrap(), &TrainConfig::default()).unwrap();
        assert!(b.residual_mse <= 1e-12 && b.ic_mse <= 1e-12 && b.bc_mse <= 1e-12);
    }

    #[test]
    fn zero_epochs_leave_the_model_unchanged() {
        let spec = ProblemSpec::preset("convection", &[1.0]).unwrap();
        let set = small_set(&spec, 5);
        let mut m = init_model(ModelKind::HyperLrPinn, tiny_arch(1), &mut Rng::new(9)).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            phase1_epochs: 0,
            ..TrainConfig::default()
        };
        let h = phase1_train(&mut m, &[set], &cfg).unwrap();
        assert!(h.rows.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn training_is_deterministic_and_phase2_respects_freezing() {
        let spec = ProblemSpec::preset("convection", &[2.0]).unwrap();
        let sets = [small_set(&spec, 6), small_set(&spec.with_mu(&[3.0]).unwrap(), 7)];
        let cfg = TrainConfig {
            phase1_epochs: 5,
            phase2_epochs: 5,
            ..TrainConfig::default()
        };
        let init = init_model(ModelKind::HyperLrPinn, tiny_arch(1), &mut Rng::new(2)).unwrap();
        let (mut a, mut b) = (init.clone(), init);
        let ha = phase1_train(&mut a, &sets, &cfg).unwrap();
        let hb = phase1_train(&mut b, &sets, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(ha.rows.len(), 10);

        let mut p2 = a.phase2_convert(&[2.0]).unwrap();
        let frozen: Vec<(String, Matrix)> = p2
            .store
            .iter()
            .filter(|(_, p)| !p.trainable)
            .map(|(n, p)| (n.to_string(), p.tensor.clone()))
            .collect();
        let batch = TaskBatch::new(&sets[0]).unwrap();
        let (_, grads) = pinn_loss_grad(&p2, &batch, &cfg).unwrap();
        let touched: usize = grads.values().map(Matrix::len).sum();
        let ranks = p2.active_ranks(&[2.0]).unwrap();
        assert_eq!(touched, ranks.iter().sum::<usize>() + 6 * 2 + 6 + 6 + 1);
        assert!(grads.keys().all(|k| p2.store.is_trainable(k)));
        phase2_train(&mut p2, &sets[0], &cfg).unwrap();
        for (n, t) in frozen {
            assert_eq!(p2.store.get(&n).unwrap(), &t, "{n} changed");
        }
    }

    #[test]
    fn divergence_guard_reports_epoch_and_task() {
        let spec = ProblemSpec::preset("convection", &[1.0]).unwrap();
        let set = small_set(&spec, 8);
        let mut m = init_model(ModelKind::VanillaPinn, Arch { width: 4, ..Arch::vanilla() }, &mut Rng::new(1)).unwrap();
        *m.store.get_mut("output.b").unwrap() = Matrix::column(&[1e4]);
        let err = train_baseline(&mut m, &[set], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0, task: 0, .. }), "{err}");
    }

    #[test]
    fn probe_markers() {
        assert_eq!(first_crossing(&[0.5, 0.3, 0.04, 0.01], 0.05), Some(2));
        assert_eq!(first_crossing(&[0.5, 0.3], 0.05), None);
        let spec = ProblemSpec::preset("convection", &[1.0]).unwrap();
        let set = small_set(&spec, 9);
        let init = init_model(ModelKind::VanillaPinn, Arch { width: 4, ..Arch::vanilla() }, &mut Rng::new(1)).unwrap();
        let cfg = TrainConfig::default();
        let mut m = init.clone();
        assert_eq!(epochs_to_threshold(&mut m, &set, &cfg, 10, f64::INFINITY).unwrap(), ProbeOutcome::Reached(0));
        let mut m = init;
        assert_eq!(epochs_to_threshold(&mut m, &set, &cfg, 10, 0.0).unwrap(), ProbeOutcome::Exhausted(10));
    }

    #[test]
    fn history_csv_columns() {
        let h = History {
            rows: vec![HistoryRow {
                epoch: 0,
                task: 1,
                residual: 0.5,
                ic: 0.25,
                bc: 0.0,
                ortho: 0.0,
                total: 0.75,
            }],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,task,residual,ic,bc,ortho,total\n0,1,0.5,0.25,0.0,0.0,0.75\n"
        );
        assert_eq!(h.epoch_means(), vec![0.75]);
    }
}
