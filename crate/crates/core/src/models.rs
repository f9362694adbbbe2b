//! Network architectures: dense and low-rank layers, the hypernetwork that
//! emits per-layer diagonal coefficients, the assembled Hyper-LR-PINN and the
//! baseline PINNs.
//!
//! Every model keeps its tensors in a [`ParamStore`] under fixed names:
//!
//! | name                  | shape        | models                    |
//! |-----------------------|--------------|---------------------------|
//! | `input.w`, `input.b`  | `n x d`, `n` | all                       |
//! | `hidden.{l}.w`        | `n x n`      | vanilla, PINN-P           |
//! | `hidden.{l}.u`, `.v`  | `n x r`      | hyper, naive low-rank     |
//! | `hidden.{l}.s`        | `r`          | naive low-rank            |
//! | `hidden.{l}.b`        | `n`          | all                       |
//! | `output.w`, `output.b`| `1 x n`, `1` | all                       |
//! | `hyper.emb.{m}.w/.b`  |              | hyper                     |
//! | `hyper.head.{l}.w/.b` | `r x e`, `r` | hyper                     |
//! | `phase2.s.{l}`        | `r_l`        | hyper after phase-2 conversion |

use crate::diffcore::{svd, ChannelSet, Grads, Jet, Matrix, NodeId, ParamStore, Rng, Tape, Trans};
use crate::diffcore::svd::orthonormalize_columns;
use crate::diffcore::Channel;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => crate::diffcore::jet::fast_tanh(z),
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(w: Matrix, b: Vec<f64>, activation: Activation) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::Shape(format!("bias of length {} for {} rows", b.len(), w.rows())));
        }
        Ok(Self { w, b, activation })
    }

    /// Applies the layer to a `cols`-column batch.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.w.matmul(x)?;
        for i in 0..z.rows() {
            let bi = self.b[i];
            z.row_mut(i).iter_mut().for_each(|v| *v = self.activation.apply(*v + bi));
        }
        Ok(z)
    }
}

/// Factored layer `x -> U diag(s) V^T x + b`; the coefficients `s` are
/// supplied separately because they depend on the PDE parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankLayer {
    pub u: Matrix,
    pub v: Matrix,
    pub b: Vec<f64>,
}

impl LowRankLayer {
    pub fn new(u: Matrix, v: Matrix, b: Vec<f64>) -> Result<Self> {
        let r = u.cols();
        if v.cols() != r || b.len() != u.rows() || r > u.rows().min(v.rows()) {
            return Err(Error::Shape(format!(
                "low-rank layer U {:?}, V {:?}, b {}",
                u.shape(),
                v.shape(),
                b.len()
            )));
        }
        Ok(Self { u, v, b })
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    fn check_s(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.rank() {
            return Err(Error::Shape(format!("{} coefficients for rank {}", s.len(), self.rank())));
        }
        Ok(())
    }

    /// `U diag(s) V^T`.
    pub fn effective_weight(&self, s: &[f64]) -> Result<Matrix> {
        self.check_s(s)?;
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            us.row_mut(i).iter_mut().zip(s).for_each(|(z, si)| *z *= si);
        }
        us.matmul_t(Trans::No, &self.v, Trans::Yes)
    }

    /// `U (s ⊙ (V^T h))` without forming the full weight (bias excluded).
    pub fn factored_apply(&self, s: &[f64], h: &Matrix) -> Result<Matrix> {
        self.check_s(s)?;
        let mut proj = self.v.matmul_t(Trans::Yes, h, Trans::No)?;
        for (i, si) in s.iter().enumerate() {
            proj.row_mut(i).iter_mut().for_each(|z| *z *= si);
        }
        self.u.matmul(&proj)
    }
}

fn gram_defect(a: &Matrix) -> Result<Matrix> {
    let mut g = a.matmul_t(Trans::Yes, a, Trans::No)?;
    for i in 0..g.rows() {
        g.set(i, i, g.get(i, i) - 1.0);
    }
    Ok(g)
}

/// `w1 ||U^T U - I||_F^2 + w2 ||V^T V - I||_F^2`.
pub fn ortho_penalty(layer: &LowRankLayer, w1: f64, w2: f64) -> f64 {
    let du = gram_defect(&layer.u).expect("square Gram product");
    let dv = gram_defect(&layer.v).expect("square Gram product");
    w1 * du.frobenius_norm().powi(2) + w2 * dv.frobenius_norm().powi(2)
}

/// Penalty value with its gradients `4 w1 U (U^T U - I)` and
/// `4 w2 V (V^T V - I)`.
pub fn ortho_penalty_grad(layer: &LowRankLayer, w1: f64, w2: f64) -> (f64, Matrix, Matrix) {
    let du = gram_defect(&layer.u).expect("square Gram product");
    let dv = gram_defect(&layer.v).expect("square Gram product");
    let value = w1 * du.frobenius_norm().powi(2) + w2 * dv.frobenius_norm().powi(2);
    let mut gu = layer.u.matmul(&du).expect("conforming");
    gu.scale(4.0 * w1);
    let mut gv = layer.v.matmul(&dv).expect("conforming");
    gv.scale(4.0 * w2);
    (value, gu, gv)
}

/// Number of coefficients strictly above `eps`, per layer.
pub fn nnz_ranks(s: &[Vec<f64>], eps: f64) -> Vec<usize> {
    s.iter().map(|row| row.iter().filter(|v| **v > eps).count()).collect()
}

/// Best rank-`r` factorization of a dense layer; the retained singular values
/// become the diagonal coefficients.
pub fn svd_truncate(layer: &DenseLayer, r: usize) -> Result<(LowRankLayer, Vec<f64>)> {
    let k = layer.w.rows().min(layer.w.cols());
    if r == 0 || r > k {
        return Err(Error::Argument(format!("truncation rank {r} outside 1..={k}")));
    }
    let d = svd(&layer.w)?;
    let u = select_columns(&d.u, &(0..r).collect::<Vec<_>>());
    let v = select_columns(&d.v, &(0..r).collect::<Vec<_>>());
    Ok((LowRankLayer::new(u, v, layer.b.clone())?, d.s[..r].to_vec()))
}

fn select_columns(a: &Matrix, cols: &[usize]) -> Matrix {
    Matrix::from_fn(a.rows(), cols.len(), |i, j| a.get(i, cols[j]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    HyperLrPinn,
    VanillaPinn,
    PinnP,
    NaiveLrPinn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::HyperLrPinn => "hyper-lr-pinn",
            ModelKind::VanillaPinn => "vanilla-pinn",
            ModelKind::PinnP => "pinn-p",
            ModelKind::NaiveLrPinn => "naive-lr-pinn",
        }
    }

    pub fn is_low_rank(self) -> bool {
        matches!(self, ModelKind::HyperLrPinn | ModelKind::NaiveLrPinn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    One,
    Two,
    Baseline,
}

/// Layer sizes. `coord_dim` counts coordinate inputs only; PINN-P adds
/// `mu_dim` more input rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub coord_dim: usize,
    pub width: usize,
    pub hidden: usize,
    pub rank: usize,
    pub embed_layers: usize,
    pub embed_width: usize,
    pub mu_dim: usize,
    pub head_bias: f64,
}

impl Arch {
    pub fn hyper(mu_dim: usize) -> Self {
        Self {
            coord_dim: 2,
            width: 50,
            hidden: 3,
            rank: 50,
            embed_layers: 3,
            embed_width: 50,
            mu_dim,
            head_bias: 0.1,
        }
    }

    /// Six dense weight matrices: input, four hidden, output.
    pub fn vanilla() -> Self {
        Self {
            hidden: 4,
            embed_layers: 0,
            embed_width: 0,
            mu_dim: 0,
            ..Self::hyper(0)
        }
    }

    pub fn pinn_p(mu_dim: usize) -> Self {
        Self {
            mu_dim,
            ..Self::vanilla()
        }
    }

    pub fn naive(rank: usize) -> Self {
        Self {
            rank,
            embed_layers: 0,
            embed_width: 0,
            mu_dim: 0,
            ..Self::hyper(0)
        }
    }

    fn input_dim(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::PinnP => self.coord_dim + self.mu_dim,
            _ => self.coord_dim,
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.coord_dim == 0 || self.width == 0 || self.hidden == 0 {
            return bad("coordinate dimension, width and hidden layer count must be positive".into());
        }
        if kind.is_low_rank() && (self.rank == 0 || self.rank > self.width) {
            return bad(format!("rank {} must lie in 1..={}", self.rank, self.width));
        }
        if kind == ModelKind::HyperLrPinn && (self.embed_layers == 0 || self.embed_width == 0 || self.mu_dim == 0) {
            return bad("hypernetwork needs embedding layers, width and a parameter dimension".into());
        }
        if kind == ModelKind::PinnP && self.mu_dim == 0 {
            return bad("PINN-P needs a parameter dimension".into());
        }
        Ok(())
    }
}

pub fn hidden_name(l: usize, part: &str) -> String {
    format!("hidden.{l}.{part}")
}

fn emb_name(m: usize, part: &str) -> String {
    format!("hyper.emb.{m}.{part}")
}

fn head_name(l: usize, part: &str) -> String {
    format!("hyper.head.{l}.{part}")
}

pub fn phase2_s_name(l: usize) -> String {
    format!("phase2.s.{l}")
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound))
}

fn orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    orthonormalize_columns(&Matrix::from_fn(rows, cols, |_, _| rng.normal()))
}

/// A PINN of any supported kind with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub arch: Arch,
    pub phase: Phase,
    pub store: ParamStore,
}

/// Fresh model with the default initialization: Glorot-uniform dense
/// weights, zero biases, orthonormal `U`/`V`, hypernetwork heads with zero
/// weights and a positive bias so every initial coefficient is positive.
pub fn init_model(kind: ModelKind, arch: Arch, rng: &mut Rng) -> Result<Model> {
    arch.validate(kind)?;
    let n = arch.width;
    let mut store = ParamStore::new();
    let zeros = |k: usize| Matrix::zeros(k, 1);
    store.insert("input.w", glorot(n, arch.input_dim(kind), rng), true)?;
    store.insert("input.b", zeros(n), true)?;
    for l in 0..arch.hidden {
        match kind {
            ModelKind::VanillaPinn | ModelKind::PinnP => {
                store.insert(hidden_name(l, "w"), glorot(n, n, rng), true)?;
            }
            ModelKind::HyperLrPinn | ModelKind::NaiveLrPinn => {
                store.insert(hidden_name(l, "u"), orthonormal(n, arch.rank, rng)?, true)?;
                store.insert(hidden_name(l, "v"), orthonormal(n, arch.rank, rng)?, true)?;
            }
        }
        if kind == ModelKind::NaiveLrPinn {
            store.insert(hidden_name(l, "s"), Matrix::column(&vec![1.0; arch.rank]), true)?;
        }
        store.insert(hidden_name(l, "b"), zeros(n), true)?;
    }
    store.insert("output.w", glorot(1, n, rng), true)?;
    store.insert("output.b", zeros(1), true)?;
    if kind == ModelKind::HyperLrPinn {
        let e = arch.embed_width;
        for m in 0..arch.embed_layers {
            let fan_in = if m == 0 { arch.mu_dim } else { e };
            store.insert(emb_name(m, "w"), glorot(e, fan_in, rng), true)?;
            store.insert(emb_name(m, "b"), zeros(e), true)?;
        }
        for l in 0..arch.hidden {
            store.insert(head_name(l, "w"), Matrix::zeros(arch.rank, e), true)?;
            store.insert(head_name(l, "b"), Matrix::column(&vec![arch.head_bias; arch.rank]), true)?;
        }
    }
    let phase = if kind == ModelKind::HyperLrPinn {
        Phase::One
    } else {
        Phase::Baseline
    };
    let mut model = Model {
        kind,
        arch,
        phase,
        store,
    };
    model.apply_ledger()?;
    Ok(model)
}

impl Model {
    /// Whether a tensor is trainable under this model's kind and phase.
    pub fn ledger_trainable(&self, name: &str) -> bool {
        match (self.kind, self.phase) {
            (ModelKind::NaiveLrPinn, _) => !(name.ends_with(".u") || name.ends_with(".v")),
            (ModelKind::HyperLrPinn, Phase::Two) => {
                name.starts_with("phase2.s.") || name.starts_with("input.") || name.starts_with("output.")
            }
            (ModelKind::HyperLrPinn, _) => !name.starts_with("phase2."),
            _ => true,
        }
    }

    /// Resets every tensor's trainable flag from [`Model::ledger_trainable`].
    pub fn apply_ledger(&mut self) -> Result<()> {
        let names: Vec<String> = self.store.names().map(str::to_string).collect();
        for name in names {
            let t = self.ledger_trainable(&name);
            self.store.set_trainable(&name, t)?;
        }
        Ok(())
    }

    /// Trainable scalar count under the current phase.
    pub fn count_params(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim(self.kind)
    }

    /// Dimension of the PDE-parameter vector the model consumes (0 if none).
    pub fn mu_dim(&self) -> usize {
        match self.kind {
            ModelKind::HyperLrPinn | ModelKind::PinnP => self.arch.mu_dim,
            _ => 0,
        }
    }

    fn check_mu(&self, mu: &[f64]) -> Result<()> {
        let want = self.mu_dim();
        if want != 0 && mu.len() != want {
            return Err(Error::Shape(format!("{} expects {} PDE parameters, got {}", self.kind.name(), want, mu.len())));
        }
        Ok(())
    }

    pub fn low_rank_layer(&self, l: usize) -> Result<LowRankLayer> {
        if !self.kind.is_low_rank() {
            return Err(Error::Argument(format!("{} has no low-rank layers", self.kind.name())));
        }
        LowRankLayer::new(
            self.store.get(&hidden_name(l, "u"))?.clone(),
            self.store.get(&hidden_name(l, "v"))?.clone(),
            self.store.get(&hidden_name(l, "b"))?.as_slice().to_vec(),
        )
    }

    pub fn dense_layer(&self, prefix: &str, activation: Activation) -> Result<DenseLayer> {
        DenseLayer::new(
            self.store.get(&format!("{prefix}.w"))?.clone(),
            self.store.get(&format!("{prefix}.b"))?.as_slice().to_vec(),
            activation,
        )
    }

    /// Hypernetwork output `s^1..s^L` for `mu`.
    pub fn hyper_forward(&self, mu: &[f64]) -> Result<Vec<Vec<f64>>> {
        if self.kind != ModelKind::HyperLrPinn {
            return Err(Error::Argument(format!("{} has no hypernetwork", self.kind.name())));
        }
        self.check_mu(mu)?;
        let mut e = Matrix::column(mu);
        for m in 0..self.arch.embed_layers {
            e = self.dense_layer(&format!("hyper.emb.{m}"), Activation::Tanh)?.forward(&e)?;
        }
        (0..self.arch.hidden)
            .map(|l| {
                Ok(self
                    .dense_layer(&format!("hyper.head.{l}"), Activation::Relu)?
                    .forward(&e)?
                    .into_vec())
            })
            .collect()
    }

    /// Diagonal coefficients the forward pass uses at `mu`.
    pub fn coefficients(&self, mu: &[f64]) -> Result<Vec<Vec<f64>>> {
        match (self.kind, self.phase) {
            (ModelKind::HyperLrPinn, Phase::Two) => (0..self.arch.hidden)
                .map(|l| Ok(self.store.get(&phase2_s_name(l))?.as_slice().to_vec()))
                .collect(),
            (ModelKind::HyperLrPinn, _) => self.hyper_forward(mu),
            (ModelKind::NaiveLrPinn, _) => (0..self.arch.hidden)
                .map(|l| Ok(self.store.get(&hidden_name(l, "s"))?.as_slice().to_vec()))
                .collect(),
            _ => Err(Error::Argument(format!("{} has no diagonal coefficients", self.kind.name()))),
        }
    }

    fn record_coefficients(&self, store: &ParamStore, tape: &mut Tape, mu: &[f64]) -> Result<Vec<NodeId>> {
        match (self.kind, self.phase) {
            (ModelKind::HyperLrPinn, Phase::Two) => {
                (0..self.arch.hidden).map(|l| tape.param(store, &phase2_s_name(l))).collect()
            }
            (ModelKind::HyperLrPinn, _) => {
                let mut e = tape.input(Jet::constant(Matrix::column(mu)));
                for m in 0..self.arch.embed_layers {
                    e = tape.affine(store, &emb_name(m, "w"), &emb_name(m, "b"), e)?;
                    e = tape.tanh(e);
                }
                (0..self.arch.hidden)
                    .map(|l| {
                        let z = tape.affine(store, &head_name(l, "w"), &head_name(l, "b"), e)?;
                        Ok(tape.relu(z))
                    })
                    .collect()
            }
            (ModelKind::NaiveLrPinn, _) => {
                (0..self.arch.hidden).map(|l| tape.param(store, &hidden_name(l, "s"))).collect()
            }
            _ => Ok(Vec::new()),
        }
    }

    /// Appends `mu` as derivative-free input rows (PINN-P).
    fn append_mu(&self, jet: Jet, mu: &[f64]) -> Jet {
        if self.kind != ModelKind::PinnP {
            return jet;
        }
        let d = jet.width();
        let mut out = Jet::zeros(d + mu.len(), jet.batch(), jet.channels().clone());
        for row in 0..d {
            for ci in 0..jet.channels().len() {
                out.block_mut(row, ci).copy_from_slice(jet.block(row, ci));
            }
        }
        for (k, &m) in mu.iter().enumerate() {
            out.block_mut(d + k, 0).iter_mut().for_each(|v| *v = m);
        }
        out
    }

    /// Records the network on `tape` for each seeded coordinate jet in
    /// `inputs` (all sharing the coefficients of `mu`) and returns the
    /// output node for each.
    pub fn record(&self, store: &ParamStore, tape: &mut Tape, mu: &[f64], inputs: Vec<Jet>) -> Result<Vec<NodeId>> {
        self.check_mu(mu)?;
        let s = self.record_coefficients(store, tape, mu)?;
        let mut outs = Vec::with_capacity(inputs.len());
        for jet in inputs {
            if jet.width() != self.arch.coord_dim {
                return Err(Error::Shape(format!(
                    "coordinate jet of width {} for a {}-input model",
                    jet.width(),
                    self.arch.coord_dim
                )));
            }
            let x = tape.input(self.append_mu(jet, mu));
            let mut h = tape.affine(store, "input.w", "input.b", x)?;
            h = tape.tanh(h);
            for l in 0..self.arch.hidden {
                h = if self.kind.is_low_rank() {
                    tape.low_rank(store, &hidden_name(l, "u"), &hidden_name(l, "v"), &hidden_name(l, "b"), s[l], h)?
                } else {
                    tape.affine(store, &hidden_name(l, "w"), &hidden_name(l, "b"), h)?
                };
                h = tape.tanh(h);
            }
            outs.push(tape.affine(store, "output.w", "output.b", h)?);
        }
        Ok(outs)
    }

    /// Output jet at `coords` (`coord_dim x batch`).
    pub fn predict_jet(&self, mu: &[f64], coords: &Matrix, seeds: &[Option<Channel>], channels: ChannelSet) -> Result<Jet> {
        let jet = Jet::seed(coords, seeds, channels)?;
        let mut tape = Tape::new();
        let out = self.record(&self.store, &mut tape, mu, vec![jet])?;
        Ok(tape.value(out[0]).clone())
    }

    /// Output values at `coords`.
    pub fn predict(&self, mu: &[f64], coords: &Matrix) -> Result<Vec<f64>> {
        let seeds = vec![None; coords.rows()];
        Ok(self.predict_jet(mu, coords, &seeds, ChannelSet::value_only())?.value().to_vec())
    }

    /// Sum of orthogonality penalties over the low-rank layers, with
    /// gradients for whichever `U`/`V` are trainable.
    pub fn ortho(&self, w1: f64, w2: f64) -> Result<(f64, Grads)> {
        let mut total = 0.0;
        let mut grads = Grads::new();
        if !self.kind.is_low_rank() || (w1 == 0.0 && w2 == 0.0) {
            return Ok((total, grads));
        }
        for l in 0..self.arch.hidden {
            let (value, gu, gv) = ortho_penalty_grad(&self.low_rank_layer(l)?, w1, w2);
            total += value;
            for (part, g) in [("u", gu), ("v", gv)] {
                let name = hidden_name(l, part);
                if self.store.is_trainable(&name) {
                    grads.insert(name, g);
                }
            }
        }
        Ok((total, grads))
    }

    /// `||U^T U - I||_F` and `||V^T V - I||_F` per low-rank layer.
    pub fn ortho_defects(&self) -> Result<Vec<(f64, f64)>> {
        (0..self.arch.hidden)
            .map(|l| {
                let layer = self.low_rank_layer(l)?;
                Ok((
                    gram_defect(&layer.u)?.frobenius_norm(),
                    gram_defect(&layer.v)?.frobenius_norm(),
                ))
            })
            .collect()
    }

    /// Phase-2 model for `mu_target`: the coefficients become free
    /// parameters initialized from the hypernetwork, basis columns whose
    /// coefficient the ReLU zeroed are dropped, and only the coefficients and
    /// the input/output layers remain trainable.
    pub fn phase2_convert(&self, mu_target: &[f64]) -> Result<Model> {
        if self.kind != ModelKind::HyperLrPinn || self.phase != Phase::One {
            return Err(Error::Argument("phase-2 conversion needs a phase-1 Hyper-LR-PINN".into()));
        }
        let s = self.hyper_forward(mu_target)?;
        let mut out = self.clone();
        for (l, sl) in s.iter().enumerate() {
            let keep: Vec<usize> = (0..sl.len()).filter(|&i| sl[i] > 0.0).collect();
            for part in ["u", "v"] {
                let name = hidden_name(l, part);
                let reduced = select_columns(self.store.get(&name)?, &keep);
                *out.store.get_mut(&name)? = reduced;
            }
            let kept: Vec<f64> = keep.iter().map(|&i| sl[i]).collect();
            out.store.insert(phase2_s_name(l), Matrix::column(&kept), true)?;
        }
        out.phase = Phase::Two;
        out.apply_ledger()?;
        Ok(out)
    }

    /// Per-layer rank actually used by the forward pass.
    pub fn active_ranks(&self, mu: &[f64]) -> Result<Vec<usize>> {
        Ok(nnz_ranks(&self.coefficients(mu)?, 0.0))
    }

    /// The same function as a vanilla dense network, with every factored
    /// hidden weight materialized at the coefficients for `mu`.
    pub fn materialize_dense(&self, mu: &[f64]) -> Result<Model> {
        let s = self.coefficients(mu)?;
        let mut store = ParamStore::new();
        for name in ["input.w", "input.b"] {
            store.insert(name, self.store.get(name)?.clone(), true)?;
        }
        for (l, sl) in s.iter().enumerate() {
            let layer = self.low_rank_layer(l)?;
            store.insert(hidden_name(l, "w"), layer.effective_weight(sl)?, true)?;
            store.insert(hidden_name(l, "b"), Matrix::column(&layer.b), true)?;
        }
        for name in ["output.w", "output.b"] {
            store.insert(name, self.store.get(name)?.clone(), true)?;
        }
        Ok(Model {
            kind: ModelKind::VanillaPinn,
            arch: Arch {
                embed_layers: 0,
                embed_width: 0,
                mu_dim: 0,
                ..self.arch
            },
            phase: Phase::Baseline,
            store,
        })
    }

    /// Rank-`r` SVD truncation of every hidden layer of a dense PINN,
    /// giving a naive low-rank PINN whose coefficients start at the retained
    /// singular values.
    pub fn svd_truncated(&self, r: usize) -> Result<Model> {
        if self.kind != ModelKind::VanillaPinn {
            return Err(Error::Argument("SVD truncation applies to vanilla PINNs".into()));
        }
        let mut store = ParamStore::new();
        for name in ["input.w", "input.b"] {
            store.insert(name, self.store.get(name)?.clone(), true)?;
        }
        for l in 0..self.arch.hidden {
            let dense = self.dense_layer(&format!("hidden.{l}"), Activation::Tanh)?;
            let (lr, s) = svd_truncate(&dense, r)?;
            store.insert(hidden_name(l, "u"), lr.u, true)?;
            store.insert(hidden_name(l, "v"), lr.v, true)?;
            store.insert(hidden_name(l, "s"), Matrix::column(&s), true)?;
            store.insert(hidden_name(l, "b"), Matrix::column(&lr.b), true)?;
        }
        for name in ["output.w", "output.b"] {
            store.insert(name, self.store.get(name)?.clone(), true)?;
        }
        let mut model = Model {
            kind: ModelKind::NaiveLrPinn,
            arch: Arch { rank: r, ..self.arch },
            phase: Phase::Baseline,
            store,
        };
        model.apply_ledger()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{param_grad, ChannelSet, LossOutput};

    fn rng() -> Rng {
        Rng::new(7)
    }

    fn hyper_small(hidden: usize, rank: usize, rng: &mut Rng) -> Model {
        let arch = Arch {
            width: 6,
            hidden,
            rank,
            embed_layers: 2,
            embed_width: 4,
            mu_dim: 3,
            ..Arch::hyper(3)
        };
        let mut m = init_model(ModelKind::HyperLrPinn, arch, rng).unwrap();
        // Random heads so that the hypernetwork path matters.
        for l in 0..hidden {
            let w = Matrix::from_fn(rank, 4, |_, _| rng.normal() * 0.5);
            *m.store.get_mut(&head_name(l, "w")).unwrap() = w;
            let b = Matrix::from_fn(rank, 1, |_, _| 0.5 + rng.uniform());
            *m.store.get_mut(&head_name(l, "b")).unwrap() = b;
            let hb = Matrix::from_fn(6, 1, |_, _| rng.normal() * 0.2);
            *m.store.get_mut(&hidden_name(l, "b")).unwrap() = hb;
        }
        m
    }

    #[test]
    fn hyper_forward_relu_kill_and_constant() {
        let mut m = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut rng()).unwrap();
        for c in [-1.0, 0.7] {
            for l in 0..3 {
                *m.store.get_mut(&head_name(l, "b")).unwrap() = Matrix::column(&[c; 50]);
            }
            for mu in [1.0, 30.0] {
                let s = m.hyper_forward(&[mu]).unwrap();
                assert!(s.iter().all(|row| row.iter().all(|v| *v == c.max(0.0))));
            }
        }
        let m = hyper_small(3, 4, &mut rng());
        assert_ne!(m.hyper_forward(&[1.0, 0.0, 0.0]).unwrap(), m.hyper_forward(&[2.0, 0.5, 1.0]).unwrap());
        assert!(m.hyper_forward(&[1.0]).is_err());
    }

    #[test]
    fn fresh_model_has_full_rank_and_orthonormal_bases() {
        let m = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut rng()).unwrap();
        assert_eq!(m.active_ranks(&[5.0]).unwrap(), vec![50, 50, 50]);
        for l in 0..3 {
            assert!(ortho_penalty(&m.low_rank_layer(l).unwrap(), 1.0, 1.0) < 1e-20);
        }
        let again = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut rng()).unwrap();
        assert_eq!(m, again);
        let bound = (6.0f64 / 52.0).sqrt();
        assert!(m.store.get("input.w").unwrap().as_slice().iter().all(|w| w.abs() <= bound));
        let bound = (6.0f64 / 100.0).sqrt();
        let v = init_model(ModelKind::VanillaPinn, Arch::vanilla(), &mut rng()).unwrap();
        assert!(v.store.get("hidden.2.w").unwrap().as_slice().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn parameter_counts() {
        let v = init_model(ModelKind::VanillaPinn, Arch::vanilla(), &mut rng()).unwrap();
        assert_eq!(v.count_params(), 10_401);
        for (r, want) in [(50, 501), (10, 381)] {
            let n = init_model(ModelKind::NaiveLrPinn, Arch::naive(r), &mut rng()).unwrap();
            assert_eq!(n.count_params(), want);
            // U, V, s storage of the trunk: (2 n + 1) r L.
            let stored: usize = n
                .store
                .iter()
                .filter(|(name, _)| name.starts_with("hidden.") && !name.ends_with(".b"))
                .map(|(_, p)| p.tensor.len())
                .sum();
            assert_eq!(stored, (2 * 50 + 1) * r * 3);
        }
        let p = init_model(ModelKind::PinnP, Arch::pinn_p(3), &mut rng()).unwrap();
        assert_eq!(p.count_params(), 10_401 + 3 * 50);
    }

    #[test]
    fn effective_weight_identities() {
        let mut r = rng();
        let layer = LowRankLayer::new(
            Matrix::from_fn(7, 4, |_, _| r.normal()),
            Matrix::from_fn(5, 4, |_, _| r.normal()),
            vec![0.0; 7],
        )
        .unwrap();
        let zero = layer.effective_weight(&[0.0; 4]).unwrap();
        assert!(zero.as_slice().iter().all(|v| *v == 0.0));
        let s = [0.3, -1.0, 2.0, 0.1];
        let h = Matrix::from_fn(5, 3, |_, _| r.normal());
        let dense = layer.effective_weight(&s).unwrap().matmul(&h).unwrap();
        let fact = layer.factored_apply(&s, &h).unwrap();
        assert!(dense.sub(&fact).unwrap().as_slice().iter().all(|v| v.abs() <= 1e-12));
        let id = LowRankLayer::new(Matrix::identity(4), Matrix::identity(4), vec![0.0; 4]).unwrap();
        assert_eq!(id.effective_weight(&[1.0; 4]).unwrap(), Matrix::identity(4));
        assert!(layer.effective_weight(&[1.0; 3]).is_err());
    }

    #[test]
    fn zero_weights_give_constant_output() {
        let mut m = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut rng()).unwrap();
        let names: Vec<String> = m.store.names().map(str::to_string).collect();
        for n in names {
            m.store.get_mut(&n).unwrap().as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        *m.store.get_mut("output.b").unwrap() = Matrix::column(&[1.25]);
        let coords = Matrix::from_fn(2, 5, |i, j| (i + j) as f64 * 0.3);
        let set = ChannelSet::new(&[Channel::Dx, Channel::Dt, Channel::Dxx]).unwrap();
        let jet = m.predict_jet(&[4.0], &coords, &[Some(Channel::Dx), Some(Channel::Dt)], set).unwrap();
        assert!(jet.value().iter().all(|v| *v == 1.25));
        for c in [Channel::Dx, Channel::Dt, Channel::Dxx] {
            assert!(jet.channel(c).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn factored_model_matches_dense_materialization() {
        let m = hyper_small(1, 6, &mut rng());
        let mu = [0.4, 0.1, -0.2];
        let dense = m.materialize_dense(&mu).unwrap();
        let coords = Matrix::from_fn(2, 9, |i, j| (j as f64 * 0.37 + i as f64).sin());
        let set = ChannelSet::new(&[Channel::Dx, Channel::Dt, Channel::Dxx]).unwrap();
        let seeds = [Some(Channel::Dx), Some(Channel::Dt)];
        let a = m.predict_jet(&mu, &coords, &seeds, set.clone()).unwrap();
        let b = dense.predict_jet(&[], &coords, &seeds, set).unwrap();
        let diff = a.matrix().sub(b.matrix()).unwrap();
        assert!(diff.as_slice().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn jet_channels_match_finite_differences() {
        let m = hyper_small(2, 3, &mut rng());
        let mu = [1.0, 0.2, 0.5];
        let (x, t) = (0.8, 0.3);
        let set = ChannelSet::new(&[Channel::Dx, Channel::Dt, Channel::Dxx]).unwrap();
        let jet = m
            .predict_jet(&mu, &Matrix::column(&[x, t]), &[Some(Channel::Dx), Some(Channel::Dt)], set)
            .unwrap();
        let f = |x: f64, t: f64| m.predict(&mu, &Matrix::column(&[x, t])).unwrap()[0];
        let h = 1e-4;
        let fx = (f(x + h, t) - f(x - h, t)) / (2.0 * h);
        let ft = (f(x, t + h) - f(x, t - h)) / (2.0 * h);
        let fxx = (f(x + h, t) - 2.0 * f(x, t) + f(x - h, t)) / (h * h);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        assert!(rel(jet.channel(Channel::Dx).unwrap()[0], fx) <= 1e-5);
        assert!(rel(jet.channel(Channel::Dt).unwrap()[0], ft) <= 1e-5);
        assert!(rel(jet.channel(Channel::Dxx).unwrap()[0], fxx) <= 1e-5);
    }

    fn half_sq_loss(outs: &[&Jet]) -> Result<LossOutput> {
        let j = outs[0];
        let total = 0.5 * j.matrix().as_slice().iter().map(|v| v * v).sum::<f64>();
        Ok(LossOutput {
            terms: vec![("half_sq".into(), total)],
            adjoints: vec![j.clone()],
        })
    }

    #[test]
    fn gradients_through_the_hypernetwork_match_finite_differences() {
        let m = hyper_small(2, 3, &mut rng());
        let mu = [1.0, 0.2, 0.5];
        let coords = Matrix::from_fn(2, 4, |i, j| 0.2 + 0.3 * j as f64 - 0.1 * i as f64);
        let set = ChannelSet::new(&[Channel::Dx, Channel::Dt, Channel::Dxx]).unwrap();
        let seeds = [Some(Channel::Dx), Some(Channel::Dt)];
        let input = Jet::seed(&coords, &seeds, set).unwrap();
        let loss_of = |store: &ParamStore| {
            let mut tape = Tape::new();
            let out = m.record(store, &mut tape, &mu, vec![input.clone()]).unwrap();
            half_sq_loss(&[tape.value(out[0])]).unwrap().total()
        };
        let (_, grads) = param_grad(&m.store, |t, st| m.record(st, t, &mu, vec![input.clone()]), half_sq_loss).unwrap();
        assert_eq!(grads.len(), m.store.trainable_names().len());
        let mut worst = 0.0f64;
        for (name, g) in &grads {
            for k in 0..g.len() {
                let p0 = m.store.get(name).unwrap().as_slice()[k];
                let h = 1e-4 * p0.abs().max(1.0);
                let mut plus = m.store.clone();
                plus.get_mut(name).unwrap().as_mut_slice()[k] = p0 + h;
                let mut minus = m.store.clone();
                minus.get_mut(name).unwrap().as_mut_slice()[k] = p0 - h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = g.as_slice()[k];
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-3));
            }
        }
        assert!(worst <= 1e-5, "worst {worst}");
    }

    #[test]
    fn ortho_penalty_closed_form_and_gradient() {
        let n = 5;
        let mut u = Matrix::identity(n);
        u.scale(2.0);
        let layer = LowRankLayer::new(u, Matrix::identity(n), vec![0.0; n]).unwrap();
        assert!((ortho_penalty(&layer, 1.0, 1.0) - 9.0 * n as f64).abs() < 1e-12);

        let mut r = rng();
        let layer = LowRankLayer::new(
            Matrix::from_fn(6, 3, |_, _| r.normal()),
            Matrix::from_fn(6, 3, |_, _| r.normal()),
            vec![0.0; 6],
        )
        .unwrap();
        let (value, gu, gv) = ortho_penalty_grad(&layer, 1.0, 0.5);
        assert!((value - ortho_penalty(&layer, 1.0, 0.5)).abs() < 1e-12);
        for (which, g) in [(0, gu), (1, gv)] {
            for k in 0..g.len() {
                let bump = |d: f64| {
                    let mut l = layer.clone();
                    let m = if which == 0 { &mut l.u } else { &mut l.v };
                    m.as_mut_slice()[k] += d;
                    ortho_penalty(&l, 1.0, 0.5)
                };
                let h = 1e-5;
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = g.as_slice()[k];
                assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-3) <= 1e-6);
            }
        }
    }

    #[test]
    fn nnz_counts() {
        assert_eq!(nnz_ranks(&[vec![0.0; 4]], 0.0), vec![0]);
        assert_eq!(nnz_ranks(&[vec![1.0, 0.0, 3.0]], 0.0), vec![2]);
        assert_eq!(nnz_ranks(&[vec![1.0, 0.0, 3.0]], 1.0), vec![1]);
    }

    #[test]
    fn svd_truncation() {
        let diag = DenseLayer::new(Matrix::diag(&[3.0, 2.0, 1.0]), vec![0.0; 3], Activation::Tanh).unwrap();
        let (lr, s) = svd_truncate(&diag, 2).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12);
        let err = diag.w.sub(&lr.effective_weight(&s).unwrap()).unwrap().frobenius_norm();
        assert!((err - 1.0).abs() < 1e-10);
        assert!(svd_truncate(&diag, 4).is_err() && svd_truncate(&diag, 0).is_err());

        let mut r = rng();
        let w = Matrix::from_fn(50, 50, |_, _| r.normal());
        let dense = DenseLayer::new(w.clone(), vec![0.0; 50], Activation::Tanh).unwrap();
        let (full, s) = svd_truncate(&dense, 50).unwrap();
        let back = full.effective_weight(&s).unwrap();
        assert!(w.sub(&back).unwrap().frobenius_norm() <= 1e-10 * w.frobenius_norm());
        let (lr, s10) = svd_truncate(&dense, 10).unwrap();
        let err = w.sub(&lr.effective_weight(&s10).unwrap()).unwrap().frobenius_norm().powi(2);
        let tail: f64 = s[10..].iter().map(|v| v * v).sum();
        assert!((err - tail).abs() <= 1e-10 * tail.max(1.0), "{err} vs {tail}");
    }

    #[test]
    fn truncating_a_dense_pinn_at_full_rank_keeps_its_function() {
        let v = init_model(ModelKind::VanillaPinn, Arch { width: 8, ..Arch::vanilla() }, &mut rng()).unwrap();
        let n = v.svd_truncated(8).unwrap();
        assert_eq!(n.kind, ModelKind::NaiveLrPinn);
        let coords = Matrix::from_fn(2, 6, |i, j| (i * 7 + j) as f64 * 0.1);
        let a = v.predict(&[], &coords).unwrap();
        let b = n.predict(&[], &coords).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-10));
    }

    #[test]
    fn phase2_conversion_preserves_outputs_and_sets_the_ledger() {
        let mut m = hyper_small(3, 5, &mut rng());
        // Kill two coefficients of layer 1 so the conversion drops columns.
        let mut b = m.store.get(&head_name(1, "b")).unwrap().clone();
        b.as_mut_slice()[1] = -50.0;
        b.as_mut_slice()[3] = -50.0;
        *m.store.get_mut(&head_name(1, "b")).unwrap() = b;
        let mu = [0.9, 0.1, 0.4];
        let p2 = m.phase2_convert(&mu).unwrap();
        let ranks = p2.active_ranks(&mu).unwrap();
        assert_eq!(ranks, nnz_ranks(&m.hyper_forward(&mu).unwrap(), 0.0));
        assert!(ranks[1] <= 3);
        let coords = Matrix::from_fn(2, 30, |i, j| ((i + 1) * j) as f64 * 0.07);
        let set = ChannelSet::new(&[Channel::Dx, Channel::Dt, Channel::Dxx]).unwrap();
        let seeds = [Some(Channel::Dx), Some(Channel::Dt)];
        let before = m.predict_jet(&mu, &coords, &seeds, set.clone()).unwrap();
        let after = p2.predict_jet(&mu, &coords, &seeds, set).unwrap();
        assert_eq!(before.matrix().as_slice(), after.matrix().as_slice());
        let io = 6 * 2 + 6 + 6 + 1;
        assert_eq!(p2.count_params(), ranks.iter().sum::<usize>() + io);
        let mut trainable = p2.store.trainable_names();
        trainable.sort();
        assert_eq!(
            trainable,
            vec!["input.b", "input.w", "output.b", "output.w", "phase2.s.0", "phase2.s.1", "phase2.s.2"]
        );
        assert!(p2.phase2_convert(&mu).is_err());
    }
}
