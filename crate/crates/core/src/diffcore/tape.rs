//! Reverse-mode adjoints over a graph of jet-valued nodes.
//!
//! Forward evaluation records each layer's output jet; [`Tape::backward`]
//! walks the records in reverse and returns gradients for every trainable
//! parameter that the graph touched. Frozen parameters are read but never
//! receive gradients, and subgraphs with nothing trainable upstream are
//! skipped entirely.

use super::jet::{add_bias, affine_jet, relu_jet, tanh_jet, Jet};
use super::matrix::{gemm, Matrix, Trans};
use super::params::{accumulate, Grads, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    /// A parameter column read as a value-only jet of batch 1.
    Param(String),
    Affine {
        w: String,
        b: String,
        x: NodeId,
    },
    LowRank {
        u: String,
        v: String,
        b: String,
        s: NodeId,
        x: NodeId,
        /// `V^T x`, kept for the adjoint of `s` and `V`.
        proj: Matrix,
    },
    Tanh(NodeId),
    Relu(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Jet,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(jet: &Jet, label: &str) -> Result<()> {
    if jet.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(label.to_string()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Jet {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Jet, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, jet: Jet) -> NodeId {
        self.push(Op::Input, jet, false)
    }

    /// Reads a parameter (`r x 1` or `r x n`) as a value-only jet.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let value = Jet::constant(store.get(name)?.clone());
        let needs = store.is_trainable(name);
        Ok(self.push(Op::Param(name.to_string()), value, needs))
    }

    pub fn affine(&mut self, store: &ParamStore, w: &str, b: &str, x: NodeId) -> Result<NodeId> {
        let wm = store.get(w)?;
        let bm = store.get(b)?;
        let out = affine_jet(wm, bm.as_slice(), self.value(x))?;
        check_finite(&out, w)?;
        let needs = self.nodes[x.0].needs_grad || store.is_trainable(w) || store.is_trainable(b);
        Ok(self.push(
            Op::Affine {
                w: w.to_string(),
                b: b.to_string(),
                x,
            },
            out,
            needs,
        ))
    }

    /// Factored layer `U (s ⊙ (V^T x)) + b`; `s` is a width-`r`, batch-1 node.
    pub fn low_rank(
        &mut self,
        store: &ParamStore,
        u: &str,
        v: &str,
        b: &str,
        s: NodeId,
        x: NodeId,
    ) -> Result<NodeId> {
        let (um, vm, bm) = (store.get(u)?, store.get(v)?, store.get(b)?);
        let sv = self.value(s).values();
        let input = self.value(x);
        let r = um.cols();
        if vm.cols() != r
            || sv.rows() != r
            || sv.cols() != 1
            || vm.rows() != input.width()
            || bm.len() != um.rows()
        {
            return Err(Error::Shape(format!(
                "low-rank {u}: U {:?}, V {:?}, s {:?}, b {}, input width {}",
                um.shape(),
                vm.shape(),
                sv.shape(),
                bm.len(),
                input.width()
            )));
        }
        let proj = vm.matmul_t(Trans::Yes, input.matrix(), Trans::No)?;
        let mut scaled = proj.clone();
        for (i, si) in sv.as_slice().iter().enumerate() {
            scaled.row_mut(i).iter_mut().for_each(|z| *z *= si);
        }
        let mut out = Jet::zeros(um.rows(), input.batch(), input.channels().clone());
        gemm(1.0, um, Trans::No, &scaled, Trans::No, 0.0, out.matrix_mut())?;
        add_bias(&mut out, bm.as_slice());
        check_finite(&out, u)?;
        let needs = self.nodes[x.0].needs_grad
            || self.nodes[s.0].needs_grad
            || store.is_trainable(u)
            || store.is_trainable(v)
            || store.is_trainable(b);
        Ok(self.push(
            Op::LowRank {
                u: u.to_string(),
                v: v.to_string(),
                b: b.to_string(),
                s,
                x,
                proj,
            },
            out,
            needs,
        ))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = tanh_jet(self.value(x));
        let needs = self.nodes[x.0].needs_grad;
        self.push(Op::Tanh(x), out, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = relu_jet(self.value(x));
        let needs = self.nodes[x.0].needs_grad;
        self.push(Op::Relu(x), out, needs)
    }

    /// Propagates output adjoints back to trainable parameters.
    ///
    /// Each seed pairs a node with `dL/d(node jet)` laid out exactly like the
    /// node's value (same width, batch and channels).
    pub fn backward(&self, store: &ParamStore, seeds: Vec<(NodeId, Jet)>) -> Result<Grads> {
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            let node = &self.nodes[id.0];
            if g.channels() != node.value.channels() || g.matrix().shape() != node.value.matrix().shape() {
                return Err(Error::Shape(format!("adjoint seed layout for node {}", id.0)));
            }
            add_adjoint(&mut adj, id, g.into_matrix())?;
        }

        let mut grads = Grads::new();
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = adj[idx].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param(name) => {
                    if store.is_trainable(name) {
                        accumulate(&mut grads, name, gout)?;
                    }
                }
                Op::Affine { w, b, x } => {
                    let xin = &self.nodes[x.0];
                    if store.is_trainable(w) {
                        let gw = gout.matmul_t(Trans::No, xin.value.matrix(), Trans::Yes)?;
                        accumulate(&mut grads, w, gw)?;
                    }
                    if store.is_trainable(b) {
                        accumulate(&mut grads, b, value_row_sums(&gout, node.value.batch()))?;
                    }
                    if xin.needs_grad {
                        let gx = store.get(w)?.matmul_t(Trans::Yes, &gout, Trans::No)?;
                        add_adjoint(&mut adj, *x, gx)?;
                    }
                }
                Op::LowRank { u, v, b, s, x, proj } => {
                    let um = store.get(u)?;
                    let vm = store.get(v)?;
                    let sv = self.nodes[s.0].value.values();
                    let xin = &self.nodes[x.0];
                    if store.is_trainable(b) {
                        accumulate(&mut grads, b, value_row_sums(&gout, node.value.batch()))?;
                    }
                    if store.is_trainable(u) {
                        let mut scaled = proj.clone();
                        for (i, si) in sv.as_slice().iter().enumerate() {
                            scaled.row_mut(i).iter_mut().for_each(|z| *z *= si);
                        }
                        let gu = gout.matmul_t(Trans::No, &scaled, Trans::Yes)?;
                        accumulate(&mut grads, u, gu)?;
                    }
                    // dL/d(s ⊙ proj)
                    let gscaled = um.matmul_t(Trans::Yes, &gout, Trans::No)?;
                    if self.nodes[s.0].needs_grad {
                        let gs: Vec<f64> = (0..gscaled.rows())
                            .map(|i| gscaled.row(i).iter().zip(proj.row(i)).map(|(a, p)| a * p).sum())
                            .collect();
                        add_adjoint(&mut adj, *s, Matrix::column(&gs))?;
                    }
                    if store.is_trainable(v) || xin.needs_grad {
                        let mut gproj = gscaled;
                        for (i, si) in sv.as_slice().iter().enumerate() {
                            gproj.row_mut(i).iter_mut().for_each(|z| *z *= si);
                        }
                        if store.is_trainable(v) {
                            let gv = xin.value.matrix().matmul_t(Trans::No, &gproj, Trans::Yes)?;
                            accumulate(&mut grads, v, gv)?;
                        }
                        if xin.needs_grad {
                            add_adjoint(&mut adj, *x, vm.matmul(&gproj)?)?;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let gin = tanh_adjoint(&self.nodes[x.0].value, &node.value, &gout);
                    add_adjoint(&mut adj, *x, gin)?;
                }
                Op::Relu(x) => {
                    let input = &self.nodes[x.0].value;
                    let mut gin = gout;
                    let n = input.batch();
                    let c = input.channels().len();
                    for row in 0..input.width() {
                        let z = input.block(row, 0);
                        let g = gin.row_mut(row);
                        for j in 0..n {
                            if z[j] <= 0.0 {
                                for ci in 0..c {
                                    g[ci * n + j] = 0.0;
                                }
                            }
                        }
                    }
                    add_adjoint(&mut adj, *x, gin)?;
                }
            }
        }
        Ok(grads)
    }
}

fn add_adjoint(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<()> {
    match &mut adj[id.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Bias gradient: sum of the value block of each row.
fn value_row_sums(g: &Matrix, batch: usize) -> Matrix {
    let sums: Vec<f64> = (0..g.rows()).map(|i| g.row(i)[..batch].iter().sum()).collect();
    Matrix::column(&sums)
}

/// Adjoint of [`tanh_jet`].
///
/// With `a = tanh z`, `s1 = 1 - a^2`, `s2 = -2 a s1`, `s3 = -2 s1^2 + 4 a^2 s1`,
/// the forward map is `d1' = s1 d1`, `d2' = s2 d1^2 + s1 d2`, so
/// `z̄ = ḡv s1 + Σ [ḡ1 s2 d1 + ḡ2 (s3 d1^2 + s2 d2)]`,
/// `d̄1 = ḡ1 s1 + 2 ḡ2 s2 d1`, `d̄2 = ḡ2 s1`.
fn tanh_adjoint(input: &Jet, output: &Jet, gout: &Matrix) -> Matrix {
    let pairs = input.channels().derivative_pairs();
    let n = input.batch();
    let mut gin = Matrix::zeros(gout.rows(), gout.cols());
    for row in 0..input.width() {
        let src = input.matrix().row(row);
        let a_row = output.block(row, 0);
        let g = gout.row(row);
        let dst = gin.row_mut(row);
        for j in 0..n {
            let a = a_row[j];
            let s1 = 1.0 - a * a;
            let s2 = -2.0 * a * s1;
            let mut gz = g[j] * s1;
            for &(c1, c2) in &pairs {
                let d1 = src[c1 * n + j];
                let g1 = g[c1 * n + j];
                gz += g1 * s2 * d1;
                let mut gd1 = g1 * s1;
                if let Some(c2) = c2 {
                    let s3 = -2.0 * s1 * s1 + 4.0 * a * a * s1;
                    let d2 = src[c2 * n + j];
                    let g2 = g[c2 * n + j];
                    gz += g2 * (s3 * d1 * d1 + s2 * d2);
                    gd1 += 2.0 * g2 * s2 * d1;
                    dst[c2 * n + j] = g2 * s1;
                }
                dst[c1 * n + j] = gd1;
            }
            dst[j] = gz;
        }
    }
    gin
}

/// Adjoint jet with the same layout as `like`, all zeros.
pub fn zero_adjoint(like: &Jet) -> Jet {
    Jet::zeros(like.width(), like.batch(), like.channels().clone())
}
