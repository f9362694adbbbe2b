//! Dense `f64` linear algebra, jet propagation, reverse adjoints for
//! parameter gradients, Adam, Jacobi SVD and a portable RNG.

pub mod adam;
pub mod jet;
pub mod matrix;
pub mod params;
pub mod rng;
pub mod svd;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use jet::{affine_jet, relu_jet, tanh_jet, Channel, ChannelSet, Jet, JetMode};
pub use matrix::{gemm, Matrix, Trans};
pub use params::{Grads, Param, ParamStore};
pub use rng::Rng;
pub use svd::{svd, Svd};
pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};

/// A scalar loss split into named terms, plus `dL/d(output)` for each
/// output jet the forward closure returned.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub terms: Vec<(String, f64)>,
    pub adjoints: Vec<Jet>,
}

impl LossOutput {
    pub fn total(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }
}

/// Loss value and gradients of every trainable parameter in `store`.
///
/// `forward` records the network on a fresh tape and returns its output
/// nodes; `loss` maps those output jets to a [`LossOutput`].
pub fn param_grad<F, L>(store: &ParamStore, forward: F, loss: L) -> Result<(f64, Grads)>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<Vec<NodeId>>,
    L: FnOnce(&[&Jet]) -> Result<LossOutput>,
{
    let mut tape = Tape::new();
    let outputs = forward(&mut tape, store)?;
    let jets: Vec<&Jet> = outputs.iter().map(|id| tape.value(*id)).collect();
    let out = loss(&jets)?;
    for (name, v) in &out.terms {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss term {name}")));
        }
    }
    if out.adjoints.len() != outputs.len() {
        return Err(Error::Shape(format!(
            "{} adjoints for {} outputs",
            out.adjoints.len(),
            outputs.len()
        )));
    }
    let total = out.total();
    let grads = tape.backward(store, outputs.into_iter().zip(out.adjoints).collect())?;
    Ok((total, grads))
}
