//! Single-file container of named `f64` arrays.
//!
//! Layout: the 4-byte magic `HLRP`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a UTF-8 JSON header, then every array's
//! entries as little-endian `f64` in row-major order, in header order.

use crate::diffcore::{Matrix, ParamStore, Rng};
use crate::error::{Error, Result};
use crate::models::{Arch, Model, ModelKind, Phase};
use crate::pde::{BoundaryPoints, ProblemSpec};
use crate::sampling::{CollocationSet, PointCounts};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HLRP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContainerKind {
    Dataset,
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainable: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ContainerKind,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub meta: serde_json::Value,
    pub arrays: Vec<(ArrayEntry, Matrix)>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            meta: self.meta.clone(),
            arrays: self.arrays.iter().map(|(e, _)| e.clone()).collect(),
        };
        let json = serde_json::to_vec_pretty(&header)?;
        let payload: usize = self.arrays.iter().map(|(_, m)| m.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (e, m) in &self.arrays {
            if (e.rows, e.cols) != (m.rows(), m.cols()) {
                return Err(Error::Shape(format!("array {} header disagrees with data", e.name)));
            }
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Format("truncated container".into());
        if bytes.len() < 16 {
            return Err(short());
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("not an HLRP container".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(short)?;
        let header: Header = serde_json::from_slice(&bytes[16..body])?;
        let mut pos = body;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n = e.rows.checked_mul(e.cols).ok_or_else(short)?;
            let end = n.checked_mul(8).and_then(|k| pos.checked_add(k)).filter(|&x| x <= bytes.len());
            let end = end.ok_or_else(short)?;
            let data = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos = end;
            let m = Matrix::from_vec(e.rows, e.cols, data)?;
            arrays.push((e, m));
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    fn expect(&self, kind: ContainerKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind:?} container, found {:?}", self.kind)));
        }
        Ok(())
    }

    fn take(&mut self, name: &str) -> Result<Matrix> {
        let i = self
            .arrays
            .iter()
            .position(|(e, _)| e.name == name)
            .ok_or_else(|| Error::Format(format!("missing array {name}")))?;
        Ok(self.arrays.remove(i).1)
    }
}

fn entry(name: &str, m: &Matrix, trainable: Option<bool>) -> ArrayEntry {
    ArrayEntry {
        name: name.to_string(),
        rows: m.rows(),
        cols: m.cols(),
        trainable,
    }
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    preset: String,
    kind: ModelKind,
    arch: Arch,
    phase: Phase,
    epoch: usize,
    rng_seed: u64,
    rng_counter: u64,
    /// PDE parameters a phase-2 model was converted at.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_target: Option<Vec<f64>>,
}

/// A model plus the training context needed to resume or evaluate it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub preset: String,
    pub model: Model,
    pub epoch: usize,
    pub rng: Rng,
    pub mu_target: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let (rng_seed, rng_counter) = self.rng.state();
        let meta = CheckpointMeta {
            preset: self.preset.clone(),
            kind: self.model.kind,
            arch: self.model.arch,
            phase: self.model.phase,
            epoch: self.epoch,
            rng_seed,
            rng_counter,
            mu_target: self.mu_target.clone(),
        };
        let arrays = self
            .model
            .store
            .iter()
            .map(|(name, p)| (entry(name, &p.tensor, Some(p.trainable)), p.tensor.clone()))
            .collect();
        Ok(Container {
            kind: ContainerKind::Checkpoint,
            meta: serde_json::to_value(meta)?,
            arrays,
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect(ContainerKind::Checkpoint)?;
        let meta: CheckpointMeta = serde_json::from_value(c.meta)?;
        meta.arch
            .validate(meta.kind)
            .map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
        let mut store = ParamStore::new();
        for (e, m) in c.arrays {
            let trainable = e
                .trainable
                .ok_or_else(|| Error::Format(format!("tensor {} lacks a trainable flag", e.name)))?;
            store.insert(e.name, m, trainable)?;
        }
        Ok(Self {
            preset: meta.preset,
            model: Model {
                kind: meta.kind,
                arch: meta.arch,
                phase: meta.phase,
                store,
            },
            epoch: meta.epoch,
            rng: Rng::from_state(meta.rng_seed, meta.rng_counter),
            mu_target: meta.mu_target,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    spec: ProblemSpec,
    seed: u64,
    counts: PointCounts,
}

pub fn dataset_to_container(set: &CollocationSet) -> Result<Container> {
    let meta = DatasetMeta {
        spec: set.spec,
        seed: set.seed,
        counts: set.counts(),
    };
    let mut arrays = vec![
        ("interior", set.interior.clone()),
        ("initial.x", row(&set.initial_x)),
        ("initial.u", row(&set.initial_u)),
    ];
    match &set.boundary {
        BoundaryPoints::Periodic { t } => arrays.push(("boundary.t", row(t))),
        BoundaryPoints::Dirichlet { coords, values } => {
            arrays.push(("boundary.coords", coords.clone()));
            arrays.push(("boundary.u", row(values)));
        }
    }
    arrays.push(("test", set.test.clone()));
    arrays.push(("test.u", row(&set.test_u)));
    Ok(Container {
        kind: ContainerKind::Dataset,
        meta: serde_json::to_value(meta)?,
        arrays: arrays.into_iter().map(|(n, m)| (entry(n, &m, None), m)).collect(),
    })
}

pub fn dataset_from_container(mut c: Container) -> Result<CollocationSet> {
    c.expect(ContainerKind::Dataset)?;
    let meta: DatasetMeta = serde_json::from_value(c.meta.clone())?;
    meta.spec.validate().map_err(|e| Error::Format(format!("dataset problem: {e}")))?;
    let boundary = if c.arrays.iter().any(|(e, _)| e.name == "boundary.t") {
        BoundaryPoints::Periodic {
            t: c.take("boundary.t")?.into_vec(),
        }
    } else {
        BoundaryPoints::Dirichlet {
            coords: c.take("boundary.coords")?,
            values: c.take("boundary.u")?.into_vec(),
        }
    };
    let set = CollocationSet {
        spec: meta.spec,
        seed: meta.seed,
        interior: c.take("interior")?,
        initial_x: c.take("initial.x")?.into_vec(),
        initial_u: c.take("initial.u")?.into_vec(),
        boundary,
        test: c.take("test")?,
        test_u: c.take("test.u")?.into_vec(),
    };
    if set.counts() != meta.counts || set.interior.rows() != 2 || set.test.rows() != 2 {
        return Err(Error::Format("dataset arrays disagree with the header counts".into()));
    }
    Ok(set)
}

pub fn save_dataset(set: &CollocationSet, path: &Path) -> Result<()> {
    dataset_to_container(set)?.save(path)
}

pub fn load_dataset(path: &Path) -> Result<CollocationSet> {
    dataset_from_container(Container::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_model;
    use crate::sampling::sample_collocation;

    fn checkpoint() -> Checkpoint {
        let mut rng = Rng::new(5);
        let model = init_model(ModelKind::HyperLrPinn, Arch::hyper(1), &mut rng).unwrap();
        Checkpoint {
            preset: "convection".into(),
            model,
            epoch: 17,
            rng,
            mu_target: None,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let ck = checkpoint();
        let bytes = ck.to_container().unwrap().to_bytes().unwrap();
        let back = Checkpoint::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.rng.state(), ck.rng.state());
        assert_eq!(back.epoch, 17);
        for ((a, pa), (b, pb)) in ck.model.store.iter().zip(back.model.store.iter()) {
            assert_eq!(a, b);
            assert_eq!(pa.trainable, pb.trainable);
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&pa.tensor), bits(&pb.tensor));
        }
        assert_eq!(back.to_container().unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = checkpoint().to_container().unwrap().to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::Version { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn truncation_and_bad_magic_are_format_errors() {
        let bytes = checkpoint().to_container().unwrap().to_bytes().unwrap();
        assert!(matches!(Container::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Container::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(Container::from_bytes(&bytes[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn datasets_round_trip_for_both_boundary_kinds() {
        for (preset, mu) in [("convection", 3.0), ("helmholtz", 2.5)] {
            let set = sample_collocation(&ProblemSpec::preset(preset, &[mu]).unwrap(), 4).unwrap();
            let bytes = dataset_to_container(&set).unwrap().to_bytes().unwrap();
            let back = dataset_from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, set);
        }
    }

    #[test]
    fn a_dataset_is_not_a_checkpoint() {
        let set = sample_collocation(&ProblemSpec::preset("convection", &[1.0]).unwrap(), 0).unwrap();
        let c = dataset_to_container(&set).unwrap();
        assert!(matches!(Checkpoint::from_container(c), Err(Error::Format(_))));
    }
}
