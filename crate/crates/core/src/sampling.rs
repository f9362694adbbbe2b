//! Collocation sets and PDE-parameter grids.

use crate::diffcore::{Matrix, Rng};
use crate::error::{Error, Result};
use crate::pde::{
    helmholtz_solution, initial_condition, BoundaryPoints, Family, ProblemSpec, HELMHOLTZ_HI, HELMHOLTZ_LO, TWO_PI,
};
use crate::reference::{reference_field, Grid, ReferenceField};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

const STREAM_INTERIOR: u64 = 1;
const STREAM_INITIAL: u64 = 2;
const STREAM_BOUNDARY: u64 = 3;
const STREAM_TEST: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCounts {
    pub initial: usize,
    pub boundary: usize,
    pub interior: usize,
    pub test: usize,
}

impl PointCounts {
    /// 256 initial / 100 boundary times / 1,000 interior / 1,000 test for
    /// space-time problems; 400 boundary / 1,000 interior / 10,000 test for
    /// Helmholtz.
    pub fn standard(family: Family) -> Self {
        match family {
            Family::Helmholtz2D => Self {
                initial: 0,
                boundary: 400,
                interior: 1000,
                test: 10_000,
            },
            _ => Self {
                initial: 256,
                boundary: 100,
                interior: 1000,
                test: 1000,
            },
        }
    }
}

/// Training and test points for one problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    pub spec: ProblemSpec,
    pub seed: u64,
    /// `2 x n` residual points.
    pub interior: Matrix,
    /// Initial-condition points `(x, 0)` and their `u0` values.
    pub initial_x: Vec<f64>,
    pub initial_u: Vec<f64>,
    pub boundary: BoundaryPoints,
    /// `2 x m` test points, each a node of the reference grid.
    pub test: Matrix,
    pub test_u: Vec<f64>,
}

impl CollocationSet {
    pub fn counts(&self) -> PointCounts {
        PointCounts {
            initial: self.initial_x.len(),
            boundary: self.boundary.len(),
            interior: self.interior.cols(),
            test: self.test.cols(),
        }
    }

    /// Every coordinate pair a training loss touches.
    pub fn training_points(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = (0..self.interior.cols())
            .map(|j| (self.interior.get(0, j), self.interior.get(1, j)))
            .collect();
        pts.extend(self.initial_x.iter().map(|&x| (x, 0.0)));
        let b = self.boundary.eval_coords();
        pts.extend((0..b.cols()).map(|j| (b.get(0, j), b.get(1, j))));
        pts
    }

    /// No test point coincides with a training point.
    pub fn is_disjoint(&self) -> bool {
        let train: HashSet<(u64, u64)> = self
            .training_points()
            .into_iter()
            .map(|(a, b)| (a.to_bits(), b.to_bits()))
            .collect();
        (0..self.test.cols()).all(|j| !train.contains(&(self.test.get(0, j).to_bits(), self.test.get(1, j).to_bits())))
    }
}

/// Standard-size collocation set with reference values from the family's
/// oracle.
pub fn sample_collocation(spec: &ProblemSpec, seed: u64) -> Result<CollocationSet> {
    let grid = Grid::standard(spec);
    let field = reference_field(spec, &grid)?;
    sample_collocation_with(spec, seed, PointCounts::standard(spec.family), &field)
}

/// Collocation set with explicit counts; test values come from `field`.
///
/// Interior, initial and boundary points are uniform random draws. Test
/// points are distinct grid nodes drawn from a separate stream (all nodes,
/// in order, when `counts.test` equals the grid size); a node that happens to
/// coincide with a training point is skipped.
pub fn sample_collocation_with(
    spec: &ProblemSpec,
    seed: u64,
    counts: PointCounts,
    field: &ReferenceField,
) -> Result<CollocationSet> {
    spec.validate()?;
    let root = Rng::new(seed);
    let helmholtz = spec.family == Family::Helmholtz2D;
    let (lo, hi) = if helmholtz {
        ([HELMHOLTZ_LO; 2], [HELMHOLTZ_HI; 2])
    } else {
        ([0.0, 0.0], [TWO_PI, spec.t_final])
    };

    let mut rng = root.fork(STREAM_INTERIOR);
    let mut interior = Matrix::zeros(2, counts.interior);
    for j in 0..counts.interior {
        for d in 0..2 {
            interior.set(d, j, rng.uniform_range(lo[d], hi[d]));
        }
    }

    let (initial_x, initial_u) = if helmholtz {
        (Vec::new(), Vec::new())
    } else {
        let mut rng = root.fork(STREAM_INITIAL);
        let xs: Vec<f64> = (0..counts.initial).map(|_| rng.uniform_range(0.0, TWO_PI)).collect();
        let us = initial_condition(spec, &xs)?;
        (xs, us)
    };

    let mut rng = root.fork(STREAM_BOUNDARY);
    let boundary = if helmholtz {
        let p = spec.helmholtz().expect("Helmholtz family");
        let mut coords = Matrix::zeros(2, counts.boundary);
        for j in 0..counts.boundary {
            let free = rng.uniform_range(HELMHOLTZ_LO, HELMHOLTZ_HI);
            let (x, y) = match j % 4 {
                0 => (HELMHOLTZ_LO, free),
                1 => (HELMHOLTZ_HI, free),
                2 => (free, HELMHOLTZ_LO),
                _ => (free, HELMHOLTZ_HI),
            };
            coords.set(0, j, x);
            coords.set(1, j, y);
        }
        let values = (0..counts.boundary)
            .map(|j| helmholtz_solution(coords.get(0, j), coords.get(1, j), &p))
            .collect();
        BoundaryPoints::Dirichlet { coords, values }
    } else {
        BoundaryPoints::Periodic {
            t: (0..counts.boundary).map(|_| rng.uniform_range(0.0, spec.t_final)).collect(),
        }
    };

    let mut set = CollocationSet {
        spec: *spec,
        seed,
        interior,
        initial_x,
        initial_u,
        boundary,
        test: Matrix::zeros(2, 0),
        test_u: Vec::new(),
    };
    let (test, test_u) = draw_test_nodes(&set, field, counts.test, root.fork(STREAM_TEST))?;
    set.test = test;
    set.test_u = test_u;
    Ok(set)
}

fn draw_test_nodes(set: &CollocationSet, field: &ReferenceField, n: usize, mut rng: Rng) -> Result<(Matrix, Vec<f64>)> {
    let grid = &field.grid;
    let total = grid.len();
    let train: HashSet<(u64, u64)> = set
        .training_points()
        .into_iter()
        .map(|(a, b)| (a.to_bits(), b.to_bits()))
        .collect();
    let usable = |k: usize| {
        let (x, y) = grid.node(k / grid.xs.len(), k % grid.xs.len());
        !train.contains(&(x.to_bits(), y.to_bits()))
    };
    let nodes: Vec<usize> = if n == total {
        (0..total).filter(|&k| usable(k)).collect()
    } else {
        let mut order: Vec<usize> = (0..total).collect();
        rng.shuffle(&mut order);
        order.into_iter().filter(|&k| usable(k)).take(n).collect()
    };
    if nodes.len() < n {
        return Err(Error::Argument(format!("cannot draw {n} test nodes from a grid of {total}")));
    }
    let mut coords = Matrix::zeros(2, n);
    let mut values = Vec::with_capacity(n);
    for (j, &k) in nodes.iter().enumerate() {
        let (row, col) = (k / grid.xs.len(), k % grid.xs.len());
        let (x, y) = grid.node(row, col);
        coords.set(0, j, x);
        coords.set(1, j, y);
        values.push(field.at(row, col));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite reference value".into()));
    }
    Ok((coords, values))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridRole {
    Phase1Train,
    Phase2Targets,
}

/// Ordered, duplicate-free list of PDE-parameter vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub role: GridRole,
    pub values: Vec<Vec<f64>>,
}

impl ParamGrid {
    pub fn new(role: GridRole, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("empty parameter grid".into()));
        }
        let dim = values[0].len();
        let mut seen = HashSet::new();
        for v in &values {
            if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Argument(format!("bad grid entry {v:?}")));
            }
            if !seen.insert(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()) {
                return Err(Error::Argument(format!("duplicate grid entry {v:?}")));
            }
        }
        Ok(Self { role, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.iter().map(Vec::as_slice)
    }

    /// Cartesian product of per-coordinate progressions, first axis slowest.
    pub fn product(role: GridRole, axes: &[Vec<f64>]) -> Result<Self> {
        let mut out: Vec<Vec<f64>> = vec![vec![]];
        for axis in axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        ParamGrid::new(role, out)
    }
}

/// Inclusive arithmetic progression `lo, lo + step, ...` up to `hi`; `hi`
/// itself is included when reachable to within rounding.
pub fn progression(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || lo > hi || step <= 0.0 {
        return Err(Error::Argument(format!("invalid progression ({lo}, {hi}, {step})")));
    }
    let span = (hi - lo) / step;
    let mut n = span.floor() as usize;
    if span - n as f64 > 1.0 - 1e-9 {
        n += 1;
    }
    Ok((0..=n)
        .map(|k| {
            let v = lo + k as f64 * step;
            // Strip accumulated binary noise such as 2.3000000000000003.
            let clean = (v * 1e9).round() / 1e9;
            if (clean - v).abs() <= 1e-9 * v.abs().max(1.0) {
                clean
            } else {
                v
            }
        })
        .collect())
}

/// Scalar-coefficient grid for a one-parameter family.
pub fn param_grid(family: Family, lo: f64, hi: f64, step: f64, role: GridRole) -> Result<ParamGrid> {
    if family.mu_dim() != 1 {
        return Err(Error::Argument(format!(
            "{family:?} takes {} coefficients; build its grid with ParamGrid::product",
            family.mu_dim()
        )));
    }
    ParamGrid::new(role, progression(lo, hi, step)?.into_iter().map(|v| vec![v]).collect())
}
