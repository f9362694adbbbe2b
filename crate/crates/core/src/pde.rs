//! Parameterized convection-diffusion-reaction (CDR) and 2D Helmholtz
//! problems: residual operators, initial/boundary data and presets.

use crate::diffcore::{Channel, Jet, JetMode, Matrix};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Coefficients of `u_t + beta u_x - nu u_xx - rho u (1 - u) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdrParams {
    pub beta: f64,
    pub nu: f64,
    pub rho: f64,
}

impl CdrParams {
    pub fn new(beta: f64, nu: f64, rho: f64) -> Result<Self> {
        let p = Self { beta, nu, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.nu.is_finite() && self.rho.is_finite()) {
            return Err(Error::Argument(format!("non-finite CDR coefficients {self:?}")));
        }
        if self.nu < 0.0 {
            return Err(Error::Argument(format!("negative diffusion nu = {}", self.nu)));
        }
        Ok(())
    }
}

/// Parameters of `u_xx + u_yy + k^2 u - q(x, y; a1, a2) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelmholtzParams {
    pub a1: f64,
    pub a2: f64,
    pub k: f64,
}

impl HelmholtzParams {
    pub fn new(a1: f64, a2: f64, k: f64) -> Result<Self> {
        let p = Self { a1, a2, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a1.is_finite() && self.a2.is_finite() && self.k.is_finite()) || self.k == 0.0 {
            return Err(Error::Argument(format!("invalid Helmholtz parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Convection,
    Diffusion,
    Reaction,
    ConvDiff,
    ReacDiff,
    Cdr,
    Helmholtz2D,
}

impl Family {
    pub fn mode(self) -> JetMode {
        match self {
            Family::Helmholtz2D => JetMode::Space2D,
            _ => JetMode::Space1DTime,
        }
    }

    /// Length of the coefficient vector fed to the hypernetwork.
    pub fn mu_dim(self) -> usize {
        match self {
            Family::ConvDiff | Family::ReacDiff | Family::Cdr => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Params {
    Cdr(CdrParams),
    Helmholtz(HelmholtzParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    /// `1 + sin(x)`.
    OnePlusSin,
    /// Unnormalized bump `exp(-(x - pi)^2 / (2 sigma^2))`.
    Gaussian { sigma: f64 },
}

impl InitialCondition {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialCondition::OnePlusSin => 1.0 + x.sin(),
            InitialCondition::Gaussian { sigma } => (-(x - PI).powi(2) / (2.0 * sigma * sigma)).exp(),
        }
    }

    /// `(u0, u0', u0'')` at `x`.
    pub fn eval_derivs(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            InitialCondition::OnePlusSin => (1.0 + x.sin(), x.cos(), -x.sin()),
            InitialCondition::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let g = self.eval(x);
                let d = x - PI;
                (g, -d / s2 * g, (d * d / (s2 * s2) - 1.0 / s2) * g)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    /// `u(0, t) = u(2 pi, t)`.
    Periodic,
    /// Dirichlet values taken from the exact solution.
    DirichletFromExact,
}

/// A fully specified PDE instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub family: Family,
    pub params: Params,
    pub ic: Option<InitialCondition>,
    pub bc: BoundaryCondition,
    /// Final time for time-dependent problems.
    pub t_final: f64,
}

pub const T_FINAL: f64 = 1.0;
/// Helmholtz domain is `[HELMHOLTZ_LO, HELMHOLTZ_HI]^2`.
pub const HELMHOLTZ_LO: f64 = -1.0;
pub const HELMHOLTZ_HI: f64 = 1.0;
pub const HELMHOLTZ_K: f64 = 1.0;

impl ProblemSpec {
    /// Named preset with the swept coefficient(s) set from `mu`.
    ///
    /// | preset       | mu            | fixed                 | IC                |
    /// |--------------|---------------|-----------------------|-------------------|
    /// | `convection` | `[beta]`      | nu = rho = 0          | `1 + sin x`       |
    /// | `diffusion`  | `[nu]`        | beta = rho = 0        | Gaussian(pi/2)    |
    /// | `reaction`   | `[rho]`       | beta = nu = 0         | Gaussian(pi/4)    |
    /// | `conv-diff`  | `[beta,nu,rho]` | rho = 0             | Gaussian(pi/2)    |
    /// | `reac-diff`  | `[beta,nu,rho]` | beta = 0            | Gaussian(pi/4)    |
    /// | `cdr`        | `[beta,nu,rho]` |                     | Gaussian(pi/2)    |
    /// | `helmholtz`  | `[a]`         | a1 = a2 = a, k = 1    |                   |
    pub fn preset(name: &str, mu: &[f64]) -> Result<Self> {
        let family = match name {
            "convection" => Family::Convection,
            "diffusion" => Family::Diffusion,
            "reaction" => Family::Reaction,
            "conv-diff" => Family::ConvDiff,
            "reac-diff" => Family::ReacDiff,
            "cdr" => Family::Cdr,
            "helmholtz" => Family::Helmholtz2D,
            other => return Err(Error::Config(format!("unknown problem preset '{other}'"))),
        };
        let base = ProblemSpec::default_for(family);
        base.with_mu(mu)
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "convection",
            "diffusion",
            "reaction",
            "conv-diff",
            "reac-diff",
            "cdr",
            "helmholtz",
        ]
    }

    pub fn preset_name(&self) -> &'static str {
        match self.family {
            Family::Convection => "convection",
            Family::Diffusion => "diffusion",
            Family::Reaction => "reaction",
            Family::ConvDiff => "conv-diff",
            Family::ReacDiff => "reac-diff",
            Family::Cdr => "cdr",
            Family::Helmholtz2D => "helmholtz",
        }
    }

    fn default_for(family: Family) -> Self {
        let wide = InitialCondition::Gaussian { sigma: PI / 2.0 };
        let narrow = InitialCondition::Gaussian { sigma: PI / 4.0 };
        let cdr = |beta, nu, rho, ic| ProblemSpec {
            family,
            params: Params::Cdr(CdrParams { beta, nu, rho }),
            ic: Some(ic),
            bc: BoundaryCondition::Periodic,
            t_final: T_FINAL,
        };
        match family {
            Family::Convection => cdr(1.0, 0.0, 0.0, InitialCondition::OnePlusSin),
            Family::Diffusion => cdr(0.0, 1.0, 0.0, wide),
            Family::Reaction => cdr(0.0, 0.0, 1.0, narrow),
            Family::ConvDiff => cdr(1.0, 1.0, 0.0, wide),
            Family::ReacDiff => cdr(0.0, 1.0, 5.0, narrow),
            Family::Cdr => cdr(1.0, 1.0, 1.0, wide),
            Family::Helmholtz2D => ProblemSpec {
                family,
                params: Params::Helmholtz(HelmholtzParams {
                    a1: 1.0,
                    a2: 1.0,
                    k: HELMHOLTZ_K,
                }),
                ic: None,
                bc: BoundaryCondition::DirichletFromExact,
                t_final: 0.0,
            },
        }
    }

    /// Copy of this problem with the hypernetwork coefficients replaced.
    pub fn with_mu(&self, mu: &[f64]) -> Result<Self> {
        if mu.len() != self.family.mu_dim() {
            return Err(Error::Argument(format!(
                "{:?} expects {} coefficient(s), got {}",
                self.family,
                self.family.mu_dim(),
                mu.len()
            )));
        }
        let mut out = *self;
        match (&mut out.params, self.family) {
            (Params::Cdr(p), Family::Convection) => p.beta = mu[0],
            (Params::Cdr(p), Family::Diffusion) => p.nu = mu[0],
            (Params::Cdr(p), Family::Reaction) => p.rho = mu[0],
            (Params::Cdr(p), _) => {
                p.beta = mu[0];
                p.nu = mu[1];
                p.rho = mu[2];
            }
            (Params::Helmholtz(p), _) => {
                p.a1 = mu[0];
                p.a2 = mu[0];
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// Coefficient vector as seen by the hypernetwork (raw, unnormalized).
    pub fn mu(&self) -> Vec<f64> {
        match (self.params, self.family) {
            (Params::Cdr(p), Family::Convection) => vec![p.beta],
            (Params::Cdr(p), Family::Diffusion) => vec![p.nu],
            (Params::Cdr(p), Family::Reaction) => vec![p.rho],
            (Params::Cdr(p), _) => vec![p.beta, p.nu, p.rho],
            (Params::Helmholtz(p), _) => vec![p.a1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.params, self.family) {
            (Params::Cdr(p), f) if f != Family::Helmholtz2D => {
                p.validate()?;
                if self.ic.is_none() || self.bc != BoundaryCondition::Periodic {
                    return Err(Error::Argument("CDR problems need an IC and periodic BC".into()));
                }
                Ok(())
            }
            (Params::Helmholtz(p), Family::Helmholtz2D) => {
                p.validate()?;
                if self.bc != BoundaryCondition::DirichletFromExact {
                    return Err(Error::Argument("Helmholtz needs Dirichlet data".into()));
                }
                Ok(())
            }
            _ => Err(Error::Argument(format!(
                "parameters do not match family {:?}",
                self.family
            ))),
        }
    }

    pub fn mode(&self) -> JetMode {
        self.family.mode()
    }

    pub fn cdr(&self) -> Option<CdrParams> {
        match self.params {
            Params::Cdr(p) => Some(p),
            _ => None,
        }
    }

    pub fn helmholtz(&self) -> Option<HelmholtzParams> {
        match self.params {
            Params::Helmholtz(p) => Some(p),
            _ => None,
        }
    }

    /// Derivative channels the residual needs for this family.
    ///
    /// Channels are chosen per family rather than per coefficient value so
    /// that every task of a parameter sweep shares one layout.
    pub fn residual_channels(&self) -> Vec<Channel> {
        match self.family {
            Family::Convection => vec![Channel::Value, Channel::Dx, Channel::Dt],
            Family::Reaction => vec![Channel::Value, Channel::Dt],
            Family::Diffusion | Family::ConvDiff | Family::ReacDiff | Family::Cdr => {
                vec![Channel::Value, Channel::Dx, Channel::Dt, Channel::Dxx]
            }
            Family::Helmholtz2D => JetMode::Space2D.full_channels(),
        }
    }

    /// Derivative tag for each coordinate input row.
    pub fn coordinate_seeds(&self) -> [Option<Channel>; 2] {
        match self.mode() {
            JetMode::Space1DTime => [Some(Channel::Dx), Some(Channel::Dt)],
            JetMode::Space2D => [Some(Channel::Dx), Some(Channel::Dy)],
        }
    }

    /// Exact solution where one is available in closed form.
    pub fn exact_solution(&self, c0: f64, c1: f64) -> Option<f64> {
        match self.params {
            Params::Helmholtz(p) => Some(helmholtz_solution(c0, c1, &p)),
            Params::Cdr(_) => None,
        }
    }
}

fn require<'a>(jet: &'a Jet, c: Channel, what: &str) -> Result<&'a [f64]> {
    jet.channel(c)
        .ok_or_else(|| Error::Mode(format!("{what} needs channel {c:?}")))
}

/// `u_t + beta u_x - nu u_xx - rho u (1 - u)` over the batch.
///
/// Channels multiplied by a zero coefficient may be absent.
pub fn cdr_residual(jet: &Jet, p: &CdrParams) -> Result<Vec<f64>> {
    if jet.width() != 1 {
        return Err(Error::Shape(format!("residual of a width-{} jet", jet.width())));
    }
    if !jet.fits(JetMode::Space1DTime) {
        return Err(Error::Mode("CDR residual on a 2D jet".into()));
    }
    let u = jet.value();
    let ut = require(jet, Channel::Dt, "CDR residual")?;
    let ux = if p.beta != 0.0 { Some(require(jet, Channel::Dx, "convection term")?) } else { None };
    let uxx = if p.nu != 0.0 { Some(require(jet, Channel::Dxx, "diffusion term")?) } else { None };
    Ok((0..u.len())
        .map(|j| {
            let mut r = ut[j] - p.rho * u[j] * (1.0 - u[j]);
            if let Some(ux) = ux {
                r += p.beta * ux[j];
            }
            if let Some(uxx) = uxx {
                r -= p.nu * uxx[j];
            }
            r
        })
        .collect())
}

/// Pulls `dL/dr` back through [`cdr_residual`] onto the jet's channels.
pub fn cdr_residual_adjoint(jet: &Jet, p: &CdrParams, grad_r: &[f64]) -> Result<Jet> {
    let u = jet.value();
    let mut adj = Jet::zeros(1, jet.batch(), jet.channels().clone());
    let cs = jet.channels().clone();
    let put = |adj: &mut Jet, c: Channel, f: &dyn Fn(usize) -> f64| {
        if let Some(ci) = cs.index(c) {
            adj.block_mut(0, ci).iter_mut().enumerate().for_each(|(j, v)| *v = f(j));
        }
    };
    put(&mut adj, Channel::Value, &|j| -p.rho * (1.0 - 2.0 * u[j]) * grad_r[j]);
    put(&mut adj, Channel::Dt, &|j| grad_r[j]);
    if p.beta != 0.0 {
        put(&mut adj, Channel::Dx, &|j| p.beta * grad_r[j]);
    }
    if p.nu != 0.0 {
        put(&mut adj, Channel::Dxx, &|j| -p.nu * grad_r[j]);
    }
    Ok(adj)
}

/// `(-(a1 pi)^2 - (a2 pi)^2 + k^2) sin(a1 pi x) sin(a2 pi y)`.
pub fn forcing_q(x: f64, y: f64, p: &HelmholtzParams) -> f64 {
    let (w1, w2) = (p.a1 * PI, p.a2 * PI);
    (-(w1 * w1) - w2 * w2 + p.k * p.k) * (w1 * x).sin() * (w2 * y).sin()
}

/// `sin(a1 pi x) sin(a2 pi y)`, the solution paired with [`forcing_q`].
pub fn helmholtz_solution(x: f64, y: f64, p: &HelmholtzParams) -> f64 {
    (p.a1 * PI * x).sin() * (p.a2 * PI * y).sin()
}

/// `u_xx + u_yy + k^2 u - q(x, y)`; `coords` is `2 x batch` holding `(x, y)`.
pub fn helmholtz_residual(jet: &Jet, p: &HelmholtzParams, coords: &Matrix) -> Result<Vec<f64>> {
    if jet.width() != 1 {
        return Err(Error::Shape(format!("residual of a width-{} jet", jet.width())));
    }
    if !jet.fits(JetMode::Space2D) {
        return Err(Error::Mode("Helmholtz residual on a space-time jet".into()));
    }
    if coords.rows() != 2 || coords.cols() != jet.batch() {
        return Err(Error::Shape("Helmholtz coordinates must be 2 x batch".into()));
    }
    let u = jet.value();
    let uxx = require(jet, Channel::Dxx, "Helmholtz residual")?;
    let uyy = require(jet, Channel::Dyy, "Helmholtz residual")?;
    let k2 = p.k * p.k;
    Ok((0..u.len())
        .map(|j| uxx[j] + uyy[j] + k2 * u[j] - forcing_q(coords.get(0, j), coords.get(1, j), p))
        .collect())
}

pub fn helmholtz_residual_adjoint(jet: &Jet, p: &HelmholtzParams, grad_r: &[f64]) -> Result<Jet> {
    let mut adj = Jet::zeros(1, jet.batch(), jet.channels().clone());
    let k2 = p.k * p.k;
    let cs = jet.channels().clone();
    for (c, scale) in [(Channel::Value, k2), (Channel::Dxx, 1.0), (Channel::Dyy, 1.0)] {
        let ci = cs
            .index(c)
            .ok_or_else(|| Error::Mode(format!("Helmholtz adjoint needs {c:?}")))?;
        adj.block_mut(0, ci)
            .iter_mut()
            .zip(grad_r)
            .for_each(|(v, g)| *v = scale * g);
    }
    Ok(adj)
}

/// Initial condition evaluated on a batch of `x` values in `[0, 2 pi]`.
pub fn initial_condition(spec: &ProblemSpec, xs: &[f64]) -> Result<Vec<f64>> {
    let ic = spec
        .ic
        .ok_or_else(|| Error::Argument(format!("{:?} has no initial condition", spec.family)))?;
    Ok(xs.iter().map(|&x| ic.eval(x)).collect())
}

/// Boundary sample layout produced by the sampler.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryPoints {
    /// Times at which `u(0, t)` is matched with `u(2 pi, t)`.
    Periodic { t: Vec<f64> },
    /// Points on the boundary with prescribed values.
    Dirichlet { coords: Matrix, values: Vec<f64> },
}

impl BoundaryPoints {
    /// Coordinates (`2 x n`) the model must be evaluated at. Periodic sets
    /// list the `x = 0` side first, then the `x = 2 pi` side.
    pub fn eval_coords(&self) -> Matrix {
        match self {
            BoundaryPoints::Periodic { t } => {
                let n = t.len();
                Matrix::from_fn(2, 2 * n, |i, j| match i {
                    0 if j < n => 0.0,
                    0 => TWO_PI,
                    _ => t[j % n],
                })
            }
            BoundaryPoints::Dirichlet { coords, .. } => coords.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BoundaryPoints::Periodic { t } => t.len(),
            BoundaryPoints::Dirichlet { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Residual of the boundary condition given model values at
/// [`BoundaryPoints::eval_coords`].
pub fn boundary_residual_from_values(points: &BoundaryPoints, u: &[f64]) -> Result<Vec<f64>> {
    match points {
        BoundaryPoints::Periodic { t } => {
            let n = t.len();
            if u.len() != 2 * n {
                return Err(Error::Shape("periodic boundary values".into()));
            }
            Ok((0..n).map(|j| u[j] - u[n + j]).collect())
        }
        BoundaryPoints::Dirichlet { values, .. } => {
            if u.len() != values.len() {
                return Err(Error::Shape("Dirichlet boundary values".into()));
            }
            Ok(u.iter().zip(values).map(|(a, b)| a - b).collect())
        }
    }
}

/// Boundary residual for an arbitrary model evaluator `eval(coords) -> u`.
pub fn boundary_residual<F>(spec: &ProblemSpec, points: &BoundaryPoints, eval: F) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    match (spec.bc, points) {
        (BoundaryCondition::Periodic, BoundaryPoints::Periodic { .. })
        | (BoundaryCondition::DirichletFromExact, BoundaryPoints::Dirichlet { .. }) => {}
        _ => return Err(Error::Argument("boundary points do not match the BC".into())),
    }
    let u = eval(&points.eval_coords())?;
    boundary_residual_from_values(points, &u)
}
