//! Ground-truth solutions on fixed grids: closed forms where they exist,
//! exact Fourier-mode evolution for linear periodic problems, and Strang
//! splitting for the full CDR equation.

use crate::diffcore::{Channel, Jet, Matrix};
use crate::error::{Error, Result};
use crate::pde::{
    helmholtz_solution, Family, HelmholtzParams, ProblemSpec, HELMHOLTZ_HI, HELMHOLTZ_LO, TWO_PI,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub const NX: usize = 256;
pub const NT: usize = 100;
pub const N2D: usize = 100;
pub const DEFAULT_SPLIT_DT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Analytic,
    Spectral,
    Splitting,
}

/// Tensor-product grid. For space-time problems `xs` covers `[0, 2 pi)` and
/// `ys` holds the time nodes; for 2D problems both cover the square.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Grid {
    /// `nx` periodic nodes on `[0, 2 pi)` by `nt` nodes on `[0, t_final]`.
    pub fn space_time(nx: usize, nt: usize, t_final: f64) -> Self {
        Self {
            xs: (0..nx).map(|i| TWO_PI * i as f64 / nx as f64).collect(),
            ys: (0..nt).map(|j| t_final * j as f64 / (nt - 1) as f64).collect(),
        }
    }

    pub fn square(n: usize) -> Self {
        let nodes: Vec<f64> = (0..n)
            .map(|i| HELMHOLTZ_LO + (HELMHOLTZ_HI - HELMHOLTZ_LO) * i as f64 / (n - 1) as f64)
            .collect();
        Self {
            xs: nodes.clone(),
            ys: nodes,
        }
    }

    /// Standard grid for a problem: 256 x 100 space-time or 100 x 100 square.
    pub fn standard(spec: &ProblemSpec) -> Self {
        match spec.family {
            Family::Helmholtz2D => Grid::square(N2D),
            _ => Grid::space_time(NX, NT, spec.t_final),
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of node `(row = y/t index, col = x index)`.
    pub fn node(&self, row: usize, col: usize) -> (f64, f64) {
        (self.xs[col], self.ys[row])
    }
}

/// Solution values on a [`Grid`]: `values.get(j, i)` is `u(xs[i], ys[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceField {
    pub grid: Grid,
    pub values: Matrix,
    pub provenance: Provenance,
}

impl ReferenceField {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values.get(row, col)
    }

    pub fn max_abs_diff(&self, other: &ReferenceField) -> f64 {
        self.values
            .as_slice()
            .iter()
            .zip(other.values.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn require_family(spec: &ProblemSpec, ok: &[Family], what: &str) -> Result<()> {
    if ok.contains(&spec.family) {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} does not apply to {:?}", spec.family)))
    }
}

/// `u(x, t) = u0((x - beta t) mod 2 pi)`.
pub fn convection_exact(spec: &ProblemSpec, grid: &Grid) -> Result<ReferenceField> {
    require_family(spec, &[Family::Convection], "convection_exact")?;
    let p = spec.cdr().expect("CDR family");
    let ic = spec.ic.expect("CDR problems carry an IC");
    let values = Matrix::from_fn(grid.ys.len(), grid.xs.len(), |j, i| {
        ic.eval((grid.xs[i] - p.beta * grid.ys[j]).rem_euclid(TWO_PI))
    });
    Ok(ReferenceField {
        grid: grid.clone(),
        values,
        provenance: Provenance::Analytic,
    })
}

/// Pointwise logistic solution `u0 e^{rho t} / (u0 e^{rho t} + 1 - u0)`.
#[inline]
pub fn logistic(u0: f64, rho: f64, t: f64) -> f64 {
    let g = (rho * t).exp();
    u0 * g / (u0 * g + 1.0 - u0)
}

pub fn reaction_exact(spec: &ProblemSpec, grid: &Grid) -> Result<ReferenceField> {
    require_family(spec, &[Family::Reaction], "reaction_exact")?;
    let p = spec.cdr().expect("CDR family");
    let ic = spec.ic.expect("CDR problems carry an IC");
    let u0: Vec<f64> = grid.xs.iter().map(|&x| ic.eval(x)).collect();
    if let Some(bad) = u0.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("logistic solution needs u0 in [0, 1], got {bad}")));
    }
    let values = Matrix::from_fn(grid.ys.len(), grid.xs.len(), |j, i| logistic(u0[i], p.rho, grid.ys[j]));
    Ok(ReferenceField {
        grid: grid.clone(),
        values,
        provenance: Provenance::Analytic,
    })
}

/// In-place radix-2 FFT; `inverse` applies the conjugate transform and the
/// `1/n` normalization.
pub fn fft(buf: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = buf.len();
    if !n.is_power_of_two() {
        return Err(Error::Argument(format!("FFT length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * TWO_PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, ang * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
    }
    Ok(())
}

/// Signed integer wavenumber of FFT bin `j` on a `2 pi`-periodic domain.
fn wavenumber(j: usize, n: usize) -> f64 {
    if j < n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

/// Exact evolution of `u_t + beta u_x - nu u_xx = 0` over time `dt` in
/// Fourier space. The Nyquist bin keeps only its real (cosine) part.
fn advance_convdiff(u: &mut [f64], beta: f64, nu: f64, dt: f64) -> Result<()> {
    let n = u.len();
    let mut hat: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut hat, false)?;
    for (j, z) in hat.iter_mut().enumerate() {
        let k = wavenumber(j, n);
        let decay = (-nu * k * k * dt).exp();
        *z *= if j == n / 2 {
            Complex64::new(decay * (beta * k * dt).cos(), 0.0)
        } else {
            Complex64::from_polar(decay, -beta * k * dt)
        };
    }
    fft(&mut hat, true)?;
    u.iter_mut().zip(&hat).for_each(|(v, z)| *v = z.re);
    Ok(())
}

fn require_uniform_periodic(grid: &Grid) -> Result<()> {
    let n = grid.xs.len();
    if !n.is_power_of_two() || grid.xs[0] != 0.0 {
        return Err(Error::Argument("spectral solvers need 2^k periodic nodes starting at 0".into()));
    }
    Ok(())
}

/// Exact Fourier-mode solution of the linear (rho = 0) CDR problem.
pub fn convdiff_spectral(spec: &ProblemSpec, grid: &Grid) -> Result<ReferenceField> {
    require_family(
        spec,
        &[Family::Convection, Family::Diffusion, Family::ConvDiff],
        "convdiff_spectral",
    )?;
    require_uniform_periodic(grid)?;
    let p = spec.cdr().expect("CDR family");
    let ic = spec.ic.expect("CDR problems carry an IC");
    let u0: Vec<f64> = grid.xs.iter().map(|&x| ic.eval(x)).collect();
    let mut values = Matrix::zeros(grid.ys.len(), grid.xs.len());
    for (j, &t) in grid.ys.iter().enumerate() {
        let mut u = u0.clone();
        advance_convdiff(&mut u, p.beta, p.nu, t)?;
        values.row_mut(j).copy_from_slice(&u);
    }
    Ok(ReferenceField {
        grid: grid.clone(),
        values,
        provenance: Provenance::Spectral,
    })
}

/// Strang splitting: half-step logistic reaction, full-step spectral
/// convection-diffusion, half-step reaction.
///
/// Each gap between output times is cut into the fewest equal substeps no
/// longer than `dt`.
pub fn cdr_splitting(spec: &ProblemSpec, grid: &Grid, dt: f64) -> Result<ReferenceField> {
    require_family(
        spec,
        &[
            Family::Convection,
            Family::Diffusion,
            Family::Reaction,
            Family::ConvDiff,
            Family::ReacDiff,
            Family::Cdr,
        ],
        "cdr_splitting",
    )?;
    require_uniform_periodic(grid)?;
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("splitting step {dt} must be positive")));
    }
    let p = spec.cdr().expect("CDR family");
    let ic = spec.ic.expect("CDR problems carry an IC");
    let mut u: Vec<f64> = grid.xs.iter().map(|&x| ic.eval(x)).collect();
    let mut values = Matrix::zeros(grid.ys.len(), grid.xs.len());
    let mut t_prev = grid.ys[0];
    if t_prev != 0.0 {
        advance_split(&mut u, p.beta, p.nu, p.rho, t_prev, dt)?;
    }
    values.row_mut(0).copy_from_slice(&u);
    for j in 1..grid.ys.len() {
        let gap = grid.ys[j] - t_prev;
        if gap <= 0.0 {
            return Err(Error::Argument("time nodes must increase".into()));
        }
        advance_split(&mut u, p.beta, p.nu, p.rho, gap, dt)?;
        values.row_mut(j).copy_from_slice(&u);
        t_prev = grid.ys[j];
    }
    Ok(ReferenceField {
        grid: grid.clone(),
        values,
        provenance: Provenance::Splitting,
    })
}

fn advance_split(u: &mut [f64], beta: f64, nu: f64, rho: f64, span: f64, dt: f64) -> Result<()> {
    let steps = (span / dt - 1e-9).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    let linear = beta != 0.0 || nu != 0.0;
    for _ in 0..steps {
        if rho != 0.0 {
            u.iter_mut().for_each(|v| *v = logistic(*v, rho, 0.5 * h));
        }
        if linear {
            advance_convdiff(u, beta, nu, h)?;
        }
        if rho != 0.0 {
            u.iter_mut().for_each(|v| *v = logistic(*v, rho, 0.5 * h));
        }
    }
    Ok(())
}

/// `u = sin(a1 pi x) sin(a2 pi y)` on the grid.
pub fn helmholtz_exact(p: &HelmholtzParams, grid: &Grid) -> ReferenceField {
    let values = Matrix::from_fn(grid.ys.len(), grid.xs.len(), |j, i| helmholtz_solution(grid.xs[i], grid.ys[j], p));
    ReferenceField {
        grid: grid.clone(),
        values,
        provenance: Provenance::Analytic,
    }
}

/// Best available oracle for the problem family.
pub fn reference_field(spec: &ProblemSpec, grid: &Grid) -> Result<ReferenceField> {
    match spec.family {
        Family::Convection => convection_exact(spec, grid),
        Family::Reaction => reaction_exact(spec, grid),
        Family::Diffusion | Family::ConvDiff => convdiff_spectral(spec, grid),
        Family::ReacDiff | Family::Cdr => cdr_splitting(spec, grid, DEFAULT_SPLIT_DT),
        Family::Helmholtz2D => Ok(helmholtz_exact(&spec.helmholtz().expect("Helmholtz family"), grid)),
    }
}

/// Solution jet on every grid node (row-major over `(y/t, x)`), for the
/// families whose oracle gives derivatives without differencing in time:
/// analytic convection, reaction and Helmholtz, and spectral conv-diff.
pub fn reference_jet(spec: &ProblemSpec, grid: &Grid) -> Result<(Matrix, Jet)> {
    let coords = Matrix::from_fn(2, grid.len(), |i, k| {
        let (x, y) = grid.node(k / grid.xs.len(), k % grid.xs.len());
        if i == 0 {
            x
        } else {
            y
        }
    });
    let n = grid.len();
    let jet = match spec.family {
        Family::Convection => {
            let p = spec.cdr().expect("CDR family");
            let ic = spec.ic.expect("IC");
            let (mut u, mut ux, mut ut, mut uxx) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for k in 0..n {
                let (v, d1, d2) = ic.eval_derivs((coords.get(0, k) - p.beta * coords.get(1, k)).rem_euclid(TWO_PI));
                u[k] = v;
                ux[k] = d1;
                ut[k] = -p.beta * d1;
                uxx[k] = d2;
            }
            Jet::from_channels(&[(Channel::Value, u), (Channel::Dx, ux), (Channel::Dt, ut), (Channel::Dxx, uxx)])?
        }
        Family::Reaction => {
            let field = reaction_exact(spec, grid)?;
            let rho = spec.cdr().expect("CDR family").rho;
            let u = field.values.as_slice().to_vec();
            let ut = u.iter().map(|v| rho * v * (1.0 - v)).collect();
            Jet::from_channels(&[(Channel::Value, u), (Channel::Dt, ut)])?
        }
        Family::Diffusion | Family::ConvDiff => {
            require_uniform_periodic(grid)?;
            let p = spec.cdr().expect("CDR family");
            let field = convdiff_spectral(spec, grid)?;
            let nx = grid.xs.len();
            let (mut u, mut ux, mut ut, mut uxx) = (vec![], vec![], vec![], vec![]);
            for j in 0..grid.ys.len() {
                let row = field.values.row(j);
                let mut hat: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft(&mut hat, false)?;
                let deriv = |order: u32| -> Result<Vec<f64>> {
                    let mut h = hat.clone();
                    for (m, z) in h.iter_mut().enumerate() {
                        let k = if m == nx / 2 { 0.0 } else { wavenumber(m, nx) };
                        *z *= Complex64::new(0.0, k).powu(order);
                    }
                    fft(&mut h, true)?;
                    Ok(h.iter().map(|z| z.re).collect())
                };
                let d1 = deriv(1)?;
                let d2 = deriv(2)?;
                u.extend_from_slice(row);
                ut.extend(d1.iter().zip(&d2).map(|(a, b)| -p.beta * a + p.nu * b));
                ux.extend(d1);
                uxx.extend(d2);
            }
            Jet::from_channels(&[(Channel::Value, u), (Channel::Dx, ux), (Channel::Dt, ut), (Channel::Dxx, uxx)])?
        }
        Family::Helmholtz2D => {
            let p = spec.helmholtz().expect("Helmholtz family");
            let (w1, w2) = (p.a1 * std::f64::consts::PI, p.a2 * std::f64::consts::PI);
            let (mut u, mut ux, mut uy, mut uxx, mut uyy) = (vec![], vec![], vec![], vec![], vec![]);
            for k in 0..n {
                let (x, y) = (coords.get(0, k), coords.get(1, k));
                let v = helmholtz_solution(x, y, &p);
                u.push(v);
                ux.push(w1 * (w1 * x).cos() * (w2 * y).sin());
                uy.push(w2 * (w1 * x).sin() * (w2 * y).cos());
                uxx.push(-w1 * w1 * v);
                uyy.push(-w2 * w2 * v);
            }
            Jet::from_channels(&[
                (Channel::Value, u),
                (Channel::Dx, ux),
                (Channel::Dy, uy),
                (Channel::Dxx, uxx),
                (Channel::Dyy, uyy),
            ])?
        }
        Family::ReacDiff | Family::Cdr => {
            return Err(Error::Argument(format!(
                "{:?} has no derivative-level oracle (splitting only)",
                spec.family
            )))
        }
    };
    Ok((coords, jet))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::InitialCondition;

    fn grid() -> Grid {
        Grid::space_time(NX, NT, 1.0)
    }

    #[test]
    fn fft_round_trip_and_single_mode() {
        let n = 16;
        let mut buf: Vec<Complex64> = (0..n).map(|j| Complex64::new((TWO_PI * 3.0 * j as f64 / n as f64).cos(), 0.0)).collect();
        let orig = buf.clone();
        fft(&mut buf, false).unwrap();
        assert!((buf[3].re - 8.0).abs() < 1e-12 && (buf[13].re - 8.0).abs() < 1e-12);
        fft(&mut buf, true).unwrap();
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-14);
        }
        assert!(fft(&mut [Complex64::new(0.0, 0.0); 12], false).is_err());
    }

    #[test]
    fn convection_exact_basics() {
        let spec = ProblemSpec::preset("convection", &[40.0]).unwrap();
        let f = convection_exact(&spec, &grid()).unwrap();
        for i in 0..NX {
            assert_eq!(f.at(0, i), 1.0 + grid().xs[i].sin());
        }
        // beta t = 2 pi wraps back to the initial profile.
        let g = Grid {
            xs: grid().xs,
            ys: vec![0.0, 1.0],
        };
        let s = ProblemSpec::preset("convection", &[TWO_PI]).unwrap();
        let f = convection_exact(&s, &g).unwrap();
        for i in 0..NX {
            assert!((f.at(1, i) - f.at(0, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_matches_characteristics() {
        let spec = ProblemSpec::preset("convection", &[40.0]).unwrap();
        let a = convection_exact(&spec, &grid()).unwrap();
        let b = convdiff_spectral(&spec, &grid()).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-10, "{}", a.max_abs_diff(&b));
    }

    #[test]
    fn spectral_single_mode_decay_and_constant() {
        let mut spec = ProblemSpec::preset("diffusion", &[1.0]).unwrap();
        // u0 = sin(x) via the 1 + sin preset minus the constant mode.
        spec.ic = Some(InitialCondition::OnePlusSin);
        let f = convdiff_spectral(&spec, &grid()).unwrap();
        for (j, &t) in grid().ys.iter().enumerate() {
            for (i, &x) in grid().xs.iter().enumerate() {
                let want = 1.0 + (-t).exp() * x.sin();
                assert!((f.at(j, i) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reaction_exact_fixed_points_and_rk_oracle() {
        assert_eq!(logistic(0.5, 3.0, 0.0), 0.5);
        assert_eq!(logistic(1.0, 3.0, 0.7), 1.0);
        let spec = ProblemSpec::preset("reaction", &[5.0]).unwrap();
        let f = reaction_exact(&spec, &grid()).unwrap();
        // Classical RK4 on u' = rho u (1 - u) with a fine step.
        let rk = |u0: f64, t: f64| {
            let steps = 20_000;
            let h = t / steps as f64;
            let rhs = |u: f64| 5.0 * u * (1.0 - u);
            let mut u = u0;
            for _ in 0..steps {
                let k1 = rhs(u);
                let k2 = rhs(u + 0.5 * h * k1);
                let k3 = rhs(u + 0.5 * h * k2);
                let k4 = rhs(u + h * k3);
                u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            u
        };
        let g = grid();
        for &i in &[0, 64, 100, 128, 200] {
            let u0 = spec.ic.unwrap().eval(g.xs[i]);
            for &j in &[0, 33, 99] {
                assert!((f.at(j, i) - rk(u0, g.ys[j])).abs() <= 1e-8);
            }
        }
        let mut bad = spec;
        bad.ic = Some(InitialCondition::OnePlusSin);
        assert!(matches!(reaction_exact(&bad, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn splitting_degenerates_to_the_exact_oracles() {
        let conv = ProblemSpec::preset("conv-diff", &[5.0, 0.5, 0.0]).unwrap();
        let a = cdr_splitting(&conv, &grid(), DEFAULT_SPLIT_DT).unwrap();
        let b = convdiff_spectral(&conv, &grid()).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-8);
        let reac = ProblemSpec::preset("reaction", &[5.0]).unwrap();
        let a = cdr_splitting(&reac, &grid(), DEFAULT_SPLIT_DT).unwrap();
        let b = reaction_exact(&reac, &grid()).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-8, "{}", a.max_abs_diff(&b));
    }

    #[test]
    fn splitting_is_second_order() {
        let spec = ProblemSpec::preset("cdr", &[1.0, 0.5, 3.0]).unwrap();
        let g = grid();
        let fine = cdr_splitting(&spec, &g, 1e-4).unwrap();
        let coarse = cdr_splitting(&spec, &g, 1.0 / 99.0).unwrap();
        let half = cdr_splitting(&spec, &g, 0.5 / 99.0).unwrap();
        let ratio = coarse.max_abs_diff(&fine) / half.max_abs_diff(&fine);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn helmholtz_exact_values() {
        let p = HelmholtzParams::new(2.0, 3.0, 1.0).unwrap();
        let f = helmholtz_exact(&p, &Grid::square(N2D));
        for k in 0..N2D {
            assert!(f.at(0, k).abs() < 1e-12 && f.at(N2D - 1, k).abs() < 1e-12);
            assert!(f.at(k, 0).abs() < 1e-12 && f.at(k, N2D - 1).abs() < 1e-12);
        }
        let p = HelmholtzParams::new(2.5, 2.5, 1.0).unwrap();
        assert!((helmholtz_solution(0.2, 0.2, &p) - 1.0).abs() < 1e-15);
    }
}
