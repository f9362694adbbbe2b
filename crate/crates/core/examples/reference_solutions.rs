//! Reference solutions for every preset, plus the cross-checks between the
//! independent solvers.
//!
//! ```text
//! cargo run --release --example reference_solutions
//! ```

use hyper_lr_pinn::pde::{cdr_residual, helmholtz_residual, ProblemSpec};
use hyper_lr_pinn::reference::{
    cdr_splitting, convdiff_spectral, convection_exact, reference_field, reference_jet, Grid, DEFAULT_SPLIT_DT,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:<11} {:>12} {:>10} {:>10}", "preset", "mu", "min u", "max u");
    for name in ProblemSpec::preset_names() {
        let mu: Vec<f64> = match *name {
            "convection" => vec![30.0],
            "reaction" => vec![5.0],
            "diffusion" => vec![2.0],
            "helmholtz" => vec![2.5],
            _ => vec![5.0, 1.0, 2.0],
        };
        let spec = ProblemSpec::preset(name, &mu)?;
        let field = reference_field(&spec, &Grid::standard(&spec))?;
        let (lo, hi) = field.values.as_slice().iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        println!("{name:<11} {:>12} {lo:>10.4} {hi:>10.4}", format!("{mu:?}"));
    }

    let grid = Grid::space_time(256, 100, 1.0);
    let conv = ProblemSpec::preset("convection", &[40.0])?;
    let d = convection_exact(&conv, &grid)?.max_abs_diff(&convdiff_spectral(&conv, &grid)?);
    println!("\ncharacteristics vs spectral, beta 40: {d:.2e}");

    let cdr = ProblemSpec::preset("cdr", &[5.0, 1.0, 2.0])?;
    let fine = cdr_splitting(&cdr, &grid, 1e-4)?;
    for dt in [4e-3, 2e-3, DEFAULT_SPLIT_DT] {
        let e = cdr_splitting(&cdr, &grid, dt)?.max_abs_diff(&fine);
        println!("splitting dt {dt:.0e}: error vs dt 1e-4 {e:.3e}");
    }

    for (name, mu) in [("conv-diff", vec![10.0, 1.5, 0.0]), ("helmholtz", vec![2.5])] {
        let spec = ProblemSpec::preset(name, &mu)?;
        let (coords, jet) = reference_jet(&spec, &Grid::standard(&spec))?;
        let r = match (spec.cdr(), spec.helmholtz()) {
            (Some(p), _) => cdr_residual(&jet, &p)?,
            (_, Some(p)) => helmholtz_residual(&jet, &p, &coords)?,
            _ => unreachable!(),
        };
        let max = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("{name}: max |residual| of the reference solution {max:.2e}");
    }
    Ok(())
}
