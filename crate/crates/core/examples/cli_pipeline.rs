//! The `hlrp` verbs driven from a small TOML config, end to end, into a
//! temporary output directory.
//!
//! ```text
//! cargo run --release --example cli_pipeline
//! ```

use hyper_lr_pinn::cli::main_with_args;

const CONFIG: &str = r#"
preset = "reaction"
seed = 3

[phase1]
lo = 1.0
hi = 3.0
step = 1.0

[phase2]
values = [[1.5], [2.5]]

[train]
phase1_epochs = 50
phase2_epochs = 20
baseline_epochs = 50

[baseline]
kinds = ["vanilla", "naive"]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("hlrp-cli-example");
    std::fs::create_dir_all(&dir)?;
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, CONFIG)?;
    let out = dir.join("out");

    for verb in ["gen-data", "phase1", "phase2", "baseline", "sweep", "rank-report"] {
        let args = ["hlrp", verb, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        let code = main_with_args(args);
        if code != 0 {
            return Err(format!("{verb} exited with {code}").into());
        }
    }
    println!("\n{}", std::fs::read_to_string(out.join("sweep/table.csv"))?);
    Ok(())
}
