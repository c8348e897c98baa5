use std::fs;
use std::path::Path;

use voco::eval::{run_ablation, AblationAxis};
use voco::train::TrainConfig;

use crate::failure::Failure;

pub fn run(axis: &str, config_path: &Path, out: &Path) -> Result<(), Failure> {
    let axis: AblationAxis = axis.parse().map_err(Failure::Validation)?;
    let config = TrainConfig::from_file(config_path)?;
    for v in axis.values(&config) {
        let candidate = TrainConfig {
            grid: v.grid,
            lambda: v.lambda,
            ..config.clone()
        };
        if v.grid != config.grid {
            TrainConfig { crop_size: None, ..candidate }.validate()?;
        }
    }
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let every = (config.steps / 10).max(1);
    let grid = run_ablation(axis, &config, out, |label, r| {
        if r.step % every == 0 {
            eprintln!("[{label}] step {} L_total {:.5} mean|s| {:.4}", r.step, r.l_total, r.mean_abs_s);
        }
    })?;
    print!("{}", grid.to_csv());
    Ok(())
}
