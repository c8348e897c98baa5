use std::fs;
use std::path::Path;

use voco::eval::{evaluate, render_summary, PlotEntry};
use voco::train::load_checkpoint;

use crate::failure::Failure;

pub fn run(ckpt: &Path, data: Option<&Path>, out: &Path) -> Result<(), Failure> {
    if !ckpt.exists() {
        return Err(Failure::Runtime(format!("checkpoint {} not found", ckpt.display())));
    }
    if let Some(d) = data {
        if !d.is_dir() {
            return Err(Failure::Runtime(format!("data directory {} not found", d.display())));
        }
    }
    let loaded = load_checkpoint(ckpt).map_err(Failure::runtime)?;
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let e = evaluate(&loaded.config, &loaded.state.encoder, data)?;

    let json = serde_json::to_string_pretty(&e).expect("evaluation serializes");
    let path = out.join("probe.json");
    fs::write(&path, &json).map_err(|err| Failure::io(&path, err))?;

    let mut csv = String::from("class,accuracy,random_init_accuracy\n");
    for (k, (a, b)) in e
        .probe
        .per_class_accuracy
        .iter()
        .zip(&e.random_init_probe.per_class_accuracy)
        .enumerate()
    {
        csv.push_str(&format!("{},{a},{b}\n", k + 1));
    }
    let path = out.join("probe_per_class.csv");
    fs::write(&path, csv).map_err(|err| Failure::io(&path, err))?;

    let entry = PlotEntry {
        label: ckpt.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()),
        loss: loaded.state.history.iter().map(|r| (r.step, r.l_total)).collect(),
        accuracy: Some((e.probe.top1_accuracy, e.random_init_probe.top1_accuracy)),
        abs_s: e.basis.abs_s.clone(),
    };
    render_summary(&out.join("probe.svg"), "probe", &[entry], Some(e.probe.chance_level)).map_err(Failure::runtime)?;

    println!(
        "top1={} random_init_top1={} chance={} eval_crops={} soft_mae={} mean_abs_s={} max_abs_s={} min_rank={}",
        e.probe.top1_accuracy,
        e.random_init_probe.top1_accuracy,
        e.probe.chance_level,
        e.probe.num_eval_crops,
        e.probe.soft_mae,
        e.basis.mean_abs_s,
        e.basis.max_abs_s,
        e.basis.min_rank
    );
    Ok(())
}
