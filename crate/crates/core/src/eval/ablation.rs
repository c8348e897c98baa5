//! One model per setting of an ablation axis, all from the same seed.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, render_summary, EvalError, Evaluation, PlotEntry};
use crate::train::{run, StepRecord, TrainConfig};
use crate::volume::Shape3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Prediction loss alone versus prediction plus regularizer.
    LossTerms,
    /// Number of bases: 2x2x1, 3x3x1, 4x4x1.
    NGrid,
    /// Regularizer weight 0.5, 1.0, 1.5.
    Lambda,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::LossTerms => "loss_terms",
            AblationAxis::NGrid => "n_grid",
            AblationAxis::Lambda => "lambda",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loss" | "loss_terms" => Ok(AblationAxis::LossTerms),
            "n" | "grid" | "n_grid" => Ok(AblationAxis::NGrid),
            "lambda" => Ok(AblationAxis::Lambda),
            other => Err(format!("unknown ablation axis `{other}` (loss_terms, n_grid, lambda)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationValue {
    pub label: String,
    pub grid: Shape3,
    pub lambda: f64,
}

impl AblationAxis {
    /// The settings of this axis; unspecified knobs keep the base config's value.
    pub fn values(&self, base: &TrainConfig) -> Vec<AblationValue> {
        match self {
            AblationAxis::LossTerms => vec![
                AblationValue {
                    label: "L_pred".into(),
                    grid: base.grid,
                    lambda: 0.0,
                },
                AblationValue {
                    label: "L_pred+L_reg".into(),
                    grid: base.grid,
                    lambda: 1.0,
                },
            ],
            AblationAxis::NGrid => [[2, 2, 1], [3, 3, 1], [4, 4, 1]]
                .into_iter()
                .map(|g: Shape3| AblationValue {
                    label: format!("{}x{}x{}", g[0], g[1], g[2]),
                    grid: g,
                    lambda: base.lambda,
                })
                .collect(),
            AblationAxis::Lambda => [0.5, 1.0, 1.5]
                .into_iter()
                .map(|l| AblationValue {
                    label: format!("lambda={l}"),
                    grid: base.grid,
                    lambda: l,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: AblationValue,
    pub initial_l_total: f64,
    pub final_l_total: f64,
    pub evaluation: Evaluation,
    pub history: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

/// Mean `L_total` over the first and the last `window` records.
pub fn loss_window_means(history: &[StepRecord], window: usize) -> (f64, f64) {
    let w = window.min(history.len()).max(1);
    let mean = |rs: &[StepRecord]| rs.iter().map(|r| r.l_total).sum::<f64>() / rs.len().max(1) as f64;
    (mean(&history[..w.min(history.len())]), mean(&history[history.len().saturating_sub(w)..]))
}

impl AblationGrid {
    pub const CSV_HEADER: &'static str = "axis,value,grid,lambda,steps,initial_L_total,final_L_total,probe_top1,random_init_top1,chance,soft_mae,mean_abs_s,max_abs_s,min_rank";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let e = &r.evaluation;
            let g = r.value.grid;
            out.push_str(&format!(
                "{},{},{}x{}x{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.axis,
                r.value.label,
                g[0],
                g[1],
                g[2],
                r.value.lambda,
                r.history.len(),
                r.initial_l_total,
                r.final_l_total,
                e.probe.top1_accuracy,
                e.random_init_probe.top1_accuracy,
                e.probe.chance_level,
                e.probe.soft_mae,
                e.basis.mean_abs_s,
                e.basis.max_abs_s,
                e.basis.min_rank
            ));
        }
        out
    }
}

/// Trains and evaluates one model per axis value under `out_dir/<label>`,
/// then writes `ablation_<axis>.csv` and `ablation_<axis>.svg`.
pub fn run_ablation(
    axis: AblationAxis,
    base: &TrainConfig,
    out_dir: &Path,
    mut on_step: impl FnMut(&str, &StepRecord),
) -> Result<AblationGrid, EvalError> {
    let mut rows = Vec::new();
    for value in axis.values(base) {
        let config = TrainConfig {
            grid: value.grid,
            lambda: value.lambda,
            crop_size: if value.grid == base.grid { base.crop_size } else { None },
            ..base.clone()
        };
        config.validate().map_err(crate::train::TrainError::from)?;
        let dir = out_dir.join(value.label.replace(['+', '='], "_"));
        let state = run(&config, &dir, None, |r| on_step(&value.label, r))?.into_state();
        let evaluation = evaluate(&config, &state.encoder, None)?;
        let (initial_l_total, final_l_total) = loss_window_means(&state.history, 50);
        rows.push(AblationRow {
            value,
            initial_l_total,
            final_l_total,
            evaluation,
            history: state.history,
        });
    }
    let grid = AblationGrid { axis, rows };
    let csv = out_dir.join(format!("ablation_{axis}.csv"));
    fs::write(&csv, grid.to_csv()).map_err(|source| EvalError::Io { path: csv, source })?;
    let entries: Vec<PlotEntry> = grid
        .rows
        .iter()
        .map(|r| PlotEntry {
            label: r.value.label.clone(),
            loss: r.history.iter().map(|h| (h.step, h.l_total)).collect(),
            accuracy: Some((r.evaluation.probe.top1_accuracy, r.evaluation.random_init_probe.top1_accuracy)),
            abs_s: r.evaluation.basis.abs_s.clone(),
        })
        .collect();
    let chance = match axis {
        AblationAxis::NGrid => None,
        _ => grid.rows.first().map(|r| r.evaluation.probe.chance_level),
    };
    render_summary(&out_dir.join(format!("ablation_{axis}.svg")), &format!("ablation: {axis}"), &entries, chance)?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_cover_documented_values() {
        let base = TrainConfig::toy();
        assert_eq!(AblationAxis::LossTerms.values(&base).len(), 2);
        let grids: Vec<Shape3> = AblationAxis::NGrid.values(&base).iter().map(|v| v.grid).collect();
        assert_eq!(grids, vec![[2, 2, 1], [3, 3, 1], [4, 4, 1]]);
        let lambdas: Vec<f64> = AblationAxis::Lambda.values(&base).iter().map(|v| v.lambda).collect();
        assert_eq!(lambdas, vec![0.5, 1.0, 1.5]);
        for s in ["loss", "n_grid", "lambda"] {
            let a: AblationAxis = s.parse().unwrap();
            assert_eq!(a.to_string().parse::<AblationAxis>().unwrap(), a);
        }
        assert!("depth".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn window_means() {
        let rec = |v: f64| StepRecord {
            step: 0,
            lr: 0.0,
            l_pred: 0.0,
            l_reg: 0.0,
            l_total: v,
            mean_abs_s: 0.0,
            max_l: 0.0,
            min_l: 0.0,
            wall_ms: 0,
        };
        let h: Vec<_> = [4.0, 2.0, 3.0, 1.0].into_iter().map(rec).collect();
        assert_eq!(loss_window_means(&h, 2), (3.0, 2.0));
        assert_eq!(loss_window_means(&h, 10), (2.5, 2.5));
    }
}
