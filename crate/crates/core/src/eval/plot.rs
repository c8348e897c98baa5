//! SVG summary: loss curves, probe accuracy bars and the `|s_ij|` histogram.

use std::path::Path;

use plotters::prelude::*;

use super::EvalError;

/// One trained model in a summary figure.
#[derive(Debug, Clone)]
pub struct PlotEntry {
    pub label: String,
    pub loss: Vec<(u64, f64)>,
    /// Pretrained and random-init top-1 accuracy.
    pub accuracy: Option<(f64, f64)>,
    pub abs_s: Vec<f64>,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

const BINS: usize = 20;

fn plot_err<E: std::fmt::Display>(e: E) -> EvalError {
    EvalError::Plot(e.to_string())
}

/// Fraction of `values` falling in each of `BINS` equal bins over [0, 1].
pub fn histogram(values: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; BINS];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
        counts[b] += 1.0;
    }
    let total = values.len().max(1) as f64;
    counts.into_iter().map(|c| c / total).collect()
}

/// Writes the three-panel figure; panels without data are left blank.
pub fn render_summary(path: &Path, title: &str, entries: &[PlotEntry], chance: Option<f64>) -> Result<(), EvalError> {
    let root = SVGBackend::new(path, (1500, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root.titled(title, ("sans-serif", 20)).map_err(plot_err)?;
    let panels = root.split_evenly((1, 3));

    let max_step = entries
        .iter()
        .flat_map(|e| e.loss.last().map(|l| l.0))
        .max()
        .unwrap_or(1)
        .max(1);
    let (lo, hi) = entries
        .iter()
        .flat_map(|e| e.loss.iter().map(|l| l.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi.max(lo + 1e-3)) } else { (0.0, 1.0) };
    let mut chart = ChartBuilder::on(&panels[0])
        .caption("L_total", ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(45)
        .build_cartesian_2d(0u64..max_step, lo..hi * 1.05)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("step").draw().map_err(plot_err)?;
    for (k, e) in entries.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(e.loss.iter().cloned(), color.stroke_width(1)))
            .map_err(plot_err)?
            .label(e.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;

    let n = entries.len().max(1);
    let mut chart = ChartBuilder::on(&panels[1])
        .caption("probe top-1 (dark: pretrained, light: random init)", ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..n as f64, 0f64..1f64)
        .map_err(plot_err)?;
    let labels: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = (*x - 0.5).round();
            if (x - 0.5 - i).abs() < 1e-6 && i >= 0.0 {
                labels.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(plot_err)?;
    for (k, e) in entries.iter().enumerate() {
        if let Some((pre, rnd)) = e.accuracy {
            let color = PALETTE[k % PALETTE.len()];
            let x = k as f64;
            chart
                .draw_series([
                    Rectangle::new([(x + 0.1, 0.0), (x + 0.5, pre)], color.filled()),
                    Rectangle::new([(x + 0.5, 0.0), (x + 0.9, rnd)], color.mix(0.35).filled()),
                ])
                .map_err(plot_err)?;
        }
    }
    if let Some(c) = chance {
        chart
            .draw_series(LineSeries::new([(0.0, c), (n as f64, c)], BLACK.stroke_width(1)))
            .map_err(plot_err)?;
    }

    let hists: Vec<Vec<f64>> = entries.iter().map(|e| histogram(&e.abs_s)).collect();
    let top = hists.iter().flatten().cloned().fold(0.0, f64::max).max(1e-3);
    let mut chart = ChartBuilder::on(&panels[2])
        .caption("|s_ij| histogram", ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..1f64, 0f64..top * 1.05)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("|s_ij|").draw().map_err(plot_err)?;
    for (k, h) in hists.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let w = 1.0 / BINS as f64;
        let steps = h
            .iter()
            .enumerate()
            .flat_map(|(b, &v)| [(b as f64 * w, v), ((b + 1) as f64 * w, v)]);
        chart
            .draw_series(LineSeries::new(steps, color.stroke_width(2)))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// `L_pred`, `L_reg` and `L_total` against step.
pub fn render_loss_curve(path: &Path, history: &[crate::train::StepRecord]) -> Result<(), EvalError> {
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let max_step = history.last().map_or(1, |r| r.step.max(1));
    let hi = history.iter().map(|r| r.l_total.max(r.l_pred)).fold(1e-3, f64::max);
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(45)
        .build_cartesian_2d(0u64..max_step, 0f64..hi * 1.05)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("step").draw().map_err(plot_err)?;
    type Column = fn(&crate::train::StepRecord) -> f64;
    let series: [(&str, Column); 3] = [
        ("L_total", |r| r.l_total),
        ("L_pred", |r| r.l_pred),
        ("L_reg", |r| r.l_reg),
    ];
    for (k, (name, f)) in series.into_iter().enumerate() {
        let color = PALETTE[k];
        chart
            .draw_series(LineSeries::new(history.iter().map(|r| (r.step, f(r))), color.stroke_width(1)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_sums_to_one() {
        let h = histogram(&[0.0, 0.5, 0.99, 1.0]);
        assert_eq!(h.len(), BINS);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h[BINS - 1], 0.5);
    }

    #[test]
    fn renders_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.svg");
        let entry = PlotEntry {
            label: "a".into(),
            loss: vec![(0, 2.0), (1, 1.5), (2, 1.0)],
            accuracy: Some((0.6, 0.2)),
            abs_s: vec![0.1, 0.3],
        };
        render_summary(&path, "t", &[entry.clone(), PlotEntry { label: "b".into(), ..entry }], Some(0.25)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
    }
}
