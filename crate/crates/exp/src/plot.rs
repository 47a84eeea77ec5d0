use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;

use crate::metrics::{read_csv, read_summary, SummaryRecord};

const SIZE: (u32, u32) = (800, 500);

/// One labelled `(epoch, loss)` curve.
pub type Series = (String, Vec<(f64, f64)>);

/// Train and validation curves keyed by `model` (and `seed` when a file
/// holds several seeds), prefixed by the file stem when several files are given.
pub fn loss_series(files: &[PathBuf]) -> Result<(Vec<Series>, Vec<Series>)> {
    if files.is_empty() {
        bail!("no metrics files given");
    }
    let mut train: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut val: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for f in files {
        let rows = read_csv(f)?;
        let multi_seed = rows.iter().any(|r| r.seed != rows[0].seed);
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for r in rows {
            let mut label = r.model.clone();
            if multi_seed {
                label = format!("{label} s{}", r.seed);
            }
            if files.len() > 1 {
                label = format!("{stem}/{label}");
            }
            train.entry(label.clone()).or_default().push((r.epoch as f64, r.train_loss));
            if let Some(v) = r.val_loss {
                val.entry(label).or_default().push((r.epoch as f64, v));
            }
        }
    }
    Ok((train.into_iter().collect(), val.into_iter().collect()))
}

fn draw_lines(path: &Path, title: &str, series: &[Series]) -> Result<()> {
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x1, mut y0, mut y1) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        if !x.is_finite() || !y.is_finite() {
            bail!("non-finite value in series for {title}");
        }
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if y0 > y1 {
        bail!("nothing to plot for {title}");
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e:?}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x1, (y0 - pad)..(y1 + pad))
        .map_err(|e| anyhow!("{e:?}"))?;
    chart.configure_mesh().x_desc("epoch").y_desc("loss").draw().map_err(|e| anyhow!("{e:?}"))?;
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| anyhow!("{e:?}"))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e:?}"))?;
    root.present().map_err(|e| anyhow!("{e:?}"))?;
    Ok(())
}

/// Grouped bars: one group per task, one bar per method, heights = mean return.
fn draw_bars(path: &Path, rows: &[SummaryRecord]) -> Result<()> {
    let mut tasks: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let top = rows.iter().map(|r| r.mean + r.std).fold(1.0, f64::max);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e:?}"))?;
    let groups = tasks.len() as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("mean return per task", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..groups, 0.0..top * 1.05)
        .map_err(|e| anyhow!("{e:?}"))?;
    let labels: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(tasks.len() * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 0.26 {
                labels.get(i).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("return")
        .draw()
        .map_err(|e| anyhow!("{e:?}"))?;
    let width = 0.8 / methods.len() as f64;
    for (m, method) in methods.iter().enumerate() {
        let color = Palette99::pick(m).to_rgba();
        let bars: Vec<Rectangle<(f64, f64)>> = rows
            .iter()
            .filter(|r| r.method == *method)
            .map(|r| {
                let t = tasks.iter().position(|t| *t == r.task).expect("collected above") as f64;
                let x = t + 0.1 + m as f64 * width;
                Rectangle::new([(x, 0.0), (x + width * 0.9, r.mean)], color.filled())
            })
            .collect();
        chart
            .draw_series(bars)
            .map_err(|e| anyhow!("{e:?}"))?
            .label(*method)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e:?}"))?;
    root.present().map_err(|e| anyhow!("{e:?}"))?;
    Ok(())
}

/// Writes `train_loss.svg` (and `val_loss.svg` when validation losses are
/// present) from metrics CSVs, and `rewards.svg` from an eval summary.
/// Returns the written files.
pub fn cmd_plot(metrics: &[PathBuf], summary: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    if !metrics.is_empty() {
        let (train, val) = loss_series(metrics)?;
        let p = out.join("train_loss.svg");
        draw_lines(&p, "train loss", &train)?;
        written.push(p);
        if !val.is_empty() {
            let p = out.join("val_loss.svg");
            draw_lines(&p, "validation loss", &val)?;
            written.push(p);
        }
    }
    if let Some(s) = summary {
        let rows = read_summary(s)?;
        let p = out.join("rewards.svg");
        draw_bars(&p, &rows)?;
        written.push(p);
    }
    if written.is_empty() {
        bail!("nothing to plot: pass metrics files or an eval summary");
    }
    Ok(written)
}
