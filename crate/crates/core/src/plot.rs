//! Report figures rendered straight into raster images: loss curves,
//! schedule-weight curves, mask-quality trajectories and side-by-side
//! gt/render/mask panels. Charts are deliberately spartan (axes plus
//! polylines); the emitted CSVs remain the precise record.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::raster::{io as rio, Image};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: missing column {column:?}")]
    MissingColumn { file: PathBuf, column: String },
    #[error("{file}: row {row} is not numeric")]
    BadRow { file: PathBuf, row: usize },
    #[error("no stats found under {0}: nothing to plot")]
    EmptyResults(PathBuf),
    #[error(transparent)]
    RasterIo(#[from] rio::RasterIoError),
}

/// A parsed stats CSV: headers plus rows of floats (empty cells are NaN).
#[derive(Debug, Clone)]
pub struct StatsTable {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_stats_csv(path: &Path) -> Result<StatsTable, PlotError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| PlotError::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines();
    let headers: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(headers.len());
        for cell in line.split(',') {
            let cell = cell.trim();
            if cell.is_empty() {
                row.push(f64::NAN);
            } else if let Ok(v) = cell.parse::<f64>() {
                row.push(v);
            } else if cell == "inf" {
                row.push(f64::INFINITY);
            } else if cell == "-inf" {
                row.push(f64::NEG_INFINITY);
            } else if cell == "true" {
                row.push(1.0);
            } else if cell == "false" {
                row.push(0.0);
            } else if i == 0 || row.is_empty() {
                // Label columns (e.g. a trailing "mean" row) become NaN.
                row.push(f64::NAN);
            } else {
                return Err(PlotError::BadRow { file: path.to_path_buf(), row: i + 2 });
            }
        }
        rows.push(row);
    }
    Ok(StatsTable { path: path.to_path_buf(), headers, rows })
}

impl StatsTable {
    pub fn column(&self, name: &str) -> Result<Vec<f64>, PlotError> {
        let idx = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PlotError::MissingColumn {
                file: self.path.clone(),
                column: name.to_string(),
            })?;
        Ok(self.rows.iter().map(|r| r.get(idx).copied().unwrap_or(f64::NAN)).collect())
    }

    /// (x, y) pairs of two columns, dropping non-finite samples.
    pub fn series(&self, x: &str, y: &str) -> Result<Vec<(f64, f64)>, PlotError> {
        let xs = self.column(x)?;
        let ys = self.column(y)?;
        Ok(xs
            .into_iter()
            .zip(ys)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .collect())
    }
}

/// One polyline on a chart.
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: [f64; 3],
}

pub const SERIES_COLORS: [[f64; 3]; 4] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.45, 0.85],
    [0.15, 0.65, 0.30],
    [0.80, 0.60, 0.10],
];

fn draw_line(img: &mut Image, from: (f64, f64), to: (f64, f64), color: [f64; 3]) {
    let steps = ((to.0 - from.0).abs().max((to.1 - from.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = from.0 + (to.0 - from.0) * t;
        let y = from.1 + (to.1 - from.1) * t;
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        if xi >= 0 && yi >= 0 && (xi as usize) < img.width && (yi as usize) < img.height {
            img.set_pixel(xi as usize, yi as usize, color);
        }
    }
}

/// Renders series onto a white canvas with framed axes. Data ranges are
/// padded slightly; a y range collapsing to a point is widened.
pub fn line_chart(series: &[Series], width: usize, height: usize) -> Image {
    let mut img = Image::filled(width, height, [1.0, 1.0, 1.0]);
    let margin = 12.0;
    let (w, h) = (width as f64, height as f64);

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        return img; // nothing to draw; callers check emptiness beforehand
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }

    let map = |x: f64, y: f64| -> (f64, f64) {
        (
            margin + (x - x_min) / (x_max - x_min) * (w - 2.0 * margin),
            h - margin - (y - y_min) / (y_max - y_min) * (h - 2.0 * margin),
        )
    };

    let axis = [0.25, 0.25, 0.25];
    draw_line(&mut img, (margin, h - margin), (w - margin, h - margin), axis);
    draw_line(&mut img, (margin, margin), (margin, h - margin), axis);

    for s in series {
        for pair in s.points.windows(2) {
            draw_line(&mut img, map(pair[0].0, pair[0].1), map(pair[1].0, pair[1].1), s.color);
        }
    }
    img
}

fn save_chart(series: &[Series], path: &Path) -> Result<(), PlotError> {
    let img = line_chart(series, 640, 360);
    rio::write_image_png(path, &img)?;
    Ok(())
}

/// Stacks images left to right on a shared baseline.
pub fn hstack(images: &[&Image]) -> Image {
    let height = images.iter().map(|i| i.height).max().unwrap_or(1);
    let width: usize = images.iter().map(|i| i.width).sum();
    let mut out = Image::filled(width.max(1), height, [0.0, 0.0, 0.0]);
    let mut x0 = 0;
    for img in images {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set_pixel(x0 + x, y, img.pixel(x, y));
            }
        }
        x0 += img.width;
    }
    out
}

/// Renders every figure a finished run supports into `<out>/plots/`,
/// returning the created paths. Missing stages are skipped; producing
/// nothing at all is an error.
pub fn render_run_plots(out: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let plots = out.join("plots");
    std::fs::create_dir_all(&plots)
        .map_err(|source| PlotError::Io { path: plots.clone(), source })?;
    let mut written = Vec::new();

    let stage1_stats = out.join("stage1/stats.csv");
    if stage1_stats.exists() {
        let table = read_stats_csv(&stage1_stats)?;
        let loss = table.series("iteration", "loss")?;
        let path = plots.join("stage1_loss.png");
        save_chart(&[Series { points: loss, color: SERIES_COLORS[0] }], &path)?;
        written.push(path);

        let threshold = table.series("iteration", "threshold")?;
        if !threshold.is_empty() {
            let path = plots.join("stage1_threshold.png");
            save_chart(&[Series { points: threshold, color: SERIES_COLORS[1] }], &path)?;
            written.push(path);
        }
    }

    let stage2_stats = out.join("stage2/stats.csv");
    if stage2_stats.exists() {
        let table = read_stats_csv(&stage2_stats)?;
        let loss = table.series("iteration", "recon_loss")?;
        let path = plots.join("stage2_loss.png");
        save_chart(&[Series { points: loss, color: SERIES_COLORS[0] }], &path)?;
        written.push(path);

        let prior = table.series("iteration", "prior_weight")?;
        let robust = table.series("iteration", "robust_weight")?;
        let path = plots.join("stage2_schedule.png");
        save_chart(
            &[
                Series { points: prior, color: SERIES_COLORS[1] },
                Series { points: robust, color: SERIES_COLORS[2] },
            ],
            &path,
        )?;
        written.push(path);

        let iou = table.series("iteration", "mask_iou")?;
        if !iou.is_empty() {
            let path = plots.join("stage2_mask_iou.png");
            save_chart(&[Series { points: iou, color: SERIES_COLORS[3] }], &path)?;
            written.push(path);
        }
    }

    // Side-by-side panels for the first few views with complete artifacts.
    let mut panels = 0;
    for id in 0..1000 {
        if panels >= 4 {
            break;
        }
        let gt = out.join(format!("dataset/view_{id:04}/gt.png"));
        let render = out.join(format!("stage2/render_{id:04}.png"));
        let mask = out.join(format!("stage2/mask_{id:04}.png"));
        if !(gt.exists() && render.exists() && mask.exists()) {
            break;
        }
        let gt = rio::read_image_png(&gt)?;
        let render = rio::read_image_png(&render)?;
        let mask = rio::read_image_png(&mask)?;
        let panel = hstack(&[&gt, &render, &mask]);
        let path = plots.join(format!("panel_{id:04}.png"));
        rio::write_image_png(&path, &panel)?;
        written.push(path);
        panels += 1;
    }

    if written.is_empty() {
        return Err(PlotError::EmptyResults(out.to_path_buf()));
    }
    Ok(written)
}
