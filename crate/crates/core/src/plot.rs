//! Minimal SVG line charts from metrics CSVs: one chart per numeric column
//! against the first column.

use crate::metrics::read_csv;
use crate::Result;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

/// Renders one SVG per data column; returns the written paths.
pub fn plot_csv(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let (header, rows) = read_csv(input)?;
    if header.len() < 2 || rows.is_empty() {
        return Err(crate::Error::Format("csv needs at least two columns and one row".into()));
    }
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut written = Vec::new();
    for col in 1..header.len() {
        let ys: Vec<f64> = rows.iter().map(|r| r.get(col).copied().unwrap_or(f64::NAN)).collect();
        let points: Vec<(f64, f64)> = xs
            .iter()
            .zip(&ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| (*x, *y))
            .collect();
        if points.is_empty() {
            continue;
        }
        let name = sanitize(&header[col]);
        let path = out_dir.join(format!("{stem}_{name}.svg"));
        std::fs::write(&path, render(&header[0], &header[col], &points))?;
        written.push(path);
    }
    Ok(written)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn render(x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);
    let polyline: Vec<String> =
        points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            r#"<rect width="{w}" height="{h}" fill="white"/>"#,
            r#"<line x1="{m}" y1="{ybase}" x2="{xend}" y2="{ybase}" stroke="black"/>"#,
            r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{ybase}" stroke="black"/>"#,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>"#,
            r#"<text x="{xmid}" y="{xlab_y}" text-anchor="middle" font-size="14">{xl}</text>"#,
            r#"<text x="16" y="{ymid}" text-anchor="middle" font-size="14" transform="rotate(-90 16 {ymid})">{yl}</text>"#,
            r#"<text x="{m}" y="{xlab_y}" font-size="11">{x0:.4}</text>"#,
            r#"<text x="{xend}" y="{xlab_y}" text-anchor="end" font-size="11">{x1:.4}</text>"#,
            r#"<text x="{m2}" y="{ybase}" font-size="11">{y0:.4}</text>"#,
            r#"<text x="{m2}" y="{m}" font-size="11">{y1:.4}</text>"#,
            "</svg>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        m = MARGIN,
        m2 = 4.0,
        ybase = HEIGHT - MARGIN,
        xend = WIDTH - MARGIN,
        xmid = WIDTH / 2.0,
        ymid = HEIGHT / 2.0,
        xlab_y = HEIGHT - 20.0,
        pts = polyline.join(" "),
        xl = x_label,
        yl = y_label,
        x0 = x_min,
        x1 = x_max,
        y0 = y_min,
        y1 = y_max,
    )
}
