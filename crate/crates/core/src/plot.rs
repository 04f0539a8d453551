//! Metrics CSV reading and plain-text SVG charts: reward curves with a
//! ±1 std band across runs, and a subtask-proportion bar chart.

use std::fmt::Write as _;

use crate::agent::metrics_header;
use crate::{Error, Result};

/// A parsed metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    /// Parses and checks the header against the training schema.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines.next().ok_or_else(|| Error::Format("empty metrics file".into()))?.split(',').map(str::to_string).collect();
        if header.join(",") != metrics_header() {
            return Err(Error::Format(format!("unexpected metrics columns: {}", header.join(","))));
        }
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        if rows.is_empty() {
            return Err(Error::Format("metrics file has no rows".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(Error::Format(format!("row {} has {} fields, expected {}", bad + 1, rows[bad].len(), header.len())));
        }
        Ok(Self { header, rows })
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::Format(format!("no column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| r[i].parse().map_err(|_| Error::Format(format!("column `{name}`: `{}` is not a number", r[i]))))
            .collect()
    }

    /// Per-subtask segment counts summed over all rows, keyed by column name
    /// without the `count_` prefix.
    pub fn subtask_totals(&self) -> Result<Vec<(String, f64)>> {
        self.header
            .iter()
            .filter_map(|h| h.strip_prefix("count_").map(|n| (h.clone(), n.to_string())))
            .map(|(col, name)| Ok((name, self.column(&col)?.iter().sum())))
            .collect()
    }
}

/// A mean curve with its standard deviation at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-step mean and population std of `mean_eval_reward` across runs that
/// share the same step grid.
pub fn aggregate(label: &str, runs: &[MetricsTable]) -> Result<Band> {
    let first = runs.first().ok_or_else(|| Error::Invalid("no runs to aggregate".into()))?;
    let steps = first.column("step")?;
    let curves = runs
        .iter()
        .map(|r| {
            if r.column("step")? != steps {
                return Err(Error::Format("runs were evaluated at different steps".into()));
            }
            r.column("mean_eval_reward")
        })
        .collect::<Result<Vec<_>>>()?;
    let n = curves.len() as f64;
    let mean: Vec<f64> = (0..steps.len()).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n).collect();
    let std = (0..steps.len()).map(|i| (curves.iter().map(|c| (c[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt()).collect();
    Ok(Band { label: label.to_string(), steps, mean, std })
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        W / 2.0
    )
}

fn axes(out: &mut String, x_label: &str, y_label: &str, x_max: f64, y_max: f64) {
    let _ = writeln!(out, "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", H - M, W - M, H - M);
    let _ = writeln!(out, "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>", H - M);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x_label}</text>", W / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{y_label}</text>",
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{x_max}</text>", W - M, H - M + 14.0);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{y_max:.2}</text>", M - 4.0, M + 4.0);
}

/// Reward-vs-step curves; each band is drawn as a shaded mean ± std polygon
/// under its mean line.
pub fn curve_svg(title: &str, bands: &[Band]) -> Result<String> {
    if bands.is_empty() || bands.iter().any(|b| b.steps.is_empty()) {
        return Err(Error::Invalid("nothing to plot".into()));
    }
    let x_max = bands.iter().flat_map(|b| b.steps.iter().copied()).fold(1.0, f64::max);
    let y_max = bands.iter().flat_map(|b| b.mean.iter().zip(&b.std).map(|(m, s)| m + s)).fold(1.0, f64::max);
    let px = |x: f64| M + x / x_max * (W - 2.0 * M);
    let py = |y: f64| H - M - y.max(0.0) / y_max * (H - 2.0 * M);
    let mut out = svg_open(title);
    axes(&mut out, "environment steps", "mean eval reward", x_max, y_max);
    for (k, b) in bands.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let upper = b.steps.iter().zip(&b.mean).zip(&b.std).map(|((x, m), s)| format!("{:.2},{:.2}", px(*x), py(m + s)));
        let lower = b.steps.iter().zip(&b.mean).zip(&b.std).rev().map(|((x, m), s)| format!("{:.2},{:.2}", px(*x), py(m - s)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(out, "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>", band.join(" "));
        let line: Vec<String> = b.steps.iter().zip(&b.mean).map(|(x, m)| format!("{:.2},{:.2}", px(*x), py(*m))).collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", line.join(" "));
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            M + 10.0,
            M + 16.0 * (k as f64 + 1.0),
            b.label
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Bar chart of each subtask's share of executed segments.
pub fn proportion_svg(title: &str, totals: &[(String, f64)]) -> Result<String> {
    let sum: f64 = totals.iter().map(|(_, c)| c).sum();
    if totals.is_empty() || sum <= 0.0 {
        return Err(Error::Invalid("no executed segments to plot".into()));
    }
    let mut out = svg_open(title);
    axes(&mut out, "subtask", "proportion of segments", 0.0, 1.0);
    let slot = (W - 2.0 * M) / totals.len() as f64;
    for (k, (name, c)) in totals.iter().enumerate() {
        let share = c / sum;
        let h = share * (H - 2.0 * M);
        let x = M + slot * k as f64 + slot * 0.15;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
            H - M - h,
            slot * 0.7,
            COLORS[k % COLORS.len()]
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(out, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{share:.3}</text>", H - M - h - 4.0);
        let _ = writeln!(out, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{name}</text>", H - M + 28.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}
