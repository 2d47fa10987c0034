//! Artifact emission: flat CSV tables, a JSON manifest keyed by a config
//! hash, and self-contained SVG line plots. Floats are written with Rust's
//! shortest round-trip formatting, so a parsed CSV reproduces the exact
//! values and identical runs yield byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::fits::DecayReport;
use crate::harness::sweep::{CellOutcome, SweepResult};
use crate::mixers::RunRecord;
use crate::quad::QuadTrace;

/// Sweep table header; one row per successful cell (failures live in the
/// JSON result, not the CSV).
pub const SWEEP_CSV_HEADER: &str =
    "N,T,seed,K,final_gap_avg_iterate,final_gap_last_iterate,aligned_weight,hypergrad_err_last,wall_ms";

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for cell in &result.cells {
        if let CellOutcome::Ok {
            k_rounds,
            final_gap_avg_iterate,
            final_gap_last_iterate,
            aligned_weight,
            hypergrad_err_last,
            wall_ms,
            ..
        } = &cell.outcome
        {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                cell.budget,
                cell.horizon,
                cell.seed,
                k_rounds,
                final_gap_avg_iterate,
                final_gap_last_iterate,
                aligned_weight,
                hypergrad_err_last,
                wall_ms
            )
            .expect("string write");
        }
    }
    out
}

/// One parsed sweep row, for round-trip checks and downstream tooling.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget: u64,
    pub horizon: usize,
    pub seed: u64,
    pub k_rounds: u64,
    pub final_gap_avg_iterate: f64,
    pub final_gap_last_iterate: f64,
    pub aligned_weight: f64,
    pub hypergrad_err_last: f64,
    pub wall_ms: u64,
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_CSV_HEADER => {}
        other => {
            return Err(Error::Config {
                detail: format!("unexpected sweep CSV header: {other:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::Config {
                detail: format!("sweep CSV row {i} has {} fields", parts.len()),
            });
        }
        let field = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Config {
                detail: format!("sweep CSV row {i}: {e}"),
            })
        };
        rows.push(SweepRow {
            budget: parts[0].parse().map_err(|e| Error::Config {
                detail: format!("row {i}: {e}"),
            })?,
            horizon: parts[1].parse().map_err(|e| Error::Config {
                detail: format!("row {i}: {e}"),
            })?,
            seed: parts[2].parse().map_err(|e| Error::Config {
                detail: format!("row {i}: {e}"),
            })?,
            k_rounds: parts[3].parse().map_err(|e| Error::Config {
                detail: format!("row {i}: {e}"),
            })?,
            final_gap_avg_iterate: field(parts[4])?,
            final_gap_last_iterate: field(parts[5])?,
            aligned_weight: field(parts[6])?,
            hypergrad_err_last: field(parts[7])?,
            wall_ms: parts[8].parse().map_err(|e| Error::Config {
                detail: format!("row {i}: {e}"),
            })?,
        });
    }
    Ok(rows)
}

/// Per-round run table: `k,w_0..w_{m-1},F,gap,hypergrad_err`.
pub fn run_csv(record: &RunRecord, f_star: f64) -> String {
    let m = record.weights_final.len();
    let mut out = String::from("k");
    for j in 0..m {
        write!(out, ",w_{j}").expect("string write");
    }
    out.push_str(",F,gap,hypergrad_err\n");
    for row in &record.rounds {
        write!(out, "{}", row.k).expect("string write");
        for wj in &row.weights {
            write!(out, ",{wj}").expect("string write");
        }
        writeln!(
            out,
            ",{},{},{}",
            row.f_value,
            row.f_value - f_star,
            row.hypergrad_err_inf
        )
        .expect("string write");
    }
    out
}

/// Scalar-example trace table: `k,theta,w,phi,gbar` (final state row leaves
/// `gbar` empty).
pub fn quad_csv(trace: &QuadTrace) -> String {
    let mut out = String::from("k,theta,w,phi,gbar\n");
    for row in &trace.rows {
        match row.gbar {
            Some(g) => writeln!(out, "{},{},{},{},{}", row.k, row.theta, row.w, row.phi, g),
            None => writeln!(out, "{},{},{},{},", row.k, row.theta, row.w, row.phi),
        }
        .expect("string write");
    }
    out
}

/// Decay table: `T,err,fitted`.
pub fn decay_csv(report: &DecayReport) -> String {
    let mut out = String::from("T,err,fitted\n");
    for (t, e) in report.horizons.iter().zip(&report.errors) {
        let used = report.fitted_horizons.contains(t);
        writeln!(out, "{t},{e},{}", used as u8).expect("string write");
    }
    out
}

/// SHA-256 of a serializable config, hex-encoded; identical configs hash
/// identically and any field change reseeds the hash.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().fold(String::new(), |mut acc, b| {
        write!(acc, "{b:02x}").expect("string write");
        acc
    }))
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    config_hash: String,
    tool_version: &'a str,
    seeds: Vec<u64>,
    f_star: f64,
    w_star: &'a [f64],
    cell_count: usize,
}

/// Writes `sweep.csv`, `manifest.json`, and the per-metric SVG plots under
/// `out_dir`; returns the created paths.
pub fn emit_sweep(result: &SweepResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("sweep.csv");
    fs::write(&csv_path, sweep_csv(result))?;
    written.push(csv_path);

    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = result.cells.iter().map(|c| c.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let manifest = Manifest {
        config_hash: config_hash(&result.plan)?,
        tool_version: env!("CARGO_PKG_VERSION"),
        seeds,
        f_star: result.f_star,
        w_star: &result.w_star,
        cell_count: result.cells.len(),
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    written.push(manifest_path);

    let plot_dir = out_dir.join("plots");
    fs::create_dir_all(&plot_dir)?;
    let loss_series = budget_series(result, |o| match o {
        CellOutcome::Ok {
            final_gap_avg_iterate,
            ..
        } => Some(final_gap_avg_iterate.max(1e-16)),
        _ => None,
    });
    let loss_path = plot_dir.join("loss_vs_T.svg");
    fs::write(
        &loss_path,
        line_plot(
            "final suboptimality vs horizon",
            "log2 T",
            "log10 gap",
            &loss_series,
            true,
        ),
    )?;
    written.push(loss_path);

    let weight_series = budget_series(result, |o| match o {
        CellOutcome::Ok { aligned_weight, .. } => Some(*aligned_weight),
        _ => None,
    });
    let weight_path = plot_dir.join("aligned_weight_vs_T.svg");
    fs::write(
        &weight_path,
        line_plot(
            "aligned-domain weight vs horizon",
            "log2 T",
            "weight",
            &weight_series,
            false,
        ),
    )?;
    written.push(weight_path);
    Ok(written)
}

fn budget_series(
    result: &SweepResult,
    metric: impl Fn(&CellOutcome) -> Option<f64>,
) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut series = Vec::new();
    for &budget in &result.plan.budgets {
        let mut by_t: Vec<(usize, f64, usize)> = Vec::new();
        for cell in &result.cells {
            if cell.budget != budget {
                continue;
            }
            if let Some(v) = metric(&cell.outcome) {
                match by_t.iter_mut().find(|(t, _, _)| *t == cell.horizon) {
                    Some(entry) => {
                        entry.1 += v;
                        entry.2 += 1;
                    }
                    None => by_t.push((cell.horizon, v, 1)),
                }
            }
        }
        by_t.sort_unstable_by_key(|(t, _, _)| *t);
        let points: Vec<(f64, f64)> = by_t
            .iter()
            .map(|(t, sum, n)| ((*t as f64).log2(), sum / *n as f64))
            .collect();
        if !points.is_empty() {
            series.push((format!("N={budget}"), points));
        }
    }
    series
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f6fb2", "#d1495b", "#3d8f5f", "#8a5fb2", "#c78a2d", "#4a4a4a"];

/// Minimal multi-series line plot; y may be log10-scaled.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    log_y: bool,
) -> String {
    let transform =
        |y: f64| -> f64 { if log_y { y.max(1e-300).log10() } else { y } };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (_, pts) in series {
        for (x, y) in pts {
            xs.push(*x);
            ys.push(transform(*y));
        }
    }
    let (x_min, x_max) = bounds(&xs);
    let (y_min, y_max) = bounds(&ys);
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min).max(1e-12) * (PLOT_W - 2.0 * MARGIN);
    let sy =
        |y: f64| PLOT_H - MARGIN - (y - y_min) / (y_max - y_min).max(1e-12) * (PLOT_H - 2.0 * MARGIN);

    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">"
    )
    .expect("string write");
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    write!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{title}</text>",
        PLOT_W / 2.0
    )
    .expect("string write");
    // axes
    write!(
        svg,
        "<line x1=\"{m:.1}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"black\"/><line x1=\"{m:.1}\" y1=\"{t:.1}\" x2=\"{m:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>",
        m = MARGIN,
        b = PLOT_H - MARGIN,
        r = PLOT_W - MARGIN,
        t = MARGIN
    )
    .expect("string write");
    // ticks
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>",
            sx(fx),
            PLOT_H - MARGIN + 18.0,
            fx
        )
        .expect("string write");
        write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>",
            MARGIN - 6.0,
            sy(fy) + 4.0,
            fy
        )
        .expect("string write");
    }
    write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x_label}</text>",
        PLOT_W / 2.0,
        PLOT_H - 12.0
    )
    .expect("string write");
    write!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {mid:.1})\">{y_label}</text>",
        PLOT_H / 2.0,
        mid = PLOT_H / 2.0
    )
    .expect("string write");
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for (x, y) in pts {
            if !path.is_empty() {
                path.push(' ');
            }
            write!(path, "{:.2},{:.2}", sx(*x), sy(transform(*y))).expect("string write");
        }
        write!(
            svg,
            "<polyline points=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>"
        )
        .expect("string write");
        write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{label}</text>",
            PLOT_W - MARGIN + 4.0,
            MARGIN + 16.0 * i as f64
        )
        .expect("string write");
    }
    svg.push_str("</svg>");
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let lo = v.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let hi = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
