use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{prepare, trial_error, ExperimentSpec};
use crate::datagen::derive_seed;
use crate::error::Result;
use crate::io::fmt_f64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub alpha: f64,
    pub rank: usize,
    /// Per-trial relative recovery error, `+inf` for failed trials.
    pub errors: Vec<f64>,
    pub mean_error: f64,
}

impl CellResult {
    pub fn log10_mean(&self) -> f64 {
        self.mean_error.log10()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridReport {
    pub alphas: Vec<f64>,
    pub ranks: Vec<usize>,
    /// Row-major over `(alpha, rank)`.
    pub cells: Vec<CellResult>,
}

impl GridReport {
    pub fn cell(&self, ai: usize, ri: usize) -> &CellResult {
        &self.cells[ai * self.ranks.len() + ri]
    }
}

fn run_cell(spec: &ExperimentSpec, index: usize) -> CellResult {
    let alpha = spec.alphas[index / spec.ranks.len()];
    let rank = spec.ranks[index % spec.ranks.len()];
    let family = spec.family(alpha, rank);
    let cfg = spec.solver_config(rank);
    let cell_seed = derive_seed(spec.seed, index as u64);
    let errors = match prepare(spec, &family, &cfg, cell_seed) {
        Ok(prepared) => (0..spec.trials)
            .map(|t| {
                let seed = derive_seed(cell_seed, t as u64);
                let run = family
                    .sample(seed)
                    .and_then(|inst| trial_error(spec, &prepared, &inst, &cfg, seed));
                run.unwrap_or_else(|e| {
                    warn!("cell (alpha {alpha}, r {rank}) trial {t} failed: {e}");
                    f64::INFINITY
                })
            })
            .collect(),
        Err(e) => {
            warn!("cell (alpha {alpha}, r {rank}) training failed: {e}");
            vec![f64::INFINITY; spec.trials]
        }
    };
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    CellResult {
        alpha,
        rank,
        errors,
        mean_error,
    }
}

/// Runs every `(alpha, rank)` cell. Failed trials count as `+inf`; the grid
/// itself only fails on an invalid spec.
pub fn phase_grid(spec: &ExperimentSpec) -> Result<GridReport> {
    spec.validate()?;
    let count = spec.alphas.len() * spec.ranks.len();
    let cells = (0..count)
        .into_par_iter()
        .map(|i| run_cell(spec, i))
        .collect();
    Ok(GridReport {
        alphas: spec.alphas.clone(),
        ranks: spec.ranks.clone(),
        cells,
    })
}

/// Matrix of `log10` mean errors: one row per alpha, one column per rank.
pub fn write_grid_csv(path: impl AsRef<Path>, report: &GridReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["alpha".to_string()];
    header.extend(report.ranks.iter().map(|r| format!("r={r}")));
    w.write_record(&header)?;
    for (ai, alpha) in report.alphas.iter().enumerate() {
        let mut row = vec![fmt_f64(*alpha)];
        row.extend((0..report.ranks.len()).map(|ri| fmt_f64(report.cell(ai, ri).log10_mean())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

const ANCHORS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

/// Entry `i` of the 256-step ramp, dark (low error) to bright (high error).
pub(crate) fn ramp(i: u8) -> (u8, u8, u8) {
    let x = i as f64 / 255.0 * (ANCHORS.len() - 1) as f64;
    let k = (x.floor() as usize).min(ANCHORS.len() - 2);
    let t = x - k as f64;
    let (a, b) = (ANCHORS[k], ANCHORS[k + 1]);
    let mix = |p: f64, q: f64| (p + t * (q - p)).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

const CELL_W: usize = 64;
const CELL_H: usize = 40;
const MARGIN: usize = 56;

/// Heatmap of `log10` mean error; failed cells are gray.
pub fn write_heatmap_svg(path: impl AsRef<Path>, report: &GridReport) -> Result<()> {
    let values: Vec<f64> = report.cells.iter().map(|c| c.log10_mean()).collect();
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (cols, rows) = (report.ranks.len(), report.alphas.len());
    let width = MARGIN + cols * CELL_W + 8;
    let height = MARGIN + rows * CELL_H + 8;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="4" y="14">log10 mean relative error</text>"#).unwrap();
    for (ri, r) in report.ranks.iter().enumerate() {
        let x = MARGIN + ri * CELL_W + CELL_W / 2;
        writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">r={r}</text>"#, MARGIN - 6).unwrap();
    }
    for (ai, alpha) in report.alphas.iter().enumerate() {
        let y = MARGIN + ai * CELL_H + CELL_H / 2 + 4;
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{alpha}</text>"#, MARGIN - 6).unwrap();
        for ri in 0..cols {
            let v = values[ai * cols + ri];
            let fill = if v.is_finite() {
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                let (r, g, b) = ramp((t * 255.0).round() as u8);
                format!("#{r:02x}{g:02x}{b:02x}")
            } else {
                "#808080".to_string()
            };
            let (x, y) = (MARGIN + ri * CELL_W, MARGIN + ai * CELL_H);
            writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}"><title>{}</title></rect>"#,
                fmt_f64(v)
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    fs::write(path, s)?;
    Ok(())
}
