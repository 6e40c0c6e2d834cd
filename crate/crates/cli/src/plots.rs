//! Gnuplot scripts for the series of a finished run. Nothing is executed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::run::Fit;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed report {path}: {source}")]
    Report {
        path: String,
        source: serde_json::Error,
    },
    #[error("report references missing CSV {0}")]
    MissingCsv(String),
}

/// The part of a report the plots need.
#[derive(Debug, Deserialize)]
struct PlotView {
    #[serde(default)]
    outputs: BTreeMap<String, String>,
    #[serde(default)]
    fits: BTreeMap<String, Fit>,
}

#[derive(Debug, Default)]
pub struct PlotOutcome {
    pub scripts: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

const PREAMBLE: &str = "set datafile separator ','\nset terminal pngcairo size 900,600\n";

fn columns(csv: &Path) -> Result<Vec<String>, PlotError> {
    let text = fs::read_to_string(csv).map_err(|source| PlotError::Io {
        path: csv.display().to_string(),
        source,
    })?;
    let head = text.lines().next().unwrap_or("");
    Ok(head.split(',').map(|s| s.trim().to_string()).collect())
}

fn decay(file: &str, stem: &str, fit: Option<&Fit>) -> String {
    let mut s = format!(
        "{PREAMBLE}set output '{stem}.png'\nset logscale y\nset xlabel 't'\nset ylabel 'd(t)'\n"
    );
    match fit {
        Some(f) if f.omega_hat.is_finite() && f.c_hat.is_finite() => {
            s += &format!(
                "c_hat = {:e}\nomega_hat = {:e}\ns0 = {:e}\n",
                f.c_hat, f.omega_hat, f.s
            );
            s += &format!(
                "plot '{file}' using 1:2 skip 1 with linespoints title 'distance', \\\n     c_hat*exp(-omega_hat*(x - s0)) with lines title 'fit'\n"
            );
        }
        _ => s += &format!("plot '{file}' using 1:2 skip 1 with linespoints title 'distance'\n"),
    }
    s
}

fn profiles(file: &str, stem: &str, cols: &[String]) -> String {
    let mut s = format!("{PREAMBLE}set output '{stem}.png'\nset xlabel 'x'\nplot ");
    let parts: Vec<String> = cols
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| format!("'{file}' using 1:{} skip 1 with lines title '{c}'", i + 1))
        .collect();
    s += &parts.join(", \\\n     ");
    s.push('\n');
    s
}

fn trend(file: &str, stem: &str, cols: &[String]) -> String {
    let y = cols.get(1).map(String::as_str).unwrap_or("value");
    format!(
        "{PREAMBLE}set output '{stem}.png'\nset logscale y\nset xlabel 'n'\nset ylabel '{y}'\nplot '{file}' using 1:2 skip 1 with linespoints title '{y}'\n"
    )
}

/// Writes one `.gp` script per plottable series next to `report_path`.
pub fn emit_plots(report_path: &Path) -> Result<PlotOutcome, PlotError> {
    let text = fs::read_to_string(report_path).map_err(|source| PlotError::Io {
        path: report_path.display().to_string(),
        source,
    })?;
    let view: PlotView = serde_json::from_str(&text).map_err(|source| PlotError::Report {
        path: report_path.display().to_string(),
        source,
    })?;
    let dir = report_path.parent().unwrap_or(Path::new("."));
    let mut out = PlotOutcome::default();
    for (name, file) in &view.outputs {
        if !file.ends_with(".csv") {
            continue;
        }
        let csv = dir.join(file);
        if !csv.is_file() {
            return Err(PlotError::MissingCsv(csv.display().to_string()));
        }
        let stem = format!("plot_{name}");
        let script = if name.starts_with("distances_") {
            decay(file, &stem, view.fits.get(name))
        } else if matches!(
            name.as_str(),
            "h_family" | "gamma_family" | "h_monodromy" | "final_profiles"
        ) {
            profiles(file, &stem, &columns(&csv)?)
        } else if matches!(name.as_str(), "b4_trend" | "a4_ratios") {
            trend(file, &stem, &columns(&csv)?)
        } else {
            continue;
        };
        let path = dir.join(format!("{stem}.gp"));
        fs::write(&path, script).map_err(|source| PlotError::Io {
            path: path.display().to_string(),
            source,
        })?;
        out.scripts.push(path);
    }
    if out.scripts.is_empty() {
        out.warnings
            .push(format!("{}: no plottable series", report_path.display()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_script_overlays_the_fit() {
        let f = Fit {
            s: 0.0,
            c_hat: 2.0,
            omega_hat: 0.5,
        };
        let s = decay("d.csv", "plot_d", Some(&f));
        assert!(s.contains("set logscale y"));
        assert!(s.contains("c_hat*exp(-omega_hat*(x - s0))"));
        let s = decay(
            "d.csv",
            "plot_d",
            Some(&Fit {
                omega_hat: f64::NAN,
                ..f
            }),
        );
        assert!(!s.contains("exp("));
    }

    #[test]
    fn profile_script_has_one_curve_per_column() {
        let cols: Vec<String> = ["x", "t=0", "t=0.5"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let s = profiles("h.csv", "plot_h", &cols);
        assert_eq!(s.matches("with lines").count(), 2);
        assert!(s.contains("using 1:3"));
    }
}
