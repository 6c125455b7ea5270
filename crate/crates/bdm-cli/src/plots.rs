//! Gnuplot script emission.
//!
//! The script is data-only coupled: it references the CSV files found in
//! the output directory at emission time and can be rerun whenever the
//! data changes (`gnuplot plot.gp` produces PNGs next to the CSVs).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// CSV inventory of an output directory, grouped by role.
#[derive(Debug, Default)]
struct Inventory {
    boxes: Vec<String>,
    times: Vec<String>,
    omegas: Vec<String>,
    pcrbs: Vec<String>,
}

fn inventory(dir: &Path) -> Result<Inventory> {
    let mut inv = Inventory::default();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".csv") {
            continue;
        }
        if name.starts_with("rmse_box_") {
            inv.boxes.push(name);
        } else if name.starts_with("rmse_time_") {
            inv.times.push(name);
        } else if name.starts_with("omega_time_") {
            inv.omegas.push(name);
        } else if name.starts_with("pcrb_") {
            inv.pcrbs.push(name);
        }
    }
    inv.boxes.sort();
    inv.times.sort();
    inv.omegas.sort();
    inv.pcrbs.sort();
    Ok(inv)
}

fn series_label(file: &str) -> String {
    file.trim_end_matches(".csv")
        .trim_start_matches("rmse_box_")
        .trim_start_matches("rmse_time_")
        .replace('_', " ")
}

/// Writes `plot.gp` rendering every recognized CSV in `dir`. Fails when
/// the directory holds nothing plottable.
pub fn emit_plots(dir: &Path) -> Result<PathBuf> {
    let inv = inventory(dir)?;
    if inv.boxes.is_empty() && inv.times.is_empty() && inv.omegas.is_empty() && inv.pcrbs.is_empty()
    {
        return Err(CliError::Usage(format!(
            "nothing to plot: no campaign CSV files in {}",
            dir.display()
        )));
    }

    let mut s = String::new();
    s.push_str("# Renders campaign CSVs to PNG files. Run: gnuplot plot.gp\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set terminal pngcairo size 1200,800\n");
    s.push_str("set key outside\n\n");

    if !inv.boxes.is_empty() {
        s.push_str("set output 'rmse_box.png'\n");
        s.push_str("set style data boxplot\n");
        s.push_str("set style boxplot outliers pointtype 7\n");
        s.push_str("set ylabel 'time-averaged state RMSE'\n");
        let mut xtics = Vec::new();
        for (i, f) in inv.boxes.iter().enumerate() {
            xtics.push(format!("'{}' {}", series_label(f), i + 1));
        }
        let _ = writeln!(s, "set xtics ({})", xtics.join(", "));
        let parts: Vec<String> = inv
            .boxes
            .iter()
            .enumerate()
            .map(|(i, f)| format!("'{f}' using ({}):2 notitle", i + 1))
            .collect();
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
        s.push_str("unset xtics\nset xtics autofreq\nset style data lines\n\n");
    }

    if !inv.times.is_empty() {
        s.push_str("set output 'rmse_time.png'\n");
        s.push_str("set logscale y\n");
        s.push_str("set xlabel 'step'\nset ylabel 'position RMSE'\n");
        let mut parts: Vec<String> = inv
            .times
            .iter()
            .map(|f| format!("'{f}' using 1:2 with lines title '{}'", series_label(f)))
            .collect();
        // Position bound: root of the summed position-diagonal entries.
        parts.extend(inv.pcrbs.iter().map(|f| {
            format!(
                "'{f}' using 1:(sqrt($2+$4)) with lines dashtype 2 title '{}'",
                series_label(f)
            )
        }));
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
        s.push_str("unset logscale y\n\n");
    }

    if !inv.omegas.is_empty() {
        s.push_str("set output 'omega_time.png'\n");
        s.push_str("set xlabel 'step'\nset ylabel 'mean bias probability'\nset yrange [0:1]\n");
        let mut parts = Vec::new();
        for f in &inv.omegas {
            let cols = fs::read_to_string(dir.join(f))?
                .lines()
                .next()
                .map(|h| h.split(',').count())
                .unwrap_or(1);
            for c in 2..=cols {
                parts.push(format!(
                    "'{f}' using 1:{c} with lines title '{} s{}'",
                    series_label(f),
                    c - 2
                ));
            }
        }
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
        s.push_str("unset yrange\n");
    }

    let path = dir.join("plot.gp");
    fs::write(&path, s)?;
    Ok(path)
}
