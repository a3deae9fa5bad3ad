//! Plain CSV: `,` separator, `.` decimal point, one header row, `\n` line
//! ends. Numbers use Rust's shortest round-trip formatting (exponent form
//! for very small or very large magnitudes), so the output does not depend
//! on the locale.

use std::io::{self, Write};

use crate::critical::SweepTable;
use crate::simulate::TrajectoryRow;

pub fn format_number(x: f64) -> String {
    let m = x.abs();
    if m != 0.0 && m.is_finite() && !(1e-4..1e16).contains(&m) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_number).unwrap_or_default()
}

/// Columns: the grid variables in axis order, then `t_c,residual,status`.
/// `t_c` and `residual` are empty when the status is not `ok`.
pub fn write_sweep_csv<W: Write>(table: &SweepTable, mut w: W) -> io::Result<()> {
    writeln!(w, "{}", table.header().join(","))?;
    for row in &table.rows {
        let mut cells: Vec<String> = row.coords.iter().map(|&v| format_number(v)).collect();
        cells.push(opt(row.t_c));
        cells.push(opt(row.residual));
        cells.push(row.status.as_str().to_string());
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Columns: `t,n,r,event`.
pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut w: W) -> io::Result<()> {
    writeln!(w, "t,n,r,event")?;
    for row in rows {
        writeln!(w, "{},{},{},{}", format_number(row.t), row.n, row.r, row.event.tag())?;
    }
    Ok(())
}

/// Columns: `index,t`.
pub fn write_samples_csv<W: Write>(samples: &[f64], mut w: W) -> io::Result<()> {
    writeln!(w, "index,t")?;
    for (i, t) in samples.iter().enumerate() {
        writeln!(w, "{i},{}", format_number(*t))?;
    }
    Ok(())
}
