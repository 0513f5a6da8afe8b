//! Trajectory CSV serialization.
//!
//! Columns, in order: t, q_1..q_n, qd_1..qd_n, p_1..p_n, E_kin, E_pot,
//! E_tot, drift, event. Momentum columns of locked joints are empty. Values
//! are written with 17 significant digits, so parsing an emitted file
//! recovers every f64 exactly.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use vtm_core::Trajectory;

use crate::error::{CliError, Result};

/// One parsed CSV record.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Momentum per joint; None for locked joints.
    pub momentum: Vec<Option<f64>>,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    pub drift: f64,
    pub event: bool,
}

fn fmt(v: f64) -> String {
    format!("{:.16e}", v)
}

pub fn write_trajectory<W: Write>(out: &mut W, traj: &Trajectory) -> Result<()> {
    let n = traj.n;
    let io_err = |source: std::io::Error| CliError::Io {
        path: "<csv output>".into(),
        source,
    };

    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("q_{}", i)));
    header.extend((1..=n).map(|i| format!("qd_{}", i)));
    header.extend((1..=n).map(|i| format!("p_{}", i)));
    header.extend(["E_kin", "E_pot", "E_tot", "drift", "event"].map(String::from));
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;

    for row in &traj.rows {
        let mut fields = Vec::with_capacity(3 * n + 6);
        fields.push(fmt(row.t));
        fields.extend(row.q.iter().map(|&v| fmt(v)));
        fields.extend(row.qd.iter().map(|&v| fmt(v)));
        let mut momentum = vec![String::new(); n];
        for (slot, &joint) in row.free_joints.iter().enumerate() {
            momentum[joint] = fmt(row.momentum[slot]);
        }
        fields.extend(momentum);
        fields.push(fmt(row.kinetic));
        fields.push(fmt(row.potential));
        fields.push(fmt(row.total));
        fields.push(fmt(row.drift));
        fields.push(if row.event { "1".into() } else { "0".into() });
        writeln!(out, "{}", fields.join(",")).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_trajectory_file(path: &Path, traj: &Trajectory) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = std::io::BufWriter::new(file);
    write_trajectory(&mut writer, traj)?;
    writer.flush().map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_field(field: &str, line: usize, what: &str) -> Result<f64> {
    field.parse().map_err(|_| {
        CliError::Validation(format!("csv line {}: cannot parse {} value '{}'", line, what, field))
    })
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(line))) => line,
        _ => return Err(CliError::Validation("csv: missing header row".into())),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[0] != "t" || (cols.len() - 6) % 3 != 0 {
        return Err(CliError::Validation("csv: unrecognized header layout".into()));
    }
    let n = (cols.len() - 6) / 3;

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|source| CliError::Io {
            path: "<csv input>".into(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 * n + 6 {
            return Err(CliError::Validation(format!(
                "csv line {}: {} fields, expected {}",
                lineno,
                fields.len(),
                3 * n + 6
            )));
        }
        let t = parse_field(fields[0], lineno, "t")?;
        let q = fields[1..=n]
            .iter()
            .map(|f| parse_field(f, lineno, "q"))
            .collect::<Result<Vec<_>>>()?;
        let qd = fields[n + 1..=2 * n]
            .iter()
            .map(|f| parse_field(f, lineno, "qd"))
            .collect::<Result<Vec<_>>>()?;
        let momentum = fields[2 * n + 1..=3 * n]
            .iter()
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    parse_field(f, lineno, "p").map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let kinetic = parse_field(fields[3 * n + 1], lineno, "E_kin")?;
        let potential = parse_field(fields[3 * n + 2], lineno, "E_pot")?;
        let total = parse_field(fields[3 * n + 3], lineno, "E_tot")?;
        let drift = parse_field(fields[3 * n + 4], lineno, "drift")?;
        let event = match fields[3 * n + 5] {
            "0" => false,
            "1" => true,
            other => {
                return Err(CliError::Validation(format!(
                    "csv line {}: event flag '{}' is not 0 or 1",
                    lineno, other
                )))
            }
        };
        rows.push(CsvRow {
            t,
            q,
            qd,
            momentum,
            kinetic,
            potential,
            total,
            drift,
            event,
        });
    }
    Ok(rows)
}

pub fn read_trajectory_file(path: &Path) -> Result<Vec<CsvRow>> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trajectory(file)
}
