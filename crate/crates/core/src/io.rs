//! On-disk formats: numeric CSV tables with a schema line, JSON
//! checkpoints and episode summaries, and plot-ready figure tables.
//!
//! Every CSV starts with `# leapstack <kind> v<SCHEMA_VERSION>` followed by
//! a header row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EpisodeSummary, TrajectoryRow, TRAJECTORY_COLUMNS};
use crate::policy::{ControlMode, PolicyParams};
use crate::trainer::CurvePoint;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema: {0}")]
    Schema(String),
}

/// Columns of named `f64` series.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        Self {
            kind: kind.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, IoError> {
        let i = self
            .column_index(name)
            .ok_or_else(|| IoError::Schema(format!("{} table has no column '{name}'", self.kind)))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), IoError> {
        let mut out = BufWriter::new(out);
        writeln!(out, "# leapstack {} v{SCHEMA_VERSION}", self.kind)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            debug_assert_eq!(row.len(), self.columns.len());
            // `{}` on f64 is the shortest representation that parses back exactly
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self, IoError> {
        let mut input = BufReader::new(input);
        let mut first = String::new();
        input.read_line(&mut first)?;
        let kind = parse_schema_line(first.trim_end())?;
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| IoError::Schema(format!("data row {}: {e}", line + 1)))?;
            if row.len() != columns.len() {
                return Err(IoError::Schema(format!(
                    "data row {} has {} fields, header has {}",
                    line + 1,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { kind, columns, rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        self.write(create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::read(open(path)?)
    }
}

fn parse_schema_line(line: &str) -> Result<String, IoError> {
    let bad = || IoError::Schema(format!("missing schema line, found '{line}'"));
    let mut parts = line.strip_prefix("# leapstack ").ok_or_else(bad)?.split(' ');
    let kind = parts.next().filter(|k| !k.is_empty()).ok_or_else(bad)?;
    let version: u32 = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    if version != SCHEMA_VERSION {
        return Err(IoError::Schema(format!("schema version {version}, expected {SCHEMA_VERSION}")));
    }
    Ok(kind.to_string())
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn trajectory_table(rows: &[TrajectoryRow]) -> Table {
    let mut t = Table::new("trajectory", TRAJECTORY_COLUMNS);
    t.rows = rows.to_vec();
    t
}

pub const CURVE_COLUMNS: &[&str] = &["iteration", "episodes", "mean_return", "std_return", "wall_clock_s"];

pub fn curve_table(points: &[CurvePoint]) -> Table {
    let mut t = Table::new("learning_curve", CURVE_COLUMNS);
    t.rows = points
        .iter()
        .map(|p| vec![p.iteration as f64, p.episodes as f64, p.mean_return, p.std_return, p.wall_clock_s])
        .collect();
    t
}

/// Policy plus the hash of the configuration it was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config_hash: String,
    pub mode: ControlMode,
    pub iteration: usize,
    pub episodes: usize,
    pub params: PolicyParams,
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let mut out = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_reader(BufReader::new(open(path)?))?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let ck: Checkpoint = load_json(path)?;
    if ck.schema_version != SCHEMA_VERSION {
        return Err(IoError::Schema(format!(
            "checkpoint schema version {}, expected {SCHEMA_VERSION}",
            ck.schema_version
        )));
    }
    ck.params.validate().map_err(IoError::Schema)?;
    Ok(ck)
}

/// Summary as written next to a rollout trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub mode: ControlMode,
    pub config_hash: String,
    pub mean_flight_time: f64,
    #[serde(flatten)]
    pub episode: EpisodeSummary,
}

/// Figure tables derived from trajectories and learning curves.
pub mod figures {
    use super::*;

    pub const KEYS: &[&str] = &["omni", "yawrate", "pitch", "contacts", "curve"];

    fn pick(src: &Table, out_kind: &str, names: &[&str]) -> Result<Table, IoError> {
        let idx = names
            .iter()
            .map(|n| {
                src.column_index(n)
                    .ok_or_else(|| IoError::Schema(format!("{} table has no column '{n}'", src.kind)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut t = Table::new(out_kind, names);
        t.rows = src.rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect();
        Ok(t)
    }

    /// Actual and scheduled contacts at the simulator rate.
    pub fn contacts(traj: &Table) -> Result<Table, IoError> {
        pick(traj, "fig_contacts", &["time", "c_fr", "c_fl", "c_rr", "c_rl", "desired_contact"])
    }

    pub fn yaw_rate(traj: &Table) -> Result<Table, IoError> {
        pick(traj, "fig_yawrate", &["time", "yaw_rate", "yaw", "target_yaw"])
    }

    /// Pitch of each trajectory on a shared time axis, truncated to the
    /// shortest.
    pub fn pitch(trajs: &[Table]) -> Result<Table, IoError> {
        let first = trajs
            .first()
            .ok_or_else(|| IoError::Schema("pitch needs at least one trajectory".into()))?;
        let time = first.column("time")?;
        let series = trajs.iter().map(|t| t.column("pitch")).collect::<Result<Vec<_>, _>>()?;
        let n = series.iter().map(Vec::len).min().unwrap_or(0);
        let names: Vec<String> = std::iter::once("time".to_string())
            .chain((0..trajs.len()).map(|i| format!("pitch_{i}")))
            .collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut t = Table::new("fig_pitch", &names);
        t.rows = (0..n)
            .map(|k| std::iter::once(time[k]).chain(series.iter().map(|s| s[k])).collect())
            .collect();
        Ok(t)
    }

    /// Long format: one CoM polyline (`kind` 0) and the target crosses
    /// (`kind` 1) per trajectory.
    pub fn omni(trajs: &[Table]) -> Result<Table, IoError> {
        let mut t = Table::new("fig_omni", &["series", "kind", "x", "y"]);
        for (s, traj) in trajs.iter().enumerate() {
            let (x, y) = (traj.column("px")?, traj.column("py")?);
            let (tx, ty) = (traj.column("target_x")?, traj.column("target_y")?);
            t.rows.extend(x.iter().zip(&y).map(|(x, y)| vec![s as f64, 0.0, *x, *y]));
            let mut last: Option<(f64, f64)> = None;
            for (x, y) in tx.into_iter().zip(ty) {
                if last != Some((x, y)) {
                    t.rows.push(vec![s as f64, 1.0, x, y]);
                    last = Some((x, y));
                }
            }
        }
        Ok(t)
    }

    /// Stacked learning curves, `series` indexing the inputs.
    pub fn curve(curves: &[Table]) -> Result<Table, IoError> {
        let mut t = Table::new("fig_curve", &["series", "episodes", "mean_return", "std_return"]);
        for (s, c) in curves.iter().enumerate() {
            let (e, m, d) = (c.column("episodes")?, c.column("mean_return")?, c.column("std_return")?);
            t.rows.extend((0..e.len()).map(|k| vec![s as f64, e[k], m[k], d[k]]));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_roundtrip_is_exact() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.rows = vec![vec![0.1, -1.0 / 3.0], vec![f64::MIN_POSITIVE, 1e300]];
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"# leapstack demo v1\na,b\n"));
        assert_eq!(Table::read(&buf[..]).unwrap(), t);
    }

    #[test]
    fn missing_schema_line_rejected() {
        assert!(matches!(Table::read(&b"a,b\n1,2\n"[..]), Err(IoError::Schema(_))));
        assert!(matches!(Table::read(&b"# leapstack demo v9\na\n1\n"[..]), Err(IoError::Schema(_))));
    }

    #[test]
    fn ragged_row_rejected() {
        assert!(Table::read(&b"# leapstack demo v1\na,b\n1\n"[..]).is_err());
    }

    #[test]
    fn contacts_figure_has_four_flags() {
        let mut traj = Table::new("trajectory", TRAJECTORY_COLUMNS);
        traj.rows = vec![(0..TRAJECTORY_COLUMNS.len()).map(|i| i as f64).collect()];
        let f = figures::contacts(&traj).unwrap();
        assert_eq!(f.columns.len(), 6);
        assert_eq!(f.rows[0][1], traj.column_index("c_fr").unwrap() as f64);
    }

    #[test]
    fn omni_deduplicates_targets() {
        let mut traj = Table::new("trajectory", TRAJECTORY_COLUMNS);
        let (tx, ty) = (traj.column_index("target_x").unwrap(), traj.column_index("target_y").unwrap());
        for k in 0..4 {
            let mut r = vec![0.0; TRAJECTORY_COLUMNS.len()];
            r[tx] = if k < 2 { 0.3 } else { 0.6 };
            r[ty] = 0.0;
            traj.rows.push(r);
        }
        let f = figures::omni(&[traj.clone(), traj]).unwrap();
        let crosses = f.rows.iter().filter(|r| r[1] == 1.0).count();
        assert_eq!(crosses, 4);
    }
}
