use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cdkf_sched::{InputPlan, RatePlan, Schedule, TimeGrid};
use serde::Serialize;

use crate::CliError;

/// Locale-independent float with 17 significant digits (round-trips every `f64`).
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Accumulates written artifacts so the manifest can list them.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn csv(
        &mut self,
        name: &str,
        header: &[String],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let path = self.root.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_error(&path, e))?;
        w.write_record(header).map_err(|e| io_error(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| io_error(&path, e))?;
        }
        w.flush().map_err(|e| io_error(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.root.join(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| io_error(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn manifest(&mut self, m: ManifestInputs) -> Result<(), CliError> {
        let finished = unix_seconds();
        let outputs = self
            .written
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .collect();
        let manifest = RunManifest {
            command: m.command,
            scenario: m.scenario,
            config: m.config.map(|p| p.display().to_string()),
            seed: m.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_unix: m.started_unix,
            finished_unix: finished,
            out_dir: self.root.display().to_string(),
            outputs,
        };
        self.json("manifest.json", &manifest)
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct ManifestInputs {
    pub command: &'static str,
    pub scenario: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub started_unix: u64,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    scenario: Option<String>,
    config: Option<String>,
    seed: Option<u64>,
    tool_version: &'static str,
    started_unix: u64,
    finished_unix: u64,
    out_dir: String,
    /// File names relative to `out_dir`.
    outputs: Vec<String>,
}

/// Parsed `interval, t_start, t_end, <value columns>` table.
struct IntervalTable {
    grid: TimeGrid,
    columns: Vec<Vec<f64>>,
}

fn read_interval_table(path: &Path, prefix: &str) -> Result<IntervalTable, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_error(path, e))?;
    let header = reader.headers().map_err(|e| io_error(path, e))?.clone();
    if header.len() < 3 || &header[1] != "t_start" || &header[2] != "t_end" {
        return Err(CliError::Input(format!(
            "{}: expected columns interval,t_start,t_end,...",
            path.display()
        )));
    }
    if let Some(bad) = header.iter().skip(3).find(|h| !h.starts_with(prefix)) {
        return Err(CliError::Input(format!(
            "{}: unexpected column {bad:?}",
            path.display()
        )));
    }
    let width = header.len() - 3;
    let mut nodes = Vec::new();
    let mut columns = vec![Vec::new(); width];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_error(path, e))?;
        let parse = |i: usize| -> Result<f64, CliError> {
            record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::Input(format!(
                        "{}: row {}: malformed field {i}",
                        path.display(),
                        line + 1
                    ))
                })
        };
        let (a, b) = (parse(1)?, parse(2)?);
        match nodes.last() {
            None => nodes.push(a),
            Some(&prev) if prev == a => {}
            Some(_) => {
                return Err(CliError::Input(format!(
                    "{}: row {}: intervals are not contiguous",
                    path.display(),
                    line + 1
                )))
            }
        }
        nodes.push(b);
        for (c, column) in columns.iter_mut().enumerate() {
            column.push(parse(3 + c)?);
        }
    }
    let grid =
        TimeGrid::new(nodes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(IntervalTable { grid, columns })
}

pub fn read_rates(path: &Path) -> Result<RatePlan, CliError> {
    let t = read_interval_table(path, "lambda_")?;
    RatePlan::new(t.grid, t.columns)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_inputs(path: &Path) -> Result<(TimeGrid, InputPlan), CliError> {
    let t = read_interval_table(path, "u_")?;
    let dim = t.columns.len();
    let values = (0..t.grid.num_intervals())
        .map(|k| t.columns.iter().map(|c| c[k]).collect())
        .collect();
    let plan = InputPlan::new(dim, values)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((t.grid, plan))
}

/// Reads `sensor, t` rows (one-based sensor ids) into a schedule for `sensors` sensors.
pub fn read_schedule(path: &Path, sensors: usize, t0: f64, tf: f64) -> Result<Schedule, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_error(path, e))?;
    let header = reader.headers().map_err(|e| io_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["sensor", "t"] {
        return Err(CliError::Input(format!(
            "{}: expected columns sensor,t",
            path.display()
        )));
    }
    let mut times = vec![Vec::new(); sensors];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_error(path, e))?;
        let bad = || {
            CliError::Input(format!(
                "{}: row {}: malformed record",
                path.display(),
                line + 1
            ))
        };
        let id: usize = record
            .get(0)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(bad)?;
        let t: f64 = record
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(bad)?;
        if id == 0 || id > sensors {
            return Err(CliError::Input(format!(
                "{}: row {}: unknown sensor id {id}",
                path.display(),
                line + 1
            )));
        }
        times[id - 1].push(t);
    }
    for list in &mut times {
        list.sort_by(f64::total_cmp);
    }
    Schedule::new(times, t0, tf).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn interval_header(grid_prefix: &str, count: usize) -> Vec<String> {
    let mut h = vec![
        "interval".to_string(),
        "t_start".to_string(),
        "t_end".to_string(),
    ];
    h.extend((1..=count).map(|i| format!("{grid_prefix}{i}")));
    h
}

pub fn interval_rows(grid: &TimeGrid, value: impl Fn(usize) -> Vec<f64>) -> Vec<Vec<String>> {
    (0..grid.num_intervals())
        .map(|k| {
            let mut row = vec![k.to_string(), fmt(grid.node(k)), fmt(grid.node(k + 1))];
            row.extend(value(k).into_iter().map(fmt));
            row
        })
        .collect()
}

pub fn schedule_rows(schedule: &Schedule) -> Vec<Vec<String>> {
    schedule
        .times
        .iter()
        .enumerate()
        .flat_map(|(s, times)| {
            times
                .iter()
                .map(move |t| vec![(s + 1).to_string(), fmt(*t)])
        })
        .collect()
}
