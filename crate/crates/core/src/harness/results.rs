use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::AggregateReport;

pub const COLUMNS: [&str; 9] = [
    "config_id",
    "shot",
    "seed",
    "accuracy",
    "di",
    "eopp",
    "eodd",
    "wall_time_s",
    "status",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed(String),
}

impl Status {
    fn render(&self) -> String {
        match self {
            Status::Ok => "ok".into(),
            Status::Failed(msg) => format!("failed: {}", msg.replace(['\n', '\r'], " ")),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        if s == "ok" {
            Some(Status::Ok)
        } else {
            s.strip_prefix("failed")
                .map(|rest| Status::Failed(rest.trim_start_matches(':').trim().to_string()))
        }
    }
}

/// One (config, shot, seed) cell. Metrics are means over evaluation tasks;
/// `None` when undefined on every task or when the cell failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub config_id: String,
    pub shot: usize,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub di: Option<f64>,
    pub eopp: Option<f64>,
    pub eodd: Option<f64>,
    pub wall_time_s: f64,
    pub status: Status,
}

fn defined(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ResultRow {
    pub fn ok(
        config_id: &str,
        shot: usize,
        seed: u64,
        report: &AggregateReport,
        wall_time_s: f64,
    ) -> Self {
        Self {
            config_id: config_id.to_string(),
            shot,
            seed,
            accuracy: defined(report.accuracy.mean),
            di: defined(report.di.mean),
            eopp: defined(report.eopp.mean),
            eodd: defined(report.eodd.mean),
            wall_time_s,
            status: Status::Ok,
        }
    }

    pub fn failed(
        config_id: &str,
        shot: usize,
        seed: u64,
        wall_time_s: f64,
        message: String,
    ) -> Self {
        Self {
            config_id: config_id.to_string(),
            shot,
            seed,
            accuracy: None,
            di: None,
            eopp: None,
            eodd: None,
            wall_time_s,
            status: Status::Failed(message),
        }
    }

    pub fn key(&self) -> (String, usize, u64) {
        (self.config_id.clone(), self.shot, self.seed)
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        vec![
            self.config_id.clone(),
            self.shot.to_string(),
            self.seed.to_string(),
            opt(self.accuracy),
            opt(self.di),
            opt(self.eopp),
            opt(self.eodd),
            self.wall_time_s.to_string(),
            self.status.render(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> std::result::Result<Self, String> {
        if rec.len() != COLUMNS.len() {
            return Err(format!(
                "expected {} fields, found {}",
                COLUMNS.len(),
                rec.len()
            ));
        }
        let metric = |i: usize| -> std::result::Result<Option<f64>, String> {
            let s = rec[i].trim();
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s
                .parse()
                .map_err(|_| format!("{} is not a number: {s:?}", COLUMNS[i]))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{} out of range: {v}", COLUMNS[i]));
            }
            Ok(Some(v))
        };
        let int = |i: usize| -> std::result::Result<u64, String> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| format!("{} is not an integer: {:?}", COLUMNS[i], &rec[i]))
        };
        let config_id = rec[0].to_string();
        if config_id.is_empty() {
            return Err("empty config_id".into());
        }
        Ok(Self {
            config_id,
            shot: int(1)? as usize,
            seed: int(2)?,
            accuracy: metric(3)?,
            di: metric(4)?,
            eopp: metric(5)?,
            eodd: metric(6)?,
            wall_time_s: rec[7]
                .trim()
                .parse()
                .map_err(|_| format!("wall_time_s is not a number: {:?}", &rec[7]))?,
            status: Status::parse(rec[8].trim())
                .ok_or_else(|| format!("unknown status {:?}", &rec[8]))?,
        })
    }
}

/// Reads a results file, reporting every malformed row.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != COLUMNS {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            problems: vec![format!("header must be {}", COLUMNS.join(","))],
        });
    }
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        match rec {
            Ok(rec) => match ResultRow::from_record(&rec) {
                Ok(r) => rows.push(r),
                Err(p) => problems.push(format!("line {line}: {p}")),
            },
            Err(e) => problems.push(format!("line {line}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(rows)
    } else {
        Err(Error::Malformed {
            path: path.to_path_buf(),
            problems,
        })
    }
}

/// Appends rows to a results file, flushing after each one.
#[derive(Debug)]
pub struct ResultWriter {
    path: PathBuf,
    existing: Vec<ResultRow>,
    done: HashSet<(String, usize, u64)>,
}

impl ResultWriter {
    /// Opens `path`, reading any rows already there; creates it with a
    /// header otherwise.
    pub fn open(path: &Path) -> Result<Self> {
        let has_content = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        let existing = if has_content {
            read_results(path)?
        } else {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(path, format!("{}\n", COLUMNS.join(",")))
                .map_err(|e| Error::io(path, e))?;
            Vec::new()
        };
        let done = existing.iter().map(ResultRow::key).collect();
        Ok(Self {
            path: path.to_path_buf(),
            existing,
            done,
        })
    }

    pub fn existing(&self) -> &[ResultRow] {
        &self.existing
    }

    pub fn has(&self, config_id: &str, shot: usize, seed: u64) -> bool {
        self.done.contains(&(config_id.to_string(), shot, seed))
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<()> {
        let mut buf = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        buf.write_record(row.record())?;
        let bytes = buf
            .into_inner()
            .map_err(|e| Error::io(&self.path, e.into_error()))?;
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        file.write_all(&bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.done.insert(row.key());
        Ok(())
    }
}
