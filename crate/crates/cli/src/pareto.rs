use std::path::Path;

use fairm2s::harness::{read_results, summarize, COLUMNS};
use fairm2s::metrics::{pareto_frontier, ParetoPoint};
use fairm2s::{Error, Result};

pub const OUTPUT_COLUMNS: [&str; 5] = ["config_id", "shot", "accuracy", "eopp", "pareto"];

#[derive(Debug, Clone, PartialEq)]
struct Point {
    config_id: String,
    shot: usize,
    accuracy: f64,
    eopp: f64,
}

/// Tags every (config, shot) point and writes them to `out`; prints the
/// non-dominated set.
pub fn run(input: &Path, out: &Path) -> Result<()> {
    let points = read_points(input)?;
    let mut shots: Vec<usize> = points.iter().map(|p| p.shot).collect();
    shots.sort_unstable();
    shots.dedup();

    let mut w = csv::Writer::from_path(out)?;
    w.write_record(OUTPUT_COLUMNS)?;
    for shot in shots {
        let cell: Vec<&Point> = points.iter().filter(|p| p.shot == shot).collect();
        let pp: Vec<ParetoPoint> = cell
            .iter()
            .map(|p| ParetoPoint::new(p.accuracy, p.eopp, p.config_id.clone()))
            .collect();
        let front = pareto_frontier(&pp);
        for (p, q) in cell.iter().zip(&pp) {
            let on_front = front.contains(q);
            if on_front {
                println!(
                    "{shot}-shot  {}  accuracy {:.4}  eopp {:.4}",
                    p.config_id, p.accuracy, p.eopp
                );
            }
            w.write_record([
                p.config_id.clone(),
                shot.to_string(),
                p.accuracy.to_string(),
                p.eopp.to_string(),
                if on_front {
                    "non_dominated"
                } else {
                    "dominated"
                }
                .to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<Point>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header == COLUMNS {
        let rows = read_results(path)?;
        return Ok(summarize(&rows)
            .rows
            .into_iter()
            .filter(|r| r.accuracy.n > 0 && r.eopp.n > 0)
            .map(|r| Point {
                config_id: r.config_id,
                shot: r.shot,
                accuracy: r.accuracy.mean,
                eopp: r.eopp.mean,
            })
            .collect());
    }
    if header != OUTPUT_COLUMNS {
        return Err(malformed(
            path,
            format!(
                "header must be {} or {}",
                COLUMNS.join(","),
                OUTPUT_COLUMNS.join(",")
            ),
        ));
    }
    let mut points = Vec::new();
    let mut problems = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|rec| {
            let num = |k: usize| -> std::result::Result<f64, String> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| format!("{} is not a number", OUTPUT_COLUMNS[k]))
            };
            Ok(Point {
                config_id: rec.get(0).unwrap_or_default().to_string(),
                shot: rec
                    .get(1)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or("shot is not an integer")?,
                accuracy: num(2)?,
                eopp: num(3)?,
            })
        });
        match parsed {
            Ok(p) => points.push(p),
            Err(e) => problems.push(format!("line {line}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(points)
    } else {
        Err(Error::Malformed {
            path: path.to_path_buf(),
            problems,
        })
    }
}

fn malformed(path: &Path, problem: String) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        problems: vec![problem],
    }
}
