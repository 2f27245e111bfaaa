//! Grids over loss weights, shots and seeds; paired ablations; summaries.

mod results;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::{
    generate_synthetic, load_dataset, split_participants, BiasSpec, DatasetHeader,
    ParticipantRecord, Standardizer,
};
use crate::error::{Error, Result};
use crate::meta::{
    evaluate, train, AblationFlags, AdaptingModel, MetaConfig, MetaLearner, MetaState,
};
use crate::metrics::{pareto_frontier, AggregateReport, MetricSummary, ParetoPoint};
use crate::parallel::Executor;

pub use results::{read_results, ResultRow, ResultWriter, Status, COLUMNS};

/// Where participants come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic {
        n: usize,
        header: DatasetHeader,
        bias: BiasSpec,
    },
    Manifest(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: 400,
            header: DatasetHeader::desk(),
            bias: BiasSpec::default(),
        }
    }
}

/// Loss-weight sweep; the grid is the Cartesian product of the three lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub gamma: Vec<f64>,
    pub lambda_smooth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            gamma: vec![0.01, 0.05, 0.1, 0.2, 0.5, 1.0],
            lambda_smooth: vec![0.05, 0.1, 0.2],
            alpha: vec![0.1, 0.2, 0.3],
        }
    }
}

/// One named configuration of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub config_id: String,
    pub config: MetaConfig,
}

impl Grid {
    pub fn points(&self, base: &MetaConfig) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &gamma in &self.gamma {
            for &lambda_smooth in &self.lambda_smooth {
                for &alpha in &self.alpha {
                    let mut config = base.clone();
                    config.weights.gamma = gamma;
                    config.weights.lambda_smooth = lambda_smooth;
                    config.weights.alpha = alpha;
                    out.push(GridPoint {
                        config_id: format!("gamma={gamma};lambda={lambda_smooth};alpha={alpha}"),
                        config,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// `input_dim` and `seq_len` are taken from the data.
    pub backbone: BackboneConfig,
    pub base: MetaConfig,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub grid: Grid,
    pub n_eval_tasks: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            test_fraction: 0.25,
            split_seed: 0,
            backbone: BackboneConfig::default(),
            base: MetaConfig::default(),
            shots: vec![1, 3, 5],
            seeds: vec![0, 1, 2, 3, 4],
            grid: Grid::default(),
            n_eval_tasks: 100,
        }
    }
}

impl ExperimentSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.base.problems();
        if self.shots.is_empty() {
            out.push("shot list must not be empty".into());
        }
        if let Some(s) = self.shots.iter().find(|s| !matches!(s, 1 | 3 | 5)) {
            out.push(format!("shots must be 1, 3 or 5, got {s}"));
        }
        if self.seeds.is_empty() {
            out.push("seed list must not be empty".into());
        }
        for (name, list) in [
            ("gamma", &self.grid.gamma),
            ("lambda_smooth", &self.grid.lambda_smooth),
            ("alpha", &self.grid.alpha),
        ] {
            if list.is_empty() {
                out.push(format!("{name} grid must not be empty"));
            }
            if let Some(v) = list.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                out.push(format!("{name} grid values must be positive, got {v}"));
            }
        }
        if self.n_eval_tasks == 0 {
            out.push("n_eval_tasks must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            out.push(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        let bb = BackboneConfig {
            input_dim: 1,
            seq_len: 1,
            ..self.backbone
        };
        if let Err(e) = bb.validate() {
            out.push(e.to_string());
        }
        if let DataSource::Synthetic { n, header, bias } = &self.data {
            if *n < 4 {
                out.push(format!("synthetic n must be at least 4, got {n}"));
            }
            if header.seq_len == 0 || header.input_dim == 0 || header.n_groups < 2 {
                out.push("synthetic data needs seq_len, input_dim >= 1 and n_groups >= 2".into());
            }
            if let Err(e) = bias.validate(header.n_groups) {
                out.push(e.to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

/// Standardized, split data ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub header: DatasetHeader,
    pub standardizer: Standardizer,
    pub train: Vec<ParticipantRecord>,
    pub test: Vec<ParticipantRecord>,
}

impl Prepared {
    /// Splits `records`, fits the standardizer on the training pool and
    /// applies it to both pools.
    pub fn from_records(
        header: DatasetHeader,
        records: &[ParticipantRecord],
        test_fraction: f64,
        split_seed: u64,
    ) -> Result<Self> {
        let split = split_participants(records, test_fraction, split_seed)?;
        let (train, test) = split.pools(records);
        let standardizer = Standardizer::fit(&train);
        Ok(Self {
            header,
            train: standardizer.apply_all(&train),
            test: standardizer.apply_all(&test),
            standardizer,
        })
    }

    pub fn backbone(&self, base: &BackboneConfig) -> BackboneConfig {
        BackboneConfig {
            input_dim: self.header.input_dim,
            seq_len: self.header.seq_len,
            ..*base
        }
    }
}

pub fn load_source(source: &DataSource) -> Result<(DatasetHeader, Vec<ParticipantRecord>)> {
    match source {
        DataSource::Synthetic { n, header, bias } => {
            let records = generate_synthetic(*n, header, bias)?;
            let header = DatasetHeader {
                n_participants: records.len(),
                ..header.clone()
            };
            Ok((header, records))
        }
        DataSource::Manifest(path) => load_dataset(path),
    }
}

pub fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    let (header, records) = load_source(&spec.data)?;
    Prepared::from_records(header, &records, spec.test_fraction, spec.split_seed)
}

/// Seed used for the evaluation tasks of a cell.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_e7a1
}

/// Trains `config` at `shot` with `seed` and evaluates on the test pool.
pub fn run_cell(
    data: &Prepared,
    backbone: &BackboneConfig,
    config: &MetaConfig,
    shot: usize,
    seed: u64,
    n_eval_tasks: usize,
) -> Result<(MetaState<f32>, AggregateReport)> {
    let config = MetaConfig {
        shots: shot,
        seed,
        ..config.clone()
    };
    let learner = MetaLearner::new(data.backbone(backbone), config, data.header.n_groups)?;
    let outcome = train(&learner, &data.train, None, &mut |_| {})?;
    let exec = Executor::with_threads(learner.config().threads);
    let model = AdaptingModel {
        learner: &learner,
        theta: &outcome.state.theta,
    };
    let ev = evaluate(
        &model,
        &data.test,
        data.header.n_groups,
        shot,
        learner.config().query_size,
        n_eval_tasks,
        eval_seed(seed),
        &exec,
    )?;
    Ok((outcome.state, ev.aggregate))
}

fn run_cells(
    spec: &ExperimentSpec,
    points: &[GridPoint],
    results: &Path,
    on_row: &mut dyn FnMut(&ResultRow),
) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let mut writer = ResultWriter::open(results)?;
    let mut rows = writer.existing().to_vec();
    let pending: Vec<(&GridPoint, usize, u64)> = points
        .iter()
        .flat_map(|p| {
            spec.shots
                .iter()
                .flat_map(move |&s| spec.seeds.iter().map(move |&seed| (p, s, seed)))
        })
        .filter(|(p, s, seed)| !writer.has(&p.config_id, *s, *seed))
        .collect();
    if pending.is_empty() {
        return Ok(rows);
    }
    let data = prepare(spec)?;
    for (point, shot, seed) in pending {
        let start = Instant::now();
        let outcome = run_cell(
            &data,
            &spec.backbone,
            &point.config,
            shot,
            seed,
            spec.n_eval_tasks,
        );
        let elapsed = start.elapsed().as_secs_f64();
        let row = match outcome {
            Ok((_, report)) => ResultRow::ok(&point.config_id, shot, seed, &report, elapsed),
            Err(e) => {
                log::warn!("{} shot {shot} seed {seed} failed: {e}", point.config_id);
                ResultRow::failed(&point.config_id, shot, seed, elapsed, e.to_string())
            }
        };
        writer.append(&row)?;
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Every (grid point × shot × seed) cell, appended to `results` as it
/// finishes. Cells already present in `results` are not rerun.
pub fn run_grid(
    spec: &ExperimentSpec,
    results: &Path,
    on_row: &mut dyn FnMut(&ResultRow),
) -> Result<Vec<ResultRow>> {
    run_cells(spec, &spec.grid.points(&spec.base), results, on_row)
}

pub const ARMS: [&str; 6] = ["All", "No_AGM", "No_Eodd", "No_FCGP", "No_LS", "No_M"];

/// The base configuration with all components on, and one arm per component
/// with only that component switched off.
pub fn ablation_arms(base: &MetaConfig) -> Vec<GridPoint> {
    let all = MetaConfig {
        flags: AblationFlags::ALL,
        ..base.clone()
    };
    ARMS.iter()
        .map(|&name| {
            let mut config = all.clone();
            let f = &mut config.flags;
            match name {
                "No_AGM" => f.use_agm = false,
                "No_Eodd" => f.use_eodd = false,
                "No_FCGP" => f.use_fcgp = false,
                "No_LS" => f.use_smooth = false,
                "No_M" => f.use_margin = false,
                _ => {}
            }
            GridPoint {
                config_id: name.to_string(),
                config,
            }
        })
        .collect()
}

/// Six paired arms on the base configuration, sharing seeds.
pub fn run_ablations(
    spec: &ExperimentSpec,
    results: &Path,
    on_row: &mut dyn FnMut(&ResultRow),
) -> Result<Vec<ResultRow>> {
    run_cells(spec, &ablation_arms(&spec.base), results, on_row)
}

/// Aggregate over seeds for one (config, shot).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config_id: String,
    pub shot: usize,
    pub accuracy: MetricSummary,
    pub di: MetricSummary,
    pub eopp: MetricSummary,
    pub eodd: MetricSummary,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    /// Sorted by (config_id, shot).
    pub rows: Vec<SummaryRow>,
    /// Per shot: the non-dominated configurations on (mean accuracy, mean Eopp).
    pub pareto: Vec<(usize, Vec<ParetoPoint>)>,
}

pub fn summarize(rows: &[ResultRow]) -> Summary {
    let mut keys: Vec<(String, usize)> =
        rows.iter().map(|r| (r.config_id.clone(), r.shot)).collect();
    keys.sort();
    keys.dedup();
    let out: Vec<SummaryRow> = keys
        .into_iter()
        .map(|(config_id, shot)| {
            // sort the cell's rows by seed so floating-point sums do not depend on input order
            let mut cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.config_id == config_id && r.shot == shot)
                .collect();
            cell.sort_by_key(|r| r.seed);
            let ok: Vec<&ResultRow> = cell
                .iter()
                .copied()
                .filter(|r| r.status == Status::Ok)
                .collect();
            SummaryRow {
                accuracy: MetricSummary::of(ok.iter().map(|r| r.accuracy)),
                di: MetricSummary::of(ok.iter().map(|r| r.di)),
                eopp: MetricSummary::of(ok.iter().map(|r| r.eopp)),
                eodd: MetricSummary::of(ok.iter().map(|r| r.eodd)),
                failed: cell.len() - ok.len(),
                config_id,
                shot,
            }
        })
        .collect();

    let mut shots: Vec<usize> = out.iter().map(|r| r.shot).collect();
    shots.sort_unstable();
    shots.dedup();
    let pareto = shots
        .into_iter()
        .map(|shot| {
            let points: Vec<ParetoPoint> = out
                .iter()
                .filter(|r| r.shot == shot && r.accuracy.n > 0 && r.eopp.n > 0)
                .map(|r| ParetoPoint::new(r.accuracy.mean, r.eopp.mean, r.config_id.clone()))
                .collect();
            (shot, pareto_frontier(&points))
        })
        .collect();
    Summary { rows: out, pareto }
}

/// Median of a metric over seeds for one (config, shot); `None` if no seed
/// produced a value.
pub fn median_over_seeds(
    rows: &[ResultRow],
    config_id: &str,
    shot: usize,
    metric: impl Fn(&ResultRow) -> Option<f64>,
) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.config_id == config_id && r.shot == shot && r.status == Status::Ok)
        .filter_map(metric)
        .collect();
    (!vals.is_empty()).then(|| crate::vector::median(&vals))
}
