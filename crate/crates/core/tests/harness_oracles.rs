mod common;

use std::collections::BTreeSet;
use std::fs;

use common::pareto_oracle;
use fairm2s::backbone::BackboneConfig;
use fairm2s::harness::{
    read_results, run_grid, summarize, ExperimentSpec, Grid, ResultRow, Status,
};
use fairm2s::meta::MetaConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        backbone: BackboneConfig {
            lstm_hidden: 3,
            gru_hidden: 3,
            ..Default::default()
        },
        base: MetaConfig {
            epochs: 1,
            tasks_per_batch: 2,
            ..Default::default()
        },
        shots: vec![1, 5],
        seeds: vec![0, 1],
        grid: Grid {
            gamma: vec![0.1, 1.0],
            lambda_smooth: vec![0.1],
            alpha: vec![0.2],
        },
        n_eval_tasks: 2,
        ..Default::default()
    };
    if let fairm2s::harness::DataSource::Synthetic { n, .. } = &mut spec.data {
        *n = 120;
    }
    spec
}

#[test]
fn grid_enumerates_every_cell_and_resumes() {
    let spec = tiny_spec();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let rows = run_grid(&spec, &path, &mut |_| {}).unwrap();

    let keys: BTreeSet<(String, usize, u64)> = rows.iter().map(ResultRow::key).collect();
    let mut expect = BTreeSet::new();
    for gamma in [0.1, 1.0] {
        for shot in [1, 5] {
            for seed in [0, 1] {
                expect.insert((format!("gamma={gamma};lambda=0.1;alpha=0.2"), shot, seed));
            }
        }
    }
    assert_eq!(rows.len(), 8);
    assert_eq!(keys, expect);
    assert!(rows.iter().all(|r| r.status == Status::Ok));

    // drop the last three cells as if the run had been interrupted
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    fs::write(&path, lines[..lines.len() - 3].join("\n") + "\n").unwrap();
    let mut rerun = Vec::new();
    let resumed = run_grid(&spec, &path, &mut |r| rerun.push(r.key())).unwrap();
    assert_eq!(rerun.len(), 3);
    assert_eq!(resumed.len(), 8);
    for row in &resumed[5..] {
        let before = rows.iter().find(|r| r.key() == row.key()).unwrap();
        assert_eq!(
            (row.accuracy, row.eopp, row.eodd, row.di),
            (before.accuracy, before.eopp, before.eodd, before.di)
        );
    }
    assert_eq!(read_results(&path).unwrap().len(), 8);
}

fn row(config: usize, shot: usize, seed: u64, rng: &mut ChaCha8Rng) -> ResultRow {
    let id = format!("c{config}");
    if rng.random_bool(0.15) {
        return ResultRow::failed(&id, shot, seed, 1.0, "diverged".into());
    }
    let mut metric = || {
        rng.random_bool(0.9)
            .then(|| f64::from(rng.random_range(0..20u8)) / 20.0)
    };
    ResultRow {
        config_id: id,
        shot,
        seed,
        accuracy: metric(),
        di: metric(),
        eopp: metric(),
        eodd: metric(),
        wall_time_s: 1.0,
        status: Status::Ok,
    }
}

#[test]
fn summary_matches_groupby_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..20 {
        let mut rows = Vec::new();
        for config in 0..3 {
            for shot in [1, 5] {
                for seed in 0..5 {
                    rows.push(row(config, shot, seed, &mut rng));
                }
            }
        }
        assert_eq!(rows.len(), 30);
        // order must not matter
        let mut shuffled = rows.clone();
        shuffled.reverse();
        let summary = summarize(&shuffled);
        assert_eq!(summary.rows.len(), 6);
        for s in &summary.rows {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.config_id == s.config_id && r.shot == s.shot)
                .collect();
            let ok: Vec<&&ResultRow> = cell.iter().filter(|r| r.status == Status::Ok).collect();
            assert_eq!(s.failed, cell.len() - ok.len());
            let mean = |f: &dyn Fn(&ResultRow) -> Option<f64>| {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                (v.len(), v.iter().sum::<f64>() / v.len() as f64)
            };
            for (got, (n, want)) in [
                (&s.accuracy, mean(&|r| r.accuracy)),
                (&s.eopp, mean(&|r| r.eopp)),
                (&s.eodd, mean(&|r| r.eodd)),
                (&s.di, mean(&|r| r.di)),
            ] {
                assert_eq!(got.n, n);
                if n > 0 {
                    assert!((got.mean - want).abs() < 1e-12);
                }
            }
        }
        for (shot, frontier) in &summary.pareto {
            let cells: Vec<_> = summary
                .rows
                .iter()
                .filter(|r| r.shot == *shot && r.accuracy.n > 0 && r.eopp.n > 0)
                .collect();
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .map(|r| (r.accuracy.mean, r.eopp.mean))
                .collect();
            let mut want: Vec<&str> = pareto_oracle(&pts)
                .into_iter()
                .map(|i| cells[i].config_id.as_str())
                .collect();
            let mut got: Vec<&str> = frontier.iter().map(|p| p.tag.as_str()).collect();
            want.sort_unstable();
            got.sort_unstable();
            assert_eq!(got, want);
        }
    }
}
