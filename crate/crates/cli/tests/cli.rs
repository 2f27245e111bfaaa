use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairm2s::backbone::BackboneConfig;
use fairm2s::config;
use fairm2s::data::load_dataset;
use fairm2s::meta::{MetaLearner, MetaState};
use fairm2s::model_io::ModelFile;

fn fairm2s(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairm2s"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let out = fairm2s(args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
    stdout(&out)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["gen", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("manifest.csv")
}

const SMALL: &str = "\
[backbone]
lstm_hidden = 4
gru_hidden = 4

[meta]
epochs = 3
tasks_per_batch = 4
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn files_of(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_small_unbiased_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(
        dir.path(),
        &["--n", "8", "--t", "20", "--d", "8", "--delta", "0"],
    );
    let (header, records) = load_dataset(&manifest).unwrap();
    assert_eq!(records.len(), 8);
    assert_eq!((header.seq_len, header.input_dim), (20, 8));
}

#[test]
fn gen_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), &["--n", "30", "--seed", "4"]);
    gen(b.path(), &["--n", "30", "--seed", "4"]);
    assert_eq!(
        files_of(&a.path().join("data")),
        files_of(&b.path().join("data"))
    );
}

#[test]
fn gen_paper_shaped_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let text = ok(&[
        "gen",
        "--out",
        s(&out),
        "--n",
        "128",
        "--t",
        "120",
        "--d",
        "67",
    ]);
    assert!(text.contains("participants: 128"), "{text}");
    let bytes: u64 = fs::read_dir(out.join("features"))
        .unwrap()
        .map(|e| e.unwrap().metadata().unwrap().len())
        .sum();
    assert_eq!(bytes, 128 * 120 * 67 * 4);
}

#[test]
fn gen_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairm2s(&["gen", "--out", s(&dir.path().join("d")), "--ratio", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("group_ratio"), "{}", stderr(&out));
}

#[test]
fn zero_epochs_saves_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), &["--n", "80"]);
    let cfg = write_config(dir.path(), &SMALL.replace("epochs = 3", "epochs = 0"));
    let out = dir.path().join("m");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&manifest),
        "--out",
        s(&out),
    ]);
    let saved = ModelFile::load(&out.join("model.fm2s")).unwrap();

    let spec = config::load_config(&cfg).unwrap();
    let bb = BackboneConfig {
        input_dim: 8,
        seq_len: 20,
        ..spec.backbone
    };
    let learner = MetaLearner::new(bb, spec.base.clone(), 2).unwrap();
    let init = MetaState::<f32>::init(&learner).unwrap();
    assert_eq!(saved.theta, init.theta);
    assert_eq!(saved.adversary, init.adversary);
    assert_eq!(fs::read(out.join("model.fm2s")).unwrap(), saved.to_bytes());
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), &["--n", "80"]);
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&manifest),
            "--out",
            s(&out),
            "--threads",
            "1",
        ]);
        (
            fs::read(out.join("model.fm2s")).unwrap(),
            fs::read_to_string(out.join("train_log.jsonl")).unwrap(),
        )
    };
    let (a, log) = run("a");
    let (b, _) = run("b");
    assert_eq!(a, b);
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn eval_reports_and_checks_header() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), &["--n", "200"]);
    let cfg = write_config(dir.path(), SMALL);
    let m = dir.path().join("m");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&manifest),
        "--out",
        s(&m),
    ]);
    let model = m.join("model.fm2s");

    let one = ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&manifest),
        "--tasks",
        "1",
    ]);
    let row = one.lines().last().unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[1], "1", "{one}");
    assert_eq!(fields[3], "0", "accuracy std over one task: {one}");

    let args = [
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&manifest),
        "--tasks",
        "6",
        "--seed",
        "3",
    ];
    assert_eq!(ok(&args), ok(&args));

    let other = dir.path().join("other");
    let wide = other.join("data");
    ok(&["gen", "--out", s(&wide), "--n", "60", "--d", "5"]);
    let out = fairm2s(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&wide.join("manifest.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("input_dim"), "{}", stderr(&out));
}

#[test]
fn eval_on_separable_data_is_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), &["--n", "200", "--delta", "0"]);
    let cfg = write_config(
        dir.path(),
        "[backbone]\nlstm_hidden = 8\ngru_hidden = 8\n[meta]\nepochs = 20\nbeta_meta = 0.01\n",
    );
    let m = dir.path().join("m");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&manifest),
        "--out",
        s(&m),
    ]);
    let text = ok(&[
        "eval",
        "--model",
        s(&m.join("model.fm2s")),
        "--data",
        s(&manifest),
        "--tasks",
        "50",
    ]);
    let acc: f64 = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc > 0.9, "{text}");
}

#[test]
fn bad_config_lists_every_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[meta]\nepochs = many\nbogus = 1\n[weights]\ngamma = -1\n[nowhere]\nx = 1\n",
    );
    let out = fairm2s(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for needle in ["epochs", "bogus", "nowhere"] {
        assert!(err.contains(needle), "missing {needle}: {err}");
    }
}

const RESULTS_HEADER: &str = "config_id,shot,seed,accuracy,di,eopp,eodd,wall_time_s,status";

#[test]
fn pareto_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.csv");
    fs::write(
        &results,
        format!("{RESULTS_HEADER}\nonly,5,0,0.8,0.9,0.1,0.2,1.0,ok\n"),
    )
    .unwrap();
    let out = dir.path().join("p.csv");
    ok(&["pareto", "--results", s(&results), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().nth(1), Some("only,5,0.8,0.1,non_dominated"));
}

#[test]
fn pareto_is_idempotent_on_its_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.csv");
    let mut text = format!("{RESULTS_HEADER}\n");
    for (id, acc, eopp) in [
        ("a", 0.9, 0.3),
        ("b", 0.8, 0.1),
        ("c", 0.7, 0.2),
        ("d", 0.85, 0.05),
        ("e", 0.6, 0.4),
    ] {
        for seed in 0..2 {
            text.push_str(&format!("{id},5,{seed},{acc},0.9,{eopp},0.2,1.0,ok\n"));
        }
    }
    fs::write(&results, text).unwrap();
    let first = dir.path().join("p1.csv");
    ok(&["pareto", "--results", s(&results), "--out", s(&first)]);
    let tagged = fs::read_to_string(&first).unwrap();
    let front: Vec<&str> = tagged
        .lines()
        .filter(|l| l.ends_with(",non_dominated"))
        .collect();
    let ids: Vec<&str> = front.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["a", "d"]);

    let subset = dir.path().join("front.csv");
    fs::write(
        &subset,
        format!("{}\n{}\n", tagged.lines().next().unwrap(), front.join("\n")),
    )
    .unwrap();
    let second = dir.path().join("p2.csv");
    ok(&["pareto", "--results", s(&subset), "--out", s(&second)]);
    assert_eq!(
        fs::read_to_string(&second).unwrap(),
        fs::read_to_string(&subset).unwrap()
    );
}

#[test]
fn pareto_rejects_malformed_results() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.csv");
    fs::write(
        &results,
        format!("{RESULTS_HEADER}\na,5,0,0.8,,,,1,ok\nb,5,x,0.8,,,,1,ok\nc,5,0,2.0,,,,1,ok\n"),
    )
    .unwrap();
    let out = fairm2s(&[
        "pareto",
        "--results",
        s(&results),
        "--out",
        s(&dir.path().join("p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 3") && err.contains("line 4"), "{err}");
}

#[test]
fn grid_writes_each_cell_once_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{SMALL}\n[data]\nn = 120\n\n[experiment]\nshots = 1, 5\nseeds = 0, 1\ngamma_grid = 0.1, 1\nlambda_grid = 0.1\nalpha_grid = 0.2\nn_eval_tasks = 3\n"
        ),
    );
    let results = dir.path().join("r.csv");
    ok(&["grid", "--config", s(&cfg), "--results", s(&results)]);
    let first = fs::read_to_string(&results).unwrap();
    assert_eq!(first.lines().count(), 1 + 8);
    let out = fairm2s(&["grid", "--config", s(&cfg), "--results", s(&results)]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(&results).unwrap(), first);
    assert!(stderr(&out).is_empty(), "no cell reran: {}", stderr(&out));
}

#[test]
fn ablate_writes_six_arms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{SMALL}\n[data]\nn = 120\n\n[experiment]\nshots = 5\nseeds = 0\nn_eval_tasks = 2\n"
        ),
    );
    let results = dir.path().join("r.csv");
    let text = ok(&["ablate", "--config", s(&cfg), "--results", s(&results)]);
    for arm in ["All", "No_AGM", "No_Eodd", "No_FCGP", "No_LS", "No_M"] {
        assert!(
            text.contains(&format!("\n{arm},5,")),
            "{arm} missing: {text}"
        );
    }
}

fn desk_spec() -> fairm2s::harness::ExperimentSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg");
    config::load_config(&path).unwrap()
}

#[test]
fn desk_smoke_run_is_fast_and_beats_chance() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), &["--n", "200", "--t", "20", "--d", "8"]);
    let cfg = write_config(dir.path(), &config::to_text(&desk_spec()));
    let m = dir.path().join("m");
    let start = std::time::Instant::now();
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&manifest),
        "--out",
        s(&m),
    ]);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 600, "training took {elapsed:?}");
    let log = fs::read_to_string(m.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 50);
    let text = ok(&[
        "eval",
        "--model",
        s(&m.join("model.fm2s")),
        "--shots",
        "5",
        "--tasks",
        "50",
    ]);
    let acc: f64 = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc > 0.5, "{text}");
}

#[test]
fn larger_gamma_does_not_raise_eopp() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = desk_spec();
    spec.grid.gamma = vec![0.01, 1.0];
    spec.grid.lambda_smooth = vec![0.1];
    spec.grid.alpha = vec![0.2];
    let cfg = write_config(dir.path(), &config::to_text(&spec));
    let results = dir.path().join("r.csv");
    ok(&["grid", "--config", s(&cfg), "--results", s(&results)]);
    let rows = fairm2s::harness::read_results(&results).unwrap();
    assert_eq!(rows.len(), 2 * spec.seeds.len());
    let median = |gamma: &str| {
        fairm2s::harness::median_over_seeds(
            &rows,
            &format!("gamma={gamma};lambda=0.1;alpha=0.2"),
            5,
            |r| r.eopp,
        )
        .unwrap()
    };
    let (low, high) = (median("0.01"), median("1"));
    assert!(
        high <= low,
        "median Eopp at gamma 1.0 is {high:.3}, at 0.01 it is {low:.3}"
    );
}
