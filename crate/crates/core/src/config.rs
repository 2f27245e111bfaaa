//! Plain-text run configuration: `[section]` headers and `key = value`
//! lines, `#` comments. Every key has a default; unknown keys are errors and
//! all problems are reported together.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::BackboneConfig;
use crate::data::{BiasSpec, DatasetHeader};
use crate::error::{Error, Result};
use crate::harness::{DataSource, ExperimentSpec};
use crate::meta::{MetaConfig, OuterOptimizer};

pub const SECTIONS: [&str; 5] = ["backbone", "meta", "weights", "data", "experiment"];

const SYNTHETIC_KEYS: [&str; 9] = [
    "n",
    "seq_len",
    "input_dim",
    "n_groups",
    "delta",
    "group_ratio",
    "label_skew",
    "noise_sigma",
    "signal",
];

fn list<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// `(section, key, value)` for every field, in file order.
pub fn entries(spec: &ExperimentSpec) -> Vec<(&'static str, &'static str, String)> {
    let b = &spec.backbone;
    let m = &spec.base;
    let w = &m.weights;
    let f = &m.flags;
    let mut out: Vec<(&'static str, &'static str, String)> = vec![
        ("backbone", "lstm_hidden", b.lstm_hidden.to_string()),
        ("backbone", "gru_hidden", b.gru_hidden.to_string()),
        ("backbone", "dropout_rate", b.dropout_rate.to_string()),
        ("meta", "eta_inner", m.eta_inner.to_string()),
        ("meta", "beta_meta", m.beta_meta.to_string()),
        ("meta", "inner_steps", m.inner_steps.to_string()),
        ("meta", "tasks_per_batch", m.tasks_per_batch.to_string()),
        ("meta", "epochs", m.epochs.to_string()),
        ("meta", "shots", m.shots.to_string()),
        ("meta", "query_size", m.query_size.to_string()),
        ("meta", "epsilon_proj", m.epsilon_proj.to_string()),
        ("meta", "seed", m.seed.to_string()),
        ("meta", "first_order", m.first_order.to_string()),
        ("meta", "optimizer", m.optimizer.name().to_string()),
        ("meta", "adv_hidden", m.adv_hidden.to_string()),
        ("meta", "adv_rate", m.adv_rate.to_string()),
        ("meta", "lambda_keep", m.lambda_keep.to_string()),
        ("meta", "eval_every", m.eval_every.to_string()),
        ("meta", "eval_tasks", m.eval_tasks.to_string()),
        ("meta", "threads", m.threads.to_string()),
        ("meta", "use_agm", f.use_agm.to_string()),
        ("meta", "use_fcgp", f.use_fcgp.to_string()),
        ("meta", "use_eodd", f.use_eodd.to_string()),
        ("meta", "use_margin", f.use_margin.to_string()),
        ("meta", "use_smooth", f.use_smooth.to_string()),
        ("weights", "gamma", w.gamma.to_string()),
        ("weights", "alpha", w.alpha.to_string()),
        ("weights", "lambda_smooth", w.lambda_smooth.to_string()),
        ("weights", "margin_m", w.margin_m.to_string()),
        ("weights", "smooth_amount", w.smooth_amount.to_string()),
    ];
    match &spec.data {
        DataSource::Manifest(path) => out.push(("data", "manifest", path.display().to_string())),
        DataSource::Synthetic { n, header, bias } => out.extend([
            ("data", "n", n.to_string()),
            ("data", "seq_len", header.seq_len.to_string()),
            ("data", "input_dim", header.input_dim.to_string()),
            ("data", "n_groups", header.n_groups.to_string()),
            ("data", "delta", bias.delta.to_string()),
            ("data", "group_ratio", bias.group_ratio.to_string()),
            ("data", "label_skew", list(&bias.label_skew)),
            ("data", "noise_sigma", bias.noise_sigma.to_string()),
            ("data", "signal", bias.signal.to_string()),
            ("data", "data_seed", bias.seed.to_string()),
        ]),
    }
    out.extend([
        ("data", "test_fraction", spec.test_fraction.to_string()),
        ("data", "split_seed", spec.split_seed.to_string()),
        ("experiment", "shots", list(&spec.shots)),
        ("experiment", "seeds", list(&spec.seeds)),
        ("experiment", "gamma_grid", list(&spec.grid.gamma)),
        ("experiment", "lambda_grid", list(&spec.grid.lambda_smooth)),
        ("experiment", "alpha_grid", list(&spec.grid.alpha)),
        ("experiment", "n_eval_tasks", spec.n_eval_tasks.to_string()),
    ]);
    out
}

/// Renders every field; `parse(&to_text(s)) == s`.
pub fn to_text(spec: &ExperimentSpec) -> String {
    let mut out = String::new();
    let mut current = "";
    for (section, key, value) in entries(spec) {
        if section != current {
            if !current.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{section}]\n"));
            current = section;
        }
        out.push_str(&format!("{key} = {value}\n"));
    }
    out
}

struct Raw {
    values: BTreeMap<(String, String), (usize, String)>,
    errors: Vec<String>,
}

impl Raw {
    fn scan(text: &str) -> Self {
        let mut values = BTreeMap::new();
        let mut errors = Vec::new();
        let mut section: Option<String> = None;
        let mut in_unknown = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                in_unknown = !SECTIONS.contains(&name);
                section = if in_unknown {
                    errors.push(format!("line {line_no}: unknown section [{name}]"));
                    None
                } else {
                    Some(name.to_string())
                };
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!(
                    "line {line_no}: expected `key = value`, got {line:?}"
                ));
                continue;
            };
            let Some(sec) = &section else {
                // keys under an unknown section were already reported with it
                if !in_unknown {
                    errors.push(format!("line {line_no}: key outside any section"));
                }
                continue;
            };
            let k = (sec.clone(), key.trim().to_string());
            if let Some((prev, _)) = values.get(&k) {
                errors.push(format!(
                    "line {line_no}: duplicate key {}.{} (first on line {prev})",
                    k.0, k.1
                ));
                continue;
            }
            values.insert(k, (line_no, value.trim().to_string()));
        }
        Self { values, errors }
    }

    fn has(&self, section: &str, key: &str) -> bool {
        self.values
            .contains_key(&(section.to_string(), key.to_string()))
    }

    fn take_str(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.values.remove(&(section.to_string(), key.to_string()))
    }

    fn take<T: FromStr>(&mut self, section: &str, key: &str, target: &mut T) {
        if let Some((line, v)) = self.take_str(section, key) {
            match v.parse() {
                Ok(x) => *target = x,
                Err(_) => self
                    .errors
                    .push(format!("line {line}: {section}.{key}: cannot parse {v:?}")),
            }
        }
    }

    fn take_list<T: FromStr>(&mut self, section: &str, key: &str, target: &mut Vec<T>) {
        if let Some((line, v)) = self.take_str(section, key) {
            if v.is_empty() {
                *target = Vec::new();
                return;
            }
            match v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<Vec<T>, _>>()
            {
                Ok(x) => *target = x,
                Err(_) => self.errors.push(format!(
                    "line {line}: {section}.{key}: cannot parse list {v:?}"
                )),
            }
        }
    }
}

/// Parses a configuration, returning every syntax and validation problem.
pub fn parse(text: &str) -> std::result::Result<ExperimentSpec, Vec<String>> {
    let mut raw = Raw::scan(text);
    let mut spec = ExperimentSpec::default();

    let b = &mut spec.backbone;
    raw.take("backbone", "lstm_hidden", &mut b.lstm_hidden);
    raw.take("backbone", "gru_hidden", &mut b.gru_hidden);
    raw.take("backbone", "dropout_rate", &mut b.dropout_rate);

    let m = &mut spec.base;
    raw.take("meta", "eta_inner", &mut m.eta_inner);
    raw.take("meta", "beta_meta", &mut m.beta_meta);
    raw.take("meta", "inner_steps", &mut m.inner_steps);
    raw.take("meta", "tasks_per_batch", &mut m.tasks_per_batch);
    raw.take("meta", "epochs", &mut m.epochs);
    raw.take("meta", "shots", &mut m.shots);
    raw.take("meta", "query_size", &mut m.query_size);
    raw.take("meta", "epsilon_proj", &mut m.epsilon_proj);
    raw.take("meta", "seed", &mut m.seed);
    raw.take("meta", "first_order", &mut m.first_order);
    if let Some((line, v)) = raw.take_str("meta", "optimizer") {
        match OuterOptimizer::parse(&v) {
            Some(o) => m.optimizer = o,
            None => raw.errors.push(format!(
                "line {line}: meta.optimizer must be adam or sgd, got {v:?}"
            )),
        }
    }
    raw.take("meta", "adv_hidden", &mut m.adv_hidden);
    raw.take("meta", "adv_rate", &mut m.adv_rate);
    raw.take("meta", "lambda_keep", &mut m.lambda_keep);
    raw.take("meta", "eval_every", &mut m.eval_every);
    raw.take("meta", "eval_tasks", &mut m.eval_tasks);
    raw.take("meta", "threads", &mut m.threads);
    raw.take("meta", "use_agm", &mut m.flags.use_agm);
    raw.take("meta", "use_fcgp", &mut m.flags.use_fcgp);
    raw.take("meta", "use_eodd", &mut m.flags.use_eodd);
    raw.take("meta", "use_margin", &mut m.flags.use_margin);
    raw.take("meta", "use_smooth", &mut m.flags.use_smooth);

    let w = &mut m.weights;
    raw.take("weights", "gamma", &mut w.gamma);
    raw.take("weights", "alpha", &mut w.alpha);
    raw.take("weights", "lambda_smooth", &mut w.lambda_smooth);
    raw.take("weights", "margin_m", &mut w.margin_m);
    raw.take("weights", "smooth_amount", &mut w.smooth_amount);

    if raw.has("data", "manifest") {
        let (line, path) = raw.take_str("data", "manifest").expect("checked");
        let clash: Vec<&str> = SYNTHETIC_KEYS
            .iter()
            .chain(&["data_seed"])
            .copied()
            .filter(|k| raw.has("data", k))
            .collect();
        if !clash.is_empty() {
            raw.errors.push(format!(
                "line {line}: data.manifest cannot be combined with synthetic keys {}",
                clash.join(", ")
            ));
            for k in clash {
                raw.take_str("data", k);
            }
        }
        spec.data = DataSource::Manifest(PathBuf::from(path));
    } else {
        let (mut n, mut header, mut bias) = (400, DatasetHeader::desk(), BiasSpec::default());
        let skew_given = raw.has("data", "label_skew");
        raw.take("data", "n", &mut n);
        raw.take("data", "seq_len", &mut header.seq_len);
        raw.take("data", "input_dim", &mut header.input_dim);
        raw.take("data", "n_groups", &mut header.n_groups);
        raw.take("data", "delta", &mut bias.delta);
        raw.take("data", "group_ratio", &mut bias.group_ratio);
        raw.take_list("data", "label_skew", &mut bias.label_skew);
        raw.take("data", "noise_sigma", &mut bias.noise_sigma);
        raw.take("data", "signal", &mut bias.signal);
        raw.take("data", "data_seed", &mut bias.seed);
        if !skew_given {
            bias.label_skew = vec![0.5; header.n_groups];
        }
        spec.data = DataSource::Synthetic { n, header, bias };
    }
    raw.take("data", "test_fraction", &mut spec.test_fraction);
    raw.take("data", "split_seed", &mut spec.split_seed);

    raw.take_list("experiment", "shots", &mut spec.shots);
    raw.take_list("experiment", "seeds", &mut spec.seeds);
    raw.take_list("experiment", "gamma_grid", &mut spec.grid.gamma);
    raw.take_list("experiment", "lambda_grid", &mut spec.grid.lambda_smooth);
    raw.take_list("experiment", "alpha_grid", &mut spec.grid.alpha);
    raw.take("experiment", "n_eval_tasks", &mut spec.n_eval_tasks);

    let mut errors = raw.errors;
    for ((section, key), (line, _)) in raw.values {
        errors.push(format!("line {line}: unknown key {section}.{key}"));
    }
    if errors.is_empty() {
        errors.extend(spec.problems());
    }
    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(errors)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|problems| Error::Malformed {
        path: path.to_path_buf(),
        problems,
    })
}

/// Fields (as `section.key`) whose values differ between two specs.
pub fn diff(a: &ExperimentSpec, b: &ExperimentSpec) -> Vec<String> {
    let ea: BTreeMap<String, String> = entries(a)
        .into_iter()
        .map(|(s, k, v)| (format!("{s}.{k}"), v))
        .collect();
    let eb: BTreeMap<String, String> = entries(b)
        .into_iter()
        .map(|(s, k, v)| (format!("{s}.{k}"), v))
        .collect();
    let mut keys: Vec<&String> = ea.keys().chain(eb.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| ea.get(*k) != eb.get(*k))
        .cloned()
        .collect()
}

/// Base spec with `config` as the meta configuration.
pub fn with_meta(spec: &ExperimentSpec, config: &MetaConfig) -> ExperimentSpec {
    ExperimentSpec {
        base: config.clone(),
        ..spec.clone()
    }
}

/// The backbone dimensions a spec implies once data is known.
pub fn resolved_backbone(spec: &ExperimentSpec, header: &DatasetHeader) -> BackboneConfig {
    BackboneConfig {
        input_dim: header.input_dim,
        seq_len: header.seq_len,
        ..spec.backbone
    }
}
