use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::data::{DatasetHeader, ParticipantRecord};
use crate::error::{DataError, Error, Result};

pub const MANIFEST_NAME: &str = "manifest.csv";
const FEATURE_DIR: &str = "features";

fn manifest_error(line: usize, detail: impl Into<String>) -> Error {
    DataError::Manifest {
        line,
        detail: detail.into(),
    }
    .into()
}

fn parse_field<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| manifest_error(line, format!("cannot parse {name} from {raw:?}")))
}

/// Reads a manifest and every feature file it references.
///
/// Manifest layout: a first line `T,d,n_groups,format_version`, then one
/// `id,group,label,relative_path` row per participant. Feature files are
/// `T·d` little-endian `f32` values, row-major.
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<ParticipantRecord>)> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());

    let (_, head) = lines.next().ok_or(DataError::Empty)?;
    let fields: Vec<&str> = head.split(',').collect();
    if fields.len() != 4 {
        return Err(manifest_error(
            1,
            "header must be T,d,n_groups,format_version",
        ));
    }
    let seq_len: usize = parse_field(1, "T", fields[0])?;
    let input_dim: usize = parse_field(1, "d", fields[1])?;
    let n_groups: usize = parse_field(1, "n_groups", fields[2])?;
    let format_version: u32 = parse_field(1, "format_version", fields[3])?;
    if seq_len == 0 || input_dim == 0 || n_groups < 2 {
        return Err(manifest_error(
            1,
            "T and d must be positive and n_groups at least 2",
        ));
    }
    if format_version != super::FORMAT_VERSION {
        return Err(manifest_error(
            1,
            format!("unsupported format version {format_version}"),
        ));
    }

    let expected_bytes = seq_len * input_dim * 4;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(manifest_error(
                lineno,
                "expected id,group,label,relative_path",
            ));
        }
        let id = cols[0].trim().to_string();
        let group: usize = parse_field(lineno, "group", cols[1])?;
        let label: u8 = parse_field(lineno, "label", cols[2])?;
        if label > 1 {
            return Err(manifest_error(
                lineno,
                format!("label must be 0 or 1, got {label}"),
            ));
        }
        if group >= n_groups {
            return Err(DataError::BadGroup {
                id,
                group,
                n_groups,
            }
            .into());
        }
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId(id).into());
        }
        let path = base.join(cols[3].trim());
        let bytes = fs::read(&path).map_err(|_| DataError::MissingFile {
            id: id.clone(),
            path: path.clone(),
        })?;
        if bytes.len() != expected_bytes {
            return Err(DataError::ShapeMismatch {
                id,
                expected: expected_bytes,
                found: bytes.len(),
            }
            .into());
        }
        let mut values = Vec::with_capacity(seq_len * input_dim);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(DataError::NonFinite { id, index: i }.into());
            }
            values.push(v);
        }
        records.push(ParticipantRecord {
            id,
            group,
            label,
            features: Tensor::matrix(seq_len, input_dim, values)?,
        });
    }
    if records.is_empty() {
        return Err(DataError::Empty.into());
    }
    let header = DatasetHeader {
        seq_len,
        input_dim,
        n_groups,
        n_participants: records.len(),
        format_version,
    };
    Ok((header, records))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && id != "."
        && id != ".."
}

/// Writes `manifest.csv` plus one feature file per participant under `dir`.
pub fn save_dataset(
    header: &DatasetHeader,
    records: &[ParticipantRecord],
    dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if records.is_empty() {
        return Err(DataError::Empty.into());
    }
    let feature_dir = dir.join(FEATURE_DIR);
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;

    let mut manifest = format!(
        "{},{},{},{}\n",
        header.seq_len,
        header.input_dim,
        header.n_groups,
        super::FORMAT_VERSION
    );
    let mut seen = HashSet::new();
    for r in records {
        if !valid_id(&r.id) {
            return Err(Error::Config(format!(
                "participant id {:?} is not filename-safe",
                r.id
            )));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(DataError::DuplicateId(r.id.clone()).into());
        }
        if r.features.shape() != [header.seq_len, header.input_dim] {
            return Err(DataError::ShapeMismatch {
                id: r.id.clone(),
                expected: header.seq_len * header.input_dim * 4,
                found: r.features.len() * 4,
            }
            .into());
        }
        if r.group >= header.n_groups {
            return Err(DataError::BadGroup {
                id: r.id.clone(),
                group: r.group,
                n_groups: header.n_groups,
            }
            .into());
        }
        let rel = format!("{FEATURE_DIR}/{}.f32", r.id);
        let bytes: Vec<u8> = r
            .features
            .data()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let path = dir.join(&rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!("{},{},{},{}\n", r.id, r.group, r.label, rel));
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
