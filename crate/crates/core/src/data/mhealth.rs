//! Loader for the MHealth activity logs: one whitespace-delimited text file
//! per subject, 23 sensor columns followed by an integer activity label
//! (0 = no activity of interest, 1–12 = the activities).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, SplitMode};
use crate::error::{Error, Result};

pub const MHEALTH_FEATURES: usize = 23;
pub const MHEALTH_CLASSES: usize = 12;

/// Which columns hold features and which holds the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub columns: usize,
    pub features: Vec<usize>,
    pub label: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { columns: MHEALTH_FEATURES + 1, features: (0..MHEALTH_FEATURES).collect(), label: MHEALTH_FEATURES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MHealthOptions {
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub split_mode: SplitMode,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    /// Keep only this many rows (seeded by `split_seed`).
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_split_seed() -> u64 {
    2019
}
fn default_true() -> bool {
    true
}

impl Default for MHealthOptions {
    fn default() -> Self {
        Self {
            columns: ColumnMap::default(),
            split_mode: SplitMode::PerRow,
            split_seed: default_split_seed(),
            subsample: None,
            standardize: true,
        }
    }
}

fn log_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::data(path, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    if files.is_empty() {
        return Err(Error::data(path, "no .log files found"));
    }
    files.sort();
    Ok(files)
}

/// Subject number from a name like `mHealth_subject7.log`.
fn subject_id(path: &Path, fallback: u32) -> u32 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.chars().filter(char::is_ascii_digit).collect::<String>())
        .and_then(|d| d.parse().ok())
        .unwrap_or(fallback)
}

/// Reads every `.log` file under `path` (or `path` itself), drops rows
/// labeled 0, splits 80/10/10 and standardizes with train statistics.
pub fn load_mhealth(path: &Path, opts: &MHealthOptions) -> Result<Dataset> {
    let map = &opts.columns;
    if map.label >= map.columns || map.features.iter().any(|&c| c >= map.columns) {
        return Err(Error::Config("column map refers to a column past the row width".into()));
    }
    let width = map.features.len();
    let mut features: Vec<f32> = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut row = Vec::with_capacity(map.columns);

    for (fi, file) in log_files(path)?.iter().enumerate() {
        let subject = subject_id(file, fi as u32 + 1);
        let text = fs::read_to_string(file).map_err(|e| Error::data(file, e.to_string()))?;
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            row.clear();
            for field in line.split_whitespace() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::data(file, format!("line {}: non-numeric field {field:?}", ln + 1)))?;
                row.push(v);
            }
            if row.len() != map.columns {
                return Err(Error::data(
                    file,
                    format!("line {}: expected {} columns, found {}", ln + 1, map.columns, row.len()),
                ));
            }
            let raw = row[map.label];
            if raw.fract() != 0.0 || raw < 0.0 || raw > MHEALTH_CLASSES as f64 {
                return Err(Error::data(file, format!("line {}: unknown label {raw}", ln + 1)));
            }
            let label = raw as usize;
            if label == 0 {
                continue;
            }
            features.extend(map.features.iter().map(|&c| row[c] as f32));
            labels.push(label - 1);
            groups.push(subject);
        }
    }

    if labels.is_empty() {
        return Err(Error::data(path, "no labeled rows"));
    }
    let n = labels.len();
    let x = Array2::from_shape_vec((n, width), features).expect("row-major fill");
    let mut data = Dataset::new(vec![x], labels, MHEALTH_CLASSES)?;
    data.groups = Some(groups);
    if let Some(k) = opts.subsample {
        data = data.subsample(k, opts.split_seed);
    }
    let mut data = data.with_splits(opts.split_mode, opts.split_seed)?;
    if opts.standardize {
        data.standardize()?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_log(dir: &Path, name: &str, rows: &[(f32, usize)]) {
        let mut f = fs::File::create(dir.join(name)).unwrap();
        for (base, label) in rows {
            let feats: Vec<String> = (0..23).map(|j| format!("{}", base + j as f32)).collect();
            writeln!(f, "{}\t{}", feats.join("\t"), label).unwrap();
        }
    }

    #[test]
    fn drops_unlabeled_rows_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<(f32, usize)> = (0..100).map(|i| (i as f32, i % 13)).collect();
        write_log(dir.path(), "mHealth_subject1.log", &rows);
        write_log(dir.path(), "mHealth_subject2.log", &rows);
        let d = load_mhealth(dir.path(), &MHealthOptions::default()).unwrap();
        let kept = 2 * rows.iter().filter(|r| r.1 != 0).count();
        assert_eq!(d.len(), kept);
        assert_eq!(d.view_dim(), 23);
        assert_eq!(d.class_count, 12);
        assert!(d.labels.iter().all(|&l| l < 12));
        assert!((d.splits.train.len() as f64 - 0.8 * kept as f64).abs() <= 1.0);
        assert_eq!(d.groups.as_ref().unwrap().iter().filter(|&&g| g == 2).count(), kept / 2);
    }

    #[test]
    fn rejects_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        write_log(dir.path(), "a.log", &[(0.0, 1), (1.0, 13)]);
        let err = load_mhealth(dir.path(), &MHealthOptions::default()).unwrap_err();
        assert!(err.to_string().contains("unknown label"), "{err}");
    }

    #[test]
    fn rejects_malformed_row() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.log"), "1 2 3\n").unwrap();
        assert!(load_mhealth(dir.path(), &MHealthOptions::default()).is_err());
        fs::write(dir.path().join("a.log"), "x ".repeat(24)).unwrap();
        assert!(load_mhealth(dir.path(), &MHealthOptions::default()).is_err());
    }

    #[test]
    fn column_map_reorders_layout() {
        let dir = tempfile::tempdir().unwrap();
        // Label first, then 23 features.
        let line = |label: usize| {
            let feats: Vec<String> = (0..23).map(|j| j.to_string()).collect();
            format!("{label} {}\n", feats.join(" "))
        };
        fs::write(dir.path().join("a.log"), (1..=12).map(line).collect::<String>()).unwrap();
        let opts = MHealthOptions {
            columns: ColumnMap { columns: 24, features: (1..24).collect(), label: 0 },
            standardize: false,
            ..Default::default()
        };
        let d = load_mhealth(dir.path(), &opts).unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.views[0][[0, 22]], 22.0);
    }
}
