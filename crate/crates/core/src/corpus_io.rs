//! Loading, validating, deduplicating and splitting disaster-tweet CSV files.
//!
//! The expected schema is the Kaggle one: `id,keyword,location,text,target`,
//! where `target` is optional (absent for the unlabeled test file).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Class label: 0 = Not Disaster, 1 = Disaster.
pub type Label = u8;

pub const NOT_DISASTER: Label = 0;
pub const DISASTER: Label = 1;

const REQUIRED_COLUMNS: [&str; 4] = ["id", "keyword", "location", "text"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("row with id {id}: target `{value}` is not 0 or 1")]
    NonBinaryTarget { id: i64, value: String },
    #[error("duplicate id {0}")]
    DuplicateId(i64),
    #[error("row with id {0} has empty text")]
    EmptyText(i64),
    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("record with id {0} has no label")]
    UnlabeledRecord(i64),
    #[error("class {0} has no records")]
    EmptyClass(Label),
    #[error("validation fraction {0} outside [0, 1)")]
    InvalidFraction(f64),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: i64,
    pub keyword: Option<String>,
    pub location: Option<String>,
    pub text: String,
    pub target: Option<Label>,
}

impl TweetRecord {
    /// Convenience constructor for labeled rows without keyword/location.
    pub fn labeled(id: i64, text: impl Into<String>, target: Label) -> Self {
        Self {
            id,
            keyword: None,
            location: None,
            text: text.into(),
            target: Some(target),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    /// Indexed by label.
    pub per_class: [usize; 2],
    pub unlabeled: usize,
    pub duplicates_removed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_fraction: 0.15,
            seed: 2,
            stratified: true,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<TweetRecord>> {
    let file = File::open(path)?;
    read_csv(file)
}

/// Parses CSV from any reader. Quoting follows RFC 4180, so fields may
/// contain commas, doubled quotes and newlines.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<TweetRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr.headers().map_err(csv_error)?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))?;
    }
    let [id_col, kw_col, loc_col, text_col] = idx;
    let target_col = column("target");

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let raw_id = row.get(id_col).unwrap_or("").trim();
        let id: i64 = raw_id.parse().map_err(|_| CorpusError::MalformedRow {
            line,
            message: format!("id `{raw_id}` is not an integer"),
        })?;
        if !seen.insert(id) {
            return Err(CorpusError::DuplicateId(id));
        }
        let text = row.get(text_col).unwrap_or("").to_string();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText(id));
        }
        let target = match target_col {
            None => None,
            Some(col) => {
                let value = row.get(col).unwrap_or("").trim();
                match value {
                    "0" => Some(NOT_DISASTER),
                    "1" => Some(DISASTER),
                    other => {
                        return Err(CorpusError::NonBinaryTarget {
                            id,
                            value: other.to_string(),
                        })
                    }
                }
            }
        };
        records.push(TweetRecord {
            id,
            keyword: non_empty(row.get(kw_col)),
            location: non_empty(row.get(loc_col)),
            text,
            target,
        });
    }
    Ok(records)
}

fn non_empty(field: Option<&str>) -> Option<String> {
    field.filter(|s| !s.is_empty()).map(str::to_string)
}

fn csv_error(err: csv::Error) -> CorpusError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(io) => CorpusError::IoFailure(io),
        other => CorpusError::MalformedRow {
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn dataset_stats(records: &[TweetRecord]) -> DatasetStats {
    let mut stats = DatasetStats {
        total: records.len(),
        ..DatasetStats::default()
    };
    for record in records {
        match record.target {
            Some(label) => stats.per_class[label as usize] += 1,
            None => stats.unlabeled += 1,
        }
    }
    stats
}

/// Collapses repeated texts. A text that always carries the same target keeps
/// its first occurrence; a text seen with conflicting targets is dropped
/// entirely. Order of survivors is preserved.
pub fn dedup(records: &[TweetRecord]) -> (Vec<TweetRecord>, usize) {
    let mut groups: HashMap<&str, (usize, bool)> = HashMap::new();
    for (i, record) in records.iter().enumerate() {
        groups
            .entry(record.text.as_str())
            .and_modify(|(first, conflict)| {
                if records[*first].target != record.target {
                    *conflict = true;
                }
            })
            .or_insert((i, false));
    }
    let kept: Vec<TweetRecord> = records
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            let (first, conflict) = groups[r.text.as_str()];
            !conflict && first == *i
        })
        .map(|(_, r)| r.clone())
        .collect();
    let removed = records.len() - kept.len();
    (kept, removed)
}

/// Round half up, tolerant of representation error such as `0.15 * 30`.
fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Partitions labeled records into (train, val).
///
/// Each class contributes `round_half_up(val_fraction * class_size)`
/// validation records; if the per-class counts do not add up to the rounded
/// overall target the difference is charged to the majority class. Which
/// records are picked depends only on `spec.seed`. Both halves keep input order.
pub fn stratified_split(
    records: &[TweetRecord],
    spec: &SplitSpec,
) -> Result<(Vec<TweetRecord>, Vec<TweetRecord>)> {
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(CorpusError::InvalidFraction(spec.val_fraction));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, record) in records.iter().enumerate() {
        let label = record.target.ok_or(CorpusError::UnlabeledRecord(record.id))?;
        by_class[label as usize].push(i);
    }
    if spec.val_fraction == 0.0 {
        return Ok((records.to_vec(), Vec::new()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut val_idx = Vec::new();
    if spec.stratified {
        for (label, members) in by_class.iter().enumerate() {
            if members.is_empty() {
                return Err(CorpusError::EmptyClass(label as Label));
            }
        }
        let mut counts = [
            round_half_up(spec.val_fraction * by_class[0].len() as f64),
            round_half_up(spec.val_fraction * by_class[1].len() as f64),
        ];
        let target = round_half_up(spec.val_fraction * records.len() as f64);
        let majority = if by_class[1].len() > by_class[0].len() { 1 } else { 0 };
        let assigned = counts[0] + counts[1];
        let adjusted = (counts[majority] + target) as i64 - assigned as i64;
        counts[majority] = adjusted.clamp(0, by_class[majority].len() as i64) as usize;

        for (members, &n_val) in by_class.iter().zip(counts.iter()) {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            val_idx.extend_from_slice(&shuffled[..n_val]);
        }
    } else {
        let mut all: Vec<usize> = (0..records.len()).collect();
        all.shuffle(&mut rng);
        let n_val = round_half_up(spec.val_fraction * records.len() as f64).min(records.len());
        val_idx.extend_from_slice(&all[..n_val]);
    }

    let mut in_val = vec![false; records.len()];
    for i in val_idx {
        in_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (record, &is_val) in records.iter().zip(&in_val) {
        if is_val {
            val.push(record.clone());
        } else {
            train.push(record.clone());
        }
    }
    Ok((train, val))
}
