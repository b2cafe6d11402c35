//! Train/test splits, split statistics and training-ready exports.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{BinaryLabel, ItemId};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    FractionOutOfRange(f64),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// An item with its final label, ready for splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledItem {
    pub id: ItemId,
    pub text: String,
    pub class_value: u32,
    pub binary: BinaryLabel,
    #[serde(default)]
    pub flags: BTreeSet<String>,
}

/// A named partition of the labelled corpus, sorted by item id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    pub items: Vec<LabelledItem>,
}

impl Split {
    fn new(name: &str, mut items: Vec<LabelledItem>) -> Self {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            name: name.to_owned(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.items.iter().filter(|i| i.binary.is_positive()).count()
    }

    pub fn ids(&self) -> BTreeSet<&ItemId> {
        self.items.iter().map(|i| &i.id).collect()
    }
}

/// Random train/test partition.
///
/// The test split receives `round(test_fraction * N)` items. When stratified,
/// the positives are split separately so that the test split holds
/// `round(test_fraction * positives)` of them.
pub fn split_corpus(
    corpus: &[LabelledItem],
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Split, Split), DatasetError> {
    if corpus.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::FractionOutOfRange(test_fraction));
    }
    let mut ordered: Vec<&LabelledItem> = corpus.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let n_test = (test_fraction * ordered.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (test, train): (Vec<&LabelledItem>, Vec<&LabelledItem>) = if stratified {
        let (mut pos, mut neg): (Vec<&LabelledItem>, Vec<&LabelledItem>) =
            ordered.into_iter().partition(|i| i.binary.is_positive());
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut test_pos = ((test_fraction * pos.len() as f64).round() as usize).min(n_test);
        let mut test_neg = n_test - test_pos;
        if test_neg > neg.len() {
            test_neg = neg.len();
            test_pos = (n_test - test_neg).min(pos.len());
        }
        let mut test: Vec<&LabelledItem> = pos[..test_pos].to_vec();
        test.extend_from_slice(&neg[..test_neg]);
        let mut train: Vec<&LabelledItem> = pos[test_pos..].to_vec();
        train.extend_from_slice(&neg[test_neg..]);
        (test, train)
    } else {
        ordered.shuffle(&mut rng);
        let train = ordered.split_off(n_test);
        (ordered, train)
    };

    Ok((
        Split::new("train", train.into_iter().cloned().collect()),
        Split::new("test", test.into_iter().cloned().collect()),
    ))
}

/// How a carved gold holdout relates to the train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldoutMode {
    /// The holdout is the test split; everything else is training data.
    #[default]
    AsTest,
    /// The holdout is a third partition; the rest is split train/test.
    Separate,
}

/// Splits with the gold holdout respected: holdout items never reach `train`.
pub fn split_with_holdout(
    corpus: &[LabelledItem],
    holdout: &BTreeSet<ItemId>,
    mode: HoldoutMode,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<Vec<Split>, DatasetError> {
    let (gold, rest): (Vec<LabelledItem>, Vec<LabelledItem>) =
        corpus.iter().cloned().partition(|i| holdout.contains(&i.id));
    match mode {
        HoldoutMode::AsTest => Ok(vec![Split::new("train", rest), Split::new("test", gold)]),
        HoldoutMode::Separate => {
            let (train, test) = split_corpus(&rest, test_fraction, seed, stratified)?;
            Ok(vec![train, test, Split::new("holdout", gold)])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub name: String,
    pub n_total: usize,
    pub n_positive: usize,
    pub positive_rate: f64,
}

impl SplitStats {
    /// Rate as a percentage with one decimal, e.g. `1.2%`.
    pub fn rate_display(&self) -> String {
        format!("{:.1}%", self.positive_rate * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub splits: Vec<SplitStats>,
    pub warnings: Vec<String>,
}

impl SplitReport {
    pub fn get(&self, name: &str) -> Option<&SplitStats> {
        self.splits.iter().find(|s| s.name == name)
    }

    pub fn total(&self) -> usize {
        self.splits.iter().map(|s| s.n_total).sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>9} {:>11} {:>8}\n", "split", "n_total", "n_positive", "rate");
        for s in &self.splits {
            out.push_str(&format!(
                "{:<10} {:>9} {:>11} {:>8}\n",
                s.name,
                s.n_total,
                s.n_positive,
                s.rate_display()
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,n_total,n_positive,positive_rate\n");
        for s in &self.splits {
            out.push_str(&format!("{},{},{},{}\n", s.name, s.n_total, s.n_positive, s.positive_rate));
        }
        out
    }
}

/// Counts and positive rates per split. An empty split reports rate 0.
pub fn split_stats(splits: &[Split]) -> SplitReport {
    let mut warnings = Vec::new();
    let splits = splits
        .iter()
        .map(|s| {
            let n_total = s.len();
            let n_positive = s.positives();
            let positive_rate = if n_total == 0 {
                warnings.push(format!("split '{}' is empty; rate reported as 0", s.name));
                0.0
            } else {
                n_positive as f64 / n_total as f64
            };
            SplitStats {
                name: s.name.clone(),
                n_total,
                n_positive,
                positive_rate,
            }
        })
        .collect();
    SplitReport { splits, warnings }
}

/// One exported line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: ItemId,
    pub text: String,
    pub class: u32,
    pub binary: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<Vec<String>>,
    pub split: String,
}

impl ExportRecord {
    pub fn from_item(item: &LabelledItem, split: &str, include_flags: bool) -> Self {
        Self {
            id: item.id.clone(),
            text: item.text.clone(),
            class: item.class_value,
            binary: item.binary.as_u8(),
            flags: include_flags.then(|| item.flags.iter().cloned().collect()),
            split: split.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExportOptions {
    pub include_flags: bool,
    /// Also write a CSV mirror of every split.
    pub csv: bool,
}

/// Parameters recorded in the manifest alongside the file hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitParameters {
    pub seed: u64,
    pub test_fraction: f64,
    pub stratified: bool,
    pub holdout_mode: HoldoutMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: String,
    pub file: String,
    pub n_total: usize,
    pub n_positive: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub parameters: SplitParameters,
    pub include_flags: bool,
    pub splits: Vec<ManifestEntry>,
}

/// Serializes one split to newline-delimited JSON.
pub fn split_jsonl(split: &Split, include_flags: bool) -> String {
    let mut out = String::new();
    for item in &split.items {
        let record = ExportRecord::from_item(item, &split.name, include_flags);
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn split_csv(split: &Split, include_flags: bool) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id", "text", "class", "binary"];
    if include_flags {
        header.push("flags");
    }
    header.push("split");
    writer.write_record(&header).expect("in-memory write");
    for item in &split.items {
        let mut row = vec![
            item.id.to_string(),
            item.text.clone(),
            item.class_value.to_string(),
            item.binary.as_u8().to_string(),
        ];
        if include_flags {
            row.push(item.flags.iter().cloned().collect::<Vec<_>>().join(";"));
        }
        row.push(split.name.clone());
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8 csv")
}

fn write(path: PathBuf, contents: &str) -> Result<(), DatasetError> {
    fs::write(&path, contents).map_err(|source| DatasetError::Write { path, source })
}

/// Writes `<split>.jsonl` per split (plus optional CSV) and `manifest.json`.
///
/// Output bytes depend only on the splits and options.
pub fn export_dataset(
    splits: &[Split],
    parameters: SplitParameters,
    options: ExportOptions,
    out_dir: &Path,
) -> Result<ExportManifest, DatasetError> {
    fs::create_dir_all(out_dir).map_err(|source| DatasetError::Write {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut entries = Vec::new();
    for split in splits {
        let file = format!("{}.jsonl", split.name);
        let body = split_jsonl(split, options.include_flags);
        write(out_dir.join(&file), &body)?;
        if options.csv {
            write(
                out_dir.join(format!("{}.csv", split.name)),
                &split_csv(split, options.include_flags),
            )?;
        }
        entries.push(ManifestEntry {
            split: split.name.clone(),
            file,
            n_total: split.len(),
            n_positive: split.positives(),
            sha256: hex::encode(Sha256::digest(body.as_bytes())),
        });
    }
    let manifest = ExportManifest {
        parameters,
        include_flags: options.include_flags,
        splits: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(out_dir.join("manifest.json"), &text)?;
    Ok(manifest)
}

/// Parses an exported JSONL split back into records.
pub fn read_export(text: &str) -> Result<Vec<ExportRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
