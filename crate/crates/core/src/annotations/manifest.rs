//! Patient / study / series manifest persisted as JSON lines.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Human,
    Pseudo,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

/// Which model produced a pseudo-label set, and at what threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoProvenance {
    pub model_id: String,
    pub conf_threshold: f64,
    pub labels_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub study_id: String,
    /// Series directory relative to the dataset root.
    pub series_path: String,
    pub slice_count: usize,
    pub annotation_source: AnnotationSource,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark_id: Option<u32>,
    /// Slices with no box; kept as negatives, see [`ManifestEntry::positive_slices`].
    #[serde(default)]
    pub empty_slices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo: Option<PseudoProvenance>,
}

impl ManifestEntry {
    pub fn new(patient_id: &str, study_id: &str, series_path: &str, slice_count: usize, source: AnnotationSource) -> Self {
        ManifestEntry {
            patient_id: patient_id.to_string(),
            study_id: study_id.to_string(),
            series_path: series_path.to_string(),
            slice_count,
            annotation_source: source,
            split: Split::Unassigned,
            benchmark_id: None,
            empty_slices: Vec::new(),
            pseudo: None,
        }
    }

    pub fn is_annotated(&self) -> bool {
        self.annotation_source != AnnotationSource::None
    }

    /// Slice indices carrying at least one box.
    pub fn positive_slices(&self) -> Vec<usize> {
        let empty: HashSet<_> = self.empty_slices.iter().copied().collect();
        (0..self.slice_count).filter(|k| !empty.contains(k)).collect()
    }

    fn key(&self) -> (&str, &str, &str, Option<u32>) {
        (&self.patient_id, &self.study_id, &self.series_path, self.benchmark_id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    /// Checks key uniqueness and train/test disjointness per benchmark.
    pub fn validate(&self) -> Result<()> {
        let mut keys = HashSet::new();
        for e in &self.entries {
            if !keys.insert(e.key()) {
                return Err(Error::Manifest(format!(
                    "duplicate entry {}/{}/{} (benchmark {:?})",
                    e.patient_id, e.study_id, e.series_path, e.benchmark_id
                )));
            }
        }
        let mut splits: BTreeMap<(Option<u32>, &str), BTreeSet<Split>> = BTreeMap::new();
        for e in &self.entries {
            splits
                .entry((e.benchmark_id, e.patient_id.as_str()))
                .or_default()
                .insert(e.split);
        }
        for ((bench, patient), s) in splits {
            if s.contains(&Split::Train) && s.contains(&Split::Test) {
                return Err(Error::LeakageDetected(format!(
                    "patient {patient} is in both train and test of benchmark {bench:?}"
                )));
            }
        }
        Ok(())
    }

    /// Sorted, de-duplicated patient ids.
    pub fn patients(&self) -> Vec<String> {
        let set: BTreeSet<_> = self.entries.iter().map(|e| e.patient_id.clone()).collect();
        set.into_iter().collect()
    }

    /// Patients with at least one human-annotated series.
    pub fn annotated_patients(&self) -> Vec<String> {
        let set: BTreeSet<_> = self
            .entries
            .iter()
            .filter(|e| e.annotation_source == AnnotationSource::Human)
            .map(|e| e.patient_id.clone())
            .collect();
        set.into_iter().collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Appends entries to an existing file. Callers serialize concurrent appends.
    pub fn append(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        for e in entries {
            let line = serde_json::to_string(e)? + "\n";
            f.write_all(line.as_bytes()).map_err(|err| Error::io(path, err))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(p: &str, s: &str, split: Split, bench: Option<u32>) -> ManifestEntry {
        let mut e = ManifestEntry::new(p, s, &format!("series/{p}_{s}"), 4, AnnotationSource::Human);
        e.split = split;
        e.benchmark_id = bench;
        e
    }

    #[test]
    fn jsonl_round_trip_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut e = entry("P1", "S1", Split::Train, Some(1));
        e.empty_slices = vec![0, 3];
        let m = DatasetManifest::new(vec![e.clone()]).unwrap();
        m.write(&path).unwrap();
        let extra = entry("P2", "S1", Split::Test, Some(1));
        DatasetManifest::append(&path, &[extra.clone()]).unwrap();
        let back = DatasetManifest::read(&path).unwrap();
        assert_eq!(back.entries, vec![e.clone(), extra]);
        assert_eq!(e.positive_slices(), vec![1, 2]);
        let line = m.to_jsonl().unwrap();
        assert!(line.contains("\"annotation_source\":\"human\""));
        assert!(line.contains("\"split\":\"train\""));
    }

    #[test]
    fn duplicate_and_leaky_entries_rejected() {
        let a = entry("P1", "S1", Split::Train, Some(1));
        assert!(DatasetManifest::new(vec![a.clone(), a.clone()]).is_err());
        let b = entry("P1", "S2", Split::Test, Some(1));
        assert!(matches!(DatasetManifest::new(vec![a.clone(), b]), Err(Error::LeakageDetected(_))));
        // same patient on different sides of different benchmarks is fine
        let c = entry("P1", "S2", Split::Test, Some(2));
        assert!(DatasetManifest::new(vec![a, c]).is_ok());
    }
}
