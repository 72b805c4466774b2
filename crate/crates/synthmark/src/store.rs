//! Directory-backed map from column combination to synthetic table.
//!
//! Each table lives at `<sorted-col-names joined by '+'>.csv` next to a
//! `manifest.json` recording the combination list, parameter hash, and
//! salt fingerprint.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Schema};
use crate::forest::AnonParams;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("no synthetic table for columns `{0}`")]
    MissingTable(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
}

pub fn combination_key(columns: &[String]) -> Vec<String> {
    let set: BTreeSet<String> = columns.iter().cloned().collect();
    set.into_iter().collect()
}

pub fn table_file_name(columns: &[String]) -> String {
    format!("{}.csv", combination_key(columns).join("+"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub columns: Vec<String>,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreManifest {
    pub combinations: Vec<ManifestEntry>,
    pub params_hash: String,
    pub salt_fingerprint: String,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchPolicy {
    Exact,
    ProjectFromSuperset,
}

/// Resolves a column combination to a synthetic table.
pub trait TableSource {
    fn fetch(&self, columns: &[String]) -> Result<Dataset, StoreError>;
}

#[derive(Debug)]
pub struct SynTableStore {
    root: PathBuf,
    schema: Schema,
    manifest: StoreManifest,
    policy: FetchPolicy,
}

impl SynTableStore {
    pub fn create(root: &Path, schema: &Schema, params: &AnonParams) -> Result<Self, StoreError> {
        std::fs::create_dir_all(root)?;
        let manifest = StoreManifest {
            combinations: Vec::new(),
            params_hash: params.params_hash(),
            salt_fingerprint: params.salt_fingerprint(),
            complete: false,
        };
        let store = SynTableStore {
            root: root.to_path_buf(),
            schema: schema.clone(),
            manifest,
            policy: FetchPolicy::Exact,
        };
        store.write_manifest()?;
        Ok(store)
    }

    pub fn open(root: &Path, schema: &Schema, policy: FetchPolicy) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(root.join("manifest.json"))?;
        let manifest: StoreManifest =
            serde_json::from_str(&text).map_err(|e| StoreError::Manifest(e.to_string()))?;
        for entry in &manifest.combinations {
            if !root.join(&entry.file).exists() {
                return Err(StoreError::Manifest(format!(
                    "manifest entry `{}` has no file",
                    entry.file
                )));
            }
        }
        Ok(SynTableStore {
            root: root.to_path_buf(),
            schema: schema.clone(),
            manifest,
            policy,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn set_policy(&mut self, policy: FetchPolicy) {
        self.policy = policy;
    }

    pub fn combinations(&self) -> Vec<Vec<String>> {
        self.manifest
            .combinations
            .iter()
            .map(|e| e.columns.clone())
            .collect()
    }

    pub fn contains(&self, columns: &[String]) -> bool {
        let key = combination_key(columns);
        self.manifest.combinations.iter().any(|e| e.columns == key)
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        let text =
            serde_json::to_string_pretty(&self.manifest).expect("manifest is serializable");
        std::fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn insert(&mut self, columns: &[String], table: &Dataset) -> Result<(), StoreError> {
        let key = combination_key(columns);
        let file = table_file_name(&key);
        table.write_csv(&self.root.join(&file))?;
        self.manifest.combinations.retain(|e| e.columns != key);
        self.manifest.combinations.push(ManifestEntry {
            columns: key,
            file,
            rows: table.row_count(),
        });
        self.manifest
            .combinations
            .sort_by(|a, b| a.columns.cmp(&b.columns));
        self.write_manifest()?;
        Ok(())
    }

    pub fn mark_complete(&mut self) -> Result<(), StoreError> {
        self.manifest.complete = true;
        self.write_manifest()
    }

    fn load_entry(&self, entry: &ManifestEntry) -> Result<Dataset, StoreError> {
        let schema = self.schema.project(&entry.columns)?;
        Ok(Dataset::load_csv(&self.root.join(&entry.file), &schema)?)
    }
}

impl TableSource for SynTableStore {
    fn fetch(&self, columns: &[String]) -> Result<Dataset, StoreError> {
        let key = combination_key(columns);
        if let Some(entry) = self.manifest.combinations.iter().find(|e| e.columns == key) {
            return self.load_entry(entry);
        }
        match self.policy {
            FetchPolicy::Exact => Err(StoreError::MissingTable(key.join("+"))),
            FetchPolicy::ProjectFromSuperset => {
                // smallest superset by column count, ties by lexicographic key
                let mut candidates: Vec<&ManifestEntry> = self
                    .manifest
                    .combinations
                    .iter()
                    .filter(|e| key.iter().all(|c| e.columns.contains(c)))
                    .collect();
                candidates.sort_by(|a, b| {
                    a.columns
                        .len()
                        .cmp(&b.columns.len())
                        .then_with(|| a.columns.cmp(&b.columns))
                });
                let entry = candidates
                    .first()
                    .ok_or_else(|| StoreError::MissingTable(key.join("+")))?;
                Ok(self.load_entry(entry)?.project(&key)?)
            }
        }
    }
}

/// Presents one wide table as a source for any column subset, for
/// measuring single-table techniques through the same code path.
#[derive(Debug)]
pub struct SingleTableSource {
    table: Dataset,
}

impl SingleTableSource {
    pub fn new(table: Dataset) -> Self {
        SingleTableSource { table }
    }

    pub fn table(&self) -> &Dataset {
        &self.table
    }
}

impl TableSource for SingleTableSource {
    fn fetch(&self, columns: &[String]) -> Result<Dataset, StoreError> {
        let key = combination_key(columns);
        for c in &key {
            if self.table.schema().column(c).is_none() {
                return Err(StoreError::MissingTable(key.join("+")));
            }
        }
        Ok(self.table.project(&key)?)
    }
}
