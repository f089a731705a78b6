//! Dataset access that records every feature file it opens.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::Context;
use engage_mil::weakdata::store::{read_features, DatasetIndex, IndexEntry};
use engage_mil::weakdata::{Bag, Dataset};

/// Feature files read during one command, relative to the dataset root.
#[derive(Debug, Default)]
pub struct AuditLog {
    pub reads: Vec<PathBuf>,
}

impl AuditLog {
    /// Writes one path per line.
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text: String = self
            .reads
            .iter()
            .map(|p| format!("{}\n", p.display()))
            .collect();
        std::fs::write(path, text).with_context(|| format!("writing audit log {}", path.display()))
    }
}

pub struct IndexedDataset {
    pub index_path: PathBuf,
    pub index: DatasetIndex,
}

impl IndexedDataset {
    pub fn open(index_path: &Path) -> anyhow::Result<Self> {
        Ok(IndexedDataset {
            index_path: index_path.to_path_buf(),
            index: DatasetIndex::read(index_path)?,
        })
    }

    fn root(&self) -> &Path {
        self.index_path.parent().unwrap_or(Path::new("."))
    }

    /// Loads the videos selected by `keep`, in index order. Only their
    /// feature files are opened.
    pub fn load(&self, audit: &mut AuditLog, mut keep: impl FnMut(&IndexEntry) -> bool) -> anyhow::Result<Dataset> {
        let mut bags = Vec::new();
        for entry in self.index.videos.iter().filter(|e| keep(e)) {
            audit.reads.push(entry.path.clone());
            let path = self.root().join(&entry.path);
            let x = read_features(&path)?;
            if x.dim() != (self.index.instances_per_bag, self.index.dim) {
                anyhow::bail!(
                    "{}: matrix is {:?}, index declares {}x{}",
                    path.display(),
                    x.dim(),
                    self.index.instances_per_bag,
                    self.index.dim
                );
            }
            bags.push(Bag::new(&entry.video_id, &entry.subject_id, x, entry.label)?);
        }
        if bags.is_empty() {
            anyhow::bail!("{}: no videos selected", self.index_path.display());
        }
        Ok(Dataset::new(bags, self.index.feature_kind)?)
    }

    /// Loads every video whose subject is not in `excluded`.
    pub fn load_excluding(&self, audit: &mut AuditLog, excluded: &BTreeSet<String>) -> anyhow::Result<Dataset> {
        self.load(audit, |e| !excluded.contains(&e.subject_id))
    }
}
