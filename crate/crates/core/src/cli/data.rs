use std::path::Path;

use crate::corpus::{filter_binary, load_dataset, Dataset, DomainRole};
use crate::embed::{load_glove, EmbeddingTable};
use crate::error::{Error, Result};

use super::config::RunConfig;

/// Labeled source records. Class balancing happens at training time.
pub fn load_source(path: &Path) -> Result<Dataset> {
    let (raw, _) = load_dataset(path, None)?;
    let (ds, removed) = filter_binary(&raw)?;
    if removed > 0 {
        log::warn!("{}: ignored {removed} records labeled None", path.display());
    }
    Ok(ds.with_role(DomainRole::Source))
}

/// All configured target CSVs, each record tagged with its platform key.
pub fn load_targets(cfg: &RunConfig) -> Result<Dataset> {
    let mut all = Dataset::new(Vec::new(), DomainRole::Target);
    for (tag, path) in &cfg.target_csvs {
        let (mut ds, _) = load_dataset(path, None)?;
        for r in &mut ds.records {
            r.platform = tag.clone();
        }
        all = all.concat(ds);
    }
    Ok(all.with_role(DomainRole::Target))
}

pub fn load_table(path: &Path, dim: usize) -> Result<EmbeddingTable> {
    let table = load_glove(path, dim)?;
    if table.is_empty() {
        return Err(Error::Empty(format!("{}: no embedding vectors", path.display())));
    }
    Ok(table)
}
