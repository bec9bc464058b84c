//! Discovery of HR image trees.

use std::path::{Path, PathBuf};

use hstkit_imaging::{load_png, Image};
use rayon::prelude::*;

use crate::error::{usage, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    /// Path relative to the root, `/`-separated.
    pub rel: String,
    pub width: usize,
    pub height: usize,
}

/// Decodable PNGs under a root in byte-lexicographic order of relative path.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
    /// Files that looked like PNGs but failed to decode, with the reason.
    pub rejected: Vec<(String, String)>,
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Relative PNG paths under `root`, sorted bytewise.
pub fn png_files(root: &Path) -> Result<Vec<String>> {
    if !root.is_dir() {
        return Err(usage(format!("{} is not a directory", root.display())));
    }
    let mut rels = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(usage)?;
        if entry.file_type().is_file() && is_png(entry.path()) {
            let rel = entry.path().strip_prefix(root).expect("walk stays under root");
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            rels.push(parts.join("/"));
        }
    }
    rels.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
    Ok(rels)
}

impl DatasetIndex {
    pub fn build(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let rels = png_files(&root)?;
        let decoded: Vec<_> = rels.par_iter().map(|rel| (rel, load_png(root.join(rel)))).collect();
        let mut index = DatasetIndex {
            root,
            ..Default::default()
        };
        for (rel, res) in decoded {
            match res {
                Ok(img) => index.entries.push(IndexEntry {
                    rel: rel.clone(),
                    width: img.width(),
                    height: img.height(),
                }),
                Err(e) => {
                    log::warn!("{rel}: {e}");
                    index.rejected.push((rel.clone(), e.to_string()));
                }
            }
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Decodes every entry, in index order.
    pub fn load(&self) -> Result<Vec<(String, Image)>> {
        self.entries
            .par_iter()
            .map(|e| Ok((e.rel.clone(), load_png(self.root.join(&e.rel)).map_err(usage)?)))
            .collect()
    }
}
