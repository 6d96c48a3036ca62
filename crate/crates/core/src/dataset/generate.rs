//! Whole toy datasets on disk and their content checksum.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::io::save_sequence;
use super::toy::generate_toy_sequence;
use crate::config::Config;
use crate::error::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Scene seed of sequence `index` in split `split` (0 train, 1 val, 2 test).
pub fn sequence_seed(base: u64, split: usize, index: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add(split as u64 * 10_000)
        .wrapping_add(index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSequence {
    pub split: String,
    pub id: String,
    pub frames: usize,
    pub dir: PathBuf,
}

/// Renders and saves every split listed in `config.splits` under `root`.
pub fn generate_dataset(config: &Config, root: &Path) -> Result<Vec<GeneratedSequence>> {
    config.validate()?;
    let counts = [config.splits.train, config.splits.val, config.splits.test];
    let mut out = Vec::new();
    for (s, (&split, &n)) in SPLITS.iter().zip(&counts).enumerate() {
        for i in 0..n {
            let pair = generate_toy_sequence(&config.toy, &config.classes, sequence_seed(config.seed, s, i))?;
            let dir = save_sequence(root, split, &pair)?;
            out.push(GeneratedSequence {
                split: split.to_string(),
                id: pair.id.clone(),
                frames: pair.len(),
                dir,
            });
        }
    }
    Ok(out)
}

fn collect_files(root: &Path, dir: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, files)?;
        } else {
            files.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 over the relative paths and bytes of every file in the split
/// directories of `root`, in sorted path order. Other files are ignored.
pub fn dataset_checksum(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    for split in SPLITS {
        let dir = root.join(split);
        if dir.is_dir() {
            collect_files(root, &dir, &mut files)?;
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for rel in &files {
        let path = root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
