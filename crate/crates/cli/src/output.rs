//! Run directory handling.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

pub const FAILED_MARKER: &str = "FAILED";

/// A run directory with a single writer.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root`, refusing a non-empty directory unless `overwrite`.
    pub fn create(root: &Path, overwrite: bool) -> Result<Self> {
        if root.exists() {
            let non_empty = fs::read_dir(root)
                .with_context(|| format!("listing {}", root.display()))?
                .next()
                .is_some();
            if non_empty {
                if !overwrite {
                    bail!(
                        "output directory {} is not empty (pass --overwrite to replace it)",
                        root.display()
                    );
                }
                fs::remove_dir_all(root).with_context(|| format!("clearing {}", root.display()))?;
            }
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: impl AsRef<Path>, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_text(&self, rel: impl AsRef<Path>, text: &str) -> Result<PathBuf> {
        self.write_bytes(rel, text.as_bytes())
    }

    /// Flags the directory as partial, naming the failing stage.
    pub fn mark_failed(&self, stage: &str, err: &anyhow::Error) {
        let text = format!("stage: {stage}\nerror: {err:#}\n");
        if let Err(e) = fs::write(self.root.join(FAILED_MARKER), text) {
            log::error!("could not write failure marker: {e}");
        }
    }
}
