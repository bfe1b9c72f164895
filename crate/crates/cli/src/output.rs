//! Atomic artifact writes: every file is written to a hidden temporary next
//! to its destination and renamed into place once complete.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Write `name` through `body`, then rename it into place.
    pub fn write_with<F>(&self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let dest = self.path(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        let res = body(&mut w).and_then(|_| {
            w.flush()?;
            w.get_ref().sync_all()?;
            Ok(())
        });
        if let Err(e) = res {
            let _ = fs::remove_file(&tmp);
            return Err(e.context(format!("writing {}", dest.display())));
        }
        drop(w);
        fs::rename(&tmp, &dest).with_context(|| format!("renaming into {}", dest.display()))?;
        log::info!("wrote {}", dest.display());
        Ok(dest)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Write through one of the library's `write_csv` style functions.
    pub fn write_csv<F>(&self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> fastslow::Result<()>,
    {
        self.write_with(name, |w| Ok(body(w)?))
    }
}
