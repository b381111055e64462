use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

/// Output files held in memory until every one of them is ready.
///
/// `commit` writes each to a temp file next to its target and renames them
/// only after all writes succeeded, so an error leaves no partial output.
#[derive(Debug, Default)]
pub struct Staged {
    base: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    /// Files named relative to `dir`.
    pub fn new(dir: &Path) -> Self {
        Staged {
            base: dir.to_owned(),
            files: Vec::new(),
        }
    }

    /// Files given by full path.
    pub fn single(path: &Path) -> Self {
        Staged {
            base: path.parent().map(Path::to_owned).unwrap_or_default(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        let path = self.base.join(name);
        self.files.push((path, bytes));
    }

    pub fn add_path(&mut self, path: &Path, bytes: Vec<u8>) {
        self.files.push((path.to_owned(), bytes));
    }

    pub fn commit(self) -> std::io::Result<()> {
        let mut temps = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_owned(),
                _ => PathBuf::from("."),
            };
            std::fs::create_dir_all(&dir)?;
            let mut tmp = NamedTempFile::new_in(&dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            temps.push((tmp, path.clone()));
        }
        let mut done = Vec::with_capacity(temps.len());
        for (tmp, path) in temps {
            if let Err(e) = tmp.persist(&path) {
                for p in &done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e.error);
            }
            done.push(path);
        }
        Ok(())
    }
}
