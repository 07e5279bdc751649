use std::cell::RefCell;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Append-only text log of a run. Without a path every call is a no-op.
pub struct RunLog {
    file: Option<(PathBuf, RefCell<File>)>,
}

impl RunLog {
    pub fn open(path: Option<PathBuf>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                }
                let f = File::create(&p).map_err(|e| CliError::io(&p, e))?;
                Some((p, RefCell::new(f)))
            }
            None => None,
        };
        Ok(Self { file })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn line(&self, text: &str) -> Result<(), CliError> {
        if let Some((p, f)) = &self.file {
            writeln!(f.borrow_mut(), "{text}").map_err(|e| CliError::io(p, e))?;
        }
        Ok(())
    }

    pub fn section(&self, title: &str, body: &str) -> Result<(), CliError> {
        self.line(&format!("--- {title} ---"))?;
        self.line(body.trim_end())?;
        self.line("---")
    }
}
