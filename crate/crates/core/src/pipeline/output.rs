//! Writing a release to disk.
//!
//! Files are written into a hidden staging directory next to the target and
//! moved into place only by [`StagedRelease::commit`]. Dropping an
//! uncommitted stage removes it, so an aborted release leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::domain::Histogram;
use crate::error::{Error, Result};
use crate::pipeline::release::ReleaseOutput;

pub const REPORT_FILE: &str = "report.json";

/// Counts CSV: the histogram's attribute columns plus `count`, rows in
/// lexicographic point order.
pub fn counts_csv(h: &Histogram) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = h.schema().names().collect();
    header.push("count");
    w.write_record(&header)?;
    for (p, c) in h.iter() {
        let mut rec: Vec<String> = p.values().iter().map(|v| v.to_string()).collect();
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<buffer>", e.into_error()))
}

/// Row-form CSV: each point repeated `count` times.
pub fn rows_csv(h: &Histogram) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(h.schema().names())?;
    for (p, c) in h.iter() {
        let rec: Vec<String> = p.values().iter().map(|v| v.to_string()).collect();
        for _ in 0..c {
            w.write_record(&rec)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::io("<buffer>", e.into_error()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenFile {
    /// Path relative to the output root, `/`-separated.
    pub relative: String,
    pub digest: String,
}

#[derive(Debug)]
pub struct StagedRelease {
    staging: PathBuf,
    target: PathBuf,
    files: Vec<WrittenFile>,
    committed: bool,
}

fn write_file(root: &Path, relative: &str, bytes: &[u8]) -> Result<WrittenFile> {
    let path = root.join(relative);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(WrittenFile {
        relative: relative.to_string(),
        digest: sha256_hex(bytes),
    })
}

fn is_empty_dir(p: &Path) -> Result<bool> {
    Ok(fs::read_dir(p)
        .map_err(|e| Error::io(p, e))?
        .next()
        .is_none())
}

/// Write every output, plus the report, into a staging directory for
/// `target`. The target must not exist or must be an empty directory.
pub fn stage_release(
    output: &ReleaseOutput,
    target: &Path,
    expand_rows: bool,
) -> Result<StagedRelease> {
    if target.exists() && !(target.is_dir() && is_empty_dir(target)?) {
        return Err(Error::io(
            target,
            std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                "output directory exists and is not empty",
            ),
        ));
    }
    let parent = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "release".into());
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let mut stage = StagedRelease {
        staging,
        target: target.to_path_buf(),
        files: Vec::new(),
        committed: false,
    };
    for r in &output.releases {
        let f = write_file(&stage.staging, &r.file_name(), &counts_csv(&r.histogram)?)?;
        stage.files.push(f);
        if expand_rows {
            let rel = r.file_name().replace(".csv", ".rows.csv");
            let f = write_file(&stage.staging, &rel, &rows_csv(&r.histogram)?)?;
            stage.files.push(f);
        }
    }
    let f = write_file(
        &stage.staging,
        REPORT_FILE,
        output.report.to_json().as_bytes(),
    )?;
    stage.files.push(f);
    Ok(stage)
}

impl StagedRelease {
    pub fn files(&self) -> &[WrittenFile] {
        &self.files
    }

    /// Digest of the counts file for one release scope, if written.
    pub fn digest_of(&self, relative: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|f| f.relative == relative)
            .map(|f| f.digest.as_str())
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.is_dir() {
            fs::remove_dir(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for StagedRelease {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
