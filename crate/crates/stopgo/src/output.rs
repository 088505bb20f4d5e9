//! CSV artifacts, written to a temporary file next to the target and
//! renamed into place.

use std::io;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

/// 17 significant digits; enough to round-trip an `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvArtifact {
    path: PathBuf,
    tmp: NamedTempFile,
    writer: Option<csv::Writer<std::fs::File>>,
}

impl CsvArtifact {
    pub fn create(path: &Path, header: &[&str]) -> io::Result<Self> {
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let tmp = NamedTempFile::new_in(dir)?;
        let mut writer = csv::Writer::from_writer(tmp.reopen()?);
        writer.write_record(header).map_err(io::Error::other)?;
        Ok(Self {
            path: path.to_path_buf(),
            tmp,
            writer: Some(writer),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .as_mut()
            .expect("writer is present until finish")
            .write_record(fields)
            .map_err(io::Error::other)
    }

    pub fn numbers(&mut self, values: &[f64]) -> io::Result<()> {
        self.row(values.iter().map(|&v| num(v)))
    }

    /// Flush and move into place.
    pub fn finish(mut self) -> io::Result<PathBuf> {
        let mut w = self.writer.take().expect("finish is called once");
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        self.tmp.persist(&self.path).map_err(|e| e.error)?;
        Ok(self.path)
    }
}
