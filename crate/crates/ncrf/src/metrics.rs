//! Append-only training metrics log.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::error::{NcrfError, Result};

pub const METRICS_HEADER: &str = "step,epoch,split,loss,accuracy,seconds";

pub struct MetricsWriter {
    file: BufWriter<std::fs::File>,
    path: std::path::PathBuf,
    start: Instant,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(NcrfError::io(path))?;
        let mut w = MetricsWriter {
            file: BufWriter::new(file),
            path: path.to_path_buf(),
            start: Instant::now(),
        };
        w.write_line(METRICS_HEADER)?;
        Ok(w)
    }

    pub fn row(&mut self, step: usize, epoch: usize, split: &str, loss: f64, accuracy: f64) -> Result<()> {
        let seconds = self.start.elapsed().as_secs_f64();
        self.write_line(&format!("{step},{epoch},{split},{loss},{accuracy},{seconds:.3}"))
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.write_all(b"\n"))
            .and_then(|_| self.file.flush())
            .map_err(NcrfError::io(&self.path))
    }
}
