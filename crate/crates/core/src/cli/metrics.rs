use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::optimize::EpochRecord;

/// Column order of `metrics.csv`; stable across versions.
pub const METRICS_HEADER: &str =
    "epoch,t,data_loss,constraint_loss,mean_violation,max_violation,train_dice,val_dice,wall_ms";

/// Row-at-a-time CSV writer. Every row is flushed so an aborted run leaves
/// the completed epochs on disk.
pub struct MetricsWriter {
    out: BufWriter<File>,
    wall_clock: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, wall_clock: bool) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out, wall_clock })
    }

    pub fn write(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.out, "{}", format_row(r, self.wall_clock))?;
        self.out.flush()?;
        Ok(())
    }
}

/// One CSV line without the terminator. Missing scores are left empty.
pub fn format_row(r: &EpochRecord, wall_clock: bool) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let wall = if wall_clock { r.wall_ms } else { 0.0 };
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.epoch,
        r.t,
        r.data_loss,
        r.constraint_loss,
        r.mean_violation,
        r.max_violation,
        opt(r.train_score),
        opt(r.val_score),
        wall
    )
}
