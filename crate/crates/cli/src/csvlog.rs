//! CSV output: comma-separated, header row, '.' decimal separator, LF
//! line endings. Numbers use the shortest representation that parses back
//! to the same value, so fixed-seed runs reproduce logs byte for byte.

use crate::error::{io_ctx, Result};
use melstyle_core::pipeline::LossRecord;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Column set of training logs, one row per optimization step.
pub const TRAIN_COLUMNS: [&str; 8] =
    ["step", "L_rec", "KL", "beta", "L_Q", "L_R", "L_B", "L_All"];

pub struct CsvLog {
    w: BufWriter<std::fs::File>,
    ctx: String,
    columns: usize,
}

impl CsvLog {
    pub fn create(path: &Path, columns: &[&str]) -> Result<CsvLog> {
        let ctx = path.display().to_string();
        let f = io_ctx(std::fs::File::create(path), &ctx)?;
        let mut log = CsvLog { w: BufWriter::new(f), ctx, columns: columns.len() };
        log.row(columns)?;
        Ok(log)
    }

    pub fn row(&mut self, fields: &[impl AsRef<str>]) -> Result<()> {
        debug_assert_eq!(fields.len(), self.columns);
        let mut line = String::new();
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(f.as_ref());
        }
        line.push('\n');
        io_ctx(self.w.write_all(line.as_bytes()), &self.ctx)
    }

    pub fn loss_row(&mut self, r: &LossRecord) -> Result<()> {
        self.row(&[
            r.step.to_string(),
            fmt_f64(r.l_rec),
            fmt_f64(r.kl),
            fmt_f64(r.beta),
            fmt_f64(r.l_q),
            fmt_f64(r.l_r),
            fmt_f64(r.l_b),
            fmt_f64(r.l_all),
        ])
    }

    pub fn finish(mut self) -> Result<()> {
        io_ctx(self.w.flush(), &self.ctx)
    }
}

/// Shortest round-trip decimal form; always uses '.' as the separator.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
