use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the metrics log, written after every generator step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: u64,
    pub critic_loss: f64,
    pub wasserstein: f64,
    pub gp: f64,
    pub gen_loss: f64,
    pub l1: f64,
    pub wall_time: f64,
}

impl MetricsRecord {
    /// Logged values excluding wall time.
    pub fn values(&self) -> [f64; 5] {
        [self.critic_loss, self.wasserstein, self.gp, self.gen_loss, self.l1]
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("metrics log: {other:?}")),
    }
}

/// Append-only CSV writer.
pub struct MetricsLog {
    writer: csv::Writer<File>,
}

impl MetricsLog {
    /// Opens `path` for appending, writing the header when the file is new.
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(Self { writer })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<()> {
        self.writer.serialize(r).map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|x| x.map_err(csv_err)).collect()
}

/// Keeps only records with `step ≤ last`, used when resuming after a crash
/// left records past the checkpoint.
pub fn truncate_metrics(path: impl AsRef<Path>, last: u64) -> Result<()> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(());
    }
    let keep: Vec<_> = read_metrics(path)?.into_iter().filter(|r| r.step <= last).collect();
    std::fs::remove_file(path)?;
    let mut log = MetricsLog::append(path)?;
    for r in &keep {
        log.write(r)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rec = |s| MetricsRecord {
            step: s,
            epoch: 0,
            critic_loss: -0.5,
            wasserstein: 0.25,
            gp: 0.125,
            gen_loss: 1.0 / 3.0,
            l1: 0.1,
            wall_time: 0.0,
        };
        MetricsLog::append(&p).unwrap().write(&rec(1)).unwrap();
        MetricsLog::append(&p).unwrap().write(&rec(2)).unwrap();
        let back = read_metrics(&p).unwrap();
        assert_eq!(back, vec![rec(1), rec(2)]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        truncate_metrics(&p, 1).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), vec![rec(1)]);
    }
}
