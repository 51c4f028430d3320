//! Per-trial CSV rows.

use std::io::Write;

use anyhow::Result;
use popproto::protocols::ProtocolInstance;
use popproto::sim::TimeStats;
use serde::Serialize;

/// CSV schema 1. Column order is part of the interface; a change bumps the
/// schema number reported by `popproto --version`.
pub const HEADER: [&str; 10] =
    ["protocol", "n", "input", "a", "seed", "trial", "interactions", "parallel_time", "y_count", "stop_reason"];

#[derive(Debug, Serialize)]
pub struct Row {
    pub protocol: String,
    pub n: u64,
    pub input: String,
    pub a: u64,
    pub seed: u64,
    pub trial: u64,
    pub interactions: u64,
    pub parallel_time: String,
    /// Empty when the final configuration has no defined output.
    pub y_count: String,
    pub stop_reason: String,
}

pub fn rows_for(inst: &ProtocolInstance, input: &str, n: u64, a: u64, seed: u64, stats: &TimeStats) -> Vec<Row> {
    stats
        .records
        .iter()
        .map(|r| Row {
            protocol: inst.name.clone(),
            n,
            input: input.to_string(),
            a,
            seed,
            trial: r.trial,
            interactions: r.interactions,
            parallel_time: format!("{:.6}", r.parallel_time),
            y_count: inst.output(&r.final_config).map(|y| y.to_string()).unwrap_or_default(),
            stop_reason: r.stop_reason.to_string(),
        })
        .collect()
}

pub struct Sink<W: Write> {
    w: csv::Writer<W>,
}

impl<W: Write> Sink<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(inner);
        w.write_record(HEADER)?;
        Ok(Sink { w })
    }

    pub fn write(&mut self, rows: &[Row]) -> Result<()> {
        for r in rows {
            self.w.serialize(r)?;
        }
        self.w.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.w.flush()?;
        Ok(self.w.into_inner().map_err(|e| e.into_error())?)
    }
}
