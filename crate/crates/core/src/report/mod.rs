//! Experiment orchestration, statistics and report files.

mod config;
mod experiments;
pub mod svg;
mod wilcoxon;

use std::io::Write;
use std::path::Path;

use crate::error::{FavcError, Result};

pub use config::{config_hash, load_data, DataSpec, Dataset, ExperimentConfig};
pub use experiments::{
    evaluate_methods, load_model, rank_methods, run_baseline, run_clean_eval, run_report, run_robustness, run_sweep,
    run_synth, run_train, CleanReport, MethodEval, Predictor, RobustRow, RobustReport, SweepReport, SweepRow, TestRow,
    MODEL_NAME, ROBUST_METRICS,
};
pub use wilcoxon::{mid_ranks, wilcoxon_signed_rank, Wilcoxon, EXACT_MAX_N, MIN_PAIRS};

/// Identifies the configuration behind an output file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn preamble(&self) -> Vec<(String, String)> {
        vec![
            ("config_hash".to_string(), self.config_hash.clone()),
            ("seed".to_string(), self.seed.to_string()),
        ]
    }

    pub fn inline(&self) -> String {
        format!("config_hash={} seed={}", self.config_hash, self.seed)
    }
}

/// A CSV table held in memory; floats are formatted by the caller.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    /// `# key=value` lines followed by the CSV body.
    pub fn to_bytes(&self, prov: &Provenance) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        for (k, v) in prov.preamble() {
            writeln!(buf, "# {k}={v}")?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let fmt = |e: csv::Error| FavcError::Format(e.to_string());
            w.write_record(&self.header).map_err(fmt)?;
            for r in &self.rows {
                w.write_record(r).map_err(fmt)?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    pub fn write(&self, path: &Path, prov: &Provenance) -> Result<()> {
        std::fs::write(path, self.to_bytes(prov)?)?;
        Ok(())
    }
}

/// Float cell format used in every report table.
pub fn num(v: f64) -> String {
    format!("{v:.10e}")
}

/// Maps `f` over `items` on scoped worker threads; results keep input order and
/// the first error (by position) wins.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Vec<Result<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    parts.into_iter().flatten().collect()
}
