//! Repetition and sweep runner.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::ScenarioSpec;
use crate::error::Error;
use crate::metrics::{aggregate, write_records, write_summary, MetricRecord, SummaryRow};
use crate::world::{simulate, Audit, FlowReport};

#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: ScenarioSpec,
    pub run_id: String,
    pub audit: Audit,
    pub flows: Vec<FlowReport>,
    pub trace_digest: String,
}

#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub runs: Vec<RunResult>,
    pub records: Vec<MetricRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every sweep cell `spec.repetitions` times, repetition `k` using seed
/// `spec.seed + k`. Runs are independent and may execute on `parallel`
/// threads; results are ordered by cell then repetition regardless.
/// When `out_dir` is given, `records.csv`, `summary.csv` and `scenario.json`
/// are written there.
pub fn run_campaign(spec: &ScenarioSpec, parallel: usize, out_dir: Option<&Path>) -> Result<CampaignOutput, Error> {
    spec.validate()?;
    let mut jobs = vec![];
    for cell in spec.cells() {
        for k in 0..spec.repetitions as u64 {
            let mut s = cell.clone();
            s.seed = spec.seed + k;
            s.repetitions = 1;
            jobs.push(s);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .expect("thread pool");
    let outputs: Vec<_> = pool.install(|| jobs.par_iter().map(|s| (s.clone(), simulate(s))).collect());

    let mut runs = vec![];
    let mut records = vec![];
    for (s, out) in outputs {
        records.extend(out.records);
        runs.push(RunResult {
            spec: s,
            run_id: out.run_id,
            audit: out.audit,
            flows: out.flows,
            trace_digest: out.trace_digest,
        });
    }
    let summary = aggregate(&records);
    if let Some(dir) = out_dir {
        write_outputs(dir, spec, &records, &summary)?;
    }
    Ok(CampaignOutput { runs, records, summary })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic<F>(dir: &Path, name: &str, fill: F) -> Result<(), Error>
where
    F: FnOnce(&mut tempfile::NamedTempFile) -> Result<(), Error>,
{
    let path: PathBuf = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    fill(&mut tmp)?;
    tmp.flush().map_err(io_err(&path))?;
    tmp.persist(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e.error,
    })?;
    Ok(())
}

fn write_outputs(dir: &Path, spec: &ScenarioSpec, records: &[MetricRecord], summary: &[SummaryRow]) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_err = |path: PathBuf| move |source| Error::Csv { path, source };
    write_atomic(dir, "records.csv", |f| {
        write_records(f.as_file_mut(), records).map_err(csv_err(dir.join("records.csv")))
    })?;
    write_atomic(dir, "summary.csv", |f| {
        write_summary(f.as_file_mut(), summary).map_err(csv_err(dir.join("summary.csv")))
    })?;
    write_atomic(dir, "scenario.json", |f| {
        f.write_all(spec.to_json().as_bytes()).map_err(io_err(&dir.join("scenario.json")))
    })
}
