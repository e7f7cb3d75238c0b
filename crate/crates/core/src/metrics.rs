//! Measurement rows, throughput time series, rate convergence time and
//! per-group summary statistics, plus the CSV schemas they are written in.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::sim::SimTime;

/// Throughput bin width.
pub const THROUGHPUT_BIN: SimTime = SimTime::from_millis(500);
/// Fraction of the SLA rate the smoothed throughput must reach.
pub const CONVERGENCE_THRESHOLD: f64 = 0.95;
pub const CONVERGENCE_SMOOTHING: SimTime = SimTime::from_secs(1);
pub const CONVERGENCE_PERSISTENCE: SimTime = SimTime::from_secs(3);

pub const RECORDS_HEADER: [&str; 10] = [
    "run_id",
    "scenario_id",
    "cra_kbps",
    "rbdc_kbps",
    "pep",
    "seed",
    "ue_id",
    "metric_name",
    "t_s",
    "value",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "scenario_id",
    "cra_kbps",
    "rbdc_kbps",
    "pep",
    "metric_name",
    "mean",
    "min",
    "max",
    "count",
];

/// UE id used for rows that belong to a link or terminal rather than a UE.
pub const NO_UE: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub run_id: String,
    pub scenario_id: String,
    pub cra_bps: u64,
    pub rbdc_bps: u64,
    pub pep: bool,
    pub seed: u64,
    pub ue_id: i32,
    pub metric_name: String,
    pub t: SimTime,
    pub value: f64,
}

fn kbps(bps: u64) -> String {
    if bps % 1000 == 0 {
        (bps / 1000).to_string()
    } else {
        format!("{}", bps as f64 / 1000.0)
    }
}

fn pep_flag(on: bool) -> &'static str {
    if on {
        "on"
    } else {
        "off"
    }
}

fn parse_kbps(s: &str) -> Result<u64, CsvError> {
    let v: f64 = s.parse().map_err(|_| CsvError::Field(format!("bad kbps value `{s}`")))?;
    Ok((v * 1000.0).round() as u64)
}

fn parse_pep(s: &str) -> Result<bool, CsvError> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(CsvError::Field(format!("bad pep flag `{other}`"))),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Field(String),
}

pub fn write_records<W: Write>(out: W, records: &[MetricRecord]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record([
            r.run_id.as_str(),
            r.scenario_id.as_str(),
            &kbps(r.cra_bps),
            &kbps(r.rbdc_bps),
            pep_flag(r.pep),
            &r.seed.to_string(),
            &r.ue_id.to_string(),
            r.metric_name.as_str(),
            &r.t.to_string(),
            &r.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<MetricRecord>, CsvError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = vec![];
    for row in rd.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64, CsvError> {
            field(i)
                .parse()
                .map_err(|_| CsvError::Field(format!("bad number `{}`", field(i))))
        };
        out.push(MetricRecord {
            run_id: field(0).to_string(),
            scenario_id: field(1).to_string(),
            cra_bps: parse_kbps(field(2))?,
            rbdc_bps: parse_kbps(field(3))?,
            pep: parse_pep(field(4))?,
            seed: num(5)? as u64,
            ue_id: num(6)? as i32,
            metric_name: field(7).to_string(),
            t: SimTime::from_secs_f64(num(8)?),
            value: num(9)?,
        });
    }
    Ok(out)
}

/// Descriptive statistics of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// `None` for an empty input. NaN values are skipped.
pub fn stats<I: IntoIterator<Item = f64>>(values: I) -> Option<Stats> {
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut count = 0;
    for v in values.into_iter().filter(|v| !v.is_nan()) {
        sum += v;
        min = min.min(v);
        max = max.max(v);
        count += 1;
    }
    (count > 0).then(|| Stats {
        mean: (sum / count as f64).clamp(min, max),
        min,
        max,
        count,
    })
}

/// Groups records by an arbitrary key and summarizes each group's values.
/// Empty groups (all values NaN) are omitted.
pub fn aggregate_by<K, F>(records: &[MetricRecord], key: F) -> BTreeMap<K, Stats>
where
    K: Ord,
    F: Fn(&MetricRecord) -> K,
{
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push(r.value);
    }
    groups
        .into_iter()
        .filter_map(|(k, v)| stats(v).map(|s| (k, s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub cra_bps: u64,
    pub rbdc_bps: u64,
    pub pep: bool,
    pub metric_name: String,
    pub stats: Stats,
}

/// Summary over the standard grouping `(scenario, cra, rbdc, pep, metric)`.
pub fn aggregate(records: &[MetricRecord]) -> Vec<SummaryRow> {
    aggregate_by(records, |r| {
        (
            r.scenario_id.clone(),
            r.cra_bps,
            r.rbdc_bps,
            r.pep,
            r.metric_name.clone(),
        )
    })
    .into_iter()
    .map(|((scenario_id, cra_bps, rbdc_bps, pep, metric_name), stats)| SummaryRow {
        scenario_id,
        cra_bps,
        rbdc_bps,
        pep,
        metric_name,
        stats,
    })
    .collect()
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario_id.as_str(),
            &kbps(r.cra_bps),
            &kbps(r.rbdc_bps),
            pep_flag(r.pep),
            r.metric_name.as_str(),
            &r.stats.mean.to_string(),
            &r.stats.min.to_string(),
            &r.stats.max.to_string(),
            &r.stats.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>, CsvError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = vec![];
    for row in rd.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64, CsvError> {
            field(i)
                .parse()
                .map_err(|_| CsvError::Field(format!("bad number `{}`", field(i))))
        };
        out.push(SummaryRow {
            scenario_id: field(0).to_string(),
            cra_bps: parse_kbps(field(1))?,
            rbdc_bps: parse_kbps(field(2))?,
            pep: parse_pep(field(3))?,
            metric_name: field(4).to_string(),
            stats: Stats {
                mean: num(5)?,
                min: num(6)?,
                max: num(7)?,
                count: num(8)? as usize,
            },
        });
    }
    Ok(out)
}

/// Bits delivered per fixed-width bin, starting at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputSeries {
    pub ue_id: i32,
    pub origin: SimTime,
    pub bin: SimTime,
    bits: Vec<f64>,
}

impl ThroughputSeries {
    pub fn new(ue_id: i32, origin: SimTime, bin: SimTime) -> Self {
        assert!(bin > SimTime::ZERO);
        Self {
            ue_id,
            origin,
            bin,
            bits: Vec::new(),
        }
    }

    /// Builds a series directly from per-bin rates (bps).
    pub fn from_rates(ue_id: i32, bin: SimTime, rates_bps: &[f64]) -> Self {
        let secs = bin.as_secs_f64();
        Self {
            ue_id,
            origin: SimTime::ZERO,
            bin,
            bits: rates_bps.iter().map(|r| r * secs).collect(),
        }
    }

    fn ensure(&mut self, idx: usize) {
        if self.bits.len() <= idx {
            self.bits.resize(idx + 1, 0.0);
        }
    }

    /// Extends the series with empty bins up to `t`.
    pub fn extend_to(&mut self, t: SimTime) {
        if t > self.origin {
            let idx = ((t - self.origin).as_micros() - 1) / self.bin.as_micros();
            self.ensure(idx as usize);
        }
    }

    /// Spreads `bits` uniformly over `[start, end)`.
    pub fn add_interval(&mut self, start: SimTime, end: SimTime, bits: f64) {
        let start = start.max(self.origin);
        if end <= start {
            return;
        }
        let total = (end - start).as_micros() as f64;
        let b = self.bin.as_micros();
        let mut s = (start - self.origin).as_micros();
        let e = (end - self.origin).as_micros();
        while s < e {
            let idx = s / b;
            let bin_end = ((idx + 1) * b).min(e);
            self.ensure(idx as usize);
            self.bits[idx as usize] += bits * (bin_end - s) as f64 / total;
            s = bin_end;
        }
    }

    /// Per-bin rate in bits per second.
    pub fn rates_bps(&self) -> Vec<f64> {
        let secs = self.bin.as_secs_f64();
        self.bits.iter().map(|b| b / secs).collect()
    }

    /// Bin start times.
    pub fn times(&self) -> impl Iterator<Item = SimTime> + '_ {
        (0..self.bits.len() as u64).map(|i| self.origin + SimTime::from_micros(i * self.bin.as_micros()))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Rate convergence time in seconds from the first bin: the earliest bin
/// start `t` such that every 1 s moving average starting in `[t, t + 3 s)`
/// is at least 95 % of `sla_bps`. `None` if the series never qualifies.
pub fn convergence_time(rates_bps: &[f64], bin: SimTime, sla_bps: f64) -> Option<f64> {
    assert!(sla_bps > 0.0, "SLA rate must be positive");
    let b = bin.as_micros();
    let w = (CONVERGENCE_SMOOTHING.as_micros() / b).max(1) as usize;
    let p = (CONVERGENCE_PERSISTENCE.as_micros() / b).max(1) as usize;
    if rates_bps.len() < w + p - 1 {
        return None;
    }
    let threshold = CONVERGENCE_THRESHOLD * sla_bps;
    let ok: Vec<bool> = rates_bps
        .windows(w)
        .map(|win| win.iter().sum::<f64>() / w as f64 >= threshold)
        .collect();
    let mut run = 0;
    for (k, good) in ok.iter().enumerate() {
        if *good {
            run += 1;
            if run == p {
                let start = k + 1 - p;
                return Some((start as u64 * b) as f64 / 1e6);
            }
        } else {
            run = 0;
        }
    }
    None
}
