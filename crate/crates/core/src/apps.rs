//! Traffic generators: bulk transfers, sized fetches, a single-object web
//! page, repeated fetches and constant-bitrate voice.

use serde::{Deserialize, Serialize};

use crate::net::Direction;
use crate::sim::SimTime;
use crate::transport::DatagramFlow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    BulkDown,
    BulkUp,
    FetchDown,
    FetchUp,
    WebPage,
    Voip,
    FetchTwice,
}

impl WorkloadKind {
    pub fn is_sized(self) -> bool {
        matches!(
            self,
            WorkloadKind::FetchDown | WorkloadKind::FetchUp | WorkloadKind::WebPage | WorkloadKind::FetchTwice
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub kind: WorkloadKind,
    pub ue: u16,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_bytes: Option<u64>,
    /// Active period for bulk and voice kinds; bulk defaults to the run end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    /// Load-generating traffic whose metrics are reported with a `bg_` prefix.
    #[serde(default)]
    pub background: bool,
    /// Voice bit rate; 64 kbps when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_bps: Option<u64>,
    /// Idle time between the end of background traffic and the second fetch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("workload {index}: ue {ue} does not exist (n_ues = {n_ues})")]
    UnknownUe { index: usize, ue: u16, n_ues: u16 },
    #[error("workload {index}: `{field}` {reason}")]
    BadField {
        index: usize,
        field: &'static str,
        reason: &'static str,
    },
    #[error("workloads {first} and {second} are identical and overlap on ue {ue}")]
    Overlap { first: usize, second: usize, ue: u16 },
}

/// Default idle gap before the second fetch of a `fetch_twice` workload.
pub const FETCH_TWICE_GAP: SimTime = SimTime::from_secs(2);

impl Workload {
    pub fn new(kind: WorkloadKind, ue: u16, start_s: f64) -> Self {
        Self {
            kind,
            ue,
            start_s,
            size_bytes: None,
            duration_s: None,
            background: false,
            rate_bps: None,
            gap_s: None,
        }
    }

    pub fn sized(mut self, bytes: u64) -> Self {
        self.size_bytes = Some(bytes);
        self
    }

    pub fn lasting(mut self, secs: f64) -> Self {
        self.duration_s = Some(secs);
        self
    }

    pub fn background(mut self) -> Self {
        self.background = true;
        self
    }

    pub fn start(&self) -> SimTime {
        SimTime::from_secs_f64(self.start_s)
    }

    /// End of the active period for bulk and voice kinds.
    pub fn stop(&self, run_end: SimTime) -> SimTime {
        match self.duration_s {
            Some(d) => (self.start() + SimTime::from_secs_f64(d)).min(run_end),
            None => run_end,
        }
    }

    pub fn direction(&self) -> Direction {
        match self.kind {
            WorkloadKind::BulkUp | WorkloadKind::FetchUp => Direction::Up,
            _ => Direction::Down,
        }
    }

    pub fn voip_flow(&self) -> DatagramFlow {
        DatagramFlow {
            rate_bps: self.rate_bps.unwrap_or(DatagramFlow::voip().rate_bps),
            ..DatagramFlow::voip()
        }
    }

    pub fn gap(&self) -> SimTime {
        self.gap_s.map_or(FETCH_TWICE_GAP, SimTime::from_secs_f64)
    }

    fn check(&self, index: usize, n_ues: u16) -> Result<(), WorkloadError> {
        let bad = |field, reason| WorkloadError::BadField { index, field, reason };
        if self.ue >= n_ues {
            return Err(WorkloadError::UnknownUe {
                index,
                ue: self.ue,
                n_ues,
            });
        }
        if !(self.start_s >= 0.0 && self.start_s.is_finite()) {
            return Err(bad("start_s", "must be a finite non-negative number"));
        }
        match (self.kind.is_sized(), self.size_bytes) {
            (true, None) => return Err(bad("size_bytes", "is required for this kind")),
            (false, Some(_)) => return Err(bad("size_bytes", "is not valid for this kind")),
            _ => {}
        }
        if self.kind == WorkloadKind::WebPage && self.size_bytes == Some(0) {
            return Err(bad("size_bytes", "must be positive for a web page"));
        }
        if let Some(d) = self.duration_s {
            if self.kind.is_sized() {
                return Err(bad("duration_s", "is not valid for sized kinds"));
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(bad("duration_s", "must be positive"));
            }
        }
        if self.rate_bps.is_some() && self.kind != WorkloadKind::Voip {
            return Err(bad("rate_bps", "is only valid for voip"));
        }
        if self.rate_bps == Some(0) {
            return Err(bad("rate_bps", "must be positive"));
        }
        if let Some(g) = self.gap_s {
            if self.kind != WorkloadKind::FetchTwice {
                return Err(bad("gap_s", "is only valid for fetch_twice"));
            }
            if !(g >= 0.0 && g.is_finite()) {
                return Err(bad("gap_s", "must be non-negative"));
            }
        }
        if self.background && self.kind == WorkloadKind::FetchTwice {
            return Err(bad("background", "cannot be set on fetch_twice"));
        }
        Ok(())
    }

    /// Active interval used for overlap detection; sized transfers are
    /// treated as open-ended.
    fn span(&self, run_end: SimTime) -> (SimTime, SimTime) {
        let end = if self.kind.is_sized() {
            SimTime::MAX
        } else {
            self.stop(run_end)
        };
        (self.start(), end)
    }
}

/// Validates a workload list against the UE count. Two workloads of the same
/// kind, size and background flag on the same UE with overlapping activity
/// are rejected.
pub fn validate(workloads: &[Workload], n_ues: u16, run_end: SimTime) -> Result<(), WorkloadError> {
    for (i, w) in workloads.iter().enumerate() {
        w.check(i, n_ues)?;
    }
    for (i, a) in workloads.iter().enumerate() {
        for (j, b) in workloads.iter().enumerate().skip(i + 1) {
            let same = a.ue == b.ue && a.kind == b.kind && a.size_bytes == b.size_bytes && a.background == b.background;
            if !same {
                continue;
            }
            let (s1, e1) = a.span(run_end);
            let (s2, e2) = b.span(run_end);
            if s1 < e2 && s2 < e1 {
                return Err(WorkloadError::Overlap {
                    first: i,
                    second: j,
                    ue: a.ue,
                });
            }
        }
    }
    Ok(())
}

/// Metric reported for the completion of a sized transfer.
pub fn completion_metric(kind: WorkloadKind, round: u8) -> &'static str {
    match (kind, round) {
        (WorkloadKind::FetchDown, _) => "download_time_s",
        (WorkloadKind::FetchUp, _) => "upload_time_s",
        (WorkloadKind::WebPage, _) => "page_time_s",
        (WorkloadKind::FetchTwice, 0) => "fetch1_time_s",
        (WorkloadKind::FetchTwice, _) => "fetch2_time_s",
        (WorkloadKind::BulkDown, _) => "bulk_down_time_s",
        (WorkloadKind::BulkUp, _) => "bulk_up_time_s",
        (WorkloadKind::Voip, _) => unreachable!("voice has no completion"),
    }
}

/// Prefixes metric names of background traffic.
pub fn metric_name(base: &str, background: bool) -> String {
    if background {
        format!("bg_{base}")
    } else {
        base.to_string()
    }
}
