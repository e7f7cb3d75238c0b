//! Built-in campaigns.

use super::{Access, ProbeConfig, ScenarioSpec, Sweep};
use crate::apps::{Workload, WorkloadKind};

/// Name and one-line description of each builtin, in listing order.
pub const BUILTINS: &[(&str, &str)] = &[
    ("A", "Table I: rate convergence time when all 10 UEs start together"),
    ("B", "Table II: rate convergence time of a 10th UE joining 9 active ones"),
    ("C", "Table III: 1 MB download and 300 kB upload times under congestion"),
    ("D", "Table IV: 6.5 MB web page time, PEP off/on"),
    ("E", "Tables V/VI: two successive 1 MB fetches, PEP off/on"),
    ("V", "Validation: link throughput and network vs transport RTT, PEP off/on"),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

fn access(rows: &[(u64, u64)]) -> Vec<Access> {
    rows.iter()
        .map(|&(cra, rbdc)| Access {
            cra_bps: cra * 1000,
            rbdc_max_bps: rbdc * 1000,
        })
        .collect()
}

const ALL_ACCESS: &[(u64, u64)] = &[(50, 1000), (100, 900), (500, 500), (1000, 0)];
const PEP_ACCESS: &[(u64, u64)] = &[(100, 900), (500, 500)];

fn base(id: &str, description: &str, duration_s: f64, reps: u32) -> ScenarioSpec {
    let mut s = ScenarioSpec::new(id, 100_000, 900_000, duration_s);
    s.description = description.to_string();
    s.repetitions = reps;
    s.start_jitter_ms = 100.0;
    s
}

fn a() -> ScenarioSpec {
    let mut s = base("A", BUILTINS[0].1, 30.0, 5);
    s.workloads = (0..10).map(|ue| Workload::new(WorkloadKind::BulkDown, ue, 0.0)).collect();
    s.sweep = Some(Sweep {
        access: access(ALL_ACCESS),
        pep: vec![],
    });
    s
}

fn b() -> ScenarioSpec {
    let mut s = base("B", BUILTINS[1].1, 30.0, 5);
    s.workloads = (0..9)
        .map(|ue| Workload::new(WorkloadKind::BulkDown, ue, 0.0).background())
        .collect();
    s.workloads.push(Workload::new(WorkloadKind::BulkDown, 9, 10.0).lasting(20.0));
    s.sweep = Some(Sweep {
        access: access(ALL_ACCESS),
        pep: vec![],
    });
    s
}

fn c() -> ScenarioSpec {
    let mut s = base("C", BUILTINS[2].1, 30.0, 5);
    s.sla_up_bps = 300_000;
    s.workloads = (0..7)
        .map(|ue| Workload::new(WorkloadKind::BulkDown, ue, 0.0).background())
        .collect();
    s.workloads.push(Workload::new(WorkloadKind::BulkUp, 7, 0.0).background());
    s.workloads.push(Workload::new(WorkloadKind::FetchDown, 8, 10.0).sized(1_000_000));
    s.workloads.push(Workload::new(WorkloadKind::FetchUp, 9, 10.0).sized(300_000));
    s.sweep = Some(Sweep {
        access: access(ALL_ACCESS),
        pep: vec![],
    });
    s
}

/// Seven downloading and two uploading background UEs for the first 30 s.
fn loaded(id: &str, description: &str, duration_s: f64, reps: u32) -> ScenarioSpec {
    let mut s = base(id, description, duration_s, reps);
    s.sla_up_bps = 100_000;
    for ue in 0..7 {
        s.workloads
            .push(Workload::new(WorkloadKind::BulkDown, ue, 0.0).lasting(30.0).background());
    }
    for ue in 7..9 {
        s.workloads
            .push(Workload::new(WorkloadKind::BulkUp, ue, 0.0).lasting(30.0).background());
    }
    s.sweep = Some(Sweep {
        access: access(PEP_ACCESS),
        pep: vec![false, true],
    });
    s
}

fn d() -> ScenarioSpec {
    let mut s = loaded("D", BUILTINS[3].1, 60.0, 10);
    s.workloads.push(Workload::new(WorkloadKind::WebPage, 9, 10.0).sized(6_500_000));
    s
}

fn e() -> ScenarioSpec {
    let mut s = loaded("E", BUILTINS[4].1, 60.0, 5);
    s.workloads.push(Workload::new(WorkloadKind::FetchTwice, 9, 10.0).sized(1_000_000));
    s
}

fn v() -> ScenarioSpec {
    let mut s = base("V", BUILTINS[5].1, 30.0, 1);
    s.n_ues = 2;
    s.return_rate_bps = 10_000_000;
    s.cra_bps = 10_000_000;
    s.rbdc_max_bps = 0;
    s.workloads = vec![
        Workload::new(WorkloadKind::BulkDown, 0, 2.0).lasting(20.0),
        Workload::new(WorkloadKind::BulkUp, 1, 2.0).lasting(20.0),
    ];
    s.probes = Some(ProbeConfig {
        ue: 0,
        period_ms: 1000.0,
        start_s: 0.5,
        network: true,
        transport: true,
    });
    s.sweep = Some(Sweep {
        access: vec![],
        pep: vec![false, true],
    });
    s
}

/// Scenario D with the web page replaced by a voice call on the measured UE.
pub fn d_voip() -> ScenarioSpec {
    let mut s = loaded("D-voip", "Scenario D load with a 64 kbps voice call", 40.0, 10);
    s.workloads
        .push(Workload::new(WorkloadKind::Voip, 9, 10.0).lasting(20.0));
    s
}

pub fn builtin(name: &str) -> Option<ScenarioSpec> {
    Some(match name {
        "A" => a(),
        "B" => b(),
        "C" => c(),
        "D" => d(),
        "E" => e(),
        "V" => v(),
        "D-voip" => d_voip(),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_validates() {
        for name in builtin_names().into_iter().chain(["D-voip"]) {
            let s = builtin(name).unwrap();
            s.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.scenario_id, name);
        }
    }

    #[test]
    fn sweep_sizes() {
        assert_eq!(builtin("A").unwrap().cells().len(), 4);
        assert_eq!(builtin("D").unwrap().cells().len(), 4);
        assert_eq!(builtin("E").unwrap().cells().len(), 4);
        assert_eq!(builtin("V").unwrap().cells().len(), 2);
    }

    #[test]
    fn per_scenario_upload_sla() {
        assert_eq!(builtin("C").unwrap().sla_up_bps, 300_000);
        assert_eq!(builtin("D").unwrap().sla_up_bps, 100_000);
        assert_eq!(builtin("E").unwrap().sla_up_bps, 100_000);
    }
}
