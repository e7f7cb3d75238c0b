//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines are always printed; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use backhaul_sim::apps::{Workload, WorkloadKind};
use backhaul_sim::metrics::SummaryRow;
use backhaul_sim::scenario::{builtin, run_campaign, CampaignOutput, ScenarioSpec};
use backhaul_sim::world::{expected_payload_digest, simulate};

const WALL_BUDGET: Duration = Duration::from_secs(60);

struct Campaign {
    out: CampaignOutput,
    elapsed: Duration,
}

impl Campaign {
    fn run(spec: &ScenarioSpec) -> Self {
        let t0 = Instant::now();
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        let out = run_campaign(spec, threads, None).expect("campaign runs");
        Self {
            out,
            elapsed: t0.elapsed(),
        }
    }

    fn row(&self, cra_kbps: u64, pep: bool, metric: &str) -> Option<&SummaryRow> {
        self.out
            .summary
            .iter()
            .find(|r| r.cra_bps == cra_kbps * 1000 && r.pep == pep && r.metric_name == metric)
    }

    fn mean(&self, cra_kbps: u64, pep: bool, metric: &str) -> f64 {
        self.row(cra_kbps, pep, metric).map_or(f64::NAN, |r| r.stats.mean)
    }

    fn count(&self, cra_kbps: u64, pep: bool, metric: &str) -> usize {
        self.row(cra_kbps, pep, metric).map_or(0, |r| r.stats.count)
    }
}

fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn timing(c: &Campaign) -> (bool, String) {
    (c.elapsed <= WALL_BUDGET, format!("{:.1} s wall", c.elapsed.as_secs_f64()))
}

fn table_i(r: &mut Report, a: &Campaign) {
    let m = "convergence_time_s";
    let t: Vec<f64> = [50, 100, 500, 1000].iter().map(|c| a.mean(*c, false, m)).collect();
    let all_converged = [50, 100, 500, 1000].iter().all(|c| a.count(*c, false, m) == 50);
    let slow = t[0] >= 1.3 * t[2];
    let plateau = rel_diff(t[2], t[3]) <= 0.25;
    let range = t.iter().all(|v| (2.0..=30.0).contains(v));
    let (fast, wall) = timing(a);
    r.line(
        "table-I direction",
        all_converged && slow && plateau && range && fast,
        format!(
            "means {:.2}/{:.2}/{:.2}/{:.2} s for CRA 50/100/500/1000; 50 vs 500 +{:.0}% (need >= 30%), 500 vs 1000 {:.0}% (need <= 25%), all converged {all_converged}; {wall}",
            t[0],
            t[1],
            t[2],
            t[3],
            (t[0] / t[2] - 1.0) * 100.0,
            rel_diff(t[2], t[3]) * 100.0
        ),
    );
}

fn table_ii(r: &mut Report, b: &Campaign) {
    let m = "convergence_time_s";
    let t: Vec<f64> = [100, 500, 1000].iter().map(|c| b.mean(*c, false, m)).collect();
    let all_converged = [100, 500, 1000].iter().all(|c| b.count(*c, false, m) == 5);
    let s = spread(&t);
    let (fast, wall) = timing(b);
    r.line(
        "table-II plateau",
        all_converged && s <= 0.20 && fast,
        format!(
            "means {:.2}/{:.2}/{:.2} s for CRA 100/500/1000, spread {:.1}% (need <= 20%); {wall}",
            t[0],
            t[1],
            t[2],
            s * 100.0
        ),
    );
}

fn table_iii(r: &mut Report, c: &Campaign) {
    let cras = [50, 100, 500, 1000];
    let down: Vec<f64> = cras.iter().map(|k| c.mean(*k, false, "download_time_s")).collect();
    let up: Vec<f64> = cras.iter().map(|k| c.mean(*k, false, "upload_time_s")).collect();
    let complete = cras
        .iter()
        .all(|k| c.count(*k, false, "download_time_s") == 5 && c.count(*k, false, "upload_time_s") == 5);
    let (sd, su) = (spread(&down), spread(&up));
    let (fast, wall) = timing(c);
    r.line(
        "table-III insensitivity",
        complete && sd <= 0.25 && su <= 0.25 && fast,
        format!(
            "1 MB download {:.2}-{:.2} s (spread {:.1}%), 300 kB upload {:.2}-{:.2} s (spread {:.1}%), need <= 25%; {wall}",
            down.iter().copied().fold(f64::INFINITY, f64::min),
            down.iter().copied().fold(0.0, f64::max),
            sd * 100.0,
            up.iter().copied().fold(f64::INFINITY, f64::min),
            up.iter().copied().fold(0.0, f64::max),
            su * 100.0
        ),
    );
}

fn table_iv(r: &mut Report, d: &Campaign) {
    let m = "page_time_s";
    let mut ok = true;
    let mut parts = vec![];
    for cra in [100, 500] {
        let (off, on) = (d.mean(cra, false, m), d.mean(cra, true, m));
        let diff = on / off - 1.0;
        ok &= diff.abs() <= 0.10 && d.count(cra, false, m) == 10 && d.count(cra, true, m) == 10;
        parts.push(format!("CRA {cra}: off {off:.2} s, on {on:.2} s ({:+.1}%)", diff * 100.0));
    }
    let min_page = d
        .out
        .summary
        .iter()
        .filter(|r| r.metric_name == m)
        .map(|r| r.stats.min)
        .fold(f64::INFINITY, f64::min);
    ok &= min_page >= 26.0;
    let (fast, wall) = timing(d);
    r.line(
        "table-IV null result",
        ok && fast,
        format!(
            "{}; need within 10%; fastest page {min_page:.2} s (need >= 26 s); {wall}",
            parts.join(", ")
        ),
    );
}

fn tables_v_vi(r: &mut Report, e: &Campaign) {
    let f1: Vec<f64> = [(100, false), (100, true), (500, false), (500, true)]
        .iter()
        .map(|(c, p)| e.mean(*c, *p, "fetch1_time_s"))
        .collect();
    let f2 = |cra, pep| e.mean(cra, pep, "fetch2_time_s");
    let complete = [100, 500]
        .iter()
        .all(|c| [false, true].iter().all(|p| e.count(*c, *p, "fetch2_time_s") == 5));
    let s1 = spread(&f1);
    let a = s1 <= 0.15;
    let b = f2(100, true) < f2(100, false) && f2(500, true) < f2(500, false);
    let gain = |cra| 1.0 - f2(cra, true) / f2(cra, false);
    let c = gain(500) > gain(100);
    let (fast, wall) = timing(e);
    r.line(
        "tables-V/VI pattern",
        complete && a && b && c && fast,
        format!(
            "(a) fetch-1 means {:.2}/{:.2}/{:.2}/{:.2} s (off/on at CRA 100, off/on at CRA 500), spread {:.1}% (need <= 15%): {}; \
             (b) fetch-2 off/on {:.2}/{:.2} s at CRA 100, {:.2}/{:.2} s at CRA 500: {}; \
             (c) fetch-2 gain {:.1}% at CRA 500 vs {:.1}% at CRA 100: {}; {wall}",
            f1[0],
            f1[1],
            f1[2],
            f1[3],
            s1 * 100.0,
            pass(a),
            f2(100, false),
            f2(100, true),
            f2(500, false),
            f2(500, true),
            pass(b),
            gain(500) * 100.0,
            gain(100) * 100.0,
            pass(c)
        ),
    );
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn voip(r: &mut Report, v: &Campaign) {
    let metrics = [
        "voip_down_delay_ms",
        "voip_down_jitter_ms",
        "voip_down_loss",
        "voip_up_delay_ms",
        "voip_up_jitter_ms",
        "voip_up_loss",
    ];
    let mut ok = true;
    let mut worst = vec![];
    for cra in [100, 500] {
        for m in metrics {
            let (off, on) = (v.mean(cra, false, m), v.mean(cra, true, m));
            let d = rel_diff(off, on);
            if !(d < 0.05) {
                ok = false;
                worst.push(format!("CRA {cra} {m} off {off:.3} on {on:.3} ({:.1}%)", d * 100.0));
            }
        }
    }
    let (fast, wall) = timing(v);
    let detail = if worst.is_empty() {
        "all VoIP delay/jitter/loss means within 5% between PEP on and off".to_string()
    } else {
        format!("outside 5%: {}", worst.join("; "))
    };
    r.line("voip null result", ok && fast, format!("{detail}; {wall}"));
}

/// Second-half goodput of one unshared bulk download over 60 s, from the
/// difference of in-order delivered bytes at 30 s and at 60 s.
fn fluid_oracle() -> (bool, String) {
    let mut s = ScenarioSpec::new("fluid", 1_000_000, 0, 60.0);
    s.n_ues = 1;
    s.return_rate_bps = 1_000_000;
    s.buffers.shaper_backlog_ms = 2000.0;
    s.workloads = vec![Workload::new(WorkloadKind::BulkDown, 0, 0.0)];
    let delivered_at = |secs: f64| {
        let mut t = s.clone();
        t.duration_s = secs;
        simulate(&t).flows[0].delivered
    };
    let half = delivered_at(30.0);
    let full = delivered_at(60.0);
    let goodput = (full - half) as f64 * 8.0 / 30.0;
    let target = s.sla_down_bps.min(s.forward_rate_bps) as f64;
    let err = (goodput - target).abs() / target;
    (
        err <= 0.05,
        format!("fluid oracle {:.0} kbps vs {:.0} kbps ({:.1}%)", goodput / 1e3, target / 1e3, err * 100.0),
    )
}

fn property_suite(r: &mut Report, campaigns: &[&Campaign]) {
    let mut runs = 0;
    let mut bad = vec![];
    let mut scpc_checked = 0;
    for c in campaigns {
        for run in &c.out.runs {
            runs += 1;
            if run.audit.scpc_constant.is_some() {
                scpc_checked += 1;
            }
            if !run.audit.all_ok() || run.audit.dama_epochs == 0 {
                bad.push(format!("{} {:?}", run.run_id, run.audit));
            }
        }
    }

    // Byte-stream equality: every sized transfer delivers the same payload with
    // and without the proxies, and both equal the digest of the source bytes.
    let mut streams = 0;
    let mut by_key: BTreeMap<(String, u64, u64, usize, u8), Vec<(bool, Option<String>)>> = BTreeMap::new();
    for c in campaigns {
        for run in &c.out.runs {
            for f in run.flows.iter().filter(|f| f.size.is_some() && f.completed_at.is_some()) {
                let size = f.size.expect("sized");
                let expected = expected_payload_digest(f.workload, f.round, size);
                if f.payload_digest.as_deref() != Some(expected.as_str()) {
                    bad.push(format!("{} workload {} round {}: payload digest mismatch", run.run_id, f.workload, f.round));
                }
                streams += 1;
                let key = (run.spec.scenario_id.clone(), run.spec.cra_bps, run.spec.seed, f.workload, f.round);
                by_key.entry(key).or_default().push((run.spec.pep, f.payload_digest.clone()));
            }
        }
    }
    let mut paired = 0;
    for (key, v) in &by_key {
        let off: Vec<_> = v.iter().filter(|(p, _)| !p).map(|(_, d)| d).collect();
        let on: Vec<_> = v.iter().filter(|(p, _)| *p).map(|(_, d)| d).collect();
        if let (Some(a), Some(b)) = (off.first(), on.first()) {
            paired += 1;
            if a != b {
                bad.push(format!("{key:?}: PEP on/off payload differs"));
            }
        }
    }

    let mut scpc = ScenarioSpec::new("scpc", 500_000, 0, 20.0);
    scpc.workloads = (0..10).map(|ue| Workload::new(WorkloadKind::BulkDown, ue, 0.0)).collect();
    scpc.workloads.push(Workload::new(WorkloadKind::BulkUp, 0, 1.0));
    let out = simulate(&scpc);
    if out.audit.scpc_constant != Some(true) || !out.audit.all_ok() {
        bad.push(format!("scpc run {:?}", out.audit));
    }

    let (fluid_ok, fluid) = fluid_oracle();
    let ok = bad.is_empty() && fluid_ok && paired > 0;
    let mut detail = format!(
        "{runs} runs audited (DAMA bounds, link conservation, throughput <= rate, lower bound, relay cap), \
         {} SCPC runs constant, {streams} payload digests checked, {paired} PEP on/off pairs equal; {fluid}",
        scpc_checked + 1
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; violations: {}", bad.join(" | ")));
    }
    r.line("property suite", ok, detail);
}

fn determinism(r: &mut Report) {
    let bin = env!("CARGO_BIN_EXE_backhaul-sim");
    let dir = tempfile::tempdir().expect("temp dir");
    let mut digests = vec![];
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(bin)
            .args(["run", "--scenario", "builtin:A", "--seed", "7", "--out"])
            .arg(&out)
            .output()
            .expect("binary runs");
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        digests.push(std::fs::read(out.join("records.csv")).expect("records written"));
    }
    let same = digests[0] == digests[1] && !digests[0].is_empty();
    r.line(
        "determinism",
        same,
        format!(
            "two `run --scenario builtin:A --seed 7` invocations wrote {} and {} byte records files, identical: {same}",
            digests[0].len(),
            digests[1].len()
        ),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failures: 0 };
    let spec = |name: &str| builtin(name).expect("builtin exists");

    let a = Campaign::run(&spec("A"));
    table_i(&mut r, &a);
    let b = Campaign::run(&spec("B"));
    table_ii(&mut r, &b);
    let c = Campaign::run(&spec("C"));
    table_iii(&mut r, &c);
    let d = Campaign::run(&spec("D"));
    table_iv(&mut r, &d);
    let e = Campaign::run(&spec("E"));
    tables_v_vi(&mut r, &e);
    let v = Campaign::run(&spec("D-voip"));
    voip(&mut r, &v);
    let val = Campaign::run(&spec("V"));
    property_suite(&mut r, &[&a, &b, &c, &d, &e, &v, &val]);
    determinism(&mut r);

    println!("{} criteria failed", r.failures);
    if r.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
