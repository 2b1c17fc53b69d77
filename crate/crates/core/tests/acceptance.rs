//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Cursor;
use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};

use flowlab_core::dataset::{Column, ColumnKind, Dataset, LABEL};
use flowlab_core::eval::{aggregate, confusion, f_beta, roc_auc, Averaging, BaseMetric};
use flowlab_core::explain::{partial_dependence, permutation_importance, Grouping, PdpGrid, PermutationConfig};
use flowlab_core::ingest::{parse_capture_from, CaptureWriter, IngestConfig, LinkType, Packet, TcpFlags, Timestamp, PROTO_TCP, PROTO_UDP};
use flowlab_core::meter::{meter_packets, ExportReason, FlowRecord, MeterConfig, StreamingMoments};
use flowlab_core::models::{grid_search, ForestParams, HyperGrid, ModelSpec, TrainingPlan, TreeParams};
use flowlab_core::pipeline::{files, Run, RunConfig};
use flowlab_core::split::{kfold, split, Partition, SplitAssignment, SplitSpec, Strategy};
use flowlab_core::transforms::{
    fit_minmax, fit_onehot, fit_pca, fit_portbin, fit_robust, fit_standard, outlier_bounds_iqr, quantile_sorted, smote,
    undersample, FitScope, LabeledRows, PcaModel,
};
use flowlab_core::Error;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T>(r: flowlab_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(elapsed: Duration, limit: u64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit as f64 {
        Ok(())
    } else {
        Err(format!("took {:.1}s, limit {limit}s", elapsed.as_secs_f64()))
    }
}

// ---------- metering ----------

fn host(i: u32) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, (i >> 8) as u8, i as u8)
}

/// Random capture: short bursts, flows broken by idle gaps, long-lived
/// streams crossing the active timeout, some ICMP, some FIN/RST closes.
fn random_packets(rng: &mut ChaCha8Rng, budget: usize) -> Vec<Packet> {
    let mut out = Vec::with_capacity(budget);
    let hosts = rng.gen_range(4..40);
    while out.len() < budget {
        let a = host(rng.gen_range(0..hosts));
        let b = host(rng.gen_range(0..hosts));
        let proto = match rng.gen_range(0..10) {
            0 => 1,
            1..=5 => PROTO_TCP,
            _ => PROTO_UDP,
        };
        // small port pools so keys get reused across conversations
        let sport = rng.gen_range(40000..40008);
        let dport = [22, 53, 443, 8080][rng.gen_range(0..4)];
        let long = rng.gen_bool(0.1);
        let n = if long { rng.gen_range(50..300) } else { rng.gen_range(1..40) };
        let mut t: f64 = rng.gen_range(0.0..900.0);
        for i in 0..n.min(budget - out.len()) {
            t += if long {
                rng.gen_range(0.5..4.0)
            } else if rng.gen_bool(0.05) {
                rng.gen_range(8.0..40.0)
            } else {
                rng.gen_range(0.0..0.5)
            };
            let fwd = rng.gen_bool(0.6);
            let (s, d) = if fwd { ((a, sport), (b, dport)) } else { ((b, dport), (a, sport)) };
            let mut flags = TcpFlags::empty();
            if proto == PROTO_TCP {
                flags = TcpFlags::ACK;
                if i == 0 {
                    flags = TcpFlags::SYN;
                }
                if rng.gen_bool(0.02) {
                    flags = flags | if rng.gen_bool(0.5) { TcpFlags::FIN } else { TcpFlags::RST };
                }
            }
            let ts = Timestamp::from_parts(1_600_000_000 + t as u64, ((t.fract() * 1e6) as u32) * 1000);
            out.push(Packet::v4(ts, s, d, proto, rng.gen_range(0..1200), flags));
        }
    }
    out.sort_by_key(|p| p.ts);
    out
}

fn through_pcap(packets: &[Packet], rng: &mut ChaCha8Rng) -> Result<(Vec<Packet>, u64), String> {
    let mut w = ok(CaptureWriter::new(Vec::new(), LinkType::Ethernet, false, false))?;
    let mut arp = 0;
    for p in packets {
        ok(w.write_packet(p))?;
        if rng.gen_bool(0.01) {
            // ethertype 0x0806, never an IP packet
            let mut frame = vec![0u8; 42];
            frame[12] = 0x08;
            frame[13] = 0x06;
            ok(w.write_raw(p.ts, &frame))?;
            arp += 1;
        }
    }
    let bytes = ok(w.finish())?;
    let cap = ok(parse_capture_from(Cursor::new(bytes), &IngestConfig::default()))?;
    if cap.summary.non_ip != arp {
        return Err(format!("non-ip frames {} != {arp}", cap.summary.non_ip));
    }
    Ok((cap.packets, cap.summary.decoded))
}

type Endpoint = (IpAddr, u16);

/// What both the meter and the oracle must agree on for one exported record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Seg {
    key: (Endpoint, Endpoint, u8),
    segment: u32,
    initiator: (Endpoint, Endpoint),
    fwd: (u64, u64),
    bwd: (u64, u64),
    first: u64,
    last: u64,
    reason: &'static str,
}

fn from_record(r: &FlowRecord) -> Seg {
    let i = &r.initiator;
    let (s, d) = ((i.src_ip, i.src_port), (i.dst_ip, i.dst_port));
    Seg {
        key: (s.min(d), s.max(d), i.proto),
        segment: r.segment_index,
        initiator: (s, d),
        fwd: (r.fwd.pkt_count, r.fwd.byte_count),
        bwd: (r.bwd.pkt_count, r.bwd.byte_count),
        first: r.flow_start().nanos(),
        last: r.flow_end().nanos(),
        reason: r.export_reason.as_str(),
    }
}

/// Group by undirected 5-tuple, then cut each group's packet list at idle
/// gaps, active-timeout overruns and TCP FIN/RST.
fn oracle(packets: &[Packet], idle_ns: u64, active_ns: u64) -> Vec<Seg> {
    let mut groups: BTreeMap<(Endpoint, Endpoint, u8), Vec<&Packet>> = BTreeMap::new();
    for p in packets {
        let (s, d) = ((p.src_ip, p.src_port), (p.dst_ip, p.dst_port));
        groups.entry((s.min(d), s.max(d), p.proto)).or_default().push(p);
    }
    let mut out = Vec::new();
    for (key, pkts) in groups {
        let mut cur: Option<Seg> = None;
        let mut next_segment = 0;
        let close = |seg: Seg, reason: &'static str, out: &mut Vec<Seg>| out.push(Seg { reason, ..seg });
        for p in pkts {
            let t = p.ts.nanos();
            if let Some(seg) = cur.take() {
                if t - seg.last > idle_ns {
                    close(seg, "idle", &mut out);
                } else if t - seg.first >= active_ns {
                    close(seg, "active", &mut out);
                } else {
                    cur = Some(seg);
                }
            }
            let me = ((p.src_ip, p.src_port), (p.dst_ip, p.dst_port));
            let seg = cur.get_or_insert_with(|| {
                next_segment += 1;
                Seg {
                    key,
                    segment: next_segment - 1,
                    initiator: me,
                    fwd: (0, 0),
                    bwd: (0, 0),
                    first: t,
                    last: t,
                    reason: "end_of_input",
                }
            });
            let side = if me == seg.initiator { &mut seg.fwd } else { &mut seg.bwd };
            side.0 += 1;
            side.1 += p.ip_len as u64;
            seg.last = seg.last.max(t);
            if p.proto == PROTO_TCP && p.tcp_flags.intersects(TcpFlags::FIN | TcpFlags::RST) {
                close(cur.take().unwrap(), "fin_rst", &mut out);
            }
        }
        if let Some(seg) = cur {
            out.push(seg);
        }
    }
    out.sort();
    out
}

fn oracle_cfg() -> MeterConfig {
    // no periodic scan, so export reasons are decided by packets alone
    MeterConfig { idle_timeout: 5.0, active_timeout: 60.0, scan_interval: 0, ..Default::default() }
}

fn c1_meter_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = oracle_cfg();
    let mut records = 0;
    let mut reasons = HashSet::new();
    for c in 0..50 {
        let budget = rng.gen_range(500..=10_000);
        let (packets, _) = through_pcap(&random_packets(&mut rng, budget), &mut rng)?;
        let (recs, _) = ok(meter_packets(&packets, &cfg))?;
        let mut got: Vec<Seg> = recs.iter().map(from_record).collect();
        got.sort();
        let want = oracle(&packets, 5_000_000_000, 60_000_000_000);
        if got != want {
            let diff = got.iter().zip(&want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
            return Err(format!(
                "capture {c}: {} records vs {} expected, first difference at {diff}: {:?} vs {:?}",
                got.len(),
                want.len(),
                got.get(diff),
                want.get(diff)
            ));
        }
        records += got.len();
        reasons.extend(got.iter().map(|s| s.reason));
    }
    ensure!(reasons.len() == 4, "only saw reasons {reasons:?}");
    within(start.elapsed(), 30)?;
    Ok(format!("50 captures, {records} records, {:.1}s", start.elapsed().as_secs_f64()))
}

fn c2_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut total = 0;
    for c in 0..50 {
        let budget = rng.gen_range(100..=10_000);
        let (packets, decoded) = through_pcap(&random_packets(&mut rng, budget), &mut rng)?;
        for cfg in [MeterConfig::default(), oracle_cfg()] {
            let (recs, _) = ok(meter_packets(&packets, &cfg))?;
            let sum: u64 = recs.iter().map(|r| r.total_packets()).sum();
            ensure!(sum == decoded, "capture {c}: {sum} metered vs {decoded} decoded");
        }
        total += decoded;
    }
    Ok(format!("{total} packets over 50 captures"))
}

fn c3_idle_split() -> Outcome {
    let a = (Ipv4Addr::new(1, 1, 1, 1), 5000);
    let b = (Ipv4Addr::new(2, 2, 2, 2), 53);
    let pkts: Vec<Packet> = [0.0, 1.0, 2.0, 42.0]
        .iter()
        .map(|&t| Packet::v4(Timestamp::from_secs_f64(t), a, b, PROTO_UDP, 20, TcpFlags::empty()))
        .collect();
    let (recs, _) = ok(meter_packets(&pkts, &MeterConfig { idle_timeout: 30.0, ..Default::default() }))?;
    let got: Vec<(u32, ExportReason)> = recs.iter().map(|r| (r.segment_index, r.export_reason)).collect();
    ensure!(
        got == vec![(0, ExportReason::Idle), (1, ExportReason::EndOfInput)],
        "records {got:?}"
    );
    Ok("2 records: idle, end_of_input".into())
}

fn two_pass(x: &[f64]) -> [f64; 4] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    [mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0]
}

fn c4_moments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let exp = Exp::new(20.0).unwrap();
    let logn = LogNormal::new(6.0, 0.8).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..1000 {
        let n = rng.gen_range(2..=1000);
        let x: Vec<f64> = (0..n)
            .map(|_| match s % 3 {
                0 => rng.gen_range(40..1500) as f64,
                1 => exp.sample(&mut rng),
                _ => logn.sample(&mut rng),
            })
            .collect();
        if x.iter().all(|&v| v == x[0]) {
            continue;
        }
        let mut m = StreamingMoments::new();
        x.iter().for_each(|&v| m.push(v));
        let got = [m.mean().unwrap(), m.variance().unwrap(), m.skewness().unwrap(), m.kurtosis().unwrap()];
        for (g, w) in got.iter().zip(two_pass(&x)) {
            worst = worst.max((g - w).abs() / w.abs());
        }
    }
    ensure!(worst < 1e-9, "max relative error {worst:e}");
    Ok(format!("max relative error {worst:.2e}"))
}

fn mann_whitney(scores: &[f64], actual: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(actual).filter(|(_, &a)| a).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(actual).filter(|(_, &a)| !a).map(|(s, _)| *s).collect();
    let mut u = 0.0;
    for p in &pos {
        for q in &neg {
            u += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
        }
    }
    u / (pos.len() * neg.len()) as f64
}

fn c5_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let names = ["a", "b", "c", "d"];
    for _ in 0..500 {
        let n = rng.gen_range(1..300);
        let actual: Vec<&str> = (0..n).map(|_| names[rng.gen_range(0..4)]).collect();
        let pred: Vec<&str> = (0..n).map(|_| names[rng.gen_range(0..4)]).collect();
        let cm = ok(confusion(&actual, &pred))?;
        let micro = aggregate(&cm, BaseMetric::F, Averaging::Micro, 1.0);
        ensure!(micro == cm.accuracy(), "micro-F1 {micro} != accuracy {}", cm.accuracy());
    }
    let mut actual = vec!["benign"; 99];
    actual.push("attack");
    let cm = ok(confusion(&actual, &["benign"; 100]))?;
    ensure!(cm.accuracy() == 0.99, "majority accuracy {}", cm.accuracy());
    let f2 = f_beta(1.0, 0.5, 2.0);
    ensure!((f2 - 0.5556).abs() <= 1e-4, "F2 = {f2}");
    let scores: Vec<f64> = (0..10_000).map(|_| (rng.gen_range(0..500) as f64) / 500.0).collect();
    let labels: Vec<bool> = scores.iter().map(|s| rng.gen_bool(0.3 + 0.4 * s)).collect();
    let auc = ok(roc_auc(&scores, &labels))?.auc;
    let u = mann_whitney(&scores, &labels);
    ensure!((auc - u).abs() < 1e-9, "AUC {auc} vs U {u}");
    Ok(format!("accuracy 0.990, F2 {f2:.4}, AUC {auc:.6} = U"))
}

// ---------- partitioning ----------

fn random_table(rng: &mut ChaCha8Rng) -> Dataset {
    let classes = rng.gen_range(2..6);
    let mut labels = Vec::new();
    for c in 0..classes {
        labels.extend(std::iter::repeat_n(format!("c{c}"), rng.gen_range(3..60)));
    }
    labels.shuffle(rng);
    let n = labels.len();
    let groups = rng.gen_range(3..12);
    Dataset::from_columns(vec![
        Column::num("x", ColumnKind::Numeric, (0..n).map(|_| rng.gen()).collect()),
        Column::time("flow_start", (0..n).map(|_| Timestamp::from_parts(rng.gen_range(0..50), 0)).collect()),
        Column::text("src_ip", ColumnKind::Metadata, (0..n).map(|i| format!("g{}", i % groups)).collect()),
        Column::text(LABEL, ColumnKind::Label, labels),
    ])
    .unwrap()
}

fn exhaustive(a: &SplitAssignment, n: usize) -> Result<(), String> {
    let mut seen = vec![0; n];
    for p in Partition::ALL {
        for r in a.rows(p) {
            seen[r] += 1;
        }
    }
    if a.partitions.len() != n || seen.iter().any(|&c| c != 1) {
        return Err("partitions not disjoint and exhaustive".into());
    }
    Ok(())
}

fn c6_split_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut checked = 0;
    for _ in 0..1000 {
        let ds = random_table(&mut rng);
        let n = ds.n_rows();
        let labels = ds.labels().unwrap().to_vec();
        let seed = rng.gen();

        let a = ok(split(&ds, &SplitSpec { seed, ..Default::default() }))?;
        exhaustive(&a, n)?;

        let spec = SplitSpec { strategy: Strategy::Temporal, time_key: Some("flow_start".into()), seed, ..Default::default() };
        let a = ok(split(&ds, &spec))?;
        exhaustive(&a, n)?;
        let ts = ds.column("flow_start").unwrap();
        let t = |p| a.rows(p).into_iter().map(|i| ts.data.as_f64(i).unwrap()).collect::<Vec<f64>>();
        let (tr, va, te) = (t(Partition::Train), t(Partition::Val), t(Partition::Test));
        let max = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
        let min = |v: &[f64]| v.iter().copied().fold(f64::MAX, f64::min);
        ensure!(max(&tr) <= min(&va) && max(&va) <= min(&te), "temporal order broken");

        let spec = SplitSpec { strategy: Strategy::Disjoint, group_key: Some("src_ip".into()), seed, ..Default::default() };
        let a = ok(split(&ds, &spec))?;
        exhaustive(&a, n)?;
        let groups = ds.column("src_ip").unwrap().texts().unwrap();
        let mut home: HashMap<&str, Partition> = HashMap::new();
        for (i, g) in groups.iter().enumerate() {
            ensure!(*home.entry(g).or_insert(a.partitions[i]) == a.partitions[i], "group {g} spans partitions");
        }

        let held = labels[rng.gen_range(0..n)].clone();
        let spec = SplitSpec { strategy: Strategy::Ood, held_out_classes: vec![held.clone()], seed, ..Default::default() };
        let a = ok(split(&ds, &spec))?;
        exhaustive(&a, n)?;
        for p in [Partition::Train, Partition::Val] {
            ensure!(a.rows(p).iter().all(|&i| labels[i] != held), "held-out class {held} in {p}");
        }

        let a = ok(split(&ds, &SplitSpec { seed, ..Default::default() }))?;
        let design = a.design_set(Some(&labels));
        let k = rng.gen_range(2..=5.min(design.rows.len()));
        let folds = ok(kfold(&design, k, seed, false))?;
        let mut count: HashMap<usize, usize> = HashMap::new();
        for f in &folds {
            for &r in &f.val {
                *count.entry(r).or_default() += 1;
            }
        }
        ensure!(
            design.rows.iter().all(|r| count.get(r) == Some(&1)) && count.len() == design.rows.len(),
            "k-fold validation rows not exactly once"
        );
        checked += 1;
    }
    within(start.elapsed(), 20)?;
    Ok(format!("{checked} datasets x 5 strategies, {:.1}s", start.elapsed().as_secs_f64()))
}

// ---------- transforms ----------

fn numeric_table(cols: &[(&str, Vec<f64>)]) -> Dataset {
    let n = cols[0].1.len();
    let mut c: Vec<Column> = cols.iter().map(|(name, v)| Column::num(*name, ColumnKind::Numeric, v.clone())).collect();
    c.push(Column::num("dst_port", ColumnKind::Numeric, (0..n).map(|i| [53.0, 443.0, 8080.0][i % 3]).collect()));
    c.push(Column::text("proto", ColumnKind::Categorical, (0..n).map(|i| ["tcp", "udp"][i % 2].into()).collect()));
    c.push(Column::text(LABEL, ColumnKind::Label, (0..n).map(|i| ["a", "b"][i % 2].into()).collect()));
    Dataset::from_columns(c).unwrap()
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn c7_leakage_guards() -> Outcome {
    let ds = numeric_table(&[("x", (0..60).map(f64::from).collect()), ("y", (0..60).map(|i| (i * i % 17) as f64).collect())]);
    let a = ok(split(&ds, &SplitSpec::default()))?;
    let test = a.rows(Partition::Test);
    let mut poisoned = a.rows(Partition::Train);
    poisoned.push(test[0]);
    ensure!(matches!(FitScope::for_rows(poisoned, &a), Err(Error::Leakage { .. })), "poisoned scope accepted");
    let all: Vec<usize> = (0..ds.n_rows()).collect();
    ensure!(matches!(FitScope::for_rows(all, &a), Err(Error::Leakage { .. })), "full-table scope accepted");
    let mut design = a.design_set(ds.labels());
    let mut bad_fold = ok(kfold(&design, 3, 0, false))?.remove(0);
    bad_fold.train.push(test[1]);
    ensure!(matches!(FitScope::fold(&bad_fold, &a), Err(Error::Leakage { .. })), "poisoned fold accepted");

    // every fitter and row operation on a legal scope, then on eval rows
    let scope = ok(FitScope::train(&a))?;
    let cols = names(&["x", "y"]);
    ok(fit_standard(&ds, &scope, &cols))?;
    ok(fit_minmax(&ds, &scope, &cols))?;
    ok(fit_robust(&ds, &scope, &cols))?;
    ok(fit_onehot(&ds, &scope, &names(&["proto"])))?;
    ok(fit_portbin(&ds, &scope, "dst_port"))?;
    ok(fit_pca(&ds, &scope, &cols, 2))?;
    let x: Vec<Vec<f64>> = test.iter().map(|&i| vec![i as f64, (i % 5) as f64]).collect();
    let y: Vec<String> = test.iter().map(|&i| ds.labels().unwrap()[i].clone()).collect();
    let mut rows = ok(LabeledRows::new(cols.clone(), x, y))?;
    rows.partitions.iter_mut().for_each(|p| *p = Partition::Test);
    ensure!(matches!(outlier_bounds_iqr(&rows, &cols, 1.5), Err(Error::Leakage { .. })), "outlier fit on test rows");
    ensure!(matches!(undersample(&rows, 1.0, 0), Err(Error::Leakage { .. })), "undersample on test rows");
    ensure!(matches!(smote(&rows, 1, 0), Err(Error::Leakage { .. })), "smote on test rows");

    design.rows.push(test[0]);
    design.tags.push(Partition::Train);
    design.labels.as_mut().unwrap().push(ds.labels().unwrap()[test[0]].clone());
    let grid = HyperGrid { params: [("k".to_string(), vec![Some(3.0)])].into(), ..Default::default() };
    let r = grid_search(&ds, &a, &design, &TrainingPlan::default(), &ModelSpec::Knn { k: 1 }, &grid, 0, false);
    ensure!(matches!(r, Err(Error::Leakage { .. })), "grid search accepted a poisoned design set");
    Ok("transform fits, row operations and grid search refuse test rows".into())
}

fn col(ds: &Dataset, name: &str, rows: &[usize]) -> Vec<f64> {
    let v = ds.column(name).unwrap().nums().unwrap();
    rows.iter().map(|&i| v[i]).collect()
}

fn all_train(ds: &Dataset) -> SplitAssignment {
    let one_class = Column::text(LABEL, ColumnKind::Label, vec!["a".to_string(); ds.n_rows()]);
    let mut a = split(&Dataset::from_columns(vec![one_class]).unwrap(), &SplitSpec::default()).unwrap();
    a.partitions = vec![Partition::Train; ds.n_rows()];
    a
}

fn c8_scalers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(12..200);
        let scale = 10f64.powi(rng.gen_range(-2..5));
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale + scale).collect();
        let ds = numeric_table(&[("x", x)]);
        let a = ok(split(&ds, &SplitSpec { seed: rng.gen(), ..Default::default() }))?;
        let scope = ok(FitScope::train(&a))?;
        let train = scope.rows().to_vec();
        let cols = names(&["x"]);

        let (s, _) = ok(ok(fit_standard(&ds, &scope, &cols))?.apply(&ds, &scope))?;
        let v = col(&s, "x", &train);
        worst = worst.max((v.iter().sum::<f64>() / v.len() as f64).abs());

        let (m, _) = ok(ok(fit_minmax(&ds, &scope, &cols))?.apply(&ds, &scope))?;
        let v = col(&m, "x", &train);
        worst = worst.max(v.iter().copied().fold(f64::MAX, f64::min).abs());
        worst = worst.max((v.iter().copied().fold(f64::MIN, f64::max) - 1.0).abs());

        let (r, _) = ok(ok(fit_robust(&ds, &scope, &cols))?.apply(&ds, &scope))?;
        let mut v = col(&r, "x", &train);
        v.sort_by(f64::total_cmp);
        worst = worst.max(quantile_sorted(&v, 0.5).abs());
    }
    ensure!(worst < 1e-9, "train statistics off by {worst:e}");

    let ds = numeric_table(&[("x", vec![1.0, 2.0, 3.0, 4.0, 100.0])]);
    let a = all_train(&ds);
    let scope = ok(FitScope::train(&a))?;
    let (r, _) = ok(ok(fit_robust(&ds, &scope, &names(&["x"])))?.apply(&ds, &scope))?;
    let got = col(&r, "x", &[4])[0];
    ensure!(got == 48.5, "robust example gave {got}");
    Ok(format!("max deviation {worst:.1e}, robust 100 -> 48.5"))
}

fn c9_smote() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut made_total = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let counts = [rng.gen_range(30..80), rng.gen_range(3..20), rng.gen_range(3..30)];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                x.push((0..4).map(|_| rng.gen_range(-50.0..50.0) + 10.0 * c as f64).collect::<Vec<f64>>());
                y.push(format!("c{c}"));
            }
        }
        let rows = ok(LabeledRows::new(names(&["a", "b", "c", "d"]), x, y))?;
        let k = rng.gen_range(1..3);
        let (out, made) = ok(smote(&rows, k, rng.gen()))?;
        let max = *counts.iter().max().unwrap();
        ensure!(out.class_counts().values().all(|&c| c == max), "unbalanced {:?}", out.class_counts());
        for (s, synth) in made.iter().zip(&out.x[rows.len()..]) {
            ensure!(rows.y[s.base] == rows.y[s.neighbor] && rows.y[s.base] != "c0", "pair crosses classes or uses majority");
            ensure!((0.0..=1.0).contains(&s.lambda), "lambda {}", s.lambda);
            let (p, q) = (&rows.x[s.base], &rows.x[s.neighbor]);
            for j in 0..4 {
                worst = worst.max((synth[j] - ((1.0 - s.lambda) * p[j] + s.lambda * q[j])).abs());
            }
        }
        made_total += made.len();
    }
    ensure!(worst < 1e-10, "residual {worst:e}");
    Ok(format!("{made_total} synthetic rows, max residual {worst:.1e}"))
}

fn c10_pca() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let (mut orth, mut recon): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let d = rng.gen_range(2..10);
        let n = rng.gen_range(d + 1..100);
        let mix: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
                (0..d).map(|i| (0..d).map(|j| mix[i][j] * z[j]).sum()).collect()
            })
            .collect();
        let cols: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        let m = ok(PcaModel::fit(cols, &rows, d))?;
        ensure!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]), "eigenvalues not descending");
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = m.components[a].iter().zip(&m.components[b]).map(|(x, y)| x * y).sum();
                orth = orth.max((dot - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
        for r in &rows {
            let back = m.reconstruct(&m.project(r));
            recon = recon.max(back.iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    ensure!(orth < 1e-9, "orthonormality off by {orth:e}");
    ensure!(recon < 1e-9, "reconstruction error {recon:e}");
    let line: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.37, i as f64 * 0.37]).collect();
    let m = ok(PcaModel::fit(names(&["x", "y"]), &line, 2))?;
    let ratio = m.explained_variance_ratio[0];
    ensure!(ratio >= 1.0 - 1e-9, "first component explains {ratio}");
    Ok(format!("orthonormality {orth:.1e}, reconstruction {recon:.1e}, line ratio {ratio}"))
}

// ---------- models ----------

fn knn_oracle(x: &[Vec<f64>], y: &[String], classes: &[String], k: usize, q: &[f64]) -> Vec<f64> {
    let mut d: Vec<(f64, usize)> =
        x.iter().enumerate().map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes = vec![0.0; classes.len()];
    for &(_, i) in &d[..k] {
        votes[classes.iter().position(|c| *c == y[i]).unwrap()] += 1.0;
    }
    votes.iter().map(|v| v / k as f64).collect()
}

fn blobs(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<String>) {
    let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let c = i % 3;
            (vec![centers[c][0] + noise.sample(rng), centers[c][1] + noise.sample(rng)], ["a", "b", "c"][c].to_string())
        })
        .unzip()
}

fn c11_models() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(0..8) as f64, rng.gen_range(0..8) as f64]).collect();
    let y: Vec<String> = (0..200).map(|_| ["a", "b", "c"][rng.gen_range(0..3)].to_string()).collect();
    let classes = names(&["a", "b", "c"]);
    let q: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-1.0..9.0), rng.gen_range(-1.0..9.0)]).collect();
    for k in [1, 3, 4, 7, 15] {
        let m = ok(ModelSpec::Knn { k }.fit(&x, &y))?;
        let got = ok(m.predict_proba(&q))?;
        for (qi, g) in q.iter().zip(&got) {
            ensure!(*g == knn_oracle(&x, &y, &classes, k, qi), "k={k} disagrees at {qi:?}");
        }
    }

    let mut seen = HashSet::new();
    let mut tx = Vec::new();
    let mut ty = Vec::new();
    while tx.len() < 500 {
        let p = vec![rng.gen_range(0..50) as f64, rng.gen_range(0..50) as f64, rng.gen_range(0..5) as f64];
        if seen.insert(format!("{p:?}")) {
            ty.push(["u", "v", "w", "z"][rng.gen_range(0..4)].to_string());
            tx.push(p);
        }
    }
    let tree = ok(ModelSpec::Tree(TreeParams::default()).fit(&tx, &ty))?;
    let pred = ok(tree.predict(&tx))?;
    let hits = pred.iter().zip(&ty).filter(|(a, b)| a == b).count();
    ensure!(hits == tx.len(), "tree train accuracy {hits}/{}", tx.len());

    let (bx, by) = blobs(3000, &mut rng);
    let mut idx: Vec<usize> = (0..3000).collect();
    idx.shuffle(&mut rng);
    let (tr, te) = idx.split_at(2100);
    let pick = |rows: &[usize]| -> (Vec<Vec<f64>>, Vec<String>) { rows.iter().map(|&i| (bx[i].clone(), by[i].clone())).unzip() };
    let ((xtr, ytr), (xte, yte)) = (pick(tr), pick(te));
    let forest = ok(ModelSpec::Forest(ForestParams { seed: 42, ..Default::default() }).fit(&xtr, &ytr))?;
    let pred = ok(forest.predict(&xte))?;
    let acc = pred.iter().zip(&yte).filter(|(a, b)| a == b).count() as f64 / yte.len() as f64;
    ensure!(acc >= 0.95, "forest test accuracy {acc}");
    within(start.elapsed(), 60)?;
    Ok(format!("k-NN exact, tree 100% train, forest {acc:.3}, {:.1}s", start.elapsed().as_secs_f64()))
}

// ---------- explainability ----------

fn duplicated(n: usize, rng: &mut ChaCha8Rng) -> LabeledRows {
    let (x, y): (Vec<Vec<f64>>, Vec<String>) = (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..10.0);
            (vec![a, rng.gen_range(0.0..10.0), a], if a > 5.0 { "b" } else { "a" }.to_string())
        })
        .unzip();
    LabeledRows::new(names(&["x0", "noise", "x0_copy"]), x, y).unwrap()
}

fn c12_explain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let train = duplicated(600, &mut rng);
    let eval = duplicated(300, &mut rng);
    let single = PermutationConfig { grouping: Grouping::None, ..Default::default() };

    let tree = ok(ModelSpec::Tree(TreeParams::default()).fit(&train.x, &train.y))?;
    let t = ok(permutation_importance(&tree, &eval, &single))?;
    let unused = t.get("noise").unwrap().importance;
    ensure!(unused == 0.0, "unused feature importance {unused}");

    let forest = ok(ModelSpec::Forest(ForestParams { n_trees: 50, max_features: Some(1), seed: 1, ..Default::default() })
        .fit(&train.x, &train.y))?;
    let ind = ok(permutation_importance(&forest, &eval, &single))?;
    let grouped = ok(permutation_importance(&forest, &eval, &PermutationConfig::default()))?;
    let pair = grouped.get("x0+x0_copy").ok_or("duplicates not grouped")?.importance;
    let best = ind.rows.iter().map(|r| r.importance).fold(f64::MIN, f64::max);
    ensure!(pair > best, "grouped {pair} <= best individual {best}");

    // the tree splits on x0 only
    let mut span: f64 = 0.0;
    for feature in ["noise", "x0_copy"] {
        let c = ok(partial_dependence(&tree, &eval, feature, &PdpGrid::default()))?;
        for k in 0..c.classes.len() {
            let v = c.class_curve(k);
            span = span.max(v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min));
        }
    }
    ensure!(span < 1e-12, "PDP span {span:e} on an ignored feature");
    Ok(format!("unused 0, grouped {pair:.4} > individual {best:.4}, PDP span {span:.0e}"))
}

// ---------- end to end ----------

fn c13_determinism() -> Outcome {
    let start = Instant::now();
    let capture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic.pcap");
    ensure!(capture.exists(), "missing {}", capture.display());
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |out: &str| -> Result<Run, String> {
        let overrides = vec![
            ("input".to_string(), capture.display().to_string()),
            ("output_dir".to_string(), tmp.path().join(out).display().to_string()),
        ];
        let run = ok(Run::new(ok(RunConfig::from_json(None, &overrides))?))?;
        ok(run.run_all())?;
        Ok(run)
    };
    let (a, b) = (run("a")?, run("b")?);
    for name in [files::DATASET, files::SPLIT, files::MODEL, files::REPORT_CSV, files::CONFUSION, files::PREDICTIONS] {
        let x = std::fs::read(a.path(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path(name)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{name} differs between runs");
    }
    within(start.elapsed(), 120)?;
    Ok(format!("byte-identical artifacts, {:.1}s", start.elapsed().as_secs_f64()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("metering oracle equivalence", c1_meter_oracle),
        ("packet conservation", c2_conservation),
        ("idle-timeout flow splitting", c3_idle_split),
        ("streaming moments vs two-pass", c4_moments),
        ("metric identities", c5_metrics),
        ("split properties", c6_split_properties),
        ("leakage guards", c7_leakage_guards),
        ("scaler contracts", c8_scalers),
        ("SMOTE convexity and balance", c9_smote),
        ("PCA properties", c10_pca),
        ("model sanity", c11_models),
        ("explainability", c12_explain),
        ("end-to-end determinism", c13_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
