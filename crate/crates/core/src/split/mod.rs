//! Train/validation/test partitioning and k-fold assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, Dataset, UNKNOWN};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

const MODULE: &str = "partitioning";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(Error::invalid(MODULE, format!("unknown partition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    RandomStratified,
    Temporal,
    Disjoint,
    Ood,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::invalid(MODULE, format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub strategy: Strategy,
    /// Train, validation and test shares.
    pub fractions: [f64; 3],
    pub seed: u64,
    pub group_key: Option<String>,
    pub time_key: Option<String>,
    pub held_out_classes: Vec<String>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            strategy: Strategy::RandomStratified,
            fractions: [0.6, 0.2, 0.2],
            seed: 0,
            group_key: None,
            time_key: None,
            held_out_classes: Vec::new(),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::config(MODULE, format!("fractions {:?} must each lie in (0, 1)", self.fractions)));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(MODULE, format!("fractions sum to {sum}, not 1")));
        }
        match self.strategy {
            Strategy::Disjoint if self.group_key.is_none() => Err(Error::config(MODULE, "disjoint split needs group_key")),
            Strategy::Temporal if self.time_key.is_none() => Err(Error::config(MODULE, "temporal split needs time_key")),
            Strategy::Ood if self.held_out_classes.is_empty() => {
                Err(Error::config(MODULE, "ood split needs at least one held-out class"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub rows: usize,
    pub counts: BTreeMap<Partition, usize>,
    pub realized_fractions: BTreeMap<Partition, f64>,
    /// Label distribution per partition.
    pub class_counts: BTreeMap<Partition, BTreeMap<String, usize>>,
    /// Test rows whose class never appears in train (ood only).
    pub unseen_test_rows: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub partitions: Vec<Partition>,
    /// Per row: test row of a held-out class.
    pub unseen: Vec<bool>,
    pub manifest: SplitManifest,
}

/// Stable digest of a set of row ids, independent of their order.
pub fn fingerprint_rows(rows: &[usize]) -> String {
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    let text: Vec<String> = sorted.iter().map(usize::to_string).collect();
    sha256_hex(text.join(",").as_bytes())[..16].to_string()
}

impl SplitAssignment {
    fn build(spec: &SplitSpec, partitions: Vec<Partition>, unseen: Vec<bool>, labels: Option<&[String]>) -> Self {
        let n = partitions.len();
        let mut counts = BTreeMap::new();
        let mut class_counts: BTreeMap<Partition, BTreeMap<String, usize>> = BTreeMap::new();
        for p in Partition::ALL {
            counts.insert(p, 0);
            class_counts.insert(p, BTreeMap::new());
        }
        for (i, &p) in partitions.iter().enumerate() {
            *counts.get_mut(&p).expect("all partitions") += 1;
            if let Some(l) = labels {
                *class_counts.get_mut(&p).expect("all partitions").entry(l[i].clone()).or_default() += 1;
            }
        }
        let realized = counts.iter().map(|(&p, &c)| (p, if n == 0 { 0.0 } else { c as f64 / n as f64 })).collect();
        let fp: Vec<String> = Partition::ALL
            .iter()
            .map(|&p| format!("{p}:{}", fingerprint_rows(&rows_in(&partitions, p))))
            .collect();
        let manifest = SplitManifest {
            spec: spec.clone(),
            rows: n,
            counts,
            realized_fractions: realized,
            class_counts,
            unseen_test_rows: unseen.iter().filter(|&&u| u).count(),
            fingerprint: sha256_hex(fp.join(";").as_bytes())[..16].to_string(),
        };
        SplitAssignment { partitions, unseen, manifest }
    }

    pub fn rows(&self, p: Partition) -> Vec<usize> {
        rows_in(&self.partitions, p)
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    /// Rows available for model selection, i.e. everything not in test.
    pub fn design_set(&self, labels: Option<&[String]>) -> DesignSet {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.partitions[i] != Partition::Test).collect();
        DesignSet {
            tags: rows.iter().map(|&i| self.partitions[i]).collect(),
            labels: labels.map(|l| rows.iter().map(|&i| l[i].clone()).collect()),
            rows,
            temporal: self.manifest.spec.strategy == Strategy::Temporal,
        }
    }

    /// `comments` become leading `# ` lines.
    pub fn write_csv(&self, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for c in comments {
            writeln!(out, "# {c}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["row_id", "partition"])?;
        for (i, p) in self.partitions.iter().enumerate() {
            w.write_record([i.to_string().as_str(), p.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Read an assignment back from its CSV and manifest. Row ids must be
    /// exactly `0..n`. Unseen flags need [`SplitAssignment::mark_unseen`].
    pub fn load(csv_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<Self> {
        let csv_path = csv_path.as_ref();
        let manifest_path = manifest_path.as_ref();
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: SplitManifest = serde_json::from_str(&text)?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(csv_path)?;
        let mut partitions = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |msg: String| Error::Parse { path: csv_path.display().to_string(), line: i + 2, msg };
            let id: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("bad row_id".into()))?;
            if id != i {
                return Err(parse_err(format!("row ids must be consecutive, found {id} at position {i}")));
            }
            partitions.push(rec.get(1).unwrap_or("").parse()?);
        }
        if partitions.len() != manifest.rows {
            return Err(Error::Lineage(format!(
                "assignment has {} rows but its manifest records {}",
                partitions.len(),
                manifest.rows
            )));
        }
        let unseen = vec![false; partitions.len()];
        Ok(SplitAssignment { partitions, unseen, manifest })
    }

    /// Restore per-row unseen flags from labels after [`SplitAssignment::load`].
    pub fn mark_unseen(&mut self, labels: &[String]) {
        let held: BTreeSet<&String> = self.manifest.spec.held_out_classes.iter().collect();
        self.unseen = (0..self.len())
            .map(|i| self.partitions[i] == Partition::Test && held.contains(&labels[i]))
            .collect();
    }

    /// Check that this assignment belongs to a table of `rows` rows.
    pub fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.len() {
            return Err(Error::Lineage(format!("assignment covers {} rows, dataset has {rows}", self.len())));
        }
        Ok(())
    }
}

fn rows_in(partitions: &[Partition], p: Partition) -> Vec<usize> {
    (0..partitions.len()).filter(|&i| partitions[i] == p).collect()
}

/// Largest-remainder allocation of `n` items to shares; ties go to the
/// earlier share.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - out.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn known_labels(ds: &Dataset) -> Result<&[String]> {
    let labels = ds.labels().ok_or_else(|| Error::config(MODULE, "dataset has no label column"))?;
    if let Some(i) = labels.iter().position(|l| l == UNKNOWN || l.is_empty()) {
        return Err(Error::config(MODULE, format!("row {i} is unlabeled; filter UNKNOWN rows before splitting")));
    }
    Ok(labels)
}

fn stratified(rows: &[usize], labels: &[String], spec: &SplitSpec, out: &mut [Partition]) -> Result<()> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in rows {
        by_class.entry(labels[i].as_str()).or_default().push(i);
    }
    let mut g = rng(spec.seed);
    for (class, mut members) in by_class {
        if members.len() < 3 {
            return Err(Error::Stratification { class: class.to_string(), count: members.len() });
        }
        members.shuffle(&mut g);
        let mut alloc = largest_remainder(members.len(), &spec.fractions);
        // Give empty partitions a row of this class when the donor stays
        // within one row of its exact share.
        let exact: Vec<f64> = spec.fractions.iter().map(|f| f * members.len() as f64).collect();
        while let Some(empty) = alloc.iter().position(|&c| c == 0) {
            let donor = (0..3)
                .filter(|&p| alloc[p] > 1 && alloc[p] as f64 >= exact[p])
                .max_by(|&a, &b| (alloc[a] as f64 - exact[a]).total_cmp(&(alloc[b] as f64 - exact[b])).then(b.cmp(&a)));
            let Some(donor) = donor else { break };
            alloc[donor] -= 1;
            alloc[empty] += 1;
        }
        let mut it = members.into_iter();
        for (p, &count) in Partition::ALL.iter().zip(&alloc) {
            for i in it.by_ref().take(count) {
                out[i] = *p;
            }
        }
    }
    Ok(())
}

pub fn split_random_stratified(ds: &Dataset, spec: &SplitSpec) -> Result<SplitAssignment> {
    spec.validate()?;
    let labels = known_labels(ds)?;
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    let mut parts = vec![Partition::Train; ds.n_rows()];
    stratified(&rows, labels, spec, &mut parts)?;
    Ok(SplitAssignment::build(spec, parts, vec![false; ds.n_rows()], Some(labels)))
}

fn time_values(ds: &Dataset, key: &str) -> Result<Vec<f64>> {
    let col = ds.require(key, MODULE)?;
    let values: Vec<f64> = match &col.data {
        ColumnData::Time(v) => v.iter().map(|t| t.0 as f64).collect(),
        ColumnData::Num(v) => v.clone(),
        ColumnData::Text(_) => return Err(Error::config(MODULE, format!("time key {key:?} is not a time column"))),
    };
    if values.iter().any(|x| x.is_nan()) {
        return Err(Error::config(MODULE, format!("time key {key:?} has missing values")));
    }
    Ok(values)
}

pub fn split_temporal(ds: &Dataset, spec: &SplitSpec) -> Result<SplitAssignment> {
    spec.validate()?;
    let key = spec.time_key.as_deref().ok_or_else(|| Error::config(MODULE, "temporal split needs time_key"))?;
    let t = time_values(ds, key)?;
    let mut order: Vec<usize> = (0..ds.n_rows()).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]).then(a.cmp(&b)));
    let alloc = largest_remainder(order.len(), &spec.fractions);
    let mut parts = vec![Partition::Train; ds.n_rows()];
    let mut it = order.into_iter();
    for (p, &count) in Partition::ALL.iter().zip(&alloc) {
        for i in it.by_ref().take(count) {
            parts[i] = *p;
        }
    }
    Ok(SplitAssignment::build(spec, parts, vec![false; ds.n_rows()], ds.labels()))
}

pub fn split_disjoint(ds: &Dataset, spec: &SplitSpec) -> Result<SplitAssignment> {
    spec.validate()?;
    let key = spec.group_key.as_deref().ok_or_else(|| Error::config(MODULE, "disjoint split needs group_key"))?;
    let col = ds.require(key, MODULE)?;
    let values: Vec<String> = (0..ds.n_rows()).map(|i| col.data.render(i)).collect();
    let mut mass: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &values {
        *mass.entry(v.as_str()).or_default() += 1;
    }
    if mass.len() < 3 {
        return Err(Error::config(MODULE, format!("group key {key:?} has {} distinct values, need at least 3", mass.len())));
    }
    let mut groups: Vec<(&str, usize)> = mass.into_iter().collect();
    groups.shuffle(&mut rng(spec.seed));
    groups.sort_by(|a, b| b.1.cmp(&a.1));

    let n = ds.n_rows() as f64;
    let mut filled = [0usize; 3];
    let mut home: HashMap<&str, Partition> = HashMap::new();
    for (g, m) in groups {
        let deficit = |p: usize| spec.fractions[p] * n - filled[p] as f64;
        let p = (0..3).fold(0, |best, p| if deficit(p) > deficit(best) { p } else { best });
        filled[p] += m;
        home.insert(g, Partition::ALL[p]);
    }
    let parts = values.iter().map(|v| home[v.as_str()]).collect();
    Ok(SplitAssignment::build(spec, parts, vec![false; ds.n_rows()], ds.labels()))
}

pub fn split_ood(ds: &Dataset, spec: &SplitSpec) -> Result<SplitAssignment> {
    spec.validate()?;
    let labels = known_labels(ds)?;
    let classes: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    let held: BTreeSet<&str> = spec.held_out_classes.iter().map(String::as_str).collect();
    if let Some(missing) = held.iter().find(|c| !classes.contains(*c)) {
        return Err(Error::config(MODULE, format!("held-out class {missing:?} does not occur")));
    }
    if held.len() >= classes.len() {
        return Err(Error::config(MODULE, "held-out classes cover every class"));
    }
    let mut parts = vec![Partition::Test; ds.n_rows()];
    let known: Vec<usize> = (0..ds.n_rows()).filter(|&i| !held.contains(labels[i].as_str())).collect();
    stratified(&known, labels, spec, &mut parts)?;
    let unseen = (0..ds.n_rows()).map(|i| held.contains(labels[i].as_str())).collect();
    Ok(SplitAssignment::build(spec, parts, unseen, Some(labels)))
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<SplitAssignment> {
    match spec.strategy {
        Strategy::RandomStratified => split_random_stratified(ds, spec),
        Strategy::Temporal => split_temporal(ds, spec),
        Strategy::Disjoint => split_disjoint(ds, spec),
        Strategy::Ood => split_ood(ds, spec),
    }
}

/// Rows eligible for cross-validation, with their original row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    pub rows: Vec<usize>,
    pub tags: Vec<Partition>,
    pub labels: Option<Vec<String>>,
    /// Produced by a temporal split.
    pub temporal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified k-fold over the design set. Rows of each class are shuffled
/// and dealt round-robin with a pointer that carries over between classes,
/// so fold sizes differ by at most one.
pub fn kfold(design: &DesignSet, k: usize, seed: u64, allow_temporal: bool) -> Result<Vec<Fold>> {
    if let Some(pos) = design.tags.iter().position(|&t| t == Partition::Test) {
        return Err(Error::leakage(MODULE, format!("row {} of the design set is tagged test", design.rows[pos])));
    }
    if design.temporal && !allow_temporal {
        return Err(Error::config(
            MODULE,
            "random k-fold over a temporal split breaks chronological order; pass the override to proceed",
        ));
    }
    let n = design.rows.len();
    if k < 2 || k > n {
        return Err(Error::config(MODULE, format!("k = {k} must lie in [2, {n}]")));
    }
    let mut g = rng(seed);
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for j in 0..n {
        let class = design.labels.as_ref().map_or("", |l| l[j].as_str());
        by_class.entry(class).or_default().push(j);
    }
    let mut fold_of = vec![0usize; n];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut g);
        for &j in members.iter() {
            fold_of[j] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..n).filter(|&j| fold_of[j] != f).map(|j| design.rows[j]).collect(),
            val: (0..n).filter(|&j| fold_of[j] == f).map(|j| design.rows[j]).collect(),
        })
        .collect())
}
