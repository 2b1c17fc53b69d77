//! Staged batch runs driven by one JSON config. Each stage reads the
//! artifacts of earlier stages from a run directory named after the config
//! hash, checks them against the manifests that produced them, and writes
//! its own outputs plus a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{Dataset, UNKNOWN};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::eval::{self, confusion_with_classes, multiclass_auc, roc_auc, ReportConfig};
use crate::explain::{gini_importance, partial_dependence, permutation_importance, PdpGrid, PermutationConfig};
use crate::ingest::{parse_capture, IngestConfig};
use crate::labeling::{label_dataset, EndpointMap, RuleSet};
use crate::meter::{meter_packets, records_to_dataset, MeterConfig};
use crate::models::{fit_with_chain, grid_search, FittedPipeline, HyperGrid, Model, ModelSpec, ScopeKind, TrainingPlan};
use crate::prep::{clean, diagnose, engineer_stateful, engineer_stateless, CleaningConfig, HostKey};
use crate::split::{split, Partition, SplitAssignment, SplitSpec};
use crate::transforms::{FitScope, TransformChain};

const MODULE: &str = "cli";

/// Environment variable naming the config file used when none is given.
pub const CONFIG_ENV: &str = "FLOWLAB_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub default_ports: bool,
    pub rules: Option<PathBuf>,
    pub endpoint_map: Option<PathBuf>,
    pub drop_unknown: bool,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig { default_ports: true, rules: None, endpoint_map: None, drop_unknown: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub stateless: bool,
    /// Seconds; adds host-windowed counts when set.
    pub window: Option<f64>,
    pub host_key: HostKey,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { stateless: true, window: None, host_key: HostKey::Source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub gini: bool,
    pub permutation: Option<PermutationConfig>,
    /// Empty picks the three most important features.
    pub pdp_features: Vec<String>,
    pub pdp_points: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { gini: true, permutation: Some(PermutationConfig::default()), pdp_features: Vec::new(), pdp_points: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Capture to meter.
    pub input: Option<PathBuf>,
    /// Parent of the run directory. Not part of the config hash.
    pub output_dir: PathBuf,
    pub ingest: IngestConfig,
    pub meter: MeterConfig,
    pub labeling: LabelingConfig,
    pub cleaning: CleaningConfig,
    pub features: FeatureConfig,
    pub split: SplitSpec,
    pub training: TrainingPlan,
    pub model: ModelSpec,
    pub grid: Option<HyperGrid>,
    pub allow_temporal_cv: bool,
    pub evaluate_on: Partition,
    pub report: ReportConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            input: None,
            output_dir: PathBuf::from("runs"),
            ingest: IngestConfig::default(),
            meter: MeterConfig::default(),
            labeling: LabelingConfig::default(),
            cleaning: CleaningConfig::default(),
            features: FeatureConfig::default(),
            split: SplitSpec::default(),
            training: TrainingPlan::default(),
            model: ModelSpec::default(),
            grid: None,
            allow_temporal_cv: false,
            evaluate_on: Partition::Test,
            report: ReportConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

/// Set a leaf by dotted path. The value is parsed as JSON and falls back
/// to a plain string; missing intermediate objects are created.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(MODULE, format!("bad override path {path:?}")));
    }
    let mut at = doc;
    for p in &parts[..parts.len() - 1] {
        if at.is_null() {
            *at = Value::Object(Default::default());
        }
        let obj = at
            .as_object_mut()
            .ok_or_else(|| Error::config(MODULE, format!("{path}: {p:?} is not an object")))?;
        at = obj.entry(p.to_string()).or_insert(Value::Null);
    }
    if at.is_null() {
        *at = Value::Object(Default::default());
    }
    let obj = at
        .as_object_mut()
        .ok_or_else(|| Error::config(MODULE, format!("{path}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse a config document, apply `path=value` overrides and validate.
    pub fn from_json(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = match text {
            Some(t) => serde_json::from_str(t).map_err(|e| Error::config(MODULE, format!("config: {e}")))?,
            None => serde_json::to_value(RunConfig::default())?,
        };
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::config(MODULE, format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(env) {
            Some(p) => {
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Self::from_json(Some(&text), overrides)
            }
            None => Self::from_json(None, overrides),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ingest.validate()?;
        self.meter.validate()?;
        self.cleaning.validate()?;
        self.split.validate()?;
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        if let Some(p) = &self.explain.permutation {
            p.metric.parse::<eval::Metric>()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with `output_dir` removed.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
        }
        Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Meter,
    Diagnose,
    Prepare,
    Split,
    Transform,
    Train,
    Evaluate,
    Explain,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Meter,
        Stage::Diagnose,
        Stage::Prepare,
        Stage::Split,
        Stage::Transform,
        Stage::Train,
        Stage::Evaluate,
        Stage::Explain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Meter => "meter",
            Stage::Diagnose => "diagnose",
            Stage::Prepare => "prepare",
            Stage::Split => "split",
            Stage::Transform => "transform",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
        }
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Meter => &[],
            Stage::Diagnose | Stage::Prepare => &[Stage::Meter],
            Stage::Split => &[Stage::Prepare],
            Stage::Transform => &[Stage::Prepare, Stage::Split],
            Stage::Train => &[Stage::Prepare, Stage::Split, Stage::Transform],
            Stage::Evaluate | Stage::Explain => &[Stage::Prepare, Stage::Split, Stage::Train],
        }
    }
}

/// Wall-clock fields, kept apart so the rest of a manifest is reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub tool_version: String,
    pub config_hash: String,
    /// Upstream stage name to the digest of its manifest.
    pub upstream: BTreeMap<String, String>,
    /// File name to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
    pub timing: Timing,
}

impl StageManifest {
    /// Hash of everything except the timing block.
    pub fn digest(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// JSON artifact with the producing config hash alongside the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub tool_version: String,
    pub payload: T,
}

/// A config bound to its run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
    pub dir: PathBuf,
}

/// File names inside a run directory.
pub mod files {
    pub const FLOWS: &str = "flows.csv";
    pub const METER: &str = "meter.json";
    pub const QUALITY: &str = "quality.json";
    pub const DATASET: &str = "dataset.csv";
    pub const AUDIT: &str = "audit.jsonl";
    pub const SPLIT: &str = "split.csv";
    pub const SPLIT_MANIFEST: &str = "split_manifest.json";
    pub const CHAIN: &str = "chain.json";
    pub const TRANSFORMED: &str = "transformed.csv";
    pub const MODEL: &str = "model.json";
    pub const CV: &str = "cv.csv";
    pub const REPORT_TXT: &str = "report.txt";
    pub const REPORT_CSV: &str = "report.csv";
    pub const CONFUSION: &str = "confusion.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const ROC: &str = "roc.csv";
    pub const GINI: &str = "importance_gini.csv";
    pub const PERMUTATION: &str = "importance_permutation.csv";
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let hash = cfg.hash()?;
        let dir = cfg.output_dir.join(format!("run-{}", &hash[..8]));
        Ok(Run { cfg, hash, dir })
    }

    /// Use an explicit directory instead of the hash-named one.
    pub fn with_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dir = dir.into();
        self
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.path(&format!("{}.manifest.json", stage.as_str()))
    }

    fn comment(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.hash)]
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let p = self.path(name);
        let mut w = BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?);
        writeln!(w, "# config_hash={}", self.hash).map_err(|e| Error::io(&p, e))?;
        Ok(w)
    }

    fn write_json<T: Serialize>(&self, name: &str, payload: &T) -> Result<()> {
        let env = Envelope { config_hash: self.hash.clone(), tool_version: env!("CARGO_PKG_VERSION").into(), payload };
        let p = self.path(name);
        fs::write(&p, serde_json::to_string_pretty(&env)? + "\n").map_err(|e| Error::io(&p, e))
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let p = self.path(name);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let env: Envelope<T> = serde_json::from_str(&text)?;
        Ok(env.payload)
    }

    pub fn read_manifest(&self, stage: Stage) -> Result<StageManifest> {
        let p = self.manifest_path(stage);
        if !p.exists() {
            return Err(Error::Lineage(format!("stage {} has not run in {}", stage.as_str(), self.dir.display())));
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Upstream manifests with every file they produced re-hashed.
    fn check_upstream(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for &up in stage.upstream() {
            let m = self.read_manifest(up)?;
            for (name, want) in &m.outputs {
                let got = file_hash(&self.path(name))?;
                if &got != want {
                    return Err(Error::Lineage(format!(
                        "{name} changed since stage {} wrote it (sha256 {} vs recorded {})",
                        up.as_str(),
                        &got[..12],
                        &want[..12]
                    )));
                }
            }
            out.insert(up.as_str().to_string(), m.digest()?);
        }
        Ok(out)
    }

    fn finish(
        &self,
        stage: Stage,
        upstream: BTreeMap<String, String>,
        inputs: BTreeMap<String, String>,
        outputs: &[&str],
        details: Value,
        started: u128,
    ) -> Result<StageManifest> {
        let outputs = outputs
            .iter()
            .map(|n| Ok((n.to_string(), file_hash(&self.path(n))?)))
            .collect::<Result<_>>()?;
        let m = StageManifest {
            stage,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.hash.clone(),
            upstream,
            inputs,
            outputs,
            details,
            timing: Timing { started_unix_ms: started, finished_unix_ms: now_ms() },
        };
        let p = self.manifest_path(stage);
        fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&p, e))?;
        Ok(m)
    }

    fn dataset(&self) -> Result<Dataset> {
        Dataset::load(self.path(files::DATASET))
    }

    fn assignment(&self, ds: &Dataset) -> Result<SplitAssignment> {
        let mut a = SplitAssignment::load(self.path(files::SPLIT), self.path(files::SPLIT_MANIFEST))?;
        a.check_rows(ds.n_rows())?;
        if let Some(l) = ds.labels() {
            a.mark_unseen(l);
        }
        Ok(a)
    }

    fn scope(&self, kind: ScopeKind, ds: &Dataset, a: &SplitAssignment) -> Result<FitScope> {
        match kind {
            ScopeKind::Train => FitScope::train(a),
            ScopeKind::Design => FitScope::design(&a.design_set(ds.labels()), a),
            ScopeKind::Fold => Err(Error::Lineage("a fold-level model cannot be evaluated as a run artifact".into())),
        }
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageManifest> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let started = now_ms();
        let upstream = self.check_upstream(stage)?;
        match stage {
            Stage::Meter => self.meter(started),
            Stage::Diagnose => self.diagnose(upstream, started),
            Stage::Prepare => self.prepare(upstream, started),
            Stage::Split => self.split(upstream, started),
            Stage::Transform => self.transform(upstream, started),
            Stage::Train => self.train(upstream, started),
            Stage::Evaluate => self.evaluate(upstream, started),
            Stage::Explain => self.explain(upstream, started),
        }
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Vec<StageManifest>> {
        Stage::ALL.iter().map(|&s| self.run_stage(s)).collect()
    }

    fn meter(&self, started: u128) -> Result<StageManifest> {
        let input = self.cfg.input.as_ref().ok_or_else(|| Error::config(MODULE, "no input capture configured"))?;
        let capture = parse_capture(input, &self.cfg.ingest)?;
        let (records, stats) = meter_packets(&capture.packets, &self.cfg.meter)?;
        let ds = records_to_dataset(&records, self.cfg.meter.splt_n)?;
        ds.save(self.path(files::FLOWS), &self.comment())?;
        let details = serde_json::json!({ "ingest": capture.summary, "meter": stats, "records": records.len() });
        self.write_json(files::METER, &details)?;
        let name = input.file_name().map_or_else(|| "capture".into(), |n| n.to_string_lossy().into_owned());
        let inputs = BTreeMap::from([(name, file_hash(input)?)]);
        self.finish(Stage::Meter, BTreeMap::new(), inputs, &[files::FLOWS, files::METER], details, started)
    }

    fn diagnose(&self, upstream: BTreeMap<String, String>, started: u128) -> Result<StageManifest> {
        let ds = Dataset::load(self.path(files::FLOWS))?;
        let q = diagnose(&ds);
        self.write_json(files::QUALITY, &q)?;
        let details = serde_json::json!({ "rows": q.rows, "cols": q.cols, "duplicate_rows": q.duplicate_rows, "violations": q.total_violations() });
        self.finish(Stage::Diagnose, upstream, BTreeMap::new(), &[files::QUALITY], details, started)
    }

    fn prepare(&self, upstream: BTreeMap<String, String>, started: u128) -> Result<StageManifest> {
        let mut ds = Dataset::load(self.path(files::FLOWS))?;
        let lc = &self.cfg.labeling;
        let mut inputs = BTreeMap::new();
        let rules = match (&lc.rules, lc.default_ports) {
            (Some(p), _) => {
                inputs.insert(p.display().to_string(), file_hash(p)?);
                Some(RuleSet::load(p)?)
            }
            (None, true) => Some(RuleSet::default_ports()),
            (None, false) => None,
        };
        let map = match &lc.endpoint_map {
            Some(p) => {
                inputs.insert(p.display().to_string(), file_hash(p)?);
                Some(EndpointMap::load(p)?)
            }
            None => None,
        };
        let stats = label_dataset(&mut ds, rules.as_ref(), map.as_ref())?;
        let before = ds.n_rows();
        if lc.drop_unknown {
            let labels = ds.labels().expect("labelled").to_vec();
            let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != UNKNOWN).collect();
            ds = ds.select_rows(&keep);
        }
        let unknown_dropped = before - ds.n_rows();
        let (mut ds, audit) = clean(&ds, &self.cfg.cleaning)?;
        if self.cfg.features.stateless {
            ds = engineer_stateless(&ds)?;
        }
        if let Some(w) = self.cfg.features.window {
            ds = engineer_stateful(&ds, w, self.cfg.features.host_key)?;
        }
        ds.save(self.path(files::DATASET), &self.comment())?;
        let p = self.path(files::AUDIT);
        let mut f = BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?);
        audit.write_jsonl(&mut f)?;
        f.flush().map_err(|e| Error::io(&p, e))?;
        drop(f);
        let details = serde_json::json!({
            "labels": stats,
            "unknown_dropped": unknown_dropped,
            "rows": ds.n_rows(),
            "cols": ds.n_cols(),
            "cleaning_rows_dropped": audit.rows_dropped(),
            "cleaning_columns_dropped": audit.columns_dropped(),
        });
        self.finish(Stage::Prepare, upstream, inputs, &[files::DATASET, files::AUDIT], details, started)
    }

    fn split(&self, upstream: BTreeMap<String, String>, started: u128) -> Result<StageManifest> {
        let ds = self.dataset()?;
        let a = split(&ds, &self.cfg.split)?;
        a.write_csv(self.path(files::SPLIT), &self.comment())?;
        a.write_manifest(self.path(files::SPLIT_MANIFEST))?;
        let details = serde_json::json!({ "fingerprint": a.manifest.fingerprint, "counts": a.manifest.counts });
        self.finish(Stage::Split, upstream, BTreeMap::new(), &[files::SPLIT, files::SPLIT_MANIFEST], details, started)
    }

    fn transform(&self, upstream: BTreeMap<String, String>, started: u128) -> Result<StageManifest> {
        let ds = self.dataset()?;
        let a = self.assignment(&ds)?;
        let scope = FitScope::train(&a)?;
        let (chain, out, report) = TransformChain::fit(&ds, &scope, &self.cfg.training.transforms)?;
        self.write_json(files::CHAIN, &chain)?;
        out.save(self.path(files::TRANSFORMED), &self.comment())?;
        let details = serde_json::json!({
            "fit_fingerprint": scope.fingerprint(),
            "steps": chain.steps.iter().map(|s| s.kind()).collect::<Vec<_>>(),
            "warnings": chain.warnings(),
            "unseen": report.unseen,
        });
        self.finish(Stage::Transform, upstream, BTreeMap::new(), &[files::CHAIN, files::TRANSFORMED], details, started)
    }

    fn train(&self, upstream: BTreeMap<String, String>, started: u128) -> Result<StageManifest> {
        let ds = self.dataset()?;
        let a = self.assignment(&ds)?;
        let chain: TransformChain = self.read_json(files::CHAIN)?;
        let train_scope = FitScope::train(&a)?;
        if let Some(s) = chain.steps.iter().find(|s| s.fit_fingerprint != train_scope.fingerprint()) {
            return Err(Error::leakage(
                MODULE,
                format!(
                    "{} transform was fitted on rows {} but this split's training rows are {}",
                    s.kind(),
                    s.fit_fingerprint,
                    train_scope.fingerprint()
                ),
            ));
        }
        let mut outputs = vec![files::MODEL];
        let mut details = serde_json::Map::new();
        let pipeline = match &self.cfg.grid {
            Some(g) => {
                let design = a.design_set(ds.labels());
                let r = grid_search(
                    &ds,
                    &a,
                    &design,
                    &self.cfg.training,
                    &self.cfg.model,
                    g,
                    self.cfg.seed,
                    self.cfg.allow_temporal_cv,
                )?;
                let mut w = self.create(files::CV)?;
                r.write_csv(&mut w)?;
                w.flush().map_err(|e| Error::io(self.path(files::CV), e))?;
                outputs.push(files::CV);
                details.insert("best_params".into(), serde_json::to_value(&r.table[r.best].params)?);
                details.insert("best_mean".into(), r.table[r.best].mean.into());
                r.pipeline
            }
            None => fit_with_chain(
                &ds,
                &train_scope,
                ScopeKind::Train,
                chain,
                &self.cfg.training,
                &self.cfg.model,
                self.cfg.seed,
            )?,
        };
        self.write_json(files::MODEL, &pipeline)?;
        let model_id = file_hash(&self.path(files::MODEL))?;
        details.insert("model_id".into(), model_id.into());
        details.insert("kind".into(), pipeline.model.kind().into());
        details.insert("scope".into(), serde_json::to_value(pipeline.scope_kind)?);
        details.insert("scope_fingerprint".into(), pipeline.scope_fingerprint.clone().into());
        details.insert("train_rows".into(), pipeline.train_rows.into());
        self.finish(Stage::Train, upstream, BTreeMap::new(), &outputs, Value::Object(details), started)
    }

    fn load_pipeline(&self, ds: &Dataset, a: &SplitAssignment) -> Result<(FittedPipeline, FitScope)> {
        let p: FittedPipeline = self.read_json(files::MODEL)?;
        let scope = self.scope(p.scope_kind, ds, a)?;
        Ok((p, scope))
    }

    fn evaluate(&self, upstream: BTreeMap<String, String>, started: u128) -> Result<StageManifest> {
        let ds = self.dataset()?;
        let a = self.assignment(&ds)?;
        let (p, scope) = self.load_pipeline(&ds, &a)?;
        let part = self.cfg.evaluate_on;
        if part == Partition::Train {
            return Err(Error::config(MODULE, "evaluate_on must be val or test"));
        }
        let rows = a.rows(part);
        if rows.is_empty() {
            return Err(Error::config(MODULE, format!("the {part} partition is empty")));
        }
        let pred = p.predict(&ds, &scope, &rows, part)?;
        let classes = p.model.classes().to_vec();
        let cm = confusion_with_classes(&pred.actual, &pred.predicted, classes.clone())?;
        let mut rep = eval::report(&cm, &self.cfg.report);
        let mut outputs = vec![files::REPORT_TXT, files::REPORT_CSV, files::CONFUSION, files::PREDICTIONS];
        if let Ok(auc) = multiclass_auc(&classes, &pred.proba, &pred.actual) {
            rep = rep.with_auc(auc);
        }
        if classes.len() == 2 {
            let pos: Vec<bool> = pred.actual.iter().map(|l| *l == classes[1]).collect();
            let scores: Vec<f64> = pred.proba.iter().map(|p| p[1]).collect();
            if let Ok(curve) = roc_auc(&scores, &pos) {
                let mut w = self.create(files::ROC)?;
                curve.write_csv(&mut w)?;
                w.flush().map_err(|e| Error::io(self.path(files::ROC), e))?;
                outputs.push(files::ROC);
            }
        }
        let mut w = self.create(files::REPORT_TXT)?;
        w.write_all(rep.render_text().as_bytes()).map_err(|e| Error::io(self.path(files::REPORT_TXT), e))?;
        w.flush().map_err(|e| Error::io(self.path(files::REPORT_TXT), e))?;
        let mut w = self.create(files::REPORT_CSV)?;
        rep.write_csv(&mut w)?;
        w.flush().map_err(|e| Error::io(self.path(files::REPORT_CSV), e))?;
        let mut w = self.create(files::CONFUSION)?;
        rep.write_confusion_csv(&mut w)?;
        w.flush().map_err(|e| Error::io(self.path(files::CONFUSION), e))?;
        let mut w = self.create(files::PREDICTIONS)?;
        {
            let mut c = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut w);
            let mut header = vec!["row_id".to_string(), "actual".into(), "predicted".into()];
            header.extend(classes.iter().map(|c| format!("p_{c}")));
            c.write_record(&header)?;
            for i in 0..pred.rows.len() {
                let mut rec = vec![pred.rows[i].to_string(), pred.actual[i].clone(), pred.predicted[i].clone()];
                rec.extend(pred.proba[i].iter().map(f64::to_string));
                c.write_record(&rec)?;
            }
            c.flush().map_err(|e| Error::io(self.path(files::PREDICTIONS), e))?;
        }
        w.flush().map_err(|e| Error::io(self.path(files::PREDICTIONS), e))?;
        let details = serde_json::json!({
            "partition": part,
            "rows": rows.len(),
            "accuracy": rep.accuracy,
            "macro_f1": rep.macro_avg.f_beta,
            "model_id": file_hash(&self.path(files::MODEL))?,
        });
        self.finish(Stage::Evaluate, upstream, BTreeMap::new(), &outputs, details, started)
    }

    fn explain(&self, upstream: BTreeMap<String, String>, started: u128) -> Result<StageManifest> {
        let ds = self.dataset()?;
        let a = self.assignment(&ds)?;
        let (p, scope) = self.load_pipeline(&ds, &a)?;
        let val = a.rows(Partition::Val);
        if val.is_empty() {
            return Err(Error::config(MODULE, "explanations use validation rows and the val partition is empty"));
        }
        let rows = p.rows(&ds, &scope, &val, Partition::Val)?;
        let ec = &self.cfg.explain;
        let mut outputs: Vec<String> = Vec::new();
        let mut ranking: Vec<String> = Vec::new();
        if ec.gini && matches!(p.model, Model::Tree(_) | Model::Forest(_)) {
            let t = gini_importance(&p.model, &p.features)?;
            let mut w = self.create(files::GINI)?;
            t.write_csv(&mut w)?;
            w.flush().map_err(|e| Error::io(self.path(files::GINI), e))?;
            outputs.push(files::GINI.into());
            let mut r = t.rows.clone();
            r.sort_by_key(|r| r.rank);
            ranking = r.into_iter().map(|r| r.feature).collect();
        }
        if let Some(pc) = &ec.permutation {
            let pc = PermutationConfig { seed: self.cfg.seed, ..pc.clone() };
            let t = permutation_importance(&p.model, &rows, &pc)?;
            let mut w = self.create(files::PERMUTATION)?;
            t.write_csv(&mut w)?;
            w.flush().map_err(|e| Error::io(self.path(files::PERMUTATION), e))?;
            outputs.push(files::PERMUTATION.into());
            if ranking.is_empty() {
                let mut r = t.rows.clone();
                r.sort_by_key(|r| r.rank);
                ranking = r.into_iter().flat_map(|r| r.columns).collect();
            }
        }
        let pdp: Vec<String> = if ec.pdp_features.is_empty() {
            ranking.into_iter().take(3).collect()
        } else {
            ec.pdp_features.clone()
        };
        for f in &pdp {
            let curve = partial_dependence(&p.model, &rows, f, &PdpGrid::Quantiles(ec.pdp_points))?;
            let name = format!("pdp_{}.csv", sanitize(f));
            let mut w = self.create(&name)?;
            curve.write_csv(&mut w)?;
            w.flush().map_err(|e| Error::io(self.path(&name), e))?;
            outputs.push(name);
        }
        let details = serde_json::json!({ "rows": val.len(), "pdp_features": pdp });
        let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
        self.finish(Stage::Explain, upstream, BTreeMap::new(), &names, details, started)
    }
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}
