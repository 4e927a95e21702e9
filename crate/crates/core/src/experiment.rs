//! The concept × method × scenario × layer × fold grid.
//!
//! A run loads the datasets, joins every labeled position to its activation
//! record by canonical FEN, and then works one layer at a time: features for
//! that layer are read for every record, all cells of the layer are trained
//! and evaluated in parallel, and the features are dropped.
//!
//! Seeds: the fold plan uses the global seed. Negative sampling and
//! concept-vector pair sampling use `mix_seed(seed, [concept, scenario,
//! fold])`, so all methods and layers of a (concept, scenario, fold) see
//! the same instances. Probe training uses `mix_seed(seed, [concept,
//! method, scenario, layer, fold])`.
//!
//! Scenario II is not folded: its train side is the whole Standard set and
//! its test side the whole Chess960 set, so its "folds" differ only in the
//! seeds above.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::{ConceptId, RULE_VERSION};
use crate::cpaf::{CpafError, CpafFile};
use crate::dataset::{
    compose_scenario, concept_split, load_c960, load_epd, make_folds, make_pairs, DatasetError, FoldPlan,
    LabeledPosition, Scenario, ThemeMap, Variant,
};
use crate::probes::{train_concept_vector, train_logistic, train_sequence, HyperParams, Method, Probe};
use crate::rng::{fnv1a64, mix_seed};

pub const DEFAULT_LAYERS: [usize; 4] = [2, 5, 10, 15];
pub const SCENARIO_II_POLICY: &str = "scenario II trains on the full standard set; its folds vary seeds only";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cpaf(#[from] CpafError),
    #[error("{}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid run config: {0}")]
    BadConfig(String),
    #[error("scenario {scenario} needs {what} for the {variant} variant")]
    MissingInput {
        scenario: Scenario,
        variant: Variant,
        what: &'static str,
    },
    #[error("no activation record for {variant} position {fen}")]
    MissingActivation { variant: Variant, fen: String },
    #[error("{path}: two records share FEN {fen}")]
    DuplicateActivation { path: PathBuf, fen: String },
    #[error("layer {layer} out of range: {path} has {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize, path: PathBuf },
    #[error("activation shapes differ between files: {0}")]
    ShapeMismatch(String),
    #[error("source id {source_id:?} is in both train and test of cell {cell}")]
    Leakage { source_id: String, cell: String },
    #[error("layer trends need at least 2 layers, results have {0}")]
    TooFewLayers(usize),
    #[error("no results to emit")]
    EmptyResults,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub concepts: Vec<ConceptId>,
    pub layers: Vec<usize>,
    /// Use every layer `0..L` instead of `layers`.
    pub all_layers: bool,
    pub k: usize,
    pub seed: u64,
    /// `hyper.seed` is ignored; each cell derives its own.
    pub hyper: HyperParams,
    pub std_data: Option<PathBuf>,
    pub c960_data: Option<PathBuf>,
    pub std_acts: Option<PathBuf>,
    pub c960_acts: Option<PathBuf>,
    /// Theme map for the EPD file; the built-in titles when absent.
    pub themes: Option<PathBuf>,
    pub out: PathBuf,
    /// Worker threads; `PROBE_WORKERS` caps this.
    pub workers: Option<usize>,
    /// Write every trained probe under `out/probes/`.
    pub save_probes: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenarios: Scenario::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            concepts: ConceptId::ALL.to_vec(),
            layers: DEFAULT_LAYERS.to_vec(),
            all_layers: false,
            k: 5,
            seed: 0,
            hyper: HyperParams::default(),
            std_data: None,
            c960_data: None,
            std_acts: None,
            c960_acts: None,
            themes: None,
            out: PathBuf::from("results"),
            workers: None,
            save_probes: false,
        }
    }
}

impl RunConfig {
    pub fn hyper_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.hyper.canonical().as_bytes()))
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::BadConfig(m.to_string()));
        if self.scenarios.is_empty() {
            return bad("no scenarios selected");
        }
        if self.methods.is_empty() {
            return bad("no methods selected");
        }
        if self.concepts.is_empty() {
            return bad("no concepts selected");
        }
        if self.layers.is_empty() && !self.all_layers {
            return bad("no layers selected");
        }
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        self.hyper.validate().map_err(|e| ExperimentError::BadConfig(e.to_string()))
    }

    /// Effective worker count: the configured value (default: all cores),
    /// capped by `PROBE_WORKERS` when set.
    pub fn worker_count(&self) -> usize {
        let base = self.workers.unwrap_or_else(rayon::current_num_threads).max(1);
        match std::env::var("PROBE_WORKERS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            Some(cap) if cap >= 1 => base.min(cap),
            _ => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub concept: ConceptId,
    pub method: Method,
    pub scenario: Scenario,
    pub layer: usize,
    pub fold: usize,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}/L{}/f{}",
            self.concept, self.method, self.scenario, self.layer, self.fold
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub accuracy: f64,
    /// Concept vectors only.
    pub pairwise: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub key: CellKey,
    pub seed: u64,
    pub hyper_hash: String,
    pub outcome: Result<CellScore, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AggKey {
    pub concept: ConceptId,
    pub method: Method,
    pub scenario: Scenario,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub key: AggKey,
    /// Mean and population standard deviation over successful folds.
    pub mean: f64,
    pub std: f64,
    pub n_folds: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestLayer {
    pub concept: ConceptId,
    pub method: Method,
    pub scenario: Scenario,
    pub layer: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub k: usize,
    pub hyper: HyperParams,
    pub hyper_hash: String,
    pub rule_version: String,
    pub scenario_ii_policy: String,
}

impl RunMeta {
    fn comment_line(&self) -> String {
        format!(
            "# chess-probe results; rules={}; hyper={} ({}); seed={}; k={}; {}\n",
            self.rule_version,
            self.hyper_hash,
            self.hyper.canonical(),
            self.seed,
            self.k,
            self.scenario_ii_policy
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub meta: RunMeta,
    /// Sorted by key.
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<Aggregate>,
    pub best: Vec<BestLayer>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ResultTable {
    /// Builds aggregates and best-layer summaries from rows.
    pub fn from_rows(meta: RunMeta, mut rows: Vec<ResultRow>) -> ResultTable {
        rows.sort_by_key(|r| r.key);
        let mut groups: BTreeMap<AggKey, (Vec<f64>, usize)> = BTreeMap::new();
        for r in &rows {
            let k = AggKey {
                concept: r.key.concept,
                method: r.key.method,
                scenario: r.key.scenario,
                layer: r.key.layer,
            };
            let g = groups.entry(k).or_default();
            match &r.outcome {
                Ok(s) => g.0.push(s.accuracy),
                Err(_) => g.1 += 1,
            }
        }
        let aggregates: Vec<Aggregate> = groups
            .into_iter()
            .map(|(key, (accs, n_failed))| {
                let (mean, std) = mean_std(&accs);
                Aggregate {
                    key,
                    mean,
                    std,
                    n_folds: accs.len(),
                    n_failed,
                }
            })
            .collect();
        let mut best: BTreeMap<(ConceptId, Method, Scenario), BestLayer> = BTreeMap::new();
        for a in aggregates.iter().filter(|a| a.n_folds > 0) {
            let k = (a.key.concept, a.key.method, a.key.scenario);
            let cand = BestLayer {
                concept: a.key.concept,
                method: a.key.method,
                scenario: a.key.scenario,
                layer: a.key.layer,
                mean: a.mean,
                std: a.std,
            };
            // aggregates are in layer order, so ties keep the earliest layer
            match best.get(&k) {
                Some(b) if b.mean >= a.mean => {}
                _ => {
                    best.insert(k, cand);
                }
            }
        }
        ResultTable {
            meta,
            rows,
            aggregates,
            best: best.into_values().collect(),
        }
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn layers(&self) -> BTreeSet<usize> {
        self.rows.iter().map(|r| r.key.layer).collect()
    }

    pub fn aggregate(&self, key: AggKey) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.key == key)
    }

    /// Long-format CSV of every cell.
    pub fn rows_csv(&self) -> String {
        let mut out = self.meta.comment_line();
        out.push_str("concept,method,scenario,layer,fold,status,accuracy,pairwise,n_train,n_test,seed,hyper_hash,error\n");
        for r in &self.rows {
            let k = r.key;
            let _ = write!(out, "{},{},{},{},{},", k.concept, k.method, k.scenario, k.layer, k.fold);
            match &r.outcome {
                Ok(s) => {
                    let pw = s.pairwise.map(|p| p.to_string()).unwrap_or_default();
                    let _ = write!(out, "ok,{},{pw},{},{},", s.accuracy, s.n_train, s.n_test);
                }
                Err(e) => {
                    let _ = write!(out, "failed,,,,,");
                    let _ = writeln!(out, "{},{},{}", r.seed, r.hyper_hash, csv_field(e));
                    continue;
                }
            }
            let _ = writeln!(out, "{},{},", r.seed, r.hyper_hash);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            _ => Err(format!("unknown table format {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCell {
    pub layer: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub concept: String,
    pub method: String,
    /// Best-layer mean ± std per scenario, `None` when not run.
    pub scenarios: BTreeMap<String, Option<ScenarioCell>>,
    /// Scenario with the highest mean in this row.
    pub best_scenario: Option<String>,
}

/// One row per (concept, method) with best-layer scores per scenario.
pub fn table_rows(results: &ResultTable) -> Vec<TableRow> {
    let mut pairs: BTreeSet<(ConceptId, Method)> = BTreeSet::new();
    for r in &results.rows {
        pairs.insert((r.key.concept, r.key.method));
    }
    pairs
        .into_iter()
        .map(|(concept, method)| {
            let mut scenarios = BTreeMap::new();
            let mut top: Option<(Scenario, f64)> = None;
            for s in Scenario::ALL {
                let cell = results
                    .best
                    .iter()
                    .find(|b| b.concept == concept && b.method == method && b.scenario == s)
                    .map(|b| ScenarioCell {
                        layer: b.layer,
                        mean: b.mean,
                        std: b.std,
                    });
                if let Some(c) = &cell {
                    if top.is_none_or(|(_, m)| c.mean > m) {
                        top = Some((s, c.mean));
                    }
                }
                scenarios.insert(s.to_string(), cell);
            }
            TableRow {
                concept: concept.title().to_string(),
                method: method.title().to_string(),
                scenarios,
                best_scenario: top.map(|(s, _)| s.to_string()),
            }
        })
        .collect()
}

/// The concept × method table, deterministic for identical results.
pub fn emit_table(results: &ResultTable, format: TableFormat) -> Result<String, ExperimentError> {
    if results.rows.is_empty() {
        return Err(ExperimentError::EmptyResults);
    }
    let rows = table_rows(results);
    Ok(match format {
        TableFormat::Csv => {
            let mut out = results.meta.comment_line();
            out.push_str("concept,method");
            for s in Scenario::ALL {
                let _ = write!(out, ",{s}_mean,{s}_std,{s}_layer");
            }
            out.push_str(",best_scenario\n");
            for r in &rows {
                out.push_str(&csv_field(&r.concept));
                out.push(',');
                out.push_str(&csv_field(&r.method));
                for s in Scenario::ALL {
                    match &r.scenarios[&s.to_string()] {
                        Some(c) => {
                            let _ = write!(out, ",{},{},{}", c.mean, c.std, c.layer);
                        }
                        None => out.push_str(",,,"),
                    }
                }
                let _ = writeln!(out, ",{}", r.best_scenario.as_deref().unwrap_or(""));
            }
            out
        }
        TableFormat::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                meta: &'a RunMeta,
                rows: &'a [TableRow],
            }
            let mut s = serde_json::to_string_pretty(&Doc {
                meta: &results.meta,
                rows: &rows,
            })
            .expect("table serializes");
            s.push('\n');
            s
        }
    })
}

/// Long-format CSV `concept,method,scenario,layer,mean,std`.
pub fn emit_layer_trends(results: &ResultTable) -> Result<String, ExperimentError> {
    let n = results.layers().len();
    if n < 2 {
        return Err(ExperimentError::TooFewLayers(n));
    }
    let mut out = results.meta.comment_line();
    out.push_str("concept,method,scenario,layer,mean,std\n");
    for a in &results.aggregates {
        let k = a.key;
        let (mean, std) = if a.n_folds > 0 {
            (a.mean.to_string(), a.std.to_string())
        } else {
            (String::new(), String::new())
        };
        let _ = writeln!(out, "{},{},{},{},{mean},{std}", k.concept, k.method, k.scenario, k.layer);
    }
    Ok(out)
}

// ---------------------------------------------------------------- inputs

/// Datasets and activation files for one variant.
struct Source {
    variant: Variant,
    records: Vec<LabeledPosition>,
    acts: CpafFile,
    acts_path: PathBuf,
    /// Activation index per dataset record.
    join: Vec<usize>,
}

fn join(variant: Variant, records: &[LabeledPosition], acts: &CpafFile, path: &Path) -> Result<Vec<usize>, ExperimentError> {
    let mut by_fen: HashMap<String, usize> = HashMap::with_capacity(acts.len());
    for i in 0..acts.len() {
        let key = acts.read_key(i)?;
        if let Some(_prev) = by_fen.insert(key.fen.clone(), i) {
            return Err(ExperimentError::DuplicateActivation {
                path: path.to_path_buf(),
                fen: key.fen,
            });
        }
    }
    records
        .iter()
        .map(|r| {
            let fen = r.canonical_fen();
            by_fen
                .get(&fen)
                .copied()
                .ok_or(ExperimentError::MissingActivation { variant, fen })
        })
        .collect()
}

fn load_sources(config: &RunConfig, needed: &BTreeSet<Variant>) -> Result<Vec<Source>, ExperimentError> {
    let themes = match &config.themes {
        Some(p) => ThemeMap::load(p)?,
        None => ThemeMap::default(),
    };
    let mut out = Vec::new();
    for &variant in needed {
        let (data, acts) = match variant {
            Variant::Standard => (&config.std_data, &config.std_acts),
            Variant::Chess960 => (&config.c960_data, &config.c960_acts),
        };
        let first_scenario = *config
            .scenarios
            .iter()
            .find(|s| {
                let spec = s.spec();
                spec.train_variants.contains(&variant) || spec.test_variants.contains(&variant)
            })
            .expect("variant is needed by some scenario");
        let missing = |what| ExperimentError::MissingInput {
            scenario: first_scenario,
            variant,
            what,
        };
        let data = data.as_ref().ok_or_else(|| missing("a dataset file"))?;
        let acts_path = acts.as_ref().ok_or_else(|| missing("an activation file"))?;
        let records = match variant {
            Variant::Standard => load_epd(data, &themes)?.records,
            Variant::Chess960 => load_c960(data)?.records,
        };
        let acts = CpafFile::open(acts_path)?;
        let join = join(variant, &records, &acts, acts_path)?;
        out.push(Source {
            variant,
            records,
            acts,
            acts_path: acts_path.clone(),
            join,
        });
    }
    Ok(out)
}

/// Per-record features of one layer.
struct LayerFeatures {
    /// Move-token vectors, keyed by source id.
    vectors: HashMap<String, Vec<f32>>,
    /// Whole layer matrices, when a sequence probe needs them.
    matrices: HashMap<String, Vec<f32>>,
}

fn load_layer(sources: &[Source], layer: usize, with_matrices: bool) -> Result<LayerFeatures, ExperimentError> {
    let mut vectors = HashMap::new();
    let mut matrices = HashMap::new();
    for s in sources {
        let (t, d) = (s.acts.meta().tokens, s.acts.meta().dim);
        for (r, &idx) in s.records.iter().zip(&s.join) {
            let key = s.acts.read_key(idx)?;
            let m = s.acts.read_layer(&key, idx, layer)?;
            vectors.insert(r.source_id.clone(), m[(t - 1) * d..].to_vec());
            if with_matrices {
                matrices.insert(r.source_id.clone(), m);
            }
        }
    }
    Ok(LayerFeatures { vectors, matrices })
}

// ---------------------------------------------------------------- cells

struct Split<'a> {
    train_pos: Vec<&'a LabeledPosition>,
    train_neg: Vec<&'a LabeledPosition>,
    test_pos: Vec<&'a LabeledPosition>,
    test_neg: Vec<&'a LabeledPosition>,
    seed: u64,
}

fn cell_seed(global: u64, k: &CellKey) -> u64 {
    mix_seed(
        global,
        &[
            k.concept.code() as u64,
            k.method.code(),
            k.scenario as u64,
            k.layer as u64,
            k.fold as u64,
        ],
    )
}

fn run_cell(
    key: CellKey,
    split: &Split,
    feats: &LayerFeatures,
    shape: (usize, usize),
    hyper: &HyperParams,
) -> Result<(CellScore, Probe), String> {
    let seq = key.method.uses_sequence();
    let table = if seq { &feats.matrices } else { &feats.vectors };
    let get = |rs: &[&LabeledPosition]| -> Vec<&[f32]> { rs.iter().map(|r| table[&r.source_id].as_slice()).collect() };
    let (tp, tn) = (get(&split.train_pos), get(&split.train_neg));
    let (ep, en) = (get(&split.test_pos), get(&split.test_neg));
    let probe = match key.method {
        Method::ConceptVector => {
            let n = (tp.len() * tn.len()).min(hyper.max_pairs);
            let pairs = make_pairs(&tp, &tn, n, mix_seed(split.seed, &[0x5041_4952])).map_err(|e| e.to_string())?;
            Probe::ConceptVector(train_concept_vector(&pairs, hyper).map_err(|e| e.to_string())?)
        }
        Method::Logistic => Probe::Logistic(train_logistic(&tp, &tn, hyper).map_err(|e| e.to_string())?),
        Method::Sequence => {
            Probe::Sequence(train_sequence(&tp, &tn, shape.0, shape.1, hyper).map_err(|e| e.to_string())?)
        }
    };
    let acc = probe.evaluate(&ep, &en).map_err(|e| e.to_string())?;
    Ok((
        CellScore {
            accuracy: acc.accuracy,
            pairwise: acc.pairwise,
            n_train: tp.len() + tn.len(),
            n_test: acc.n,
        },
        probe,
    ))
}

fn check_isolation(key: &CellKey, split: &Split) -> Result<(), ExperimentError> {
    let train: HashSet<&str> = split
        .train_pos
        .iter()
        .chain(&split.train_neg)
        .map(|r| r.source_id.as_str())
        .collect();
    match split
        .test_pos
        .iter()
        .chain(&split.test_neg)
        .find(|r| train.contains(r.source_id.as_str()))
    {
        Some(r) => Err(ExperimentError::Leakage {
            source_id: r.source_id.clone(),
            cell: key.to_string(),
        }),
        None => Ok(()),
    }
}

/// Runs the full grid. Hard errors (bad inputs, missing activations, layer
/// out of range, leakage) abort before or during the run; per-cell training
/// failures are recorded in their rows.
pub fn run(config: &RunConfig) -> Result<ResultTable, ExperimentError> {
    config.validate()?;
    let mut needed = BTreeSet::new();
    for s in &config.scenarios {
        let spec = s.spec();
        needed.extend(spec.train_variants.iter().chain(&spec.test_variants).copied());
    }
    let sources = load_sources(config, &needed)?;

    let (t, d) = {
        let m = sources[0].acts.meta();
        (m.tokens, m.dim)
    };
    for s in &sources[1..] {
        let m = s.acts.meta();
        if (m.tokens, m.dim) != (t, d) {
            return Err(ExperimentError::ShapeMismatch(format!(
                "{} has (T, D) = ({}, {}), {} has ({t}, {d})",
                s.acts_path.display(),
                m.tokens,
                m.dim,
                sources[0].acts_path.display()
            )));
        }
    }
    let min_layers = sources.iter().map(|s| s.acts.meta().layers).min().unwrap();
    let layers: Vec<usize> = if config.all_layers {
        (0..min_layers).collect()
    } else {
        let set: BTreeSet<usize> = config.layers.iter().copied().collect();
        set.into_iter().collect()
    };
    for &layer in &layers {
        if let Some(s) = sources.iter().find(|s| layer >= s.acts.meta().layers) {
            return Err(ExperimentError::LayerOutOfRange {
                layer,
                layers: s.acts.meta().layers,
                path: s.acts_path.clone(),
            });
        }
    }

    let std_records = sources.iter().find(|s| s.variant == Variant::Standard).map(|s| &s.records[..]);
    let c960_records = sources.iter().find(|s| s.variant == Variant::Chess960).map(|s| &s.records[..]);
    let all: Vec<LabeledPosition> = sources.iter().flat_map(|s| s.records.iter().cloned()).collect();
    let plan = if config.scenarios.iter().any(|s| s.spec().folded) {
        make_folds(&all, config.k, config.seed)?
    } else {
        FoldPlan {
            k: config.k,
            seed: config.seed,
            assignments: BTreeMap::new(),
        }
    };

    let mut concepts = config.concepts.clone();
    concepts.sort();
    concepts.dedup();
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let mut scenarios = config.scenarios.clone();
    scenarios.sort();
    scenarios.dedup();

    // concept splits per (concept, scenario, fold), shared by methods and layers
    let mut splits: BTreeMap<(ConceptId, Scenario, usize), Split> = BTreeMap::new();
    for &scenario in &scenarios {
        for fold in 0..config.k {
            let sc = compose_scenario(scenario, std_records, c960_records, &plan, fold)?;
            for &concept in &concepts {
                let seed = mix_seed(config.seed, &[concept.code() as u64, scenario as u64, fold as u64]);
                let train = concept_split(&sc.train, concept, mix_seed(seed, &[0]));
                let test = concept_split(&sc.test, concept, mix_seed(seed, &[1]));
                splits.insert(
                    (concept, scenario, fold),
                    Split {
                        train_pos: train.positives,
                        train_neg: train.negatives,
                        test_pos: test.positives,
                        test_neg: test.negatives,
                        seed,
                    },
                );
            }
        }
    }

    let hyper_hash = config.hyper_hash();
    let meta = RunMeta {
        seed: config.seed,
        k: config.k,
        hyper: HyperParams {
            seed: 0,
            ..config.hyper.clone()
        },
        hyper_hash: hyper_hash.clone(),
        rule_version: RULE_VERSION.to_string(),
        scenario_ii_policy: SCENARIO_II_POLICY.to_string(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count())
        .build()
        .map_err(|e| ExperimentError::BadConfig(format!("cannot start worker pool: {e}")))?;
    let with_matrices = methods.contains(&Method::Sequence);
    let probe_dir = config.out.join("probes");
    if config.save_probes {
        fs::create_dir_all(&probe_dir).map_err(io_err(&probe_dir))?;
    }

    let mut rows = Vec::new();
    for &layer in &layers {
        let feats = load_layer(&sources, layer, with_matrices)?;
        let mut keys = Vec::new();
        for &concept in &concepts {
            for &method in &methods {
                for &scenario in &scenarios {
                    for fold in 0..config.k {
                        keys.push(CellKey {
                            concept,
                            method,
                            scenario,
                            layer,
                            fold,
                        });
                    }
                }
            }
        }
        for key in &keys {
            check_isolation(key, &splits[&(key.concept, key.scenario, key.fold)])?;
        }
        let done: Vec<(ResultRow, Option<Probe>)> = pool.install(|| {
            keys.par_iter()
                .map(|&key| {
                    let seed = cell_seed(config.seed, &key);
                    let hyper = HyperParams {
                        seed,
                        ..config.hyper.clone()
                    };
                    let split = &splits[&(key.concept, key.scenario, key.fold)];
                    let (outcome, probe) = match run_cell(key, split, &feats, (t, d), &hyper) {
                        Ok((score, probe)) => (Ok(score), Some(probe)),
                        Err(e) => (Err(e), None),
                    };
                    (
                        ResultRow {
                            key,
                            seed,
                            hyper_hash: hyper_hash.clone(),
                            outcome,
                        },
                        probe,
                    )
                })
                .collect()
        });
        for (row, probe) in done {
            if let (true, Some(p)) = (config.save_probes, probe) {
                let k = row.key;
                let path = probe_dir.join(format!(
                    "{}_{}_{}_L{}_f{}.txt",
                    k.concept, k.method, k.scenario, k.layer, k.fold
                ));
                fs::write(&path, p.to_text()).map_err(io_err(&path))?;
            }
            rows.push(row);
        }
    }
    Ok(ResultTable::from_rows(meta, rows))
}

/// Writes `cells.csv`, `table.csv`, `table.json` and, with two or more
/// layers, `layer_trends.csv` into `dir`. Returns the paths written.
pub fn write_outputs(results: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = vec![
        ("cells.csv", results.rows_csv()),
        ("table.csv", emit_table(results, TableFormat::Csv)?),
        ("table.json", emit_table(results, TableFormat::Json)?),
    ];
    if results.layers().len() >= 2 {
        files.push(("layer_trends.csv", emit_layer_trends(results)?));
    }
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RunMeta {
        RunMeta {
            seed: 1,
            k: 1,
            hyper: HyperParams::default(),
            hyper_hash: "h".into(),
            rule_version: "v1".into(),
            scenario_ii_policy: SCENARIO_II_POLICY.into(),
        }
    }

    fn row(concept: ConceptId, method: Method, scenario: Scenario, layer: usize, fold: usize, acc: Option<f64>) -> ResultRow {
        ResultRow {
            key: CellKey {
                concept,
                method,
                scenario,
                layer,
                fold,
            },
            seed: 0,
            hyper_hash: "h".into(),
            outcome: acc
                .map(|a| CellScore {
                    accuracy: a,
                    pairwise: None,
                    n_train: 10,
                    n_test: 4,
                })
                .ok_or_else(|| "boom".to_string()),
        }
    }

    const C: ConceptId = ConceptId::KnightOutposts;
    const M: Method = Method::Logistic;

    #[test]
    fn single_cell_table() {
        let t = ResultTable::from_rows(meta(), vec![row(C, M, Scenario::I, 2, 0, Some(0.75))]);
        assert_eq!(t.aggregates.len(), 1);
        assert_eq!((t.aggregates[0].mean, t.aggregates[0].std), (0.75, 0.0));
        let csv = emit_table(&t, TableFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "Knight Outposts,Log. Regression,0.75,0,2,,,,,,,,,,I");
        assert_eq!(csv, emit_table(&t, TableFormat::Csv).unwrap());
        assert!(matches!(emit_layer_trends(&t), Err(ExperimentError::TooFewLayers(1))));
    }

    #[test]
    fn aggregates_and_best_layer() {
        let mut rows = Vec::new();
        for (layer, accs) in [(2, [0.8, 0.6]), (5, [0.9, 0.9]), (10, [0.5, 0.7])] {
            for (f, a) in accs.iter().enumerate() {
                rows.push(row(C, M, Scenario::IV, layer, f, Some(*a)));
            }
        }
        rows.push(row(C, M, Scenario::IV, 15, 0, None));
        rows.push(row(C, M, Scenario::I, 2, 0, Some(0.95)));
        let t = ResultTable::from_rows(meta(), rows);
        assert_eq!(t.failures(), 1);
        let a = t
            .aggregate(AggKey {
                concept: C,
                method: M,
                scenario: Scenario::IV,
                layer: 2,
            })
            .unwrap();
        assert!((a.mean - 0.7).abs() < 1e-12 && (a.std - 0.1).abs() < 1e-12);
        let b: Vec<_> = t.best.iter().filter(|b| b.scenario == Scenario::IV).collect();
        assert_eq!(b[0].layer, 5);
        let rows = table_rows(&t);
        assert_eq!(rows[0].best_scenario.as_deref(), Some("I"));
        let trends = emit_layer_trends(&t).unwrap();
        assert_eq!(trends.lines().count(), 2 + 5);
        assert!(trends.contains("knight_outposts,logistic,IV,15,,"));
        let json = emit_table(&t, TableFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["rows"][0]["scenarios"]["IV"]["layer"], 5);
        assert!(v["rows"][0]["scenarios"]["II"].is_null());
    }

    #[test]
    fn four_layer_trends() {
        let rows = [2, 5, 10, 15].map(|l| row(C, M, Scenario::I, l, 0, Some(0.6)));
        let t = ResultTable::from_rows(meta(), rows.to_vec());
        assert_eq!(emit_layer_trends(&t).unwrap().lines().count(), 2 + 4);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn failed_rows_in_csv() {
        let t = ResultTable::from_rows(meta(), vec![row(C, M, Scenario::I, 2, 0, None)]);
        let csv = t.rows_csv();
        assert!(csv.lines().nth(2).unwrap().contains(",failed,,,,,0,h,boom"));
    }

    #[test]
    fn config_validation() {
        let ok = RunConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            RunConfig { scenarios: vec![], ..ok.clone() },
            RunConfig { methods: vec![], ..ok.clone() },
            RunConfig { k: 1, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(ExperimentError::BadConfig(_))));
        }
    }
}
