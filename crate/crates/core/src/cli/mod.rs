//! Experiment runner behind the `dcmtf` binary: configuration, data
//! loading, method dispatch, evaluation, sweeps and JSON reports.
//!
//! A config names one data source (a synthetic plant or matrix files), one
//! method and its settings. [`run`] turns it into a [`RunReport`] whose
//! `config` field echoes the effective configuration with absolute paths, so
//! a report can be re-executed as is.

mod io;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{load_labels, load_matrix, parse_dense_csv, parse_matrix_market, write_dense_csv, write_labels, MatrixFormat};
pub use report::{
    emit_report, emit_report_with, read_report, without_timings, AssociationReport, EntityReport, ReportMatrix,
    RunReport, Timings, SIDECAR_ENTRIES,
};

use crate::cfrm::{
    association, concatenated_views, extract_chains, src_fit, AssociationMatrix, ChainStart, CfrmInit, CfrmOptions,
    CfrmUpdate, ClusterChain, StepRecord, DEFAULT_SWEEPS,
};
use crate::clustering::{evaluate_partition, kmeans, silhouette, to_vigorous, ClusterIndicator, PartitionMetrics, DEFAULT_RESTARTS};
use crate::dcmtf::{construct, hpo_search, prepare_data, train, DcmtfHyper, DcmtfVariant, EpochRecord, SearchSpace, Trial};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_similarity, Sigma};
use crate::model::{build_graph, DataMatrix, DataType, Entity, EntityMatrixGraph};
use crate::spectral::{spectral_cluster_with, SpectralLaplacian, SpectralOptions};
use crate::synth::{generate, Plant, PlantSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Dcmtf,
    Cfrm,
    SpectralSingle,
    #[serde(rename = "kmeans_baseline")]
    KMeansBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub name: String,
    /// Inferred from the first matrix that uses the entity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub k: usize,
}

/// One input matrix; exactly one of `path` and `values` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub rows: String,
    pub cols: String,
    #[serde(default)]
    pub datatype: DataType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Defaults to the file extension: `.mtx` is MatrixMarket, else CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<MatrixFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synth {
        plant: PlantSpec,
        /// Score every entity against the planted clusters.
        #[serde(default = "yes")]
        evaluate_truth: bool,
    },
    Files {
        entities: Vec<EntitySpec>,
        matrices: Vec<MatrixSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTarget {
    pub entity: String,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfrmSettings {
    pub init: CfrmInit,
    pub sweeps: usize,
    pub update: CfrmUpdate,
    pub restarts: usize,
}

impl Default for CfrmSettings {
    fn default() -> Self {
        Self {
            init: CfrmInit::Random,
            sweeps: DEFAULT_SWEEPS,
            update: CfrmUpdate::Jacobi,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Settings for the single-view baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSettings {
    pub sigma: Sigma,
    pub laplacian: SpectralLaplacian,
    pub restarts: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            sigma: Sigma::Auto,
            laplacian: SpectralLaplacian::Unnormalized,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    /// Empty means one chain per matrix from its strongest block.
    #[serde(default)]
    pub starts: Vec<ChainStart>,
    /// Defaults to the number of matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Representation width.
    L,
    /// Cluster count, applied to every entity.
    K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<usize>,
}

fn default_budget() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Seeds the method (network init, k-means, search). A synthetic
    /// plant keeps its own seed so the data stay fixed across runs.
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub variant: DcmtfVariant,
    /// `hyper.seed` is replaced by `seed`.
    #[serde(default)]
    pub hyper: DcmtfHyper,
    /// Random search over this space (its `base` is replaced by `hyper`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSpace>,
    #[serde(default = "default_budget")]
    pub search_budget: usize,
    #[serde(default)]
    pub cfrm: CfrmSettings,
    #[serde(default)]
    pub baseline: BaselineSettings,
    /// Replaces every entity's cluster count when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evaluate: Vec<EvalTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chains: Option<ChainSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// Include the clustered points per entity in the report.
    #[serde(default)]
    pub embeddings: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn synth(plant: PlantSpec, method: Method) -> Self {
        Self {
            seed: 0,
            data: DataSource::Synth { plant, evaluate_truth: true },
            method,
            variant: DcmtfVariant::Full,
            hyper: DcmtfHyper::default(),
            search: None,
            search_budget: default_budget(),
            cfrm: CfrmSettings::default(),
            baseline: BaselineSettings::default(),
            cluster_k: None,
            evaluate: Vec::new(),
            chains: None,
            sweep: None,
            embeddings: false,
            output: None,
        }
    }

    /// Static checks: names, data sources, budgets and ranges. File
    /// existence is checked by [`load_config`] and when loading.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.search.is_some() && self.search_budget == 0 {
            return Err(Error::Config("search_budget must be at least 1".into()));
        }
        if self.cluster_k == Some(0) {
            return Err(Error::Config("cluster_k must be at least 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            if s.values.contains(&0) {
                return Err(Error::Config("sweep values must be positive".into()));
            }
        }
        if let DataSource::Files { entities, matrices } = &self.data {
            let mut seen = HashMap::new();
            for (i, e) in entities.iter().enumerate() {
                if seen.insert(e.name.as_str(), i).is_some() {
                    return Err(Error::Config(format!("entity '{}' declared twice", e.name)));
                }
            }
            for (m, spec) in matrices.iter().enumerate() {
                for name in [&spec.rows, &spec.cols] {
                    if !seen.contains_key(name.as_str()) {
                        return Err(Error::Config(format!("matrix {m} names unknown entity '{name}'")));
                    }
                }
                if spec.path.is_some() == spec.values.is_some() {
                    return Err(Error::Config(format!("matrix {m} needs exactly one of `path` and `values`")));
                }
            }
        }
        Ok(())
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut out: Vec<&mut PathBuf> = self.evaluate.iter_mut().map(|t| &mut t.labels).collect();
        if let DataSource::Files { matrices, .. } = &mut self.data {
            out.extend(matrices.iter_mut().filter_map(|m| m.path.as_mut()));
        }
        out
    }

    /// Makes every input path absolute relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn check_files(&mut self) -> Result<()> {
        for p in self.paths_mut() {
            let canon = fs::canonicalize(&*p).map_err(|e| Error::io(&*p, e))?;
            *p = canon;
        }
        Ok(())
    }
}

/// Reads TOML (`.toml`) or JSON (anything else), resolves input paths
/// against the config's directory and checks that they exist.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text, path)?;
    let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    cfg.resolve_paths(&base);
    cfg.check_files()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let is_toml = path.extension().and_then(|e| e.to_str()) == Some("toml");
    let parsed: std::result::Result<ExperimentConfig, String> = if is_toml {
        toml::from_str(text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|msg| Error::Config(format!("{}: {msg}", path.display())))
}

/// Loaded graph plus per-entity truth labels.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub graph: EntityMatrixGraph,
    pub truth: Vec<Option<Vec<usize>>>,
    pub plant: Option<Plant>,
}

fn files_graph(entities: &[EntitySpec], matrices: &[MatrixSpec]) -> Result<EntityMatrixGraph> {
    let index: HashMap<&str, usize> = entities.iter().enumerate().map(|(i, e)| (e.name.as_str(), i)).collect();
    let mut loaded = Vec::with_capacity(matrices.len());
    let mut counts: Vec<Option<usize>> = entities.iter().map(|e| e.count).collect();
    for (m, spec) in matrices.iter().enumerate() {
        let values = match (&spec.path, &spec.values) {
            (Some(p), None) => load_matrix(p, spec.format.unwrap_or_else(|| MatrixFormat::from_extension(p)))?,
            (None, Some(rows)) => {
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(Error::Config(format!("matrix {m}: ragged inline values")));
                }
                Array2::from_shape_vec((rows.len(), ncols), rows.iter().flatten().copied().collect())
                    .map_err(|e| Error::Config(e.to_string()))?
            }
            _ => return Err(Error::Config(format!("matrix {m} needs exactly one of `path` and `values`"))),
        };
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("matrix {m} names unknown entity '{name}'")))
        };
        let (r, c) = (lookup(&spec.rows)?, lookup(&spec.cols)?);
        counts[r].get_or_insert(values.nrows());
        counts[c].get_or_insert(values.ncols());
        loaded.push(DataMatrix::new(m, r, c, values, spec.datatype));
    }
    let ents = entities
        .iter()
        .enumerate()
        .map(|(i, e)| Ok(Entity::new(i, e.name.clone(), counts[i].ok_or(Error::DanglingEntity(i))?, e.k)))
        .collect::<Result<Vec<_>>>()?;
    build_graph(ents, loaded)
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    let (mut graph, mut truth, plant) = match &cfg.data {
        DataSource::Synth { plant, evaluate_truth } => {
            let p = generate(plant)?;
            let g = p.graph()?;
            let truth = if *evaluate_truth {
                p.truth.indicators.iter().map(|i| Some(i.assignments.clone())).collect()
            } else {
                vec![None; g.n_entities()]
            };
            (g, truth, Some(p))
        }
        DataSource::Files { entities, matrices } => {
            let g = files_graph(entities, matrices)?;
            let n = g.n_entities();
            (g, vec![None; n], None)
        }
    };
    for t in &cfg.evaluate {
        let e = graph
            .entities
            .iter()
            .position(|x| x.name == t.entity)
            .ok_or_else(|| Error::Config(format!("evaluation names unknown entity '{}'", t.entity)))?;
        let labels = load_labels(&t.labels)?;
        if labels.len() != graph.entities[e].count {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for entity '{}' with {} instances",
                labels.len(),
                t.entity,
                graph.entities[e].count
            )));
        }
        truth[e] = Some(labels);
    }
    if let Some(k) = cfg.cluster_k {
        graph = graph.with_ks(&vec![k; graph.n_entities()])?;
    }
    Ok(Inputs { graph, truth, plant })
}

/// What every method hands back for reporting.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub indicators: Vec<ClusterIndicator>,
    /// The points each entity was clustered on.
    pub points: Vec<Array2<f64>>,
    pub associations: Vec<AssociationMatrix>,
    pub loss_history: Vec<EpochRecord>,
    pub trace_history: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub trials: Vec<Trial>,
    pub iterations: usize,
    pub converged: bool,
}

impl MethodFit {
    fn from_indicators(g: &EntityMatrixGraph, indicators: Vec<ClusterIndicator>, points: Vec<Array2<f64>>) -> Result<Self> {
        let js = indicators.iter().map(to_vigorous).collect::<Result<Vec<_>>>()?;
        let associations = g
            .matrices
            .iter()
            .map(|x| association(x, &js[x.rows], &js[x.cols]))
            .collect::<Result<_>>()?;
        Ok(Self {
            indicators,
            points,
            associations,
            loss_history: Vec::new(),
            trace_history: Vec::new(),
            steps: Vec::new(),
            trials: Vec::new(),
            iterations: 0,
            converged: true,
        })
    }
}

pub fn fit_method(cfg: &ExperimentConfig, g: &EntityMatrixGraph) -> Result<MethodFit> {
    let seed = cfg.seed;
    match cfg.method {
        Method::Dcmtf => {
            let hyper = DcmtfHyper { seed, ..cfg.hyper };
            let (result, trials) = match &cfg.search {
                Some(space) => {
                    let space = SearchSpace { base: hyper, ..space.clone() };
                    let out = hpo_search(g, &space, cfg.search_budget, seed, cfg.variant)?;
                    (out.best, out.trials)
                }
                None => {
                    let data = prepare_data(g)?;
                    let mut net = construct(g, hyper, cfg.variant)?;
                    (train(&mut net, g, &data)?, Vec::new())
                }
            };
            Ok(MethodFit {
                indicators: result.indicators,
                points: result.c,
                associations: result.associations,
                loss_history: result.loss_history,
                trace_history: Vec::new(),
                steps: Vec::new(),
                trials,
                iterations: result.epochs_run,
                converged: result.converged,
            })
        }
        Method::Cfrm => {
            let s = cfg.cfrm;
            let opts = CfrmOptions { init: s.init, sweeps: s.sweeps, seed, update: s.update, restarts: s.restarts };
            let r = src_fit(g, opts)?;
            Ok(MethodFit {
                indicators: r.indicators,
                points: r.embeddings,
                associations: r.associations,
                loss_history: Vec::new(),
                trace_history: r.trace_history,
                steps: r.steps,
                trials: Vec::new(),
                iterations: r.sweeps_run,
                converged: r.converged,
            })
        }
        Method::SpectralSingle => {
            let b = cfg.baseline;
            let opts = SpectralOptions { laplacian: b.laplacian, restarts: b.restarts };
            let mut indicators = Vec::new();
            let mut points = Vec::new();
            for e in 0..g.n_entities() {
                let views = concatenated_views(g, e)?;
                let s = gaussian_similarity(views.view(), b.sigma)?;
                let fit = spectral_cluster_with(&s, g.entities[e].k, seed.wrapping_add(e as u64), opts)?;
                indicators.push(fit.indicator);
                points.push(fit.embedding);
            }
            MethodFit::from_indicators(g, indicators, points)
        }
        Method::KMeansBaseline => {
            let mut indicators = Vec::new();
            let mut points = Vec::new();
            for e in 0..g.n_entities() {
                let views = concatenated_views(g, e)?;
                indicators.push(kmeans(views.view(), g.entities[e].k, seed.wrapping_add(e as u64), cfg.baseline.restarts)?);
                points.push(views);
            }
            MethodFit::from_indicators(g, indicators, points)
        }
    }
}

fn strongest_block(a: &Array2<f64>) -> (usize, usize) {
    let mut best = ((0, 0), f64::NEG_INFINITY);
    for ((u, v), &x) in a.indexed_iter() {
        if x.abs() > best.1 {
            best = ((u, v), x.abs());
        }
    }
    best.0
}

/// Chains from the configured starts, or one per matrix from its strongest
/// block.
pub fn chains_for(g: &EntityMatrixGraph, assocs: &[AssociationMatrix], settings: &ChainSettings) -> Result<Vec<ClusterChain>> {
    let max_len = settings.max_len.unwrap_or(g.n_matrices());
    let starts: Vec<ChainStart> = if settings.starts.is_empty() {
        assocs
            .iter()
            .map(|a| {
                let (u, v) = strongest_block(&a.a);
                ChainStart { matrix: a.matrix_id, row_cluster: u, col_cluster: v }
            })
            .collect()
    } else {
        settings.starts.clone()
    };
    starts.into_iter().map(|s| extract_chains(g, assocs, s, max_len)).collect()
}

fn silhouette_or_none(points: &Array2<f64>, ind: &ClusterIndicator) -> Result<Option<f64>> {
    match silhouette(points.view(), ind) {
        Ok(s) => Ok(Some(s)),
        Err(Error::SingleCluster) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn evaluate_labels(pred: &[usize], truth: &[usize]) -> Result<PartitionMetrics> {
    evaluate_partition(&ClusterIndicator::from_labels(pred), &ClusterIndicator::from_labels(truth))
}

/// Runs one configuration. `sweep` is ignored here; see [`run_sweep`].
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let t0 = Instant::now();
    let mut stages = BTreeMap::new();

    let inputs = load_inputs(cfg).map_err(|e| e.in_stage("load"))?;
    stages.insert("load".to_string(), t0.elapsed().as_secs_f64());
    let g = &inputs.graph;

    let t = Instant::now();
    let fit = fit_method(cfg, g).map_err(|e| e.in_stage("fit"))?;
    stages.insert("fit".to_string(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let mut entities = Vec::with_capacity(g.n_entities());
    for (e, ent) in g.entities.iter().enumerate() {
        let ind = &fit.indicators[e];
        let sil = silhouette_or_none(&fit.points[e], ind).map_err(|err| err.in_stage("evaluate"))?;
        let metrics = match &inputs.truth[e] {
            Some(t) => {
                let mut m = evaluate_labels(&ind.assignments, t).map_err(|err| err.in_stage("evaluate"))?;
                m.silhouette = sil;
                Some(m)
            }
            None => None,
        };
        entities.push(EntityReport {
            name: ent.name.clone(),
            k: ent.k,
            assignments: ind.assignments.clone(),
            silhouette: sil,
            metrics,
            embedding: cfg.embeddings.then(|| ReportMatrix::from_array(&fit.points[e])),
        });
    }
    let associations = fit
        .associations
        .iter()
        .map(|a| {
            let x = &g.matrices[a.matrix_id];
            AssociationReport {
                matrix: a.matrix_id,
                row_entity: g.entities[x.rows].name.clone(),
                col_entity: g.entities[x.cols].name.clone(),
                values: ReportMatrix::from_array(&a.a),
            }
        })
        .collect();
    let chains = match &cfg.chains {
        Some(s) => chains_for(g, &fit.associations, s).map_err(|e| e.in_stage("chains"))?,
        None => Vec::new(),
    };
    stages.insert("evaluate".to_string(), t.elapsed().as_secs_f64());

    let mut echo = cfg.clone();
    echo.sweep = None;
    echo.output = None;
    Ok(RunReport {
        version: VERSION.to_string(),
        config: echo,
        entities,
        associations,
        loss_history: fit.loss_history,
        trace_history: fit.trace_history,
        cfrm_steps: fit.steps,
        trials: fit.trials,
        chains,
        iterations: fit.iterations,
        converged: fit.converged,
        timings: Timings { total_secs: t0.elapsed().as_secs_f64(), stages },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub value: usize,
    pub seed: u64,
    /// Per evaluated entity.
    pub ari: BTreeMap<String, f64>,
    pub mean_ari: Option<f64>,
    pub mean_silhouette: Option<f64>,
    /// `L1 + L2` of the last epoch for DCMTF runs.
    pub final_loss: Option<f64>,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub version: String,
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

impl SweepSummary {
    /// Fixed-width text table, one row per point.
    pub fn table(&self) -> String {
        let name = match self.param {
            SweepParam::L => "l",
            SweepParam::K => "k",
        };
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut s = format!("{name:>6} {:>10} {:>10} {:>14}\n", "mean_ari", "silhouette", "final_loss");
        for p in &self.points {
            s.push_str(&format!(
                "{:>6} {:>10} {:>10} {:>14}\n",
                p.value,
                fmt(p.mean_ari),
                fmt(p.mean_silhouette),
                fmt(p.final_loss)
            ));
        }
        s
    }
}

pub fn sweep_configs(cfg: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let spec = cfg.sweep.as_ref().ok_or_else(|| Error::Config("config has no `sweep` section".into()))?;
    Ok(spec
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = cfg.clone();
            c.sweep = None;
            c.output = None;
            c.seed = cfg.seed.wrapping_add(i as u64);
            match spec.param {
                SweepParam::L => c.hyper.l = v,
                SweepParam::K => c.cluster_k = Some(v),
            }
            c
        })
        .collect())
}

/// Runs every sweep point (concurrently, seed + point index) and writes
/// `point_<i>.json` plus `summary.json` into `out_dir`.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Vec<RunReport>, SweepSummary)> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let spec = cfg.sweep.clone().ok_or_else(|| Error::Config("config has no `sweep` section".into()))?;
    let configs = sweep_configs(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let reports = configs.par_iter().map(run).collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(reports.len());
    for (i, (r, c)) in reports.iter().zip(&configs).enumerate() {
        let name = format!("point_{i}.json");
        emit_report(r, &out_dir.join(&name)).map_err(|e| e.in_stage("report"))?;
        let ari = r
            .entities
            .iter()
            .filter_map(|e| e.metrics.map(|m| (e.name.clone(), m.ari)))
            .collect();
        let sils: Vec<f64> = r.entities.iter().filter_map(|e| e.silhouette).collect();
        points.push(SweepPoint {
            index: i,
            value: spec.values[i],
            seed: c.seed,
            ari,
            mean_ari: r.mean_ari(),
            mean_silhouette: (!sils.is_empty()).then(|| sils.iter().sum::<f64>() / sils.len() as f64),
            final_loss: r.loss_history.last().map(|h| h.l1 + h.l2),
            report: name,
        });
    }
    let summary = SweepSummary { version: VERSION.to_string(), param: spec.param, points };
    let path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok((reports, summary))
}

/// Writes a plant as CSV matrices, truth label files, `plant.json` and a
/// ready-to-run `experiment.json` (file source, every entity evaluated).
/// Returns the experiment config path.
pub fn write_plant(spec: &PlantSpec, dir: &Path) -> Result<PathBuf> {
    let plant = generate(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dir = fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<String> = plant.entities.iter().map(|e| e.name.clone()).collect();
    let mut matrices = Vec::new();
    for x in &plant.matrices {
        let file = dir.join(format!("X{}_{}_{}.csv", x.id, names[x.rows], names[x.cols]));
        write_dense_csv(&file, &x.values)?;
        matrices.push(MatrixSpec {
            rows: names[x.rows].clone(),
            cols: names[x.cols].clone(),
            datatype: x.datatype,
            path: Some(file),
            format: Some(MatrixFormat::DenseCsv),
            values: None,
        });
    }
    let mut evaluate = Vec::new();
    for (e, ind) in plant.truth.indicators.iter().enumerate() {
        let file = dir.join(format!("{}.labels.csv", names[e]));
        write_labels(&file, &ind.assignments)?;
        evaluate.push(EvalTarget { entity: names[e].clone(), labels: file });
    }
    let spec_path = dir.join("plant.json");
    let text = serde_json::to_string_pretty(spec).map_err(|e| Error::Config(e.to_string()))? + "\n";
    fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;

    let entities = plant
        .entities
        .iter()
        .map(|e| EntitySpec { name: e.name.clone(), count: Some(e.count), k: e.k })
        .collect();
    let mut cfg = ExperimentConfig::synth(spec.clone(), Method::Dcmtf);
    cfg.data = DataSource::Files { entities, matrices };
    cfg.evaluate = evaluate;
    let cfg_path = dir.join("experiment.json");
    let text = serde_json::to_string_pretty(&cfg).map_err(|e| Error::Config(e.to_string()))? + "\n";
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(cfg_path)
}

/// Process exit code for an error: 3 for numerical failures, 2 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}
