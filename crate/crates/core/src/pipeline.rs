//! Orchestration shared by the command-line tool and the benchmarks: loading
//! inputs, running an engine, scoring and ranking routes, and writing run
//! artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{class_features, cluster_routes, score_route, score_route_known_class, train_class_model, ClassExample, ClassModel, ClassModelParams, RouteScore};
use crate::catalog::{sha256_hex, Catalog, CatalogError, FpParams};
use crate::evaluate::{Evaluator, FpCache};
use crate::forward::{ForwardError, ForwardModel, ReactantSet};
use crate::neighbors::NeighborIndex;
use crate::posterior::{EnergySpec, PosteriorError, Target};
use crate::routes::{
    chain_ground_truth, format_reactions, format_two_step, parse_reactions, rank_routes, write_ranked_csv, evaluate, EvalSummary, Reaction, RankedRoute,
    RouteError, Truth, TOP_N,
};
use crate::smc::{build_training_set, particle_features, simple_smc, surrogate_smc, GbmSurrogate, RunOutput, SmcConfig, SmcError, TrainingSet};
use crate::synth::{split_corpus, Benchmark};
use crate::templates::{TemplateError, TemplateLibrary, ToyModel, CLASS_COUNT};
use crate::wire::{Endpoint, RemoteModel};

pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const ROUTES_FILE: &str = "routes.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("budget: {0}")]
    Budget(String),
    #[error("model server: {0}")]
    Protocol(String),
}

impl PipelineError {
    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Io(_) => 2,
            PipelineError::Budget(_) => 3,
            PipelineError::Protocol(_) => 4,
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<CatalogError> for PipelineError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io(_) => PipelineError::Io(e.to_string()),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<TemplateError> for PipelineError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::Io(_) => PipelineError::Io(e.to_string()),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<ForwardError> for PipelineError {
    fn from(e: ForwardError) -> Self {
        match e {
            ForwardError::Transport(_) | ForwardError::Protocol(_) => PipelineError::Protocol(e.to_string()),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<SmcError> for PipelineError {
    fn from(e: SmcError) -> Self {
        match e {
            SmcError::Budget { .. } => PipelineError::Budget(e.to_string()),
            SmcError::Forward(f) => f.into(),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<RouteError> for PipelineError {
    fn from(e: RouteError) -> Self {
        match e {
            RouteError::Io(_) => PipelineError::Io(e.to_string()),
            RouteError::Forward(f) => f.into(),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<PosteriorError> for PipelineError {
    fn from(e: PosteriorError) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Surrogate,
    Simple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub catalog: PathBuf,
    /// Template library JSON; the built-in library when absent.
    pub templates: Option<PathBuf>,
    pub target: String,
    pub engine: Engine,
    #[serde(flatten)]
    pub smc: SmcConfig,
    pub energy: EnergySpec,
    pub fingerprint: FpParams,
    /// Labeled reactions for the class model; uniform class probabilities
    /// when absent.
    pub class_corpus: Option<PathBuf>,
    pub class_model: ClassModelParams,
    /// Rank by the probability of this class instead of the best class.
    pub known_class: Option<usize>,
    /// Number of top-ranked routes clustered.
    pub cluster_top: usize,
    pub cluster_k_max: usize,
    /// `host:port` or `stdio:<command>`; overrides the environment.
    pub model_server: Option<String>,
    pub server_retries: u32,
    pub server_timeout_secs: u64,
    pub record_timestamps: bool,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            catalog: PathBuf::from("catalog.smi"),
            templates: None,
            target: String::new(),
            engine: Engine::Surrogate,
            smc: SmcConfig::default(),
            energy: EnergySpec::default(),
            fingerprint: FpParams::default(),
            class_corpus: None,
            class_model: ClassModelParams::default(),
            known_class: None,
            cluster_top: 500,
            cluster_k_max: 50,
            model_server: None,
            server_retries: 3,
            server_timeout_secs: 60,
            record_timestamps: false,
            output: PathBuf::from("run"),
        }
    }
}

const PATH_KEYS: [&str; 4] = ["catalog", "templates", "class_corpus", "output"];

/// Reject top-level keys the type does not know.
fn check_keys<T: Serialize + Default>(value: &Value) -> Result<(), PipelineError> {
    let known = serde_json::to_value(T::default()).expect("config serializes");
    let (Some(known), Some(given)) = (known.as_object(), value.as_object()) else {
        return Err(PipelineError::Config("config must be a JSON object".into()));
    };
    let mut unknown: Vec<&String> = given.keys().filter(|k| !known.contains_key(*k)).collect();
    unknown.sort();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Config(format!("unknown config keys: {unknown:?}")))
    }
}

/// Resolve relative path values against `base`.
fn resolve_paths(value: &mut Value, base: &Path, keys: &[&str]) {
    if let Some(obj) = value.as_object_mut() {
        for k in keys {
            if let Some(Value::String(s)) = obj.get(*k) {
                let p = Path::new(s);
                if p.is_relative() {
                    obj.insert(k.to_string(), Value::String(base.join(p).to_string_lossy().into_owned()));
                }
            }
        }
    }
}

/// Parse a config document, resolving relative paths against the file's
/// directory, then apply `key=value` overrides to top-level keys. Override
/// values are read as JSON when they parse, otherwise as strings.
pub fn load_config<T>(path: &Path, overrides: &[(String, String)], path_keys: &[&str]) -> Result<T, PipelineError>
where
    T: Serialize + for<'de> Deserialize<'de> + Default,
{
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve_paths(&mut value, &base, path_keys);
    config_from_value(value, overrides)
}

pub fn config_from_value<T>(mut value: Value, overrides: &[(String, String)]) -> Result<T, PipelineError>
where
    T: Serialize + for<'de> Deserialize<'de> + Default,
{
    let obj = value.as_object_mut().ok_or_else(|| PipelineError::Config("config must be a JSON object".into()))?;
    for (k, v) in overrides {
        let parsed = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone()));
        obj.insert(k.clone(), parsed);
    }
    check_keys::<T>(&value)?;
    serde_json::from_value(value).map_err(|e| PipelineError::Config(e.to_string()))
}

pub fn load_run_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, PipelineError> {
    load_config(path, overrides, &PATH_KEYS)
}

/// Forward model: the remote server when an address is configured or set in
/// the environment, otherwise the in-process template model.
pub fn forward_model(
    library: &TemplateLibrary,
    server: Option<&str>,
    retries: u32,
    timeout: Duration,
) -> Result<Box<dyn ForwardModel>, PipelineError> {
    let endpoint = match server {
        Some(s) => Some(Endpoint::parse(s)?),
        None => Endpoint::from_env().transpose()?,
    };
    Ok(match endpoint {
        Some(e) => Box::new(RemoteModel::connect(e, retries, timeout)?),
        None => Box::new(ToyModel::new(library.clone())),
    })
}

/// Inputs shared by every run against one catalog.
pub struct Workspace {
    pub catalog: Catalog,
    pub library: TemplateLibrary,
    pub model: Box<dyn ForwardModel>,
    pub fps: FpCache,
    pub energy: EnergySpec,
    pub class_model: ClassModel,
}

impl Workspace {
    pub fn new(catalog: Catalog, library: TemplateLibrary, model: Box<dyn ForwardModel>, energy: EnergySpec) -> Self {
        let fps = FpCache::new(catalog.params());
        let dim = 2 * catalog.params().n_bits as usize;
        Workspace { catalog, library, model, fps, energy, class_model: ClassModel::uniform(CLASS_COUNT, dim) }
    }

    pub fn class_dim(&self) -> usize {
        2 * self.catalog.params().n_bits as usize
    }

    pub fn target(&self, smiles: &str) -> Result<Target, PipelineError> {
        Target::new(smiles, self.catalog.params()).map_err(|e| PipelineError::Config(format!("target {smiles:?}: {e}")))
    }

    fn fingerprint_of(&self, smiles: &str) -> std::sync::Arc<retrosmc_chem::Fingerprint> {
        match self.catalog.index_of(smiles) {
            Some(i) => std::sync::Arc::new(self.catalog.fingerprint(i).clone()),
            None => self.fps.get(smiles),
        }
    }

    /// Class-model descriptor of a reaction.
    pub fn reaction_features(&self, reactants: &[String], product: &str) -> Vec<u32> {
        let p = self.fps.get(product);
        let r: Vec<_> = reactants.iter().map(|s| self.fingerprint_of(s)).collect();
        let refs: Vec<&retrosmc_chem::Fingerprint> = r.iter().map(|a| a.as_ref()).collect();
        class_features(&p, &refs)
    }

    pub fn class_examples(&self, reactions: &[Reaction]) -> Vec<ClassExample> {
        reactions
            .iter()
            .filter_map(|r| {
                r.class_id.map(|c| ClassExample { features: self.reaction_features(&r.reactants, &r.product), class_id: c })
            })
            .collect()
    }

    pub fn train_class_model(&mut self, corpus: &[Reaction], params: ClassModelParams) -> Result<(), PipelineError> {
        let ex = self.class_examples(corpus);
        self.class_model =
            train_class_model(&ex, CLASS_COUNT, self.class_dim(), params).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// γ for every route of a run; scored on the final step.
    pub fn score_routes(&self, out: &RunOutput, known_class: Option<usize>) -> Result<BTreeMap<String, RouteScore>, PipelineError> {
        let mut scores = BTreeMap::new();
        for (key, rec) in &out.routes {
            let features = rec.outcome.final_product().map(|p| {
                let reactants = rec.outcome.last_step_reactants(&rec.particle, &rec.shape, &self.catalog);
                self.reaction_features(&reactants, p)
            });
            let alpha = rec.outcome.alpha();
            let s = match known_class {
                None => score_route(&self.class_model, alpha, features.as_deref()),
                Some(c) => score_route_known_class(&self.class_model, alpha, features.as_deref(), c)
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
            };
            scores.insert(key.clone(), s);
        }
        Ok(scores)
    }

    pub fn rank(&self, out: &RunOutput, known_class: Option<usize>) -> Result<Vec<RankedRoute>, PipelineError> {
        let scores = self.score_routes(out, known_class)?;
        Ok(rank_routes(scores.into_iter().map(|(k, s)| (k.clone(), out.routes[&k].energy, s)).collect()))
    }

    /// Draw and evaluate the surrogate training set for `target`, then fit.
    pub fn prepare_surrogate(&self, target: &Target, cfg: &SmcConfig, seed: u64) -> Result<(TrainingSet, GbmSurrogate), PipelineError> {
        let mut ev = Evaluator::new(self.model.as_ref(), &self.catalog, target, self.energy, &self.fps, None);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let training = build_training_set(cfg.last_shape(), &mut ev, cfg.training_size, &mut rng)?;
        let surrogate = training.fit(cfg.gbm, self.energy.max())?;
        Ok((training, surrogate))
    }

    /// One engine run; the surrogate engine needs `prepared`.
    pub fn run_engine(
        &self,
        index: &NeighborIndex,
        target: &Target,
        cfg: &SmcConfig,
        engine: Engine,
        prepared: Option<&(TrainingSet, GbmSurrogate)>,
    ) -> Result<RunOutput, PipelineError> {
        let mut ev = Evaluator::new(self.model.as_ref(), &self.catalog, target, self.energy, &self.fps, cfg.budget);
        Ok(match engine {
            Engine::Simple => simple_smc(cfg, &mut ev, index)?,
            Engine::Surrogate => {
                let (training, surrogate) = prepared.ok_or_else(|| PipelineError::Config("surrogate engine needs a trained surrogate".into()))?;
                surrogate_smc(cfg, &mut ev, index, surrogate, Some(training))?
            }
        })
    }
}

/// Seed for the surrogate training draw, distinct from the run's stream.
pub fn training_seed(seed: u64) -> u64 {
    mix(seed, 0x7261_696e)
}

/// SplitMix64 of `a` combined with `b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unix_seconds() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn load_library(path: Option<&Path>) -> Result<TemplateLibrary, PipelineError> {
    Ok(match path {
        Some(p) => TemplateLibrary::load(p)?,
        None => TemplateLibrary::builtin(),
    })
}

pub fn write_trace_csv<W: Write>(out: &RunOutput, w: W) -> Result<(), PipelineError> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["step", "best_energy", "distinct_keys", "forward_calls"])?;
    for t in &out.trace {
        c.write_record([t.step.to_string(), t.best_energy.to_string(), t.distinct_keys.to_string(), t.forward_calls.to_string()])?;
    }
    c.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster_id: usize,
    pub size: usize,
    pub representative_key: String,
    pub mean_gamma: f64,
}

/// Cluster the best `top` ranked routes and tag them with cluster ids.
pub fn cluster_ranked(
    ws: &Workspace,
    out: &RunOutput,
    ranked: &mut [RankedRoute],
    top: usize,
    k_max: usize,
    seed: u64,
) -> Vec<ClusterRow> {
    let n = ranked.len().min(top);
    if n == 0 {
        return Vec::new();
    }
    let keys: Vec<String> = ranked[..n].iter().map(|r| r.key.clone()).collect();
    let feats: Vec<Vec<(u32, u32)>> = keys.iter().map(|k| particle_features(&out.routes[k].particle, &ws.catalog)).collect();
    let refs: Vec<&[(u32, u32)]> = feats.iter().map(Vec::as_slice).collect();
    let gamma: BTreeMap<String, f64> = ranked[..n].iter().map(|r| (r.key.clone(), r.gamma)).collect();
    let report = cluster_routes(&keys, &refs, &gamma, ws.catalog.params().n_bits as usize, k_max, seed);
    for r in ranked[..n].iter_mut() {
        r.cluster_id = report.assignments.get(&r.key).copied();
    }
    let mut rows: Vec<ClusterRow> = report
        .representatives
        .iter()
        .enumerate()
        .map(|(c, rep)| ClusterRow { cluster_id: c, size: 0, representative_key: rep.clone(), mean_gamma: 0.0 })
        .collect();
    for (key, &c) in &report.assignments {
        rows[c].size += 1;
        rows[c].mean_gamma += gamma[key];
    }
    for r in rows.iter_mut() {
        r.mean_gamma /= r.size.max(1) as f64;
    }
    rows
}

pub fn write_clusters_csv<W: Write>(rows: &[ClusterRow], w: W) -> Result<(), PipelineError> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["cluster_id", "size", "representative_key", "mean_gamma"])?;
    for r in rows {
        c.write_record([r.cluster_id.to_string(), r.size.to_string(), r.representative_key.clone(), r.mean_gamma.to_string()])?;
    }
    c.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output: PathBuf,
    pub forward_calls: u64,
    pub distinct_keys: usize,
    pub zero_energy_routes: usize,
    pub truncated: bool,
}

/// Execute a configured run and write its artifacts.
pub fn execute_run(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    cfg.smc.validate()?;
    let started = unix_seconds();
    let catalog = Catalog::load(&cfg.catalog, cfg.fingerprint)?;
    let library = load_library(cfg.templates.as_deref())?;
    let model = forward_model(&library, cfg.model_server.as_deref(), cfg.server_retries, Duration::from_secs(cfg.server_timeout_secs))?;
    let mut ws = Workspace::new(catalog, library, model, cfg.energy);
    if let Some(corpus) = &cfg.class_corpus {
        let text = fs::read_to_string(corpus).map_err(|e| PipelineError::Io(format!("{}: {e}", corpus.display())))?;
        ws.train_class_model(&parse_reactions(&text)?, cfg.class_model)?;
    }
    let target = ws.target(&cfg.target)?;
    let index = NeighborIndex::build(&ws.catalog, cfg.smc.k_nn).map_err(|e| PipelineError::Config(e.to_string()))?;
    let prepared = match cfg.engine {
        Engine::Surrogate => {
            let needed = cfg.smc.training_size as u64 + cfg.smc.particles as u64;
            if let Some(b) = cfg.smc.budget {
                if b < needed {
                    return Err(PipelineError::Budget(format!("budget {b} cannot cover {needed} training and initial evaluations")));
                }
            }
            Some(ws.prepare_surrogate(&target, &cfg.smc, training_seed(cfg.smc.seed))?)
        }
        Engine::Simple => None,
    };
    let out = ws.run_engine(&index, &target, &cfg.smc, cfg.engine, prepared.as_ref())?;
    let mut ranked = ws.rank(&out, cfg.known_class)?;
    let clusters = cluster_ranked(&ws, &out, &mut ranked, cfg.cluster_top, cfg.cluster_k_max, cfg.smc.seed);

    fs::create_dir_all(&cfg.output).map_err(|e| PipelineError::Io(format!("{}: {e}", cfg.output.display())))?;
    let create = |name: &str| fs::File::create(cfg.output.join(name)).map_err(|e| PipelineError::Io(format!("{name}: {e}")));
    out.table.write_csv(std::io::BufWriter::new(create(POSTERIOR_FILE)?))?;
    write_ranked_csv(&ranked, std::io::BufWriter::new(create(ROUTES_FILE)?))?;
    write_clusters_csv(&clusters, std::io::BufWriter::new(create(CLUSTERS_FILE)?))?;
    write_trace_csv(&out, std::io::BufWriter::new(create(TRACE_FILE)?))?;

    let mut echo = serde_json::to_value(cfg).expect("config serializes");
    echo.as_object_mut().expect("object").remove("output");
    let mut manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": echo,
        "seed": cfg.smc.seed,
        "target": target.smiles(),
        "catalog_digest": ws.catalog.digest(),
        "library_digest": sha256_hex(ws.library.to_json().as_bytes()),
        "forward_calls": out.forward_calls,
        "training_calls": prepared.as_ref().map_or(0, |p| p.0.rows.len()),
        "predict_calls": out.predict_calls,
        "distinct_keys": out.table.len(),
        "truncated": out.truncated,
    });
    if cfg.record_timestamps {
        manifest["started_at"] = json!(started);
        manifest["finished_at"] = json!(unix_seconds());
    }
    let mut f = create(MANIFEST_FILE)?;
    f.write_all(serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())?;
    f.write_all(b"\n")?;

    Ok(RunSummary {
        output: cfg.output.clone(),
        forward_calls: out.forward_calls,
        distinct_keys: out.table.len(),
        zero_energy_routes: ranked.iter().filter(|r| r.energy == 0.0).count(),
        truncated: out.truncated,
    })
}

/// Catalog reactants of every step of a route key.
pub fn key_reactants(key: &str) -> Vec<&str> {
    key.split(">>").flat_map(|step| step.split('.')).filter(|s| !s.is_empty()).collect()
}

/// Augmented count vector of a route key's catalog reactants.
pub fn key_vector(catalog: &Catalog, key: &str) -> Result<Vec<(u32, u32)>, PipelineError> {
    let fps = key_reactants(key)
        .into_iter()
        .map(|s| catalog.index_of(s).map(|i| catalog.fingerprint(i)).ok_or_else(|| PipelineError::Config(format!("route reactant {s} not in catalog"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(retrosmc_chem::augment(fps).map_err(|e| PipelineError::Config(e.to_string()))?.counts().to_vec())
}

pub fn format_sparse(v: &[(u32, u32)]) -> String {
    v.iter().map(|(i, c)| format!("{i}:{c}")).collect::<Vec<_>>().join(" ")
}

/// One row per ranked route of a finished run: key, sparse vector, cluster
/// id and γ.
pub fn export_vectors<W: Write>(run_dir: &Path, w: W) -> Result<usize, PipelineError> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let routes_path = run_dir.join(ROUTES_FILE);
    for p in [&manifest_path, &routes_path] {
        if !p.is_file() {
            return Err(PipelineError::Io(format!("run directory is incomplete: {} missing", p.display())));
        }
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", manifest_path.display())))?;
    let cfg: RunConfig = serde_json::from_value(manifest["config"].clone()).map_err(|e| PipelineError::Config(format!("manifest config: {e}")))?;
    let catalog = Catalog::load(&cfg.catalog, cfg.fingerprint)?;
    if catalog.digest() != manifest["catalog_digest"].as_str().unwrap_or_default() {
        return Err(PipelineError::Config("catalog changed since the run".into()));
    }
    let ranked = crate::routes::read_ranked_csv(fs::File::open(&routes_path)?)?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["key", "vector", "cluster_id", "gamma"])?;
    for r in &ranked {
        let v = key_vector(&catalog, &r.key)?;
        c.write_record([r.key.clone(), format_sparse(&v), r.cluster_id.map(|x| x.to_string()).unwrap_or_default(), r.gamma.to_string()])?;
    }
    c.flush()?;
    Ok(ranked.len())
}

pub const BENCH_CATALOG: &str = "catalog.smi";
pub const BENCH_TEMPLATES: &str = "templates.json";
pub const BENCH_TRUTHS: &str = "truths.txt";
pub const BENCH_TWO_STEP: &str = "two_step.txt";
pub const BENCH_CORPUS: &str = "class_corpus.txt";

pub fn write_benchmark(dir: &Path, b: &Benchmark) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    let mut catalog = b.catalog.join("\n");
    catalog.push('\n');
    fs::write(dir.join(BENCH_CATALOG), catalog)?;
    fs::write(dir.join(BENCH_TEMPLATES), b.library.to_json() + "\n")?;
    fs::write(dir.join(BENCH_TRUTHS), format_reactions(&b.truths))?;
    fs::write(dir.join(BENCH_TWO_STEP), format_two_step(&chain_ground_truth(&b.truths)))?;
    fs::write(dir.join(BENCH_CORPUS), format_reactions(&b.corpus))?;
    Ok(())
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark, PipelineError> {
    let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.join(name).display())));
    let catalog: Vec<String> = read(BENCH_CATALOG)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    let library = TemplateLibrary::from_json(&read(BENCH_TEMPLATES)?)?;
    let truths = parse_reactions(&read(BENCH_TRUTHS)?)?;
    let corpus = match read(BENCH_CORPUS) {
        Ok(t) => parse_reactions(&t)?,
        Err(_) => Vec::new(),
    };
    Ok(Benchmark { catalog, library, truths, corpus })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    #[default]
    OneStep,
    TwoStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Directory written by gen-benchmark; generated in memory when absent.
    pub benchmark: Option<PathBuf>,
    pub benchmark_seed: u64,
    pub mode: BenchMode,
    /// Indices into the truth list; all truths when absent.
    pub targets: Option<Vec<usize>>,
    /// Runs per target. Run seeds derive from `seed` (the master seed).
    pub seeds: usize,
    pub engine: Engine,
    #[serde(flatten)]
    pub smc: SmcConfig,
    pub energy: EnergySpec,
    pub fingerprint: FpParams,
    pub class_model: ClassModelParams,
    /// Rank with the recorded reaction class instead of the best class.
    pub known_class: bool,
    pub model_server: Option<String>,
    pub server_retries: u32,
    pub server_timeout_secs: u64,
    pub output: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            benchmark: None,
            benchmark_seed: 0,
            mode: BenchMode::OneStep,
            targets: None,
            seeds: 10,
            engine: Engine::Surrogate,
            smc: SmcConfig::default(),
            energy: EnergySpec::default(),
            fingerprint: FpParams::default(),
            class_model: ClassModelParams::default(),
            known_class: false,
            model_server: None,
            server_retries: 3,
            server_timeout_secs: 60,
            output: None,
        }
    }
}

pub fn load_bench_config(path: &Path, overrides: &[(String, String)]) -> Result<BenchConfig, PipelineError> {
    load_config(path, overrides, &["benchmark", "output"])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub target_index: usize,
    pub target: String,
    pub seed: u64,
    pub summary: EvalSummary,
    pub truncated: bool,
    /// γ-rank of the recorded route, if found.
    pub truth_rank: Option<usize>,
    /// Distinct visited routes whose product is the target.
    pub zero_energy_routes: usize,
}

/// Seed of repetition `rep` on target `t` under master seed `master`.
pub fn run_seed(master: u64, t: usize, rep: usize) -> u64 {
    mix(mix(master, t as u64 + 1), rep as u64 + 1)
}

/// Targets of a benchmark: (target SMILES, recorded route key, class id).
fn bench_targets(b: &Benchmark, mode: BenchMode) -> Vec<(String, String, Option<usize>)> {
    match mode {
        BenchMode::OneStep => b.truths.iter().map(|t| (t.product.clone(), t.route_key(), t.class_id)).collect(),
        BenchMode::TwoStep => chain_ground_truth(&b.truths)
            .into_iter()
            .filter(|t| t.first.len() == 2 && t.second.len() == 1)
            .map(|t| (t.target.clone(), t.route_key(), t.class_id))
            .collect(),
    }
}

pub struct BenchContext {
    pub benchmark: Benchmark,
    pub workspace: Workspace,
}

/// Load or generate the benchmark and train the class model on the 80% split
/// of its corpus.
pub fn bench_context(cfg: &BenchConfig) -> Result<BenchContext, PipelineError> {
    let benchmark = match &cfg.benchmark {
        Some(dir) => load_benchmark(dir)?,
        None => crate::synth::generate(cfg.benchmark_seed, Default::default()).map_err(|e| PipelineError::Config(e.to_string()))?,
    };
    let catalog = Catalog::from_smiles(&benchmark.catalog, cfg.fingerprint)?;
    let model = forward_model(&benchmark.library, cfg.model_server.as_deref(), cfg.server_retries, Duration::from_secs(cfg.server_timeout_secs))?;
    let mut workspace = Workspace::new(catalog, benchmark.library.clone(), model, cfg.energy);
    if !benchmark.corpus.is_empty() {
        let (train, _) = split_corpus(&benchmark.corpus, cfg.benchmark_seed);
        workspace.train_class_model(&train, cfg.class_model)?;
    }
    Ok(BenchContext { benchmark, workspace })
}

/// Run every selected target `seeds` times. The surrogate is trained once per
/// target and its evaluations are charged to each run.
pub fn run_bench(ctx: &BenchContext, cfg: &BenchConfig) -> Result<Vec<BenchRow>, PipelineError> {
    cfg.smc.validate()?;
    let ws = &ctx.workspace;
    let all = bench_targets(&ctx.benchmark, cfg.mode);
    let selected: Vec<usize> = match &cfg.targets {
        Some(t) => t.clone(),
        None => (0..all.len()).collect(),
    };
    let index = NeighborIndex::build(&ws.catalog, cfg.smc.k_nn).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for &ti in &selected {
        let (target_smiles, key, class_id) = all.get(ti).cloned().ok_or_else(|| PipelineError::Config(format!("no benchmark target {ti}")))?;
        let target = ws.target(&target_smiles)?;
        let prepared = match cfg.engine {
            Engine::Surrogate => Some(ws.prepare_surrogate(&target, &cfg.smc, training_seed(mix(cfg.smc.seed, ti as u64)))?),
            Engine::Simple => None,
        };
        for rep in 0..cfg.seeds {
            let mut run_cfg = cfg.smc.clone();
            run_cfg.seed = run_seed(cfg.smc.seed, ti, rep);
            let out = ws.run_engine(&index, &target, &run_cfg, cfg.engine, prepared.as_ref())?;
            let known = if cfg.known_class { class_id } else { None };
            let ranked = ws.rank(&out, known)?;
            let truth = [KeyTruth { key: key.clone(), target: target_smiles.clone() }];
            let summary = evaluate(&ranked, &truth, &target_smiles, out.forward_calls)?;
            let truth_rank = ranked.iter().find(|r| r.key == key).map(|r| r.rank);
            log::info!(
                "target {ti} rep {rep}: detection {} inclusion {} rank {:?} calls {}",
                summary.detection_rate,
                summary.ground_truth_inclusion,
                truth_rank,
                out.forward_calls
            );
            let zero_energy_routes = out.routes.values().filter(|r| r.energy == 0.0).count();
            rows.push(BenchRow {
                target_index: ti,
                target: target_smiles.clone(),
                seed: run_cfg.seed,
                summary,
                truncated: out.truncated,
                truth_rank,
                zero_energy_routes,
            });
        }
    }
    Ok(rows)
}

struct KeyTruth {
    key: String,
    target: String,
}

impl Truth for KeyTruth {
    fn route_key(&self) -> String {
        self.key.clone()
    }
    fn target(&self) -> &str {
        &self.target
    }
}

/// Per-run rows, then the mean over runs, then the mean over targets of each
/// target's runs pooled by union.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], w: W) -> Result<(), PipelineError> {
    let mut c = csv::Writer::from_writer(w);
    let mut header = vec!["target_index".to_string(), "target".into(), "seed".into(), "detection".into(), "inclusion".into()];
    header.extend(TOP_N.iter().map(|n| format!("top_{n}")));
    header.extend(["distinct_routes".to_string(), "forward_calls".into(), "truth_rank".into(), "truncated".into()]);
    c.write_record(&header)?;
    let line = |s: &EvalSummary| {
        let mut v = vec![s.detection_rate.to_string(), s.ground_truth_inclusion.to_string()];
        v.extend(s.top_n_hits.iter().map(|x| x.to_string()));
        v.push(s.distinct_route_count.to_string());
        v.push(s.forward_calls.to_string());
        v
    };
    for r in rows {
        let mut rec = vec![r.target_index.to_string(), r.target.clone(), r.seed.to_string()];
        rec.extend(line(&r.summary));
        rec.push(r.truth_rank.map(|k| k.to_string()).unwrap_or_default());
        rec.push(r.truncated.to_string());
        c.write_record(&rec)?;
    }
    let summaries: Vec<EvalSummary> = rows.iter().map(|r| r.summary.clone()).collect();
    let mut per_target: BTreeMap<usize, Vec<EvalSummary>> = BTreeMap::new();
    for r in rows {
        per_target.entry(r.target_index).or_default().push(r.summary.clone());
    }
    let pooled: Vec<EvalSummary> = per_target.values().map(|runs| EvalSummary::union(runs)).collect();
    for (label, s) in [("mean", EvalSummary::mean(&summaries)), ("pooled", EvalSummary::mean(&pooled))] {
        let mut rec = vec![String::new(), label.to_string(), String::new()];
        rec.extend(line(&s));
        rec.extend([String::new(), String::new()]);
        c.write_record(&rec)?;
    }
    c.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub cases: usize,
    /// One line per case whose product or alpha differs from the toy model.
    pub mismatches: Vec<String>,
    /// The server answered a malformed line with an error object and kept
    /// the connection usable.
    pub malformed_ok: bool,
}

/// Probe reactant sets: recorded reactions of the seeded synthetic benchmark
/// alternating with random catalog singles and pairs.
pub fn conformance_corpus(seed: u64, cases: usize) -> Result<(TemplateLibrary, Vec<ReactantSet>), PipelineError> {
    let b = crate::synth::generate(seed, Default::default()).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x636f_6e66));
    let n = b.catalog.len();
    let mut sets = Vec::with_capacity(cases);
    for i in 0..cases {
        let members: Vec<&str> = if i % 2 == 0 && !b.truths.is_empty() {
            b.truths[(i / 2) % b.truths.len()].reactants.iter().map(String::as_str).collect()
        } else if i % 5 == 1 {
            vec![b.catalog[rng.random_range(0..n)].as_str()]
        } else {
            vec![b.catalog[rng.random_range(0..n)].as_str(), b.catalog[rng.random_range(0..n)].as_str()]
        };
        sets.push(ReactantSet::new(&members)?);
    }
    Ok((b.library, sets))
}

/// Compare a model server against the in-process toy model on `sets`.
pub fn serve_check(remote: &RemoteModel, library: &TemplateLibrary, sets: &[ReactantSet]) -> Result<ConformanceReport, PipelineError> {
    let local = ToyModel::new(library.clone());
    let got = remote.predict_batch(sets)?;
    let mut mismatches = Vec::new();
    for (s, g) in sets.iter().zip(&got) {
        let want = local.predict(s)?;
        if *g != want {
            mismatches.push(format!("{}: got {:?} alpha {}, want {:?} alpha {}", s.key(), g.product, g.alpha, want.product, want.alpha));
        }
    }
    let reply = remote.raw_exchange("{this is not json")?;
    let parsed: Value = serde_json::from_str(&reply).unwrap_or(Value::Null);
    let error_object = parsed.get("id").is_some_and(Value::is_null) && parsed.get("error").is_some_and(Value::is_string);
    let still_open = match sets.first() {
        Some(s) => remote.predict(s).is_ok(),
        None => true,
    };
    Ok(ConformanceReport { cases: sets.len(), mismatches, malformed_ok: error_object && still_open })
}
