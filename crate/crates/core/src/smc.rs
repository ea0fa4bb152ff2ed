//! The two search engines: simple SMC with k-NN proposals and multinomial
//! resampling, and surrogate-assisted SMC with elite expansion, clustered
//! resampling on predicted energies and a uniform exploration half.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use retrosmc_chem::augment;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::evaluate::{Evaluator, RouteOutcome};
use crate::forward::ForwardError;
use crate::kmeans::SparseCounts;
use crate::neighbors::{NeighborError, NeighborIndex};
use crate::posterior::{PosteriorError, PosteriorTable};
use crate::resample::{cluster_resample, resample, Resampling};
use crate::space::{CandidateSpace, Particle, RouteShape, VisitedSet};
use crate::surrogate::{fit, GbmError, GbmModel, GbmParams};

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("invalid SMC config: {0}")]
    Config(String),
    #[error("budget of {budget} forward calls cannot cover {needed} required evaluations")]
    Budget { budget: u64, needed: u64 },
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Neighbors(#[from] NeighborError),
    #[error(transparent)]
    Surrogate(#[from] GbmError),
}

/// A run of `steps` SMC steps with one route shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub shape: RouteShape,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub particles: usize,
    pub schedule: Vec<Phase>,
    /// Elite count `l`; defaults to a tenth of the particles.
    pub elite: Option<usize>,
    pub expansion: usize,
    pub clusters: usize,
    pub k_nn: usize,
    pub beta: f64,
    pub seed: u64,
    /// Cap on true-model evaluations, including surrogate training.
    pub budget: Option<u64>,
    pub resampling: Resampling,
    pub training_size: usize,
    pub gbm: GbmParams,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 200,
            schedule: vec![Phase { shape: RouteShape::new(vec![2]).expect("valid"), steps: 100 }],
            elite: None,
            expansion: 20,
            clusters: 20,
            k_nn: 50,
            beta: 20.0,
            seed: 0,
            budget: None,
            resampling: Resampling::Multinomial,
            training_size: 1000,
            gbm: GbmParams::default(),
        }
    }
}

impl SmcConfig {
    pub fn single_phase(shape: RouteShape, particles: usize, steps: usize) -> Self {
        SmcConfig { particles, schedule: vec![Phase { shape, steps }], ..Default::default() }
    }

    pub fn elite_count(&self) -> usize {
        self.elite.unwrap_or((self.particles / 10).max(1))
    }

    pub fn total_steps(&self) -> usize {
        self.schedule.iter().map(|p| p.steps).sum()
    }

    pub fn first_shape(&self) -> &RouteShape {
        &self.schedule[0].shape
    }

    pub fn last_shape(&self) -> &RouteShape {
        &self.schedule[self.schedule.len() - 1].shape
    }

    pub fn validate(&self) -> Result<(), SmcError> {
        let bad = |m: String| Err(SmcError::Config(m));
        if self.particles == 0 {
            return bad("particles must be positive".into());
        }
        if self.schedule.is_empty() {
            return bad("schedule needs at least one phase".into());
        }
        for w in self.schedule.windows(2) {
            if !w[0].shape.lifts_to(&w[1].shape) {
                return bad(format!("shape {:?} cannot grow into {:?}", w[0].shape.groups(), w[1].shape.groups()));
            }
        }
        let l = self.elite_count();
        if l == 0 || l > self.particles {
            return bad(format!("elite count {l} must lie in 1..={}", self.particles));
        }
        if self.expansion == 0 {
            return bad("expansion must be positive".into());
        }
        if self.clusters == 0 || self.clusters > l * self.expansion {
            return bad(format!("clusters {} must lie in 1..={}", self.clusters, l * self.expansion));
        }
        if self.k_nn == 0 {
            return bad("k_nn must be positive".into());
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta {} must be finite and non-negative", self.beta));
        }
        if !(self.gbm.nu > 0.0 && self.gbm.nu <= 1.0) {
            return bad(format!("gbm nu {} must lie in (0, 1]", self.gbm.nu));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub best_energy: f64,
    pub distinct_keys: usize,
    pub forward_calls: u64,
}

/// A route evaluated by the true model during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteRecord {
    pub shape: RouteShape,
    pub particle: Particle,
    pub energy: f64,
    pub outcome: RouteOutcome,
}

#[derive(Debug)]
pub struct RunOutput {
    pub table: PosteriorTable,
    pub routes: BTreeMap<String, RouteRecord>,
    pub trace: Vec<TraceRow>,
    pub forward_calls: u64,
    pub predict_calls: u64,
    pub truncated: bool,
}

/// Augmented count fingerprint of a particle's catalog reactants.
pub fn particle_features(p: &Particle, catalog: &Catalog) -> Vec<(u32, u32)> {
    augment(p.slots().iter().map(|&s| catalog.fingerprint(s as usize)))
        .expect("catalog fingerprints share one width")
        .counts()
        .to_vec()
}

/// Cheap energy estimate used to rank candidate particles.
pub trait EnergyPredictor: Sync {
    fn predict(&self, particle: &Particle, shape: &RouteShape, features: &SparseCounts) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbmSurrogate {
    pub model: GbmModel,
    pub energy_max: f64,
}

impl EnergyPredictor for GbmSurrogate {
    fn predict(&self, _: &Particle, _: &RouteShape, features: &SparseCounts) -> f64 {
        self.model.predict_energy(features, self.energy_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub particle: Particle,
    pub key: String,
    pub energy: f64,
    pub outcome: RouteOutcome,
    pub features: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub shape: RouteShape,
    pub target: String,
    pub rows: Vec<TrainingRow>,
}

impl TrainingSet {
    pub fn fit(&self, params: GbmParams, energy_max: f64) -> Result<GbmSurrogate, SmcError> {
        let x: Vec<&SparseCounts> = self.rows.iter().map(|r| r.features.as_slice()).collect();
        let y: Vec<f64> = self.rows.iter().map(|r| r.energy).collect();
        Ok(GbmSurrogate { model: fit(&x, &y, params)?, energy_max })
    }
}

/// Evaluate `n` distinct uniformly drawn particles of `shape` with the true
/// model. The calls count against the evaluator's budget.
pub fn build_training_set(
    shape: &RouteShape,
    ev: &mut Evaluator<'_>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSet, SmcError> {
    let catalog = ev.catalog();
    let space = CandidateSpace::new(shape.clone(), catalog.len());
    if ev.allowance(n) < n {
        return Err(SmcError::Budget { budget: ev.calls() + ev.remaining().unwrap_or(0), needed: ev.calls() + n as u64 });
    }
    let particles = space.draw_unvisited(&VisitedSet::new(), &HashSet::new(), n, rng);
    let evaluated = ev.evaluate(shape, &particles)?;
    let rows = particles
        .into_iter()
        .zip(evaluated)
        .map(|(particle, e)| TrainingRow {
            key: particle.key(shape, catalog),
            features: particle_features(&particle, catalog),
            particle,
            energy: e.energy,
            outcome: e.outcome,
        })
        .collect();
    Ok(TrainingSet { shape: shape.clone(), target: ev.target().smiles().to_string(), rows })
}

struct Run {
    table: PosteriorTable,
    routes: BTreeMap<String, RouteRecord>,
    trace: Vec<TraceRow>,
    best: f64,
    truncated: bool,
}

impl Run {
    fn new(beta: f64) -> Self {
        Run { table: PosteriorTable::new(beta), routes: BTreeMap::new(), trace: Vec::new(), best: f64::INFINITY, truncated: false }
    }

    fn record(&mut self, key: String, shape: &RouteShape, particle: &Particle, energy: f64, outcome: RouteOutcome) -> Result<(), SmcError> {
        self.table.record(&key, particle, energy)?;
        self.best = self.best.min(energy);
        self.routes
            .entry(key)
            .or_insert_with(|| RouteRecord { shape: shape.clone(), particle: particle.clone(), energy, outcome });
        Ok(())
    }

    /// Evaluate with the budget in mind; returns `(particle, key, energy)`.
    fn evaluate(&mut self, ev: &mut Evaluator<'_>, shape: &RouteShape, mut batch: Vec<Particle>) -> Result<Vec<Member>, SmcError> {
        let allowed = ev.allowance(batch.len());
        if allowed < batch.len() {
            self.truncated = true;
            batch.truncate(allowed);
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let results = ev.evaluate(shape, &batch)?;
        let mut out = Vec::with_capacity(batch.len());
        for (p, e) in batch.into_iter().zip(results) {
            let key = p.key(shape, ev.catalog());
            self.record(key.clone(), shape, &p, e.energy, e.outcome)?;
            out.push(Member { particle: p, key, energy: e.energy });
        }
        Ok(out)
    }

    fn trace(&mut self, step: usize, ev: &Evaluator<'_>) {
        self.trace.push(TraceRow { step, best_energy: self.best, distinct_keys: self.table.len(), forward_calls: ev.calls() });
    }

    fn finish(self, ev: &Evaluator<'_>) -> RunOutput {
        RunOutput {
            table: self.table,
            routes: self.routes,
            trace: self.trace,
            forward_calls: ev.calls(),
            predict_calls: ev.predict_calls(),
            truncated: self.truncated,
        }
    }
}

#[derive(Debug, Clone)]
struct Member {
    particle: Particle,
    key: String,
    energy: f64,
}

fn lift_population(pop: Vec<Member>, from: &RouteShape, to: &RouteShape, catalog: &Catalog, rng: &mut ChaCha8Rng) -> Vec<Member> {
    if from == to {
        return pop;
    }
    pop.into_iter()
        .map(|m| {
            let particle = m.particle.lift(from, to, catalog.len(), rng);
            Member { key: particle.key(to, catalog), particle, energy: m.energy }
        })
        .collect()
}

/// Simple SMC: k-NN proposals, weights from the true likelihood, and
/// multinomial (or systematic) resampling of the proposals.
pub fn simple_smc(cfg: &SmcConfig, ev: &mut Evaluator<'_>, index: &NeighborIndex) -> Result<RunOutput, SmcError> {
    cfg.validate()?;
    let catalog = ev.catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = Run::new(cfg.beta);
    let p = cfg.particles;
    if ev.allowance(p) < p {
        return Err(SmcError::Budget { budget: ev.calls() + ev.remaining().unwrap_or(0), needed: ev.calls() + p as u64 });
    }
    let mut shape = cfg.first_shape().clone();
    let space = CandidateSpace::new(shape.clone(), catalog.len());
    let init: Vec<Particle> = (0..p).map(|_| space.uniform(&mut rng)).collect();
    let mut pop = run.evaluate(ev, &shape, init)?;
    run.trace(0, ev);
    let mut step = 0;
    'phases: for phase in &cfg.schedule {
        pop = lift_population(pop, &shape, &phase.shape, catalog, &mut rng);
        shape = phase.shape.clone();
        for _ in 0..phase.steps {
            if run.truncated {
                break 'phases;
            }
            step += 1;
            let proposals: Vec<Particle> = pop.iter().map(|m| index.propose(&m.particle, &shape, &mut rng)).collect();
            let evaluated = run.evaluate(ev, &shape, proposals)?;
            run.trace(step, ev);
            if evaluated.is_empty() {
                break 'phases;
            }
            let weights: Vec<f64> = evaluated.iter().map(|m| crate::posterior::likelihood(m.energy, cfg.beta)).collect();
            let picks = resample(&weights, p, cfg.resampling, &mut rng);
            pop = picks.into_iter().map(|i| evaluated[i].clone()).collect();
        }
    }
    Ok(run.finish(ev))
}

/// Up to `m` unvisited single-slot neighbors of `elite`, slots taken
/// round-robin, each slot walking its reactant's neighbor list nearest first.
fn expand(
    elite: &Particle,
    shape: &RouteShape,
    index: &NeighborIndex,
    m: usize,
    visited: &VisitedSet,
    taken: &mut HashSet<Particle>,
) -> Vec<Particle> {
    let slots = elite.slots().len();
    let mut cursor = vec![0usize; slots];
    let mut out = Vec::with_capacity(m);
    let mut live = slots;
    let mut slot = 0;
    while out.len() < m && live > 0 {
        let list = index.neighbors(elite.slots()[slot] as usize);
        if cursor[slot] < list.len() {
            let mut placed = false;
            while cursor[slot] < list.len() && !placed {
                let cand = elite.with_slot(slot, list[cursor[slot]], shape);
                cursor[slot] += 1;
                if cand != *elite && !visited.contains(&cand) && taken.insert(cand.clone()) {
                    out.push(cand);
                    placed = true;
                }
            }
            if cursor[slot] == list.len() {
                live -= 1;
            }
        }
        slot = (slot + 1) % slots;
    }
    out
}

/// Surrogate-assisted SMC. Training rows, when given, are recorded first and
/// charged to this run's forward-call count; their particles are never
/// evaluated again.
pub fn surrogate_smc(
    cfg: &SmcConfig,
    ev: &mut Evaluator<'_>,
    index: &NeighborIndex,
    surrogate: &dyn EnergyPredictor,
    training: Option<&TrainingSet>,
) -> Result<RunOutput, SmcError> {
    cfg.validate()?;
    let catalog = ev.catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = Run::new(cfg.beta);
    let mut visited = VisitedSet::new();
    let p = cfg.particles;
    let n_train = training.map_or(0, |t| t.rows.len()) as u64;
    let needed = n_train as usize + p;
    if ev.allowance(needed) < needed {
        return Err(SmcError::Budget { budget: ev.calls() + ev.remaining().unwrap_or(0), needed: ev.calls() + needed as u64 });
    }
    if let Some(t) = training {
        ev.charge(n_train);
        for row in &t.rows {
            run.record(row.key.clone(), &t.shape, &row.particle, row.energy, row.outcome.clone())?;
            visited.insert(row.particle.clone());
        }
    }

    let mut shape = cfg.first_shape().clone();
    let mut space = CandidateSpace::new(shape.clone(), catalog.len());
    let init = space.draw_unvisited(&visited, &HashSet::new(), p, &mut rng);
    for q in &init {
        visited.insert(q.clone());
    }
    let mut pop = run.evaluate(ev, &shape, init)?;
    run.trace(0, ev);
    let l = cfg.elite_count();
    let half = p / 2;
    let mut step = 0;
    'phases: for phase in &cfg.schedule {
        if phase.shape != shape {
            pop = lift_population(pop, &shape, &phase.shape, catalog, &mut rng);
            shape = phase.shape.clone();
            space = CandidateSpace::new(shape.clone(), catalog.len());
        }
        for _ in 0..phase.steps {
            if run.truncated {
                break 'phases;
            }
            step += 1;
            // elites: best true energy, ties by key, distinct particles
            let mut ranked: Vec<&Member> = pop.iter().collect();
            ranked.sort_by(|a, b| a.energy.total_cmp(&b.energy).then_with(|| a.key.cmp(&b.key)));
            ranked.dedup_by(|a, b| a.particle == b.particle);
            let mut taken = HashSet::new();
            let mut expansions = Vec::new();
            for e in ranked.iter().take(l) {
                expansions.extend(expand(&e.particle, &shape, index, cfg.expansion, &visited, &mut taken));
            }
            let mut chosen: Vec<Particle> = Vec::new();
            if !expansions.is_empty() {
                let feats: Vec<Vec<(u32, u32)>> = expansions.iter().map(|q| particle_features(q, catalog)).collect();
                let refs: Vec<&SparseCounts> = feats.iter().map(|f| f.as_slice()).collect();
                let predicted: Vec<f64> = expansions.iter().zip(&refs).map(|(q, f)| surrogate.predict(q, &shape, f)).collect();
                let keys: Vec<String> = expansions.iter().map(|q| q.key(&shape, catalog)).collect();
                let dim = catalog.params().n_bits as usize;
                let picks = cluster_resample(&refs, &predicted, &keys, cfg.beta, cfg.clusters, half, dim, &mut rng);
                chosen.extend(picks.into_iter().map(|i| expansions[i].clone()));
            }
            let exclude: HashSet<Particle> = chosen.iter().cloned().collect();
            chosen.extend(space.draw_unvisited(&visited, &exclude, p - half, &mut rng));
            let allowed = ev.allowance(chosen.len());
            if allowed < chosen.len() {
                run.truncated = true;
                chosen.truncate(allowed);
            }
            for q in &chosen {
                visited.insert(q.clone());
            }
            let evaluated = run.evaluate(ev, &shape, chosen)?;
            run.trace(step, ev);
            if !evaluated.is_empty() {
                pop = evaluated;
            }
        }
    }
    Ok(run.finish(ev))
}
