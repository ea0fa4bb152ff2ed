//! True-model evaluation of particles: route simulation, energies, and the
//! forward-call budget.

use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use retrosmc_chem::{fingerprint, parse_smiles, Fingerprint};

use crate::catalog::{Catalog, FpParams};
use crate::forward::{ForwardError, ForwardModel, Prediction, ReactantSet};
use crate::posterior::{EnergySpec, Target};
use crate::space::{Particle, RouteShape};

/// Per-step products and scores of one simulated route. Simulation stops at
/// the first invalid step, so `products` may be shorter than the route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub steps: usize,
    pub products: Vec<Option<String>>,
    pub alphas: Vec<f64>,
}

impl RouteOutcome {
    pub fn final_product(&self) -> Option<&str> {
        if self.products.len() == self.steps {
            self.products.last().and_then(|p| p.as_deref())
        } else {
            None
        }
    }

    pub fn is_valid(&self) -> bool {
        self.final_product().is_some()
    }

    /// Product of the per-step sequence scores.
    pub fn alpha(&self) -> f64 {
        self.alphas.iter().product()
    }

    /// Reactants of the last step: catalog members plus the incoming
    /// intermediate for later steps.
    pub fn last_step_reactants(&self, particle: &Particle, shape: &RouteShape, catalog: &Catalog) -> Vec<String> {
        let last = shape.steps() - 1;
        let mut out: Vec<String> = particle.step(shape, last).iter().map(|&i| catalog.smiles(i as usize).to_string()).collect();
        if last > 0 {
            if let Some(Some(p)) = self.products.get(last - 1) {
                out.push(p.clone());
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub energy: f64,
    pub outcome: RouteOutcome,
}

/// Fingerprints of predicted products, shared across runs.
#[derive(Debug, Default)]
pub struct FpCache {
    params: FpParams,
    map: DashMap<String, Arc<Fingerprint>>,
}

impl FpCache {
    pub fn new(params: FpParams) -> Self {
        FpCache { params, map: DashMap::new() }
    }

    pub fn get(&self, smiles: &str) -> Arc<Fingerprint> {
        if let Some(fp) = self.map.get(smiles) {
            return fp.clone();
        }
        let g = parse_smiles(smiles).expect("products are canonical SMILES");
        let fp = Arc::new(fingerprint(&g, self.params.radius, self.params.n_bits).expect("valid parameters"));
        self.map.insert(smiles.to_string(), fp.clone());
        fp
    }
}

/// Chain forward predictions step by step for many particles at once, one
/// batch call per step.
pub fn simulate_batch<M: ForwardModel + ?Sized>(
    model: &M,
    catalog: &Catalog,
    shape: &RouteShape,
    particles: &[Particle],
) -> Result<(Vec<RouteOutcome>, u64), ForwardError> {
    let mut outcomes: Vec<RouteOutcome> = particles
        .iter()
        .map(|_| RouteOutcome { steps: shape.steps(), products: Vec::new(), alphas: Vec::new() })
        .collect();
    let mut predict_calls = 0u64;
    for step in 0..shape.steps() {
        let mut live = Vec::new();
        let mut batch = Vec::new();
        for (i, p) in particles.iter().enumerate() {
            let mut members: Vec<String> = p.step(shape, step).iter().map(|&s| catalog.smiles(s as usize).to_string()).collect();
            if step > 0 {
                match outcomes[i].products.get(step - 1) {
                    Some(Some(prev)) => members.push(prev.clone()),
                    _ => continue,
                }
            }
            live.push(i);
            batch.push(ReactantSet::from_canonical(members));
        }
        if batch.is_empty() {
            break;
        }
        predict_calls += batch.len() as u64;
        let preds: Vec<Prediction> = model.predict_batch(&batch)?;
        if preds.len() != batch.len() {
            return Err(ForwardError::Protocol(format!("batch of {} answered with {}", batch.len(), preds.len())));
        }
        for (i, pred) in live.into_iter().zip(preds) {
            outcomes[i].products.push(pred.product);
            outcomes[i].alphas.push(pred.alpha);
        }
    }
    Ok((outcomes, predict_calls))
}

/// Evaluates particles against one target and counts forward calls.
/// One forward call is one particle evaluation, whatever its step count.
pub struct Evaluator<'a> {
    model: &'a dyn ForwardModel,
    catalog: &'a Catalog,
    target: &'a Target,
    energy: EnergySpec,
    fps: &'a FpCache,
    budget: Option<u64>,
    calls: u64,
    predict_calls: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a dyn ForwardModel,
        catalog: &'a Catalog,
        target: &'a Target,
        energy: EnergySpec,
        fps: &'a FpCache,
        budget: Option<u64>,
    ) -> Self {
        Evaluator { model, catalog, target, energy, fps, budget, calls: 0, predict_calls: 0 }
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    pub fn target(&self) -> &'a Target {
        self.target
    }

    pub fn energy_spec(&self) -> EnergySpec {
        self.energy
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn predict_calls(&self) -> u64 {
        self.predict_calls
    }

    /// Calls left before the cap; `None` means uncapped.
    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.calls))
    }

    /// How many of `wanted` evaluations the budget still allows.
    pub fn allowance(&self, wanted: usize) -> usize {
        match self.remaining() {
            Some(r) => wanted.min(usize::try_from(r).unwrap_or(usize::MAX)),
            None => wanted,
        }
    }

    /// Count evaluations performed elsewhere (shared training rows).
    pub fn charge(&mut self, n: u64) {
        self.calls += n;
    }

    /// Evaluate every particle; the caller checks the allowance first.
    pub fn evaluate(&mut self, shape: &RouteShape, particles: &[Particle]) -> Result<Vec<Evaluated>, ForwardError> {
        let (outcomes, predicts) = simulate_batch(self.model, self.catalog, shape, particles)?;
        self.calls += particles.len() as u64;
        self.predict_calls += predicts;
        Ok(outcomes
            .into_iter()
            .map(|outcome| {
                let energy = match outcome.final_product() {
                    Some(p) => {
                        let fp = self.fps.get(p);
                        self.energy.energy(self.target, Some((p, &fp)))
                    }
                    None => self.energy.energy(self.target, None),
                };
                Evaluated { energy, outcome }
            })
            .collect())
    }
}
