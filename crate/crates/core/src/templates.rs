//! Template library and the deterministic toy forward model built on it.

use std::path::Path;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use retrosmc_chem::{canonicalize, parse_smiles, MolGraph, MotifError, Rewrite};

use crate::forward::{ForwardError, ForwardModel, Prediction, ReactantSet, EPSILON};

pub const CLASS_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {index}: {source}")]
    Motif {
        index: usize,
        #[source]
        source: MotifError,
    },
    #[error("duplicate priority {0}")]
    DuplicatePriority(i64),
    #[error("class id {0} out of range")]
    ClassId(u8),
    #[error("library is empty")]
    Empty,
    #[error("reading template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("template JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One library entry as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub pattern: String,
    pub rewrite: String,
    pub priority: i64,
    pub class_id: u8,
}

#[derive(Debug, Clone)]
struct Template {
    spec: TemplateSpec,
    rewrite: Rewrite,
}

/// Templates ordered by descending priority; rank 0 fires first.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    templates: Vec<Template>,
}

impl TemplateLibrary {
    pub fn new(mut specs: Vec<TemplateSpec>) -> Result<Self, TemplateError> {
        if specs.is_empty() {
            return Err(TemplateError::Empty);
        }
        specs.sort_by(|a, b| b.priority.cmp(&a.priority));
        for w in specs.windows(2) {
            if w[0].priority == w[1].priority {
                return Err(TemplateError::DuplicatePriority(w[0].priority));
            }
        }
        let templates = specs
            .into_iter()
            .enumerate()
            .map(|(index, spec)| {
                if usize::from(spec.class_id) >= CLASS_COUNT {
                    return Err(TemplateError::ClassId(spec.class_id));
                }
                let rewrite =
                    Rewrite::new(&spec.pattern, &spec.rewrite).map_err(|source| TemplateError::Motif { index, source })?;
                Ok(Template { spec, rewrite })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TemplateLibrary { templates })
    }

    pub fn from_json(text: &str) -> Result<Self, TemplateError> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Specs in firing order.
    pub fn specs(&self) -> Vec<TemplateSpec> {
        self.templates.iter().map(|t| t.spec.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.specs()).expect("specs serialize")
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Ten-template toy chemistry, one template per reaction class.
    pub fn builtin() -> Self {
        let rows: [(&str, &str); CLASS_COUNT] = [
            // amide coupling
            ("[C:1](=[O:2])[O;D1:3].[N;D1:4]", "[C:1](=[O:2])[N:4]"),
            // sulfonamide formation
            ("[S:1](=[O:2])(=[O:3])[Cl;D1:4].[N;D1:5]", "[S:1](=[O:2])(=[O:3])[N:5]"),
            // urea from isocyanate
            ("[N:1]=[C:2]=[O;D1:3].[N;D1:4]", "[N:1][C:2](=[O:3])[N:4]"),
            // reductive amination
            ("[C;D2:1]=[O;D1:2].[N;D1:3]", "[C:1][N:3]"),
            // Suzuki biaryl coupling
            ("[c:1][Br;D1:2].[c:3][B:4]([O;D1:5])[O;D1:6]", "[c:1]-[c:3]"),
            // Williamson ether
            ("[C:1][Br;D1:2].[O;D1:3][C:4]", "[C:1][O:3][C:4]"),
            // esterification
            ("[C:1](=[O:2])[O;D1:3].[O;D1:4][C:5]", "[C:1](=[O:2])[O:4][C:5]"),
            // nitrile hydrolysis
            ("[C:1]#[N;D1:2]", "[C:1](=[O:2])O"),
            // nitro reduction
            ("[N+:1](=[O;D1:2])[O-;D1:3]", "[N:1]"),
            // generic aliphatic C-C coupling
            ("[C:1].[C:2]", "[C:1][C:2]"),
        ];
        let specs = rows
            .iter()
            .enumerate()
            .map(|(i, &(pattern, rewrite))| TemplateSpec {
                pattern: pattern.to_string(),
                rewrite: rewrite.to_string(),
                priority: 100 - 10 * i as i64,
                class_id: i as u8,
            })
            .collect();
        TemplateLibrary::new(specs).expect("builtin library is valid")
    }

    /// First firing template: (rank, class id, product graph).
    pub fn fire(&self, reactants: &[&MolGraph]) -> Option<(usize, u8, MolGraph)> {
        self.templates.iter().enumerate().find_map(|(rank, t)| {
            if t.rewrite.arity() != reactants.len() {
                return None;
            }
            t.rewrite.apply(reactants).map(|g| (rank, t.spec.class_id, g))
        })
    }
}

/// Sequence score of the template at `rank` in firing order.
pub fn rank_alpha(rank: usize) -> f64 {
    (1.0 / (1.0 + rank as f64)).clamp(EPSILON, 1.0)
}

/// Outcome of the toy chemistry including which class fired.
#[derive(Debug, Clone, PartialEq)]
pub struct Fired {
    pub prediction: Prediction,
    pub class_id: Option<u8>,
}

/// Apply the library to a reactant set without caching.
pub fn apply_templates(s: &ReactantSet, lib: &TemplateLibrary) -> Fired {
    let graphs: Vec<MolGraph> = match s.members().iter().map(|m| parse_smiles(m)).collect() {
        Ok(g) => g,
        Err(_) => return Fired { prediction: Prediction::invalid(), class_id: None },
    };
    let refs: Vec<&MolGraph> = graphs.iter().collect();
    match lib.fire(&refs) {
        Some((rank, class_id, g)) => Fired {
            prediction: Prediction { product: Some(canonicalize(&g)), alpha: rank_alpha(rank) },
            class_id: Some(class_id),
        },
        None => Fired { prediction: Prediction::invalid(), class_id: None },
    }
}

/// Template forward model with a shared memo keyed by the reactant set.
#[derive(Debug)]
pub struct ToyModel {
    library: TemplateLibrary,
    memo: DashMap<ReactantSet, Fired>,
}

impl ToyModel {
    pub fn new(library: TemplateLibrary) -> Self {
        ToyModel { library, memo: DashMap::new() }
    }

    pub fn library(&self) -> &TemplateLibrary {
        &self.library
    }

    pub fn fire(&self, s: &ReactantSet) -> Fired {
        if let Some(hit) = self.memo.get(s) {
            return hit.clone();
        }
        let fired = apply_templates(s, &self.library);
        self.memo.insert(s.clone(), fired.clone());
        fired
    }

    pub fn cached(&self) -> usize {
        self.memo.len()
    }
}

impl ForwardModel for ToyModel {
    fn predict(&self, s: &ReactantSet) -> Result<Prediction, ForwardError> {
        Ok(self.fire(s).prediction)
    }
}
