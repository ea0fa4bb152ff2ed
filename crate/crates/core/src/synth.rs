//! Seeded synthetic benchmark: a catalog built from functional-group
//! families on shared tails, recorded reactions produced by the template
//! library (including chains through catalog intermediates), and a labeled
//! corpus for the reaction-class model.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use retrosmc_chem::canonical_smiles;

use crate::forward::ReactantSet;
use crate::routes::{chain_ground_truth, Reaction};
use crate::templates::{TemplateLibrary, ToyModel, CLASS_COUNT};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("generator could not reach {wanted} {what}; got {got}")]
    Shortfall { what: &'static str, wanted: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Kind {
    Acid,
    Amine,
    SulfonylChloride,
    Isocyanate,
    Aldehyde,
    AlkylBromide,
    Alcohol,
    Nitrile,
    Nitro,
    ArylBromide,
    BoronicAcid,
}

const ALIPHATIC: [(Kind, &str); 9] = [
    (Kind::Acid, "OC(=O)"),
    (Kind::Amine, "N"),
    (Kind::SulfonylChloride, "ClS(=O)(=O)"),
    (Kind::Isocyanate, "O=C=N"),
    (Kind::Aldehyde, "O=C"),
    (Kind::AlkylBromide, "Br"),
    (Kind::Alcohol, "O"),
    (Kind::Nitrile, "N#C"),
    (Kind::Nitro, "O=[N+]([O-])"),
];

const LINKERS: [&str; 8] = ["C", "CC", "CCC", "CCCC", "CC(C)", "CC(C)C", "C(C)(C)", "CCOCC"];

const ENDS: [&str; 13] = [
    "",
    "c1ccccc1",
    "C1CCCCC1",
    "c1ccc(F)cc1",
    "c1ccc(Cl)cc1",
    "c1ccc(OC)cc1",
    "c1ccc(C)cc1",
    "OC",
    "C1CCOCC1",
    "c1ccncc1",
    "SC",
    "C(F)(F)F",
    "c1ccc2ccccc2c1",
];

const ARYL_SUBS: [&str; 15] = [
    "C", "CC", "OC", "F", "Cl", "C(F)(F)F", "C(C)C", "OCC", "N(C)C", "C(C)(C)C", "SC", "c1ccccc1", "CCC", "OC(C)C", "C1CCCCC1",
];

fn canon(s: &str) -> String {
    canonical_smiles(s).unwrap_or_else(|e| panic!("generator SMILES {s}: {e}"))
}

/// Every molecule the generator can emit, per kind, canonical and sorted.
fn variant_pool() -> BTreeMap<Kind, Vec<String>> {
    let mut pool: BTreeMap<Kind, BTreeSet<String>> = BTreeMap::new();
    for &(kind, head) in &ALIPHATIC {
        for l in LINKERS {
            for e in ENDS {
                pool.entry(kind).or_default().insert(canon(&format!("{head}{l}{e}")));
            }
        }
    }
    for x in ARYL_SUBS {
        for (kind, para, meta) in [
            (Kind::ArylBromide, format!("Brc1ccc({x})cc1"), format!("Brc1cccc({x})c1")),
            (Kind::BoronicAcid, format!("OB(O)c1ccc({x})cc1"), format!("OB(O)c1cccc({x})c1")),
        ] {
            pool.entry(kind).or_default().insert(canon(&para));
            pool.entry(kind).or_default().insert(canon(&meta));
        }
    }
    pool.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchParams {
    pub catalog_size: usize,
    pub truths: usize,
    pub chains: usize,
    pub single_reactant: usize,
    pub corpus: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams { catalog_size: 500, truths: 40, chains: 8, single_reactant: 6, corpus: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    /// Canonical catalog SMILES in byte order.
    pub catalog: Vec<String>,
    pub library: TemplateLibrary,
    pub truths: Vec<Reaction>,
    /// Labeled reactions for the class model; labels are the fired class.
    pub corpus: Vec<Reaction>,
}

struct Gen<'a> {
    model: &'a ToyModel,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn fire(&self, reactants: &[String]) -> Option<(String, usize)> {
        let f = self.model.fire(&ReactantSet::from_canonical(reactants.to_vec()));
        Some((f.prediction.product?, usize::from(f.class_id?)))
    }
}

/// Templates with two catalog reactants, by class: reactant kinds.
const PAIR_CLASSES: [(usize, Kind, Kind); 7] = [
    (0, Kind::Acid, Kind::Amine),
    (1, Kind::SulfonylChloride, Kind::Amine),
    (2, Kind::Isocyanate, Kind::Amine),
    (3, Kind::Aldehyde, Kind::Amine),
    (4, Kind::ArylBromide, Kind::BoronicAcid),
    (5, Kind::AlkylBromide, Kind::Alcohol),
    (6, Kind::Acid, Kind::Alcohol),
];

/// Bifunctional first-step reactant: (SMILES, partner kind for step one,
/// expected step-one class, partner kind for step two, expected class).
fn chain_start(variant: usize, linker: &str, sub: &str) -> (String, Kind, usize, Kind, usize) {
    match variant % 3 {
        0 => (canon(&format!("OC(=O){linker}c1ccc(Br)c{sub}c1")), Kind::Amine, 0, Kind::BoronicAcid, 4),
        1 => (canon(&format!("O{linker}c1ccc(Br)c{sub}c1")), Kind::AlkylBromide, 5, Kind::BoronicAcid, 4),
        _ => (canon(&format!("O=C{linker}c1ccc(C(=O)O)c{sub}c1")), Kind::Amine, 0, Kind::Amine, 3),
    }
}

pub fn generate(seed: u64, params: BenchParams) -> Result<Benchmark, SynthError> {
    let library = TemplateLibrary::builtin();
    let model = ToyModel::new(library.clone());
    let mut g = Gen { model: &model, rng: ChaCha8Rng::seed_from_u64(seed) };
    let pool = variant_pool();

    // base catalog: round-robin over kinds from shuffled variant lists
    let reserved = 2 * params.chains;
    let mut shuffled: Vec<(Kind, Vec<String>)> = pool
        .iter()
        .map(|(&k, v)| {
            let mut v = v.clone();
            v.shuffle(&mut g.rng);
            (k, v)
        })
        .collect();
    let mut catalog: BTreeSet<String> = BTreeSet::new();
    let mut kind_of: BTreeMap<String, Kind> = BTreeMap::new();
    let base_size = params.catalog_size.saturating_sub(reserved);
    let mut cursor = vec![0usize; shuffled.len()];
    while catalog.len() < base_size {
        let mut progressed = false;
        for (i, (kind, list)) in shuffled.iter_mut().enumerate() {
            if catalog.len() >= base_size {
                break;
            }
            if cursor[i] < list.len() {
                let s = list[cursor[i]].clone();
                cursor[i] += 1;
                progressed = true;
                kind_of.insert(s.clone(), *kind);
                catalog.insert(s);
            }
        }
        if !progressed {
            return Err(SynthError::Shortfall { what: "catalog molecules", wanted: base_size, got: catalog.len() });
        }
    }
    let members = |kind: Kind, kind_of: &BTreeMap<String, Kind>| -> Vec<String> {
        kind_of.iter().filter(|(_, &k)| k == kind).map(|(s, _)| s.clone()).collect()
    };

    let mut truths: Vec<Reaction> = Vec::new();
    let mut targets: BTreeSet<String> = BTreeSet::new();

    // chains through catalog intermediates
    let subs = ["", "(F)", "(C)", "(OC)", "(Cl)"];
    let mut attempts = 0;
    let mut chains = 0;
    while chains < params.chains && attempts < 200 * params.chains.max(1) {
        attempts += 1;
        let linker = *LINKERS[..4].choose(&mut g.rng).expect("non-empty");
        let sub = *subs.choose(&mut g.rng).expect("non-empty");
        let (a, k1, c1, k2, c2) = chain_start(chains, linker, sub);
        if catalog.contains(&a) {
            continue;
        }
        let b = members(k1, &kind_of).choose(&mut g.rng).cloned().expect("kind present");
        let c = members(k2, &kind_of).choose(&mut g.rng).cloned().expect("kind present");
        let step1 = sorted(vec![a.clone(), b.clone()]);
        let Some((inter, cls1)) = g.fire(&step1) else { continue };
        if cls1 != c1 || catalog.contains(&inter) || targets.contains(&inter) {
            continue;
        }
        let step2 = sorted(vec![inter.clone(), c.clone()]);
        let Some((target, cls2)) = g.fire(&step2) else { continue };
        if cls2 != c2 || targets.contains(&target) || catalog.contains(&target) {
            continue;
        }
        catalog.insert(a.clone());
        catalog.insert(inter.clone());
        targets.insert(inter.clone());
        targets.insert(target.clone());
        truths.push(Reaction { reactants: step1, product: inter, class_id: Some(cls1) });
        truths.push(Reaction { reactants: step2, product: target, class_id: Some(cls2) });
        chains += 1;
    }
    if chains < params.chains {
        return Err(SynthError::Shortfall { what: "chains", wanted: params.chains, got: chains });
    }
    // top up to the requested size after any duplicate reservations
    for (i, (kind, list)) in shuffled.iter().enumerate().cycle() {
        if catalog.len() >= params.catalog_size {
            break;
        }
        if cursor[i] < list.len() {
            let s = list[cursor[i]].clone();
            cursor[i] += 1;
            kind_of.insert(s.clone(), *kind);
            catalog.insert(s);
        } else if cursor.iter().zip(&shuffled).all(|(c, (_, l))| *c >= l.len()) {
            break;
        }
    }

    // products that must not feed another recorded reaction
    let used: BTreeSet<String> = truths.iter().flat_map(|t| t.reactants.iter().cloned()).collect();

    // single-reactant reactions
    let mut singles = 0;
    let mut single_pool: Vec<String> = members(Kind::Nitrile, &kind_of);
    single_pool.extend(members(Kind::Nitro, &kind_of));
    single_pool.shuffle(&mut g.rng);
    for s in single_pool {
        if singles == params.single_reactant {
            break;
        }
        let Some((product, cls)) = g.fire(std::slice::from_ref(&s)) else { continue };
        if targets.contains(&product) || used.contains(&product) || catalog.contains(&product) {
            continue;
        }
        targets.insert(product.clone());
        truths.push(Reaction { reactants: vec![s], product, class_id: Some(cls) });
        singles += 1;
    }

    // two-reactant reactions across the pair templates
    let mut slot = 0usize;
    let mut tries = 0;
    while truths.len() < params.truths && tries < 100 * params.truths {
        tries += 1;
        let (cls, ka, kb) = PAIR_CLASSES[slot % PAIR_CLASSES.len()];
        let a = members(ka, &kind_of).choose(&mut g.rng).cloned().expect("kind present");
        let b = members(kb, &kind_of).choose(&mut g.rng).cloned().expect("kind present");
        let reactants = sorted(vec![a, b]);
        let Some((product, fired)) = g.fire(&reactants) else { continue };
        if fired != cls || targets.contains(&product) || catalog.contains(&product) || used.contains(&product) {
            continue;
        }
        if reactants.iter().any(|r| targets.contains(r)) {
            continue;
        }
        targets.insert(product.clone());
        truths.push(Reaction { reactants, product, class_id: Some(fired) });
        slot += 1;
    }
    if truths.len() < params.truths {
        return Err(SynthError::Shortfall { what: "recorded reactions", wanted: params.truths, got: truths.len() });
    }
    // only the planted chains may link recorded reactions
    debug_assert_eq!(chain_ground_truth(&truths).len(), params.chains);

    let corpus = class_corpus(&mut g, &pool, params.corpus);
    Ok(Benchmark { catalog: catalog.into_iter().collect(), library, truths, corpus })
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

/// Balanced labeled reactions over the whole variant pool.
fn class_corpus(g: &mut Gen<'_>, pool: &BTreeMap<Kind, Vec<String>>, size: usize) -> Vec<Reaction> {
    let per_class = size / CLASS_COUNT;
    let mut out = Vec::with_capacity(size);
    let all: Vec<&String> = pool.values().flatten().collect();
    for class in 0..CLASS_COUNT {
        let mut got = 0;
        let mut tries = 0;
        let want = per_class + usize::from(class < size % CLASS_COUNT);
        while got < want && tries < 10_000 * want.max(1) {
            tries += 1;
            let reactants = match class {
                7 => vec![pool[&Kind::Nitrile].choose(&mut g.rng).cloned().expect("present")],
                8 => vec![pool[&Kind::Nitro].choose(&mut g.rng).cloned().expect("present")],
                9 => sorted(vec![(*all.choose(&mut g.rng).expect("present")).clone(), (*all.choose(&mut g.rng).expect("present")).clone()]),
                _ => {
                    let (_, ka, kb) = PAIR_CLASSES[class];
                    let a = pool[&ka].choose(&mut g.rng).cloned().expect("present");
                    let b = pool[&kb].choose(&mut g.rng).cloned().expect("present");
                    sorted(vec![a, b])
                }
            };
            if let Some((product, fired)) = g.fire(&reactants) {
                if fired == class {
                    out.push(Reaction { reactants, product, class_id: Some(fired) });
                    got += 1;
                }
            }
        }
    }
    out.shuffle(&mut g.rng);
    out
}

/// Deterministic 80/20 split.
pub fn split_corpus(corpus: &[Reaction], seed: u64) -> (Vec<Reaction>, Vec<Reaction>) {
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = corpus.len() * 4 / 5;
    let train = idx[..cut].iter().map(|&i| corpus[i].clone()).collect();
    let test = idx[cut..].iter().map(|&i| corpus[i].clone()).collect();
    (train, test)
}
