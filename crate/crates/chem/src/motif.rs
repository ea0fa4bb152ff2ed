//! Substructure motifs and mapped rewrites.
//!
//! A motif is written in the SMILES dialect with `;D<n>` degree constraints,
//! `:<n>` atom maps and `.`-separated components. Matching is plain subgraph
//! embedding: element, aromatic flag and charge must agree, bond orders must
//! be identical, and a degree constraint fixes the heavy-atom degree of the
//! matched atom.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::error::SmilesError;
use crate::graph::{Atom, Bond, BondOrder, MolGraph};
use crate::smiles::parse_raw;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MotifError {
    #[error(transparent)]
    Syntax(#[from] SmilesError),
    #[error("atom map {0} is used twice")]
    DuplicateMap(u32),
    #[error("product motif must be a single component")]
    ProductComponents,
    #[error("product atom map {0} does not occur in the pattern")]
    UnknownMap(u32),
    #[error("rewrite keeps no mapped atom")]
    NothingKept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotifAtom {
    pub atom: Atom,
    pub degree: Option<u8>,
    pub map: Option<u32>,
    pub component: usize,
}

#[derive(Debug, Clone)]
pub struct Motif {
    atoms: Vec<MotifAtom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, BondOrder)>>,
    components: usize,
    // per component: atoms in search order, each with an earlier bonded anchor
    plans: Vec<Vec<(usize, Option<usize>)>>,
}

impl Motif {
    pub fn parse(text: &str) -> Result<Self, MotifError> {
        let raw = parse_raw(text, true)?;
        let atoms: Vec<MotifAtom> = raw
            .atoms
            .iter()
            .map(|r| MotifAtom { atom: r.atom, degree: r.degree, map: r.map, component: r.component })
            .collect();
        let mut seen = std::collections::HashSet::new();
        for a in &atoms {
            if let Some(m) = a.map {
                if !seen.insert(m) {
                    return Err(MotifError::DuplicateMap(m));
                }
            }
        }
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for b in &raw.bonds {
            adjacency[b.a].push((b.b, b.order));
            adjacency[b.b].push((b.a, b.order));
        }
        let components = atoms.iter().map(|a| a.component + 1).max().unwrap_or(0);
        let plans = (0..components).map(|c| search_plan(&atoms, &adjacency, c)).collect();
        Ok(Motif { atoms, bonds: raw.bonds, adjacency, components, plans })
    }

    pub fn atoms(&self) -> &[MotifAtom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn component_count(&self) -> usize {
        self.components
    }

    /// Whether any component embeds in `g`.
    pub fn matches(&self, g: &MolGraph) -> bool {
        (0..self.components).any(|c| !self.embeddings(c, g).is_empty())
    }

    /// All embeddings of component `c` into `g`, in deterministic order.
    /// Each embedding maps motif atom index to graph atom index; atoms of
    /// other components map to `usize::MAX`.
    pub fn embeddings(&self, c: usize, g: &MolGraph) -> Vec<Vec<usize>> {
        let plan = &self.plans[c];
        let mut out = Vec::new();
        let mut assign = vec![usize::MAX; self.atoms.len()];
        let mut used = vec![false; g.atom_count()];
        self.extend(plan, 0, g, &mut assign, &mut used, &mut out);
        out
    }

    fn extend(
        &self,
        plan: &[(usize, Option<usize>)],
        depth: usize,
        g: &MolGraph,
        assign: &mut [usize],
        used: &mut [bool],
        out: &mut Vec<Vec<usize>>,
    ) {
        let Some(&(m, anchor)) = plan.get(depth) else {
            out.push(assign.to_vec());
            return;
        };
        let candidates: Vec<usize> = match anchor {
            Some(a) => {
                let mut v: Vec<usize> = g.neighbors(assign[a]).map(|(nb, _)| nb).collect();
                v.sort_unstable();
                v
            }
            None => (0..g.atom_count()).collect(),
        };
        for x in candidates {
            if used[x] || !self.atom_fits(m, g, x) || !self.bonds_fit(m, g, x, assign) {
                continue;
            }
            assign[m] = x;
            used[x] = true;
            self.extend(plan, depth + 1, g, assign, used, out);
            used[x] = false;
            assign[m] = usize::MAX;
        }
    }

    fn atom_fits(&self, m: usize, g: &MolGraph, x: usize) -> bool {
        let ma = &self.atoms[m];
        let ga = g.atoms()[x];
        ma.atom == ga && ma.degree.is_none_or(|d| usize::from(d) == g.degree(x))
    }

    fn bonds_fit(&self, m: usize, g: &MolGraph, x: usize, assign: &[usize]) -> bool {
        self.adjacency[m].iter().all(|&(other, order)| {
            let y = assign[other];
            y == usize::MAX || g.bond_between(x, y) == Some(order)
        })
    }
}

fn search_plan(atoms: &[MotifAtom], adjacency: &[Vec<(usize, BondOrder)>], c: usize) -> Vec<(usize, Option<usize>)> {
    let mut plan = Vec::new();
    let mut placed = vec![false; atoms.len()];
    for start in 0..atoms.len() {
        if atoms[start].component != c || placed[start] {
            continue;
        }
        placed[start] = true;
        plan.push((start, None));
        let mut head = plan.len() - 1;
        while head < plan.len() {
            let (cur, _) = plan[head];
            head += 1;
            for &(nb, _) in &adjacency[cur] {
                if !placed[nb] {
                    placed[nb] = true;
                    plan.push((nb, Some(cur)));
                }
            }
        }
    }
    plan
}

/// A mapped rewrite from a reactant pattern to a product motif.
///
/// Applying it to a matched reactant set: mapped atoms take the product's
/// element, charge and aromatic flag; mapped atoms missing from the product
/// are deleted; unmapped product atoms are added; bonds between kept mapped
/// atoms are made to agree with the product. The result is the connected
/// piece holding the lowest-numbered kept map.
#[derive(Debug, Clone)]
pub struct Rewrite {
    pattern: Motif,
    product: Motif,
    // product atom index by map number
    product_maps: BTreeMap<u32, usize>,
}

impl Rewrite {
    pub fn new(pattern: &str, product: &str) -> Result<Self, MotifError> {
        let pattern = Motif::parse(pattern)?;
        let product = Motif::parse(product)?;
        if product.components != 1 {
            return Err(MotifError::ProductComponents);
        }
        let pattern_maps: std::collections::HashSet<u32> = pattern.atoms.iter().filter_map(|a| a.map).collect();
        let mut product_maps = BTreeMap::new();
        for (i, a) in product.atoms.iter().enumerate() {
            if let Some(m) = a.map {
                if !pattern_maps.contains(&m) {
                    return Err(MotifError::UnknownMap(m));
                }
                product_maps.insert(m, i);
            }
        }
        if product_maps.is_empty() {
            return Err(MotifError::NothingKept);
        }
        Ok(Rewrite { pattern, product, product_maps })
    }

    /// Number of reactants the rewrite consumes.
    pub fn arity(&self) -> usize {
        self.pattern.components
    }

    pub fn pattern(&self) -> &Motif {
        &self.pattern
    }

    /// First valid product for this reactant set, trying every assignment of
    /// pattern components to reactants and every embedding in order.
    /// Embeddings whose result breaks a valence limit are skipped.
    pub fn apply(&self, reactants: &[&MolGraph]) -> Option<MolGraph> {
        let k = self.arity();
        if reactants.len() != k {
            return None;
        }
        for perm in permutations(k) {
            // perm[c] = reactant index for component c
            let mut per_component: Vec<Vec<Vec<usize>>> = Vec::with_capacity(k);
            for (c, &r) in perm.iter().enumerate() {
                let e = self.pattern.embeddings(c, reactants[r]);
                if e.is_empty() {
                    break;
                }
                per_component.push(e);
            }
            if per_component.len() != k {
                continue;
            }
            let mut idx = vec![0usize; k];
            loop {
                if let Some(p) = self.rewrite(reactants, &perm, &per_component, &idx) {
                    return Some(p);
                }
                // odometer over embedding choices, last component fastest
                let mut pos = k;
                let advanced = loop {
                    if pos == 0 {
                        break false;
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] < per_component[pos].len() {
                        break true;
                    }
                    idx[pos] = 0;
                };
                if !advanced {
                    break;
                }
            }
        }
        None
    }

    fn rewrite(
        &self,
        reactants: &[&MolGraph],
        perm: &[usize],
        per_component: &[Vec<Vec<usize>>],
        idx: &[usize],
    ) -> Option<MolGraph> {
        let mut offsets = Vec::with_capacity(reactants.len());
        let mut atoms: Vec<Atom> = Vec::new();
        let mut bonds: HashMap<(usize, usize), BondOrder> = HashMap::new();
        for r in reactants {
            offsets.push(atoms.len());
            let base = atoms.len();
            atoms.extend_from_slice(r.atoms());
            for b in r.bonds() {
                bonds.insert(key(base + b.a, base + b.b), b.order);
            }
        }
        // map number -> combined index
        let mut located: BTreeMap<u32, usize> = BTreeMap::new();
        for (c, &r) in perm.iter().enumerate() {
            let emb = &per_component[c][idx[c]];
            for (m, ma) in self.pattern.atoms.iter().enumerate() {
                if ma.component == c {
                    if let Some(map) = ma.map {
                        located.insert(map, offsets[r] + emb[m]);
                    }
                }
            }
        }
        let mut alive = vec![true; atoms.len()];
        for (&map, &x) in &located {
            match self.product_maps.get(&map) {
                Some(&p) => atoms[x] = self.product.atoms[p].atom,
                None => alive[x] = false,
            }
        }
        let kept: Vec<(usize, usize)> = self
            .product_maps
            .iter()
            .map(|(map, &p)| (p, located[map]))
            .collect();
        for (i, &(_, x)) in kept.iter().enumerate() {
            for &(_, y) in &kept[i + 1..] {
                bonds.remove(&key(x, y));
            }
        }
        // product atom index -> combined index, adding unmapped atoms
        let mut place = vec![usize::MAX; self.product.atoms.len()];
        for &(p, x) in &kept {
            place[p] = x;
        }
        for (p, pa) in self.product.atoms.iter().enumerate() {
            if pa.map.is_none() {
                place[p] = atoms.len();
                atoms.push(pa.atom);
                alive.push(true);
            }
        }
        for b in &self.product.bonds {
            bonds.insert(key(place[b.a], place[b.b]), b.order);
        }
        bonds.retain(|&(a, b), _| alive[a] && alive[b]);

        let anchor = place[*self.product_maps.values().next().expect("non-empty")];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); atoms.len()];
        for &(a, b) in bonds.keys() {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut keep = vec![false; atoms.len()];
        keep[anchor] = true;
        let mut stack = vec![anchor];
        while let Some(a) = stack.pop() {
            for &b in &adj[a] {
                if !keep[b] {
                    keep[b] = true;
                    stack.push(b);
                }
            }
        }
        let mut new_index = vec![usize::MAX; atoms.len()];
        let mut out_atoms = Vec::new();
        for (i, a) in atoms.iter().enumerate() {
            if keep[i] {
                new_index[i] = out_atoms.len();
                out_atoms.push(*a);
            }
        }
        let mut out_bonds: Vec<Bond> = bonds
            .iter()
            .filter(|(&(a, _), _)| keep[a])
            .map(|(&(a, b), &order)| Bond { a: new_index[a], b: new_index[b], order })
            .collect();
        out_bonds.sort_unstable_by_key(|b| (b.a, b.b));
        let g = MolGraph::new(out_atoms, out_bonds).ok()?;
        if g.first_valence_violation().is_some() {
            return None;
        }
        Some(g)
    }
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}
