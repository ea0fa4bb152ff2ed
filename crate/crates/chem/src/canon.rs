//! Canonical SMILES.
//!
//! Atoms are ranked by iterative Morgan-style refinement seeded with
//! (element, degree, charge, aromatic flag). Remaining ties are resolved by
//! individualizing each member of the first tied class in turn and keeping
//! the lexicographically smallest string over all resulting total orders.
//! Branches proven equivalent by an automorphism already discovered (two
//! leaves writing the same string) are skipped.

use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::graph::{BondOrder, MolGraph};
use crate::HASH_SEED;

/// Canonical SMILES of a connected molecule. Isomorphic graphs give
/// byte-identical strings.
pub fn canonicalize(g: &MolGraph) -> String {
    let (s, _) = canonical_form(g);
    // writer emits ASCII only
    String::from_utf8(s).expect("canonical SMILES is ASCII")
}

/// Canonical string together with the atom order it was written in.
pub fn canonical_form(g: &MolGraph) -> (Vec<u8>, Vec<usize>) {
    let mut search = Search { g, best: None, first: None, automorphisms: Vec::new() };
    let mut fixed = Vec::new();
    search.descend(initial_ranks(g), &mut fixed);
    search.best.expect("search visits at least one leaf")
}

fn initial_ranks(g: &MolGraph) -> Vec<u32> {
    let keys: Vec<(u8, usize, i8, bool)> = (0..g.atom_count())
        .map(|i| {
            let a = g.atoms()[i];
            (a.element.atomic_number(), g.degree(i), a.charge, a.aromatic)
        })
        .collect();
    dense_ranks(&keys)
}

fn dense_ranks<K: Ord + Copy>(keys: &[K]) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0u32; keys.len()];
    let mut r = 0u32;
    for w in 0..idx.len() {
        if w > 0 && keys[idx[w]] != keys[idx[w - 1]] {
            r += 1;
        }
        ranks[idx[w]] = r;
    }
    ranks
}

fn class_count(ranks: &[u32]) -> u32 {
    ranks.iter().copied().max().map_or(0, |m| m + 1)
}

fn refine(g: &MolGraph, mut ranks: Vec<u32>) -> Vec<u32> {
    let n = ranks.len();
    let mut classes = class_count(&ranks);
    let mut buf: Vec<u8> = Vec::with_capacity(64);
    let mut env: Vec<(u8, u32)> = Vec::with_capacity(8);
    loop {
        if classes as usize == n {
            return ranks;
        }
        let keys: Vec<(u32, u64)> = (0..n)
            .map(|i| {
                env.clear();
                env.extend(g.neighbors(i).map(|(nb, o)| (o.code(), ranks[nb])));
                env.sort_unstable();
                buf.clear();
                for &(o, r) in &env {
                    buf.push(o);
                    buf.extend_from_slice(&r.to_le_bytes());
                }
                (ranks[i], xxh3_64_with_seed(&buf, HASH_SEED))
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_classes = class_count(&next);
        if next_classes == classes {
            return ranks;
        }
        ranks = next;
        classes = next_classes;
    }
}

fn individualize(ranks: &[u32], atom: usize) -> Vec<u32> {
    let keys: Vec<(u32, bool)> = ranks.iter().enumerate().map(|(i, &r)| (r, i != atom)).collect();
    dense_ranks(&keys)
}

struct Search<'g> {
    g: &'g MolGraph,
    best: Option<(Vec<u8>, Vec<usize>)>,
    first: Option<(Vec<u8>, Vec<usize>)>,
    automorphisms: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn descend(&mut self, ranks: Vec<u32>, fixed: &mut Vec<usize>) {
        let ranks = refine(self.g, ranks);
        let Some(target) = first_tied_class(&ranks) else {
            self.leaf(&ranks);
            return;
        };
        let members: Vec<usize> = (0..ranks.len()).filter(|&i| ranks[i] == target).collect();
        let mut explored: Vec<usize> = Vec::new();
        for v in members {
            if !explored.is_empty() && self.same_orbit(v, &explored, fixed) {
                continue;
            }
            fixed.push(v);
            self.descend(individualize(&ranks, v), fixed);
            fixed.pop();
            explored.push(v);
        }
    }

    fn same_orbit(&self, v: usize, explored: &[usize], fixed: &[usize]) -> bool {
        let n = self.g.atom_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut any = false;
        for gamma in &self.automorphisms {
            if fixed.iter().all(|&f| gamma[f] == f) {
                any = true;
                for (i, &j) in gamma.iter().enumerate() {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        if !any {
            return false;
        }
        let root = find(&mut parent, v);
        explored.iter().any(|&u| find(&mut parent, u) == root)
    }

    fn leaf(&mut self, ranks: &[u32]) {
        let (s, order) = write_smiles(self.g, ranks);
        for reference in [&self.first, &self.best].into_iter().flatten() {
            if reference.0 == s {
                let mut gamma = vec![0usize; order.len()];
                for (pos, &atom) in reference.1.iter().enumerate() {
                    gamma[atom] = order[pos];
                }
                if !self.automorphisms.contains(&gamma) {
                    self.automorphisms.push(gamma);
                }
            }
        }
        if self.first.is_none() {
            self.first = Some((s.clone(), order.clone()));
        }
        match &self.best {
            Some((b, _)) if *b <= s => {}
            _ => self.best = Some((s, order)),
        }
    }
}

fn first_tied_class(ranks: &[u32]) -> Option<u32> {
    let mut counts = vec![0u32; ranks.len()];
    for &r in ranks {
        counts[r as usize] += 1;
    }
    counts.iter().position(|&c| c > 1).map(|p| p as u32)
}

/// Write SMILES for a total atom order (`ranks` all distinct). Returns the
/// string and the atoms in written order.
pub(crate) fn write_smiles(g: &MolGraph, ranks: &[u32]) -> (Vec<u8>, Vec<usize>) {
    let n = g.atom_count();
    let start = (0..n).min_by_key(|&i| ranks[i]).expect("non-empty graph");

    // pass 1: spanning tree and ring-closure bonds
    let mut position = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut rings: Vec<Vec<usize>> = vec![Vec::new(); n];
    let sorted_nbrs: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut v: Vec<usize> = g.neighbors(i).map(|(nb, _)| nb).collect();
            v.sort_by_key(|&nb| ranks[nb]);
            v
        })
        .collect();
    // iterative DFS with explicit (atom, parent, next neighbor index)
    let mut stack: Vec<(usize, usize, usize)> = vec![(start, usize::MAX, 0)];
    position[start] = 0;
    order.push(start);
    while let Some(top) = stack.last_mut() {
        let (atom, parent, next) = *top;
        if next >= sorted_nbrs[atom].len() {
            stack.pop();
            continue;
        }
        top.2 += 1;
        let nb = sorted_nbrs[atom][next];
        if nb == parent {
            continue;
        }
        if position[nb] == usize::MAX {
            position[nb] = order.len();
            order.push(nb);
            children[atom].push(nb);
            stack.push((nb, atom, 0));
        } else if position[nb] < position[atom] && !rings[atom].contains(&nb) {
            // back edge to an ancestor: closes a ring
            rings[atom].push(nb);
            rings[nb].push(atom);
        }
    }
    // pass 2: emit
    let mut out = Vec::with_capacity(n * 2);
    let mut digit_of: std::collections::HashMap<(usize, usize), u8> = std::collections::HashMap::new();
    let mut open = [false; 10];
    emit(g, start, usize::MAX, &children, &mut rings, &position, &mut digit_of, &mut open, &mut out);
    (out, order)
}

#[allow(clippy::too_many_arguments)]
fn emit(
    g: &MolGraph,
    root: usize,
    root_parent: usize,
    children: &[Vec<usize>],
    rings: &mut [Vec<usize>],
    position: &[usize],
    digit_of: &mut std::collections::HashMap<(usize, usize), u8>,
    open: &mut [bool; 10],
    out: &mut Vec<u8>,
) {
    // branches are written as "(" child ... ")" for all but the last child
    enum Frame {
        Enter(usize, usize),
        OpenBranch,
        CloseBranch,
    }
    let mut stack = vec![Frame::Enter(root, root_parent)];
    while let Some(frame) = stack.pop() {
        match frame {
            Frame::OpenBranch => out.push(b'('),
            Frame::CloseBranch => out.push(b')'),
            Frame::Enter(atom, parent) => {
                if parent != usize::MAX {
                    push_bond(g, parent, atom, out);
                }
                push_atom(g, atom, out);
                let mut ring_partners = std::mem::take(&mut rings[atom]);
                ring_partners.sort_by_key(|&p| position[p]);
                let mut closed_here = [false; 10];
                for &p in &ring_partners {
                    let key = (atom.min(p), atom.max(p));
                    if position[p] < position[atom] {
                        let d = digit_of[&key];
                        open[d as usize] = false;
                        closed_here[d as usize] = true;
                        push_digit(d, out);
                    } else {
                        let d = (1..10u8)
                            .find(|&d| !open[d as usize] && !closed_here[d as usize])
                            .expect("more than nine simultaneous ring closures");
                        open[d as usize] = true;
                        digit_of.insert(key, d);
                        push_bond(g, atom, p, out);
                        push_digit(d, out);
                    }
                }
                if let Some((&last, rest)) = children[atom].split_last() {
                    // pushed in reverse so the first child is written first
                    stack.push(Frame::Enter(last, atom));
                    for &c in rest.iter().rev() {
                        stack.push(Frame::CloseBranch);
                        stack.push(Frame::Enter(c, atom));
                        stack.push(Frame::OpenBranch);
                    }
                }
            }
        }
    }
}

fn push_digit(d: u8, out: &mut Vec<u8>) {
    out.push(b'0' + d);
}

fn push_bond(g: &MolGraph, a: usize, b: usize, out: &mut Vec<u8>) {
    let order = g.bond_between(a, b).expect("bond exists");
    let atoms = g.atoms();
    match order {
        BondOrder::Single if atoms[a].aromatic && atoms[b].aromatic => out.push(b'-'),
        BondOrder::Single | BondOrder::Aromatic => {}
        BondOrder::Double => out.push(b'='),
        BondOrder::Triple => out.push(b'#'),
    }
}

fn push_atom(g: &MolGraph, atom: usize, out: &mut Vec<u8>) {
    let a = g.atoms()[atom];
    let sym = a.element.symbol();
    let write_sym = |out: &mut Vec<u8>| {
        if a.aromatic {
            out.extend(sym.bytes().map(|c| c.to_ascii_lowercase()));
        } else {
            out.extend_from_slice(sym.as_bytes());
        }
    };
    if a.charge == 0 {
        write_sym(out);
        return;
    }
    out.push(b'[');
    write_sym(out);
    out.push(if a.charge > 0 { b'+' } else { b'-' });
    let mag = a.charge.unsigned_abs();
    if mag > 1 {
        out.extend_from_slice(mag.to_string().as_bytes());
    }
    out.push(b']');
}
