use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retrosmc_chem::{canonicalize, parse_smiles, Atom, Bond, BondOrder, Element, MolGraph};

const ELEMENTS: [Element; 6] = [Element::C, Element::C, Element::C, Element::N, Element::O, Element::S];

/// Random valid molecule: a random tree, a few ring-closing edges, and
/// occasionally a fused benzene ring.
fn random_graph(rng: &mut ChaCha8Rng, max_atoms: usize) -> MolGraph {
    let n = rng.random_range(1..=max_atoms);
    let mut atoms: Vec<Atom> = (0..n).map(|_| Atom::new(ELEMENTS[rng.random_range(0..ELEMENTS.len())])).collect();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut used = vec![0i32; n];
    let cap = |a: &Atom| a.element.max_valence(a.charge);

    if n >= 6 && rng.random_bool(0.3) {
        for i in 0..6 {
            atoms[i] = Atom { element: Element::C, charge: 0, aromatic: true };
            bonds.push(Bond { a: i, b: (i + 1) % 6, order: BondOrder::Aromatic });
            used[i] = 3;
        }
    }
    let start = bonds.len().min(6).max(1);
    for i in start..n {
        let mut tries = 0;
        loop {
            let p = rng.random_range(0..i);
            let room = (cap(&atoms[p]) - used[p]).min(cap(&atoms[i]) - used[i]);
            if room >= 1 {
                let order = match rng.random_range(0..room.min(3)) {
                    0 => BondOrder::Single,
                    1 => BondOrder::Double,
                    _ => BondOrder::Triple,
                };
                let u = order.valence_units();
                used[p] += u;
                used[i] += u;
                bonds.push(Bond { a: p, b: i, order });
                break;
            }
            tries += 1;
            if tries > 50 {
                // fall back to a fresh carbon attached to an earlier carbon chain end
                atoms[i] = Atom::new(Element::F);
                let p = (0..i).find(|&p| cap(&atoms[p]) - used[p] >= 1);
                match p {
                    Some(p) => {
                        used[p] += 1;
                        used[i] += 1;
                        bonds.push(Bond { a: p, b: i, order: BondOrder::Single });
                    }
                    None => return random_graph(rng, max_atoms),
                }
                break;
            }
        }
    }
    for _ in 0..rng.random_range(0..3) {
        if n < 3 {
            break;
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || bonds.iter().any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a)) {
            continue;
        }
        if atoms[a].aromatic && atoms[b].aromatic {
            continue;
        }
        if cap(&atoms[a]) - used[a] >= 1 && cap(&atoms[b]) - used[b] >= 1 {
            used[a] += 1;
            used[b] += 1;
            bonds.push(Bond { a, b, order: BondOrder::Single });
        }
    }
    MolGraph::new(atoms, bonds).expect("generator builds connected graphs")
}

fn permuted(g: &MolGraph, rng: &mut ChaCha8Rng) -> MolGraph {
    let n = g.atom_count();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut atoms = vec![g.atoms()[0]; n];
    for (old, &new) in perm.iter().enumerate() {
        atoms[new] = g.atoms()[old];
    }
    let mut bonds: Vec<Bond> = g
        .bonds()
        .iter()
        .map(|b| if rng.random_bool(0.5) {
            Bond { a: perm[b.a], b: perm[b.b], order: b.order }
        } else {
            Bond { a: perm[b.b], b: perm[b.a], order: b.order }
        })
        .collect();
    bonds.shuffle(rng);
    MolGraph::new(atoms, bonds).unwrap()
}

/// Exhaustive isomorphism test for small graphs.
fn isomorphic(g: &MolGraph, h: &MolGraph) -> bool {
    let n = g.atom_count();
    if n != h.atom_count() || g.bonds().len() != h.bonds().len() {
        return false;
    }
    fn extend(g: &MolGraph, h: &MolGraph, map: &mut Vec<usize>, used: &mut [bool]) -> bool {
        let i = map.len();
        if i == g.atom_count() {
            return true;
        }
        for j in 0..h.atom_count() {
            if used[j] || g.atoms()[i] != h.atoms()[j] || g.degree(i) != h.degree(j) {
                continue;
            }
            let ok = (0..i).all(|k| g.bond_between(i, k) == h.bond_between(j, map[k]));
            if ok {
                used[j] = true;
                map.push(j);
                if extend(g, h, map, used) {
                    return true;
                }
                map.pop();
                used[j] = false;
            }
        }
        false
    }
    extend(g, h, &mut Vec::new(), &mut vec![false; n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn relabelling_preserves_canonical_string(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 24);
        let h = permuted(&g, &mut rng);
        prop_assert_eq!(canonicalize(&g), canonicalize(&h));
    }

    #[test]
    fn canonical_string_is_a_fixed_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 24);
        let s = canonicalize(&g);
        let reparsed = parse_smiles(&s).unwrap();
        prop_assert!(isomorphic_large(&g, &reparsed));
        prop_assert_eq!(canonicalize(&reparsed), s);
    }
}

fn isomorphic_large(g: &MolGraph, h: &MolGraph) -> bool {
    // cheap invariants only; exact check is the small-graph oracle below
    let mut a: Vec<_> = (0..g.atom_count()).map(|i| (g.atoms()[i].element, g.degree(i), g.valence(i))).collect();
    let mut b: Vec<_> = (0..h.atom_count()).map(|i| (h.atoms()[i].element, h.degree(i), h.valence(i))).collect();
    a.sort();
    b.sort();
    a == b
}

#[test]
fn equal_strings_exactly_when_isomorphic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let graphs: Vec<MolGraph> = (0..300).map(|_| random_graph(&mut rng, 7)).collect();
    let strings: Vec<String> = graphs.iter().map(canonicalize).collect();
    let mut same = 0;
    for i in 0..graphs.len() {
        for j in i + 1..graphs.len() {
            let iso = isomorphic(&graphs[i], &graphs[j]);
            assert_eq!(strings[i] == strings[j], iso, "{} vs {}", strings[i], strings[j]);
            same += usize::from(iso);
        }
    }
    // the oracle must see both outcomes to mean anything
    assert!(same > 0);
}

#[test]
fn small_graphs_round_trip_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let g = random_graph(&mut rng, 9);
        let back = parse_smiles(&canonicalize(&g)).unwrap();
        assert!(isomorphic(&g, &back), "{}", canonicalize(&g));
    }
}

#[test]
fn symmetric_molecules() {
    let cases = [
        ("C1CC2CCC1CC2", "C12CCC(CC1)CC2"),
        ("C12C3C4C1C5C2C3C45", "C1(C2C3C41)C5C2C3C45"),
        ("c1ccc2ccccc2c1", "c1cc2ccccc2cc1"),
        ("C1CCC2(CC1)CCCCC2", "C1CCCCC12CCCCC2"),
        ("OC(=O)CC(O)(CC(=O)O)C(=O)O", "O=C(O)C(O)(CC(O)=O)CC(=O)O"),
        ("[O-][N+](=O)c1ccccc1", "c1ccc([N+]([O-])=O)cc1"),
    ];
    for (a, b) in cases {
        let ca = canonicalize(&parse_smiles(a).unwrap());
        let cb = canonicalize(&parse_smiles(b).unwrap());
        assert_eq!(ca, cb, "{a} vs {b}");
    }
}

#[test]
fn distinct_molecules_stay_distinct() {
    let set = ["CCO", "COC", "CC=O", "C=CO", "c1ccccc1", "C1CCCCC1", "CC(C)C", "CCCC", "c1ccncc1", "c1ccccn1"];
    let mut strings: Vec<String> = set.iter().map(|s| canonicalize(&parse_smiles(s).unwrap())).collect();
    strings.sort();
    strings.dedup();
    // pyridine written twice
    assert_eq!(strings.len(), set.len() - 1);
}

#[test]
fn aromatic_single_bonds_are_explicit() {
    let s = canonicalize(&parse_smiles("c1ccccc1-c1ccccc1").unwrap());
    assert!(s.contains('-'), "{s}");
    assert_eq!(canonicalize(&parse_smiles(&s).unwrap()), s);
}
