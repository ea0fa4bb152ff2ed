//! Molecular graph: heavy atoms and bonds, no hydrogens.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::GraphError;

/// Elements of the supported SMILES dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub fn atomic_number(self) -> u8 {
        match self {
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(sym: &str) -> Option<Element> {
        Some(match sym {
            "B" => Element::B,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "P" => Element::P,
            "S" => Element::S,
            "F" => Element::F,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            _ => return None,
        })
    }

    /// Whether the element may be written in lowercase aromatic form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(self, Element::B | Element::C | Element::N | Element::O | Element::S | Element::P)
    }

    /// Maximum number of bond-order units an atom of this element may carry.
    ///
    /// Lone-pair elements gain one unit per positive charge and lose one per
    /// negative charge; boron and carbon lose one per unit of charge either way.
    pub fn max_valence(self, charge: i8) -> i32 {
        let charge = i32::from(charge);
        match self {
            Element::B => 3 - charge.abs(),
            Element::C => 4 - charge.abs(),
            Element::N => 3 + charge,
            Element::O => 2 + charge,
            Element::P => 5 + charge,
            Element::S => 6 + charge,
            Element::F | Element::Cl | Element::Br | Element::I => 1 + charge,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Small integer code used by hashing and canonical ordering.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    /// Contribution to the valence sum. Aromatic bonds count one unit each;
    /// aromatic B/C atoms get one extra unit for the delocalised bond.
    pub fn valence_units(self) -> i32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    pub aromatic: bool,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom { element, charge: 0, aromatic: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// A connected molecule. Construct through [`MolGraph::new`], which checks
/// the structural invariants; the SMILES parser additionally checks valence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    // (neighbor, bond index), in bond insertion order
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolGraph {
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        if atoms.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, bond) in bonds.iter().enumerate() {
            if bond.a >= atoms.len() || bond.b >= atoms.len() {
                return Err(GraphError::BadEndpoint { bond: i });
            }
            if bond.a == bond.b {
                return Err(GraphError::SelfBond { atom: bond.a });
            }
            if adjacency[bond.a].iter().any(|&(n, _)| n == bond.b) {
                return Err(GraphError::DuplicateBond { a: bond.a, b: bond.b });
            }
            adjacency[bond.a].push((bond.b, i));
            adjacency[bond.b].push((bond.a, i));
        }
        let graph = MolGraph { atoms, bonds, adjacency };
        if !graph.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(graph)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    /// Neighbors of `atom` as (neighbor index, bond order).
    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.adjacency[atom].iter().map(move |&(n, b)| (n, self.bonds[b].order))
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<BondOrder> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, i)| self.bonds[i].order)
    }

    /// Bond-order units used by `atom`.
    pub fn valence(&self, atom: usize) -> i32 {
        valence_of(&self.atoms[atom], self.neighbors(atom).map(|(_, o)| o))
    }

    /// Index of the first atom whose valence exceeds its element maximum.
    pub fn first_valence_violation(&self) -> Option<usize> {
        (0..self.atoms.len()).find(|&i| self.valence(i) > self.atoms[i].element.max_valence(self.atoms[i].charge))
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(a) = stack.pop() {
            for &(n, _) in &self.adjacency[a] {
                if !seen[n] {
                    seen[n] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        count == self.atoms.len()
    }
}

pub(crate) fn valence_of(atom: &Atom, orders: impl Iterator<Item = BondOrder>) -> i32 {
    let mut sum = 0;
    let mut any_aromatic = false;
    for o in orders {
        any_aromatic |= o == BondOrder::Aromatic;
        sum += o.valence_units();
    }
    if any_aromatic && matches!(atom.element, Element::B | Element::C) {
        sum += 1;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carbon() -> Atom {
        Atom::new(Element::C)
    }

    #[test]
    fn rejects_self_and_duplicate_bonds() {
        let atoms = vec![carbon(), carbon()];
        let selfb = vec![Bond { a: 0, b: 0, order: BondOrder::Single }];
        assert_eq!(MolGraph::new(atoms.clone(), selfb), Err(GraphError::SelfBond { atom: 0 }));
        let dup = vec![
            Bond { a: 0, b: 1, order: BondOrder::Single },
            Bond { a: 1, b: 0, order: BondOrder::Double },
        ];
        assert_eq!(MolGraph::new(atoms, dup), Err(GraphError::DuplicateBond { a: 1, b: 0 }));
    }

    #[test]
    fn rejects_disconnected() {
        let atoms = vec![carbon(), carbon()];
        assert_eq!(MolGraph::new(atoms, vec![]), Err(GraphError::Disconnected));
    }

    #[test]
    fn charge_adjusts_valence() {
        assert_eq!(Element::N.max_valence(1), 4);
        assert_eq!(Element::O.max_valence(-1), 1);
        assert_eq!(Element::C.max_valence(-1), 3);
        assert_eq!(Element::Br.max_valence(0), 1);
    }
}
