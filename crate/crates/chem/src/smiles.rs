//! Parser for the restricted SMILES dialect.
//!
//! Supported: organic-subset atoms `B C N O P S F Cl Br I`, aromatic
//! `b c n o p s`, branches, ring-closure digits 1-9, bonds `- = #`, and
//! bracket atoms carrying a formal charge. Stereo marks, isotopes and
//! explicit hydrogens are rejected.
//!
//! Template motifs reuse the same grammar with two bracket extensions,
//! `;D<n>` (exact heavy-atom degree) and `:<n>` (atom map), plus `.` as a
//! component separator.

use crate::error::{SmilesError, SmilesErrorKind};
use crate::graph::{valence_of, Atom, Bond, BondOrder, Element, MolGraph};

#[derive(Debug, Clone)]
pub(crate) struct RawAtom {
    pub atom: Atom,
    pub offset: usize,
    pub degree: Option<u8>,
    pub map: Option<u32>,
    pub component: usize,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RawGraph {
    pub atoms: Vec<RawAtom>,
    pub bonds: Vec<Bond>,
}

/// Parse one molecule. `.`-joined input is rejected; callers split first.
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    let raw = parse_raw(text, false)?;
    let atoms: Vec<Atom> = raw.atoms.iter().map(|a| a.atom).collect();
    // valence check needs adjacency, so do it on the raw bond list
    let mut orders: Vec<Vec<BondOrder>> = vec![Vec::new(); atoms.len()];
    for b in &raw.bonds {
        orders[b.a].push(b.order);
        orders[b.b].push(b.order);
    }
    for (i, ra) in raw.atoms.iter().enumerate() {
        let max = ra.atom.element.max_valence(ra.atom.charge);
        if valence_of(&ra.atom, orders[i].iter().copied()) > max {
            return Err(SmilesError::new(
                ra.offset,
                SmilesErrorKind::Valence { element: ra.atom.element.symbol(), max },
            ));
        }
    }
    MolGraph::new(atoms, raw.bonds).map_err(|e| SmilesError::new(0, e.into()))
}

struct RingOpen {
    atom: usize,
    order: Option<BondOrder>,
    offset: usize,
}

pub(crate) fn parse_raw(text: &str, motif: bool) -> Result<RawGraph, SmilesError> {
    let bytes = text.as_bytes();
    if bytes.is_empty() {
        return Err(SmilesError::new(0, SmilesErrorKind::UnexpectedEnd));
    }
    let mut g = RawGraph::default();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondOrder, usize)> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut rings: [Option<RingOpen>; 10] = Default::default();
    let mut component = 0usize;
    let mut pos = 0usize;

    while pos < bytes.len() {
        let c = bytes[pos];
        let start = pos;
        match c {
            b'(' => {
                let Some(p) = prev else {
                    return Err(SmilesError::new(pos, SmilesErrorKind::UnbalancedParenthesis));
                };
                if pending.is_some() {
                    return Err(SmilesError::new(pos, SmilesErrorKind::DanglingBond));
                }
                branches.push((p, pos));
                pos += 1;
            }
            b')' => {
                if pending.is_some() {
                    return Err(SmilesError::new(pos, SmilesErrorKind::DanglingBond));
                }
                let Some((p, _)) = branches.pop() else {
                    return Err(SmilesError::new(pos, SmilesErrorKind::UnbalancedParenthesis));
                };
                prev = Some(p);
                pos += 1;
            }
            b'-' | b'=' | b'#' => {
                if pending.is_some() || prev.is_none() {
                    return Err(SmilesError::new(pos, SmilesErrorKind::DanglingBond));
                }
                let order = match c {
                    b'-' => BondOrder::Single,
                    b'=' => BondOrder::Double,
                    _ => BondOrder::Triple,
                };
                pending = Some((order, pos));
                pos += 1;
            }
            b'/' | b'\\' | b'@' => {
                return Err(SmilesError::new(pos, SmilesErrorKind::Unsupported("stereochemistry")));
            }
            b'%' => {
                return Err(SmilesError::new(pos, SmilesErrorKind::Unsupported("ring numbers above 9")));
            }
            b'1'..=b'9' => {
                let Some(p) = prev else {
                    return Err(SmilesError::new(pos, SmilesErrorKind::UnknownSymbol((c as char).to_string())));
                };
                let digit = c - b'0';
                let slot = &mut rings[digit as usize];
                let bond_order = pending.take().map(|(o, _)| o);
                match slot.take() {
                    Some(open) => {
                        let order = match (open.order, bond_order) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(SmilesError::new(pos, SmilesErrorKind::RingBondConflict(digit)));
                            }
                            (Some(a), _) | (None, Some(a)) => a,
                            (None, None) => implicit_order(&g.atoms[open.atom].atom, &g.atoms[p].atom),
                        };
                        if open.atom == p {
                            return Err(SmilesError::new(
                                pos,
                                crate::error::GraphError::SelfBond { atom: p }.into(),
                            ));
                        }
                        add_bond(&mut g, open.atom, p, order, pos)?;
                    }
                    None => {
                        *slot = Some(RingOpen { atom: p, order: bond_order, offset: pos });
                    }
                }
                pos += 1;
            }
            b'.' => {
                if !motif {
                    return Err(SmilesError::new(pos, SmilesErrorKind::MultipleComponents));
                }
                if pending.is_some() {
                    return Err(SmilesError::new(pos, SmilesErrorKind::DanglingBond));
                }
                if let Some((_, off)) = branches.first() {
                    return Err(SmilesError::new(*off, SmilesErrorKind::UnbalancedParenthesis));
                }
                if prev.is_none() {
                    return Err(SmilesError::new(pos, SmilesErrorKind::UnexpectedEnd));
                }
                prev = None;
                component += 1;
                pos += 1;
            }
            b'[' => {
                let (ra, next) = parse_bracket(bytes, pos, motif)?;
                let idx = push_atom(&mut g, ra, component, &mut prev, &mut pending, start)?;
                prev = Some(idx);
                pos = next;
            }
            _ => {
                let (atom, len) = organic_atom(bytes, pos)?;
                let ra = RawAtom { atom, offset: start, degree: None, map: None, component };
                let idx = push_atom(&mut g, ra, component, &mut prev, &mut pending, start)?;
                prev = Some(idx);
                pos += len;
            }
        }
    }

    if let Some((_, off)) = pending {
        return Err(SmilesError::new(off, SmilesErrorKind::DanglingBond));
    }
    if let Some((_, off)) = branches.first() {
        return Err(SmilesError::new(*off, SmilesErrorKind::UnbalancedParenthesis));
    }
    if let Some((digit, open)) = rings.iter().enumerate().find_map(|(d, r)| r.as_ref().map(|o| (d, o))) {
        return Err(SmilesError::new(open.offset, SmilesErrorKind::UnclosedRing(digit as u8)));
    }
    if prev.is_none() {
        return Err(SmilesError::new(bytes.len(), SmilesErrorKind::UnexpectedEnd));
    }
    Ok(g)
}

fn implicit_order(a: &Atom, b: &Atom) -> BondOrder {
    if a.aromatic && b.aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

fn add_bond(g: &mut RawGraph, a: usize, b: usize, order: BondOrder, offset: usize) -> Result<(), SmilesError> {
    if g.bonds.iter().any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a)) {
        return Err(SmilesError::new(offset, crate::error::GraphError::DuplicateBond { a, b }.into()));
    }
    if order == BondOrder::Aromatic && !(g.atoms[a].atom.aromatic && g.atoms[b].atom.aromatic) {
        return Err(SmilesError::new(offset, SmilesErrorKind::AromaticBond));
    }
    g.bonds.push(Bond { a, b, order });
    Ok(())
}

fn push_atom(
    g: &mut RawGraph,
    mut ra: RawAtom,
    component: usize,
    prev: &mut Option<usize>,
    pending: &mut Option<(BondOrder, usize)>,
    offset: usize,
) -> Result<usize, SmilesError> {
    ra.component = component;
    let idx = g.atoms.len();
    g.atoms.push(ra);
    if let Some(p) = *prev {
        let order = match pending.take() {
            Some((o, _)) => o,
            None => implicit_order(&g.atoms[p].atom, &g.atoms[idx].atom),
        };
        add_bond(g, p, idx, order, offset)?;
    } else if let Some((_, off)) = pending.take() {
        return Err(SmilesError::new(off, SmilesErrorKind::DanglingBond));
    }
    Ok(idx)
}

fn organic_atom(bytes: &[u8], pos: usize) -> Result<(Atom, usize), SmilesError> {
    let c = bytes[pos];
    let next = bytes.get(pos + 1).copied();
    let (element, aromatic, len) = match (c, next) {
        (b'C', Some(b'l')) => (Element::Cl, false, 2),
        (b'B', Some(b'r')) => (Element::Br, false, 2),
        (b'B', _) => (Element::B, false, 1),
        (b'C', _) => (Element::C, false, 1),
        (b'N', _) => (Element::N, false, 1),
        (b'O', _) => (Element::O, false, 1),
        (b'P', _) => (Element::P, false, 1),
        (b'S', _) => (Element::S, false, 1),
        (b'F', _) => (Element::F, false, 1),
        (b'I', _) => (Element::I, false, 1),
        (b'b', _) => (Element::B, true, 1),
        (b'c', _) => (Element::C, true, 1),
        (b'n', _) => (Element::N, true, 1),
        (b'o', _) => (Element::O, true, 1),
        (b'p', _) => (Element::P, true, 1),
        (b's', _) => (Element::S, true, 1),
        _ => {
            let ch = std::str::from_utf8(&bytes[pos..])
                .ok()
                .and_then(|s| s.chars().next())
                .map(|c| c.to_string())
                .unwrap_or_else(|| format!("\\x{c:02x}"));
            return Err(SmilesError::new(pos, SmilesErrorKind::UnknownSymbol(ch)));
        }
    };
    Ok((Atom { element, charge: 0, aromatic }, len))
}

fn parse_bracket(bytes: &[u8], open: usize, motif: bool) -> Result<(RawAtom, usize), SmilesError> {
    let mut pos = open + 1;
    let at = |p: usize| bytes.get(p).copied();
    let err = |p: usize, k: SmilesErrorKind| SmilesError::new(p, k);

    if matches!(at(pos), Some(b'0'..=b'9')) {
        return Err(err(pos, SmilesErrorKind::Unsupported("isotopes")));
    }
    let (element, aromatic) = match (at(pos), at(pos + 1)) {
        (Some(b'C'), Some(b'l')) => {
            pos += 2;
            (Element::Cl, false)
        }
        (Some(b'B'), Some(b'r')) => {
            pos += 2;
            (Element::Br, false)
        }
        (Some(c), _) if c.is_ascii_alphabetic() => {
            pos += 1;
            let upper = (c.to_ascii_uppercase() as char).to_string();
            match Element::from_symbol(&upper) {
                Some(e) if c.is_ascii_uppercase() => (e, false),
                Some(e) if e.can_be_aromatic() => (e, true),
                _ => {
                    return Err(err(pos - 1, SmilesErrorKind::UnknownSymbol((c as char).to_string())));
                }
            }
        }
        (None, _) => return Err(err(pos, SmilesErrorKind::UnexpectedEnd)),
        _ => return Err(err(pos, SmilesErrorKind::BadBracket("expected element symbol"))),
    };

    let mut charge: i8 = 0;
    let mut degree = None;
    let mut map = None;
    loop {
        match at(pos) {
            Some(b']') => {
                pos += 1;
                break;
            }
            Some(b'@') => return Err(err(pos, SmilesErrorKind::Unsupported("stereochemistry"))),
            Some(b'H') => return Err(err(pos, SmilesErrorKind::Unsupported("explicit hydrogens"))),
            Some(s @ (b'+' | b'-')) => {
                if charge != 0 {
                    return Err(err(pos, SmilesErrorKind::BadBracket("charge given twice")));
                }
                let sign: i8 = if s == b'+' { 1 } else { -1 };
                pos += 1;
                let mut magnitude: i8 = 1;
                if let Some(d @ b'1'..=b'9') = at(pos) {
                    magnitude = (d - b'0') as i8;
                    pos += 1;
                } else {
                    while at(pos) == Some(s) {
                        magnitude += 1;
                        pos += 1;
                    }
                }
                charge = sign * magnitude;
            }
            Some(b';') if motif => {
                if at(pos + 1) != Some(b'D') {
                    return Err(err(pos, SmilesErrorKind::BadBracket("only ;D<n> queries are supported")));
                }
                pos += 2;
                let (n, next) = read_number(bytes, pos).ok_or_else(|| err(pos, SmilesErrorKind::BadBracket("expected degree")))?;
                degree = Some(n as u8);
                pos = next;
            }
            Some(b':') if motif => {
                pos += 1;
                let (n, next) = read_number(bytes, pos).ok_or_else(|| err(pos, SmilesErrorKind::BadBracket("expected map number")))?;
                map = Some(n);
                pos = next;
            }
            Some(b';' | b':') => {
                return Err(err(pos, SmilesErrorKind::BadBracket("queries and atom maps are template-only")));
            }
            None => return Err(err(pos, SmilesErrorKind::UnexpectedEnd)),
            Some(_) => return Err(err(pos, SmilesErrorKind::BadBracket("unexpected character"))),
        }
    }
    let atom = Atom { element, charge, aromatic };
    Ok((RawAtom { atom, offset: open, degree, map, component: 0 }, pos))
}

fn read_number(bytes: &[u8], mut pos: usize) -> Option<(u32, usize)> {
    let start = pos;
    let mut n: u32 = 0;
    while let Some(d @ b'0'..=b'9') = bytes.get(pos).copied() {
        n = n.checked_mul(10)?.checked_add(u32::from(d - b'0'))?;
        pos += 1;
    }
    (pos > start).then_some((n, pos))
}
