use retrosmc_chem::canonical_smiles;
use retrosmc_core::forward::{ForwardModel, ReactantSet, EPSILON};
use retrosmc_core::routes::simulate_route;
use retrosmc_core::templates::{rank_alpha, TemplateLibrary, TemplateSpec, ToyModel};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Group {
    Acid,
    Amine,
    Bromide,
    Alcohol,
    SulfonylChloride,
}

const TAILS: [&str; 4] = ["CC", "CCc1ccccc1", "CCOC", "C1CCCCC1"];

/// Twenty reactants with their group and tail.
fn reactants() -> Vec<(String, Group, &'static str)> {
    let mut out = Vec::new();
    for (g, head) in [
        (Group::Acid, "OC(=O)"),
        (Group::Amine, "N"),
        (Group::Bromide, "Br"),
        (Group::Alcohol, "O"),
        (Group::SulfonylChloride, "ClS(=O)(=O)"),
    ] {
        for t in TAILS {
            out.push((format!("{head}{t}"), g, t));
        }
    }
    out
}

fn library() -> TemplateLibrary {
    let spec = |pattern: &str, rewrite: &str, priority, class_id| TemplateSpec {
        pattern: pattern.into(),
        rewrite: rewrite.into(),
        priority,
        class_id,
    };
    TemplateLibrary::new(vec![
        spec("[C:1][Br;D1:2].[O;D1:3][C:4]", "[C:1][O:3][C:4]", 10, 2),
        spec("[C:1](=[O:2])[O;D1:3].[N;D1:4]", "[C:1](=[O:2])[N:4]", 30, 0),
        spec("[S:1](=[O:2])(=[O:3])[Cl;D1:4].[N;D1:5]", "[S:1](=[O:2])(=[O:3])[N:5]", 20, 1),
    ])
    .unwrap()
}

/// Product by group bookkeeping and string assembly. Ranks follow the
/// priorities above: amide 0, sulfonamide 1, ether 2. A hydroxyl on a
/// carbon, including the acid's, serves as the ether oxygen.
fn oracle(a: &(String, Group, &str), b: &(String, Group, &str)) -> Option<(String, usize)> {
    use Group::*;
    let pick = |x: Group, y: Group| -> Option<(&str, &str)> {
        if a.1 == x && b.1 == y {
            Some((a.2, b.2))
        } else if b.1 == x && a.1 == y {
            Some((b.2, a.2))
        } else {
            None
        }
    };
    if let Some((t, u)) = pick(Acid, Amine) {
        return Some((format!("O=C({t})N{u}"), 0));
    }
    if let Some((t, u)) = pick(SulfonylChloride, Amine) {
        return Some((format!("O=S(=O)({t})N{u}"), 1));
    }
    if let Some((t, u)) = pick(Bromide, Alcohol) {
        return Some((format!("O({t}){u}"), 2));
    }
    if let Some((t, u)) = pick(Bromide, Acid) {
        return Some((format!("O=C({u})O{t}"), 2));
    }
    None
}

#[test]
fn full_pair_table_matches_the_oracle() {
    let model = ToyModel::new(library());
    let rs = reactants();
    let mut fired = 0;
    for a in &rs {
        for b in &rs {
            let set = ReactantSet::new(&[a.0.as_str(), b.0.as_str()]).unwrap();
            let got = model.predict(&set).unwrap();
            match oracle(a, b) {
                Some((smiles, rank)) => {
                    fired += 1;
                    assert_eq!(got.product.as_deref(), Some(canonical_smiles(&smiles).unwrap().as_str()), "{} + {}", a.0, b.0);
                    assert_eq!(got.alpha, rank_alpha(rank));
                }
                None => {
                    assert_eq!(got.product, None, "{} + {}", a.0, b.0);
                    assert_eq!(got.alpha, EPSILON);
                }
            }
        }
    }
    // amide, sulfonamide, ether and ester cells, both orders
    assert_eq!(fired, 2 * 4 * 16);
}

#[test]
fn batch_keeps_order() {
    let model = ToyModel::new(library());
    let sets: Vec<ReactantSet> = [["OC(=O)CC", "NCC"], ["BrCC", "OCC"], ["NCC", "NCC"]]
        .iter()
        .map(|m| ReactantSet::new(m).unwrap())
        .collect();
    let one: Vec<_> = sets.iter().map(|s| model.predict(s).unwrap()).collect();
    assert_eq!(model.predict_batch(&sets).unwrap(), one);
    assert_eq!(one[0].product, Some(canonical_smiles("CCNC(=O)CC").unwrap()));
    assert_eq!(one[1].product, Some(canonical_smiles("CCOCC").unwrap()));
    assert!(one[2].product.is_none());
}

#[test]
fn two_step_route_chains_the_intermediate() {
    // step one makes an amide carrying a bromide; step two etherifies it
    let model = ToyModel::new(library());
    let steps = vec![vec!["OC(=O)CCBr".to_string(), "NCC".to_string()], vec!["OCC".to_string()]];
    let route = simulate_route(&steps, &model).unwrap();
    assert_eq!(route.intermediates, vec![canonical_smiles("O=C(CCBr)NCC").unwrap()]);
    assert_eq!(route.final_product, Some(canonical_smiles("O=C(CCOCC)NCC").unwrap()));
    assert_eq!(route.alphas, vec![1.0, 1.0 / 3.0]);

    let dead = simulate_route(&[vec!["NCC".to_string()], vec!["OCC".to_string()]], &model).unwrap();
    assert!(!dead.is_valid());
    assert_eq!(dead.steps.len(), 1);
}
