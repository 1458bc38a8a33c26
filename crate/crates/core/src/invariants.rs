//! Invariants read off a complex or its decomposition: homology type,
//! torsion orders, symmetry, essential infiniteness and whether a
//! simultaneously simplified basis exists.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::classify::{decompose_unverified, drift, realize, Decomposition, Descriptor};
use crate::complex::{Complex, RPoly, Ring};
use crate::gf::{self, Matrix};
use crate::reduce::Grade;

/// Homology of a complex over a one-variable polynomial ring:
/// the gradings of free generators and the torsion orders d of the
/// summands F[X]/(X^d).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PidHomology {
    pub free: Vec<Grade>,
    pub torsion: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum HomologyType {
    Torsion,
    Knot,
    Link(u32),
    Other { free_u: Vec<Grade>, free_v: Vec<Grade> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Unknown,
}

/// Graded homology of C/U (over F[V]) or C/V (over F[U]). Each step picks
/// an entry of least degree, clears its row and column by homogeneous basis
/// changes and splits the pair off.
pub fn homology_over_pid(q: &Complex) -> PidHomology {
    let p = q.p;
    assert!(
        matches!(q.ring, Ring::FU | Ring::FV),
        "homology_over_pid takes a one-variable quotient"
    );
    let in_u = q.ring == Ring::FU;
    let n = q.rank();
    let mut d = q.differential_matrix();
    let degree = |x: &RPoly| x.as_monomial().map(|(u, v, c)| (u + v, c));
    let mono = |c: u32, e: u32| if in_u { RPoly::monomial(c, e, 0, p) } else { RPoly::monomial(c, 0, e, p) };
    // new x_j = x_j + c·X^e·x_l
    let op = |d: &mut crate::complex::RingMatrix, j: usize, l: usize, c: u32, e: u32| {
        let m = mono(c, e);
        for k in 0..n {
            let add = m.mul(d.get(l, k), Ring::FUV, p);
            d.entry_mut(j, k).add_assign(&add, p);
        }
        let m = mono(gf::neg(c, p), e);
        for k in 0..n {
            let add = d.get(k, j).mul(&m, Ring::FUV, p);
            d.entry_mut(k, l).add_assign(&add, p);
        }
    };
    let mut alive = vec![true; n];
    let mut torsion = Vec::new();
    loop {
        let mut pivot: Option<(usize, usize, u32, u32)> = None;
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (0..n).filter(|&j| alive[j]) {
                if let Some((e, c)) = degree(d.get(i, j)) {
                    if pivot.map_or(true, |(_, _, pe, _)| e < pe) {
                        pivot = Some((i, j, e, c));
                    }
                }
            }
        }
        let Some((i, j, k, lambda)) = pivot else { break };
        let inv = gf::inv(lambda, p);
        for l in (0..n).filter(|&l| alive[l] && l != j) {
            if let Some((e, mu)) = degree(d.get(i, l)) {
                op(&mut d, j, l, gf::mul(mu, inv, p), e - k);
            }
        }
        for m in (0..n).filter(|&m| alive[m] && m != i) {
            if let Some((e, nu)) = degree(d.get(m, j)) {
                op(&mut d, m, i, gf::neg(gf::mul(nu, inv, p), p), e - k);
            }
        }
        alive[i] = false;
        alive[j] = false;
        if k > 0 {
            torsion.push(k);
        }
    }
    torsion.sort_unstable();
    let free = (0..n).filter(|&i| alive[i]).map(|i| q.generator(i).gr()).collect();
    PidHomology { free, torsion }
}

pub fn homology_type(c: &Complex) -> HomologyType {
    let mut free_v = homology_over_pid(&c.quotient_u()).free;
    let mut free_u = homology_over_pid(&c.quotient_v()).free;
    free_v.sort();
    free_u.sort();
    match (free_v.len(), free_u.len()) {
        (0, 0) => HomologyType::Torsion,
        (1, 1) if free_v[0].0 == 0 && free_u[0].1 == 0 => HomologyType::Knot,
        (a, b) if a == b && a > 1 && a.is_power_of_two() => HomologyType::Link(a.trailing_zeros() + 1),
        _ => HomologyType::Other { free_u, free_v },
    }
}

fn longest_arrow(d: &Decomposition, horizontal: bool) -> u32 {
    d.descriptors()
        .iter()
        .filter(|x| !matches!(x, Descriptor::Zero(_)))
        .filter_map(|x| realize(x, d.characteristic).ok())
        .flat_map(|c| {
            c.terms()
                .map(|(_, _, m)| if horizontal { m.u_exp } else { m.v_exp })
                .collect::<Vec<_>>()
        })
        .max()
        .unwrap_or(0)
}

/// The longest horizontal arrow among the summands of the decomposition.
pub fn ord_u(c: &Complex) -> u32 {
    longest_arrow(&decompose_unverified(c), true)
}

pub fn ord_v(c: &Complex) -> u32 {
    longest_arrow(&decompose_unverified(c), false)
}

/// The least k with U^k annihilating the torsion of H(C/V).
pub fn ord_u_from_torsion(c: &Complex) -> u32 {
    homology_over_pid(&c.quotient_v()).torsion.into_iter().max().unwrap_or(0)
}

pub fn ord_v_from_torsion(c: &Complex) -> u32 {
    homology_over_pid(&c.quotient_u()).torsion.into_iter().max().unwrap_or(0)
}

/// Whether C and its conjugate have the same decomposition apart from zero
/// complexes, which is isomorphism after splitting those off.
pub fn is_symmetric(c: &Complex) -> bool {
    let a = decompose_unverified(c);
    let b = decompose_unverified(&c.bar());
    a.snakes == b.snakes && a.local_systems == b.local_systems
}

/// Whether some local system winds with nonzero drift, so that it closes up
/// only after a translation by a power of UV.
pub fn essentially_infinite(c: &Complex) -> bool {
    decompose_unverified(c).local_systems.iter().any(|l| drift(&l.shape) != 0)
}

/// Holonomies of the local systems, regrouped by shape and position.
fn grouped_holonomies(d: &Decomposition) -> Vec<Matrix> {
    let p = d.characteristic;
    let mut groups: BTreeMap<(Vec<i64>, Grade), Vec<Matrix>> = BTreeMap::new();
    for l in &d.local_systems {
        let rows: Vec<Vec<i64>> = l.holonomy.iter().map(|r| r.iter().map(|&x| x as i64).collect()).collect();
        groups
            .entry((l.shape.clone(), l.anchor))
            .or_default()
            .push(Matrix::from_rows(p, &rows));
    }
    groups.values().map(|bs| Matrix::block_diag(p, bs)).collect()
}

/// `No` when some local system has a holonomy class without a monomial
/// matrix; `Yes` when all have one, by the constructive converse of
/// rebasing each cycle along the conjugator; `Unknown` when a holonomy is
/// too wide to search.
pub fn admits_simplified_basis(c: &Complex) -> Verdict {
    let d = decompose_unverified(c);
    let mut unknown = false;
    for a in grouped_holonomies(&d) {
        match gf::class_contains_monomial(&a) {
            Ok(false) => return Verdict::No,
            Ok(true) => {}
            Err(_) => unknown = true,
        }
    }
    if unknown {
        Verdict::Unknown
    } else {
        Verdict::Yes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub homology_type: HomologyType,
    pub ord_u: u32,
    pub ord_v: u32,
    pub symmetric: bool,
    pub essentially_infinite: bool,
    pub simplified_basis: Verdict,
    pub notes: Vec<String>,
}

pub fn report(c: &Complex) -> InvariantReport {
    let mut notes = Vec::new();
    if c.ring == Ring::FUV && c.term_count() != c.with_ring(Ring::R1).term_count() {
        notes.push("diagonal arrows dropped: symmetry and summands are computed mod UV".to_string());
    }
    let simplified_basis = admits_simplified_basis(c);
    if simplified_basis == Verdict::Yes && !decompose_unverified(c).local_systems.is_empty() {
        notes.push("simplified basis: constructive converse".to_string());
    }
    InvariantReport {
        homology_type: homology_type(c),
        ord_u: ord_u(c),
        ord_v: ord_v(c),
        symmetric: is_symmetric(c),
        essentially_infinite: essentially_infinite(c),
        simplified_basis,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::parse_descriptor;
    use crate::cli::{corpus, Overrides};
    use crate::complex::tests::{arb_complex, figure_eight, trefoil};
    use proptest::prelude::*;

    fn snake(text: &str) -> Complex {
        realize(&parse_descriptor(text).unwrap(), 2).unwrap()
    }

    fn named(name: &str) -> Complex {
        corpus(name, Overrides::default()).unwrap()
    }

    #[test]
    fn pid_homology_examples() {
        let t = trefoil();
        let h = homology_over_pid(&t.quotient_u());
        assert_eq!((h.free.len(), h.torsion.clone()), (1, vec![1]));
        let z = Complex::zero_complex(Ring::R1, 2, (0, 0), ("x", "y"));
        assert_eq!(homology_over_pid(&z.quotient_u()), PidHomology { free: vec![], torsion: vec![] });
        let c = snake("C(2,-2,-1,1,3,-1) @ (0,0)");
        assert_eq!(homology_over_pid(&c.quotient_v()).torsion, vec![1, 2, 3]);
    }

    #[test]
    fn homology_types() {
        assert_eq!(homology_type(&trefoil()), HomologyType::Knot);
        assert_eq!(homology_type(&named("example_D")), HomologyType::Knot);
        assert_eq!(homology_type(&named("example_T")), HomologyType::Knot);
        assert_eq!(homology_type(&named("example_E")), HomologyType::Torsion);
        let two = Complex::direct_sum(&[snake("C() @ (0,0)"), snake("C() @ (0,0)")]).unwrap();
        assert_eq!(homology_type(&two), HomologyType::Link(2));
    }

    #[test]
    fn torsion_orders() {
        assert_eq!(ord_u(&trefoil()), 1);
        let c = snake("C(2,-2,-1,1,3,-1) @ (0,0)");
        assert_eq!((ord_u(&c), ord_u_from_torsion(&c)), (3, 3));
        assert_eq!(ord_u(&Complex::empty(Ring::R1, 2)), 0);
    }

    #[test]
    fn corpus_verdicts() {
        assert!(is_symmetric(&named("example_D")));
        assert!(is_symmetric(&named("example_P")));
        assert!(!is_symmetric(&named("example_T")));
        assert!(!essentially_infinite(&figure_eight()));
        assert!(essentially_infinite(&named("example_T")));
        assert_eq!(admits_simplified_basis(&figure_eight()), Verdict::Yes);
        assert!(essentially_infinite(&named("example_D")));
        assert_eq!(admits_simplified_basis(&named("example_P")), Verdict::No);
        assert_eq!(admits_simplified_basis(&named("fig9")), Verdict::Yes);
        assert_eq!(admits_simplified_basis(&snake("S_h(1,-2,3) @ (0,0)")), Verdict::Yes);
    }

    #[test]
    fn permutation_split_across_summands() {
        // a 3-cycle holonomy over F_2 refines into [1] and x²+x+1, neither
        // of which alone is a permutation class
        let l = parse_descriptor("LS(shape=[1,1,-1,-1]; w=3; A=rcf[[0,0,1],[1,0,0],[0,1,0]]; anchor=(0,0))").unwrap();
        let c = realize(&l, 2).unwrap();
        assert_eq!(decompose_unverified(&c).local_systems.len(), 2);
        assert_eq!(admits_simplified_basis(&c), Verdict::Yes);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ord_agrees_with_torsion(c in arb_complex(6)) {
            prop_assert_eq!(ord_u(&c), ord_u_from_torsion(&c));
            prop_assert_eq!(ord_v(&c), ord_v_from_torsion(&c));
        }

        #[test]
        fn homology_type_is_a_basis_invariant(c in arb_complex(6), seed in any::<u64>()) {
            let b = crate::random::random_basis_change(&c, seed);
            let d = c.apply_basis_change(&b).unwrap();
            prop_assert_eq!(homology_type(&c), homology_type(&d));
            let z = Complex::zero_complex(c.ring, c.p, (3, 1), ("zx", "zy"));
            prop_assert_eq!(homology_type(&c), homology_type(&Complex::direct_sum(&[c.clone(), z]).unwrap()));
        }

        #[test]
        fn symmetry_is_conjugation_invariant(c in arb_complex(6)) {
            prop_assert_eq!(is_symmetric(&c), is_symmetric(&c.bar()));
        }
    }
}
