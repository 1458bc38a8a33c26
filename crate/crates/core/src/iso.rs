//! Grading-preserving isomorphisms between complexes, found by solving the
//! chain-map equations and sampling an invertible solution.

use std::collections::HashMap;

use rand::Rng;

use crate::complex::{BasisChange, Complex, RPoly, RingMatrix};
use crate::gf::{self, Matrix};

/// One unknown: the coefficient of U^u V^v in entry (row, col).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Unknown {
    row: usize,
    col: usize,
    u: u32,
    v: u32,
}

fn unknowns(c: &Complex, d: &Complex) -> Vec<Unknown> {
    let mut out = Vec::new();
    for (i, gi) in d.generators().iter().enumerate() {
        for (j, gj) in c.generators().iter().enumerate() {
            let (du, dv) = (gj.gr_u - gi.gr_u, gj.gr_v - gi.gr_v);
            if du < 0 || dv < 0 || du % 2 != 0 || dv % 2 != 0 {
                continue;
            }
            let (u, v) = ((du / 2) as u32, (dv / 2) as u32);
            if c.ring.admits(u, v) {
                out.push(Unknown { row: i, col: j, u, v });
            }
        }
    }
    out
}

/// Basis of the grading-preserving matrices B with B·∂_c = ∂_d·B.
pub(crate) fn chain_map_space(c: &Complex, d: &Complex) -> (Vec<Unknown>, Matrix) {
    let p = c.p;
    let ring = c.ring;
    let vars = unknowns(c, d);
    let dc = c.differential_matrix();
    let dd = d.differential_matrix();
    let n = c.rank();
    let mut eq_index: HashMap<(usize, usize, u32, u32), usize> = HashMap::new();
    let mut entries: Vec<(usize, usize, u32)> = Vec::new();
    for (k, x) in vars.iter().enumerate() {
        let mono = RPoly::monomial(1, x.u, x.v, p);
        let mut contrib: HashMap<(usize, usize, u32, u32), u32> = HashMap::new();
        // (B ∂_c)[row, l] gains x·∂_c[col, l]
        for l in 0..n {
            let e = mono.mul(dc.get(x.col, l), ring, p);
            for (u, v, a) in e.terms() {
                let s = contrib.entry((x.row, l, u, v)).or_insert(0);
                *s = gf::add(*s, a, p);
            }
        }
        // (∂_d B)[r, col] gains ∂_d[r, row]·x
        for r in 0..n {
            let e = dd.get(r, x.row).mul(&mono, ring, p);
            for (u, v, a) in e.terms() {
                let s = contrib.entry((r, x.col, u, v)).or_insert(0);
                *s = gf::sub(*s, a, p);
            }
        }
        for (key, a) in contrib {
            if a != 0 {
                let len = eq_index.len();
                let row = *eq_index.entry(key).or_insert(len);
                entries.push((row, k, a));
            }
        }
    }
    let mut m = Matrix::zeros(p, eq_index.len().max(1), vars.len());
    for (r, k, a) in entries {
        m.set(r, k, a);
    }
    let kernel = m.kernel();
    (vars, kernel)
}

pub(crate) fn assemble(c: &Complex, vars: &[Unknown], coeffs: &[u32]) -> RingMatrix {
    let p = c.p;
    let mut b = RingMatrix::zeros(p, c.ring, c.rank(), c.rank());
    for (x, &a) in vars.iter().zip(coeffs) {
        if a != 0 {
            b.entry_mut(x.row, x.col).add_term(x.u, x.v, a, p);
        }
    }
    b
}

/// Searches for a basis change B with c.apply_basis_change(B) = d.
/// Returns None when no isomorphism was found within `trials` samples;
/// this is a proof of non-isomorphism only when the bigrading multisets
/// differ or the solution space has no invertible constant part at all.
pub fn find_isomorphism<R: Rng>(c: &Complex, d: &Complex, rng: &mut R, trials: usize) -> Option<BasisChange> {
    if c.ring != d.ring || c.p != d.p || c.rank() != d.rank() {
        return None;
    }
    let mut a: Vec<(i64, i64)> = c.generators().iter().map(|g| g.gr()).collect();
    let mut b: Vec<(i64, i64)> = d.generators().iter().map(|g| g.gr()).collect();
    a.sort();
    b.sort();
    if a != b {
        return None;
    }
    let ids: Vec<String> = d.generators().iter().map(|g| g.id.clone()).collect();
    if c.rank() == 0 {
        return Some(BasisChange {
            matrix: RingMatrix::zeros(c.p, c.ring, 0, 0),
            ids,
        });
    }
    let (vars, kernel) = chain_map_space(c, d);
    if kernel.cols() == 0 {
        return None;
    }
    let p = c.p;
    for _ in 0..trials {
        let w: Vec<u32> = (0..kernel.cols()).map(|_| rng.gen_range(0..p)).collect();
        let coeffs: Vec<u32> = (0..kernel.rows())
            .map(|i| (0..kernel.cols()).fold(0, |s, k| gf::add(s, gf::mul(kernel.get(i, k), w[k], p), p)))
            .collect();
        let m = assemble(c, &vars, &coeffs);
        if m.constant_part().is_invertible() {
            let change = BasisChange { matrix: m, ids: ids.clone() };
            debug_assert_eq!(c.apply_basis_change(&change).ok().as_ref(), Some(d));
            return Some(change);
        }
    }
    None
}

/// Whether an isomorphism c ≅ d was found by random search.
pub fn isomorphic(c: &Complex, d: &Complex, seed: u64) -> bool {
    find_isomorphism(c, d, &mut crate::random::rng(seed), 400).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::tests::{arb_complex, figure_eight, trefoil};
    use proptest::prelude::*;

    #[test]
    fn small_examples() {
        let t = trefoil();
        assert!(isomorphic(&t, &t, 1));
        let f = figure_eight();
        assert!(isomorphic(&f, &f, 1));
        let z = Complex::zero_complex(t.ring, 2, (0, 0), ("x", "y"));
        let t2 = Complex::new(t.ring, 2, z.generators().to_vec(), &[]).unwrap();
        assert!(!isomorphic(&z, &t2, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_changes_are_found(c in arb_complex(6), seed in any::<u64>()) {
            let b = crate::random::random_basis_change(&c, seed);
            let d = c.apply_basis_change(&b).unwrap();
            let found = find_isomorphism(&c, &d, &mut crate::random::rng(seed), 400).unwrap();
            prop_assert_eq!(c.apply_basis_change(&found).unwrap(), d);
        }
    }
}
