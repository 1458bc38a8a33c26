//! Vertically and horizontally simplified bases and the normalization of
//! the transition matrix between them into GL_n(F).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::complex::{BasisChange, Complex, ComplexError, Generator, RPoly, Ring, RingMatrix};
use crate::gf::{self, Matrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimplifyError {
    #[error("bigrading counts differ between the two bases at {0:?}")]
    CountMismatch((i64, i64)),
    #[error(transparent)]
    Complex(#[from] ComplexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Vertical,
    Horizontal,
}

/// An arrow ∂(source) = U^length target (horizontal) or V^length target
/// (vertical), indices into the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Arrow {
    pub source: usize,
    pub target: usize,
    pub length: u32,
}

/// A simplified basis of C/U (vertical) or C/V (horizontal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplifiedBasis {
    pub direction: Direction,
    pub gens: Vec<Generator>,
    pub arrows: Vec<Arrow>,
    /// Rows write the basis vectors in the input generators, over R1.
    pub change: BasisChange,
}

impl SimplifiedBasis {
    pub fn rank(&self) -> usize {
        self.gens.len()
    }

    /// For each index, the arrow leaving it, if any.
    pub fn out_arrow(&self, i: usize) -> Option<Arrow> {
        self.arrows.iter().copied().find(|a| a.source == i)
    }

    /// For each index, the arrow entering it, if any.
    pub fn in_arrow(&self, i: usize) -> Option<Arrow> {
        self.arrows.iter().copied().find(|a| a.target == i)
    }

    /// Whether each index is the source of at most one arrow, the target of
    /// at most one, and never both.
    pub fn clauses_hold(&self) -> bool {
        let n = self.rank();
        let mut src = vec![0; n];
        let mut tgt = vec![0; n];
        for a in &self.arrows {
            src[a.source] += 1;
            tgt[a.target] += 1;
        }
        (0..n).all(|i| src[i] <= 1 && tgt[i] <= 1 && src[i] + tgt[i] <= 1)
    }

    /// Whether reading the differential of `c` in this basis, modulo U
    /// (vertical) or V (horizontal), gives exactly the recorded arrows.
    pub fn reproduces(&self, c: &Complex) -> bool {
        let Ok(d) = c.apply_basis_change(&self.change) else {
            return false;
        };
        let q = match self.direction {
            Direction::Vertical => d.quotient_u(),
            Direction::Horizontal => d.quotient_v(),
        };
        let mut seen: Vec<Arrow> = q
            .terms()
            .filter_map(|(s, t, m)| {
                (m.coeff.value() == 1).then_some(Arrow {
                    source: s,
                    target: t,
                    length: m.u_exp + m.v_exp,
                })
            })
            .collect();
        if seen.len() != q.term_count() {
            return false;
        }
        seen.sort();
        let mut mine = self.arrows.clone();
        mine.sort();
        seen == mine
    }
}

fn swap_uv(p: &RPoly, prime: u32) -> RPoly {
    let mut out = RPoly::zero();
    for (u, v, c) in p.terms() {
        out.add_term(v, u, c, prime);
    }
    out
}

fn swap_matrix(m: &RingMatrix, ring: Ring) -> RingMatrix {
    let mut out = RingMatrix::zeros(m.p, ring, m.rows, m.cols);
    for i in 0..m.rows {
        for j in 0..m.cols {
            out.set(i, j, swap_uv(m.get(i, j), m.p));
        }
    }
    out
}

/// Exponent of a pure V-power entry (the ring is F[V] here).
fn v_exponent(e: &RPoly) -> Option<(u32, u32)> {
    e.as_monomial().map(|(_, v, c)| (v, c))
}

/// Simplified basis of C/U: repeatedly split off the shortest arrow (ties to
/// the lowest source index, then the lowest target index).
pub fn vertical_simplify(c: &Complex) -> SimplifiedBasis {
    let p = c.p;
    let n = c.rank();
    let mut d = c.differential_matrix().with_ring(Ring::FV);
    let mut change = RingMatrix::identity(p, Ring::FV, n);
    let mut active = vec![true; n];
    let mut pairs: Vec<(usize, usize, u32, u32)> = Vec::new();
    loop {
        let mut best: Option<(u32, usize, usize, u32)> = None;
        for s in 0..n {
            if !active[s] {
                continue;
            }
            for t in 0..n {
                if !active[t] {
                    continue;
                }
                if let Some((a, coeff)) = v_exponent(d.get(s, t)) {
                    if best.map_or(true, |b| a < b.0) {
                        best = Some((a, s, t, coeff));
                    }
                }
            }
        }
        let Some((a, s, t, lambda)) = best else {
            break;
        };
        let li = gf::inv(lambda, p);
        // New target: λ^{-1} V^{-a} ∂x_s.
        let mut e = RingMatrix::identity(p, Ring::FV, n);
        for k in 0..n {
            let mut entry = RPoly::zero();
            for (_, v, coeff) in d.get(s, k).terms() {
                entry.add_term(0, v - a, gf::mul(coeff, li, p), p);
            }
            e.set(t, k, entry);
        }
        apply(&mut d, &mut change, &e);
        // Clear the other arrows into the new target.
        let mut e = RingMatrix::identity(p, Ring::FV, n);
        let mut any = false;
        for z in 0..n {
            if z == s || !active[z] {
                continue;
            }
            for (_, v, nu) in d.get(z, t).terms() {
                debug_assert!(v >= a);
                e.set(z, s, RPoly::monomial(gf::neg(gf::mul(nu, li, p), p), 0, v - a, p));
                any = true;
            }
        }
        if any {
            apply(&mut d, &mut change, &e);
        }
        active[s] = false;
        active[t] = false;
        pairs.push((s, t, a, lambda));
    }
    // Normalize coefficients to 1 by rescaling the targets.
    let mut scale = Matrix::identity(p, n);
    for &(_, t, _, lambda) in &pairs {
        scale.set(t, t, lambda);
    }
    let change = RingMatrix::from_field(Ring::FV, &scale).mul(&change);
    let mut arrows: Vec<Arrow> = pairs
        .iter()
        .map(|&(s, t, a, _)| Arrow {
            source: s,
            target: t,
            length: a,
        })
        .collect();
    arrows.sort();
    SimplifiedBasis {
        direction: Direction::Vertical,
        gens: c.generators().to_vec(),
        arrows,
        change: BasisChange {
            matrix: change.with_ring(Ring::R1),
            ids: c.generators().iter().map(|g| g.id.clone()).collect(),
        },
    }
}

fn apply(d: &mut RingMatrix, change: &mut RingMatrix, e: &RingMatrix) {
    let inv = e.graded_inverse().expect("elimination steps are invertible");
    *d = e.mul(d).mul(&inv);
    *change = e.mul(change);
}

/// Simplified basis of C/V, computed as the mirror image of the vertical
/// simplification of the conjugate complex.
pub fn horizontal_simplify(c: &Complex) -> SimplifiedBasis {
    let mut b = vertical_simplify(&c.bar().with_ring(Ring::R1));
    b.direction = Direction::Horizontal;
    b.gens = c.generators().to_vec();
    b.change.matrix = swap_matrix(&b.change.matrix, Ring::R1);
    b
}

/// Reorders both bases (stably, by bigrading) so that gr(x_i) = gr(y_i).
pub fn align_gradings(
    xb: &SimplifiedBasis,
    yb: &SimplifiedBasis,
) -> Result<(SimplifiedBasis, SimplifiedBasis), SimplifyError> {
    let count = |b: &SimplifiedBasis| {
        let mut m: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for g in &b.gens {
            *m.entry(g.gr()).or_default() += 1;
        }
        m
    };
    let (cx, cy) = (count(xb), count(yb));
    for (g, k) in cx.iter().chain(cy.iter()) {
        if cx.get(g) != Some(k) || cy.get(g) != Some(k) {
            return Err(SimplifyError::CountMismatch(*g));
        }
    }
    Ok((sorted_by_grading(xb), sorted_by_grading(yb)))
}

fn sorted_by_grading(b: &SimplifiedBasis) -> SimplifiedBasis {
    let mut order: Vec<usize> = (0..b.rank()).collect();
    order.sort_by_key(|&i| (b.gens[i].gr(), i));
    reorder(b, &order)
}

/// The basis with its vectors listed in the given order.
pub fn reorder(b: &SimplifiedBasis, order: &[usize]) -> SimplifiedBasis {
    let n = b.rank();
    let mut pos = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    let mut arrows: Vec<Arrow> = b
        .arrows
        .iter()
        .map(|a| Arrow {
            source: pos[a.source],
            target: pos[a.target],
            length: a.length,
        })
        .collect();
    arrows.sort();
    let m = &b.change.matrix;
    SimplifiedBasis {
        direction: b.direction,
        gens: order.iter().map(|&i| b.gens[i].clone()).collect(),
        arrows,
        change: BasisChange {
            matrix: m.select(order, &(0..m.cols).collect::<Vec<_>>()),
            ids: order.iter().map(|&i| b.change.ids[i].clone()).collect(),
        },
    }
}

/// Aligned simplified bases whose transition matrix has entries in F.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionData {
    pub x: SimplifiedBasis,
    pub y: SimplifiedBasis,
    /// x_i = Σ_j P_ij y_j
    pub p: Matrix,
    /// Q = P^{-1}
    pub q: Matrix,
}

impl TransitionData {
    /// Indices grouped by bigrading (the elevator shafts).
    pub fn shafts(&self) -> BTreeMap<(i64, i64), Vec<usize>> {
        let mut m: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, g) in self.x.gens.iter().enumerate() {
            m.entry(g.gr()).or_default().push(i);
        }
        m
    }
}

/// Adjusts the x-basis by a change that is the identity mod U and the
/// y-basis by one that is the identity mod V so that the transition matrix
/// lies in GL_n(F). U-entries are cleared by row operations sweeping the
/// pivot columns left to right, then V-entries by column operations
/// sweeping the pivot rows top to bottom.
pub fn normalize_transition(
    c: &Complex,
    xb: &SimplifiedBasis,
    yb: &SimplifiedBasis,
) -> Result<TransitionData, SimplifyError> {
    let p = c.p;
    let n = c.rank();
    for i in 0..n {
        if xb.gens[i].gr() != yb.gens[i].gr() {
            return Err(SimplifyError::CountMismatch(xb.gens[i].gr()));
        }
    }
    let x0 = xb.change.matrix.clone();
    let y0 = yb.change.matrix.clone();
    let m = x0.mul(&y0.graded_inverse()?);
    let pt = m.constant_part();
    let pt_inv = gf::invert(&pt).map_err(|_| ComplexError::NotInvertible)?;
    let mut j = RingMatrix::from_field(Ring::R1, &pt_inv).mul(&m);
    let mut left = RingMatrix::identity(p, Ring::R1, n);
    for i in 0..n {
        for r in 0..n {
            if r == i {
                continue;
            }
            let entry = j.get(r, i).clone();
            let mut e = RingMatrix::identity(p, Ring::R1, n);
            let mut any = false;
            for (u, v, coeff) in entry.terms() {
                if u > 0 {
                    debug_assert_eq!(v, 0);
                    e.set(r, i, RPoly::monomial(gf::neg(coeff, p), u, 0, p));
                    any = true;
                }
            }
            if any {
                j = e.mul(&j);
                left = e.mul(&left);
            }
        }
    }
    let mut right = RingMatrix::identity(p, Ring::R1, n);
    for i in 0..n {
        for col in 0..n {
            if col == i {
                continue;
            }
            let entry = j.get(i, col).clone();
            let mut e = RingMatrix::identity(p, Ring::R1, n);
            let mut any = false;
            for (u, v, coeff) in entry.terms() {
                if v > 0 {
                    debug_assert_eq!(u, 0);
                    e.set(i, col, RPoly::monomial(gf::neg(coeff, p), 0, v, p));
                    any = true;
                }
            }
            if any {
                j = j.mul(&e);
                right = right.mul(&e);
            }
        }
    }
    assert!(j.is_identity(), "transition normalization left {j:?}");
    // M = P~ L^{-1} R^{-1}; x = A x', y = B y' with A = P~ L P~^{-1}, B = R^{-1}.
    let ptr = RingMatrix::from_field(Ring::R1, &pt);
    let ptr_inv = RingMatrix::from_field(Ring::R1, &pt_inv);
    let a = ptr.mul(&left).mul(&ptr_inv);
    let b = right.graded_inverse()?;
    let mut x = xb.clone();
    x.change.matrix = a.mul(&x0);
    let mut y = yb.clone();
    y.change.matrix = b.mul(&y0);
    debug_assert_eq!(
        x.change.matrix.mul(&y.change.matrix.graded_inverse()?),
        RingMatrix::from_field(Ring::R1, &pt)
    );
    Ok(TransitionData {
        x,
        y,
        p: pt,
        q: pt_inv,
    })
}

/// Both simplifications, alignment and normalization in one call.
pub fn transition_data(c: &Complex) -> Result<TransitionData, SimplifyError> {
    let r1 = c.with_ring(Ring::R1);
    let xb = vertical_simplify(&r1);
    let yb = horizontal_simplify(&r1);
    let (xb, yb) = align_gradings(&xb, &yb)?;
    normalize_transition(&r1, &xb, &yb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::tests::{arb_complex, trefoil};
    use proptest::prelude::*;

    #[test]
    fn trefoil_bases() {
        let t = trefoil();
        let v = vertical_simplify(&t);
        assert_eq!(
            v.arrows,
            vec![Arrow {
                source: 2,
                target: 1,
                length: 1
            }]
        );
        let h = horizontal_simplify(&t);
        assert_eq!(
            h.arrows,
            vec![Arrow {
                source: 0,
                target: 1,
                length: 1
            }]
        );
        assert!(v.reproduces(&t) && h.reproduces(&t));
        let td = transition_data(&t).unwrap();
        assert!(td.p.is_identity());
    }

    #[test]
    fn shuffled_alignment() {
        let t = trefoil();
        let v = vertical_simplify(&t);
        let h = reorder(&horizontal_simplify(&t), &[2, 0, 1]);
        let (v2, h2) = align_gradings(&v, &h).unwrap();
        for i in 0..3 {
            assert_eq!(v2.gens[i].gr(), h2.gens[i].gr());
        }
        let empty = Complex::empty(Ring::R1, 2);
        let e = vertical_simplify(&empty);
        assert!(align_gradings(&e, &horizontal_simplify(&empty)).unwrap().0.gens.is_empty());
    }

    proptest! {
        #[test]
        fn simplified_bases_are_simplified(c in arb_complex(6)) {
            let (c, _, _) = c.strip_zero_complexes();
            let v = vertical_simplify(&c);
            let h = horizontal_simplify(&c);
            prop_assert!(v.clauses_hold() && h.clauses_hold());
            prop_assert!(v.arrows.iter().chain(&h.arrows).all(|a| a.length >= 1));
            prop_assert!(v.reproduces(&c));
            prop_assert!(h.reproduces(&c));
            let td = transition_data(&c).unwrap();
            prop_assert!(td.x.reproduces(&c));
            prop_assert!(td.y.reproduces(&c));
            prop_assert!(td.p.mul(&td.q).is_identity());
            let m = td.x.change.matrix.mul(&td.y.change.matrix.graded_inverse().unwrap());
            prop_assert_eq!(m, RingMatrix::from_field(Ring::R1, &td.p));
        }
    }
}
