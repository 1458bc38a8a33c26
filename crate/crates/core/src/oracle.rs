//! Brute-force verifiers for small complexes: exhaustive isomorphism
//! search and decomposition by exhaustive idempotent search, with summands
//! identified against every candidate descriptor of the right size.

use thiserror::Error;

use crate::classify::{
    canonical_shape, realize, Decomposition, Descriptor, LocalSystemDescriptor, SnakeDescriptor, SnakeKind,
};
use crate::complex::{BasisChange, Complex, RingMatrix, Ring};
use crate::gf::{self, Matrix, Poly};
use crate::iso::{assemble, chain_map_space};
use crate::reduce::Grade;
use crate::twostory::unusual_compare;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("search budget exceeded: {0}")]
    BudgetExceeded(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBudget {
    pub max_rank: usize,
    pub characteristic: u32,
    /// Largest arrow length tried for candidate summands; derived from the
    /// grading spread when None.
    pub max_exponent: Option<u32>,
    /// Largest number of chain maps enumerated in one search.
    pub max_enumeration: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_rank: 4,
            characteristic: 2,
            max_exponent: None,
            max_enumeration: 1 << 20,
        }
    }
}

impl SearchBudget {
    pub fn for_rank(max_rank: usize, characteristic: u32) -> Self {
        SearchBudget {
            max_rank,
            characteristic,
            ..SearchBudget::default()
        }
    }

    fn admit(&self, c: &Complex) -> Result<()> {
        if c.rank() > self.max_rank {
            return Err(OracleError::BudgetExceeded(format!("rank {} > {}", c.rank(), self.max_rank)));
        }
        if c.p != self.characteristic {
            return Err(OracleError::BudgetExceeded(format!(
                "characteristic {} outside the budget's {}",
                c.p, self.characteristic
            )));
        }
        Ok(())
    }
}

/// Every vector of F_p^d, in odometer order.
fn for_each_vector(p: u32, d: usize, limit: u64, mut f: impl FnMut(&[u32]) -> bool) -> Result<()> {
    let total = (p as u64).checked_pow(d as u32).filter(|&t| t <= limit);
    if total.is_none() {
        return Err(OracleError::BudgetExceeded(format!("{p}^{d} chain maps")));
    }
    let mut v = vec![0u32; d];
    loop {
        if f(&v) {
            return Ok(());
        }
        let mut i = 0;
        loop {
            if i == d {
                return Ok(());
            }
            v[i] += 1;
            if v[i] < p {
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

/// All chain maps c → d, each passed to `f` until it returns true.
fn for_each_chain_map(c: &Complex, d: &Complex, limit: u64, mut f: impl FnMut(RingMatrix) -> bool) -> Result<()> {
    let p = c.p;
    let (vars, kernel) = chain_map_space(c, d);
    for_each_vector(p, kernel.cols(), limit, |w| {
        let coeffs: Vec<u32> = (0..kernel.rows())
            .map(|i| (0..kernel.cols()).fold(0, |s, k| gf::add(s, gf::mul(kernel.get(i, k), w[k], p), p)))
            .collect();
        f(assemble(c, &vars, &coeffs))
    })
}

fn sorted_grades(c: &Complex) -> Vec<Grade> {
    let mut g: Vec<Grade> = c.generators().iter().map(|g| g.gr()).collect();
    g.sort();
    g
}

/// Exhaustive search for a basis change B with c.apply_basis_change(B) = d.
pub fn brute_force_isomorphic(c: &Complex, d: &Complex, budget: &SearchBudget) -> Result<Option<BasisChange>> {
    budget.admit(c)?;
    budget.admit(d)?;
    if c.ring != d.ring || c.rank() != d.rank() || sorted_grades(c) != sorted_grades(d) {
        return Ok(None);
    }
    let ids: Vec<String> = d.generators().iter().map(|g| g.id.clone()).collect();
    if c == d {
        return Ok(Some(BasisChange {
            matrix: RingMatrix::identity(c.p, c.ring, c.rank()),
            ids,
        }));
    }
    let mut found = None;
    for_each_chain_map(c, d, budget.max_enumeration, |m| {
        if !m.constant_part().is_invertible() {
            return false;
        }
        let change = BasisChange {
            matrix: m,
            ids: ids.clone(),
        };
        if c.apply_basis_change(&change).ok().as_ref() == Some(d) {
            found = Some(change);
            return true;
        }
        false
    })?;
    Ok(found)
}

/// Connected components of the generator graph, each restricted.
fn components(c: &Complex) -> Vec<Complex> {
    let n = c.rank();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        if p[i] != i {
            let r = find(p, p[i]);
            p[i] = r;
        }
        p[i]
    }
    for (s, t, _) in c.terms() {
        let (a, b) = (find(&mut parent, s), find(&mut parent, t));
        parent[a] = b;
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.values().map(|keep| c.restrict(keep)).collect()
}

/// Rows of `m` (homogeneous vectors) whose constant parts are independent.
fn independent_rows(m: &RingMatrix) -> Vec<usize> {
    let c = m.constant_part();
    let mut chosen: Vec<usize> = Vec::new();
    for i in 0..c.rows() {
        let mut rows = chosen.clone();
        rows.push(i);
        let all: Vec<usize> = (0..c.cols()).collect();
        if c.select(&rows, &all).rank() == rows.len() {
            chosen.push(i);
        }
    }
    chosen
}

/// Splits along a nontrivial idempotent chain endomorphism if one exists.
fn split(c: &Complex, limit: u64) -> Result<Option<(Complex, Complex)>> {
    let n = c.rank();
    let id = RingMatrix::identity(c.p, c.ring, n);
    let mut idem = None;
    for_each_chain_map(c, c, limit, |e| {
        if e.is_zero() || e.is_identity() || e.mul(&e) != e {
            return false;
        }
        idem = Some(e);
        true
    })?;
    let Some(e) = idem else { return Ok(None) };
    let f = id.add(&e.scaled(gf::neg(1, c.p)));
    let (re, rf) = (independent_rows(&e), independent_rows(&f));
    let mut b = RingMatrix::zeros(c.p, c.ring, n, n);
    for (k, &i) in re.iter().enumerate() {
        for j in 0..n {
            b.set(k, j, e.get(i, j).clone());
        }
    }
    for (k, &i) in rf.iter().enumerate() {
        for j in 0..n {
            b.set(re.len() + k, j, f.get(i, j).clone());
        }
    }
    let ids = (0..n).map(|k| format!("s{k}")).collect();
    let d = c
        .apply_basis_change(&BasisChange { matrix: b, ids })
        .expect("idempotent splitting basis is invertible");
    let first: Vec<usize> = (0..re.len()).collect();
    let rest: Vec<usize> = (re.len()..n).collect();
    Ok(Some((d.restrict(&first), d.restrict(&rest))))
}

fn indecomposables(c: &Complex, limit: u64) -> Result<Vec<Complex>> {
    let mut out = Vec::new();
    let mut stack = components(c);
    while let Some(x) = stack.pop() {
        match split(&x, limit)? {
            Some((a, b)) => {
                stack.extend(components(&a));
                stack.extend(components(&b));
            }
            None => out.push(x),
        }
    }
    Ok(out)
}

/// All sequences of the given length with entries ±1..=m.
fn sequences(len: usize, m: u32) -> Vec<Vec<i64>> {
    let vals: Vec<i64> = (1..=m as i64).flat_map(|a| [a, -a]).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                vals.iter().map(move |&v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

/// Monic polynomials of degree w over F_p that are powers of one
/// irreducible and do not vanish at 0.
fn primary_polys(p: u32, w: usize) -> Vec<Poly> {
    let mut out = Vec::new();
    let mut coeffs = vec![0u32; w];
    loop {
        let mut c = coeffs.clone();
        c.push(1);
        let f = Poly::new(p, c);
        if f.coeff(0) != 0 && f.factor().len() == 1 {
            out.push(f);
        }
        let mut i = 0;
        loop {
            if i == w {
                return out;
            }
            coeffs[i] += 1;
            if coeffs[i] < p {
                break;
            }
            coeffs[i] = 0;
            i += 1;
        }
    }
}

fn offset_to_match(cand: &Complex, x: &Complex) -> Option<Grade> {
    let (a, b) = (sorted_grades(cand), sorted_grades(x));
    let o = (b[0].0 - a[0].0, b[0].1 - a[0].1);
    let shifted: Vec<Grade> = a.iter().map(|g| (g.0 + o.0, g.1 + o.1)).collect();
    (shifted == b).then_some(o)
}

fn matches(d: &Descriptor, x: &Complex, budget: &SearchBudget) -> Result<Option<Descriptor>> {
    let p = x.p;
    let Ok(at_origin) = realize(d, p) else { return Ok(None) };
    let Some(o) = offset_to_match(&at_origin, x) else { return Ok(None) };
    let shifted = match d {
        Descriptor::Snake(s) => Descriptor::Snake(SnakeDescriptor {
            anchor: (s.anchor.0 + o.0, s.anchor.1 + o.1),
            ..s.clone()
        }),
        Descriptor::LocalSystem(l) => Descriptor::LocalSystem(LocalSystemDescriptor {
            anchor: (l.anchor.0 + o.0, l.anchor.1 + o.1),
            ..l.clone()
        }),
        Descriptor::Zero(g) => Descriptor::Zero((g.0 + o.0, g.1 + o.1)),
    };
    let k = realize(&shifted, p).expect("shifted descriptor is valid");
    Ok(brute_force_isomorphic(&k, x, budget)?.map(|_| shifted))
}

fn spread(x: &Complex) -> u32 {
    let g = sorted_grades(x);
    let (u0, u1) = (g.iter().map(|a| a.0).min().unwrap(), g.iter().map(|a| a.0).max().unwrap());
    let (v0, v1) = (g.iter().map(|a| a.1).min().unwrap(), g.iter().map(|a| a.1).max().unwrap());
    ((u1 - u0).max(v1 - v0) as u32).div_ceil(2).max(1)
}

/// The canonical descriptor of an indecomposable complex, found by trying
/// every candidate of its size.
fn identify(x: &Complex, budget: &SearchBudget) -> Result<Descriptor> {
    let r = x.rank();
    let p = x.p;
    if r == 2 && x.has_length_zero_arrow() {
        let (s, _, _) = x.terms().next().unwrap();
        return Ok(Descriptor::Zero(x.generator(s).gr()));
    }
    let m = budget.max_exponent.unwrap_or_else(|| spread(x));
    let mut snakes: Vec<SnakeDescriptor> = Vec::new();
    let kinds: &[SnakeKind] = if (r - 1) % 2 == 0 {
        &[SnakeKind::Standard]
    } else {
        &[SnakeKind::Horizontal, SnakeKind::Vertical]
    };
    for &kind in kinds {
        for seq in sequences(r - 1, m) {
            let d = Descriptor::Snake(SnakeDescriptor {
                kind,
                sequence: seq,
                anchor: (0, 0),
            });
            if let Some(Descriptor::Snake(s)) = matches(&d, x, budget)? {
                snakes.push(s);
            }
        }
    }
    if !snakes.is_empty() {
        // the higher reading, then the lower anchor
        snakes.sort_by(|a, b| {
            unusual_compare(&b.sequence, &a.sequence, None)
                .then(a.kind.cmp(&b.kind))
                .then(a.anchor.cmp(&b.anchor))
        });
        return Ok(Descriptor::Snake(snakes.swap_remove(0)));
    }
    let mut systems: Vec<LocalSystemDescriptor> = Vec::new();
    for q in (2..=r).step_by(2) {
        if r % q != 0 {
            continue;
        }
        let w = r / q;
        for shape in sequences(q, m) {
            if canonical_shape(&shape).ok().as_ref() != Some(&shape) {
                continue;
            }
            for f in primary_polys(p, w) {
                let a = Matrix::companion(&f);
                let h = gf::rational_canonical_form(&a).expect("companion of f with f(0) ≠ 0 is invertible");
                let d = Descriptor::LocalSystem(LocalSystemDescriptor {
                    shape: shape.clone(),
                    anchor: (0, 0),
                    width: w,
                    holonomy: h.to_rows(),
                });
                if let Some(Descriptor::LocalSystem(l)) = matches(&d, x, budget)? {
                    systems.push(l);
                }
            }
        }
    }
    systems
        .into_iter()
        .min_by(|a, b| (a.anchor, &a.holonomy).cmp(&(b.anchor, &b.holonomy)))
        .map(Descriptor::LocalSystem)
        .ok_or_else(|| OracleError::BudgetExceeded(format!("no candidate of rank {r} matched a summand")))
}

/// Decomposition by exhaustive search: split along idempotent chain
/// endomorphisms until every piece is indecomposable, then identify each
/// piece by isomorphism with a realized candidate.
pub fn brute_force_decompose(c: &Complex, budget: &SearchBudget) -> Result<Decomposition> {
    budget.admit(c)?;
    let c = c.with_ring(Ring::R1);
    let mut d = Decomposition {
        characteristic: c.p,
        snakes: Vec::new(),
        local_systems: Vec::new(),
        zeros: 0,
        zero_anchors: Vec::new(),
        basis_change: None,
    };
    for x in indecomposables(&c, budget.max_enumeration)? {
        match identify(&x, budget)? {
            Descriptor::Snake(s) => d.snakes.push(s),
            Descriptor::LocalSystem(l) => d.local_systems.push(l),
            Descriptor::Zero(g) => d.zero_anchors.push(g),
        }
    }
    d.zeros = d.zero_anchors.len();
    d.snakes.sort();
    d.local_systems.sort();
    d.zero_anchors.sort();
    Ok(d)
}

/// Every valid complex over R₁ of rank 1..=max_rank over F_p whose
/// gradings lie in [0, spread]² with both minima 0. Gradings are listed in
/// sorted order, so complexes differing only by a relabeling of
/// generators may appear more than once.
pub fn all_complexes(max_rank: usize, p: u32, spread: i64) -> Vec<Complex> {
    let points: Vec<Grade> = (0..=spread).flat_map(|u| (0..=spread).map(move |v| (u, v))).collect();
    let mut out = Vec::new();
    for n in 1..=max_rank {
        let mut idx = vec![0usize; n];
        loop {
            let grs: Vec<Grade> = idx.iter().map(|&i| points[i]).collect();
            if grs.iter().map(|g| g.0).min() == Some(0) && grs.iter().map(|g| g.1).min() == Some(0) {
                push_all_differentials(&grs, p, &mut out);
            }
            // next non-decreasing index tuple
            let mut k = n;
            while k > 0 && idx[k - 1] == points.len() - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..n {
                idx[j] = idx[k - 1];
            }
        }
    }
    out
}

fn push_all_differentials(grs: &[Grade], p: u32, out: &mut Vec<Complex>) {
    let gens: Vec<crate::complex::Generator> = grs
        .iter()
        .enumerate()
        .map(|(i, g)| crate::complex::Generator::new(format!("g{i}"), g.0, g.1))
        .collect();
    let mut slots: Vec<(usize, usize, u32, u32)> = Vec::new();
    for (s, a) in grs.iter().enumerate() {
        for (t, b) in grs.iter().enumerate() {
            let (du, dv) = (b.0 - a.0 + 1, b.1 - a.1 + 1);
            if s == t || du < 0 || dv < 0 || du % 2 != 0 || dv % 2 != 0 {
                continue;
            }
            let (u, v) = ((du / 2) as u32, (dv / 2) as u32);
            if Ring::R1.admits(u, v) {
                slots.push((s, t, u, v));
            }
        }
    }
    let mut choice = vec![0u32; slots.len()];
    loop {
        let terms: Vec<(usize, usize, u32, u32, u32)> = slots
            .iter()
            .zip(&choice)
            .filter(|(_, &c)| c != 0)
            .map(|(&(s, t, u, v), &c)| (s, t, c, u, v))
            .collect();
        let c = Complex::new(Ring::R1, p, gens.clone(), &terms).expect("well-formed terms");
        if c.is_valid() {
            out.push(c);
        }
        let mut i = 0;
        loop {
            if i == choice.len() {
                return;
            }
            choice[i] += 1;
            if choice[i] < p {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{decompose_unverified, parse_descriptor};
    use crate::complex::tests::{arb_complex, trefoil};
    use proptest::prelude::*;

    #[test]
    fn isomorphism_examples() {
        let b = SearchBudget::default();
        let t = trefoil().with_ring(Ring::R1);
        let w = brute_force_isomorphic(&t, &t, &b).unwrap().unwrap();
        assert!(w.matrix.is_identity());
        let z = Complex::zero_complex(Ring::R1, 2, (0, 0), ("x", "y"));
        let e = Complex::empty(Ring::R1, 2);
        assert!(brute_force_isomorphic(&z, &e, &b).unwrap().is_none());
        let big = crate::random::random_complex(6, 2, 1, false);
        assert!(matches!(brute_force_isomorphic(&big, &big, &b), Err(OracleError::BudgetExceeded(_))));
    }

    #[test]
    fn decomposition_examples() {
        let b = SearchBudget::default();
        let z = Complex::zero_complex(Ring::R1, 2, (0, 0), ("x", "y"));
        let d = brute_force_decompose(&z, &b).unwrap();
        assert_eq!((d.zeros, d.snakes.len(), d.local_systems.len()), (1, 0, 0));
        let t = brute_force_decompose(&trefoil(), &b).unwrap();
        assert_eq!(t.snakes.len(), 1);
        assert_eq!(t.snakes[0].sequence, vec![-1, 1]);
        let parts = ["S_h(1) @ (0,0)", "C(-1,2) @ (3,1)"];
        let cs: Vec<Complex> = parts.iter().map(|s| realize(&parse_descriptor(s).unwrap(), 2).unwrap()).collect();
        let sum = Complex::direct_sum(&cs).unwrap();
        let d = brute_force_decompose(&sum, &SearchBudget::for_rank(5, 2)).unwrap();
        assert_eq!(d.snakes.len(), 2);
        assert_eq!(d, decompose_unverified(&sum));
    }

    #[test]
    fn square_local_system() {
        let l = parse_descriptor("LS(shape=[1,1,-1,-1]; w=1; A=rcf[[2]]; anchor=(0,0))").unwrap();
        let c = realize(&l, 3).unwrap();
        let d = brute_force_decompose(&c, &SearchBudget::for_rank(4, 3)).unwrap();
        assert_eq!(d.local_systems.len(), 1);
        assert_eq!(Descriptor::LocalSystem(d.local_systems[0].clone()), l);
    }

    #[test]
    fn enumeration_counts() {
        let all = all_complexes(2, 2, 1);
        assert!(all.iter().all(|c| c.is_valid()));
        assert!(all.iter().any(|c| c.has_length_zero_arrow()));
        assert_eq!(all.iter().filter(|c| c.rank() == 1).count(), 1);
    }

    #[test]
    fn exhaustive_rank_two() {
        for c in all_complexes(2, 2, 3) {
            let b = SearchBudget::for_rank(2, 2);
            assert_eq!(brute_force_decompose(&c, &b).unwrap(), decompose_unverified(&c), "{c:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn agrees_with_decompose(c in arb_complex(4)) {
            let b = SearchBudget::for_rank(4, c.p);
            let oracle = brute_force_decompose(&c, &b).unwrap();
            prop_assert_eq!(oracle, decompose_unverified(&c));
        }
    }
}
