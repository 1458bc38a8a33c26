//! Snake and local-system descriptors: reading them off a reduced two-story
//! complex, canonical forms, realization as complexes and a text syntax.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complex::{BasisChange, Complex, Generator, Ring};
use crate::gf::{self, Matrix};
use crate::reduce::{realize_transition, Engine, Grade, Slot};
use crate::simplify::transition_data;
use crate::twostory::unusual_compare;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("bad period: {0}")]
    BadPeriod(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("cannot parse descriptor `{0}`")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnakeKind {
    Standard,
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnakeDescriptor {
    pub kind: SnakeKind,
    pub sequence: Vec<i64>,
    /// Bigrading of x₀.
    pub anchor: Grade,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocalSystemDescriptor {
    pub shape: Vec<i64>,
    /// Bigrading of the first corner of the canonical reading.
    pub anchor: Grade,
    pub width: usize,
    /// Rational canonical form of the holonomy, row by row.
    pub holonomy: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Descriptor {
    Snake(SnakeDescriptor),
    LocalSystem(LocalSystemDescriptor),
    /// A zero complex ∂x = y with gr(x) given.
    Zero(Grade),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub characteristic: u32,
    pub snakes: Vec<SnakeDescriptor>,
    /// Indecomposable local systems.
    pub local_systems: Vec<LocalSystemDescriptor>,
    pub zeros: usize,
    pub zero_anchors: Vec<Grade>,
    /// Rows write the generators of the realized direct sum in the input
    /// generators (None only if the isomorphism search gave up).
    #[serde(skip)]
    pub basis_change: Option<BasisChange>,
}

/// gr(target) − gr(source) for an arrow of the given type and length.
pub fn arrow_shift(horizontal: bool, length: u32) -> Grade {
    let l = length as i64;
    if horizontal {
        (2 * l - 1, -1)
    } else {
        (-1, 2 * l - 1)
    }
}

fn add(a: Grade, b: Grade) -> Grade {
    (a.0 + b.0, a.1 + b.1)
}

fn sub(a: Grade, b: Grade) -> Grade {
    (a.0 - b.0, a.1 - b.1)
}

/// Gradings along a chain of arrows: arrow j joins nodes j and j+1 and
/// carries the label of node j (+l when node j is the target).
fn chain_gradings(arrows: &[(bool, i64)], start: Grade) -> Vec<Grade> {
    let mut out = vec![start];
    for &(h, label) in arrows {
        let last = *out.last().unwrap();
        let s = arrow_shift(h, label.unsigned_abs() as u32);
        out.push(if label > 0 { sub(last, s) } else { add(last, s) });
    }
    out
}

fn cmp_seq(a: &[i64], b: &[i64]) -> Ordering {
    unusual_compare(a, b, None).then(a.len().cmp(&b.len()))
}

/// Smallest even period of a cyclic sequence.
fn minimal_even_period(s: &[i64]) -> Option<usize> {
    let n = s.len();
    (1..=n)
        .filter(|d| n % d == 0)
        .find(|&d| (0..n).all(|i| s[i] == s[(i + d) % n]))
        .map(|d| if d % 2 == 0 { d } else { 2 * d })
        .filter(|d| n % d == 0)
}

/// The ≤!-highest representative of a periodic sequence under even cyclic
/// shifts and reversal, over one minimal even period. The input is one (not
/// necessarily minimal) period.
pub fn canonical_shape(seq: &[i64]) -> Result<Vec<i64>> {
    if seq.is_empty() || seq.len() % 2 != 0 {
        return Err(ClassifyError::BadPeriod(format!("period of length {} is not even", seq.len())));
    }
    if seq.contains(&0) {
        return Err(ClassifyError::BadPeriod("zero term".into()));
    }
    let q = minimal_even_period(seq)
        .ok_or_else(|| ClassifyError::BadPeriod("no even period divides the input".into()))?;
    let s = &seq[..q];
    let odd: i64 = s.iter().step_by(2).sum();
    let even: i64 = s.iter().skip(1).step_by(2).sum();
    if odd != even {
        return Err(ClassifyError::BadPeriod(format!("closure fails: {odd} vs {even}")));
    }
    let signs: i64 = s.iter().map(|x| x.signum()).sum();
    if signs != 2 * odd {
        return Err(ClassifyError::BadPeriod(format!(
            "gradings do not close: {signs} orientations against twice {odd}"
        )));
    }
    let mut best: Option<Vec<i64>> = None;
    for k in (0..q).step_by(2) {
        let shifted: Vec<i64> = (0..q).map(|i| s[(i + k) % q]).collect();
        // s'_i = −s_{2p+2k−i}, 1-based
        let reversed: Vec<i64> = (1..=q).map(|i| -s[(2 * q + k - i - 1) % q]).collect();
        for c in [shifted, reversed] {
            if best.as_ref().is_none_or(|b| cmp_seq(&c, b) == Ordering::Greater) {
                best = Some(c);
            }
        }
    }
    Ok(best.unwrap())
}

/// Net translation of a shape per period: the sum of its odd-position terms.
pub fn drift(shape: &[i64]) -> i64 {
    shape.iter().step_by(2).sum()
}

/// One arrow of a cyclic bundle, between positions j and j+1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleArrow {
    pub horizontal: bool,
    pub length: u32,
    /// Whether position j is the source.
    pub first_is_source: bool,
    /// The differential from the source group to the target group, row
    /// convention (coefficients of the arrow's monomial).
    pub matrix: Matrix,
}

/// A cyclic family of w parallel strands: positions 0..L, each a group of w
/// generators of one bigrading, arrow j joining positions j and j+1 (mod L)
/// with arrow 0 horizontal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub grades: Vec<Grade>,
    pub arrows: Vec<BundleArrow>,
}

/// A way of walking around a bundle: the positions in order and, for each
/// step, the arrow taken and whether the departing position is its source.
struct Reading {
    positions: Vec<usize>,
    steps: Vec<(usize, bool)>,
}

impl Bundle {
    fn len(&self) -> usize {
        self.arrows.len()
    }

    pub fn width(&self) -> usize {
        self.arrows[0].matrix.rows()
    }

    fn readings(&self) -> Vec<Reading> {
        let l = self.len();
        let mut out = Vec::new();
        for s in (0..l).step_by(2) {
            let positions = (0..l).map(|t| (s + t) % l).collect();
            let steps = (0..l)
                .map(|t| {
                    let a = (s + t) % l;
                    (a, self.arrows[a].first_is_source)
                })
                .collect();
            out.push(Reading { positions, steps });
        }
        for s in (1..l).step_by(2) {
            let positions = (0..l).map(|t| (s + l - t) % l).collect();
            let steps = (0..l)
                .map(|t| {
                    let a = (s + 2 * l - t - 1) % l;
                    (a, !self.arrows[a].first_is_source)
                })
                .collect();
            out.push(Reading { positions, steps });
        }
        out
    }

    fn labels(&self, r: &Reading) -> Vec<i64> {
        r.steps
            .iter()
            .map(|&(a, src)| {
                let l = self.arrows[a].length as i64;
                if src {
                    -l
                } else {
                    l
                }
            })
            .collect()
    }

    /// The closing isomorphism when every other arrow along the reading is
    /// made the identity.
    fn monodromy(&self, r: &Reading) -> Matrix {
        let p = self.arrows[0].matrix.characteristic();
        let mut e = Matrix::identity(p, self.width());
        let last = r.steps.len() - 1;
        for (t, &(a, src)) in r.steps.iter().enumerate() {
            let n = &self.arrows[a].matrix;
            if t == last {
                return if src {
                    e.mul(n)
                } else {
                    n.mul(&gf::invert(&e).expect("transport is invertible"))
                };
            }
            e = if src {
                e.mul(n)
            } else {
                e.mul(&gf::invert(n).expect("bundle arrows are isomorphisms"))
            };
        }
        unreachable!()
    }
}

/// Block matrix of a k-fold cover: identity blocks on the superdiagonal and
/// `a` in the bottom-left corner.
fn fold(a: &Matrix, k: usize) -> Matrix {
    let w = a.rows();
    let mut out = Matrix::zeros(a.characteristic(), k * w, k * w);
    for m in 0..k {
        let (r, c) = (m * w, ((m + 1) % k) * w);
        for i in 0..w {
            for j in 0..w {
                let v = if m + 1 == k { a.get(i, j) } else { u32::from(i == j) };
                out.set(r + i, c + j, v);
            }
        }
    }
    out
}

fn rcf(a: &Matrix) -> Matrix {
    gf::rational_canonical_form(a).expect("holonomy is invertible")
}

/// The local system carried by a bundle: canonical shape, total width and
/// the rational canonical form of its holonomy. Among the readings that
/// produce the canonical shape, the one with the smallest (anchor,
/// holonomy) is used.
pub fn local_system_triple(b: &Bundle) -> Result<LocalSystemDescriptor> {
    Ok(best_reading(b)?.0)
}

fn best_reading(b: &Bundle) -> Result<(LocalSystemDescriptor, Vec<usize>, Vec<(usize, bool)>)> {
    let l = b.len();
    let first = b.readings().into_iter().next().unwrap();
    let shape = canonical_shape(&b.labels(&first))?;
    let q = shape.len();
    let k = l / q;
    let mut best: Option<(LocalSystemDescriptor, Vec<usize>, Vec<(usize, bool)>)> = None;
    for r in b.readings() {
        if b.labels(&r)[..q] != shape[..] {
            continue;
        }
        let h = rcf(&fold(&b.monodromy(&r), k));
        let d = LocalSystemDescriptor {
            shape: shape.clone(),
            anchor: b.grades[r.positions[0]],
            width: h.rows(),
            holonomy: h.to_rows(),
        };
        let better = match &best {
            None => true,
            Some((o, _, _)) => (d.anchor, &d.holonomy) < (o.anchor, &o.holonomy),
        };
        if better {
            best = Some((d, r.positions, r.steps));
        }
    }
    Ok(best.expect("the canonical shape is attained by some reading"))
}

fn holonomy_matrix(d: &LocalSystemDescriptor, p: u32) -> Matrix {
    let rows: Vec<Vec<i64>> = d.holonomy.iter().map(|r| r.iter().map(|&x| x as i64).collect()).collect();
    if rows.is_empty() {
        return Matrix::zeros(p, 0, 0);
    }
    Matrix::from_rows(p, &rows)
}

/// The bundle of one period with all arrows the identity except the
/// closing vertical one, which is `a`.
fn standard_bundle(shape: &[i64], anchor: Grade, a: &Matrix) -> Bundle {
    let p = a.characteristic();
    let q = shape.len();
    let arrows: Vec<(bool, i64)> = shape.iter().enumerate().map(|(i, &s)| (i % 2 == 0, s)).collect();
    let mut grades = chain_gradings(&arrows, anchor);
    grades.pop();
    let arrows = arrows
        .iter()
        .enumerate()
        .map(|(i, &(h, s))| BundleArrow {
            horizontal: h,
            length: s.unsigned_abs() as u32,
            first_is_source: s < 0,
            matrix: if i + 1 == q { a.clone() } else { Matrix::identity(p, a.rows()) },
        })
        .collect();
    Bundle { grades, arrows }
}

/// Splits a local system into indecomposables, one per elementary divisor
/// of its holonomy, each in canonical form.
pub fn refine(d: &LocalSystemDescriptor, p: u32) -> Vec<LocalSystemDescriptor> {
    let a = holonomy_matrix(d, p);
    let mut out: Vec<LocalSystemDescriptor> = gf::elementary_divisors(&a)
        .iter()
        .map(|f| {
            let b = standard_bundle(&d.shape, d.anchor, &Matrix::companion(f));
            local_system_triple(&b).expect("shape is canonical")
        })
        .collect();
    out.sort();
    out
}

/// Reads a snake off a path: arrow j joins nodes j and j+1 and carries the
/// label of node j.
fn snake_from_path(grades: &[Grade], arrows: &[(bool, i64)]) -> SnakeDescriptor {
    let m = arrows.len();
    if m == 0 {
        return SnakeDescriptor {
            kind: SnakeKind::Standard,
            sequence: Vec::new(),
            anchor: grades[0],
        };
    }
    let rev_grades: Vec<Grade> = grades.iter().rev().copied().collect();
    let rev_arrows: Vec<(bool, i64)> = arrows.iter().rev().map(|&(h, l)| (h, -l)).collect();
    let seq = |a: &[(bool, i64)]| a.iter().map(|x| x.1).collect::<Vec<_>>();
    match (arrows[0].0, arrows[m - 1].0) {
        (true, false) => SnakeDescriptor {
            kind: SnakeKind::Standard,
            sequence: seq(arrows),
            anchor: grades[0],
        },
        (false, true) => SnakeDescriptor {
            kind: SnakeKind::Standard,
            sequence: seq(&rev_arrows),
            anchor: rev_grades[0],
        },
        (h, _) => {
            let (kind, at) = if h { (SnakeKind::Horizontal, 0) } else { (SnakeKind::Vertical, 1) };
            let a = SnakeDescriptor {
                kind,
                sequence: seq(arrows),
                anchor: grades[at],
            };
            let b = SnakeDescriptor {
                kind,
                sequence: seq(&rev_arrows),
                anchor: rev_grades[at],
            };
            match cmp_seq(&a.sequence, &b.sequence) {
                Ordering::Greater => a,
                Ordering::Less => b,
                Ordering::Equal => std::cmp::min(a, b),
            }
        }
    }
}

fn coefficient(c: &Complex, d: &crate::complex::RingMatrix, s: usize, t: usize, horizontal: bool, l: u32) -> u32 {
    let _ = c;
    let (u, v) = if horizontal { (l, 0) } else { (0, l) };
    d.get(s, t)
        .terms()
        .find(|&(a, b, _)| (a, b) == (u, v))
        .map_or(0, |x| x.2)
}

/// Snakes and bundles of a fully reduced engine.
fn read_off(e: &Engine, r: &Complex) -> (Vec<SnakeDescriptor>, Vec<Bundle>) {
    let n = e.rank();
    let p = e.characteristic();
    // nodes: (x, y, band)
    let mut nodes: Vec<(usize, usize, Option<(usize, usize)>)> = Vec::new();
    let mut xnode = vec![usize::MAX; n];
    let mut ynode = vec![usize::MAX; n];
    for i in 0..n {
        if let Slot::Glued(c) = *e.xslot(i) {
            xnode[i] = nodes.len();
            ynode[c] = nodes.len();
            nodes.push((i, c, None));
        }
    }
    for (b, band) in e.bands().iter().enumerate() {
        for k in 0..band.rows.len() {
            xnode[band.rows[k]] = nodes.len();
            ynode[band.cols[k]] = nodes.len();
            nodes.push((band.rows[k], band.cols[k], Some((b, k))));
        }
    }
    assert!(xnode.iter().chain(&ynode).all(|&v| v != usize::MAX), "engine left active generators");
    // neighbour across an arrow and the label of this node for it
    let vert = |v: usize| e.xpartner(nodes[v].0).map(|x| (xnode[x], e.xlabel(nodes[v].0)));
    let horiz = |v: usize| e.ypartner(nodes[v].1).map(|y| (ynode[y], e.ylabel(nodes[v].1)));
    let mut seen = vec![false; nodes.len()];
    let mut snakes = Vec::new();
    for start in 0..nodes.len() {
        if seen[start] || (vert(start).is_some() && horiz(start).is_some()) {
            continue;
        }
        let mut path = vec![start];
        let mut arrows = Vec::new();
        let mut horizontal = horiz(start).is_some();
        let mut cur = start;
        seen[start] = true;
        loop {
            let next = if horizontal { horiz(cur) } else { vert(cur) };
            let Some((nx, label)) = next else { break };
            arrows.push((horizontal, label));
            path.push(nx);
            seen[nx] = true;
            cur = nx;
            horizontal = !horizontal;
        }
        let grades: Vec<Grade> = path.iter().map(|&v| e.grade(nodes[v].0)).collect();
        snakes.push(snake_from_path(&grades, &arrows));
    }
    let d = r.differential_matrix();
    let mut bundles = Vec::new();
    for (b, band) in e.bands().iter().enumerate() {
        let w = band.rows.len();
        let mut strands: Vec<Vec<usize>> = Vec::new();
        let mut arrows: Vec<(bool, i64)> = Vec::new();
        for k in 0..w {
            let start = xnode[band.rows[k]];
            let mut path = vec![start];
            let mut labels = Vec::new();
            let mut horizontal = true;
            let mut cur = start;
            loop {
                seen[cur] = true;
                let (nx, label) = if horizontal { horiz(cur) } else { vert(cur) }.expect("bundle strands are closed");
                labels.push((horizontal, label));
                horizontal = !horizontal;
                if nx == start {
                    break;
                }
                assert!(nodes[nx].2.is_none(), "strand of band {b} meets another band");
                path.push(nx);
                cur = nx;
            }
            assert!(k == 0 || labels == arrows, "strands of one band differ");
            arrows = labels;
            strands.push(path);
        }
        let l = arrows.len();
        let grades = (0..l).map(|j| e.grade(nodes[strands[0][j]].0)).collect();
        let barrows = (0..l)
            .map(|j| {
                let (h, label) = arrows[j];
                let len = label.unsigned_abs() as u32;
                let src_first = label < 0;
                let (sp, tp) = if src_first { (j, (j + 1) % l) } else { ((j + 1) % l, j) };
                let mut m = Matrix::zeros(p, w, w);
                for a in 0..w {
                    for c in 0..w {
                        let s = nodes[strands[a][sp]].0;
                        let t = nodes[strands[c][tp]].0;
                        m.set(a, c, coefficient(r, &d, s, t, h, len));
                    }
                }
                BundleArrow {
                    horizontal: h,
                    length: len,
                    first_is_source: src_first,
                    matrix: m,
                }
            })
            .collect();
        bundles.push(Bundle { grades, arrows: barrows });
    }
    assert!(seen.iter().all(|&s| s), "unread generators after reduction");
    (snakes, bundles)
}

/// Splits a complex into snakes, indecomposable local systems and zero
/// complexes, in canonical form.
pub fn decompose(c: &Complex) -> Decomposition {
    let mut dec = decompose_unverified(c);
    let c1 = c.with_ring(Ring::R1);
    if let Ok(sum) = realize_decomposition(&dec) {
        dec.basis_change = crate::iso::find_isomorphism(&c1, &sum, &mut crate::random::rng(0), 400);
    }
    dec
}

/// [`decompose`] without the isomorphism search for the basis change.
pub fn decompose_unverified(c: &Complex) -> Decomposition {
    let p = c.p;
    let c1 = c.with_ring(Ring::R1);
    let (stripped, k, change) = c1.strip_zero_complexes();
    let mut zero_anchors = Vec::new();
    if k > 0 {
        let full = c1.apply_basis_change(&change).expect("stripping change is invertible");
        for j in 0..k {
            zero_anchors.push(full.generator(stripped.rank() + 2 * j).gr());
        }
        zero_anchors.sort();
    }
    let mut snakes = Vec::new();
    let mut local_systems = Vec::new();
    if stripped.rank() > 0 {
        let td = transition_data(&stripped).expect("a stripped complex has aligned simplified bases");
        let mut e = Engine::new(&td);
        e.run();
        let r = realize_transition(&td, &e.transition());
        let (s, bundles) = read_off(&e, &r);
        snakes = s;
        for b in bundles {
            let d = local_system_triple(&b).expect("bundle shapes satisfy closure");
            local_systems.extend(refine(&d, p));
        }
    }
    snakes.sort();
    local_systems.sort();
    Decomposition {
        characteristic: p,
        snakes,
        local_systems,
        zeros: k,
        zero_anchors,
        basis_change: None,
    }
}

fn path_complex(p: u32, arrows: &[(bool, i64)], anchor_node: usize, anchor: Grade) -> Complex {
    let grades = chain_gradings(arrows, (0, 0));
    let off = sub(anchor, grades[anchor_node]);
    let gens = grades
        .iter()
        .enumerate()
        .map(|(i, &g)| Generator::new(format!("x{i}"), g.0 + off.0, g.1 + off.1))
        .collect();
    let terms: Vec<(usize, usize, u32, u32, u32)> = arrows
        .iter()
        .enumerate()
        .map(|(j, &(h, label))| {
            let l = label.unsigned_abs() as u32;
            let (s, t) = if label > 0 { (j + 1, j) } else { (j, j + 1) };
            let (u, v) = if h { (l, 0) } else { (0, l) };
            (s, t, 1, u, v)
        })
        .collect();
    Complex::new(Ring::R1, p, gens, &terms).expect("snake complex")
}

fn bundle_complex(b: &Bundle) -> Complex {
    let p = b.arrows[0].matrix.characteristic();
    let w = b.width();
    let l = b.len();
    let mut gens = Vec::new();
    for (j, g) in b.grades.iter().enumerate() {
        for a in 0..w {
            gens.push(Generator::new(format!("X{j}_{a}"), g.0, g.1));
        }
    }
    let mut terms = Vec::new();
    for (j, ar) in b.arrows.iter().enumerate() {
        let (sp, tp) = if ar.first_is_source { (j, (j + 1) % l) } else { ((j + 1) % l, j) };
        let (u, v) = if ar.horizontal { (ar.length, 0) } else { (0, ar.length) };
        for a in 0..w {
            for c in 0..w {
                let x = ar.matrix.get(a, c);
                if x != 0 {
                    terms.push((sp * w + a, tp * w + c, x, u, v));
                }
            }
        }
    }
    Complex::new(Ring::R1, p, gens, &terms).expect("local system complex")
}

fn check_sequence(seq: &[i64], parity_even: bool, what: &str) -> Result<()> {
    if seq.contains(&0) {
        return Err(ClassifyError::InvalidDescriptor(format!("{what} with a zero term")));
    }
    if (seq.len() % 2 == 0) != parity_even {
        return Err(ClassifyError::InvalidDescriptor(format!("{what} of length {}", seq.len())));
    }
    Ok(())
}

/// The complex described by a descriptor.
pub fn realize(d: &Descriptor, p: u32) -> Result<Complex> {
    gf::check_prime(p).map_err(|e| ClassifyError::InvalidDescriptor(e.to_string()))?;
    match d {
        Descriptor::Zero(g) => Ok(Complex::zero_complex(Ring::R1, p, *g, ("x", "y"))),
        Descriptor::Snake(s) => {
            let arrows: Vec<(bool, i64)>;
            let at;
            match s.kind {
                SnakeKind::Standard | SnakeKind::Horizontal => {
                    let even = s.kind == SnakeKind::Standard;
                    check_sequence(&s.sequence, even, "snake sequence")?;
                    arrows = s.sequence.iter().enumerate().map(|(i, &b)| (i % 2 == 0, b)).collect();
                    at = 0;
                }
                SnakeKind::Vertical => {
                    check_sequence(&s.sequence, false, "vertical snake sequence")?;
                    arrows = s.sequence.iter().enumerate().map(|(i, &b)| (i % 2 == 1, b)).collect();
                    at = 1;
                }
            }
            Ok(path_complex(p, &arrows, at, s.anchor))
        }
        Descriptor::LocalSystem(ls) => {
            let canon = canonical_shape(&ls.shape).map_err(|e| ClassifyError::InvalidDescriptor(e.to_string()))?;
            if canon != ls.shape {
                return Err(ClassifyError::InvalidDescriptor("shape is not canonical".into()));
            }
            if ls.width == 0 || ls.holonomy.len() != ls.width || ls.holonomy.iter().any(|r| r.len() != ls.width) {
                return Err(ClassifyError::InvalidDescriptor("holonomy is not w×w".into()));
            }
            if ls.holonomy.iter().flatten().any(|&x| x >= p) {
                return Err(ClassifyError::InvalidDescriptor(format!("holonomy entry outside F_{p}")));
            }
            let a = holonomy_matrix(ls, p);
            if !a.is_invertible() {
                return Err(ClassifyError::InvalidDescriptor("holonomy is singular".into()));
            }
            Ok(bundle_complex(&standard_bundle(&ls.shape, ls.anchor, &a)))
        }
    }
}

impl Decomposition {
    pub fn descriptors(&self) -> Vec<Descriptor> {
        let mut out: Vec<Descriptor> = self.snakes.iter().cloned().map(Descriptor::Snake).collect();
        out.extend(self.local_systems.iter().cloned().map(Descriptor::LocalSystem));
        out.extend(self.zero_anchors.iter().map(|&g| Descriptor::Zero(g)));
        out
    }

    /// Collects descriptors into canonical form (local systems refined).
    pub fn from_descriptors(p: u32, ds: &[Descriptor]) -> Decomposition {
        let mut d = Decomposition {
            characteristic: p,
            snakes: Vec::new(),
            local_systems: Vec::new(),
            zeros: 0,
            zero_anchors: Vec::new(),
            basis_change: None,
        };
        for x in ds {
            match x {
                Descriptor::Snake(s) => d.snakes.push(s.clone()),
                Descriptor::LocalSystem(l) => d.local_systems.extend(refine(l, p)),
                Descriptor::Zero(g) => d.zero_anchors.push(*g),
            }
        }
        d.zeros = d.zero_anchors.len();
        d.snakes.sort();
        d.local_systems.sort();
        d.zero_anchors.sort();
        d
    }

    pub fn rank(&self) -> usize {
        let s: usize = self
            .snakes
            .iter()
            .map(|s| s.sequence.len() + 1)
            .sum();
        let l: usize = self.local_systems.iter().map(|l| l.shape.len() * l.width).sum();
        s + l + 2 * self.zeros
    }
}

/// The direct sum of the realized summands, in descriptor order.
pub fn realize_decomposition(d: &Decomposition) -> Result<Complex> {
    let parts = d
        .descriptors()
        .iter()
        .map(|x| realize(x, d.characteristic))
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Ok(Complex::empty(Ring::R1, d.characteristic));
    }
    Ok(Complex::direct_sum(&parts).expect("summands share a field"))
}

/// Multiset equality of summands; zero complexes are compared by count.
pub fn decomposition_equal(a: &Decomposition, b: &Decomposition) -> bool {
    a.characteristic == b.characteristic
        && a.snakes == b.snakes
        && a.local_systems == b.local_systems
        && a.zeros == b.zeros
}

fn join(v: &[i64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn matrix_text(rows: &[Vec<u32>]) -> String {
    let inner: Vec<String> = rows
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")))
        .collect();
    format!("[{}]", inner.join(","))
}

impl fmt::Display for SnakeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            SnakeKind::Standard => "C",
            SnakeKind::Horizontal => "S_h",
            SnakeKind::Vertical => "S_v",
        };
        write!(f, "{name}({})", join(&self.sequence))
    }
}

impl fmt::Display for LocalSystemDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LS(shape=[{}]; w={}; A=rcf{}; anchor=({},{}))",
            join(&self.shape),
            self.width,
            matrix_text(&self.holonomy),
            self.anchor.0,
            self.anchor.1
        )
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Descriptor::Snake(s) => write!(f, "{s} @ ({},{})", s.anchor.0, s.anchor.1),
            Descriptor::LocalSystem(l) => write!(f, "{l}"),
            Descriptor::Zero(g) => write!(f, "Z @ ({},{})", g.0, g.1),
        }
    }
}

impl fmt::Display for Decomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.descriptors() {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

fn parse_ints(s: &str) -> Option<Vec<i64>> {
    let s = s.trim();
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|x| x.trim().parse().ok()).collect()
}

fn parse_grade(s: &str) -> Option<Grade> {
    let v = parse_ints(s.trim().strip_prefix('(')?.strip_suffix(')')?)?;
    (v.len() == 2).then(|| (v[0], v[1]))
}

fn parse_matrix(s: &str) -> Option<Vec<Vec<u32>>> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?.trim();
    if inner.is_empty() {
        return Some(Vec::new());
    }
    let mut rows = Vec::new();
    for part in inner.split(']') {
        let part = part.trim().trim_start_matches(',').trim();
        if part.is_empty() {
            continue;
        }
        let nums = parse_ints(part.strip_prefix('[')?)?;
        rows.push(nums.into_iter().map(|x| u32::try_from(x).ok()).collect::<Option<Vec<_>>>()?);
    }
    Some(rows)
}

/// Parses the text form of a descriptor. Snakes and zero complexes take
/// an optional `@ (u,v)` anchor, defaulting to (0,0).
pub fn parse_descriptor(text: &str) -> Result<Descriptor> {
    let err = || ClassifyError::Parse(text.to_string());
    let t = text.trim();
    if let Some(body) = t.strip_prefix("LS(") {
        let body = body.strip_suffix(')').ok_or_else(err)?;
        let (mut shape, mut w, mut a, mut anchor) = (None, None, None, None);
        for field in body.split(';') {
            let (k, v) = field.split_once('=').ok_or_else(err)?;
            let v = v.trim();
            match k.trim() {
                "shape" => shape = parse_ints(v.strip_prefix('[').and_then(|x| x.strip_suffix(']')).ok_or_else(err)?),
                "w" => w = v.parse::<usize>().ok(),
                "A" => a = parse_matrix(v.strip_prefix("rcf").unwrap_or(v)),
                "anchor" => anchor = parse_grade(v),
                _ => return Err(err()),
            }
        }
        return Ok(Descriptor::LocalSystem(LocalSystemDescriptor {
            shape: shape.ok_or_else(err)?,
            width: w.ok_or_else(err)?,
            holonomy: a.ok_or_else(err)?,
            anchor: anchor.ok_or_else(err)?,
        }));
    }
    let (head, anchor) = match t.split_once('@') {
        Some((h, a)) => (h.trim(), parse_grade(a).ok_or_else(err)?),
        None => (t, (0, 0)),
    };
    if head == "Z" {
        return Ok(Descriptor::Zero(anchor));
    }
    let (name, rest) = head.split_once('(').ok_or_else(err)?;
    let kind = match name.trim() {
        "C" => SnakeKind::Standard,
        "S_h" => SnakeKind::Horizontal,
        "S_v" => SnakeKind::Vertical,
        _ => return Err(err()),
    };
    let sequence = parse_ints(rest.strip_suffix(')').ok_or_else(err)?).ok_or_else(err)?;
    Ok(Descriptor::Snake(SnakeDescriptor { kind, sequence, anchor }))
}
