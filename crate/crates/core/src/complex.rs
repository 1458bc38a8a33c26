//! Free bigraded chain complexes over F[U,V] and R1 = F[U,V]/(UV).
//!
//! A differential term `x -> λ U^a V^b y` is stored on the source `x`; its
//! bidegree rule is gr(y) - (2a, 2b) = gr(x) - (1, 1).

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf::{self, FieldElem, GfError, Matrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComplexError {
    #[error(transparent)]
    Field(#[from] GfError),
    #[error("duplicate generator id `{0}`")]
    DuplicateGenerator(String),
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("duplicate differential term {0}")]
    DuplicateTerm(String),
    #[error("illegal term {0}: {1}")]
    IllegalTerm(String, String),
    #[error("basis change is not invertible")]
    NotInvertible,
    #[error("basis change breaks the bigrading: {0}")]
    GradingViolation(String),
    #[error("characteristic or ring mismatch: {0}")]
    FieldMismatch(String),
    #[error("cannot infer gradings: {0}")]
    GradingInference(String),
    #[error("invalid complex: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

pub type Result<T> = std::result::Result<T, ComplexError>;

/// Coefficient ring of a complex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ring {
    /// F[U,V]/(UV)
    R1,
    /// F[U,V]
    FUV,
    /// F[V] = F[U,V]/(U), the ring of C/U
    FV,
    /// F[U] = F[U,V]/(V), the ring of C/V
    FU,
}

impl Ring {
    /// Whether a monomial U^a V^b survives in this ring.
    pub fn admits(self, u: u32, v: u32) -> bool {
        match self {
            Ring::R1 => u == 0 || v == 0,
            Ring::FUV => true,
            Ring::FV => u == 0,
            Ring::FU => v == 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ring::R1 => "r1",
            Ring::FUV => "fuv",
            Ring::FV => "fv",
            Ring::FU => "fu",
        }
    }
}

/// A term λ U^u_exp V^v_exp with λ nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    pub coeff: FieldElem,
    pub u_exp: u32,
    pub v_exp: u32,
}

impl Monomial {
    pub fn new(coeff: FieldElem, u_exp: u32, v_exp: u32) -> Self {
        assert!(!coeff.is_zero(), "monomials carry nonzero coefficients");
        Monomial { coeff, u_exp, v_exp }
    }

    /// Bigrading of the monomial, (-2u, -2v).
    pub fn grading(&self) -> (i64, i64) {
        (-2 * self.u_exp as i64, -2 * self.v_exp as i64)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        if self.coeff.value() != 1 || (self.u_exp == 0 && self.v_exp == 0) {
            s.push_str(&self.coeff.value().to_string());
        }
        for (name, e) in [("U", self.u_exp), ("V", self.v_exp)] {
            match e {
                0 => {}
                1 => s.push_str(name),
                e => s.push_str(&format!("{name}^{e}")),
            }
        }
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub gr_u: i64,
    pub gr_v: i64,
}

impl Generator {
    pub fn new(id: impl Into<String>, gr_u: i64, gr_v: i64) -> Self {
        Generator {
            id: id.into(),
            gr_u,
            gr_v,
        }
    }

    pub fn gr(&self) -> (i64, i64) {
        (self.gr_u, self.gr_v)
    }
}

/// One differential term on a source generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    pub target: usize,
    pub mono: Monomial,
}

/// A sparse polynomial in U and V over F_p, keyed by (u, v) exponents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct RPoly(BTreeMap<(u32, u32), u32>);

impl RPoly {
    pub fn zero() -> Self {
        RPoly(BTreeMap::new())
    }

    pub fn monomial(c: u32, u: u32, v: u32, p: u32) -> Self {
        let mut m = BTreeMap::new();
        if c % p != 0 {
            m.insert((u, v), c % p);
        }
        RPoly(m)
    }

    pub fn one() -> Self {
        let mut m = BTreeMap::new();
        m.insert((0, 0), 1);
        RPoly(m)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        self.0.iter().map(|(&(u, v), &c)| (u, v, c))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The single term of a monomial entry.
    pub fn as_monomial(&self) -> Option<(u32, u32, u32)> {
        if self.0.len() == 1 {
            self.terms().next()
        } else {
            None
        }
    }

    pub fn constant_term(&self) -> u32 {
        self.0.get(&(0, 0)).copied().unwrap_or(0)
    }

    pub fn add_term(&mut self, u: u32, v: u32, c: u32, p: u32) {
        if c % p == 0 {
            return;
        }
        let e = self.0.entry((u, v)).or_insert(0);
        *e = gf::add(*e, c % p, p);
        if *e == 0 {
            self.0.remove(&(u, v));
        }
    }

    pub fn add_assign(&mut self, o: &RPoly, p: u32) {
        for (u, v, c) in o.terms() {
            self.add_term(u, v, c, p);
        }
    }

    pub fn scaled(&self, c: u32, p: u32) -> RPoly {
        let mut out = RPoly::zero();
        for (u, v, a) in self.terms() {
            out.add_term(u, v, gf::mul(a, c, p), p);
        }
        out
    }

    pub fn mul(&self, o: &RPoly, ring: Ring, p: u32) -> RPoly {
        let mut out = RPoly::zero();
        for (u1, v1, a) in self.terms() {
            for (u2, v2, b) in o.terms() {
                let (u, v) = (u1 + u2, v1 + v2);
                if ring.admits(u, v) {
                    out.add_term(u, v, gf::mul(a, b, p), p);
                }
            }
        }
        out
    }

    pub fn reduce(&self, ring: Ring) -> RPoly {
        RPoly(
            self.0
                .iter()
                .filter(|(&(u, v), _)| ring.admits(u, v))
                .map(|(&k, &c)| (k, c))
                .collect(),
        )
    }
}

/// Matrix over F[U,V] or one of its quotients, row convention: row i lists
/// the coefficients of the i-th vector in the basis indexed by columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingMatrix {
    pub p: u32,
    pub ring: Ring,
    pub rows: usize,
    pub cols: usize,
    entries: Vec<RPoly>,
}

impl RingMatrix {
    pub fn zeros(p: u32, ring: Ring, rows: usize, cols: usize) -> Self {
        RingMatrix {
            p,
            ring,
            rows,
            cols,
            entries: vec![RPoly::zero(); rows * cols],
        }
    }

    pub fn identity(p: u32, ring: Ring, n: usize) -> Self {
        let mut m = RingMatrix::zeros(p, ring, n, n);
        for i in 0..n {
            m.set(i, i, RPoly::one());
        }
        m
    }

    /// Embeds a field matrix as constant entries.
    pub fn from_field(ring: Ring, a: &Matrix) -> Self {
        let mut m = RingMatrix::zeros(a.characteristic(), ring, a.rows(), a.cols());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                m.set(i, j, RPoly::monomial(a.get(i, j), 0, 0, a.characteristic()));
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> &RPoly {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: RPoly) {
        self.entries[i * self.cols + j] = v.reduce(self.ring);
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut RPoly {
        &mut self.entries[i * self.cols + j]
    }

    pub fn mul(&self, o: &RingMatrix) -> RingMatrix {
        assert_eq!(self.cols, o.rows, "dimension mismatch");
        assert_eq!(self.p, o.p, "characteristic mismatch");
        let mut out = RingMatrix::zeros(self.p, self.ring, self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..o.cols {
                    let b = o.get(k, j);
                    if b.is_zero() {
                        continue;
                    }
                    let prod = a.mul(b, self.ring, self.p);
                    let p = self.p;
                    out.entry_mut(i, j).add_assign(&prod, p);
                }
            }
        }
        out
    }

    pub fn add(&self, o: &RingMatrix) -> RingMatrix {
        let mut out = self.clone();
        for (a, b) in out.entries.iter_mut().zip(&o.entries) {
            a.add_assign(b, self.p);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(RPoly::is_zero)
    }

    pub fn is_identity(&self) -> bool {
        *self == RingMatrix::identity(self.p, self.ring, self.rows)
    }

    /// The constant parts of the entries, as a field matrix.
    pub fn constant_part(&self) -> Matrix {
        let mut m = Matrix::zeros(self.p, self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.set(i, j, self.get(i, j).constant_term());
            }
        }
        m
    }

    pub fn with_ring(&self, ring: Ring) -> RingMatrix {
        RingMatrix {
            p: self.p,
            ring,
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.reduce(ring)).collect(),
        }
    }

    /// Inverse of a grading-homogeneous matrix: the constant part is
    /// inverted over F and the remaining nilpotent part by a finite
    /// geometric series.
    pub fn graded_inverse(&self) -> Result<RingMatrix> {
        if self.rows != self.cols {
            return Err(ComplexError::NotInvertible);
        }
        let n = self.rows;
        let b0 = self.constant_part();
        let b0_inv = gf::invert(&b0).map_err(|_| ComplexError::NotInvertible)?;
        let b0_inv_r = RingMatrix::from_field(self.ring, &b0_inv);
        // B = B0 (I + N) with N = B0^{-1} (B - B0) nilpotent.
        let mut rest = self.clone();
        for i in 0..n {
            for j in 0..n {
                let c = rest.get(i, j).constant_term();
                if c != 0 {
                    let p = self.p;
                    rest.entry_mut(i, j).add_term(0, 0, gf::neg(c, p), p);
                }
            }
        }
        let nmat = b0_inv_r.mul(&rest);
        let mut acc = RingMatrix::identity(self.p, self.ring, n);
        let mut power = RingMatrix::identity(self.p, self.ring, n);
        let neg_n = nmat.scaled(gf::neg(1, self.p));
        for _ in 0..=4 * n * n + 64 {
            power = power.mul(&neg_n);
            if power.is_zero() {
                let inv = acc.mul(&b0_inv_r);
                debug_assert!(self.mul(&inv).is_identity());
                return Ok(inv);
            }
            acc = acc.add(&power);
        }
        Err(ComplexError::NotInvertible)
    }

    pub fn scaled(&self, c: u32) -> RingMatrix {
        let mut out = self.clone();
        for e in out.entries.iter_mut() {
            *e = e.scaled(c, self.p);
        }
        out
    }

    pub fn transpose(&self) -> RingMatrix {
        let mut out = RingMatrix::zeros(self.p, self.ring, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.entries[j * self.rows + i] = self.get(i, j).clone();
            }
        }
        out
    }

    /// Submatrix on the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> RingMatrix {
        let mut out = RingMatrix::zeros(self.p, self.ring, rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out.entries[a * cols.len() + b] = self.get(i, j).clone();
            }
        }
        out
    }
}

/// A change of basis: row i writes the i-th new generator in the old basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisChange {
    pub matrix: RingMatrix,
    /// Ids of the new generators, in row order.
    pub ids: Vec<String>,
}

impl BasisChange {
    pub fn identity(c: &Complex) -> Self {
        BasisChange {
            matrix: RingMatrix::identity(c.p, c.ring, c.rank()),
            ids: c.gens.iter().map(|g| g.id.clone()).collect(),
        }
    }

    /// A basis change with constant entries that keeps the generator ids.
    pub fn from_field(c: &Complex, m: &Matrix) -> Self {
        BasisChange {
            matrix: RingMatrix::from_field(c.ring, m),
            ids: c.gens.iter().map(|g| g.id.clone()).collect(),
        }
    }

    /// Composition: first `self`, then `next` (expressed in self's new basis).
    pub fn then(&self, next: &BasisChange) -> BasisChange {
        BasisChange {
            matrix: next.matrix.mul(&self.matrix),
            ids: next.ids.clone(),
        }
    }
}

/// A violation of the chain complex axioms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    Grading { source: String, target: String },
    DSquared { at: String },
    RingTerm { source: String, target: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Grading { source, target } => {
                write!(f, "bidegree of the term {source} -> {target} is not (-1,-1)")
            }
            Violation::DSquared { at } => write!(f, "∂² ≠ 0 at {at}"),
            Violation::RingTerm { source, target } => {
                write!(f, "term {source} -> {target} has both U and V powers over R1")
            }
        }
    }
}

/// A finitely generated free bigraded complex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Complex {
    pub ring: Ring,
    pub p: u32,
    gens: Vec<Generator>,
    diff: Vec<Vec<Term>>,
}

impl Complex {
    pub fn empty(ring: Ring, p: u32) -> Self {
        Complex {
            ring,
            p,
            gens: Vec::new(),
            diff: Vec::new(),
        }
    }

    /// Builds a complex from generators and (source, target, λ, u, v) terms.
    /// Structural problems are errors; grading and ∂² are checked by
    /// [`Complex::validate`].
    pub fn new(
        ring: Ring,
        p: u32,
        gens: Vec<Generator>,
        terms: &[(usize, usize, u32, u32, u32)],
    ) -> Result<Self> {
        gf::check_prime(p)?;
        let mut seen = HashSet::new();
        for g in &gens {
            if !seen.insert(g.id.clone()) {
                return Err(ComplexError::DuplicateGenerator(g.id.clone()));
            }
        }
        let mut c = Complex {
            ring,
            p,
            diff: vec![Vec::new(); gens.len()],
            gens,
        };
        let mut keys = HashSet::new();
        for &(s, t, lambda, u, v) in terms {
            let n = c.gens.len();
            if s >= n || t >= n {
                return Err(ComplexError::UnknownGenerator(format!("index {}", s.max(t))));
            }
            let label = format!("{} -> {}", c.gens[s].id, c.gens[t].id);
            if lambda % p == 0 {
                return Err(ComplexError::IllegalTerm(label, "zero coefficient".into()));
            }
            if !ring.admits(u, v) {
                return Err(ComplexError::IllegalTerm(
                    label,
                    format!("U^{u}V^{v} is zero in {}", ring.name()),
                ));
            }
            if !keys.insert((s, t, u, v)) {
                return Err(ComplexError::DuplicateTerm(format!("{label} U^{u}V^{v}")));
            }
            if ring == Ring::R1 && c.diff[s].iter().any(|term| term.target == t) {
                return Err(ComplexError::DuplicateTerm(label));
            }
            c.diff[s].push(Term {
                target: t,
                mono: Monomial::new(FieldElem::raw(lambda, p), u, v),
            });
        }
        for terms in c.diff.iter_mut() {
            terms.sort();
        }
        Ok(c)
    }

    /// Builds a complex from a differential matrix in row convention.
    pub fn from_matrix(ring: Ring, gens: Vec<Generator>, d: &RingMatrix) -> Result<Self> {
        let mut terms = Vec::new();
        for i in 0..d.rows {
            for j in 0..d.cols {
                for (u, v, c) in d.get(i, j).terms() {
                    terms.push((i, j, c, u, v));
                }
            }
        }
        Complex::new(ring, d.p, gens, &terms)
    }

    pub fn rank(&self) -> usize {
        self.gens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gens.is_empty()
    }

    pub fn generators(&self) -> &[Generator] {
        &self.gens
    }

    pub fn generator(&self, i: usize) -> &Generator {
        &self.gens[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.gens.iter().position(|g| g.id == id)
    }

    pub fn terms_from(&self, i: usize) -> &[Term] {
        &self.diff[i]
    }

    /// All terms as (source, target, monomial).
    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, Monomial)> + '_ {
        self.diff
            .iter()
            .enumerate()
            .flat_map(|(s, ts)| ts.iter().map(move |t| (s, t.target, t.mono)))
    }

    pub fn term_count(&self) -> usize {
        self.diff.iter().map(Vec::len).sum()
    }

    /// Differential as a matrix: row i is ∂ of generator i.
    pub fn differential_matrix(&self) -> RingMatrix {
        let n = self.rank();
        let mut d = RingMatrix::zeros(self.p, self.ring, n, n);
        for (s, t, m) in self.terms() {
            let p = self.p;
            d.entry_mut(s, t).add_term(m.u_exp, m.v_exp, m.coeff.value(), p);
        }
        d
    }

    /// Checks the bidegree rule, the ring constraint and ∂² = 0.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        for (s, t, m) in self.terms() {
            let (gs, gt) = (self.gens[s].gr(), self.gens[t].gr());
            let (mu, mv) = m.grading();
            if (gt.0 + mu, gt.1 + mv) != (gs.0 - 1, gs.1 - 1) {
                out.push(Violation::Grading {
                    source: self.gens[s].id.clone(),
                    target: self.gens[t].id.clone(),
                });
            }
            if !self.ring.admits(m.u_exp, m.v_exp) {
                out.push(Violation::RingTerm {
                    source: self.gens[s].id.clone(),
                    target: self.gens[t].id.clone(),
                });
            }
        }
        let d = self.differential_matrix();
        let d2 = d.mul(&d);
        for i in 0..self.rank() {
            if (0..self.rank()).any(|j| !d2.get(i, j).is_zero()) {
                out.push(Violation::DSquared {
                    at: self.gens[i].id.clone(),
                });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Reduces coefficients into another ring by dropping terms that vanish.
    pub fn with_ring(&self, ring: Ring) -> Complex {
        let mut c = self.clone();
        c.ring = ring;
        for ts in c.diff.iter_mut() {
            ts.retain(|t| ring.admits(t.mono.u_exp, t.mono.v_exp));
        }
        c
    }

    /// Deletes all diagonal arrows.
    pub fn reduce_mod_uv(&self) -> Complex {
        let out = self.with_ring(Ring::R1);
        assert!(
            !self.is_valid() || out.is_valid(),
            "reduction mod UV of a complex must be a complex"
        );
        out
    }

    /// C/U, a complex over F[V].
    pub fn quotient_u(&self) -> Complex {
        self.with_ring(Ring::FV)
    }

    /// C/V, a complex over F[U].
    pub fn quotient_v(&self) -> Complex {
        self.with_ring(Ring::FU)
    }

    /// Exchanges the roles of U and V.
    pub fn bar(&self) -> Complex {
        let ring = match self.ring {
            Ring::FV => Ring::FU,
            Ring::FU => Ring::FV,
            r => r,
        };
        Complex {
            ring,
            p: self.p,
            gens: self
                .gens
                .iter()
                .map(|g| Generator::new(g.id.clone(), g.gr_v, g.gr_u))
                .collect(),
            diff: self
                .diff
                .iter()
                .map(|ts| {
                    let mut ts: Vec<Term> = ts
                        .iter()
                        .map(|t| Term {
                            target: t.target,
                            mono: Monomial::new(t.mono.coeff, t.mono.v_exp, t.mono.u_exp),
                        })
                        .collect();
                    ts.sort();
                    ts
                })
                .collect(),
        }
    }

    /// Block sum; ids that collide are made unique with a `'` suffix.
    pub fn direct_sum(parts: &[Complex]) -> Result<Complex> {
        let Some(first) = parts.first() else {
            return Err(ComplexError::FieldMismatch(
                "direct sum of no complexes has no ring".into(),
            ));
        };
        let (ring, p) = (first.ring, first.p);
        let mut gens = Vec::new();
        let mut terms = Vec::new();
        let mut used = HashSet::new();
        for c in parts {
            if c.ring != ring || c.p != p {
                return Err(ComplexError::FieldMismatch(format!(
                    "{}/F_{} vs {}/F_{}",
                    ring.name(),
                    p,
                    c.ring.name(),
                    c.p
                )));
            }
            let off = gens.len();
            for g in &c.gens {
                let mut id = g.id.clone();
                while used.contains(&id) {
                    id.push('\'');
                }
                used.insert(id.clone());
                gens.push(Generator::new(id, g.gr_u, g.gr_v));
            }
            for (s, t, m) in c.terms() {
                terms.push((s + off, t + off, m.coeff.value(), m.u_exp, m.v_exp));
            }
        }
        Complex::new(ring, p, gens, &terms)
    }

    /// Generator gradings implied by a basis change, or a violation.
    fn changed_gradings(&self, b: &BasisChange) -> Result<Vec<(i64, i64)>> {
        let n = self.rank();
        if b.matrix.rows != n || b.matrix.cols != n || b.ids.len() != n {
            return Err(ComplexError::NotInvertible);
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut gr: Option<(i64, i64)> = None;
            for j in 0..n {
                for (u, v, _) in b.matrix.get(i, j).terms() {
                    let g = self.gens[j].gr();
                    let cand = (g.0 - 2 * u as i64, g.1 - 2 * v as i64);
                    match gr {
                        None => gr = Some(cand),
                        Some(x) if x != cand => {
                            return Err(ComplexError::GradingViolation(format!(
                                "row {} mixes bigradings {:?} and {:?}",
                                b.ids[i], x, cand
                            )))
                        }
                        _ => {}
                    }
                }
            }
            out.push(gr.ok_or(ComplexError::NotInvertible)?);
        }
        Ok(out)
    }

    /// The same complex written in a new basis.
    pub fn apply_basis_change(&self, b: &BasisChange) -> Result<Complex> {
        let grs = self.changed_gradings(b)?;
        let m = b.matrix.with_ring(self.ring);
        let m_inv = m.graded_inverse()?;
        let d = m.mul(&self.differential_matrix()).mul(&m_inv);
        let gens = b
            .ids
            .iter()
            .zip(grs)
            .map(|(id, (gu, gv))| Generator::new(id.clone(), gu, gv))
            .collect();
        Complex::from_matrix(self.ring, gens, &d)
    }

    /// Reorders generators: the k-th new generator is old generator `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Complex {
        let mut pos = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        let gens = order.iter().map(|&i| self.gens[i].clone()).collect();
        let mut diff = vec![Vec::new(); order.len()];
        for (k, &i) in order.iter().enumerate() {
            let mut ts: Vec<Term> = self.diff[i]
                .iter()
                .map(|t| Term {
                    target: pos[t.target],
                    mono: t.mono,
                })
                .collect();
            ts.sort();
            diff[k] = ts;
        }
        Complex {
            ring: self.ring,
            p: self.p,
            gens,
            diff,
        }
    }

    /// Renames generators in order.
    pub fn renamed(&self, ids: Vec<String>) -> Result<Complex> {
        assert_eq!(ids.len(), self.rank());
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.clone()) {
                return Err(ComplexError::DuplicateGenerator(id.clone()));
            }
        }
        let mut c = self.clone();
        for (g, id) in c.gens.iter_mut().zip(ids) {
            g.id = id;
        }
        Ok(c)
    }

    /// The subcomplex spanned by the listed generators, assumed closed
    /// under the differential and split off as a summand.
    pub fn restrict(&self, keep: &[usize]) -> Complex {
        let mut pos = HashMap::new();
        for (k, &i) in keep.iter().enumerate() {
            pos.insert(i, k);
        }
        let gens = keep.iter().map(|&i| self.gens[i].clone()).collect();
        let diff = keep
            .iter()
            .map(|&i| {
                self.diff[i]
                    .iter()
                    .filter_map(|t| {
                        pos.get(&t.target).map(|&k| Term {
                            target: k,
                            mono: t.mono,
                        })
                    })
                    .collect()
            })
            .collect();
        Complex {
            ring: self.ring,
            p: self.p,
            gens,
            diff,
        }
    }

    pub fn has_length_zero_arrow(&self) -> bool {
        self.terms().any(|(_, _, m)| m.u_exp == 0 && m.v_exp == 0)
    }

    /// Splits off all zero complexes x -> y. Returns the remaining complex,
    /// the number of zero complexes, and the basis change from `self` to
    /// the remaining generators followed by the stripped pairs (source,
    /// target).
    pub fn strip_zero_complexes(&self) -> (Complex, usize, BasisChange) {
        let p = self.p;
        let ring = self.ring;
        let n = self.rank();
        let mut cur = self.clone();
        // Current generators written in the original basis.
        let mut rows = RingMatrix::identity(p, ring, n);
        let mut stripped_rows: Vec<(Vec<RPoly>, String)> = Vec::new();
        loop {
            let Some((x1, x2, lambda)) = cur
                .terms()
                .find(|(_, _, m)| m.u_exp == 0 && m.v_exp == 0)
                .map(|(s, t, m)| (s, t, m.coeff.value()))
            else {
                break;
            };
            let m = cur.rank();
            let d = cur.differential_matrix();
            let lambda_inv = gf::inv(lambda, p);
            let mut b = RingMatrix::identity(p, ring, m);
            for j in 0..m {
                b.set(x2, j, d.get(x1, j).clone());
            }
            for z in 0..m {
                if z == x1 || z == x2 {
                    continue;
                }
                let mu = d.get(z, x2);
                if !mu.is_zero() {
                    b.set(z, x1, mu.scaled(gf::neg(lambda_inv, p), p));
                }
            }
            let ids = cur.gens.iter().map(|g| g.id.clone()).collect();
            let change = BasisChange { matrix: b, ids };
            let next = cur
                .apply_basis_change(&change)
                .expect("zero-complex splitting basis is invertible");
            let new_rows = change.matrix.mul(&rows);
            let keep: Vec<usize> = (0..m).filter(|&i| i != x1 && i != x2).collect();
            debug_assert!(keep.iter().all(|&i| next.diff[i]
                .iter()
                .all(|t| t.target != x1 && t.target != x2)));
            for &i in &[x1, x2] {
                let row = (0..n).map(|j| new_rows.get(i, j).clone()).collect();
                stripped_rows.push((row, next.gens[i].id.clone()));
            }
            rows = new_rows.select(&keep, &(0..n).collect::<Vec<_>>());
            cur = next.restrict(&keep);
        }
        let k = stripped_rows.len() / 2;
        let mut full = RingMatrix::zeros(p, ring, n, n);
        let mut ids = Vec::with_capacity(n);
        for i in 0..cur.rank() {
            for j in 0..n {
                full.set(i, j, rows.get(i, j).clone());
            }
            ids.push(cur.gens[i].id.clone());
        }
        for (r, (row, id)) in stripped_rows.into_iter().enumerate() {
            for (j, e) in row.into_iter().enumerate() {
                full.set(cur.rank() + r, j, e);
            }
            ids.push(id);
        }
        (cur, k, BasisChange { matrix: full, ids })
    }

    /// A rank-2 zero complex ∂x = y with gr(x) = gr.
    pub fn zero_complex(ring: Ring, p: u32, gr: (i64, i64), names: (&str, &str)) -> Complex {
        Complex::new(
            ring,
            p,
            vec![
                Generator::new(names.0, gr.0, gr.1),
                Generator::new(names.1, gr.0 - 1, gr.1 - 1),
            ],
            &[(0, 1, 1, 0, 0)],
        )
        .expect("zero complex")
    }

    /// Replaces the generator gradings.
    pub fn with_gradings(&self, grs: &[(i64, i64)]) -> Complex {
        let mut c = self.clone();
        for (g, &(u, v)) in c.gens.iter_mut().zip(grs) {
            g.gr_u = u;
            g.gr_v = v;
        }
        c
    }

    /// Recomputes all gradings from the differential, anchoring every
    /// connected component. `anchors` lists (generator index, gr); a
    /// component without an anchor is an error.
    pub fn infer_gradings(&self, anchors: &[(usize, (i64, i64))]) -> Result<Complex> {
        let n = self.rank();
        let mut adj: Vec<Vec<(usize, (i64, i64))>> = vec![Vec::new(); n];
        for (s, t, m) in self.terms() {
            // gr(t) = gr(s) - (1,1) + (2u, 2v)
            let delta = (-1 + 2 * m.u_exp as i64, -1 + 2 * m.v_exp as i64);
            adj[s].push((t, delta));
            adj[t].push((s, (-delta.0, -delta.1)));
        }
        let mut gr: Vec<Option<(i64, i64)>> = vec![None; n];
        let mut queue = VecDeque::new();
        for &(i, g) in anchors {
            if let Some(old) = gr[i] {
                if old != g {
                    return Err(ComplexError::GradingInference(format!(
                        "conflicting anchors on {}",
                        self.gens[i].id
                    )));
                }
            }
            gr[i] = Some(g);
            queue.push_back(i);
        }
        while let Some(i) = queue.pop_front() {
            let gi = gr[i].unwrap();
            for &(j, d) in &adj[i] {
                let want = (gi.0 + d.0, gi.1 + d.1);
                match gr[j] {
                    None => {
                        gr[j] = Some(want);
                        queue.push_back(j);
                    }
                    Some(g) if g != want => {
                        return Err(ComplexError::GradingInference(format!(
                            "inconsistent bigrading at {}",
                            self.gens[j].id
                        )))
                    }
                    _ => {}
                }
            }
        }
        if let Some(i) = gr.iter().position(Option::is_none) {
            return Err(ComplexError::GradingInference(format!(
                "no anchor reaches {}",
                self.gens[i].id
            )));
        }
        Ok(self.with_gradings(&gr.into_iter().map(Option::unwrap).collect::<Vec<_>>()))
    }

    /// Generator indices grouped by bigrading, in sorted bigrading order.
    pub fn grading_blocks(&self) -> BTreeMap<(i64, i64), Vec<usize>> {
        let mut out: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, g) in self.gens.iter().enumerate() {
            out.entry(g.gr()).or_default().push(i);
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn trefoil() -> Complex {
        Complex::new(
            Ring::R1,
            2,
            vec![
                Generator::new("a", 0, 2),
                Generator::new("b", 1, 1),
                Generator::new("c", 2, 0),
            ],
            &[(0, 1, 1, 1, 0), (2, 1, 1, 0, 1)],
        )
        .unwrap()
    }

    pub fn figure_eight() -> Complex {
        Complex::new(
            Ring::FUV,
            3,
            vec![
                Generator::new("x", 0, 0),
                Generator::new("e", 0, 0),
                Generator::new("d", -1, 1),
                Generator::new("f", 1, -1),
                Generator::new("g", 0, 0),
            ],
            &[(2, 1, 2, 1, 0), (3, 1, 1, 0, 1), (4, 3, 1, 1, 0), (4, 2, 1, 0, 1)],
        )
        .unwrap()
    }

    /// The fig9 corpus complex: two squares glued by f -> U^2 a with the extra generator i.
    pub fn hom_example() -> Complex {
        let names = ["a", "b", "c", "d", "e", "f", "g", "h", "i"];
        let grs = [
            (0, 0),
            (0, 0),
            (1, -3),
            (1, -3),
            (-3, 1),
            (-3, 1),
            (-2, -2),
            (-2, -2),
            (-1, -1),
        ];
        let gens = names
            .iter()
            .zip(grs)
            .map(|(n, (u, v))| Generator::new(*n, u, v))
            .collect();
        let idx = |s: &str| names.iter().position(|n| *n == s).unwrap();
        let t = |s: &str, t: &str, u: u32, v: u32| (idx(s), idx(t), 1u32, u, v);
        Complex::new(
            Ring::FUV,
            2,
            gens,
            &[
                t("c", "a", 0, 2),
                t("d", "b", 0, 2),
                t("e", "a", 2, 0),
                t("f", "a", 2, 0),
                t("f", "b", 2, 0),
                t("g", "c", 2, 0),
                t("g", "e", 0, 2),
                t("h", "d", 2, 0),
                t("h", "f", 0, 2),
                t("h", "i", 1, 1),
                t("i", "a", 1, 1),
            ],
        )
        .unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(trefoil().is_valid());
        assert!(figure_eight().is_valid());
        assert!(hom_example().is_valid());
        let bad = Complex::new(
            Ring::R1,
            2,
            vec![
                Generator::new("a", 0, 0),
                Generator::new("b", -1, -1),
                Generator::new("c", -2, -2),
            ],
            &[(0, 1, 1, 0, 0), (1, 2, 1, 0, 0)],
        )
        .unwrap();
        let v = bad.validate().unwrap_err();
        assert_eq!(v, vec![Violation::DSquared { at: "a".into() }]);
        assert_eq!(v[0].to_string(), "∂² ≠ 0 at a");
        let wrong_grading = trefoil().with_gradings(&[(0, 0), (1, 1), (2, 0)]);
        assert!(matches!(
            wrong_grading.validate().unwrap_err()[0],
            Violation::Grading { .. }
        ));
    }

    #[test]
    fn structural_errors() {
        let g = vec![Generator::new("a", 0, 0), Generator::new("a", 1, 1)];
        assert!(matches!(
            Complex::new(Ring::R1, 2, g, &[]),
            Err(ComplexError::DuplicateGenerator(_))
        ));
        let g = vec![Generator::new("a", 0, 0), Generator::new("b", 1, 1)];
        assert!(matches!(
            Complex::new(Ring::R1, 2, g.clone(), &[(1, 0, 1, 1, 1)]),
            Err(ComplexError::IllegalTerm(..))
        ));
        assert!(Complex::new(Ring::R1, 4, g, &[]).is_err());
    }

    #[test]
    fn quotients_and_reduction() {
        let t = trefoil();
        let qu = t.quotient_u();
        assert_eq!(qu.term_count(), 1);
        let (s, tt, m) = qu.terms().next().unwrap();
        assert_eq!((qu.generator(s).id.as_str(), qu.generator(tt).id.as_str(), m.v_exp), ("c", "b", 1));
        assert_eq!(t.quotient_v().term_count(), 1);
        let z = Complex::zero_complex(Ring::R1, 2, (0, 0), ("x", "y"));
        assert_eq!(z.quotient_u().term_count(), 1);
        assert_eq!(t.reduce_mod_uv(), t.with_ring(Ring::R1));
        let h = hom_example().reduce_mod_uv();
        assert!(h.is_valid());
        assert_eq!(h.term_count(), 9);
    }

    #[test]
    fn hom_example_basis_change() {
        let c = hom_example();
        let mut m = Matrix::identity(2, 9);
        for (i, j) in [(0, 1), (2, 3), (4, 5), (6, 7)] {
            m.set(i, j, 1);
        }
        let b = BasisChange::from_field(&c, &m);
        let d = c.apply_basis_change(&b).unwrap();
        assert!(d.is_valid());
        // After the change the outer square is a, c, g, e; f -> U^2 a+b is gone
        // and the second diagonal path through i appears.
        let id = |s: &str| d.index_of(s).unwrap();
        let targets = |s: &str| -> Vec<(String, u32, u32)> {
            d.terms_from(id(s))
                .iter()
                .map(|t| (d.generator(t.target).id.clone(), t.mono.u_exp, t.mono.v_exp))
                .collect()
        };
        assert_eq!(targets("f"), vec![("a".into(), 2, 0)]);
        assert_eq!(targets("e"), vec![("b".into(), 2, 0)]);
        assert_eq!(targets("i"), vec![("a".into(), 1, 1), ("b".into(), 1, 1)]);
        assert_eq!(
            targets("g"),
            vec![("c".into(), 2, 0), ("e".into(), 0, 2), ("i".into(), 1, 1)]
        );
    }

    #[test]
    fn bar_and_sums() {
        let t = trefoil();
        assert_eq!(t.bar().bar(), t);
        let z = Complex::zero_complex(Ring::R1, 2, (0, 0), ("x", "y"));
        let s = Complex::direct_sum(&[z.clone(), z.clone()]).unwrap();
        assert_eq!(s.rank(), 4);
        assert_eq!(s.term_count(), 2);
        assert_eq!(Complex::direct_sum(&[t.clone()]).unwrap(), t);
        assert!(Complex::direct_sum(&[t.clone(), figure_eight()]).is_err());
    }

    #[test]
    fn stripping_examples() {
        let t = trefoil();
        let (d, k, b) = t.strip_zero_complexes();
        assert_eq!((d.clone(), k), (t.clone(), 0));
        assert!(b.matrix.is_identity());
        assert!(!t.has_length_zero_arrow());
        let z = Complex::zero_complex(Ring::R1, 2, (0, 0), ("x", "y"));
        assert!(z.has_length_zero_arrow());
        let (d, k, b) = z.strip_zero_complexes();
        assert_eq!((d.rank(), k), (0, 1));
        assert!(b.matrix.is_identity());
    }

    /// Random complexes assembled from a vertically simplified and a
    /// horizontally simplified structure glued by a random transition.
    pub fn arb_complex(max_rank: usize) -> impl Strategy<Value = Complex> {
        (1usize..=max_rank, prop_oneof![Just(2u32), Just(3u32)], any::<u64>())
            .prop_map(|(n, p, seed)| crate::random::random_complex(n, p, seed, true))
    }

    proptest! {
        #[test]
        fn basis_changes_preserve_validity(c in arb_complex(6), seed in any::<u64>()) {
            prop_assert!(c.is_valid(), "{:?}", c.validate());
            let b = crate::random::random_basis_change(&c, seed);
            let d = c.apply_basis_change(&b).unwrap();
            prop_assert!(d.is_valid(), "{:?}", d.validate());
            prop_assert_eq!(c.has_length_zero_arrow(), d.has_length_zero_arrow());
            let back = b.matrix.graded_inverse().unwrap();
            let undo = BasisChange { matrix: back, ids: c.generators().iter().map(|g| g.id.clone()).collect() };
            prop_assert_eq!(d.apply_basis_change(&undo).unwrap(), c);
        }

        #[test]
        fn bar_is_a_grading_swapping_involution(c in arb_complex(6)) {
            let b = c.bar();
            prop_assert!(b.is_valid());
            prop_assert_eq!(b.bar(), c.clone());
            let mut g1: Vec<(i64, i64)> = c.generators().iter().map(|g| (g.gr_v, g.gr_u)).collect();
            let mut g2: Vec<(i64, i64)> = b.generators().iter().map(|g| g.gr()).collect();
            g1.sort();
            g2.sort();
            prop_assert_eq!(g1, g2);
        }

        #[test]
        fn stripping_splits_off_zero_complexes(c in arb_complex(6)) {
            let (d, k, b) = c.strip_zero_complexes();
            prop_assert!(!d.has_length_zero_arrow());
            prop_assert_eq!(d.rank() + 2 * k, c.rank());
            let whole = c.apply_basis_change(&b).unwrap();
            prop_assert_eq!(whole.restrict(&(0..d.rank()).collect::<Vec<_>>()), d.clone());
            for z in 0..k {
                let (x, y) = (d.rank() + 2 * z, d.rank() + 2 * z + 1);
                let ts = whole.terms_from(x);
                prop_assert_eq!(ts.len(), 1);
                prop_assert_eq!(ts[0].target, y);
                prop_assert!(whole.terms_from(y).is_empty());
                prop_assert!((0..whole.rank()).all(|i| i == x || whole.terms_from(i).iter().all(|t| t.target != y && t.target != x)));
            }
        }

        #[test]
        fn inferred_gradings_match(c in arb_complex(6)) {
            let anchors: Vec<(usize, (i64, i64))> = (0..c.rank()).map(|i| (i, c.generator(i).gr())).collect();
            prop_assert_eq!(c.infer_gradings(&anchors).unwrap(), c.clone());
        }
    }
}
