//! Two-story complexes: elevator shafts carrying tokens, traversal
//! sequences, weights and the depth-increasing arrow-sliding algorithm.
//!
//! A shaft in bigrading g holds the block P_g of the transition matrix
//! (x = P·y) as a product of tokens, bottom first. Every basis change of a
//! floor is applied to the stored bases, so the floors always read the same
//! arrows and the shafts always multiply to the constant part of X·Y⁻¹.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::complex::{Complex, RPoly, Ring, RingMatrix};
use crate::gf::{self, FieldElem, Matrix};
use crate::reduce::realize_transition;
use crate::simplify::{self, SimplifiedBasis, SimplifyError};

/// Sort key realizing the unusual order
/// −1 ≤! −2 ≤! −3 ≤! … ≤! 0 ≤! … ≤! 3 ≤! 2 ≤! 1.
pub fn unusual_key(a: i64) -> (u8, i64) {
    match a.cmp(&0) {
        Ordering::Less => (0, -a),
        Ordering::Equal => (1, 0),
        Ordering::Greater => (2, -a),
    }
}

pub fn unusual_cmp(a: i64, b: i64) -> Ordering {
    unusual_key(a).cmp(&unusual_key(b))
}

/// Lexicographic comparison under ≤! of the first `limit` terms (all terms
/// when `limit` is None). Missing terms count as zero.
pub fn unusual_compare(s: &[i64], t: &[i64], limit: Option<usize>) -> Ordering {
    let n = s.len().max(t.len());
    let n = limit.map_or(n, |m| m.min(n));
    for k in 0..n {
        let a = s.get(k).copied().unwrap_or(0);
        let b = t.get(k).copied().unwrap_or(0);
        match unusual_cmp(a, b) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TwoStoryError {
    #[error("the move does not match the tokens at position {0}")]
    PatternMismatch(usize),
    #[error("strands {0} and {1} are not parallel at this step")]
    StrandsDiverge(usize, usize),
    #[error("the arrow points the wrong way to be removed")]
    WrongOrientation,
    #[error("the arrow joins parallel strands")]
    Parallel,
    #[error("depth not infinite after {0} rounds")]
    BoundExceeded(usize),
    #[error("a round left the depth at {0}")]
    Stalled(u32),
    #[error("no token {index} in the {part:?} part of shaft {shaft}")]
    NoSuchToken { shaft: usize, part: Part, index: usize },
    #[error("propagation of a basis change did not settle")]
    Unsettled,
    #[error(transparent)]
    Simplify(#[from] SimplifyError),
}

pub type Result<T> = std::result::Result<T, TwoStoryError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Floor {
    /// C/U with the vertically simplified basis x.
    Bottom,
    /// C/V with the horizontally simplified basis y.
    Top,
}

impl Floor {
    fn other(self) -> Floor {
        match self {
            Floor::Bottom => Floor::Top,
            Floor::Top => Floor::Bottom,
        }
    }
}

/// Which way a traversal sequence starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    /// a(z): along the floor arrow at z first.
    TowardFloor,
    /// b(z): through the elevator first.
    TowardShaft,
}

/// Indices are strand positions within one shaft.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Crossing(usize, usize),
    /// The elementary matrix I + λ·e_ij: sliding it onto a floor is the
    /// basis change z_i ↦ z_i + λz_j.
    CrossoverArrow(usize, usize, FieldElem),
    BlackDot(usize, FieldElem),
}

impl Token {
    pub fn matrix(&self, p: u32, k: usize) -> Matrix {
        let mut m = Matrix::identity(p, k);
        match *self {
            Token::Crossing(i, j) => m.swap_rows(i, j),
            Token::CrossoverArrow(i, j, l) => m.set(i, j, l.value()),
            Token::BlackDot(i, l) => m.set(i, i, l.value()),
        }
        m
    }

    fn is_crossing(&self) -> bool {
        matches!(self, Token::Crossing(..))
    }
}

pub fn token_product(p: u32, k: usize, tokens: &[Token]) -> Matrix {
    tokens.iter().fold(Matrix::identity(p, k), |m, t| m.mul(&t.matrix(p, k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Lower,
    Upper,
}

/// A shaft in straight form: lower tokens act on bottom-floor positions,
/// the crossings form the main elevators, upper tokens act on top-floor
/// positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shaft {
    pub grade: (i64, i64),
    /// Global indices of the strands, in position order.
    pub strands: Vec<usize>,
    pub lower: Vec<Token>,
    pub crossings: Vec<Token>,
    pub upper: Vec<Token>,
}

impl Shaft {
    pub fn rank(&self) -> usize {
        self.strands.len()
    }

    /// All tokens, bottom first.
    pub fn tokens(&self) -> Vec<Token> {
        let mut t = self.lower.clone();
        t.extend(&self.crossings);
        t.extend(&self.upper);
        t
    }

    pub fn matrix(&self, p: u32) -> Matrix {
        token_product(p, self.rank(), &self.tokens())
    }

    pub fn is_straight(&self) -> bool {
        !self.lower.iter().any(Token::is_crossing)
            && self.crossings.iter().all(Token::is_crossing)
            && !self.upper.iter().any(Token::is_crossing)
    }

    /// The main elevators: bottom position a continues to top position σ[a].
    pub fn elevators(&self, p: u32) -> Vec<usize> {
        let t = token_product(p, self.rank(), &self.crossings);
        (0..self.rank())
            .map(|a| (0..self.rank()).find(|&b| t.get(a, b) != 0).expect("permutation"))
            .collect()
    }

    pub fn part(&self, part: Part) -> &[Token] {
        match part {
            Part::Lower => &self.lower,
            Part::Upper => &self.upper,
        }
    }

    fn part_mut(&mut self, part: Part) -> &mut Vec<Token> {
        match part {
            Part::Lower => &mut self.lower,
            Part::Upper => &mut self.upper,
        }
    }

    fn set_tokens(&mut self, tokens: Vec<Token>) {
        let first = tokens.iter().position(Token::is_crossing);
        let last = tokens.iter().rposition(Token::is_crossing);
        match (first, last) {
            (Some(a), Some(b)) => {
                self.lower = tokens[..a].to_vec();
                self.crossings = tokens[a..=b].to_vec();
                self.upper = tokens[b + 1..].to_vec();
            }
            _ => {
                let split = self.lower.len().min(tokens.len());
                self.lower = tokens[..split].to_vec();
                self.crossings.clear();
                self.upper = tokens[split..].to_vec();
            }
        }
    }

    /// Rewrites the tokens at `pos` (an index into `tokens()`) by a local
    /// move; the shaft matrix is unchanged.
    pub fn apply_local_move(&self, pos: usize, mv: LocalMove, p: u32) -> Result<Shaft> {
        let mut t = self.tokens();
        let pair = (t.get(pos).copied(), t.get(pos + 1).copied());
        let fe = |v: u32| FieldElem::raw(v, p);
        let replacement: Vec<Token> = match (mv, pair) {
            (LocalMove::MergeDots, (Some(Token::BlackDot(i, a)), Some(Token::BlackDot(j, b)))) if i == j => {
                let c = gf::mul(a.value(), b.value(), p);
                if c == 1 {
                    vec![]
                } else {
                    vec![Token::BlackDot(i, fe(c))]
                }
            }
            (LocalMove::MergeArrows, (Some(Token::CrossoverArrow(i, j, a)), Some(Token::CrossoverArrow(k, l, b))))
                if (i, j) == (k, l) =>
            {
                let c = gf::add(a.value(), b.value(), p);
                if c == 0 {
                    vec![]
                } else {
                    vec![Token::CrossoverArrow(i, j, fe(c))]
                }
            }
            (LocalMove::ResolveCrossing, (Some(Token::CrossoverArrow(i, j, a)), Some(Token::Crossing(k, l))))
                if (i, j) == (k, l) || (i, j) == (l, k) =>
            {
                // E_ij^λ T_ij = D_i^λ E_ji D_j^{-1/λ} E_ij^{1/λ}
                let li = gf::inv(a.value(), p);
                let mut out = Vec::new();
                if a.value() != 1 {
                    out.push(Token::BlackDot(i, a));
                }
                out.push(Token::CrossoverArrow(j, i, fe(1)));
                let d = gf::neg(li, p);
                if d != 1 {
                    out.push(Token::BlackDot(j, fe(d)));
                }
                out.push(Token::CrossoverArrow(i, j, fe(li)));
                out
            }
            _ => return Err(TwoStoryError::PatternMismatch(pos)),
        };
        t.splice(pos..pos + 2, replacement);
        let mut s = self.clone();
        s.set_tokens(t);
        debug_assert_eq!(s.matrix(p), self.matrix(p));
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalMove {
    /// Two dots on one strand become one with the product decoration.
    MergeDots,
    /// Two equal arrows become one with the summed decoration, or vanish.
    MergeArrows,
    /// An arrow followed by the crossing of its two strands is replaced
    /// by arrows and dots only.
    ResolveCrossing,
}

/// Tokens (dots, then arrows) whose product is `m`, provided `m` is upper
/// triangular with respect to `order`.
pub fn triangular_tokens(m: &Matrix, order: &[usize]) -> Option<Vec<Token>> {
    let p = m.characteristic();
    let k = m.rows();
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[..a] {
            if m.get(i, j) != 0 {
                return None;
            }
        }
    }
    let mut out = Vec::new();
    for &i in order {
        let d = m.get(i, i);
        if d == 0 {
            return None;
        }
        if d != 1 {
            out.push(Token::BlackDot(i, FieldElem::raw(d, p)));
        }
    }
    // m = D·N with N unipotent; N is the product of its columns, last first.
    for b in (0..k).rev() {
        let j = order[b];
        for &i in &order[..b] {
            let v = m.get(i, j);
            if v != 0 {
                let n = gf::mul(gf::inv(m.get(i, i), p), v, p);
                out.push(Token::CrossoverArrow(i, j, FieldElem::raw(n, p)));
            }
        }
    }
    Some(out)
}

/// An order making `m` upper triangular, if its support has no cycle.
fn triangular_order(m: &Matrix) -> Option<Vec<usize>> {
    let k = m.rows();
    let mut indeg = vec![0; k];
    for i in 0..k {
        for j in 0..k {
            if i != j && m.get(i, j) != 0 {
                indeg[j] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..k).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(k);
    while let Some(i) = ready.pop() {
        order.push(i);
        for j in 0..k {
            if i != j && m.get(i, j) != 0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(j);
                }
            }
        }
    }
    (order.len() == k).then_some(order)
}

/// Crossings whose product is the permutation matrix with a 1 at (a, σ[a]).
fn crossing_tokens(sigma: &[usize], p: u32) -> Vec<Token> {
    let k = sigma.len();
    let mut q = Matrix::zeros(p, k, k);
    for (a, &b) in sigma.iter().enumerate() {
        q.set(a, b, 1);
    }
    let mut swaps = Vec::new();
    for a in 0..k {
        let c = (0..k).find(|&c| q.get(a, c) != 0).unwrap();
        if c != a {
            q.swap_cols(a, c);
            swaps.push(Token::Crossing(a, c));
        }
    }
    swaps.reverse();
    swaps
}

/// Writes `m` as L·D·T·U with L unipotent upper triangular for the bottom
/// order, D diagonal, T a permutation and U unipotent upper triangular for
/// the top order. Returns (L, D·T, U).
fn bruhat(m: &Matrix, xorder: &[usize], yorder: &[usize]) -> (Matrix, Matrix, Matrix) {
    let p = m.characteristic();
    let k = m.rows();
    let mut a = m.select(xorder, yorder);
    let mut rows = Matrix::identity(p, k);
    let mut cols = Matrix::identity(p, k);
    for r in (0..k).rev() {
        let c = (0..k).find(|&c| a.get(r, c) != 0).expect("invertible shaft matrix");
        let piv = gf::inv(a.get(r, c), p);
        for j in c + 1..k {
            let f = a.get(r, j);
            if f != 0 {
                let f = gf::neg(gf::mul(f, piv, p), p);
                a.add_col(j, c, f);
                cols.add_col(j, c, f);
            }
        }
        for i in 0..r {
            let f = a.get(i, c);
            if f != 0 {
                let f = gf::neg(gf::mul(f, piv, p), p);
                a.add_row(i, r, f);
                rows.add_row(i, r, f);
            }
        }
    }
    let l = gf::invert(&rows).expect("unipotent");
    let u = gf::invert(&cols).expect("unipotent");
    let mut lo = Matrix::zeros(p, k, k);
    let mut mono = Matrix::zeros(p, k, k);
    let mut up = Matrix::zeros(p, k, k);
    for i in 0..k {
        for j in 0..k {
            lo.set(xorder[i], xorder[j], l.get(i, j));
            mono.set(xorder[i], yorder[j], a.get(i, j));
            up.set(yorder[i], yorder[j], u.get(i, j));
        }
    }
    (lo, mono, up)
}

/// Splits a monomial matrix into dots on the bottom positions and crossings.
fn monomial_tokens(mono: &Matrix) -> (Vec<Token>, Vec<Token>) {
    let p = mono.characteristic();
    let k = mono.rows();
    let mut dots = Vec::new();
    let mut sigma = vec![0; k];
    for (a, s) in sigma.iter_mut().enumerate() {
        let b = (0..k).find(|&b| mono.get(a, b) != 0).expect("monomial");
        *s = b;
        let d = mono.get(a, b);
        if d != 1 {
            dots.push(Token::BlackDot(a, FieldElem::raw(d, p)));
        }
    }
    (dots, crossing_tokens(&sigma, p))
}

/// The straight form of a shaft ordered with respect to the given orders
/// (positions listed from least to greatest). Lower arrows then point from
/// a smaller to a larger bottom strand and upper arrows likewise on top.
pub fn straighten(shaft: &Shaft, xorder: &[usize], yorder: &[usize], p: u32) -> Shaft {
    let m = shaft.matrix(p);
    let (l, mono, u) = bruhat(&m, xorder, yorder);
    let (dots, crossings) = monomial_tokens(&mono);
    let mut lower = triangular_tokens(&l, xorder).expect("triangular");
    lower.extend(dots);
    let upper = triangular_tokens(&u, yorder).expect("triangular");
    let s = Shaft {
        grade: shaft.grade,
        strands: shaft.strands.clone(),
        lower,
        crossings,
        upper,
    };
    debug_assert_eq!(s.matrix(p), m);
    s
}

/// ŵ and w̌; None stands for ∞.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Weight {
    pub hat: Option<i64>,
    pub check: Option<i64>,
}

impl Weight {
    pub fn depth(&self) -> Option<u32> {
        [self.hat, self.check]
            .into_iter()
            .flatten()
            .map(|w| w.unsigned_abs() as u32)
            .min()
    }
}

/// A floor arrow seen from one of its ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub partner: usize,
    pub length: u32,
    pub out: bool,
}

impl Link {
    fn record(&self) -> i64 {
        if self.out {
            -(self.length as i64)
        } else {
            self.length as i64
        }
    }
}

/// A realized traversal sequence: `terms` followed by `cycle` repeated
/// forever (an empty cycle means zeros).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub terms: Vec<i64>,
    pub cycle: Vec<i64>,
}

impl Sequence {
    pub fn prefix(&self, m: usize) -> Vec<i64> {
        (0..m)
            .map(|k| {
                if k < self.terms.len() {
                    self.terms[k]
                } else if self.cycle.is_empty() {
                    0
                } else {
                    self.cycle[(k - self.terms.len()) % self.cycle.len()]
                }
            })
            .collect()
    }
}

/// Location of a crossover arrow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArrowRef {
    pub shaft: usize,
    pub part: Part,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub floor: Floor,
    /// New basis rows written in the old ones.
    pub change: RingMatrix,
}

#[derive(Debug, Clone)]
pub struct TwoStoryComplex {
    pub p: u32,
    /// The input with zero complexes split off, over R1.
    pub complex: Complex,
    pub bottom: SimplifiedBasis,
    pub top: SimplifiedBasis,
    pub shafts: Vec<Shaft>,
    pub log: Vec<LogEntry>,
    initial: (RingMatrix, RingMatrix),
    place: Vec<(usize, usize)>,
    vlink: Vec<Option<Link>>,
    hlink: Vec<Option<Link>>,
    rounds: usize,
}

struct Walker {
    up: Vec<usize>,
    down: Vec<usize>,
}

fn links(b: &SimplifiedBasis) -> Vec<Option<Link>> {
    let mut out = vec![None; b.rank()];
    for a in &b.arrows {
        out[a.source] = Some(Link {
            partner: a.target,
            length: a.length,
            out: true,
        });
        out[a.target] = Some(Link {
            partner: a.source,
            length: a.length,
            out: false,
        });
    }
    out
}

/// Hook called after every engine step with a short description.
pub type StepHook<'a> = dyn FnMut(&TwoStoryComplex, &str) + 'a;

impl TwoStoryComplex {
    /// Builds the two-story complex of `c` after splitting off its zero
    /// complexes; shaft tokens come from an LTU factorization.
    pub fn build(c: &Complex) -> Result<TwoStoryComplex> {
        let (c0, _, _) = c.with_ring(Ring::R1).strip_zero_complexes();
        let td = simplify::transition_data(&c0)?;
        let p = c0.p;
        let mut shafts = Vec::new();
        let mut place = vec![(0, 0); c0.rank()];
        for (grade, strands) in td.shafts() {
            let m = td.p.select(&strands, &strands);
            let k = strands.len();
            let ltu = gf::ltu_factorize(&m).expect("transition blocks are invertible");
            let lower: Vec<Token> = ltu.lower.iter().map(|f| factor_token(f, p)).collect();
            let upper: Vec<Token> = ltu.upper.iter().map(|f| factor_token(f, p)).collect();
            let lm = token_product(p, k, &lower);
            let um = token_product(p, k, &upper);
            let t = gf::invert(&lm).unwrap().mul(&m).mul(&gf::invert(&um).unwrap());
            let sigma: Vec<usize> = (0..k).map(|a| (0..k).find(|&b| t.get(a, b) != 0).unwrap()).collect();
            for (pos, &s) in strands.iter().enumerate() {
                place[s] = (shafts.len(), pos);
            }
            let shaft = Shaft {
                grade,
                strands,
                lower,
                crossings: crossing_tokens(&sigma, p),
                upper,
            };
            debug_assert_eq!(shaft.matrix(p), m);
            shafts.push(shaft);
        }
        Ok(TwoStoryComplex {
            p,
            vlink: links(&td.x),
            hlink: links(&td.y),
            initial: (td.x.change.matrix.clone(), td.y.change.matrix.clone()),
            complex: c0,
            bottom: td.x,
            top: td.y,
            shafts,
            log: Vec::new(),
            place,
            rounds: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.complex.rank()
    }

    /// Number of depth-increasing rounds performed so far.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn link(&self, floor: Floor, k: usize) -> Option<Link> {
        match floor {
            Floor::Bottom => self.vlink[k],
            Floor::Top => self.hlink[k],
        }
    }

    fn record(&self, floor: Floor, k: usize) -> i64 {
        self.link(floor, k).map_or(0, |l| l.record())
    }

    fn walker(&self) -> Walker {
        let n = self.rank();
        let mut up = vec![0; n];
        let mut down = vec![0; n];
        for s in &self.shafts {
            for (a, &b) in s.elevators(self.p).iter().enumerate() {
                up[s.strands[a]] = s.strands[b];
                down[s.strands[b]] = s.strands[a];
            }
        }
        Walker { up, down }
    }

    fn ride(w: &Walker, floor: Floor, k: usize) -> usize {
        match floor {
            Floor::Bottom => w.up[k],
            Floor::Top => w.down[k],
        }
    }

    fn start(&self, w: &Walker, floor: Floor, k: usize, heading: Heading) -> (Floor, usize) {
        match heading {
            Heading::TowardFloor => (floor, k),
            Heading::TowardShaft => (floor.other(), Self::ride(w, floor, k)),
        }
    }

    /// One term from a state about to use its floor arrow; None once the
    /// path has ended.
    fn advance(&self, w: &Walker, state: (Floor, usize)) -> (i64, Option<(Floor, usize)>) {
        let (floor, k) = state;
        match self.link(floor, k) {
            None => (0, None),
            Some(l) => (l.record(), Some((floor.other(), Self::ride(w, floor, l.partner)))),
        }
    }

    /// a(z) (toward the floor) or b(z) (through the elevator first) for the
    /// strand `k` of `floor`.
    pub fn traversal_sequence(&self, floor: Floor, k: usize, heading: Heading) -> Sequence {
        let w = self.walker();
        let mut state = Some(self.start(&w, floor, k, heading));
        let mut seen: Vec<(Floor, usize)> = Vec::new();
        let mut terms = Vec::new();
        while let Some(s) = state {
            if let Some(at) = seen.iter().position(|&t| t == s) {
                let cycle = terms.split_off(at);
                return Sequence { terms, cycle };
            }
            seen.push(s);
            let (t, next) = self.advance(&w, s);
            terms.push(t);
            state = next;
        }
        Sequence { terms, cycle: vec![] }
    }

    /// Signed index of the first difference between the sequences from the
    /// two strands (+ when the first is ≤!-smaller), None when they agree
    /// forever.
    fn divergence(&self, w: &Walker, floor: Floor, i: usize, j: usize, heading: Heading) -> Option<i64> {
        let mut a = Some(self.start(w, floor, i, heading));
        let mut b = Some(self.start(w, floor, j, heading));
        let mut seen = HashSet::new();
        let mut k = 0i64;
        loop {
            k += 1;
            if a.is_none() && b.is_none() {
                return None;
            }
            if !seen.insert((a, b)) {
                return None;
            }
            let (ta, na) = a.map_or((0, None), |s| self.advance(w, s));
            let (tb, nb) = b.map_or((0, None), |s| self.advance(w, s));
            match unusual_cmp(ta, tb) {
                Ordering::Less => return Some(k),
                Ordering::Greater => return Some(-k),
                Ordering::Equal => {}
            }
            a = na;
            b = nb;
        }
    }

    fn arrow_floor(part: Part) -> Floor {
        match part {
            Part::Lower => Floor::Bottom,
            Part::Upper => Floor::Top,
        }
    }

    fn weight_with(&self, w: &Walker, r: ArrowRef) -> Option<Weight> {
        let s = &self.shafts[r.shaft];
        let Token::CrossoverArrow(i, j, _) = *s.part(r.part).get(r.index)? else {
            return None;
        };
        let floor = Self::arrow_floor(r.part);
        let (zi, zj) = (s.strands[i], s.strands[j]);
        Some(Weight {
            hat: self.divergence(w, floor, zi, zj, Heading::TowardFloor),
            check: self.divergence(w, floor, zi, zj, Heading::TowardShaft),
        })
    }

    /// The weight of a crossover arrow; None if `r` is not one.
    pub fn weight_of(&self, r: ArrowRef) -> Option<Weight> {
        self.weight_with(&self.walker(), r)
    }

    pub fn arrows(&self) -> Vec<ArrowRef> {
        let mut out = Vec::new();
        for (shaft, s) in self.shafts.iter().enumerate() {
            for part in [Part::Lower, Part::Upper] {
                for (index, t) in s.part(part).iter().enumerate() {
                    if matches!(t, Token::CrossoverArrow(..)) {
                        out.push(ArrowRef { shaft, part, index });
                    }
                }
            }
        }
        out
    }

    pub fn weights(&self) -> Vec<(ArrowRef, Weight)> {
        let w = self.walker();
        self.arrows()
            .into_iter()
            .map(|r| (r, self.weight_with(&w, r).unwrap()))
            .collect()
    }

    /// Minimum of |ŵ| and |w̌| over all crossover arrows; None is ∞.
    pub fn depth(&self) -> Option<u32> {
        self.weights().iter().filter_map(|(_, w)| w.depth()).min()
    }

    /// The transition matrix assembled from the shafts.
    pub fn transition(&self) -> Matrix {
        let mut m = Matrix::zeros(self.p, self.rank(), self.rank());
        for s in &self.shafts {
            m.put(&s.strands, &s.strands, &s.matrix(self.p));
        }
        m
    }

    fn basis_mut(&mut self, floor: Floor) -> &mut SimplifiedBasis {
        match floor {
            Floor::Bottom => &mut self.bottom,
            Floor::Top => &mut self.top,
        }
    }

    fn power(&self, floor: Floor, c: u32, e: u32) -> RPoly {
        match floor {
            Floor::Bottom => RPoly::monomial(c, 0, e, self.p),
            Floor::Top => RPoly::monomial(c, e, 0, self.p),
        }
    }

    /// Applies the constant change z' = m·z to the strands of one shaft on
    /// one floor and repairs the floor through the partners. Returns the
    /// constant parts of the partner changes that are not the identity.
    fn change_floor(&mut self, floor: Floor, shaft: usize, m: &Matrix) -> Result<Vec<(usize, Matrix)>> {
        let p = self.p;
        let n = self.rank();
        let strands = self.shafts[shaft].strands.clone();
        let k = strands.len();
        for a in 0..k {
            for b in 0..k {
                if a != b
                    && m.get(a, b) != 0
                    && unusual_cmp(self.record(floor, strands[a]), self.record(floor, strands[b])) == Ordering::Greater
                {
                    return Err(TwoStoryError::StrandsDiverge(strands[a], strands[b]));
                }
            }
        }
        let mut big = RingMatrix::identity(p, Ring::R1, n);
        for a in 0..k {
            for b in 0..k {
                big.set(strands[a], strands[b], RPoly::monomial(m.get(a, b), 0, 0, p));
            }
        }
        for a in 0..k {
            let Some(la) = self.link(floor, strands[a]) else {
                continue;
            };
            let wa = la.partner;
            big.set(wa, wa, RPoly::zero());
            for b in 0..k {
                let c = m.get(a, b);
                if c == 0 {
                    continue;
                }
                let Some(lb) = self.link(floor, strands[b]) else {
                    continue;
                };
                if lb.out != la.out {
                    continue;
                }
                let e = if la.out { lb.length - la.length } else { la.length - lb.length };
                let term = self.power(floor, c, e);
                big.entry_mut(wa, lb.partner).add_assign(&term, p);
            }
        }
        let basis = self.basis_mut(floor);
        basis.change.matrix = big.mul(&basis.change.matrix);
        let constant = big.constant_part();
        self.log.push(LogEntry { floor, change: big });
        let mut touched: BTreeMap<usize, ()> = BTreeMap::new();
        for a in 0..k {
            if let Some(l) = self.link(floor, strands[a]) {
                touched.insert(self.place[l.partner].0, ());
            }
        }
        let mut out = Vec::new();
        for &t in touched.keys() {
            let ps = &self.shafts[t].strands;
            let w0 = constant.select(ps, ps);
            if !w0.is_identity() {
                out.push((t, w0));
            }
        }
        Ok(out)
    }

    /// Applies a floor change at one shaft and carries every induced
    /// partner change through its shaft to the other floor until all of
    /// them are absorbed. Token lists are left as they are.
    fn push(&mut self, floor: Floor, shaft: usize, m: Matrix) -> Result<()> {
        let cap = 8 * self.rank() * self.rank() + 64;
        let mut queue = VecDeque::from([(floor, shaft, m)]);
        let mut steps = 0;
        while let Some((f, s, m)) = queue.pop_front() {
            steps += 1;
            if steps > cap {
                return Err(TwoStoryError::Unsettled);
            }
            for (t, w0) in self.change_floor(f, s, &m)? {
                let pm = self.shafts[t].matrix(self.p);
                let pinv = gf::invert(&pm).expect("invertible");
                let carried = match f {
                    Floor::Bottom => pinv.mul(&w0).mul(&pm),
                    Floor::Top => pm.mul(&w0).mul(&pinv),
                };
                queue.push_back((f.other(), t, carried));
            }
        }
        Ok(())
    }

    /// Removes the token and restores the shaft matrix by a basis change on
    /// `exit`, pushing it through all shafts it reaches.
    fn remove_through(&mut self, r: ArrowRef, exit: Floor) -> Result<()> {
        let p = self.p;
        let len = self.shafts[r.shaft].part(r.part).len();
        if r.index >= len {
            return Err(TwoStoryError::NoSuchToken {
                shaft: r.shaft,
                part: r.part,
                index: r.index,
            });
        }
        let before = self.shafts[r.shaft].matrix(p);
        self.shafts[r.shaft].part_mut(r.part).remove(r.index);
        let after = self.shafts[r.shaft].matrix(p);
        let change = match exit {
            Floor::Bottom => after.mul(&gf::invert(&before).unwrap()),
            Floor::Top => gf::invert(&after).unwrap().mul(&before),
        };
        self.push(exit, r.shaft, change)
    }

    /// Replaces the tokens of one part of a shaft via `edit` and restores
    /// the shaft matrix by a change on that part's floor. The induced
    /// partner changes land in the neighbouring shafts next to the floor.
    fn move_across(&mut self, shaft: usize, part: Part, edit: impl FnOnce(&mut Vec<Token>)) -> Result<()> {
        let p = self.p;
        let floor = Self::arrow_floor(part);
        let before = self.shafts[shaft].matrix(p);
        edit(self.shafts[shaft].part_mut(part));
        let after = self.shafts[shaft].matrix(p);
        let change = match floor {
            Floor::Bottom => after.mul(&gf::invert(&before).unwrap()),
            Floor::Top => gf::invert(&after).unwrap().mul(&before),
        };
        for (t, w0) in self.change_floor(floor, shaft, &change)? {
            let m = match floor {
                Floor::Bottom => w0,
                Floor::Top => gf::invert(&w0).unwrap(),
            };
            let order = triangular_order(&m).ok_or(TwoStoryError::StrandsDiverge(t, t))?;
            let tokens = triangular_tokens(&m, &order).unwrap();
            let list = self.shafts[t].part_mut(part);
            match part {
                Part::Lower => {
                    list.splice(0..0, tokens);
                }
                Part::Upper => list.extend(tokens),
            }
        }
        Ok(())
    }

    /// Slides the token of a shaft that sits next to its floor across that
    /// floor into the neighbouring shaft. An arrow's strands must be
    /// parallel for this step.
    pub fn slide_arrow_step(&self, r: ArrowRef) -> Result<TwoStoryComplex> {
        let s = &self.shafts[r.shaft];
        let list = s.part(r.part);
        let tok = *list.get(r.index).ok_or(TwoStoryError::NoSuchToken {
            shaft: r.shaft,
            part: r.part,
            index: r.index,
        })?;
        let at_floor = match r.part {
            Part::Lower => r.index == 0,
            Part::Upper => r.index + 1 == list.len(),
        };
        if !at_floor {
            return Err(TwoStoryError::PatternMismatch(r.index));
        }
        let floor = Self::arrow_floor(r.part);
        if let Token::CrossoverArrow(i, j, _) = tok {
            let (zi, zj) = (s.strands[i], s.strands[j]);
            let (li, lj) = (self.link(floor, zi), self.link(floor, zj));
            let parallel = matches!((li, lj), (Some(a), Some(b)) if a.out == b.out && a.length == b.length);
            if !parallel {
                return Err(TwoStoryError::StrandsDiverge(zi, zj));
            }
        }
        let mut t = self.clone();
        t.move_across(r.shaft, r.part, |l| {
            l.remove(r.index);
        })?;
        Ok(t)
    }

    /// Removes a crossover arrow whose ŵ is positive and finite by sliding
    /// it onto its floor, where the basis change is absorbed.
    pub fn remove_diverging_arrow(&self, r: ArrowRef) -> Result<TwoStoryComplex> {
        let w = self.weight_of(r).ok_or(TwoStoryError::NoSuchToken {
            shaft: r.shaft,
            part: r.part,
            index: r.index,
        })?;
        match w.hat {
            None => Err(TwoStoryError::Parallel),
            Some(h) if h < 0 => Err(TwoStoryError::WrongOrientation),
            Some(_) => {
                let mut t = self.clone();
                t.remove_through(r, Self::arrow_floor(r.part))?;
                Ok(t)
            }
        }
    }

    /// Bottom and top orders of a shaft by the first `mx` and `my` terms of
    /// a(x) and a(y), ties broken by position.
    fn orders(&self, shaft: usize, mx: usize, my: usize) -> (Vec<usize>, Vec<usize>) {
        let s = &self.shafts[shaft];
        let key = |floor: Floor, m: usize| -> Vec<usize> {
            let seqs: Vec<Vec<i64>> = s
                .strands
                .iter()
                .map(|&k| self.traversal_sequence(floor, k, Heading::TowardFloor).prefix(m))
                .collect();
            let mut order: Vec<usize> = (0..s.rank()).collect();
            order.sort_by(|&a, &b| unusual_compare(&seqs[a], &seqs[b], None).then(a.cmp(&b)));
            order
        };
        (key(Floor::Bottom, mx), key(Floor::Top, my))
    }

    fn find(&self, pred: impl Fn(&ArrowRef, &Weight) -> bool) -> Vec<ArrowRef> {
        self.weights()
            .into_iter()
            .filter(|(r, w)| pred(r, w))
            .map(|(r, _)| r)
            .collect()
    }

    /// The arrow of `found` nearest to the floor it leaves through.
    fn nearest(&self, found: &[ArrowRef], exit: impl Fn(&ArrowRef) -> Floor) -> Option<ArrowRef> {
        found.iter().copied().min_by_key(|r| {
            let len = self.shafts[r.shaft].part(r.part).len();
            let dist = match exit(r) {
                Floor::Bottom => r.index,
                Floor::Top => len - 1 - r.index,
            };
            (r.shaft, dist)
        })
    }

    /// Removes every arrow satisfying `pred` by sliding it out through the
    /// floor given by `exit`.
    fn clear_arrows(
        &mut self,
        hook: &mut StepHook<'_>,
        what: &str,
        pred: impl Fn(&ArrowRef, &Weight) -> bool,
        exit: impl Fn(&ArrowRef) -> Floor,
    ) -> Result<()> {
        let cap = 4 * self.rank() * self.rank() + 64;
        for _ in 0..cap {
            let found = self.find(&pred);
            let Some(r) = self.nearest(&found, &exit) else {
                return Ok(());
            };
            self.remove_through(r, exit(&r))?;
            hook(self, what);
        }
        Err(TwoStoryError::Unsettled)
    }

    fn increase_depth_hooked(&mut self, m: u32, hook: &mut StepHook<'_>) -> Result<()> {
        let p = self.p;
        let mu = m as usize;
        let toward_floor = |r: &ArrowRef| Self::arrow_floor(r.part);
        let toward_shaft = |r: &ArrowRef| Self::arrow_floor(r.part).other();
        // (1) order every shaft by ≤!_m on both floors.
        for s in 0..self.shafts.len() {
            let (xo, yo) = self.orders(s, mu, mu);
            self.shafts[s] = straighten(&self.shafts[s], &xo, &yo, p);
        }
        hook(self, "reparametrize");
        // (2) ŵ = m: slide onto the floor, pushing the change around.
        self.clear_arrows(hook, "remove ŵ=m", |_, w| w.hat == Some(m as i64), toward_floor)?;
        if self.weights().iter().any(|(_, w)| w.hat == Some(-(m as i64))) {
            return Err(TwoStoryError::WrongOrientation);
        }
        // (3) w̌ = −m: reorder each region by ≤!_{m+1} and move its arrows
        // into the neighbouring shafts.
        let cap = 4 * self.shafts.len() + 16;
        for _ in 0..cap {
            let bad: Vec<usize> = self
                .weights()
                .iter()
                .filter(|(_, w)| w.check == Some(-(m as i64)))
                .map(|(r, _)| r.shaft)
                .collect();
            let Some(&s) = bad.first() else {
                break;
            };
            for part in [Part::Lower, Part::Upper] {
                self.regroup(s, part, mu)?;
                hook(self, "regroup");
                let other = match part {
                    Part::Lower => Part::Upper,
                    Part::Upper => Part::Lower,
                };
                self.clear_arrows(
                    hook,
                    "remove new ŵ=m",
                    |r, w| r.shaft == s && r.part == other && w.hat == Some(m as i64),
                    toward_floor,
                )?;
                self.clear_arrows(
                    hook,
                    "remove new ŵ=m",
                    |r, w| r.shaft == s && r.part == part && w.hat == Some(m as i64),
                    toward_floor,
                )?;
                if self.shafts[s].part(part).is_empty() {
                    continue;
                }
                self.move_across(s, part, |l| l.clear())?;
                hook(self, "move to neighbouring shaft");
            }
        }
        if self.weights().iter().any(|(_, w)| w.check == Some(-(m as i64))) {
            return Err(TwoStoryError::WrongOrientation);
        }
        // (4) w̌ = m: slide through the shaft to the other floor.
        self.clear_arrows(hook, "remove w̌=m", |_, w| w.check == Some(m as i64), toward_shaft)?;
        Ok(())
    }

    /// Refactors the product of one region and the crossings so that the
    /// region is ordered by ≤!_{m+1}; new arrows on the other side are
    /// ordered by ≤!_m.
    fn regroup(&mut self, s: usize, part: Part, m: usize) -> Result<()> {
        let p = self.p;
        let (xo, yo) = match part {
            Part::Lower => self.orders(s, m + 1, m),
            Part::Upper => self.orders(s, m, m + 1),
        };
        let sh = &self.shafts[s];
        let k = sh.rank();
        let mut region = Vec::new();
        if part == Part::Lower {
            region.extend(&sh.lower);
        }
        region.extend(&sh.crossings);
        if part == Part::Upper {
            region.extend(&sh.upper);
        }
        let mat = token_product(p, k, &region);
        let (l, mono, u) = bruhat(&mat, &xo, &yo);
        let (dots, crossings) = monomial_tokens(&mono);
        let mut lt = triangular_tokens(&l, &xo).unwrap();
        lt.extend(dots);
        let ut = triangular_tokens(&u, &yo).unwrap();
        let sh = &mut self.shafts[s];
        sh.crossings = crossings;
        match part {
            Part::Lower => {
                sh.lower = lt;
                let mut up = ut;
                up.extend(std::mem::take(&mut sh.upper));
                sh.upper = up;
            }
            Part::Upper => {
                sh.lower.extend(lt);
                sh.upper = ut;
            }
        }
        Ok(())
    }

    /// One round of the depth-increasing procedure at depth `m`.
    pub fn increase_depth(&self, m: u32) -> Result<TwoStoryComplex> {
        let mut t = self.clone();
        t.increase_depth_hooked(m, &mut |_, _| {})?;
        Ok(t)
    }

    pub fn run_to_depth_infinity(&self) -> Result<TwoStoryComplex> {
        self.run_to_depth_infinity_with(&mut |_, _| {})
    }

    /// Runs rounds until no arrow has finite weight. The hook sees the
    /// complex after every step.
    pub fn run_to_depth_infinity_with(&self, hook: &mut StepHook<'_>) -> Result<TwoStoryComplex> {
        let n = self.rank();
        let bound = n * n.saturating_sub(1);
        let mut t = self.clone();
        t.rounds = 0;
        while let Some(m) = t.depth() {
            if t.rounds >= bound {
                return Err(TwoStoryError::BoundExceeded(t.rounds));
            }
            t.increase_depth_hooked(m, hook)?;
            t.rounds += 1;
            if let Some(d) = t.depth() {
                if d <= m {
                    return Err(TwoStoryError::Stalled(d));
                }
            }
        }
        Ok(t)
    }

    /// Checks floor discipline, that the shafts carry the constant part of
    /// X·Y⁻¹, that the log replays to the current bases, and that the
    /// floors and shafts reassemble to the input.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (name, b) in [("bottom", &self.bottom), ("top", &self.top)] {
            if !b.clauses_hold() {
                return Err(format!("{name} floor is not simplified"));
            }
            if !b.reproduces(&self.complex) {
                return Err(format!("{name} floor does not match the complex"));
            }
        }
        if let Some(s) = self.shafts.iter().position(|s| !s.is_straight()) {
            return Err(format!("shaft {s} is not straight"));
        }
        let (mut x, mut y) = self.initial.clone();
        for e in &self.log {
            match e.floor {
                Floor::Bottom => x = e.change.mul(&x),
                Floor::Top => y = e.change.mul(&y),
            }
        }
        if x != self.bottom.change.matrix || y != self.top.change.matrix {
            return Err("log does not replay to the current bases".into());
        }
        let yinv = y.graded_inverse().map_err(|e| e.to_string())?;
        let pm = self.transition();
        if x.mul(&yinv).constant_part() != pm {
            return Err("shafts disagree with the bases".into());
        }
        let td = simplify::normalize_transition(&self.complex, &self.bottom, &self.top).map_err(|e| e.to_string())?;
        if td.p != pm {
            return Err("normalization changed the transition matrix".into());
        }
        let replayed = self.complex.apply_basis_change(&td.x.change).map_err(|e| e.to_string())?;
        if replayed != realize_transition(&td, &pm) {
            return Err("floors and shafts do not reassemble to the input".into());
        }
        Ok(())
    }

    /// Structured text listing floors, shafts and tokens.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let gen = |k: usize| self.bottom.gens[k].id.clone();
        for (name, b) in [("bottom", &self.bottom), ("top", &self.top)] {
            writeln!(out, "{name}:").unwrap();
            for a in &b.arrows {
                writeln!(out, "  {} -> {} length {}", gen(a.source), gen(a.target), a.length).unwrap();
            }
        }
        let show = |t: &Token| match t {
            Token::Crossing(i, j) => format!("X({i},{j})"),
            Token::CrossoverArrow(i, j, l) => format!("A({i},{j};{l})"),
            Token::BlackDot(i, l) => format!("D({i};{l})"),
        };
        let join = |ts: &[Token]| ts.iter().map(show).collect::<Vec<_>>().join(" ");
        for s in &self.shafts {
            let names: Vec<String> = s.strands.iter().map(|&k| gen(k)).collect();
            writeln!(out, "shaft {:?} [{}]", s.grade, names.join(" ")).unwrap();
            writeln!(out, "  lower: {}", join(&s.lower)).unwrap();
            writeln!(out, "  crossings: {}", join(&s.crossings)).unwrap();
            writeln!(out, "  upper: {}", join(&s.upper)).unwrap();
        }
        out
    }
}

fn factor_token(f: &gf::ElementaryFactor, p: u32) -> Token {
    match *f {
        gf::ElementaryFactor::Transposition(i, j) => Token::Crossing(i, j),
        gf::ElementaryFactor::AddUnit(i, j) => Token::CrossoverArrow(i, j, FieldElem::raw(1, p)),
        gf::ElementaryFactor::Scale(i, l) => Token::BlackDot(i, l),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::tests::{arb_complex, trefoil};
    use proptest::prelude::*;

    #[test]
    fn unusual_order_examples() {
        assert_eq!(unusual_compare(&[-1], &[1], None), Ordering::Less);
        assert_eq!(unusual_compare(&[0, 0], &[0, 0], Some(5)), Ordering::Equal);
        assert_eq!(unusual_compare(&[3], &[2], None), Ordering::Less);
        let mut v = vec![1, -3, 0, 2, -1, 3, -2];
        v.sort_by(|a, b| unusual_cmp(*a, *b));
        assert_eq!(v, vec![-1, -2, -3, 0, 3, 2, 1]);
        assert_eq!(unusual_compare(&[1, 2], &[1, 3], Some(1)), Ordering::Equal);
        assert_eq!(unusual_compare(&[1, 2], &[1, 3], Some(2)), Ordering::Greater);
    }

    fn fe(v: u32, p: u32) -> FieldElem {
        FieldElem::raw(v, p)
    }

    fn shaft(tokens: Vec<Token>, k: usize) -> Shaft {
        let mut s = Shaft {
            grade: (0, 0),
            strands: (0..k).collect(),
            lower: vec![],
            crossings: vec![],
            upper: vec![],
        };
        s.set_tokens(tokens);
        s
    }

    #[test]
    fn token_matrices() {
        let p = 3;
        // E32 T23 E13 T12 D2^2 E21, indices shifted to start at zero.
        let tokens = vec![
            Token::CrossoverArrow(2, 1, fe(1, p)),
            Token::Crossing(1, 2),
            Token::CrossoverArrow(0, 2, fe(1, p)),
            Token::Crossing(0, 1),
            Token::BlackDot(1, fe(2, p)),
            Token::CrossoverArrow(1, 0, fe(1, p)),
        ];
        let mut expect = Matrix::identity(p, 3);
        for f in [
            gf::ElementaryFactor::AddUnit(2, 1),
            gf::ElementaryFactor::Transposition(1, 2),
            gf::ElementaryFactor::AddUnit(0, 2),
            gf::ElementaryFactor::Transposition(0, 1),
            gf::ElementaryFactor::Scale(1, fe(2, p)),
            gf::ElementaryFactor::AddUnit(1, 0),
        ] {
            expect = expect.mul(&f.matrix(p, 3));
        }
        assert_eq!(token_product(p, 3, &tokens), expect);
        let s = shaft(tokens, 3);
        let order = [0, 1, 2];
        let st = straighten(&s, &order, &order, p);
        assert!(st.is_straight());
        assert_eq!(st.matrix(p), expect);
    }

    #[test]
    fn local_moves() {
        let p = 3;
        let s = shaft(vec![Token::BlackDot(0, fe(2, p)), Token::BlackDot(0, fe(2, p))], 2);
        assert!(s.apply_local_move(0, LocalMove::MergeDots, p).unwrap().tokens().is_empty());
        let s = shaft(vec![Token::BlackDot(1, fe(2, p)), Token::BlackDot(1, fe(1, p))], 2);
        assert_eq!(
            s.apply_local_move(0, LocalMove::MergeDots, p).unwrap().tokens(),
            vec![Token::BlackDot(1, fe(2, p))]
        );
        let a = |l| Token::CrossoverArrow(0, 1, fe(l, p));
        let s = shaft(vec![a(1), a(2)], 2);
        assert!(s.apply_local_move(0, LocalMove::MergeArrows, p).unwrap().tokens().is_empty());
        let s = shaft(vec![a(1), a(1)], 2);
        assert_eq!(s.apply_local_move(0, LocalMove::MergeArrows, p).unwrap().tokens(), vec![a(2)]);
        for l in [1, 2] {
            let s = shaft(vec![a(l), Token::Crossing(0, 1)], 2);
            let r = s.apply_local_move(0, LocalMove::ResolveCrossing, p).unwrap();
            assert!(r.tokens().iter().all(|t| !t.is_crossing()));
            assert_eq!(r.matrix(p), s.matrix(p));
        }
        let s = shaft(vec![a(1), Token::BlackDot(0, fe(2, p))], 2);
        assert_eq!(
            s.apply_local_move(0, LocalMove::MergeDots, p),
            Err(TwoStoryError::PatternMismatch(0))
        );
    }

    #[test]
    fn trivial_complexes() {
        let t = TwoStoryComplex::build(&trefoil()).unwrap();
        assert!(t.shafts.iter().all(|s| s.tokens().is_empty()));
        assert_eq!(t.depth(), None);
        t.check_invariants().unwrap();
        let r = t.run_to_depth_infinity().unwrap();
        assert_eq!(r.rounds(), 0);
        let a = t.traversal_sequence(Floor::Bottom, 0, Heading::TowardFloor);
        assert!(a.prefix(4).iter().all(|&x| x == 0) || !a.terms.is_empty());
        let z = Complex::new(Ring::R1, 2, vec![crate::complex::Generator::new("g", 0, 0)], &[]).unwrap();
        let t = TwoStoryComplex::build(&z).unwrap();
        assert_eq!(t.traversal_sequence(Floor::Top, 0, Heading::TowardShaft).prefix(3), vec![0, 0, 0]);
    }

    /// Two parallel squares: b(z) and a(z) agree for the two corners of each
    /// bigrading, so arrows between them have weight (∞, ∞).
    #[test]
    fn parallel_squares() {
        let d = crate::classify::parse_descriptor("LS(shape=[1,1,-1,-1]; w=2; A=rcf[[1,0],[0,1]]; anchor=(0,0))").unwrap();
        let e = crate::classify::realize(&d, 2).unwrap();
        let mut t = TwoStoryComplex::build(&e).unwrap();
        let s = t.shafts.iter().position(|s| s.rank() == 2).unwrap();
        t.shafts[s].lower.push(Token::CrossoverArrow(0, 1, fe(1, 2)));
        let r = ArrowRef { shaft: s, part: Part::Lower, index: t.shafts[s].lower.len() - 1 };
        assert_eq!(t.weight_of(r), Some(Weight { hat: None, check: None }));
        assert_eq!(t.remove_diverging_arrow(r).err(), Some(TwoStoryError::Parallel));
    }

    #[test]
    fn slide_and_remove() {
        let t = (0..200)
            .map(|seed| {
                let c = crate::random::random_complex(8, 2, seed, true);
                let c = c.apply_basis_change(&crate::random::random_basis_change(&c, seed)).unwrap();
                TwoStoryComplex::build(&c).unwrap()
            })
            .find(|t| t.weights().iter().any(|(_, w)| w.hat.is_some_and(|h| h > 0)))
            .unwrap();
        let m = t.depth().expect("finite depth");
        let mut done = false;
        for (r, w) in t.weights() {
            if w.hat.is_some_and(|h| h > 0) {
                let u = t.remove_diverging_arrow(r).unwrap();
                u.check_invariants().unwrap();
                assert_eq!(u.arrows().len() + 1, t.arrows().len());
                done = true;
            } else if w.hat.is_some_and(|h| h < 0) {
                assert_eq!(t.remove_diverging_arrow(r).err(), Some(TwoStoryError::WrongOrientation));
            }
        }
        assert!(done);
        let u = t.run_to_depth_infinity().unwrap();
        assert!(u.rounds() >= 1 && m >= 1);
        assert!(u.weights().iter().all(|(_, w)| w.depth().is_none()));
    }

    #[test]
    fn slide_dot_across_floor() {
        let p = 3;
        let e = crate::cli::corpus("figure_eight_f3", Default::default()).unwrap();
        let mut t = TwoStoryComplex::build(&e).unwrap();
        let s = t.shafts.iter().position(|s| t.link(Floor::Bottom, s.strands[0]).is_some()).unwrap();
        t.shafts[s].lower.insert(0, Token::BlackDot(0, fe(2, p)));
        t.shafts[s].lower.insert(0, Token::BlackDot(0, fe(2, p)));
        let before: usize = t.shafts.iter().map(|s| s.lower.len()).sum();
        let r = ArrowRef { shaft: s, part: Part::Lower, index: 0 };
        let u = t.slide_arrow_step(r).unwrap();
        let after: usize = u.shafts.iter().map(|s| s.lower.len()).sum();
        assert_eq!(before, after);
        u.check_invariants().unwrap();
        assert_eq!(u.log.len(), t.log.len() + 1);
        assert_eq!(
            t.slide_arrow_step(ArrowRef { shaft: s, part: Part::Lower, index: 1 }).err(),
            Some(TwoStoryError::PatternMismatch(1))
        );
    }

    #[test]
    fn corpus_reaches_depth_infinity() {
        for (name, _) in crate::cli::CORPUS {
            let c = crate::cli::corpus(name, Default::default()).unwrap();
            for seed in 0..3 {
                let d = c.apply_basis_change(&crate::random::random_basis_change(&c, seed)).unwrap();
                let t = TwoStoryComplex::build(&d).unwrap();
                let mut failure = None;
                let r = t
                    .run_to_depth_infinity_with(&mut |t, what| {
                        if failure.is_none() {
                            failure = t.check_invariants().err().map(|e| format!("{what}: {e}"));
                        }
                    })
                    .unwrap();
                assert_eq!(failure, None, "{name}");
                let n = r.rank();
                assert!(r.rounds() <= n * n.saturating_sub(1), "{name}");
                assert_eq!(r.depth(), None);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn straighten_reassembles(seed in any::<u64>(), k in 1usize..5) {
            let p = 3;
            let mut rng = crate::random::rng(seed);
            let m = crate::random::random_invertible(&mut rng, p, k);
            let s = Shaft { grade: (0, 0), strands: (0..k).collect(), lower: vec![], crossings: vec![], upper: vec![] };
            let mut order: Vec<usize> = (0..k).collect();
            order.reverse();
            let mut s2 = s.clone();
            let t = triangular_tokens(&Matrix::identity(p, k), &order).unwrap();
            s2.lower = t;
            let ltu = gf::ltu_factorize(&m).unwrap();
            s2.lower = ltu.lower.iter().map(|f| factor_token(f, p)).collect();
            let rest = gf::invert(&token_product(p, k, &s2.lower)).unwrap().mul(&m);
            s2.upper = triangular_tokens(&rest, &(0..k).collect::<Vec<_>>()).unwrap_or_default();
            if s2.matrix(p) == m {
                let st = straighten(&s2, &order, &(0..k).collect::<Vec<_>>(), p);
                prop_assert!(st.is_straight());
                prop_assert_eq!(st.matrix(p), m);
            }
        }

        #[test]
        fn depth_increases_monotonically(c in arb_complex(6), seed in any::<u64>()) {
            let d = c.apply_basis_change(&crate::random::random_basis_change(&c, seed)).unwrap();
            let t = TwoStoryComplex::build(&d).unwrap();
            prop_assert!(t.check_invariants().is_ok());
            let mut cur = t.clone();
            let mut last = 0;
            while let Some(m) = cur.depth() {
                prop_assert!(m > last);
                last = m;
                cur = cur.increase_depth(m).unwrap();
                prop_assert!(cur.check_invariants().is_ok());
            }
            let r = t.run_to_depth_infinity().unwrap();
            let n = r.rank();
            prop_assert!(r.rounds() <= n * n.saturating_sub(1));
        }
    }
}
