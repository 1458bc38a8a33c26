//! Reduction of the per-bigrading transition matrices to glued form.
//!
//! Rows of a shaft's matrix are the bottom-floor generators of that
//! bigrading and columns the top-floor ones. Generators of one shaft and
//! side are grouped into classes ordered by ≤!; a vector may absorb a
//! multiple of any vector in a higher class, while a class is only
//! transformed as a whole, together with the class it is linked to through
//! its arrows and the already glued generators behind them. Each step
//! reduces one block to [[I,0],[0,0]], glues the pivot pairs, and splits
//! the linked classes. A block whose row and column classes are linked to
//! each other is reduced under similarity instead: its invertible part
//! closes a band and its nilpotent part glues along Jordan chains.

use std::collections::BTreeMap;

use crate::complex::{Complex, Ring, RingMatrix};
use crate::gf::{self, Matrix};
use crate::simplify::TransitionData;
use crate::twostory::unusual_key;

pub type Grade = (i64, i64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Slot {
    Active(usize),
    /// Glued to the generator with this index on the other floor.
    Glued(usize),
    Band(usize),
}

/// A closed cycle: rows and columns of one shaft joined by an invertible
/// block instead of the identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Band {
    pub shaft: Grade,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub matrix: Matrix,
}

#[derive(Clone, Debug)]
struct Class {
    side: Side,
    shaft: Grade,
    members: Vec<usize>,
    link: Option<usize>,
}

#[derive(Clone, Debug)]
struct Shaft {
    idx: Vec<usize>,
    p: Matrix,
}

#[derive(Clone, Debug)]
pub struct Engine {
    p: u32,
    grades: Vec<Grade>,
    pos: Vec<usize>,
    xlabel: Vec<i64>,
    ylabel: Vec<i64>,
    xpartner: Vec<Option<usize>>,
    ypartner: Vec<Option<usize>>,
    shafts: BTreeMap<Grade, Shaft>,
    classes: Vec<Class>,
    chains: BTreeMap<(Grade, Side), Vec<usize>>,
    xslot: Vec<Slot>,
    yslot: Vec<Slot>,
    bands: Vec<Band>,
    steps: usize,
}

fn labels(n: usize, arrows: &[crate::simplify::Arrow]) -> (Vec<i64>, Vec<Option<usize>>) {
    let mut label = vec![0; n];
    let mut partner = vec![None; n];
    for a in arrows {
        label[a.source] = -(a.length as i64);
        label[a.target] = a.length as i64;
        partner[a.source] = Some(a.target);
        partner[a.target] = Some(a.source);
    }
    (label, partner)
}

impl Engine {
    pub fn new(td: &TransitionData) -> Self {
        let n = td.x.rank();
        let p = td.p.characteristic();
        let grades: Vec<Grade> = td.x.gens.iter().map(|g| g.gr()).collect();
        let (xlabel, xpartner) = labels(n, &td.x.arrows);
        let (ylabel, ypartner) = labels(n, &td.y.arrows);
        let mut pos = vec![0; n];
        let mut shafts = BTreeMap::new();
        for (g, idx) in td.shafts() {
            for (k, &i) in idx.iter().enumerate() {
                pos[i] = k;
            }
            let m = td.p.select(&idx, &idx);
            shafts.insert(g, Shaft { idx, p: m });
        }
        let mut e = Engine {
            p,
            grades,
            pos,
            xlabel,
            ylabel,
            xpartner,
            ypartner,
            shafts,
            classes: Vec::new(),
            chains: BTreeMap::new(),
            xslot: Vec::new(),
            yslot: Vec::new(),
            bands: Vec::new(),
            steps: 0,
        };
        let mut xslot = vec![Slot::Active(usize::MAX); n];
        let mut yslot = vec![Slot::Active(usize::MAX); n];
        for side in [Side::X, Side::Y] {
            let (label, partner) = match side {
                Side::X => (e.xlabel.clone(), e.xpartner.clone()),
                Side::Y => (e.ylabel.clone(), e.ypartner.clone()),
            };
            let mut groups: BTreeMap<(Grade, i64), Vec<usize>> = BTreeMap::new();
            for i in 0..n {
                if label[i] <= 0 {
                    groups.entry((e.grades[i], label[i])).or_default().push(i);
                }
            }
            for ((g, l), members) in groups {
                let id = e.classes.len();
                let slot = match side {
                    Side::X => &mut xslot,
                    Side::Y => &mut yslot,
                };
                for &i in &members {
                    slot[i] = Slot::Active(id);
                }
                if l == 0 {
                    e.classes.push(Class {
                        side,
                        shaft: g,
                        members,
                        link: None,
                    });
                } else {
                    let targets: Vec<usize> = members.iter().map(|&i| partner[i].unwrap()).collect();
                    let tg = e.grades[targets[0]];
                    for &t in &targets {
                        slot[t] = Slot::Active(id + 1);
                    }
                    e.classes.push(Class {
                        side,
                        shaft: g,
                        members,
                        link: Some(id + 1),
                    });
                    e.classes.push(Class {
                        side,
                        shaft: tg,
                        members: targets,
                        link: Some(id),
                    });
                }
            }
        }
        e.xslot = xslot;
        e.yslot = yslot;
        let mut chains: BTreeMap<(Grade, Side), Vec<usize>> = BTreeMap::new();
        for (id, c) in e.classes.iter().enumerate() {
            chains.entry((c.shaft, c.side)).or_default().push(id);
        }
        for (key, chain) in chains.iter_mut() {
            let label = match key.1 {
                Side::X => &e.xlabel,
                Side::Y => &e.ylabel,
            };
            chain.sort_by_key(|&id| unusual_key(label[e.classes[id].members[0]]));
        }
        e.chains = chains;
        e
    }

    pub fn characteristic(&self) -> u32 {
        self.p
    }

    pub fn rank(&self) -> usize {
        self.grades.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn xslot(&self, i: usize) -> &Slot {
        &self.xslot[i]
    }

    pub fn yslot(&self, i: usize) -> &Slot {
        &self.yslot[i]
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn is_done(&self) -> bool {
        self.chains.values().all(|c| c.is_empty())
    }

    /// The current global transition matrix (x = P y).
    pub fn transition(&self) -> Matrix {
        let n = self.rank();
        let mut m = Matrix::zeros(self.p, n, n);
        for s in self.shafts.values() {
            m.put(&s.idx, &s.idx, &s.p);
        }
        m
    }

    pub fn run(&mut self) {
        while self.step() {}
    }

    /// Runs to completion, calling `hook` after every step.
    pub fn run_with(&mut self, mut hook: impl FnMut(&Engine)) {
        while self.step() {
            hook(self);
        }
    }

    fn local(&self, members: &[usize]) -> Vec<usize> {
        members.iter().map(|&i| self.pos[i]).collect()
    }

    /// One reduction step; false once every generator is glued.
    pub fn step(&mut self) -> bool {
        let Some(g) = self
            .chains
            .iter()
            .find(|(k, c)| k.1 == Side::X && !c.is_empty())
            .map(|(k, _)| k.0)
        else {
            return false;
        };
        let beta = *self.chains[&(g, Side::X)].last().unwrap();
        let rows = self.local(&self.classes[beta].members);
        let mut found = None;
        for &c in &self.chains[&(g, Side::Y)] {
            let cols = self.local(&self.classes[c].members);
            let b = self.shafts[&g].p.select(&rows, &cols);
            if !b.is_zero() {
                found = Some((c, b));
                break;
            }
        }
        let (gamma, block) = found.expect("active rows of a shaft vanish on active columns");
        if self.classes[beta].link == Some(gamma) {
            self.similarity_step(g, beta, gamma, &block);
        } else {
            self.corner_step(g, beta, gamma, &block);
        }
        self.steps += 1;
        debug_assert!(self.check().is_ok(), "{:?}", self.check());
        true
    }

    /// Transforms the vectors of a class (and of its linked class) by `m`.
    fn apply(&mut self, c: usize, m: &Matrix) {
        self.apply_raw(c, m);
        if let Some(l) = self.classes[c].link {
            self.apply_raw(l, m);
        }
    }

    fn apply_raw(&mut self, c: usize, m: &Matrix) {
        let class = &self.classes[c];
        let loc = self.local(&class.members);
        let shaft = self.shafts.get_mut(&class.shaft).unwrap();
        let k = shaft.idx.len();
        let all: Vec<usize> = (0..k).collect();
        match class.side {
            Side::X => {
                let sub = shaft.p.select(&loc, &all);
                shaft.p.put(&loc, &all, &m.mul(&sub));
            }
            Side::Y => {
                let sub = shaft.p.select(&all, &loc);
                let inv = gf::invert(m).expect("class transforms are invertible");
                shaft.p.put(&all, &loc, &sub.mul(&inv));
            }
        }
    }

    /// Clears the rows and columns of a pivot block `h` (rows `rl`, columns
    /// `cl`, local positions) outside the reduced block (`brows` × `bcols`).
    fn clear(&mut self, g: Grade, rl: &[usize], cl: &[usize], brows: &[usize], bcols: &[usize]) {
        let p = self.p;
        let shaft = self.shafts.get_mut(&g).unwrap();
        let k = shaft.idx.len();
        let h = shaft.p.select(rl, cl);
        let hinv = gf::invert(&h).expect("pivot block is invertible");
        for i in 0..k {
            if brows.contains(&i) {
                continue;
            }
            let v = shaft.p.select(&[i], cl);
            if v.is_zero() {
                continue;
            }
            let coeffs = v.mul(&hinv);
            for (t, &r) in rl.iter().enumerate() {
                let c = coeffs.get(0, t);
                if c != 0 {
                    shaft.p.add_row(i, r, gf::neg(c, p));
                }
            }
        }
        for j in 0..k {
            if bcols.contains(&j) {
                continue;
            }
            let v = shaft.p.select(rl, &[j]);
            if v.is_zero() {
                continue;
            }
            let coeffs = hinv.mul(&v);
            for (t, &c) in cl.iter().enumerate() {
                let f = coeffs.get(t, 0);
                if f != 0 {
                    shaft.p.add_col(j, c, gf::neg(f, p));
                }
            }
        }
    }

    fn glue(&mut self, x: usize, y: usize) {
        self.xslot[x] = Slot::Glued(y);
        self.yslot[y] = Slot::Glued(x);
    }

    fn set_slots(&mut self, id: usize) {
        let c = &self.classes[id];
        let slot = match c.side {
            Side::X => &mut self.xslot,
            Side::Y => &mut self.yslot,
        };
        for &i in &c.members {
            slot[i] = Slot::Active(id);
        }
    }

    fn chain_mut(&mut self, id: usize) -> &mut Vec<usize> {
        let c = &self.classes[id];
        self.chains.get_mut(&(c.shaft, c.side)).unwrap()
    }

    fn chain_index(&self, id: usize) -> usize {
        let c = &self.classes[id];
        self.chains[&(c.shaft, c.side)]
            .iter()
            .position(|&x| x == id)
            .unwrap()
    }

    fn drop_if_empty(&mut self, id: usize) {
        if self.classes[id].members.is_empty() {
            let at = self.chain_index(id);
            self.chain_mut(id).remove(at);
        }
    }

    /// Splits off the first `r` members of a class as a new class placed
    /// directly below (`below`) or above the remainder.
    fn split_front(&mut self, id: usize, r: usize, below: bool) -> usize {
        let front: Vec<usize> = self.classes[id].members.drain(..r).collect();
        let c = &self.classes[id];
        let new = Class {
            side: c.side,
            shaft: c.shaft,
            members: front,
            link: None,
        };
        let nid = self.classes.len();
        self.classes.push(new);
        self.set_slots(nid);
        let at = self.chain_index(id);
        let chain = self.chain_mut(id);
        if below {
            chain.insert(at, nid);
        } else {
            chain.insert(at + 1, nid);
        }
        nid
    }

    fn corner_step(&mut self, g: Grade, beta: usize, gamma: usize, block: &Matrix) {
        let (s, t, r) = corner_transform(block);
        let brows = self.local(&self.classes[beta].members);
        let bcols = self.local(&self.classes[gamma].members);
        self.apply(beta, &s);
        let tinv = gf::invert(&t).unwrap();
        self.apply(gamma, &tinv);
        let rows1: Vec<usize> = self.classes[beta].members[..r].to_vec();
        let cols1: Vec<usize> = self.classes[gamma].members[..r].to_vec();
        let (rl, cl) = (self.local(&rows1), self.local(&cols1));
        self.clear(g, &rl, &cl, &brows, &bcols);
        for k in 0..r {
            self.glue(rows1[k], cols1[k]);
        }
        let kb = self.classes[beta].link;
        let kg = self.classes[gamma].link;
        self.classes[beta].members.drain(..r);
        self.classes[gamma].members.drain(..r);
        let k1 = kb.map(|k| self.split_front(k, r, true));
        let l1 = kg.map(|l| self.split_front(l, r, false));
        if let Some(k1) = k1 {
            self.classes[k1].link = l1;
        }
        if let Some(l1) = l1 {
            self.classes[l1].link = k1;
        }
        for id in [beta, gamma].into_iter().chain(kb).chain(kg) {
            self.drop_if_empty(id);
        }
    }

    fn similarity_step(&mut self, g: Grade, beta: usize, gamma: usize, block: &Matrix) {
        let (q, inv_dim, sizes) = fitting_jordan(block);
        let s = gf::invert(&q).expect("Fitting basis is invertible");
        let brows = self.local(&self.classes[beta].members);
        let bcols = self.local(&self.classes[gamma].members);
        self.apply(beta, &s);
        let rows = self.classes[beta].members.clone();
        let cols = self.classes[gamma].members.clone();
        if inv_dim > 0 {
            let (rl, cl) = (self.local(&rows[..inv_dim]), self.local(&cols[..inv_dim]));
            self.clear(g, &rl, &cl, &brows, &bcols);
            let matrix = self.shafts[&g].p.select(&rl, &cl);
            let id = self.bands.len();
            for k in 0..inv_dim {
                self.xslot[rows[k]] = Slot::Band(id);
                self.yslot[cols[k]] = Slot::Band(id);
            }
            self.bands.push(Band {
                shaft: g,
                rows: rows[..inv_dim].to_vec(),
                cols: cols[..inv_dim].to_vec(),
                matrix,
            });
        }
        let mut pivots = Vec::new();
        let mut tops: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        let mut o = inv_dim;
        for &sz in &sizes {
            for i in 0..sz - 1 {
                pivots.push((rows[o + i], cols[o + i + 1]));
            }
            let e = tops.entry(sz).or_default();
            e.0.push(rows[o + sz - 1]);
            e.1.push(cols[o]);
            o += sz;
        }
        if !pivots.is_empty() {
            let rl: Vec<usize> = pivots.iter().map(|&(r, _)| self.pos[r]).collect();
            let cl: Vec<usize> = pivots.iter().map(|&(_, c)| self.pos[c]).collect();
            self.clear(g, &rl, &cl, &brows, &bcols);
            for &(r, c) in &pivots {
                self.glue(r, c);
            }
        }
        let at_row = self.chain_index(beta);
        let at_col = self.chain_index(gamma);
        let mut row_ids = Vec::new();
        let mut col_ids = Vec::new();
        for (_, (t, b)) in tops {
            let tid = self.classes.len();
            self.classes.push(Class {
                side: Side::X,
                shaft: g,
                members: t,
                link: Some(tid + 1),
            });
            self.classes.push(Class {
                side: Side::Y,
                shaft: g,
                members: b,
                link: Some(tid),
            });
            self.set_slots(tid);
            self.set_slots(tid + 1);
            row_ids.push(tid);
            col_ids.push(tid + 1);
        }
        // Tops of longer chains sit higher among the rows; bottoms of
        // longer chains sit lower among the columns.
        col_ids.reverse();
        self.classes[beta].members.clear();
        self.classes[gamma].members.clear();
        let rc = self.chains.get_mut(&(g, Side::X)).unwrap();
        rc.splice(at_row..at_row + 1, row_ids);
        let cc = self.chains.get_mut(&(g, Side::Y)).unwrap();
        cc.splice(at_col..at_col + 1, col_ids);
    }

    /// Structural invariants: glued pairs and bands are isolated in their
    /// shaft matrices, linked classes have equal sizes, slots agree.
    pub fn check(&self) -> Result<(), String> {
        for (g, s) in &self.shafts {
            let k = s.idx.len();
            for (a, &i) in s.idx.iter().enumerate() {
                if let Slot::Glued(c) = self.xslot[i] {
                    let b = self.pos[c];
                    for j in 0..k {
                        if s.p.get(a, j) != u32::from(j == b) || s.p.get(j, b) != u32::from(j == a) {
                            return Err(format!("glued pair ({i},{c}) not isolated in shaft {g:?}"));
                        }
                    }
                }
            }
        }
        for band in &self.bands {
            let s = &self.shafts[&band.shaft];
            let rl = self.local(&band.rows);
            let cl = self.local(&band.cols);
            for a in 0..s.idx.len() {
                for (t, &r) in rl.iter().enumerate() {
                    if !cl.contains(&a) && s.p.get(r, a) != 0 {
                        return Err(format!("band row {} meets column {a}", band.rows[t]));
                    }
                }
                for &c in &cl {
                    if !rl.contains(&a) && s.p.get(a, c) != 0 {
                        return Err(format!("band column meets row {a}"));
                    }
                }
            }
            if s.p.select(&rl, &cl) != band.matrix {
                return Err("band block changed".into());
            }
        }
        for (key, chain) in &self.chains {
            for &id in chain {
                let c = &self.classes[id];
                if c.members.is_empty() || (c.shaft, c.side) != *key {
                    return Err(format!("class {id} misplaced"));
                }
                if let Some(l) = c.link {
                    let lc = &self.classes[l];
                    if lc.link != Some(id) || lc.members.len() != c.members.len() {
                        return Err(format!("link {id}-{l} broken"));
                    }
                }
                let slot = match c.side {
                    Side::X => &self.xslot,
                    Side::Y => &self.yslot,
                };
                if c.members.iter().any(|&i| slot[i] != Slot::Active(id)) {
                    return Err(format!("slots of class {id} stale"));
                }
            }
        }
        Ok(())
    }

    pub fn xlabel(&self, i: usize) -> i64 {
        self.xlabel[i]
    }

    pub fn ylabel(&self, i: usize) -> i64 {
        self.ylabel[i]
    }

    pub fn xpartner(&self, i: usize) -> Option<usize> {
        self.xpartner[i]
    }

    pub fn ypartner(&self, i: usize) -> Option<usize> {
        self.ypartner[i]
    }

    pub fn grade(&self, i: usize) -> Grade {
        self.grades[i]
    }
}

/// The complex over R1 on the bottom-floor generators whose differential is
/// the vertical arrows plus the horizontal arrows carried through `p`
/// (x = p·y).
pub fn realize_transition(td: &TransitionData, p: &Matrix) -> Complex {
    let f = p.characteristic();
    let n = td.x.rank();
    let q = gf::invert(p).expect("transition matrix is invertible");
    let mut d = RingMatrix::zeros(f, Ring::R1, n, n);
    for a in &td.x.arrows {
        d.entry_mut(a.source, a.target).add_term(0, a.length, 1, f);
    }
    for a in &td.y.arrows {
        for i in 0..n {
            let pij = p.get(i, a.source);
            if pij == 0 {
                continue;
            }
            for k in 0..n {
                let c = gf::mul(pij, q.get(a.target, k), f);
                d.entry_mut(i, k).add_term(a.length, 0, c, f);
            }
        }
    }
    Complex::from_matrix(Ring::R1, td.x.gens.clone(), &d).expect("transition complex is well formed")
}

/// Invertible S, T with S·B·T = [[I_r,0],[0,0]].
fn corner_transform(b: &Matrix) -> (Matrix, Matrix, usize) {
    let p = b.characteristic();
    let (m, c) = (b.rows(), b.cols());
    let mut a = b.clone();
    let mut s = Matrix::identity(p, m);
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..c {
        if r == m {
            break;
        }
        let Some(piv) = (r..m).find(|&i| a.get(i, col) != 0) else {
            continue;
        };
        a.swap_rows(r, piv);
        s.swap_rows(r, piv);
        let f = gf::inv(a.get(r, col), p);
        a.scale_row(r, f);
        s.scale_row(r, f);
        for i in 0..m {
            let v = a.get(i, col);
            if i != r && v != 0 {
                a.add_row(i, r, gf::neg(v, p));
                s.add_row(i, r, gf::neg(v, p));
            }
        }
        pivots.push(col);
        r += 1;
    }
    let mut order = pivots.clone();
    order.extend((0..c).filter(|j| !pivots.contains(j)));
    let mut perm = Matrix::zeros(p, c, c);
    for (j, &o) in order.iter().enumerate() {
        perm.set(o, j, 1);
    }
    let ap = a.mul(&perm);
    let mut t2 = Matrix::identity(p, c);
    for i in 0..r {
        for j in r..c {
            t2.set(i, j, gf::neg(ap.get(i, j), p));
        }
    }
    (s, perm.mul(&t2), r)
}

fn column_rank(cols: &[Vec<u32>], p: u32, n: usize) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let mut m = Matrix::zeros(p, n, cols.len());
    for (j, v) in cols.iter().enumerate() {
        for i in 0..n {
            m.set(i, j, v[i]);
        }
    }
    m.rank()
}

fn column(m: &Matrix, j: usize) -> Vec<u32> {
    (0..m.rows()).map(|i| m.get(i, j)).collect()
}

fn apply_vec(m: &Matrix, v: &[u32]) -> Vec<u32> {
    let p = m.characteristic();
    (0..m.rows())
        .map(|i| {
            v.iter()
                .enumerate()
                .fold(0, |acc, (j, &x)| gf::add(acc, gf::mul(m.get(i, j), x, p), p))
        })
        .collect()
}

/// Jordan basis of a nilpotent matrix: columns e_1..e_s per chain with
/// N e_1 = 0 and N e_{i+1} = e_i, longest chains first.
pub(crate) fn nilpotent_jordan(n: &Matrix) -> (Matrix, Vec<usize>) {
    let p = n.characteristic();
    let d = n.rows();
    let mut powers = vec![Matrix::identity(p, d)];
    while !powers.last().unwrap().is_zero() {
        let next = powers.last().unwrap().mul(n);
        powers.push(next);
        assert!(powers.len() <= d + 2, "matrix is not nilpotent");
    }
    let h = powers.len() - 1;
    let kernels: Vec<Matrix> = powers.iter().map(|m| m.kernel()).collect();
    let mut tops: Vec<(Vec<u32>, usize)> = Vec::new();
    for j in (1..=h).rev() {
        let mut gens: Vec<Vec<u32>> = (0..kernels[j - 1].cols()).map(|c| column(&kernels[j - 1], c)).collect();
        for (t, ht) in &tops {
            gens.push(apply_vec(&powers[ht - j], t));
        }
        let mut cur = column_rank(&gens, p, d);
        for c in 0..kernels[j].cols() {
            let v = column(&kernels[j], c);
            gens.push(v.clone());
            let r = column_rank(&gens, p, d);
            if r > cur {
                cur = r;
                tops.push((v, j));
            } else {
                gens.pop();
            }
        }
    }
    let mut basis = Matrix::zeros(p, d, d);
    let mut col = 0;
    let mut sizes = Vec::new();
    for (t, ht) in &tops {
        for i in 0..*ht {
            let v = apply_vec(&powers[ht - 1 - i], t);
            for (r, &x) in v.iter().enumerate() {
                basis.set(r, col, x);
            }
            col += 1;
        }
        sizes.push(*ht);
    }
    assert_eq!(col, d);
    (basis, sizes)
}

/// Q with Q⁻¹·B·Q = diag(B_inv, J_{s_1}, J_{s_2}, …) where B_inv is
/// invertible and each J_s is a nilpotent Jordan block with ones above the
/// diagonal. Returns (Q, size of B_inv, Jordan sizes).
pub(crate) fn fitting_jordan(b: &Matrix) -> (Matrix, usize, Vec<usize>) {
    let p = b.characteristic();
    let k = b.rows();
    let bk = b.pow(k as u64);
    let (_, piv) = bk.rref();
    let ker = bk.kernel();
    let nk = ker.solve(&b.mul(&ker)).expect("kernel of B^k is B-invariant");
    let (jb, sizes) = nilpotent_jordan(&nk);
    let kb = ker.mul(&jb);
    let mut q = Matrix::zeros(p, k, k);
    for (c, &pc) in piv.iter().enumerate() {
        for i in 0..k {
            q.set(i, c, bk.get(i, pc));
        }
    }
    for c in 0..kb.cols() {
        for i in 0..k {
            q.set(i, piv.len() + c, kb.get(i, c));
        }
    }
    (q, piv.len(), sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::tests::{arb_complex, figure_eight, trefoil};
    use crate::simplify::transition_data;
    use proptest::prelude::*;

    #[test]
    fn corner_transform_shapes() {
        let b = Matrix::from_rows(3, &[vec![0i64, 2, 1], vec![0, 1, 2]]);
        let (s, t, r) = corner_transform(&b);
        assert_eq!(r, 1);
        let want = Matrix::from_rows(3, &[vec![1i64, 0, 0], vec![0, 0, 0]]);
        assert_eq!(s.mul(&b).mul(&t), want);
    }

    #[test]
    fn fitting_examples() {
        let b = Matrix::from_rows(2, &[vec![0i64, 1, 0], vec![0, 0, 0], vec![0, 0, 1]]);
        let (q, inv, sizes) = fitting_jordan(&b);
        assert_eq!((inv, sizes), (1, vec![2]));
        let d = gf::invert(&q).unwrap().mul(&b).mul(&q);
        assert_eq!(d, Matrix::from_rows(2, &[vec![1i64, 0, 0], vec![0, 0, 1], vec![0, 0, 0]]));
    }

    #[test]
    fn small_complexes_reduce() {
        for c in [trefoil(), figure_eight()] {
            let (c, _, _) = c.strip_zero_complexes();
            let td = transition_data(&c).unwrap();
            let mut e = Engine::new(&td);
            e.run();
            assert!(e.is_done());
            e.check().unwrap();
        }
    }

    proptest! {
        #[test]
        fn jordan_basis_is_valid(rows in proptest::collection::vec(0u32..3, 16)) {
            let mut n = Matrix::zeros(3, 4, 4);
            for i in 0..4 {
                for j in (i + 1)..4 {
                    n.set(i, j, rows[i * 4 + j]);
                }
            }
            let s = crate::random::random_invertible(&mut crate::random::rng(rows[0] as u64), 3, 4);
            let n = s.mul(&n).mul(&gf::invert(&s).unwrap());
            let (q, sizes) = nilpotent_jordan(&n);
            prop_assert!(q.is_invertible());
            let j = gf::invert(&q).unwrap().mul(&n).mul(&q);
            let mut o = 0;
            let mut want = Matrix::zeros(3, 4, 4);
            for s in sizes {
                for i in 0..s - 1 {
                    want.set(o + i, o + i + 1, 1);
                }
                o += s;
            }
            prop_assert_eq!(j, want);
        }

        #[test]
        fn engine_terminates_glued(c in arb_complex(6)) {
            let (c, _, _) = c.strip_zero_complexes();
            let td = transition_data(&c).unwrap();
            let mut e = Engine::new(&td);
            let mut prev = realize_transition(&td, &e.transition());
            prop_assert!(crate::iso::isomorphic(&prev, &c, 7));
            let mut ok = true;
            e.run_with(|e| {
                let next = realize_transition(&td, &e.transition());
                ok &= crate::iso::isomorphic(&prev, &next, 7);
                prev = next;
            });
            prop_assert!(ok);
            prop_assert!(e.is_done());
            prop_assert!(e.check().is_ok());
        }
    }
}
