//! Seeded random complexes and basis changes for property tests and the
//! self-test command.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::complex::{BasisChange, Complex, Generator, RPoly, Ring, RingMatrix};
use crate::gf::{self, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random invertible n×n matrix over F_p.
pub fn random_invertible<R: Rng>(r: &mut R, p: u32, n: usize) -> Matrix {
    loop {
        let mut m = Matrix::zeros(p, n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, r.gen_range(0..p));
            }
        }
        if m.is_invertible() {
            return m;
        }
    }
}

fn nonzero<R: Rng>(r: &mut R, p: u32) -> u32 {
    r.gen_range(1..p)
}

/// A random complex over R1 of rank `n`: a vertically simplified structure
/// and a horizontally simplified structure on the same bigradings, glued by
/// a random grading-preserving transition, plus optional zero complexes,
/// all hidden behind a random basis change when `mix` is set.
pub fn random_complex(n: usize, p: u32, seed: u64, mix: bool) -> Complex {
    let mut r = rng(seed);
    let zeros = if n >= 2 && r.gen_bool(0.25) {
        r.gen_range(1..=n / 2)
    } else {
        0
    };
    let m = n - 2 * zeros;
    let mut grs: Vec<(i64, i64)> = Vec::with_capacity(n);
    for k in 0..m {
        if k == 0 {
            grs.push((r.gen_range(-2..=2), r.gen_range(-2..=2)));
            continue;
        }
        let base = grs[r.gen_range(0..k)];
        let a = r.gen_range(1..=3i64);
        let step = match r.gen_range(0..5) {
            0 => (-1, 2 * a - 1),
            1 => (1, 1 - 2 * a),
            2 => (2 * a - 1, -1),
            3 => (1 - 2 * a, 1),
            _ => (0, 0),
        };
        grs.push((base.0 + step.0, base.1 + step.1));
    }
    let mut dv = RingMatrix::zeros(p, Ring::R1, m, m);
    let mut du = RingMatrix::zeros(p, Ring::R1, m, m);
    for vertical in [true, false] {
        let mut used = vec![false; m];
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut r);
        for &i in &order {
            if used[i] {
                continue;
            }
            let mut cands: Vec<(usize, u32)> = Vec::new();
            for j in 0..m {
                if used[j] || j == i {
                    continue;
                }
                let (du_, dv_) = (grs[j].0 - grs[i].0, grs[j].1 - grs[i].1);
                let len = if vertical {
                    (du_ == -1 && dv_ >= 1 && dv_ % 2 == 1).then(|| ((dv_ + 1) / 2) as u32)
                } else {
                    (dv_ == -1 && du_ >= 1 && du_ % 2 == 1).then(|| ((du_ + 1) / 2) as u32)
                };
                if let Some(l) = len {
                    cands.push((j, l));
                }
            }
            if cands.is_empty() || r.gen_bool(0.15) {
                continue;
            }
            let (j, l) = cands[r.gen_range(0..cands.len())];
            used[i] = true;
            used[j] = true;
            let c = nonzero(&mut r, p);
            if vertical {
                dv.set(i, j, RPoly::monomial(c, 0, l, p));
            } else {
                du.set(i, j, RPoly::monomial(c, l, 0, p));
            }
        }
    }
    let mut pm = Matrix::identity(p, m);
    let mut blocks: std::collections::BTreeMap<(i64, i64), Vec<usize>> = Default::default();
    for (i, g) in grs.iter().enumerate() {
        blocks.entry(*g).or_default().push(i);
    }
    for idx in blocks.values() {
        let b = random_invertible(&mut r, p, idx.len());
        pm.put(idx, idx, &b);
    }
    let pr = RingMatrix::from_field(Ring::R1, &pm);
    let pinv = RingMatrix::from_field(Ring::R1, &gf::invert(&pm).unwrap());
    let d = dv.add(&pr.mul(&du).mul(&pinv));
    let gens: Vec<Generator> = grs
        .iter()
        .enumerate()
        .map(|(i, g)| Generator::new(format!("g{i}"), g.0, g.1))
        .collect();
    let mut c = Complex::from_matrix(Ring::R1, gens, &d).expect("random complex");
    for z in 0..zeros {
        let base = if c.rank() > 0 {
            c.generator(r.gen_range(0..c.rank())).gr()
        } else {
            (0, 0)
        };
        let shift = [(0, 0), (1, 1), (-1, 1), (1, -1)][r.gen_range(0..4)];
        let gr = (base.0 + shift.0, base.1 + shift.1);
        let zc = Complex::zero_complex(Ring::R1, p, gr, (&format!("z{z}"), &format!("w{z}")));
        c = Complex::direct_sum(&[c, zc]).unwrap();
    }
    if mix {
        let b = random_basis_change(&c, r.gen());
        c = c.apply_basis_change(&b).expect("random basis change");
        let mut order: Vec<usize> = (0..c.rank()).collect();
        order.shuffle(&mut r);
        c = c.permuted(&order);
        let ids = (0..c.rank()).map(|i| format!("g{i}")).collect();
        c = c.renamed(ids).unwrap();
    }
    debug_assert!(c.is_valid());
    c
}

/// A random grading-preserving invertible basis change over the ring of `c`.
pub fn random_basis_change(c: &Complex, seed: u64) -> BasisChange {
    let mut r = rng(seed);
    let n = c.rank();
    let p = c.p;
    let mut b0 = Matrix::zeros(p, n, n);
    for idx in c.grading_blocks().values() {
        let blk = random_invertible(&mut r, p, idx.len());
        b0.put(idx, idx, &blk);
    }
    let mut m = RingMatrix::from_field(c.ring, &b0);
    for i in 0..n {
        for j in 0..n {
            let (gi, gj) = (c.generator(i).gr(), c.generator(j).gr());
            let (du, dv) = (gj.0 - gi.0, gj.1 - gi.1);
            if du < 0 || dv < 0 || du % 2 != 0 || dv % 2 != 0 || (du == 0 && dv == 0) {
                continue;
            }
            let (a, b) = ((du / 2) as u32, (dv / 2) as u32);
            if !c.ring.admits(a, b) || !r.gen_bool(0.4) {
                continue;
            }
            m.set(i, j, RPoly::monomial(nonzero(&mut r, p), a, b, p));
        }
    }
    BasisChange {
        matrix: m,
        ids: c.generators().iter().map(|g| g.id.clone()).collect(),
    }
}

/// A uniformly random reordering of the generators.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut r);
    v
}
