//! Prime fields F_p, dense matrices over them, polynomials over F_p, and the
//! factorizations and normal forms used by the decomposition engine.

use std::fmt;

use thiserror::Error;

/// Largest width accepted by [`class_contains_permutation`].
pub const PERMUTATION_SEARCH_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GfError {
    #[error("{0} is not a prime")]
    NotPrime(u32),
    #[error("matrix is singular")]
    Singular,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("width {width} exceeds the permutation search limit {limit}")]
    SizeLimitExceeded { width: usize, limit: usize },
    #[error("characteristic mismatch: {0} vs {1}")]
    FieldMismatch(u32, u32),
}

pub type Result<T> = std::result::Result<T, GfError>;

pub fn is_prime(p: u32) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2u32;
    while (d as u64) * (d as u64) <= p as u64 {
        if p % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

pub fn check_prime(p: u32) -> Result<u32> {
    if is_prime(p) {
        Ok(p)
    } else {
        Err(GfError::NotPrime(p))
    }
}

#[inline]
pub fn add(a: u32, b: u32, p: u32) -> u32 {
    ((a as u64 + b as u64) % p as u64) as u32
}

#[inline]
pub fn sub(a: u32, b: u32, p: u32) -> u32 {
    ((a as u64 + p as u64 - b as u64) % p as u64) as u32
}

#[inline]
pub fn mul(a: u32, b: u32, p: u32) -> u32 {
    ((a as u64 * b as u64) % p as u64) as u32
}

#[inline]
pub fn neg(a: u32, p: u32) -> u32 {
    if a == 0 {
        0
    } else {
        p - a
    }
}

/// Multiplicative inverse of a nonzero residue.
pub fn inv(a: u32, p: u32) -> u32 {
    assert!(a % p != 0, "inverse of zero in F_{p}");
    let (mut t, mut new_t) = (0i64, 1i64);
    let (mut r, mut new_r) = (p as i64, (a % p) as i64);
    while new_r != 0 {
        let q = r / new_r;
        (t, new_t) = (new_t, t - q * new_t);
        (r, new_r) = (new_r, r - q * new_r);
    }
    t.rem_euclid(p as i64) as u32
}

/// Reduces an arbitrary integer into [0, p).
pub fn reduce(v: i64, p: u32) -> u32 {
    v.rem_euclid(p as i64) as u32
}

/// An element of F_p together with its characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElem {
    value: u32,
    p: u32,
}

impl FieldElem {
    pub fn new(value: i64, p: u32) -> Result<Self> {
        check_prime(p)?;
        Ok(FieldElem {
            value: reduce(value, p),
            p,
        })
    }

    pub(crate) fn raw(value: u32, p: u32) -> Self {
        FieldElem { value: value % p, p }
    }

    pub fn value(self) -> u32 {
        self.value
    }

    pub fn characteristic(self) -> u32 {
        self.p
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    pub fn inverse(self) -> Result<Self> {
        if self.value == 0 {
            return Err(GfError::Singular);
        }
        Ok(FieldElem::raw(inv(self.value, self.p), self.p))
    }
}

impl fmt::Display for FieldElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl std::ops::Add for FieldElem {
    type Output = FieldElem;
    fn add(self, o: FieldElem) -> FieldElem {
        debug_assert_eq!(self.p, o.p);
        FieldElem::raw(add(self.value, o.value, self.p), self.p)
    }
}

impl std::ops::Sub for FieldElem {
    type Output = FieldElem;
    fn sub(self, o: FieldElem) -> FieldElem {
        debug_assert_eq!(self.p, o.p);
        FieldElem::raw(sub(self.value, o.value, self.p), self.p)
    }
}

impl std::ops::Mul for FieldElem {
    type Output = FieldElem;
    fn mul(self, o: FieldElem) -> FieldElem {
        debug_assert_eq!(self.p, o.p);
        FieldElem::raw(mul(self.value, o.value, self.p), self.p)
    }
}

impl std::ops::Neg for FieldElem {
    type Output = FieldElem;
    fn neg(self) -> FieldElem {
        FieldElem::raw(neg(self.value, self.p), self.p)
    }
}

/// Dense row-major matrix over F_p.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Matrix {
    p: u32,
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl Matrix {
    pub fn zeros(p: u32, rows: usize, cols: usize) -> Self {
        Matrix {
            p,
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(p: u32, n: usize) -> Self {
        let mut m = Matrix::zeros(p, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1 % p;
        }
        m
    }

    /// Builds a matrix from integer rows, reducing every entry mod p.
    pub fn from_rows(p: u32, rows: &[Vec<i64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Matrix::zeros(p, r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged matrix rows");
            for (j, &v) in row.iter().enumerate() {
                m.data[i * c + j] = reduce(v, p);
            }
        }
        m
    }

    pub fn characteristic(&self) -> u32 {
        self.p
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u32) {
        self.data[i * self.cols + j] = v % self.p;
    }

    pub fn elem(&self, i: usize, j: usize) -> FieldElem {
        FieldElem::raw(self.get(i, j), self.p)
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].to_vec())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn is_identity(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..self.cols).all(|j| self.get(i, j) == u32::from(i == j)))
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.p, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn mul(&self, o: &Matrix) -> Matrix {
        assert_eq!(self.p, o.p, "characteristic mismatch");
        assert_eq!(self.cols, o.rows, "dimension mismatch in product");
        let p = self.p as u64;
        let mut out = Matrix::zeros(self.p, self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k) as u64;
                if a == 0 {
                    continue;
                }
                for j in 0..o.cols {
                    let idx = i * o.cols + j;
                    out.data[idx] = ((out.data[idx] as u64 + a * o.get(k, j) as u64) % p) as u32;
                }
            }
        }
        out
    }

    pub fn add(&self, o: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&o.data) {
            *a = add(*a, *b, self.p);
        }
        out
    }

    pub fn sub(&self, o: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&o.data) {
            *a = sub(*a, *b, self.p);
        }
        out
    }

    pub fn scale(&self, c: u32) -> Matrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a = mul(*a, c, self.p);
        }
        out
    }

    pub fn pow(&self, mut e: u64) -> Matrix {
        assert!(self.is_square());
        let mut base = self.clone();
        let mut acc = Matrix::identity(self.p, self.rows);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    /// Row `dst` += c * row `src`.
    pub fn add_row(&mut self, dst: usize, src: usize, c: u32) {
        if c == 0 {
            return;
        }
        for j in 0..self.cols {
            let v = mul(self.get(src, j), c, self.p);
            let idx = dst * self.cols + j;
            self.data[idx] = add(self.data[idx], v, self.p);
        }
    }

    /// Column `dst` += c * column `src`.
    pub fn add_col(&mut self, dst: usize, src: usize, c: u32) {
        if c == 0 {
            return;
        }
        for i in 0..self.rows {
            let v = mul(self.get(i, src), c, self.p);
            let idx = i * self.cols + dst;
            self.data[idx] = add(self.data[idx], v, self.p);
        }
    }

    pub fn scale_row(&mut self, r: usize, c: u32) {
        for j in 0..self.cols {
            let idx = r * self.cols + j;
            self.data[idx] = mul(self.data[idx], c, self.p);
        }
    }

    pub fn scale_col(&mut self, col: usize, c: u32) {
        for i in 0..self.rows {
            let idx = i * self.cols + col;
            self.data[idx] = mul(self.data[idx], c, self.p);
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for i in 0..self.rows {
            self.data.swap(i * self.cols + a, i * self.cols + b);
        }
    }

    /// Submatrix with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.p, rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out.data[a * cols.len() + b] = self.get(i, j);
            }
        }
        out
    }

    /// Writes `block` with its top-left corner at the given position.
    pub fn put(&mut self, rows: &[usize], cols: &[usize], block: &Matrix) {
        assert_eq!((rows.len(), cols.len()), (block.rows, block.cols));
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                self.set(i, j, block.get(a, b));
            }
        }
    }

    pub fn block_diag(p: u32, blocks: &[Matrix]) -> Matrix {
        let n: usize = blocks.iter().map(|b| b.rows).sum();
        let m: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Matrix::zeros(p, n, m);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out.set(r0 + i, c0 + j, b.get(i, j));
                }
            }
            r0 += b.rows;
            c0 += b.cols;
        }
        out
    }

    /// Reduced row echelon form together with the pivot columns.
    pub fn rref(&self) -> (Matrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let Some(piv) = (r..m.rows).find(|&i| m.get(i, c) != 0) else {
                continue;
            };
            m.swap_rows(r, piv);
            let s = inv(m.get(r, c), m.p);
            m.scale_row(r, s);
            for i in 0..m.rows {
                if i != r {
                    let f = m.get(i, c);
                    if f != 0 {
                        m.add_row(i, r, neg(f, m.p));
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    pub fn is_invertible(&self) -> bool {
        self.is_square() && self.rank() == self.rows
    }

    /// Basis of the right null space, as columns of the returned matrix.
    pub fn kernel(&self) -> Matrix {
        let (r, pivots) = self.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        let mut k = Matrix::zeros(self.p, self.cols, free.len());
        for (t, &f) in free.iter().enumerate() {
            k.set(f, t, 1);
            for (row, &pc) in pivots.iter().enumerate() {
                k.set(pc, t, neg(r.get(row, f), self.p));
            }
        }
        k
    }

    /// Solves self * x = b for x, returning None if inconsistent.
    pub fn solve(&self, b: &Matrix) -> Option<Matrix> {
        assert_eq!(self.rows, b.rows);
        let mut aug = Matrix::zeros(self.p, self.rows, self.cols + b.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug.set(i, j, self.get(i, j));
            }
            for j in 0..b.cols {
                aug.set(i, self.cols + j, b.get(i, j));
            }
        }
        let (r, pivots) = aug.rref();
        if pivots.iter().any(|&c| c >= self.cols) {
            return None;
        }
        let mut x = Matrix::zeros(self.p, self.cols, b.cols);
        for (row, &pc) in pivots.iter().enumerate() {
            for j in 0..b.cols {
                x.set(pc, j, r.get(row, self.cols + j));
            }
        }
        Some(x)
    }

    pub fn permutation(p: u32, perm: &Permutation) -> Matrix {
        let n = perm.len();
        let mut m = Matrix::zeros(p, n, n);
        for (j, &i) in perm.images().iter().enumerate() {
            m.set(i, j, 1);
        }
        m
    }

    /// Companion matrix of a monic polynomial: ones on the subdiagonal and
    /// the negated low coefficients in the last column.
    pub fn companion(f: &Poly) -> Matrix {
        let d = f.degree().expect("companion of the zero polynomial");
        let p = f.p;
        let mut m = Matrix::zeros(p, d, d);
        for i in 1..d {
            m.set(i, i - 1, 1);
        }
        for i in 0..d {
            m.set(i, d - 1, neg(f.coeff(i), p));
        }
        m
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "[")?;
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{}", self.get(i, j))?;
            }
            write!(f, "]")?;
        }
        write!(f, "]")
    }
}

/// Inverse of a square matrix.
pub fn invert(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(GfError::DimensionMismatch(format!(
            "{}x{} is not square",
            m.rows, m.cols
        )));
    }
    m.solve(&Matrix::identity(m.p, m.rows))
        .filter(|x| m.mul(x).is_identity())
        .ok_or(GfError::Singular)
}

/// A permutation of {0, .., n-1}; the associated matrix sends e_j to e_{σ(j)}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn from_images(images: Vec<usize>) -> Self {
        let mut seen = vec![false; images.len()];
        for &i in &images {
            assert!(i < images.len() && !seen[i], "not a permutation");
            seen[i] = true;
        }
        Permutation(images)
    }

    pub fn images(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// Transpositions whose ordered product is this permutation's matrix.
    pub fn transpositions(&self) -> Vec<(usize, usize)> {
        let n = self.0.len();
        let mut cur: Vec<usize> = (0..n).collect();
        let mut pos: Vec<usize> = (0..n).collect();
        let mut out = Vec::new();
        // Right-multiplying by T_ij swaps columns i and j of the current matrix.
        for j in 0..n {
            let target = self.0[j];
            if cur[j] != target {
                let k = pos[target];
                out.push((j, k));
                let (a, b) = (cur[j], cur[k]);
                cur.swap(j, k);
                pos[a] = k;
                pos[b] = j;
            }
        }
        out
    }
}

/// The elementary matrices T_ij, E_ij = I + e_ij and D_i^λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementaryFactor {
    Transposition(usize, usize),
    AddUnit(usize, usize),
    Scale(usize, FieldElem),
}

impl ElementaryFactor {
    pub fn matrix(&self, p: u32, n: usize) -> Matrix {
        let mut m = Matrix::identity(p, n);
        match *self {
            ElementaryFactor::Transposition(i, j) => m.swap_rows(i, j),
            ElementaryFactor::AddUnit(i, j) => m.set(i, j, 1),
            ElementaryFactor::Scale(i, l) => m.set(i, i, l.value()),
        }
        m
    }
}

/// Ordered product of elementary factors as an n×n matrix.
pub fn product(p: u32, n: usize, factors: &[ElementaryFactor]) -> Matrix {
    let mut m = Matrix::identity(p, n);
    for f in factors {
        apply_right(&mut m, f);
    }
    m
}

/// m <- m * f, done with column operations.
pub fn apply_right(m: &mut Matrix, f: &ElementaryFactor) {
    match *f {
        ElementaryFactor::Transposition(i, j) => m.swap_cols(i, j),
        ElementaryFactor::AddUnit(i, j) => m.add_col(j, i, 1),
        ElementaryFactor::Scale(i, l) => m.scale_col(i, l.value()),
    }
}

/// E_ij^λ written with unit additions: D_i^λ E_ij D_i^{λ^{-1}}.
pub fn add_multiple_factors(i: usize, j: usize, lambda: u32, p: u32) -> Vec<ElementaryFactor> {
    let l = lambda % p;
    assert!(l != 0 && i != j);
    if l == 1 {
        vec![ElementaryFactor::AddUnit(i, j)]
    } else {
        vec![
            ElementaryFactor::Scale(i, FieldElem::raw(l, p)),
            ElementaryFactor::AddUnit(i, j),
            ElementaryFactor::Scale(i, FieldElem::raw(inv(l, p), p)),
        ]
    }
}

/// The triple of an LTU factorization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ltu {
    pub lower: Vec<ElementaryFactor>,
    pub perm: Permutation,
    pub upper: Vec<ElementaryFactor>,
}

/// Writes an invertible M as L·T·U with L lower triangular, T a permutation
/// matrix and U upper unitriangular, each given as elementary factors.
pub fn ltu_factorize(m: &Matrix) -> Result<Ltu> {
    if !m.is_square() {
        return Err(GfError::DimensionMismatch("LTU of a non-square matrix".into()));
    }
    let p = m.p;
    let n = m.rows;
    let mut a = m.clone();
    // Row operations R_k and column operations C_k with R..R a C..C = T.
    let mut row_ops: Vec<Vec<ElementaryFactor>> = Vec::new();
    let mut col_ops: Vec<Vec<ElementaryFactor>> = Vec::new();
    let mut perm = vec![usize::MAX; n];
    for r in 0..n {
        let c = (0..n).find(|&c| a.get(r, c) != 0).ok_or(GfError::Singular)?;
        let s = a.get(r, c);
        if s != 1 {
            a.scale_row(r, inv(s, p));
            // Undoing the scaling multiplies by D_r^s on the left.
            row_ops.push(vec![ElementaryFactor::Scale(r, FieldElem::raw(s, p))]);
        }
        for k in r + 1..n {
            let f = a.get(k, c);
            if f != 0 {
                a.add_row(k, r, neg(f, p));
                row_ops.push(add_multiple_factors(k, r, f, p));
            }
        }
        for k in c + 1..n {
            let f = a.get(r, k);
            if f != 0 {
                a.add_col(k, c, neg(f, p));
                col_ops.push(add_multiple_factors(c, k, f, p));
            }
        }
        perm[c] = r;
    }
    if perm.contains(&usize::MAX) {
        return Err(GfError::Singular);
    }
    let lower: Vec<ElementaryFactor> = row_ops.into_iter().flatten().collect();
    let upper: Vec<ElementaryFactor> = col_ops.into_iter().rev().flatten().collect();
    Ok(Ltu {
        lower,
        perm: Permutation::from_images(perm),
        upper,
    })
}

/// Factors an invertible matrix into transpositions, unit additions and scalings.
pub fn elementary_factorize(m: &Matrix) -> Result<Vec<ElementaryFactor>> {
    let ltu = ltu_factorize(m)?;
    let mut out = ltu.lower;
    out.extend(
        ltu.perm
            .transpositions()
            .into_iter()
            .map(|(i, j)| ElementaryFactor::Transposition(i, j)),
    );
    out.extend(ltu.upper);
    Ok(out)
}

/// Polynomial over F_p with coefficients from low to high degree, trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Poly {
    p: u32,
    coeffs: Vec<u32>,
}

impl Poly {
    pub fn new(p: u32, mut coeffs: Vec<u32>) -> Self {
        for c in coeffs.iter_mut() {
            *c %= p;
        }
        while coeffs.last() == Some(&0) {
            coeffs.pop();
        }
        Poly { p, coeffs }
    }

    pub fn zero(p: u32) -> Self {
        Poly { p, coeffs: vec![] }
    }

    pub fn constant(p: u32, c: u32) -> Self {
        Poly::new(p, vec![c])
    }

    /// x - c
    pub fn linear(p: u32, c: u32) -> Self {
        Poly::new(p, vec![neg(c % p, p), 1])
    }

    pub fn coeffs(&self) -> &[u32] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> u32 {
        self.coeffs.get(i).copied().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn lead(&self) -> u32 {
        self.coeffs.last().copied().unwrap_or(0)
    }

    pub fn monic(&self) -> Poly {
        if self.is_zero() {
            return self.clone();
        }
        let l = inv(self.lead(), self.p);
        Poly::new(self.p, self.coeffs.iter().map(|&c| mul(c, l, self.p)).collect())
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        Poly::new(
            self.p,
            (0..n).map(|i| add(self.coeff(i), o.coeff(i), self.p)).collect(),
        )
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        Poly::new(
            self.p,
            (0..n).map(|i| sub(self.coeff(i), o.coeff(i), self.p)).collect(),
        )
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        if self.is_zero() || o.is_zero() {
            return Poly::zero(self.p);
        }
        let mut out = vec![0u32; self.coeffs.len() + o.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in o.coeffs.iter().enumerate() {
                out[i + j] = add(out[i + j], mul(a, b, self.p), self.p);
            }
        }
        Poly::new(self.p, out)
    }

    pub fn div_rem(&self, d: &Poly) -> (Poly, Poly) {
        let dd = d.degree().expect("division by the zero polynomial");
        let li = inv(d.lead(), self.p);
        let mut r = self.coeffs.clone();
        let mut q = vec![0u32; self.coeffs.len().saturating_sub(dd).max(1)];
        while r.len() > dd && !r.is_empty() {
            let k = r.len() - 1 - dd;
            let c = mul(*r.last().unwrap(), li, self.p);
            q[k] = c;
            for (i, &dc) in d.coeffs.iter().enumerate() {
                r[k + i] = sub(r[k + i], mul(c, dc, self.p), self.p);
            }
            while r.last() == Some(&0) {
                r.pop();
            }
        }
        (Poly::new(self.p, q), Poly::new(self.p, r))
    }

    pub fn gcd(&self, o: &Poly) -> Poly {
        let (mut a, mut b) = (self.clone(), o.clone());
        while !b.is_zero() {
            let r = a.div_rem(&b).1;
            a = b;
            b = r;
        }
        a.monic()
    }

    pub fn pow(&self, e: usize) -> Poly {
        let mut acc = Poly::constant(self.p, 1);
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    /// Evaluates the polynomial at a square matrix.
    pub fn eval_matrix(&self, a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut acc = Matrix::zeros(self.p, n, n);
        for &c in self.coeffs.iter().rev() {
            acc = acc.mul(a).add(&Matrix::identity(self.p, n).scale(c));
        }
        acc
    }

    /// Monic irreducible factors with multiplicities, sorted.
    pub fn factor(&self) -> Vec<(Poly, usize)> {
        let mut f = self.monic();
        let mut out = Vec::new();
        let mut d = 1;
        while f.degree().unwrap_or(0) >= 1 {
            if 2 * d > f.degree().unwrap() {
                out.push((f.clone(), 1));
                break;
            }
            for g in monic_polys(self.p, d) {
                if !is_irreducible(&g) {
                    continue;
                }
                let mut e = 0;
                loop {
                    let (q, r) = f.div_rem(&g);
                    if !r.is_zero() {
                        break;
                    }
                    f = q;
                    e += 1;
                }
                if e > 0 {
                    out.push((g, e));
                }
            }
            d += 1;
        }
        out.sort();
        // Merge a trailing factor that may repeat an earlier one.
        let mut merged: Vec<(Poly, usize)> = Vec::new();
        for (g, e) in out {
            match merged.last_mut() {
                Some((h, k)) if *h == g => *k += e,
                _ => merged.push((g, e)),
            }
        }
        merged
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            if c == 0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match (i, c) {
                (0, c) => write!(f, "{c}")?,
                (1, 1) => write!(f, "x")?,
                (1, c) => write!(f, "{c}x")?,
                (i, 1) => write!(f, "x^{i}")?,
                (i, c) => write!(f, "{c}x^{i}")?,
            }
        }
        Ok(())
    }
}

fn monic_polys(p: u32, d: usize) -> impl Iterator<Item = Poly> {
    let count = (p as u64).pow(d as u32);
    (0..count).map(move |mut k| {
        let mut c = Vec::with_capacity(d + 1);
        for _ in 0..d {
            c.push((k % p as u64) as u32);
            k /= p as u64;
        }
        c.push(1);
        Poly::new(p, c)
    })
}

fn is_irreducible(g: &Poly) -> bool {
    let n = g.degree().unwrap_or(0);
    if n == 0 {
        return false;
    }
    for d in 1..=n / 2 {
        for h in monic_polys(g.p, d) {
            if g.div_rem(&h).1.is_zero() {
                return false;
            }
        }
    }
    true
}

/// Invariant factors (monic, each dividing the next, constants omitted) of
/// a square matrix, via the Smith form of xI - A over F_p[x].
pub fn invariant_factors(a: &Matrix) -> Vec<Poly> {
    assert!(a.is_square());
    let n = a.rows();
    let p = a.p;
    let mut m: Vec<Vec<Poly>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let c = neg(a.get(i, j), p);
                    if i == j {
                        Poly::new(p, vec![c, 1])
                    } else {
                        Poly::constant(p, c)
                    }
                })
                .collect()
        })
        .collect();
    let mut diag = Vec::with_capacity(n);
    for t in 0..n {
        loop {
            // Pivot: nonzero entry of least degree in the trailing block.
            let mut best: Option<(usize, usize, usize)> = None;
            for i in t..n {
                for j in t..n {
                    if let Some(d) = m[i][j].degree() {
                        if best.map_or(true, |b| d < b.2) {
                            best = Some((i, j, d));
                        }
                    }
                }
            }
            let Some((bi, bj, _)) = best else {
                break;
            };
            m.swap(t, bi);
            for row in m.iter_mut() {
                row.swap(t, bj);
            }
            let piv = m[t][t].clone();
            let mut dirty = false;
            for i in t + 1..n {
                if m[i][t].is_zero() {
                    continue;
                }
                let (q, r) = m[i][t].div_rem(&piv);
                for j in t..n {
                    let v = m[i][j].sub(&q.mul(&m[t][j]));
                    m[i][j] = v;
                }
                dirty |= !r.is_zero();
            }
            for j in t + 1..n {
                if m[t][j].is_zero() {
                    continue;
                }
                let (q, r) = m[t][j].div_rem(&piv);
                for i in t..n {
                    let v = m[i][j].sub(&q.mul(&m[i][t]));
                    m[i][j] = v;
                }
                dirty |= !r.is_zero();
            }
            if dirty {
                continue;
            }
            // Divisibility: fold a non-divisible trailing entry into row t.
            let mut bad = None;
            'outer: for i in t + 1..n {
                for j in t + 1..n {
                    if !m[i][j].div_rem(&piv).1.is_zero() {
                        bad = Some(i);
                        break 'outer;
                    }
                }
            }
            match bad {
                Some(i) => {
                    for j in t..n {
                        let v = m[t][j].add(&m[i][j]);
                        m[t][j] = v;
                    }
                }
                None => break,
            }
        }
        diag.push(m[t][t].monic());
    }
    let mut out: Vec<Poly> = diag
        .into_iter()
        .filter(|f| f.degree().unwrap_or(0) >= 1)
        .collect();
    out.sort_by_key(|f| f.degree());
    out
}

/// Frobenius normal form: block diagonal of companion matrices of the
/// invariant factors in increasing degree.
pub fn rational_canonical_form(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(GfError::DimensionMismatch("RCF of a non-square matrix".into()));
    }
    if !a.is_invertible() {
        return Err(GfError::Singular);
    }
    Ok(frobenius_form(a))
}

/// Frobenius normal form without the invertibility requirement.
pub fn frobenius_form(a: &Matrix) -> Matrix {
    let blocks: Vec<Matrix> = invariant_factors(a).iter().map(Matrix::companion).collect();
    Matrix::block_diag(a.p, &blocks)
}

/// Elementary divisors (prime powers) of a square matrix, sorted.
pub fn elementary_divisors(a: &Matrix) -> Vec<Poly> {
    let mut out = Vec::new();
    for f in invariant_factors(a) {
        for (g, e) in f.factor() {
            out.push(g.pow(e));
        }
    }
    out.sort();
    out
}

/// Decides conjugacy in GL_w(F_p) by comparing rational canonical forms.
pub fn conjugate_test(a: &Matrix, b: &Matrix) -> Result<bool> {
    if a.p != b.p {
        return Err(GfError::FieldMismatch(a.p, b.p));
    }
    if !a.is_square() || !b.is_square() || a.rows != b.rows {
        return Err(GfError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(rational_canonical_form(a)? == rational_canonical_form(b)?)
}

/// Whether the conjugacy class of `a` contains a permutation matrix, decided
/// by testing every permutation matrix of the same size.
pub fn class_contains_permutation(a: &Matrix) -> Result<bool> {
    let w = a.rows;
    if w > PERMUTATION_SEARCH_LIMIT {
        return Err(GfError::SizeLimitExceeded {
            width: w,
            limit: PERMUTATION_SEARCH_LIMIT,
        });
    }
    let target = rational_canonical_form(a)?;
    let mut images: Vec<usize> = (0..w).collect();
    loop {
        let pm = Matrix::permutation(a.p, &Permutation::from_images(images.clone()));
        if frobenius_form(&pm) == target {
            return Ok(true);
        }
        if !next_permutation(&mut images) {
            return Ok(false);
        }
    }
}

/// Whether the conjugacy class of `a` contains a monomial matrix (a
/// permutation matrix with nonzero entries from F). A monomial matrix is a
/// sum of cycles, and a k-cycle with entry product λ is conjugate to the
/// companion of x^k − λ, so the search runs over multisets of (k, λ).
pub fn class_contains_monomial(a: &Matrix) -> Result<bool> {
    let w = a.rows;
    if w > PERMUTATION_SEARCH_LIMIT {
        return Err(GfError::SizeLimitExceeded {
            width: w,
            limit: PERMUTATION_SEARCH_LIMIT,
        });
    }
    let target = rational_canonical_form(a)?;
    let p = a.p;
    fn search(p: u32, left: usize, bound: (usize, u32), blocks: &mut Vec<Matrix>, target: &Matrix) -> bool {
        if left == 0 {
            return frobenius_form(&Matrix::block_diag(p, blocks)) == *target;
        }
        for k in (1..=left.min(bound.0)).rev() {
            for lambda in 1..p {
                if (k, lambda) > bound {
                    continue;
                }
                let mut c = vec![0u32; k + 1];
                c[0] = neg(lambda, p);
                c[k] = 1;
                blocks.push(Matrix::companion(&Poly::new(p, c)));
                let found = search(p, left - k, (k, lambda), blocks, target);
                blocks.pop();
                if found {
                    return true;
                }
            }
        }
        false
    }
    Ok(search(p, w, (w, p), &mut Vec::new(), &target))
}

/// Advances to the lexicographically next permutation; false after the last.
pub fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// All invertible w×w matrices over F_p (feasible only for tiny w and p).
pub fn enumerate_gl(p: u32, w: usize) -> Vec<Matrix> {
    let cells = w * w;
    let total = (p as u64).pow(cells as u32);
    let mut out = Vec::new();
    for mut k in 0..total {
        let mut m = Matrix::zeros(p, w, w);
        for c in 0..cells {
            m.data[c] = (k % p as u64) as u32;
            k /= p as u64;
        }
        if m.is_invertible() {
            out.push(m);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(p: u32, rows: &[&[i64]]) -> Matrix {
        Matrix::from_rows(p, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(invert(&Matrix::identity(5, 3)).unwrap(), Matrix::identity(5, 3));
        let a = m(2, &[&[1, 1], &[0, 1]]);
        assert_eq!(invert(&a).unwrap(), a);
        assert_eq!(invert(&m(3, &[&[2]])).unwrap(), m(3, &[&[2]]));
        assert_eq!(invert(&m(2, &[&[1, 1], &[1, 1]])), Err(GfError::Singular));
    }

    #[test]
    fn field_elements() {
        assert!(FieldElem::new(1, 4).is_err());
        let a = FieldElem::new(-1, 3).unwrap();
        assert_eq!(a.value(), 2);
        assert_eq!((a * a).value(), 1);
        assert_eq!(a.inverse().unwrap(), a);
        assert!(FieldElem::new(0, 3).unwrap().inverse().is_err());
    }

    #[test]
    fn ltu_examples() {
        let id = ltu_factorize(&Matrix::identity(3, 3)).unwrap();
        assert!(id.lower.is_empty() && id.upper.is_empty() && id.perm.is_identity());
        let swap = m(2, &[&[0, 1], &[1, 0]]);
        let f = ltu_factorize(&swap).unwrap();
        assert!(f.lower.is_empty() && f.upper.is_empty());
        assert_eq!(f.perm.images(), &[1, 0]);
        let a = m(2, &[&[1, 1], &[1, 0]]);
        let f = ltu_factorize(&a).unwrap();
        // Every triangular-by-permutation-by-triangular reading of this
        // matrix uses the identity permutation, found by exhaustive search.
        let gl = enumerate_gl(2, 2);
        let lower: Vec<&Matrix> = gl.iter().filter(|l| l.get(0, 1) == 0).collect();
        let upper: Vec<&Matrix> = gl.iter().filter(|u| u.get(1, 0) == 0).collect();
        let mut perms = std::collections::BTreeSet::new();
        for images in [vec![0, 1], vec![1, 0]] {
            let t = Matrix::permutation(2, &Permutation::from_images(images.clone()));
            if lower.iter().any(|l| upper.iter().any(|u| l.mul(&t).mul(u) == a)) {
                perms.insert(images);
            }
        }
        assert_eq!(perms.into_iter().collect::<Vec<_>>(), vec![vec![0, 1]]);
        assert_eq!(f.perm.images(), &[0, 1]);
        let rebuilt = product(2, 2, &f.lower)
            .mul(&Matrix::permutation(2, &f.perm))
            .mul(&product(2, 2, &f.upper));
        assert_eq!(rebuilt, a);
    }

    #[test]
    fn elementary_examples() {
        assert!(elementary_factorize(&Matrix::identity(3, 4)).unwrap().is_empty());
        let d = m(3, &[&[2, 0], &[0, 1]]);
        assert_eq!(
            elementary_factorize(&d).unwrap(),
            vec![ElementaryFactor::Scale(0, FieldElem::raw(2, 3))]
        );
        let e = m(3, &[&[1, 2], &[0, 1]]);
        assert_eq!(
            elementary_factorize(&e).unwrap(),
            vec![
                ElementaryFactor::Scale(0, FieldElem::raw(2, 3)),
                ElementaryFactor::AddUnit(0, 1),
                ElementaryFactor::Scale(0, FieldElem::raw(2, 3)),
            ]
        );
    }

    #[test]
    fn rcf_examples() {
        let a = m(2, &[&[1, 1], &[0, 1]]);
        let s = m(2, &[&[0, 1], &[1, 0]]);
        let b = m(2, &[&[1, 1], &[1, 0]]);
        assert_eq!(rational_canonical_form(&a).unwrap(), rational_canonical_form(&s).unwrap());
        assert_ne!(rational_canonical_form(&b).unwrap(), rational_canonical_form(&s).unwrap());
        assert_eq!(rational_canonical_form(&b).unwrap(), m(2, &[&[0, 1], &[1, 1]]));
        assert!(rational_canonical_form(&Matrix::identity(3, 4))
            .unwrap()
            .is_identity());
    }

    #[test]
    fn conjugacy_examples() {
        let a = m(2, &[&[1, 1], &[0, 1]]);
        let s = m(2, &[&[0, 1], &[1, 0]]);
        let b = m(2, &[&[1, 1], &[1, 0]]);
        assert!(conjugate_test(&a, &a).unwrap());
        assert!(conjugate_test(&a, &s).unwrap());
        assert!(!conjugate_test(&b, &Matrix::identity(2, 2)).unwrap());
        assert!(matches!(
            conjugate_test(&a, &Matrix::identity(2, 3)),
            Err(GfError::DimensionMismatch(_))
        ));
        assert!(class_contains_permutation(&Matrix::identity(2, 3)).unwrap());
        assert!(class_contains_permutation(&a).unwrap());
        assert!(!class_contains_permutation(&b).unwrap());
        assert!(matches!(
            class_contains_permutation(&Matrix::identity(2, 9)),
            Err(GfError::SizeLimitExceeded { .. })
        ));
    }

    #[test]
    fn monomial_classes_match_direct_search() {
        for (p, w) in [(2, 3), (3, 2), (3, 3), (5, 2)] {
            let mut monomial_classes = Vec::new();
            let mut images: Vec<usize> = (0..w).collect();
            loop {
                let perm = Matrix::permutation(p, &Permutation::from_images(images.clone()));
                let mut scalars = vec![1u32; w];
                loop {
                    let mut m = perm.clone();
                    for (r, &s) in scalars.iter().enumerate() {
                        m.scale_row(r, s);
                    }
                    monomial_classes.push(frobenius_form(&m));
                    let mut i = 0;
                    while i < w && scalars[i] == p - 1 {
                        scalars[i] = 1;
                        i += 1;
                    }
                    if i == w {
                        break;
                    }
                    scalars[i] += 1;
                }
                if !next_permutation(&mut images) {
                    break;
                }
            }
            for a in enumerate_gl(p, w) {
                let direct = monomial_classes.contains(&frobenius_form(&a));
                assert_eq!(class_contains_monomial(&a).unwrap(), direct, "{a}");
                if p == 2 {
                    assert_eq!(class_contains_permutation(&a).unwrap(), direct);
                }
            }
        }
    }

    /// Conjugation orbits of GL_w(F_p), found by closing each matrix under
    /// conjugation by elementary generators.
    fn conjugation_orbits(p: u32, w: usize) -> Vec<Vec<Matrix>> {
        let mut gens = Vec::new();
        for i in 0..w {
            for j in 0..w {
                if i != j {
                    gens.push(ElementaryFactor::AddUnit(i, j).matrix(p, w));
                    gens.push(ElementaryFactor::Transposition(i, j).matrix(p, w));
                }
            }
            for l in 2..p {
                gens.push(ElementaryFactor::Scale(i, FieldElem::raw(l, p)).matrix(p, w));
            }
        }
        let gens: Vec<(Matrix, Matrix)> =
            gens.into_iter().map(|g| { let gi = invert(&g).unwrap(); (g, gi) }).collect();
        let mut seen = std::collections::HashSet::new();
        let mut orbits = Vec::new();
        for a in enumerate_gl(p, w) {
            if !seen.insert(a.clone()) {
                continue;
            }
            let mut orbit = vec![a.clone()];
            let mut k = 0;
            while k < orbit.len() {
                let cur = orbit[k].clone();
                for (g, gi) in &gens {
                    let c = g.mul(&cur).mul(gi);
                    if seen.insert(c.clone()) {
                        orbit.push(c);
                    }
                }
                k += 1;
            }
            orbits.push(orbit);
        }
        orbits
    }

    #[test]
    fn conjugacy_is_exactly_the_orbit_relation() {
        for p in [2u32, 3] {
            for w in 1..=3usize {
                let orbits = conjugation_orbits(p, w);
                let mut forms = std::collections::HashSet::new();
                for orbit in &orbits {
                    let f = rational_canonical_form(&orbit[0]).unwrap();
                    assert_eq!(rational_canonical_form(&f).unwrap(), f);
                    for a in orbit {
                        assert_eq!(rational_canonical_form(a).unwrap(), f);
                    }
                    assert!(forms.insert(f), "two orbits share a normal form");
                }
            }
        }
    }

    #[test]
    fn small_conjugacy_matches_direct_search() {
        let gl = enumerate_gl(2, 2);
        for a in &gl {
            for b in &gl {
                let direct = gl.iter().any(|s| s.mul(a) == b.mul(s));
                assert_eq!(conjugate_test(a, b).unwrap(), direct);
            }
        }
    }

    #[test]
    fn polynomial_factoring() {
        let p = 3;
        let f = Poly::new(p, vec![1, 0, 1]); // x^2 + 1, irreducible over F_3
        assert_eq!(f.factor(), vec![(f.clone(), 1)]);
        let g = Poly::linear(p, 1).pow(2).mul(&f);
        let fs = g.factor();
        assert_eq!(fs.len(), 2);
        let back = fs.iter().fold(Poly::constant(p, 1), |acc, (h, e)| acc.mul(&h.pow(*e)));
        assert_eq!(back, g);
    }

    fn arb_invertible(p: u32, n: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(0..p as i64, n * n).prop_filter_map("singular", move |v| {
            let rows: Vec<Vec<i64>> = v.chunks(n).map(|c| c.to_vec()).collect();
            let a = Matrix::from_rows(p, &rows);
            a.is_invertible().then_some(a)
        })
    }

    proptest! {
        #[test]
        fn factorizations_reassemble(a in (1usize..6).prop_flat_map(|n| prop_oneof![arb_invertible(2, n), arb_invertible(3, n), arb_invertible(5, n)])) {
            let p = a.characteristic();
            let n = a.rows();
            let f = ltu_factorize(&a).unwrap();
            for e in &f.lower {
                match *e {
                    ElementaryFactor::AddUnit(i, j) => prop_assert!(i > j),
                    ElementaryFactor::Scale(..) => {}
                    ElementaryFactor::Transposition(..) => prop_assert!(false),
                }
            }
            for e in &f.upper {
                match *e {
                    ElementaryFactor::AddUnit(i, j) => prop_assert!(i < j),
                    ElementaryFactor::Scale(..) => {}
                    ElementaryFactor::Transposition(..) => prop_assert!(false),
                }
            }
            let rebuilt = product(p, n, &f.lower).mul(&Matrix::permutation(p, &f.perm)).mul(&product(p, n, &f.upper));
            prop_assert_eq!(&rebuilt, &a);
            prop_assert_eq!(&product(p, n, &elementary_factorize(&a).unwrap()), &a);
            let inv_a = invert(&a).unwrap();
            prop_assert!(a.mul(&inv_a).is_identity());
            let r = rational_canonical_form(&a).unwrap();
            prop_assert_eq!(&rational_canonical_form(&r).unwrap(), &r);
        }

        #[test]
        fn normal_form_is_a_conjugacy_invariant(a in arb_invertible(3, 4), s in arb_invertible(3, 4)) {
            let b = s.mul(&a).mul(&invert(&s).unwrap());
            prop_assert!(conjugate_test(&a, &b).unwrap());
            let ed: Vec<Poly> = elementary_divisors(&a);
            let total: usize = ed.iter().map(|f| f.degree().unwrap()).sum();
            prop_assert_eq!(total, 4);
        }
    }
}
