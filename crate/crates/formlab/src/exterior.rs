//! Pointwise exterior algebra for k-forms.
//!
//! Multi-indices are strictly increasing axis lists over `1..=n`. Forms are
//! sparse maps from multi-index to coefficient (absent key = zero), generic
//! over the coefficient field.

use crate::scalar::{Coeff, ScalarError};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormError {
    #[error("invalid multi-index {axes:?} for dimension {n}")]
    InvalidMultiIndex { n: u8, axes: Vec<u8> },
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(u8, u8),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(u8, u8),
    #[error("wedge degree {0} exceeds dimension {1}")]
    DegreeOverflow(u8, u8),
    #[error("cannot contract 0-form")]
    ContractZeroForm,
    #[error(transparent)]
    Scalar(#[from] ScalarError),
}

/// Strictly increasing axis list `I = (i_1 < ... < i_k)`, entries in `1..=n`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct MultiIndex {
    n: u8,
    axes: Vec<u8>,
}

impl MultiIndex {
    pub fn new(n: u8, axes: Vec<u8>) -> Result<Self, FormError> {
        let ok = axes.windows(2).all(|w| w[0] < w[1])
            && axes.iter().all(|&a| a >= 1 && a <= n)
            && axes.len() <= n as usize;
        if !ok {
            return Err(FormError::InvalidMultiIndex { n, axes });
        }
        Ok(MultiIndex { n, axes })
    }

    pub fn empty(n: u8) -> Self {
        MultiIndex { n, axes: vec![] }
    }

    /// Sort an arbitrary axis list, returning the permutation sign, or `None`
    /// if an axis repeats.
    pub fn from_unsorted(n: u8, axes: &[u8]) -> Option<(Self, i8)> {
        let mut v = axes.to_vec();
        let mut sign = 1i8;
        // insertion sort, counting swaps
        for i in 1..v.len() {
            let mut j = i;
            while j > 0 && v[j - 1] > v[j] {
                v.swap(j - 1, j);
                sign = -sign;
                j -= 1;
            }
        }
        if v.windows(2).any(|w| w[0] == w[1]) {
            return None;
        }
        MultiIndex::new(n, v).ok().map(|m| (m, sign))
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn k(&self) -> u8 {
        self.axes.len() as u8
    }

    pub fn axes(&self) -> &[u8] {
        &self.axes
    }

    pub fn contains(&self, axis: u8) -> bool {
        self.axes.binary_search(&axis).is_ok()
    }

    /// Position of `axis` in the index list, if present.
    pub fn position(&self, axis: u8) -> Option<usize> {
        self.axes.binary_search(&axis).ok()
    }

    /// Index with `axis` removed (must be present).
    pub fn without(&self, axis: u8) -> MultiIndex {
        MultiIndex {
            n: self.n,
            axes: self.axes.iter().copied().filter(|&a| a != axis).collect(),
        }
    }

    /// Complementary multi-index `I'` and the sign of the permutation
    /// `(I, I')` relative to `(1..n)`.
    pub fn complement(&self) -> (MultiIndex, i8) {
        let comp: Vec<u8> = (1..=self.n).filter(|a| !self.contains(*a)).collect();
        let mut concat = self.axes.clone();
        concat.extend_from_slice(&comp);
        let mut inversions = 0usize;
        for i in 0..concat.len() {
            for j in (i + 1)..concat.len() {
                if concat[i] > concat[j] {
                    inversions += 1;
                }
            }
        }
        let sign = if inversions % 2 == 0 { 1 } else { -1 };
        (
            MultiIndex {
                n: self.n,
                axes: comp,
            },
            sign,
        )
    }

    /// All increasing multi-indices of length `k` in dimension `n`.
    pub fn all(n: u8, k: u8) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut current: Vec<u8> = Vec::new();
        fn rec(n: u8, k: u8, start: u8, current: &mut Vec<u8>, out: &mut Vec<MultiIndex>) {
            if current.len() == k as usize {
                out.push(MultiIndex {
                    n,
                    axes: current.clone(),
                });
                return;
            }
            for a in start..=n {
                current.push(a);
                rec(n, k, a + 1, current, out);
                current.pop();
            }
        }
        rec(n, k, 1, &mut current, &mut out);
        out
    }
}

/// Sparse k-form at a point: `u = sum_I u_I dx_I`.
#[derive(Clone, PartialEq, Debug)]
pub struct FiberForm<C: Coeff> {
    n: u8,
    k: u8,
    coeffs: BTreeMap<MultiIndex, C>,
}

impl<C: Coeff> FiberForm<C> {
    pub fn zero(n: u8, k: u8) -> Self {
        FiberForm {
            n,
            k,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn basis(n: u8, idx: MultiIndex) -> Self {
        let k = idx.k();
        let mut coeffs = BTreeMap::new();
        coeffs.insert(idx, C::one());
        FiberForm { n, k, coeffs }
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn get(&self, idx: &MultiIndex) -> C {
        self.coeffs.get(idx).cloned().unwrap_or_else(C::zero)
    }

    pub fn set(&mut self, idx: MultiIndex, c: C) {
        debug_assert_eq!(idx.k(), self.k);
        if c.is_zero() {
            self.coeffs.remove(&idx);
        } else {
            self.coeffs.insert(idx, c);
        }
    }

    pub fn add_term(&mut self, idx: MultiIndex, c: C) {
        let cur = self.get(&idx);
        self.set(idx, cur + c);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &C)> {
        self.coeffs.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut out = FiberForm::zero(self.n, self.k);
        for (idx, v) in &self.coeffs {
            out.add_term(idx.clone(), v.clone() * c.clone());
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self, FormError> {
        if self.k != other.k {
            return Err(FormError::DegreeMismatch(self.k, other.k));
        }
        let mut out = self.clone();
        for (idx, v) in &other.coeffs {
            out.add_term(idx.clone(), v.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FormError> {
        self.add(&other.scale(&(-C::one())))
    }

    /// Exterior product. Graded-anticommutative and bilinear.
    pub fn wedge(&self, other: &Self) -> Result<Self, FormError> {
        if self.n != other.n {
            return Err(FormError::DimensionMismatch(self.n, other.n));
        }
        let k = self.k + other.k;
        if k > self.n {
            return Err(FormError::DegreeOverflow(k, self.n));
        }
        let mut out = FiberForm::zero(self.n, k);
        for (ia, ca) in &self.coeffs {
            for (ib, cb) in &other.coeffs {
                let mut axes = ia.axes.clone();
                axes.extend_from_slice(&ib.axes);
                if let Some((idx, sign)) = MultiIndex::from_unsorted(self.n, &axes) {
                    let mut term = ca.clone() * cb.clone();
                    if sign < 0 {
                        term = -term;
                    }
                    out.add_term(idx, term);
                }
            }
        }
        Ok(out)
    }

    /// Interior product `i_X omega` with the vector `X` given by components.
    pub fn contract(&self, x: &[C]) -> Result<Self, FormError> {
        if self.k == 0 {
            return Err(FormError::ContractZeroForm);
        }
        let mut out = FiberForm::zero(self.n, self.k - 1);
        for (idx, c) in &self.coeffs {
            for (pos, &axis) in idx.axes().iter().enumerate() {
                let xc = &x[(axis - 1) as usize];
                if xc.is_zero() {
                    continue;
                }
                let mut term = c.clone() * xc.clone();
                if pos % 2 == 1 {
                    term = -term;
                }
                out.add_term(idx.without(axis), term);
            }
        }
        Ok(out)
    }

    /// Tangential projection `pi_t = i_{d_n}(dx_n ^ .)` in a boundary-normal
    /// frame with axis `n` normal: keeps components without `dx_n`.
    pub fn project_tangential(&self) -> Self {
        let mut out = FiberForm::zero(self.n, self.k);
        for (idx, c) in &self.coeffs {
            if !idx.contains(self.n) {
                out.add_term(idx.clone(), c.clone());
            }
        }
        out
    }

    /// Normal projection `pi_n = dx_n ^ (i_{d_n} .)`: keeps components with `dx_n`.
    pub fn project_normal(&self) -> Self {
        let mut out = FiberForm::zero(self.n, self.k);
        for (idx, c) in &self.coeffs {
            if idx.contains(self.n) {
                out.add_term(idx.clone(), c.clone());
            }
        }
        out
    }
}

/// Metric at a point: the matrix, its inverse, and the determinant.
#[derive(Clone, Debug)]
pub struct PointMetric<C: Coeff> {
    n: u8,
    g: Vec<Vec<C>>,
    ginv: Vec<Vec<C>>,
    det: C,
}

/// Determinant by Laplace expansion; matrices here are at most 5x5.
fn det_small<C: Coeff>(m: &[Vec<C>]) -> C {
    let n = m.len();
    match n {
        0 => C::one(),
        1 => m[0][0].clone(),
        _ => {
            let mut acc = C::zero();
            for col in 0..n {
                if m[0][col].is_zero() {
                    continue;
                }
                let minor: Vec<Vec<C>> = (1..n)
                    .map(|r| {
                        (0..n)
                            .filter(|&c| c != col)
                            .map(|c| m[r][c].clone())
                            .collect()
                    })
                    .collect();
                let mut term = m[0][col].clone() * det_small(&minor);
                if col % 2 == 1 {
                    term = -term;
                }
                acc = acc + term;
            }
            acc
        }
    }
}

fn invert_small<C: Coeff>(m: &[Vec<C>]) -> Result<Vec<Vec<C>>, ScalarError> {
    let n = m.len();
    let det = det_small(m);
    if det.is_zero() {
        return Err(ScalarError::DegenerateMetric("zero determinant".into()));
    }
    let mut inv = vec![vec![C::zero(); n]; n];
    for r in 0..n {
        for c in 0..n {
            let minor: Vec<Vec<C>> = (0..n)
                .filter(|&i| i != c)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != r)
                        .map(|j| m[i][j].clone())
                        .collect()
                })
                .collect();
            let mut cof = det_small(&minor);
            if (r + c) % 2 == 1 {
                cof = -cof;
            }
            inv[r][c] = cof.try_div(&det)?;
        }
    }
    Ok(inv)
}

impl<C: Coeff> PointMetric<C> {
    pub fn new(g: Vec<Vec<C>>) -> Result<Self, FormError> {
        let n = g.len() as u8;
        for row in &g {
            if row.len() != n as usize {
                return Err(FormError::DimensionMismatch(n, row.len() as u8));
            }
        }
        for i in 0..n as usize {
            for j in (i + 1)..n as usize {
                if g[i][j] != g[j][i] {
                    return Err(ScalarError::DegenerateMetric("not symmetric".into()).into());
                }
            }
        }
        let det = det_small(&g);
        let ginv = invert_small(&g)?;
        Ok(PointMetric { n, g, ginv, det })
    }

    pub fn flat(n: u8) -> Self {
        let g: Vec<Vec<C>> = (0..n as usize)
            .map(|i| {
                (0..n as usize)
                    .map(|j| if i == j { C::one() } else { C::zero() })
                    .collect()
            })
            .collect();
        PointMetric::new(g).expect("identity metric")
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn g(&self) -> &Vec<Vec<C>> {
        &self.g
    }

    pub fn ginv(&self) -> &Vec<Vec<C>> {
        &self.ginv
    }

    pub fn det(&self) -> &C {
        &self.det
    }

    /// Gram matrix entry of two basis k-forms: `det [g^(i_a j_b)]`.
    pub fn gram_basis(&self, a: &MultiIndex, b: &MultiIndex) -> C {
        let k = a.k() as usize;
        let m: Vec<Vec<C>> = (0..k)
            .map(|r| {
                (0..k)
                    .map(|c| {
                        self.ginv[(a.axes()[r] - 1) as usize][(b.axes()[c] - 1) as usize].clone()
                    })
                    .collect()
            })
            .collect();
        det_small(&m)
    }

    /// Raise an index: vector components of the covector `xi`.
    pub fn sharp(&self, xi: &[C]) -> Vec<C> {
        (0..self.n as usize)
            .map(|i| {
                let mut acc = C::zero();
                for j in 0..self.n as usize {
                    acc = acc + self.ginv[i][j].clone() * xi[j].clone();
                }
                acc
            })
            .collect()
    }
}

/// Metric inner product on k-forms: `sum_{I,J} w_I e_J det [g^(i_a j_b)]`.
pub fn gram_inner<C: Coeff>(
    g: &PointMetric<C>,
    a: &FiberForm<C>,
    b: &FiberForm<C>,
) -> Result<C, FormError> {
    if a.k() != b.k() {
        return Err(FormError::DegreeMismatch(a.k(), b.k()));
    }
    let mut acc = C::zero();
    for (ia, ca) in a.iter() {
        for (ib, cb) in b.iter() {
            acc = acc + ca.clone() * cb.clone() * g.gram_basis(ia, ib);
        }
    }
    Ok(acc)
}

/// Hodge star: the unique (n-k)-form with `eta ^ *w = <eta, w> mu` for all
/// k-forms `eta`, where `mu = sqrt(det g) dx_1...dx_n`.
pub fn hodge_star<C: Coeff>(
    g: &PointMetric<C>,
    w: &FiberForm<C>,
) -> Result<FiberForm<C>, FormError> {
    let sqrt_det = g.det().try_sqrt()?;
    let scaled = hodge_star_unnormalized(g, w)?;
    Ok(scaled.scale(&sqrt_det))
}

/// Hodge star without the volume factor: `hodge_star = sqrt(det g) * this`.
/// Stays inside the coefficient field, so exact-arithmetic identity tests can
/// fold the two volume factors of a double star into a single `det g`.
pub fn hodge_star_unnormalized<C: Coeff>(
    g: &PointMetric<C>,
    w: &FiberForm<C>,
) -> Result<FiberForm<C>, FormError> {
    let n = w.n();
    let k = w.k();
    let mut out = FiberForm::zero(n, n - k);
    for (i_idx, c) in w.iter() {
        for j_idx in MultiIndex::all(n, k) {
            let gram = g.gram_basis(i_idx, &j_idx);
            if gram.is_zero() {
                continue;
            }
            let (j_comp, sign) = j_idx.complement();
            let mut term = c.clone() * gram;
            if sign < 0 {
                term = -term;
            }
            out.add_term(j_comp, term);
        }
    }
    Ok(out)
}
