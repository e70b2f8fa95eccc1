//! Metrics in boundary normal form, curvature, and differential operators on
//! form fields.
//!
//! A metric in boundary normal form on the slab `{x_n in [0,T]}` is
//! `g = dx_n^2 + h(x', x_n)` with `h` a metric on the tangential axes
//! `x_1..x_{n-1}`. Operators on k-form fields are stored as [`FormOp`]:
//! matrices of scalar differential operators in `d/dx` form with closed-form
//! coefficients. Composition applies the Leibniz rule, so `d * d *`
//! assemblies stay exact at the expression level.

use crate::expr::{Expr, ExprError};
use crate::exterior::{hodge_star, FiberForm, FormError, MultiIndex, PointMetric};
use crate::par;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("bad metric: {0}")]
    BadMetric(String),
    #[error("incompatible operators: {0}")]
    Incompatible(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("operator not in boundary normal form: {0}")]
    NotNormalForm(String),
}

/// JSON wire format for a boundary-normal-form metric.
#[derive(Serialize, Deserialize)]
struct MetricJson {
    n: u8,
    h: Vec<Vec<String>>,
}

/// Metric `g = dx_n^2 + h` with `h` an (n-1)x(n-1) matrix of expressions in
/// `x1..xn`.
#[derive(Clone, Debug)]
pub struct MetricBnf {
    n: u8,
    h: Vec<Vec<Expr>>,
}

impl MetricBnf {
    pub fn new(n: u8, h: Vec<Vec<Expr>>) -> Result<Self, GeometryError> {
        let m = (n as usize).saturating_sub(1);
        if n < 2 {
            return Err(GeometryError::BadMetric("dimension must be >= 2".into()));
        }
        if h.len() != m || h.iter().any(|r| r.len() != m) {
            return Err(GeometryError::BadMetric(format!(
                "tangential block must be {}x{}",
                m, m
            )));
        }
        for row in &h {
            for e in row {
                if e.max_var() > n as usize {
                    return Err(GeometryError::BadMetric(format!(
                        "entry `{}` uses a variable beyond x{}",
                        e, n
                    )));
                }
            }
        }
        // symmetry is semantic, not syntactic: sample a fixed grid of points
        for i in 0..m {
            for j in (i + 1)..m {
                for p in sample_points(n as usize) {
                    let a = h[i][j].eval(&p)?;
                    let b = h[j][i].eval(&p)?;
                    if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                        return Err(GeometryError::BadMetric(format!(
                            "h[{}][{}] and h[{}][{}] differ at a sample point",
                            i + 1,
                            j + 1,
                            j + 1,
                            i + 1
                        )));
                    }
                }
            }
        }
        // store a syntactically symmetric copy
        let mut hs = h;
        for i in 0..m {
            for j in (i + 1)..m {
                hs[j][i] = hs[i][j].clone();
            }
        }
        Ok(MetricBnf { n, h: hs })
    }

    pub fn flat(n: u8) -> Self {
        let m = n as usize - 1;
        let h = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| if i == j { Expr::int(1) } else { Expr::int(0) })
                    .collect()
            })
            .collect();
        MetricBnf::new(n, h).expect("flat metric")
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let raw: MetricJson = serde_json::from_str(text)?;
        let mut h = Vec::with_capacity(raw.h.len());
        for row in &raw.h {
            let mut out = Vec::with_capacity(row.len());
            for s in row {
                out.push(Expr::parse(s)?);
            }
            h.push(out);
        }
        MetricBnf::new(raw.n, h)
    }

    pub fn to_json(&self) -> String {
        let raw = MetricJson {
            n: self.n,
            h: self
                .h
                .iter()
                .map(|row| row.iter().map(|e| format!("{}", e)).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("metric serializes")
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn h(&self) -> &Vec<Vec<Expr>> {
        &self.h
    }

    /// Full n x n matrix of `g` (tangential block `h`, `g_nn = 1`).
    pub fn full_matrix(&self) -> Vec<Vec<Expr>> {
        let n = self.n as usize;
        let mut g = vec![vec![Expr::int(0); n]; n];
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                g[i][j] = self.h[i][j].clone();
            }
        }
        g[n - 1][n - 1] = Expr::int(1);
        g
    }

    pub fn point_metric(&self) -> Result<PointMetric<Expr>, GeometryError> {
        Ok(PointMetric::new(self.full_matrix())?)
    }

    /// Numeric metric at a point.
    pub fn eval_metric(&self, x: &[f64]) -> Result<PointMetric<f64>, GeometryError> {
        let n = self.n as usize;
        let full = self.full_matrix();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = full[i][j].eval(x)?;
            }
        }
        Ok(PointMetric::new(g)?)
    }

    /// Tangential Taylor data: `h` and its normal derivatives at `x_n = 0`,
    /// `out[j][i][l] = (d^j h_il / dx_n^j)|_{x_n=0} / j!`.
    pub fn tangential_jets(&self, order: usize) -> Result<Vec<Vec<Vec<Expr>>>, GeometryError> {
        let m = self.n as usize - 1;
        let mut jets = vec![vec![vec![Expr::int(0); m]; m]; order + 1];
        for i in 0..m {
            for l in 0..m {
                let t = self.h[i][l].taylor_in_normal(self.n as usize, order)?;
                for (j, e) in t.into_iter().enumerate() {
                    jets[j][i][l] = e;
                }
            }
        }
        Ok(jets)
    }
}

fn sample_points(n: usize) -> Vec<Vec<f64>> {
    // fixed, irrational-ish interior points of the unit box
    let seeds = [0.317, 0.522, 0.781, 0.136, 0.664];
    seeds
        .iter()
        .map(|&s| (0..n).map(|i| (s + 0.23 * i as f64) % 1.0).collect())
        .collect()
}

/// Christoffel symbols of a full metric matrix: `gamma[k][i][j]` is
/// `Gamma^{k+1}_{(i+1)(j+1)}`.
pub fn christoffel(g: &PointMetric<Expr>) -> Vec<Vec<Vec<Expr>>> {
    let n = g.n() as usize;
    let gm = g.g();
    let ginv = g.ginv();
    let mut gamma = vec![vec![vec![Expr::int(0); n]; n]; n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..=i {
                let mut acc = Vec::new();
                for l in 0..n {
                    if ginv[k][l].is_const_zero() {
                        continue;
                    }
                    let inner = Expr::sum(vec![
                        gm[j][l].diff(i + 1),
                        gm[i][l].diff(j + 1),
                        Expr::neg1(gm[i][j].diff(l + 1)),
                    ]);
                    acc.push(Expr::mul2(ginv[k][l].clone(), inner));
                }
                let val = Expr::mul2(Expr::ratio(1, 2), Expr::sum(acc));
                gamma[k][i][j] = val.clone();
                gamma[k][j][i] = val;
            }
        }
    }
    gamma
}

/// Curvature of a full metric: `riem[i][j][k][l]` is `R^{i+1}_{(j+1)(k+1)(l+1)}`
/// with `R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + Gamma Gamma`.
pub struct Curvature {
    pub riem: Vec<Vec<Vec<Vec<Expr>>>>,
    pub ricci: Vec<Vec<Expr>>,
    pub scalar: Expr,
}

pub fn curvature(g: &PointMetric<Expr>) -> Curvature {
    let n = g.n() as usize;
    let gamma = christoffel(g);
    let mut riem = vec![vec![vec![vec![Expr::int(0); n]; n]; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut acc = vec![
                        gamma[i][l][j].diff(k + 1),
                        Expr::neg1(gamma[i][k][j].diff(l + 1)),
                    ];
                    for m in 0..n {
                        acc.push(Expr::mul2(gamma[i][k][m].clone(), gamma[m][l][j].clone()));
                        acc.push(Expr::neg1(Expr::mul2(
                            gamma[i][l][m].clone(),
                            gamma[m][k][j].clone(),
                        )));
                    }
                    riem[i][j][k][l] = Expr::sum(acc);
                }
            }
        }
    }
    let mut ricci = vec![vec![Expr::int(0); n]; n];
    for j in 0..n {
        for l in 0..n {
            ricci[j][l] = Expr::sum((0..n).map(|i| riem[i][j][i][l].clone()).collect());
        }
    }
    let ginv = g.ginv();
    let scalar = Expr::sum(
        (0..n)
            .flat_map(|j| {
                let ricci = &ricci;
                (0..n).map(move |l| Expr::mul2(ginv[j][l].clone(), ricci[j][l].clone()))
            })
            .collect(),
    );
    Curvature { riem, ricci, scalar }
}

/// Sorted multiset of differentiation axes, e.g. `[1, 1, 3]` is
/// `d^2/dx1^2 d/dx3`.
pub type Deriv = Vec<u8>;

fn deriv_with(d: &Deriv, axis: u8) -> Deriv {
    let mut out = d.clone();
    let pos = out.partition_point(|&a| a <= axis);
    out.insert(pos, axis);
    out
}

/// Matrix of scalar differential operators sending k_in-form fields to
/// k_out-form fields. Coefficients are closed-form expressions; derivatives
/// are plain `d/dx`.
#[derive(Clone, Debug)]
pub struct FormOp {
    n: u8,
    k_in: u8,
    k_out: u8,
    terms: BTreeMap<(MultiIndex, MultiIndex), BTreeMap<Deriv, Expr>>,
}

impl FormOp {
    pub fn zero(n: u8, k_in: u8, k_out: u8) -> Self {
        FormOp {
            n,
            k_in,
            k_out,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(n: u8, k: u8) -> Self {
        let mut op = FormOp::zero(n, k, k);
        for idx in MultiIndex::all(n, k) {
            op.add_term(idx.clone(), idx, vec![], Expr::int(1));
        }
        op
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn k_in(&self) -> u8 {
        self.k_in
    }

    pub fn k_out(&self) -> u8 {
        self.k_out
    }

    pub fn add_term(&mut self, out: MultiIndex, inp: MultiIndex, deriv: Deriv, coeff: Expr) {
        if coeff.is_const_zero() {
            return;
        }
        let cell = self.terms.entry((out, inp)).or_default();
        let slot = cell.entry(deriv.clone()).or_insert_with(|| Expr::int(0));
        *slot = Expr::add2(slot.clone(), coeff);
        if slot.is_const_zero() {
            cell.remove(&deriv);
        }
    }

    pub fn entries(
        &self,
    ) -> impl Iterator<Item = (&(MultiIndex, MultiIndex), &BTreeMap<Deriv, Expr>)> {
        self.terms.iter().filter(|(_, m)| !m.is_empty())
    }

    pub fn coefficient(&self, out: &MultiIndex, inp: &MultiIndex, deriv: &Deriv) -> Expr {
        self.terms
            .get(&(out.clone(), inp.clone()))
            .and_then(|m| m.get(deriv))
            .cloned()
            .unwrap_or_else(|| Expr::int(0))
    }

    pub fn order(&self) -> usize {
        self.entries()
            .flat_map(|(_, m)| m.keys().map(|d| d.len()))
            .max()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries().next().is_none()
    }

    pub fn scale(&self, s: &Expr) -> Self {
        let mut out = FormOp::zero(self.n, self.k_in, self.k_out);
        for ((o, i), m) in self.entries() {
            for (d, c) in m {
                out.add_term(o.clone(), i.clone(), d.clone(), Expr::mul2(s.clone(), c.clone()));
            }
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, GeometryError> {
        if (self.n, self.k_in, self.k_out) != (rhs.n, rhs.k_in, rhs.k_out) {
            return Err(GeometryError::Incompatible(
                "sum of operators with different shapes".into(),
            ));
        }
        let mut out = self.clone();
        for ((o, i), m) in rhs.entries() {
            for (d, c) in m {
                out.add_term(o.clone(), i.clone(), d.clone(), c.clone());
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, GeometryError> {
        self.add(&rhs.scale(&Expr::int(-1)))
    }

    /// Operator composition `self(rhs(u))` with the Leibniz expansion of
    /// derivatives falling on the inner coefficients.
    pub fn compose(&self, rhs: &Self) -> Result<Self, GeometryError> {
        if self.k_in != rhs.k_out || self.n != rhs.n {
            return Err(GeometryError::Incompatible(format!(
                "compose: left expects {}-forms, right produces {}-forms",
                self.k_in, rhs.k_out
            )));
        }
        let mut out = FormOp::zero(self.n, rhs.k_in, self.k_out);
        for ((o, mid), dmap_a) in self.entries() {
            for ((mid2, i), dmap_b) in rhs.entries() {
                if mid != mid2 {
                    continue;
                }
                for (da, ca) in dmap_a {
                    for (db, cb) in dmap_b {
                        // expand d_{da}(cb * d_{db} u) one axis at a time
                        let mut parts: Vec<(Expr, Deriv)> = vec![(cb.clone(), db.clone())];
                        for &axis in da {
                            let mut next = Vec::with_capacity(parts.len() * 2);
                            for (c, d) in parts {
                                let dc = c.diff(axis as usize);
                                if !dc.is_const_zero() {
                                    next.push((dc, d.clone()));
                                }
                                next.push((c, deriv_with(&d, axis)));
                            }
                            parts = next;
                        }
                        for (c, d) in parts {
                            out.add_term(o.clone(), i.clone(), d, Expr::mul2(ca.clone(), c));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Apply to a form field with closed-form coefficients.
    pub fn apply(&self, u: &FiberForm<Expr>) -> Result<FiberForm<Expr>, GeometryError> {
        if u.k() != self.k_in || u.n() != self.n {
            return Err(GeometryError::Incompatible(format!(
                "apply: operator expects {}-forms in dimension {}",
                self.k_in, self.n
            )));
        }
        let mut out = FiberForm::zero(self.n, self.k_out);
        for ((o, i), m) in self.entries() {
            let base = u.get(i);
            if base.is_const_zero() {
                continue;
            }
            for (d, c) in m {
                let mut der = base.clone();
                for &axis in d {
                    der = der.diff(axis as usize);
                }
                out.add_term(o.clone(), Expr::mul2(c.clone(), der));
            }
        }
        Ok(out)
    }

    /// Apply the principal symbol at `(x, xi)` to a constant form: every
    /// top-order term `c(x) d^D` contributes `c(x) (i xi)^D`. For an
    /// even-order operator the result is real.
    pub fn principal_symbol_apply(
        &self,
        x: &[f64],
        xi: &[f64],
        w: &FiberForm<f64>,
    ) -> Result<FiberForm<f64>, GeometryError> {
        let order = self.order();
        if order % 2 != 0 {
            return Err(GeometryError::Incompatible(
                "principal_symbol_apply requires even order".into(),
            ));
        }
        let sign = if order % 4 == 2 { -1.0 } else { 1.0 };
        let mut out = FiberForm::zero(self.n, self.k_out);
        for ((o, i), m) in self.entries() {
            let base = w.get(i);
            if base == 0.0 {
                continue;
            }
            for (d, c) in m {
                if d.len() != order {
                    continue;
                }
                let mut v = sign * c.eval(x)? * base;
                for &axis in d {
                    v *= xi[axis as usize - 1];
                }
                out.add_term(o.clone(), v);
            }
        }
        Ok(out)
    }

    /// Exterior derivative on k-forms.
    pub fn d(n: u8, k: u8) -> Self {
        let mut op = FormOp::zero(n, k, k + 1);
        for j in MultiIndex::all(n, k) {
            for axis in 1..=n {
                if j.contains(axis) {
                    continue;
                }
                let mut axes = vec![axis];
                axes.extend_from_slice(j.axes());
                let (idx, sign) = MultiIndex::from_unsorted(n, &axes).expect("no duplicates");
                op.add_term(idx, j.clone(), vec![axis], Expr::int(sign as i64));
            }
        }
        op
    }

    /// Hodge star as a zeroth-order operator.
    pub fn star(g: &PointMetric<Expr>, k: u8) -> Result<Self, GeometryError> {
        let n = g.n();
        let mut op = FormOp::zero(n, k, n - k);
        for j in MultiIndex::all(n, k) {
            let starred = hodge_star(g, &FiberForm::basis(n, j.clone()))?;
            for (o, c) in starred.iter() {
                op.add_term(o.clone(), j.clone(), vec![], c.clone());
            }
        }
        Ok(op)
    }

    /// Codifferential on k-forms: `(-1)^{n(k+1)+1} * d *`.
    pub fn codifferential(g: &PointMetric<Expr>, k: u8) -> Result<Self, GeometryError> {
        let n = g.n();
        if k == 0 {
            return Ok(FormOp::zero(n, 0, 0));
        }
        let s1 = FormOp::star(g, k)?;
        let d = FormOp::d(n, n - k);
        let s2 = FormOp::star(g, n - k + 1)?;
        let mut delta = s2.compose(&d.compose(&s1)?)?;
        let sign = (n as i64 * (k as i64 + 1) + 1) % 2;
        if sign != 0 {
            delta = delta.scale(&Expr::int(-1));
        }
        // star: (n-k+1)-forms -> k-1 forms
        delta.k_out = k - 1;
        Ok(delta)
    }

    /// Drop coefficients that vanish at every sample point — composition can
    /// leave syntactically nonzero terms that cancel semantically.
    pub fn prune_numeric(&self) -> Result<Self, GeometryError> {
        let points = sample_points(self.n as usize);
        let mut out = FormOp::zero(self.n, self.k_in, self.k_out);
        for ((o, i), m) in self.entries() {
            for (d, c) in m {
                let mut keep = false;
                for p in &points {
                    if c.eval(p)?.abs() > 1e-10 {
                        keep = true;
                        break;
                    }
                }
                if keep {
                    out.add_term(o.clone(), i.clone(), d.clone(), c.clone());
                }
            }
        }
        Ok(out)
    }
}

/// Hodge Laplacian `d delta + delta d` on k-forms, assembled from stars and
/// exterior derivatives.
pub fn laplacian_dd(metric: &MetricBnf, k: u8) -> Result<FormOp, GeometryError> {
    let g = metric.point_metric()?;
    let n = metric.n();
    let mut acc = FormOp::zero(n, k, k);
    if k < n {
        let d = FormOp::d(n, k);
        let delta = FormOp::codifferential(&g, k + 1)?;
        acc = acc.add(&delta.compose(&d)?)?;
    }
    if k > 0 {
        let delta = FormOp::codifferential(&g, k)?;
        let d = FormOp::d(n, k - 1);
        acc = acc.add(&d.compose(&delta)?)?;
    }
    Ok(acc)
}

/// Covariant derivative along axis `i` (1-based) acting on k-form component
/// arrays: `d_i` plus the Christoffel correction on each slot.
fn cov_op(n: u8, k: u8, i: usize, gamma: &[Vec<Vec<Expr>>]) -> FormOp {
    let mut op = FormOp::zero(n, k, k);
    // (nabla_i w)_K = d_i w_K - sum_a Gamma^m_{i k_a} w_{K: slot a -> m}
    for out in MultiIndex::all(n, k) {
        op.add_term(out.clone(), out.clone(), vec![i as u8], Expr::int(1));
        for (a, &ka) in out.axes().iter().enumerate() {
            for m in 1..=n {
                let coeff = &gamma[m as usize - 1][i - 1][ka as usize - 1];
                if coeff.is_const_zero() {
                    continue;
                }
                let mut axes = out.axes().to_vec();
                axes[a] = m;
                if let Some((idx, sign)) = MultiIndex::from_unsorted(n, &axes) {
                    op.add_term(
                        out.clone(),
                        idx,
                        vec![],
                        Expr::mul2(Expr::int(-(sign as i64)), coeff.clone()),
                    );
                }
            }
        }
    }
    op
}

/// Hodge Laplacian on k-forms assembled from the rough Laplacian plus the
/// curvature term: `nabla* nabla + q(R)` with
/// `(q(R) w)_I = sum_a Ric^m_{i_a} w_{I:a->m}
///             - sum_{a != b} R^m_{i_a}{}^p_{i_b} w_{I:a->m,b->p}`.
pub fn laplacian_weitzenbock(metric: &MetricBnf, k: u8) -> Result<FormOp, GeometryError> {
    let g = metric.point_metric()?;
    let n = metric.n();
    let nn = n as usize;
    let gamma = christoffel(&g);
    let ginv = g.ginv();

    let cov: Vec<FormOp> = (1..=nn).map(|i| cov_op(n, k, i, &gamma)).collect();
    let mut rough = FormOp::zero(n, k, k);
    for i in 0..nn {
        for j in 0..nn {
            if ginv[i][j].is_const_zero() {
                continue;
            }
            let mut second = cov[i].compose(&cov[j])?;
            for l in 0..nn {
                if gamma[l][i][j].is_const_zero() {
                    continue;
                }
                second = second.sub(&cov[l].scale(&gamma[l][i][j]))?;
            }
            rough = rough.add(&second.scale(&Expr::neg1(ginv[i][j].clone())))?;
        }
    }
    if k == 0 || k == n {
        return Ok(rough);
    }

    let curv = curvature(&g);
    // Ric^m_j = g^{mq} Ric_{qj}
    let mut ric_up = vec![vec![Expr::int(0); nn]; nn];
    for m in 0..nn {
        for j in 0..nn {
            ric_up[m][j] = Expr::sum(
                (0..nn)
                    .map(|q| Expr::mul2(ginv[m][q].clone(), curv.ricci[q][j].clone()))
                    .collect(),
            );
        }
    }
    let mut q_op = FormOp::zero(n, k, k);
    for out in MultiIndex::all(n, k) {
        let axes = out.axes().to_vec();
        for (a, &ia) in axes.iter().enumerate() {
            for m in 1..=nn {
                let coeff = ric_up[m - 1][ia as usize - 1].clone();
                if coeff.is_const_zero() {
                    continue;
                }
                let mut repl = axes.clone();
                repl[a] = m as u8;
                if let Some((inp, sign)) = MultiIndex::from_unsorted(n, &repl) {
                    q_op.add_term(
                        out.clone(),
                        inp,
                        vec![],
                        Expr::mul2(Expr::int(sign as i64), coeff),
                    );
                }
            }
        }
        for (a, &ia) in axes.iter().enumerate() {
            for (b, &ib) in axes.iter().enumerate() {
                if a == b {
                    continue;
                }
                for m in 1..=nn {
                    for p in 1..=nn {
                        // R^m_{i_a}{}^p_{i_b} = g^{pq} R^m_{i_a q i_b}
                        let coeff = Expr::sum(
                            (0..nn)
                                .map(|q| {
                                    Expr::mul2(
                                        ginv[p - 1][q].clone(),
                                        curv.riem[m - 1][ia as usize - 1][q]
                                            [ib as usize - 1]
                                            .clone(),
                                    )
                                })
                                .collect(),
                        );
                        if coeff.is_const_zero() {
                            continue;
                        }
                        let mut repl = axes.clone();
                        repl[a] = m as u8;
                        repl[b] = p as u8;
                        if let Some((inp, sign)) = MultiIndex::from_unsorted(n, &repl) {
                            q_op.add_term(
                                out.clone(),
                                inp,
                                vec![],
                                Expr::mul2(Expr::int(-(sign as i64)), coeff),
                            );
                        }
                    }
                }
            }
        }
    }
    rough.add(&q_op)
}

/// A Laplacian-type operator on the slab organized around the normal axis:
/// `L = -d_n^2 I + A1 d_n + T` with `A1` a zeroth-order matrix and `T` purely
/// tangential.
pub struct OperatorBnf {
    pub n: u8,
    pub k: u8,
    pub op: FormOp,
}

pub struct BnfSplit {
    /// Coefficient matrix of the single normal derivative.
    pub a1: BTreeMap<(MultiIndex, MultiIndex), Expr>,
    /// Terms with no normal derivative.
    pub tangential: FormOp,
}

impl OperatorBnf {
    pub fn laplacian(metric: &MetricBnf, k: u8) -> Result<Self, GeometryError> {
        Ok(OperatorBnf {
            n: metric.n(),
            k,
            op: laplacian_dd(metric, k)?,
        })
    }

    /// Shift by `-omega^2 I` (a Helmholtz operator keeps the same normal
    /// structure).
    pub fn helmholtz(&self, omega2: &Expr) -> Self {
        let shift = FormOp::identity(self.n, self.k).scale(&Expr::neg1(omega2.clone()));
        OperatorBnf {
            n: self.n,
            k: self.k,
            op: self.op.add(&shift).expect("same shape"),
        }
    }

    /// Split around the normal axis, verifying the `-d_n^2 I` leading block
    /// and the absence of mixed normal-tangential derivatives.
    pub fn split(&self) -> Result<BnfSplit, GeometryError> {
        let n_axis = self.n;
        let pruned = self.op.prune_numeric()?;
        let mut a1 = BTreeMap::new();
        let mut tangential = FormOp::zero(self.n, self.k, self.k);
        let points = sample_points(self.n as usize);
        for ((o, i), m) in pruned.entries() {
            for (d, c) in m {
                let normal_count = d.iter().filter(|&&a| a == n_axis).count();
                match normal_count {
                    0 => tangential.add_term(o.clone(), i.clone(), d.clone(), c.clone()),
                    1 => {
                        if d.len() != 1 {
                            return Err(GeometryError::NotNormalForm(format!(
                                "mixed derivative {:?} in entry ({:?}, {:?})",
                                d, o, i
                            )));
                        }
                        let slot = a1
                            .entry((o.clone(), i.clone()))
                            .or_insert_with(|| Expr::int(0));
                        *slot = Expr::add2(slot.clone(), c.clone());
                    }
                    2 => {
                        if d.len() != 2 {
                            return Err(GeometryError::NotNormalForm(format!(
                                "mixed derivative {:?} in entry ({:?}, {:?})",
                                d, o, i
                            )));
                        }
                        let expect = if o == i { -1.0 } else { 0.0 };
                        for p in &points {
                            let v = c.eval(p)?;
                            if (v - expect).abs() > 1e-8 {
                                return Err(GeometryError::NotNormalForm(format!(
                                    "d_n^2 coefficient is {} at a sample point, expected {}",
                                    v, expect
                                )));
                            }
                        }
                    }
                    _ => {
                        return Err(GeometryError::NotNormalForm(format!(
                            "normal derivative of order {} present",
                            normal_count
                        )))
                    }
                }
            }
        }
        a1.retain(|_, e: &mut Expr| !e.is_const_zero());
        Ok(BnfSplit { a1, tangential })
    }
}

/// Quadrature report for the integration-by-parts identity
/// `<u, L v> = <du, dv> + <delta u, delta v> + boundary` on the unit box.
#[derive(Debug, Clone, Copy)]
pub struct GreensReport {
    pub volume_lhs: f64,
    pub dirichlet_energy: f64,
    pub boundary: f64,
    pub defect: f64,
}

fn eval_form(u: &FiberForm<Expr>, x: &[f64]) -> Result<FiberForm<f64>, GeometryError> {
    let mut out = FiberForm::zero(u.n(), u.k());
    for (idx, c) in u.iter() {
        out.add_term(idx.clone(), c.eval(x)?);
    }
    Ok(out)
}

/// Trapezoid weights on `[0,1]` with `divs` intervals.
fn trapezoid(divs: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / divs as f64;
    let nodes: Vec<f64> = (0..=divs).map(|i| i as f64 * h).collect();
    let weights: Vec<f64> = (0..=divs)
        .map(|i| if i == 0 || i == divs { h / 2.0 } else { h })
        .collect();
    (nodes, weights)
}

/// Pairing defect of two k-form fields on `[0,1]^n` for the Hodge Laplacian
/// of `metric`. The identity used is
/// `int <u, Lap v> = int <du,dv> + <delta u, delta v>
///                   - int_bd u ^ *dv + int_bd delta v ^ *u`,
/// whose boundary-term signs were pinned by the flat-metric oracle.
pub fn greens_pairing(
    metric: &MetricBnf,
    u: &FiberForm<Expr>,
    v: &FiberForm<Expr>,
    divisions: usize,
) -> Result<GreensReport, GeometryError> {
    let n = metric.n();
    let nn = n as usize;
    let k = u.k();
    if v.k() != k || u.n() != n || v.n() != n {
        return Err(GeometryError::Incompatible(
            "pairing needs two k-form fields matching the metric dimension".into(),
        ));
    }
    let g_expr = metric.point_metric()?;
    let lap = laplacian_dd(metric, k)?;
    let lap_v = lap.apply(v)?;
    let d_op = if k < n { Some(FormOp::d(n, k)) } else { None };
    let delta_op = if k > 0 {
        Some(FormOp::codifferential(&g_expr, k)?)
    } else {
        None
    };
    let du = d_op.as_ref().map(|d| d.apply(u)).transpose()?;
    let dv = d_op.as_ref().map(|d| d.apply(v)).transpose()?;
    let delta_u = delta_op.as_ref().map(|d| d.apply(u)).transpose()?;
    let delta_v = delta_op.as_ref().map(|d| d.apply(v)).transpose()?;

    let (nodes, weights) = trapezoid(divisions);
    let per_axis = nodes.len();
    let total: usize = per_axis.pow(nn as u32);

    let volume_term = |a: &FiberForm<Expr>, b: &FiberForm<Expr>| -> Result<f64, GeometryError> {
        let a = a.clone();
        let b = b.clone();
        let metric = metric.clone();
        let nodes = nodes.clone();
        let weights = weights.clone();
        let vals = par::map_indexed(total, move |flat| {
            let mut x = vec![0.0; nn];
            let mut w = 1.0;
            let mut rem = flat;
            for axis in 0..nn {
                let i = rem % per_axis;
                rem /= per_axis;
                x[axis] = nodes[i];
                w *= weights[i];
            }
            let gp = metric.eval_metric(&x)?;
            let av = eval_form(&a, &x)?;
            let bv = eval_form(&b, &x)?;
            let inner = crate::exterior::gram_inner(&gp, &av, &bv)?;
            let vol = gp.det().sqrt();
            Ok::<f64, GeometryError>(w * inner * vol)
        });
        let mut acc = 0.0;
        for v in vals {
            acc += v?;
        }
        Ok(acc)
    };

    let volume_lhs = volume_term(u, &lap_v)?;
    let mut dirichlet_energy = 0.0;
    if let (Some(du_f), Some(dv_f)) = (&du, &dv) {
        dirichlet_energy += volume_term(du_f, dv_f)?;
    }
    if let (Some(su), Some(sv)) = (&delta_u, &delta_v) {
        dirichlet_energy += volume_term(su, sv)?;
    }

    // boundary integral of the (n-1)-form  -u ^ *dv + delta v ^ *u
    let face_total = per_axis.pow(nn as u32 - 1);
    let mut boundary = 0.0;
    for face_axis in 1..=nn {
        for (side, xval) in [(1.0f64, 1.0f64), (-1.0, 0.0)] {
            let orient = if (face_axis - 1) % 2 == 0 { 1.0 } else { -1.0 };
            let comp = MultiIndex::new(n, vec![face_axis as u8])
                .expect("axis index")
                .complement()
                .0;
            let u = u.clone();
            let dv = dv.clone();
            let delta_v = delta_v.clone();
            let metric = metric.clone();
            let nodes = nodes.clone();
            let weights = weights.clone();
            let comp_idx = comp.clone();
            let vals = par::map_indexed(face_total, move |flat| {
                let mut x = vec![0.0; nn];
                let mut w = 1.0;
                let mut rem = flat;
                for axis in 0..nn {
                    if axis + 1 == face_axis {
                        x[axis] = xval;
                        continue;
                    }
                    let i = rem % per_axis;
                    rem /= per_axis;
                    x[axis] = nodes[i];
                    w *= weights[i];
                }
                let gp = metric.eval_metric(&x)?;
                let uv = eval_form(&u, &x)?;
                let mut total_form = FiberForm::zero(n, n - 1);
                if let Some(dv_f) = &dv {
                    let star_dv = hodge_star(&gp, &eval_form(dv_f, &x)?)?;
                    total_form = total_form.add(&uv.wedge(&star_dv)?.scale(&-1.0))?;
                }
                if let Some(sv) = &delta_v {
                    let star_u = hodge_star(&gp, &uv)?;
                    let svv = eval_form(sv, &x)?;
                    total_form = total_form.add(&svv.wedge(&star_u)?)?;
                }
                Ok::<f64, GeometryError>(w * total_form.get(&comp_idx))
            });
            let mut acc = 0.0;
            for v in vals {
                acc += v?;
            }
            boundary += orient * side * acc;
        }
    }

    let defect = volume_lhs - dirichlet_energy - boundary;
    Ok(GreensReport {
        volume_lhs,
        dirichlet_energy,
        boundary,
        defect,
    })
}
