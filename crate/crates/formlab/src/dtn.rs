//! Numeric Dirichlet problem on the slab `T^{n-1} x [0, T]` and Fourier
//! probing of the Dirichlet-to-Neumann map on k-forms.
//!
//! The grid is uniform: periodic lateral axes of size N' on the unit torus
//! and a normal axis with `N_n` intervals over thickness T. The component
//! system `Delta u - w^2 u = 0` is discretized with second-order centered
//! differences (interior rows) and Dirichlet identity rows on the two
//! boundary slices. Solves use a fixed-point iteration preconditioned by the
//! exact flat inverse (lateral FFT + complex tridiagonal solve per mode),
//! which is deterministic and converges in one step for flat metrics.
//!
//! Conventions (recorded in export metadata): `x_n` is the distance to the
//! boundary, so the normal derivative is inward and flat DtN eigenvalues are
//! negative, `-|xi'| coth(|xi'| T)`; components are taken in the coordinate
//! frame of the input chart with no fiber projection.

use crate::expr::ExprError;
use crate::exterior::{FiberForm, FormError, MultiIndex, PointMetric};
use crate::geometry::{Deriv, FormOp, GeometryError, MetricBnf, OperatorBnf};
use crate::par;
use num::complex::Complex64;
use num::Zero;
use rustfft::FftPlanner;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DtnError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("solver did not converge: residual {residual} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("bad probe frequency: {0}")]
    BadFrequency(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform grid on `T^{n-1} x [0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabGrid {
    pub n: u8,
    /// nodes per periodic lateral axis
    pub lateral: usize,
    /// intervals along the normal axis (nodes 0..=normal)
    pub normal: usize,
    pub thickness: f64,
}

impl SlabGrid {
    pub fn new(n: u8, lateral: usize, normal: usize, thickness: f64) -> Result<SlabGrid, DtnError> {
        if n < 3 {
            return Err(DtnError::BadGrid("dimension must be at least 3".into()));
        }
        if lateral < 8 || normal < 8 {
            return Err(DtnError::BadGrid("grid sizes must be at least 8".into()));
        }
        if !(thickness > 0.0) {
            return Err(DtnError::BadGrid("thickness must be positive".into()));
        }
        Ok(SlabGrid {
            n,
            lateral,
            normal,
            thickness,
        })
    }

    pub fn m(&self) -> usize {
        self.n as usize - 1
    }

    pub fn h_lat(&self) -> f64 {
        1.0 / self.lateral as f64
    }

    pub fn h_n(&self) -> f64 {
        self.thickness / self.normal as f64
    }

    /// nodes in one component field
    pub fn volume(&self) -> usize {
        self.lateral.pow(self.m() as u32) * (self.normal + 1)
    }

    /// nodes in one boundary slice
    pub fn boundary(&self) -> usize {
        self.lateral.pow(self.m() as u32)
    }

    fn node(&self, lat: &[usize], t: usize) -> usize {
        let mut idx = 0usize;
        for &a in lat {
            idx = idx * self.lateral + a;
        }
        idx * (self.normal + 1) + t
    }

    fn decode(&self, mut idx: usize) -> (Vec<usize>, usize) {
        let t = idx % (self.normal + 1);
        idx /= self.normal + 1;
        let mut lat = vec![0usize; self.m()];
        for a in (0..self.m()).rev() {
            lat[a] = idx % self.lateral;
            idx /= self.lateral;
        }
        (lat, t)
    }

    fn decode_lat(&self, mut idx: usize) -> Vec<usize> {
        let mut lat = vec![0usize; self.m()];
        for a in (0..self.m()).rev() {
            lat[a] = idx % self.lateral;
            idx /= self.lateral;
        }
        lat
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let (lat, t) = self.decode(idx);
        let mut x: Vec<f64> = lat.iter().map(|&a| a as f64 * self.h_lat()).collect();
        x.push(t as f64 * self.h_n());
        x
    }

    pub fn boundary_coords(&self, bidx: usize) -> Vec<f64> {
        let lat = self.decode_lat(bidx);
        lat.iter().map(|&a| a as f64 * self.h_lat()).collect()
    }
}

/// Complex k-form field on a slab grid, one array per multi-index component.
#[derive(Debug, Clone)]
pub struct GridForm {
    pub grid: SlabGrid,
    pub k: u8,
    comps: Vec<MultiIndex>,
    pub data: Vec<Complex64>,
}

impl GridForm {
    pub fn zero(grid: &SlabGrid, k: u8) -> GridForm {
        let comps = MultiIndex::all(grid.n, k);
        let len = comps.len() * grid.volume();
        GridForm {
            grid: grid.clone(),
            k,
            comps,
            data: vec![Complex64::zero(); len],
        }
    }

    pub fn components(&self) -> &[MultiIndex] {
        &self.comps
    }

    pub fn comp_slice(&self, c: usize) -> &[Complex64] {
        let v = self.grid.volume();
        &self.data[c * v..(c + 1) * v]
    }

    pub fn comp_slice_mut(&mut self, c: usize) -> &mut [Complex64] {
        let v = self.grid.volume();
        &mut self.data[c * v..(c + 1) * v]
    }

    pub fn comp_position(&self, idx: &MultiIndex) -> Option<usize> {
        self.comps.iter().position(|c| c == idx)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Complex form field on the boundary torus; components are ambient
/// multi-indices (tangential ones do not contain the normal axis).
#[derive(Debug, Clone)]
pub struct BoundaryField {
    pub grid: SlabGrid,
    pub comps: Vec<MultiIndex>,
    pub data: Vec<Complex64>,
}

impl BoundaryField {
    pub fn zero(grid: &SlabGrid, comps: Vec<MultiIndex>) -> BoundaryField {
        let len = comps.len() * grid.boundary();
        BoundaryField {
            grid: grid.clone(),
            comps,
            data: vec![Complex64::zero(); len],
        }
    }

    pub fn comp_slice(&self, c: usize) -> &[Complex64] {
        let b = self.grid.boundary();
        &self.data[c * b..(c + 1) * b]
    }

    pub fn comp_slice_mut(&mut self, c: usize) -> &mut [Complex64] {
        let b = self.grid.boundary();
        &mut self.data[c * b..(c + 1) * b]
    }

    pub fn comp_position(&self, idx: &MultiIndex) -> Option<usize> {
        self.comps.iter().position(|c| c == idx)
    }
}

struct StencilTerm {
    out_c: usize,
    in_c: usize,
    deriv: Deriv,
    /// coefficient evaluated on the volume grid
    coeff: Vec<f64>,
}

/// Matrix-free finite-difference realization of a boundary-normal-form
/// operator: interior rows discretize the PDE, boundary rows are identity.
pub struct GridOp {
    pub grid: SlabGrid,
    pub k: u8,
    comps: Vec<MultiIndex>,
    terms: Vec<StencilTerm>,
}

/// Discretize the component system of `op` (coefficients evaluated at grid
/// nodes) with second-order centered differences.
pub fn assemble(op: &OperatorBnf, grid: &SlabGrid) -> Result<GridOp, DtnError> {
    if op.n != grid.n {
        return Err(DtnError::Shape(format!(
            "operator dimension {} vs grid {}",
            op.n, grid.n
        )));
    }
    let comps = MultiIndex::all(grid.n, op.k);
    let pruned = op.op.prune_numeric()?;
    let mut terms = Vec::new();
    let volume = grid.volume();
    for ((out, inp), dmap) in pruned.entries() {
        let out_c = comps.iter().position(|c| c == out).unwrap();
        let in_c = comps.iter().position(|c| c == inp).unwrap();
        for (deriv, coeff) in dmap {
            if deriv.len() > 2 {
                return Err(DtnError::Shape("operator order exceeds 2".into()));
            }
            let c = coeff.clone();
            let g = grid.clone();
            let field = par::map_indexed(volume, move |i| {
                c.eval(&g.coords(i)).unwrap_or(f64::NAN)
            });
            if field.iter().any(|v| !v.is_finite()) {
                return Err(DtnError::Shape(
                    "operator coefficient not finite on grid".into(),
                ));
            }
            terms.push(StencilTerm {
                out_c,
                in_c,
                deriv: deriv.clone(),
                coeff: field,
            });
        }
    }
    Ok(GridOp {
        grid: grid.clone(),
        k: op.k,
        comps,
        terms,
    })
}

impl GridOp {
    pub fn components(&self) -> &[MultiIndex] {
        &self.comps
    }

    /// Inspect the coefficient field of one stencil term.
    pub fn coefficient_field(
        &self,
        out: &MultiIndex,
        inp: &MultiIndex,
        deriv: &Deriv,
    ) -> Option<&[f64]> {
        let out_c = self.comps.iter().position(|c| c == out)?;
        let in_c = self.comps.iter().position(|c| c == inp)?;
        self.terms
            .iter()
            .find(|t| t.out_c == out_c && t.in_c == in_c && &t.deriv == deriv)
            .map(|t| t.coeff.as_slice())
    }

    /// Apply the full-field operator: identity on both boundary slices, the
    /// finite-difference PDE rows in the interior.
    pub fn apply(&self, u: &GridForm) -> GridForm {
        assert_eq!(u.grid, self.grid, "grid mismatch");
        let grid = &self.grid;
        let volume = grid.volume();
        let nt = grid.normal + 1;
        let m = grid.m();
        let h_lat = grid.h_lat();
        let h_n = grid.h_n();
        let ncomp = self.comps.len();
        let data = par::map_indexed(ncomp * volume, |flat| {
            let c = flat / volume;
            let idx = flat % volume;
            let t = idx % nt;
            if t == 0 || t == grid.normal {
                return u.data[flat];
            }
            // neighbor offsets: lateral axis a has stride lateral^(m-1-a)*nt
            // with periodic wrap; normal axis has stride 1
            let (lat, _) = grid.decode(idx);
            let shift = |axis: u8, step: i64| -> usize {
                // axis 1..=n
                if axis as usize == m + 1 {
                    (idx as i64 + step) as usize
                } else {
                    let a = axis as usize - 1;
                    let mut l = lat.clone();
                    l[a] = ((l[a] as i64 + step).rem_euclid(grid.lateral as i64)) as usize;
                    grid.node(&l, t)
                }
            };
            let mut acc = Complex64::zero();
            for term in &self.terms {
                if term.out_c != c {
                    continue;
                }
                let w = term.coeff[idx];
                if w == 0.0 {
                    continue;
                }
                let f = &u.data[term.in_c * volume..(term.in_c + 1) * volume];
                let h_of = |axis: u8| if axis as usize == m + 1 { h_n } else { h_lat };
                let v = match term.deriv.as_slice() {
                    [] => f[idx],
                    [a] => {
                        let h = h_of(*a);
                        (f[shift(*a, 1)] - f[shift(*a, -1)]) / (2.0 * h)
                    }
                    [a, b] if a == b => {
                        let h = h_of(*a);
                        (f[shift(*a, 1)] - 2.0 * f[idx] + f[shift(*a, -1)]) / (h * h)
                    }
                    [a, b] => {
                        // cross term: 4-corner second-order stencil
                        let ha = h_of(*a);
                        let hb = h_of(*b);
                        let pp = if *b as usize == m + 1 {
                            // combine lateral shift a with normal shift b
                            let base_p = shift(*a, 1);
                            let base_m = shift(*a, -1);
                            (f[base_p + 1] - f[base_p - 1] - f[base_m + 1] + f[base_m - 1])
                                / (4.0 * ha * hb)
                        } else {
                            let mut l = lat.clone();
                            let ai = *a as usize - 1;
                            let bi = *b as usize - 1;
                            let nl = grid.lateral as i64;
                            let mut corner = |da: i64, db: i64| {
                                l[ai] = ((lat[ai] as i64 + da).rem_euclid(nl)) as usize;
                                l[bi] = ((lat[bi] as i64 + db).rem_euclid(nl)) as usize;
                                let v = f[grid.node(&l, t)];
                                l[ai] = lat[ai];
                                l[bi] = lat[bi];
                                v
                            };
                            (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1))
                                / (4.0 * ha * hb)
                        };
                        pp
                    }
                    _ => unreachable!("order checked at assembly"),
                };
                acc += w * v;
            }
            acc
        });
        GridForm {
            grid: grid.clone(),
            k: u.k,
            comps: self.comps.clone(),
            data,
        }
    }
}

/// Exact inverse of the flat discrete operator `-sum d_i^2 - shift` with
/// Dirichlet identity rows: lateral FFT, then a complex tridiagonal solve per
/// mode along the normal axis.
pub struct FlatSolver {
    grid: SlabGrid,
    shift: f64,
    /// discrete lateral symbol per flattened lateral index
    kappa2: Vec<f64>,
}

impl FlatSolver {
    pub fn new(grid: &SlabGrid, shift: f64) -> FlatSolver {
        let m = grid.m();
        let nb = grid.boundary();
        let h2 = grid.h_lat() * grid.h_lat();
        let kappa2 = (0..nb)
            .map(|b| {
                let lat = grid.decode_lat(b);
                lat.iter()
                    .map(|&j| {
                        let th = 2.0 * std::f64::consts::PI * j as f64 / grid.lateral as f64;
                        (2.0 - 2.0 * th.cos()) / h2
                    })
                    .sum::<f64>()
            })
            .collect();
        let _ = m;
        FlatSolver {
            grid: grid.clone(),
            shift,
            kappa2,
        }
    }

    fn fft_lateral(&self, data: &mut [Complex64], inverse: bool) {
        let grid = &self.grid;
        let m = grid.m();
        let nt = grid.normal + 1;
        let nl = grid.lateral;
        let mut planner = FftPlanner::<f64>::new();
        let plan = if inverse {
            planner.plan_fft_inverse(nl)
        } else {
            planner.plan_fft_forward(nl)
        };
        let scale = if inverse { 1.0 / nl as f64 } else { 1.0 };
        // transform along each lateral axis in turn
        for axis in 0..m {
            let stride = nl.pow((m - 1 - axis) as u32) * nt;
            let lines = data.len() / nl;
            let mut buf = vec![Complex64::zero(); nl];
            for line in 0..lines {
                // map line number to a base index skipping the active axis
                let block = stride * nl;
                let outer = line / stride;
                let inner = line % stride;
                let base = outer * block + inner;
                for j in 0..nl {
                    buf[j] = data[base + j * stride];
                }
                plan.process(&mut buf);
                for j in 0..nl {
                    data[base + j * stride] = buf[j] * scale;
                }
            }
        }
    }

    /// Apply the inverse to a full field (per component).
    pub fn apply(&self, r: &GridForm) -> GridForm {
        let grid = &self.grid;
        let nt = grid.normal + 1;
        let nb = grid.boundary();
        let volume = grid.volume();
        let hn2 = grid.h_n() * grid.h_n();
        let mut out = r.clone();
        for c in 0..r.comps.len() {
            let slice = &mut out.data[c * volume..(c + 1) * volume];
            self.fft_lateral(slice, false);
            // tridiagonal solve per lateral mode: identity rows at t=0, normal
            par::for_each_chunk_mut(slice, nt, |b, chunk| {
                let diag = self.kappa2[b] + 2.0 / hn2 - self.shift;
                let off = -1.0 / hn2;
                // Thomas with first/last rows = identity
                let nn = nt - 1;
                let mut cp = vec![0.0f64; nt];
                let mut dp = vec![Complex64::zero(); nt];
                cp[0] = 0.0;
                dp[0] = chunk[0];
                for t in 1..nn {
                    let denom = diag - off * cp[t - 1];
                    cp[t] = off / denom;
                    let rhs = chunk[t] - off * dp[t - 1];
                    dp[t] = rhs / denom;
                }
                // last row: u = r
                dp[nn] = chunk[nn];
                cp[nn] = 0.0;
                chunk[nn] = dp[nn];
                for t in (1..nn).rev() {
                    chunk[t] = dp[t] - cp[t] * chunk[t + 1];
                }
                chunk[0] = dp[0];
            });
            let _ = nb;
            self.fft_lateral(slice, true);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solve the Dirichlet problem: PDE rows in the interior, `u = f` at
/// `x_n = 0`, `u = 0` at `x_n = T`. Fixed-point iteration preconditioned by
/// the exact flat inverse; fully deterministic.
pub fn solve_dirichlet(
    op: &GridOp,
    flat: &FlatSolver,
    f: &BoundaryField,
    tol: f64,
    max_iter: usize,
) -> Result<(GridForm, SolveStats), DtnError> {
    let grid = &op.grid;
    let nt = grid.normal + 1;
    let volume = grid.volume();
    // right-hand side: boundary rows carry the data, interior rows are zero
    let mut b = GridForm::zero(grid, op.k);
    for (ci, comp) in op.comps.iter().enumerate() {
        if let Some(fc) = f.comp_position(comp) {
            let src = f.comp_slice(fc).to_vec();
            let dst = b.comp_slice_mut(ci);
            for (bidx, v) in src.iter().enumerate() {
                dst[bidx * nt] = *v;
            }
        }
    }
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok((
            b,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut u = flat.apply(&b);
    let mut stats = SolveStats {
        iterations: 0,
        relative_residual: f64::INFINITY,
    };
    for it in 1..=max_iter {
        let au = op.apply(&u);
        let mut r = b.clone();
        for i in 0..r.data.len() {
            r.data[i] -= au.data[i];
        }
        let rnorm = r.norm() / bnorm;
        stats.iterations = it;
        stats.relative_residual = rnorm;
        if rnorm <= tol {
            let _ = volume;
            return Ok((u, stats));
        }
        let du = flat.apply(&r);
        for i in 0..u.data.len() {
            u.data[i] += du.data[i];
        }
    }
    Err(DtnError::NoConvergence {
        residual: stats.relative_residual,
        iterations: stats.iterations,
    })
}

/// Inward normal derivative of every component at `x_n = 0`, one-sided
/// fourth-order stencil.
pub fn normal_derivative(u: &GridForm) -> BoundaryField {
    let grid = &u.grid;
    let nt = grid.normal + 1;
    let h = grid.h_n();
    let w = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
    let mut out = BoundaryField::zero(grid, u.comps.clone());
    for c in 0..u.comps.len() {
        let src = u.comp_slice(c).to_vec();
        let dst = out.comp_slice_mut(c);
        for (bidx, slot) in dst.iter_mut().enumerate() {
            let base = bidx * nt;
            let mut acc = Complex64::zero();
            for (j, &wj) in w.iter().enumerate() {
                acc += wj * src[base + j];
            }
            *slot = acc / h;
        }
    }
    out
}

/// Solve with Dirichlet data `f` and return `Lambda f = (d_n u)|_{x_n=0}`.
pub fn lambda_apply(
    op: &GridOp,
    flat: &FlatSolver,
    f: &BoundaryField,
    tol: f64,
    max_iter: usize,
) -> Result<(BoundaryField, SolveStats), DtnError> {
    let (u, stats) = solve_dirichlet(op, flat, f, tol, max_iter)?;
    Ok((normal_derivative(&u), stats))
}

// ---------------------------------------------------------------------------
// Natural (invariant) boundary data
// ---------------------------------------------------------------------------

/// The natural Dirichlet and Neumann data of a solved form:
/// pullback `i*u`, starred pullback `i**u`, and the Neumann pair
/// `i**du`, `i*delta u`.
pub struct NaturalData {
    pub pullback: BoundaryField,
    pub star_pullback: BoundaryField,
    pub star_d: BoundaryField,
    pub delta_pullback: BoundaryField,
}

fn boundary_restrict(u: &GridForm, keep_normal: bool) -> BoundaryField {
    let grid = &u.grid;
    let nt = grid.normal + 1;
    let n = grid.n;
    let comps: Vec<MultiIndex> = if keep_normal {
        u.comps.clone()
    } else {
        u.comps.iter().filter(|c| !c.contains(n)).cloned().collect()
    };
    let mut out = BoundaryField::zero(grid, comps);
    for (oc, comp) in out.comps.clone().iter().enumerate() {
        let uc = u.comp_position(comp).unwrap();
        let src = u.comp_slice(uc).to_vec();
        let dst = out.comp_slice_mut(oc);
        for (bidx, slot) in dst.iter_mut().enumerate() {
            *slot = src[bidx * nt];
        }
    }
    out
}

/// Apply a first-order operator on the grid with one-sided fourth-order
/// normal derivatives at the boundary slice (used for d and delta when
/// extracting boundary data).
fn apply_first_order_at_boundary(
    op: &FormOp,
    metric: &MetricBnf,
    u: &GridForm,
) -> Result<BoundaryField, DtnError> {
    let grid = &u.grid;
    let nt = grid.normal + 1;
    let m = grid.m();
    let h_lat = grid.h_lat();
    let h_n = grid.h_n();
    let n = grid.n;
    let comps_out = MultiIndex::all(n, op.k_out());
    let pruned = op.prune_numeric()?;
    let mut out = BoundaryField::zero(grid, comps_out.clone());
    let w4 = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
    let nb = grid.boundary();
    for ((o, i), dmap) in pruned.entries() {
        let oc = comps_out.iter().position(|c| c == o).unwrap();
        let ic = u.comp_position(i).ok_or_else(|| {
            DtnError::Shape("operator input component missing from field".into())
        })?;
        let src = u.comp_slice(ic);
        for (deriv, coeff) in dmap {
            if deriv.len() > 1 {
                return Err(DtnError::Shape(
                    "boundary extraction supports order <= 1".into(),
                ));
            }
            let vals: Vec<Complex64> = (0..nb)
                .map(|bidx| {
                    let lat = grid.decode_lat(bidx);
                    let mut x = grid.boundary_coords(bidx);
                    x.push(0.0);
                    let w = coeff.eval(&x).unwrap_or(f64::NAN);
                    let v = match deriv.as_slice() {
                        [] => src[bidx * nt],
                        [a] if *a as usize == m + 1 => {
                            let base = bidx * nt;
                            let mut acc = Complex64::zero();
                            for (j, &wj) in w4.iter().enumerate() {
                                acc += wj * src[base + j];
                            }
                            acc / h_n
                        }
                        [a] => {
                            let ai = *a as usize - 1;
                            let nl = grid.lateral as i64;
                            let mut lp = lat.clone();
                            lp[ai] = ((lat[ai] as i64 + 1).rem_euclid(nl)) as usize;
                            let mut lm = lat.clone();
                            lm[ai] = ((lat[ai] as i64 - 1).rem_euclid(nl)) as usize;
                            (src[grid.node(&lp, 0)] - src[grid.node(&lm, 0)]) / (2.0 * h_lat)
                        }
                        _ => unreachable!(),
                    };
                    w * v
                })
                .collect();
            let dst = out.comp_slice_mut(oc);
            for (bidx, v) in vals.iter().enumerate() {
                dst[bidx] += v;
            }
        }
    }
    let _ = metric;
    Ok(out)
}

/// Pointwise Hodge star of a boundary field w.r.t. the ambient metric
/// restricted to the boundary slice.
fn star_boundary_slice(
    metric: &MetricBnf,
    u: &GridForm,
) -> Result<BoundaryField, DtnError> {
    let grid = &u.grid;
    let n = grid.n;
    let nt = grid.normal + 1;
    let k = u.k;
    let comps_out = MultiIndex::all(n, n - k);
    let mut out = BoundaryField::zero(grid, comps_out.clone());
    let nb = grid.boundary();
    for bidx in 0..nb {
        let mut x = grid.boundary_coords(bidx);
        x.push(0.0);
        let gp = metric.eval_metric(&x)?;
        let gc = PointMetric::<Complex64>::new(
            gp.g()
                .iter()
                .map(|row| row.iter().map(|&v| Complex64::new(v, 0.0)).collect())
                .collect(),
        )?;
        let mut w = FiberForm::<Complex64>::zero(n, k);
        for (c, comp) in u.comps.iter().enumerate() {
            w.set(comp.clone(), u.comp_slice(c)[bidx * nt]);
        }
        let sw = crate::exterior::hodge_star(&gc, &w)?;
        for (oc, comp) in comps_out.iter().enumerate() {
            out.comp_slice_mut(oc)[bidx] = sw.get(comp);
        }
    }
    Ok(out)
}

fn drop_normal_components(f: &BoundaryField) -> BoundaryField {
    let n = f.grid.n;
    let comps: Vec<MultiIndex> = f.comps.iter().filter(|c| !c.contains(n)).cloned().collect();
    let mut out = BoundaryField::zero(&f.grid, comps);
    for (oc, comp) in out.comps.clone().iter().enumerate() {
        let fc = f.comp_position(comp).unwrap();
        let src = f.comp_slice(fc).to_vec();
        out.comp_slice_mut(oc).copy_from_slice(&src);
    }
    out
}

/// Natural boundary data of a solved k-form.
pub fn natural_data(metric: &MetricBnf, u: &GridForm) -> Result<NaturalData, DtnError> {
    let n = metric.n();
    let k = u.k;
    let pullback = boundary_restrict(u, false);
    // i**u: star first (degree n-k), then pull back
    let star_pb = {
        let starred = star_boundary_slice(metric, u)?;
        drop_normal_components(&starred)
    };
    // i**du: compute du on the grid (first-order), star at the boundary,
    // pull back; build du as a GridForm restricted to the boundary by
    // evaluating d with one-sided normal stencils. For starring we need du
    // on the slice only.
    let star_d = {
        let d_op = FormOp::d(n, k);
        // du on the boundary slice as a BoundaryField with all components
        let du_b = apply_first_order_at_boundary(&d_op, metric, u)?;
        // star the slice values: assemble a FiberForm per boundary node
        let comps_out = MultiIndex::all(n, n - k - 1);
        let mut out = BoundaryField::zero(&u.grid, comps_out.clone());
        let nb = u.grid.boundary();
        for bidx in 0..nb {
            let mut x = u.grid.boundary_coords(bidx);
            x.push(0.0);
            let gp = metric.eval_metric(&x)?;
            let gc = PointMetric::<Complex64>::new(
                gp.g()
                    .iter()
                    .map(|row| row.iter().map(|&v| Complex64::new(v, 0.0)).collect())
                    .collect(),
            )?;
            let mut w = FiberForm::<Complex64>::zero(n, k + 1);
            for (c, comp) in du_b.comps.iter().enumerate() {
                w.set(comp.clone(), du_b.comp_slice(c)[bidx]);
            }
            let sw = crate::exterior::hodge_star(&gc, &w)?;
            for (oc, comp) in comps_out.iter().enumerate() {
                out.comp_slice_mut(oc)[bidx] = sw.get(comp);
            }
        }
        drop_normal_components(&out)
    };
    // i*(delta u)
    let delta_pullback = if k == 0 {
        BoundaryField::zero(&u.grid, vec![])
    } else {
        let delta_op = FormOp::codifferential(&metric.point_metric()?, k)?;
        let del = apply_first_order_at_boundary(&delta_op, metric, u)?;
        drop_normal_components(&del)
    };
    Ok(NaturalData {
        pullback,
        star_pullback: star_pb,
        star_d,
        delta_pullback,
    })
}

// ---------------------------------------------------------------------------
// Symbol probing
// ---------------------------------------------------------------------------

/// Probed symbol table of the DtN map: per (frequency, input component,
/// output component), the demodulated response field on the boundary and its
/// value at the lateral origin.
#[derive(Debug, Clone)]
pub struct DtnEstimate {
    pub grid: SlabGrid,
    pub k: u8,
    pub grid_id: String,
    /// (m, in, out) -> demodulated response on the boundary
    pub entries: BTreeMap<(Vec<i64>, MultiIndex, MultiIndex), Vec<Complex64>>,
}

impl DtnEstimate {
    /// value at the lateral origin x' = 0
    pub fn at_origin(&self, m: &[i64], inp: &MultiIndex, out: &MultiIndex) -> Option<Complex64> {
        self.entries
            .get(&(m.to_vec(), inp.clone(), out.clone()))
            .map(|f| f[0])
    }

    pub fn frequencies(&self) -> Vec<Vec<i64>> {
        let mut fs: Vec<Vec<i64>> = self.entries.keys().map(|(m, _, _)| m.clone()).collect();
        fs.dedup();
        fs
    }

    /// CSV columns: m1..m_{n-1}, in_index, out_index, re, im, grid_id
    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<(), DtnError> {
        let m = self.grid.m();
        let mut header: Vec<String> = (1..=m).map(|i| format!("m{}", i)).collect();
        header.extend(
            ["in_index", "out_index", "re", "im", "grid_id"]
                .iter()
                .map(|s| s.to_string()),
        );
        writeln!(w, "{}", header.join(","))?;
        for ((mv, inp, out), field) in &self.entries {
            let v = field[0];
            let mut row: Vec<String> = mv.iter().map(|x| x.to_string()).collect();
            row.push(index_label(inp));
            row.push(index_label(out));
            row.push(format!("{:.15e}", v.re));
            row.push(format!("{:.15e}", v.im));
            row.push(self.grid_id.clone());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// grid metadata and convention flags for the CSV sidecar
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.grid.n,
            "lateral": self.grid.lateral,
            "normal": self.grid.normal,
            "thickness": self.grid.thickness,
            "degree": self.k,
            "grid_id": self.grid_id,
            "conventions": {
                "normal_derivative": "inward (x_n = distance to boundary)",
                "dtn_sign": "negative eigenvalues, -|xi'| coth(|xi'| T) for flat",
                "frame": "coordinate frame of the input chart, no fiber projection",
            },
        })
    }
}

fn index_label(idx: &MultiIndex) -> String {
    if idx.axes().is_empty() {
        "0".to_string()
    } else {
        idx.axes()
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Build the lateral Fourier probe `e^{2 pi i m . x'}` on the boundary.
fn probe_field(grid: &SlabGrid, m: &[i64]) -> Vec<Complex64> {
    let nb = grid.boundary();
    (0..nb)
        .map(|b| {
            let lat = grid.decode_lat(b);
            let phase: f64 = lat
                .iter()
                .zip(m)
                .map(|(&a, &mi)| 2.0 * std::f64::consts::PI * mi as f64 * a as f64 / grid.lateral as f64)
                .sum();
            Complex64::new(phase.cos(), phase.sin())
        })
        .collect()
}

/// Probe `Lambda_g` at the given integer frequencies: for each frequency m
/// and input component I, solve with data `e^{2 pi i m . x'} dx_I` and record
/// the demodulated normal-derivative components.
pub fn probe_symbol(
    metric: &MetricBnf,
    k: u8,
    grid: &SlabGrid,
    frequencies: &[Vec<i64>],
    helmholtz: Option<f64>,
) -> Result<DtnEstimate, DtnError> {
    let op = match helmholtz {
        Some(w2) => {
            let base = OperatorBnf::laplacian(metric, k)?;
            base.helmholtz(&crate::expr::Expr::parse(&format!("{}", w2)).unwrap())
        }
        None => OperatorBnf::laplacian(metric, k)?,
    };
    let gop = assemble(&op, grid)?;
    let flat = FlatSolver::new(grid, helmholtz.unwrap_or(0.0));
    let comps = MultiIndex::all(grid.n, k);
    let nb = grid.boundary();
    let mut entries = BTreeMap::new();
    for m in frequencies {
        if m.len() != grid.m() {
            return Err(DtnError::BadFrequency(format!(
                "frequency {:?} has wrong arity",
                m
            )));
        }
        if m.iter().all(|&x| x == 0) {
            return Err(DtnError::BadFrequency(
                "zero frequency excluded (kernel of principal symbol scaling)".into(),
            ));
        }
        let probe = probe_field(grid, m);
        let conj: Vec<Complex64> = probe.iter().map(|z| z.conj()).collect();
        for inp in &comps {
            let mut f = BoundaryField::zero(grid, comps.clone());
            let ci = f.comp_position(inp).unwrap();
            f.comp_slice_mut(ci).copy_from_slice(&probe);
            let (lam, _) = lambda_apply(&gop, &flat, &f, 1e-10, 400)?;
            for (oc, out) in comps.iter().enumerate() {
                let field: Vec<Complex64> = (0..nb)
                    .map(|b| lam.comp_slice(oc)[b] * conj[b])
                    .collect();
                entries.insert((m.clone(), inp.clone(), out.clone()), field);
            }
        }
    }
    Ok(DtnEstimate {
        grid: grid.clone(),
        k,
        grid_id: format!(
            "slab-n{}-{}x{}-T{}",
            grid.n, grid.lateral, grid.normal, grid.thickness
        ),
        entries,
    })
}

/// Probe the tangential natural-data operator `u|_bd -> i**du` at the given
/// frequencies with tangential form probes; records demodulated components of
/// the starred Neumann data (degree n-1-k on the boundary).
pub fn probe_natural(
    metric: &MetricBnf,
    k: u8,
    grid: &SlabGrid,
    frequencies: &[Vec<i64>],
) -> Result<DtnEstimate, DtnError> {
    let op = OperatorBnf::laplacian(metric, k)?;
    let gop = assemble(&op, grid)?;
    let flat = FlatSolver::new(grid, 0.0);
    let n = grid.n;
    let comps = MultiIndex::all(n, k);
    let tangential: Vec<MultiIndex> = comps.iter().filter(|c| !c.contains(n)).cloned().collect();
    let nb = grid.boundary();
    let mut entries = BTreeMap::new();
    for m in frequencies {
        if m.iter().all(|&x| x == 0) {
            return Err(DtnError::BadFrequency("zero frequency excluded".into()));
        }
        let probe = probe_field(grid, m);
        let conj: Vec<Complex64> = probe.iter().map(|z| z.conj()).collect();
        for inp in &tangential {
            let mut f = BoundaryField::zero(grid, comps.clone());
            let ci = f.comp_position(inp).unwrap();
            f.comp_slice_mut(ci).copy_from_slice(&probe);
            let (u, _) = solve_dirichlet(&gop, &flat, &f, 1e-10, 400)?;
            let nat = natural_data(metric, &u)?;
            for (oc, out) in nat.star_d.comps.iter().enumerate() {
                let field: Vec<Complex64> = (0..nb)
                    .map(|b| nat.star_d.comp_slice(oc)[b] * conj[b])
                    .collect();
                entries.insert((m.clone(), inp.clone(), out.clone()), field);
            }
            // also record the plain DtN diagonal for normalization; star_d
            // components have degree n-1-k, so the keys never collide
            let lam = normal_derivative(&u);
            let lc = lam.comp_position(inp).unwrap();
            let field: Vec<Complex64> = (0..nb)
                .map(|b| lam.comp_slice(lc)[b] * conj[b])
                .collect();
            entries.insert((m.clone(), inp.clone(), inp.clone()), field);
        }
    }
    Ok(DtnEstimate {
        grid: grid.clone(),
        k,
        grid_id: format!(
            "slab-natural-n{}-{}x{}-T{}",
            grid.n, grid.lateral, grid.normal, grid.thickness
        ),
        entries,
    })
}

/// Flat-slab DtN eigenvalue oracle: `-s coth(s T)` with `s = 2 pi |m|`
/// (or `s = sqrt((2 pi |m|)^2 - w^2)` for Helmholtz).
pub fn flat_dtn_eigenvalue(m: &[i64], thickness: f64, helmholtz: Option<f64>) -> f64 {
    let xi2: f64 = m.iter().map(|&x| (x as f64).powi(2)).sum::<f64>()
        * (2.0 * std::f64::consts::PI).powi(2);
    let s2 = xi2 - helmholtz.unwrap_or(0.0);
    let s = s2.max(0.0).sqrt();
    if s == 0.0 {
        return -1.0 / thickness;
    }
    -s / (s * thickness).tanh()
}

/// Discrete lateral symbol `kappa^2(m)` of the centered second-difference
/// Laplacian; converges to `(2 pi |m|)^2` as the grid refines.
pub fn discrete_lateral_symbol(m: &[i64], grid: &SlabGrid) -> f64 {
    let h2 = grid.h_lat() * grid.h_lat();
    m.iter()
        .map(|&mi| {
            let th = 2.0 * std::f64::consts::PI * mi as f64 / grid.lateral as f64;
            (2.0 - 2.0 * th.cos()) / h2
        })
        .sum()
}

/// DtN reading the probe pipeline produces on a flat grid whose effective
/// lateral symbol value is `q > 0`: the exact discrete Dirichlet profile
/// `u_t = sinh(mu h (N_n - t)) / sinh(mu h N_n)` with
/// `cosh(mu h) = 1 + q h^2 / 2`, read through the fourth-order one-sided
/// derivative stencil. Negative and increasing in magnitude with `q`.
pub fn dtn_reading_for_q(q: f64, grid: &SlabGrid) -> f64 {
    let h = grid.h_n();
    let nn = grid.normal as f64;
    let muh = (1.0 + q * h * h / 2.0).acosh();
    // stable sinh ratio: sinh(muh (nn-j)) / sinh(muh nn)
    let prof = |j: f64| -> f64 {
        ((-muh * j).exp()) * (1.0 - (-2.0 * muh * (nn - j)).exp())
            / (1.0 - (-2.0 * muh * nn).exp())
    };
    let w = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
    let mut acc = 0.0;
    for (j, &wj) in w.iter().enumerate() {
        acc += wj * prof(j as f64);
    }
    acc / h
}

/// Invert [`dtn_reading_for_q`]: effective lateral symbol value from a DtN
/// eigenvalue reading (bisection; the reading is monotone in `q`).
pub fn effective_lateral_q(reading: f64, grid: &SlabGrid) -> f64 {
    let target = -reading.abs();
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while dtn_reading_for_q(hi, grid) > target && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dtn_reading_for_q(mid, grid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form prediction of the probed flat DtN eigenvalue on a given grid
/// (discrete dispersion included). Converges to [`flat_dtn_eigenvalue`] at
/// second order.
pub fn discrete_dtn_eigenvalue(m: &[i64], grid: &SlabGrid, helmholtz: Option<f64>) -> f64 {
    let q = discrete_lateral_symbol(m, grid) - helmholtz.unwrap_or(0.0);
    dtn_reading_for_q(q, grid)
}
