//! Grassmann points, orthonormalization, principal angles and the geodesic
//! machinery used by the optimizer on the search manifold G(d, D).
//!
//! A point of G(n, D) is stored as a D×n matrix with orthonormal columns; any
//! right-multiplication by an n×n orthogonal matrix represents the same point.
//! Tangent vectors at a basis `W` are horizontal, i.e. `Wᵀ H = 0`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::MeasureKind;

pub type Mat = DMatrix<f64>;

/// Tolerance on `‖XᵀX − I‖_F` for a basis handed to [`GrassmannPoint::new`].
pub const BASIS_TOL: f64 = 1e-10;
/// Tolerance on `‖WᵀW − I‖_F` for mapping matrices.
pub const MAPPING_TOL: f64 = 1e-8;
/// Tolerance on `‖Wᵀ H‖_F` for tangent vectors.
pub const TANGENT_TOL: f64 = 1e-8;
/// Relative singular-value floor below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// `‖MᵀM − I‖_F`.
pub fn orthonormality_error(m: &Mat) -> f64 {
    let mut g = m.tr_mul(m);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}

/// Thin QR of a full-column-rank `D×k` matrix with a strictly positive diagonal on `R`.
///
/// The sign convention makes the factorization unique, so repeated calls on the
/// same input are bit-identical.
pub fn orthonormalize(m: &Mat) -> Result<(Mat, Mat)> {
    let (rows, k) = m.shape();
    if k == 0 || k > rows {
        return Err(Error::InvalidShape(format!(
            "orthonormalize needs 1 <= k <= D, got {rows}x{k}"
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::RankDeficient { ratio: f64::NAN });
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    // R shares its singular values with m.
    let sv = r.singular_values();
    let max = sv.max();
    let min = sv.min();
    if max <= 0.0 || min <= RANK_TOL * max {
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        return Err(Error::RankDeficient { ratio });
    }
    Ok((q, r))
}

/// An n-dimensional subspace of ℝ^D, held as a D×n orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannPoint {
    basis: Mat,
}

impl GrassmannPoint {
    /// Wraps an orthonormal basis. `n = D` is accepted and denotes the single point of G(D, D).
    pub fn new(basis: Mat) -> Result<Self> {
        let (d, n) = basis.shape();
        if n == 0 || n > d {
            return Err(Error::InvalidShape(format!(
                "Grassmann basis must satisfy 1 <= n <= D, got {d}x{n}"
            )));
        }
        let error = orthonormality_error(&basis);
        if !(error <= BASIS_TOL) {
            return Err(Error::NotOrthonormal { error });
        }
        Ok(Self { basis })
    }

    /// Orthonormalizes an arbitrary full-column-rank matrix and keeps its column span.
    pub fn from_span(m: &Mat) -> Result<Self> {
        let (q, _) = orthonormalize(m)?;
        Ok(Self { basis: q })
    }

    pub(crate) fn from_orthonormal_unchecked(basis: Mat) -> Self {
        Self { basis }
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn into_basis(self) -> Mat {
        self.basis
    }

    /// Ambient dimension D.
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Subspace order n.
    pub fn order(&self) -> usize {
        self.basis.ncols()
    }

    /// The same subspace with basis `X·H` for an orthogonal `H`.
    pub fn rotated(&self, h: &Mat) -> Result<Self> {
        if h.shape() != (self.order(), self.order()) {
            return Err(Error::DimensionMismatch(format!(
                "rotation must be {n}x{n}",
                n = self.order()
            )));
        }
        Self::new(&self.basis * h)
    }

    /// Orthogonal projector `XXᵀ`. Forms a D×D matrix; meant for small D only.
    pub fn projector(&self) -> Mat {
        &self.basis * self.basis.transpose()
    }
}

/// Principal angles in `[0, π/2]`, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAngles(Vec<f64>);

impl PrincipalAngles {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|t| t * t).sum::<f64>().sqrt()
    }
}

fn check_same_shape(a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn check_pair(x1: &GrassmannPoint, x2: &GrassmannPoint) -> Result<()> {
    check_same_shape(&x1.basis, &x2.basis)
}

/// Cosines of the principal angles: singular values of `X₁ᵀX₂`, descending, clamped into `[0, 1]`.
pub fn principal_cosines(x1: &GrassmannPoint, x2: &GrassmannPoint) -> Result<DVector<f64>> {
    check_pair(x1, x2)?;
    let a = x1.basis.tr_mul(&x2.basis);
    let mut sv = a.svd(false, false).singular_values;
    for s in sv.iter_mut() {
        if *s > 1.0 + 1e-8 {
            log::warn!("principal cosine {s} exceeds 1 by more than 1e-8; inputs may have lost orthonormality");
        }
        *s = s.clamp(0.0, 1.0);
    }
    Ok(sv)
}

/// Ascending principal angles. Angles below π/4 come from the sines, the singular values
/// of `X₂ − X₁X₁ᵀX₂`, since `acos` loses half the digits near 1.
pub fn principal_angles(x1: &GrassmannPoint, x2: &GrassmannPoint) -> Result<PrincipalAngles> {
    let cos = principal_cosines(x1, x2)?;
    let resid = &x2.basis - &x1.basis * x1.basis.tr_mul(&x2.basis);
    let sin = resid.svd(false, false).singular_values;
    let n = cos.len();
    // descending cosines pair with ascending sines
    let angles = (0..n)
        .map(|i| {
            let c = cos[i];
            if c > std::f64::consts::FRAC_1_SQRT_2 {
                sin[n - 1 - i].min(1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect();
    Ok(PrincipalAngles(angles))
}

/// Arc length `‖Θ‖₂` of the shortest geodesic between two subspaces.
pub fn geodesic_distance(x1: &GrassmannPoint, x2: &GrassmannPoint) -> Result<f64> {
    Ok(principal_angles(x1, x2)?.norm())
}

/// Uniformly distributed point of G(n, D), deterministic in `seed`.
pub fn random_point(ambient: usize, order: usize, seed: u64) -> Result<GrassmannPoint> {
    if order == 0 || order >= ambient {
        return Err(Error::InvalidShape(format!(
            "random_point needs 1 <= n < D, got D={ambient}, n={order}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A Gaussian matrix is full rank with probability one; redraw on the measure-zero failure.
    loop {
        let m = gaussian_matrix(ambient, order, &mut rng);
        if let Ok(p) = GrassmannPoint::from_span(&m) {
            return Ok(p);
        }
    }
}

pub(crate) fn gaussian_matrix<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random orthogonal k×k matrix (Haar-distributed up to the QR sign convention).
pub fn random_orthogonal(k: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let m = gaussian_matrix(k, k, &mut rng);
        if let Ok((q, _)) = orthonormalize(&m) {
            return q;
        }
    }
}

/// Metadata recorded with a trained map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappingMeta {
    pub order: usize,
    pub kind: MeasureKind,
}

/// A D×d matrix with orthonormal columns; itself a point of G(d, D).
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix {
    w: Mat,
    meta: Option<MappingMeta>,
}

impl MappingMatrix {
    /// Accepts `1 <= d <= D`; `d = D` is the degenerate case where every map is an isometry.
    pub fn new(w: Mat) -> Result<Self> {
        let (big, small) = w.shape();
        if small == 0 || small > big {
            return Err(Error::InvalidShape(format!(
                "mapping must be D x d with 1 <= d <= D, got {big}x{small}"
            )));
        }
        let error = orthonormality_error(&w);
        if !(error <= MAPPING_TOL) {
            return Err(Error::NotOrthonormal { error });
        }
        Ok(Self { w, meta: None })
    }

    /// Truncated identity `I_{D×d}`.
    pub fn identity(ambient: usize, reduced: usize) -> Result<Self> {
        Self::new(Mat::identity(ambient, reduced))
    }

    pub fn random(ambient: usize, reduced: usize, seed: u64) -> Result<Self> {
        if reduced == ambient {
            return Self::identity(ambient, reduced);
        }
        Ok(Self {
            w: random_point(ambient, reduced, seed)?.into_basis(),
            meta: None,
        })
    }

    pub(crate) fn from_orthonormal_unchecked(w: Mat) -> Self {
        Self { w, meta: None }
    }

    pub fn with_meta(mut self, meta: MappingMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn meta(&self) -> Option<MappingMeta> {
        self.meta
    }

    pub fn matrix(&self) -> &Mat {
        &self.w
    }

    pub fn ambient_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn reduced_dim(&self) -> usize {
        self.w.ncols()
    }

    /// The same subspace with basis `W·H`.
    pub fn rotated(&self, h: &Mat) -> Result<Self> {
        if h.shape() != (self.reduced_dim(), self.reduced_dim()) {
            return Err(Error::DimensionMismatch("rotation must be d x d".into()));
        }
        Self::new(&self.w * h).map(|m| Self {
            meta: self.meta,
            ..m
        })
    }
}

/// A horizontal tangent vector at some mapping matrix.
///
/// The base point is not stored; callers pass it to the geometric operations and
/// it is re-checked there.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    h: Mat,
}

impl TangentVector {
    pub fn new(base: &MappingMatrix, h: Mat) -> Result<Self> {
        let t = Self { h };
        t.check_at(base)?;
        Ok(t)
    }

    /// Horizontal projection `(I − WWᵀ)M`, computed without forming the D×D projector.
    pub fn project(base: &MappingMatrix, m: &Mat) -> Result<Self> {
        if m.shape() != base.w.shape() {
            return Err(Error::DimensionMismatch(format!(
                "tangent must be {}x{}",
                base.w.nrows(),
                base.w.ncols()
            )));
        }
        Ok(Self {
            h: m - &base.w * base.w.tr_mul(m),
        })
    }

    pub fn zero(base: &MappingMatrix) -> Self {
        Self {
            h: Mat::zeros(base.w.nrows(), base.w.ncols()),
        }
    }

    pub(crate) fn from_matrix_unchecked(h: Mat) -> Self {
        Self { h }
    }

    pub fn matrix(&self) -> &Mat {
        &self.h
    }

    pub fn norm(&self) -> f64 {
        self.h.norm()
    }

    pub fn inner(&self, other: &TangentVector) -> f64 {
        self.h.dot(&other.h)
    }

    /// `‖Wᵀ H‖_F`.
    pub fn tangency_error(&self, base: &MappingMatrix) -> f64 {
        base.w.tr_mul(&self.h).norm()
    }

    fn check_at(&self, base: &MappingMatrix) -> Result<()> {
        if self.h.shape() != base.w.shape() {
            return Err(Error::DimensionMismatch(format!(
                "tangent is {}x{}, base is {}x{}",
                self.h.nrows(),
                self.h.ncols(),
                base.w.nrows(),
                base.w.ncols()
            )));
        }
        let err = self.tangency_error(base);
        if !(err <= TANGENT_TOL * self.h.norm().max(1.0)) {
            return Err(Error::InvalidShape(format!(
                "matrix is not tangent at the base point (||WᵀH||_F = {err:e})"
            )));
        }
        Ok(())
    }
}

/// The Grassmann geodesic `t ↦ W V cos(Σt) Vᵀ + U sin(Σt) Vᵀ` for the thin SVD `H = UΣVᵀ`.
///
/// Holds the SVD so that a line search can evaluate many step lengths and then
/// transport vectors to the accepted point without refactoring `H`.
#[derive(Debug, Clone)]
pub struct Geodesic {
    start: Mat,
    wv: Mat,
    u: Mat,
    sigma: DVector<f64>,
    vt: Mat,
}

impl Geodesic {
    pub fn new(w: &MappingMatrix, h: &TangentVector) -> Result<Self> {
        h.check_at(w)?;
        let svd = h.h.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let wv = &w.w * vt.transpose();
        Ok(Self {
            start: w.w.clone(),
            wv,
            u,
            sigma: svd.singular_values,
            vt,
        })
    }

    /// Point at time `t`, re-orthonormalized with the positive-diagonal QR.
    pub fn point(&self, t: f64) -> MappingMatrix {
        if t == 0.0 || self.sigma.iter().all(|s| *s == 0.0) {
            return MappingMatrix::from_orthonormal_unchecked(self.start.clone());
        }
        let k = self.sigma.len();
        let mut a = self.wv.clone();
        let mut b = self.u.clone();
        for j in 0..k {
            let (s, c) = (self.sigma[j] * t).sin_cos();
            a.column_mut(j).scale_mut(c);
            b.column_mut(j).scale_mut(s);
        }
        let raw = (a + b) * &self.vt;
        let q = match orthonormalize(&raw) {
            Ok((q, _)) => q,
            // the geodesic formula is orthonormal analytically; QR can only fail on non-finite input
            Err(_) => raw,
        };
        MappingMatrix::from_orthonormal_unchecked(q)
    }

    /// Parallel transport of a tangent vector at the start point to time `t`:
    /// `(−W V sin(Σt) Uᵀ + U cos(Σt) Uᵀ + I − UUᵀ) Δ`.
    pub fn transport(&self, v: &TangentVector, t: f64) -> TangentVector {
        if t == 0.0 {
            return v.clone();
        }
        let k = self.sigma.len();
        let ut_v = self.u.tr_mul(&v.h);
        let mut sin_part = ut_v.clone();
        let mut cos_part = ut_v;
        for j in 0..k {
            let (s, c) = (self.sigma[j] * t).sin_cos();
            sin_part.row_mut(j).scale_mut(s);
            cos_part.row_mut(j).scale_mut(c - 1.0);
        }
        let h = &v.h - &self.wv * sin_part + &self.u * cos_part;
        TangentVector { h }
    }
}

/// One step of length `t` along the geodesic leaving `w` in direction `h`.
pub fn geodesic_step(w: &MappingMatrix, h: &TangentVector, t: f64) -> Result<MappingMatrix> {
    Ok(Geodesic::new(w, h)?.point(t).with_meta_from(w))
}

/// Transports `hmove` (tangent at `w0`) along the geodesic from `w0` with direction `hdir`
/// for time `t`. The result is tangent at `geodesic_step(w0, hdir, t)`.
pub fn parallel_transport(
    hmove: &TangentVector,
    w0: &MappingMatrix,
    hdir: &TangentVector,
    t: f64,
) -> Result<TangentVector> {
    hmove.check_at(w0)?;
    let geo = Geodesic::new(w0, hdir)?;
    Ok(geo.transport(hmove, t))
}

impl MappingMatrix {
    fn with_meta_from(mut self, other: &MappingMatrix) -> Self {
        self.meta = other.meta;
        self
    }
}
