//! The five subspace measures, their gradients with respect to orthonormal
//! representatives, and the backward pass through the positive-diagonal QR.
//!
//! All measures are evaluated from the n×n product `A = Q₁ᵀQ₂`; no D×D
//! projector is ever formed outside of tests.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::manifold::{check_pair, orthonormalize, GrassmannPoint, MappingMatrix, Mat};

/// Smallest `|det A|` for which the Fubini–Study and Binet–Cauchy gradients are evaluated.
pub const SINGULAR_DET: f64 = 1e-12;
/// Fubini–Study gradients clamp `|det A|` to at most `1 − FS_UPPER_GUARD`.
pub const FS_UPPER_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Smaller values mean closer subspaces.
    DistanceLike,
    /// Larger values mean closer subspaces.
    SimilarityLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeasureKind {
    /// Squared projection F-norm distance, `Σ sin²θᵢ`.
    ProjectionSq,
    /// `arccos |det(Q₁ᵀQ₂)|`.
    FubiniStudy,
    /// `2 − 2 |det(Q₁ᵀQ₂)|`.
    BinetCauchyDistSq,
    /// `2n − 2 ‖Q₁ᵀQ₂‖²_F`.
    ProjectionKernelDistSq,
    /// `det(Q₁ᵀQ₂Q₂ᵀQ₁) = Π cos²θᵢ`, a similarity.
    BinetCauchyKernel,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 5] = [
        MeasureKind::ProjectionSq,
        MeasureKind::FubiniStudy,
        MeasureKind::BinetCauchyDistSq,
        MeasureKind::ProjectionKernelDistSq,
        MeasureKind::BinetCauchyKernel,
    ];

    pub fn orientation(self) -> Orientation {
        match self {
            MeasureKind::BinetCauchyKernel => Orientation::SimilarityLike,
            _ => Orientation::DistanceLike,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            MeasureKind::ProjectionSq => "p",
            MeasureKind::FubiniStudy => "fs",
            MeasureKind::BinetCauchyDistSq => "bc",
            MeasureKind::ProjectionKernelDistSq => "pk",
            MeasureKind::BinetCauchyKernel => "bck",
        }
    }

    /// Maps a measure value to a dissimilarity: the value itself for distances,
    /// `1 − k` for the kernel.
    pub fn as_dissimilarity(self, value: f64) -> f64 {
        match self.orientation() {
            Orientation::DistanceLike => value,
            Orientation::SimilarityLike => 1.0 - value,
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p" | "pro" | "projection" => Ok(MeasureKind::ProjectionSq),
            "fs" | "fubini-study" => Ok(MeasureKind::FubiniStudy),
            "bc" | "binet-cauchy" => Ok(MeasureKind::BinetCauchyDistSq),
            "pk" | "projection-kernel" => Ok(MeasureKind::ProjectionKernelDistSq),
            "bck" | "binet-cauchy-kernel" => Ok(MeasureKind::BinetCauchyKernel),
            other => Err(Error::InvalidOptions(format!(
                "unknown metric '{other}' (expected p, fs, bc, pk or bck)"
            ))),
        }
    }
}

fn det(a: &Mat) -> f64 {
    a.clone().lu().determinant()
}

/// Measure between two subspaces given by orthonormal bases.
pub fn measure(kind: MeasureKind, q1: &GrassmannPoint, q2: &GrassmannPoint) -> Result<f64> {
    check_pair(q1, q2)?;
    Ok(measure_orthonormal(kind, q1.basis(), q2.basis()))
}

/// Same as [`measure`] but trusts the caller that both bases are orthonormal.
pub(crate) fn measure_orthonormal(kind: MeasureKind, q1: &Mat, q2: &Mat) -> f64 {
    let n = q1.ncols() as f64;
    let a = q1.tr_mul(q2);
    match kind {
        MeasureKind::ProjectionSq => (n - a.norm_squared()).max(0.0),
        MeasureKind::ProjectionKernelDistSq => (2.0 * n - 2.0 * a.norm_squared()).max(0.0),
        MeasureKind::FubiniStudy => det(&a).abs().clamp(0.0, 1.0).acos(),
        MeasureKind::BinetCauchyDistSq => (2.0 - 2.0 * det(&a).abs()).max(0.0),
        MeasureKind::BinetCauchyKernel => det(&(&a * a.transpose())).clamp(0.0, 1.0),
    }
}

/// The measure formulas evaluated on arbitrary (not necessarily orthonormal) `m×n` matrices.
///
/// On orthonormal inputs this agrees with [`measure`]. Off the manifold it is the
/// natural extension whose ambient gradient [`measure_grad`] returns, which makes it
/// the function to difference when checking gradients entrywise. The projection
/// distance uses `½‖Q₁ᵀQ₁‖² + ½‖Q₂ᵀQ₂‖² − ‖Q₁ᵀQ₂‖²`, the Gram-matrix expansion of
/// `½‖Q₁Q₁ᵀ − Q₂Q₂ᵀ‖²_F`.
pub fn measure_ambient(kind: MeasureKind, q1: &Mat, q2: &Mat) -> Result<f64> {
    if q1.shape() != q2.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            q1.nrows(),
            q1.ncols(),
            q2.nrows(),
            q2.ncols()
        )));
    }
    let n = q1.ncols() as f64;
    let a = q1.tr_mul(q2);
    Ok(match kind {
        MeasureKind::ProjectionSq => {
            0.5 * q1.tr_mul(q1).norm_squared() + 0.5 * q2.tr_mul(q2).norm_squared()
                - a.norm_squared()
        }
        MeasureKind::ProjectionKernelDistSq => 2.0 * n - 2.0 * a.norm_squared(),
        MeasureKind::FubiniStudy => det(&a).abs().acos(),
        MeasureKind::BinetCauchyDistSq => 2.0 - 2.0 * det(&a).abs(),
        MeasureKind::BinetCauchyKernel => det(&(&a * a.transpose())),
    })
}

/// Gradients of a measure with respect to both orthonormal representatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub g1: Mat,
    pub g2: Mat,
    /// Set when `|det A|` had to be clamped away from 1 (Fubini–Study only).
    pub clamped: bool,
}

/// Determinant and inverse from one LU factorization.
fn det_and_inverse(a: &Mat) -> (f64, Option<Mat>) {
    let lu = a.clone().lu();
    let d = lu.determinant();
    (d, lu.try_inverse())
}

/// `det(B)·B⁻¹` for a symmetric positive semidefinite B, via its eigen-decomposition
/// when B is too close to singular for an inverse.
fn adjugate_spd(b: &Mat) -> Mat {
    let (d, inv) = det_and_inverse(b);
    if d.abs() > SINGULAR_DET {
        if let Some(inv) = inv {
            return inv * d;
        }
    }
    let eig = b.clone().symmetric_eigen();
    let k = eig.eigenvalues.len();
    let cof = DVector::from_fn(k, |i, _| {
        (0..k)
            .filter(|&j| j != i)
            .map(|j| eig.eigenvalues[j])
            .product::<f64>()
    });
    &eig.eigenvectors * Mat::from_diagonal(&cof) * eig.eigenvectors.transpose()
}

/// Gradient of the measure with respect to `A = Q₁ᵀQ₂`, for the determinant-based kinds.
fn grad_wrt_a(kind: MeasureKind, a: &Mat) -> Result<(Mat, bool)> {
    match kind {
        MeasureKind::FubiniStudy => {
            let (d, inv) = det_and_inverse(a);
            let abs = d.abs();
            if abs < SINGULAR_DET {
                return Err(Error::SingularPair { det: abs });
            }
            let inv = inv.ok_or(Error::SingularPair { det: abs })?;
            let clamped = abs > 1.0 - FS_UPPER_GUARD;
            let g = abs.clamp(SINGULAR_DET, 1.0 - FS_UPPER_GUARD);
            // |det A| A⁻ᵀ uses the true determinant; only the arccos slope is guarded
            let scale = -1.0 / (1.0 - g * g).sqrt();
            Ok((inv.transpose() * (scale * abs), clamped))
        }
        MeasureKind::BinetCauchyDistSq => {
            let (d, inv) = det_and_inverse(a);
            let abs = d.abs();
            if abs < SINGULAR_DET {
                return Err(Error::SingularPair { det: abs });
            }
            let inv = inv.ok_or(Error::SingularPair { det: abs })?;
            // (Q₂ᵀQ₁)⁻¹ = A⁻ᵀ
            Ok((inv.transpose() * (-2.0 * abs), false))
        }
        _ => unreachable!("only determinant-based measures differentiate through A"),
    }
}

pub fn measure_grad(
    kind: MeasureKind,
    q1: &GrassmannPoint,
    q2: &GrassmannPoint,
) -> Result<PairGradient> {
    check_pair(q1, q2)?;
    measure_grad_ambient(kind, q1.basis(), q2.basis())
}

/// [`measure_grad`] on raw matrices; the gradient of [`measure_ambient`].
pub fn measure_grad_ambient(kind: MeasureKind, q1: &Mat, q2: &Mat) -> Result<PairGradient> {
    if q1.shape() != q2.shape() {
        return Err(Error::DimensionMismatch(
            "pair bases differ in shape".into(),
        ));
    }
    let (g1, g2, clamped) = match kind {
        MeasureKind::ProjectionSq => {
            let g1 = (q1 * q1.tr_mul(q1) - q2 * q2.tr_mul(q1)) * 2.0;
            let g2 = (q2 * q2.tr_mul(q2) - q1 * q1.tr_mul(q2)) * 2.0;
            (g1, g2, false)
        }
        MeasureKind::ProjectionKernelDistSq => {
            let g1 = q2 * q2.tr_mul(q1) * -4.0;
            let g2 = q1 * q1.tr_mul(q2) * -4.0;
            (g1, g2, false)
        }
        MeasureKind::FubiniStudy | MeasureKind::BinetCauchyDistSq => {
            let a = q1.tr_mul(q2);
            let (ga, clamped) = grad_wrt_a(kind, &a)?;
            (q2 * ga.transpose(), q1 * ga, clamped)
        }
        MeasureKind::BinetCauchyKernel => {
            let a = q1.tr_mul(q2);
            let b = &a * a.transpose();
            let gb = adjugate_spd(&b);
            let sym = &gb + gb.transpose();
            let g1 = q2 * q2.tr_mul(q1) * &sym;
            let g2 = q1 * &sym * q1.tr_mul(q2);
            (g1, g2, false)
        }
    };
    Ok(PairGradient { g1, g2, clamped })
}

/// Strictly lower triangle of a square matrix (diagonal excluded).
fn strict_lower(a: &Mat) -> Mat {
    let mut l = a.clone();
    l.fill_upper_triangle(0.0, 0);
    l
}

fn check_square(a: &Mat) -> Result<()> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

/// `tril(A) − tril(A)ᵀ`, a skew-symmetric matrix.
///
/// `tril` keeps the strictly lower triangle. Both operators vanish on the
/// diagonal under either diagonal convention, so the choice does not change results.
pub fn atril(a: &Mat) -> Result<Mat> {
    check_square(a)?;
    let l = strict_lower(a);
    Ok(&l - l.transpose())
}

/// `tril(A) − tril(Aᵀ)`; zero for symmetric `A`.
pub fn btril(a: &Mat) -> Result<Mat> {
    check_square(a)?;
    Ok(strict_lower(a) - strict_lower(&a.transpose()))
}

/// Solves `Z Rᵀ = M` for `Z = M R⁻ᵀ`, with R upper triangular.
fn times_r_inv_t(m: &Mat, r: &Mat) -> Result<Mat> {
    let zt = r
        .solve_upper_triangular(&m.transpose())
        .ok_or(Error::SingularR)?;
    Ok(zt.transpose())
}

/// Backward pass through `X = QR`: given `∂L/∂Q` and `∂L/∂R`, returns `∂L/∂X`:
///
/// `((I − QQᵀ)ᵀ dQ + Q (Qᵀ dQ)_btril) R⁻ᵀ + Q (dR − (dR Rᵀ)_btril R⁻ᵀ)`.
pub fn qr_pullback(x: &Mat, q: &Mat, r: &Mat, dq: &Mat, dr: &Mat) -> Result<Mat> {
    let (m, k) = x.shape();
    if q.shape() != (m, k) || dq.shape() != (m, k) || r.shape() != (k, k) || dr.shape() != (k, k) {
        return Err(Error::DimensionMismatch(
            "qr_pullback expects x, q, dq of shape m x k and r, dr of shape k x k".into(),
        ));
    }
    if (0..k).any(|i| r[(i, i)] == 0.0 || !r[(i, i)].is_finite()) {
        return Err(Error::SingularR);
    }
    let mut out = qr_pullback_q(q, r, dq)?;
    if dr.iter().any(|v| *v != 0.0) {
        let corr = times_r_inv_t(&btril(&(dr * r.transpose()))?, r)?;
        out += q * (dr - corr);
    }
    Ok(out)
}

/// The `dQ` path of [`qr_pullback`] alone; the measures depend on `Q` only.
pub(crate) fn qr_pullback_q(q: &Mat, r: &Mat, dq: &Mat) -> Result<Mat> {
    let qt_dq = q.tr_mul(dq);
    let inner = dq - q * &qt_dq + q * btril(&qt_dq)?;
    times_r_inv_t(&inner, r)
}

/// Euclidean gradient with respect to `W` of `measure(kind, qf(WᵀX₁), qf(WᵀX₂))`.
pub fn pair_grad_w(
    kind: MeasureKind,
    w: &MappingMatrix,
    x1: &GrassmannPoint,
    x2: &GrassmannPoint,
) -> Result<Mat> {
    check_pair(x1, x2)?;
    if w.ambient_dim() != x1.ambient_dim() {
        return Err(Error::DimensionMismatch(format!(
            "mapping has D={}, points have D={}",
            w.ambient_dim(),
            x1.ambient_dim()
        )));
    }
    pair_grad_w_ambient(kind, w.matrix(), x1.basis(), x2.basis()).map(|(g, _)| g)
}

/// [`pair_grad_w`] for an arbitrary full-rank `W`. Also reports whether the
/// measure gradient was clamped.
pub fn pair_grad_w_ambient(kind: MeasureKind, w: &Mat, x1: &Mat, x2: &Mat) -> Result<(Mat, bool)> {
    let (q1, r1) = orthonormalize(&w.tr_mul(x1)).map_err(|e| e.at_sample(0))?;
    let (q2, r2) = orthonormalize(&w.tr_mul(x2)).map_err(|e| e.at_sample(1))?;
    let g = measure_grad_ambient(kind, &q1, &q2)?;
    let gy1 = qr_pullback_q(&q1, &r1, &g.g1)?;
    let gy2 = qr_pullback_q(&q2, &r2, &g.g2)?;
    // Y = WᵀX ⇒ ∂L/∂W = X (∂L/∂Y)ᵀ
    Ok((x1 * gy1.transpose() + x2 * gy2.transpose(), g.clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{random_orthogonal, random_point};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn line(d: usize, i: usize) -> GrassmannPoint {
        let mut m = Mat::zeros(d, 1);
        m[(i, 0)] = 1.0;
        GrassmannPoint::new(m).unwrap()
    }

    #[test]
    fn orientation_follows_kind() {
        for kind in MeasureKind::ALL {
            let expect = if kind == MeasureKind::BinetCauchyKernel {
                Orientation::SimilarityLike
            } else {
                Orientation::DistanceLike
            };
            assert_eq!(kind.orientation(), expect);
            assert_eq!(kind.short_name().parse::<MeasureKind>().unwrap(), kind);
        }
        assert!("nope".parse::<MeasureKind>().is_err());
    }

    #[test]
    fn identical_subspaces() {
        let q = random_point(7, 3, 1).unwrap();
        let expect = [0.0, 0.0, 0.0, 0.0, 1.0];
        for (kind, e) in MeasureKind::ALL.iter().zip(expect) {
            // FS takes arccos near 1, which loses half the digits
            let tol = if *kind == MeasureKind::FubiniStudy {
                1e-7
            } else {
                1e-12
            };
            assert_abs_diff_eq!(measure(*kind, &q, &q).unwrap(), e, epsilon = tol);
        }
    }

    #[test]
    fn orthogonal_lines() {
        let (a, b) = (line(2, 0), line(2, 1));
        let expect = [1.0, FRAC_PI_2, 2.0, 2.0, 0.0];
        for (kind, e) in MeasureKind::ALL.iter().zip(expect) {
            assert_abs_diff_eq!(measure(*kind, &a, &b).unwrap(), e, epsilon = 1e-15);
        }
    }

    #[test]
    fn measure_matches_ambient_form_on_manifold() {
        let a = random_point(12, 3, 5).unwrap();
        let b = random_point(12, 3, 6).unwrap();
        for kind in MeasureKind::ALL {
            assert_abs_diff_eq!(
                measure(kind, &a, &b).unwrap(),
                measure_ambient(kind, a.basis(), b.basis()).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn projection_grad_vanishes_on_identical() {
        let q = random_point(6, 2, 3).unwrap();
        let g = measure_grad(MeasureKind::ProjectionSq, &q, &q).unwrap();
        assert!(g.g1.norm() < 1e-14 && g.g2.norm() < 1e-14);
    }

    #[test]
    fn projection_kernel_grad_on_identical() {
        let q = random_point(6, 2, 4).unwrap();
        let g = measure_grad(MeasureKind::ProjectionKernelDistSq, &q, &q).unwrap();
        assert_abs_diff_eq!(g.g1, q.basis() * -4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.g2, q.basis() * -4.0, epsilon = 1e-14);
    }

    #[test]
    fn fubini_study_grad_is_clamped_on_identical() {
        let q = random_point(6, 2, 8).unwrap();
        let g = measure_grad(MeasureKind::FubiniStudy, &q, &q).unwrap();
        assert!(g.clamped);
        assert!(g.g1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn singular_pairs_are_reported() {
        let (a, b) = (line(3, 0), line(3, 1));
        for kind in [MeasureKind::FubiniStudy, MeasureKind::BinetCauchyDistSq] {
            assert!(matches!(
                measure_grad(kind, &a, &b),
                Err(Error::SingularPair { .. })
            ));
        }
        // the kernel gradient is the adjugate and stays defined
        let g = measure_grad(MeasureKind::BinetCauchyKernel, &a, &b).unwrap();
        assert!(g.g1.norm() < 1e-15);
    }

    #[test]
    fn adjugate_fallback_agrees_with_inverse() {
        let a = random_point(5, 3, 2).unwrap();
        let b = random_point(5, 3, 9).unwrap();
        let m = a.basis().tr_mul(b.basis());
        let spd = &m * m.transpose();
        let direct = spd.clone().try_inverse().unwrap() * det(&spd);
        let eig = spd.clone().symmetric_eigen();
        let prods: Vec<f64> = (0..3)
            .map(|i| {
                (0..3)
                    .filter(|&j| j != i)
                    .map(|j| eig.eigenvalues[j])
                    .product()
            })
            .collect();
        let via_eig = &eig.eigenvectors
            * Mat::from_diagonal(&DVector::from_vec(prods))
            * eig.eigenvectors.transpose();
        assert_abs_diff_eq!(direct, via_eig, epsilon = 1e-12);
        assert_abs_diff_eq!(adjugate_spd(&spd), direct, epsilon = 1e-15);
    }

    #[test]
    fn triangular_operators() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            atril(&a).unwrap(),
            Mat::from_row_slice(2, 2, &[0.0, -3.0, 3.0, 0.0])
        );
        assert_eq!(
            btril(&a).unwrap(),
            Mat::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0])
        );
        let z = Mat::zeros(3, 3);
        assert_eq!(atril(&z).unwrap(), z);
        assert_eq!(btril(&z).unwrap(), z);
        assert!(matches!(
            atril(&Mat::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
        assert!(matches!(
            btril(&Mat::zeros(3, 2)),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn btril_vanishes_on_symmetric() {
        for seed in 0..10 {
            let m = crate::manifold::random_orthogonal(4, seed) * 3.0;
            let s = &m + m.transpose();
            assert!(btril(&s).unwrap().norm() == 0.0);
        }
    }

    #[test]
    fn qr_pullback_zero_cotangent() {
        let x = random_point(6, 3, 1).unwrap().into_basis() * 2.0;
        let (q, r) = orthonormalize(&x).unwrap();
        let out = qr_pullback(&x, &q, &r, &Mat::zeros(6, 3), &Mat::zeros(3, 3)).unwrap();
        assert_eq!(out, Mat::zeros(6, 3));
    }

    #[test]
    fn qr_pullback_orthonormal_input_skew_cotangent() {
        let x = random_point(6, 3, 2).unwrap().into_basis();
        let (q, r) = orthonormalize(&x).unwrap();
        assert_abs_diff_eq!(r, Mat::identity(3, 3), epsilon = 1e-12);
        let s = random_orthogonal(3, 5);
        let skew = &s - s.transpose();
        let dq = &q * &skew
            + (Mat::identity(6, 6) - &q * q.transpose()) * random_point(6, 3, 9).unwrap().basis();
        let out = qr_pullback(&x, &q, &r, &dq, &Mat::zeros(3, 3)).unwrap();
        let qt_dq = q.tr_mul(&dq);
        let expect = &dq - &q * &qt_dq + &q * btril(&qt_dq).unwrap();
        assert_abs_diff_eq!(out, expect, epsilon = 1e-12);
    }

    #[test]
    fn qr_pullback_rejects_singular_r() {
        let x = Mat::identity(3, 2);
        let r = Mat::zeros(2, 2);
        assert!(matches!(
            qr_pullback(&x, &x, &r, &x, &r),
            Err(Error::SingularR)
        ));
    }

    #[test]
    fn pair_grad_w_vanishes_for_identical_points() {
        let w = MappingMatrix::random(10, 5, 3).unwrap();
        let x = random_point(10, 2, 4).unwrap();
        let g = pair_grad_w(MeasureKind::ProjectionSq, &w, &x, &x).unwrap();
        assert!(g.norm() < 1e-13);
    }

    #[test]
    fn pair_grad_w_equivariant_under_rotation() {
        let w = MappingMatrix::random(10, 5, 13).unwrap();
        let h = random_orthogonal(5, 14);
        let wh = w.rotated(&h).unwrap();
        let x1 = random_point(10, 2, 15).unwrap();
        let x2 = random_point(10, 2, 16).unwrap();
        for kind in MeasureKind::ALL {
            let g = pair_grad_w(kind, &w, &x1, &x2).unwrap();
            let gh = pair_grad_w(kind, &wh, &x1, &x2).unwrap();
            assert_abs_diff_eq!(gh, g * &h, epsilon = 1e-10);
        }
    }
}
