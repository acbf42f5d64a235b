#![allow(dead_code)]

use ggdr::{Mat, MeasureKind};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn fd_grad(x: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
    let mut g = Mat::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut p = x.clone();
            let mut m = x.clone();
            p[(i, j)] += FD_STEP;
            m[(i, j)] -= FD_STEP;
            g[(i, j)] = (f(&p) - f(&m)) / (2.0 * FD_STEP);
        }
    }
    g
}

pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    let s = a.norm().max(b.norm());
    if s == 0.0 {
        0.0
    } else {
        (a - b).norm() / s
    }
}

/// Thin QR with a positive diagonal, by modified Gram–Schmidt.
pub fn gram_schmidt(x: &Mat) -> (Mat, Mat) {
    let (m, k) = x.shape();
    let mut q = Mat::zeros(m, k);
    let mut r = Mat::zeros(k, k);
    for j in 0..k {
        let mut v = x.column(j).into_owned();
        for i in 0..j {
            let rij = q.column(i).dot(&v);
            r[(i, j)] = rij;
            v -= q.column(i) * rij;
        }
        let n = v.norm();
        r[(j, j)] = n;
        q.set_column(j, &(v / n));
    }
    (q, r)
}

/// The measures written with projectors and determinants of products.
pub fn projector_form(kind: MeasureKind, x1: &Mat, x2: &Mat) -> f64 {
    let p1 = x1 * x1.transpose();
    let p2 = x2 * x2.transpose();
    let a = x1.transpose() * x2;
    match kind {
        MeasureKind::ProjectionSq => 0.5 * (&p1 - &p2).norm_squared(),
        MeasureKind::FubiniStudy => a.determinant().abs().min(1.0).acos(),
        MeasureKind::BinetCauchyDistSq => 2.0 - 2.0 * a.determinant().abs(),
        MeasureKind::ProjectionKernelDistSq => (&p1 - &p2).norm_squared(),
        MeasureKind::BinetCauchyKernel => (&a * a.transpose()).determinant(),
    }
}

/// Each measure's defining formula, evaluated on arbitrary (not necessarily orthonormal) matrices.
pub fn ambient_form(kind: MeasureKind, x1: &Mat, x2: &Mat) -> f64 {
    match kind {
        MeasureKind::ProjectionKernelDistSq => {
            2.0 * x1.ncols() as f64 - 2.0 * (x1.transpose() * x2).norm_squared()
        }
        MeasureKind::FubiniStudy => (x1.transpose() * x2).determinant().abs().acos(),
        other => projector_form(other, x1, x2),
    }
}
