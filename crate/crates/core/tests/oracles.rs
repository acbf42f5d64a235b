//! Analytic derivatives against central finite differences.

mod common;

use common::*;
use ggdr::affinity::{build_affinity, dissimilarity_matrix};
use ggdr::manifold::{random_point, MappingMatrix};
use ggdr::metrics::{measure, measure_grad, pair_grad_w, qr_pullback};
use ggdr::objective::{cost_ambient, euclidean_grad, Problem};
use ggdr::{Error, GrassmannPoint, Mat, MeasureKind};

const TOL: f64 = 1e-5;

fn guarded(e: &Error) -> bool {
    e.is_numerical()
}

#[test]
fn table_one_forms_match_on_random_pairs() {
    for seed in 0..40 {
        let x1 = random_point(12, 3, 2 * seed).unwrap();
        let x2 = random_point(12, 3, 2 * seed + 1).unwrap();
        for kind in MeasureKind::ALL {
            let v = measure(kind, &x1, &x2).unwrap();
            let o = projector_form(kind, x1.basis(), x2.basis());
            assert!((v - o).abs() <= 1e-10, "{kind} seed {seed}: {v} vs {o}");
        }
    }
}

#[test]
fn measure_grad_matches_finite_differences() {
    for kind in MeasureKind::ALL {
        let (mut checked, mut skipped) = (0, 0);
        for seed in 0..60u64 {
            let x1 = random_point(8, 2, 100 + 2 * seed).unwrap();
            let x2 = random_point(8, 2, 101 + 2 * seed).unwrap();
            let g = match measure_grad(kind, &x1, &x2) {
                Ok(g) if !g.clamped => g,
                Ok(_) => {
                    skipped += 1;
                    continue;
                }
                Err(e) if guarded(&e) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => panic!("{e}"),
            };
            let fd1 = fd_grad(x1.basis(), |m| ambient_form(kind, m, x2.basis()));
            let fd2 = fd_grad(x2.basis(), |m| ambient_form(kind, x1.basis(), m));
            let e1 = rel_err(&g.g1, &fd1);
            let e2 = rel_err(&g.g2, &fd2);
            assert!(e1 <= TOL && e2 <= TOL, "{kind} seed {seed}: {e1:e} {e2:e}");
            checked += 1;
        }
        assert!(
            checked >= 50,
            "{kind}: only {checked} checked, {skipped} guarded"
        );
    }
}

#[test]
fn qr_pullback_matches_finite_differences() {
    let mut r = rng(5);
    for trial in 0..50 {
        let x = gaussian(6, 3, &mut r);
        let c = gaussian(6, 3, &mut r);
        let e = gaussian(3, 3, &mut r).upper_triangle();
        let loss = |m: &Mat| {
            let (q, rr) = gram_schmidt(m);
            (q - &c).norm_squared() + (rr - &e).norm_squared()
        };
        let (q, rr) = gram_schmidt(&x);
        let dq = (&q - &c) * 2.0;
        let dr = (&rr - &e) * 2.0;
        let g = qr_pullback(&x, &q, &rr, &dq, &dr).unwrap();
        let fd = fd_grad(&x, loss);
        let err = rel_err(&g, &fd);
        assert!(err <= TOL, "trial {trial}: {err:e}");
    }
}

#[test]
fn qr_pullback_without_r_path() {
    let mut r = rng(6);
    for trial in 0..20 {
        let x = gaussian(7, 4, &mut r);
        let c = gaussian(7, 4, &mut r);
        let (q, rr) = gram_schmidt(&x);
        let g = qr_pullback(&x, &q, &rr, &((&q - &c) * 2.0), &Mat::zeros(4, 4)).unwrap();
        let fd = fd_grad(&x, |m| (gram_schmidt(m).0 - &c).norm_squared());
        assert!(rel_err(&g, &fd) <= TOL, "trial {trial}");
    }
}

#[test]
fn pair_grad_w_matches_finite_differences() {
    for kind in MeasureKind::ALL {
        let mut checked = 0;
        for seed in 0..60u64 {
            let w = MappingMatrix::random(10, 5, 7000 + seed).unwrap();
            let x1 = random_point(10, 2, 3 * seed).unwrap();
            let x2 = random_point(10, 2, 3 * seed + 1).unwrap();
            let g = match pair_grad_w(kind, &w, &x1, &x2) {
                Ok(g) => g,
                Err(e) if guarded(&e) => continue,
                Err(e) => panic!("{e}"),
            };
            let f = |m: &Mat| {
                let q1 = gram_schmidt(&(m.transpose() * x1.basis())).0;
                let q2 = gram_schmidt(&(m.transpose() * x2.basis())).0;
                ambient_form(kind, &q1, &q2)
            };
            let fd = fd_grad(w.matrix(), f);
            let err = rel_err(&g, &fd);
            assert!(err <= TOL, "{kind} seed {seed}: {err:e}");
            checked += 1;
        }
        assert!(checked >= 50, "{kind}: {checked}");
    }
}

fn random_problem(kind: MeasureKind, seed: u64) -> (Problem, MappingMatrix) {
    let pts: Vec<GrassmannPoint> = (0..6)
        .map(|i| random_point(10, 2, 50 * seed + i).unwrap())
        .collect();
    let labels = [0, 0, 0, 1, 1, 1];
    let dist = dissimilarity_matrix(&pts, kind).unwrap();
    let g = build_affinity(&labels, &dist, 2, 1).unwrap();
    let p = Problem::new(pts, g, kind, 5).unwrap();
    (p, MappingMatrix::random(10, 5, 900 + seed).unwrap())
}

#[test]
fn euclidean_grad_matches_finite_differences() {
    for kind in MeasureKind::ALL {
        let mut checked = 0;
        for seed in 0..25u64 {
            let (p, w) = random_problem(kind, seed);
            let g = match euclidean_grad(&w, &p) {
                Ok(g) => g,
                Err(e) if guarded(&e) => continue,
                Err(e) => panic!("{e}"),
            };
            let fd = fd_grad(w.matrix(), |m| cost_ambient(m, &p).unwrap());
            let err = rel_err(&g, &fd);
            assert!(err <= TOL, "{kind} seed {seed}: {err:e}");
            checked += 1;
        }
        assert!(checked >= 20, "{kind}: {checked}");
    }
}
