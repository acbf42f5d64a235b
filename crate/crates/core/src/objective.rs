//! The affinity-weighted cost on reduced subspaces and its gradients.
//!
//! `L(W) = Σ_{i<j} G(i,j) · s · d(Qᵢ, Qⱼ)` with `Qᵢ = qf(WᵀXᵢ)`, where `s = −1` for
//! similarity-like measures when sign flipping is on.

use rayon::prelude::*;

use crate::affinity::AffinityGraph;
use crate::error::{Error, Result};
use crate::manifold::{orthonormalize, GrassmannPoint, MappingMatrix, Mat, TangentVector};
use crate::metrics::{
    measure_grad_ambient, measure_orthonormal, qr_pullback_q, MeasureKind, Orientation,
};

/// Largest fraction of weighted pairs whose gradient may be skipped as singular.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Problem {
    points: Vec<GrassmannPoint>,
    graph: AffinityGraph,
    kind: MeasureKind,
    sign_flip_similarity: bool,
    target_dim: usize,
}

impl Problem {
    pub fn new(
        points: Vec<GrassmannPoint>,
        graph: AffinityGraph,
        kind: MeasureKind,
        target_dim: usize,
    ) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyTrainingSet)?;
        let (ambient, order) = (first.ambient_dim(), first.order());
        for (i, p) in points.iter().enumerate() {
            if p.ambient_dim() != ambient || p.order() != order {
                return Err(Error::DimensionMismatch(format!(
                    "point {i} lies on G({}, {}), expected G({order}, {ambient})",
                    p.order(),
                    p.ambient_dim()
                )));
            }
        }
        if graph.len() != points.len() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} nodes for {} points",
                graph.len(),
                points.len()
            )));
        }
        if target_dim < order || target_dim > ambient {
            return Err(Error::InvalidShape(format!(
                "target dimension d = {target_dim} must satisfy n = {order} <= d <= D = {ambient}"
            )));
        }
        Ok(Self {
            points,
            graph,
            kind,
            sign_flip_similarity: true,
            target_dim,
        })
    }

    /// Literal minimization of the weighted sum for similarity measures when `false`.
    pub fn with_sign_flip_similarity(mut self, flip: bool) -> Self {
        self.sign_flip_similarity = flip;
        self
    }

    pub fn points(&self) -> &[GrassmannPoint] {
        &self.points
    }

    pub fn graph(&self) -> &AffinityGraph {
        &self.graph
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn sign_flip_similarity(&self) -> bool {
        self.sign_flip_similarity
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.points[0].ambient_dim()
    }

    pub fn order(&self) -> usize {
        self.points[0].order()
    }

    /// Orientation sign `s` applied to every pair term.
    pub fn sign(&self) -> f64 {
        if self.sign_flip_similarity && self.kind.orientation() == Orientation::SimilarityLike {
            -1.0
        } else {
            1.0
        }
    }

    fn check_w(&self, w: &Mat) -> Result<()> {
        if w.shape() != (self.ambient_dim(), self.target_dim) {
            return Err(Error::DimensionMismatch(format!(
                "mapping is {}x{}, problem expects {}x{}",
                w.nrows(),
                w.ncols(),
                self.ambient_dim(),
                self.target_dim
            )));
        }
        Ok(())
    }
}

/// The orthonormal factor of `WᵀX`, a point of G(n, d).
pub fn reduce_point(w: &MappingMatrix, x: &GrassmannPoint) -> Result<GrassmannPoint> {
    if w.ambient_dim() != x.ambient_dim() {
        return Err(Error::DimensionMismatch(format!(
            "mapping has D={}, point has D={}",
            w.ambient_dim(),
            x.ambient_dim()
        )));
    }
    if x.order() > w.reduced_dim() {
        return Err(Error::DimensionMismatch(format!(
            "cannot reduce an order-{} subspace to dimension {}",
            x.order(),
            w.reduced_dim()
        )));
    }
    let (q, _) = orthonormalize(&w.matrix().tr_mul(x.basis()))?;
    Ok(GrassmannPoint::from_orthonormal_unchecked(q))
}

/// Counters describing one evaluation of the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    /// Pairs with nonzero weight.
    pub weighted_pairs: usize,
    /// Pairs whose gradient was skipped because the measure was singular there.
    pub skipped_pairs: usize,
    /// Pairs whose gradient needed clamping (Fubini–Study near identical subspaces).
    pub clamped_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    /// Euclidean gradient, present when requested.
    pub grad: Option<Mat>,
    pub stats: EvalStats,
}

fn reduce_all(w: &Mat, points: &[GrassmannPoint]) -> Result<Vec<(Mat, Mat)>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, x)| orthonormalize(&w.tr_mul(x.basis())).map_err(|e| e.at_sample(i)))
        .collect()
}

/// Cost and (optionally) Euclidean gradient at an arbitrary full-rank `W`.
///
/// Each point is reduced once. Pair terms are computed in parallel and summed in
/// edge order, so results do not depend on the thread count.
pub fn evaluate_ambient(w: &Mat, p: &Problem, with_grad: bool) -> Result<Evaluation> {
    p.check_w(w)?;
    let edges = p.graph.edges();
    let mut stats = EvalStats {
        weighted_pairs: edges.len(),
        ..EvalStats::default()
    };
    if edges.is_empty() {
        return Ok(Evaluation {
            cost: 0.0,
            grad: with_grad.then(|| Mat::zeros(w.nrows(), w.ncols())),
            stats,
        });
    }
    let reduced = reduce_all(w, &p.points)?;
    let sign = p.sign();
    let kind = p.kind;

    let terms: Vec<f64> = edges
        .par_iter()
        .map(|&(i, j, g)| {
            f64::from(g) * sign * measure_orthonormal(kind, &reduced[i].0, &reduced[j].0)
        })
        .collect();
    let cost = terms.iter().sum();

    if !with_grad {
        return Ok(Evaluation {
            cost,
            grad: None,
            stats,
        });
    }

    // per-pair gradients with respect to the reduced bases
    let pair_grads: Vec<Result<Option<(Mat, Mat, bool)>>> = edges
        .par_iter()
        .map(
            |&(i, j, g)| match measure_grad_ambient(kind, &reduced[i].0, &reduced[j].0) {
                Ok(pg) => {
                    let c = f64::from(g) * sign;
                    Ok(Some((pg.g1 * c, pg.g2 * c, pg.clamped)))
                }
                Err(e @ Error::SingularPair { .. }) => {
                    log::debug!("skipping singular pair ({i}, {j}): {e}");
                    Ok(None)
                }
                Err(e) => Err(e.at_pair(i, j)),
            },
        )
        .collect();

    let n = p.points.len();
    let mut dq: Vec<Option<Mat>> = vec![None; n];
    let add = |slot: &mut Option<Mat>, g: Mat| match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g),
    };
    let mut first_skipped = None;
    for (&(i, j, _), res) in edges.iter().zip(pair_grads) {
        match res? {
            Some((g1, g2, clamped)) => {
                if clamped {
                    stats.clamped_pairs += 1;
                }
                add(&mut dq[i], g1);
                add(&mut dq[j], g2);
            }
            None => {
                stats.skipped_pairs += 1;
                first_skipped.get_or_insert((i, j));
            }
        }
    }
    if stats.skipped_pairs as f64 > MAX_SKIPPED_FRACTION * stats.weighted_pairs as f64 {
        let (i, j) = first_skipped.expect("skipped pairs recorded");
        return Err(Error::TooManySingularPairs {
            skipped: stats.skipped_pairs,
            weighted: stats.weighted_pairs,
        }
        .at_pair(i, j));
    }
    if stats.skipped_pairs > 0 {
        log::warn!(
            "{} of {} weighted pairs skipped as singular",
            stats.skipped_pairs,
            stats.weighted_pairs
        );
    }

    // Pull each accumulated ∂L/∂Qᵢ back through its QR, then ∂L/∂W = Σ Xᵢ (∂L/∂Yᵢ)ᵀ.
    let contributions: Vec<Result<Option<Mat>>> = dq
        .par_iter()
        .enumerate()
        .map(|(i, g)| match g {
            None => Ok(None),
            Some(g) => {
                let (q, r) = &reduced[i];
                let gy = qr_pullback_q(q, r, g).map_err(|e| e.at_sample(i))?;
                Ok(Some(p.points[i].basis() * gy.transpose()))
            }
        })
        .collect();
    let mut grad = Mat::zeros(w.nrows(), w.ncols());
    for c in contributions {
        if let Some(c) = c? {
            grad += c;
        }
    }
    Ok(Evaluation {
        cost,
        grad: Some(grad),
        stats,
    })
}

pub fn evaluate(w: &MappingMatrix, p: &Problem, with_grad: bool) -> Result<Evaluation> {
    evaluate_ambient(w.matrix(), p, with_grad)
}

pub fn cost(w: &MappingMatrix, p: &Problem) -> Result<f64> {
    Ok(evaluate(w, p, false)?.cost)
}

/// Cost at any full-rank `W`, not necessarily orthonormal.
pub fn cost_ambient(w: &Mat, p: &Problem) -> Result<f64> {
    Ok(evaluate_ambient(w, p, false)?.cost)
}

/// Ambient gradient `∇_W L(W)`.
pub fn euclidean_grad(w: &MappingMatrix, p: &Problem) -> Result<Mat> {
    Ok(evaluate(w, p, true)?.grad.expect("gradient requested"))
}

pub fn euclidean_grad_ambient(w: &Mat, p: &Problem) -> Result<Mat> {
    Ok(evaluate_ambient(w, p, true)?
        .grad
        .expect("gradient requested"))
}

/// `(I − WWᵀ) ∇_W L`, computed as `eg − W(Wᵀ eg)`.
pub fn riemannian_grad(w: &MappingMatrix, eg: &Mat) -> Result<TangentVector> {
    TangentVector::project(w, eg)
}
