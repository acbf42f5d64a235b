//! Datasets of labeled subspaces, nearest-neighbor evaluation, synthetic data,
//! cross-validation and the gradient-check harness.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::affinity::{build_affinity, default_kw, dissimilarity_matrix, AffinityGraph};
use crate::error::{Error, Result};
use crate::manifold::{
    gaussian_matrix, random_orthogonal, random_point, Geodesic, GrassmannPoint, MappingMatrix, Mat,
    TangentVector,
};
use crate::metrics::{measure_orthonormal, MeasureKind, Orientation};
use crate::objective::{evaluate_ambient, reduce_point, Problem};
use crate::optimizer::{minimize, OptimOptions, OptimResult};

/// Labeled subspaces sharing one (D, n).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<GrassmannPoint>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    provenance: Vec<String>,
}

impl LabeledDataset {
    /// `labels[i]` indexes into `class_names`; `provenance[i]` names the source of sample `i`.
    pub fn new(
        samples: Vec<GrassmannPoint>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: Vec<String>,
    ) -> Result<Self> {
        if samples.len() != labels.len() || samples.len() != provenance.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples, {} labels, {} provenance entries",
                samples.len(),
                labels.len(),
                provenance.len()
            )));
        }
        if let Some(first) = samples.first() {
            for (i, s) in samples.iter().enumerate() {
                if s.basis().shape() != first.basis().shape() {
                    return Err(Error::DimensionMismatch(format!(
                        "sample {i} lies on G({}, {}), sample 0 on G({}, {})",
                        s.order(),
                        s.ambient_dim(),
                        first.order(),
                        first.ambient_dim()
                    )));
                }
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidShape(format!(
                "label index {bad} has no class name"
            )));
        }
        Ok(Self {
            samples,
            labels,
            class_names,
            provenance,
        })
    }

    /// Dataset with class names `"0"`, `"1"`, … and provenance `"s<index>"`.
    pub fn from_labels(samples: Vec<GrassmannPoint>, labels: Vec<usize>) -> Result<Self> {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let names = (0..classes).map(|c| c.to_string()).collect();
        let prov = (0..samples.len()).map(|i| format!("s{i}")).collect();
        Self::new(samples, labels, names, prov)
    }

    pub fn samples(&self) -> &[GrassmannPoint] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ambient_dim(&self) -> Option<usize> {
        self.samples.first().map(GrassmannPoint::ambient_dim)
    }

    pub fn order(&self) -> Option<usize> {
        self.samples.first().map(GrassmannPoint::order)
    }

    pub fn class_sizes(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &l in &self.labels {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }

    /// The samples at `indices`, in that order; class names are kept.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            provenance: indices
                .iter()
                .map(|&i| self.provenance[i].clone())
                .collect(),
        }
    }

    /// Every sample mapped through `w`.
    pub fn reduced(&self, w: &MappingMatrix) -> Result<Self> {
        let samples = self
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, x)| reduce_point(w, x).map_err(|e| e.at_sample(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            ..self.clone()
        })
    }

    /// Splits every class into its first `per_class` samples and the rest.
    pub fn split_per_class(&self, per_class: usize) -> (Self, Self) {
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, &l) in self.labels.iter().enumerate() {
            let c = seen.entry(l).or_insert(0);
            if *c < per_class {
                a.push(i);
            } else {
                b.push(i);
            }
            *c += 1;
        }
        (self.subset(&a), self.subset(&b))
    }
}

/// The first `n` left singular vectors of a `D×m` feature matrix.
pub fn build_subspace(features: &Mat, n: usize) -> Result<GrassmannPoint> {
    let (rows, cols) = features.shape();
    if n == 0 || n > cols || n > rows {
        return Err(Error::InvalidShape(format!(
            "cannot take {n} singular vectors of a {rows}x{cols} matrix"
        )));
    }
    if !features.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidShape(
            "features contain non-finite values".into(),
        ));
    }
    let svd = features.clone().svd(true, false);
    let sv = &svd.singular_values;
    let top = sv[0];
    if top <= 0.0 || sv[n - 1] <= crate::manifold::RANK_TOL * top {
        let ratio = if top > 0.0 { sv[n - 1] / top } else { 0.0 };
        return Err(Error::RankDeficient { ratio });
    }
    if n < sv.len() && (sv[n - 1] - sv[n]) <= 1e-8 * top {
        log::warn!(
            "singular values {n} and {} are nearly equal ({:e}, {:e}); the subspace is ill-determined",
            n + 1,
            sv[n - 1],
            sv[n]
        );
    }
    let u = svd.u.expect("requested U");
    let basis = u.columns(0, n).into_owned();
    // re-orthonormalize to remove SVD roundoff
    GrassmannPoint::from_span(&basis)
}

/// Nearest training sample for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub label: usize,
    pub index: usize,
    /// Measure value between the query and the neighbor.
    pub value: f64,
}

/// Nearest neighbor of every test point under `kind` (largest value for similarities).
/// Ties go to the lowest training index.
pub fn nn_search(
    train: &LabeledDataset,
    test: &[GrassmannPoint],
    kind: MeasureKind,
) -> Result<Vec<Neighbor>> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let shape = train.samples[0].basis().shape();
    if let Some((i, _)) = test
        .iter()
        .enumerate()
        .find(|(_, t)| t.basis().shape() != shape)
    {
        return Err(Error::DimensionMismatch(format!(
            "test point {i} does not match the training shape {}x{}",
            shape.0, shape.1
        )));
    }
    let better = |candidate: f64, best: f64| match kind.orientation() {
        Orientation::DistanceLike => candidate < best,
        Orientation::SimilarityLike => candidate > best,
    };
    Ok(test
        .par_iter()
        .map(|t| {
            let mut best = Neighbor {
                label: train.labels[0],
                index: 0,
                value: measure_orthonormal(kind, t.basis(), train.samples[0].basis()),
            };
            for (j, s) in train.samples.iter().enumerate().skip(1) {
                let v = measure_orthonormal(kind, t.basis(), s.basis());
                if better(v, best.value) {
                    best = Neighbor {
                        label: train.labels[j],
                        index: j,
                        value: v,
                    };
                }
            }
            best
        })
        .collect())
}

pub fn nn_classify(
    train: &LabeledDataset,
    test: &[GrassmannPoint],
    kind: MeasureKind,
) -> Result<Vec<usize>> {
    Ok(nn_search(train, test, kind)?
        .into_iter()
        .map(|n| n.label)
        .collect())
}

/// Fraction of test samples whose nearest training sample shares their label,
/// optionally after mapping both sets through `w`.
pub fn evaluate(
    train: &LabeledDataset,
    test: &LabeledDataset,
    kind: MeasureKind,
    w: Option<&MappingMatrix>,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidShape("test set is empty".into()));
    }
    let (train, test) = match w {
        Some(w) => (train.reduced(w)?, test.reduced(w)?),
        None => (train.clone(), test.clone()),
    };
    let pred = nn_classify(&train, &test.samples, kind)?;
    let correct = pred
        .iter()
        .zip(&test.labels)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub classes: usize,
    pub samples_per_class: usize,
    pub ambient: usize,
    pub order: usize,
    /// Scale of the within-class perturbation, in radians of principal angle.
    pub within_noise: f64,
    pub seed: u64,
    /// Dimension of the subspace containing all class centers; `None` spreads
    /// centers over the whole ambient space.
    pub signal_dim: Option<usize>,
    /// Dimension of a nuisance subspace, shared by all classes and orthogonal to the
    /// signal space, that carries most of the within-class variation.
    pub nuisance_dim: Option<usize>,
}

/// Nuisance and isotropic noise scales relative to `within_noise` when a nuisance
/// subspace is present.
pub const NUISANCE_GAIN: f64 = 3.5;
pub const ISOTROPIC_GAIN: f64 = 0.5;

impl SynthParams {
    /// Eight classes of ten order-6 subspaces in ℝ³⁷: centers in a 12-dimensional
    /// signal space, within-class variation mostly along a shared 12-dimensional nuisance space.
    pub fn demo(within_noise: f64, seed: u64) -> Self {
        Self {
            classes: 8,
            samples_per_class: 10,
            ambient: 37,
            order: 6,
            within_noise,
            seed,
            signal_dim: Some(12),
            nuisance_dim: Some(12),
        }
    }

    /// Centers spread over the whole space with isotropic noise.
    pub fn isotropic(
        classes: usize,
        samples_per_class: usize,
        ambient: usize,
        order: usize,
        within_noise: f64,
        seed: u64,
    ) -> Self {
        Self {
            classes,
            samples_per_class,
            ambient,
            order,
            within_noise,
            seed,
            signal_dim: None,
            nuisance_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidOptions(
                "classes and samples per class must be positive".into(),
            ));
        }
        if self.order == 0 || self.order >= self.ambient {
            return Err(Error::InvalidOptions(format!(
                "need 1 <= n < D, got n = {}, D = {}",
                self.order, self.ambient
            )));
        }
        if !(self.within_noise >= 0.0 && self.within_noise.is_finite()) {
            return Err(Error::InvalidOptions(
                "within-class noise must be nonnegative".into(),
            ));
        }
        let s = self.signal_dim.unwrap_or(0);
        if let Some(s) = self.signal_dim {
            if s <= self.order || s > self.ambient {
                return Err(Error::InvalidOptions(format!(
                    "signal dimension must satisfy n < s <= D, got {s}"
                )));
            }
        }
        if let Some(k) = self.nuisance_dim {
            if k == 0 || s + k > self.ambient {
                return Err(Error::InvalidOptions(format!(
                    "nuisance dimension must be positive and fit beside the signal space, got {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Class centers drawn at random (inside the signal space if one is set). Each sample
/// leaves its center along the horizontal part of a Gaussian direction `Z` for unit time.
/// Without a nuisance space `Z` has entries `N(0, σ²/(D − n))`, so the principal angles to
/// the center are close to `σ`; with one, `Z = a·N·K + b·E` where `N` spans the nuisance
/// space, `K` is `k×n` with entries `N(0, σ²/k)`, `E` is the isotropic term above, and
/// `a`, `b` are [`NUISANCE_GAIN`] and [`ISOTROPIC_GAIN`].
pub fn synth_dataset(p: &SynthParams) -> Result<LabeledDataset> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let s = p.signal_dim.unwrap_or(0);
    let k = p.nuisance_dim.unwrap_or(0);
    let frame = (s + k > 0).then(|| random_orthogonal(p.ambient, rng.random()));
    let signal = frame
        .as_ref()
        .filter(|_| s > 0)
        .map(|f| f.columns(0, s).into_owned());
    let nuisance = frame
        .as_ref()
        .filter(|_| k > 0)
        .map(|f| f.columns(s, k).into_owned());
    let iso = p.within_noise / ((p.ambient - p.order) as f64).sqrt();
    let (iso, nui) = match nuisance {
        Some(_) => (
            iso * ISOTROPIC_GAIN,
            NUISANCE_GAIN * p.within_noise / (k as f64).sqrt(),
        ),
        None => (iso, 0.0),
    };

    let mut samples = Vec::with_capacity(p.classes * p.samples_per_class);
    let mut labels = Vec::with_capacity(samples.capacity());
    for class in 0..p.classes {
        let center = match &signal {
            Some(f) => f * random_point(s, p.order, rng.random())?.basis(),
            None => random_point(p.ambient, p.order, rng.random())?.into_basis(),
        };
        let base = MappingMatrix::from_orthonormal_unchecked(center);
        for _ in 0..p.samples_per_class {
            let mut z = gaussian_matrix(p.ambient, p.order, &mut rng) * iso;
            if let Some(n) = &nuisance {
                z += n * gaussian_matrix(k, p.order, &mut rng) * nui;
            }
            let dir = TangentVector::project(&base, &z)?;
            let moved = Geodesic::new(&base, &dir)?.point(1.0);
            samples.push(GrassmannPoint::from_orthonormal_unchecked(
                moved.matrix().clone(),
            ));
            labels.push(class);
        }
    }
    let names = (0..p.classes).map(|c| format!("c{c}")).collect();
    let prov = (0..samples.len())
        .map(|i| format!("synth-{}-{i}", p.seed))
        .collect();
    LabeledDataset::new(samples, labels, names, prov)
}

/// Configuration for training a map on a labeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: MeasureKind,
    pub target_dim: usize,
    /// Within-class neighbors; `None` uses the smallest class size minus one.
    pub kw: Option<usize>,
    pub kb: usize,
    pub sign_flip_similarity: bool,
    pub optim: OptimOptions,
    /// Seed for a random initial map; `None` starts from the truncated identity.
    pub init_seed: Option<u64>,
}

impl TrainConfig {
    pub fn new(kind: MeasureKind, target_dim: usize) -> Self {
        Self {
            kind,
            target_dim,
            kw: None,
            kb: 1,
            sign_flip_similarity: true,
            optim: OptimOptions::default(),
            init_seed: None,
        }
    }
}

/// Builds the affinity graph on the original manifold and the resulting problem.
pub fn build_problem(train: &LabeledDataset, cfg: &TrainConfig) -> Result<Problem> {
    let graph = training_graph(train, cfg)?;
    Ok(
        Problem::new(train.samples.clone(), graph, cfg.kind, cfg.target_dim)?
            .with_sign_flip_similarity(cfg.sign_flip_similarity),
    )
}

pub fn training_graph(train: &LabeledDataset, cfg: &TrainConfig) -> Result<AffinityGraph> {
    let dist = dissimilarity_matrix(&train.samples, cfg.kind)?;
    let kw = match cfg.kw {
        Some(k) => k,
        None => default_kw(&train.labels)?,
    };
    build_affinity(&train.labels, &dist, kw, cfg.kb)
}

/// Trains a map on `train`; the result carries the training metadata.
pub fn train(train: &LabeledDataset, cfg: &TrainConfig) -> Result<OptimResult> {
    fit(&build_problem(train, cfg)?, cfg)
}

/// Minimizes a prepared problem with the optimizer settings and initial map of `cfg`.
pub fn fit(problem: &Problem, cfg: &TrainConfig) -> Result<OptimResult> {
    let w0 = match cfg.init_seed {
        Some(seed) => Some(MappingMatrix::random(
            problem.ambient_dim(),
            cfg.target_dim,
            seed,
        )?),
        None => None,
    };
    let mut res = minimize(problem, w0, &cfg.optim)?;
    res.w = res.w.with_meta(crate::manifold::MappingMeta {
        order: problem.order(),
        kind: cfg.kind,
    });
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub dim: usize,
    pub kb: usize,
    /// Held-out accuracy averaged over folds.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best_dim: usize,
    pub best_kb: usize,
    pub cells: Vec<GridCell>,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dim,kb,accuracy\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{:.16e}\n", c.dim, c.kb, c.accuracy));
        }
        s
    }
}

/// Stratified folds: the k-th sample of each class goes to fold `k mod folds`.
pub fn stratified_folds(labels: &[usize], folds: usize) -> Vec<usize> {
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let c = seen.entry(l).or_insert(0);
            let f = *c % folds;
            *c += 1;
            f
        })
        .collect()
}

/// Stratified k-fold cross-validation over `(d, kb)` pairs. Ties go to the
/// smallest `d`, then the smallest `kb`.
pub fn grid_search(
    data: &LabeledDataset,
    folds: usize,
    grid: &[(usize, usize)],
    base: &TrainConfig,
) -> Result<GridResult> {
    if folds < 2 {
        return Err(Error::InvalidGrid("at least two folds are required".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    let (ambient, order) = match (data.ambient_dim(), data.order()) {
        (Some(a), Some(o)) => (a, o),
        _ => return Err(Error::EmptyTrainingSet),
    };
    for &(d, kb) in grid {
        if d < order || d >= ambient {
            return Err(Error::InvalidGrid(format!(
                "d = {d} must satisfy n = {order} <= d < D = {ambient}"
            )));
        }
        if kb == 0 {
            return Err(Error::InvalidGrid("kb must be at least 1".into()));
        }
    }
    if let Some((class, size)) = data.class_sizes().into_iter().find(|&(_, s)| s < folds) {
        return Err(Error::InvalidGrid(format!(
            "class {class} has {size} samples, fewer than {folds} folds"
        )));
    }
    let assignment = stratified_folds(&data.labels, folds);
    let splits: Vec<(LabeledDataset, LabeledDataset)> = (0..folds)
        .map(|f| {
            let tr: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != f).collect();
            let te: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == f).collect();
            (data.subset(&tr), data.subset(&te))
        })
        .collect();

    let cells = grid
        .par_iter()
        .map(|&(dim, kb)| {
            let mut cfg = base.clone();
            cfg.target_dim = dim;
            cfg.kb = kb;
            let mut total = 0.0;
            for (tr, te) in &splits {
                let res = train(tr, &cfg)?;
                total += evaluate(tr, te, cfg.kind, Some(&res.w))?;
            }
            Ok(GridCell {
                dim,
                kb,
                accuracy: total / folds as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = cells
        .iter()
        .fold(None::<&GridCell>, |best, c| match best {
            None => Some(c),
            Some(b) => {
                let better = c.accuracy > b.accuracy
                    || (c.accuracy == b.accuracy && (c.dim, c.kb) < (b.dim, b.kb));
                Some(if better { c } else { b })
            }
        })
        .expect("grid is not empty");
    Ok(GridResult {
        best_dim: best.dim,
        best_kb: best.kb,
        cells,
    })
}

/// Finite-difference step used by the gradient check.
pub const FD_STEP: f64 = 1e-6;
/// Relative error above which a gradient check trial fails.
pub const FD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_error: f64,
    /// Trials whose relative error exceeded the tolerance.
    pub failures: usize,
    /// Trials excluded because a pair gradient was clamped or skipped.
    pub guarded: usize,
}

/// Central finite differences of `f` at `w`, entry by entry.
pub fn finite_difference_grad<F>(w: &Mat, step: f64, f: F) -> Result<Mat>
where
    F: Fn(&Mat) -> Result<f64> + Sync,
{
    let (r, c) = w.shape();
    let entries: Vec<f64> = (0..r * c)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % r, k / r);
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[(i, j)] += step;
            minus[(i, j)] -= step;
            Ok((f(&plus)? - f(&minus)?) / (2.0 * step))
        })
        .collect::<Result<_>>()?;
    Ok(Mat::from_column_slice(r, c, &entries))
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)`, or 0 when both vanish.
pub fn relative_error(a: &Mat, b: &Mat) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// A random gradient-check instance: six points of G(n, D) in three classes and a random `W`.
pub fn gradcheck_instance(
    kind: MeasureKind,
    ambient: usize,
    reduced: usize,
    order: usize,
    seed: u64,
) -> Result<(Problem, MappingMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<GrassmannPoint> = (0..6)
        .map(|_| random_point(ambient, order, rng.random()))
        .collect::<Result<_>>()?;
    let labels = [0, 0, 1, 1, 2, 2];
    let dist = dissimilarity_matrix(&points, kind)?;
    let graph = build_affinity(&labels, &dist, 1, 1)?;
    let problem = Problem::new(points, graph, kind, reduced)?;
    let w = MappingMatrix::random(ambient, reduced, rng.random())?;
    Ok((problem, w))
}

/// Compares the analytic Euclidean gradient with central finite differences over `trials` random instances.
pub fn gradient_check(
    kind: MeasureKind,
    ambient: usize,
    reduced: usize,
    order: usize,
    trials: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    gradient_check_with(kind, ambient, reduced, order, trials, seed, |eg| eg)
}

/// [`gradient_check`] with a hook applied to the analytic gradient before comparison.
pub fn gradient_check_with<H>(
    kind: MeasureKind,
    ambient: usize,
    reduced: usize,
    order: usize,
    trials: usize,
    seed: u64,
    hook: H,
) -> Result<GradCheckReport>
where
    H: Fn(Mat) -> Mat,
{
    if order == 0 || order > reduced || reduced > ambient || order >= ambient {
        return Err(Error::InvalidShape(format!(
            "gradient check needs 1 <= n <= d <= D and n < D, got D={ambient}, d={reduced}, n={order}"
        )));
    }
    let mut report = GradCheckReport {
        trials,
        ..Default::default()
    };
    for t in 0..trials {
        let (problem, w) =
            gradcheck_instance(kind, ambient, reduced, order, seed.wrapping_add(t as u64))?;
        let eval = match evaluate_ambient(w.matrix(), &problem, true) {
            Ok(e) => e,
            Err(e) if e.is_numerical() => {
                report.guarded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if eval.stats.skipped_pairs > 0 || eval.stats.clamped_pairs > 0 {
            report.guarded += 1;
            continue;
        }
        let analytic = hook(eval.grad.expect("gradient requested"));
        let fd = finite_difference_grad(w.matrix(), FD_STEP, |m| {
            Ok(evaluate_ambient(m, &problem, false)?.cost)
        })?;
        let err = relative_error(&analytic, &fd);
        report.max_rel_error = report.max_rel_error.max(err);
        if !(err <= FD_TOL) {
            report.failures += 1;
        }
    }
    Ok(report)
}
