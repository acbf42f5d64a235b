use ggdr::affinity::AffinityGraph;
use ggdr::manifold::{orthonormality_error, random_point};
use ggdr::objective::Problem;
use ggdr::optimizer::{minimize, BetaRule, OptimOptions, OptimTrace, Termination};
use ggdr::pipeline::{
    build_problem, evaluate, grid_search, synth_dataset, train, SynthParams, TrainConfig,
};
use ggdr::{MappingMatrix, MeasureKind};

fn assert_descent(trace: &OptimTrace, decrease: f64) {
    for pair in trace.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert!(
            b.cost <= a.cost + decrease * b.step * a.slope + 1e-12 * a.cost.abs(),
            "iteration {}: {} -> {}",
            b.iter,
            a.cost,
            b.cost
        );
        assert!(
            a.slope < 0.0,
            "iteration {} left along a non-descent direction",
            a.iter
        );
    }
    for r in &trace.records {
        assert!(r.ortho_error <= 1e-8);
        assert!(r.tangency_error <= 1e-8);
    }
}

#[test]
fn two_class_problem_descends_and_terminates() {
    let ds = synth_dataset(&SynthParams::isotropic(2, 10, 20, 2, 0.3, 42)).unwrap();
    let cfg = TrainConfig::new(MeasureKind::ProjectionSq, 6);
    let res = train(&ds, &cfg).unwrap();
    assert_ne!(res.termination, Termination::MaxIterations);
    assert!(res.trace.iterations() <= 100);
    assert_descent(&res.trace, cfg.optim.line_search.sufficient_decrease);
    let first = res.trace.records[0].grad_norm;
    assert!(res.trace.last().unwrap().grad_norm < first);
}

#[test]
fn steepest_descent_variant_satisfies_the_same_contracts() {
    let ds = synth_dataset(&SynthParams::isotropic(3, 6, 15, 2, 0.3, 4)).unwrap();
    let mut results = Vec::new();
    for rule in [
        BetaRule::PolakRibierePlus,
        BetaRule::FletcherReeves,
        BetaRule::SteepestDescent,
    ] {
        let mut cfg = TrainConfig::new(MeasureKind::ProjectionKernelDistSq, 5);
        cfg.optim.beta_rule = rule;
        cfg.optim.max_iter = 40;
        let res = train(&ds, &cfg).unwrap();
        assert_descent(&res.trace, cfg.optim.line_search.sufficient_decrease);
        results.push(res);
    }
    // identical first step: all rules start along the negative gradient
    let c: Vec<f64> = results.iter().map(|r| r.trace.records[1].cost).collect();
    assert_eq!(c[0], c[2]);
    assert_eq!(c[1], c[2]);
}

#[test]
fn random_initialization_is_deterministic() {
    let ds = synth_dataset(&SynthParams::isotropic(3, 5, 12, 2, 0.2, 8)).unwrap();
    let mut cfg = TrainConfig::new(MeasureKind::FubiniStudy, 4);
    cfg.init_seed = Some(11);
    cfg.optim.max_iter = 20;
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(a.w, b.w);
    assert_eq!(a.trace, b.trace);
    assert!(orthonormality_error(a.w.matrix()) <= 1e-8);
}

#[test]
fn explicit_start_is_used_and_checked() {
    let pts: Vec<_> = (0..4).map(|s| random_point(8, 2, s).unwrap()).collect();
    let p = Problem::new(pts, AffinityGraph::empty(4), MeasureKind::ProjectionSq, 3).unwrap();
    let w0 = MappingMatrix::random(8, 3, 1).unwrap();
    let res = minimize(&p, Some(w0.clone()), &OptimOptions::default()).unwrap();
    assert_eq!(res.w, w0);
    let wrong = MappingMatrix::random(8, 4, 1).unwrap();
    assert!(minimize(&p, Some(wrong), &OptimOptions::default()).is_err());
}

#[test]
fn bck_training_raises_within_class_similarity() {
    let ds = synth_dataset(&SynthParams::isotropic(3, 5, 12, 2, 0.3, 2)).unwrap();
    let mut cfg = TrainConfig::new(MeasureKind::BinetCauchyKernel, 4);
    cfg.optim.max_iter = 30;
    let p = build_problem(&ds, &cfg).unwrap();
    assert_eq!(p.sign(), -1.0);
    let res = train(&ds, &cfg).unwrap();
    assert!(res.final_cost() < res.trace.records[0].cost);
}

#[test]
fn learned_map_helps_projection_nn() {
    let mut pre = 0.0;
    let mut post = 0.0;
    for seed in 0..10 {
        let ds = synth_dataset(&SynthParams::demo(0.3, seed)).unwrap();
        let (tr, te) = ds.split_per_class(5);
        let res = train(&tr, &TrainConfig::new(MeasureKind::ProjectionSq, 12)).unwrap();
        pre += evaluate(&tr, &te, MeasureKind::ProjectionSq, None).unwrap();
        post += evaluate(&tr, &te, MeasureKind::ProjectionSq, Some(&res.w)).unwrap();
    }
    assert!(post >= pre, "post {post} < pre {pre}");
}

#[test]
fn grid_search_is_reproducible() {
    let ds = synth_dataset(&SynthParams::isotropic(3, 6, 10, 2, 0.4, 1)).unwrap();
    let mut base = TrainConfig::new(MeasureKind::ProjectionSq, 3);
    base.optim.max_iter = 15;
    let grid = [(3, 1), (4, 1), (8, 2), (4, 1)];
    let a = grid_search(&ds, 3, &grid, &base).unwrap();
    let b = grid_search(&ds, 3, &grid, &base).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.cells[1].accuracy, a.cells[3].accuracy);
    let single = grid_search(&ds, 3, &[(4, 2)], &base).unwrap();
    assert_eq!((single.best_dim, single.best_kb), (4, 2));
    assert!(grid_search(&ds, 3, &[(1, 1)], &base).is_err());
    assert!(grid_search(&ds, 3, &[(10, 1)], &base).is_err());
}

#[test]
fn demo_noise_keeps_classes_apart() {
    let ds = synth_dataset(&SynthParams::demo(0.1, 0)).unwrap();
    let x = ds.samples();
    let l = ds.labels();
    let dist = |i: usize, j: usize| ggdr::manifold::geodesic_distance(&x[i], &x[j]).unwrap();
    let (mut ok, mut total) = (0usize, 0usize);
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i == j || l[i] != l[j] {
                continue;
            }
            let w = dist(i, j);
            for k in 0..x.len() {
                if l[k] != l[i] {
                    total += 1;
                    ok += usize::from(w < dist(i, k));
                }
            }
        }
    }
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
}
