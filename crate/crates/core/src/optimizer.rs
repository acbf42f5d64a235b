//! Riemannian conjugate gradient on G(d, D) with Armijo backtracking along geodesics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::manifold::{orthonormality_error, Geodesic, MappingMatrix, TangentVector};
use crate::objective::{evaluate, riemannian_grad, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaRule {
    PolakRibierePlus,
    FletcherReeves,
    /// `η = 0`: plain Riemannian steepest descent.
    SteepestDescent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoParams {
    /// Largest trial step; later iterations start from the previous accepted step expanded once.
    pub initial_step: f64,
    pub sufficient_decrease: f64,
    pub contraction: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            sufficient_decrease: 1e-4,
            contraction: 0.5,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    pub rel_cost_tol: f64,
    pub grad_norm_tol: f64,
    pub beta_rule: BetaRule,
    pub line_search: ArmijoParams,
    /// Iterations between forced steepest-descent restarts; `None` means `d·(D − d)`.
    pub restart_period: Option<usize>,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            rel_cost_tol: 1e-6,
            grad_norm_tol: 1e-6,
            beta_rule: BetaRule::PolakRibierePlus,
            line_search: ArmijoParams::default(),
            restart_period: None,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let positive = [
            ("rel_cost_tol", self.rel_cost_tol),
            ("grad_norm_tol", self.grad_norm_tol),
            ("initial_step", ls.initial_step),
            ("sufficient_decrease", ls.sufficient_decrease),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidOptions(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(ls.contraction > 0.0 && ls.contraction < 1.0) {
            return Err(Error::InvalidOptions(format!(
                "contraction must lie in (0, 1), got {}",
                ls.contraction
            )));
        }
        if ls.sufficient_decrease >= 1.0 {
            return Err(Error::InvalidOptions(
                "sufficient_decrease must be below 1".into(),
            ));
        }
        if self.restart_period == Some(0) {
            return Err(Error::InvalidOptions(
                "restart_period must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the convergence trace. Row 0 describes the starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub backtracks: usize,
    pub skipped_pairs: usize,
    /// `‖WᵀW − I‖_F` of the iterate.
    pub ortho_error: f64,
    /// `‖Wᵀ grad‖_F` of the Riemannian gradient at the iterate.
    pub tangency_error: f64,
    /// Armijo slope `⟨grad, H⟩` of the direction used to leave this iterate (0 on the last row).
    pub slope: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimTrace {
    pub records: Vec<TraceRecord>,
}

impl OptimTrace {
    pub const CSV_HEADER: &'static str = "iter,cost,grad_norm,step,backtracks,skipped_pairs";

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Number of accepted steps.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{},{}",
                r.iter, r.cost, r.grad_norm, r.step, r.backtracks, r.skipped_pairs
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientNorm,
    RelativeCostChange,
    MaxIterations,
    /// No Armijo decrease within the backtracking budget; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub w: MappingMatrix,
    pub trace: OptimTrace,
    pub termination: Termination,
}

impl OptimResult {
    pub fn final_cost(&self) -> f64 {
        self.trace.last().map_or(0.0, |r| r.cost)
    }
}

/// Minimizes the problem's cost over G(d, D), starting from `I_{D×d}` unless `w0` is given.
pub fn minimize(
    p: &Problem,
    w0: Option<MappingMatrix>,
    opts: &OptimOptions,
) -> Result<OptimResult> {
    opts.validate()?;
    let (big, small) = (p.ambient_dim(), p.target_dim());
    let mut w = match w0 {
        Some(w) => {
            if w.matrix().shape() != (big, small) {
                return Err(Error::DimensionMismatch(format!(
                    "initial mapping is {}x{}, expected {big}x{small}",
                    w.ambient_dim(),
                    w.reduced_dim()
                )));
            }
            w
        }
        None => MappingMatrix::identity(big, small)?,
    };
    let restart_period = opts
        .restart_period
        .unwrap_or((small * (big - small)).max(1));
    let ls = opts.line_search;

    let eval = evaluate(&w, p, true)?;
    let mut cost = eval.cost;
    let mut grad = riemannian_grad(&w, eval.grad.as_ref().expect("gradient requested"))?;
    let mut trace = OptimTrace::default();
    let record =
        |iter, cost, grad: &TangentVector, w: &MappingMatrix, step, backtracks, skipped| {
            TraceRecord {
                iter,
                cost,
                grad_norm: grad.norm(),
                step,
                backtracks,
                skipped_pairs: skipped,
                ortho_error: orthonormality_error(w.matrix()),
                tangency_error: grad.tangency_error(w),
                slope: 0.0,
            }
        };
    trace
        .records
        .push(record(0, cost, &grad, &w, 0.0, 0, eval.stats.skipped_pairs));

    let mut dir = TangentVector::from_matrix_unchecked(-grad.matrix());
    let mut termination = Termination::MaxIterations;
    let mut since_restart = 0usize;
    let mut prev_step: Option<f64> = None;

    for iter in 1..=opts.max_iter {
        let grad_sq = grad.inner(&grad);
        if grad_sq.sqrt() < opts.grad_norm_tol {
            termination = Termination::GradientNorm;
            break;
        }
        let mut slope = grad.inner(&dir);
        if !(slope < 0.0) {
            dir = TangentVector::from_matrix_unchecked(-grad.matrix());
            slope = -grad_sq;
            since_restart = 0;
        }
        if let Some(last) = trace.records.last_mut() {
            last.slope = slope;
        }

        let geo = Geodesic::new(&w, &dir)?;
        // try one expansion beyond the last accepted step
        let mut t = prev_step.map_or(ls.initial_step, |ps| {
            (ps / ls.contraction).min(ls.initial_step)
        });
        let mut accepted = None;
        for backtracks in 0..=ls.max_backtracks {
            let candidate = geo.point(t);
            let c = evaluate(&candidate, p, false)?.cost;
            if c <= cost + ls.sufficient_decrease * t * slope {
                accepted = Some((candidate, c, backtracks));
                break;
            }
            t *= ls.contraction;
        }
        let Some((w_new, _, backtracks)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        let w_new = match w.meta() {
            Some(m) => w_new.with_meta(m),
            None => w_new,
        };

        let eval = evaluate(&w_new, p, true)?;
        let grad_new = riemannian_grad(&w_new, eval.grad.as_ref().expect("gradient requested"))?;

        let moved_dir = TangentVector::project(&w_new, geo.transport(&dir, t).matrix())?;
        since_restart += 1;
        let beta = if since_restart >= restart_period {
            since_restart = 0;
            0.0
        } else {
            match opts.beta_rule {
                BetaRule::SteepestDescent => 0.0,
                BetaRule::FletcherReeves => grad_new.inner(&grad_new) / grad_sq,
                BetaRule::PolakRibierePlus => {
                    let moved_grad = geo.transport(&grad, t);
                    let diff = grad_new.matrix() - moved_grad.matrix();
                    (grad_new.matrix().dot(&diff) / grad_sq).max(0.0)
                }
            }
        };
        if beta == 0.0 {
            since_restart = 0;
        }
        dir = TangentVector::from_matrix_unchecked(-grad_new.matrix() + moved_dir.matrix() * beta);

        let rel_change = (cost - eval.cost).abs() / cost.abs().max(f64::MIN_POSITIVE);
        prev_step = Some(t);
        cost = eval.cost;
        w = w_new;
        grad = grad_new;
        trace.records.push(record(
            iter,
            cost,
            &grad,
            &w,
            t,
            backtracks,
            eval.stats.skipped_pairs,
        ));

        if rel_change < opts.rel_cost_tol {
            termination = Termination::RelativeCostChange;
            break;
        }
        if iter == opts.max_iter {
            termination = Termination::MaxIterations;
        }
    }
    if termination == Termination::MaxIterations && grad.norm() < opts.grad_norm_tol {
        termination = Termination::GradientNorm;
    }
    if termination == Termination::LineSearchFailed {
        log::warn!("line search found no sufficient decrease; returning the best iterate");
    }
    Ok(OptimResult {
        w,
        trace,
        termination,
    })
}
