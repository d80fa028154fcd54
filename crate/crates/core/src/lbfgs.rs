//! Limited-memory BFGS with two-loop recursion and a strong-Wolfe line
//! search.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineSearch {
    /// Bracketing strong-Wolfe search; the default.
    StrongWolfe,
    /// One secant step on the directional derivative. Exact on quadratics;
    /// used by diagnostics, not training.
    Secant,
}

#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iters: usize,
    /// Initial trial step of every line search.
    pub learning_rate: f64,
    pub c1: f64,
    pub c2: f64,
    pub grad_tol: f64,
    pub loss_change_tol: f64,
    pub max_ls_trials: usize,
    pub line_search: LineSearch,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 50,
            max_iters: 50000,
            learning_rate: 1.0,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-9,
            loss_change_tol: 1e-12,
            max_ls_trials: 25,
            line_search: LineSearch::StrongWolfe,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history < 1 {
            return Err(Error::Config("lbfgs history must be >= 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("lbfgs max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    /// Best-seen iterate.
    pub x: Vec<f64>,
    pub loss: f64,
    /// Accepted loss per iteration, index 0 holding the initial loss.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Set when the line search exhausted its trial budget; the best-seen
    /// iterate is still returned.
    pub line_search_failed: bool,
    pub converged_grad: bool,
    pub converged_loss: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `objective` from `x0`. The objective returns loss and gradient;
/// any non-finite initial loss is an error, while non-finite trial points
/// during the line search are treated as rejected steps.
pub fn lbfgs_minimize<F>(objective: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    lbfgs_minimize_cb(objective, x0, cfg, |_, _, _| {})
}

/// As [`lbfgs_minimize`], invoking `on_accept(iteration, x, loss)` after
/// every accepted step (checkpoint hook).
pub fn lbfgs_minimize_cb<F, C>(
    mut objective: F,
    x0: &[f64],
    cfg: &LbfgsConfig,
    mut on_accept: C,
) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, &[f64], f64),
{
    cfg.validate()?;
    let n = x0.len();
    let (mut f, mut g) = objective(x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "objective at the initial point".into(),
        });
    }
    let mut x = x0.to_vec();
    let mut best_x = x.clone();
    let mut best_f = f;
    let mut trace = vec![f];

    // Curvature pairs, newest last.
    let mut ss: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<Vec<f64>> = Vec::new();

    let mut line_search_failed = false;
    let mut converged_grad = false;
    let mut converged_loss = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        if norm(&g) <= cfg.grad_tol {
            converged_grad = true;
            break;
        }

        // Two-loop recursion: d = -H·g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = ss.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&ys[i], &ss[i]);
            let a = rho * dot(&ss[i], &d);
            alphas[i] = a;
            for (dj, yj) in d.iter_mut().zip(&ys[i]) {
                *dj -= a * yj;
            }
        }
        if k > 0 {
            let gamma = dot(&ss[k - 1], &ys[k - 1]) / dot(&ys[k - 1], &ys[k - 1]);
            for dj in d.iter_mut() {
                *dj *= gamma;
            }
        }
        for i in 0..k {
            let rho = 1.0 / dot(&ys[i], &ss[i]);
            let beta = rho * dot(&ys[i], &d);
            for (dj, sj) in d.iter_mut().zip(&ss[i]) {
                *dj += (alphas[i] - beta) * sj;
            }
        }

        let mut dphi0 = dot(&g, &d);
        if dphi0 >= 0.0 {
            // Stale curvature produced an ascent direction; fall back to
            // steepest descent.
            ss.clear();
            ys.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
        }

        let step = match cfg.line_search {
            LineSearch::StrongWolfe => {
                strong_wolfe(&mut objective, &x, f, dphi0, &d, cfg)?
            }
            LineSearch::Secant => secant_step(&mut objective, &x, dphi0, &d, cfg)?,
        };
        let (alpha, f_new, g_new) = match step {
            Some(s) => s,
            None => {
                line_search_failed = true;
                break;
            }
        };

        let mut s = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            s[i] = alpha * d[i];
            y[i] = g_new[i] - g[i];
        }
        for i in 0..n {
            x[i] += s[i];
        }
        let f_prev = f;
        f = f_new;
        g = g_new;
        iterations += 1;
        trace.push(f);
        if f < best_f {
            best_f = f;
            best_x = x.clone();
        }
        on_accept(iterations, &x, f);

        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            ss.push(s);
            ys.push(y);
            if ss.len() > cfg.history {
                ss.remove(0);
                ys.remove(0);
            }
        }

        if (f_prev - f).abs() <= cfg.loss_change_tol {
            converged_loss = true;
            break;
        }
    }

    Ok(LbfgsResult {
        x: best_x,
        loss: best_f,
        trace,
        iterations,
        line_search_failed,
        converged_grad,
        converged_loss,
    })
}

/// Bracket-and-zoom strong-Wolfe search. Returns `(alpha, f, grad)` at an
/// accepted step or `None` when the trial budget is exhausted.
fn strong_wolfe<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    dphi0: f64,
    d: &[f64],
    cfg: &LbfgsConfig,
) -> Result<Option<(f64, f64, Vec<f64>)>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x.len();
    let mut trials = 0;
    let mut probe = |alpha: f64, trials: &mut usize| -> Result<Option<(f64, f64, Vec<f64>)>> {
        if *trials >= cfg.max_ls_trials {
            return Ok(None);
        }
        *trials += 1;
        let mut xt = vec![0.0; n];
        for i in 0..n {
            xt[i] = x[i] + alpha * d[i];
        }
        let (ft, gt) = objective(&xt)?;
        Ok(Some((ft, dot(&gt, d), gt)))
    };

    let armijo = |alpha: f64, ft: f64| ft <= f0 + cfg.c1 * alpha * dphi0;
    let curvature = |dphit: f64| dphit.abs() <= -cfg.c2 * dphi0;

    // Bracketing phase.
    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut dphi_prev = dphi0;
    let mut alpha = cfg.learning_rate;
    let bracket: (f64, f64, f64, f64); // lo, f_lo, dphi_lo, hi
    let mut first = true;
    loop {
        let (ft, dphit, gt) = match probe(alpha, &mut trials)? {
            Some(v) => v,
            None => return Ok(None),
        };
        if !ft.is_finite() || !armijo(alpha, ft) || (!first && ft >= f_prev) {
            bracket = (alpha_prev, f_prev, dphi_prev, alpha);
            break;
        }
        if curvature(dphit) {
            return Ok(Some((alpha, ft, gt)));
        }
        if dphit >= 0.0 {
            bracket = (alpha, ft, dphit, alpha_prev);
            break;
        }
        alpha_prev = alpha;
        f_prev = ft;
        dphi_prev = dphit;
        alpha *= 2.0;
        first = false;
    }

    // Zoom phase: bisection on the bracket.
    let (mut lo, mut f_lo, mut dphi_lo, mut hi) = bracket;
    loop {
        let mid = 0.5 * (lo + hi);
        let (fm, dphim, gm) = match probe(mid, &mut trials)? {
            Some(v) => v,
            None => return Ok(None),
        };
        if !fm.is_finite() || !armijo(mid, fm) || fm >= f_lo {
            hi = mid;
        } else {
            if curvature(dphim) {
                return Ok(Some((mid, fm, gm)));
            }
            if dphim * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = mid;
            f_lo = fm;
            dphi_lo = dphim;
        }
        let _ = dphi_lo;
        if (hi - lo).abs() < 1e-16 * (1.0 + lo.abs()) {
            return Ok(None);
        }
    }
}

/// One secant update of the step length from two directional derivatives;
/// lands on the exact minimizer for quadratic objectives.
fn secant_step<F>(
    objective: &mut F,
    x: &[f64],
    dphi0: f64,
    d: &[f64],
    cfg: &LbfgsConfig,
) -> Result<Option<(f64, f64, Vec<f64>)>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x.len();
    let a1 = cfg.learning_rate;
    let mut xt = vec![0.0; n];
    for i in 0..n {
        xt[i] = x[i] + a1 * d[i];
    }
    let (f1, g1) = objective(&xt)?;
    let dphi1 = dot(&g1, d);
    let denom = dphi1 - dphi0;
    if denom <= 0.0 {
        // Non-convex along d; keep the probe step.
        return Ok(Some((a1, f1, g1)));
    }
    let alpha = -dphi0 * a1 / denom;
    for i in 0..n {
        xt[i] = x[i] + alpha * d[i];
    }
    let (fa, ga) = objective(&xt)?;
    Ok(Some((alpha, fa, ga)))
}
