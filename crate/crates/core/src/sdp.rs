//! Small dense semidefinite solver: log-barrier path-following interior-point
//! method for problems of the form
//!
//!   maximize g·y   subject to   F(y) = F0 + Σ_i y_i F_i ⪰ 0,  |y_i| ≤ r.
//!
//! Feasibility of an LMI is decided through the margin problem
//! max { t : F(y) − tI ⪰ 0 }, which always has the strictly interior starting
//! point y = 0, t = λmin(F0) − 1.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Affine matrix-valued map y ↦ F0 + Σ_i y_i F_i with symmetric blocks.
#[derive(Debug, Clone)]
pub struct AffineMatrixInequality {
    pub f0: DMatrix<f64>,
    pub fs: Vec<DMatrix<f64>>,
}

impl AffineMatrixInequality {
    pub fn new(f0: DMatrix<f64>, fs: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = f0.nrows();
        if f0.ncols() != d {
            return Err(Error::DimensionMismatch("F0 must be square".into()));
        }
        for (i, f) in fs.iter().enumerate() {
            if f.nrows() != d || f.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "F_{} is {}x{}, expected {}x{}",
                    i + 1,
                    f.nrows(),
                    f.ncols(),
                    d,
                    d
                )));
            }
        }
        for (label, f) in std::iter::once(("F0", &f0)).chain(fs.iter().map(|f| ("F_i", f))) {
            let asym = (f - f.transpose()).norm();
            if asym > 1e-10 * (1.0 + f.norm()) {
                return Err(Error::InvalidParameter(format!(
                    "{label} must be symmetric (asymmetry {asym:.3e})"
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("LMI coefficient matrix".into()));
            }
        }
        Ok(AffineMatrixInequality { f0, fs })
    }

    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn num_vars(&self) -> usize {
        self.fs.len()
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.f0.clone();
        for (fi, &yi) in self.fs.iter().zip(y.iter()) {
            f += fi * yi;
        }
        f
    }
}

/// Status of an LMI feasibility or optimization run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    Inconclusive,
}

/// Result of a solver run. `margin` is λmin-style slack: for the margin
/// problem it is the optimal t, for generic maximization it is λmin(F(y)).
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SdpStatus,
    pub point: DVector<f64>,
    pub objective: f64,
    pub margin: f64,
    pub iterations: usize,
    pub note: String,
}

/// Interior-point configuration.
#[derive(Debug, Clone, Copy)]
pub struct IpConfig {
    /// Absolute duality-gap target.
    pub gap_tol: f64,
    /// Margin threshold separating Feasible / Infeasible verdicts.
    pub tol_feas: f64,
    /// Total Newton-iteration budget.
    pub max_newton: usize,
    /// Trust-region (box) radius on every variable.
    pub radius: f64,
}

impl Default for IpConfig {
    fn default() -> Self {
        IpConfig {
            gap_tol: 1e-9,
            tol_feas: 1e-8,
            max_newton: 50_000,
            radius: 1e6,
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

fn barrier_value(ami: &AffineMatrixInequality, y: &DVector<f64>, radius: f64) -> Option<f64> {
    let f = ami.eval(y);
    let d = f.nrows();
    let chol = f.cholesky()?;
    let mut logdet = 0.0;
    for i in 0..d {
        let lii = chol.l_dirty()[(i, i)];
        if lii <= 0.0 {
            return None;
        }
        logdet += lii.ln();
    }
    let mut box_term = 0.0;
    for &yi in y.iter() {
        let lo = radius + yi;
        let hi = radius - yi;
        if lo <= 0.0 || hi <= 0.0 {
            return None;
        }
        box_term += lo.ln() + hi.ln();
    }
    Some(-2.0 * logdet - box_term)
}

/// Maximizes g·y over the strictly feasible region starting from `y0`, which
/// must satisfy F(y0) ≻ 0 and |y0_i| < radius.
pub fn maximize(
    ami: &AffineMatrixInequality,
    g: &DVector<f64>,
    y0: &DVector<f64>,
    cfg: &IpConfig,
) -> Result<SolveOutcome> {
    let k = ami.num_vars();
    if g.len() != k || y0.len() != k {
        return Err(Error::DimensionMismatch(
            "objective / start dimension does not match the LMI".into(),
        ));
    }
    let d = ami.dim();
    if barrier_value(ami, y0, cfg.radius).is_none() {
        return Err(Error::InvalidParameter(
            "starting point is not strictly interior".into(),
        ));
    }
    let nu = d as f64 + 2.0 * k as f64; // barrier parameter
    let mut y = y0.clone();
    let mut tau = 1.0;
    let mut newton_used = 0usize;

    // Cap the Newton steps spent on a single barrier stage: a warm-started
    // centering needs few steps, and the cap prevents crawling along the
    // boundary at large tau where rounding dominates.
    let stage_cap = 200usize;
    while nu / tau > cfg.gap_tol {
        // Centering for the current tau.
        let mut stage_used = 0usize;
        loop {
            if stage_used >= stage_cap {
                break;
            }
            stage_used += 1;
            if newton_used >= cfg.max_newton {
                return Ok(SolveOutcome {
                    status: SdpStatus::Inconclusive,
                    objective: g.dot(&y),
                    margin: min_eigenvalue(&ami.eval(&y)),
                    point: y,
                    iterations: newton_used,
                    note: "Newton budget exhausted".into(),
                });
            }
            newton_used += 1;

            let f = ami.eval(&y);
            let Some(chol) = f.cholesky() else {
                break; // rounding pushed the iterate onto the cone boundary
            };
            // S_i = L^{-1} F_i L^{-T}; grad_i = -tr(S_i), hess_ij = <S_i,S_j>.
            let Some(l_inv) = chol.l().solve_lower_triangular(&DMatrix::identity(d, d)) else {
                break;
            };
            let s: Vec<DMatrix<f64>> = ami
                .fs
                .iter()
                .map(|fi| &l_inv * fi * l_inv.transpose())
                .collect();
            let mut grad = DVector::zeros(k);
            let mut hess = DMatrix::zeros(k, k);
            for i in 0..k {
                grad[i] = -tau * g[i] - s[i].trace() + 1.0 / (cfg.radius - y[i])
                    - 1.0 / (cfg.radius + y[i]);
                for j in i..k {
                    let v = s[i].dot(&s[j]);
                    hess[(i, j)] = v;
                    hess[(j, i)] = v;
                }
                hess[(i, i)] += 1.0 / (cfg.radius - y[i]).powi(2)
                    + 1.0 / (cfg.radius + y[i]).powi(2);
            }
            if grad.iter().any(|v| !v.is_finite()) || hess.iter().any(|v| !v.is_finite()) {
                break; // overflow near the boundary; accept the current center
            }
            // Solve H Δ = -grad, with a ridge fallback.
            let mut ridge = 0.0;
            let mut step = None;
            while ridge <= 1e6 {
                let mut h = hess.clone();
                if ridge > 0.0 {
                    for i in 0..k {
                        h[(i, i)] += ridge;
                    }
                }
                if let Some(ch) = h.cholesky() {
                    step = Some(ch.solve(&(-&grad)));
                    break;
                }
                ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
            }
            let Some(step) = step else {
                break;
            };
            let decrement = -grad.dot(&step);
            if decrement <= 2e-10 {
                break;
            }
            // Backtracking line search keeping the iterate strictly interior.
            let phi0 = tau * (-g.dot(&y)) + barrier_value(ami, &y, cfg.radius).unwrap();
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &y + &step * alpha;
                if let Some(b) = barrier_value(ami, &cand, cfg.radius) {
                    let phi = tau * (-g.dot(&cand)) + b;
                    if phi <= phi0 - 0.25 * alpha * decrement {
                        y = cand;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved || alpha * decrement < 1e-16 * (1.0 + tau) {
                break; // progress below rounding; accept current center
            }
        }
        tau *= 10.0;
    }

    let f = ami.eval(&y);
    Ok(SolveOutcome {
        status: SdpStatus::Feasible,
        objective: g.dot(&y),
        margin: min_eigenvalue(&f),
        point: y,
        iterations: newton_used,
        note: String::new(),
    })
}

/// Maximizes the margin t in F(y) − tI ⪰ 0. The returned `point` holds y (the
/// embedded t is reported as `margin`/`objective`).
pub fn solve_lmi_max_margin(
    ami: &AffineMatrixInequality,
    cfg: &IpConfig,
) -> Result<SolveOutcome> {
    let d = ami.dim();
    let k = ami.num_vars();
    let mut fs = ami.fs.clone();
    fs.push(-DMatrix::<f64>::identity(d, d));
    let embedded = AffineMatrixInequality {
        f0: ami.f0.clone(),
        fs,
    };
    let mut g = DVector::zeros(k + 1);
    g[k] = 1.0;
    let t0 = min_eigenvalue(&ami.f0) - 1.0;
    let mut cfg = *cfg;
    if cfg.radius < 2.0 * t0.abs() + 10.0 {
        cfg.radius = 2.0 * t0.abs() + 10.0;
    }
    let mut y0 = DVector::zeros(k + 1);
    y0[k] = t0;
    let mut out = maximize(&embedded, &g, &y0, &cfg)?;
    let t = out.point[k];
    let y = DVector::from_iterator(k, out.point.iter().take(k).copied());
    out.point = y;
    out.objective = t;
    out.margin = t;
    out.status = SdpStatus::Inconclusive; // the caller interprets the margin
    Ok(out)
}

/// Decides feasibility of F(y) ≻ 0 via the margin problem, re-solving with a
/// ten-fold larger trust region before declaring infeasibility.
pub fn solve_lmi_feasibility(
    ami: &AffineMatrixInequality,
    cfg: &IpConfig,
) -> Result<SolveOutcome> {
    let mut out = solve_lmi_max_margin(ami, cfg)?;
    if out.margin >= cfg.tol_feas {
        // Confirm with an actual eigenvalue check at the returned point.
        let lam = min_eigenvalue(&ami.eval(&out.point));
        out.status = if lam > 0.0 {
            SdpStatus::Feasible
        } else {
            SdpStatus::Inconclusive
        };
        out.margin = lam;
        return Ok(out);
    }
    if out.margin <= -cfg.tol_feas {
        let wide = IpConfig {
            radius: cfg.radius * 10.0,
            ..*cfg
        };
        let confirm = solve_lmi_max_margin(ami, &wide)?;
        if confirm.margin <= -cfg.tol_feas {
            out = confirm;
            out.status = SdpStatus::Infeasible;
            out.note = "negative margin stable under trust-region widening".into();
            return Ok(out);
        }
        out = confirm;
    }
    out.status = SdpStatus::Inconclusive;
    out.note = "margin within tolerance band".into();
    Ok(out)
}
