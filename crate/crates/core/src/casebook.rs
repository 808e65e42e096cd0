//! Cancer self-remission and smoking cessation case studies: equilibria,
//! linearizations around the positive equilibrium, and the sufficient
//! mean-square-stability condition checker for the cancer model.

use nalgebra::{DMatrix, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LinearSDESystem;

/// Parameters of the tumor/hunting/resting-cell model.
///
/// Standing assumptions: all rates positive, `k1 > k2`, `s > d2` and
/// `beta > s*d1 / (k2*(s - d2))`.
#[derive(Debug, Clone, Copy)]
pub struct CancerParams {
    pub r: f64,
    pub q: f64,
    pub k1: f64,
    pub k2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub d1: f64,
    pub d2: f64,
    pub s: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
}

impl CancerParams {
    /// The benchmark tumor-immune parameter set with chosen noise intensities.
    pub fn table1(sigma1: f64, sigma2: f64, sigma3: f64) -> Self {
        CancerParams {
            r: 0.9,
            q: 10.0,
            k1: 0.8,
            k2: 0.7,
            alpha: 0.3,
            beta: 0.1,
            d1: 0.02,
            d2: 0.03,
            s: 0.8,
            sigma1,
            sigma2,
            sigma3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r", self.r),
            ("q", self.q),
            ("k1", self.k1),
            ("k2", self.k2),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("d1", self.d1),
            ("d2", self.d2),
            ("s", self.s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "cancer parameter {name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma3", self.sigma3),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "cancer parameter {name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.k1 > self.k2) {
            return Err(Error::InvalidParameter("cancer model needs k1 > k2".into()));
        }
        if !(self.s > self.d2) {
            return Err(Error::InvalidParameter("cancer model needs s > d2".into()));
        }
        let beta_min = self.s * self.d1 / (self.k2 * (self.s - self.d2));
        if !(self.beta > beta_min) {
            return Err(Error::InvalidParameter(format!(
                "cancer model needs beta > s*d1/(k2*(s-d2)) = {beta_min}"
            )));
        }
        Ok(())
    }

    /// δ₂ = αN† (> 0 in the admissible regime).
    fn delta2(&self) -> f64 {
        self.alpha * self.equilibrium_unchecked().1
    }

    /// δ₁ = −sqrt([αs/β (1 − d1/(βk2)) − αd2/β − r]² + 4rq/k1).
    fn delta1(&self) -> f64 {
        let inner = self.delta2() - self.r;
        -(inner * inner + 4.0 * self.r * self.q / self.k1).sqrt()
    }

    fn equilibrium_unchecked(&self) -> (f64, f64, f64) {
        let n = (self.s / self.beta) * (1.0 - self.d1 / (self.beta * self.k2))
            - self.d2 / self.beta;
        let z = self.d1 / self.beta;
        let an_r = self.alpha * n - self.r;
        let m = (-an_r + (an_r * an_r + 4.0 * self.r * self.q / self.k1).sqrt())
            / (2.0 * self.r / self.k1);
        (m, n, z)
    }
}

/// Non-linear vector field of the deterministic cancer model.
pub fn cancer_vector_field(p: &CancerParams, m: f64, n: f64, z: f64) -> Vector3<f64> {
    Vector3::new(
        p.q + p.r * m * (1.0 - m / p.k1) - p.alpha * m * n,
        p.beta * n * z - p.d1 * n,
        p.s * z * (1.0 - z / p.k2) - p.beta * n * z - p.d2 * z,
    )
}

/// Unique positive equilibrium (M†, N†, Z†) of the cancer model.
pub fn cancer_equilibrium(params: &CancerParams) -> Result<(f64, f64, f64)> {
    params.validate()?;
    let eq = params.equilibrium_unchecked();
    debug_assert!(eq.0 > 0.0 && eq.1 > 0.0 && eq.2 > 0.0);
    Ok(eq)
}

/// Linearization of the stochastic cancer model at the positive equilibrium.
pub fn cancer_linearization(params: &CancerParams) -> Result<LinearSDESystem> {
    params.validate()?;
    let (m_eq, n_eq, _) = params.equilibrium_unchecked();
    let delta1 = params.delta1();
    let delta2 = params.alpha * n_eq;
    let delta3 = -params.alpha * m_eq;
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[
            delta1,
            delta3,
            0.0,
            0.0,
            0.0,
            (params.beta / params.alpha) * delta2,
            0.0,
            -params.d1,
            -params.s * params.d1 / (params.beta * params.k2),
        ],
    );
    let diag_noise = |j: usize, sigma: f64| {
        let mut b = DMatrix::zeros(3, 3);
        b[(j, j)] = sigma;
        b
    };
    LinearSDESystem::new(
        "cancer_linearized",
        a,
        vec![
            diag_noise(0, params.sigma1),
            diag_noise(1, params.sigma2),
            diag_noise(2, params.sigma3),
        ],
    )
    .map(|s| {
        s.with_metadata("delta1", delta1)
            .with_metadata("delta2", delta2)
            .with_metadata("delta3", delta3)
    })
}

/// One inequality of the sufficient-condition report.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionSlack {
    pub name: String,
    /// Positive slack means the condition holds.
    pub slack: f64,
    pub pass: bool,
}

/// Report of the cancer sufficient mean-square-stability conditions.
#[derive(Debug, Clone, Serialize)]
pub struct CancerConditionReport {
    pub w2: f64,
    pub conditions: Vec<ConditionSlack>,
    pub pass: bool,
}

/// Checks the sufficient conditions for exponential mean-square stability of
/// the linearized cancer model with Lyapunov weights (w3, w4).
///
/// The conditions are exactly positive definiteness (via Sylvester's
/// criterion) of the matrix Q̄ with LV(u) = −uᵀQ̄u for the weighted quadratic
/// Lyapunov function ½[u₁² + w₂u₂² + w₃u₃² + w₄(u₂+u₃)²]:
///   * w₂ + w₄ > 0 and the ν₃ precondition −(β/α)δ₂w₄/(w₃+w₄) + sd₁/(βk₂) > 0,
///   * σ₁² < −2δ₁                                        (Q̄₁₁ > 0),
///   * σ₂² < 2d₁w₄/(w₂+w₄) − δ₃²/((w₂+w₄)|2δ₁+σ₁²|)      (Q̄₁₁Q̄₂₂ > Q̄₁₂²),
///   * σ₃² < −2(β/α)δ₂w₄/(w₃+w₄) + 2sd₁/(βk₂)            (Q̄₃₃ > 0).
/// When σ₁² → −2δ₁ the σ₂ bound collapses to −∞ and is reported as such.
pub fn cancer_sufficient_conditions(
    params: &CancerParams,
    w3: f64,
    w4: f64,
) -> Result<CancerConditionReport> {
    params.validate()?;
    if !(w4 >= 0.0) {
        return Err(Error::InvalidParameter("w4 must be non-negative".into()));
    }
    if !(w3 + w4 > 0.0) {
        return Err(Error::InvalidParameter("need w3 + w4 > 0".into()));
    }
    let delta1 = params.delta1();
    let delta2 = params.delta2();
    let (m_eq, _, _) = params.equilibrium_unchecked();
    let delta3 = -params.alpha * m_eq;
    let ba_delta2 = (params.beta / params.alpha) * delta2;
    let sd1_bk2 = params.s * params.d1 / (params.beta * params.k2);

    let w2 = (params.alpha / (params.beta * delta2))
        * ((params.d1 - ba_delta2 + sd1_bk2) * w4 + params.d1 * w3);

    let mut conditions = Vec::new();
    let mut push = |name: &str, slack: f64| {
        conditions.push(ConditionSlack {
            name: name.to_string(),
            slack,
            pass: slack > 0.0,
        });
    };

    push("w2 + w4 > 0", w2 + w4);
    // Precondition on the ν₃ coefficient: −(β/α)δ₂w₄/(w₃+w₄) + sd₁/(βk₂) > 0.
    push(
        "nu3 precondition",
        -ba_delta2 * w4 / (w3 + w4) + sd1_bk2,
    );
    push("sigma1 bound (sigma1^2 < -2*delta1)", -2.0 * delta1 - params.sigma1 * params.sigma1);

    // σ₂ bound: σ₂² < 2d₁w₄/(w₂+w₄) − δ₃²/((w₂+w₄)|2δ₁+σ₁²|). This is the
    // determinant leg of Sylvester's criterion, Q̄₂₂ > (δ₃²/4)/Q̄₁₁; the bound
    // degenerates to −∞ as Q̄₁₁ → 0.
    let denom = (2.0 * delta1 + params.sigma1 * params.sigma1).abs();
    let sigma2_bound = if denom == 0.0 {
        f64::NEG_INFINITY
    } else {
        2.0 * params.d1 * w4 / (w2 + w4) - delta3 * delta3 / ((w2 + w4) * denom)
    };
    push("sigma2 precondition (bound > 0)", sigma2_bound);
    push(
        "sigma2 bound",
        sigma2_bound - params.sigma2 * params.sigma2,
    );
    push(
        "sigma3 bound",
        -2.0 * ba_delta2 * w4 / (w3 + w4) + 2.0 * sd1_bk2
            - params.sigma3 * params.sigma3,
    );

    let pass = conditions.iter().all(|c| c.pass);
    Ok(CancerConditionReport { w2, conditions, pass })
}

/// Parameters of the smoking model; `sigma` is the relapse fraction in (0,1)
/// and `sigma1..3` the noise intensities on the three compartments.
#[derive(Debug, Clone, Copy)]
pub struct SmokingParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
}

impl SmokingParams {
    /// The benchmark smoking-dynamics parameter set with chosen noise intensities.
    pub fn baseline(sigma1: f64, sigma2: f64, sigma3: f64) -> Self {
        SmokingParams {
            alpha: 0.3,
            beta: 2.0,
            gamma: 1.0,
            mu: 1.0,
            sigma: 0.8,
            sigma1,
            sigma2,
            sigma3,
        }
    }

    /// Basic reproduction-style threshold R; the endemic equilibrium exists
    /// for R > 1.
    pub fn threshold(&self) -> f64 {
        self.beta * (self.mu + self.alpha)
            / (self.mu * (self.mu + self.alpha) + self.gamma * (self.sigma * self.alpha + self.mu))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("mu", self.mu),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma3", self.sigma3),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "smoking parameter {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidParameter(
                "smoking parameter sigma must lie in (0,1)".into(),
            ));
        }
        if !(self.threshold() > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "smoking model needs R > 1 (endemic regime), got R = {}",
                self.threshold()
            )));
        }
        Ok(())
    }
}

/// Endemic equilibrium (P*, S*, Q_T,*) of the smoking model.
pub fn smoking_equilibrium(params: &SmokingParams) -> Result<(f64, f64, f64)> {
    params.validate()?;
    let r = params.threshold();
    let p_star = 1.0 / r;
    let s_star = (params.mu / params.beta) * (r - 1.0);
    let qt_star = params.gamma * (1.0 - params.sigma) * s_star / (params.mu + params.alpha);
    Ok((p_star, s_star, qt_star))
}

/// Linearization of the stochastic smoking model at the endemic equilibrium.
pub fn smoking_linearization(params: &SmokingParams) -> Result<LinearSDESystem> {
    let (p_star, s_star, qt_star) = smoking_equilibrium(params)?;
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[
            -(params.mu + params.beta * s_star),
            -params.beta * p_star,
            0.0,
            params.beta * s_star,
            -(params.mu + params.gamma - params.beta * p_star),
            params.alpha,
            0.0,
            params.gamma * (1.0 - params.sigma),
            -(params.mu + params.alpha),
        ],
    );
    let diag_noise = |j: usize, v: f64| {
        let mut b = DMatrix::zeros(3, 3);
        b[(j, j)] = v;
        b
    };
    LinearSDESystem::new(
        "smoking_linearized",
        a,
        vec![
            diag_noise(0, params.sigma1 * p_star),
            diag_noise(1, params.sigma2 * s_star),
            diag_noise(2, params.sigma3 * qt_star),
        ],
    )
    .map(|s| {
        s.with_metadata("P_star", p_star)
            .with_metadata("S_star", s_star)
            .with_metadata("QT_star", qt_star)
            .with_metadata("R", params.threshold())
    })
}
