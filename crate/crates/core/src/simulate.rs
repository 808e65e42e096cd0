//! Monte Carlo simulation of dX = AX dt + Σ_j B_j X dW_j.
//!
//! Paths are Euler–Maruyama with one independent, counter-mode RNG stream per
//! path, so results are bitwise reproducible for a given seed regardless of
//! thread count: the parallel stage only produces per-path records, and the
//! reduction over paths always runs sequentially in path order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

use crate::cli::write_atomic;
use crate::error::{Error, Result};
use crate::model::LinearSDESystem;

/// A path is declared blown up (and excluded from moment statistics) once its
/// norm exceeds this; the blow-up fraction is reported separately.
pub const BLOWUP_NORM: f64 = 1e12;

#[derive(Debug, Clone, Serialize)]
pub struct SimulationConfig {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Number of (roughly evenly spaced) recording times; 0 picks 50.
    pub records: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            paths: 1000,
            dt: 1e-3,
            horizon: 1.0,
            seed: 0,
            records: 50,
        }
    }
}

impl SimulationConfig {
    fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidParameter("need at least one path".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Monte Carlo moment estimates along a time grid.
#[derive(Debug, Clone, Serialize)]
pub struct PathStats {
    /// Moment order used for `moment_mean`.
    pub p: f64,
    pub times: Vec<f64>,
    /// Sample mean of ‖X(t)‖^p over surviving paths.
    pub moment_mean: Vec<f64>,
    /// Standard error of that mean.
    pub moment_se: Vec<f64>,
    /// Entrywise sample mean of X(t)X(t)ᵀ (row-major n×n per time).
    #[serde(skip)]
    pub second_moment: Vec<DMatrix<f64>>,
    /// Entrywise standard error of the above.
    #[serde(skip)]
    pub second_moment_se: Vec<DMatrix<f64>>,
    /// Entrywise sample mean of X(t).
    #[serde(skip)]
    pub mean_state: Vec<DVector<f64>>,
    /// Entrywise standard error of the above.
    #[serde(skip)]
    pub mean_state_se: Vec<DVector<f64>>,
    pub paths: usize,
    pub surviving_paths: usize,
    pub blowup_fraction: f64,
    pub seed: u64,
    pub dt: f64,
}

struct PathRecord {
    moments: Vec<f64>,
    outers: Vec<DMatrix<f64>>,
    states: Vec<DVector<f64>>,
    blown: bool,
}

fn simulate_one(
    sys: &LinearSDESystem,
    x0: &DVector<f64>,
    p: f64,
    cfg: &SimulationConfig,
    record_steps: &[usize],
    path_index: u64,
) -> PathRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path_index.wrapping_add(1));
    let sqrt_dt = cfg.dt.sqrt();
    let steps = *record_steps.last().unwrap();
    let mut x = x0.clone();
    let mut moments = Vec::with_capacity(record_steps.len());
    let mut outers = Vec::with_capacity(record_steps.len());
    let mut states = Vec::with_capacity(record_steps.len());
    let mut blown = false;
    let mut next_record = 0usize;
    let mut record_if_due = |step: usize, x: &DVector<f64>, next_record: &mut usize| {
        while *next_record < record_steps.len() && record_steps[*next_record] == step {
            moments.push(x.norm().powf(p));
            outers.push(x * x.transpose());
            states.push(x.clone());
            *next_record += 1;
        }
    };
    record_if_due(0, &x, &mut next_record);
    for step in 1..=steps {
        let mut dx = &sys.a * &x * cfg.dt;
        for b in &sys.b {
            let dw: f64 = rng.sample::<f64, _>(StandardNormal);
            dx += b * &x * (sqrt_dt * dw);
        }
        x += dx;
        let norm = x.norm();
        if !norm.is_finite() || norm > BLOWUP_NORM {
            blown = true;
            break;
        }
        record_if_due(step, &x, &mut next_record);
    }
    PathRecord {
        moments,
        outers,
        states,
        blown,
    }
}


/// Simulates `cfg.paths` Euler–Maruyama paths from `x0` and returns moment
/// estimates of order `p` plus the full second-moment matrix along the grid.
pub fn euler_maruyama(
    sys: &LinearSDESystem,
    x0: &DVector<f64>,
    p: f64,
    cfg: &SimulationConfig,
) -> Result<PathStats> {
    cfg.validate()?;
    if x0.len() != sys.n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, system dimension is {}",
            x0.len(),
            sys.n
        )));
    }
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "moment order must be positive, got {p}"
        )));
    }
    let steps = (cfg.horizon / cfg.dt).ceil().max(1.0) as usize;
    let records = if cfg.records == 0 { 50 } else { cfg.records };
    let mut record_steps: Vec<usize> = (0..=records)
        .map(|k| (k * steps) / records)
        .collect();
    record_steps.dedup();
    let times: Vec<f64> = record_steps.iter().map(|&s| s as f64 * cfg.dt).collect();

    let results: Vec<PathRecord> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|k| simulate_one(sys, x0, p, cfg, &record_steps, k))
        .collect();

    // Sequential, path-ordered reduction: deterministic in the seed alone.
    let nt = record_steps.len();
    let n = sys.n;
    let mut count = 0usize;
    let mut sum = vec![0.0f64; nt];
    let mut sumsq = vec![0.0f64; nt];
    let mut msum = vec![DMatrix::<f64>::zeros(n, n); nt];
    let mut msumsq = vec![DMatrix::<f64>::zeros(n, n); nt];
    let mut vsum = vec![DVector::<f64>::zeros(n); nt];
    let mut vsumsq = vec![DVector::<f64>::zeros(n); nt];
    let mut blown = 0usize;
    for rec in &results {
        if rec.blown {
            blown += 1;
            continue;
        }
        count += 1;
        for (t, (&m, o)) in rec.moments.iter().zip(&rec.outers).enumerate() {
            sum[t] += m;
            sumsq[t] += m * m;
            msum[t] += o;
            msumsq[t] += o.component_mul(o);
            vsum[t] += &rec.states[t];
            vsumsq[t] += rec.states[t].component_mul(&rec.states[t]);
        }
    }
    if count == 0 {
        return Err(Error::Contract(
            "every simulated path blew up; no statistics available".into(),
        ));
    }
    let cf = count as f64;
    let se = |s: f64, ss: f64| {
        let var = (ss / cf - (s / cf) * (s / cf)).max(0.0);
        (var / cf).sqrt()
    };
    let moment_mean: Vec<f64> = sum.iter().map(|&s| s / cf).collect();
    let moment_se: Vec<f64> = sum.iter().zip(&sumsq).map(|(&s, &ss)| se(s, ss)).collect();
    let second_moment: Vec<DMatrix<f64>> = msum.iter().map(|m| m / cf).collect();
    let second_moment_se: Vec<DMatrix<f64>> = msum
        .iter()
        .zip(&msumsq)
        .map(|(s, ss)| DMatrix::from_fn(n, n, |i, j| se(s[(i, j)], ss[(i, j)])))
        .collect();
    let mean_state: Vec<DVector<f64>> = vsum.iter().map(|v| v / cf).collect();
    let mean_state_se: Vec<DVector<f64>> = vsum
        .iter()
        .zip(&vsumsq)
        .map(|(s, ss)| DVector::from_fn(n, |i, _| se(s[i], ss[i])))
        .collect();

    Ok(PathStats {
        p,
        times,
        moment_mean,
        moment_se,
        second_moment,
        second_moment_se,
        mean_state,
        mean_state_se,
        paths: cfg.paths,
        surviving_paths: count,
        blowup_fraction: blown as f64 / cfg.paths as f64,
        seed: cfg.seed,
        dt: cfg.dt,
    })
}

/// Exact sample of X(t) when A and every B_j all commute pairwise:
/// X(t) = exp((A − ½ Σ_j B_j²) t + Σ_j B_j W_j(t)) x0, W_j(t) ~ N(0, t).
pub fn exact_commuting_sample(
    sys: &LinearSDESystem,
    x0: &DVector<f64>,
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    if x0.len() != sys.n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, system dimension is {}",
            x0.len(),
            sys.n
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    let scale = sys.a.norm() + sys.b.iter().map(|b| b.norm()).sum::<f64>() + 1.0;
    let mut mats: Vec<&DMatrix<f64>> = vec![&sys.a];
    mats.extend(sys.b.iter());
    for (i, u) in mats.iter().enumerate() {
        for v in mats.iter().skip(i + 1) {
            let comm = (*u * *v - *v * *u).norm();
            if comm > 1e-10 * scale * scale {
                return Err(Error::InvalidParameter(format!(
                    "exact sampling needs commuting coefficients; commutator norm {comm:.3e}"
                )));
            }
        }
    }
    let mut exponent = sys.a.clone() * t;
    for b in &sys.b {
        exponent -= b * b * (0.5 * t);
        let w: f64 = rng.sample::<f64, _>(StandardNormal);
        exponent += b * (w * t.sqrt());
    }
    Ok(exponent.exp() * x0)
}

/// First moment: E X(t) = exp(At) x0.
pub fn mean_evolve(sys: &LinearSDESystem, x0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if x0.len() != sys.n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, system dimension is {}",
            x0.len(),
            sys.n
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    Ok((sys.a.clone() * t).exp() * x0)
}

/// Least-squares exponential rate: fits log(moment) ≈ a + λt over the latter
/// half of the grid (skipping the transient) and returns λ. Requires strictly
/// positive moments on the fitted window.
pub fn fit_decay_rate(times: &[f64], moments: &[f64]) -> Result<f64> {
    if times.len() != moments.len() || times.len() < 4 {
        return Err(Error::InvalidParameter(
            "rate fit needs at least four matching samples".into(),
        ));
    }
    let start = times.len() / 2;
    let ts = &times[start..];
    let ms = &moments[start..];
    if ms.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidParameter(
            "rate fit needs strictly positive moment estimates".into(),
        ));
    }
    let k = ts.len() as f64;
    let mean_t = ts.iter().sum::<f64>() / k;
    let mean_l = ms.iter().map(|m| m.ln()).sum::<f64>() / k;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &m) in ts.iter().zip(ms) {
        num += (t - mean_t) * (m.ln() - mean_l);
        den += (t - mean_t) * (t - mean_t);
    }
    if den <= 0.0 {
        return Err(Error::InvalidParameter(
            "rate fit needs at least two distinct times".into(),
        ));
    }
    Ok(num / den)
}

/// Writes the moment trajectory as a tab-separated table:
/// time, mean of ‖X‖^p, standard error.
pub fn write_table(path: &Path, stats: &PathStats) -> Result<()> {
    let mut out = String::from("t\tmoment\tstderr\n");
    for ((t, m), s) in stats
        .times
        .iter()
        .zip(&stats.moment_mean)
        .zip(&stats.moment_se)
    {
        out.push_str(&format!("{t:.6}\t{m:.12e}\t{s:.12e}\n"));
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;
    use crate::verify;
    use approx::assert_relative_eq;

    fn scalar_system(a: f64, sigma: f64) -> LinearSDESystem {
        LinearSDESystem::new(
            "scalar",
            DMatrix::from_element(1, 1, a),
            vec![DMatrix::from_element(1, 1, sigma)],
        )
        .unwrap()
    }

    #[test]
    fn scalar_second_moment_within_three_standard_errors() {
        let sys = scalar_system(-0.8, 0.4);
        let cfg = SimulationConfig {
            paths: 4000,
            dt: 5e-4,
            horizon: 1.0,
            seed: 12,
            records: 10,
        };
        let stats = euler_maruyama(&sys, &DVector::from_element(1, 1.0), 2.0, &cfg).unwrap();
        assert_eq!(stats.blowup_fraction, 0.0);
        let last = stats.times.len() - 1;
        let exact = ((2.0 * -0.8 + 0.16) * stats.times[last]).exp();
        let err = (stats.moment_mean[last] - exact).abs();
        // 3 SE plus an O(dt) discretization allowance.
        assert!(
            err <= 3.0 * stats.moment_se[last] + 5.0 * cfg.dt,
            "err {err} vs se {}",
            stats.moment_se[last]
        );
    }

    #[test]
    fn estimates_are_bitwise_deterministic() {
        let sys = model::random_linear_oscillator(1.0, 0.5, 0.3, 0.2).unwrap();
        let cfg = SimulationConfig {
            paths: 200,
            dt: 1e-3,
            horizon: 0.5,
            seed: 99,
            records: 7,
        };
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let s1 = euler_maruyama(&sys, &x0, 1.0, &cfg).unwrap();
        let s2 = euler_maruyama(&sys, &x0, 1.0, &cfg).unwrap();
        assert_eq!(s1.moment_mean, s2.moment_mean);
        assert_eq!(s1.moment_se, s2.moment_se);
        assert_eq!(s1.second_moment, s2.second_moment);
    }

    #[test]
    fn monte_carlo_tracks_the_moment_ode() {
        let sys = model::random_linear_oscillator(1.0, 0.5, 0.3, 0.2).unwrap();
        let cfg = SimulationConfig {
            paths: 3000,
            dt: 1e-3,
            horizon: 1.0,
            seed: 4,
            records: 4,
        };
        let x0 = DVector::from_vec(vec![1.0, 0.5]);
        let stats = euler_maruyama(&sys, &x0, 2.0, &cfg).unwrap();
        for (idx, &t) in stats.times.iter().enumerate() {
            let exact = verify::second_moment_evolve(&sys, &x0, t).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let err = (stats.second_moment[idx][(i, j)] - exact[(i, j)]).abs();
                    let tol = 3.0 * stats.second_moment_se[idx][(i, j)] + 10.0 * cfg.dt;
                    assert!(err <= tol, "entry ({i},{j}) at t={t}: err {err} tol {tol}");
                }
            }
        }
    }

    #[test]
    fn deterministic_blowup_is_detected() {
        // No noise, A = 3I: ‖X(t)‖ = e^{3t}·‖x0‖ crosses 1e12 before t = 10.
        let sys = LinearSDESystem::new(
            "explode",
            DMatrix::from_diagonal_element(1, 1, 3.0),
            vec![DMatrix::zeros(1, 1)],
        )
        .unwrap();
        let cfg = SimulationConfig {
            paths: 3,
            dt: 1e-2,
            horizon: 10.0,
            seed: 0,
            records: 5,
        };
        let err = euler_maruyama(&sys, &DVector::from_element(1, 1.0), 2.0, &cfg);
        // All paths blow up, so no statistics survive.
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn exact_commuting_sample_matches_scalar_formula() {
        let (a, sigma, x0, t) = (-0.4, 0.7, 2.0, 1.3);
        let sys = scalar_system(a, sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample = exact_commuting_sample(&sys, &DVector::from_element(1, x0), t, &mut rng)
            .unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let w: f64 = rng2.sample::<f64, _>(StandardNormal);
        let exact = x0 * ((a - 0.5 * sigma * sigma) * t + sigma * w * t.sqrt()).exp();
        assert_relative_eq!(sample[0], exact, max_relative = 1e-12);
    }

    #[test]
    fn exact_sampler_rejects_noncommuting_coefficients() {
        let sys = model::sanov_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let res = exact_commuting_sample(&sys, &DVector::from_vec(vec![1.0, 1.0]), 1.0, &mut rng);
        assert!(matches!(res, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn mean_matches_matrix_exponential() {
        let sys = model::two_inertia(2.0, 0.3, 0.5).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 3.0]);
        // A = (ρ/2)[[-1,1],[1,-1]] preserves the sum and decays the
        // difference at rate ρ: E X(t) = (s/2)(1,1) + (d/2)e^{-ρt}(1,-1).
        let (s, d) = (4.0, -2.0);
        let m = mean_evolve(&sys, &x0, 0.7).unwrap();
        let decay = (-2.0f64 * 0.7).exp();
        assert_relative_eq!(m[0], 0.5 * (s + d * decay), max_relative = 1e-10);
        assert_relative_eq!(m[1], 0.5 * (s - d * decay), max_relative = 1e-10);
    }

    #[test]
    fn rate_fit_recovers_exact_exponential() {
        let times: Vec<f64> = (0..40).map(|k| 0.1 * k as f64).collect();
        let moments: Vec<f64> = times.iter().map(|&t| 3.0 * (-1.7f64 * t).exp()).collect();
        let rate = fit_decay_rate(&times, &moments).unwrap();
        assert_relative_eq!(rate, -1.7, max_relative = 1e-12);
    }

    #[test]
    fn table_export_round_trips_through_disk() {
        let sys = scalar_system(-1.0, 0.2);
        let cfg = SimulationConfig {
            paths: 10,
            dt: 1e-2,
            horizon: 0.2,
            seed: 1,
            records: 4,
        };
        let stats = euler_maruyama(&sys, &DVector::from_element(1, 1.0), 2.0, &cfg).unwrap();
        let dir = std::env::temp_dir().join("gbmstab-table-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("moments.tsv");
        write_table(&path, &stats).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t\tmoment\tstderr");
        assert_eq!(lines.len(), stats.times.len() + 1);
        std::fs::remove_dir_all(&dir).ok();
    }
}
