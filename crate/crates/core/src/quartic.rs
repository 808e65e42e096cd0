//! Homogeneous quartic forms, the Lyapunov quartic H, and the infinitesimal
//! generator of the linear SDE acting on V(x) = (x*Qx)^{p/2}.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::LinearSDESystem;

/// Degree-4 multi-indices over n variables in graded lexicographic order,
/// together with a reverse-lookup map. |table| = C(n+3, 4).
#[derive(Debug, Clone)]
pub struct MultiIndexTable {
    pub n: usize,
    pub indices: Vec<Vec<usize>>,
    position: BTreeMap<Vec<usize>, usize>,
}

impl MultiIndexTable {
    pub fn new(n: usize) -> Self {
        let mut indices = Vec::new();
        let mut alpha = vec![0usize; n];
        enumerate_rec(&mut alpha, 0, 4, &mut indices);
        let position = indices
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        MultiIndexTable { n, indices, position }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of a multi-index in the table.
    pub fn index_of(&self, alpha: &[usize]) -> usize {
        self.position[alpha]
    }

    /// Exponents of `alpha` sorted descending, e.g. [2,1,1] for x1*x2^2*x3.
    pub fn partition_class(alpha: &[usize]) -> Vec<usize> {
        let mut parts: Vec<usize> = alpha.iter().copied().filter(|&e| e > 0).collect();
        parts.sort_unstable_by(|a, b| b.cmp(a));
        parts
    }
}

fn enumerate_rec(alpha: &mut Vec<usize>, pos: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
    if pos == alpha.len() - 1 {
        alpha[pos] = remaining;
        out.push(alpha.clone());
        alpha[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        alpha[pos] = e;
        enumerate_rec(alpha, pos + 1, remaining - e, out);
    }
    alpha[pos] = 0;
}

/// Homogeneous quartic form Σ_α c_α x^α with coefficients aligned to a
/// [`MultiIndexTable`].
#[derive(Debug, Clone)]
pub struct QuarticForm {
    pub n: usize,
    pub coeffs: Vec<f64>,
}

impl QuarticForm {
    pub fn zero(table: &MultiIndexTable) -> Self {
        QuarticForm {
            n: table.n,
            coeffs: vec![0.0; table.len()],
        }
    }

    pub fn eval(&self, table: &MultiIndexTable, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.n);
        let mut total = 0.0;
        for (alpha, &c) in table.indices.iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            let mut mono = 1.0;
            for (i, &e) in alpha.iter().enumerate() {
                for _ in 0..e {
                    mono *= x[i];
                }
            }
            total += c * mono;
        }
        total
    }

    /// Adds scale · (x*Sx)(x*Tx) to the coefficient vector; S, T symmetric.
    pub fn accumulate_product(
        &mut self,
        table: &MultiIndexTable,
        s: &DMatrix<f64>,
        t: &DMatrix<f64>,
        scale: f64,
    ) {
        let n = self.n;
        let mut alpha = vec![0usize; n];
        for i in 0..n {
            for j in 0..n {
                let sij = s[(i, j)];
                if sij == 0.0 {
                    continue;
                }
                for k in 0..n {
                    for l in 0..n {
                        let tkl = t[(k, l)];
                        if tkl == 0.0 {
                            continue;
                        }
                        alpha.iter_mut().for_each(|e| *e = 0);
                        alpha[i] += 1;
                        alpha[j] += 1;
                        alpha[k] += 1;
                        alpha[l] += 1;
                        self.coeffs[table.index_of(&alpha)] += scale * sij * tkl;
                    }
                }
            }
        }
    }
}

/// Coefficients of ‖x‖⁴ = (Σ x_i²)²: 1 on x_i⁴ and 2 on x_i²x_j² (i < j).
pub fn norm4_form(table: &MultiIndexTable) -> QuarticForm {
    let mut f = QuarticForm::zero(table);
    let eye = DMatrix::identity(table.n, table.n);
    f.accumulate_product(table, &eye, &eye, 1.0);
    f
}

/// Drift-plus-diffusion matrix M(Q) = A*Q + QA + Σ_j B_j* Q B_j.
pub fn drift_diffusion_matrix(sys: &LinearSDESystem, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = sys.a.transpose() * q + q * &sys.a;
    for b in &sys.b {
        m += b.transpose() * q * b;
    }
    m
}

pub(crate) fn check_q(sys: &LinearSDESystem, q: &DMatrix<f64>) -> Result<()> {
    if q.nrows() != sys.n || q.ncols() != sys.n {
        return Err(Error::DimensionMismatch(format!(
            "Q is {}x{} but the system has dimension {}",
            q.nrows(),
            q.ncols(),
            sys.n
        )));
    }
    let asym = (q - q.transpose()).norm();
    if asym > 1e-12 * (1.0 + q.norm()) {
        return Err(Error::InvalidParameter(format!(
            "Q must be symmetric (asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

/// Evaluates the Lyapunov quartic
///
///   H(x) = −(x*M(Q)x)·(x*Qx) + ((2−p)/4)·Σ_j (x*(QB_j + B_j*Q)x)²
///
/// at a point. `H(x) ≥ c‖x‖⁴` for some c > 0 together with Q ≻ 0 certifies
/// exponential p-stability.
pub fn h_eval(
    sys: &LinearSDESystem,
    q: &DMatrix<f64>,
    p: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    check_q(sys, q)?;
    let m = drift_diffusion_matrix(sys, q);
    let xq = (x.transpose() * q * x)[(0, 0)];
    let xm = (x.transpose() * &m * x)[(0, 0)];
    let mut h = -xm * xq;
    let factor = (2.0 - p) / 4.0;
    for b in &sys.b {
        let g = q * b + b.transpose() * q;
        let xg = (x.transpose() * &g * x)[(0, 0)];
        h += factor * xg * xg;
    }
    Ok(h)
}

/// Gradient of H at x:
/// ∇H = −2(M_sym x)(x*Qx) − 2(Qx)(x*M_sym x) + (2−p)·Σ_j (x*G_jx) G_jx
/// with M_sym the symmetric part of M(Q) and G_j = QB_j + B_j*Q.
pub fn h_gradient(
    sys: &LinearSDESystem,
    q: &DMatrix<f64>,
    p: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_q(sys, q)?;
    let m = drift_diffusion_matrix(sys, q);
    let msym = (&m + m.transpose()) * 0.5;
    let xq = (x.transpose() * q * x)[(0, 0)];
    let xm = (x.transpose() * &msym * x)[(0, 0)];
    let mut grad = (&msym * x) * (-2.0 * xq) + (q * x) * (-2.0 * xm);
    for b in &sys.b {
        let g = q * b + b.transpose() * q;
        let xg = (x.transpose() * &g * x)[(0, 0)];
        grad += (&g * x) * ((2.0 - p) * xg);
    }
    Ok(grad)
}

/// Expands H as an explicit quartic form (direct O(n⁴) expansion).
pub fn h_coefficients(
    sys: &LinearSDESystem,
    q: &DMatrix<f64>,
    p: f64,
    table: &MultiIndexTable,
) -> Result<QuarticForm> {
    check_q(sys, q)?;
    if table.n != sys.n {
        return Err(Error::DimensionMismatch(
            "multi-index table dimension does not match the system".into(),
        ));
    }
    let m = drift_diffusion_matrix(sys, q);
    let msym = (&m + m.transpose()) * 0.5;
    let mut f = QuarticForm::zero(table);
    f.accumulate_product(table, &msym, q, -1.0);
    let factor = (2.0 - p) / 4.0;
    for b in &sys.b {
        let g = q * b + b.transpose() * q;
        f.accumulate_product(table, &g, &g, factor);
    }
    Ok(f)
}

/// Value, gradient and Hessian of V(x) = (x*Qx)^{p/2} at x ≠ 0.
pub fn lyapunov_value_grad_hess(
    q: &DMatrix<f64>,
    p: f64,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let xq = (x.transpose() * q * x)[(0, 0)];
    if xq <= 0.0 {
        return Err(Error::Numerical(
            "x*Qx must be positive to evaluate V = (x*Qx)^{p/2}".into(),
        ));
    }
    let qx = q * x;
    let v = xq.powf(p / 2.0);
    let grad = &qx * (p * xq.powf(p / 2.0 - 1.0));
    let hess = q * (p * xq.powf(p / 2.0 - 1.0))
        + (&qx * qx.transpose()) * (p * (p - 2.0) * xq.powf(p / 2.0 - 2.0));
    Ok((v, grad, hess))
}

/// Infinitesimal generator applied to V at x:
/// (LV)(x) = ∇V(x)·(Ax) + ½ Σ_j (B_jx)* HessV(x) (B_jx).
pub fn generator_apply(
    sys: &LinearSDESystem,
    q: &DMatrix<f64>,
    p: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    check_q(sys, q)?;
    let (_, grad, hess) = lyapunov_value_grad_hess(q, p, x)?;
    let mut lv = grad.dot(&(&sys.a * x));
    for b in &sys.b {
        let bx = b * x;
        lv += 0.5 * (bx.transpose() * &hess * &bx)[(0, 0)];
    }
    Ok(lv)
}

/// Relative residual of the closed-form identity
/// (LV)(x) = −(p/2)·(x*Qx)^{p/2−2}·H(x).
pub fn generator_identity_residual(
    sys: &LinearSDESystem,
    q: &DMatrix<f64>,
    p: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    let lv = generator_apply(sys, q, p, x)?;
    let xq = (x.transpose() * q * x)[(0, 0)];
    let h = h_eval(sys, q, p, x)?;
    let rhs = -(p / 2.0) * xq.powf(p / 2.0 - 2.0) * h;
    Ok((lv - rhs).abs() / (1.0 + lv.abs() + rhs.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn random_symmetric(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn random_system(n: usize, ell: usize, rng: &mut impl Rng) -> LinearSDESystem {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = (0..ell)
            .map(|_| DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        LinearSDESystem::new("random", a, b).unwrap()
    }

    #[test]
    fn table_sizes_match_binomial() {
        // C(n+3, 4) for n = 1..8.
        let expected = [1usize, 5, 15, 35, 70, 126, 210, 330];
        for (n, &count) in (1..=8).zip(&expected) {
            assert_eq!(MultiIndexTable::new(n).len(), count, "n = {n}");
        }
    }

    #[test]
    fn table_positions_round_trip() {
        let t = MultiIndexTable::new(4);
        for (i, alpha) in t.indices.iter().enumerate() {
            assert_eq!(alpha.iter().sum::<usize>(), 4);
            assert_eq!(t.index_of(alpha), i);
        }
    }

    #[test]
    fn partition_classes_n4() {
        let t = MultiIndexTable::new(4);
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for alpha in &t.indices {
            *counts.entry(MultiIndexTable::partition_class(alpha)).or_default() += 1;
        }
        assert_eq!(counts[&vec![4]], 4);
        assert_eq!(counts[&vec![3, 1]], 12);
        assert_eq!(counts[&vec![2, 2]], 6);
        assert_eq!(counts[&vec![2, 1, 1]], 12);
        assert_eq!(counts[&vec![1, 1, 1, 1]], 1);
    }

    #[test]
    fn norm4_coefficients() {
        let t = MultiIndexTable::new(3);
        let f = norm4_form(&t);
        assert_abs_diff_eq!(f.coeffs[t.index_of(&[4, 0, 0])], 1.0);
        assert_abs_diff_eq!(f.coeffs[t.index_of(&[2, 2, 0])], 2.0);
        assert_abs_diff_eq!(f.coeffs[t.index_of(&[2, 0, 2])], 2.0);
        assert_abs_diff_eq!(f.coeffs[t.index_of(&[2, 1, 1])], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let n2 = x.norm_squared();
            assert_abs_diff_eq!(f.eval(&t, &x), n2 * n2, epsilon = 1e-12 * (1.0 + n2 * n2));
        }
    }

    #[test]
    fn h_coefficients_agree_with_h_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=4 {
            let t = MultiIndexTable::new(n);
            for _ in 0..5 {
                let sys = random_system(n, 2, &mut rng);
                let q = random_symmetric(n, &mut rng);
                let p = rng.gen_range(0.01..2.0);
                let f = h_coefficients(&sys, &q, p, &t).unwrap();
                for _ in 0..10 {
                    let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                    let direct = h_eval(&sys, &q, p, &x).unwrap();
                    assert_abs_diff_eq!(
                        f.eval(&t, &x),
                        direct,
                        epsilon = 1e-11 * (1.0 + direct.abs())
                    );
                }
            }
        }
    }

    #[test]
    fn h_is_homogeneous_degree_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sys = random_system(3, 2, &mut rng);
        let q = random_symmetric(3, &mut rng);
        let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let h1 = h_eval(&sys, &q, 0.5, &x).unwrap();
        let h3 = h_eval(&sys, &q, 0.5, &(&x * 3.0)).unwrap();
        assert_abs_diff_eq!(h3, 81.0 * h1, epsilon = 1e-9 * (1.0 + h1.abs() * 81.0));
    }

    #[test]
    fn p2_drops_the_square_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sys = random_system(3, 3, &mut rng);
        let q = random_symmetric(3, &mut rng);
        let m = drift_diffusion_matrix(&sys, &q);
        let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let xq = (x.transpose() * &q * &x)[(0, 0)];
        let xm = (x.transpose() * &m * &x)[(0, 0)];
        assert_abs_diff_eq!(
            h_eval(&sys, &q, 2.0, &x).unwrap(),
            -xm * xq,
            epsilon = 1e-12 * (1.0 + (xm * xq).abs())
        );
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = random_spd(3, &mut rng);
        for &p in &[0.1, 1.0, 2.0, 3.5] {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(0.5..1.5));
            let (_, grad, hess) = lyapunov_value_grad_hess(&q, p, &x).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let vp = lyapunov_value_grad_hess(&q, p, &xp).unwrap().0;
                let vm = lyapunov_value_grad_hess(&q, p, &xm).unwrap().0;
                assert_abs_diff_eq!(grad[i], (vp - vm) / (2.0 * h), epsilon = 1e-5);
                let gp = lyapunov_value_grad_hess(&q, p, &xp).unwrap().1;
                let gm = lyapunov_value_grad_hess(&q, p, &xm).unwrap().1;
                for j in 0..3 {
                    assert_abs_diff_eq!(hess[(i, j)], (gp[j] - gm[j]) / (2.0 * h), epsilon = 1e-4);
                }
            }
        }
    }

    #[test]
    fn generator_identity_holds_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for n in 2..=4 {
            for _ in 0..5 {
                let sys = random_system(n, 2, &mut rng);
                let q = random_spd(n, &mut rng);
                let p = rng.gen_range(0.01..2.0);
                for _ in 0..20 {
                    let x = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
                        + DVector::from_element(n, 0.1);
                    let r = generator_identity_residual(&sys, &q, p, &x).unwrap();
                    assert!(r <= 1e-10, "residual {r} at n={n}, p={p}");
                }
            }
        }
    }

    #[test]
    fn generator_identity_on_builtin_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let systems = [
            model::random_linear_oscillator(1.0, 0.2, 0.3, 0.2).unwrap(),
            model::satellite(4.0, 1.0, 0.5, 0.2, 0.3).unwrap(),
            model::two_inertia(1.0, 0.5, 0.5).unwrap(),
        ];
        for sys in &systems {
            let q = random_spd(sys.n, &mut rng);
            for &p in &[0.1, 1.0, 2.0] {
                let x = DVector::from_fn(sys.n, |_, _| rng.gen_range(0.2..1.0));
                assert!(generator_identity_residual(sys, &q, p, &x).unwrap() <= 1e-10);
            }
        }
    }

    #[test]
    fn rejects_asymmetric_q() {
        let sys = model::satellite(4.0, 1.0, 0.5, 0.2, 0.3).unwrap();
        let mut q = DMatrix::identity(sys.n, sys.n);
        q[(0, 1)] = 0.5;
        assert!(h_eval(&sys, &q, 2.0, &DVector::from_element(sys.n, 1.0)).is_err());
    }
}
