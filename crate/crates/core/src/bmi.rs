//! Assembly of the stability condition H(x) ≥ c‖x‖⁴, Q ⪰ εI, c ≥ ε as a
//! bilinear matrix inequality in the entries of Q (linear when p = 2).
//!
//! Writing z for the vector of all second-order monomials, the quartic
//! H(x) − c‖x‖⁴ is represented as z*Pz with a symmetric Gram matrix P whose
//! entries are linear in the label variables and quadratic in Q. The single
//! block matrix
//!
//!   J(q) = Σ_{i≤j} q_i q_j A_{(i,j)} + Σ_i q_i B_{(i)} + C
//!
//! is positive semidefinite exactly when P ⪰ 0, all Gram consistency
//! relations hold, Q ⪰ εI and c ≥ ε.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::LinearSDESystem;
use crate::quartic::{self, MultiIndexTable, QuarticForm};
use crate::sdp::{self, AffineMatrixInequality, IpConfig};

/// Binomial coefficient.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Dimensions of the assembled problem for state dimension n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemSizes {
    pub n: usize,
    /// Number of second-order monomials (side of the Gram block).
    pub m: usize,
    /// Number of dependency relations (each spawns one slot pair).
    pub r: usize,
    /// Number of scalar variables q_1..q_K (Q entries, relation labels, c).
    pub k: usize,
    /// Side of the block matrix J.
    pub big_n: usize,
    /// Number of degree-4 monomials.
    pub monomials: usize,
}

/// Closed-form sizes: m = n(n+1)/2, r = n(n−1)²/2 + C(n,4),
/// K = m + 2r + 1, N = m + 2r + n + 1.
pub fn problem_sizes(n: usize) -> ProblemSizes {
    let m = n * (n + 1) / 2;
    let r = n * (n - 1) * (n - 1) / 2 + binomial(n, 4);
    ProblemSizes {
        n,
        m,
        r,
        k: m + 2 * r + 1,
        big_n: m + 2 * r + n + 1,
        monomials: binomial(n + 3, 4),
    }
}

/// Ordered index pairs (a ≤ b) enumerating the monomial vector
/// z = (x1², x1x2, …, xn²) and likewise the upper triangle of Q (row-major).
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for a in 0..n {
        for b in a..n {
            out.push((a, b));
        }
    }
    out
}

/// Position of the pair (a, b), a ≤ b, in [`upper_pairs`].
pub fn pair_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a <= b && b < n);
    a * (2 * n - a + 1) / 2 + (b - a)
}

/// Symmetric basis matrix for the i-th upper-triangle entry: e_u e_u* on the
/// diagonal, e_u e_v* + e_v e_u* off it.
pub fn sym_basis(n: usize, i: usize) -> DMatrix<f64> {
    let (u, v) = upper_pairs(n)[i];
    let mut e = DMatrix::zeros(n, n);
    e[(u, v)] = 1.0;
    e[(v, u)] = 1.0;
    if u == v {
        e[(u, u)] = 1.0;
    }
    e
}

/// Where the coefficient of a degree-4 monomial lands inside J.
#[derive(Debug, Clone, Copy)]
enum Target {
    /// Determined diagonal Gram entry P_dd (x_r⁴).
    PDiag(usize),
    /// Determined off-diagonal Gram entry, carrying half the coefficient
    /// into each of the two symmetric positions (x_r³x_s).
    POff(usize, usize),
    /// Slot pair of a dependency relation: +v on the first slot diagonal,
    /// −v on the second (x_r²x_s², x_r²x_sx_t).
    Slot(usize),
    /// Determined third entry of a four-distinct-variables relation,
    /// half the coefficient into each symmetric position.
    Third(usize, usize),
}

/// A dependency relation: one degree-4 monomial admitting several Gram
/// representations. The first entries are labelled with free variables; for
/// relations with three representations the last entry is eliminated by
/// substitution, so its slot pair stays identically zero.
#[derive(Debug, Clone)]
pub struct Relation {
    /// Index of the monomial in the degree-4 table.
    pub monomial: usize,
    /// Gram positions (row ≤ col) with their multiplicity in the expansion
    /// of z*Pz, sorted by position.
    pub entries: Vec<((usize, usize), f64)>,
    /// Multiplier of c on the right-hand side (−2 for x_r²x_s², else 0).
    pub c_coeff: f64,
    /// Absolute row of the first slot in J.
    pub slot: usize,
    /// Index of the first label variable in q.
    pub label_base: usize,
    /// True when a third entry is eliminated by substitution.
    pub eliminated_third: bool,
}

/// The assembled bilinear matrix inequality.
#[derive(Debug, Clone)]
pub struct BmiProblem {
    pub sizes: ProblemSizes,
    pub p: f64,
    pub eps: f64,
    pub table: MultiIndexTable,
    pub relations: Vec<Relation>,
    /// A_{(i,j)} for 0 ≤ i ≤ j < m in row-major pair order.
    pub a_mats: Vec<DMatrix<f64>>,
    /// B_{(i)} for the K variables.
    pub b_mats: Vec<DMatrix<f64>>,
    pub c_mat: DMatrix<f64>,
}

fn classify(alpha: &[usize]) -> (Vec<usize>, Vec<usize>) {
    // Variables with nonzero exponent, sorted by descending exponent then
    // ascending variable index.
    let mut vars: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > 0).collect();
    vars.sort_by_key(|&i| (usize::MAX - alpha[i], i));
    let exps = vars.iter().map(|&i| alpha[i]).collect();
    (vars, exps)
}

fn norm_entry(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

struct Layout {
    sizes: ProblemSizes,
    relations: Vec<Relation>,
    targets: Vec<Target>,
}

fn layout(n: usize, table: &MultiIndexTable) -> Layout {
    let sizes = problem_sizes(n);
    let mut relations = Vec::new();
    let mut targets = Vec::with_capacity(table.len());
    for (mi, alpha) in table.indices.iter().enumerate() {
        let (vars, exps) = classify(alpha);
        let pi = |a: usize, b: usize| {
            let (a, b) = norm_entry(a, b);
            pair_index(n, a, b)
        };
        match exps.as_slice() {
            [4] => {
                let d = pi(vars[0], vars[0]);
                targets.push(Target::PDiag(d));
            }
            [3, 1] => {
                let (r, s) = (vars[0], vars[1]);
                let (a, b) = norm_entry(pi(r, r), pi(r, s));
                targets.push(Target::POff(a, b));
            }
            [2, 2] => {
                let (r, s) = (vars[0], vars[1]);
                let mut entries = vec![
                    (norm_entry(pi(r, r), pi(s, s)), 2.0),
                    ((pi(r, s), pi(r, s)), 1.0),
                ];
                entries.sort_by_key(|&(pos, _)| pos);
                let slot = sizes.m + 2 * relations.len();
                let label_base = sizes.m + 2 * relations.len();
                targets.push(Target::Slot(slot));
                relations.push(Relation {
                    monomial: mi,
                    entries,
                    c_coeff: -2.0,
                    slot,
                    label_base,
                    eliminated_third: false,
                });
            }
            [2, 1, 1] => {
                let r = vars[0];
                let (s, t) = (vars[1].min(vars[2]), vars[1].max(vars[2]));
                let mut entries = vec![
                    (norm_entry(pi(r, r), pi(s, t)), 2.0),
                    (norm_entry(pi(r, s), pi(r, t)), 2.0),
                ];
                entries.sort_by_key(|&(pos, _)| pos);
                let slot = sizes.m + 2 * relations.len();
                let label_base = sizes.m + 2 * relations.len();
                targets.push(Target::Slot(slot));
                relations.push(Relation {
                    monomial: mi,
                    entries,
                    c_coeff: 0.0,
                    slot,
                    label_base,
                    eliminated_third: false,
                });
            }
            [1, 1, 1, 1] => {
                let mut v = vars.clone();
                v.sort_unstable();
                let (r, s, t, u) = (v[0], v[1], v[2], v[3]);
                let mut entries = vec![
                    (norm_entry(pi(r, s), pi(t, u)), 2.0),
                    (norm_entry(pi(r, t), pi(s, u)), 2.0),
                    (norm_entry(pi(r, u), pi(s, t)), 2.0),
                ];
                entries.sort_by_key(|&(pos, _)| pos);
                let slot = sizes.m + 2 * relations.len();
                let label_base = sizes.m + 2 * relations.len();
                let third = entries[2].0;
                targets.push(Target::Third(third.0, third.1));
                relations.push(Relation {
                    monomial: mi,
                    entries,
                    c_coeff: 0.0,
                    slot,
                    label_base,
                    eliminated_third: true,
                });
            }
            _ => unreachable!("degree-4 multi-index"),
        }
    }
    debug_assert_eq!(relations.len(), sizes.r);
    Layout {
        sizes,
        relations,
        targets,
    }
}

fn distribute(mat: &mut DMatrix<f64>, target: Target, v: f64) {
    match target {
        Target::PDiag(d) => mat[(d, d)] += v,
        Target::POff(a, b) | Target::Third(a, b) => {
            mat[(a, b)] += v / 2.0;
            mat[(b, a)] += v / 2.0;
        }
        Target::Slot(s) => {
            mat[(s, s)] += v;
            mat[(s + 1, s + 1)] -= v;
        }
    }
}

/// Quartic coefficient forms G_{ij} with
/// H(Σ q_i E_i) = Σ_{i≤j} q_i q_j G_{ij}, obtained by polarization over the
/// symmetric basis of Q. Order matches the row-major pair order of `a_mats`.
pub fn h_pair_forms(
    sys: &LinearSDESystem,
    p: f64,
    table: &MultiIndexTable,
) -> Result<Vec<QuarticForm>> {
    let n = sys.n;
    let m = n * (n + 1) / 2;
    let singles: Vec<QuarticForm> = (0..m)
        .map(|i| quartic::h_coefficients(sys, &sym_basis(n, i), p, table))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            if i == j {
                out.push(singles[i].clone());
            } else {
                let pair = quartic::h_coefficients(
                    sys,
                    &(sym_basis(n, i) + sym_basis(n, j)),
                    p,
                    table,
                )?;
                let mut f = QuarticForm::zero(table);
                for (k, c) in f.coeffs.iter_mut().enumerate() {
                    *c = pair.coeffs[k] - singles[i].coeffs[k] - singles[j].coeffs[k];
                }
                out.push(f);
            }
        }
    }
    Ok(out)
}

/// Assembles the full bilinear matrix inequality for (system, p, ε).
pub fn assemble_bmi(sys: &LinearSDESystem, p: f64, eps: f64) -> Result<BmiProblem> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "stability order p must be positive, got {p}"
        )));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    let n = sys.n;
    let table = MultiIndexTable::new(n);
    let Layout {
        sizes,
        relations,
        targets,
    } = layout(n, &table);
    let big_n = sizes.big_n;
    let m = sizes.m;

    // Quadratic part: distribute every monomial coefficient of G_{ij}.
    let forms = h_pair_forms(sys, p, &table)?;
    let mut a_mats = Vec::with_capacity(forms.len());
    for form in &forms {
        let mut a = DMatrix::zeros(big_n, big_n);
        for (mi, &v) in form.coeffs.iter().enumerate() {
            if v != 0.0 {
                distribute(&mut a, targets[mi], v);
            }
        }
        a_mats.push(a);
    }

    // Linear part.
    let mut b_mats = Vec::with_capacity(sizes.k);
    let q_block = m + 2 * sizes.r;
    for i in 0..m {
        // Q entries are mirrored into the Q − εI block.
        let (u, v) = upper_pairs(n)[i];
        let mut b = DMatrix::zeros(big_n, big_n);
        b[(q_block + u, q_block + v)] = 1.0;
        b[(q_block + v, q_block + u)] = 1.0;
        b_mats.push(b);
    }
    for rel in &relations {
        for (t, &((a, bcol), w)) in rel.entries.iter().take(2).enumerate() {
            debug_assert_eq!(rel.label_base + t, b_mats.len());
            let mut bm = DMatrix::zeros(big_n, big_n);
            bm[(a, bcol)] += 1.0;
            if a != bcol {
                bm[(bcol, a)] += 1.0;
            }
            if rel.eliminated_third {
                // Substituted third entry: P_third = h/2 − L0 − L1.
                let (ta, tb) = rel.entries[2].0;
                bm[(ta, tb)] -= 1.0;
                bm[(tb, ta)] -= 1.0;
            } else {
                bm[(rel.slot, rel.slot)] -= w;
                bm[(rel.slot + 1, rel.slot + 1)] += w;
            }
            b_mats.push(bm);
        }
    }
    // c: right-hand side −c·η(α) with η the ‖x‖⁴ coefficient, plus c − ε.
    let norm4 = quartic::norm4_form(&table);
    let mut bc = DMatrix::zeros(big_n, big_n);
    for (mi, &eta) in norm4.coeffs.iter().enumerate() {
        if eta != 0.0 {
            distribute(&mut bc, targets[mi], -eta);
        }
    }
    bc[(big_n - 1, big_n - 1)] += 1.0;
    b_mats.push(bc);
    debug_assert_eq!(b_mats.len(), sizes.k);

    let mut c_mat = DMatrix::zeros(big_n, big_n);
    for i in q_block..big_n {
        c_mat[(i, i)] = -eps;
    }

    Ok(BmiProblem {
        sizes,
        p,
        eps,
        table,
        relations,
        a_mats,
        b_mats,
        c_mat,
    })
}

impl BmiProblem {
    /// Index of A_{(i,j)} (i ≤ j) in `a_mats`.
    pub fn a_index(&self, i: usize, j: usize) -> usize {
        pair_index(self.sizes.m, i, j)
    }

    /// Evaluates J at a full variable vector of length K.
    pub fn evaluate(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        if q.len() != self.sizes.k {
            return Err(Error::DimensionMismatch(format!(
                "expected {} variables, got {}",
                self.sizes.k,
                q.len()
            )));
        }
        let m = self.sizes.m;
        let mut j_mat = self.c_mat.clone();
        for (bm, &qi) in self.b_mats.iter().zip(q.iter()) {
            if qi != 0.0 {
                j_mat += bm * qi;
            }
        }
        for i in 0..m {
            for j in i..m {
                let w = q[i] * q[j];
                if w != 0.0 {
                    j_mat += &self.a_mats[self.a_index(i, j)] * w;
                }
            }
        }
        Ok(j_mat)
    }

    /// Builds the full variable vector from (Q, relation labels, c).
    pub fn variable_vector(
        &self,
        q: &DMatrix<f64>,
        relation_labels: &[f64],
        c: f64,
    ) -> Result<DVector<f64>> {
        let n = self.sizes.n;
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch("Q has the wrong shape".into()));
        }
        if relation_labels.len() != 2 * self.sizes.r {
            return Err(Error::DimensionMismatch(format!(
                "expected {} relation labels",
                2 * self.sizes.r
            )));
        }
        let mut v = Vec::with_capacity(self.sizes.k);
        for (a, b) in upper_pairs(n) {
            v.push(q[(a, b)]);
        }
        v.extend_from_slice(relation_labels);
        v.push(c);
        Ok(DVector::from_vec(v))
    }

    /// One-line structural summary.
    pub fn summary(&self) -> String {
        format!(
            "n={} m={} relations={} K={} N={} p={} eps={}",
            self.sizes.n,
            self.sizes.m,
            self.sizes.r,
            self.sizes.k,
            self.sizes.big_n,
            self.p,
            self.eps
        )
    }
}

/// Upper-triangle labels of Q in row-major order.
pub fn q_to_labels(q: &DMatrix<f64>) -> Vec<f64> {
    let n = q.nrows();
    upper_pairs(n).into_iter().map(|(a, b)| q[(a, b)]).collect()
}

/// Symmetric Q from its upper-triangle labels.
pub fn labels_to_q(n: usize, labels: &[f64]) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n);
    for (i, (a, b)) in upper_pairs(n).into_iter().enumerate() {
        q[(a, b)] = labels[i];
        q[(b, a)] = labels[i];
    }
    q
}

/// The p = 2 case is linear in Q: feasibility of
/// Q ⪰ εI and A*Q + QA + Σ B_j*QB_j ⪯ −εI as one block-diagonal LMI over the
/// upper-triangle labels of Q.
pub fn assemble_lmi_p2(sys: &LinearSDESystem, eps: f64) -> Result<AffineMatrixInequality> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    let n = sys.n;
    let m = n * (n + 1) / 2;
    let dim = 2 * n;
    let mut f0 = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        f0[(i, i)] = -eps;
    }
    let mut fs = Vec::with_capacity(m);
    for i in 0..m {
        let e = sym_basis(n, i);
        let me = quartic::drift_diffusion_matrix(sys, &e);
        let mut f = DMatrix::zeros(dim, dim);
        for r in 0..n {
            for c in 0..n {
                f[(r, c)] = e[(r, c)];
                f[(n + r, n + c)] = -me[(r, c)];
            }
        }
        fs.push(f);
    }
    AffineMatrixInequality::new(f0, fs)
}

/// Result of the fixed-Q sum-of-squares bound.
#[derive(Debug, Clone)]
pub struct SosBound {
    /// Largest c with H_Q(x) − c‖x‖⁴ admitting a PSD Gram matrix.
    pub c: f64,
    /// The Gram matrix at the optimum.
    pub gram: DMatrix<f64>,
    pub iterations: usize,
}

/// Affine Gram parametrization for a fixed numeric quartic: P(y) with free
/// variables y = (relation frees…, c), determined entries eliminated.
fn gram_affine(
    n: usize,
    table: &MultiIndexTable,
    h: &QuarticForm,
) -> (AffineMatrixInequality, usize) {
    let Layout {
        sizes,
        relations,
        targets,
    } = layout(n, table);
    let m = sizes.m;
    // Free variables: one per two-entry relation (first entry), two for
    // eliminated-third relations (first two entries); then c.
    let mut frees: Vec<(usize, usize)> = Vec::new(); // (relation, entry)
    for (ri, rel) in relations.iter().enumerate() {
        frees.push((ri, 0));
        if rel.eliminated_third {
            frees.push((ri, 1));
        }
    }
    let nv = frees.len() + 1;
    let c_var = frees.len();
    let mut f0 = DMatrix::zeros(m, m);
    let mut fs = vec![DMatrix::zeros(m, m); nv];

    let put_sym = |mat: &mut DMatrix<f64>, (a, b): (usize, usize), v: f64| {
        mat[(a, b)] += v;
        if a != b {
            mat[(b, a)] += v;
        }
    };

    // Determined entries from single-representation monomials.
    for (mi, &hv) in h.coeffs.iter().enumerate() {
        match targets[mi] {
            Target::PDiag(d) => f0[(d, d)] += hv,
            Target::POff(a, b) => put_sym(&mut f0, (a, b), hv / 2.0),
            Target::Slot(_) | Target::Third(_, _) => {}
        }
    }
    // c in the x_r⁴ entries: P_dd = h − c.
    let norm4 = quartic::norm4_form(table);
    for (mi, &eta) in norm4.coeffs.iter().enumerate() {
        if let Target::PDiag(d) = targets[mi] {
            fs[c_var][(d, d)] -= eta;
        }
    }
    // Relations: eliminate the last entry.
    for (ri, rel) in relations.iter().enumerate() {
        let hv = h.coeffs[rel.monomial];
        if rel.eliminated_third {
            // third = h/2 − L0 − L1
            let third = rel.entries[2].0;
            put_sym(&mut f0, third, hv / 2.0);
            for (t, entry) in rel.entries.iter().take(2).enumerate() {
                let var = frees.iter().position(|&f| f == (ri, t)).unwrap();
                put_sym(&mut fs[var], entry.0, 1.0);
                put_sym(&mut fs[var], third, -1.0);
            }
        } else {
            // w0 L0 + w1 L1 = h + c_coeff·c  ⇒  L1 = (h + c_coeff·c − w0 L0)/w1
            let ((e0, w0), (e1, w1)) = (rel.entries[0], rel.entries[1]);
            let var = frees.iter().position(|&f| f == (ri, 0)).unwrap();
            put_sym(&mut fs[var], e0, 1.0);
            put_sym(&mut fs[var], e1, -w0 / w1);
            put_sym(&mut f0, e1, hv / w1);
            put_sym(&mut fs[c_var], e1, rel.c_coeff / w1);
        }
    }
    (
        AffineMatrixInequality { f0, fs },
        c_var,
    )
}

/// Largest c such that H_Q(x) − c‖x‖⁴ is a sum of squares, for fixed Q.
/// Returns the bound together with the optimal Gram matrix, or Ok(None) when
/// the interior-point method cannot find a strictly feasible Gram.
pub fn sos_c_bound(
    sys: &LinearSDESystem,
    q: &DMatrix<f64>,
    p: f64,
    cfg: &IpConfig,
) -> Result<Option<SosBound>> {
    let table = MultiIndexTable::new(sys.n);
    let h = quartic::h_coefficients(sys, q, p, &table)?;
    let (ami, c_var) = gram_affine(sys.n, &table, &h);
    // Share one trust region between both phases so the phase-1 point stays
    // strictly inside the phase-2 box.
    let mut cfg = *cfg;
    let t0 = sdp::min_eigenvalue(&ami.f0) - 1.0;
    cfg.radius = cfg.radius.max(2.0 * t0.abs() + 10.0);
    // Phase 1: strictly feasible Gram via the margin problem.
    let phase1 = sdp::solve_lmi_max_margin(&ami, &cfg)?;
    if phase1.margin <= 0.0 {
        return Ok(None);
    }
    // Phase 2: maximize c from the interior point.
    let mut g = DVector::zeros(ami.num_vars());
    g[c_var] = 1.0;
    let out = sdp::maximize(&ami, &g, &phase1.point, &cfg)?;
    let gram = ami.eval(&out.point);
    Ok(Some(SosBound {
        c: out.point[c_var],
        gram,
        iterations: phase1.iterations + out.iterations,
    }))
}

/// Explicit closed-form matrices for n = 2, ℓ = 1, transcribed term by term
/// from the hand-expanded coefficient equations of the Gram entries. Used as
/// an independent cross-check of the generic assembly.
pub fn n2_explicit_matrices(
    sys: &LinearSDESystem,
    p: f64,
    eps: f64,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, DMatrix<f64>)> {
    if sys.n != 2 || sys.ell != 1 {
        return Err(Error::InvalidParameter(
            "the closed form covers n = 2 with one noise channel".into(),
        ));
    }
    let (a, b) = (&sys.a, &sys.b[0]);
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let (b11, b12, b21, b22) = (b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]);
    // 1-based symmetric unit matrices in M_8.
    let e = |i: usize, j: usize| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(8, 8);
        m[(i - 1, j - 1)] = 1.0;
        m[(j - 1, i - 1)] = 1.0;
        m
    };
    let slot = |v: f64| (e(4, 4) - e(5, 5)) * v;

    let a11m = e(1, 1) * (-2.0 * a11 + (1.0 - p) * b11 * b11)
        + e(1, 2) * (-a12 + b11 * b12 * (1.0 - p))
        + slot(b12 * b12 * (1.0 - p));
    let a12m = e(1, 1) * (2.0 * b11 * b21 * (1.0 - p) - 2.0 * a21)
        + e(1, 2)
            * (-3.0 * a11 - a22 - b11 * b11 - b11 * b22
                + b12 * b21 * (1.0 - p)
                + b11 * (b11 + b22) * (2.0 - p))
        + slot(-6.0 * a12 + 4.0 * b11 * b12 * (1.0 - p) + 2.0 * b12 * b22 * (1.0 - p))
        + e(2, 3) * (b12 * b12 * (1.0 - p));
    let a13m = e(1, 1) * (-b21 * b21)
        + e(1, 2) * (-a21 - b21 * b22 + b11 * b21 * (2.0 - p))
        + slot(
            -2.0 * a11 - 2.0 * a22 - b11 * b11 - b22 * b22
                + 2.0 * b11 * b22 * (2.0 - p)
                + 2.0 * b12 * b21 * (2.0 - p),
        )
        + e(2, 3) * (-a12 - b11 * b12 + b12 * b22 * (2.0 - p))
        + e(3, 3) * (-b12 * b12);
    let a22m = e(1, 1) * (b21 * b21 * (2.0 - p))
        + e(1, 2) * (-2.0 * a21 - 2.0 * b11 * b21 + b21 * (b11 + b22) * (2.0 - p))
        + slot(
            -4.0 * a11 - 4.0 * a22 + (2.0 - p) * (b11 + b22) * (b11 + b22)
                - 4.0 * b11 * b22
                - 2.0 * p * b12 * b21,
        )
        + e(2, 3) * (-2.0 * a12 - 2.0 * b12 * b22 + b12 * (b11 + b22) * (2.0 - p))
        + e(3, 3) * (b12 * b12 * (2.0 - p));
    let a23m = e(1, 2) * (b21 * b21 * (1.0 - p))
        + slot(-6.0 * a21 + 2.0 * b11 * b21 * (1.0 - p) + 4.0 * b21 * b22 * (1.0 - p))
        + e(2, 3)
            * (-a11 - 3.0 * a22 - b22 * b22 - b11 * b22
                + b12 * b21 * (1.0 - p)
                + b22 * (b11 + b22) * (2.0 - p))
        + e(3, 3) * (2.0 * b12 * b22 * (1.0 - p) - 2.0 * a12);
    let a33m = slot(b21 * b21 * (1.0 - p))
        + e(2, 3) * (-a21 + b21 * b22 * (1.0 - p))
        + e(3, 3) * (-2.0 * a22 + b22 * b22 * (1.0 - p));

    let b1 = e(6, 6);
    let b2 = e(6, 7);
    let b3 = e(7, 7);
    let b4 = e(1, 3) + (e(5, 5) - e(4, 4)) * 2.0;
    let b5 = e(2, 2) + (e(5, 5) - e(4, 4)) * 1.0;
    let b6 = -e(1, 1) - (e(4, 4) - e(5, 5)) * 2.0 - e(3, 3) + e(8, 8);
    let c = -(e(6, 6) + e(7, 7) + e(8, 8)) * eps;

    Ok((
        vec![a11m, a12m, a13m, a22m, a23m, a33m],
        vec![b1, b2, b3, b4, b5, b6],
        c,
    ))
}
