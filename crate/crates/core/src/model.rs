//! Linear SDE systems dX = AX dt + Σ_j B_j X dW_j: representation, file
//! round-trip, commutativity diagnostics and the builtin model catalog.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::casebook::{self, CancerParams, SmokingParams};
use crate::error::{Error, Result};

/// A linear SDE system dX = AX dt + Σ_{j=1..ell} B_j X dW_j.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSDESystem {
    pub name: String,
    pub n: usize,
    pub ell: usize,
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub metadata: BTreeMap<String, String>,
}

/// On-disk representation: row-major nested arrays.
#[derive(Serialize, Deserialize)]
struct SystemFile {
    name: String,
    n: usize,
    ell: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected {n}x{n} matrix"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl LinearSDESystem {
    /// Builds a validated system.
    pub fn new(
        name: impl Into<String>,
        a: DMatrix<f64>,
        b: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let sys = LinearSDESystem {
            name: name.into(),
            n: a.nrows(),
            ell: b.len(),
            a,
            b,
            metadata: BTreeMap::new(),
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.nrows() != self.n || self.a.ncols() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "A must be {0}x{0}",
                self.n
            )));
        }
        if self.b.len() != self.ell {
            return Err(Error::DimensionMismatch(format!(
                "expected {} noise matrices, got {}",
                self.ell,
                self.b.len()
            )));
        }
        for (j, bj) in self.b.iter().enumerate() {
            if bj.nrows() != self.n || bj.ncols() != self.n {
                return Err(Error::DimensionMismatch(format!(
                    "B_{} must be {1}x{1}",
                    j + 1,
                    self.n
                )));
            }
        }
        if !self.a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("A".into()));
        }
        for (j, bj) in self.b.iter().enumerate() {
            if !bj.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("B_{}", j + 1)));
            }
        }
        Ok(())
    }

    /// Serializes to the nested JSON notation used by model files.
    pub fn to_json(&self) -> String {
        let file = SystemFile {
            name: self.name.clone(),
            n: self.n,
            ell: self.ell,
            a: matrix_to_rows(&self.a),
            b: self.b.iter().map(matrix_to_rows).collect(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string_pretty(&file).expect("system serialization cannot fail")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: SystemFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        let a = rows_to_matrix(&file.a, file.n, "A")?;
        let b = file
            .b
            .iter()
            .enumerate()
            .map(|(j, rows)| rows_to_matrix(rows, file.n, &format!("B_{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        let sys = LinearSDESystem {
            name: file.name,
            n: file.n,
            ell: file.ell,
            a,
            b,
            metadata: file.metadata,
        };
        sys.validate()?;
        Ok(sys)
    }
}

/// Loads a system from a model file.
pub fn load_system(path: impl AsRef<Path>) -> Result<LinearSDESystem> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    LinearSDESystem::from_json(&text, &path.display().to_string())
}

/// Saves a system to a model file (atomic: temp file + rename).
pub fn save_system(system: &LinearSDESystem, path: impl AsRef<Path>) -> Result<()> {
    crate::cli::write_atomic(path.as_ref(), &system.to_json())
}

/// Lie commutator [U, V] = UV − VU.
pub fn commutator(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.nrows() != u.ncols() || u.shape() != v.shape() {
        return Err(Error::DimensionMismatch(
            "commutator needs equal square matrices".into(),
        ));
    }
    Ok(u * v - v * u)
}

/// Entrywise commutativity flags for a system.
#[derive(Debug, Clone, Serialize)]
pub struct CommutativityReport {
    /// `[A, B_j] = 0` within tolerance, per channel.
    pub a_b_commute: Vec<bool>,
    /// `[B_j, B_k] = 0` within tolerance.
    pub b_b_commute: Vec<Vec<bool>>,
    pub fully_commuting: bool,
}

/// Default absolute tolerance on max-abs commutator entries.
pub const COMMUTE_TOL: f64 = 1e-12;

pub fn commutativity_report(system: &LinearSDESystem, tol: f64) -> CommutativityReport {
    let near_zero = |m: &DMatrix<f64>| m.iter().all(|v| v.abs() <= tol);
    let a_b_commute: Vec<bool> = system
        .b
        .iter()
        .map(|bj| near_zero(&commutator(&system.a, bj).expect("validated shapes")))
        .collect();
    let b_b_commute: Vec<Vec<bool>> = system
        .b
        .iter()
        .map(|bj| {
            system
                .b
                .iter()
                .map(|bk| near_zero(&commutator(bj, bk).expect("validated shapes")))
                .collect()
        })
        .collect();
    let fully_commuting = a_b_commute.iter().all(|&f| f)
        && b_b_commute.iter().all(|row| row.iter().all(|&f| f));
    CommutativityReport {
        a_b_commute,
        b_b_commute,
        fully_commuting,
    }
}

fn mat2(rows: [[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
}

/// Random linear oscillator: ẍ + γẋ + κx with noisy damping and stiffness.
pub fn random_linear_oscillator(
    kappa: f64,
    gamma: f64,
    sigma1: f64,
    sigma2: f64,
) -> Result<LinearSDESystem> {
    LinearSDESystem::new(
        "random_linear_oscillator",
        mat2([[0.0, 1.0], [-kappa, -gamma]]),
        vec![
            mat2([[0.0, 0.0], [0.0, -sigma1]]),
            mat2([[0.0, 0.0], [-sigma2, 0.0]]),
        ],
    )
    .map(|s| {
        s.with_metadata("kappa", kappa)
            .with_metadata("gamma", gamma)
            .with_metadata("sigma1", sigma1)
            .with_metadata("sigma2", sigma2)
    })
}

/// Satellite dynamics linearized at the origin; sin(2x) contributes 2α.
pub fn satellite(
    kappa: f64,
    gamma: f64,
    alpha: f64,
    sigma1: f64,
    sigma2: f64,
) -> Result<LinearSDESystem> {
    LinearSDESystem::new(
        "satellite",
        mat2([[0.0, 1.0], [-kappa + 2.0 * alpha, -gamma]]),
        vec![
            mat2([[0.0, 0.0], [0.0, -sigma1]]),
            mat2([[0.0, 0.0], [-sigma2, 0.0]]),
        ],
    )
    .map(|s| {
        s.with_metadata("kappa", kappa)
            .with_metadata("gamma", gamma)
            .with_metadata("alpha", alpha)
            .with_metadata("sigma1", sigma1)
            .with_metadata("sigma2", sigma2)
    })
}

/// Two-inertia system (mechanical system driven by electrical motors).
pub fn two_inertia(rho: f64, sigma1: f64, sigma2: f64) -> Result<LinearSDESystem> {
    LinearSDESystem::new(
        "two_inertia",
        mat2([[-rho / 2.0, rho / 2.0], [rho / 2.0, -rho / 2.0]]),
        vec![
            mat2([[sigma1, 0.0], [0.0, 0.0]]),
            mat2([[0.0, 0.0], [0.0, sigma2]]),
        ],
    )
    .map(|s| {
        s.with_metadata("rho", rho)
            .with_metadata("sigma1", sigma1)
            .with_metadata("sigma2", sigma2)
    })
}

/// Diagonal noise system: A = [[λ, b], [0, λ]], B_j = σ_j I.
pub fn diagonal_noise(lambda: f64, b: f64, sigmas: &[f64]) -> Result<LinearSDESystem> {
    if sigmas.is_empty() {
        return Err(Error::InvalidParameter(
            "diagonal_noise needs at least one sigma".into(),
        ));
    }
    LinearSDESystem::new(
        "diagonal_noise",
        mat2([[lambda, b], [0.0, lambda]]),
        sigmas
            .iter()
            .map(|&s| DMatrix::identity(2, 2) * s)
            .collect(),
    )
    .map(|s| {
        s.with_metadata("lambda", lambda)
            .with_metadata("b", b)
            .with_metadata(
                "sigma",
                sigmas
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            )
    })
}

/// Off-diagonal noise: variant 1 is the rotation-type noise σ[[0,−1],[1,0]],
/// variant 2 the nilpotent noise σ[[0,0],[1,0]].
pub fn offdiagonal_noise(variant: u8, lambda: f64, b: f64, sigma: f64) -> Result<LinearSDESystem> {
    let noise = match variant {
        1 => mat2([[0.0, -sigma], [sigma, 0.0]]),
        2 => mat2([[0.0, 0.0], [sigma, 0.0]]),
        v => {
            return Err(Error::InvalidParameter(format!(
                "off-diagonal variant must be 1 or 2, got {v}"
            )))
        }
    };
    LinearSDESystem::new(
        "offdiagonal_noise",
        mat2([[lambda, b], [0.0, lambda]]),
        vec![noise],
    )
    .map(|s| {
        s.with_metadata("variant", variant)
            .with_metadata("lambda", lambda)
            .with_metadata("b", b)
            .with_metadata("sigma", sigma)
    })
}

/// The Sanov pair: a non-commuting test model (free subgroup generators).
pub fn sanov_pair() -> LinearSDESystem {
    LinearSDESystem::new(
        "sanov_pair",
        mat2([[1.0, 2.0], [0.0, 1.0]]),
        vec![mat2([[1.0, 0.0], [2.0, 1.0]])],
    )
    .expect("static matrices are valid")
}

/// One entry of the builtin catalog: parameter names with defaults and a
/// builder taking overrides.
pub struct BuiltinModel {
    pub name: &'static str,
    pub params: Vec<(&'static str, f64)>,
    builder: fn(&BTreeMap<String, f64>) -> Result<LinearSDESystem>,
}

impl BuiltinModel {
    /// Builds the model with defaults overridden by `overrides`.
    pub fn build(&self, overrides: &BTreeMap<String, f64>) -> Result<LinearSDESystem> {
        for key in overrides.keys() {
            let known = self.params.iter().any(|(p, _)| p == key)
                || (self.name == "diagonal_noise" && key == "ell");
            if !known {
                return Err(Error::InvalidParameter(format!(
                    "unknown parameter '{key}' for builtin '{}'",
                    self.name
                )));
            }
        }
        let mut values: BTreeMap<String, f64> = self
            .params
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        for (k, v) in overrides {
            values.insert(k.clone(), *v);
        }
        (self.builder)(&values)
    }
}

fn get(v: &BTreeMap<String, f64>, key: &str) -> f64 {
    *v.get(key).expect("defaults populate every key")
}

/// The builtin model catalog covering every example family.
pub fn builtin_models() -> Vec<BuiltinModel> {
    vec![
        BuiltinModel {
            name: "oscillator",
            params: vec![("kappa", 1.0), ("gamma", 0.2), ("sigma1", 0.3), ("sigma2", 0.5)],
            builder: |v| {
                random_linear_oscillator(
                    get(v, "kappa"),
                    get(v, "gamma"),
                    get(v, "sigma1"),
                    get(v, "sigma2"),
                )
            },
        },
        BuiltinModel {
            name: "satellite",
            params: vec![
                ("kappa", 1.0),
                ("gamma", 0.2),
                ("alpha", 0.2),
                ("sigma1", 0.3),
                ("sigma2", 0.5),
            ],
            builder: |v| {
                satellite(
                    get(v, "kappa"),
                    get(v, "gamma"),
                    get(v, "alpha"),
                    get(v, "sigma1"),
                    get(v, "sigma2"),
                )
            },
        },
        BuiltinModel {
            name: "two_inertia",
            params: vec![("rho", 2.0), ("sigma1", 0.3), ("sigma2", 0.5)],
            builder: |v| two_inertia(get(v, "rho"), get(v, "sigma1"), get(v, "sigma2")),
        },
        BuiltinModel {
            name: "diagonal_noise",
            // `ell` copies of the same sigma; individual channels via sigma.
            params: vec![("lambda", -1.0), ("b", 2.0), ("sigma", 2.0), ("ell", 1.0)],
            builder: |v| {
                let ell = get(v, "ell");
                if ell < 1.0 || ell.fract() != 0.0 {
                    return Err(Error::InvalidParameter(
                        "ell must be a positive integer".into(),
                    ));
                }
                let sigmas = vec![get(v, "sigma"); ell as usize];
                diagonal_noise(get(v, "lambda"), get(v, "b"), &sigmas)
            },
        },
        BuiltinModel {
            name: "offdiagonal_noise",
            params: vec![("variant", 1.0), ("lambda", -1.0), ("b", 2.0), ("sigma", 1.0)],
            builder: |v| {
                let variant = get(v, "variant");
                if variant != 1.0 && variant != 2.0 {
                    return Err(Error::InvalidParameter("variant must be 1 or 2".into()));
                }
                offdiagonal_noise(variant as u8, get(v, "lambda"), get(v, "b"), get(v, "sigma"))
            },
        },
        BuiltinModel {
            name: "cancer",
            params: vec![
                ("alpha", 0.3),
                ("beta", 0.1),
                ("q", 10.0),
                ("r", 0.9),
                ("s", 0.8),
                ("k1", 0.8),
                ("k2", 0.7),
                ("d1", 0.02),
                ("d2", 0.03),
                ("sigma1", 3.67),
                ("sigma2", 0.13),
                ("sigma3", 0.625),
            ],
            builder: |v| {
                let params = CancerParams {
                    r: get(v, "r"),
                    q: get(v, "q"),
                    k1: get(v, "k1"),
                    k2: get(v, "k2"),
                    alpha: get(v, "alpha"),
                    beta: get(v, "beta"),
                    d1: get(v, "d1"),
                    d2: get(v, "d2"),
                    s: get(v, "s"),
                    sigma1: get(v, "sigma1"),
                    sigma2: get(v, "sigma2"),
                    sigma3: get(v, "sigma3"),
                };
                casebook::cancer_linearization(&params)
            },
        },
        BuiltinModel {
            name: "smoking",
            params: vec![
                ("alpha", 0.3),
                ("beta", 2.0),
                ("gamma", 1.0),
                ("mu", 1.0),
                ("sigma", 0.8),
                ("sigma1", 1.0),
                ("sigma2", 12.0),
                ("sigma3", 500.0),
            ],
            builder: |v| {
                let params = SmokingParams {
                    alpha: get(v, "alpha"),
                    beta: get(v, "beta"),
                    gamma: get(v, "gamma"),
                    mu: get(v, "mu"),
                    sigma: get(v, "sigma"),
                    sigma1: get(v, "sigma1"),
                    sigma2: get(v, "sigma2"),
                    sigma3: get(v, "sigma3"),
                };
                casebook::smoking_linearization(&params)
            },
        },
        BuiltinModel {
            name: "sanov_pair",
            params: vec![],
            builder: |_| Ok(sanov_pair()),
        },
    ]
}

/// Looks up a builtin by name.
pub fn builtin(name: &str) -> Result<BuiltinModel> {
    builtin_models()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown builtin model '{name}'")))
}
