//! Lyapunov-like certificates for the subsystem family.
//!
//! Every mode gets a pair `(P, lambda)` with `V(x) = <P x, x>` satisfying
//! `V(Ax) <= lambda V(x)`: `lambda < 1` for asymptotically stable modes,
//! `lambda = 1` for marginally stable ones, `lambda > 1` (crude norm bound)
//! for unstable ones. Transition gains `mu_kl = lambda_max(P_l P_k^{-1})`
//! bound the jump of the Lyapunov level across an admissible switch.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TransitionGraph;
use crate::linalg;
use crate::ModeId;

/// Default half-width of the band around spectral radius 1 inside which a
/// matrix is a marginal-stability candidate.
pub const DEFAULT_CLASS_TOL: f64 = 1e-9;

/// Tolerance used when clustering eigenvalues of a matrix for multiplicity
/// counting. Defective eigenvalues computed in floating point split by about
/// sqrt(machine epsilon), so the cluster width must absorb that.
const EIGEN_CLUSTER_TOL: f64 = 1e-6;

/// Relative singular-value threshold for null-space extraction.
const NULL_SPACE_TOL: f64 = 1e-7;

/// One member of the switched family: a full-rank dynamics map.
#[derive(Clone, Debug)]
pub struct SubsystemMatrix {
    id: ModeId,
    a: DMatrix<f64>,
}

impl SubsystemMatrix {
    /// Validates squareness and full rank; rank-deficient input is rejected.
    pub fn new(id: ModeId, a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::NotSquare {
                mode: id,
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let ratio = linalg::inverse_condition(&a);
        if ratio <= 1e-12 {
            return Err(Error::RankDeficient { mode: id, ratio });
        }
        Ok(Self { id, a })
    }

    pub fn id(&self) -> ModeId {
        self.id
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    AsymptoticallyStable,
    MarginallyStable,
    Unstable,
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StabilityClass::AsymptoticallyStable => write!(f, "asymptotically stable"),
            StabilityClass::MarginallyStable => write!(f, "marginally stable"),
            StabilityClass::Unstable => write!(f, "unstable"),
        }
    }
}

/// Certificate pair for one mode.
#[derive(Clone, Debug)]
pub struct SubsystemCertificate {
    pub id: ModeId,
    pub p: DMatrix<f64>,
    pub lambda: f64,
    pub class: StabilityClass,
}

impl SubsystemCertificate {
    /// Lyapunov level `V(x) = <P x, x>`.
    pub fn level(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.p * x)[(0, 0)]
    }
}

/// Spectral radius of a square real matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    linalg::spectral_radius(a)
}

/// Operator 2-norm via sqrt(lambda_max(A^T A)).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    linalg::spectral_norm(a)
}

/// Classifies a mode by spectral radius with a `tol_class` band around 1.
///
/// Inside the band the matrix is only accepted as marginally stable when all
/// eigenvalues of unit modulus are semisimple (geometric multiplicity equals
/// algebraic multiplicity), i.e. powers of `A` stay bounded; otherwise the
/// mode is unstable.
pub fn classify(a: &SubsystemMatrix, tol_class: f64) -> StabilityClass {
    let m = a.matrix();
    let rho = spectral_radius(m);
    if rho < 1.0 - tol_class {
        return StabilityClass::AsymptoticallyStable;
    }
    if rho > 1.0 + tol_class {
        return StabilityClass::Unstable;
    }
    if unit_circle_eigenvalues_semisimple(m, tol_class) {
        StabilityClass::MarginallyStable
    } else {
        StabilityClass::Unstable
    }
}

fn unit_circle_eigenvalues_semisimple(m: &DMatrix<f64>, tol_class: f64) -> bool {
    let eigs: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    let unit: Vec<Complex<f64>> = eigs
        .iter()
        .copied()
        .filter(|z| (z.norm() - 1.0).abs() <= tol_class.max(EIGEN_CLUSTER_TOL))
        .collect();
    let mc = m.map(|v| Complex::new(v, 0.0));
    for (center, algebraic) in cluster_eigenvalues(&unit) {
        let shifted = &mc - DMatrix::from_diagonal_element(m.nrows(), m.ncols(), center);
        let null = match linalg::complex_null_basis(&shifted, NULL_SPACE_TOL) {
            Ok(b) => b,
            Err(_) => return false,
        };
        if null.ncols() < algebraic {
            return false;
        }
    }
    true
}

/// Groups eigenvalues within `EIGEN_CLUSTER_TOL` of each other; returns one
/// representative (centroid) and the cluster size.
fn cluster_eigenvalues(eigs: &[Complex<f64>]) -> Vec<(Complex<f64>, usize)> {
    let mut clusters: Vec<(Complex<f64>, usize)> = Vec::new();
    'outer: for &z in eigs {
        for c in clusters.iter_mut() {
            if (z - c.0).norm() <= EIGEN_CLUSTER_TOL {
                let n = c.1 as f64;
                c.0 = (c.0 * n + z) / (n + 1.0);
                c.1 += 1;
                continue 'outer;
            }
        }
        clusters.push((z, 1));
    }
    clusters
}

/// Solves the discrete-time Lyapunov equation `A^T P A - P + Q = 0` for the
/// unique symmetric `P`, via the Kronecker-stacked d^2-dimensional linear
/// system. Requires `rho(A) < 1`.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if a.ncols() != d || q.nrows() != d || q.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: format!(
                "Lyapunov solve needs square A and Q of equal size, got A {}x{}, Q {}x{}",
                a.nrows(),
                a.ncols(),
                q.nrows(),
                q.ncols()
            ),
        });
    }
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::LyapunovUnstable { rho });
    }

    // vec(A^T P A) = (A^T kron A^T) vec(P), so (I - A^T kron A^T) vec(P) = vec(Q).
    let at = a.transpose();
    let n = d * d;
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            for p in 0..d {
                for r in 0..d {
                    // column-major vec: (i + j*d) indexes entry (i, j)
                    k[(i + j * d, p + r * d)] = at[(i, p)] * a[(r, j)];
                }
            }
        }
    }
    let system = DMatrix::<f64>::identity(n, n) - k;
    let rhs = DVector::from_iterator(n, q.iter().copied());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Kronecker system for the Lyapunov equation is singular".into()))?;
    let p = DMatrix::from_iterator(d, d, sol.iter().copied());
    let p = (&p + p.transpose()) * 0.5;

    let residual = (&at * &p * a - &p + q).norm();
    if residual > 1e-8 * (1.0 + q.norm()) {
        return Err(Error::Numerical(format!(
            "Lyapunov residual {residual:.3e} exceeds tolerance"
        )));
    }
    Ok(p)
}

/// Builds the certificate pair for one mode, choosing the branch by class:
///
/// - asymptotically stable: `P` solves the discrete Lyapunov equation with
///   the supplied `Q`, `lambda = 1 - lambda_min(Q)/lambda_max(P)`;
/// - unstable: `P = I`, `lambda = 1 + 2 ||A||`;
/// - marginally stable: `lambda = 1` and `P` from the marginal procedure.
pub fn certificate_for(a: &SubsystemMatrix, q: &DMatrix<f64>) -> Result<SubsystemCertificate> {
    let d = a.dim();
    if q.nrows() != d || q.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: format!("Q for mode {} must be {d}x{d}", a.id()),
        });
    }
    let (qlo, _) = linalg::sym_eig_range(q);
    if qlo <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: qlo });
    }
    let class = classify(a, DEFAULT_CLASS_TOL);
    let cert = match class {
        StabilityClass::AsymptoticallyStable => {
            let p = solve_discrete_lyapunov(a.matrix(), q)?;
            let (_, pmax) = linalg::sym_eig_range(&p);
            SubsystemCertificate {
                id: a.id(),
                lambda: 1.0 - qlo / pmax,
                p,
                class,
            }
        }
        StabilityClass::Unstable => SubsystemCertificate {
            id: a.id(),
            p: DMatrix::identity(d, d),
            lambda: 1.0 + 2.0 * spectral_norm(a.matrix()),
            class,
        },
        StabilityClass::MarginallyStable => {
            let p = marginal_certificate(a)?;
            SubsystemCertificate {
                id: a.id(),
                p,
                lambda: 1.0,
                class,
            }
        }
    };
    if !verify_certificate(&cert, a) {
        return Err(Error::InternalConsistency(format!(
            "certificate for mode {} violates lambda P - A^T P A >= 0",
            a.id()
        )));
    }
    Ok(cert)
}

/// Finds symmetric positive definite `P` with `A^T P A - P <= 0` for a
/// marginally stable `A`.
///
/// Tries `P = I` first (sufficient when `A^T A <= I`). Otherwise splits the
/// state space into the invariant subspace of strictly stable eigenvalues and
/// the unit-circle eigenspace, solves a Lyapunov equation on the stable
/// block, uses the inverse Gram matrix of the unit-circle eigenbasis on the
/// other block, and assembles the pieces. Fails explicitly if the assembled
/// matrix does not verify.
fn marginal_certificate(a: &SubsystemMatrix) -> Result<DMatrix<f64>> {
    let m = a.matrix();
    let d = a.dim();
    let eye = DMatrix::<f64>::identity(d, d);

    let ata = m.transpose() * m;
    let (_, top) = linalg::sym_eig_range(&ata);
    if top <= 1.0 + 1e-12 {
        return Ok(eye);
    }

    let eigs: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    let stable: Vec<Complex<f64>> = eigs
        .iter()
        .copied()
        .filter(|z| z.norm() < 1.0 - EIGEN_CLUSTER_TOL)
        .collect();
    let n_stable = stable.len();
    let n_unit = d - n_stable;
    let fail = |reason: &str| Error::NoMarginalCertificate {
        mode: a.id(),
        reason: reason.into(),
    };

    // basis [V_s V_c] adapted to the stable / unit-circle spectral split
    let basis = if n_stable == 0 {
        eye.clone()
    } else {
        let rho_stable = stable.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let radius = 0.5 * (rho_stable + 1.0);
        let proj = linalg::spectral_projector_inside(m, radius, 128)?;
        let v_s = linalg::range_basis(&proj, n_stable)?;
        let v_c = linalg::range_basis(&(&eye - &proj), n_unit)?;
        let mut w = DMatrix::<f64>::zeros(d, d);
        for j in 0..n_stable {
            w.set_column(j, &v_s.column(j));
        }
        for j in 0..n_unit {
            w.set_column(n_stable + j, &v_c.column(j));
        }
        w
    };

    let basis_inv = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| fail("spectral basis is numerically singular"))?;
    let a_tilde = &basis_inv * m * &basis;
    let a_c = a_tilde.view((n_stable, n_stable), (n_unit, n_unit)).into_owned();

    // unit-circle block: inverse Gram matrix of an eigenbasis, i.e. the
    // identity expressed in eigenbasis coordinates
    let ac_complex = a_c.map(|v| Complex::new(v, 0.0));
    let unit_eigs: Vec<Complex<f64>> = a_c.complex_eigenvalues().iter().copied().collect();
    let mut gram = DMatrix::<f64>::zeros(n_unit, n_unit);
    let mut spanned = 0;
    for (center, algebraic) in cluster_eigenvalues(&unit_eigs) {
        let shifted = &ac_complex - DMatrix::from_diagonal_element(n_unit, n_unit, center);
        let null = linalg::complex_null_basis(&shifted, NULL_SPACE_TOL)?;
        if null.ncols() < algebraic {
            return Err(fail("a unit-circle eigenvalue is defective"));
        }
        spanned += null.ncols();
        // orthonormal columns: their outer-product sum is the (real)
        // orthogonal projector onto this eigenspace
        for j in 0..null.ncols() {
            let col = null.column(j);
            for r in 0..n_unit {
                for c in 0..n_unit {
                    gram[(r, c)] += (col[r] * col[c].conj()).re;
                }
            }
        }
    }
    if spanned < n_unit {
        return Err(fail("unit-circle eigenvectors do not span their block"));
    }
    let p_c = gram.try_inverse().ok_or_else(|| fail("eigenbasis Gram matrix is singular"))?;
    let p_c = (&p_c + p_c.transpose()) * 0.5;

    let mut p_tilde = DMatrix::<f64>::zeros(d, d);
    if n_stable > 0 {
        let a_s = a_tilde.view((0, 0), (n_stable, n_stable)).into_owned();
        let p_s = solve_discrete_lyapunov(&a_s, &DMatrix::identity(n_stable, n_stable))?;
        p_tilde.view_mut((0, 0), (n_stable, n_stable)).copy_from(&p_s);
    }
    p_tilde
        .view_mut((n_stable, n_stable), (n_unit, n_unit))
        .copy_from(&p_c);

    let p = basis_inv.transpose() * p_tilde * &basis_inv;
    let p = (&p + p.transpose()) * 0.5;

    let (pmin, pmax) = linalg::sym_eig_range(&p);
    if pmin <= 0.0 {
        return Err(fail("assembled P is not positive definite"));
    }
    let descent = &p - m.transpose() * &p * m;
    if !linalg::is_psd(&descent, 1e-9 * pmax) {
        return Err(fail("assembled P does not verify A^T P A <= P"));
    }
    Ok(p)
}

/// The smallest `mu` with `V_j <= mu V_i`, i.e.
/// `lambda_max(P_i^{-1/2} P_j P_i^{-1/2})`, computed through the symmetric
/// similarity so the result is a real eigenvalue.
pub fn mu_gain(p_i: &DMatrix<f64>, p_j: &DMatrix<f64>) -> Result<f64> {
    if p_i.nrows() != p_j.nrows() || p_i.ncols() != p_j.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "mu gain needs equally sized SPD matrices, got {}x{} and {}x{}",
                p_i.nrows(),
                p_i.ncols(),
                p_j.nrows(),
                p_j.ncols()
            ),
        });
    }
    let (jmin, _) = linalg::sym_eig_range(p_j);
    if jmin <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: jmin });
    }
    let s = linalg::spd_inv_sqrt(p_i)?;
    let m = &s * p_j * &s;
    let (_, top) = linalg::sym_eig_range(&m);
    Ok(top)
}

/// Checks `lambda P - A^T P A >= 0` up to `1e-9 ||P||_2`.
pub fn verify_certificate(cert: &SubsystemCertificate, a: &SubsystemMatrix) -> bool {
    if cert.p.nrows() != a.dim() {
        return false;
    }
    let m = a.matrix();
    let slack = &cert.p * cert.lambda - m.transpose() * &cert.p * m;
    let p_norm = linalg::sym_eigenvalues(&cert.p)
        .iter()
        .fold(0.0_f64, |acc, &l| acc.max(l.abs()));
    linalg::is_psd(&slack, 1e-9 * p_norm)
}

/// Samples `n` random unit vectors and returns the worst relative violation
/// of `V(Az) <= lambda V(z)`; a negative result means the inequality held
/// with room to spare everywhere.
pub fn sample_certificate_violation<R: Rng>(
    cert: &SubsystemCertificate,
    a: &SubsystemMatrix,
    n: usize,
    rng: &mut R,
) -> f64 {
    let d = a.dim();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n {
        let z = random_unit_vector(d, rng);
        let az = a.matrix() * &z;
        let v = cert.level(&z);
        let va = cert.level(&az);
        worst = worst.max(va / (cert.lambda * v) - 1.0);
    }
    worst
}

pub fn random_unit_vector<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

/// Classes keyed by mode.
pub type ClassMap = BTreeMap<ModeId, StabilityClass>;

/// Per-edge transition gains plus per-mode contraction rates.
#[derive(Clone, Debug)]
pub struct GainTable {
    mu: BTreeMap<(ModeId, ModeId), f64>,
    lambda: BTreeMap<ModeId, f64>,
}

impl GainTable {
    /// Computes `mu` on exactly the admissible edge set; self-loops get
    /// `mu = 1` exactly (`P P^{-1} = I`).
    pub fn from_certificates(
        graph: &TransitionGraph,
        certs: &BTreeMap<ModeId, SubsystemCertificate>,
    ) -> Result<Self> {
        let mut mu = BTreeMap::new();
        for &(k, l) in graph.edges() {
            let value = if k == l {
                1.0
            } else {
                let pk = &certs.get(&k).ok_or(Error::UnknownMode { mode: k })?.p;
                let pl = &certs.get(&l).ok_or(Error::UnknownMode { mode: l })?.p;
                mu_gain(pk, pl)?
            };
            mu.insert((k, l), value);
        }
        let mut lambda = BTreeMap::new();
        for &v in graph.vertices() {
            lambda.insert(v, certs.get(&v).ok_or(Error::UnknownMode { mode: v })?.lambda);
        }
        Ok(Self { mu, lambda })
    }

    /// Builds the table from user-supplied natural logs (`ln mu`,
    /// `ln lambda`), deriving each mode's class from the sign of `ln lambda`.
    pub fn from_logs(
        graph: &TransitionGraph,
        log_mu: &BTreeMap<(ModeId, ModeId), f64>,
        log_lambda: &BTreeMap<ModeId, f64>,
    ) -> Result<(Self, ClassMap)> {
        let mut mu = BTreeMap::new();
        for &(k, l) in graph.edges() {
            let value = if k == l {
                match log_mu.get(&(k, l)) {
                    Some(&v) if v != 0.0 => {
                        return Err(Error::InvalidInput(format!(
                            "self-loop ({k}, {k}) must have ln mu = 0, got {v}"
                        )))
                    }
                    _ => 1.0,
                }
            } else {
                log_mu
                    .get(&(k, l))
                    .map(|v| v.exp())
                    .ok_or(Error::MissingGain { from: k, to: l })?
            };
            mu.insert((k, l), value);
        }
        let mut lambda = BTreeMap::new();
        let mut classes = BTreeMap::new();
        for &v in graph.vertices() {
            let log = *log_lambda.get(&v).ok_or(Error::MissingLambda { mode: v })?;
            lambda.insert(v, log.exp());
            let class = if log < 0.0 {
                StabilityClass::AsymptoticallyStable
            } else if log > 0.0 {
                StabilityClass::Unstable
            } else {
                StabilityClass::MarginallyStable
            };
            classes.insert(v, class);
        }
        Ok((Self { mu, lambda }, classes))
    }

    pub fn mu(&self, from: ModeId, to: ModeId) -> Result<f64> {
        self.mu.get(&(from, to)).copied().ok_or(Error::MissingGain { from, to })
    }

    pub fn log_mu(&self, from: ModeId, to: ModeId) -> Result<f64> {
        Ok(self.mu(from, to)?.ln())
    }

    pub fn lambda(&self, mode: ModeId) -> Result<f64> {
        self.lambda.get(&mode).copied().ok_or(Error::MissingLambda { mode })
    }

    pub fn log_lambda(&self, mode: ModeId) -> Result<f64> {
        Ok(self.lambda(mode)?.ln())
    }

    pub fn mu_entries(&self) -> impl Iterator<Item = (&(ModeId, ModeId), &f64)> {
        self.mu.iter()
    }

    pub fn lambda_entries(&self) -> impl Iterator<Item = (&ModeId, &f64)> {
        self.lambda.iter()
    }
}

/// Certifies every mode of a family with the given per-mode `Q` overrides
/// (default `Q = I`).
pub fn certify_family(
    family: &BTreeMap<ModeId, SubsystemMatrix>,
    q_override: &BTreeMap<ModeId, DMatrix<f64>>,
) -> Result<BTreeMap<ModeId, SubsystemCertificate>> {
    let mut certs = BTreeMap::new();
    for (&id, a) in family {
        let q = q_override
            .get(&id)
            .cloned()
            .unwrap_or_else(|| DMatrix::identity(a.dim(), a.dim()));
        certs.insert(id, certificate_for(a, &q)?);
    }
    Ok(certs)
}
