//! Variational reconstruction of the entanglement Hamiltonian: fit
//! `sigma_A ~ exp(-sum_n beta_n h_n)` to a reduced density matrix by
//! minimizing the relative entropy `S(rho_A || sigma_A)`.
//!
//! The objective has the closed form
//! `-S(rho) + log Z + sum_n beta_n <h_n>_rho` with `Z = Tr exp(-sum beta h)`,
//! is convex in the couplings, and its gradient is the difference of term
//! expectations `<h_n>_rho - <h_n>_sigma`. A quasi-Newton descent with
//! backtracking therefore converges reliably from any starting point.

use crate::lattice::{Dir, DualRegister, LatticeError};
use crate::pauli::PauliString;
use crate::spectra::{DensityMatrix, SpectraError};
use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VarFitError {
    #[error("ansatz operator {0} acts outside the {1}-qubit subsystem")]
    OperatorOutsideSubsystem(String, usize),
    #[error("ansatz operator {0} is not a real matrix")]
    OperatorNotReal(String),
    #[error("tie groups must partition the {0} ansatz terms")]
    BadTieGroups(usize),
    #[error("ansatz has {0} couplings for {1} terms")]
    BetaLengthMismatch(usize, usize),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
}

impl From<ndarray_linalg::error::LinalgError> for VarFitError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        VarFitError::Spectra(SpectraError::Linalg(e.to_string()))
    }
}

/// Physical origin of an ansatz term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermKind {
    Electric,
    Magnetic,
}

/// One candidate local term `h_n` of the entanglement Hamiltonian, tagged
/// with its lattice location so couplings can be tied by symmetry.
#[derive(Debug, Clone)]
pub struct AnsatzTerm {
    pub kind: TermKind,
    /// Column of the source link or plaquette.
    pub x: isize,
    /// Row of the source link or plaquette.
    pub y: usize,
    /// Short descriptor: "plaquette", "x-link" or "y-link".
    pub desc: &'static str,
    pub op: PauliString,
}

impl AnsatzTerm {
    /// Key identifying the term up to translation parallel to the cut
    /// (the y direction).
    fn translation_class(&self) -> (TermKind, isize, &'static str) {
        (self.kind, self.x, self.desc)
    }
}

/// A set of candidate terms with current couplings and an optional tying of
/// couplings into equality groups.
#[derive(Debug, Clone)]
pub struct VariationalAnsatz {
    pub terms: Vec<AnsatzTerm>,
    pub betas: Vec<f64>,
    /// Partition of term indices; couplings within a group are held equal
    /// during fitting. Singletons by default.
    pub tie_groups: Vec<Vec<usize>>,
}

impl VariationalAnsatz {
    pub fn new(terms: Vec<AnsatzTerm>) -> Self {
        let n = terms.len();
        VariationalAnsatz {
            terms,
            betas: vec![0.0; n],
            tie_groups: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn with_betas(mut self, betas: Vec<f64>) -> Result<Self, VarFitError> {
        if betas.len() != self.terms.len() {
            return Err(VarFitError::BetaLengthMismatch(betas.len(), self.terms.len()));
        }
        self.betas = betas;
        Ok(self)
    }

    /// Tie couplings of terms that are translates of each other along the
    /// cut, leaving only per-column, per-type parameters.
    pub fn tie_translation_along_cut(&mut self) {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut index: HashMap<(TermKind, isize, &'static str), usize> = HashMap::new();
        for (i, t) in self.terms.iter().enumerate() {
            let key = t.translation_class();
            match index.get(&key) {
                Some(&g) => groups[g].push(i),
                None => {
                    index.insert(key, groups.len());
                    groups.push(vec![i]);
                }
            }
        }
        self.tie_groups = groups;
    }

    fn validate(&self, register: usize) -> Result<(), VarFitError> {
        if self.betas.len() != self.terms.len() {
            return Err(VarFitError::BetaLengthMismatch(self.betas.len(), self.terms.len()));
        }
        let mask = if register >= 64 { u64::MAX } else { (1u64 << register) - 1 };
        for t in &self.terms {
            let support = t.op.x_mask() | t.op.z_mask();
            if t.op.register_size() != register || support & !mask != 0 {
                return Err(VarFitError::OperatorOutsideSubsystem(t.op.to_string(), register));
            }
        }
        let mut seen = vec![false; self.terms.len()];
        let mut count = 0usize;
        for g in &self.tie_groups {
            for &i in g {
                if i >= seen.len() || seen[i] {
                    return Err(VarFitError::BadTieGroups(self.terms.len()));
                }
                seen[i] = true;
                count += 1;
            }
        }
        if count != self.terms.len() {
            return Err(VarFitError::BadTieGroups(self.terms.len()));
        }
        Ok(())
    }
}

/// All electric and magnetic energy terms of the dual Hamiltonian that are
/// fully supported in subsystem A, expressed on the `a_size` register.
///
/// `boundary_electric` controls whether the single-spin electric terms of
/// the retained cut links are included alongside the bulk terms.
pub fn subsystem_ansatz(
    dual: &DualRegister,
    boundary_electric: bool,
) -> Result<VariationalAnsatz, VarFitError> {
    let a_size = dual.a_size();
    let a_mask = (1u64 << a_size) - 1;
    let mut terms = Vec::new();
    for p in dual.plaquettes() {
        let img = dual.magnetic_image(p);
        if (img.x_mask() | img.z_mask()) & !a_mask != 0 {
            continue;
        }
        terms.push(AnsatzTerm {
            kind: TermKind::Magnetic,
            x: p.0 as isize,
            y: p.1,
            desc: "plaquette",
            op: restrict(&img, a_size),
        });
    }
    for l in dual.links() {
        if dual.sigma_qubit(l).is_some() && !boundary_electric {
            continue;
        }
        let img = dual.electric_image(l);
        if (img.x_mask() | img.z_mask()) & !a_mask != 0 {
            continue;
        }
        terms.push(AnsatzTerm {
            kind: TermKind::Electric,
            x: l.x,
            y: l.y,
            desc: match l.dir {
                Dir::X => "x-link",
                Dir::Y => "y-link",
            },
            op: restrict(&img, a_size),
        });
    }
    Ok(VariationalAnsatz::new(terms))
}

fn restrict(p: &PauliString, register: usize) -> PauliString {
    PauliString::from_masks(register, p.x_mask(), p.z_mask()).with_sign(p.real_sign())
}

/// Outcome of a relative-entropy minimization.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Optimal couplings, one per ansatz term (tied groups expanded).
    pub betas: Vec<f64>,
    pub relative_entropy: f64,
    pub entropy_exact: f64,
    pub entropy_variational: f64,
    /// `(evaluation index, objective)` at each accepted iterate.
    pub trajectory: Vec<(usize, f64)>,
    pub converged: bool,
}

pub struct FitOptions {
    pub grad_tol: f64,
    pub max_evals: usize,
    pub initial_beta: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { grad_tol: 1e-8, max_evals: 2000, initial_beta: 0.1 }
    }
}

/// Eigenvalues below this weight are treated as outside the support of a
/// density matrix when computing its entropy.
const SUPPORT_CUTOFF: f64 = 1e-14;

struct Objective {
    /// One real symmetric matrix per tie group (sum of its terms).
    group_mats: Vec<Array2<f64>>,
    /// `<sum of group terms>_rho`, precomputed.
    group_expect: Vec<f64>,
    entropy_exact: f64,
    dim: usize,
}

struct Evaluation {
    value: f64,
    grad: Vec<f64>,
    log_z: f64,
    /// `<K>_sigma`, for the variational entropy `log Z + <K>`.
    mean_k: f64,
}

impl Objective {
    fn build(rho: &DensityMatrix, ansatz: &VariationalAnsatz) -> Result<Self, VarFitError> {
        ansatz.validate(rho.register)?;
        let dim = rho.dim();
        let mut dense_terms = Vec::with_capacity(ansatz.terms.len());
        for t in &ansatz.terms {
            let m = t.op.to_dense();
            let mut real = Array2::<f64>::zeros((dim, dim));
            for ((i, j), v) in m.indexed_iter() {
                if v.im.abs() > 1e-12 {
                    return Err(VarFitError::OperatorNotReal(t.op.to_string()));
                }
                real[[i, j]] = v.re;
            }
            real = 0.5 * (&real + &real.t());
            dense_terms.push(real);
        }
        let mut group_mats = Vec::with_capacity(ansatz.tie_groups.len());
        let mut group_expect = Vec::with_capacity(ansatz.tie_groups.len());
        for g in &ansatz.tie_groups {
            let mut sum = Array2::<f64>::zeros((dim, dim));
            for &i in g {
                sum += &dense_terms[i];
            }
            let mut e = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    e += sum[[i, j]] * rho.mat[[j, i]].re;
                }
            }
            group_mats.push(sum);
            group_expect.push(e);
        }
        let vals = rho.eigenvalues()?;
        let entropy_exact = vals
            .iter()
            .filter(|l| **l > SUPPORT_CUTOFF)
            .map(|l| -l * l.ln())
            .sum();
        Ok(Objective { group_mats, group_expect, entropy_exact, dim })
    }

    fn evaluate(&self, betas: &[f64]) -> Result<Evaluation, VarFitError> {
        let mut k = Array2::<f64>::zeros((self.dim, self.dim));
        for (b, m) in betas.iter().zip(&self.group_mats) {
            k.scaled_add(*b, m);
        }
        let (mu, u) = k.eigh(UPLO::Lower)?;
        // log Z = log sum exp(-mu), stabilized by the smallest eigenvalue.
        let mu0 = mu[0];
        let z_shift: f64 = mu.iter().map(|m| (-(m - mu0)).exp()).sum();
        let log_z = z_shift.ln() - mu0;
        let weights: Array1<f64> = mu.mapv(|m| (-m - log_z).exp());
        let mean_k: f64 = mu.iter().zip(weights.iter()).map(|(m, w)| m * w).sum();
        let mut value = -self.entropy_exact + log_z;
        let mut grad = Vec::with_capacity(betas.len());
        for (g, (b, m)) in betas.iter().zip(&self.group_mats).enumerate() {
            let _ = b;
            value += betas[g] * self.group_expect[g];
            // <H_g>_sigma = sum_k w_k (U^T H_g U)_kk.
            let hu = m.dot(&u);
            let mut mean_sigma = 0.0;
            for kcol in 0..self.dim {
                let mut diag = 0.0;
                for r in 0..self.dim {
                    diag += u[[r, kcol]] * hu[[r, kcol]];
                }
                mean_sigma += weights[kcol] * diag;
            }
            grad.push(self.group_expect[g] - mean_sigma);
        }
        Ok(Evaluation { value, grad, log_z, mean_k })
    }
}

/// Relative entropy `S(rho || sigma)` of `rho` against the Gibbs state of
/// the ansatz at its current couplings.
pub fn relative_entropy(
    rho: &DensityMatrix,
    ansatz: &VariationalAnsatz,
) -> Result<f64, VarFitError> {
    let grouped = regroup_betas(ansatz);
    let obj = Objective::build(rho, &grouped.0)?;
    Ok(obj.evaluate(&grouped.1)?.value)
}

/// Reduce per-term couplings to one representative per tie group, averaging
/// within groups (they are expected to be equal already).
fn regroup_betas(ansatz: &VariationalAnsatz) -> (VariationalAnsatz, Vec<f64>) {
    let betas: Vec<f64> = ansatz
        .tie_groups
        .iter()
        .map(|g| g.iter().map(|&i| ansatz.betas[i]).sum::<f64>() / g.len() as f64)
        .collect();
    (ansatz.clone(), betas)
}

/// Minimize the relative entropy over the ansatz couplings.
///
/// BFGS with Armijo backtracking; the objective is convex so the descent is
/// globally convergent. On hitting the evaluation cap the best iterate is
/// returned with `converged = false`.
pub fn fit(
    rho: &DensityMatrix,
    ansatz: &VariationalAnsatz,
    options: &FitOptions,
) -> Result<FitResult, VarFitError> {
    let obj = Objective::build(rho, ansatz)?;
    let ngroups = ansatz.tie_groups.len();
    let mut beta = vec![options.initial_beta; ngroups];
    let mut evals = 0usize;
    let mut current = obj.evaluate(&beta)?;
    evals += 1;
    let mut trajectory = vec![(evals, current.value)];
    // Inverse Hessian approximation, identity to start.
    let mut hinv = Array2::<f64>::eye(ngroups);
    let mut converged = false;
    while evals < options.max_evals {
        let gnorm = current.grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gnorm < options.grad_tol {
            converged = true;
            break;
        }
        let g = Array1::from_vec(current.grad.clone());
        let mut dir = -hinv.dot(&g);
        let mut slope = dir.dot(&g);
        if slope >= 0.0 {
            // Stale curvature information; fall back to steepest descent.
            hinv = Array2::eye(ngroups);
            dir = -&g;
            slope = dir.dot(&g);
        }
        // Near the optimum of a nonzero-valued objective the attainable
        // decrease can drop below floating-point resolution before the
        // gradient tolerance is met; treat that as convergence.
        if slope.abs() < 1e-15 * current.value.abs().max(1.0) {
            converged = gnorm < 1e-6;
            break;
        }
        let mut step = 1.0f64;
        let mut accepted = None;
        while evals < options.max_evals {
            let trial: Vec<f64> = beta.iter().zip(dir.iter()).map(|(b, d)| b + step * d).collect();
            let eval = obj.evaluate(&trial)?;
            evals += 1;
            if eval.value <= current.value + 1e-4 * step * slope {
                accepted = Some((trial, eval));
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
        let Some((new_beta, new_eval)) = accepted else {
            // Line search exhausted against the numerical noise floor.
            converged = gnorm < 1e-6;
            break;
        };
        let s: Vec<f64> = new_beta.iter().zip(&beta).map(|(n, o)| n - o).collect();
        let y: Vec<f64> = new_eval.grad.iter().zip(&current.grad).map(|(n, o)| n - o).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let s = Array1::from_vec(s);
            let y = Array1::from_vec(y);
            let rho_sy = 1.0 / sy;
            // Standard BFGS inverse update
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T.
            let hy = hinv.dot(&y);
            let yhy = y.dot(&hy);
            let ss = outer(&s, &s);
            let shy = outer(&s, &hy);
            hinv = &hinv - &(rho_sy * (&shy + &shy.t()))
                + &(ss * (rho_sy * rho_sy * yhy + rho_sy));
        }
        beta = new_beta;
        current = new_eval;
        trajectory.push((evals, current.value));
    }
    let entropy_variational = current.log_z + current.mean_k;
    let mut betas = vec![0.0; ansatz.terms.len()];
    for (g, group) in ansatz.tie_groups.iter().enumerate() {
        for &i in group {
            betas[i] = beta[g];
        }
    }
    Ok(FitResult {
        betas,
        relative_entropy: current.value,
        entropy_exact: obj.entropy_exact,
        entropy_variational,
        trajectory,
        converged,
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let n = a.len();
    Array2::from_shape_fn((n, n), |(i, j)| a[i] * b[j])
}
