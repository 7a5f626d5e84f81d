//! Entanglement analysis: partial traces, symmetry-resolved entanglement
//! spectra, entanglement gaps, critical-coupling extraction and the
//! perturbative boundary expansion of the entanglement Hamiltonian.
//!
//! Subsystem A always occupies the low bits of the register (the dual
//! register builders guarantee this), so the reduced density matrix is a
//! reshape followed by one matrix product.

use crate::pauli::PauliString;
use crate::spectra::{fwht_inplace, DensityMatrix, SpectraError, StateVector};
use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EntError {
    #[error("subsystem size {0} exceeds register {1}")]
    SubsystemTooLarge(usize, usize),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("sector operators must be X-type on subsystem A, got {0}")]
    BadSectorOp(String),
    #[error("density matrix has weight {0:.3e} between different symmetry sectors")]
    SectorMixing(f64),
    #[error("need at least {0} scan points, got {1}")]
    NotEnoughPoints(usize, usize),
    #[error("entanglement gap index {0} out of range ({1} levels)")]
    GapOutOfRange(usize, usize),
}

impl From<ndarray_linalg::error::LinalgError> for EntError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        EntError::Spectra(SpectraError::Linalg(e.to_string()))
    }
}

/// Reduced density matrix of the low `a_size` qubits of a pure state.
///
/// With the state reshaped as `psi[b, a]`, the reduction is
/// `rho_A = psi^T psi^*`, a single zgemm.
pub fn reduce_to_a(state: &StateVector, a_size: usize) -> Result<DensityMatrix, EntError> {
    if a_size > state.register {
        return Err(EntError::SubsystemTooLarge(a_size, state.register));
    }
    let da = 1usize << a_size;
    let db = 1usize << (state.register - a_size);
    let psi = state
        .amps
        .view()
        .into_shape((db, da))
        .expect("contiguous state");
    // rho[i, j] = sum_b psi[b, i] * conj(psi[b, j]), one gemm.
    let conj = psi.mapv(|z| z.conj());
    let rho = psi.t().dot(&conj);
    Ok(DensityMatrix::new(rho, a_size))
}

/// Complementary reduction: the high `register - a_size` qubits.
pub fn reduce_to_b(state: &StateVector, a_size: usize) -> Result<DensityMatrix, EntError> {
    if a_size > state.register {
        return Err(EntError::SubsystemTooLarge(a_size, state.register));
    }
    let da = 1usize << a_size;
    let db = 1usize << (state.register - a_size);
    let psi = state.amps.view().into_shape((db, da)).expect("contiguous state");
    let conj = psi.mapv(|z| z.conj());
    let rho = psi.dot(&conj.t());
    Ok(DensityMatrix::new(rho, state.register - a_size))
}

/// Partial trace over the high qubits of a (generally mixed) density
/// matrix: `rho_A[i, j] = sum_b rho[(b, i), (b, j)]`.
pub fn reduce_to_a_mixed(rho: &DensityMatrix, a_size: usize) -> Result<DensityMatrix, EntError> {
    if a_size > rho.register {
        return Err(EntError::SubsystemTooLarge(a_size, rho.register));
    }
    let da = 1usize << a_size;
    let db = 1usize << (rho.register - a_size);
    let mut out: Array2<Complex64> = Array2::zeros((da, da));
    for b in 0..db {
        let base = b * da;
        for i in 0..da {
            for j in 0..da {
                out[[i, j]] += rho.mat[[base + i, base + j]];
            }
        }
    }
    Ok(DensityMatrix::new(out, a_size))
}

/// One entanglement level: `xi = -ln(lambda)` with its sector tag.
#[derive(Debug, Clone, PartialEq)]
pub struct EntLevel {
    pub xi: f64,
    pub lambda: f64,
    /// Index into the sector label list of the producing call; 0 when the
    /// spectrum was not sector-resolved.
    pub sector: usize,
}

/// A sector-resolved entanglement spectrum, sorted ascending in `xi`.
#[derive(Debug, Clone)]
pub struct EntanglementSpectrum {
    pub levels: Vec<EntLevel>,
    /// Sign pattern of each sector over the sector operators; a single
    /// empty label when unresolved.
    pub sector_labels: Vec<Vec<i8>>,
}

impl EntanglementSpectrum {
    pub fn xis(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.xi).collect()
    }

    /// Levels of one sector, ascending.
    pub fn sector_xis(&self, sector: usize) -> Vec<f64> {
        self.levels.iter().filter(|l| l.sector == sector).map(|l| l.xi).collect()
    }

    pub fn von_neumann_entropy(&self) -> f64 {
        self.levels.iter().map(|l| -l.lambda * l.lambda.ln()).sum()
    }
}

/// Eigenvalue cutoff below which Schmidt weight is discarded as numerical
/// noise.
pub const ENT_CUTOFF: f64 = 1e-14;

/// Plain (sector-blind) entanglement spectrum of a reduced density matrix.
pub fn entanglement_spectrum(rho: &DensityMatrix) -> Result<EntanglementSpectrum, EntError> {
    let (vals, _) = rho.mat.eigh(UPLO::Lower)?;
    let mut levels: Vec<EntLevel> = vals
        .iter()
        .filter(|l| **l > ENT_CUTOFF)
        .map(|l| EntLevel { xi: -l.ln(), lambda: *l, sector: 0 })
        .collect();
    levels.sort_by(|a, b| a.xi.partial_cmp(&b.xi).unwrap());
    Ok(EntanglementSpectrum { levels, sector_labels: vec![vec![]] })
}

/// Entanglement spectrum resolved over commuting X-type symmetry operators
/// supported in A (boundary fluxes and the open winding string).
///
/// The density matrix is rotated to the Hadamard basis where the operators
/// are diagonal, its indices are grouped by the joint sign pattern, and each
/// block is diagonalized separately. Any off-block weight above `1e-9`
/// signals that the state was not symmetric and is reported as an error.
pub fn sector_resolved_spectrum(
    rho: &DensityMatrix,
    sector_ops: &[PauliString],
) -> Result<EntanglementSpectrum, EntError> {
    if sector_ops.is_empty() {
        return entanglement_spectrum(rho);
    }
    let k = rho.register;
    let dim = rho.dim();
    let mut masks = Vec::with_capacity(sector_ops.len());
    for op in sector_ops {
        if op.register_size() != k || op.z_mask() != 0 || !op.phase_is_real() {
            return Err(EntError::BadSectorOp(op.to_string()));
        }
        masks.push((op.x_mask(), op.real_sign() as i8));
    }
    // Rotate rows and columns by the Hadamard layer (FWHT with 1/dim
    // normalization overall).
    let mut rot = rho.mat.clone();
    for mut row in rot.rows_mut() {
        fwht_inplace(row.as_slice_mut().expect("contiguous"));
    }
    let mut rot = rot.reversed_axes().as_standard_layout().to_owned();
    for mut row in rot.rows_mut() {
        fwht_inplace(row.as_slice_mut().expect("contiguous"));
    }
    let scale = 1.0 / dim as f64;
    // Joint sign pattern of each rotated basis label.
    let pattern = |s: usize| -> Vec<i8> {
        masks
            .iter()
            .map(|(m, sign)| {
                if ((s as u64) & m).count_ones() % 2 == 0 {
                    *sign
                } else {
                    -*sign
                }
            })
            .collect()
    };
    let mut sector_of_label: Vec<usize> = Vec::with_capacity(dim);
    let mut sector_labels: Vec<Vec<i8>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for s in 0..dim {
        let pat = pattern(s);
        let idx = match sector_labels.iter().position(|p| *p == pat) {
            Some(i) => i,
            None => {
                sector_labels.push(pat);
                members.push(Vec::new());
                sector_labels.len() - 1
            }
        };
        members[idx].push(s);
        sector_of_label.push(idx);
    }
    // Off-block weight must vanish for a symmetric state.
    let mut off = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            if sector_of_label[i] != sector_of_label[j] {
                off += (rot[[j, i]] * scale).norm_sqr();
            }
        }
    }
    let off = off.sqrt();
    if off > 1e-9 {
        return Err(EntError::SectorMixing(off));
    }
    let mut levels: Vec<EntLevel> = Vec::new();
    for (sector, idxs) in members.iter().enumerate() {
        let n = idxs.len();
        let mut block: Array2<Complex64> = Array2::zeros((n, n));
        for (a, &i) in idxs.iter().enumerate() {
            for (b, &j) in idxs.iter().enumerate() {
                // rot currently holds (F rho F)^T; undo the transpose here.
                block[[a, b]] = rot[[j, i]] * scale;
            }
        }
        let (vals, _) = block.eigh(UPLO::Lower)?;
        for l in vals.iter() {
            if *l > ENT_CUTOFF {
                levels.push(EntLevel { xi: -l.ln(), lambda: *l, sector });
            }
        }
    }
    levels.sort_by(|a, b| a.xi.partial_cmp(&b.xi).unwrap());
    Ok(EntanglementSpectrum { levels, sector_labels })
}

/// Von Neumann entropy of a density matrix, `-Tr(rho ln rho)`.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64, EntError> {
    let vals = rho.eigenvalues()?;
    Ok(vals.iter().filter(|p| **p > ENT_CUTOFF).map(|p| -p * p.ln()).sum())
}

/// The gap `Delta_{xi,i} = xi_{band i} - xi_{band i-1}` between consecutive
/// bands of the entanglement spectrum.
///
/// `band_size` fixes how many levels form the low-lying band; with `None`
/// the boundary is auto-detected as the largest spacing within the first
/// quartile of levels, and the result is flagged accordingly.
#[derive(Debug, Clone, Copy)]
pub struct EntGap {
    pub gap: f64,
    pub band_size: usize,
    pub auto_detected: bool,
}

pub fn entanglement_gap(
    spectrum: &EntanglementSpectrum,
    band_size: Option<usize>,
) -> Result<EntGap, EntError> {
    let xis = spectrum.xis();
    let n = xis.len();
    match band_size {
        Some(b) => {
            if b == 0 || b >= n {
                return Err(EntError::GapOutOfRange(b, n));
            }
            Ok(EntGap { gap: xis[b] - xis[b - 1], band_size: b, auto_detected: false })
        }
        None => {
            let quart = (n / 4).max(2).min(n - 1);
            let mut best = 1;
            let mut best_gap = f64::NEG_INFINITY;
            for i in 1..=quart {
                let g = xis[i] - xis[i - 1];
                if g > best_gap {
                    best_gap = g;
                    best = i;
                }
            }
            Ok(EntGap { gap: best_gap, band_size: best, auto_detected: true })
        }
    }
}

/// Linear-intercept estimate of the coupling where an entanglement gap
/// closes: fit `gap(eps) = a + b*eps` through the scan points and report
/// `-a/b`, with a leave-one-out spread as the uncertainty.
#[derive(Debug, Clone, Copy)]
pub struct CriticalCoupling {
    pub value: f64,
    pub uncertainty: f64,
    pub slope: f64,
}

pub fn critical_coupling(points: &[(f64, f64)]) -> Result<CriticalCoupling, EntError> {
    if points.len() < 3 {
        return Err(EntError::NotEnoughPoints(3, points.len()));
    }
    let intercept_of = |pts: &[(f64, f64)]| -> (f64, f64) {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let a = (sy - slope * sx) / n;
        (-a / slope, slope)
    };
    let (value, slope) = intercept_of(points);
    let mut spread = 0.0f64;
    for k in 0..points.len() {
        let subset: Vec<(f64, f64)> =
            points.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, p)| *p).collect();
        let (v, _) = intercept_of(&subset);
        spread = spread.max((v - value).abs());
    }
    Ok(CriticalCoupling { value, uncertainty: spread, slope })
}

/// Closed-form spectrum of the leading-order boundary entanglement
/// Hamiltonian on one cut of circumference `ny`, together with the matching
/// subsystem-Hamiltonian spectrum built from the same boundary operators.
///
/// The boundary operators `B_{n_y}` square to one, mutually commute and
/// multiply to the identity around the cut, so the joint eigenvalues are
/// sign patterns with an even number of `-1`s. With `m` minus signs:
///
/// * entanglement level: `ny*ln2 - (eps/2)(ny - 2m)`,
/// * subsystem level: `-eps*(ny - 2m)`,
///
/// each with binomial multiplicity `C(ny, m)`. Level spacings differ by the
/// universal factor `eps/2 : eps`.
#[derive(Debug, Clone)]
pub struct BoundarySpectra {
    /// `(level, multiplicity)` of the entanglement Hamiltonian, ascending.
    pub entanglement: Vec<(f64, usize)>,
    /// `(level, multiplicity)` of the subsystem Hamiltonian, ascending.
    pub subsystem: Vec<(f64, usize)>,
}

pub fn perturbative_boundary_spectra(ny: usize, eps: f64) -> BoundarySpectra {
    let binom = |n: usize, k: usize| -> usize {
        let mut acc = 1usize;
        for i in 0..k {
            acc = acc * (n - i) / (i + 1);
        }
        acc
    };
    let mut entanglement = Vec::new();
    let mut subsystem = Vec::new();
    let mut m = 0;
    while m <= ny {
        let b_sum = ny as f64 - 2.0 * m as f64;
        let mult = binom(ny, m);
        entanglement.push((ny as f64 * std::f64::consts::LN_2 - 0.5 * eps * b_sum, mult));
        subsystem.push((-eps * b_sum, mult));
        m += 2;
    }
    entanglement.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    subsystem.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    BoundarySpectra { entanglement, subsystem }
}
